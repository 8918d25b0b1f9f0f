//! Synthetic biased-scene benchmark generator.
//!
//! Each scene holds exactly one object. The object's shape determines the
//! class label (the causal factor); object color and background texture are
//! non-causal. Source datasets are biased: every source has a fixed
//! majority color applied with probability `color_bias` (the intra-dataset
//! factor) and a fixed background texture (the inter-dataset factor).
//! Target splits are unbiased and use background ids disjoint from all
//! sources, so held-out evaluation sees both novel textures and a flat
//! color distribution.

mod io;
mod render;

pub use render::{background_intensity, render_scene, shape_contains, PALETTE};

use crate::error::{Error, Result};
use crate::mix_seed;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Dataset id carried by target scenes (sources use their own index).
pub const TARGET_DATASET_ID: u32 = u32::MAX;

/// How many fresh background ids the target split draws from.
const TARGET_BACKGROUND_COUNT: u32 = 4;

/// Controls the factor structure of generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub num_classes: usize,
    /// One shape id per class; the shape is the causal factor.
    pub shapes: Vec<u32>,
    /// Color ids available to objects; a source's majority color is
    /// `colors[dataset_id % colors.len()]`.
    pub colors: Vec<u32>,
    /// Background texture ids used by sources, one per dataset
    /// (`backgrounds[dataset_id % backgrounds.len()]`).
    pub backgrounds: Vec<u32>,
    /// Probability that a source object takes its dataset's majority color.
    pub color_bias: f64,
    pub canvas_size: usize,
    /// Object size as a fraction of the canvas, sampled uniformly.
    pub object_scale_range: (f64, f64),
}

impl FactorSpec {
    /// Benchmark defaults: 3 classes, 6 colors, 32px canvas.
    pub fn default_benchmark(num_classes: usize) -> Self {
        FactorSpec {
            num_classes,
            shapes: (0..num_classes as u32).collect(),
            colors: (0..6).collect(),
            backgrounds: (0..4).collect(),
            color_bias: 0.9,
            canvas_size: 32,
            object_scale_range: (0.45, 0.75),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.shapes.len() != self.num_classes {
            return Err(Error::Config(format!(
                "shapes must list exactly one shape per class ({} != {})",
                self.shapes.len(),
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.color_bias) {
            return Err(Error::Config(format!(
                "color_bias must lie in [0, 1], got {}",
                self.color_bias
            )));
        }
        if self.colors.len() < 2 {
            return Err(Error::Config("need at least 2 colors".into()));
        }
        if self.backgrounds.is_empty() {
            return Err(Error::Config("need at least 1 background id".into()));
        }
        if self.canvas_size < 16 {
            return Err(Error::Config(format!(
                "canvas_size must be >= 16, got {}",
                self.canvas_size
            )));
        }
        let (lo, hi) = self.object_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.95) {
            return Err(Error::Config(format!(
                "object_scale_range must satisfy 0 < lo <= hi <= 0.95, got ({lo}, {hi})"
            )));
        }
        if lo * self.canvas_size as f64 < 4.0 {
            return Err(Error::Config(
                "object_scale_range lower bound paints fewer than 4 pixels".into(),
            ));
        }
        Ok(())
    }

    /// Background ids reserved for targets, disjoint from every source id.
    pub fn target_backgrounds(&self) -> Vec<u32> {
        let bmax = self.backgrounds.iter().copied().max().unwrap_or(0);
        (1..=TARGET_BACKGROUND_COUNT).map(|i| bmax + i).collect()
    }
}

/// One synthetic image with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Pixels in [0, 1], layout `[3, S, S]` row-major.
    pub image: Vec<f32>,
    pub class_label: u32,
    /// (center-x, center-y, width, height), all normalized to [0, 1].
    pub bbox: [f32; 4],
    pub dataset_id: u32,
    pub color_id: u32,
    pub background_id: u32,
}

/// Role a split plays in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Source,
    Target,
    TargetAdv,
    TargetGauss,
}

impl SplitRole {
    pub fn as_u8(self) -> u8 {
        match self {
            SplitRole::Source => 0,
            SplitRole::Target => 1,
            SplitRole::TargetAdv => 2,
            SplitRole::TargetGauss => 3,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(SplitRole::Source),
            1 => Some(SplitRole::Target),
            2 => Some(SplitRole::TargetAdv),
            3 => Some(SplitRole::TargetGauss),
            _ => None,
        }
    }
}

/// A named collection of scenes sharing a role.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub scenes: Vec<Scene>,
    pub name: String,
    pub role: SplitRole,
    pub canvas: u32,
    pub num_classes: u32,
}

impl DatasetSplit {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::save_split(self, path)
    }

    pub fn load(path: &Path) -> Result<DatasetSplit> {
        io::load_split(path)
    }
}

pub use io::{load_split, save_split};

fn sample_geometry(spec: &FactorSpec, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let s = spec.canvas_size as f64;
    let (lo, hi) = spec.object_scale_range;
    let scale = lo + (hi - lo) * rng.gen::<f64>();
    let half = scale * s / 2.0;
    let margin = half + 1.0;
    let cx = margin + (s - 2.0 * margin) * rng.gen::<f64>();
    let cy = margin + (s - 2.0 * margin) * rng.gen::<f64>();
    (cx, cy, half)
}

fn make_scene(
    spec: &FactorSpec,
    rng: &mut ChaCha8Rng,
    dataset_id: u32,
    class: u32,
    color_id: u32,
    background_id: u32,
) -> Scene {
    let (cx, cy, half) = sample_geometry(spec, rng);
    let shape = spec.shapes[class as usize];
    let (image, bbox) = render_scene(
        spec.canvas_size,
        background_id,
        shape,
        color_id,
        cx,
        cy,
        half,
    );
    Scene {
        image,
        class_label: class,
        bbox,
        dataset_id,
        color_id,
        background_id,
    }
}

/// Generates one biased source dataset.
///
/// Class labels are uniform. The object takes the dataset's majority color
/// with probability `color_bias`, otherwise a uniform draw over the
/// remaining colors. The background id is fixed per dataset.
pub fn generate_source(
    spec: &FactorSpec,
    dataset_id: u32,
    n: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("source split needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, dataset_id as u64, 0x50u64]));
    let majority = spec.colors[dataset_id as usize % spec.colors.len()];
    let background = spec.backgrounds[dataset_id as usize % spec.backgrounds.len()];
    let others: Vec<u32> = spec
        .colors
        .iter()
        .copied()
        .filter(|&c| c != majority)
        .collect();
    let mut scenes = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.gen_range(0..spec.num_classes) as u32;
        let color = if rng.gen::<f64>() < spec.color_bias {
            majority
        } else {
            others[rng.gen_range(0..others.len())]
        };
        scenes.push(make_scene(spec, &mut rng, dataset_id, class, color, background));
    }
    Ok(DatasetSplit {
        scenes,
        name: format!("source_{dataset_id}"),
        role: SplitRole::Source,
        canvas: spec.canvas_size as u32,
        num_classes: spec.num_classes as u32,
    })
}

/// Generates the unbiased held-out target split.
///
/// Colors are uniform over the full palette and backgrounds are drawn
/// uniformly from ids disjoint from every source background.
pub fn generate_target(spec: &FactorSpec, n: usize, seed: u64) -> Result<DatasetSplit> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x7a46e7]));
    let target_bgs = spec.target_backgrounds();
    let mut scenes = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.gen_range(0..spec.num_classes) as u32;
        let color = spec.colors[rng.gen_range(0..spec.colors.len())];
        let background = target_bgs[rng.gen_range(0..target_bgs.len())];
        scenes.push(make_scene(
            spec,
            &mut rng,
            TARGET_DATASET_ID,
            class,
            color,
            background,
        ));
    }
    Ok(DatasetSplit {
        scenes,
        name: "target".into(),
        role: SplitRole::Target,
        canvas: spec.canvas_size as u32,
        num_classes: spec.num_classes as u32,
    })
}

/// Adds clamped zero-mean Gaussian pixel noise; labels and boxes unchanged.
pub fn gaussian_corrupt(split: &DatasetSplit, sigma: f64, seed: u64) -> Result<DatasetSplit> {
    if sigma < 0.0 {
        return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x6a755]));
    let mut out = split.clone();
    for scene in &mut out.scenes {
        for px in &mut scene.image {
            let z = standard_normal(&mut rng);
            *px = ((*px as f64 + sigma * z).clamp(0.0, 1.0)) as f32;
        }
    }
    out.role = SplitRole::TargetGauss;
    out.name = format!("{}_gauss", split.name);
    Ok(out)
}

/// One standard normal draw via Box-Muller (no distribution dependency;
/// the same rng stream always yields the same value).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec3() -> FactorSpec {
        FactorSpec::default_benchmark(3)
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec3();
        s.num_classes = 1;
        s.shapes = vec![0];
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = spec3();
        s.color_bias = 1.5;
        assert!(s.validate().is_err());
        let mut s = spec3();
        s.canvas_size = 8;
        assert!(s.validate().is_err());
        let mut s = spec3();
        s.shapes = vec![0, 1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn bias_one_forces_majority_color() {
        let mut s = spec3();
        s.color_bias = 1.0;
        let split = generate_source(&s, 0, 100, 7).unwrap();
        let majority = s.colors[0];
        assert!(split.scenes.iter().all(|sc| sc.color_id == majority));
    }

    #[test]
    fn bias_zero_excludes_majority_and_spreads_uniformly() {
        let mut s = spec3();
        s.color_bias = 0.0;
        let split = generate_source(&s, 0, 3000, 11).unwrap();
        let majority = s.colors[0];
        let mut counts = vec![0usize; s.colors.len()];
        for sc in &split.scenes {
            assert_ne!(sc.color_id, majority);
            counts[sc.color_id as usize] += 1;
        }
        assert_eq!(counts[majority as usize], 0);
        // 5 non-majority colors, expect 600 each; allow 4 sigma of binomial noise
        let sigma = (3000.0f64 * 0.2 * 0.8).sqrt();
        for (c, &cnt) in counts.iter().enumerate() {
            if c as u32 != majority {
                assert!(
                    (cnt as f64 - 600.0).abs() < 4.0 * sigma,
                    "color {c} count {cnt}"
                );
            }
        }
    }

    #[test]
    fn class_histogram_is_uniform_within_3_sigma() {
        let split = generate_source(&spec3(), 0, 300, 7).unwrap();
        let mut counts = [0usize; 3];
        for sc in &split.scenes {
            counts[sc.class_label as usize] += 1;
        }
        let sigma = (300.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for &c in &counts {
            assert!((c as f64 - 100.0).abs() <= 3.0 * sigma, "counts {counts:?}");
        }
    }

    #[test]
    fn target_is_empty_when_n_zero() {
        let split = generate_target(&spec3(), 0, 1).unwrap();
        assert!(split.scenes.is_empty());
    }

    #[test]
    fn target_colors_are_roughly_uniform() {
        let mut s = spec3();
        s.colors = vec![0, 1, 2, 3];
        let split = generate_target(&s, 4000, 5).unwrap();
        let mut counts = [0usize; 4];
        for sc in &split.scenes {
            counts[sc.color_id as usize] += 1;
        }
        let sigma = (4000.0f64 * 0.25 * 0.75).sqrt();
        for &c in &counts {
            assert!((c as f64 - 1000.0).abs() < 4.0 * sigma, "counts {counts:?}");
        }
    }

    #[test]
    fn target_backgrounds_disjoint_from_sources() {
        let s = spec3();
        let src0 = generate_source(&s, 0, 50, 3).unwrap();
        let src1 = generate_source(&s, 1, 50, 3).unwrap();
        let tgt = generate_target(&s, 200, 3).unwrap();
        let src_bgs: std::collections::HashSet<u32> = src0
            .scenes
            .iter()
            .chain(src1.scenes.iter())
            .map(|sc| sc.background_id)
            .collect();
        assert!(tgt.scenes.iter().all(|sc| !src_bgs.contains(&sc.background_id)));
    }

    #[test]
    fn generation_is_deterministic_under_seed() {
        let s = spec3();
        let a = generate_source(&s, 1, 40, 99).unwrap();
        let b = generate_source(&s, 1, 40, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_source(&s, 1, 40, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scene_invariants_hold() {
        let split = generate_source(&spec3(), 0, 60, 4).unwrap();
        for sc in &split.scenes {
            assert!(sc.image.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let [cx, cy, w, h] = sc.bbox;
            assert!(w > 0.0 && h > 0.0);
            assert!(cx - w / 2.0 >= -1e-6 && cx + w / 2.0 <= 1.0 + 1e-6);
            assert!(cy - h / 2.0 >= -1e-6 && cy + h / 2.0 <= 1.0 + 1e-6);
            assert!(sc.class_label < 3);
        }
    }

    #[test]
    fn gaussian_sigma_zero_is_bit_identical() {
        let s = spec3();
        let tgt = generate_target(&s, 10, 2).unwrap();
        let noisy = gaussian_corrupt(&tgt, 0.0, 77).unwrap();
        for (a, b) in tgt.scenes.iter().zip(noisy.scenes.iter()) {
            for (pa, pb) in a.image.iter().zip(b.image.iter()) {
                assert_eq!(pa.to_bits(), pb.to_bits());
            }
        }
        assert_eq!(noisy.role, SplitRole::TargetGauss);
    }

    #[test]
    fn gaussian_noise_has_requested_std_on_interior_pixels() {
        let s = spec3();
        let tgt = generate_target(&s, 60, 2).unwrap();
        let noisy = gaussian_corrupt(&tgt, 0.1, 77).unwrap();
        let mut diffs = Vec::new();
        for (a, b) in tgt.scenes.iter().zip(noisy.scenes.iter()) {
            for (&pa, &pb) in a.image.iter().zip(b.image.iter()) {
                // interior originals, output not clamped
                if (0.25..=0.75).contains(&pa) && pb > 0.0 && pb < 1.0 {
                    diffs.push((pb - pa) as f64);
                }
            }
        }
        assert!(diffs.len() > 10_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
        let std = var.sqrt();
        assert!(
            (std - 0.1).abs() < 0.01,
            "empirical std {std} not within 10% of 0.1"
        );
    }

    #[test]
    fn gaussian_output_stays_in_unit_range() {
        let s = spec3();
        let tgt = generate_target(&s, 20, 2).unwrap();
        let noisy = gaussian_corrupt(&tgt, 0.5, 3).unwrap();
        for sc in &noisy.scenes {
            assert!(sc.image.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn negative_sigma_is_a_config_error() {
        let s = spec3();
        let tgt = generate_target(&s, 2, 2).unwrap();
        assert!(matches!(
            gaussian_corrupt(&tgt, -0.1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn class_and_color_are_independent_without_bias() {
        // contingency chi-square on 10^4 samples; bias 0 removes the majority
        // color entirely, so restrict the table to the non-majority columns.
        let mut s = spec3();
        s.color_bias = 0.0;
        let split = generate_source(&s, 0, 10_000, 123).unwrap();
        let majority = s.colors[0];
        let cols: Vec<u32> = s.colors.iter().copied().filter(|&c| c != majority).collect();
        let mut table = vec![vec![0f64; cols.len()]; 3];
        for sc in &split.scenes {
            let j = cols.iter().position(|&c| c == sc.color_id).unwrap();
            table[sc.class_label as usize][j] += 1.0;
        }
        let n: f64 = 10_000.0;
        let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let col: Vec<f64> = (0..cols.len())
            .map(|j| table.iter().map(|r| r[j]).sum())
            .collect();
        let mut chi2 = 0.0;
        for (i, r) in table.iter().enumerate() {
            for (j, &o) in r.iter().enumerate() {
                let e = row[i] * col[j] / n;
                chi2 += (o - e) * (o - e) / e;
            }
        }
        // df = (3-1)(5-1) = 8, p=0.001 critical value 26.12
        assert!(chi2 < 26.12, "chi2 {chi2}");
    }

    #[test]
    fn majority_color_rate_is_monotone_in_bias() {
        let mut last = -1.0f64;
        for bias in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let mut s = spec3();
            s.color_bias = bias;
            let split = generate_source(&s, 0, 2000, 55).unwrap();
            let majority = s.colors[0];
            let rate = split
                .scenes
                .iter()
                .filter(|sc| sc.color_id == majority)
                .count() as f64
                / 2000.0;
            assert!(rate >= last, "rate {rate} dropped below {last} at bias {bias}");
            last = rate;
        }
    }
}
