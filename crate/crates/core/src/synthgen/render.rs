//! Deterministic rasterization of scenes: procedural gray background
//! textures keyed by id, plus one colored shape primitive per scene.
//! Anti-aliasing is off throughout so identical inputs give identical
//! pixel buffers on every platform.

/// Fixed object color palette; `color_id` indexes into it (wrapping).
pub const PALETTE: [[f32; 3]; 8] = [
    [0.90, 0.15, 0.15], // red
    [0.15, 0.80, 0.20], // green
    [0.15, 0.25, 0.90], // blue
    [0.90, 0.85, 0.15], // yellow
    [0.85, 0.20, 0.85], // magenta
    [0.15, 0.80, 0.85], // cyan
    [0.95, 0.55, 0.10], // orange
    [0.55, 0.20, 0.80], // purple
];

pub const SHAPE_SQUARE: u32 = 0;
pub const SHAPE_DISK: u32 = 1;
pub const SHAPE_TRIANGLE: u32 = 2;
pub const SHAPE_CROSS: u32 = 3;

fn hash3(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(c.wrapping_mul(0x94d0_49bb_1331_11eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Background intensity at pixel (x, y) for a given texture id.
///
/// Three pattern families cycle with the id: stripes, checkerboard and a
/// quantized hash noise. Intensities stay in a muted gray band so the
/// colored object always contrasts against them.
pub fn background_intensity(background_id: u32, x: usize, y: usize) -> f32 {
    let id = background_id as u64;
    let h = hash3(id, 0x6261_636b, 0);
    // Two intensities in [0.15, 0.55], at least 0.08 apart.
    let lo = 0.15 + 0.22 * ((h & 0xff) as f32 / 255.0);
    let hi = lo + 0.08 + 0.10 * (((h >> 8) & 0xff) as f32 / 255.0);
    let family = background_id % 3;
    let on = match family {
        0 => {
            // stripes; orientation and period from the hash
            let period = 3 + ((h >> 16) & 0x3) as usize; // 3..=6
            let orient = (h >> 20) & 0x3;
            let t = match orient {
                0 => x,
                1 => y,
                2 => x + y,
                _ => x + 4 * background_id as usize + 3 * y,
            };
            (t / period) % 2 == 0
        }
        1 => {
            let cell = 2 + ((h >> 16) & 0x3) as usize; // 2..=5
            (x / cell + y / cell) % 2 == 0
        }
        _ => {
            // 4-level hash noise, thresholded to two intensities
            hash3(id, x as u64 + 1, y as u64 + 1) & 0x3 < 2
        }
    };
    if on {
        hi
    } else {
        lo
    }
}

/// True when pixel center (px+0.5, py+0.5) lies inside the shape.
pub fn shape_contains(shape_id: u32, cx: f64, cy: f64, half: f64, px: usize, py: usize) -> bool {
    let x = px as f64 + 0.5;
    let y = py as f64 + 0.5;
    let dx = x - cx;
    let dy = y - cy;
    match shape_id % 4 {
        SHAPE_SQUARE => dx.abs() <= half && dy.abs() <= half,
        SHAPE_DISK => dx * dx + dy * dy <= half * half,
        SHAPE_TRIANGLE => {
            // apex up: half-width grows linearly from the apex row
            dy.abs() <= half && dx.abs() <= (dy + half) / 2.0
        }
        _ => {
            let arm = half / 3.0;
            (dx.abs() <= arm && dy.abs() <= half) || (dy.abs() <= arm && dx.abs() <= half)
        }
    }
}

/// Paints background then object into a fresh [3, S, S] buffer and returns
/// (pixels, bbox) where bbox = (cx, cy, w, h) normalized to [0, 1], taken
/// from the painted pixel extents.
pub fn render_scene(
    canvas: usize,
    background_id: u32,
    shape_id: u32,
    color_id: u32,
    cx: f64,
    cy: f64,
    half: f64,
) -> (Vec<f32>, [f32; 4]) {
    let s = canvas;
    let mut img = vec![0.0f32; 3 * s * s];
    for y in 0..s {
        for x in 0..s {
            let v = background_intensity(background_id, x, y);
            img[y * s + x] = v;
            img[s * s + y * s + x] = v;
            img[2 * s * s + y * s + x] = v;
        }
    }
    let color = PALETTE[(color_id as usize) % PALETTE.len()];
    let x0 = ((cx - half - 1.0).floor().max(0.0)) as usize;
    let x1 = ((cx + half + 1.0).ceil().min(s as f64)) as usize;
    let y0 = ((cy - half - 1.0).floor().max(0.0)) as usize;
    let y1 = ((cy + half + 1.0).ceil().min(s as f64)) as usize;
    let (mut minx, mut maxx, mut miny, mut maxy) = (usize::MAX, 0usize, usize::MAX, 0usize);
    for y in y0..y1 {
        for x in x0..x1 {
            if shape_contains(shape_id, cx, cy, half, x, y) {
                img[y * s + x] = color[0];
                img[s * s + y * s + x] = color[1];
                img[2 * s * s + y * s + x] = color[2];
                minx = minx.min(x);
                maxx = maxx.max(x);
                miny = miny.min(y);
                maxy = maxy.max(y);
            }
        }
    }
    debug_assert!(minx != usize::MAX, "shape painted no pixels");
    let sf = s as f32;
    let w = (maxx - minx + 1) as f32 / sf;
    let h = (maxy - miny + 1) as f32 / sf;
    let bcx = (minx as f32 + maxx as f32 + 1.0) / 2.0 / sf;
    let bcy = (miny as f32 + maxy as f32 + 1.0) / 2.0 / sf;
    (img, [bcx, bcy, w, h])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_is_pure_function_of_id_and_pixel() {
        for id in 0..12u32 {
            for (x, y) in [(0, 0), (5, 3), (31, 31)] {
                let a = background_intensity(id, x, y);
                let b = background_intensity(id, x, y);
                assert_eq!(a.to_bits(), b.to_bits());
                assert!((0.1..=0.6).contains(&a));
            }
        }
    }

    #[test]
    fn shapes_paint_within_half_extent() {
        for shape in 0..4u32 {
            let (_, bbox) = render_scene(32, 0, shape, 0, 16.0, 16.0, 8.0);
            assert!(bbox[2] > 0.0 && bbox[3] > 0.0);
            assert!(bbox[2] <= 17.0 / 32.0 && bbox[3] <= 17.0 / 32.0);
            // centered shape stays centered
            assert!((bbox[0] - 0.5).abs() < 0.08 && (bbox[1] - 0.5).abs() < 0.08);
        }
    }

    #[test]
    fn disk_box_is_square_and_tight() {
        let (img, bbox) = render_scene(32, 1, SHAPE_DISK, 2, 16.0, 16.0, 6.0);
        assert_eq!(bbox[2], bbox[3]);
        // object pixels actually carry the palette color in channel 2 (blue)
        let blue = PALETTE[2][2];
        let c = img[2 * 32 * 32 + 16 * 32 + 16];
        assert_eq!(c, blue);
    }
}
