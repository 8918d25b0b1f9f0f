//! The tiny detector surrogate.
//!
//! Extractor: three 3x3 convolutions (stride 2, 2, 1; ReLU after each),
//! mapping `[3, S, S]` to a `[C, S/4, S/4]` feature map. Task head:
//! global average pooling into one linear layer per output (class logits
//! and box regression). Domain head: two pixelwise 1x1 convolutions with a
//! ReLU between, emitting per-pixel K-way domain logits behind a gradient
//! reversal layer. The GRL is the identity on forward values; on the
//! backward pass the gradient crossing it into the extractor is multiplied
//! by `-grl_scale`.
//!
//! Every backward pass is hand-derived reverse mode over the cached
//! forward activations, exact up to floating point; there is no
//! approximation anywhere in the gradient path.

use super::ops::cross_entropy_with_grad;
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Static architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub num_classes: usize,
    /// Output channels of the domain head (K pseudo-domains, or the number
    /// of source datasets for the sparse-label baseline).
    pub k_dom: usize,
    pub input_size: usize,
    pub conv_channels: [usize; 3],
    pub domain_hidden: usize,
}

impl ArchConfig {
    pub fn new(num_classes: usize, k_dom: usize) -> ArchConfig {
        ArchConfig {
            num_classes,
            k_dom,
            input_size: 32,
            conv_channels: [8, 16, 16],
            domain_hidden: 16,
        }
    }
}

struct ConvShape {
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

fn conv_out(side: usize, k: usize, stride: usize, pad: usize) -> usize {
    (side + 2 * pad - k) / stride + 1
}

impl ConvShape {
    fn new(in_ch: usize, side: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        let o = conv_out(side, k, stride, pad);
        ConvShape {
            in_ch,
            h: side,
            w: side,
            out_ch,
            k,
            stride,
            pad,
            out_h: o,
            out_w: o,
        }
    }
}

fn conv_forward(x: &[f64], wgt: &[f64], bias: &[f64], d: &ConvShape, out: &mut [f64]) {
    for o in 0..d.out_ch {
        let b = bias[o];
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let mut acc = b;
                for i in 0..d.in_ch {
                    let xbase = i * d.h * d.w;
                    let wbase = (o * d.in_ch + i) * d.k * d.k;
                    for ky in 0..d.k {
                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * d.w;
                        let wrow = wbase + ky * d.k;
                        for kx in 0..d.k {
                            let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            acc += wgt[wrow + kx] * x[xrow + ix as usize];
                        }
                    }
                }
                out[(o * d.out_h + oy) * d.out_w + ox] = acc;
            }
        }
    }
}

fn conv_backward(
    x: &[f64],
    wgt: &[f64],
    d: &ConvShape,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_x: &mut [f64],
) {
    for o in 0..d.out_ch {
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let go = grad_out[(o * d.out_h + oy) * d.out_w + ox];
                if go == 0.0 {
                    continue;
                }
                grad_b[o] += go;
                for i in 0..d.in_ch {
                    let xbase = i * d.h * d.w;
                    let wbase = (o * d.in_ch + i) * d.k * d.k;
                    for ky in 0..d.k {
                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * d.w;
                        let wrow = wbase + ky * d.k;
                        for kx in 0..d.k {
                            let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            grad_w[wrow + kx] += go * x[xrow + ix as usize];
                            grad_x[xrow + ix as usize] += go * wgt[wrow + kx];
                        }
                    }
                }
            }
        }
    }
}

fn relu(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = if v > 0.0 { v } else { 0.0 };
    }
}

/// Backward through ReLU: zero where the pre-activation was <= 0.
fn relu_backward(pre: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    for i in 0..pre.len() {
        grad_in[i] = if pre[i] > 0.0 { grad_out[i] } else { 0.0 };
    }
}

/// Cached activations from one extractor pass.
#[derive(Debug, Clone)]
pub struct FeatureForward {
    pub pre1: Tensor,
    pub act1: Tensor,
    pub pre2: Tensor,
    pub act2: Tensor,
    pub pre3: Tensor,
    /// Final feature map `[C, H, W]` (post-ReLU).
    pub fmap: Tensor,
}

/// Cached activations from the task head.
#[derive(Debug, Clone)]
pub struct TaskForward {
    pub pooled: Vec<f64>,
    pub class_logits: Tensor,
    pub box_pred: Tensor,
}

/// Cached activations from the domain head.
#[derive(Debug, Clone)]
pub struct DomainForward {
    pub hidden_pre: Tensor,
    pub hidden: Tensor,
    /// Per-pixel domain logits `[k_dom, H, W]`.
    pub logits: Tensor,
    pub grl_scale: f64,
}

/// Which scalar loss `grad_wrt_input` differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// Cross-entropy of the class logits against the supplied label.
    Classification { label: usize },
}

pub struct TinyDetector {
    pub cfg: ArchConfig,
}

impl TinyDetector {
    pub fn new(cfg: ArchConfig) -> TinyDetector {
        TinyDetector { cfg }
    }

    fn shapes(&self) -> [ConvShape; 3] {
        let s = self.cfg.input_size;
        let [c1, c2, c3] = self.cfg.conv_channels;
        let d1 = ConvShape::new(3, s, c1, 3, 2, 1);
        let d2 = ConvShape::new(c1, d1.out_h, c2, 3, 2, 1);
        let d3 = ConvShape::new(c2, d2.out_h, c3, 3, 1, 1);
        [d1, d2, d3]
    }

    /// Feature map side length (input side / 4).
    pub fn fmap_side(&self) -> usize {
        self.shapes()[2].out_h
    }

    pub fn fmap_channels(&self) -> usize {
        self.cfg.conv_channels[2]
    }

    /// Draws fresh parameters, uniform in [-a, a] with a = sqrt(1/fan_in).
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let [c1, c2, c3] = self.cfg.conv_channels;
        let nc = self.cfg.num_classes;
        let dh = self.cfg.domain_hidden;
        let kd = self.cfg.k_dom;
        let specs: Vec<(&str, Vec<usize>, usize)> = vec![
            ("conv1.weight", vec![c1, 3, 3, 3], 3 * 9),
            ("conv1.bias", vec![c1], 3 * 9),
            ("conv2.weight", vec![c2, c1, 3, 3], c1 * 9),
            ("conv2.bias", vec![c2], c1 * 9),
            ("conv3.weight", vec![c3, c2, 3, 3], c2 * 9),
            ("conv3.bias", vec![c3], c2 * 9),
            ("cls.weight", vec![nc, c3], c3),
            ("cls.bias", vec![nc], c3),
            ("box.weight", vec![4, c3], c3),
            ("box.bias", vec![4], c3),
            ("dom1.weight", vec![dh, c3], c3),
            ("dom1.bias", vec![dh], c3),
            ("dom2.weight", vec![kd, dh], dh),
            ("dom2.bias", vec![kd], dh),
        ];
        let entries = specs
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let a = (1.0 / fan_in as f64).sqrt();
                let len: usize = shape.iter().product();
                let data: Vec<f64> = (0..len).map(|_| a * (2.0 * rng.gen::<f64>() - 1.0)).collect();
                (name.to_string(), Tensor::from_vec(&shape, data).unwrap())
            })
            .collect();
        ParamSet::from_entries(entries).unwrap()
    }

    fn param<'a>(&self, params: &'a ParamSet, name: &str) -> Result<&'a Tensor> {
        params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    /// Runs the extractor; `image` must be `[3, S, S]`.
    pub fn forward_features(&self, params: &ParamSet, image: &Tensor) -> Result<FeatureForward> {
        let s = self.cfg.input_size;
        if image.shape() != [3, s, s] {
            return Err(Error::Contract(format!(
                "image shape {:?} does not match [3, {s}, {s}]",
                image.shape()
            )));
        }
        image.check_finite("image")?;
        let [d1, d2, d3] = self.shapes();
        let w1 = self.param(params, "conv1.weight")?;
        let b1 = self.param(params, "conv1.bias")?;
        let w2 = self.param(params, "conv2.weight")?;
        let b2 = self.param(params, "conv2.bias")?;
        let w3 = self.param(params, "conv3.weight")?;
        let b3 = self.param(params, "conv3.bias")?;

        let mut pre1 = Tensor::zeros(&[d1.out_ch, d1.out_h, d1.out_w]);
        conv_forward(image.data(), w1.data(), b1.data(), &d1, pre1.data_mut());
        let mut act1 = Tensor::zeros(pre1.shape());
        relu(pre1.data(), act1.data_mut());

        let mut pre2 = Tensor::zeros(&[d2.out_ch, d2.out_h, d2.out_w]);
        conv_forward(act1.data(), w2.data(), b2.data(), &d2, pre2.data_mut());
        let mut act2 = Tensor::zeros(pre2.shape());
        relu(pre2.data(), act2.data_mut());

        let mut pre3 = Tensor::zeros(&[d3.out_ch, d3.out_h, d3.out_w]);
        conv_forward(act2.data(), w3.data(), b3.data(), &d3, pre3.data_mut());
        let mut fmap = Tensor::zeros(pre3.shape());
        relu(pre3.data(), fmap.data_mut());

        Ok(FeatureForward {
            pre1,
            act1,
            pre2,
            act2,
            pre3,
            fmap,
        })
    }

    /// Task head: global average pool then one linear layer per output.
    pub fn forward_task(&self, params: &ParamSet, fmap: &Tensor) -> Result<TaskForward> {
        let c = self.fmap_channels();
        let side = self.fmap_side();
        if fmap.shape() != [c, side, side] {
            return Err(Error::Contract(format!(
                "feature map shape {:?} does not match [{c}, {side}, {side}]",
                fmap.shape()
            )));
        }
        let hw = side * side;
        let mut pooled = vec![0.0; c];
        for ch in 0..c {
            let base = ch * hw;
            pooled[ch] = fmap.data()[base..base + hw].iter().sum::<f64>() / hw as f64;
        }
        let wc = self.param(params, "cls.weight")?;
        let bc = self.param(params, "cls.bias")?;
        let wb = self.param(params, "box.weight")?;
        let bb = self.param(params, "box.bias")?;
        let nc = self.cfg.num_classes;
        let mut logits = vec![0.0; nc];
        for j in 0..nc {
            let mut acc = bc.data()[j];
            for i in 0..c {
                acc += wc.data()[j * c + i] * pooled[i];
            }
            logits[j] = acc;
        }
        let mut bx = vec![0.0; 4];
        for j in 0..4 {
            let mut acc = bb.data()[j];
            for i in 0..c {
                acc += wb.data()[j * c + i] * pooled[i];
            }
            bx[j] = acc;
        }
        Ok(TaskForward {
            pooled,
            class_logits: Tensor::from_vec(&[nc], logits)?,
            box_pred: Tensor::from_vec(&[4], bx)?,
        })
    }

    /// Domain head. The GRL is the identity on the forward pass, so the
    /// returned logits do not depend on `grl_scale`; the scale only enters
    /// `backward_domain`.
    pub fn forward_domain(
        &self,
        params: &ParamSet,
        fmap: &Tensor,
        grl_scale: f64,
    ) -> Result<DomainForward> {
        if grl_scale < 0.0 {
            return Err(Error::Contract(format!(
                "grl_scale must be >= 0, got {grl_scale}"
            )));
        }
        let c = self.fmap_channels();
        let side = self.fmap_side();
        if fmap.shape() != [c, side, side] {
            return Err(Error::Contract(format!(
                "feature map shape {:?} does not match [{c}, {side}, {side}]",
                fmap.shape()
            )));
        }
        let w1 = self.param(params, "dom1.weight")?;
        let b1 = self.param(params, "dom1.bias")?;
        let w2 = self.param(params, "dom2.weight")?;
        let b2 = self.param(params, "dom2.bias")?;
        let dh = self.cfg.domain_hidden;
        let kd = self.cfg.k_dom;
        if w2.shape()[0] != kd {
            return Err(Error::Contract(format!(
                "domain head emits {} channels but {kd} were configured",
                w2.shape()[0]
            )));
        }
        let hw = side * side;
        let mut hidden_pre = Tensor::zeros(&[dh, side, side]);
        pixelwise_linear(fmap.data(), c, hw, w1.data(), b1.data(), dh, hidden_pre.data_mut());
        let mut hidden = Tensor::zeros(&[dh, side, side]);
        relu(hidden_pre.data(), hidden.data_mut());
        let mut logits = Tensor::zeros(&[kd, side, side]);
        pixelwise_linear(hidden.data(), dh, hw, w2.data(), b2.data(), kd, logits.data_mut());
        Ok(DomainForward {
            hidden_pre,
            hidden,
            logits,
            grl_scale,
        })
    }

    /// Backward through the extractor. Accumulates parameter gradients into
    /// `grads` and returns the gradient w.r.t. the input image.
    pub fn backward_features(
        &self,
        params: &ParamSet,
        image: &Tensor,
        ff: &FeatureForward,
        grad_fmap: &Tensor,
        grads: &mut ParamSet,
    ) -> Result<Tensor> {
        let [d1, d2, d3] = self.shapes();
        let mut g_pre3 = vec![0.0; ff.pre3.len()];
        relu_backward(ff.pre3.data(), grad_fmap.data(), &mut g_pre3);

        let mut g_act2 = vec![0.0; ff.act2.len()];
        {
            let w3 = self.param(params, "conv3.weight")?;
            let (gw, gb) = grads.get2_mut("conv3.weight", "conv3.bias").unwrap();
            conv_backward(
                ff.act2.data(),
                w3.data(),
                &d3,
                &g_pre3,
                gw.data_mut(),
                gb.data_mut(),
                &mut g_act2,
            );
        }
        let mut g_pre2 = vec![0.0; ff.pre2.len()];
        relu_backward(ff.pre2.data(), &g_act2, &mut g_pre2);

        let mut g_act1 = vec![0.0; ff.act1.len()];
        {
            let w2 = self.param(params, "conv2.weight")?;
            let (gw, gb) = grads.get2_mut("conv2.weight", "conv2.bias").unwrap();
            conv_backward(
                ff.act1.data(),
                w2.data(),
                &d2,
                &g_pre2,
                gw.data_mut(),
                gb.data_mut(),
                &mut g_act1,
            );
        }
        let mut g_pre1 = vec![0.0; ff.pre1.len()];
        relu_backward(ff.pre1.data(), &g_act1, &mut g_pre1);

        let mut g_image = Tensor::zeros(image.shape());
        {
            let w1 = self.param(params, "conv1.weight")?;
            let (gw, gb) = grads.get2_mut("conv1.weight", "conv1.bias").unwrap();
            conv_backward(
                image.data(),
                w1.data(),
                &d1,
                &g_pre1,
                gw.data_mut(),
                gb.data_mut(),
                g_image.data_mut(),
            );
        }
        Ok(g_image)
    }

    /// Backward through the task head given gradients at the logits and box
    /// outputs. Returns the gradient w.r.t. the feature map.
    pub fn backward_task(
        &self,
        params: &ParamSet,
        tf: &TaskForward,
        grad_logits: &[f64],
        grad_box: &[f64],
        grads: &mut ParamSet,
    ) -> Result<Tensor> {
        let c = self.fmap_channels();
        let side = self.fmap_side();
        let hw = side * side;
        let nc = self.cfg.num_classes;
        if grad_logits.len() != nc || grad_box.len() != 4 {
            return Err(Error::Contract("task head gradient length mismatch".into()));
        }
        let mut g_pooled = vec![0.0; c];
        {
            let wc = self.param(params, "cls.weight")?;
            let gw = grads.get_mut("cls.weight").unwrap();
            for j in 0..nc {
                for i in 0..c {
                    gw.data_mut()[j * c + i] += grad_logits[j] * tf.pooled[i];
                    g_pooled[i] += grad_logits[j] * wc.data()[j * c + i];
                }
            }
            let gb = grads.get_mut("cls.bias").unwrap();
            for j in 0..nc {
                gb.data_mut()[j] += grad_logits[j];
            }
        }
        {
            let wb = self.param(params, "box.weight")?;
            let gw = grads.get_mut("box.weight").unwrap();
            for j in 0..4 {
                for i in 0..c {
                    gw.data_mut()[j * c + i] += grad_box[j] * tf.pooled[i];
                    g_pooled[i] += grad_box[j] * wb.data()[j * c + i];
                }
            }
            let gb = grads.get_mut("box.bias").unwrap();
            for j in 0..4 {
                gb.data_mut()[j] += grad_box[j];
            }
        }
        // GAP backward: spread each channel gradient uniformly
        let mut g_fmap = Tensor::zeros(&[c, side, side]);
        for ch in 0..c {
            let g = g_pooled[ch] / hw as f64;
            for p in 0..hw {
                g_fmap.data_mut()[ch * hw + p] = g;
            }
        }
        Ok(g_fmap)
    }

    /// Backward through the domain head. Parameter gradients are the plain
    /// minimization gradients; the returned feature-map gradient has already
    /// crossed the GRL, i.e. it equals `-grl_scale` times the raw upstream
    /// gradient.
    pub fn backward_domain(
        &self,
        params: &ParamSet,
        fmap: &Tensor,
        df: &DomainForward,
        grad_logits: &Tensor,
        grads: &mut ParamSet,
    ) -> Result<Tensor> {
        let raw = self.domain_backward_raw(params, fmap, df, grad_logits, grads)?;
        let mut out = raw;
        for v in out.data_mut() {
            *v *= -df.grl_scale;
        }
        Ok(out)
    }

    /// Same as `backward_domain` but returns the gradient as if the GRL
    /// were absent. Used by the GRL law checks.
    pub fn domain_backward_raw(
        &self,
        params: &ParamSet,
        fmap: &Tensor,
        df: &DomainForward,
        grad_logits: &Tensor,
        grads: &mut ParamSet,
    ) -> Result<Tensor> {
        let c = self.fmap_channels();
        let side = self.fmap_side();
        let hw = side * side;
        let dh = self.cfg.domain_hidden;
        let kd = self.cfg.k_dom;
        if grad_logits.shape() != df.logits.shape() {
            return Err(Error::Contract("domain logit gradient shape mismatch".into()));
        }
        let mut g_hidden = vec![0.0; dh * hw];
        {
            let w2 = self.param(params, "dom2.weight")?;
            let (gw, gb) = grads.get2_mut("dom2.weight", "dom2.bias").unwrap();
            pixelwise_linear_backward(
                df.hidden.data(),
                dh,
                hw,
                w2.data(),
                kd,
                grad_logits.data(),
                gw.data_mut(),
                gb.data_mut(),
                &mut g_hidden,
            );
        }
        let mut g_hidden_pre = vec![0.0; dh * hw];
        relu_backward(df.hidden_pre.data(), &g_hidden, &mut g_hidden_pre);
        let mut g_fmap = Tensor::zeros(&[c, side, side]);
        {
            let w1 = self.param(params, "dom1.weight")?;
            let (gw, gb) = grads.get2_mut("dom1.weight", "dom1.bias").unwrap();
            pixelwise_linear_backward(
                fmap.data(),
                c,
                hw,
                w1.data(),
                dh,
                &g_hidden_pre,
                gw.data_mut(),
                gb.data_mut(),
                g_fmap.data_mut(),
            );
        }
        Ok(g_fmap)
    }

    /// Exact gradient of the named loss w.r.t. the input image. The image
    /// itself is never modified.
    pub fn grad_wrt_input(
        &self,
        params: &ParamSet,
        image: &Tensor,
        loss: LossSpec,
    ) -> Result<Tensor> {
        match loss {
            LossSpec::Classification { label } => {
                if label >= self.cfg.num_classes {
                    return Err(Error::Contract(format!(
                        "label {label} out of range for {} classes",
                        self.cfg.num_classes
                    )));
                }
                let ff = self.forward_features(params, image)?;
                let tf = self.forward_task(params, &ff.fmap)?;
                let (_, grad_logits) = cross_entropy_with_grad(tf.class_logits.data(), label);
                let mut scratch = params.zeros_like();
                let g_fmap =
                    self.backward_task(params, &tf, &grad_logits, &[0.0; 4], &mut scratch)?;
                let g_image =
                    self.backward_features(params, image, &ff, &g_fmap, &mut scratch)?;
                g_image.check_finite("input gradient")?;
                Ok(g_image)
            }
        }
    }
}

/// 1x1 convolution as a per-pixel linear map: `out[o, p] = b[o] + sum_i
/// w[o, i] * x[i, p]`.
fn pixelwise_linear(
    x: &[f64],
    in_ch: usize,
    hw: usize,
    wgt: &[f64],
    bias: &[f64],
    out_ch: usize,
    out: &mut [f64],
) {
    for o in 0..out_ch {
        let orow = o * hw;
        out[orow..orow + hw].fill(bias[o]);
        for i in 0..in_ch {
            let w = wgt[o * in_ch + i];
            let xrow = i * hw;
            for p in 0..hw {
                out[orow + p] += w * x[xrow + p];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pixelwise_linear_backward(
    x: &[f64],
    in_ch: usize,
    hw: usize,
    wgt: &[f64],
    out_ch: usize,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_x: &mut [f64],
) {
    for o in 0..out_ch {
        let orow = o * hw;
        let mut gb = 0.0;
        for p in 0..hw {
            gb += grad_out[orow + p];
        }
        grad_b[o] += gb;
        for i in 0..in_ch {
            let xrow = i * hw;
            let w = wgt[o * in_ch + i];
            let mut gw = 0.0;
            for p in 0..hw {
                let go = grad_out[orow + p];
                gw += go * x[xrow + p];
                grad_x[xrow + p] += go * w;
            }
            grad_w[o * in_ch + i] += gw;
        }
    }
}
