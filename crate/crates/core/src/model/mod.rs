//! A small convolutional classifier with a `Conv1x1 -> GAP -> SoftMax` head.
//!
//! The encoder is a stack of `3x3 conv -> ReLU` stages with a 2x2 max pool
//! between consecutive stages. The last stage's output is the feature map
//! whose spatial mean is the global feature; the 1x1 convolution over that map
//! yields per-location class logits (the CAM logits), and their spatial mean
//! is the classification logit vector.
//!
//! All parameters live in one flat vector so optimizers, checkpoints and
//! gradient checks can treat them uniformly.

mod checkpoint;
pub mod kernels;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};

use crate::error::{OsrError, Result};
use crate::image::Image;
use crate::rng::{derive_rng, tag};
use kernels::{col2im3, gemm, im2col3, maxpool2, maxpool2_backward};
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvNetSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    /// Output channels of each 3x3 stage.
    pub widths: Vec<usize>,
    pub num_classes: usize,
}

impl ConvNetSpec {
    pub fn new(input_height: usize, input_width: usize, widths: Vec<usize>, num_classes: usize) -> Self {
        ConvNetSpec { input_height, input_width, input_channels: 3, widths, num_classes }
    }

    /// Spatial reduction between input and feature map.
    pub fn downsampling(&self) -> usize {
        1 << self.widths.len().saturating_sub(1)
    }

    pub fn cam_dims(&self) -> (usize, usize) {
        (self.input_height / self.downsampling(), self.input_width / self.downsampling())
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.input_channels == 0 {
            return Err(OsrError::Parameter("convnet needs at least one stage of nonzero width".into()));
        }
        if self.num_classes < 2 {
            return Err(OsrError::Parameter(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        self.check_input_dims(self.input_height, self.input_width)
    }

    fn check_input_dims(&self, h: usize, w: usize) -> Result<()> {
        let f = self.downsampling();
        if h < f || w < f || h % f != 0 || w % f != 0 {
            return Err(OsrError::Shape(format!("input {h}x{w} not divisible by downsampling factor {f}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut stages = Vec::with_capacity(self.widths.len());
        let mut cin = self.input_channels;
        for &cout in &self.widths {
            let weight = offset;
            offset += cout * cin * 9;
            let bias = offset;
            offset += cout;
            stages.push(StageLayout { cin, cout, weight, bias });
            cin = cout;
        }
        let head_weight = offset;
        offset += self.num_classes * cin;
        let head_bias = offset;
        offset += self.num_classes;
        Layout { stages, head_weight, head_bias, total: offset }
    }
}

#[derive(Debug, Clone, Copy)]
struct StageLayout {
    cin: usize,
    cout: usize,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    stages: Vec<StageLayout>,
    head_weight: usize,
    head_bias: usize,
    total: usize,
}

/// An `h x w x C` feature map, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub values: Vec<f64>,
}

/// Global feature, optionally split into foreground/background parts.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature {
    pub z_g: Vec<f64>,
    pub z_f: Option<Vec<f64>>,
    pub z_b: Option<Vec<f64>>,
    /// Foreground pixel fraction `|P_f| / (h * w)`.
    pub lambda: Option<f64>,
}

/// Spatial mean, and with a binary `partition` the foreground/background means.
pub fn gap(map: &FeatureMap, partition: Option<&[u8]>) -> Result<GlobalFeature> {
    let locs = map.h * map.w;
    if map.values.len() != locs * map.c || locs == 0 {
        return Err(OsrError::Shape(format!("feature map holds {} values, expected {}", map.values.len(), locs * map.c)));
    }
    let mean_over = |pred: &dyn Fn(usize) -> bool| -> (Vec<f64>, usize) {
        let mut acc = vec![0.0; map.c];
        let mut count = 0;
        for loc in (0..locs).filter(|&l| pred(l)) {
            for (a, &v) in acc.iter_mut().zip(&map.values[loc * map.c..(loc + 1) * map.c]) {
                *a += v;
            }
            count += 1;
        }
        acc.iter_mut().for_each(|a| *a /= count.max(1) as f64);
        (acc, count)
    };
    let (z_g, _) = mean_over(&|_| true);
    let Some(part) = partition else {
        return Ok(GlobalFeature { z_g, z_f: None, z_b: None, lambda: None });
    };
    if part.len() != locs {
        return Err(OsrError::Shape(format!("partition has {} entries, map has {locs} locations", part.len())));
    }
    if part.iter().any(|&b| b > 1) {
        return Err(OsrError::Partition("partition must be binary".into()));
    }
    let (z_f, nf) = mean_over(&|l| part[l] == 1);
    let (z_b, _) = mean_over(&|l| part[l] == 0);
    if nf == 0 || nf == locs {
        return Err(OsrError::Partition("partition must contain both foreground and background".into()));
    }
    Ok(GlobalFeature { z_g, z_f: Some(z_f), z_b: Some(z_b), lambda: Some(nf as f64 / locs as f64) })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Single-image forward result.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `h x w x K`, location-major.
    pub cam_logits: Vec<f64>,
    pub cam_dims: (usize, usize),
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub global: Vec<f64>,
}

struct StageCache {
    h: usize,
    w: usize,
    col: Vec<f64>,
    /// Post-ReLU activations before pooling.
    act: Vec<f64>,
    pool_idx: Option<Vec<u32>>,
}

/// Batch activations retained for the backward pass.
pub struct Activations {
    n: usize,
    stages: Vec<StageCache>,
    input_dims: (usize, usize),
    /// Final feature map, `[C', N, h, w]`.
    features: Vec<f64>,
    feat_dims: (usize, usize),
    /// Per-location class logits, `[K, N, h, w]`.
    cam: Vec<f64>,
    /// `[N, K]`.
    pub logits: Vec<f64>,
    /// `[N, C']`.
    pub global: Vec<f64>,
}

impl Activations {
    pub fn batch_size(&self) -> usize {
        self.n
    }

    pub fn feat_dims(&self) -> (usize, usize) {
        self.feat_dims
    }

    pub fn logits_of(&self, i: usize, k: usize) -> &[f64] {
        &self.logits[i * k..(i + 1) * k]
    }

    /// CAM logits of sample `i` as `h x w x K`.
    pub fn cam_of(&self, i: usize, k: usize) -> Vec<f64> {
        let (h, w) = self.feat_dims;
        let locs = h * w;
        let mut out = Vec::with_capacity(locs * k);
        for loc in 0..locs {
            for class in 0..k {
                out.push(self.cam[(class * self.n + i) * locs + loc]);
            }
        }
        out
    }

    /// Final feature map of sample `i` as an `h x w x C'` [`FeatureMap`].
    pub fn feature_map_of(&self, i: usize) -> FeatureMap {
        let (h, w) = self.feat_dims;
        let locs = h * w;
        let c = self.features.len() / (self.n * locs);
        let mut values = Vec::with_capacity(locs * c);
        for loc in 0..locs {
            for ch in 0..c {
                values.push(self.features[(ch * self.n + i) * locs + loc]);
            }
        }
        FeatureMap { h, w, c, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    spec: ConvNetSpec,
    params: Vec<f64>,
}

/// Pack `H x W x C` images into a `[C, N, H, W]` tensor.
pub fn pack_batch(images: &[&Image]) -> Result<(Vec<f64>, usize, usize, usize)> {
    let first = images.first().ok_or_else(|| OsrError::Argument("empty batch".into()))?;
    let (h, w, c) = (first.height(), first.width(), first.channels());
    let n = images.len();
    let plane = h * w;
    let mut out = vec![0.0; c * n * plane];
    for (i, img) in images.iter().enumerate() {
        img.require_same_shape(first, "batch images")?;
        for p in 0..plane {
            for (ch, &v) in img.pixel(p).iter().enumerate() {
                out[(ch * n + i) * plane + p] = v;
            }
        }
    }
    Ok((out, h, w, c))
}

/// Inverse of [`pack_batch`] for sample `i`.
pub fn unpack_sample(tensor: &[f64], c: usize, n: usize, h: usize, w: usize, i: usize) -> Image {
    let plane = h * w;
    let mut img = Image::zeros(h, w, c);
    for p in 0..plane {
        for ch in 0..c {
            img.pixel_mut(p)[ch] = tensor[(ch * n + i) * plane + p];
        }
    }
    img
}

impl ConvNet {
    /// He-normal convolution weights, zero biases, `N(0, 1/C')` head.
    pub fn new(spec: ConvNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut params = vec![0.0; layout.total];
        let mut rng = derive_rng(seed, &[tag::INIT]);
        for s in &layout.stages {
            let normal = Normal::new(0.0, (2.0 / (s.cin * 9) as f64).sqrt()).expect("positive std");
            for p in &mut params[s.weight..s.bias] {
                *p = normal.sample(&mut rng);
            }
        }
        let cfeat = spec.feature_dim();
        let normal = Normal::new(0.0, (1.0 / cfeat as f64).sqrt()).expect("positive std");
        for p in &mut params[layout.head_weight..layout.head_bias] {
            *p = normal.sample(&mut rng);
        }
        Ok(ConvNet { spec, params })
    }

    pub fn from_params(spec: ConvNetSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(OsrError::Shape(format!("expected {} parameters, got {}", spec.param_count(), params.len())));
        }
        Ok(ConvNet { spec, params })
    }

    pub fn spec(&self) -> &ConvNetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Zero the 1x1 classification convolution (weights and bias).
    pub fn zero_head(&mut self) {
        let l = self.spec.layout();
        self.params[l.head_weight..].fill(0.0);
    }

    /// Head weights as a `K x C'` row-major matrix, followed by the bias.
    pub fn head(&self) -> (&[f64], &[f64]) {
        let l = self.spec.layout();
        (&self.params[l.head_weight..l.head_bias], &self.params[l.head_bias..])
    }

    /// Batch forward pass keeping everything needed for [`ConvNet::backward`].
    pub fn forward_batch(&self, images: &[&Image]) -> Result<Activations> {
        let (mut x, h0, w0, c0) = pack_batch(images)?;
        if c0 != self.spec.input_channels {
            return Err(OsrError::Shape(format!("input has {c0} channels, network expects {}", self.spec.input_channels)));
        }
        self.spec.check_input_dims(h0, w0)?;
        let n = images.len();
        let layout = self.spec.layout();
        let last = layout.stages.len() - 1;
        let (mut h, mut w) = (h0, w0);
        let mut stages = Vec::with_capacity(layout.stages.len());
        for (i, s) in layout.stages.iter().enumerate() {
            let col = im2col3(&x, s.cin, n, h, w);
            let cols = n * h * w;
            let mut act = vec![0.0; s.cout * cols];
            for (row, &b) in act.chunks_exact_mut(cols).zip(&self.params[s.bias..s.bias + s.cout]) {
                row.fill(b);
            }
            gemm(s.cout, s.cin * 9, cols, &self.params[s.weight..s.bias], false, &col, false, &mut act, 1.0);
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            let (next, pool_idx, nh, nw) = if i < last {
                let (p, idx) = maxpool2(&act, s.cout, n, h, w);
                (p, Some(idx), h / 2, w / 2)
            } else {
                (act.clone(), None, h, w)
            };
            stages.push(StageCache { h, w, col, act, pool_idx });
            x = next;
            h = nh;
            w = nw;
        }
        let features = x;
        let cfeat = self.spec.feature_dim();
        let k = self.spec.num_classes;
        let locs = h * w;
        let cols = n * locs;
        let mut cam = vec![0.0; k * cols];
        let (hw, hb) = self.head();
        for (row, &b) in cam.chunks_exact_mut(cols).zip(hb) {
            row.fill(b);
        }
        gemm(k, cfeat, cols, hw, false, &features, false, &mut cam, 1.0);
        let mut logits = vec![0.0; n * k];
        for class in 0..k {
            for i in 0..n {
                let s: f64 = cam[(class * n + i) * locs..(class * n + i + 1) * locs].iter().sum();
                logits[i * k + class] = s / locs as f64;
            }
        }
        let mut global = vec![0.0; n * cfeat];
        for ch in 0..cfeat {
            for i in 0..n {
                let s: f64 = features[(ch * n + i) * locs..(ch * n + i + 1) * locs].iter().sum();
                global[i * cfeat + ch] = s / locs as f64;
            }
        }
        Ok(Activations { n, stages, input_dims: (h0, w0), features, feat_dims: (h, w), cam, logits, global })
    }

    pub fn forward(&self, x: &Image) -> Result<ForwardOutput> {
        let acts = self.forward_batch(&[x])?;
        let k = self.spec.num_classes;
        let logits = acts.logits_of(0, k).to_vec();
        Ok(ForwardOutput {
            cam_logits: acts.cam_of(0, k),
            cam_dims: acts.feat_dims,
            probs: softmax(&logits),
            logits,
            global: acts.global.clone(),
        })
    }

    /// Encode both images, average their global features and classify the mix.
    pub fn ftavg_forward(&self, x_known: &Image, x_outlier: &Image) -> Result<(GlobalFeature, Vec<f64>)> {
        x_known.require_same_shape(x_outlier, "ftavg inputs")?;
        let acts = self.forward_batch(&[x_known, x_outlier])?;
        let c = self.spec.feature_dim();
        let z_g: Vec<f64> = (0..c).map(|i| 0.5 * acts.global[i] + 0.5 * acts.global[c + i]).collect();
        let probs = softmax(&self.head_logits(&z_g));
        Ok((GlobalFeature { z_g, z_f: None, z_b: None, lambda: None }, probs))
    }

    /// Logits computed from given global features through the head (`[N, C'] -> [N, K]`).
    pub fn head_logits(&self, global: &[f64]) -> Vec<f64> {
        let cfeat = self.spec.feature_dim();
        let k = self.spec.num_classes;
        let n = global.len() / cfeat;
        let (hw, hb) = self.head();
        let mut out = Vec::with_capacity(n * k);
        for i in 0..n {
            for class in 0..k {
                out.push(hb[class] + hw[class * cfeat..(class + 1) * cfeat].iter().zip(&global[i * cfeat..(i + 1) * cfeat]).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        out
    }

    /// Gradient of the loss w.r.t. parameters given `d_logits` (`[N, K]`).
    /// Returns the input gradient (`[C, N, H, W]`) when requested.
    pub fn backward(&self, acts: &Activations, d_logits: &[f64], grads: &mut [f64], want_input: bool) -> Option<Vec<f64>> {
        let d_global = self.head_backward(&acts.global, d_logits, grads);
        self.encoder_backward_from_global(acts, &d_global, 1.0, grads, want_input)
    }

    /// Head gradient given the global features it consumed; returns `d_global` (`[N, C']`).
    pub fn head_backward(&self, global: &[f64], d_logits: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let layout = self.spec.layout();
        let cfeat = self.spec.feature_dim();
        let k = self.spec.num_classes;
        let n = d_logits.len() / k;
        // Mean of CAM logits equals the linear head on the mean feature, so the
        // head gradient is that of a linear layer on the global feature.
        {
            let (dw, db) = grads[layout.head_weight..].split_at_mut(k * cfeat);
            for i in 0..n {
                let g = &global[i * cfeat..(i + 1) * cfeat];
                for class in 0..k {
                    let d = d_logits[i * k + class];
                    db[class] += d;
                    for (w, &z) in dw[class * cfeat..(class + 1) * cfeat].iter_mut().zip(g) {
                        *w += d * z;
                    }
                }
            }
        }
        let (hw, _) = self.head();
        let mut d_global = vec![0.0; n * cfeat];
        gemm(n, k, cfeat, d_logits, false, hw, false, &mut d_global, 0.0);
        d_global
    }

    /// Backpropagate `scale * d_global` (spread uniformly over locations) through the encoder.
    pub fn encoder_backward_from_global(
        &self,
        acts: &Activations,
        d_global: &[f64],
        scale: f64,
        grads: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let (h, w) = acts.feat_dims;
        let locs = h * w;
        let n = acts.n;
        let cfeat = self.spec.feature_dim();
        let mut d_feat = vec![0.0; cfeat * n * locs];
        for ch in 0..cfeat {
            for i in 0..n {
                let g = scale * d_global[i * cfeat + ch] / locs as f64;
                d_feat[(ch * n + i) * locs..(ch * n + i + 1) * locs].fill(g);
            }
        }
        self.encoder_backward(acts, d_feat, grads, want_input)
    }

    fn encoder_backward(&self, acts: &Activations, mut d_out: Vec<f64>, grads: &mut [f64], want_input: bool) -> Option<Vec<f64>> {
        let layout = self.spec.layout();
        let n = acts.n;
        for (i, (s, cache)) in layout.stages.iter().zip(&acts.stages).enumerate().rev() {
            let cols = n * cache.h * cache.w;
            let mut d_act = match &cache.pool_idx {
                Some(idx) => maxpool2_backward(&d_out, idx, cache.act.len()),
                None => d_out,
            };
            for (d, &a) in d_act.iter_mut().zip(&cache.act) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            for (db, row) in grads[s.bias..s.bias + s.cout].iter_mut().zip(d_act.chunks_exact(cols)) {
                *db += row.iter().sum::<f64>();
            }
            gemm(s.cout, cols, s.cin * 9, &d_act, false, &cache.col, true, &mut grads[s.weight..s.bias], 1.0);
            if i == 0 && !want_input {
                return None;
            }
            let mut d_col = vec![0.0; s.cin * 9 * cols];
            gemm(s.cin * 9, s.cout, cols, &self.params[s.weight..s.bias], true, &d_act, false, &mut d_col, 0.0);
            d_out = col2im3(&d_col, s.cin, n, cache.h, cache.w);
        }
        debug_assert_eq!(acts.input_dims, (acts.stages[0].h, acts.stages[0].w));
        Some(d_out)
    }
}

/// Stack `x_known` above `x_outlier` along the height axis.
pub fn catimg(x_known: &Image, x_outlier: &Image) -> Result<Image> {
    if x_known.width() != x_outlier.width() || x_known.channels() != x_outlier.channels() {
        return Err(OsrError::Shape(format!(
            "catimg needs equal width and channels, got {}x{} and {}x{}",
            x_known.width(),
            x_known.channels(),
            x_outlier.width(),
            x_outlier.channels()
        )));
    }
    let mut data = Vec::with_capacity(x_known.data().len() + x_outlier.data().len());
    data.extend_from_slice(x_known.data());
    data.extend_from_slice(x_outlier.data());
    Image::from_vec(x_known.height() + x_outlier.height(), x_known.width(), x_known.channels(), data)
}
