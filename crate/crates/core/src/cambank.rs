//! Per-sample soft foreground estimates kept as an EMA of class activation maps.
//!
//! Maps are stored at CAM resolution and brought to image resolution on
//! demand: `topk_binarize(upsample_soft(map, H, W), k)` is the canonical path
//! from bank entry to a binary foreground mask.

use crate::binio::{self, Decoder, Encoder};
use crate::error::{OsrError, Result};
use crate::image::Mask;
use crate::rng::{derive_rng, tag};
use crate::synthdata::round_half_up;
use rand::Rng;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct CamBank {
    n: usize,
    h: usize,
    w: usize,
    beta: f64,
    step: u64,
    seed: u64,
    maps: Vec<f64>,
}

/// Fill a fresh bank with i.i.d. Uniform(0, 1) entries.
pub fn init_bank(n: usize, h: usize, w: usize, beta: f64, seed: u64) -> Result<CamBank> {
    if n == 0 || h == 0 || w == 0 {
        return Err(OsrError::Parameter(format!("bank dimensions must be positive, got {n}x{h}x{w}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(OsrError::Parameter(format!("beta must lie in (0, 1], got {beta}")));
    }
    let mut rng = derive_rng(seed, &[tag::BANK]);
    let maps = (0..n * h * w).map(|_| rng.random::<f64>()).collect();
    Ok(CamBank { n, h, w, beta, step: 0, seed, maps })
}

impl CamBank {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn map_dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn map(&self, idx: usize) -> Result<&[f64]> {
        self.check_index(idx)?;
        let len = self.h * self.w;
        Ok(&self.maps[idx * len..(idx + 1) * len])
    }

    pub fn maps(&self) -> &[f64] {
        &self.maps
    }

    fn check_index(&self, idx: usize) -> Result<()> {
        if idx >= self.n {
            return Err(OsrError::Consistency(format!("sample index {idx} outside bank of {}", self.n)));
        }
        Ok(())
    }

    /// `maps[idx] <- beta * cam_hat + (1 - beta) * maps[idx]`.
    pub fn ema_update(&mut self, idx: usize, cam_hat: &[f64]) -> Result<()> {
        self.check_index(idx)?;
        let len = self.h * self.w;
        if cam_hat.len() != len {
            return Err(OsrError::Shape(format!("cam_hat has {} entries, bank maps have {len}", cam_hat.len())));
        }
        if let Some(bad) = cam_hat.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(OsrError::Validation(format!("cam_hat entry {bad} outside [0, 1]")));
        }
        let beta = self.beta;
        for (m, &c) in self.maps[idx * len..(idx + 1) * len].iter_mut().zip(cam_hat) {
            *m = beta * c + (1.0 - beta) * *m;
        }
        self.step += 1;
        Ok(())
    }

    /// Binary foreground mask for sample `idx` at image resolution.
    pub fn foreground_mask(&self, idx: usize, height: usize, width: usize, k: f64) -> Result<Mask> {
        let up = upsample_soft(self.map(idx)?, self.h, self.w, height, width)?;
        topk_binarize(&up, height, width, k)
    }
}

/// Channel softmax at every location of an `h x w x K` logit map, returning channel `y`.
pub fn extract_cam(cam_logits: &[f64], h: usize, w: usize, num_classes: usize, y: usize) -> Result<Vec<f64>> {
    if num_classes < 2 {
        return Err(OsrError::Parameter(format!("need at least 2 classes, got {num_classes}")));
    }
    if y >= num_classes {
        return Err(OsrError::Index(format!("class {y} out of range for {num_classes} classes")));
    }
    if cam_logits.len() != h * w * num_classes {
        return Err(OsrError::Shape(format!(
            "cam logits have {} entries, expected {h}x{w}x{num_classes}",
            cam_logits.len()
        )));
    }
    Ok(cam_logits
        .chunks_exact(num_classes)
        .map(|z| {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = z.iter().map(|&v| (v - max).exp()).sum();
            (z[y] - max).exp() / denom
        })
        .collect())
}

/// Set exactly `round(k * H * W)` of the largest entries to one; ties go to the lower row-major index.
pub fn topk_binarize(soft_map: &[f64], height: usize, width: usize, k: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&k) {
        return Err(OsrError::Parameter(format!("mask ratio k must lie in [0, 1], got {k}")));
    }
    if soft_map.len() != height * width {
        return Err(OsrError::Shape(format!("soft map has {} entries, expected {height}x{width}", soft_map.len())));
    }
    if soft_map.iter().any(|v| !v.is_finite()) {
        return Err(OsrError::Validation("soft map has non-finite entries".into()));
    }
    let count = round_half_up(k * (height * width) as f64).min(height * width);
    let mut order: Vec<usize> = (0..soft_map.len()).collect();
    // Stable sort keeps lower indices first among equal values.
    order.sort_by(|&a, &b| soft_map[b].total_cmp(&soft_map[a]));
    let mut bits = vec![0u8; soft_map.len()];
    for &i in &order[..count] {
        bits[i] = 1;
    }
    Mask::from_vec(height, width, bits)
}

/// Bilinear upsampling with half-pixel centers and edge clamping.
pub fn upsample_soft(soft_map: &[f64], h: usize, w: usize, height: usize, width: usize) -> Result<Vec<f64>> {
    if soft_map.len() != h * w || h == 0 || w == 0 {
        return Err(OsrError::Shape(format!("soft map has {} entries, expected {h}x{w}", soft_map.len())));
    }
    if height < h || width < w {
        return Err(OsrError::Parameter(format!("cannot downsample {h}x{w} to {height}x{width}")));
    }
    let src = |dst: usize, out_len: usize, in_len: usize| -> (usize, usize, f64) {
        let x = ((dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(in_len - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = Vec::with_capacity(height * width);
    for row in 0..height {
        let (r0, r1, fr) = src(row, height, h);
        for col in 0..width {
            let (c0, c1, fc) = src(col, width, w);
            let top = soft_map[r0 * w + c0] * (1.0 - fc) + soft_map[r0 * w + c1] * fc;
            let bottom = soft_map[r1 * w + c0] * (1.0 - fc) + soft_map[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Ok(out)
}

const BANK_MAGIC: &[u8; 4] = b"OSRB";

pub fn encode_bank(bank: &CamBank) -> Vec<u8> {
    let mut enc = Encoder::new(BANK_MAGIC);
    enc.u64(bank.n as u64)
        .u64(bank.h as u64)
        .u64(bank.w as u64)
        .f64(bank.beta)
        .u64(bank.step)
        .u64(bank.seed)
        .f64s(&bank.maps);
    enc.finish()
}

pub fn decode_bank(bytes: &[u8]) -> Result<CamBank> {
    let mut dec = Decoder::open(bytes, BANK_MAGIC, "cam bank")?;
    let (n, h, w) = (dec.usize_u64()?, dec.usize_u64()?, dec.usize_u64()?);
    let beta = dec.f64()?;
    let step = dec.u64()?;
    let seed = dec.u64()?;
    if n == 0 || h == 0 || w == 0 || !(beta > 0.0 && beta <= 1.0) {
        return Err(OsrError::Data("cam bank: invalid header".into()));
    }
    let len = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| OsrError::Data("cam bank: size overflow".into()))?;
    let maps = dec.f64s(len)?;
    dec.finish()?;
    if maps.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(OsrError::Data("cam bank: entries outside [0, 1]".into()));
    }
    Ok(CamBank { n, h, w, beta, step, seed, maps })
}

pub fn save_bank(path: &Path, bank: &CamBank) -> Result<()> {
    binio::write_file(path, &encode_bank(bank))
}

pub fn load_bank(path: &Path) -> Result<CamBank> {
    decode_bank(&binio::read_file(path)?)
}
