//! Background mixing and the baseline cut/mix augmentations.
//!
//! Background mixing pastes a square window of a background image (BI), whose
//! estimated foreground has been greyed out, onto a target image (TI) at the
//! same coordinates. The mixed sample keeps the TI's hard label.

use crate::error::{OsrError, Result};
use crate::image::{Image, Mask};
use crate::synthdata::round_half_up;
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pairing {
    /// Any other image of the batch.
    Random,
    /// Only images whose label differs from the TI's.
    DifferentClass,
}

impl std::str::FromStr for Pairing {
    type Err = OsrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Pairing::Random),
            "different" | "different_class" => Ok(Pairing::DifferentClass),
            _ => Err(OsrError::Config(format!("unknown pairing {s:?}"))),
        }
    }
}

impl std::fmt::Display for Pairing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pairing::Random => "random",
            Pairing::DifferentClass => "different",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixConfig {
    /// Area of the cut window relative to the image, `s`.
    pub cut_area_ratio: f64,
    /// Fraction of BI pixels masked as foreground, `k`.
    pub mask_ratio: f64,
    pub pairing: Pairing,
    pub allow_self_pair: bool,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig { cut_area_ratio: 0.25, mask_ratio: 0.25, pairing: Pairing::Random, allow_self_pair: false, seed: 0 }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.cut_area_ratio) {
            return Err(OsrError::Parameter(format!("cut area ratio s must lie in [0, 1), got {}", self.cut_area_ratio)));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(OsrError::Parameter(format!("mask ratio k must lie in [0, 1], got {}", self.mask_ratio)));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle inside an `height x width` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CutRegion {
    pub height: usize,
    pub width: usize,
    pub top: usize,
    pub left: usize,
    pub rows: usize,
    pub cols: usize,
}

impl CutRegion {
    pub fn empty(height: usize, width: usize) -> Self {
        CutRegion { height, width, top: 0, left: 0, rows: 0, cols: 0 }
    }

    pub fn new(height: usize, width: usize, top: usize, left: usize, rows: usize, cols: usize) -> Result<Self> {
        if top + rows > height || left + cols > width {
            return Err(OsrError::Geometry(format!(
                "region {rows}x{cols} at ({top},{left}) exceeds {height}x{width}"
            )));
        }
        Ok(CutRegion { height, width, top, left, rows, cols })
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.top + self.rows && col >= self.left && col < self.left + self.cols
    }

    pub fn area(&self) -> usize {
        self.rows * self.cols
    }

    pub fn area_ratio(&self) -> f64 {
        self.area() as f64 / (self.height * self.width) as f64
    }

    pub fn mask(&self) -> Mask {
        let mut m = Mask::zeros(self.height, self.width);
        for r in self.top..self.top + self.rows {
            for c in self.left..self.left + self.cols {
                m.set(r, c, true);
            }
        }
        m
    }
}

/// Square window of side `round(sqrt(s) * min(H, W))` at a uniform position.
pub fn sample_cut_region(height: usize, width: usize, s: f64, rng: &mut impl Rng) -> Result<CutRegion> {
    if !(0.0..1.0).contains(&s) {
        return Err(OsrError::Parameter(format!("cut area ratio s must lie in [0, 1), got {s}")));
    }
    let side = round_half_up(s.sqrt() * height.min(width) as f64).min(height.min(width));
    if side == 0 {
        return Ok(CutRegion::empty(height, width));
    }
    let top = rng.random_range(0..=height - side);
    let left = rng.random_range(0..=width - side);
    CutRegion::new(height, width, top, left, side, side)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub pixels: Image,
    /// Always the TI label.
    pub label: usize,
    pub target_index: usize,
    pub background_index: usize,
    pub region: CutRegion,
}

/// `x~ = M * (1 - C_B) * x_B + (1 - M) * x_T`.
///
/// `fg_mask` is the BI foreground `C_B`, `cut_mask` the paste window `M`.
pub fn mix_pixels(target: &Image, background: &Image, fg_mask: &Mask, cut_mask: &Mask) -> Result<Image> {
    target.require_same_shape(background, "backmix TI/BI")?;
    fg_mask.require_dims(target.height(), target.width(), "backmix C_B")?;
    cut_mask.require_dims(target.height(), target.width(), "backmix M")?;
    let mut out = target.clone();
    for p in 0..cut_mask.len() {
        if !cut_mask.is_set(p) {
            continue;
        }
        let dst = out.pixel_mut(p);
        if fg_mask.is_set(p) {
            dst.fill(0.0);
        } else {
            dst.copy_from_slice(background.pixel(p));
        }
    }
    Ok(out)
}

/// Mix a TI/BI pair inside `region`; the sample keeps the TI label.
pub fn backmix(
    target: &Image,
    target_label: usize,
    target_index: usize,
    background: &Image,
    background_index: usize,
    fg_mask: &Mask,
    region: CutRegion,
) -> Result<MixedSample> {
    let pixels = mix_pixels(target, background, fg_mask, &region.mask())?;
    Ok(MixedSample { pixels, label: target_label, target_index, background_index, region })
}

/// Each index serves once as TI; returns `(TI, BI)` pairs in TI order.
pub fn pair_batch(
    batch_size: usize,
    pairing: Pairing,
    labels: &[usize],
    allow_self_pair: bool,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    if labels.len() != batch_size {
        return Err(OsrError::Shape(format!("{} labels for batch of {batch_size}", labels.len())));
    }
    if batch_size == 0 {
        return Ok(Vec::new());
    }
    if !allow_self_pair && batch_size < 2 {
        return Err(OsrError::Pairing("a batch of one cannot be paired without self-pairs".into()));
    }
    match pairing {
        Pairing::Random => {
            let mut perm: Vec<usize> = (0..batch_size).collect();
            loop {
                perm.shuffle(rng);
                if allow_self_pair || perm.iter().enumerate().all(|(i, &j)| i != j) {
                    break;
                }
            }
            Ok(perm.into_iter().enumerate().collect())
        }
        Pairing::DifferentClass => {
            if labels.iter().all(|&l| l == labels[0]) {
                return Err(OsrError::Pairing("all labels equal; no different-class partner exists".into()));
            }
            let mut perm: Vec<usize> = (0..batch_size).collect();
            for _ in 0..8 {
                perm.shuffle(rng);
                if perm.iter().enumerate().all(|(i, &j)| labels[i] != labels[j]) {
                    return Ok(perm.into_iter().enumerate().collect());
                }
            }
            // Repair: draw each partner independently among different-label indices.
            Ok((0..batch_size)
                .map(|i| {
                    let candidates: Vec<usize> = (0..batch_size).filter(|&j| labels[j] != labels[i]).collect();
                    (i, candidates[rng.random_range(0..candidates.len())])
                })
                .collect())
        }
    }
}

/// A two-class soft label with weights `(weight_a, 1 - weight_a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftLabel {
    pub class_a: usize,
    pub class_b: usize,
    pub weight_a: f64,
}

impl SoftLabel {
    pub fn weight_b(&self) -> f64 {
        1.0 - self.weight_a
    }

    /// Dense target distribution over `num_classes`.
    pub fn to_target(&self, num_classes: usize) -> Vec<f64> {
        let mut t = vec![0.0; num_classes];
        t[self.class_a] += self.weight_a;
        t[self.class_b] += self.weight_b();
        t
    }
}

pub fn cutout(x: &Image, region: &CutRegion) -> Result<Image> {
    if region.height != x.height() || region.width != x.width() {
        return Err(OsrError::Shape("cutout region does not match image".into()));
    }
    let mut out = x.clone();
    for r in region.top..region.top + region.rows {
        for c in region.left..region.left + region.cols {
            out.pixel_mut(r * x.width() + c).fill(0.0);
        }
    }
    Ok(out)
}

pub fn mixup(xa: &Image, ya: usize, xb: &Image, yb: usize, lambda: f64) -> Result<(Image, SoftLabel)> {
    xa.require_same_shape(xb, "mixup")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(OsrError::Parameter(format!("mixup lambda must lie in [0, 1], got {lambda}")));
    }
    let data = xa.data().iter().zip(xb.data()).map(|(&a, &b)| lambda * a + (1.0 - lambda) * b).collect();
    let img = Image::from_vec(xa.height(), xa.width(), xa.channels(), data)?;
    Ok((img, SoftLabel { class_a: ya, class_b: yb, weight_a: lambda }))
}

pub fn cutmix(xa: &Image, ya: usize, xb: &Image, yb: usize, region: &CutRegion) -> Result<(Image, SoftLabel)> {
    xa.require_same_shape(xb, "cutmix")?;
    if region.height != xa.height() || region.width != xa.width() {
        return Err(OsrError::Shape("cutmix region does not match image".into()));
    }
    let mut out = xa.clone();
    for r in region.top..region.top + region.rows {
        for c in region.left..region.left + region.cols {
            let p = r * xa.width() + c;
            out.pixel_mut(p).copy_from_slice(xb.pixel(p));
        }
    }
    let area = region.area_ratio();
    Ok((out, SoftLabel { class_a: ya, class_b: yb, weight_a: 1.0 - area }))
}

/// Standard Cutmix box: area `1 - lambda`, uniform center, clipped to the image.
pub fn sample_cutmix_region(height: usize, width: usize, lambda: f64, rng: &mut impl Rng) -> CutRegion {
    let ratio = (1.0 - lambda).max(0.0).sqrt();
    let rows = (height as f64 * ratio) as usize;
    let cols = (width as f64 * ratio) as usize;
    let cy = rng.random_range(0..height) as isize;
    let cx = rng.random_range(0..width) as isize;
    let clip = |c: isize, half: isize, max: usize| (c - half).clamp(0, max as isize) as usize;
    let top = clip(cy, rows as isize / 2, height);
    let bottom = (cy + rows as isize / 2).clamp(0, height as isize) as usize;
    let left = clip(cx, cols as isize / 2, width);
    let right = (cx + cols as isize / 2).clamp(0, width as isize) as usize;
    CutRegion { height, width, top, left, rows: bottom - top, cols: right - left }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn ramp(h: usize, w: usize, c: usize, offset: f64) -> Image {
        Image::from_vec(h, w, c, (0..h * w * c).map(|i| i as f64 * 0.01 + offset).collect()).unwrap()
    }

    #[test]
    fn cut_region_examples() {
        let mut rng = derive_rng(1, &[]);
        let empty = sample_cut_region(32, 32, 0.0, &mut rng).unwrap();
        assert_eq!(empty.mask().count_ones(), 0);
        let r = sample_cut_region(32, 32, 0.25, &mut rng).unwrap();
        assert_eq!((r.rows, r.cols), (16, 16));
        assert_eq!(r.mask().count_ones(), 256);
        assert!(sample_cut_region(32, 32, 1.0, &mut rng).is_err());
    }

    #[test]
    fn cut_region_positions_cover_valid_range_only() {
        let mut rng = derive_rng(2, &[]);
        let mut seen_max = (0, 0);
        for _ in 0..5000 {
            let r = sample_cut_region(32, 32, 0.25, &mut rng).unwrap();
            assert!(r.top <= 16 && r.left <= 16);
            seen_max = (seen_max.0.max(r.top), seen_max.1.max(r.left));
        }
        assert_eq!(seen_max, (16, 16));
    }

    #[test]
    fn backmix_examples() {
        let t = ramp(4, 4, 3, 0.0);
        let b = ramp(4, 4, 3, 1.0);
        let fg = Mask::from_vec(4, 4, (0..16).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        assert_eq!(mix_pixels(&t, &b, &fg, &Mask::zeros(4, 4)).unwrap(), t);

        let region = CutRegion::new(4, 4, 1, 1, 2, 2).unwrap();
        let all_fg = mix_pixels(&t, &b, &Mask::ones(4, 4), &region.mask()).unwrap();
        assert_eq!(all_fg, cutout(&t, &region).unwrap());

        let one_t = Image::filled(1, 1, 1, 0.3);
        let one_b = Image::filled(1, 1, 1, 0.8);
        let out = mix_pixels(&one_t, &one_b, &Mask::zeros(1, 1), &Mask::ones(1, 1)).unwrap();
        assert_eq!(out.data(), &[0.8]);
    }

    #[test]
    fn backmix_shape_errors() {
        let t = ramp(4, 4, 3, 0.0);
        let b = ramp(4, 5, 3, 0.0);
        assert!(matches!(mix_pixels(&t, &b, &Mask::zeros(4, 4), &Mask::zeros(4, 4)), Err(OsrError::Shape(_))));
        assert!(matches!(mix_pixels(&t, &t, &Mask::zeros(3, 4), &Mask::zeros(4, 4)), Err(OsrError::Shape(_))));
    }

    #[test]
    fn pairing_examples() {
        let mut rng = derive_rng(3, &[]);
        assert_eq!(pair_batch(2, Pairing::Random, &[0, 0], false, &mut rng).unwrap(), vec![(0, 1), (1, 0)]);
        let pairs = pair_batch(4, Pairing::Random, &[0, 1, 2, 3], false, &mut rng).unwrap();
        let mut tis: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        tis.sort();
        assert_eq!(tis, vec![0, 1, 2, 3]);
        assert!(matches!(pair_batch(3, Pairing::DifferentClass, &[1, 1, 1], false, &mut rng), Err(OsrError::Pairing(_))));
        assert!(pair_batch(1, Pairing::Random, &[0], false, &mut rng).is_err());
        assert_eq!(pair_batch(1, Pairing::Random, &[0], true, &mut rng).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn different_class_pairing_with_skewed_labels() {
        let labels = [0, 0, 0, 0, 0, 0, 1];
        let mut rng = derive_rng(4, &[]);
        for _ in 0..50 {
            let pairs = pair_batch(labels.len(), Pairing::DifferentClass, &labels, false, &mut rng).unwrap();
            assert_eq!(pairs.len(), labels.len());
            assert!(pairs.iter().all(|&(t, b)| labels[t] != labels[b]));
        }
    }

    #[test]
    fn baseline_examples() {
        let zero = Image::filled(2, 2, 1, 0.0);
        let one = Image::filled(2, 2, 1, 1.0);
        let (m, l) = mixup(&zero, 0, &one, 1, 0.5).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.5));
        assert_eq!((l.weight_a, l.weight_b()), (0.5, 0.5));
        let (same, l1) = mixup(&zero, 3, &one, 1, 1.0).unwrap();
        assert_eq!(same, zero);
        assert_eq!(l1.weight_a, 1.0);
        let region = CutRegion::new(2, 2, 0, 0, 1, 1).unwrap();
        let (cm, lc) = cutmix(&zero, 0, &one, 1, &region).unwrap();
        assert_eq!(cm.data(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!((lc.weight_a, lc.weight_b()), (0.75, 0.25));
        assert!(mixup(&zero, 0, &ramp(2, 3, 1, 0.0), 1, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn backmix_locality_and_reductions(seed in 0u64..1000, s in 0.0f64..0.9) {
            let mut rng = derive_rng(seed, &[]);
            let t = Image::from_vec(8, 8, 3, (0..192).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let b = Image::from_vec(8, 8, 3, (0..192).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let fg = Mask::from_vec(8, 8, (0..64).map(|_| rng.random_range(0..2u8)).collect()).unwrap();
            let region = sample_cut_region(8, 8, s, &mut rng).unwrap();
            let mixed = mix_pixels(&t, &b, &fg, &region.mask()).unwrap();
            for p in 0..64 {
                let (r, c) = (p / 8, p % 8);
                if !region.contains(r, c) {
                    prop_assert_eq!(mixed.pixel(p), t.pixel(p));
                } else if fg.is_set(p) {
                    prop_assert!(mixed.pixel(p).iter().all(|&v| v == 0.0));
                } else {
                    prop_assert_eq!(mixed.pixel(p), b.pixel(p));
                }
            }
            let k1 = mix_pixels(&t, &b, &Mask::ones(8, 8), &region.mask()).unwrap();
            prop_assert_eq!(k1, cutout(&t, &region).unwrap());
        }

        #[test]
        fn random_pairing_is_a_derangement(seed in 0u64..1000, n in 2usize..40) {
            let mut rng = derive_rng(seed, &[]);
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let pairs = pair_batch(n, Pairing::Random, &labels, false, &mut rng).unwrap();
            let mut bis: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            prop_assert!(pairs.iter().enumerate().all(|(i, &(t, b))| t == i && b != i));
            bis.sort();
            prop_assert_eq!(bis, (0..n).collect::<Vec<_>>());
        }
    }
}
