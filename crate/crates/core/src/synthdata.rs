//! Synthetic fore-/background image datasets with exact foreground masks.
//!
//! Each foreground class is a parametric glyph; each background class is a
//! tinted stripe texture. A foreground class `c` sits on its designated
//! background `table[c]` in exactly `round(r * n)` of its `n` images and on a
//! uniformly drawn other background otherwise.

use crate::binio::{self, Decoder, Encoder};
use crate::error::{OsrError, Result};
use crate::image::{Image, Mask};
use crate::kvformat::{join_list, KvMap};
use crate::rng::{derive_rng, tag};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

pub const CHANNELS: usize = 3;
pub const MAX_FG_CLASSES: usize = 18;
pub const MAX_BG_CLASSES: usize = 8;
/// Smallest side that still fits a legible glyph.
pub const MIN_SIDE: usize = 8;

const CLASS_TAG: u64 = 0x636c_6173;

/// Half-up rounding used for every `round(x)` in the toolkit.
#[inline]
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpec {
    pub num_fg_classes: usize,
    pub num_bg_classes: usize,
    pub correlation_r: f64,
    pub images_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Designated background per foreground class; `c % num_bg_classes` when absent.
    pub designated_bg: Option<Vec<usize>>,
}

impl CorrelationSpec {
    pub fn new(num_fg_classes: usize, num_bg_classes: usize, correlation_r: f64, images_per_class: usize) -> Self {
        CorrelationSpec {
            num_fg_classes,
            num_bg_classes,
            correlation_r,
            images_per_class,
            height: 16,
            width: 16,
            seed: 0,
            designated_bg: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_fg_classes == 0 || self.num_fg_classes > MAX_FG_CLASSES {
            return Err(OsrError::Parameter(format!(
                "num_fg_classes must be in 1..={MAX_FG_CLASSES}, got {}",
                self.num_fg_classes
            )));
        }
        if self.num_bg_classes == 0 || self.num_bg_classes > MAX_BG_CLASSES {
            return Err(OsrError::Parameter(format!(
                "num_bg_classes must be in 1..={MAX_BG_CLASSES}, got {}",
                self.num_bg_classes
            )));
        }
        let lo = 1.0 / self.num_bg_classes as f64;
        let r = self.correlation_r;
        if !(r.is_finite() && r >= lo - 1e-12 && r <= 1.0) {
            return Err(OsrError::Parameter(format!("correlation_r must lie in [{lo}, 1], got {r}")));
        }
        if self.images_per_class == 0 {
            return Err(OsrError::Parameter("images_per_class must be >= 1".into()));
        }
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(OsrError::Geometry(format!(
                "image {}x{} too small to place a foreground (min side {MIN_SIDE})",
                self.height, self.width
            )));
        }
        if let Some(table) = &self.designated_bg {
            if table.len() != self.num_fg_classes || table.iter().any(|&b| b >= self.num_bg_classes) {
                return Err(OsrError::Parameter("designated_bg must map every fg class to a valid bg class".into()));
            }
        }
        Ok(())
    }

    pub fn bg_table(&self) -> Vec<usize> {
        match &self.designated_bg {
            Some(t) => t.clone(),
            None => (0..self.num_fg_classes).map(|c| c % self.num_bg_classes).collect(),
        }
    }

    /// Number of images per class placed on the designated background.
    pub fn correlated_count(&self) -> usize {
        round_half_up(self.correlation_r * self.images_per_class as f64).min(self.images_per_class)
    }

    pub fn to_kv(&self, prefix: &str) -> KvMap {
        let mut kv = KvMap::new();
        kv.set(format!("{prefix}num_fg_classes"), self.num_fg_classes);
        kv.set(format!("{prefix}num_bg_classes"), self.num_bg_classes);
        kv.set(format!("{prefix}correlation_r"), format!("{:?}", self.correlation_r));
        kv.set(format!("{prefix}images_per_class"), self.images_per_class);
        kv.set(format!("{prefix}height"), self.height);
        kv.set(format!("{prefix}width"), self.width);
        kv.set(format!("{prefix}seed"), self.seed);
        kv.set(format!("{prefix}bg_table"), join_list(&self.bg_table()));
        kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariantKind {
    Raw,
    FgOnly,
    FgPlusRawStar,
    FgPlusBgStar,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] =
        [VariantKind::Raw, VariantKind::FgOnly, VariantKind::FgPlusRawStar, VariantKind::FgPlusBgStar];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Raw => "raw",
            VariantKind::FgOnly => "fg_only",
            VariantKind::FgPlusRawStar => "fg_raw_star",
            VariantKind::FgPlusBgStar => "fg_bg_star",
        }
    }

    pub fn needs_donor(self) -> bool {
        matches!(self, VariantKind::FgPlusRawStar | VariantKind::FgPlusBgStar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Image,
    pub label: usize,
    pub is_known: bool,
    pub fg_mask: Option<Mask>,
    /// Background class the image was composited on, if synthetic.
    pub background: Option<usize>,
}

impl LabeledImage {
    pub fn validate(&self) -> Result<()> {
        if !self.pixels.is_finite() {
            return Err(OsrError::Validation("image has non-finite pixels".into()));
        }
        if let Some(mask) = &self.fg_mask {
            mask.require_dims(self.pixels.height(), self.pixels.width(), "fg_mask")?;
            let ones = mask.count_ones();
            if ones == 0 || ones == mask.len() {
                return Err(OsrError::Validation(format!(
                    "fg_mask must be a proper partition, has {ones} of {} pixels",
                    mask.len()
                )));
            }
        }
        Ok(())
    }
}

/// Per-channel normalization statistics of raw `[0, 1]` pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mean: [0.0; CHANNELS], std: [1.0; CHANNELS] }
    }

    /// Per-channel mean and standard deviation over all pixels of `images`.
    pub fn fit(images: &[Image]) -> Self {
        let mut sum = [0.0; CHANNELS];
        let mut sq = [0.0; CHANNELS];
        let mut n = 0usize;
        for img in images {
            for p in 0..img.pixels() {
                for (c, &v) in img.pixel(p).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        let mut stats = NormStats::identity();
        for c in 0..CHANNELS {
            let m = sum[c] / n as f64;
            stats.mean[c] = m;
            stats.std[c] = (sq[c] / n as f64 - m * m).max(1e-12).sqrt();
        }
        stats
    }

    pub fn apply(&self, img: &mut Image) {
        for p in 0..img.pixels() {
            for (c, v) in img.pixel_mut(p).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    pub num_classes: usize,
    pub stats: NormStats,
    pub bg_table: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

const PALETTE: [[f64; 3]; MAX_BG_CLASSES] = [
    [0.55, 0.20, 0.15],
    [0.15, 0.45, 0.20],
    [0.15, 0.25, 0.55],
    [0.50, 0.45, 0.10],
    [0.40, 0.15, 0.45],
    [0.10, 0.45, 0.45],
    [0.35, 0.35, 0.35],
    [0.55, 0.30, 0.05],
];

/// Glyph membership in local coordinates `(u, v)` in `[-1, 1]^2`.
fn glyph_contains(class: usize, u: f64, v: f64) -> bool {
    let (au, av) = (u.abs(), v.abs());
    let chebyshev = au.max(av);
    let radius = (u * u + v * v).sqrt();
    match class {
        0 => radius <= 0.85,
        1 => chebyshev <= 0.75,
        2 => (au <= 0.3 && av <= 0.95) || (av <= 0.3 && au <= 0.95),
        3 => (au - av).abs() <= 0.32 && chebyshev <= 0.95,
        4 => (0.5..=0.95).contains(&radius),
        5 => (-0.85..=0.85).contains(&v) && au <= (v + 0.85) / 1.7 * 0.95,
        6 => (0.5..=0.92).contains(&chebyshev),
        7 => au + av <= 0.95,
        8 => (0.3..=0.85).contains(&av) && au <= 0.9,
        9 => (0.3..=0.85).contains(&au) && av <= 0.9,
        10 => ((-0.95..=-0.45).contains(&v) && au <= 0.9) || (au <= 0.25 && av <= 0.95),
        11 => ((-0.9..=-0.4).contains(&u) && av <= 0.95) || ((0.45..=0.95).contains(&v) && u >= -0.9 && u <= 0.9),
        12 => (0.45..=0.95).contains(&(au + av)),
        13 => radius <= 0.5,
        14 => u * v >= 0.0 && chebyshev <= 0.85,
        15 => radius <= 0.9 && (u - 0.35).powi(2) + v * v > 0.5,
        16 => au <= av && av <= 0.9,
        17 => av <= au && au <= 0.9,
        _ => unreachable!("glyph class checked by spec validation"),
    }
}

/// Raw `[0, 1]` pixels of background class `bg`.
fn paint_background(bg: usize, height: usize, width: usize, rng: &mut impl Rng) -> Image {
    let tint = PALETTE[bg];
    let angle = (bg as f64 * 0.61 * std::f64::consts::PI) % std::f64::consts::PI;
    let period = 3.0 + (bg % 3) as f64 * 1.5;
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let noise = Normal::new(0.0, 0.04).expect("valid sigma");
    let (s, c) = angle.sin_cos();
    let mut img = Image::zeros(height, width, CHANNELS);
    for row in 0..height {
        for col in 0..width {
            let t = (col as f64 * c + row as f64 * s) / period * std::f64::consts::TAU + phase;
            let shade = 0.75 + 0.25 * t.sin();
            for ch in 0..CHANNELS {
                let v = tint[ch] * shade + noise.sample(rng);
                img.set(row, col, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

const TEXTURE_DEPTH: f64 = 0.3;

/// Draw glyph `class` onto `img`, returning its exact mask.
fn paint_glyph(class: usize, img: &mut Image, rng: &mut impl Rng) -> Mask {
    let (h, w) = (img.height(), img.width());
    let side = h.min(w) as f64;
    let radius = side * 0.45 * rng.random_range(0.9..1.1);
    let cy = rng.random_range(radius..=(h as f64 - radius).max(radius));
    let cx = rng.random_range(radius..=(w as f64 - radius).max(radius));
    let level: f64 = rng.random_range(0.5..0.75);
    let color: [f64; CHANNELS] = std::array::from_fn(|_| (level + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0));
    let noise = Normal::new(0.0, 0.03).expect("valid sigma");
    // Class-specific fine texture so local patches of the object are informative.
    let angle = (class as f64 * 0.37 * std::f64::consts::PI) % std::f64::consts::PI;
    let period = 2.0 + (class % 4) as f64 * 0.6;
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let (s, c) = angle.sin_cos();
    let mut mask = Mask::zeros(h, w);
    for row in 0..h {
        for col in 0..w {
            let u = (col as f64 + 0.5 - cx) / radius;
            let v = (row as f64 + 0.5 - cy) / radius;
            if glyph_contains(class, u, v) {
                mask.set(row, col, true);
                let t = (col as f64 * c + row as f64 * s) / period * std::f64::consts::TAU + phase;
                let shade = 1.0 + TEXTURE_DEPTH * t.sin();
                for (ch, &base) in color.iter().enumerate() {
                    img.set(row, col, ch, (base * shade + noise.sample(rng)).clamp(0.0, 1.0));
                }
            }
        }
    }
    mask
}

/// Generate and normalize with the dataset's own statistics.
pub fn generate_dataset(spec: &CorrelationSpec) -> Result<Dataset> {
    generate_dataset_with_stats(spec, None)
}

/// Generate; normalize with `stats` when given (e.g. training statistics for a test split).
pub fn generate_dataset_with_stats(spec: &CorrelationSpec, stats: Option<&NormStats>) -> Result<Dataset> {
    spec.validate()?;
    let table = spec.bg_table();
    let n = spec.images_per_class;
    let correlated = spec.correlated_count();
    let mut raw = Vec::with_capacity(spec.num_fg_classes * n);
    let mut meta = Vec::with_capacity(raw.capacity());
    for class in 0..spec.num_fg_classes {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derive_rng(spec.seed, &[tag::DATA, CLASS_TAG, class as u64]));
        let mut on_designated = vec![false; n];
        for &i in &order[..correlated] {
            on_designated[i] = true;
        }
        let others: Vec<usize> = (0..spec.num_bg_classes).filter(|&b| b != table[class]).collect();
        for (i, &designated) in on_designated.iter().enumerate() {
            let index = (class * n + i) as u64;
            let mut rng = derive_rng(spec.seed, &[tag::DATA, index]);
            let bg = if designated || others.is_empty() { table[class] } else { others[rng.random_range(0..others.len())] };
            let mut img = paint_background(bg, spec.height, spec.width, &mut rng);
            let mask = paint_glyph(class, &mut img, &mut rng);
            let ones = mask.count_ones();
            if ones == 0 || ones == mask.len() {
                return Err(OsrError::Geometry(format!("glyph {class} degenerate at {}x{}", spec.height, spec.width)));
            }
            raw.push(img);
            meta.push((class, mask, bg));
        }
    }
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(&raw),
    };
    let images = raw
        .into_iter()
        .zip(meta)
        .map(|(mut pixels, (label, mask, bg))| {
            stats.apply(&mut pixels);
            LabeledImage { pixels, label, is_known: true, fg_mask: Some(mask), background: Some(bg) }
        })
        .collect();
    Ok(Dataset { images, num_classes: spec.num_fg_classes, stats, bg_table: table })
}

/// Build one of the four foreground/background variants of `img`.
pub fn make_variant(img: &LabeledImage, kind: VariantKind, donor: Option<&LabeledImage>) -> Result<LabeledImage> {
    if kind == VariantKind::Raw {
        return Ok(img.clone());
    }
    let mask = img
        .fg_mask
        .as_ref()
        .ok_or_else(|| OsrError::Argument(format!("{} variant needs a foreground mask", kind.name())))?;
    let donor = match (kind.needs_donor(), donor) {
        (true, None) => return Err(OsrError::Argument(format!("{} variant needs a donor image", kind.name()))),
        (true, Some(d)) => {
            d.pixels.require_same_shape(&img.pixels, "variant donor")?;
            Some(d)
        }
        (false, _) => None,
    };
    let donor_mask = match (kind, donor) {
        (VariantKind::FgPlusBgStar, Some(d)) => Some(
            d.fg_mask
                .as_ref()
                .ok_or_else(|| OsrError::Argument("fg_bg_star donor needs a foreground mask".into()))?,
        ),
        _ => None,
    };
    let mut out = img.clone();
    out.background = None;
    for p in 0..mask.len() {
        if mask.is_set(p) {
            continue;
        }
        let dst = out.pixels.pixel_mut(p);
        match (kind, donor) {
            (VariantKind::FgOnly, _) => dst.fill(0.0),
            (VariantKind::FgPlusRawStar, Some(d)) => dst.copy_from_slice(d.pixels.pixel(p)),
            (VariantKind::FgPlusBgStar, Some(d)) => {
                if donor_mask.is_some_and(|m| m.is_set(p)) {
                    dst.fill(0.0);
                } else {
                    dst.copy_from_slice(d.pixels.pixel(p));
                }
            }
            _ => unreachable!(),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct OpenSetSplit {
    /// Known images with labels remapped to their position in `known_ids`.
    pub known: Vec<LabeledImage>,
    /// Unknown images, original labels kept.
    pub unknown: Vec<LabeledImage>,
    pub known_ids: Vec<usize>,
}

pub fn split_known_unknown(dataset: &Dataset, known_ids: &[usize]) -> Result<OpenSetSplit> {
    if known_ids.is_empty() {
        return Err(OsrError::Parameter("known class set is empty".into()));
    }
    let mut sorted = known_ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != known_ids.len() || sorted.iter().any(|&c| c >= dataset.num_classes) {
        return Err(OsrError::Parameter(format!("known ids {known_ids:?} invalid for {} classes", dataset.num_classes)));
    }
    if sorted.len() == dataset.num_classes {
        return Err(OsrError::Parameter("known ids must be a proper subset of all classes".into()));
    }
    let mut split = OpenSetSplit { known: Vec::new(), unknown: Vec::new(), known_ids: known_ids.to_vec() };
    for img in &dataset.images {
        let mut img = img.clone();
        match known_ids.iter().position(|&c| c == img.label) {
            Some(pos) => {
                img.label = pos;
                img.is_known = true;
                split.known.push(img);
            }
            None => {
                img.is_known = false;
                split.unknown.push(img);
            }
        }
    }
    Ok(split)
}

const SPLIT_MAGIC: &[u8; 4] = b"OSRD";
const NO_BACKGROUND: u32 = u32::MAX;

/// Serialize one split of equally sized images.
pub fn encode_split(images: &[LabeledImage]) -> Result<Vec<u8>> {
    let (h, w, c) = images
        .first()
        .map(|i| (i.pixels.height(), i.pixels.width(), i.pixels.channels()))
        .unwrap_or((0, 0, 0));
    let mut enc = Encoder::new(SPLIT_MAGIC);
    enc.u64(images.len() as u64).u32(h as u32).u32(w as u32).u32(c as u32);
    for img in images {
        if img.pixels.height() != h || img.pixels.width() != w || img.pixels.channels() != c {
            return Err(OsrError::Shape("split images must share one shape".into()));
        }
        enc.u32(img.label as u32)
            .u8(img.is_known as u8)
            .u32(img.background.map_or(NO_BACKGROUND, |b| b as u32))
            .u8(img.fg_mask.is_some() as u8)
            .f64s(img.pixels.data());
        if let Some(m) = &img.fg_mask {
            enc.bytes(m.bits());
        }
    }
    Ok(enc.finish())
}

pub fn decode_split(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    let mut dec = Decoder::open(bytes, SPLIT_MAGIC, "dataset split")?;
    let count = dec.usize_u64()?;
    let (h, w, c) = (dec.u32()? as usize, dec.u32()? as usize, dec.u32()? as usize);
    let pixels_per = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(c))
        .ok_or_else(|| OsrError::Data("dataset split: image size overflow".into()))?;
    let mut out = Vec::new();
    for _ in 0..count {
        let label = dec.u32()? as usize;
        let is_known = match dec.u8()? {
            0 => false,
            1 => true,
            b => return Err(OsrError::Data(format!("dataset split: bad known flag {b}"))),
        };
        let background = match dec.u32()? {
            NO_BACKGROUND => None,
            b => Some(b as usize),
        };
        let has_mask = dec.u8()?;
        let pixels = Image::from_vec(h, w, c, dec.f64s(pixels_per)?)?;
        let fg_mask = match has_mask {
            0 => None,
            1 => Some(Mask::from_vec(h, w, dec.bytes(h * w)?.to_vec())?),
            b => return Err(OsrError::Data(format!("dataset split: bad mask flag {b}"))),
        };
        let img = LabeledImage { pixels, label, is_known, fg_mask, background };
        img.validate().map_err(|e| OsrError::Data(format!("dataset split: {e}")))?;
        out.push(img);
    }
    dec.finish()?;
    Ok(out)
}

/// Write `splits` as `<name>.bin` files plus `manifest.txt` into `dir`.
pub fn write_dataset_dir(dir: &Path, manifest: &KvMap, splits: &[(&str, &[LabeledImage])]) -> Result<()> {
    let mut manifest = manifest.clone();
    manifest.set("splits", splits.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(","));
    for (name, images) in splits {
        binio::write_file(&dir.join(format!("{name}.bin")), &encode_split(images)?)?;
        manifest.set(format!("split.{name}.count"), images.len());
    }
    binio::write_file(&dir.join("manifest.txt"), manifest.to_text().as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<KvMap> {
    let text = std::fs::read_to_string(dir.join("manifest.txt")).map_err(|e| OsrError::io(dir.join("manifest.txt"), e))?;
    KvMap::parse(&text).map_err(|e| OsrError::Data(format!("manifest: {e}")))
}

pub fn read_split(dir: &Path, name: &str) -> Result<Vec<LabeledImage>> {
    decode_split(&binio::read_file(&dir.join(format!("{name}.bin")))?)
}

pub fn stats_to_kv(stats: &NormStats, kv: &mut KvMap) {
    kv.set("norm.mean", join_list(&stats.mean));
    kv.set("norm.std", join_list(&stats.std));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(r: f64, n: usize) -> CorrelationSpec {
        let mut s = CorrelationSpec::new(4, 4, r, n);
        s.seed = 11;
        s
    }

    fn designated_counts(ds: &Dataset, n: usize) -> Vec<usize> {
        (0..ds.num_classes)
            .map(|c| {
                ds.images[c * n..(c + 1) * n].iter().filter(|i| i.background == Some(ds.bg_table[c])).count()
            })
            .collect()
    }

    #[test]
    fn correlated_counts_follow_rounding() {
        let ds = generate_dataset(&spec(0.9, 10)).unwrap();
        assert_eq!(designated_counts(&ds, 10), vec![9; 4]);
        let mut two_bg = CorrelationSpec::new(2, 2, 0.5, 10);
        two_bg.seed = 3;
        let ds = generate_dataset(&two_bg).unwrap();
        assert_eq!(designated_counts(&ds, 10), vec![5; 2]);
        let ds = generate_dataset(&spec(1.0, 10)).unwrap();
        assert_eq!(designated_counts(&ds, 10), vec![10; 4]);
    }

    #[test]
    fn anti_correlated_images_avoid_designated_background() {
        let ds = generate_dataset(&spec(0.5, 8)).unwrap();
        for img in &ds.images {
            let bg = img.background.unwrap();
            assert!(bg < 4);
        }
        assert!(ds.images.iter().any(|i| i.background != Some(ds.bg_table[i.label])));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&spec(0.7, 5)).unwrap();
        let b = generate_dataset(&spec(0.7, 5)).unwrap();
        assert_eq!(a.images, b.images);
        let mut other = spec(0.7, 5);
        other.seed = 12;
        assert_ne!(generate_dataset(&other).unwrap().images, a.images);
    }

    #[test]
    fn masks_are_proper_and_pixels_normalized() {
        let ds = generate_dataset(&spec(0.8, 6)).unwrap();
        for img in &ds.images {
            img.validate().unwrap();
        }
        for c in 0..CHANNELS {
            let mean: f64 = ds.images.iter().flat_map(|i| (0..i.pixels.pixels()).map(move |p| i.pixels.pixel(p)[c])).sum::<f64>()
                / (ds.images.len() * 256) as f64;
            assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
        }
    }

    #[test]
    fn mask_matches_painted_pixels() {
        // Painting a glyph must change exactly the pixels its mask claims.
        let mut rng = derive_rng(5, &[1]);
        for class in 0..MAX_FG_CLASSES {
            for bg in 0..MAX_BG_CLASSES {
                let before = paint_background(bg, 16, 16, &mut rng);
                let mut after = before.clone();
                let mask = paint_glyph(class, &mut after, &mut rng);
                assert!(mask.count_ones() > 0);
                for p in 0..mask.len() {
                    let changed = before.pixel(p) != after.pixel(p);
                    assert_eq!(mask.is_set(p), changed, "class {class} bg {bg} pixel {p}");
                }
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(generate_dataset(&spec(0.1, 10)), Err(OsrError::Parameter(_))));
        assert!(matches!(generate_dataset(&spec(1.1, 10)), Err(OsrError::Parameter(_))));
        let mut tiny = spec(0.9, 10);
        tiny.height = 4;
        assert!(matches!(generate_dataset(&tiny), Err(OsrError::Geometry(_))));
    }

    fn sample_pair() -> (LabeledImage, LabeledImage) {
        let ds = generate_dataset(&spec(0.9, 2)).unwrap();
        (ds.images[0].clone(), ds.images[2].clone())
    }

    #[test]
    fn variant_definitions() {
        let (img, donor) = sample_pair();
        assert_eq!(make_variant(&img, VariantKind::Raw, None).unwrap().pixels, img.pixels);

        let fg = make_variant(&img, VariantKind::FgOnly, None).unwrap();
        let mask = img.fg_mask.as_ref().unwrap();
        let dmask = donor.fg_mask.as_ref().unwrap();
        for p in 0..mask.len() {
            if mask.is_set(p) {
                assert_eq!(fg.pixels.pixel(p), img.pixels.pixel(p));
            } else {
                assert!(fg.pixels.pixel(p).iter().all(|&v| v == 0.0));
            }
        }

        let raw_star = make_variant(&img, VariantKind::FgPlusRawStar, Some(&donor)).unwrap();
        let bg_star = make_variant(&img, VariantKind::FgPlusBgStar, Some(&donor)).unwrap();
        for p in 0..mask.len() {
            if mask.is_set(p) {
                continue;
            }
            assert_eq!(raw_star.pixels.pixel(p), donor.pixels.pixel(p));
            if dmask.is_set(p) {
                assert!(bg_star.pixels.pixel(p).iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(bg_star.pixels.pixel(p), donor.pixels.pixel(p));
            }
        }
        assert_eq!(bg_star.label, img.label);
        assert_eq!(bg_star.fg_mask, img.fg_mask);
    }

    #[test]
    fn fg_only_is_idempotent() {
        let (img, _) = sample_pair();
        let once = make_variant(&img, VariantKind::FgOnly, None).unwrap();
        let twice = make_variant(&once, VariantKind::FgOnly, None).unwrap();
        assert_eq!(once.pixels, twice.pixels);
    }

    #[test]
    fn missing_donor_is_an_argument_error() {
        let (img, _) = sample_pair();
        assert!(matches!(make_variant(&img, VariantKind::FgPlusBgStar, None), Err(OsrError::Argument(_))));
        assert!(matches!(make_variant(&img, VariantKind::FgPlusRawStar, None), Err(OsrError::Argument(_))));
    }

    #[test]
    fn split_partitions_dataset() {
        let ds = generate_dataset(&spec(0.9, 3)).unwrap();
        let split = split_known_unknown(&ds, &[0, 1]).unwrap();
        assert_eq!(split.known.len() + split.unknown.len(), ds.len());
        assert!(split.known.iter().all(|i| i.is_known && i.label < 2));
        assert!(split.unknown.iter().all(|i| !i.is_known && i.label >= 2));
        assert!(split_known_unknown(&ds, &[]).is_err());
        assert!(split_known_unknown(&ds, &[0, 1, 2, 3]).is_err());
        assert!(split_known_unknown(&ds, &[0, 9]).is_err());
    }

    #[test]
    fn twelve_known_six_unknown_split() {
        let mut s = CorrelationSpec::new(18, 8, 0.9, 1);
        s.seed = 5;
        let ds = generate_dataset(&s).unwrap();
        let split = split_known_unknown(&ds, &(0..12).collect::<Vec<_>>()).unwrap();
        assert_eq!(split.known.len(), 12);
        assert_eq!(split.unknown.len(), 6);
    }

    #[test]
    fn split_file_roundtrip() {
        let ds = generate_dataset(&spec(0.9, 2)).unwrap();
        let bytes = encode_split(&ds.images).unwrap();
        assert_eq!(decode_split(&bytes).unwrap(), ds.images);
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0xff;
        assert!(decode_split(&bad).is_err());
    }
}
