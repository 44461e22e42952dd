//! Post-hoc known-ness scores. Every score is oriented so that higher means
//! "more likely a known class".

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{OsrError, Result};
use crate::image::Image;
use crate::model::{softmax, unpack_sample, ConvNet};
use crate::synthdata::LabeledImage;

const SIMPLEX_TOL: f64 = 1e-6;

pub const DEFAULT_ENERGY_T: f64 = 1.0;
pub const DEFAULT_ODIN_T: f64 = 1000.0;
pub const DEFAULT_ODIN_EPS: f64 = 0.0014;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub sample_id: u64,
    pub is_known: bool,
    pub true_label: usize,
    pub predicted: usize,
    pub score: f64,
    pub features: Option<Vec<f64>>,
}

fn check_simplex(probs: &[f64]) -> Result<()> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0 + SIMPLEX_TOL).contains(p)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(OsrError::Validation(format!("probabilities off the simplex (sum {sum})")));
    }
    Ok(())
}

/// Maximum softmax probability.
pub fn msp(probs: &[f64]) -> Result<f64> {
    check_simplex(probs)?;
    Ok(probs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Shannon entropy of a probability vector, in nats.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    check_simplex(probs)?;
    Ok(-probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
}

/// `T * logsumexp(logits / T)`, the negated free energy.
pub fn energy_score(logits: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(OsrError::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    if logits.is_empty() {
        return Err(OsrError::Argument("energy of empty logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| ((z - max) / temperature).exp()).sum();
    Ok(max + temperature * sum.ln())
}

/// Euclidean norm of a global feature.
pub fn feature_norm_score(feature: &[f64]) -> f64 {
    feature.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A classifier the scores can query. ODIN additionally needs input gradients.
pub trait ScoringModel {
    fn num_classes(&self) -> usize;

    fn logits(&self, x: &Image) -> Result<Vec<f64>>;

    /// Gradient of `log softmax(logits / T)[class]` with respect to the input.
    fn input_gradient(&self, _x: &Image, _temperature: f64, _class: usize) -> Result<Image> {
        Err(OsrError::Capability("model does not expose input gradients".into()))
    }
}

impl ScoringModel for ConvNet {
    fn num_classes(&self) -> usize {
        ConvNet::num_classes(self)
    }

    fn logits(&self, x: &Image) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.logits)
    }

    fn input_gradient(&self, x: &Image, temperature: f64, class: usize) -> Result<Image> {
        let k = ConvNet::num_classes(self);
        if class >= k {
            return Err(OsrError::Index(format!("class {class} outside {k} classes")));
        }
        let acts = self.forward_batch(&[x])?;
        let scaled: Vec<f64> = acts.logits_of(0, k).iter().map(|z| z / temperature).collect();
        let p = softmax(&scaled);
        // d/dz_j log softmax(z/T)_c = (1[j = c] - p_j) / T
        let d_logits: Vec<f64> = (0..k).map(|j| (f64::from(u8::from(j == class)) - p[j]) / temperature).collect();
        let mut scratch = vec![0.0; self.params().len()];
        let dx = self.backward(&acts, &d_logits, &mut scratch, true).expect("input gradient requested");
        Ok(unpack_sample(&dx, x.channels(), 1, x.height(), x.width(), 0))
    }
}

/// Temperature-scaled MSP after a signed-gradient input perturbation of size `eps`.
pub fn odin_score(model: &impl ScoringModel, x: &Image, temperature: f64, eps: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(OsrError::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(OsrError::Parameter(format!("odin epsilon must be non-negative, got {eps}")));
    }
    let scaled_msp = |img: &Image| -> Result<f64> {
        let logits: Vec<f64> = model.logits(img)?.iter().map(|z| z / temperature).collect();
        msp(&softmax(&logits))
    };
    if eps == 0.0 {
        return scaled_msp(x);
    }
    let logits = model.logits(x)?;
    let pred = argmax(&logits);
    let grad = model.input_gradient(x, temperature, pred)?;
    let mut perturbed = x.clone();
    for (v, g) in perturbed.data_mut().iter_mut().zip(grad.data()) {
        if *g != 0.0 {
            *v += eps * g.signum();
        }
    }
    scaled_msp(&perturbed)
}

pub fn argmax(values: &[f64]) -> usize {
    (0..values.len()).fold(0, |best, i| if values[i] > values[best] { i } else { best })
}

/// Class means and the Cholesky factor of the ridged shared covariance.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub means: Vec<Vec<f64>>,
    pub covariance: DMatrix<f64>,
    pub ridge: f64,
    cholesky: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// Squared Mahalanobis distance to class `c`.
    pub fn distance2(&self, f: &[f64], c: usize) -> f64 {
        let diff = DVector::from_iterator(f.len(), f.iter().zip(&self.means[c]).map(|(a, b)| a - b));
        let solved = self.cholesky.solve(&diff);
        diff.dot(&solved)
    }
}

/// Fit class means and the pooled within-class covariance (`1/N` normalization)
/// plus `ridge * I`. `ridge = None` uses `1e-3 * trace / dim`.
pub fn fit_gaussian_stats(features: &[Vec<f64>], labels: &[usize], num_classes: usize, ridge: Option<f64>) -> Result<GaussianStats> {
    if features.len() != labels.len() {
        return Err(OsrError::Shape(format!("{} features for {} labels", features.len(), labels.len())));
    }
    let dim = features.first().map(Vec::len).ok_or_else(|| OsrError::Argument("no features to fit".into()))?;
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(OsrError::Shape("features must share one non-zero dimension".into()));
    }
    let mut counts = vec![0usize; num_classes];
    let mut means = vec![vec![0.0; dim]; num_classes];
    for (f, &y) in features.iter().zip(labels) {
        if y >= num_classes {
            return Err(OsrError::Index(format!("label {y} outside {num_classes} classes")));
        }
        counts[y] += 1;
        means[y].iter_mut().zip(f).for_each(|(m, v)| *m += v);
    }
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(OsrError::Argument(format!("class {c} has {} samples; need at least 2", counts[c])));
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= n as f64);
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for (f, &y) in features.iter().zip(labels) {
        let d = DVector::from_iterator(dim, f.iter().zip(&means[y]).map(|(a, b)| a - b));
        cov += &d * d.transpose();
    }
    cov /= features.len() as f64;
    let ridge = match ridge {
        Some(r) if r > 0.0 && r.is_finite() => r,
        Some(r) => return Err(OsrError::Parameter(format!("ridge must be positive, got {r}"))),
        None => {
            let r = 1e-3 * cov.trace() / dim as f64;
            if r > 0.0 { r } else { 1e-12 }
        }
    };
    let ridged = &cov + DMatrix::<f64>::identity(dim, dim) * ridge;
    let cholesky = ridged
        .clone()
        .cholesky()
        .ok_or_else(|| OsrError::Numerical("covariance is not positive definite after ridge".into()))?;
    Ok(GaussianStats { means, covariance: ridged, ridge, cholesky })
}

/// `-min_c (f - mu_c)^T Sigma^-1 (f - mu_c)`.
pub fn mahalanobis_score(f: &[f64], stats: &GaussianStats) -> Result<f64> {
    if f.len() != stats.dim() {
        return Err(OsrError::Shape(format!("feature has {} dims, stats have {}", f.len(), stats.dim())));
    }
    let best = (0..stats.means.len()).map(|c| stats.distance2(f, c)).fold(f64::INFINITY, f64::min);
    Ok(-best)
}

#[derive(Debug, Clone)]
pub enum ScoreMethod {
    Msp,
    Energy { temperature: f64 },
    Odin { temperature: f64, eps: f64 },
    Mahalanobis(Box<GaussianStats>),
    FeatureNorm,
}

impl ScoreMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreMethod::Msp => "msp",
            ScoreMethod::Energy { .. } => "energy",
            ScoreMethod::Odin { .. } => "odin",
            ScoreMethod::Mahalanobis(_) => "mahalanobis",
            ScoreMethod::FeatureNorm => "feature_norm",
        }
    }
}

/// Global features of `images`, in order.
pub fn global_features(model: &ConvNet, images: &[LabeledImage]) -> Result<Vec<Vec<f64>>> {
    let c = model.spec().feature_dim();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(256) {
        let refs: Vec<&Image> = chunk.iter().map(|i| &i.pixels).collect();
        let acts = model.forward_batch(&refs)?;
        out.extend(acts.global.chunks_exact(c).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Score every image; ids are positions offset by `id_base`.
pub fn score_images(
    model: &ConvNet,
    images: &[LabeledImage],
    method: &ScoreMethod,
    id_base: u64,
    keep_features: bool,
) -> Result<Vec<ScoreRecord>> {
    let k = model.num_classes();
    let c = model.spec().feature_dim();
    let mut records = Vec::with_capacity(images.len());
    for (chunk_idx, chunk) in images.chunks(256).enumerate() {
        let refs: Vec<&Image> = chunk.iter().map(|i| &i.pixels).collect();
        let acts = model.forward_batch(&refs)?;
        for (i, img) in chunk.iter().enumerate() {
            let logits = acts.logits_of(i, k);
            let feature = &acts.global[i * c..(i + 1) * c];
            let score = match method {
                ScoreMethod::Msp => msp(&softmax(logits))?,
                ScoreMethod::Energy { temperature } => energy_score(logits, *temperature)?,
                ScoreMethod::Odin { temperature, eps } => odin_score(model, &img.pixels, *temperature, *eps)?,
                ScoreMethod::Mahalanobis(stats) => mahalanobis_score(feature, stats)?,
                ScoreMethod::FeatureNorm => feature_norm_score(feature),
            };
            if !score.is_finite() {
                return Err(OsrError::Numerical(format!("non-finite {} score", method.name())));
            }
            records.push(ScoreRecord {
                sample_id: id_base + (chunk_idx * 256 + i) as u64,
                is_known: img.is_known,
                true_label: img.label,
                predicted: argmax(logits),
                score,
                features: keep_features.then(|| feature.to_vec()),
            });
        }
    }
    Ok(records)
}

/// Fixed-width scientific notation that parses back to the identical double.
pub fn format_f64(v: f64) -> String {
    let s = format!("{v:+.16e}");
    let (mantissa, exp) = s.split_once('e').expect("scientific format");
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    format!("{mantissa}e{sign}{digits:0>3}")
}

pub const SCORE_HEADER: &str = "sample_id,is_known,true_label,predicted_label,score";

pub fn write_score_text(records: &[ScoreRecord]) -> String {
    let mut out = String::new();
    out.push_str(SCORE_HEADER);
    if let Some(n) = records.first().and_then(|r| r.features.as_ref()).map(Vec::len) {
        for i in 0..n {
            let _ = write!(out, ",f{i}");
        }
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{},{}", r.sample_id, u8::from(r.is_known), r.true_label, r.predicted, format_f64(r.score));
        if let Some(f) = &r.features {
            for v in f {
                out.push(',');
                out.push_str(&format_f64(*v));
            }
        }
        out.push('\n');
    }
    out
}

fn parse_finite(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| OsrError::Data(format!("score file line {line}: bad number {field:?}")))?;
    if !v.is_finite() {
        return Err(OsrError::Data(format!("score file line {line}: non-finite value")));
    }
    Ok(v)
}

/// Parse a score file. Empty input (no records) is a data error.
pub fn parse_score_text(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| OsrError::Data("score file is empty".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < 5 || columns[..5].join(",") != SCORE_HEADER {
        return Err(OsrError::Data("score file: unexpected header".into()));
    }
    let n_features = columns.len() - 5;
    let mut records = Vec::new();
    for (idx, line) in lines {
        let ln = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(OsrError::Data(format!("score file line {ln}: {} fields, expected {}", fields.len(), columns.len())));
        }
        let int = |s: &str| -> Result<u64> {
            s.trim().parse::<u64>().map_err(|_| OsrError::Data(format!("score file line {ln}: bad integer {s:?}")))
        };
        let is_known = match fields[1].trim() {
            "0" => false,
            "1" => true,
            other => return Err(OsrError::Data(format!("score file line {ln}: is_known must be 0 or 1, got {other:?}"))),
        };
        let to_usize = |v: u64| usize::try_from(v).map_err(|_| OsrError::Data(format!("score file line {ln}: label overflow")));
        let features = if n_features > 0 {
            Some(fields[5..].iter().map(|f| parse_finite(f, ln)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        records.push(ScoreRecord {
            sample_id: int(fields[0])?,
            is_known,
            true_label: to_usize(int(fields[2])?)?,
            predicted: to_usize(int(fields[3])?)?,
            score: parse_finite(fields[4], ln)?,
            features,
        });
    }
    if records.is_empty() {
        return Err(OsrError::Data("score file has no records".into()));
    }
    Ok(records)
}

pub fn write_score_file(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| OsrError::io(parent, e))?;
    }
    std::fs::write(path, write_score_text(records)).map_err(|e| OsrError::io(path, e))
}

pub fn read_score_file(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| OsrError::io(path, e))?;
    parse_score_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConvNetSpec;
    use crate::rng::derive_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn msp_examples() {
        assert_eq!(msp(&[0.25; 4]).unwrap(), 0.25);
        assert_eq!(msp(&[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(msp(&[0.7, 0.2, 0.1]).unwrap(), 0.7);
        assert!(matches!(msp(&[0.7, 0.7]), Err(OsrError::Validation(_))));
    }

    #[test]
    fn energy_examples() {
        assert!((energy_score(&[0.0, 0.0], 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(energy_score(&[3.5], 1.0).unwrap(), 3.5);
        assert!(matches!(energy_score(&[1.0], 0.0), Err(OsrError::Parameter(_))));
    }

    proptest! {
        #[test]
        fn energy_shift_covariance(logits in prop::collection::vec(-50i32..50, 1..8), c in -40i32..40, t in 1u32..5) {
            // Integer-valued inputs keep the shifted logits exact, so the identity holds exactly.
            let base: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
            let shifted: Vec<f64> = base.iter().map(|v| v + c as f64).collect();
            let t = t as f64;
            let a = energy_score(&base, t).unwrap();
            let b = energy_score(&shifted, t).unwrap();
            prop_assert!((b - (a + c as f64)).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn feature_norm_is_homogeneous(v in prop::collection::vec(-10.0f64..10.0, 1..8), c in 0.0f64..5.0) {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert!((feature_norm_score(&scaled) - c * feature_norm_score(&v)).abs() < 1e-9);
        }
    }

    #[test]
    fn feature_norm_examples() {
        assert_eq!(feature_norm_score(&[0.0, 0.0]), 0.0);
        assert_eq!(feature_norm_score(&[3.0, 4.0]), 5.0);
    }

    struct FixedLogits(Vec<f64>);

    impl ScoringModel for FixedLogits {
        fn num_classes(&self) -> usize {
            self.0.len()
        }
        fn logits(&self, _x: &Image) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn odin_examples() {
        let x = Image::zeros(2, 2, 3);
        let m = FixedLogits(vec![2.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((odin_score(&m, &x, 2.0, 0.0).unwrap() - e / (e + 1.0)).abs() < 1e-15);
        assert!((odin_score(&m, &x, 1e12, 0.0).unwrap() - 0.5).abs() < 1e-9);
        assert!(matches!(odin_score(&m, &x, 1.0, 0.01), Err(OsrError::Capability(_))));
    }

    fn tiny_net() -> ConvNet {
        ConvNet::new(ConvNetSpec::new(8, 8, vec![4, 8], 3), 5).unwrap()
    }

    fn random_image(seed: u64) -> Image {
        let mut rng = derive_rng(seed, &[]);
        Image::from_vec(8, 8, 3, (0..192).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn odin_without_perturbation_is_scaled_msp() {
        let net = tiny_net();
        let x = random_image(1);
        let logits = net.forward(&x).unwrap().logits;
        for t in [1.0, 10.0, 1000.0] {
            let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
            assert_eq!(odin_score(&net, &x, t, 0.0).unwrap(), msp(&softmax(&scaled)).unwrap());
        }
    }

    #[test]
    fn odin_perturbation_raises_scaled_confidence() {
        let net = tiny_net();
        let x = random_image(2);
        let base = odin_score(&net, &x, 1.0, 0.0).unwrap();
        assert!(odin_score(&net, &x, 1.0, 1e-3).unwrap() >= base);
    }

    #[test]
    fn mahalanobis_examples() {
        // 1-D, two classes at -1 and +1, each with unit within-class variance.
        let feats = vec![vec![-2.0], vec![0.0], vec![0.0], vec![2.0]];
        let stats = fit_gaussian_stats(&feats, &[0, 0, 1, 1], 2, Some(1e-12)).unwrap();
        assert!((mahalanobis_score(&[0.0], &stats).unwrap() + 1.0).abs() < 1e-9);
        assert_eq!(mahalanobis_score(&[1.0], &stats).unwrap(), 0.0);
        // Identity covariance: distance squared to nearest mean.
        let feats = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let stats = fit_gaussian_stats(&feats, &[0, 0, 0, 0], 1, Some(0.5)).unwrap();
        assert!((stats.covariance.clone() - DMatrix::identity(2, 2)).norm() < 1e-15);
        assert!((mahalanobis_score(&[3.0, 4.0], &stats).unwrap() + 25.0).abs() < 1e-12);
        assert!(fit_gaussian_stats(&feats, &[0, 0, 0, 1], 2, None).is_err());
        assert!(matches!(fit_gaussian_stats(&feats, &[0; 4], 1, Some(0.0)), Err(OsrError::Parameter(_))));
    }

    #[test]
    fn mahalanobis_rotation_invariance() {
        let mut rng = derive_rng(3, &[]);
        let feats: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let theta: f64 = 0.7;
        let rot = |v: &[f64]| vec![theta.cos() * v[0] - theta.sin() * v[1], theta.sin() * v[0] + theta.cos() * v[1]];
        let a = fit_gaussian_stats(&feats, &labels, 2, Some(0.3)).unwrap();
        let rotated: Vec<Vec<f64>> = feats.iter().map(|f| rot(f)).collect();
        let b = fit_gaussian_stats(&rotated, &labels, 2, Some(0.3)).unwrap();
        let probe = [0.3, -0.8];
        let sa = mahalanobis_score(&probe, &a).unwrap();
        let sb = mahalanobis_score(&rot(&probe), &b).unwrap();
        assert!((sa - sb).abs() < 1e-10);
    }

    #[test]
    fn float_format_roundtrips_bit_exact() {
        let mut rng = derive_rng(4, &[]);
        for _ in 0..2000 {
            let v = f64::from_bits(rng.random::<u64>());
            if !v.is_finite() {
                continue;
            }
            let s = format_f64(v);
            assert_eq!(s.len(), 24, "{s}");
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(format_f64(1.5), "+1.5000000000000000e+000");
        assert_eq!(format_f64(-0.0).parse::<f64>().unwrap().to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn score_file_roundtrip() {
        let records = vec![
            ScoreRecord { sample_id: 0, is_known: true, true_label: 1, predicted: 1, score: 0.1 + 0.2, features: Some(vec![1e-300, -3.0]) },
            ScoreRecord { sample_id: 7, is_known: false, true_label: 9, predicted: 0, score: -1e10, features: Some(vec![0.0, 2.5]) },
        ];
        let text = write_score_text(&records);
        assert_eq!(parse_score_text(&text).unwrap(), records);
        let plain: Vec<ScoreRecord> = records.iter().cloned().map(|r| ScoreRecord { features: None, ..r }).collect();
        assert_eq!(parse_score_text(&write_score_text(&plain)).unwrap(), plain);
    }

    #[test]
    fn score_file_rejects_malformed() {
        assert!(matches!(parse_score_text(""), Err(OsrError::Data(_))));
        assert!(matches!(parse_score_text(&format!("{SCORE_HEADER}\n")), Err(OsrError::Data(_))));
        for bad in ["1,2,0,0,0.5", "1,1,0,0", "1,1,0,0,nan", "x,1,0,0,0.5", "1,1,0,0,0.5,3"] {
            assert!(parse_score_text(&format!("{SCORE_HEADER}\n{bad}\n")).is_err(), "{bad}");
        }
    }

    #[test]
    fn score_images_produces_one_record_per_image() {
        let net = tiny_net();
        let imgs: Vec<LabeledImage> = (0..5)
            .map(|i| LabeledImage { pixels: random_image(i), label: (i % 3) as usize, is_known: i < 3, fg_mask: None, background: None })
            .collect();
        for method in [ScoreMethod::Msp, ScoreMethod::Energy { temperature: 1.0 }, ScoreMethod::FeatureNorm, ScoreMethod::Odin { temperature: 1000.0, eps: 0.0014 }] {
            let recs = score_images(&net, &imgs, &method, 10, true).unwrap();
            assert_eq!(recs.len(), 5);
            assert_eq!(recs[4].sample_id, 14);
            assert!(!recs[4].is_known);
            assert_eq!(recs[0].features.as_ref().unwrap().len(), 8);
        }
    }
}
