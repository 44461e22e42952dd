//! Open-set evaluation metrics over known-ness scores (higher = more known).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{OsrError, Result};
use crate::scoring::ScoreRecord;

pub const DEFAULT_TPR: f64 = 0.95;

fn require_nonempty(known: &[f64], unknown: &[f64], what: &str) -> Result<()> {
    if known.is_empty() || unknown.is_empty() {
        return Err(OsrError::Argument(format!("{what} needs non-empty known and unknown scores")));
    }
    Ok(())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Number of entries of ascending `sorted` that are `< t`.
fn count_below(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&v| v < t)
}

/// Mann-Whitney statistic: P(known > unknown) + 0.5 P(tie).
pub fn auroc(known: &[f64], unknown: &[f64]) -> Result<f64> {
    require_nonempty(known, unknown, "auroc")?;
    let unk = sorted(unknown);
    let mut credit = 0.0;
    for &k in known {
        let below = count_below(&unk, k);
        let ties = unk.partition_point(|&v| v <= k) - below;
        credit += below as f64 + 0.5 * ties as f64;
    }
    Ok(credit / (known.len() as f64 * unknown.len() as f64))
}

/// The largest threshold accepting at least `ceil(tpr * n)` known scores.
pub fn tpr_threshold(known: &[f64], tpr: f64) -> Result<f64> {
    if known.is_empty() {
        return Err(OsrError::Argument("threshold calibration needs known scores".into()));
    }
    if !(tpr > 0.0 && tpr < 1.0) {
        return Err(OsrError::Parameter(format!("tpr must lie in (0, 1), got {tpr}")));
    }
    let n = known.len();
    let m = ((tpr * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let asc = sorted(known);
    Ok(asc[n - m])
}

/// Fraction of unknown scores strictly below the TPR threshold.
pub fn tnr_at_tpr(known: &[f64], unknown: &[f64], tpr: f64) -> Result<f64> {
    require_nonempty(known, unknown, "tnr_at_tpr")?;
    let t = tpr_threshold(known, tpr)?;
    Ok(unknown.iter().filter(|&&u| u < t).count() as f64 / unknown.len() as f64)
}

pub fn fpr_at_tpr(known: &[f64], unknown: &[f64], tpr: f64) -> Result<f64> {
    Ok(1.0 - tnr_at_tpr(known, unknown, tpr)?)
}

/// Best balanced detection accuracy over thresholds at midpoints of distinct scores and at +-inf.
pub fn dtacc(known: &[f64], unknown: &[f64]) -> Result<f64> {
    require_nonempty(known, unknown, "dtacc")?;
    let kn = sorted(known);
    let un = sorted(unknown);
    let mut all = [known, unknown].concat();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let eval = |t: f64| {
        let tpr = (kn.len() - count_below(&kn, t)) as f64 / kn.len() as f64;
        let tnr = count_below(&un, t) as f64 / un.len() as f64;
        0.5 * (tpr + tnr)
    };
    let mut best = eval(f64::NEG_INFINITY).max(eval(f64::INFINITY));
    for w in all.windows(2) {
        best = best.max(eval(0.5 * w[0] + 0.5 * w[1]));
    }
    Ok(best)
}

/// Area under the precision-recall curve with `positive` scores ranked above
/// `negative` ones. Ties are grouped into one operating point; precision is
/// replaced by its envelope `max_{r' >= r} precision(r')`.
pub fn aupr(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(OsrError::Argument("aupr needs both positive and negative samples".into()));
    }
    let mut tagged: Vec<(f64, bool)> = positive.iter().map(|&s| (s, true)).chain(negative.iter().map(|&s| (s, false))).collect();
    tagged.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = positive.len() as f64;
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < tagged.len() {
        let s = tagged[i].0;
        while i < tagged.len() && tagged[i].0 == s {
            if tagged[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / total_pos, tp as f64 / (tp + fp) as f64));
    }
    // Envelope: best precision at this recall or any higher one.
    let mut env = vec![0.0; points.len()];
    for j in (0..points.len()).rev() {
        let next = if j + 1 < points.len() { env[j + 1] } else { 0.0 };
        env[j] = points[j].1.max(next);
    }
    let mut area = 0.0;
    let mut last_recall = 0.0;
    for (j, &(recall, _)) in points.iter().enumerate() {
        area += (recall - last_recall) * env[j];
        last_recall = recall;
    }
    Ok(area)
}

/// AUPR with known samples as positives.
pub fn auin(known: &[f64], unknown: &[f64]) -> Result<f64> {
    aupr(known, unknown)
}

/// AUPR with unknown samples as positives (scores negated).
pub fn auout(known: &[f64], unknown: &[f64]) -> Result<f64> {
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    aupr(&neg(unknown), &neg(known))
}

fn unit_sum(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = features.first().map(Vec::len).ok_or_else(|| OsrError::Argument("ft_cos needs features".into()))?;
    let mut acc = vec![0.0; dim];
    for f in features {
        if f.len() != dim {
            return Err(OsrError::Shape("feature dimensions differ".into()));
        }
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(OsrError::Argument("ft_cos needs nonzero finite features".into()));
        }
        acc.iter_mut().zip(f).for_each(|(a, v)| *a += v / norm);
    }
    Ok(acc)
}

/// Mean cosine similarity over all known/unknown feature pairs.
pub fn ft_cos(known: &[Vec<f64>], unknown: &[Vec<f64>]) -> Result<f64> {
    let a = unit_sum(known)?;
    let b = unit_sum(unknown)?;
    if a.len() != b.len() {
        return Err(OsrError::Shape("known and unknown feature dimensions differ".into()));
    }
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok(dot / (known.len() as f64 * unknown.len() as f64))
}

fn split_scores(records: &[ScoreRecord]) -> (Vec<f64>, Vec<f64>) {
    let known = records.iter().filter(|r| r.is_known).map(|r| r.score).collect();
    let unknown = records.iter().filter(|r| !r.is_known).map(|r| r.score).collect();
    (known, unknown)
}

/// Macro-F1 over `K + 1` classes, rejecting records whose score is below `threshold`.
pub fn open_macro_f1_at(records: &[ScoreRecord], num_classes: usize, threshold: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(OsrError::Argument("open macro-F1 of no records".into()));
    }
    let k = num_classes;
    let mut tp = vec![0usize; k + 1];
    let mut fp = vec![0usize; k + 1];
    let mut fneg = vec![0usize; k + 1];
    for r in records {
        let truth = if r.is_known { r.true_label.min(k) } else { k };
        if r.is_known && r.true_label >= k {
            return Err(OsrError::Index(format!("known label {} outside {k} classes", r.true_label)));
        }
        let pred = if r.score >= threshold { r.predicted.min(k) } else { k };
        if pred == truth {
            tp[truth] += 1;
        } else {
            fp[pred] += 1;
            fneg[truth] += 1;
        }
    }
    let f1_sum: f64 = (0..=k)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 { 0.0 } else { 2.0 * tp[c] as f64 / denom as f64 }
        })
        .sum();
    Ok(f1_sum / (k + 1) as f64)
}

/// Open macro-F1 with the threshold calibrated to 95% known acceptance.
pub fn open_macro_f1(records: &[ScoreRecord], num_classes: usize) -> Result<f64> {
    let (known, _) = split_scores(records);
    let t = tpr_threshold(&known, DEFAULT_TPR)?;
    open_macro_f1_at(records, num_classes, t)
}

/// Area under correct-classification rate versus false-positive rate, trapezoidal
/// over grouped thresholds from +inf down to -inf.
pub fn oscr(records: &[ScoreRecord]) -> Result<f64> {
    let nk = records.iter().filter(|r| r.is_known).count();
    let nu = records.len() - nk;
    if nk == 0 || nu == 0 {
        return Err(OsrError::Argument("oscr needs known and unknown records".into()));
    }
    let mut order: Vec<&ScoreRecord> = records.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let (mut correct, mut false_pos) = (0usize, 0usize);
    let (mut prev_ccr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = order[i].score;
        while i < order.len() && order[i].score == s {
            let r = order[i];
            if r.is_known {
                correct += usize::from(r.predicted == r.true_label);
            } else {
                false_pos += 1;
            }
            i += 1;
        }
        let ccr = correct as f64 / nk as f64;
        let fpr = false_pos as f64 / nu as f64;
        area += (fpr - prev_fpr) * 0.5 * (ccr + prev_ccr);
        prev_ccr = ccr;
        prev_fpr = fpr;
    }
    Ok(area)
}

/// Closed-set accuracy over known records.
pub fn accuracy(records: &[ScoreRecord]) -> Result<f64> {
    let known: Vec<&ScoreRecord> = records.iter().filter(|r| r.is_known).collect();
    if known.is_empty() {
        return Err(OsrError::Argument("accuracy needs known records".into()));
    }
    Ok(known.iter().filter(|r| r.predicted == r.true_label).count() as f64 / known.len() as f64)
}

/// Every metric computable from one score file, in a fixed order.
pub fn evaluate(records: &[ScoreRecord], num_classes: usize) -> Result<Vec<(String, f64)>> {
    let (known, unknown) = split_scores(records);
    let mut out = vec![("accuracy".to_string(), accuracy(records)?)];
    let mut push = |name: &str, v: Result<f64>| -> Result<()> {
        out.push((name.to_string(), v?));
        Ok(())
    };
    push("auroc", auroc(&known, &unknown))?;
    push("tnr95", tnr_at_tpr(&known, &unknown, DEFAULT_TPR))?;
    push("fpr95", fpr_at_tpr(&known, &unknown, DEFAULT_TPR))?;
    push("dtacc", dtacc(&known, &unknown))?;
    push("auin", auin(&known, &unknown))?;
    push("auout", auout(&known, &unknown))?;
    push("open_f1", open_macro_f1(records, num_classes))?;
    push("oscr", oscr(records))?;
    if records.iter().all(|r| r.features.is_some()) {
        let feats = |flag: bool| -> Vec<Vec<f64>> {
            records.iter().filter(|r| r.is_known == flag).map(|r| r.features.clone().expect("checked")).collect()
        };
        push("ft_cos", ft_cos(&feats(true), &feats(false)))?;
        let norms = |flag: bool| -> Vec<f64> {
            records
                .iter()
                .filter(|r| r.is_known == flag)
                .map(|r| crate::scoring::feature_norm_score(r.features.as_deref().expect("checked")))
                .collect()
        };
        push("ft_auc", auroc(&norms(true), &norms(false)))?;
    }
    Ok(out)
}

/// Rows of `(experiment, metric, value)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<(String, String, f64)>,
}

pub const REPORT_HEADER: &str = "experiment\tmetric\tvalue";

impl Report {
    pub fn push(&mut self, experiment: &str, metric: &str, value: f64) {
        self.rows.push((experiment.to_string(), metric.to_string(), value));
    }

    pub fn get(&self, experiment: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|(e, m, _)| e == experiment && m == metric).map(|r| r.2)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for (e, m, v) in &self.rows {
            let _ = writeln!(out, "{e}\t{m}\t{v:?}");
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(OsrError::Data("report: unexpected header".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields[0].is_empty() || fields[1].is_empty() {
                return Err(OsrError::Data(format!("report line {}: expected 3 tab-separated fields", i + 2)));
            }
            let v: f64 = fields[2].parse().map_err(|_| OsrError::Data(format!("report line {}: bad value", i + 2)))?;
            rows.push((fields[0].to_string(), fields[1].to_string(), v));
        }
        Ok(Report { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| OsrError::io(parent, e))?;
        }
        std::fs::write(path, self.to_tsv()).map_err(|e| OsrError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(is_known: bool, label: usize, pred: usize, score: f64) -> ScoreRecord {
        ScoreRecord { sample_id: 0, is_known, true_label: label, predicted: pred, score, features: None }
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[1.0], &[0.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.8], &[0.85, 0.7]).unwrap(), 0.75);
        assert!(matches!(auroc(&[], &[1.0]), Err(OsrError::Argument(_))));
    }

    #[test]
    fn tnr_examples() {
        let known: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(tpr_threshold(&known, 0.95).unwrap(), 6.0);
        assert_eq!(tnr_at_tpr(&known, &[0.0, -1.0, 5.5], 0.95).unwrap(), 1.0);
        assert_eq!(tnr_at_tpr(&[2.0, 3.0], &[0.0, 1.0], 0.5).unwrap(), 1.0);
        let v = tnr_at_tpr(&known, &known, 0.95).unwrap();
        assert_eq!(v, 0.05);
        assert_eq!(v + fpr_at_tpr(&known, &known, 0.95).unwrap(), 1.0);
    }

    #[test]
    fn dtacc_examples() {
        assert_eq!(dtacc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(dtacc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(dtacc(&[0.9, 0.4], &[0.6, 0.1]).unwrap(), 0.75);
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[3.0, 2.0], &[1.0, 0.0]).unwrap(), 1.0);
        // All scores tied: one operating point at recall 1, precision 0.5.
        assert_eq!(aupr(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        // Ranking p, n, p: points (0.5, 1), (0.5, 0.5), (1, 2/3); envelope gives 0.5 + 0.5 * 2/3.
        assert!((aupr(&[3.0, 1.0], &[2.0]).unwrap() - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
        let (k, u) = ([0.9, 0.3, 0.5], [0.4, 0.1]);
        let negk: Vec<f64> = k.iter().map(|v| -v).collect();
        let negu: Vec<f64> = u.iter().map(|v| -v).collect();
        assert_eq!(auin(&k, &u).unwrap(), auout(&negu, &negk).unwrap());
        assert!(aupr(&[1.0], &[]).is_err());
    }

    #[test]
    fn ft_cos_examples() {
        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        assert_eq!(ft_cos(&[e1.clone(), e1.clone()], &[e2.clone()]).unwrap(), 0.0);
        assert_eq!(ft_cos(&[e1.clone()], &[e1.clone()]).unwrap(), 1.0);
        assert_eq!(ft_cos(&[e1.clone()], &[e1.clone(), e2]).unwrap(), 0.5);
        assert!(ft_cos(&[vec![0.0, 0.0]], &[e1]).is_err());
    }

    #[test]
    fn open_f1_examples() {
        let perfect = vec![rec(true, 0, 0, 0.9), rec(true, 1, 1, 0.8), rec(false, 5, 0, 0.1)];
        assert_eq!(open_macro_f1_at(&perfect, 2, 0.5).unwrap(), 1.0);
        let no_unknown = vec![rec(true, 0, 0, 0.9), rec(true, 1, 1, 0.8)];
        assert!((open_macro_f1_at(&no_unknown, 2, f64::NEG_INFINITY).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // Known: (0 -> 0, s .9), (0 -> 1, s .7), (1 -> 1, s .2); unknown scores .8, .3, .1 at threshold .25.
        let six = vec![
            rec(true, 0, 0, 0.9),
            rec(true, 0, 1, 0.7),
            rec(true, 1, 1, 0.2),
            rec(false, 7, 0, 0.8),
            rec(false, 7, 1, 0.3),
            rec(false, 7, 1, 0.1),
        ];
        // class 0: tp1 fp1 fn1 -> 0.5; class 1: tp0 fp2 fn1 -> 0; unknown: tp1 fp1 fn2 -> 0.4
        assert!((open_macro_f1_at(&six, 2, 0.25).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn oscr_examples() {
        let perfect = vec![rec(true, 0, 0, 0.9), rec(true, 1, 1, 0.8), rec(false, 5, 0, 0.1)];
        assert_eq!(oscr(&perfect).unwrap(), 1.0);
        let wrong = vec![rec(true, 0, 1, 0.9), rec(true, 1, 0, 0.2), rec(false, 5, 0, 0.5)];
        assert_eq!(oscr(&wrong).unwrap(), 0.0);
        // Sorted: K ok .9, U .8, K wrong .7, U .3, K ok .2, U .1 -> CCR steps at FPR 1/3, 2/3, 1.
        let six = vec![
            rec(true, 0, 0, 0.9),
            rec(false, 7, 0, 0.8),
            rec(true, 0, 1, 0.7),
            rec(false, 7, 1, 0.3),
            rec(true, 1, 1, 0.2),
            rec(false, 7, 1, 0.1),
        ];
        let expected = (1.0 / 3.0) * (1.0 / 3.0) + (1.0 / 3.0) * (1.0 / 3.0) + (1.0 / 3.0) * (2.0 / 3.0);
        assert!((oscr(&six).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn accuracy_examples() {
        let r = |p| rec(true, 0, p, 0.0);
        assert_eq!(accuracy(&[r(0), r(0)]).unwrap(), 1.0);
        assert_eq!(accuracy(&[r(1), r(1)]).unwrap(), 0.0);
        assert_eq!(accuracy(&[r(0), r(0), r(0), r(1), rec(false, 3, 3, 0.0)]).unwrap(), 0.75);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn report_roundtrip() {
        let mut r = Report::default();
        r.push("plain", "auroc", 0.1 + 0.2);
        r.push("backmix", "fpr95", 1e-300);
        assert_eq!(Report::parse_tsv(&r.to_tsv()).unwrap(), r);
        assert!(Report::parse_tsv("x\n").is_err());
        assert!(Report::parse_tsv(&format!("{REPORT_HEADER}\na\tb\n")).is_err());
    }
}
