//! Brute-force reference versions of the open-set metrics, used to check the
//! library's sorted single-pass implementations. Each one enumerates
//! thresholds or pairs directly. The acceptance checks live under `tests/`.

use osrkit::rng::derive_rng;
use osrkit::scoring::ScoreRecord;
use rand::Rng;

pub fn auroc(known: &[f64], unknown: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &k in known {
        for &u in unknown {
            twice += if k > u { 2 } else if k == u { 1 } else { 0 };
        }
    }
    twice as f64 / 2.0 / (known.len() as f64 * unknown.len() as f64)
}

/// Largest known score `t` with at least `ceil(0.95 n)` knowns at or above it.
pub fn threshold95(known: &[f64]) -> f64 {
    let n = known.len();
    let need = (95 * n).div_ceil(100).max(1);
    let mut best = f64::NEG_INFINITY;
    for &t in known {
        if known.iter().filter(|&&k| k >= t).count() >= need && t > best {
            best = t;
        }
    }
    best
}

pub fn tnr95(known: &[f64], unknown: &[f64]) -> f64 {
    let t = threshold95(known);
    unknown.iter().filter(|&&u| u < t).count() as f64 / unknown.len() as f64
}

pub fn dtacc(known: &[f64], unknown: &[f64]) -> f64 {
    let mut candidates: Vec<f64> = known.iter().chain(unknown).copied().collect();
    candidates.push(f64::INFINITY);
    candidates
        .iter()
        .map(|&t| {
            let tpr = known.iter().filter(|&&k| k >= t).count() as f64 / known.len() as f64;
            let tnr = unknown.iter().filter(|&&u| u < t).count() as f64 / unknown.len() as f64;
            0.5 * (tpr + tnr)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Interpolated average precision: for every distinct threshold, recall and
/// precision of "score >= t"; precision replaced by the best precision at
/// any recall at least as large.
pub fn aupr(pos: &[f64], neg: &[f64]) -> f64 {
    let mut ts: Vec<f64> = pos.iter().chain(neg).copied().collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let points: Vec<(f64, f64)> = ts
        .iter()
        .map(|&t| {
            let tp = pos.iter().filter(|&&p| p >= t).count();
            let fp = neg.iter().filter(|&&n| n >= t).count();
            (tp as f64 / pos.len() as f64, tp as f64 / (tp + fp) as f64)
        })
        .collect();
    let mut area = 0.0;
    let mut last = 0.0;
    for &(r, _) in &points {
        let env = points.iter().filter(|(r2, _)| *r2 >= r).map(|p| p.1).fold(0.0, f64::max);
        area += (r - last) * env;
        last = r;
    }
    area
}

pub fn auin(known: &[f64], unknown: &[f64]) -> f64 {
    aupr(known, unknown)
}

pub fn auout(known: &[f64], unknown: &[f64]) -> f64 {
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    aupr(&neg(unknown), &neg(known))
}

pub fn ft_cos(known: &[Vec<f64>], unknown: &[Vec<f64>]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sum = 0.0;
    for a in known {
        for b in unknown {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            sum += dot / (norm(a) * norm(b));
        }
    }
    sum / (known.len() * unknown.len()) as f64
}

/// Macro-F1 over the K known classes plus "unknown", rejecting below the 95% threshold.
pub fn open_f1(records: &[ScoreRecord], k: usize) -> f64 {
    let known: Vec<f64> = records.iter().filter(|r| r.is_known).map(|r| r.score).collect();
    let t = threshold95(&known);
    let truth = |r: &ScoreRecord| if r.is_known { r.true_label } else { k };
    let pred = |r: &ScoreRecord| if r.score >= t { r.predicted.min(k) } else { k };
    let mut total = 0.0;
    for c in 0..=k {
        let tp = records.iter().filter(|r| truth(r) == c && pred(r) == c).count();
        let fp = records.iter().filter(|r| truth(r) != c && pred(r) == c).count();
        let fneg = records.iter().filter(|r| truth(r) == c && pred(r) != c).count();
        if 2 * tp + fp + fneg > 0 {
            total += 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
        }
    }
    total / (k + 1) as f64
}

/// Trapezoidal area under (FPR, CCR) over every threshold "score >= t".
pub fn oscr(records: &[ScoreRecord]) -> f64 {
    let nk = records.iter().filter(|r| r.is_known).count() as f64;
    let nu = records.iter().filter(|r| !r.is_known).count() as f64;
    let mut ts: Vec<f64> = records.iter().map(|r| r.score).collect();
    ts.push(f64::INFINITY);
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let point = |t: f64| {
        let ccr = records.iter().filter(|r| r.is_known && r.score >= t && r.predicted == r.true_label).count() as f64 / nk;
        let fpr = records.iter().filter(|r| !r.is_known && r.score >= t).count() as f64 / nu;
        (fpr, ccr)
    };
    let mut area = 0.0;
    let mut prev = point(f64::INFINITY);
    for &t in &ts[1..] {
        let p = point(t);
        area += (p.0 - prev.0) * 0.5 * (p.1 + prev.1);
        prev = p;
    }
    area
}

/// Random score records; scores come from a coarse grid so ties are common.
pub fn random_records(seed: u64, n: usize, k: usize, dim: usize) -> Vec<ScoreRecord> {
    let mut rng = derive_rng(seed, &[0x6f72_6163]);
    let coarse = rng.random_bool(0.5);
    let mut out: Vec<ScoreRecord> = (0..n)
        .map(|i| {
            let is_known = rng.random_bool(0.5);
            let true_label = rng.random_range(0..if is_known { k } else { k + 3 });
            let predicted = if rng.random_bool(0.7) && is_known { true_label } else { rng.random_range(0..k) };
            let score = if coarse { rng.random_range(0..12) as f64 / 4.0 } else { rng.random_range(-3.0..3.0) };
            let features = Some((0..dim).map(|_| rng.random_range(-1.0..1.0) + 0.01).collect());
            ScoreRecord { sample_id: i as u64, is_known, true_label, predicted, score, features }
        })
        .collect();
    // Both populations present.
    out[0].is_known = true;
    out[0].true_label %= k;
    out[1].is_known = false;
    out
}
