//! Exact mutual-information checks on small discrete joints `p(y, z_f, z_b)`.
//!
//! The global feature `z_g` is a deterministic function of `(z_f, z_b)`: either
//! the convex combination `λ·z_f + (1−λ)·z_b` over integer alphabets with a
//! rational `λ`, or the concatenation `(z_f, z_b)`. Values of `z_g` are
//! deduplicated exactly, so colliding combinations share one outcome.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{OsrError, Result};

/// Largest alphabet allowed for `y`, `z_f` or `z_b`.
pub const MAX_ALPHABET: usize = 8;
/// Tolerance for "sums to one" and for the independence properties.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Y,
    Zf,
    Zb,
    Zg,
}

/// How `z_g` is formed from `(z_f, z_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalRule {
    /// `z_g = (num/den)·z_f + (1 − num/den)·z_b` with `0 < num < den`.
    Convex { num: i64, den: i64 },
    Concat,
}

impl GlobalRule {
    pub fn lambda(&self) -> Option<f64> {
        match *self {
            GlobalRule::Convex { num, den } => Some(num as f64 / den as f64),
            GlobalRule::Concat => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theorem2Mode {
    Constant,
    Orthogonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    /// Row-major `p[y][f][b]`.
    probs: Vec<f64>,
    num_y: usize,
    zf_values: Vec<i64>,
    zb_values: Vec<i64>,
    rule: GlobalRule,
    /// `z_g` outcome id of each `(f, b)` cell.
    zg_ids: Vec<usize>,
    num_zg: usize,
}

impl DiscreteJoint {
    pub fn new(probs: Vec<f64>, num_y: usize, zf_values: Vec<i64>, zb_values: Vec<i64>, rule: GlobalRule) -> Result<Self> {
        let (nf, nb) = (zf_values.len(), zb_values.len());
        for (name, n) in [("y", num_y), ("z_f", nf), ("z_b", nb)] {
            if n == 0 || n > MAX_ALPHABET {
                return Err(OsrError::Validation(format!("{name} alphabet size {n} outside 1..={MAX_ALPHABET}")));
            }
        }
        for (name, values) in [("z_f", &zf_values), ("z_b", &zb_values)] {
            let mut sorted = values.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != values.len() {
                return Err(OsrError::Validation(format!("{name} alphabet has repeated values")));
            }
        }
        if probs.len() != num_y * nf * nb {
            return Err(OsrError::Validation(format!(
                "table has {} entries, expected {num_y}x{nf}x{nb}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(OsrError::Validation("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(OsrError::Validation(format!("probabilities sum to {total}, not 1")));
        }
        if let GlobalRule::Convex { num, den } = rule {
            if !(0 < num && num < den) {
                return Err(OsrError::Validation(format!("lambda {num}/{den} must lie strictly inside (0, 1)")));
            }
        }
        let mut ids: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        let mut zg_ids = Vec::with_capacity(nf * nb);
        for f in 0..nf {
            for b in 0..nb {
                // Scaled by den so equal rationals compare equal as integers.
                let key = match rule {
                    GlobalRule::Convex { num, den } => (num * zf_values[f] + (den - num) * zb_values[b], 0),
                    GlobalRule::Concat => (f as i64, b as i64),
                };
                let next = ids.len();
                zg_ids.push(*ids.entry(key).or_insert(next));
            }
        }
        let num_zg = ids.len();
        Ok(DiscreteJoint { probs, num_y, zf_values, zb_values, rule, zg_ids, num_zg })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn rule(&self) -> GlobalRule {
        self.rule
    }

    pub fn zf_values(&self) -> &[i64] {
        &self.zf_values
    }

    pub fn zb_values(&self) -> &[i64] {
        &self.zb_values
    }

    pub fn alphabet_size(&self, v: Var) -> usize {
        match v {
            Var::Y => self.num_y,
            Var::Zf => self.zf_values.len(),
            Var::Zb => self.zb_values.len(),
            Var::Zg => self.num_zg,
        }
    }

    /// Every support cell as `(p, [y, f, b, g])`.
    fn cells(&self) -> impl Iterator<Item = (f64, [usize; 4])> + '_ {
        let (nf, nb) = (self.zf_values.len(), self.zb_values.len());
        self.probs.iter().enumerate().map(move |(i, &p)| {
            let (y, rest) = (i / (nf * nb), i % (nf * nb));
            let (f, b) = (rest / nb, rest % nb);
            (p, [y, f, b, self.zg_ids[rest]])
        })
    }

    fn marginal(&self, vars: &[Var]) -> Vec<f64> {
        let dims: Vec<usize> = vars.iter().map(|&v| self.alphabet_size(v)).collect();
        let mut out = vec![0.0; dims.iter().product()];
        for (p, ids) in self.cells() {
            let mut idx = 0;
            for (&v, &d) in vars.iter().zip(&dims) {
                idx = idx * d + ids[slot(v)];
            }
            out[idx] += p;
        }
        out
    }

    /// `I(a; b)` in nats.
    pub fn mutual_info(&self, a: Var, b: Var) -> f64 {
        let (na, nb) = (self.alphabet_size(a), self.alphabet_size(b));
        let pab = self.marginal(&[a, b]);
        let pa = self.marginal(&[a]);
        let pb = self.marginal(&[b]);
        let mut sum = 0.0;
        for i in 0..na {
            for j in 0..nb {
                let p = pab[i * nb + j];
                if p > 0.0 {
                    sum += p * (p / (pa[i] * pb[j])).ln();
                }
            }
        }
        sum
    }

    /// `I(a; b | c)` in nats.
    pub fn conditional_mi(&self, a: Var, b: Var, c: Var) -> f64 {
        let (na, nb, nc) = (self.alphabet_size(a), self.alphabet_size(b), self.alphabet_size(c));
        let pabc = self.marginal(&[a, b, c]);
        let pac = self.marginal(&[a, c]);
        let pbc = self.marginal(&[b, c]);
        let pc = self.marginal(&[c]);
        let mut sum = 0.0;
        for i in 0..na {
            for j in 0..nb {
                for k in 0..nc {
                    let p = pabc[(i * nb + j) * nc + k];
                    if p > 0.0 {
                        sum += p * (p * pc[k] / (pac[i * nc + k] * pbc[j * nc + k])).ln();
                    }
                }
            }
        }
        sum
    }

    /// Largest deviation of `p(a, b)` from `p(a)·p(b)`.
    fn independence_gap(&self, a: &[Var], b: &[Var]) -> f64 {
        let joint: Vec<Var> = a.iter().chain(b).copied().collect();
        let pab = self.marginal(&joint);
        let pa = self.marginal(a);
        let pb = self.marginal(b);
        let nb = pb.len();
        pab.iter().enumerate().map(|(i, &p)| (p - pa[i / nb] * pb[i % nb]).abs()).fold(0.0, f64::max)
    }

    /// Property 1: `z_f` and `z_b` independent.
    pub fn property1_gap(&self) -> f64 {
        self.independence_gap(&[Var::Zf], &[Var::Zb])
    }

    /// Property 2: `y` and `z_b` independent.
    pub fn property2_gap(&self) -> f64 {
        self.independence_gap(&[Var::Y], &[Var::Zb])
    }

    /// `(y, z_f)` jointly independent of `z_b`.
    pub fn joint_independence_gap(&self) -> f64 {
        self.independence_gap(&[Var::Y, Var::Zf], &[Var::Zb])
    }

    fn require_properties(&self) -> Result<()> {
        let p1 = self.property1_gap();
        if p1 > PROB_TOL {
            return Err(OsrError::Precondition(format!("z_f and z_b are dependent (gap {p1:e})")));
        }
        let p2 = self.property2_gap();
        if p2 > PROB_TOL {
            return Err(OsrError::Precondition(format!("y and z_b are dependent (gap {p2:e})")));
        }
        Ok(())
    }

    /// `I(y; z_f | z_g)`, the information about `y` in `z_f` that `z_g` loses.
    pub fn info_loss(&self) -> f64 {
        self.conditional_mi(Var::Y, Var::Zf, Var::Zg)
    }

    /// Residual of `I(y; z_g|z_f) + I(y; z_f) = I(y; z_f|z_g) + I(y; z_g)`.
    pub fn chain_rule_residual(&self) -> f64 {
        let lhs = self.conditional_mi(Var::Y, Var::Zg, Var::Zf) + self.mutual_info(Var::Y, Var::Zf);
        let rhs = self.info_loss() + self.mutual_info(Var::Y, Var::Zg);
        (lhs - rhs).abs()
    }
}

fn slot(v: Var) -> usize {
    match v {
        Var::Y => 0,
        Var::Zf => 1,
        Var::Zb => 2,
        Var::Zg => 3,
    }
}

/// `|I(y; z_g) − (I(y; z_f) − I(y; z_f | z_g))|`.
///
/// Besides the two pairwise properties this requires `(y, z_f)` to be jointly
/// independent of `z_b`: with `y = z_f XOR z_b` over fair bits both pairwise
/// properties hold yet the decomposition fails by `ln 2`.
pub fn check_theorem1(joint: &DiscreteJoint) -> Result<f64> {
    joint.require_properties()?;
    let gap = joint.joint_independence_gap();
    if gap > PROB_TOL {
        return Err(OsrError::Precondition(format!(
            "(y, z_f) is not jointly independent of z_b (gap {gap:e}); the pairwise properties alone do not suffice"
        )));
    }
    let residual = joint.mutual_info(Var::Y, Var::Zg) - (joint.mutual_info(Var::Y, Var::Zf) - joint.info_loss());
    Ok(residual.abs())
}

/// `I(y; z_f | z_g)` for one of the two loss-free solutions.
pub fn check_theorem2(joint: &DiscreteJoint, mode: Theorem2Mode) -> Result<f64> {
    match mode {
        Theorem2Mode::Constant => {
            if joint.zb_values.len() != 1 {
                return Err(OsrError::Precondition(format!(
                    "constant mode needs a single z_b value, got {}",
                    joint.zb_values.len()
                )));
            }
            if joint.rule == GlobalRule::Concat {
                return Err(OsrError::Precondition("constant mode needs the convex z_g rule".into()));
            }
        }
        Theorem2Mode::Orthogonal => {
            if joint.rule != GlobalRule::Concat {
                return Err(OsrError::Precondition("orthogonal mode needs the concatenation z_g rule".into()));
            }
            joint.require_properties()?;
        }
    }
    Ok(joint.info_loss())
}

/// `λ = 1/2`, fair independent bits `z_f, z_b` and `y = z_f`: `(0,1)` and
/// `(1,0)` collide in `z_g`, losing `ln(2)/2` nats.
pub fn collision_example() -> DiscreteJoint {
    let mut probs = vec![0.0; 8];
    for f in 0..2 {
        for b in 0..2 {
            probs[(f * 2 + f) * 2 + b] = 0.25;
        }
    }
    DiscreteJoint::new(probs, 2, vec![0, 1], vec![0, 1], GlobalRule::Convex { num: 1, den: 2 })
        .expect("collision example is a valid joint")
}

fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    // Occasional exact zeros exercise the support handling.
    let raw: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.1) { 0.0 } else { -rng.random::<f64>().max(1e-300).ln() }).collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        let mut v = vec![0.0; n];
        v[rng.random_range(0..n)] = 1.0;
        return v;
    }
    raw.iter().map(|r| r / total).collect()
}

fn random_alphabet(rng: &mut impl Rng, n: usize) -> Vec<i64> {
    let mut pool: Vec<i64> = (-6..=6).collect();
    for i in 0..n {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(n);
    pool
}

fn random_rule(rng: &mut impl Rng) -> GlobalRule {
    let den = rng.random_range(2..=9);
    GlobalRule::Convex { num: rng.random_range(1..den), den }
}

fn build(q_yf: &[f64], r_b: &[f64], num_y: usize, zf: Vec<i64>, zb: Vec<i64>, rule: GlobalRule) -> DiscreteJoint {
    let nb = r_b.len();
    let mut probs: Vec<f64> = q_yf.iter().flat_map(|&q| r_b.iter().map(move |&r| q * r)).collect();
    // Renormalize so rounding in the products cannot push the sum off one.
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    debug_assert_eq!(probs.len(), q_yf.len() * nb);
    DiscreteJoint::new(probs, num_y, zf, zb, rule).expect("constructed joint is valid")
}

/// A joint with `(y, z_f)` independent of `z_b`, random alphabets up to `max_size`.
pub fn random_valid_joint(rng: &mut impl Rng, max_size: usize, rule: Option<GlobalRule>) -> DiscreteJoint {
    let max = max_size.clamp(1, MAX_ALPHABET);
    let (ny, nf, nb) = (rng.random_range(1..=max), rng.random_range(1..=max), rng.random_range(1..=max));
    let rule = rule.unwrap_or_else(|| random_rule(rng));
    let q = random_simplex(rng, ny * nf);
    let r = random_simplex(rng, nb);
    let zf = random_alphabet(rng, nf);
    let zb = random_alphabet(rng, nb);
    build(&q, &r, ny, zf, zb, rule)
}

/// Like [`random_valid_joint`] with a single `z_b` value and a convex rule.
pub fn random_constant_joint(rng: &mut impl Rng, max_size: usize) -> DiscreteJoint {
    let max = max_size.clamp(1, MAX_ALPHABET);
    let (ny, nf) = (rng.random_range(1..=max), rng.random_range(1..=max));
    let rule = random_rule(rng);
    let q = random_simplex(rng, ny * nf);
    let zf = random_alphabet(rng, nf);
    let zb = vec![rng.random_range(-6..=6)];
    build(&q, &[1.0], ny, zf, zb, rule)
}

/// An unconstrained random joint.
pub fn random_joint(rng: &mut impl Rng, max_size: usize, rule: Option<GlobalRule>) -> DiscreteJoint {
    let max = max_size.clamp(1, MAX_ALPHABET);
    let (ny, nf, nb) = (rng.random_range(1..=max), rng.random_range(1..=max), rng.random_range(1..=max));
    let rule = rule.unwrap_or_else(|| random_rule(rng));
    let probs = random_simplex(rng, ny * nf * nb);
    DiscreteJoint::new(probs, ny, random_alphabet(rng, nf), random_alphabet(rng, nb), rule).expect("random joint is valid")
}

/// Maximum residuals over `n` randomized joints.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TheoremSummary {
    pub trials: usize,
    pub theorem1: f64,
    pub theorem2_constant: f64,
    pub theorem2_orthogonal: f64,
    pub chain_rule: f64,
    /// Information lost by the collision example; reported only.
    pub collision_loss: f64,
}

pub fn run_theorem_checks(n: usize, seed: u64) -> Result<TheoremSummary> {
    let mut rng = crate::rng::derive_rng(seed, &[0x7468_656f]);
    let mut s = TheoremSummary { trials: n, ..TheoremSummary::default() };
    for _ in 0..n {
        let j = random_valid_joint(&mut rng, MAX_ALPHABET, None);
        s.theorem1 = s.theorem1.max(check_theorem1(&j)?);
        let c = random_constant_joint(&mut rng, MAX_ALPHABET);
        s.theorem1 = s.theorem1.max(check_theorem1(&c)?);
        s.theorem2_constant = s.theorem2_constant.max(check_theorem2(&c, Theorem2Mode::Constant)?);
        let o = random_valid_joint(&mut rng, MAX_ALPHABET, Some(GlobalRule::Concat));
        s.theorem2_orthogonal = s.theorem2_orthogonal.max(check_theorem2(&o, Theorem2Mode::Orthogonal)?);
        let any = random_joint(&mut rng, MAX_ALPHABET, None);
        s.chain_rule = s.chain_rule.max(any.chain_rule_residual());
    }
    s.collision_loss = collision_example().info_loss();
    Ok(s)
}
