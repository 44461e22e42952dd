//! Flat run configuration shared by the command line and experiment manifests.
//!
//! Every key is optional and falls back to the desk-scale default; unknown
//! keys are rejected so that a typo never silently runs the default.

use std::path::PathBuf;

use crate::error::{OsrError, Result};
use crate::experiments::{ExperimentSpec, OsrDataSpec};
use crate::kvformat::{join_list, parse_list, KvMap};
use crate::model::ConvNetSpec;
use crate::scoring::{DEFAULT_ENERGY_T, DEFAULT_ODIN_EPS, DEFAULT_ODIN_T};
use crate::training::TrainConfig;

pub const DATA_KEYS: [&str; 10] = [
    "num_fg_classes",
    "num_bg_classes",
    "known_classes",
    "outlier_classes",
    "r",
    "train_per_class",
    "test_per_class",
    "height",
    "width",
    "data_seed",
];

pub const TRAIN_KEYS: [&str; 16] = [
    "widths",
    "augmentation",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "s",
    "k",
    "pairing",
    "allow_self_pair",
    "oe_alpha",
    "mix_alpha",
    "beta",
    "cam_source",
    "seed",
];

pub const SCORE_KEYS: [&str; 5] = ["score", "energy_t", "odin_t", "odin_eps", "ridge"];

pub const EXPERIMENT_KEYS: [&str; 7] = ["name", "seeds", "workers", "s_values", "k_values", "r_values", "out_dir"];

pub fn is_known_key(key: &str) -> bool {
    DATA_KEYS.iter().chain(&TRAIN_KEYS).chain(&SCORE_KEYS).chain(&EXPERIMENT_KEYS).any(|k| *k == key)
}

/// Which score function `score` applies, with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    /// One of `msp`, `energy`, `odin`, `mahalanobis`, `feature_norm`.
    pub method: String,
    pub energy_t: f64,
    pub odin_t: f64,
    pub odin_eps: f64,
    /// Covariance ridge for Mahalanobis; `None` picks it from the data.
    pub ridge: Option<f64>,
}

pub const SCORE_METHODS: [&str; 5] = ["msp", "energy", "odin", "mahalanobis", "feature_norm"];

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            method: "msp".into(),
            energy_t: DEFAULT_ENERGY_T,
            odin_t: DEFAULT_ODIN_T,
            odin_eps: DEFAULT_ODIN_EPS,
            ridge: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub s_values: Vec<f64>,
    pub k_values: Vec<f64>,
    pub r_values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            s_values: vec![0.0, 0.0625, 0.25],
            k_values: vec![0.0, 0.25, 1.0],
            r_values: vec![0.5, 0.7, 0.9],
        }
    }
}

/// Everything one command needs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentSpec,
    pub score: ScoreConfig,
    pub sweep: SweepConfig,
}

fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| OsrError::Config(format!("{key}: cannot parse {raw:?}")))
}

fn bool_value(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(OsrError::Config(format!("{key}: expected true or false, got {raw:?}"))),
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(OsrError::Parameter(format!("{key} must be positive, got {v}")))
    }
}

impl RunConfig {
    /// Defaults overlaid with `kv`; the result is validated.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (key, raw) in kv.iter() {
            cfg.apply(key, raw)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvMap::parse(text)?)
    }

    fn apply(&mut self, key: &str, raw: &str) -> Result<()> {
        let exp = &mut self.experiment;
        let data = &mut exp.data;
        let train = &mut exp.train;
        match key {
            "num_fg_classes" => data.num_fg_classes = value(key, raw)?,
            "num_bg_classes" => data.num_bg_classes = value(key, raw)?,
            "known_classes" => data.known = parse_list(raw, key)?,
            "outlier_classes" => data.outliers = parse_list(raw, key)?,
            "r" => data.correlation_r = value(key, raw)?,
            "train_per_class" => data.train_per_class = value(key, raw)?,
            "test_per_class" => data.test_per_class = value(key, raw)?,
            "height" => data.height = value(key, raw)?,
            "width" => data.width = value(key, raw)?,
            "data_seed" => data.seed = value(key, raw)?,
            "widths" => exp.widths = parse_list(raw, key)?,
            "augmentation" => train.augmentation = raw.parse()?,
            "epochs" => train.epochs = value(key, raw)?,
            "batch_size" => train.batch_size = value(key, raw)?,
            "lr" => train.lr = value(key, raw)?,
            "momentum" => train.momentum = value(key, raw)?,
            "weight_decay" => train.weight_decay = value(key, raw)?,
            "s" => train.mix.cut_area_ratio = value(key, raw)?,
            "k" => train.mix.mask_ratio = value(key, raw)?,
            "pairing" => train.mix.pairing = raw.parse()?,
            "allow_self_pair" => train.mix.allow_self_pair = bool_value(key, raw)?,
            "oe_alpha" => train.oe_alpha = value(key, raw)?,
            "mix_alpha" => train.mix_alpha = value(key, raw)?,
            "beta" => train.bank_beta = value(key, raw)?,
            "cam_source" => train.cam_source = raw.parse()?,
            "seed" => train.seed = value(key, raw)?,
            "score" => self.score.method = raw.to_string(),
            "energy_t" => self.score.energy_t = value(key, raw)?,
            "odin_t" => self.score.odin_t = value(key, raw)?,
            "odin_eps" => self.score.odin_eps = value(key, raw)?,
            "ridge" => self.score.ridge = if raw == "auto" { None } else { Some(value(key, raw)?) },
            "name" => exp.name = raw.to_string(),
            "seeds" => exp.seeds = parse_list(raw, key)?,
            "workers" => exp.workers = value(key, raw)?,
            "s_values" => self.sweep.s_values = parse_list(raw, key)?,
            "k_values" => self.sweep.k_values = parse_list(raw, key)?,
            "r_values" => self.sweep.r_values = parse_list(raw, key)?,
            "out_dir" => exp.output = (!raw.is_empty()).then(|| PathBuf::from(raw)),
            _ => return Err(OsrError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let exp = &self.experiment;
        exp.data.validate()?;
        exp.train.validate()?;
        self.net_spec().validate()?;
        if exp.seeds.is_empty() {
            return Err(OsrError::Config("seeds must list at least one seed".into()));
        }
        if exp.workers == 0 {
            return Err(OsrError::Config("workers must be at least 1".into()));
        }
        if !SCORE_METHODS.contains(&self.score.method.as_str()) {
            return Err(OsrError::Config(format!(
                "unknown score {:?}, expected one of {}",
                self.score.method,
                SCORE_METHODS.join(", ")
            )));
        }
        positive("energy_t", self.score.energy_t)?;
        positive("odin_t", self.score.odin_t)?;
        if !(self.score.odin_eps >= 0.0 && self.score.odin_eps.is_finite()) {
            return Err(OsrError::Parameter(format!("odin_eps must be non-negative, got {}", self.score.odin_eps)));
        }
        if let Some(r) = self.score.ridge {
            positive("ridge", r)?;
        }
        for &s in &self.sweep.s_values {
            if !(0.0..=1.0).contains(&s) {
                return Err(OsrError::Parameter(format!("s_values: s must lie in [0, 1], got {s}")));
            }
        }
        for &k in &self.sweep.k_values {
            if !(0.0..=1.0).contains(&k) {
                return Err(OsrError::Parameter(format!("k_values: k must lie in [0, 1], got {k}")));
            }
        }
        let lo = 1.0 / exp.data.num_bg_classes as f64;
        for &r in &self.sweep.r_values {
            if !(r >= lo - 1e-12 && r <= 1.0) {
                return Err(OsrError::Parameter(format!("r_values: r must lie in [{lo}, 1], got {r}")));
            }
        }
        Ok(())
    }

    pub fn net_spec(&self) -> ConvNetSpec {
        self.experiment.net_spec()
    }

    /// Every key with its effective value; parses back to an equal config.
    pub fn to_kv(&self) -> KvMap {
        let exp = &self.experiment;
        let mut kv = KvMap::new();
        kv.set("name", &exp.name);
        kv.merge(&data_to_kv(&exp.data));
        kv.set("widths", join_list(&exp.widths));
        kv.merge(&train_to_kv(&exp.train));
        kv.set("score", &self.score.method);
        kv.set("energy_t", format!("{:?}", self.score.energy_t));
        kv.set("odin_t", format!("{:?}", self.score.odin_t));
        kv.set("odin_eps", format!("{:?}", self.score.odin_eps));
        kv.set("ridge", self.score.ridge.map_or("auto".to_string(), |r| format!("{r:?}")));
        kv.set("seeds", join_list(&exp.seeds));
        kv.set("workers", exp.workers);
        kv.set("s_values", join_list(&self.sweep.s_values));
        kv.set("k_values", join_list(&self.sweep.k_values));
        kv.set("r_values", join_list(&self.sweep.r_values));
        kv.set("out_dir", exp.output.as_ref().map_or(String::new(), |p| p.display().to_string()));
        kv
    }
}

pub fn data_to_kv(d: &OsrDataSpec) -> KvMap {
    let mut kv = KvMap::new();
    kv.set("num_fg_classes", d.num_fg_classes);
    kv.set("num_bg_classes", d.num_bg_classes);
    kv.set("known_classes", join_list(&d.known));
    kv.set("outlier_classes", join_list(&d.outliers));
    kv.set("r", format!("{:?}", d.correlation_r));
    kv.set("train_per_class", d.train_per_class);
    kv.set("test_per_class", d.test_per_class);
    kv.set("height", d.height);
    kv.set("width", d.width);
    kv.set("data_seed", d.seed);
    kv
}

pub fn train_to_kv(t: &TrainConfig) -> KvMap {
    let mut kv = KvMap::new();
    kv.set("augmentation", t.augmentation.name());
    kv.set("epochs", t.epochs);
    kv.set("batch_size", t.batch_size);
    kv.set("lr", format!("{:?}", t.lr));
    kv.set("momentum", format!("{:?}", t.momentum));
    kv.set("weight_decay", format!("{:?}", t.weight_decay));
    kv.set("s", format!("{:?}", t.mix.cut_area_ratio));
    kv.set("k", format!("{:?}", t.mix.mask_ratio));
    kv.set("pairing", t.mix.pairing);
    kv.set("allow_self_pair", t.mix.allow_self_pair);
    kv.set("oe_alpha", format!("{:?}", t.oe_alpha));
    kv.set("mix_alpha", format!("{:?}", t.mix_alpha));
    kv.set("beta", format!("{:?}", t.bank_beta));
    kv.set("cam_source", t.cam_source);
    kv.set("seed", t.seed);
    kv
}

/// Split one `--set key=value` override.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let (key, value) =
        arg.split_once('=').ok_or_else(|| OsrError::Config(format!("override {arg:?} is not key=value")))?;
    let key = key.trim();
    if !is_known_key(key) {
        return Err(OsrError::Config(format!("unknown config key {key:?}")));
    }
    Ok((key.to_string(), value.trim().to_string()))
}

/// Config file text (if any) overlaid with `overrides`, later wins.
pub fn load(file_text: Option<&str>, overrides: &[String]) -> Result<RunConfig> {
    let mut kv = match file_text {
        Some(text) => KvMap::parse(text)?,
        None => KvMap::new(),
    };
    for o in overrides {
        let (k, v) = parse_override(o)?;
        kv.set(k, v);
    }
    RunConfig::from_kv(&kv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn override_beats_file() {
        let cfg = load(Some("seed = 3\nepochs = 5\n"), &["seed=7".into()]).unwrap();
        assert_eq!(cfg.experiment.train.seed, 7);
        assert_eq!(cfg.experiment.train.epochs, 5);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(RunConfig::parse("sed = 3"), Err(OsrError::Config(_))));
        assert!(matches!(parse_override("lrr=0.1"), Err(OsrError::Config(_))));
        assert!(matches!(parse_override("lr"), Err(OsrError::Config(_))));
    }

    #[test]
    fn range_errors() {
        let err = load(None, &["k=1.5".into()]).unwrap_err();
        assert!(matches!(err, OsrError::Parameter(_)), "{err}");
        assert!(load(None, &["s=-0.1".into()]).is_err());
        assert!(load(None, &["r=0.05".into()]).is_err());
        assert!(load(None, &["score=entropyy".into()]).is_err());
        assert!(load(None, &["k_values=0.5,2".into()]).is_err());
        assert!(load(None, &["known_classes=2,8".into()]).is_err());
    }

    #[test]
    fn values_parse() {
        let cfg = load(
            None,
            &["augmentation=plain".into(), "pairing=different".into(), "ridge=0.01".into(), "widths=4,8".into()],
        )
        .unwrap();
        assert_eq!(cfg.experiment.train.augmentation, crate::training::Augmentation::None);
        assert_eq!(cfg.score.ridge, Some(0.01));
        assert_eq!(cfg.experiment.widths, vec![4, 8]);
    }
}
