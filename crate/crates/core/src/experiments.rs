//! Desk-scale experiment drivers: the training/test variant grid, the outlier
//! exposure comparison, the augmentation comparison, the `(s, k)` sweep and
//! the correlation sweep.
//!
//! Each driver trains one model per `(method, seed)` cell, scores the test
//! splits with MSP and emits a [`ResultTable`] with per-seed values plus
//! medians. Cells are independent and may run on a worker pool.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::Rng as _;

use crate::error::{OsrError, Result};
use crate::image::Image;
use crate::kvformat::{join_list, KvMap};
use crate::metrics;
use crate::mixer::MixConfig;
use crate::model::{ConvNet, ConvNetSpec};
use crate::rng::{derive_rng, derive_seed, tag};
use crate::scoring::{score_images, ScoreMethod, ScoreRecord};
use crate::synthdata::{
    generate_dataset_with_stats, make_variant, CorrelationSpec, LabeledImage, NormStats, VariantKind,
};
use crate::training::{train, Augmentation, CamSource, TrainConfig, TrainData};

/// Layout of the synthetic open-set benchmark.
///
/// Known class `known[j]` is designated to background `j`. Unknown classes
/// (neither known nor outlier) are designated to the known backgrounds as
/// well, which makes their test images "spurious" unknowns; the disjoint
/// unknown split redraws them on the backgrounds no known class uses.
#[derive(Debug, Clone, PartialEq)]
pub struct OsrDataSpec {
    pub num_fg_classes: usize,
    pub num_bg_classes: usize,
    pub known: Vec<usize>,
    pub outliers: Vec<usize>,
    pub correlation_r: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for OsrDataSpec {
    fn default() -> Self {
        OsrDataSpec {
            num_fg_classes: 12,
            num_bg_classes: 6,
            known: vec![2, 3, 4, 6],
            outliers: vec![8, 9, 10, 11],
            correlation_r: 0.9,
            train_per_class: 150,
            test_per_class: 50,
            height: 16,
            width: 16,
            seed: 1,
        }
    }
}

impl OsrDataSpec {
    pub fn unknown(&self) -> Vec<usize> {
        (0..self.num_fg_classes).filter(|c| !self.known.contains(c) && !self.outliers.contains(c)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.known.len();
        if k < 2 {
            return Err(OsrError::Config(format!("need at least 2 known classes, got {k}")));
        }
        let mut all: Vec<usize> = self.known.iter().chain(&self.outliers).copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(OsrError::Config("known and outlier classes must be distinct".into()));
        }
        if let Some(&c) = all.iter().find(|&&c| c >= self.num_fg_classes) {
            return Err(OsrError::Config(format!("class {c} outside {} foreground classes", self.num_fg_classes)));
        }
        if self.unknown().is_empty() {
            return Err(OsrError::Config("no class left over as unknown".into()));
        }
        if self.num_bg_classes <= k {
            return Err(OsrError::Config(format!(
                "{} backgrounds leave none disjoint from the {k} known classes",
                self.num_bg_classes
            )));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(OsrError::Parameter("images per class must be positive".into()));
        }
        self.correlation(self.correlation_r, self.train_per_class, 0, self.bg_table()).validate()
    }

    /// Designated background of every foreground class.
    pub fn bg_table(&self) -> Vec<usize> {
        let k = self.known.len();
        let mut table = vec![0; self.num_fg_classes];
        for (j, &c) in self.known.iter().enumerate() {
            table[c] = j;
        }
        for (j, &c) in self.unknown().iter().enumerate() {
            table[c] = j % k;
        }
        for (j, &c) in self.outliers.iter().enumerate() {
            table[c] = j % self.num_bg_classes;
        }
        table
    }

    /// Table placing the unknown classes on the backgrounds no known class owns.
    pub fn disjoint_table(&self) -> Vec<usize> {
        let k = self.known.len();
        let spare = self.num_bg_classes - k;
        let mut table = self.bg_table();
        for (j, &c) in self.unknown().iter().enumerate() {
            table[c] = k + j % spare;
        }
        table
    }

    fn correlation(&self, r: f64, per_class: usize, stream: u64, table: Vec<usize>) -> CorrelationSpec {
        let mut spec = CorrelationSpec::new(self.num_fg_classes, self.num_bg_classes, r, per_class);
        spec.height = self.height;
        spec.width = self.width;
        spec.seed = derive_seed(self.seed, &[stream]);
        spec.designated_bg = Some(table);
        spec
    }
}

/// Generated splits of one [`OsrDataSpec`], normalized with the statistics of
/// the known training images. Known images carry labels `0..K`.
#[derive(Debug, Clone)]
pub struct OsrData {
    pub spec: OsrDataSpec,
    pub train: Vec<LabeledImage>,
    pub outliers: Vec<Image>,
    pub test_known: Vec<LabeledImage>,
    pub spurious_unknown: Vec<LabeledImage>,
    pub disjoint_unknown: Vec<LabeledImage>,
    pub stats: NormStats,
}

impl OsrData {
    pub fn num_known(&self) -> usize {
        self.spec.known.len()
    }
}

fn relabel(images: Vec<LabeledImage>, known: &[usize], keep: impl Fn(usize) -> bool) -> Vec<LabeledImage> {
    images
        .into_iter()
        .filter(|img| keep(img.label))
        .map(|mut img| {
            match known.iter().position(|&c| c == img.label) {
                Some(j) => {
                    img.label = j;
                    img.is_known = true;
                }
                None => img.is_known = false,
            }
            img
        })
        .collect()
}

pub fn build_osr_data(spec: &OsrDataSpec) -> Result<OsrData> {
    spec.validate()?;
    let identity = NormStats::identity();
    let raw = |r: f64, per: usize, stream: u64, table: Vec<usize>| {
        generate_dataset_with_stats(&spec.correlation(r, per, stream, table), Some(&identity)).map(|d| d.images)
    };
    let is_known = |c: usize| spec.known.contains(&c);
    let unknown = spec.unknown();
    let is_unknown = |c: usize| unknown.contains(&c);

    let train_all = raw(spec.correlation_r, spec.train_per_class, 1, spec.bg_table())?;
    let known_raw: Vec<Image> = train_all.iter().filter(|i| is_known(i.label)).map(|i| i.pixels.clone()).collect();
    let stats = NormStats::fit(&known_raw);
    let normalize = |mut images: Vec<LabeledImage>| {
        images.iter_mut().for_each(|img| stats.apply(&mut img.pixels));
        images
    };
    let outliers: Vec<Image> = train_all
        .iter()
        .filter(|i| spec.outliers.contains(&i.label))
        .map(|i| {
            let mut px = i.pixels.clone();
            stats.apply(&mut px);
            px
        })
        .collect();
    let train = normalize(relabel(train_all, &spec.known, is_known));
    let test_known = normalize(relabel(raw(spec.correlation_r, spec.test_per_class, 2, spec.bg_table())?, &spec.known, is_known));
    let spurious_unknown = normalize(relabel(raw(1.0, spec.test_per_class, 3, spec.bg_table())?, &spec.known, is_unknown));
    let disjoint_unknown =
        normalize(relabel(raw(1.0, spec.test_per_class, 4, spec.disjoint_table())?, &spec.known, is_unknown));
    Ok(OsrData { spec: spec.clone(), train, outliers, test_known, spurious_unknown, disjoint_unknown, stats })
}

/// Apply `kind` to every image. Donors come from `donors` when given, else
/// from `images` itself (never the image's own slot).
pub fn variant_set(
    images: &[LabeledImage],
    donors: Option<&[LabeledImage]>,
    kind: VariantKind,
    seed: u64,
) -> Result<Vec<LabeledImage>> {
    if kind != VariantKind::Raw && images.iter().chain(donors.unwrap_or(&[])).any(|i| i.fg_mask.is_none()) {
        return Err(OsrError::Capability(format!("{} variant needs foreground masks", kind.name())));
    }
    let mut rng = derive_rng(seed, &[tag::VARIANT, kind as u64]);
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let donor = match (kind.needs_donor(), donors) {
                (false, _) => None,
                (true, Some(pool)) if !pool.is_empty() => Some(&pool[rng.random_range(0..pool.len())]),
                (true, Some(_)) => return Err(OsrError::Argument("empty donor pool".into())),
                (true, None) if images.len() == 1 => Some(img),
                (true, None) => {
                    let mut d = rng.random_range(0..images.len() - 1);
                    if d >= i {
                        d += 1;
                    }
                    Some(&images[d])
                }
            };
            let mut out = make_variant(img, kind, donor)?;
            out.is_known = img.is_known;
            Ok(out)
        })
        .collect()
}

/// Shared experiment settings; each driver adds its own method/setting lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub data: OsrDataSpec,
    pub widths: Vec<usize>,
    /// Base training settings; drivers override the augmentation and seed.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            data: OsrDataSpec::default(),
            widths: vec![8, 16, 32],
            train: desk_train_config(),
            seeds: vec![0, 1, 2, 3, 4],
            workers: 1,
            output: None,
        }
    }
}

/// Training settings used by the experiments at 16x16 desk scale.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig { epochs: 60, batch_size: 64, lr: 0.05, augmentation: Augmentation::BackMix, ..TrainConfig::default() }
}

impl ExperimentSpec {
    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(OsrError::Config("experiment needs at least one seed".into()));
        }
        if self.workers == 0 {
            return Err(OsrError::Config("workers must be at least 1".into()));
        }
        self.data.validate()?;
        self.train.validate()?;
        self.net_spec().validate()
    }

    pub fn net_spec(&self) -> ConvNetSpec {
        ConvNetSpec::new(self.data.height, self.data.width, self.widths.clone(), self.data.known.len())
    }

    pub fn manifest(&self) -> KvMap {
        let mut kv = crate::config::data_to_kv(&self.data);
        kv.set("experiment", &self.name);
        kv.set("widths", join_list(&self.widths));
        kv.merge(&crate::config::train_to_kv(&self.train));
        kv.set("seeds", join_list(&self.seeds));
        kv.set("workers", self.workers);
        kv
    }
}

/// Display name of an augmentation in result tables.
pub fn method_name(aug: Augmentation) -> &'static str {
    match aug {
        Augmentation::None => "plain",
        other => other.name(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub setting: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Per-seed results of one experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub experiment: String,
    pub rows: Vec<ResultRow>,
}

pub const RESULT_HEADER: &str = "experiment\tmethod\tsetting\tseed\tmetric\tvalue";

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl ResultTable {
    pub fn new(experiment: &str) -> Self {
        ResultTable { experiment: experiment.to_string(), rows: Vec::new() }
    }

    pub fn push(&mut self, method: &str, setting: &str, seed: u64, metric: &str, value: f64) {
        self.rows.push(ResultRow {
            method: method.to_string(),
            setting: setting.to_string(),
            seed,
            metric: metric.to_string(),
            value,
        });
    }

    /// Values ordered by seed.
    pub fn values(&self, method: &str, setting: &str, metric: &str) -> Vec<f64> {
        let mut rows: Vec<&ResultRow> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.setting == setting && r.metric == metric)
            .collect();
        rows.sort_by_key(|r| r.seed);
        rows.iter().map(|r| r.value).collect()
    }

    pub fn median(&self, method: &str, setting: &str, metric: &str) -> Option<f64> {
        median(&self.values(method, setting, metric))
    }

    /// Distinct `(method, setting, metric)` triples in first-seen order.
    pub fn cells(&self) -> Vec<(String, String, String)> {
        let mut seen: Vec<(String, String, String)> = Vec::new();
        for r in &self.rows {
            let key = (r.method.clone(), r.setting.clone(), r.metric.clone());
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        seen
    }

    /// Per-seed rows followed by one `median` row per cell.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{RESULT_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:?}\n",
                self.experiment, r.method, r.setting, r.seed, r.metric, r.value
            ));
        }
        for (m, s, metric) in self.cells() {
            let med = self.median(&m, &s, &metric).expect("cell has rows");
            out.push_str(&format!("{}\t{m}\t{s}\tmedian\t{metric}\t{med:?}\n", self.experiment));
        }
        out
    }

    /// Inverse of [`ResultTable::to_tsv`]; median rows are recomputed, not read.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(RESULT_HEADER) {
            return Err(OsrError::Data("result table: missing header".into()));
        }
        let mut table = ResultTable::default();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let [exp, method, setting, seed, metric, value] = fields[..] else {
                return Err(OsrError::Data(format!("result table line {}: expected 6 fields", n + 2)));
            };
            if n == 0 {
                table.experiment = exp.to_string();
            } else if exp != table.experiment {
                return Err(OsrError::Data(format!("result table line {}: mixed experiments", n + 2)));
            }
            let value: f64 =
                value.parse().map_err(|_| OsrError::Data(format!("result table line {}: bad value {value:?}", n + 2)))?;
            if seed == "median" {
                continue;
            }
            let seed: u64 =
                seed.parse().map_err(|_| OsrError::Data(format!("result table line {}: bad seed {seed:?}", n + 2)))?;
            table.push(method, setting, seed, metric, value);
        }
        Ok(table)
    }

    /// Write `<dir>/<experiment>.tsv` and its manifest.
    pub fn write(&self, dir: &Path, manifest: &KvMap) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| OsrError::io(dir, e))?;
        let tsv = dir.join(format!("{}.tsv", self.experiment));
        std::fs::write(&tsv, self.to_tsv()).map_err(|e| OsrError::io(&tsv, e))?;
        let kv = dir.join(format!("{}.manifest", self.experiment));
        std::fs::write(&kv, manifest.to_text()).map_err(|e| OsrError::io(&kv, e))
    }
}

/// Canonical form of a training config: fields the augmentation ignores are
/// reset, and BackMix with `s = 0` or `k = 1` maps to its exact reduction.
pub fn canonical_config(cfg: &TrainConfig) -> TrainConfig {
    let mut c = cfg.clone();
    let d = TrainConfig::default();
    if c.augmentation == Augmentation::BackMix && c.mix.cut_area_ratio == 0.0 {
        c.augmentation = Augmentation::None;
    }
    if c.augmentation == Augmentation::BackMix && c.mix.mask_ratio == 1.0 {
        c.augmentation = Augmentation::Cutout;
    }
    if c.augmentation == Augmentation::Oe && c.oe_alpha == 0.0 {
        c.augmentation = Augmentation::None;
    }
    let uses_cut = matches!(c.augmentation, Augmentation::BackMix | Augmentation::Cutout);
    if !uses_cut {
        c.mix.cut_area_ratio = d.mix.cut_area_ratio;
    }
    if c.augmentation != Augmentation::BackMix {
        c.mix = MixConfig { cut_area_ratio: c.mix.cut_area_ratio, ..MixConfig::default() };
        c.bank_beta = d.bank_beta;
        c.cam_source = CamSource::Original;
    }
    if c.augmentation != Augmentation::Oe {
        c.oe_alpha = d.oe_alpha;
    }
    if !matches!(c.augmentation, Augmentation::Mixup | Augmentation::Cutmix) {
        c.mix_alpha = d.mix_alpha;
    }
    c.mix.seed = 0;
    c
}

/// One training run; the inner lock is held while the model trains so
/// concurrent requests for the same key wait instead of retraining.
type Slot = Arc<Mutex<Option<Arc<ConvNet>>>>;

/// Trained models shared across drivers, keyed by data, architecture,
/// training variant and canonical config.
#[derive(Default)]
pub struct RunCache {
    slots: Mutex<HashMap<String, Slot>>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("cache lock").values().filter(|s| s.lock().expect("slot lock").is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_or_train(&self, key: String, train: impl FnOnce() -> Result<ConvNet>) -> Result<Arc<ConvNet>> {
        let slot = self.slots.lock().expect("cache lock").entry(key).or_default().clone();
        let mut guard = slot.lock().expect("slot lock");
        if let Some(model) = guard.as_ref() {
            return Ok(model.clone());
        }
        let model = Arc::new(train()?);
        *guard = Some(model.clone());
        Ok(model)
    }
}

/// Train (or fetch) one model on `images` with `cfg`.
fn trained(
    cache: Option<&RunCache>,
    data: &OsrData,
    net: &ConvNetSpec,
    images: &[LabeledImage],
    variant: VariantKind,
    cfg: &TrainConfig,
) -> Result<Arc<ConvNet>> {
    let cfg = canonical_config(cfg);
    let run = || -> Result<ConvNet> {
        let outliers = cfg.augmentation.needs_outliers().then_some(data.outliers.as_slice());
        Ok(train(&cfg, net, TrainData { known: images, outliers })?.model)
    };
    match cache {
        Some(c) => c.get_or_train(format!("{:?}|{:?}|{:?}|{:?}", data.spec, net, variant, cfg), run),
        None => run().map(Arc::new),
    }
}

/// Run `cells` on a pool of `workers` threads, keeping input order.
fn run_cells<C: Sync, T: Send>(workers: usize, cells: &[C], f: impl Fn(&C) -> Result<T> + Sync) -> Result<Vec<T>> {
    if workers <= 1 {
        return cells.iter().map(f).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| OsrError::Config(format!("worker pool: {e}")))?;
    pool.install(|| cells.par_iter().map(&f).collect())
}

fn msp_records(
    model: &ConvNet,
    known: &[LabeledImage],
    unknown: &[LabeledImage],
    features: bool,
) -> Result<Vec<ScoreRecord>> {
    let mut records = score_images(model, known, &ScoreMethod::Msp, 0, features)?;
    records.extend(score_images(model, unknown, &ScoreMethod::Msp, known.len() as u64, features)?);
    Ok(records)
}

/// [`metrics::evaluate`] on MSP scores of knowns vs. `unknown`; the feature
/// metrics are included when `features` is set.
pub fn evaluate_split(
    model: &ConvNet,
    known: &[LabeledImage],
    unknown: &[LabeledImage],
    features: bool,
) -> Result<Vec<(String, f64)>> {
    metrics::evaluate(&msp_records(model, known, unknown, features)?, model.num_classes())
}

fn pick(all: &[(String, f64)], wanted: &[&str]) -> Vec<(String, f64)> {
    wanted.iter().filter_map(|w| all.iter().find(|(n, _)| n == w).cloned()).collect()
}

fn seeded(base: &TrainConfig, aug: Augmentation, seed: u64) -> TrainConfig {
    TrainConfig { augmentation: aug, seed, ..base.clone() }
}

pub const GRID_TRAIN_VARIANTS: [VariantKind; 4] =
    [VariantKind::Raw, VariantKind::FgOnly, VariantKind::FgPlusRawStar, VariantKind::FgPlusBgStar];

/// Test settings of the variant grid, `known/unknown`.
pub const GRID_TEST_SETTINGS: [&str; 4] = ["raw/raw", "fg_bg_star/raw", "fg_only/fg_only", "raw/disjoint"];

/// Train one plain model per training variant and evaluate it under the four
/// test settings (accuracy and MSP AUROC).
pub fn run_variant_grid(spec: &ExperimentSpec, cache: Option<&RunCache>) -> Result<ResultTable> {
    spec.validate()?;
    let data = build_osr_data(&spec.data)?;
    let vseed = derive_seed(spec.data.seed, &[tag::VARIANT]);
    let mut train_sets = Vec::new();
    for kind in GRID_TRAIN_VARIANTS {
        train_sets.push(variant_set(&data.train, None, kind, derive_seed(vseed, &[1]))?);
    }
    // Known test objects moved onto the backgrounds of unknown images.
    let fgbg_known =
        variant_set(&data.test_known, Some(&data.spurious_unknown), VariantKind::FgPlusBgStar, derive_seed(vseed, &[2]))?;
    let fg_known = variant_set(&data.test_known, None, VariantKind::FgOnly, vseed)?;
    let fg_unknown = variant_set(&data.spurious_unknown, None, VariantKind::FgOnly, vseed)?;
    let settings: [(&[LabeledImage], &[LabeledImage]); 4] = [
        (&data.test_known, &data.spurious_unknown),
        (&fgbg_known, &data.spurious_unknown),
        (&fg_known, &fg_unknown),
        (&data.test_known, &data.disjoint_unknown),
    ];
    let net = spec.net_spec();
    let cells: Vec<(usize, u64)> =
        (0..GRID_TRAIN_VARIANTS.len()).flat_map(|v| spec.seeds.iter().map(move |&s| (v, s))).collect();
    let results = run_cells(spec.workers, &cells, |&(v, seed)| {
        let cfg = seeded(&spec.train, Augmentation::None, seed);
        let model = trained(cache, &data, &net, &train_sets[v], GRID_TRAIN_VARIANTS[v], &cfg)?;
        settings
            .iter()
            .map(|(k, u)| Ok(pick(&evaluate_split(&model, k, u, false)?, &["accuracy", "auroc"])))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut table = ResultTable::new(&spec.name);
    for (&(v, seed), per_setting) in cells.iter().zip(results) {
        for (setting, metrics) in GRID_TEST_SETTINGS.iter().zip(per_setting) {
            for (m, value) in metrics {
                table.push(GRID_TRAIN_VARIANTS[v].name(), setting, seed, &m, value);
            }
        }
    }
    finish(spec, table, &[])
}

pub const OE_METHODS: [Augmentation; 4] = [Augmentation::None, Augmentation::Oe, Augmentation::CatImg, Augmentation::FtAvg];

/// Plain vs. OE, CatImg and FtAvg against the disjoint unknown split.
pub fn run_oe_comparison(spec: &ExperimentSpec, cache: Option<&RunCache>) -> Result<ResultTable> {
    spec.validate()?;
    if spec.data.outliers.is_empty() {
        return Err(OsrError::Config("outlier comparison needs a non-empty outlier pool".into()));
    }
    let wanted = ["accuracy", "auroc", "tnr95", "ft_auc", "ft_cos"];
    run_methods(spec, cache, &OE_METHODS, "disjoint", &wanted, true)
}

pub const AUGMENTATION_METHODS: [Augmentation; 5] =
    [Augmentation::None, Augmentation::BackMix, Augmentation::Cutout, Augmentation::Mixup, Augmentation::Cutmix];

/// Plain, BackMix and the three mixing baselines on the spurious unknown split.
pub fn run_augmentation_comparison(spec: &ExperimentSpec, cache: Option<&RunCache>) -> Result<ResultTable> {
    spec.validate()?;
    let wanted = ["accuracy", "auroc", "tnr95", "dtacc", "auin", "auout"];
    run_methods(spec, cache, &AUGMENTATION_METHODS, "spurious", &wanted, false)
}

fn run_methods(
    spec: &ExperimentSpec,
    cache: Option<&RunCache>,
    methods: &[Augmentation],
    split: &str,
    wanted: &[&str],
    features: bool,
) -> Result<ResultTable> {
    let data = build_osr_data(&spec.data)?;
    let unknown = if split == "spurious" { &data.spurious_unknown } else { &data.disjoint_unknown };
    let net = spec.net_spec();
    let cells: Vec<(Augmentation, u64)> = methods.iter().flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s))).collect();
    let results = run_cells(spec.workers, &cells, |&(aug, seed)| {
        let model = trained(cache, &data, &net, &data.train, VariantKind::Raw, &seeded(&spec.train, aug, seed))?;
        Ok(pick(&evaluate_split(&model, &data.test_known, unknown, features)?, wanted))
    })?;
    let mut table = ResultTable::new(&spec.name);
    for (&(aug, seed), metrics) in cells.iter().zip(results) {
        for (m, v) in metrics {
            table.push(method_name(aug), split, seed, &m, v);
        }
    }
    let methods: Vec<&str> = methods.iter().map(|&m| method_name(m)).collect();
    finish(spec, table, &[("methods", methods.join(","))])
}

pub fn sweep_setting(s: f64, k: f64) -> String {
    format!("s={s:?},k={k:?}")
}

/// BackMix over the `(s, k)` grid on the spurious unknown split.
pub fn run_param_sweep(
    spec: &ExperimentSpec,
    s_values: &[f64],
    k_values: &[f64],
    cache: Option<&RunCache>,
) -> Result<ResultTable> {
    spec.validate()?;
    if s_values.is_empty() || k_values.is_empty() {
        return Err(OsrError::Parameter("sweep needs at least one s and one k value".into()));
    }
    for &s in s_values {
        for &k in k_values {
            MixConfig { cut_area_ratio: s, mask_ratio: k, ..MixConfig::default() }.validate()?;
        }
    }
    let data = build_osr_data(&spec.data)?;
    let net = spec.net_spec();
    let cells: Vec<(f64, f64, u64)> = s_values
        .iter()
        .flat_map(|&s| k_values.iter().flat_map(move |&k| spec.seeds.iter().map(move |&seed| (s, k, seed))))
        .collect();
    let results = run_cells(spec.workers, &cells, |&(s, k, seed)| {
        let mut cfg = seeded(&spec.train, Augmentation::BackMix, seed);
        cfg.mix.cut_area_ratio = s;
        cfg.mix.mask_ratio = k;
        let model = trained(cache, &data, &net, &data.train, VariantKind::Raw, &cfg)?;
        Ok(pick(&evaluate_split(&model, &data.test_known, &data.spurious_unknown, false)?, &["accuracy", "auroc"]))
    })?;
    let mut table = ResultTable::new(&spec.name);
    for (&(s, k, seed), metrics) in cells.iter().zip(results) {
        for (m, v) in metrics {
            table.push("backmix", &sweep_setting(s, k), seed, &m, v);
        }
    }
    finish(spec, table, &[("s_values", join_list(s_values)), ("k_values", join_list(k_values))])
}

pub fn correlation_setting(r: f64, split: &str) -> String {
    format!("r={r:?}/{split}")
}

pub const CORRELATION_METHODS: [Augmentation; 2] = [Augmentation::None, Augmentation::BackMix];

/// Plain and BackMix trained at each correlation `r`, scored against both the
/// spurious and the disjoint unknown split (FPR95, AUROC, accuracy).
pub fn run_correlation_sweep(spec: &ExperimentSpec, r_values: &[f64], cache: Option<&RunCache>) -> Result<ResultTable> {
    spec.validate()?;
    if r_values.is_empty() {
        return Err(OsrError::Parameter("correlation sweep needs at least one r".into()));
    }
    let mut datasets = Vec::new();
    for &r in r_values {
        let ds = OsrDataSpec { correlation_r: r, ..spec.data.clone() };
        datasets.push(build_osr_data(&ds)?);
    }
    let net = spec.net_spec();
    let cells: Vec<(usize, Augmentation, u64)> = (0..r_values.len())
        .flat_map(|i| CORRELATION_METHODS.iter().flat_map(move |&m| spec.seeds.iter().map(move |&s| (i, m, s))))
        .collect();
    let results = run_cells(spec.workers, &cells, |&(i, aug, seed)| {
        let data = &datasets[i];
        let model = trained(cache, data, &net, &data.train, VariantKind::Raw, &seeded(&spec.train, aug, seed))?;
        let wanted = ["accuracy", "auroc", "fpr95"];
        Ok((
            pick(&evaluate_split(&model, &data.test_known, &data.spurious_unknown, false)?, &wanted),
            pick(&evaluate_split(&model, &data.test_known, &data.disjoint_unknown, false)?, &wanted),
        ))
    })?;
    let mut table = ResultTable::new(&spec.name);
    for (&(i, aug, seed), (spurious, disjoint)) in cells.iter().zip(results) {
        for (split, metrics) in [("spurious", spurious), ("disjoint", disjoint)] {
            for (m, v) in metrics {
                table.push(method_name(aug), &correlation_setting(r_values[i], split), seed, &m, v);
            }
        }
    }
    finish(spec, table, &[("r_values", join_list(r_values))])
}

fn finish(spec: &ExperimentSpec, table: ResultTable, extra: &[(&str, String)]) -> Result<ResultTable> {
    if let Some(dir) = &spec.output {
        let mut manifest = spec.manifest();
        for (k, v) in extra {
            manifest.set(*k, v);
        }
        table.write(dir, &manifest)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests;
