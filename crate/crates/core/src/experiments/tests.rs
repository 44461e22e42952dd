use super::*;
use proptest::prelude::*;

fn tiny_data() -> OsrDataSpec {
    OsrDataSpec { train_per_class: 12, test_per_class: 6, ..OsrDataSpec::default() }
}

fn tiny_spec(name: &str) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        data: tiny_data(),
        widths: vec![4, 8],
        train: TrainConfig { epochs: 2, batch_size: 16, lr: 0.05, ..TrainConfig::default() },
        seeds: vec![0, 1],
        workers: 1,
        output: None,
    }
}

#[test]
fn data_layout() {
    let spec = tiny_data();
    let data = build_osr_data(&spec).unwrap();
    let k = spec.known.len();
    assert_eq!(data.train.len(), k * 12);
    assert_eq!(data.outliers.len(), spec.outliers.len() * 12);
    assert_eq!(data.test_known.len(), k * 6);
    let unknown = spec.unknown();
    assert_eq!(unknown, vec![0, 1, 5, 7]);
    assert!(data.train.iter().chain(&data.test_known).all(|i| i.is_known && i.label < k));
    for split in [&data.spurious_unknown, &data.disjoint_unknown] {
        assert_eq!(split.len(), unknown.len() * 6);
        assert!(split.iter().all(|i| !i.is_known && unknown.contains(&i.label)));
    }
    assert!(data.spurious_unknown.iter().all(|i| i.background.unwrap() < k));
    assert!(data.disjoint_unknown.iter().all(|i| i.background.unwrap() >= k));
    // Known images sit on their designated background at rate r.
    let on = data.train.iter().filter(|i| i.background == Some(i.label)).count();
    assert!(on as f64 >= 0.8 * data.train.len() as f64);
}

#[test]
fn normalization_uses_known_training_images() {
    let data = build_osr_data(&tiny_data()).unwrap();
    let pixels: Vec<Image> = data.train.iter().map(|i| i.pixels.clone()).collect();
    let refit = NormStats::fit(&pixels);
    for c in 0..refit.mean.len() {
        assert!(refit.mean[c].abs() < 1e-9);
        assert!((refit.std[c] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn invalid_layouts_rejected() {
    let overlap = OsrDataSpec { outliers: vec![2, 9], ..tiny_data() };
    assert!(matches!(overlap.validate(), Err(OsrError::Config(_))));
    let no_spare = OsrDataSpec { num_bg_classes: 4, ..tiny_data() };
    assert!(matches!(no_spare.validate(), Err(OsrError::Config(_))));
    let spec = ExperimentSpec { data: overlap, ..tiny_spec("oe") };
    assert!(matches!(run_oe_comparison(&spec, None), Err(OsrError::Config(_))));
}

#[test]
fn variants_need_masks() {
    let mut data = build_osr_data(&tiny_data()).unwrap();
    data.train[0].fg_mask = None;
    assert!(variant_set(&data.train, None, VariantKind::Raw, 0).is_ok());
    assert!(matches!(variant_set(&data.train, None, VariantKind::FgOnly, 0), Err(OsrError::Capability(_))));
}

#[test]
fn foreign_donors_keep_labels() {
    let data = build_osr_data(&tiny_data()).unwrap();
    let out = variant_set(&data.test_known, Some(&data.spurious_unknown), VariantKind::FgPlusBgStar, 3).unwrap();
    for (a, b) in data.test_known.iter().zip(&out) {
        assert_eq!((a.label, a.is_known, &a.fg_mask), (b.label, b.is_known, &b.fg_mask));
        let mask = a.fg_mask.as_ref().unwrap();
        for p in (0..mask.len()).filter(|&p| mask.is_set(p)) {
            assert_eq!(a.pixels.pixel(p), b.pixels.pixel(p));
        }
    }
}

#[test]
fn variant_grid_shape() {
    let spec = tiny_spec("grid");
    let table = run_variant_grid(&spec, None).unwrap();
    assert_eq!(table.rows.len(), 4 * 4 * 2 * spec.seeds.len());
    assert_eq!(table.cells().len(), 32);
    for kind in GRID_TRAIN_VARIANTS {
        for setting in GRID_TEST_SETTINGS {
            assert_eq!(table.values(kind.name(), setting, "auroc").len(), 2);
        }
    }
}

#[test]
fn oe_comparison_reports_five_metrics() {
    let spec = ExperimentSpec { seeds: vec![0], ..tiny_spec("oe") };
    let table = run_oe_comparison(&spec, None).unwrap();
    for m in OE_METHODS {
        for metric in ["accuracy", "auroc", "tnr95", "ft_auc", "ft_cos"] {
            assert_eq!(table.values(method_name(m), "disjoint", metric).len(), 1, "{m:?} {metric}");
        }
    }
}

#[test]
fn canonical_reductions() {
    let base = TrainConfig { augmentation: Augmentation::BackMix, ..TrainConfig::default() };
    let mut s0 = base.clone();
    s0.mix.cut_area_ratio = 0.0;
    let plain = TrainConfig { augmentation: Augmentation::None, ..TrainConfig::default() };
    assert_eq!(canonical_config(&s0), canonical_config(&plain));
    let mut k1 = base.clone();
    k1.mix.mask_ratio = 1.0;
    let cutout = TrainConfig { augmentation: Augmentation::Cutout, ..TrainConfig::default() };
    assert_eq!(canonical_config(&k1), canonical_config(&cutout));
    let oe0 = TrainConfig { augmentation: Augmentation::Oe, oe_alpha: 0.0, ..TrainConfig::default() };
    assert_eq!(canonical_config(&oe0), canonical_config(&plain));
    assert_ne!(canonical_config(&base), canonical_config(&plain));
}

/// The reductions the cache relies on hold for the raw training runs, so
/// canonicalizing never changes a result.
#[test]
fn sweep_columns_match_reference_runs() {
    let spec = ExperimentSpec { seeds: vec![5], ..tiny_spec("sweep") };
    let table = run_param_sweep(&spec, &[0.0, 0.25], &[0.25, 1.0], None).unwrap();
    assert_eq!(table.cells().len(), 2 * 2 * 2);
    let data = build_osr_data(&spec.data).unwrap();
    let net = spec.net_spec();
    let eval = |cfg: &TrainConfig| {
        let model = train(cfg, &net, TrainData { known: &data.train, outliers: None }).unwrap().model;
        pick(&evaluate_split(&model, &data.test_known, &data.spurious_unknown, false).unwrap(), &["accuracy", "auroc"])
    };
    let mut backmix = seeded(&spec.train, Augmentation::BackMix, 5);
    backmix.mix.cut_area_ratio = 0.0;
    let plain = eval(&seeded(&spec.train, Augmentation::None, 5));
    assert_eq!(eval(&backmix), plain);
    backmix.mix.cut_area_ratio = 0.25;
    backmix.mix.mask_ratio = 1.0;
    let cutout = eval(&seeded(&spec.train, Augmentation::Cutout, 5));
    assert_eq!(eval(&backmix), cutout);
    for (metric, v) in &plain {
        assert_eq!(table.values("backmix", &sweep_setting(0.0, 0.25), metric), vec![*v]);
        assert_eq!(table.values("backmix", &sweep_setting(0.0, 1.0), metric), vec![*v]);
    }
    for (metric, v) in &cutout {
        assert_eq!(table.values("backmix", &sweep_setting(0.25, 1.0), metric), vec![*v]);
    }
}

#[test]
fn sweep_range_checked() {
    let spec = tiny_spec("sweep");
    assert!(matches!(run_param_sweep(&spec, &[0.25], &[1.5], None), Err(OsrError::Parameter(_))));
    assert!(matches!(run_param_sweep(&spec, &[-0.1], &[0.25], None), Err(OsrError::Parameter(_))));
    assert!(run_correlation_sweep(&spec, &[0.05], None).is_err());
}

#[test]
fn correlation_sweep_shape_and_cache() {
    let spec = ExperimentSpec { seeds: vec![0], ..tiny_spec("corr") };
    let cache = RunCache::new();
    let table = run_correlation_sweep(&spec, &[0.5, 0.9], Some(&cache)).unwrap();
    assert_eq!(table.cells().len(), 2 * 2 * 2 * 3);
    assert_eq!(cache.len(), 4);
    let again = run_correlation_sweep(&spec, &[0.5, 0.9], Some(&cache)).unwrap();
    assert_eq!(again, table);
    assert_eq!(cache.len(), 4);
}

#[test]
fn workers_do_not_change_results() {
    let mut spec = ExperimentSpec { seeds: vec![0, 1, 2], ..tiny_spec("aug") };
    spec.train.epochs = 1;
    let many = ExperimentSpec { workers: 3, ..spec.clone() };
    assert_eq!(run_augmentation_comparison(&spec, None).unwrap(), run_augmentation_comparison(&many, None).unwrap());
}

#[test]
fn writes_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec { seeds: vec![0], output: Some(dir.path().into()), ..tiny_spec("grid_out") };
    let table = run_variant_grid(&spec, None).unwrap();
    let text = std::fs::read_to_string(dir.path().join("grid_out.tsv")).unwrap();
    assert_eq!(ResultTable::parse_tsv(&text).unwrap(), table);
    let manifest = KvMap::parse(&std::fs::read_to_string(dir.path().join("grid_out.manifest")).unwrap()).unwrap();
    assert_eq!(manifest.get("experiment"), Some("grid_out"));
    assert_eq!(manifest.get("epochs"), Some("2"));
}

#[test]
fn median_of_even_and_odd() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    assert_eq!(median(&[]), None);
}

#[test]
fn malformed_tables_rejected() {
    assert!(ResultTable::parse_tsv("").is_err());
    let head = format!("{RESULT_HEADER}\n");
    assert!(ResultTable::parse_tsv(&format!("{head}e\tm\ts\t0\tauroc\n")).is_err());
    assert!(ResultTable::parse_tsv(&format!("{head}e\tm\ts\tx\tauroc\t0.5\n")).is_err());
    assert!(ResultTable::parse_tsv(&format!("{head}e\tm\ts\t0\tauroc\tnope\n")).is_err());
    assert!(ResultTable::parse_tsv(&format!("{head}e\tm\ts\t0\tauroc\t0.5\nf\tm\ts\t1\tauroc\t0.5\n")).is_err());
}

proptest! {
    #[test]
    fn table_round_trips(values in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
        let mut t = ResultTable::new("exp");
        for (i, v) in values.iter().enumerate() {
            t.push(["plain", "backmix"][i % 2], "s", (i / 2) as u64, "auroc", *v);
        }
        let back = ResultTable::parse_tsv(&t.to_tsv()).unwrap();
        prop_assert_eq!(back, t);
    }
}
