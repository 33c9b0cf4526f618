use super::*;
use crate::dataset::Provenance;
use crate::oversample::SyntheticBatch;
use proptest::prelude::*;
use rand::Rng;

fn image(label: HeartbeatClass, k: usize, rng: &mut ChaCha8Rng) -> BeatImage {
    let pixels = (0..16).map(|_| rng.gen_range(0..2u8)).collect();
    BeatImage::new(
        4,
        4,
        pixels,
        label,
        Provenance::Real {
            record_id: "t".into(),
            annotation_index: k,
        },
    )
    .unwrap()
}

fn dataset(counts: &[(HeartbeatClass, usize)], seed: u64) -> BeatDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for &(c, n) in counts {
        for _ in 0..n {
            let k = items.len();
            items.push(image(c, k, &mut rng));
        }
    }
    BeatDataset::from_items(items).unwrap()
}

/// Copies the first train image of the class; no randomness.
struct CopyFirst;

impl Oversampler for CopyFirst {
    fn method(&self) -> SyntheticMethod {
        SyntheticMethod::Random
    }

    fn synthesize(&self, d: &BeatDataset, c: HeartbeatClass, n: usize, _seed: u64) -> Result<SyntheticBatch> {
        let src = &d.items()[d.class_indices(c, Split::Train)[0]];
        let images = (0..n)
            .map(|index| {
                let mut img = src.clone();
                img.source = Provenance::Synthetic {
                    method: SyntheticMethod::Random,
                    index,
                };
                img
            })
            .collect();
        Ok(SyntheticBatch {
            method: SyntheticMethod::Random,
            images,
        })
    }
}

/// Predicts the truth for every test item and records what it was given.
#[derive(Default)]
struct Recorder {
    calls: Vec<(String, u64, usize, usize)>,
    fail_method: Option<&'static str>,
}

impl RunTrainer for Recorder {
    fn train_and_evaluate(&mut self, d: &BeatDataset, seed: u64, meta: ReportMetadata) -> Result<EvalReport> {
        for split in [Split::Val, Split::Test] {
            assert!(d.indices(split).iter().all(|&i| !d.items()[i].is_synthetic()));
        }
        self.calls
            .push((meta.method.clone(), seed, meta.train_size, d.synthetic_count()));
        if self.fail_method == Some(meta.method.as_str()) {
            return Err(Error::contract("scripted failure"));
        }
        let truth: Vec<HeartbeatClass> = d.indices(Split::Test).iter().map(|&i| d.items()[i].label).collect();
        // Deterministic but seed-dependent errors so repeats differ.
        let predicted: Vec<HeartbeatClass> = truth
            .iter()
            .enumerate()
            .map(|(k, &t)| if (k as u64 + seed) % 7 == 0 { HeartbeatClass::Normal } else { t })
            .collect();
        EvalReport::from_predictions(&truth, &predicted, meta)
    }
}

#[test]
fn split_sizes_follow_the_rounding_rule() {
    let f = SplitFractions::default();
    assert_eq!(f.sizes(106), (74, 11, 21));
    assert_eq!(f.sizes(243), (170, 24, 49));
    assert_eq!(f.sizes(10), (7, 1, 2));
}

#[test]
fn stratified_split_is_per_class_and_deterministic() {
    let d = dataset(&[(HeartbeatClass::Veb, 106), (HeartbeatClass::Apc, 243), (HeartbeatClass::Normal, 10)], 1);
    let f = SplitFractions::default();
    let a = stratified_split(&d, &f, 5).unwrap();
    for (c, n) in [(HeartbeatClass::Veb, 106), (HeartbeatClass::Apc, 243), (HeartbeatClass::Normal, 10)] {
        let (tr, va, te) = f.sizes(n);
        assert_eq!(a.count(c, Split::Train), tr);
        assert_eq!(a.count(c, Split::Val), va);
        assert_eq!(a.count(c, Split::Test), te);
    }
    let b = stratified_split(&d, &f, 5).unwrap();
    assert_eq!(a, b);
    let c = stratified_split(&d, &f, 6).unwrap();
    assert_ne!(a.indices(Split::Test), c.indices(Split::Test));
}

#[test]
fn split_rejects_tiny_classes_and_synthetic_items() {
    let d = dataset(&[(HeartbeatClass::Veb, 2), (HeartbeatClass::Apc, 30)], 1);
    assert!(matches!(stratified_split(&d, &SplitFractions::default(), 0), Err(Error::Contract(_))));

    let d = dataset(&[(HeartbeatClass::Apc, 30)], 1);
    let d = stratified_split(&d, &SplitFractions::default(), 0).unwrap();
    let d = inject(&d, &CopyFirst, &BTreeMap::from([(HeartbeatClass::Apc, 3)]), 0).unwrap();
    assert!(stratified_split(&d, &SplitFractions::default(), 0).is_err());
}

#[test]
fn balancing_reference_counts_hits_the_target_exactly() {
    let d = dataset(&REFERENCE_COUNTS, 2);
    let d = stratified_split(&d, &SplitFractions::default(), 3).unwrap();
    let minority = [HeartbeatClass::Veb, HeartbeatClass::Apc];
    let counts = balance_counts(&d, &minority, 1000).unwrap();
    assert_eq!(counts[&HeartbeatClass::Veb], 926);
    assert_eq!(counts[&HeartbeatClass::Apc], 830);
    let b = balance_to_target(&d, Some(&CopyFirst), &minority, 1000, 0).unwrap();
    assert_eq!(b.count(HeartbeatClass::Veb, Split::Train), 1000);
    assert_eq!(b.count(HeartbeatClass::Apc, Split::Train), 1000);
    assert_eq!(b.split_histogram(Split::Test), d.split_histogram(Split::Test));
    assert_eq!(b.split_histogram(Split::Val), d.split_histogram(Split::Val));
    for c in [HeartbeatClass::Normal, HeartbeatClass::Pab, HeartbeatClass::Lbbb] {
        assert_eq!(b.count(c, Split::Train), d.count(c, Split::Train));
    }
    assert_eq!(b.len(), d.len() + 926 + 830);

    let same = balance_to_target(&d, None, &minority, 1000, 0).unwrap();
    assert_eq!(same, d);
}

#[test]
fn balancing_above_target_is_a_contract_error() {
    let d = stratified_split(&dataset(&[(HeartbeatClass::Veb, 100)], 0), &SplitFractions::default(), 0).unwrap();
    assert!(balance_counts(&d, &[HeartbeatClass::Veb], 10).is_err());
}

#[test]
fn adversarial_without_snapshots_is_a_config_error() {
    assert!(matches!(oversampler_for(Method::Adversarial, 5, None), Err(Error::Config(_))));
    assert!(oversampler_for(Method::Original, 5, None).unwrap().is_none());
}

#[test]
fn injection_steps_cap_at_the_target() {
    assert_eq!(
        injection_steps(74, 150, 1000).unwrap(),
        vec![0, 150, 300, 450, 600, 750, 900, 926]
    );
    assert_eq!(
        injection_steps(170, 100, 1000).unwrap(),
        vec![0, 100, 200, 300, 400, 500, 600, 700, 800, 830]
    );
    assert_eq!(injection_steps(0, 50, 100).unwrap(), vec![0, 50, 100]);
    assert_eq!(injection_steps(100, 50, 100).unwrap(), vec![0]);
    assert!(injection_steps(0, 0, 100).is_err());
}

#[test]
fn injection_study_runs_baseline_plus_each_step() {
    let d = stratified_split(
        &dataset(&[(HeartbeatClass::Veb, 20), (HeartbeatClass::Normal, 40)], 4),
        &SplitFractions::default(),
        1,
    )
    .unwrap();
    let base = d.count(HeartbeatClass::Veb, Split::Train);
    let pool = CopyFirst.synthesize(&d, HeartbeatClass::Veb, 50, 0).unwrap().images;
    let mut rec = Recorder::default();
    let curve = injection_study(&d, HeartbeatClass::Veb, &pool, 50, base + 10, 1, 0, &mut rec).unwrap();
    assert_eq!(rec.calls.len(), 2);
    assert_eq!(curve.points.iter().map(|p| p.synthetic).collect::<Vec<_>>(), vec![0, 10]);
    assert_eq!(rec.calls[1].3, 10);

    let mut rec = Recorder::default();
    let curve = injection_study(&d, HeartbeatClass::Veb, &pool, 20, base + 50, 3, 0, &mut rec).unwrap();
    assert_eq!(rec.calls.len(), 3 * 4);
    for p in &curve.points {
        assert_eq!(p.runs.len(), 3);
        let m = p.runs.iter().map(|r| r[&HeartbeatClass::Veb]).sum::<f64>() / 3.0;
        assert!((p.mean_f1[&HeartbeatClass::Veb] - m).abs() < 1e-12);
    }

    let mut rec = Recorder::default();
    assert!(injection_study(&d, HeartbeatClass::Veb, &pool[..5], 50, base + 10, 1, 0, &mut rec).is_err());
}

#[test]
fn mean_std_uses_the_sample_estimator() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[0.3]).unwrap(), (0.3, 0.0));
    assert!(mean_std(&[]).is_none());
    assert_eq!(Cell::from_values(&[0.43, 0.45, 0.41], 0).render(), "0.4300±0.0200");
}

fn comparison_dataset() -> BeatDataset {
    dataset(
        &[
            (HeartbeatClass::Normal, 40),
            (HeartbeatClass::Veb, 12),
            (HeartbeatClass::Apc, 15),
            (HeartbeatClass::Pvc, 30),
        ],
        9,
    )
}

fn small_config(methods: Vec<Method>, repeats: usize) -> ExperimentConfig {
    ExperimentConfig {
        repeats,
        methods,
        balance_target: 30,
        adversarial_counts: BTreeMap::from([(HeartbeatClass::Veb, 5), (HeartbeatClass::Apc, 5)]),
        k_neighbors: 3,
        seed: 11,
        ..ExperimentConfig::default()
    }
}

#[test]
fn comparison_shares_splits_and_seeds_within_a_repeat() {
    let d = comparison_dataset();
    let methods = vec![Method::Original, Method::Random, Method::Smote, Method::Adasyn];
    let cfg = small_config(methods.clone(), 2);
    let mut rec = Recorder::default();
    let archive = run_comparison(&d, &cfg, None, &mut rec, None).unwrap();
    assert_eq!(archive.runs.len(), 8);
    for repeat in 0..2 {
        let runs: Vec<&RunRecord> = archive.runs.iter().filter(|r| r.repeat == repeat).collect();
        assert!(runs.iter().all(|r| r.split_seed == runs[0].split_seed && r.cnn_seed == runs[0].cnn_seed));
        let tests: Vec<usize> = runs.iter().map(|r| r.report.as_ref().unwrap().test_size).collect();
        assert!(tests.iter().all(|&t| t == tests[0]));
    }
    assert_ne!(archive.runs[0].split_seed, archive.runs[4].split_seed);
    // Train size after balancing = real train size + synthetic items.
    let base = rec.calls[0].2;
    for (method, _, train, synthetic) in &rec.calls[..4] {
        assert_eq!(*train, base + synthetic, "{method}");
        if method != "original" {
            let f = SplitFractions::default();
            assert_eq!(*synthetic, (30 - f.sizes(12).0) + (30 - f.sizes(15).0));
        }
    }

    let again = run_comparison(&d, &cfg, None, &mut Recorder::default(), None).unwrap();
    assert_eq!(archive, again);
}

#[test]
fn comparison_records_failures_and_checkpoints() {
    let d = comparison_dataset();
    let cfg = small_config(vec![Method::Original, Method::Random], 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(ARCHIVE_FILE);
    let mut rec = Recorder {
        fail_method: Some("random"),
        ..Recorder::default()
    };
    let archive = run_comparison(&d, &cfg, None, &mut rec, Some(&path)).unwrap();
    assert_eq!(RunArchive::load(&path).unwrap(), archive);
    let table = archive.table();
    let cell = table.cell(TOTAL_ROW, Method::Random).unwrap();
    assert_eq!((cell.runs, cell.failures, cell.render().as_str()), (0, 2, "NA"));
    assert_eq!(table.cell(TOTAL_ROW, Method::Original).unwrap().runs, 2);

    let cfg = small_config(vec![Method::Adversarial], 1);
    assert!(matches!(
        run_comparison(&d, &cfg, None, &mut Recorder::default(), None),
        Err(Error::Config(_))
    ));
}

fn full_archive() -> RunArchive {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut archive = RunArchive::new(Method::ALL.to_vec(), 3);
    let counts: Vec<(HeartbeatClass, usize)> = HeartbeatClass::ALL.iter().map(|&c| (c, 5)).collect();
    for repeat in 0..3 {
        for method in Method::ALL {
            let truth: Vec<HeartbeatClass> = counts.iter().flat_map(|&(c, n)| vec![c; n]).collect();
            let predicted: Vec<HeartbeatClass> = truth
                .iter()
                .map(|&t| if rng.gen_bool(0.2) { HeartbeatClass::ALL[rng.gen_range(0..7)] } else { t })
                .collect();
            let report = EvalReport::from_predictions(&truth, &predicted, ReportMetadata::default()).unwrap();
            archive.runs.push(RunRecord {
                repeat,
                method,
                split_seed: repeat as u64,
                cnn_seed: repeat as u64,
                report: Some(report),
                error: None,
            });
        }
    }
    archive
}

#[test]
fn table_shape_and_aggregation_match_the_archive() {
    let archive = full_archive();
    let table = archive.table();
    let csv = table.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines.iter().all(|l| l.split(',').count() == 6));
    assert_eq!(lines[0], "class,original,adversarial,adasyn,smote,random");
    assert_eq!(lines[8].split(',').next(), Some("Total"));

    for method in Method::ALL {
        for class in HeartbeatClass::ALL {
            let values: Vec<f64> = archive
                .runs
                .iter()
                .filter(|r| r.method == method)
                .map(|r| r.report.as_ref().unwrap().f1(class))
                .collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            let cell = table.cell(class.name(), method).unwrap();
            assert_eq!(cell.runs, 3);
            assert!((cell.mean.unwrap() - mean).abs() < 1e-12);
            assert!((cell.std.unwrap() - var.sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn rerendering_from_the_archive_is_byte_identical() {
    let mut archive = full_archive();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let files = render_reports(&archive, &first).unwrap();
    assert_eq!(files.len(), 2);
    assert!(!first.join(CURVES_DIR).exists());

    let second = dir.path().join("b");
    render_from_archive(&first.join(ARCHIVE_FILE), &second).unwrap();
    let a = fs::read(first.join(COMPARISON_FILE)).unwrap();
    let b = fs::read(second.join(COMPARISON_FILE)).unwrap();
    assert_eq!(a, b);

    archive.curves.push(InjectionCurve {
        class: HeartbeatClass::Veb,
        base: 74,
        points: vec![
            InjectionPoint {
                synthetic: 0,
                runs: vec![],
                mean_f1: BTreeMap::from([(HeartbeatClass::Veb, 0.4), (HeartbeatClass::Normal, 0.97)]),
            },
            InjectionPoint {
                synthetic: 150,
                runs: vec![],
                mean_f1: BTreeMap::from([(HeartbeatClass::Veb, 0.6), (HeartbeatClass::Normal, 0.96)]),
            },
        ],
    });
    let files = render_reports(&archive, &first).unwrap();
    let svg = fs::read_to_string(files.last().unwrap()).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 2);
}

#[test]
fn config_parses_partial_json_and_rejects_bad_values() {
    let p = Path::new("experiment.json");
    let cfg = ExperimentConfig::from_json(r#"{"repeats": 2, "methods": ["original", "smote"]}"#, p).unwrap();
    assert_eq!(cfg.repeats, 2);
    assert_eq!(cfg.methods, vec![Method::Original, Method::Smote]);
    assert_eq!(cfg.balance_target, 1000);
    assert_eq!(cfg.injection_steps[&HeartbeatClass::Veb], 150);
    assert_eq!(cfg.adversarial_counts[&HeartbeatClass::Apc], 600);

    for bad in [
        r#"{"repeats": 0}"#,
        r#"{"fractions": {"train": 0.8, "val": 0.1, "test": 0.2}}"#,
        r#"{"unknown": 1}"#,
        r#"{"methods": ["gan"]}"#,
    ] {
        assert!(matches!(ExperimentConfig::from_json(bad, p), Err(Error::Config(_))), "{bad}");
    }
    let round = serde_json::to_string(&cfg).unwrap();
    assert_eq!(ExperimentConfig::from_json(&round, p).unwrap(), cfg);
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("SMOTE".parse::<Method>().is_ok());
}

proptest! {
    #[test]
    fn split_sizes_partition_every_class(n in 3usize..2000) {
        let (train, val, test) = SplitFractions::default().sizes(n);
        prop_assert_eq!(train + val + test, n);
        prop_assert_eq!(test, (2 * n + 5) / 10);
        prop_assert_eq!(val, (n + 5) / 10);
        prop_assert!(train >= 1);
    }

    #[test]
    fn derived_seeds_differ_across_streams(master in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(master, &[a]), derive_seed(master, &[b]));
    }
}
