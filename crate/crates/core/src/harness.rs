//! Experiment orchestration: stratified splits, top-up balancing, the
//! incremental injection study, repeated method comparisons and the rendered
//! reports (CSV table, JSON run archive, SVG curves).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::class::HeartbeatClass;
use crate::classifier::{Cnn, CnnConfig, EvalReport, ReportMetadata};
use crate::dataset::{BeatDataset, BeatImage, Split, SyntheticMethod};
use crate::error::{ensure, Error, Result};
use crate::infogan::{GanConfig, GeneratorSource, Snapshot};
use crate::oversample::{Adasyn, Oversampler, RandomOversampler, Smote, DEFAULT_K_NEIGHBORS};

/// Per-class beat counts of the full MIT-BIH extraction.
pub const REFERENCE_COUNTS: [(HeartbeatClass, usize); 7] = [
    (HeartbeatClass::Apc, 243),
    (HeartbeatClass::Normal, 1079),
    (HeartbeatClass::Lbbb, 1051),
    (HeartbeatClass::Pab, 895),
    (HeartbeatClass::Pvc, 1012),
    (HeartbeatClass::Rbb, 1006),
    (HeartbeatClass::Veb, 106),
];

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const ARCHIVE_FILE: &str = "runs.json";
pub const CURVES_DIR: &str = "curves";
pub const ARCHIVE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Original,
    Adversarial,
    Adasyn,
    Smote,
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Original,
        Method::Adversarial,
        Method::Adasyn,
        Method::Smote,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::Adversarial => "adversarial",
            Method::Adasyn => "adasyn",
            Method::Smote => "smote",
            Method::Random => "random",
        }
    }

    pub fn synthetic(self) -> Option<SyntheticMethod> {
        match self {
            Method::Original => None,
            Method::Adversarial => Some(SyntheticMethod::Adversarial),
            Method::Adasyn => Some(SyntheticMethod::Adasyn),
            Method::Smote => Some(SyntheticMethod::Smote),
            Method::Random => Some(SyntheticMethod::Random),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} fraction {f} is outside [0, 1]")));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// `(train, val, test)` for a class of `n` items: test and val are
    /// rounded half up, train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // A product can land a hair under an exact half; the slack keeps
        // halves rounding up.
        let round = |f: f64| (f * n as f64 + 0.5 + 1e-9).floor() as usize;
        let test = round(self.test).min(n);
        let val = round(self.val).min(n - test);
        (n - test - val, val, test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fractions: SplitFractions,
    pub repeats: usize,
    pub methods: Vec<Method>,
    /// Train-split size each minority class is topped up to.
    pub balance_target: usize,
    pub minority_classes: Vec<HeartbeatClass>,
    pub injection_steps: BTreeMap<HeartbeatClass, usize>,
    /// Synthetic items the adversarial method adds per class in a comparison.
    pub adversarial_counts: BTreeMap<HeartbeatClass, usize>,
    pub k_neighbors: usize,
    pub seed: u64,
    pub cnn: CnnConfig,
    /// Used when no selected snapshots are given: a fresh GAN is trained on
    /// each repeat's train split.
    pub gan: GanConfig,
    pub gan_epochs: u64,
    /// Selected snapshot directories per class.
    pub snapshots: BTreeMap<HeartbeatClass, PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fractions: SplitFractions::default(),
            repeats: 10,
            methods: Method::ALL.to_vec(),
            balance_target: 1000,
            minority_classes: vec![HeartbeatClass::Veb, HeartbeatClass::Apc],
            injection_steps: BTreeMap::from([(HeartbeatClass::Veb, 150), (HeartbeatClass::Apc, 100)]),
            adversarial_counts: BTreeMap::from([(HeartbeatClass::Veb, 600), (HeartbeatClass::Apc, 600)]),
            k_neighbors: DEFAULT_K_NEIGHBORS,
            seed: 0,
            cnn: CnnConfig::default(),
            gan: GanConfig::default(),
            gan_epochs: 5000,
            snapshots: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.fractions.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("no methods to compare");
        }
        if self.balance_target == 0 {
            return bad("balance target must be positive");
        }
        if self.injection_steps.values().any(|&s| s == 0) {
            return bad("injection steps must be positive");
        }
        if self.k_neighbors == 0 {
            return bad("k_neighbors must be positive");
        }
        self.cnn.validate().map_err(config_error)?;
        if self.methods.contains(&Method::Adversarial) && self.snapshots.is_empty() {
            self.gan.validate().map_err(config_error)?;
            if self.gan_epochs == 0 {
                return bad("gan_epochs must be positive");
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Loads the selected snapshots, or falls back to per-repeat training.
    pub fn adversarial_source(&self) -> Result<GeneratorSource> {
        if self.snapshots.is_empty() {
            return Ok(GeneratorSource::Train {
                config: self.gan.clone(),
                epochs: self.gan_epochs,
            });
        }
        let snaps = self
            .snapshots
            .iter()
            .map(|(&class, dir)| Ok((class, Snapshot::load(dir)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GeneratorSource::Snapshots(snaps))
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Contract(m) => Error::Config(m),
        other => other,
    }
}

/// SplitMix64 finalizer over `master` and a stream of labels.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut x = master;
    for &p in parts {
        x ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
    }
    x
}

const TAG_SPLIT: u64 = 1;
const TAG_CNN: u64 = 2;
const TAG_SYNTH: u64 = 3;

/// Assigns train/val/test per class. Any previous split is discarded.
pub fn stratified_split(dataset: &BeatDataset, fractions: &SplitFractions, seed: u64) -> Result<BeatDataset> {
    fractions.validate()?;
    ensure!(!dataset.is_empty(), "cannot split an empty dataset");
    ensure!(dataset.synthetic_count() == 0, "synthetic items must be added after splitting");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for class in HeartbeatClass::ALL {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.items()[i].label == class)
            .collect();
        if idx.is_empty() {
            continue;
        }
        ensure!(idx.len() >= 3, "{class} has {} items; at least 3 are needed to split", idx.len());
        idx.shuffle(&mut rng);
        let (_, val, test) = fractions.sizes(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            let split = if k < test {
                Split::Test
            } else if k < test + val {
                Split::Val
            } else {
                Split::Train
            };
            out.set_split(i, split)?;
        }
    }
    Ok(out)
}

/// Synthetic items needed for each class to reach `target` train items.
pub fn balance_counts(
    dataset: &BeatDataset,
    classes: &[HeartbeatClass],
    target: usize,
) -> Result<BTreeMap<HeartbeatClass, usize>> {
    classes
        .iter()
        .map(|&c| {
            let have = dataset.count(c, Split::Train);
            ensure!(have > 0, "{c} has no train items to oversample");
            ensure!(have <= target, "{c} already has {have} train items, above the target {target}");
            Ok((c, target - have))
        })
        .collect()
}

/// Appends `counts[c]` synthetic train items of each class.
pub fn inject(
    dataset: &BeatDataset,
    oversampler: &dyn Oversampler,
    counts: &BTreeMap<HeartbeatClass, usize>,
    seed: u64,
) -> Result<BeatDataset> {
    let mut out = dataset.clone();
    for (&class, &n) in counts {
        if n == 0 {
            continue;
        }
        let batch = oversampler.synthesize(dataset, class, n, derive_seed(seed, &[class.index() as u64]))?;
        ensure!(
            batch.len() == n && batch.images.iter().all(|i| i.label == class && i.split == Split::Train),
            "{} returned {} items for a request of {n} {class}",
            oversampler.method(),
            batch.len()
        );
        out.extend(batch.images)?;
    }
    Ok(out)
}

/// Tops each of `classes` up to exactly `target` train items. `None` is the
/// original, unbalanced dataset.
pub fn balance_to_target(
    dataset: &BeatDataset,
    oversampler: Option<&dyn Oversampler>,
    classes: &[HeartbeatClass],
    target: usize,
    seed: u64,
) -> Result<BeatDataset> {
    match oversampler {
        None => Ok(dataset.clone()),
        Some(o) => inject(dataset, o, &balance_counts(dataset, classes, target)?, seed),
    }
}

pub fn oversampler_for(
    method: Method,
    k_neighbors: usize,
    adversarial: Option<&GeneratorSource>,
) -> Result<Option<Box<dyn Oversampler>>> {
    Ok(match method {
        Method::Original => None,
        Method::Random => Some(Box::new(RandomOversampler)),
        Method::Smote => Some(Box::new(Smote { k_neighbors })),
        Method::Adasyn => Some(Box::new(Adasyn { k_neighbors })),
        Method::Adversarial => {
            let source = adversarial
                .ok_or_else(|| Error::Config("adversarial oversampling needs GAN snapshots".into()))?;
            Some(Box::new(crate::infogan::AdversarialOversampler {
                source: source.clone(),
            }))
        }
    })
}

/// Fits a model on the train/val splits and reports on the test split.
pub trait RunTrainer {
    fn train_and_evaluate(
        &mut self,
        dataset: &BeatDataset,
        seed: u64,
        metadata: ReportMetadata,
    ) -> Result<EvalReport>;
}

#[derive(Debug, Clone)]
pub struct CnnTrainer {
    pub config: CnnConfig,
}

impl RunTrainer for CnnTrainer {
    fn train_and_evaluate(
        &mut self,
        dataset: &BeatDataset,
        seed: u64,
        metadata: ReportMetadata,
    ) -> Result<EvalReport> {
        let mut cnn = Cnn::new(self.config.clone(), seed)?;
        cnn.train(dataset, seed)?;
        cnn.evaluate(dataset, Split::Test, metadata)
    }
}

fn metadata(dataset: &BeatDataset, seed: u64, method: Method) -> ReportMetadata {
    let mut synthetic_counts = BTreeMap::new();
    for item in dataset.items().iter().filter(|i| i.is_synthetic()) {
        *synthetic_counts.entry(item.label).or_insert(0) += 1;
    }
    ReportMetadata {
        seed,
        method: method.name().to_string(),
        synthetic_counts,
        train_size: dataset.indices(Split::Train).len(),
    }
}

fn defined_f1(report: &EvalReport) -> BTreeMap<HeartbeatClass, f64> {
    report
        .classes
        .iter()
        .filter(|c| c.defined)
        .map(|c| (c.class, c.f1))
        .collect()
}

/// Synthetic counts evaluated by the injection study: multiples of `step`
/// below `target - base`, then `target - base` itself.
pub fn injection_steps(base: usize, step: usize, target: usize) -> Result<Vec<usize>> {
    ensure!(step > 0, "injection step must be positive");
    ensure!(base <= target, "{base} train items already exceed the target {target}");
    let cap = target - base;
    let mut steps: Vec<usize> = (0..).map(|k| k * step).take_while(|&s| s < cap).collect();
    steps.push(cap);
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionPoint {
    pub synthetic: usize,
    /// Defined per-class F1 of each run.
    pub runs: Vec<BTreeMap<HeartbeatClass, f64>>,
    pub mean_f1: BTreeMap<HeartbeatClass, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionCurve {
    pub class: HeartbeatClass,
    pub base: usize,
    pub points: Vec<InjectionPoint>,
}

fn mean_by_class(runs: &[BTreeMap<HeartbeatClass, f64>]) -> BTreeMap<HeartbeatClass, f64> {
    let mut sums: BTreeMap<HeartbeatClass, (f64, usize)> = BTreeMap::new();
    for run in runs {
        for (&c, &f) in run {
            let e = sums.entry(c).or_insert((0.0, 0));
            e.0 += f;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
}

/// Trains `repeats` models for each injection step, adding a growing prefix
/// of `pool` to the train split of an already split `dataset`.
#[allow(clippy::too_many_arguments)]
pub fn injection_study(
    dataset: &BeatDataset,
    class: HeartbeatClass,
    pool: &[BeatImage],
    step: usize,
    target: usize,
    repeats: usize,
    seed: u64,
    trainer: &mut dyn RunTrainer,
) -> Result<InjectionCurve> {
    ensure!(repeats > 0, "repeats must be at least 1");
    let base = dataset.count(class, Split::Train);
    let steps = injection_steps(base, step, target)?;
    let needed = *steps.last().expect("at least one step");
    ensure!(
        pool.len() >= needed,
        "synthetic pool has {} {class} items, {needed} needed",
        pool.len()
    );
    ensure!(
        pool.iter().all(|i| i.label == class && i.is_synthetic() && i.split == Split::Train),
        "pool must hold synthetic {class} train items"
    );
    let method = pool
        .first()
        .and_then(|i| match i.source {
            crate::dataset::Provenance::Synthetic { method, .. } => Some(method),
            _ => None,
        })
        .map(|m| m.name())
        .unwrap_or("original");
    let mut points = Vec::with_capacity(steps.len());
    for &n in &steps {
        let mut data = dataset.clone();
        data.extend(pool[..n].iter().cloned())?;
        let mut runs = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let run_seed = derive_seed(seed, &[TAG_CNN, r as u64]);
            let mut meta = metadata(&data, run_seed, Method::Original);
            meta.method = method.to_string();
            let report = trainer.train_and_evaluate(&data, run_seed, meta)?;
            log::info!("injection {class} +{n} run {r}: {class} F1 {:.4}", report.f1(class));
            runs.push(defined_f1(&report));
        }
        points.push(InjectionPoint {
            synthetic: n,
            mean_f1: mean_by_class(&runs),
            runs,
        });
    }
    Ok(InjectionCurve { class, base, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub repeat: usize,
    pub method: Method,
    pub split_seed: u64,
    pub cnn_seed: u64,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArchive {
    pub schema_version: u32,
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub runs: Vec<RunRecord>,
    #[serde(default)]
    pub curves: Vec<InjectionCurve>,
}

impl RunArchive {
    pub fn new(methods: Vec<Method>, repeats: usize) -> Self {
        RunArchive {
            schema_version: ARCHIVE_SCHEMA_VERSION,
            methods,
            repeats,
            runs: Vec::new(),
            curves: Vec::new(),
        }
    }

    pub fn table(&self) -> ComparisonTable {
        ComparisonTable::from_runs(&self.methods, self.repeats, &self.runs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        json.push('\n');
        write_file(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let archive: RunArchive = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if archive.schema_version != ARCHIVE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported archive version {}",
                path.display(),
                archive.schema_version
            )));
        }
        Ok(archive)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Every method is trained on the same split and CNN seed within a repeat.
/// Failed runs are recorded and do not stop the comparison; with `checkpoint`
/// the archive is rewritten after every run.
pub fn run_comparison(
    dataset: &BeatDataset,
    config: &ExperimentConfig,
    adversarial: Option<&GeneratorSource>,
    trainer: &mut dyn RunTrainer,
    checkpoint: Option<&Path>,
) -> Result<RunArchive> {
    config.validate()?;
    let samplers = config
        .methods
        .iter()
        .map(|&m| Ok((m, oversampler_for(m, config.k_neighbors, adversarial)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut archive = RunArchive::new(config.methods.clone(), config.repeats);
    for repeat in 0..config.repeats {
        let split_seed = derive_seed(config.seed, &[TAG_SPLIT, repeat as u64]);
        let cnn_seed = derive_seed(config.seed, &[TAG_CNN, repeat as u64]);
        let synth_seed = derive_seed(config.seed, &[TAG_SYNTH, repeat as u64]);
        let split = stratified_split(dataset, &config.fractions, split_seed)?;
        for (method, sampler) in &samplers {
            let outcome = (|| {
                let data = match (method, sampler) {
                    (_, None) => split.clone(),
                    (Method::Adversarial, Some(s)) => {
                        inject(&split, s.as_ref(), &config.adversarial_counts, synth_seed)?
                    }
                    (_, Some(s)) => balance_to_target(
                        &split,
                        Some(s.as_ref()),
                        &config.minority_classes,
                        config.balance_target,
                        synth_seed,
                    )?,
                };
                trainer.train_and_evaluate(&data, cnn_seed, metadata(&data, cnn_seed, *method))
            })();
            let (report, error) = match outcome {
                Ok(r) => {
                    log::info!("repeat {repeat} {method}: weighted F1 {:.4}", r.weighted_f1);
                    (Some(r), None)
                }
                Err(e) => {
                    log::warn!("repeat {repeat} {method} failed: {e}");
                    (None, Some(e.to_string()))
                }
            };
            archive.runs.push(RunRecord {
                repeat,
                method: *method,
                split_seed,
                cnn_seed,
                report,
                error,
            });
            if let Some(path) = checkpoint {
                archive.save(path)?;
            }
        }
    }
    Ok(archive)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single run.
    pub std: Option<f64>,
    pub runs: usize,
    pub failures: usize,
}

impl Cell {
    pub fn from_values(values: &[f64], failures: usize) -> Self {
        let (mean, std) = mean_std(values).map_or((None, None), |(m, s)| (Some(m), Some(s)));
        Cell {
            mean,
            std,
            runs: values.len(),
            failures,
        }
    }

    pub fn render(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
            _ => "NA".to_string(),
        }
    }
}

pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub cells: Vec<Cell>,
}

pub const TOTAL_ROW: &str = "Total";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub methods: Vec<Method>,
    pub repeats: usize,
    /// One row per class seen in any test split, then the support-weighted total.
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    pub fn from_runs(methods: &[Method], repeats: usize, runs: &[RunRecord]) -> Self {
        let of = |m: Method| runs.iter().filter(move |r| r.method == m);
        let present: Vec<HeartbeatClass> = HeartbeatClass::ALL
            .into_iter()
            .filter(|&c| {
                runs.iter()
                    .filter_map(|r| r.report.as_ref())
                    .any(|rep| rep.class(c).defined)
            })
            .collect();
        let mut rows: Vec<TableRow> = present
            .iter()
            .map(|&c| TableRow {
                label: c.name().to_string(),
                cells: methods
                    .iter()
                    .map(|&m| {
                        let values: Vec<f64> = of(m)
                            .filter_map(|r| r.report.as_ref())
                            .filter(|rep| rep.class(c).defined)
                            .map(|rep| rep.f1(c))
                            .collect();
                        Cell::from_values(&values, of(m).filter(|r| r.report.is_none()).count())
                    })
                    .collect(),
            })
            .collect();
        rows.push(TableRow {
            label: TOTAL_ROW.to_string(),
            cells: methods
                .iter()
                .map(|&m| {
                    let values: Vec<f64> = of(m).filter_map(|r| r.report.as_ref()).map(|rep| rep.weighted_f1).collect();
                    Cell::from_values(&values, of(m).filter(|r| r.report.is_none()).count())
                })
                .collect(),
        });
        ComparisonTable {
            methods: methods.to_vec(),
            repeats,
            rows,
        }
    }

    pub fn cell(&self, row: &str, method: Method) -> Option<&Cell> {
        let col = self.methods.iter().position(|&m| m == method)?;
        self.rows.iter().find(|r| r.label == row).map(|r| &r.cells[col])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for m in &self.methods {
            out.push(',');
            out.push_str(m.name());
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.label);
            for cell in &row.cells {
                out.push(',');
                out.push_str(&cell.render());
            }
            out.push('\n');
        }
        out
    }
}

const PALETTE: [&str; 7] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"];

/// Line plot of mean F1 per class against the number of synthetic items.
pub fn curve_svg(curve: &InjectionCurve) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 130.0, 30.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let max_x = curve.points.iter().map(|p| p.synthetic).max().unwrap_or(0).max(1) as f64;
    let x = |v: f64| left + plot_w * v / max_x;
    let y = |v: f64| top + plot_h * (1.0 - v);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">Mean F1 vs synthetic {} samples</text>\n",
        left + plot_w / 2.0,
        curve.class
    );
    s.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        top + plot_h,
        left + plot_w,
        top + plot_h,
        top + plot_h
    ));
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v:.1}</text>\n",
            left - 6.0,
            y(v) + 4.0
        ));
    }
    for p in &curve.points {
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            x(p.synthetic as f64),
            top + plot_h + 16.0,
            p.synthetic
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">synthetic samples added</text>\n",
        left + plot_w / 2.0,
        h - 10.0
    ));
    let classes: Vec<HeartbeatClass> = HeartbeatClass::ALL
        .into_iter()
        .filter(|c| curve.points.iter().any(|p| p.mean_f1.contains_key(c)))
        .collect();
    for (i, c) in classes.iter().enumerate() {
        let color = PALETTE[c.index() % PALETTE.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .filter_map(|p| p.mean_f1.get(c).map(|&f| format!("{:.1},{:.1}", x(p.synthetic as f64), y(f))))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let ly = top + 10.0 + 18.0 * i as f64;
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{c}</text>\n",
            w - right + 15.0,
            w - right + 35.0,
            w - right + 40.0,
            ly + 4.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the comparison CSV (when there are runs), the JSON archive and one
/// SVG per injection curve. Returns the written paths.
pub fn render_reports(archive: &RunArchive, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    if !archive.runs.is_empty() {
        let path = out_dir.join(COMPARISON_FILE);
        write_file(&path, archive.table().to_csv().as_bytes())?;
        written.push(path);
    }
    let path = out_dir.join(ARCHIVE_FILE);
    archive.save(&path)?;
    written.push(path);
    for curve in &archive.curves {
        let path = out_dir.join(CURVES_DIR).join(format!("{}.svg", curve.class.name()));
        write_file(&path, curve_svg(curve).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Re-renders every report from a saved archive.
pub fn render_from_archive(archive_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    render_reports(&RunArchive::load(archive_path)?, out_dir)
}

#[cfg(test)]
mod tests;
