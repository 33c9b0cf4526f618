use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use beatgan::classifier::{Cnn, EvalReport};
use beatgan::dataset::{load_dataset, save_dataset};
use beatgan::harness::{
    self, balance_counts, inject, oversampler_for, render_reports, stratified_split, CnnTrainer, Method,
    RunArchive,
};
use beatgan::infogan::{
    self as gan, adversarial_oversample, GeneratorSource, InfoGan, Snapshot, SnapshotStore, TrainSchedule,
};
use beatgan::ingest::load_record;
use beatgan::preprocess::build_dataset;
use beatgan::{BeatDataset, BeatImage, Error, HeartbeatClass, Split};

use crate::config::{LoadedConfig, PipelineConfig};
use crate::error::CliError;
use crate::manifest;
use crate::Common;

const MODEL_STEM: &str = "model";

struct Stage {
    loaded: LoadedConfig,
    seed: u64,
    out: PathBuf,
    args: BTreeMap<String, String>,
}

impl Stage {
    fn new(common: &Common) -> Result<Self, CliError> {
        let loaded = PipelineConfig::load(common.config.as_deref())?;
        let seed = common.seed.unwrap_or(loaded.config.experiment.seed);
        Ok(Stage {
            loaded,
            seed,
            out: common.out.clone(),
            args: BTreeMap::new(),
        })
    }

    fn arg(mut self, key: &str, value: impl ToString) -> Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    fn config(&self) -> &PipelineConfig {
        &self.loaded.config
    }

    fn dir(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.out.clone(), |p, s| p.join(s))
    }

    /// Empties `dir` so reruns never leave stale files behind.
    fn fresh(&self, dir: &Path) -> Result<(), CliError> {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        fs::create_dir_all(dir).map_err(|e| io(dir, e))
    }

    fn dataset(&self) -> Result<BeatDataset, CliError> {
        let dir = self.dir(&["dataset"]);
        load_dataset(&dir).map_err(|e| missing(e, "run `preprocess` first"))
    }

    fn finish(&self, subcommand: &str, stage_dir: &Path) -> Result<(), CliError> {
        manifest::write(subcommand, &self.args, &self.loaded, self.seed, &self.out, stage_dir)?;
        log::info!("{subcommand}: wrote {}", stage_dir.display());
        Ok(())
    }

    /// Selected snapshots on disk, then configured snapshots, then training.
    fn adversarial_source(&self, classes: &[HeartbeatClass]) -> Result<GeneratorSource, CliError> {
        let exp = &self.config().experiment;
        if !exp.snapshots.is_empty() {
            return Ok(exp.adversarial_source()?);
        }
        let dirs: Vec<(HeartbeatClass, PathBuf)> =
            classes.iter().map(|&c| (c, self.dir(&["selected", c.name()]))).collect();
        if !dirs.is_empty() && dirs.iter().all(|(_, d)| d.exists()) {
            let snaps = dirs
                .into_iter()
                .map(|(c, d)| Ok((c, Snapshot::load(&d)?)))
                .collect::<Result<Vec<_>, Error>>()?;
            return Ok(GeneratorSource::Snapshots(snaps));
        }
        Ok(exp.adversarial_source()?)
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Stage(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn missing(e: Error, hint: &str) -> CliError {
    match e {
        Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => CliError::Stage(Error::Io {
            path,
            source: std::io::Error::new(source.kind(), format!("{source} ({hint})")),
        }),
        other => other.into(),
    }
}

fn dataset_of(images: Vec<BeatImage>) -> Result<BeatDataset, CliError> {
    Ok(BeatDataset::from_items(images)?)
}

pub fn preprocess(common: &Common) -> Result<(), CliError> {
    let stage = Stage::new(common)?;
    let cfg = stage.config();
    if cfg.records.is_empty() {
        return Err(CliError::Config("no records configured".into()));
    }
    let records = cfg
        .records
        .iter()
        .map(|r| load_record(&r.signal, &r.annotations))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = build_dataset(&records, &cfg.preprocess)?;
    let dataset = stratified_split(&dataset, &cfg.experiment.fractions, stage.seed)?;
    let dir = stage.dir(&["dataset"]);
    stage.fresh(&dir)?;
    save_dataset(&dataset, &dir)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        log::info!("{split}: {:?}", dataset.split_histogram(split));
    }
    stage.finish("preprocess", &dir)
}

pub fn train_gan(common: &Common, class: HeartbeatClass) -> Result<(), CliError> {
    let stage = Stage::new(common)?.arg("class", class);
    let dataset = stage.dataset()?;
    let images: Vec<&BeatImage> = dataset
        .class_indices(class, Split::Train)
        .into_iter()
        .map(|i| &dataset.items()[i])
        .collect();
    if images.is_empty() {
        return Err(CliError::Stage(Error::Contract(format!("no {class} train images"))));
    }
    let exp = &stage.config().experiment;
    let schedule = TrainSchedule {
        max_epochs: exp.gan_epochs,
        snapshot_period: stage.config().snapshot_period,
        seed: stage.seed,
    };
    let store = SnapshotStore::for_class(&stage.out, class);
    // Resuming is exact, so an interrupted run finishes with the same files.
    let mut gan = match store.resume()? {
        Some((gan, seed)) if seed == stage.seed && gan.config() == &exp.gan => gan,
        _ => {
            stage.fresh(store.root())?;
            InfoGan::new(exp.gan.clone(), stage.seed)?
        }
    };
    gan.train(&images, &schedule, Some(&store))?;
    stage.finish("train-gan", store.root())
}

pub fn select_snapshot(common: &Common, class: HeartbeatClass) -> Result<(), CliError> {
    let stage = Stage::new(common)?.arg("class", class);
    let store = SnapshotStore::for_class(&stage.out, class);
    let mut snaps = store.load_all()?;
    if snaps.is_empty() {
        return Err(CliError::Stage(Error::Contract(format!(
            "no snapshots under {} (run `train-gan` first)",
            store.root().display()
        ))));
    }
    let mut scorer = Cnn::load(&stage.dir(&["cnn", Method::Original.name()]), MODEL_STEM)
        .map_err(|e| missing(e, "run `train-cnn --method original` first"))?;
    let selection = gan::select_snapshot(&mut snaps, &mut scorer, class, stage.seed)?;
    let dir = stage.dir(&["selected", class.name()]);
    stage.fresh(&dir)?;
    snaps[selection.index].save(&dir, stage.seed)?;
    let scores: BTreeMap<String, f64> = snaps
        .iter()
        .zip(&selection.scores)
        .map(|(s, &v)| (format!("{:08}", s.epoch), v))
        .collect();
    let report = serde_json::json!({ "class": class, "epoch": selection.epoch, "scores": scores });
    let path = dir.join("selection.json");
    fs::write(&path, serde_json::to_string_pretty(&report).expect("json") + "\n").map_err(|e| io(&path, e))?;
    log::info!("{class}: selected epoch {}", selection.epoch);
    stage.finish("select-snapshot", &dir)
}

pub fn generate(common: &Common, class: HeartbeatClass, count: Option<usize>) -> Result<(), CliError> {
    let stage = Stage::new(common)?.arg("class", class);
    let dataset = stage.dataset()?;
    let count = match count {
        Some(n) => n,
        None => balance_counts(&dataset, &[class], stage.config().experiment.balance_target)?[&class],
    };
    let stage = stage.arg("count", count);
    let snap_dir = stage.dir(&["selected", class.name()]);
    let snap = Snapshot::load(&snap_dir).map_err(|e| missing(e, "run `select-snapshot` first"))?;
    let batch = adversarial_oversample(&snap, class, count, stage.seed)?;
    let dir = stage.dir(&["synthetic", class.name()]);
    stage.fresh(&dir)?;
    save_dataset(&dataset_of(batch.images)?, &dir)?;
    stage.finish("generate", &dir)
}

pub fn balance(common: &Common, method: Method, count: Option<usize>) -> Result<(), CliError> {
    let mut stage = Stage::new(common)?.arg("method", method);
    if let Some(n) = count {
        stage = stage.arg("count", n);
    }
    let dataset = stage.dataset()?;
    let exp = &stage.config().experiment;
    let classes = &exp.minority_classes;
    let source = match method {
        Method::Adversarial => Some(stage.adversarial_source(classes)?),
        _ => None,
    };
    let sampler = oversampler_for(method, exp.k_neighbors, source.as_ref())?;
    let balanced = match (sampler, count) {
        (None, _) => dataset,
        (Some(s), Some(n)) => {
            let counts = classes.iter().map(|&c| (c, n)).collect();
            inject(&dataset, s.as_ref(), &counts, stage.seed)?
        }
        (Some(s), None) => {
            harness::balance_to_target(&dataset, Some(s.as_ref()), classes, exp.balance_target, stage.seed)?
        }
    };
    let dir = stage.dir(&["balanced", method.name()]);
    stage.fresh(&dir)?;
    save_dataset(&balanced, &dir)?;
    log::info!("train: {:?}", balanced.split_histogram(Split::Train));
    stage.finish("balance", &dir)
}

fn training_set(stage: &Stage, method: Method) -> Result<BeatDataset, CliError> {
    match method {
        Method::Original => stage.dataset(),
        m => load_dataset(&stage.dir(&["balanced", m.name()]))
            .map_err(|e| missing(e, &format!("run `balance --method {m}` first"))),
    }
}

pub fn train_cnn(common: &Common, method: Method) -> Result<(), CliError> {
    let stage = Stage::new(common)?.arg("method", method);
    let dataset = training_set(&stage, method)?;
    let mut cnn = Cnn::new(stage.config().experiment.cnn.clone(), stage.seed)?;
    let history = cnn.train(&dataset, stage.seed)?;
    let dir = stage.dir(&["cnn", method.name()]);
    stage.fresh(&dir)?;
    cnn.save(&dir, MODEL_STEM)?;
    let path = dir.join("history.json");
    fs::write(&path, serde_json::to_string_pretty(&history).expect("json") + "\n").map_err(|e| io(&path, e))?;
    log::info!("best epoch {} (val loss {:.4})", history.best_epoch, history.best_val_loss);
    stage.finish("train-cnn", &dir)
}

pub fn evaluate(common: &Common, method: Method) -> Result<(), CliError> {
    let stage = Stage::new(common)?.arg("method", method);
    let dataset = training_set(&stage, method)?;
    let cnn = Cnn::load(&stage.dir(&["cnn", method.name()]), MODEL_STEM)
        .map_err(|e| missing(e, &format!("run `train-cnn --method {method}` first")))?;
    let meta = beatgan::classifier::ReportMetadata {
        seed: stage.seed,
        method: method.name().to_string(),
        synthetic_counts: dataset
            .items()
            .iter()
            .filter(|i| i.is_synthetic())
            .fold(BTreeMap::new(), |mut m, i| {
                *m.entry(i.label).or_insert(0) += 1;
                m
            }),
        train_size: dataset.indices(Split::Train).len(),
    };
    let report: EvalReport = cnn.evaluate(&dataset, Split::Test, meta)?;
    let dir = stage.dir(&["evaluation", method.name()]);
    stage.fresh(&dir)?;
    report.save(&dir.join("report.json"))?;
    for c in report.classes.iter().filter(|c| c.defined) {
        log::info!("{}: F1 {:.4} (support {})", c.class, c.f1, c.support);
    }
    log::info!("macro F1 {:.4}, weighted F1 {:.4}", report.macro_f1, report.weighted_f1);
    stage.finish("evaluate", &dir)
}

pub fn experiment(common: &Common, method: Option<Method>, count: Option<usize>) -> Result<(), CliError> {
    let mut stage = Stage::new(common)?;
    let mut exp = stage.config().experiment.clone();
    exp.seed = stage.seed;
    if let Some(m) = method {
        exp.methods = vec![m];
        stage = stage.arg("method", m);
    }
    if let Some(n) = count {
        exp.adversarial_counts = exp.minority_classes.iter().map(|&c| (c, n)).collect();
        stage = stage.arg("count", n);
    }
    let dataset = stage.dataset()?;
    let source = if exp.methods.contains(&Method::Adversarial) {
        Some(stage.adversarial_source(&exp.minority_classes)?)
    } else {
        None
    };
    let dir = stage.dir(&["experiment"]);
    stage.fresh(&dir)?;
    let mut trainer = CnnTrainer { config: exp.cnn.clone() };
    let checkpoint = dir.join(harness::ARCHIVE_FILE);
    let archive = harness::run_comparison(&dataset, &exp, source.as_ref(), &mut trainer, Some(&checkpoint))?;
    render_reports(&archive, &dir)?;
    print!("{}", archive.table().to_csv());
    stage.finish("experiment", &dir)
}

pub fn injection_study(common: &Common, class: HeartbeatClass, method: Method) -> Result<(), CliError> {
    let stage = Stage::new(common)?.arg("class", class).arg("method", method);
    let exp = &stage.config().experiment;
    let step = *exp
        .injection_steps
        .get(&class)
        .ok_or_else(|| CliError::Config(format!("no injection step configured for {class}")))?;
    let dataset = stage.dataset()?;
    let source = match method {
        Method::Adversarial => Some(stage.adversarial_source(&[class])?),
        _ => None,
    };
    let sampler = oversampler_for(method, exp.k_neighbors, source.as_ref())?
        .ok_or_else(|| CliError::Usage("the injection study needs an oversampling method".into()))?;
    let needed = balance_counts(&dataset, &[class], exp.balance_target)?[&class];
    let pool = sampler.synthesize(&dataset, class, needed, stage.seed)?.images;
    let mut trainer = CnnTrainer { config: exp.cnn.clone() };
    let curve = harness::injection_study(
        &dataset,
        class,
        &pool,
        step,
        exp.balance_target,
        exp.repeats,
        stage.seed,
        &mut trainer,
    )?;
    for p in &curve.points {
        log::info!("+{}: {class} mean F1 {:.4}", p.synthetic, p.mean_f1.get(&class).copied().unwrap_or(0.0));
    }
    let mut archive = RunArchive::new(vec![method], exp.repeats);
    archive.curves.push(curve);
    let dir = stage.dir(&["injection", class.name()]);
    stage.fresh(&dir)?;
    render_reports(&archive, &dir)?;
    stage.finish("injection-study", &dir)
}
