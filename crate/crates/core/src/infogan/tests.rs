use super::*;
use crate::dataset::Provenance;

fn micro_config() -> GanConfig {
    GanConfig {
        image_size: 4,
        noise_dim: 3,
        code_dim: 2,
        seed_size: 1,
        generator_channels: vec![3, 2],
        discriminator_channels: vec![2, 3],
        shared_hidden: 4,
        q_hidden: 3,
        dropout: 0.0,
        batch_size: 4,
        ..GanConfig::default()
    }
}

fn micro_images(n: usize) -> Vec<BeatImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    (0..n)
        .map(|i| {
            let pixels: Vec<u8> = (0..16).map(|_| rng.gen_range(0..2)).collect();
            BeatImage::new(
                4,
                4,
                pixels,
                HeartbeatClass::Veb,
                Provenance::Real {
                    record_id: "t".into(),
                    annotation_index: i,
                },
            )
            .unwrap()
        })
        .collect()
}

fn micro_real(n: usize) -> Tensor {
    let imgs = micro_images(n);
    images_to_tensor(&imgs.iter().collect::<Vec<_>>()).unwrap()
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()) + 1e-7
}

#[test]
fn architectures_reach_the_image_size() {
    for config in [GanConfig::default(), GanConfig::desk(), micro_config()] {
        config.validate().unwrap();
        let gan = InfoGan::new(config.clone(), 1).unwrap();
        let latents = grid_latents(&config, 3, 2);
        let out = gan.generate(&latents).unwrap();
        let side = config.image_size;
        assert_eq!(out.shape(), [3, 1, side, side]);
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let q = gan.q_probabilities(&out).unwrap();
        for row in q {
            assert_eq!(row.len(), config.code_dim);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    let bad = GanConfig {
        image_size: 30,
        ..GanConfig::desk()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn latents_are_validated() {
    let config = micro_config();
    let gan = InfoGan::new(config.clone(), 1).unwrap();
    let wrong_code = LatentInput {
        noise: vec![0.0; 3],
        code: 2,
    };
    assert!(gan.generate(&[wrong_code]).is_err());
    let short = LatentInput {
        noise: vec![0.0; 2],
        code: 0,
    };
    assert!(gan.generate(&[short]).is_err());
}

#[test]
fn discriminate_rejects_unscaled_input() {
    let gan = InfoGan::new(micro_config(), 1).unwrap();
    let imgs = micro_images(2);
    let raw: Vec<f64> = imgs.iter().flat_map(|i| i.to_vector()).collect();
    let raw = Tensor::from_vec([2, 1, 4, 4], raw);
    assert!(matches!(gan.discriminate(&raw), Err(Error::Contract(_))));
    let scaled = micro_real(2);
    let out = gan.discriminate(&scaled).unwrap();
    assert_eq!(out.len(), 2);
    for (p, q) in out {
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(q.len(), 2);
    }
}

#[test]
fn discriminator_step_leaves_generator_untouched() {
    let mut gan = InfoGan::new(micro_config(), 3).unwrap();
    let real = micro_real(4);
    let g_before = gan.generator_values();
    let d_before = gan.discriminator_values();
    let q_before = gan.q_values();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    gan.train_step_discriminator(&real, &mut rng).unwrap();
    assert_eq!(gan.generator_values(), g_before);
    assert_ne!(gan.discriminator_values(), d_before);
    assert_ne!(gan.q_values(), q_before);
}

#[test]
fn generator_step_leaves_discriminator_untouched() {
    let mut gan = InfoGan::new(GanConfig::desk(), 3).unwrap();
    let g_before = gan.generator_values();
    let d_before = gan.discriminator_values();
    let q_before = gan.q_values();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    gan.train_step_generator(&mut rng).unwrap();
    // Includes batch-norm running statistics and dropout-free weights alike.
    assert_eq!(gan.discriminator_values(), d_before);
    assert_ne!(gan.generator_values(), g_before);
    assert_ne!(gan.q_values(), q_before);
}

#[test]
fn zero_lambda_removes_the_information_term() {
    let mut config = micro_config();
    config.lambda_info = 0.0;
    let a = InfoGan::new(config.clone(), 5).unwrap();
    let mut b = a.clone();
    // A different Q head must not influence the generator update.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in b.q_head.params_mut() {
        p.value.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
    }
    let mut a = a;
    let la = a.train_step_generator(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let lb = b.train_step_generator(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a.generator_values(), b.generator_values());
    assert!((la.objective(0.0) - la.g_loss).abs() < 1e-12);
    assert!((la.g_loss - lb.g_loss).abs() < 1e-12);
}

fn perturbed(gan: &InfoGan, which: &str, block: usize, j: usize, h: f64) -> InfoGan {
    let mut g = gan.clone();
    let net = match which {
        "generator" => &mut g.generator,
        "trunk" => &mut g.trunk,
        "d_head" => &mut g.d_head,
        _ => &mut g.q_head,
    };
    net.params_mut()[block].value[j] += h;
    g
}

fn trainable_grads(net: &Network) -> Vec<(usize, Vec<f64>)> {
    net.named_params()
        .into_iter()
        .enumerate()
        .filter(|(_, (_, p))| p.trainable)
        .map(|(i, (_, p))| (i, p.grad.clone()))
        .collect()
}

#[test]
fn generator_step_gradients_match_finite_differences() {
    let mut config = micro_config();
    config.lambda_info = 0.7;
    let mut gan = InfoGan::new(config.clone(), 21).unwrap();
    let latents = grid_latents(&config, 4, 8);
    let objective = |g: &InfoGan| {
        let mut g = g.clone();
        let l = g.generator_gradients(&latents, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        l.objective(config.lambda_info)
    };
    gan.generator_gradients(&latents, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let h = 1e-6;
    for which in ["generator", "q_head"] {
        let net = if which == "generator" { &gan.generator } else { &gan.q_head };
        for (block, grad) in trainable_grads(net) {
            for (j, &analytic) in grad.iter().enumerate() {
                let numeric = (objective(&perturbed(&gan, which, block, j, h))
                    - objective(&perturbed(&gan, which, block, j, -h)))
                    / (2.0 * h);
                assert!(
                    close(analytic, numeric),
                    "{which} block {block} element {j}: {analytic} vs {numeric}"
                );
            }
        }
    }
}

#[test]
fn discriminator_step_gradients_match_finite_differences() {
    let mut config = micro_config();
    config.lambda_info = 1.3;
    let mut gan = InfoGan::new(config.clone(), 22).unwrap();
    let real = micro_real(3);
    let latents = grid_latents(&config, 4, 9);
    let objective = |g: &InfoGan| {
        let mut g = g.clone();
        let l = g
            .discriminator_gradients(&real, &latents, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        l.d_loss + config.lambda_info * l.info_loss
    };
    gan.discriminator_gradients(&real, &latents, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let h = 1e-6;
    for which in ["trunk", "d_head", "q_head"] {
        let net = match which {
            "trunk" => &gan.trunk,
            "d_head" => &gan.d_head,
            _ => &gan.q_head,
        };
        for (block, grad) in trainable_grads(net) {
            for (j, &analytic) in grad.iter().enumerate() {
                let numeric = (objective(&perturbed(&gan, which, block, j, h))
                    - objective(&perturbed(&gan, which, block, j, -h)))
                    / (2.0 * h);
                assert!(
                    close(analytic, numeric),
                    "{which} block {block} element {j}: {analytic} vs {numeric}"
                );
            }
        }
    }
}

#[test]
fn resumed_training_reproduces_the_uninterrupted_run() {
    let images = micro_images(6);
    let refs: Vec<&BeatImage> = images.iter().collect();
    let config = micro_config();
    let full_schedule = TrainSchedule {
        max_epochs: 1000,
        snapshot_period: 500,
        seed: 12,
    };

    let mut straight = InfoGan::new(config.clone(), 12).unwrap();
    let uninterrupted = straight.train(&refs, &full_schedule, None).unwrap();
    assert_eq!(
        uninterrupted.iter().map(|s| s.epoch).collect::<Vec<_>>(),
        vec![500, 1000]
    );

    let dir = tempfile::TempDir::new().unwrap();
    let store = SnapshotStore::for_class(dir.path(), HeartbeatClass::Veb);
    let mut first = InfoGan::new(config, 12).unwrap();
    let half = TrainSchedule {
        max_epochs: 500,
        ..full_schedule.clone()
    };
    first.train(&refs, &half, Some(&store)).unwrap();
    drop(first);

    let (mut resumed, seed) = store.resume().unwrap().expect("saved state");
    assert_eq!(resumed.epoch(), 500);
    assert_eq!(seed, 12);
    resumed.train(&refs, &full_schedule, Some(&store)).unwrap();

    assert_eq!(store.epochs().unwrap(), vec![500, 1000]);
    let saved = store.load_all().unwrap();
    for (a, b) in saved.iter().zip(&uninterrupted) {
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.generator.snapshot_values(), b.generator.snapshot_values());
    }
    assert_eq!(resumed.discriminator_values(), straight.discriminator_values());

    let dir500 = store.dir_for(500);
    for file in ["generator.bin", "generator.json", "state.bin", "state.json", "samples.pgm", "metrics.json"] {
        assert!(dir500.join(file).exists(), "{file}");
    }
    let grid = pgm::decode(&std::fs::read(dir500.join(GRID_FILE)).unwrap()).unwrap();
    assert_eq!((grid.width, grid.height), (4 * 5 - 1, 4 * 5 - 1));
}

#[test]
fn divergence_aborts_with_a_diagnostic_snapshot() {
    let images = micro_images(4);
    let refs: Vec<&BeatImage> = images.iter().collect();
    let mut gan = InfoGan::new(micro_config(), 2).unwrap();
    gan.d_head.params_mut()[0].value[0] = f64::NAN;
    let dir = tempfile::TempDir::new().unwrap();
    let store = SnapshotStore::at(dir.path());
    let schedule = TrainSchedule {
        max_epochs: 10,
        snapshot_period: 5,
        seed: 0,
    };
    let err = gan.train(&refs, &schedule, Some(&store)).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }));
    assert!(dir.path().join("0-diverged").join(METRICS_FILE).exists());
}

struct ScriptedScorer {
    /// Fraction of target labels to return on each successive call.
    fractions: Vec<f64>,
    calls: usize,
}

impl SnapshotScorer for ScriptedScorer {
    fn classify(&mut self, images: &[BeatImage]) -> Result<Vec<HeartbeatClass>> {
        let hits = (self.fractions[self.calls] * images.len() as f64).round() as usize;
        self.calls += 1;
        Ok((0..images.len())
            .map(|i| if i < hits { HeartbeatClass::Apc } else { HeartbeatClass::Normal })
            .collect())
    }
}

fn fake_snapshots(epochs: &[u64]) -> Vec<Snapshot> {
    let gan = InfoGan::new(micro_config(), 0).unwrap();
    let schedule = TrainSchedule::default();
    epochs
        .iter()
        .map(|&e| {
            let mut s = gan.snapshot(&schedule, None, false);
            s.epoch = e;
            s.metrics.epoch = e;
            s
        })
        .collect()
}

#[test]
fn selection_prefers_the_highest_score_then_the_latest_epoch() {
    let mut snaps = fake_snapshots(&[500, 1000, 1500, 2000]);
    let mut scorer = ScriptedScorer {
        fractions: vec![0.25, 0.75, 0.5, 0.75],
        calls: 0,
    };
    let sel = select_snapshot(&mut snaps, &mut scorer, HeartbeatClass::Apc, 1).unwrap();
    assert_eq!(sel.epoch, 2000);
    assert_eq!(sel.index, 3);
    assert_eq!(sel.scores, vec![0.25, 0.75, 0.5, 0.75]);
    assert_eq!(snaps[1].metrics.quality_score, Some(0.75));

    let mut scorer = ScriptedScorer {
        fractions: vec![0.25, 0.9, 0.5, 0.75],
        calls: 0,
    };
    let sel = select_snapshot(&mut snaps, &mut scorer, HeartbeatClass::Apc, 1).unwrap();
    assert_eq!(sel.epoch, 1000);

    assert_eq!(select_snapshot_by_epoch(&snaps, 1500).unwrap(), 2);
    assert!(select_snapshot_by_epoch(&snaps, 700).is_err());
}

#[test]
fn adversarial_oversample_yields_labelled_binary_train_images() {
    let snap = fake_snapshots(&[500]).remove(0);
    let batch = adversarial_oversample(&snap, HeartbeatClass::Veb, 9, 4).unwrap();
    assert_eq!(batch.len(), 9);
    assert_eq!(batch.method, SyntheticMethod::Adversarial);
    for img in &batch.images {
        assert_eq!(img.label, HeartbeatClass::Veb);
        assert_eq!(img.split, Split::Train);
        assert!(img.pixels().iter().all(|&p| p <= 1));
        assert!(matches!(
            img.source,
            Provenance::Synthetic {
                method: SyntheticMethod::Adversarial,
                ..
            }
        ));
    }
    let again = adversarial_oversample(&snap, HeartbeatClass::Veb, 9, 4).unwrap();
    assert_eq!(again.images, batch.images);
}

#[test]
fn snapshot_round_trips_through_disk() {
    let images = micro_images(4);
    let refs: Vec<&BeatImage> = images.iter().collect();
    let mut gan = InfoGan::new(micro_config(), 2).unwrap();
    let dir = tempfile::TempDir::new().unwrap();
    let store = SnapshotStore::at(dir.path());
    let schedule = TrainSchedule {
        max_epochs: 6,
        snapshot_period: 3,
        seed: 1,
    };
    let snaps = gan.train(&refs, &schedule, Some(&store)).unwrap();
    let loaded = store.load_all().unwrap();
    assert_eq!(loaded.len(), 2);
    let latents = grid_latents(gan.config(), 5, 3);
    for (a, b) in snaps.iter().zip(&loaded) {
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.generate(&latents).unwrap(), b.generate(&latents).unwrap());
    }
}
