//! Synthetic data bundled with the crate: a two-mode bar-pattern image set
//! and ECG-like beats built from Gaussian P/QRS/T components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::class::HeartbeatClass;
use crate::dataset::{BeatDataset, BeatImage, Provenance};
use crate::error::Result;
use crate::ingest::{Annotation, EcgRecord};
use crate::preprocess::rasterize_beat;

/// Label carried by horizontal-bar images.
pub const BARS_HORIZONTAL: HeartbeatClass = HeartbeatClass::Normal;
/// Label carried by vertical-bar images.
pub const BARS_VERTICAL: HeartbeatClass = HeartbeatClass::Pvc;
pub const BAR_WIDTH: usize = 4;
pub const BAR_JITTER: usize = 0;

/// `2 * per_mode` images of `size x size`, alternating between one
/// full-length horizontal bar and one vertical bar, `BAR_WIDTH` pixels thick
/// and shifted at most `jitter` pixels from the center.
pub fn bars_dataset(per_mode: usize, size: usize, jitter: usize, seed: u64) -> Vec<BeatImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_mode);
    let center = (size - BAR_WIDTH) / 2;
    let jitter = jitter.min(center);
    for i in 0..2 * per_mode {
        let vertical = i % 2 == 1;
        let mut grid = vec![0u8; size * size];
        let at = rng.gen_range(center - jitter..=center + jitter);
        for offset in 0..BAR_WIDTH {
            for k in 0..size {
                let (r, c) = if vertical { (k, at + offset) } else { (at + offset, k) };
                grid[r * size + c] = 1;
            }
        }
        let label = if vertical { BARS_VERTICAL } else { BARS_HORIZONTAL };
        let img = BeatImage::new(
            size,
            size,
            grid,
            label,
            Provenance::Real {
                record_id: "bars".into(),
                annotation_index: i,
            },
        )
        .expect("bars are binary");
        out.push(img);
    }
    out
}

/// One Gaussian bump: amplitude (mV), center offset from the R peak and
/// width, both in samples.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Wave {
    amplitude: f64,
    center: f64,
    width: f64,
}

fn w(amplitude: f64, center: f64, width: f64) -> Wave {
    Wave {
        amplitude,
        center,
        width,
    }
}

fn morphology(class: HeartbeatClass) -> Vec<Wave> {
    match class {
        HeartbeatClass::Normal => vec![
            w(0.15, -70.0, 10.0),
            w(-0.10, -10.0, 3.0),
            w(1.00, 0.0, 4.0),
            w(-0.25, 10.0, 4.0),
            w(0.30, 90.0, 18.0),
        ],
        HeartbeatClass::Apc => vec![
            w(0.10, -95.0, 8.0),
            w(-0.08, -10.0, 3.0),
            w(1.00, 0.0, 4.0),
            w(-0.25, 10.0, 4.0),
            w(0.22, 80.0, 15.0),
        ],
        HeartbeatClass::Veb => vec![
            w(1.00, 0.0, 11.0),
            w(-0.45, 22.0, 11.0),
            w(-0.35, 95.0, 22.0),
        ],
        HeartbeatClass::Pvc => vec![
            w(-0.30, -12.0, 8.0),
            w(1.00, 0.0, 9.0),
            w(-0.50, 18.0, 10.0),
            w(0.35, 85.0, 20.0),
        ],
        HeartbeatClass::Lbbb => vec![
            w(0.12, -80.0, 10.0),
            w(0.85, -7.0, 7.0),
            w(0.85, 7.0, 7.0),
            w(-0.30, 95.0, 20.0),
        ],
        HeartbeatClass::Rbb => vec![
            w(0.12, -75.0, 10.0),
            w(0.90, 0.0, 4.0),
            w(-0.35, 9.0, 5.0),
            w(0.50, 18.0, 5.0),
            w(0.20, 95.0, 18.0),
        ],
        HeartbeatClass::Pab => vec![
            w(1.10, -40.0, 1.5),
            w(0.85, 0.0, 13.0),
            w(-0.30, 90.0, 22.0),
        ],
    }
}

/// Per-beat variability of the toy generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyBeatConfig {
    /// Relative standard deviation applied to amplitudes and widths.
    pub jitter: f64,
    /// Standard deviation of center shifts, in samples.
    pub shift: f64,
    /// Standard deviation of additive white noise (mV).
    pub noise: f64,
    /// Amplitude of a slow baseline drift (mV).
    pub wander: f64,
}

impl Default for ToyBeatConfig {
    fn default() -> Self {
        ToyBeatConfig {
            jitter: 0.15,
            shift: 4.0,
            noise: 0.02,
            wander: 0.05,
        }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn jittered(class: HeartbeatClass, config: &ToyBeatConfig, rng: &mut impl Rng) -> Vec<Wave> {
    morphology(class)
        .iter()
        .map(|wave| Wave {
            amplitude: wave.amplitude * (1.0 + config.jitter * normal(rng)),
            // The R wave stays anchored on the annotated sample.
            center: if wave.center == 0.0 {
                0.0
            } else {
                wave.center + config.shift * normal(rng)
            },
            width: (wave.width * (1.0 + config.jitter * normal(rng))).max(1.0),
        })
        .collect()
}

fn render_waves(waves: &[Wave], offsets: impl Iterator<Item = f64>) -> Vec<f64> {
    offsets
        .map(|t| {
            waves
                .iter()
                .map(|wv| wv.amplitude * (-0.5 * ((t - wv.center) / wv.width).powi(2)).exp())
                .sum()
        })
        .collect()
}

/// A peak-centered window of `2 * half_width + 1` samples for one beat.
pub fn toy_beat_window(
    class: HeartbeatClass,
    half_width: usize,
    config: &ToyBeatConfig,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let waves = jittered(class, config, rng);
    let hw = half_width as f64;
    let mut window = render_waves(&waves, (0..=2 * half_width).map(|i| i as f64 - hw));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let slope = config.wander * normal(rng);
    for (i, v) in window.iter_mut().enumerate() {
        let t = i as f64 / (2.0 * hw).max(1.0);
        *v += slope * (std::f64::consts::PI * t + phase).sin() + config.noise * normal(rng);
    }
    window
}

/// Rasterized toy beats, `count` per listed class, in listing order.
pub fn toy_beat_dataset(
    counts: &[(HeartbeatClass, usize)],
    half_width: usize,
    image_size: usize,
    config: &ToyBeatConfig,
    seed: u64,
) -> Result<BeatDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dataset = BeatDataset::new();
    let mut index = 0;
    for &(class, count) in counts {
        for _ in 0..count {
            let window = toy_beat_window(class, half_width, config, &mut rng);
            let source = Provenance::Real {
                record_id: "toy".into(),
                annotation_index: index,
            };
            dataset.push(rasterize_beat(&window, image_size, class, source)?)?;
            index += 1;
        }
    }
    Ok(dataset)
}

/// A continuous record with one beat per entry of `beats`, spaced `rr`
/// samples apart, with `margin` quiet samples at either end. Amplitudes are
/// rounded to microvolts so the CSV rendering is compact.
pub fn toy_record(
    record_id: &str,
    beats: &[HeartbeatClass],
    rr: usize,
    margin: usize,
    config: &ToyBeatConfig,
    seed: u64,
) -> Result<EcgRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 2 * margin + rr * beats.len().saturating_sub(1) + 1;
    let mut signal = vec![0.0; len];
    let mut annotations = Vec::with_capacity(beats.len());
    for (b, &class) in beats.iter().enumerate() {
        let peak = margin + b * rr;
        let waves = jittered(class, config, &mut rng);
        let lo = peak.saturating_sub(rr);
        let hi = (peak + rr).min(len - 1);
        let shape = render_waves(&waves, (lo..=hi).map(|i| i as f64 - peak as f64));
        for (v, s) in signal[lo..=hi].iter_mut().zip(shape) {
            *v += s;
        }
        annotations.push(Annotation {
            sample_index: peak,
            label: class,
        });
    }
    for (i, v) in signal.iter_mut().enumerate() {
        let drift = config.wander * (i as f64 / 700.0).sin();
        *v = ((*v + drift + config.noise * normal(&mut rng)) * 1000.0).round() / 1000.0;
    }
    EcgRecord::new(record_id, 360, signal, annotations)
}

/// Beat sequence of the bundled sample record.
pub fn sample_record_beats() -> Vec<HeartbeatClass> {
    use HeartbeatClass::*;
    let pattern = [Normal, Normal, Lbbb, Normal, Pvc, Rbb, Normal, Pab, Apc, Normal, Veb, Normal];
    pattern.iter().cycle().take(36).copied().collect()
}

/// The record bundled under `data/sample/`.
pub fn sample_record() -> Result<EcgRecord> {
    toy_record("toy100", &sample_record_beats(), 300, 200, &ToyBeatConfig::default(), 100)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{load_record, render_record};
    use crate::preprocess::{segment_beats, PreprocessConfig};
    use std::path::PathBuf;

    fn sample_paths() -> (PathBuf, PathBuf) {
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample");
        (dir.join("toy100_signal.csv"), dir.join("toy100_annotations.csv"))
    }

    #[test]
    fn bars_have_full_length_lines_in_one_direction() {
        let imgs = bars_dataset(10, 28, BAR_JITTER, 3);
        assert_eq!(imgs.len(), 20);
        for img in &imgs {
            let rows_full = (0..28).filter(|&r| (0..28).all(|c| img.pixel(r, c) == 1)).count();
            let cols_full = (0..28).filter(|&c| (0..28).all(|r| img.pixel(r, c) == 1)).count();
            if img.label == BARS_VERTICAL {
                assert!(cols_full == BAR_WIDTH && rows_full == 0);
            } else {
                assert!(rows_full == BAR_WIDTH && cols_full == 0);
            }
        }
    }

    #[test]
    fn toy_windows_peak_near_the_center_without_noise() {
        let quiet = ToyBeatConfig {
            jitter: 0.0,
            shift: 0.0,
            noise: 0.0,
            wander: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for class in [HeartbeatClass::Normal, HeartbeatClass::Veb, HeartbeatClass::Rbb] {
            let win = toy_beat_window(class, 125, &quiet, &mut rng);
            assert_eq!(win.len(), 251);
            let argmax = (0..win.len())
                .max_by(|&a, &b| win[a].total_cmp(&win[b]))
                .unwrap();
            assert!(argmax.abs_diff(125) <= 3, "{class}: peak at {argmax}");
        }
    }

    #[test]
    fn bundled_sample_matches_the_generator() {
        let record = sample_record().unwrap();
        let (sig, ann) = sample_paths();
        let loaded = load_record(&sig, &ann).unwrap();
        assert_eq!(loaded, record);
        let segmentation = segment_beats(&record, PreprocessConfig::default().half_width());
        assert_eq!(segmentation.windows.len(), 36);
        assert_eq!(segmentation.skipped, 0);
    }

    /// Rewrites the bundled CSV pair; run with `--ignored` after changing the generator.
    #[test]
    #[ignore]
    fn regenerate_bundled_sample() {
        let (sig, ann) = sample_paths();
        let (s, a) = render_record(&sample_record().unwrap());
        std::fs::create_dir_all(sig.parent().unwrap()).unwrap();
        std::fs::write(sig, s).unwrap();
        std::fs::write(ann, a).unwrap();
    }
}
