//! Peak-centered beat segmentation and polyline rasterization.

use serde::{Deserialize, Serialize};

use crate::class::HeartbeatClass;
use crate::dataset::{BeatDataset, BeatImage, Provenance};
use crate::error::{ensure, Error, Result};
use crate::ingest::{Annotation, EcgRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Number of time slices covered by one beat window.
    pub window_slices: usize,
    /// Raw samples per time slice.
    pub samples_per_slice: usize,
    /// Output images are `image_size x image_size`.
    pub image_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            window_slices: 25,
            samples_per_slice: 10,
            image_size: 112,
        }
    }
}

impl PreprocessConfig {
    /// Samples on each side of the peak: `floor(slices * samples_per_slice / 2)`.
    pub fn half_width(&self) -> usize {
        self.window_slices * self.samples_per_slice / 2
    }

    /// Window length, always odd so the peak sits on the middle sample.
    pub fn window_len(&self) -> usize {
        2 * self.half_width() + 1
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.window_slices > 0, "window_slices must be positive");
        ensure!(self.samples_per_slice > 0, "samples_per_slice must be positive");
        ensure!(self.image_size >= 8, "image_size must be at least 8, got {}", self.image_size);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatWindow {
    /// Position of the annotation within the record's annotation list.
    pub annotation_index: usize,
    pub annotation: Annotation,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Segmentation {
    pub windows: Vec<BeatWindow>,
    /// Annotations whose window would cross a signal boundary.
    pub skipped: usize,
}

/// Cuts one window of `2 * half_width + 1` samples around every annotation.
pub fn segment_beats(record: &EcgRecord, half_width: usize) -> Segmentation {
    let signal = record.signal();
    let mut out = Segmentation::default();
    for (annotation_index, annotation) in record.annotations().iter().enumerate() {
        let peak = annotation.sample_index;
        if peak < half_width || peak + half_width >= signal.len() {
            out.skipped += 1;
            continue;
        }
        out.windows.push(BeatWindow {
            annotation_index,
            annotation: *annotation,
            samples: signal[peak - half_width..=peak + half_width].to_vec(),
        });
    }
    out
}

/// Linear-interpolation resample of `window` onto `columns` evenly spaced points
/// spanning the first to the last sample.
pub fn resample(window: &[f64], columns: usize) -> Vec<f64> {
    let last = (window.len() - 1) as f64;
    (0..columns)
        .map(|j| {
            let t = if columns == 1 {
                0.0
            } else {
                j as f64 * last / (columns - 1) as f64
            };
            let i = (t.floor() as usize).min(window.len() - 2);
            let frac = t - i as f64;
            window[i] + (window[i + 1] - window[i]) * frac
        })
        .collect()
}

/// Row of each column's trace point; row 0 holds the maximum amplitude.
fn trace_rows(window: &[f64], size: usize) -> Vec<usize> {
    let values = resample(window, size);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span <= 0.0 {
        return vec![size / 2; size];
    }
    let top = (size - 1) as f64;
    values
        .iter()
        .map(|&v| {
            let level = (v - min) / span;
            ((1.0 - level) * top).round().clamp(0.0, top) as usize
        })
        .collect()
}

/// Renders `window` as a `size x size` binary polyline.
///
/// Each column gets the pixel at its mapped row plus the vertical run back to
/// the previous column's row, so every column holds exactly one contiguous run
/// and neighbouring columns touch.
pub fn rasterize(window: &[f64], size: usize) -> Result<Vec<u8>> {
    ensure!(window.len() >= 2, "window needs at least 2 samples, got {}", window.len());
    ensure!(size >= 8, "image size must be at least 8, got {size}");
    ensure!(window.iter().all(|v| v.is_finite()), "window has non-finite samples");
    let rows = trace_rows(window, size);
    let mut pixels = vec![0u8; size * size];
    for (col, &row) in rows.iter().enumerate() {
        let prev = if col == 0 { row } else { rows[col - 1] };
        let (lo, hi) = if prev <= row { (prev, row) } else { (row, prev) };
        for r in lo..=hi {
            pixels[r * size + col] = 1;
        }
    }
    Ok(pixels)
}

pub fn rasterize_beat(
    window: &[f64],
    size: usize,
    label: HeartbeatClass,
    source: Provenance,
) -> Result<BeatImage> {
    let pixels = rasterize(window, size)?;
    BeatImage::new(size, size, pixels, label, source)
}

/// Rasterizes every in-bounds beat of every record, in record then annotation order.
pub fn build_dataset(records: &[EcgRecord], config: &PreprocessConfig) -> Result<BeatDataset> {
    config.validate()?;
    let mut dataset = BeatDataset::new();
    for record in records {
        let segmentation = segment_beats(record, config.half_width());
        if segmentation.skipped > 0 {
            log::info!(
                "record {}: skipped {} boundary beats",
                record.record_id(),
                segmentation.skipped
            );
        }
        for window in segmentation.windows {
            let image = rasterize_beat(
                &window.samples,
                config.image_size,
                window.annotation.label,
                Provenance::Real {
                    record_id: record.record_id().to_string(),
                    annotation_index: window.annotation_index,
                },
            )?;
            dataset.push(image)?;
        }
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record_with(len: usize, peaks: &[usize]) -> EcgRecord {
        let signal = (0..len).map(|i| (i as f64 * 0.01).sin()).collect();
        let annotations = peaks
            .iter()
            .map(|&p| Annotation {
                sample_index: p,
                label: HeartbeatClass::Normal,
            })
            .collect();
        EcgRecord::new("t", 360, signal, annotations).unwrap()
    }

    fn column_runs(pixels: &[u8], size: usize, col: usize) -> usize {
        let mut runs = 0;
        let mut inside = false;
        for row in 0..size {
            let on = pixels[row * size + col] == 1;
            if on && !inside {
                runs += 1;
            }
            inside = on;
        }
        runs
    }

    #[test]
    fn default_window_geometry() {
        let c = PreprocessConfig::default();
        assert_eq!(c.half_width(), 125);
        assert_eq!(c.window_len(), 251);
    }

    #[test]
    fn interior_beat_is_centered() {
        let record = record_with(650_000, &[5000]);
        let seg = segment_beats(&record, 125);
        assert_eq!(seg.skipped, 0);
        let w = &seg.windows[0];
        assert_eq!(w.samples.len(), 251);
        assert_eq!(w.samples[125], record.signal()[5000]);
        assert_eq!(w.samples[0], record.signal()[5000 - 125]);
    }

    #[test]
    fn boundary_beats_are_skipped() {
        let record = record_with(1000, &[3, 500, 995]);
        let seg = segment_beats(&record, 112);
        assert_eq!(seg.skipped, 2);
        assert_eq!(seg.windows.len(), 1);
        assert_eq!(seg.windows[0].annotation_index, 1);
        // exactly on the margin
        let record = record_with(225, &[112]);
        assert_eq!(segment_beats(&record, 112).windows.len(), 1);
        let record = record_with(224, &[112]);
        assert_eq!(segment_beats(&record, 112).skipped, 1);
    }

    #[test]
    fn ramp_is_a_monotone_staircase() {
        let window: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let size = 16;
        let px = rasterize(&window, size).unwrap();
        assert_eq!(px[(size - 1) * size], 1, "bottom-left set");
        assert_eq!(px[size - 1], 1, "top-right set");
        let mut prev_top = size;
        for col in 0..size {
            let top = (0..size).find(|&r| px[r * size + col] == 1).unwrap();
            assert!(top <= prev_top);
            prev_top = top;
        }
    }

    #[test]
    fn flat_window_is_a_center_line() {
        let px = rasterize(&[0.7; 30], 12).unwrap();
        for row in 0..12 {
            for col in 0..12 {
                assert_eq!(px[row * 12 + col], u8::from(row == 6));
            }
        }
    }

    #[test]
    fn peak_lands_in_central_columns() {
        // a sharp peak at the middle sample of a 251-sample window
        let window: Vec<f64> = (0..251)
            .map(|i| (-((i as f64 - 125.0) / 3.0).powi(2)).exp())
            .collect();
        let px = rasterize(&window, 112).unwrap();
        let top_cols: Vec<usize> = (0..112).filter(|&c| px[c] == 1).collect();
        assert!(!top_cols.is_empty());
        for c in top_cols {
            assert!((54..=57).contains(&c), "peak column {c}");
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(rasterize(&[1.0], 16).is_err());
        assert!(rasterize(&[1.0, 2.0], 4).is_err());
        assert!(rasterize(&[1.0, f64::NAN], 16).is_err());
    }

    #[test]
    fn build_dataset_is_ordered_and_deterministic() {
        let config = PreprocessConfig {
            window_slices: 5,
            samples_per_slice: 4,
            image_size: 16,
        };
        let record = record_with(200, &[50, 100]);
        let single = build_dataset(std::slice::from_ref(&record), &config).unwrap();
        assert_eq!(single.len(), 2);
        let twice = build_dataset(&[record.clone(), record], &config).unwrap();
        assert_eq!(twice.len(), 4);
        assert_eq!(&twice.items()[..2], &twice.items()[2..]);
        assert_eq!(&twice.items()[..2], single.items());

        let edge = record_with(200, &[1]);
        assert!(matches!(build_dataset(&[edge], &config), Err(Error::EmptyDataset)));
    }

    proptest! {
        #[test]
        fn every_column_has_one_run(window in proptest::collection::vec(-3.0f64..3.0, 2..300), size in 8usize..64) {
            let px = rasterize(&window, size).unwrap();
            prop_assert!(px.iter().all(|&p| p <= 1));
            for col in 0..size {
                prop_assert_eq!(column_runs(&px, size, col), 1);
            }
        }

        #[test]
        fn scale_and_offset_invariant(
            window in proptest::collection::vec(-3.0f64..3.0, 2..300),
            scale in 0.1f64..10.0,
            offset in -10.0f64..10.0,
        ) {
            let moved: Vec<f64> = window.iter().map(|v| scale * v + offset).collect();
            prop_assert_eq!(rasterize(&window, 32).unwrap(), rasterize(&moved, 32).unwrap());
        }
    }
}
