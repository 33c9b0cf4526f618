//! Loading annotated ECG recordings from the two-file CSV export.
//!
//! A recording is a signal file (`sample_index,amplitude_mv`, one row per
//! sample, indices `0..n` in order) plus an annotation file
//! (`sample_index,symbol`). Only one channel is carried per record.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::class::{HeartbeatClass, SymbolTable};
use crate::error::{Error, Result};

pub const SIGNAL_HEADER: &str = "sample_index,amplitude_mv";
pub const ANNOTATION_HEADER: &str = "sample_index,symbol";

/// MIT-BIH sampling rate, used when the caller does not override it.
pub const DEFAULT_SAMPLING_RATE: u32 = 360;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_index: usize,
    pub label: HeartbeatClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    record_id: String,
    sampling_rate: u32,
    signal: Vec<f64>,
    annotations: Vec<Annotation>,
}

impl EcgRecord {
    pub fn new(
        record_id: impl Into<String>,
        sampling_rate: u32,
        signal: Vec<f64>,
        annotations: Vec<Annotation>,
    ) -> Result<Self> {
        let record_id = record_id.into();
        if sampling_rate == 0 {
            return Err(Error::contract("sampling rate must be positive"));
        }
        if signal.is_empty() {
            return Err(Error::contract(format!("record {record_id} has an empty signal")));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("record {record_id} has non-finite samples")));
        }
        for pair in annotations.windows(2) {
            if pair[1].sample_index <= pair[0].sample_index {
                return Err(Error::contract(format!(
                    "record {record_id}: annotations not strictly increasing at sample {}",
                    pair[1].sample_index
                )));
            }
        }
        if let Some(last) = annotations.last() {
            if last.sample_index >= signal.len() {
                return Err(Error::contract(format!(
                    "record {record_id}: annotation at {} outside signal of length {}",
                    last.sample_index,
                    signal.len()
                )));
            }
        }
        Ok(EcgRecord {
            record_id,
            sampling_rate,
            signal,
            annotations,
        })
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn sampling_rate(&self) -> u32 {
        self.sampling_rate
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub sampling_rate: u32,
    pub symbols: SymbolTable,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            sampling_rate: DEFAULT_SAMPLING_RATE,
            symbols: SymbolTable::shipped(),
        }
    }
}

/// Loads a record at the default 360 Hz with the shipped symbol table.
pub fn load_record(signal_path: &Path, annotation_path: &Path) -> Result<EcgRecord> {
    load_record_with(signal_path, annotation_path, &LoadOptions::default())
}

pub fn load_record_with(
    signal_path: &Path,
    annotation_path: &Path,
    options: &LoadOptions,
) -> Result<EcgRecord> {
    let record_id = record_id_from_path(signal_path);
    let signal_text = fs::read_to_string(signal_path).map_err(|e| Error::io(signal_path, e))?;
    let signal = parse_signal(&signal_text, signal_path)?;
    let annotation_text =
        fs::read_to_string(annotation_path).map_err(|e| Error::io(annotation_path, e))?;
    let (annotations, dropped) =
        parse_annotations(&annotation_text, annotation_path, signal.len(), &options.symbols)?;
    if dropped > 0 {
        log::info!("record {record_id}: skipped {dropped} annotations outside the class table");
    }
    if annotations.is_empty() {
        return Err(Error::EmptyRecord(record_id));
    }
    EcgRecord::new(record_id, options.sampling_rate, signal, annotations)
}

/// `100_signal.csv` and `100.signal.csv` both name record `100`.
pub fn record_id_from_path(signal_path: &Path) -> String {
    let stem = signal_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in ["_signal", ".signal", "-signal"] {
        if let Some(id) = stem.strip_suffix(suffix) {
            if !id.is_empty() {
                return id.to_string();
            }
        }
    }
    stem
}

fn data_lines<'a>(
    text: &'a str,
    header: &str,
    path: &Path,
) -> Result<impl Iterator<Item = (usize, &'a str)>> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, first)) if first.trim_start_matches('\u{feff}') == header => {}
        Some((line, first)) => {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                message: format!("expected header `{header}`, found `{first}`"),
            })
        }
        None => unreachable!("split always yields one item"),
    }
    Ok(lines.filter(|(_, l)| !l.is_empty()))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_signal(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut signal = Vec::new();
    for (line, row) in data_lines(text, SIGNAL_HEADER, path)? {
        let (index, value) = row
            .split_once(',')
            .ok_or_else(|| parse_error(path, line, "expected two columns"))?;
        let index: usize = index
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad sample index `{index}`")))?;
        if index != signal.len() {
            return Err(parse_error(
                path,
                line,
                format!("sample index {index} out of sequence, expected {}", signal.len()),
            ));
        }
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad amplitude `{value}`")))?;
        if !value.is_finite() {
            return Err(parse_error(path, line, "amplitude is not finite"));
        }
        signal.push(value);
    }
    if signal.is_empty() {
        return Err(parse_error(path, 1, "signal has no samples"));
    }
    Ok(signal)
}

fn parse_annotations(
    text: &str,
    path: &Path,
    signal_len: usize,
    symbols: &SymbolTable,
) -> Result<(Vec<Annotation>, usize)> {
    let mut annotations: Vec<Annotation> = Vec::new();
    let mut last_index: Option<usize> = None;
    let mut dropped = 0;
    for (line, row) in data_lines(text, ANNOTATION_HEADER, path)? {
        let (index, symbol) = row
            .split_once(',')
            .ok_or_else(|| parse_error(path, line, "expected two columns"))?;
        let index: usize = index
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad sample index `{index}`")))?;
        if index >= signal_len {
            return Err(parse_error(
                path,
                line,
                format!("annotation index {index} out of range for {signal_len} samples"),
            ));
        }
        if last_index.is_some_and(|last| index <= last) {
            return Err(parse_error(
                path,
                line,
                format!("annotation index {index} is not strictly increasing"),
            ));
        }
        last_index = Some(index);
        match symbols.lookup(symbol.trim()) {
            Some(label) => annotations.push(Annotation {
                sample_index: index,
                label,
            }),
            None => dropped += 1,
        }
    }
    Ok((annotations, dropped))
}

/// Serializes a record in the export format; `load_record` reads it back
/// to an identical value.
pub fn write_record(record: &EcgRecord, signal_path: &Path, annotation_path: &Path) -> Result<()> {
    let (signal, annotations) = render_record(record);
    fs::write(signal_path, signal).map_err(|e| Error::io(signal_path, e))?;
    fs::write(annotation_path, annotations).map_err(|e| Error::io(annotation_path, e))?;
    Ok(())
}

pub fn render_record(record: &EcgRecord) -> (String, String) {
    let mut signal = String::with_capacity(record.signal.len() * 16);
    signal.push_str(SIGNAL_HEADER);
    signal.push('\n');
    for (i, v) in record.signal.iter().enumerate() {
        // `{}` on f64 is the shortest representation that parses back exactly.
        let _ = writeln!(signal, "{i},{v}");
    }
    let mut annotations = String::new();
    annotations.push_str(ANNOTATION_HEADER);
    annotations.push('\n');
    for a in &record.annotations {
        let _ = writeln!(annotations, "{},{}", a.sample_index, a.label.symbol());
    }
    (signal, annotations)
}

/// Annotation counts per class over all records; every class is present.
pub fn class_histogram(records: &[EcgRecord]) -> Result<BTreeMap<HeartbeatClass, usize>> {
    if records.is_empty() {
        return Err(Error::contract("class_histogram needs at least one record"));
    }
    let mut histogram: BTreeMap<HeartbeatClass, usize> =
        HeartbeatClass::ALL.iter().map(|&c| (c, 0)).collect();
    for record in records {
        for a in &record.annotations {
            *histogram.entry(a.label).or_default() += 1;
        }
    }
    if histogram.values().all(|&n| n == 0) {
        return Err(Error::EmptyRecord(
            records.iter().map(|r| r.record_id.as_str()).collect::<Vec<_>>().join(","),
        ));
    }
    Ok(histogram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::TempDir;

    fn write_pair(dir: &TempDir, signal: &str, annotations: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let s = dir.path().join("rec_signal.csv");
        let a = dir.path().join("rec_annotations.csv");
        fs::write(&s, signal).unwrap();
        fs::write(&a, annotations).unwrap();
        (s, a)
    }

    fn ten_samples() -> String {
        let mut s = String::from("sample_index,amplitude_mv\n");
        for i in 0..10 {
            s.push_str(&format!("{i},{}\n", i as f64 * 0.1));
        }
        s
    }

    #[test]
    fn minimal_record() {
        let dir = TempDir::new().unwrap();
        let (s, a) = write_pair(&dir, &ten_samples(), "sample_index,symbol\n5,Normal\n");
        let record = load_record(&s, &a).unwrap();
        assert_eq!(record.record_id(), "rec");
        assert_eq!(record.sampling_rate(), 360);
        assert_eq!(record.signal().len(), 10);
        assert_eq!(
            record.annotations(),
            &[Annotation {
                sample_index: 5,
                label: HeartbeatClass::Normal
            }]
        );
    }

    #[test]
    fn annotation_out_of_range() {
        let dir = TempDir::new().unwrap();
        let (s, a) = write_pair(&dir, &ten_samples(), "sample_index,symbol\n12,N\n");
        match load_record(&s, &a) {
            Err(Error::Parse { file, line, message }) => {
                assert_eq!(file, a);
                assert_eq!(line, 2);
                assert!(message.contains("out of range"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_name_file_and_line() {
        let dir = TempDir::new().unwrap();
        let (s, a) = write_pair(
            &dir,
            "sample_index,amplitude_mv\n0,0.1\n1,abc\n",
            "sample_index,symbol\n0,N\n",
        );
        let err = load_record(&s, &a).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, ref file, .. } if *file == s), "{err}");

        let (s, a) = write_pair(&dir, &ten_samples(), "idx,sym\n0,N\n");
        assert!(matches!(load_record(&s, &a), Err(Error::Parse { line: 1, .. })));

        let (s, a) = write_pair(&dir, &ten_samples(), "sample_index,symbol\n4,N\n4,V\n");
        assert!(matches!(load_record(&s, &a), Err(Error::Parse { line: 3, .. })));

        let (s, a) = write_pair(&dir, "sample_index,amplitude_mv\n0,1\n2,1\n", "sample_index,symbol\n0,N\n");
        assert!(matches!(load_record(&s, &a), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn unknown_symbols_are_dropped() {
        let dir = TempDir::new().unwrap();
        let (s, a) = write_pair(&dir, &ten_samples(), "sample_index,symbol\n1,+\n3,V\n6,F\n8,E\n");
        let record = load_record(&s, &a).unwrap();
        let labels: Vec<_> = record.annotations().iter().map(|a| a.label).collect();
        assert_eq!(labels, vec![HeartbeatClass::Pvc, HeartbeatClass::Veb]);
    }

    #[test]
    fn zero_usable_annotations() {
        let dir = TempDir::new().unwrap();
        let (s, a) = write_pair(&dir, &ten_samples(), "sample_index,symbol\n1,+\n");
        assert!(matches!(load_record(&s, &a), Err(Error::EmptyRecord(id)) if id == "rec"));
    }

    #[test]
    fn histogram_counts() {
        let ann = |i, label| Annotation {
            sample_index: i,
            label,
        };
        let record = EcgRecord::new(
            "r",
            360,
            vec![0.0; 10],
            vec![
                ann(1, HeartbeatClass::Normal),
                ann(2, HeartbeatClass::Normal),
                ann(3, HeartbeatClass::Normal),
            ],
        )
        .unwrap();
        let h = class_histogram(&[record]).unwrap();
        assert_eq!(h[&HeartbeatClass::Normal], 3);
        assert_eq!(h.values().sum::<usize>(), 3);
        assert_eq!(h.len(), 7);

        let empty = EcgRecord::new("e", 360, vec![0.0; 4], vec![]).unwrap();
        assert!(matches!(class_histogram(&[empty]), Err(Error::EmptyRecord(_))));
        assert!(class_histogram(&[]).is_err());
    }

    #[test]
    fn record_ids() {
        assert_eq!(record_id_from_path(Path::new("/x/100_signal.csv")), "100");
        assert_eq!(record_id_from_path(Path::new("100.signal.csv")), "100");
        assert_eq!(record_id_from_path(Path::new("207.csv")), "207");
    }

    fn arb_record() -> impl Strategy<Value = EcgRecord> {
        (2usize..200)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(-5.0f64..5.0, n),
                    proptest::collection::btree_set(0..n, 1..(n.min(20))),
                    proptest::collection::vec(0usize..7, 20),
                )
            })
            .prop_map(|(signal, idx, labels)| {
                let annotations = idx
                    .into_iter()
                    .zip(labels)
                    .map(|(i, l)| Annotation {
                        sample_index: i,
                        label: HeartbeatClass::ALL[l],
                    })
                    .collect();
                EcgRecord::new("prop", 360, signal, annotations).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn write_then_load_is_identity(record in arb_record()) {
            let dir = TempDir::new().unwrap();
            let s = dir.path().join("prop_signal.csv");
            let a = dir.path().join("prop_annotations.csv");
            write_record(&record, &s, &a).unwrap();
            let back = load_record(&s, &a).unwrap();
            prop_assert_eq!(&back, &record);
            let h = class_histogram(&[back]).unwrap();
            prop_assert_eq!(h.values().sum::<usize>(), record.annotations().len());
        }
    }
}
