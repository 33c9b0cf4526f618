//! Beat images, labeled datasets with split tags, and their on-disk form.
//!
//! A dataset directory holds `manifest.json` plus one P5 PGM per item
//! (values 0 or 255). The manifest records id, label, split, provenance,
//! pixel file, image size and a SHA-256 of the pixel file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::class::HeartbeatClass;
use crate::error::{Error, Result};
use crate::pgm;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        })
    }
}

/// How a synthetic image was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticMethod {
    Random,
    Smote,
    Adasyn,
    Adversarial,
}

impl SyntheticMethod {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticMethod::Random => "random",
            SyntheticMethod::Smote => "smote",
            SyntheticMethod::Adasyn => "adasyn",
            SyntheticMethod::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for SyntheticMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Real {
        record_id: String,
        annotation_index: usize,
    },
    Synthetic {
        method: SyntheticMethod,
        index: usize,
    },
}

impl Provenance {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, Provenance::Synthetic { .. })
    }
}

/// A binary raster of one beat. Pixels are row-major, 1 = trace, row 0 = top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeatImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    pub label: HeartbeatClass,
    pub source: Provenance,
    pub split: Split,
}

impl BeatImage {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        label: HeartbeatClass,
        source: Provenance,
    ) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::contract(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|&&p| p > 1) {
            return Err(Error::contract(format!("pixel value {bad} is not binary")));
        }
        Ok(BeatImage {
            height,
            width,
            pixels,
            label,
            source,
            split: Split::None,
        })
    }

    /// Thresholds real values: `v >= threshold` becomes 1.
    pub fn from_values(
        height: usize,
        width: usize,
        values: &[f64],
        threshold: f64,
        label: HeartbeatClass,
        source: Provenance,
    ) -> Result<Self> {
        let pixels = values.iter().map(|&v| u8::from(v >= threshold)).collect();
        BeatImage::new(height, width, pixels, label, source)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn is_synthetic(&self) -> bool {
        self.source.is_synthetic()
    }

    /// Flattened pixel vector in {0.0, 1.0}.
    pub fn to_vector(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    /// Flattened pixel vector mapped to {-1.0, +1.0}.
    pub fn to_signed(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| if p == 1 { 1.0 } else { -1.0 }).collect()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

/// Ordered beat images of one common size.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BeatDataset {
    items: Vec<BeatImage>,
}

pub type Histogram = BTreeMap<HeartbeatClass, usize>;

fn empty_histogram() -> Histogram {
    HeartbeatClass::ALL.iter().map(|&c| (c, 0)).collect()
}

impl BeatDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_items(items: impl IntoIterator<Item = BeatImage>) -> Result<Self> {
        let mut dataset = BeatDataset::new();
        for item in items {
            dataset.push(item)?;
        }
        Ok(dataset)
    }

    pub fn push(&mut self, item: BeatImage) -> Result<()> {
        if let Some(first) = self.items.first() {
            if first.size() != item.size() {
                return Err(Error::contract(format!(
                    "image size {:?} differs from dataset size {:?}",
                    item.size(),
                    first.size()
                )));
            }
        }
        check_split(&item, item.split)?;
        self.items.push(item);
        Ok(())
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = BeatImage>) -> Result<()> {
        for item in items {
            self.push(item)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[BeatImage] {
        &self.items
    }

    pub fn get(&self, index: usize) -> Option<&BeatImage> {
        self.items.get(index)
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.items.first().map(BeatImage::size)
    }

    pub fn set_split(&mut self, index: usize, split: Split) -> Result<()> {
        let item = self
            .items
            .get_mut(index)
            .ok_or_else(|| Error::contract(format!("no item {index}")))?;
        check_split(item, split)?;
        item.split = split;
        Ok(())
    }

    /// Class counts over every item.
    pub fn histogram(&self) -> Histogram {
        let mut h = empty_histogram();
        for item in &self.items {
            *h.entry(item.label).or_default() += 1;
        }
        h
    }

    pub fn split_histogram(&self, split: Split) -> Histogram {
        let mut h = empty_histogram();
        for item in self.items.iter().filter(|i| i.split == split) {
            *h.entry(item.label).or_default() += 1;
        }
        h
    }

    pub fn count(&self, class: HeartbeatClass, split: Split) -> usize {
        self.items
            .iter()
            .filter(|i| i.label == class && i.split == split)
            .count()
    }

    /// Indices of items with `split`, in dataset order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| self.items[i].split == split)
            .collect()
    }

    pub fn class_indices(&self, class: HeartbeatClass, split: Split) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| self.items[i].split == split && self.items[i].label == class)
            .collect()
    }

    pub fn synthetic_count(&self) -> usize {
        self.items.iter().filter(|i| i.is_synthetic()).count()
    }

    pub fn into_items(self) -> Vec<BeatImage> {
        self.items
    }
}

fn check_split(item: &BeatImage, split: Split) -> Result<()> {
    if item.is_synthetic() && matches!(split, Split::Val | Split::Test) {
        return Err(Error::contract(format!(
            "synthetic item cannot be assigned to the {split} split"
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    image_size: Option<[usize; 2]>,
    items: Vec<ManifestItem>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestItem {
    id: String,
    label: HeartbeatClass,
    split: Split,
    provenance: Provenance,
    file: String,
    size: [usize; 2],
    sha256: String,
}

fn item_id(index: usize) -> String {
    format!("{index:06}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `dataset` into `directory` and returns the manifest path.
pub fn save_dataset(dataset: &BeatDataset, directory: &Path) -> Result<PathBuf> {
    fs::create_dir_all(directory).map_err(|e| Error::io(directory, e))?;
    let mut items = Vec::with_capacity(dataset.len());
    for (index, item) in dataset.items.iter().enumerate() {
        let id = item_id(index);
        let file = format!("{id}.pgm");
        let raster: Vec<u8> = item.pixels.iter().map(|&p| p * 255).collect();
        let bytes = pgm::encode(item.width, item.height, &raster);
        let path = directory.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        items.push(ManifestItem {
            id,
            label: item.label,
            split: item.split,
            provenance: item.source.clone(),
            file,
            size: [item.height, item.width],
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        image_size: dataset.image_size().map(|(h, w)| [h, w]),
        items,
    };
    let path = directory.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_dataset(directory: &Path) -> Result<BeatDataset> {
    let path = directory.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported manifest version {}",
            path.display(),
            manifest.format_version
        )));
    }
    let mut dataset = BeatDataset::new();
    for entry in manifest.items {
        let integrity = |message: String| Error::Integrity {
            item: entry.id.clone(),
            message,
        };
        let pixel_path = directory.join(&entry.file);
        let bytes = fs::read(&pixel_path)
            .map_err(|e| integrity(format!("cannot read {}: {e}", pixel_path.display())))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(integrity(format!("{} does not match its checksum", entry.file)));
        }
        let decoded = pgm::decode(&bytes).map_err(|e| integrity(e.to_string()))?;
        let [height, width] = entry.size;
        if (decoded.height, decoded.width) != (height, width) {
            return Err(integrity(format!(
                "pixel file is {}x{}, manifest says {height}x{width}",
                decoded.height, decoded.width
            )));
        }
        let mut pixels = Vec::with_capacity(decoded.pixels.len());
        for &v in &decoded.pixels {
            match u32::from(v) {
                0 => pixels.push(0),
                x if x == decoded.maxval => pixels.push(1),
                x => return Err(integrity(format!("non-binary pixel value {x}"))),
            }
        }
        let image = BeatImage::new(height, width, pixels, entry.label, entry.provenance)
            .map_err(|e| integrity(e.to_string()))?
            .with_split(entry.split);
        dataset.push(image).map_err(|e| integrity(e.to_string()))?;
    }
    Ok(dataset)
}
