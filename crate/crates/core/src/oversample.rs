//! Classical oversampling: random duplication, SMOTE and ADASYN.
//!
//! The vector-level functions work on arbitrary real feature vectors; the
//! dataset-level entry points flatten the train-split images of a class into
//! `{0, 1}` pixel vectors, run the vector algorithm, and re-binarize every
//! interpolant at 0.5.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::class::HeartbeatClass;
use crate::dataset::{BeatDataset, BeatImage, Provenance, Split, SyntheticMethod};
use crate::error::{ensure, Error, Result};

/// Interpolants at or above this value become trace pixels.
pub const BINARIZE_THRESHOLD: f64 = 0.5;

pub const DEFAULT_K_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct OversampleRequest<'a> {
    pub dataset: &'a BeatDataset,
    pub target_class: HeartbeatClass,
    /// Train-split total wanted for `target_class` after oversampling.
    pub target_count: usize,
    pub k_neighbors: usize,
    pub rng_seed: u64,
}

impl OversampleRequest<'_> {
    fn current_count(&self) -> usize {
        self.dataset.count(self.target_class, Split::Train)
    }

    fn needed(&self) -> Result<usize> {
        let current = self.current_count();
        ensure!(
            self.target_count >= current,
            "target count {} is below the {} {} train items already present",
            self.target_count,
            current,
            self.target_class
        );
        Ok(self.target_count - current)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub method: SyntheticMethod,
    pub images: Vec<BeatImage>,
}

impl SyntheticBatch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Packages real-valued vectors as train-split synthetic images.
    pub fn from_vectors(
        method: SyntheticMethod,
        class: HeartbeatClass,
        size: (usize, usize),
        vectors: &[Vec<f64>],
        threshold: f64,
    ) -> Result<Self> {
        let images = vectors
            .iter()
            .enumerate()
            .map(|(index, v)| {
                BeatImage::from_values(
                    size.0,
                    size.1,
                    v,
                    threshold,
                    class,
                    Provenance::Synthetic { method, index },
                )
                .map(|img| img.with_split(Split::Train))
            })
            .collect::<Result<_>>()?;
        Ok(SyntheticBatch { method, images })
    }

    /// Returns a copy of `dataset` with this batch appended.
    pub fn appended_to(&self, dataset: &BeatDataset) -> Result<BeatDataset> {
        let mut out = dataset.clone();
        out.extend(self.images.iter().cloned())?;
        Ok(out)
    }
}

/// Anything that can top up a class in the train split.
pub trait Oversampler {
    fn method(&self) -> SyntheticMethod;

    /// Produces exactly `count` new train-split images of `class`.
    fn synthesize(
        &self,
        dataset: &BeatDataset,
        class: HeartbeatClass,
        count: usize,
        seed: u64,
    ) -> Result<SyntheticBatch>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomOversampler;

#[derive(Debug, Clone, Copy)]
pub struct Smote {
    pub k_neighbors: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Adasyn {
    pub k_neighbors: usize,
}

impl Default for Smote {
    fn default() -> Self {
        Smote {
            k_neighbors: DEFAULT_K_NEIGHBORS,
        }
    }
}

impl Default for Adasyn {
    fn default() -> Self {
        Adasyn {
            k_neighbors: DEFAULT_K_NEIGHBORS,
        }
    }
}

fn request<'a>(
    dataset: &'a BeatDataset,
    class: HeartbeatClass,
    count: usize,
    k: usize,
    seed: u64,
) -> OversampleRequest<'a> {
    OversampleRequest {
        dataset,
        target_class: class,
        target_count: dataset.count(class, Split::Train) + count,
        k_neighbors: k,
        rng_seed: seed,
    }
}

impl Oversampler for RandomOversampler {
    fn method(&self) -> SyntheticMethod {
        SyntheticMethod::Random
    }

    fn synthesize(&self, d: &BeatDataset, c: HeartbeatClass, n: usize, seed: u64) -> Result<SyntheticBatch> {
        random_oversample(&request(d, c, n, 1, seed))
    }
}

impl Oversampler for Smote {
    fn method(&self) -> SyntheticMethod {
        SyntheticMethod::Smote
    }

    fn synthesize(&self, d: &BeatDataset, c: HeartbeatClass, n: usize, seed: u64) -> Result<SyntheticBatch> {
        smote(&request(d, c, n, self.k_neighbors, seed))
    }
}

impl Oversampler for Adasyn {
    fn method(&self) -> SyntheticMethod {
        SyntheticMethod::Adasyn
    }

    fn synthesize(&self, d: &BeatDataset, c: HeartbeatClass, n: usize, seed: u64) -> Result<SyntheticBatch> {
        adasyn(&request(d, c, n, self.k_neighbors, seed))
    }
}

fn minority_images<'a>(req: &OversampleRequest<'a>) -> Vec<&'a BeatImage> {
    req.dataset
        .items()
        .iter()
        .filter(|i| i.split == Split::Train && i.label == req.target_class)
        .collect()
}

/// Uniform draws with replacement from the class's train images.
pub fn random_oversample(req: &OversampleRequest) -> Result<SyntheticBatch> {
    let needed = req.needed()?;
    let pool = minority_images(req);
    ensure!(
        needed == 0 || !pool.is_empty(),
        "no {} train items to copy",
        req.target_class
    );
    let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);
    let mut images = Vec::with_capacity(needed);
    for index in 0..needed {
        let source = pool[rng.gen_range(0..pool.len())];
        let image = BeatImage::new(
            source.height(),
            source.width(),
            source.pixels().to_vec(),
            req.target_class,
            Provenance::Synthetic {
                method: SyntheticMethod::Random,
                index,
            },
        )?
        .with_split(Split::Train);
        images.push(image);
    }
    Ok(SyntheticBatch {
        method: SyntheticMethod::Random,
        images,
    })
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` candidates closest to `points[query]` (itself excluded), nearest
/// first; equal distances go to the lower index.
pub fn k_nearest(points: &[Vec<f64>], query: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&c| c != query)
        .map(|&c| (squared_distance(&points[query], &points[c]), c))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// One synthetic point `base + gap * (neighbor - base)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    pub base: usize,
    pub neighbor: usize,
    pub gap: f64,
    pub vector: Vec<f64>,
}

fn interpolate(points: &[Vec<f64>], base: usize, neighbor: usize, gap: f64) -> Interpolant {
    let vector = points[base]
        .iter()
        .zip(&points[neighbor])
        .map(|(a, b)| a + gap * (b - a))
        .collect();
    Interpolant {
        base,
        neighbor,
        gap,
        vector,
    }
}

/// SMOTE over `minority`: each new point picks a base uniformly, one of its
/// `k` nearest minority neighbours uniformly, and a gap uniform in `[0, 1)`.
pub fn smote_vectors(
    minority: &[Vec<f64>],
    k: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Interpolant>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    ensure!(k >= 1, "k_neighbors must be at least 1");
    ensure!(
        minority.len() > k,
        "SMOTE needs more than k={k} minority samples, found {}; lower k_neighbors",
        minority.len()
    );
    let all: Vec<usize> = (0..minority.len()).collect();
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| k_nearest(minority, i, &all, k))
        .collect();
    Ok((0..count)
        .map(|_| {
            let base = rng.gen_range(0..minority.len());
            let neighbor = neighbors[base][rng.gen_range(0..k)];
            let gap = rng.gen::<f64>();
            interpolate(minority, base, neighbor, gap)
        })
        .collect())
}

fn image_size(req: &OversampleRequest) -> Result<(usize, usize)> {
    req.dataset.image_size().ok_or(Error::EmptyDataset)
}

pub fn smote(req: &OversampleRequest) -> Result<SyntheticBatch> {
    let needed = req.needed()?;
    let minority: Vec<Vec<f64>> = minority_images(req).iter().map(|i| i.to_vector()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);
    let points = smote_vectors(&minority, req.k_neighbors, needed, &mut rng)?;
    let vectors: Vec<Vec<f64>> = points.into_iter().map(|p| p.vector).collect();
    if vectors.is_empty() {
        return Ok(SyntheticBatch {
            method: SyntheticMethod::Smote,
            images: Vec::new(),
        });
    }
    SyntheticBatch::from_vectors(
        SyntheticMethod::Smote,
        req.target_class,
        image_size(req)?,
        &vectors,
        BINARIZE_THRESHOLD,
    )
}

/// Per-minority-point ADASYN bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdasynAllocation {
    /// Indices into the point set of the minority points, in order.
    pub minority: Vec<usize>,
    /// Majority points among each minority point's k nearest neighbours.
    pub majority_neighbors: Vec<usize>,
    /// Synthetic samples generated from each minority point.
    pub counts: Vec<usize>,
    /// Set when no minority point had a majority neighbour and allocation
    /// fell back to uniform.
    pub uniform_fallback: bool,
}

/// Splits `total` proportionally to `weights` with largest-remainder rounding;
/// remainder ties go to the lower index. Exact in integer arithmetic.
pub fn largest_remainder(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut counts: Vec<usize> = weights.iter().map(|&w| w * total / sum).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = weights[a] * total % sum;
        let rb = weights[b] * total % sum;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// ADASYN allocation of `total` samples over the minority points of `points`.
///
/// `r_i = delta_i / k` where `delta_i` counts majority points among the k
/// nearest neighbours in the whole set; the normalized `r_i` scale `total`,
/// and the shared `1/k` factor cancels, so counts are apportioned on the
/// integer `delta_i` directly.
pub fn adasyn_allocation(
    points: &[Vec<f64>],
    is_minority: &[bool],
    k: usize,
    total: usize,
) -> Result<AdasynAllocation> {
    ensure!(points.len() == is_minority.len(), "one minority flag per point");
    let minority: Vec<usize> = (0..points.len()).filter(|&i| is_minority[i]).collect();
    ensure!(!minority.is_empty(), "ADASYN needs at least one minority sample");
    ensure!(k >= 1, "k_neighbors must be at least 1");
    ensure!(
        k < points.len(),
        "ADASYN needs k={k} below the train-set size {}",
        points.len()
    );
    let all: Vec<usize> = (0..points.len()).collect();
    let majority_neighbors: Vec<usize> = minority
        .iter()
        .map(|&i| {
            k_nearest(points, i, &all, k)
                .into_iter()
                .filter(|&j| !is_minority[j])
                .count()
        })
        .collect();
    let uniform_fallback = majority_neighbors.iter().all(|&d| d == 0);
    let weights = if uniform_fallback {
        log::info!("ADASYN: no minority sample has majority neighbours, allocating uniformly");
        vec![1; minority.len()]
    } else {
        majority_neighbors.clone()
    };
    let counts = largest_remainder(&weights, total);
    Ok(AdasynAllocation {
        minority,
        majority_neighbors,
        counts,
        uniform_fallback,
    })
}

/// ADASYN generation: each minority point emits its allocated count of
/// interpolants toward random members of its k nearest minority neighbours.
/// A lone minority point can only reproduce itself.
pub fn adasyn_vectors(
    points: &[Vec<f64>],
    is_minority: &[bool],
    k: usize,
    total: usize,
    rng: &mut impl Rng,
) -> Result<(AdasynAllocation, Vec<Interpolant>)> {
    let allocation = adasyn_allocation(points, is_minority, k, total)?;
    let k_minority = k.min(allocation.minority.len() - 1);
    let mut out = Vec::with_capacity(total);
    for (slot, &base) in allocation.minority.iter().enumerate() {
        let count = allocation.counts[slot];
        if count == 0 {
            continue;
        }
        let neighbors = k_nearest(points, base, &allocation.minority, k_minority);
        for _ in 0..count {
            let neighbor = if neighbors.is_empty() {
                base
            } else {
                neighbors[rng.gen_range(0..neighbors.len())]
            };
            let gap = rng.gen::<f64>();
            out.push(interpolate(points, base, neighbor, gap));
        }
    }
    Ok((allocation, out))
}

pub fn adasyn(req: &OversampleRequest) -> Result<SyntheticBatch> {
    let needed = req.needed()?;
    if needed == 0 {
        return Ok(SyntheticBatch {
            method: SyntheticMethod::Adasyn,
            images: Vec::new(),
        });
    }
    let train: Vec<&BeatImage> = req
        .dataset
        .items()
        .iter()
        .filter(|i| i.split == Split::Train)
        .collect();
    let points: Vec<Vec<f64>> = train.iter().map(|i| i.to_vector()).collect();
    let is_minority: Vec<bool> = train.iter().map(|i| i.label == req.target_class).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);
    let (_, interpolants) = adasyn_vectors(&points, &is_minority, req.k_neighbors, needed, &mut rng)?;
    let vectors: Vec<Vec<f64>> = interpolants.into_iter().map(|p| p.vector).collect();
    SyntheticBatch::from_vectors(
        SyntheticMethod::Adasyn,
        req.target_class,
        image_size(req)?,
        &vectors,
        BINARIZE_THRESHOLD,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_dataset(minority: usize, majority: usize, seed: u64) -> BeatDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = BeatDataset::new();
        for i in 0..minority + majority {
            let label = if i < minority { HeartbeatClass::Veb } else { HeartbeatClass::Normal };
            let pixels: Vec<u8> = (0..16)
                .map(|p| {
                    let bias = if label == HeartbeatClass::Veb { p < 8 } else { p >= 8 };
                    u8::from(rng.gen_bool(if bias { 0.8 } else { 0.2 }))
                })
                .collect();
            let img = BeatImage::new(
                4,
                4,
                pixels,
                label,
                Provenance::Real {
                    record_id: "t".into(),
                    annotation_index: i,
                },
            )
            .unwrap()
            .with_split(Split::Train);
            d.push(img).unwrap();
        }
        // one held-out item of each class
        for (i, label) in [HeartbeatClass::Veb, HeartbeatClass::Normal].into_iter().enumerate() {
            let img = BeatImage::new(4, 4, vec![1; 16], label, Provenance::Real {
                record_id: "held".into(),
                annotation_index: i,
            })
            .unwrap()
            .with_split(Split::Test);
            d.push(img).unwrap();
        }
        d
    }

    fn req(d: &BeatDataset, target: usize, k: usize, seed: u64) -> OversampleRequest<'_> {
        OversampleRequest {
            dataset: d,
            target_class: HeartbeatClass::Veb,
            target_count: target,
            k_neighbors: k,
            rng_seed: seed,
        }
    }

    #[test]
    fn random_copies_existing_items() {
        let d = tiny_dataset(3, 5, 1);
        let batch = random_oversample(&req(&d, 5, 1, 9)).unwrap();
        assert_eq!(batch.len(), 2);
        let originals: Vec<&[u8]> = d
            .items()
            .iter()
            .filter(|i| i.label == HeartbeatClass::Veb && i.split == Split::Train)
            .map(|i| i.pixels())
            .collect();
        for img in &batch.images {
            assert!(originals.contains(&img.pixels()));
            assert_eq!(img.split, Split::Train);
            assert!(img.is_synthetic());
        }
        assert!(random_oversample(&req(&d, 3, 1, 9)).unwrap().is_empty());
        assert_eq!(
            random_oversample(&req(&d, 50, 1, 4)).unwrap(),
            random_oversample(&req(&d, 50, 1, 4)).unwrap()
        );
        assert!(random_oversample(&req(&d, 2, 1, 4)).is_err());
    }

    #[test]
    fn smote_toy_midpoint_and_endpoints() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let mid = interpolate(&pts, 0, 1, 0.5);
        assert_eq!(mid.vector, vec![0.5, 0.5]);
        assert_eq!(interpolate(&pts, 0, 1, 0.0).vector, pts[0]);
        assert_eq!(interpolate(&pts, 0, 1, 1.0).vector, pts[1]);
        // binarization keeps the midpoint as a trace pixel
        let img = BeatImage::from_values(1, 2, &mid.vector, BINARIZE_THRESHOLD, HeartbeatClass::Veb, Provenance::Synthetic { method: SyntheticMethod::Smote, index: 0 }).unwrap();
        assert_eq!(img.pixels(), &[1, 1]);
    }

    #[test]
    fn smote_requires_more_samples_than_k() {
        let d = tiny_dataset(3, 5, 2);
        let err = smote(&req(&d, 10, 3, 0)).unwrap_err();
        assert!(err.to_string().contains("lower k"), "{err}");
        assert_eq!(smote(&req(&d, 10, 2, 0)).unwrap().len(), 7);
    }

    #[test]
    fn adasyn_degenerate_cases() {
        // minority cluster far from every majority point
        let mut pts = vec![];
        let mut flags = vec![];
        for i in 0..4 {
            pts.push(vec![i as f64 * 0.01, 0.0]);
            flags.push(true);
        }
        for i in 0..6 {
            pts.push(vec![100.0 + i as f64, 0.0]);
            flags.push(false);
        }
        let a = adasyn_allocation(&pts, &flags, 2, 10).unwrap();
        assert!(a.uniform_fallback);
        assert_eq!(a.counts, vec![3, 3, 2, 2]);

        // a single minority point whose neighbours are all majority
        let pts = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let flags = vec![true, false, false, false];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, gen) = adasyn_vectors(&pts, &flags, 3, 7, &mut rng).unwrap();
        assert_eq!(a.majority_neighbors, vec![3]);
        assert_eq!(a.counts, vec![7]);
        assert!(gen.iter().all(|p| p.base == 0 && p.vector == vec![0.0]));
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[1, 1, 1], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0, 2, 1], 4), vec![0, 3, 1]);
        assert_eq!(largest_remainder(&[5], 0), vec![0]);
        assert_eq!(largest_remainder(&[0, 0], 3), vec![0, 0]);
    }

    #[test]
    fn dataset_level_invariants() {
        let d = tiny_dataset(6, 10, 3);
        let test_before = d.split_histogram(Split::Test);
        for batch in [
            random_oversample(&req(&d, 20, 2, 5)).unwrap(),
            smote(&req(&d, 20, 2, 5)).unwrap(),
            adasyn(&req(&d, 20, 2, 5)).unwrap(),
        ] {
            assert_eq!(batch.len(), 14);
            let merged = batch.appended_to(&d).unwrap();
            assert_eq!(merged.count(HeartbeatClass::Veb, Split::Train), 20);
            assert_eq!(merged.split_histogram(Split::Test), test_before);
            assert_eq!(&merged.items()[..d.len()], d.items());
        }
        assert_eq!(smote(&req(&d, 20, 2, 5)).unwrap(), smote(&req(&d, 20, 2, 5)).unwrap());
        assert_eq!(adasyn(&req(&d, 20, 2, 5)).unwrap(), adasyn(&req(&d, 20, 2, 5)).unwrap());
    }

    proptest! {
        #[test]
        fn smote_stays_in_bounding_box(seed in 0u64..500, m in 4usize..15, count in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..m).map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
            let out = smote_vectors(&pts, 3, count, &mut rng).unwrap();
            prop_assert_eq!(out.len(), count);
            for p in out {
                for d in 0..3 {
                    let lo = pts.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
                    let hi = pts.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(p.vector[d] >= lo - 1e-12 && p.vector[d] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn adasyn_allocation_is_exact(seed in 0u64..500, m in 1usize..12, maj in 1usize..20, total in 0usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..m + maj).map(|_| (0..2).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            let flags: Vec<bool> = (0..m + maj).map(|i| i < m).collect();
            let k = 3.min(m + maj - 1);
            let a = adasyn_allocation(&pts, &flags, k, total).unwrap();
            prop_assert_eq!(a.counts.iter().sum::<usize>(), total);
            if !a.uniform_fallback {
                for (d, g) in a.majority_neighbors.iter().zip(&a.counts) {
                    if *d == 0 { prop_assert_eq!(*g, 0); }
                }
            }
        }
    }
}
