//! Synthetic coupled data over three entities.
//!
//! Every entity gets a latent matrix `Z^d` with entries uniform on `(−1, 1)`.
//! The three pairwise relations hold `Z^a Z^bᵀ` (CP) or `Z^a C^{ab} Z^bᵀ`
//! (Tucker, one random core per relation). Observation masks are sampled
//! uniformly and then topped up until every row and column is covered.

use alloc::vec;
use alloc::vec::Vec;

use crate::relstore::{DenseInstance, DenseTensor, Mask};
use crate::rng::{permutation, stream, uniform_vec};
use crate::schema::Schema;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    Cp,
    Tucker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub counts: [usize; 3],
    pub h: usize,
    pub mode: GenMode,
    /// Observed fraction per relation, in schema order.
    pub sparsity: [f64; 3],
    pub min_per_line: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { counts: [50, 50, 50], h: 2, mode: GenMode::Cp, sparsity: [0.5; 3], min_per_line: 5, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.counts.contains(&0) {
            return Err(Error::Config("entity counts and latent size must be at least 1".into()));
        }
        if let Some(s) = self.sparsity.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
            return Err(Error::Config(alloc::format!("observed fraction must lie in (0, 1], got {s}")));
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::builder()
            .entity("e1", self.counts[0])
            .entity("e2", self.counts[1])
            .entity("e3", self.counts[2])
            .relation("r12", &["e1", "e2"])
            .relation("r13", &["e1", "e3"])
            .relation("r23", &["e2", "e3"])
            .build()
    }
}

/// Pair of entity indices behind each generated relation.
pub const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Latent factors (row-major `N_d × h`) and cores (`h × h`, Tucker only).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub factors: Vec<Vec<f64>>,
    pub cores: Option<Vec<Vec<f64>>>,
}

/// Fully observed synthetic database and the factors that produced it.
pub fn generate(cfg: &SynthConfig) -> Result<(Schema, DenseInstance, GroundTruth)> {
    cfg.validate()?;
    let schema = cfg.schema()?;
    let h = cfg.h;
    let mut rng = stream(cfg.seed, "data-factors");
    let factors: Vec<Vec<f64>> = cfg.counts.iter().map(|&n| uniform_vec(&mut rng, n * h, -1.0, 1.0)).collect();
    let cores = (cfg.mode == GenMode::Tucker).then(|| {
        let mut rng = stream(cfg.seed, "data-cores");
        (0..3).map(|_| uniform_vec(&mut rng, h * h, -1.0, 1.0)).collect::<Vec<_>>()
    });
    let truth = GroundTruth { factors, cores };
    let tensors = PAIRS
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let core = truth.cores.as_ref().map(|c| c[i].as_slice());
            product(&truth.factors[a], core, &truth.factors[b], cfg.counts[a], cfg.counts[b], h)
        })
        .collect::<Result<Vec<_>>>()?;
    let masks = tensors.iter().map(|t| Mask::full(t.positions())).collect();
    Ok((schema, DenseInstance { tensors, masks }, truth))
}

/// `A (C) Bᵀ` for row-major `A: na × h`, `B: nb × h`.
pub fn product(a: &[f64], core: Option<&[f64]>, b: &[f64], na: usize, nb: usize, h: usize) -> Result<DenseTensor> {
    let mut data = vec![0.0; na * nb];
    for p in 0..na {
        let left: Vec<f64> = match core {
            None => a[p * h..(p + 1) * h].to_vec(),
            Some(c) => (0..h).map(|l| (0..h).map(|k| a[p * h + k] * c[k * h + l]).sum()).collect(),
        };
        for q in 0..nb {
            data[p * nb + q] = left.iter().zip(&b[q * h..(q + 1) * h]).map(|(x, y)| x * y).sum();
        }
    }
    DenseTensor::from_data(vec![na, nb], 1, data)
}

/// Training masks for every relation and the test mask of relation 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Mask>,
    pub test: Mask,
}

/// Uniform sample of `round(level · rows · cols)` entries of a matrix, then
/// greedy top-up: while some line has fewer than `min` entries, add a random
/// unobserved entry of the least observed line.
pub fn sample_mask(rows: usize, cols: usize, level: f64, min: usize, rng: &mut crate::rng::StreamRng) -> Result<Mask> {
    if min > rows || min > cols {
        return Err(Error::Infeasible(alloc::format!(
            "{min} observations per line do not fit a {rows}x{cols} matrix"
        )));
    }
    let total = rows * cols;
    let take = libm::round(level * total as f64) as usize;
    let order = permutation(rng, total);
    let mut mask = Mask::from_offsets(total, order[..take.min(total)].iter().copied());
    let mut row_count = vec![0usize; rows];
    let mut col_count = vec![0usize; cols];
    for p in mask.offsets() {
        row_count[p / cols] += 1;
        col_count[p % cols] += 1;
    }
    loop {
        let (r_min, r) = row_count.iter().enumerate().map(|(k, &c)| (c, k)).min().unwrap();
        let (c_min, c) = col_count.iter().enumerate().map(|(k, &c)| (c, k)).min().unwrap();
        if r_min >= min && c_min >= min {
            return Ok(mask);
        }
        // Candidates along the least observed line, visited in a random order.
        let line: Vec<usize> = if r_min <= c_min {
            (0..cols).map(|q| r * cols + q).collect()
        } else {
            (0..rows).map(|p| p * cols + c).collect()
        };
        let free: Vec<usize> = line.into_iter().filter(|&p| !mask.get(p)).collect();
        let pick = free[permutation(rng, free.len())[0]];
        mask.set(pick, true);
        row_count[pick / cols] += 1;
        col_count[pick % cols] += 1;
    }
}

/// Observation masks for `cfg`; unobserved entries of relation 0 form the test set.
pub fn sparsify(schema: &Schema, cfg: &SynthConfig) -> Result<Split> {
    cfg.validate()?;
    let mut train = Vec::with_capacity(3);
    for i in 0..schema.num_relations() {
        let shape = schema.shape(i)?;
        let mut rng = stream(cfg.seed, &alloc::format!("mask-{i}"));
        train.push(sample_mask(shape[0], shape[1], cfg.sparsity[i], cfg.min_per_line, &mut rng)?);
    }
    let test = Mask::from_bools(train[0].as_slice().iter().map(|&b| !b).collect());
    Ok(Split { train, test })
}

/// Copy of `truth` observed only on `masks`, with unobserved entries zeroed.
pub fn observe(truth: &DenseInstance, masks: &[Mask]) -> DenseInstance {
    let mut x = DenseInstance { tensors: truth.tensors.clone(), masks: masks.to_vec() };
    x.zero_unobserved();
    x
}

/// A held-out test set plus nested training sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Heldout {
    pub test: Mask,
    /// One mask per level, each containing the previous one.
    pub train: Vec<Mask>,
}

/// Sets aside `round(fraction · |observed|)` observed entries for testing and
/// draws nested training subsets of the rest; level `ℓ` keeps
/// `round(ℓ · |rest|)` entries.
pub fn heldout_split(observed: &Mask, fraction: f64, levels: &[f64], seed: u64) -> Result<Heldout> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(alloc::format!("held-out fraction must lie in [0, 1), got {fraction}")));
    }
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
        return Err(Error::Config(alloc::format!("level must lie in (0, 1], got {l}")));
    }
    let offsets: Vec<usize> = observed.offsets().collect();
    let mut rng = stream(seed, "heldout");
    let order: Vec<usize> = permutation(&mut rng, offsets.len()).into_iter().map(|k| offsets[k]).collect();
    let n_test = libm::round(fraction * offsets.len() as f64) as usize;
    let (test, rest) = order.split_at(n_test);
    let train = levels
        .iter()
        .map(|&l| {
            let take = libm::round(l * rest.len() as f64) as usize;
            Mask::from_offsets(observed.len(), rest[..take].iter().copied())
        })
        .collect();
    Ok(Heldout { test: Mask::from_offsets(observed.len(), test.iter().copied()), train })
}
