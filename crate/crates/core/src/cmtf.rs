//! Coupled CP and coupled Tucker factorization of pairwise relations.
//!
//! Every entity owns one factor matrix shared by all relations it appears in.
//! C-CPF reconstructs `X^{ab} ≈ Z^a Z^bᵀ`, C-TKF adds a per-relation core,
//! `X^{ab} ≈ Z^a C^{ab} Z^bᵀ`. Both minimize the squared error over the
//! observed entries by gradient steps.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::rmse;
use crate::optim::Adam;
use crate::relstore::{DenseInstance, DenseTensor, Mask};
use crate::rng::{stream, uniform_vec};
use crate::schema::Schema;
use crate::{Error, Result};

/// Factor matrices (row-major `N_d × r`) and, for Tucker, one `r × r` core per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    pub rank: usize,
    pub factors: Vec<Vec<f64>>,
    pub cores: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Fixed step `lr · ∇L`.
    Plain,
    /// Adaptive moment steps.
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmtfConfig {
    pub rank: usize,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub step: Step,
    /// Treat unobserved entries as observed zeros.
    pub zero_fill: bool,
}

impl Default for CmtfConfig {
    fn default() -> Self {
        CmtfConfig { rank: 10, iters: 3000, lr: 0.01, seed: 0, step: Step::Adam, zero_fill: false }
    }
}

/// Entity axes `(a, b)` of every relation; every relation must pair two distinct entities.
fn pairs(schema: &Schema) -> Result<Vec<(usize, usize)>> {
    schema
        .relations()
        .iter()
        .map(|r| match r.members.as_slice() {
            [a, b] if a != b => Ok((a.index(), b.index())),
            _ => Err(Error::Config(alloc::format!(
                "relation `{}` is not a pair of distinct entities",
                r.name
            ))),
        })
        .collect()
}

fn identity_core(r: usize) -> Vec<f64> {
    let mut c = vec![0.0; r * r];
    for k in 0..r {
        c[k * r + k] = 1.0;
    }
    c
}

impl FactorSet {
    /// Seeded init: factors uniform on `(−0.5, 0.5) / √r`, cores likewise.
    pub fn init(schema: &Schema, rank: usize, tucker: bool, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        let scale = 1.0 / libm::sqrt(rank as f64);
        let mut rng = stream(seed, "cmtf-init");
        let factors = schema
            .entities()
            .iter()
            .map(|e| uniform_vec(&mut rng, e.count * rank, -0.5 * scale, 0.5 * scale))
            .collect();
        let cores = tucker.then(|| {
            (0..schema.num_relations()).map(|_| uniform_vec(&mut rng, rank * rank, -0.5 * scale, 0.5 * scale)).collect()
        });
        Ok(FactorSet { rank, factors, cores })
    }

    fn core(&self, i: usize) -> Option<&[f64]> {
        self.cores.as_ref().map(|c| c[i].as_slice())
    }

    fn num_values(&self) -> usize {
        self.factors.iter().map(Vec::len).sum::<usize>() + self.cores.iter().flatten().map(Vec::len).sum::<usize>()
    }

    fn flatten(&self) -> Vec<f64> {
        self.factors.iter().chain(self.cores.iter().flatten()).flatten().copied().collect()
    }

    fn unflatten(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for v in self.factors.iter_mut().chain(self.cores.iter_mut().flatten()) {
            let n = v.len();
            v.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
    }
}

/// `Z^a (C) Z^bᵀ` as a dense `N_a × N_b` tensor.
pub fn reconstruct(f: &FactorSet, schema: &Schema, i: usize) -> Result<DenseTensor> {
    let (a, b) = pairs(schema)?[i];
    let r = f.rank;
    let (na, nb) = (schema.entities()[a].count, schema.entities()[b].count);
    let left = left_factor(&f.factors[a], f.core(i), na, r);
    let zb = &f.factors[b];
    let mut data = vec![0.0; na * nb];
    for p in 0..na {
        let lp = &left[p * r..(p + 1) * r];
        for q in 0..nb {
            data[p * nb + q] = lp.iter().zip(&zb[q * r..(q + 1) * r]).map(|(x, y)| x * y).sum();
        }
    }
    DenseTensor::from_data(vec![na, nb], 1, data)
}

/// `Z^a C` (or `Z^a` without a core).
fn left_factor(za: &[f64], core: Option<&[f64]>, na: usize, r: usize) -> Vec<f64> {
    let Some(c) = core else { return za.to_vec() };
    let mut out = vec![0.0; na * r];
    for p in 0..na {
        for k in 0..r {
            let v = za[p * r + k];
            for l in 0..r {
                out[p * r + l] += v * c[k * r + l];
            }
        }
    }
    out
}

/// Mean squared error over the scored entries and its gradient, in the
/// layout of [`FactorSet`] flattened factors-then-cores.
pub fn loss_and_grad(f: &FactorSet, schema: &Schema, x: &DenseInstance, zero_fill: bool) -> Result<(f64, Vec<f64>)> {
    let pr = pairs(schema)?;
    x.check(schema, 1)?;
    let r = f.rank;
    let scored: usize = x.masks.iter().map(|m| if zero_fill { m.len() } else { m.count() }).sum();
    if scored == 0 {
        return Ok((0.0, vec![0.0; f.num_values()]));
    }
    let norm = 1.0 / scored as f64;
    let mut g_factors: Vec<Vec<f64>> = f.factors.iter().map(|z| vec![0.0; z.len()]).collect();
    let mut g_cores: Vec<Vec<f64>> = f.cores.iter().flatten().map(|c| vec![0.0; c.len()]).collect();
    let mut loss = 0.0;
    for (i, &(a, b)) in pr.iter().enumerate() {
        let pred = reconstruct(f, schema, i)?;
        let (na, nb) = (pred.shape[0], pred.shape[1]);
        let mask = &x.masks[i];
        let truth = &x.tensors[i].data;
        // Residual E (scaled by 2/n) on scored entries.
        let mut e = vec![0.0; na * nb];
        for p in 0..na * nb {
            let observed = mask.get(p);
            if observed || zero_fill {
                let t = if observed { truth[p] } else { 0.0 };
                let d = pred.data[p] - t;
                loss += d * d;
                e[p] = 2.0 * d * norm;
            }
        }
        let core = f.core(i);
        let left = left_factor(&f.factors[a], core, na, r);
        let (za, zb) = (&f.factors[a], &f.factors[b]);
        // ∂/∂(Z^a C) = E Z^b, ∂/∂Z^b = Eᵀ (Z^a C).
        let mut g_left = vec![0.0; na * r];
        for p in 0..na {
            for q in 0..nb {
                let v = e[p * nb + q];
                if v == 0.0 {
                    continue;
                }
                for k in 0..r {
                    g_left[p * r + k] += v * zb[q * r + k];
                    g_factors[b][q * r + k] += v * left[p * r + k];
                }
            }
        }
        match core {
            None => {
                for (g, v) in g_factors[a].iter_mut().zip(&g_left) {
                    *g += v;
                }
            }
            Some(c) => {
                // ∂/∂Z^a = G Cᵀ, ∂/∂C = Z^aᵀ G.
                for p in 0..na {
                    for k in 0..r {
                        let mut acc = 0.0;
                        for l in 0..r {
                            acc += g_left[p * r + l] * c[k * r + l];
                            g_cores[i][k * r + l] += za[p * r + k] * g_left[p * r + l];
                        }
                        g_factors[a][p * r + k] += acc;
                    }
                }
            }
        }
    }
    let grad = g_factors.into_iter().chain(g_cores).flatten().collect();
    Ok((loss * norm, grad))
}

/// Fits factors to the observed entries of `x`; returns the loss before every step.
pub fn fit(schema: &Schema, x: &DenseInstance, cfg: &CmtfConfig, tucker: bool) -> Result<(FactorSet, Vec<f64>)> {
    pairs(schema)?;
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(alloc::format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let mut f = FactorSet::init(schema, cfg.rank, tucker, cfg.seed)?;
    let mut flat = f.flatten();
    let mut adam = Adam::new(flat.len(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.iters);
    for epoch in 0..cfg.iters {
        let (loss, grad) = loss_and_grad(&f, schema, x, cfg.zero_fill)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
        match cfg.step {
            Step::Adam => adam.step(&mut flat, &grad),
            Step::Plain => flat.iter_mut().zip(&grad).for_each(|(p, g)| *p -= cfg.lr * g),
        }
        f.unflatten(&flat);
    }
    Ok((f, history))
}

pub fn fit_ccpf(schema: &Schema, x: &DenseInstance, cfg: &CmtfConfig) -> Result<(FactorSet, Vec<f64>)> {
    fit(schema, x, cfg, false)
}

pub fn fit_ctkf(schema: &Schema, x: &DenseInstance, cfg: &CmtfConfig) -> Result<(FactorSet, Vec<f64>)> {
    fit(schema, x, cfg, true)
}

/// RMSE of relation `i`'s reconstruction against `truth` on `mask`.
pub fn evaluate_cmtf(f: &FactorSet, schema: &Schema, i: usize, truth: &DenseTensor, mask: &Mask) -> Result<f64> {
    Ok(rmse(&reconstruct(f, schema, i)?.data, &truth.data, mask))
}

/// Replaces every core by the identity, turning a Tucker set into a CP set.
pub fn with_identity_cores(f: &FactorSet, relations: usize) -> FactorSet {
    FactorSet { cores: Some(vec![identity_core(f.rank); relations]), ..f.clone() }
}
