//! Numerical equivariance suites run by `eerl check-equivariance`.

use eerl_core::dense::{Matrix, PermMatrix};
use eerl_core::layer::{backward, forward, forward_dense_oracle, Activation, PoolMode, PoolPlan};
use eerl_core::oracle::{commutation_defect, materialize_bias, materialize_w, perm_matrix, LegalPerm};
use eerl_core::partitions::partition_of;
use eerl_core::relstore::unravel;
use eerl_core::rng::{permutation, stream, uniform_vec, StreamRng};
use eerl_core::{DenseInstance, Mask, Schema, TiedWeights};

use crate::error::Result;

/// Tolerance for exact identities.
pub const EXACT_TOL: f64 = 1e-9;
/// Minimum commutation defect that counts as a violation.
pub const VIOLATION_TOL: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn random_weights(schema: &Schema, k_in: usize, k_out: usize, rng: &mut StreamRng) -> Result<TiedWeights> {
    let mut w = TiedWeights::zeros(schema, k_in, k_out)?;
    let n = w.values().len();
    w.values_mut().copy_from_slice(&uniform_vec(rng, n, -1.0, 1.0));
    Ok(w)
}

pub fn random_instance(schema: &Schema, k: usize, observed: f64, rng: &mut StreamRng) -> Result<DenseInstance> {
    let mut x = DenseInstance::zeros(schema, k);
    for (t, m) in x.tensors.iter_mut().zip(x.masks.iter_mut()) {
        t.data = uniform_vec(rng, t.data.len(), -1.0, 1.0);
        let keep = uniform_vec(rng, t.positions(), 0.0, 1.0);
        *m = Mask::from_bools(keep.iter().map(|&u| u < observed).collect());
    }
    x.zero_unobserved();
    Ok(x)
}

/// The schema restricted to relations without repeated entities.
pub fn repeat_free_part(schema: &Schema) -> Result<Option<Schema>> {
    let relations: Vec<_> = schema.relations().iter().filter(|r| r.is_repeat_free()).cloned().collect();
    if relations.is_empty() {
        return Ok(None);
    }
    Ok(Some(Schema::new(schema.entities().to_vec(), relations)?))
}

/// Uniform permutation of the flat positions that is not a legal permutation.
pub fn random_illegal(schema: &Schema, rng: &mut StreamRng) -> Result<Option<PermMatrix>> {
    let n = schema.total_size();
    for _ in 0..1000 {
        let g = PermMatrix::new(permutation(rng, n))?;
        if LegalPerm::from_flat(schema, &g).is_none() {
            return Ok(Some(g));
        }
    }
    Ok(None)
}

/// Transposition of two entries whose index tuples have different equality
/// patterns inside one relation, or else the first illegal transposition.
pub fn swap_witness(schema: &Schema) -> Result<Option<PermMatrix>> {
    let n = schema.total_size();
    let offsets = schema.offsets();
    let transposition = |a: usize, b: usize| {
        let mut map: Vec<usize> = (0..n).collect();
        map.swap(a, b);
        PermMatrix::new(map)
    };
    for (i, rel) in schema.relations().iter().enumerate() {
        let shape = schema.shape(i)?;
        let pattern = |p: usize| {
            let t = unravel(&shape, p);
            rel.distinct()
                .iter()
                .map(|d| {
                    let sub: Vec<usize> = rel.members.iter().zip(&t).filter(|(m, _)| *m == d).map(|(_, v)| *v).collect();
                    partition_of(&sub)
                })
                .collect::<Vec<_>>()
        };
        let first = pattern(0);
        if let Some(q) = (1..schema.relation_size(i)?).find(|&q| pattern(q) != first) {
            return Ok(Some(transposition(offsets[i], offsets[i] + q)?));
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            let g = transposition(a, b)?;
            if LegalPerm::from_flat(schema, &g).is_none() {
                return Ok(Some(g));
            }
        }
    }
    Ok(None)
}

/// Adds 1 to the first entry of the first block, breaking its tying.
pub fn break_tying(w: &mut Matrix) {
    if w.cols > 1 {
        w.data[1] += 1.0;
    } else if !w.data.is_empty() {
        w.data[0] += 1.0;
    }
}

fn suite(name: &'static str, passed: bool, detail: String) -> SuiteResult {
    SuiteResult { name, passed, detail }
}

fn legal_commute(schema: &Schema, trials: usize, broken: bool, rng: &mut StreamRng) -> Result<SuiteResult> {
    let mut w = materialize_w(schema, &random_weights(schema, 1, 1, rng)?)?;
    if broken {
        break_tying(&mut w);
    }
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let g = perm_matrix(&LegalPerm::random(schema, rng), schema)?;
        worst = worst.max(commutation_defect(&w, &g));
    }
    Ok(suite("legal-commute", worst <= EXACT_TOL, format!("{trials} legal permutations, max |WG - GW| = {worst:.3e}")))
}

fn illegal_violate(schema: &Schema, trials: usize, rng: &mut StreamRng) -> Result<SuiteResult> {
    let w = materialize_w(schema, &random_weights(schema, 1, 1, rng)?)?;
    let Some(witness) = swap_witness(schema)? else {
        return Ok(suite("illegal-violate", true, "every permutation is legal; nothing to violate".into()));
    };
    let witness_defect = commutation_defect(&w, &witness);
    let mut violated = 0;
    for _ in 0..trials {
        if let Some(g) = random_illegal(schema, rng)? {
            violated += usize::from(commutation_defect(&w, &g) > VIOLATION_TOL);
        }
    }
    let passed = witness_defect > VIOLATION_TOL && violated * 10 >= trials * 9;
    Ok(suite(
        "illegal-violate",
        passed,
        format!("{violated}/{trials} random illegal permutations violate; swap witness defect {witness_defect:.3e}"),
    ))
}

fn pooled_vs_oracle(schema: &Schema, trials: usize, rng: &mut StreamRng) -> Result<SuiteResult> {
    let Some(sub) = repeat_free_part(schema)? else {
        return Ok(suite("pooled-vs-oracle", true, "no repeat-free relations".into()));
    };
    let plan = PoolPlan::new(&sub)?;
    let mut worst: f64 = 0.0;
    for t in 0..trials.max(1) {
        let k = 1 + t % 2;
        let mut w = random_weights(&sub, k, k, rng)?;
        w.apply_one_to_many(&sub)?;
        let x = random_instance(&sub, k, 0.7, rng)?;
        let act = Activation::leaky();
        let pooled = forward(&plan, &x, &w, act, PoolMode::Sum)?.out;
        let dense = forward_dense_oracle(&sub, &x, &w, act)?;
        for (a, b) in pooled.tensors.iter().zip(&dense.tensors) {
            for (u, v) in a.data.iter().zip(&b.data) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    Ok(suite(
        "pooled-vs-oracle",
        worst <= EXACT_TOL,
        format!("{} relations, max |pooled - dense| = {worst:.3e}", sub.num_relations()),
    ))
}

fn bias(schema: &Schema, trials: usize, rng: &mut StreamRng) -> Result<SuiteResult> {
    let b = materialize_bias(schema, &random_weights(schema, 1, 1, rng)?, 0)?;
    let mut moved = 0;
    for _ in 0..trials {
        let g = perm_matrix(&LegalPerm::random(schema, rng), schema)?;
        moved += usize::from(g.apply(&b) != b);
    }
    let witness = swap_witness(schema)?.map(|g| g.apply(&b) != b);
    let detail = format!(
        "{moved}/{trials} legal permutations move the bias; illegal witness {}",
        match witness {
            Some(true) => "moves it",
            Some(false) => "leaves it fixed",
            None => "does not exist",
        }
    );
    Ok(suite("bias", moved == 0 && witness != Some(false), detail))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Worst relative error between analytic and central-difference gradients of
/// `Σ c · layer(x)` over every weight, bias and input coordinate.
pub fn gradient_error(schema: &Schema, mode: PoolMode, rng: &mut StreamRng) -> Result<f64> {
    let plan = PoolPlan::new(schema)?;
    let mut w = random_weights(schema, 2, 2, rng)?;
    w.apply_one_to_many(schema)?;
    let x = random_instance(schema, 2, 0.7, rng)?;
    let act = Activation::leaky();
    let c: Vec<Vec<f64>> = x.tensors.iter().map(|t| uniform_vec(rng, t.data.len(), -1.0, 1.0)).collect();
    let loss = |x: &DenseInstance, w: &TiedWeights| -> Result<f64> {
        let y = forward(&plan, x, w, act, mode)?.out;
        Ok(y.tensors.iter().zip(&c).map(|(t, c)| t.data.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()).sum())
    };
    let fwd = forward(&plan, &x, &w, act, mode)?;
    let g = backward(&plan, &x, &w, act, mode, &fwd, &c)?;
    let h = FD_STEP;
    let mut worst: f64 = 0.0;
    for k in 0..w.values().len() {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp.values_mut()[k] += h;
        wm.values_mut()[k] -= h;
        let fd = (loss(&x, &wp)? - loss(&x, &wm)?) / (2.0 * h);
        worst = worst.max(rel_err(g.weights[k], fd));
    }
    for i in 0..x.tensors.len() {
        for k in 0..x.tensors[i].data.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.tensors[i].data[k] += h;
            xm.tensors[i].data[k] -= h;
            let fd = (loss(&xp, &w)? - loss(&xm, &w)?) / (2.0 * h);
            worst = worst.max(rel_err(g.input[i][k], fd));
        }
    }
    Ok(worst)
}

fn gradients(schema: &Schema, rng: &mut StreamRng) -> Result<SuiteResult> {
    let Some(sub) = repeat_free_part(schema)? else {
        return Ok(suite("gradient", true, "no repeat-free relations".into()));
    };
    let worst = gradient_error(&sub, PoolMode::Sum, rng)?.max(gradient_error(&sub, PoolMode::Mean, rng)?);
    Ok(suite("gradient", worst <= GRAD_TOL, format!("max relative error {worst:.3e} (sum and mean pooling)")))
}

/// Runs every suite with `trials` random permutations each.
pub fn run_all(schema: &Schema, trials: usize, seed: u64, broken: bool) -> Result<Vec<SuiteResult>> {
    let mut rng = stream(seed, "check");
    Ok(vec![
        legal_commute(schema, trials, broken, &mut rng)?,
        illegal_violate(schema, trials, &mut rng)?,
        pooled_vs_oracle(schema, trials.min(20), &mut rng)?,
        bias(schema, trials, &mut rng)?,
        gradients(schema, &mut rng)?,
    ])
}
