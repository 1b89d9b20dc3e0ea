#![allow(dead_code)]

use eerl_core::relstore::{DenseInstance, DenseTensor, Mask};
use eerl_core::rng::{permutation, uniform, StreamRng};
use eerl_core::{Schema, TiedWeights};
use rand::Rng;

pub fn example2() -> Schema {
    Schema::builder()
        .entity("student", 5)
        .entity("course", 4)
        .entity("prof", 3)
        .relation("takes", &["student", "course"])
        .relation("prereq", &["course", "course"])
        .relation("refs", &["student", "prof"])
        .build()
        .unwrap()
}

/// Repeat-free schema with up to 3 entities of size ≤ `max_n` and up to 3 relations.
pub fn random_schema(rng: &mut StreamRng, max_n: usize) -> Schema {
    let d = rng.random_range(1..=3usize);
    let names = ["a", "b", "c"];
    let mut b = Schema::builder();
    for name in &names[..d] {
        b = b.entity(name, rng.random_range(1..=max_n));
    }
    for r in 0..rng.random_range(1..=3usize) {
        let order = permutation(rng, d);
        let arity = rng.random_range(1..=d);
        let members: Vec<&str> = order[..arity].iter().map(|&k| names[k]).collect();
        b = b.relation(&format!("r{r}"), &members);
    }
    b.build().unwrap()
}

pub fn random_weights(schema: &Schema, k_in: usize, k_out: usize, rng: &mut StreamRng) -> TiedWeights {
    let mut w = TiedWeights::zeros(schema, k_in, k_out).unwrap();
    for v in w.values_mut() {
        *v = uniform(rng, -1.0, 1.0);
    }
    w
}

/// Random values everywhere; each position observed with probability `p`.
pub fn random_instance(schema: &Schema, k: usize, p: f64, rng: &mut StreamRng) -> DenseInstance {
    let mut x = DenseInstance::zeros(schema, k);
    for (t, m) in x.tensors.iter_mut().zip(x.masks.iter_mut()) {
        for v in t.data.iter_mut() {
            *v = uniform(rng, -1.0, 1.0);
        }
        *m = Mask::from_bools((0..t.positions()).map(|_| rng.random::<f64>() < p).collect());
    }
    x
}

pub fn max_diff(a: &DenseInstance, b: &DenseInstance) -> f64 {
    a.tensors
        .iter()
        .zip(&b.tensors)
        .flat_map(|(x, y)| x.data.iter().zip(&y.data).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

pub fn tensor_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.data.iter().zip(&b.data).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}
