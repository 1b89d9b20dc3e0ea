mod common;

use common::{example2, max_diff, random_instance, random_schema, random_weights};
use eerl_core::layer::{backward, broadcast, forward, forward_dense_oracle, pool};
use eerl_core::oracle::apply_perm_dense;
use eerl_core::relstore::{DenseInstance, DenseTensor, Mask};
use eerl_core::rng::{stream, uniform_vec};
use eerl_core::{Activation, LegalPerm, PoolMode, PoolPlan, Schema, TiedWeights};

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn pool_examples() {
    let ones = DenseTensor::from_data(vec![2, 3], 1, vec![1.0; 6]).unwrap();
    let full = Mask::full(6);
    assert_eq!(pool(&ones, &full, &[0, 1], PoolMode::Sum).unwrap().data, vec![6.0]);
    assert_eq!(pool(&ones, &full, &[0, 1], PoolMode::Mean).unwrap().data, vec![1.0]);
    assert_eq!(pool(&ones, &full, &[], PoolMode::Sum).unwrap(), ones);
    assert!(pool(&ones, &full, &[2], PoolMode::Sum).is_err());

    let x = DenseTensor::from_data(vec![2, 2], 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let partial = Mask::from_bools(vec![true, false, true, true]);
    assert_eq!(pool(&x, &partial, &[1], PoolMode::Sum).unwrap().data, vec![1.0, 7.0]);
    assert_eq!(pool(&x, &partial, &[1], PoolMode::Mean).unwrap().data, vec![1.0, 3.5]);
    let none = Mask::empty(4);
    assert_eq!(pool(&x, &none, &[0, 1], PoolMode::Mean).unwrap().data, vec![0.0]);
}

#[test]
fn pooling_is_associative() {
    let mut rng = stream(1, "t");
    for _ in 0..20 {
        let shape = vec![3, 4, 2];
        let x = DenseTensor::from_data(shape, 2, uniform_vec(&mut rng, 48, -1.0, 1.0)).unwrap();
        let full = Mask::full(24);
        let once = pool(&x, &full, &[0, 2], PoolMode::Sum).unwrap();
        let first = pool(&x, &full, &[0], PoolMode::Sum).unwrap();
        let twice = pool(&first, &Mask::full(8), &[1], PoolMode::Sum).unwrap();
        assert_eq!(once.shape, twice.shape);
        for (a, b) in once.data.iter().zip(&twice.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn broadcast_is_adjoint_of_sum_pool() {
    let mut rng = stream(2, "t");
    let scalar = DenseTensor::from_data(vec![], 1, vec![2.5]).unwrap();
    assert_eq!(broadcast(&scalar, &[2, 2], &[0, 1]).unwrap().data, vec![2.5; 4]);
    for axes in [vec![], vec![0], vec![1], vec![0, 2], vec![0, 1, 2]] {
        let shape = [3, 2, 4];
        let x = DenseTensor::from_data(shape.to_vec(), 1, uniform_vec(&mut rng, 24, -1.0, 1.0)).unwrap();
        let pooled = pool(&x, &Mask::full(24), &axes, PoolMode::Sum).unwrap();
        let y = DenseTensor::from_data(pooled.shape.clone(), 1, uniform_vec(&mut rng, pooled.data.len(), -1.0, 1.0))
            .unwrap();
        let lhs = inner(&broadcast(&y, &shape, &axes).unwrap().data, &x.data);
        let rhs = inner(&y.data, &pooled.data);
        assert!((lhs - rhs).abs() < 1e-12, "axes {axes:?}");
        if axes.is_empty() {
            assert_eq!(broadcast(&pooled, &shape, &axes).unwrap(), x);
        }
    }
}

#[test]
fn pooled_forward_matches_dense_oracle() {
    let mut rng = stream(3, "t");
    for trial in 0..20 {
        let schema = random_schema(&mut rng, 6);
        let k = 1 + trial % 2;
        let w = random_weights(&schema, k, k, &mut rng);
        let p = if trial % 3 == 0 { 1.0 } else { 0.7 };
        let x = random_instance(&schema, k, p, &mut rng);
        let plan = PoolPlan::new(&schema).unwrap();
        for act in [Activation::Identity, Activation::leaky()] {
            let fast = forward(&plan, &x, &w, act, PoolMode::Sum).unwrap().out;
            let slow = forward_dense_oracle(&schema, &x, &w, act).unwrap();
            assert!(max_diff(&fast, &slow) <= 1e-9, "trial {trial}");
        }
    }
}

#[test]
fn zero_weights_give_zero_output() {
    let mut rng = stream(4, "t");
    let schema = random_schema(&mut rng, 4);
    let x = random_instance(&schema, 2, 1.0, &mut rng);
    let w = TiedWeights::zeros(&schema, 2, 3).unwrap();
    let out = forward(&PoolPlan::new(&schema).unwrap(), &x, &w, Activation::Identity, PoolMode::Mean).unwrap().out;
    assert!(out.tensors.iter().all(|t| t.channels == 3 && t.data.iter().all(|&v| v == 0.0)));
}

#[test]
fn set_layer_special_case() {
    let schema = Schema::builder().entity("a", 4).relation("s", &["a"]).build().unwrap();
    let (w_all, v_self) = (0.3, -1.2);
    let mut w = TiedWeights::zeros(&schema, 1, 1).unwrap();
    // Equal-index class is the diagonal (w + v), distinct-index class is w.
    w.block_mut(0, 0).copy_from_slice(&[w_all + v_self, w_all]);
    let xs = [0.5, -1.0, 2.0, 0.25];
    let mut x = DenseInstance::zeros(&schema, 1);
    x.tensors[0].data.copy_from_slice(&xs);
    let act = Activation::leaky();
    let out = forward(&PoolPlan::new(&schema).unwrap(), &x, &w, act, PoolMode::Sum).unwrap().out;
    let total: f64 = xs.iter().sum();
    for (o, &xv) in out.tensors[0].data.iter().zip(&xs) {
        assert!((o - act.apply(v_self * xv + w_all * total)).abs() < 1e-12);
    }
}

#[test]
fn multiset_relations_use_the_oracle() {
    let schema = example2();
    assert!(PoolPlan::new(&schema).is_err());
    let mut rng = stream(5, "t");
    let w = random_weights(&schema, 1, 1, &mut rng);
    let x = random_instance(&schema, 1, 1.0, &mut rng);
    let y = forward_dense_oracle(&schema, &x, &w, Activation::leaky()).unwrap();
    for _ in 0..10 {
        let p = LegalPerm::random(&schema, &mut rng);
        let lhs = forward_dense_oracle(&schema, &apply_perm_dense(&p, &schema, &x), &w, Activation::leaky()).unwrap();
        assert!(max_diff(&lhs, &apply_perm_dense(&p, &schema, &y)) <= 1e-12);
    }
    // Zero block weights leave σ(bias pattern).
    let mut b = TiedWeights::zeros(&schema, 1, 1).unwrap();
    b.bias_mut(1).copy_from_slice(&[1.0, -2.0]);
    let out = forward_dense_oracle(&schema, &x, &b, Activation::Identity).unwrap();
    let prereq = &out.tensors[1].data;
    for c in 0..4 {
        for d in 0..4 {
            assert_eq!(prereq[c * 4 + d], if c == d { 1.0 } else { -2.0 });
        }
    }
}

#[test]
fn forward_is_equivariant() {
    let mut rng = stream(6, "t");
    for trial in 0..30 {
        let schema = random_schema(&mut rng, 6);
        let plan = PoolPlan::new(&schema).unwrap();
        let w = random_weights(&schema, 2, 3, &mut rng);
        let x = random_instance(&schema, 2, 0.6, &mut rng);
        let mode = if trial % 2 == 0 { PoolMode::Sum } else { PoolMode::Mean };
        let p = LegalPerm::random(&schema, &mut rng);
        let y = forward(&plan, &x, &w, Activation::leaky(), mode).unwrap().out;
        let py = forward(&plan, &apply_perm_dense(&p, &schema, &x), &w, Activation::leaky(), mode).unwrap().out;
        assert!(max_diff(&py, &apply_perm_dense(&p, &schema, &y)) <= 1e-9);
    }
}

#[test]
fn stacked_layers_stay_equivariant() {
    let mut rng = stream(7, "t");
    for _ in 0..10 {
        let schema = random_schema(&mut rng, 6);
        let plan = PoolPlan::new(&schema).unwrap();
        let ws = [
            random_weights(&schema, 1, 4, &mut rng),
            random_weights(&schema, 4, 4, &mut rng),
            random_weights(&schema, 4, 1, &mut rng),
        ];
        let run = |x: &DenseInstance| {
            ws.iter().fold(x.clone(), |h, w| forward(&plan, &h, w, Activation::leaky(), PoolMode::Mean).unwrap().out)
        };
        let x = random_instance(&schema, 1, 0.8, &mut rng);
        let p = LegalPerm::random(&schema, &mut rng);
        let lhs = run(&apply_perm_dense(&p, &schema, &x));
        assert!(max_diff(&lhs, &apply_perm_dense(&p, &schema, &run(&x))) <= 1e-9);
    }
}

#[test]
fn channels_do_not_mix_under_block_diagonal_weights() {
    let mut rng = stream(8, "t");
    let schema = random_schema(&mut rng, 5);
    let plan = PoolPlan::new(&schema).unwrap();
    let mut w = random_weights(&schema, 2, 2, &mut rng);
    let mut singles = [TiedWeights::zeros(&schema, 1, 1).unwrap(), TiedWeights::zeros(&schema, 1, 1).unwrap()];
    let r = schema.num_relations();
    for i in 0..r {
        for j in 0..r {
            let block = w.block_mut(i, j);
            for class in 0..block.len() / 4 {
                block[class * 4 + 1] = 0.0;
                block[class * 4 + 2] = 0.0;
                for (c, s) in singles.iter_mut().enumerate() {
                    s.block_mut(i, j)[class] = block[class * 4 + c * 3];
                }
            }
        }
        for (c, s) in singles.iter_mut().enumerate() {
            s.bias_mut(i)[0] = w.bias(i)[c];
        }
    }
    let x = random_instance(&schema, 2, 0.7, &mut rng);
    let both = forward(&plan, &x, &w, Activation::leaky(), PoolMode::Mean).unwrap().out;
    for (c, s) in singles.iter().enumerate() {
        let mut xc = DenseInstance::zeros(&schema, 1);
        xc.masks = x.masks.clone();
        for (dst, src) in xc.tensors.iter_mut().zip(&x.tensors) {
            dst.data = src.data.iter().skip(c).step_by(2).copied().collect();
        }
        let one = forward(&plan, &xc, s, Activation::leaky(), PoolMode::Mean).unwrap().out;
        for (a, b) in one.tensors.iter().zip(&both.tensors) {
            let col: Vec<f64> = b.data.iter().skip(c).step_by(2).copied().collect();
            assert_eq!(a.data, col);
        }
    }
}

/// Relative error with a unit floor on the denominator.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn loss(plan: &PoolPlan, x: &DenseInstance, w: &TiedWeights, act: Activation, mode: PoolMode, c: &[Vec<f64>]) -> f64 {
    let y = forward(plan, x, w, act, mode).unwrap().out;
    y.tensors.iter().zip(c).map(|(t, c)| inner(&t.data, c)).sum()
}

fn check_gradients(schema: &Schema, mode: PoolMode, seed: u64) {
    let mut rng = stream(seed, "grad");
    let plan = PoolPlan::new(schema).unwrap();
    let mut w = random_weights(schema, 2, 2, &mut rng);
    w.apply_one_to_many(schema).unwrap();
    let x = random_instance(schema, 2, 0.7, &mut rng);
    let act = Activation::leaky();
    let c: Vec<Vec<f64>> = x.tensors.iter().map(|t| uniform_vec(&mut rng, t.data.len(), -1.0, 1.0)).collect();
    let fwd = forward(&plan, &x, &w, act, mode).unwrap();
    let g = backward(&plan, &x, &w, act, mode, &fwd, &c).unwrap();
    let h = 1e-6;
    for k in 0..w.values().len() {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp.values_mut()[k] += h;
        wm.values_mut()[k] -= h;
        let fd = (loss(&plan, &x, &wp, act, mode, &c) - loss(&plan, &x, &wm, act, mode, &c)) / (2.0 * h);
        assert!(rel_err(g.weights[k], fd) <= 1e-5, "weight {k}: {} vs {fd}", g.weights[k]);
    }
    for i in 0..x.tensors.len() {
        for k in 0..x.tensors[i].data.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.tensors[i].data[k] += h;
            xm.tensors[i].data[k] -= h;
            let fd = (loss(&plan, &xp, &w, act, mode, &c) - loss(&plan, &xm, &w, act, mode, &c)) / (2.0 * h);
            assert!(rel_err(g.input[i][k], fd) <= 1e-5, "input {i}/{k}: {} vs {fd}", g.input[i][k]);
        }
    }
}

fn three_relations() -> Schema {
    Schema::builder()
        .entity("a", 3)
        .entity("b", 4)
        .entity("c", 2)
        .relation("ab", &["a", "b"])
        .relation("ca", &["c", "a"])
        .relation_one("bc", &["b", "c"], "b")
        .build()
        .unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    check_gradients(&three_relations(), PoolMode::Sum, 1);
    check_gradients(&three_relations(), PoolMode::Mean, 2);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let schema = three_relations();
    let mut rng = stream(9, "t");
    let plan = PoolPlan::new(&schema).unwrap();
    let w = random_weights(&schema, 1, 2, &mut rng);
    let x = random_instance(&schema, 1, 1.0, &mut rng);
    let fwd = forward(&plan, &x, &w, Activation::leaky(), PoolMode::Sum).unwrap();
    let zero: Vec<Vec<f64>> = fwd.pre.iter().map(|v| vec![0.0; v.len()]).collect();
    let g = backward(&plan, &x, &w, Activation::leaky(), PoolMode::Sum, &fwd, &zero).unwrap();
    assert!(g.weights.iter().chain(g.input.iter().flatten()).all(|&v| v == 0.0));
}

#[test]
fn bias_gradient_sums_upstream() {
    let schema = three_relations();
    let mut rng = stream(10, "t");
    let plan = PoolPlan::new(&schema).unwrap();
    let w = random_weights(&schema, 1, 1, &mut rng);
    let x = random_instance(&schema, 1, 1.0, &mut rng);
    let fwd = forward(&plan, &x, &w, Activation::Identity, PoolMode::Sum).unwrap();
    let up: Vec<Vec<f64>> = fwd.pre.iter().map(|v| uniform_vec(&mut rng, v.len(), -1.0, 1.0)).collect();
    let g = backward(&plan, &x, &w, Activation::Identity, PoolMode::Sum, &fwd, &up).unwrap();
    for (i, u) in up.iter().enumerate() {
        let sum: f64 = u.iter().sum();
        assert!((g.weights[w.bias_range(i).start] - sum).abs() < 1e-12);
    }
}

#[test]
fn one_to_many_merge_matches_oracle() {
    let schema = three_relations();
    let mut rng = stream(11, "t");
    let mut w = random_weights(&schema, 2, 1, &mut rng);
    let before = w.free_param_count();
    w.apply_one_to_many(&schema).unwrap();
    assert_eq!(w.free_param_count(), before - 2);
    let x = random_instance(&schema, 2, 0.8, &mut rng);
    let fast = forward(&PoolPlan::new(&schema).unwrap(), &x, &w, Activation::Identity, PoolMode::Sum).unwrap().out;
    let slow = forward_dense_oracle(&schema, &x, &w, Activation::Identity).unwrap();
    assert!(max_diff(&fast, &slow) <= 1e-9);
}
