mod common;

use eerl_core::cmtf::{
    evaluate_cmtf, fit_ccpf, fit_ctkf, loss_and_grad, reconstruct, with_identity_cores, CmtfConfig, FactorSet, Step,
};
use eerl_core::relstore::{DenseInstance, Mask};
use eerl_core::synth::{generate, GenMode, SynthConfig};

fn full(cfg: &SynthConfig) -> (eerl_core::Schema, DenseInstance) {
    let (schema, x, _) = generate(cfg).unwrap();
    (schema, x)
}

#[test]
fn rank_one_coupled_data_is_recovered() {
    let (schema, x) = full(&SynthConfig { counts: [6, 5, 4], h: 1, seed: 1, ..Default::default() });
    let cfg = CmtfConfig { rank: 1, iters: 4000, lr: 0.02, ..Default::default() };
    let (f, hist) = fit_ccpf(&schema, &x, &cfg).unwrap();
    for i in 0..3 {
        let e = evaluate_cmtf(&f, &schema, i, &x.tensors[i], &x.masks[i]).unwrap();
        assert!(e <= 1e-3, "relation {i}: rmse {e}");
    }
    assert!(hist.last().unwrap() < &hist[0]);
}

#[test]
fn zero_data_at_zero_factors_is_stationary() {
    let (schema, mut x) = full(&SynthConfig { counts: [4, 3, 2], ..Default::default() });
    x.tensors.iter_mut().for_each(|t| t.data.fill(0.0));
    let mut f = FactorSet::init(&schema, 3, true, 0).unwrap();
    f.factors.iter_mut().for_each(|z| z.fill(0.0));
    let (loss, grad) = loss_and_grad(&f, &schema, &x, false).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn small_plain_steps_do_not_increase_the_loss() {
    let (schema, x) = full(&SynthConfig { counts: [6, 5, 4], h: 2, seed: 2, ..Default::default() });
    let cfg = CmtfConfig { rank: 2, iters: 300, lr: 0.05, step: Step::Plain, ..Default::default() };
    let (_, hist) = fit_ccpf(&schema, &x, &cfg).unwrap();
    assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    let half = CmtfConfig { lr: 0.025, ..cfg };
    let (_, hist) = fit_ccpf(&schema, &x, &half).unwrap();
    assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-15));
}

#[test]
fn identity_cores_reduce_to_cp() {
    let (schema, _) = full(&SynthConfig { counts: [4, 3, 5], ..Default::default() });
    let f = FactorSet::init(&schema, 3, false, 5).unwrap();
    let t = with_identity_cores(&f, 3);
    for i in 0..3 {
        assert_eq!(reconstruct(&f, &schema, i).unwrap(), reconstruct(&t, &schema, i).unwrap());
    }
}

#[test]
fn tucker_data_is_recovered_at_matching_rank() {
    let gen = SynthConfig { counts: [6, 6, 6], h: 2, mode: GenMode::Tucker, seed: 4, ..Default::default() };
    let (schema, x) = full(&gen);
    let cfg = CmtfConfig { rank: 2, iters: 6000, lr: 0.02, ..Default::default() };
    let (f, _) = fit_ctkf(&schema, &x, &cfg).unwrap();
    for i in 0..3 {
        let e = evaluate_cmtf(&f, &schema, i, &x.tensors[i], &x.masks[i]).unwrap();
        assert!(e <= 1e-2, "relation {i}: rmse {e}");
    }
}

fn flat(f: &FactorSet) -> Vec<f64> {
    f.factors.iter().chain(f.cores.iter().flatten()).flatten().copied().collect()
}

fn set_flat(f: &mut FactorSet, k: usize, v: f64) {
    let mut pos = 0;
    for z in f.factors.iter_mut().chain(f.cores.iter_mut().flatten()) {
        if k < pos + z.len() {
            z[k - pos] = v;
            return;
        }
        pos += z.len();
    }
}

#[test]
fn gradients_match_finite_differences() {
    let (schema, mut x) = full(&SynthConfig { counts: [4, 3, 3], h: 2, seed: 6, ..Default::default() });
    x.masks[0] = Mask::from_offsets(12, [0, 3, 5, 7, 8, 11]);
    for tucker in [false, true] {
        for zero_fill in [false, true] {
            let f = FactorSet::init(&schema, 2, tucker, 8).unwrap();
            let (_, grad) = loss_and_grad(&f, &schema, &x, zero_fill).unwrap();
            let base = flat(&f);
            let h = 1e-6;
            for k in 0..base.len() {
                let (mut p, mut m) = (f.clone(), f.clone());
                set_flat(&mut p, k, base[k] + h);
                set_flat(&mut m, k, base[k] - h);
                let fd = (loss_and_grad(&p, &schema, &x, zero_fill).unwrap().0
                    - loss_and_grad(&m, &schema, &x, zero_fill).unwrap().0)
                    / (2.0 * h);
                assert!((grad[k] - fd).abs() <= 1e-7, "param {k}: {} vs {fd}", grad[k]);
            }
        }
    }
}

#[test]
fn reconstruct_examples() {
    let schema = eerl_core::Schema::builder()
        .entity("a", 2)
        .entity("b", 2)
        .relation("ab", &["a", "b"])
        .build()
        .unwrap();
    let f = FactorSet { rank: 1, factors: vec![vec![1.0, 2.0], vec![3.0, 4.0]], cores: None };
    assert_eq!(reconstruct(&f, &schema, 0).unwrap().data, vec![3.0, 4.0, 6.0, 8.0]);
    let g = FactorSet { rank: 2, factors: vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]], cores: None };
    // [[1,2],[3,4]] · [[5,6],[7,8]]ᵀ
    assert_eq!(reconstruct(&g, &schema, 0).unwrap().data, vec![17.0, 23.0, 39.0, 53.0]);
    let z = FactorSet { cores: Some(vec![vec![0.0; 4]]), ..g };
    assert!(reconstruct(&z, &schema, 0).unwrap().data.iter().all(|&v| v == 0.0));
}

#[test]
fn shared_factors_couple_relations() {
    let (schema, x) = full(&SynthConfig { counts: [4, 3, 3], seed: 2, ..Default::default() });
    let f = FactorSet::init(&schema, 2, false, 1).unwrap();
    // Entity e1 appears in r12 and r13; dropping either relation changes its gradient.
    let (_, grad) = loss_and_grad(&f, &schema, &x, false).unwrap();
    for drop in [0, 1] {
        let mut y = x.clone();
        y.masks[drop] = Mask::empty(y.masks[drop].len());
        let (_, g2) = loss_and_grad(&f, &schema, &y, false).unwrap();
        assert!(grad[..8].iter().zip(&g2[..8]).any(|(a, b)| (a - b).abs() > 1e-9));
    }
}

#[test]
fn cp_scale_gauge() {
    let (schema, _) = full(&SynthConfig { counts: [4, 3, 3], ..Default::default() });
    let f = FactorSet::init(&schema, 3, false, 2).unwrap();
    let alpha = -1.7;
    let mut g = f.clone();
    g.factors[0].iter_mut().for_each(|v| *v *= alpha);
    g.factors[1].iter_mut().for_each(|v| *v /= alpha);
    let (a, b) = (reconstruct(&f, &schema, 0).unwrap(), reconstruct(&g, &schema, 0).unwrap());
    assert!(a.data.iter().zip(&b.data).all(|(u, v)| (u - v).abs() <= 1e-12));
}

#[test]
fn unobserved_values_are_ignored() {
    let (schema, mut x) = full(&SynthConfig { counts: [4, 3, 3], seed: 3, ..Default::default() });
    x.masks[0] = Mask::from_offsets(12, [1, 2, 6, 9]);
    let f = FactorSet::init(&schema, 2, true, 4).unwrap();
    let before = loss_and_grad(&f, &schema, &x, false).unwrap();
    x.tensors[0].data[0] = 100.0;
    x.tensors[0].data[11] = -50.0;
    assert_eq!(loss_and_grad(&f, &schema, &x, false).unwrap(), before);
}

#[test]
fn cp_data_admits_exact_factorization() {
    let (schema, x) = full(&SynthConfig { counts: [4, 4, 4], h: 2, seed: 5, ..Default::default() });
    let cfg = CmtfConfig { rank: 2, iters: 50000, lr: 0.1, step: Step::Plain, ..Default::default() };
    let (f, _) = fit_ccpf(&schema, &x, &cfg).unwrap();
    for i in 0..3 {
        let e = evaluate_cmtf(&f, &schema, i, &x.tensors[i], &x.masks[i]).unwrap();
        assert!(e <= 1e-8, "relation {i}: rmse {e}");
    }
}
