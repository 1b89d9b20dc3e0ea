//! Experiment recipes on synthetic data: the method comparison, the
//! side-information ablation, the sparsity sweep and the inductive run.

use std::io::{Read, Write};
use std::time::Instant;

use eerl_core::cmtf::{evaluate_cmtf, fit, CmtfConfig, FactorSet};
use eerl_core::model::{rmse, train, AutoEncoder, AutoEncoderConfig};
use eerl_core::synth::{generate, heldout_split, observe, sparsify, GenMode, SynthConfig};
use eerl_core::{DenseInstance, DenseTensor, Mask, Schema};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub method: String,
    pub mode: String,
    pub sparsity: f64,
    pub seed: u64,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub seconds: f64,
}

impl MetricRow {
    fn new(method: &str, mode: GenMode, sparsity: f64, seed: u64, fit: Fit) -> Self {
        MetricRow {
            run_id: format!("{method}-{}-{sparsity}-{seed}", mode_name(mode)),
            method: method.into(),
            mode: mode_name(mode).into(),
            sparsity,
            seed,
            train_rmse: fit.train_rmse,
            test_rmse: fit.test_rmse,
            seconds: fit.seconds,
        }
    }
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["run_id", "method", "mode", "sparsity", "seed", "train_rmse", "test_rmse", "seconds"])?;
    }
    w.flush().map_err(Error::io("<metrics>"))?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn mode_name(mode: GenMode) -> &'static str {
    match mode {
        GenMode::Cp => "cp",
        GenMode::Tucker => "tucker",
    }
}

/// Mean test RMSE of `method` over `rows`.
pub fn mean_test_rmse(rows: &[MetricRow], method: &str) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.method == method).map(|r| r.test_rmse).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Training and test RMSE of one fitted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub seconds: f64,
}

/// Trains the auto-encoder on `x` (its target mask is the training set).
pub fn run_eern(
    schema: &Schema,
    x: &DenseInstance,
    target: usize,
    truth: &DenseTensor,
    test: &Mask,
    config: &AutoEncoderConfig,
) -> Result<(AutoEncoder, Fit)> {
    let start = Instant::now();
    let (model, _) = train(config.clone(), schema, x, target, None)?;
    let pred = model.predict(schema, x)?;
    let fit = Fit {
        train_rmse: rmse(&pred.data, &truth.data, &x.masks[target]),
        test_rmse: rmse(&pred.data, &truth.data, test),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, fit))
}

/// Fits coupled factors to every observed relation of `x`.
pub fn run_cmtf(
    schema: &Schema,
    x: &DenseInstance,
    target: usize,
    truth: &DenseTensor,
    test: &Mask,
    config: &CmtfConfig,
    tucker: bool,
) -> Result<(FactorSet, Fit)> {
    let start = Instant::now();
    let (f, _) = fit(schema, x, config, tucker)?;
    let fit = Fit {
        train_rmse: evaluate_cmtf(&f, schema, target, truth, &x.masks[target])?,
        test_rmse: evaluate_cmtf(&f, schema, target, truth, test)?,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((f, fit))
}

/// RMSE on `test` of predicting the mean of the observed target entries.
pub fn mean_baseline(x: &DenseInstance, target: usize, truth: &DenseTensor, test: &Mask) -> f64 {
    let mask = &x.masks[target];
    let mean = mask.offsets().map(|p| x.tensors[target].data[p]).sum::<f64>() / mask.count().max(1) as f64;
    rmse(&vec![mean; truth.data.len()], &truth.data, test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Config {
    pub synth: SynthConfig,
    pub seeds: Vec<u64>,
    pub model: AutoEncoderConfig,
    pub cmtf: CmtfConfig,
}

/// EERN, C-CPF and C-TKF on the same sparsified data for every seed.
pub fn table1(cfg: &Table1Config) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let synth = SynthConfig { seed, ..cfg.synth.clone() };
        let (schema, truth, _) = generate(&synth)?;
        let split = sparsify(&schema, &synth)?;
        let x = observe(&truth, &split.train);
        let t = &truth.tensors[0];
        let level = synth.sparsity[0];
        let model = AutoEncoderConfig { seed, ..cfg.model.clone() };
        let (_, f) = run_eern(&schema, &x, 0, t, &split.test, &model)?;
        rows.push(MetricRow::new("eern", synth.mode, level, seed, f));
        let cmtf = CmtfConfig { seed, ..cfg.cmtf.clone() };
        for (name, tucker) in [("c-cpf", false), ("c-tkf", true)] {
            let (_, f) = run_cmtf(&schema, &x, 0, t, &split.test, &cmtf, tucker)?;
            rows.push(MetricRow::new(name, synth.mode, level, seed, f));
        }
        let baseline = mean_baseline(&x, 0, t, &split.test);
        let fit = Fit { train_rmse: mean_baseline(&x, 0, t, &x.masks[0]), test_rmse: baseline, seconds: 0.0 };
        rows.push(MetricRow::new("mean", synth.mode, level, seed, fit));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideInfoConfig {
    /// Base generator settings; its sparsity is overridden.
    pub synth: SynthConfig,
    pub target_level: f64,
    pub side_levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub model: AutoEncoderConfig,
}

/// EERN test error with the target table fixed and the side tables at each level.
/// The `sparsity` column holds the side level.
pub fn side_info(cfg: &SideInfoConfig) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for &level in &cfg.side_levels {
        for &seed in &cfg.seeds {
            let synth = SynthConfig { seed, sparsity: [cfg.target_level, level, level], ..cfg.synth.clone() };
            let (schema, truth, _) = generate(&synth)?;
            let split = sparsify(&schema, &synth)?;
            let x = observe(&truth, &split.train);
            let model = AutoEncoderConfig { seed, ..cfg.model.clone() };
            let (_, f) = run_eern(&schema, &x, 0, &truth.tensors[0], &split.test, &model)?;
            rows.push(MetricRow::new("eern", synth.mode, level, seed, f));
        }
    }
    Ok(rows)
}

/// Mean test RMSE per distinct `sparsity`, in first-appearance order.
pub fn level_means(rows: &[MetricRow]) -> Vec<(f64, f64)> {
    let mut levels: Vec<f64> = Vec::new();
    for r in rows {
        if !levels.contains(&r.sparsity) {
            levels.push(r.sparsity);
        }
    }
    levels
        .into_iter()
        .map(|l| {
            let v: Vec<f64> = rows.iter().filter(|r| r.sparsity == l).map(|r| r.test_rmse).collect();
            (l, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Number of adjacent pairs where the error rises.
pub fn inversions(means: &[(f64, f64)]) -> usize {
    means.windows(2).filter(|w| w[1].1 > w[0].1).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub synth: SynthConfig,
    /// Observed fraction of the non-held-out entries, per trained model.
    pub levels: Vec<f64>,
    pub heldout: f64,
    pub seeds: Vec<u64>,
    pub model: AutoEncoderConfig,
}

/// Test error of a model trained at one level and given data at another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub seed: u64,
    pub train_level: f64,
    pub test_level: f64,
    pub test_rmse: f64,
}

/// Nested observation levels of every relation with a fixed held-out test set.
/// Returns the diagonal as metric rows and the full train/test level grid.
pub fn sweep(cfg: &SweepConfig) -> Result<(Vec<MetricRow>, Vec<GridCell>)> {
    let mut rows = Vec::new();
    let mut grid = Vec::new();
    for &seed in &cfg.seeds {
        let synth = SynthConfig { seed, ..cfg.synth.clone() };
        let (schema, truth, _) = generate(&synth)?;
        let full = |i: usize| Mask::full(truth.tensors[i].positions());
        let target = heldout_split(&full(0), cfg.heldout, &cfg.levels, seed)?;
        let sides = (1..schema.num_relations())
            .map(|i| heldout_split(&full(i), 0.0, &cfg.levels, seed ^ ((i as u64) << 32)))
            .collect::<eerl_core::Result<Vec<_>>>()?;
        let at_level = |l: usize| {
            let mut masks = vec![target.train[l].clone()];
            masks.extend(sides.iter().map(|s| s.train[l].clone()));
            observe(&truth, &masks)
        };
        let inputs: Vec<DenseInstance> = (0..cfg.levels.len()).map(at_level).collect();
        let t = &truth.tensors[0];
        for (a, &train_level) in cfg.levels.iter().enumerate() {
            let model = AutoEncoderConfig { seed, ..cfg.model.clone() };
            let (m, f) = run_eern(&schema, &inputs[a], 0, t, &target.test, &model)?;
            rows.push(MetricRow::new("eern", synth.mode, train_level, seed, f));
            for (b, &test_level) in cfg.levels.iter().enumerate() {
                let test_rmse = m.evaluate(&schema, &inputs[b], t, &target.test)?;
                grid.push(GridCell { seed, train_level, test_level, test_rmse });
            }
        }
    }
    Ok((rows, grid))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InductiveConfig {
    pub train: SynthConfig,
    pub test_counts: [usize; 3],
    pub test_seed: u64,
    pub model: AutoEncoderConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InductiveResult {
    /// Test error on the instantiation the model was trained on.
    pub transductive_rmse: f64,
    /// Test error on the fresh instantiation.
    pub inductive_rmse: f64,
    /// Constant-mean predictor on the fresh instantiation.
    pub baseline_rmse: f64,
    pub seconds: f64,
}

/// Trains on one instantiation and evaluates, without retraining, on a fresh
/// one with different entity counts.
pub fn inductive(cfg: &InductiveConfig) -> Result<(AutoEncoder, InductiveResult)> {
    let (schema, truth, _) = generate(&cfg.train)?;
    let split = sparsify(&schema, &cfg.train)?;
    let x = observe(&truth, &split.train);
    let (model, fit) = run_eern(&schema, &x, 0, &truth.tensors[0], &split.test, &cfg.model)?;
    let fresh = SynthConfig { counts: cfg.test_counts, seed: cfg.test_seed, ..cfg.train.clone() };
    let (schema2, truth2, _) = generate(&fresh)?;
    let split2 = sparsify(&schema2, &fresh)?;
    let x2 = observe(&truth2, &split2.train);
    let t2 = &truth2.tensors[0];
    let result = InductiveResult {
        transductive_rmse: fit.test_rmse,
        inductive_rmse: model.evaluate(&schema2, &x2, t2, &split2.test)?,
        baseline_rmse: mean_baseline(&x2, 0, t2, &split2.test),
        seconds: fit.seconds,
    };
    Ok((model, result))
}
