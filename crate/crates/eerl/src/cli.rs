//! Command-line interface.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eerl_core::cmtf::{reconstruct, CmtfConfig, Step};
use eerl_core::layer::{Activation, PoolMode};
use eerl_core::model::{rmse, AutoEncoderConfig};
use eerl_core::synth::{generate, observe, sparsify, GenMode, SynthConfig};
use eerl_core::tying::num_free_params;
use eerl_core::{Mask, Schema, TiedWeights};
use serde::Serialize;

use crate::checks;
use crate::dataset::{read_schema_file, Dataset};
use crate::error::{Error, Result};
use crate::experiments::{self, MetricRow};
use crate::manifest::RunManifest;
use crate::pattern::pattern;
use crate::tables::{read_relation, write_codes, write_matrix, write_relation};
use crate::weights::{load_model, save_model};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "eerl", version, about = "Equivariant entity-relationship layers: checks, training and experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
pub enum Command {
    /// Validate a schema and list sizes and free-parameter counts per block
    SchemaCheck(SchemaArgs),
    /// Dump the parameter-tying pattern as a PGM image plus a per-block report
    Pattern(PatternArgs),
    /// Run the equivariance, maximality, pooling, bias and gradient checks
    CheckEquivariance(CheckArgs),
    /// Generate a synthetic coupled dataset
    Gen(GenArgs),
    /// Train the factorized auto-encoder on a dataset
    TrainEern(TrainEernArgs),
    /// Fit a coupled CP or Tucker factorization to a dataset
    TrainCmtf(TrainCmtfArgs),
    /// Score predictions or a trained model on a dataset's test entries
    Eval(EvalArgs),
    /// Train at nested observation levels and evaluate on a fixed held-out set
    Sweep(SweepArgs),
    /// Vary the side tables' observation level with the target table fixed
    SideInfo(SideInfoArgs),
    /// Compare the auto-encoder with coupled factorizations on synthetic data
    Table1(Table1Args),
    /// Train on one instantiation and evaluate on a larger fresh one
    Inductive(InductiveArgs),
    /// Re-run a manifest and compare its metrics bit for bit
    Replay(ReplayArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModeArg {
    Cp,
    Tucker,
}

impl From<ModeArg> for GenMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cp => GenMode::Cp,
            ModeArg::Tucker => GenMode::Tucker,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PoolArg {
    Sum,
    Mean,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepArg {
    Adam,
    Plain,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SchemaArgs {
    #[arg(long)]
    pub schema: PathBuf,
    /// Directory for the manifest
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PatternArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CheckArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one weight entry as a negative control
    #[arg(long)]
    pub break_tying: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    /// Instances per entity: one value or three
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub entities: Vec<usize>,
    /// Latent dimension of the generating factors
    #[arg(long, default_value_t = 2)]
    pub latent: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Cp)]
    pub mode: ModeArg,
    /// Observed fraction per relation: one value or three
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub sparsity: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub min_per_line: usize,
}

fn three<T: Copy>(v: &[T], what: &str) -> Result<[T; 3]> {
    match v {
        [a] => Ok([*a; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(Error::Format(format!("--{what} takes one value or three"))),
    }
}

impl SynthArgs {
    fn config(&self, seed: u64) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            counts: three(&self.entities, "entities")?,
            h: self.latent,
            mode: self.mode.into(),
            sparsity: three(&self.sparsity, "sparsity")?,
            min_per_line: self.min_per_line,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    /// Code size per entity instance
    #[arg(long, default_value_t = 10)]
    pub h_code: usize,
    /// Hidden layers in each of the encoder and decoder
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Channels of every hidden layer
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = PoolArg::Mean)]
    pub pool: PoolArg,
    /// Leaky ReLU slope
    #[arg(long, default_value_t = 0.01)]
    pub leak: f64,
    /// Fraction of target training entries hidden from the encoder each epoch
    #[arg(long, default_value_t = 0.0)]
    pub hide: f64,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> Result<AutoEncoderConfig> {
        let cfg = AutoEncoderConfig {
            encoder_widths: vec![self.width; self.layers],
            h_code: self.h_code,
            decoder_widths: vec![self.width; self.layers],
            activation: Activation::LeakyRelu(self.leak),
            pool: match self.pool {
                PoolArg::Sum => PoolMode::Sum,
                PoolArg::Mean => PoolMode::Mean,
            },
            lr: self.lr,
            epochs: self.epochs,
            seed,
            hide: self.hide,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GenArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainEernArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Relation to reconstruct (defaults to the dataset's target)
    #[arg(long)]
    pub target_relation: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainCmtfArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub target_relation: Option<String>,
    /// cp fits C-CPF, tucker fits C-TKF
    #[arg(long, value_enum, default_value_t = ModeArg::Cp)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    pub rank: usize,
    /// Gradient steps
    #[arg(long, default_value_t = 3000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = StepArg::Adam)]
    pub step: StepArg,
    /// Score unobserved entries as zeros
    #[arg(long)]
    pub cmtf_zero_fill: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub target_relation: Option<String>,
    /// Prediction table of the target relation
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub predictions: Option<PathBuf>,
    /// Checkpoint directory written by train-eern
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CmtfArgs {
    #[arg(long, default_value_t = 10)]
    pub rank: usize,
    #[arg(long, default_value_t = 3000)]
    pub cmtf_iters: usize,
    #[arg(long, default_value_t = 0.01)]
    pub cmtf_lr: f64,
    #[arg(long, value_enum, default_value_t = StepArg::Adam)]
    pub cmtf_step: StepArg,
    #[arg(long)]
    pub cmtf_zero_fill: bool,
}

impl CmtfArgs {
    fn config(&self, seed: u64) -> CmtfConfig {
        CmtfConfig {
            rank: self.rank,
            iters: self.cmtf_iters,
            lr: self.cmtf_lr,
            seed,
            step: step(self.cmtf_step),
            zero_fill: self.cmtf_zero_fill,
        }
    }
}

fn step(s: StepArg) -> Step {
    match s {
        StepArg::Adam => Step::Adam,
        StepArg::Plain => Step::Plain,
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Table1Args {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub cmtf: CmtfArgs,
    /// Number of seeds, starting at --seed
    #[arg(long, default_value_t = 3)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SideInfoArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.1)]
    pub target_level: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.15,0.3,0.5")]
    pub side_levels: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub levels: Vec<f64>,
    /// Fraction of the target set aside for testing
    #[arg(long, default_value_t = 0.1)]
    pub heldout: f64,
    #[arg(long, default_value_t = 1)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InductiveArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Instances per entity of the evaluation instantiation
    #[arg(long, value_delimiter = ',', default_value = "70")]
    pub test_entities: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory of the replay (defaults to `replay` next to the manifest)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub passed: bool,
    pub manifest: Option<RunManifest>,
}

struct Ctx<'a> {
    out: &'a mut dyn Write,
    argv: Vec<String>,
    start: Instant,
}

impl Ctx<'_> {
    fn say(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(Error::io("<stdout>"))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        command: &Command,
        seed: u64,
        inputs: Vec<&Path>,
        out_dir: Option<&Path>,
        outputs: Vec<String>,
        metrics: BTreeMap<String, f64>,
        passed: bool,
    ) -> Result<Report> {
        let manifest = RunManifest {
            command: command_name(command).into(),
            argv: self.argv.clone(),
            config: serde_json::to_value(command)?,
            seed,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs,
            metrics,
            seconds: self.start.elapsed().as_secs_f64(),
        };
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
            manifest.save(&dir.join("manifest.json"))?;
        }
        Ok(Report { passed, manifest: Some(manifest) })
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SchemaCheck(_) => "schema-check",
        Command::Pattern(_) => "pattern",
        Command::CheckEquivariance(_) => "check-equivariance",
        Command::Gen(_) => "gen",
        Command::TrainEern(_) => "train-eern",
        Command::TrainCmtf(_) => "train-cmtf",
        Command::Eval(_) => "eval",
        Command::Sweep(_) => "sweep",
        Command::SideInfo(_) => "side-info",
        Command::Table1(_) => "table1",
        Command::Inductive(_) => "inductive",
        Command::Replay(_) => "replay",
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(Error::io(path))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes()).map_err(Error::io(path))
}

/// Free parameters of every block after one-to-many merges, row-major.
pub fn block_counts(schema: &Schema) -> Result<Vec<usize>> {
    let mut w = TiedWeights::zeros(schema, 1, 1)?;
    w.apply_one_to_many(schema)?;
    let r = schema.num_relations();
    let mut counts = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            let merged = w.merges().iter().filter(|m| m.block == i * r + j).count();
            counts.push(num_free_params(schema, i, j)? - merged);
        }
    }
    Ok(counts)
}

fn schema_check(ctx: &mut Ctx, cmd: &Command, a: &SchemaArgs) -> Result<Report> {
    let schema = read_schema_file(&a.schema)?;
    for e in schema.entities() {
        ctx.say(&format!("entity {} ({}): {} instances", e.id.index() + 1, e.name, e.count))?;
    }
    for (i, r) in schema.relations().iter().enumerate() {
        let members: Vec<&str> = r.members.iter().map(|d| schema.entity(*d).name.as_str()).collect();
        ctx.say(&format!("relation {} ({}): {{{}}} size {}", i + 1, r.name, members.join(","), schema.relation_size(i)?))?;
    }
    ctx.say(&format!("N = {}", schema.total_size()))?;
    let counts = block_counts(&schema)?;
    let r = schema.num_relations();
    for i in 0..r {
        for j in 0..r {
            ctx.say(&format!("block {} {}: {} free parameters", i + 1, j + 1, counts[i * r + j]))?;
        }
    }
    let bias: usize = (0..r).map(|i| eerl_core::tying::bias_num_params(&schema, i)).sum::<eerl_core::Result<_>>()?;
    let total: usize = counts.iter().sum();
    ctx.say(&format!("total: {total} weight parameters, {bias} bias parameters"))?;
    let mut metrics = BTreeMap::from([
        ("total_size".to_string(), schema.total_size() as f64),
        ("weight_params".to_string(), total as f64),
        ("bias_params".to_string(), bias as f64),
    ]);
    for i in 0..r {
        for j in 0..r {
            metrics.insert(format!("block_{}_{}", i + 1, j + 1), counts[i * r + j] as f64);
        }
    }
    ctx.finish(cmd, 0, vec![&a.schema], a.out.as_deref(), vec![], metrics, true)
}

fn cmd_pattern(ctx: &mut Ctx, cmd: &Command, a: &PatternArgs) -> Result<Report> {
    let schema = read_schema_file(&a.schema)?;
    let (pgm, counts) = pattern(&schema)?;
    let report = crate::pattern::report(&schema, &counts);
    write_text(&a.out.join("pattern.pgm"), &pgm)?;
    write_text(&a.out.join("pattern.txt"), &report)?;
    ctx.say(report.trim_end())?;
    let r = schema.num_relations();
    let mut metrics = BTreeMap::new();
    for i in 0..r {
        for j in 0..r {
            metrics.insert(format!("block_{}_{}", i + 1, j + 1), counts[i * r + j] as f64);
        }
    }
    let outputs = vec!["pattern.pgm".into(), "pattern.txt".into()];
    ctx.finish(cmd, 0, vec![&a.schema], Some(&a.out), outputs, metrics, true)
}

fn check_equivariance(ctx: &mut Ctx, cmd: &Command, a: &CheckArgs) -> Result<Report> {
    let schema = read_schema_file(&a.schema)?;
    let results = checks::run_all(&schema, a.trials, a.seed, a.break_tying)?;
    let mut metrics = BTreeMap::new();
    for r in &results {
        ctx.say(&format!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail))?;
        metrics.insert(format!("{}_passed", r.name), f64::from(u8::from(r.passed)));
    }
    let passed = results.iter().all(|r| r.passed);
    ctx.finish(cmd, a.seed, vec![&a.schema], a.out.as_deref(), vec![], metrics, passed)
}

fn gen(ctx: &mut Ctx, cmd: &Command, a: &GenArgs) -> Result<Report> {
    let cfg = a.synth.config(a.seed)?;
    let (schema, truth, gt) = generate(&cfg)?;
    let split = sparsify(&schema, &cfg)?;
    let data = Dataset { observed: observe(&truth, &split.train), schema, target: 0, truth: Some(truth), test: Some(split.test) };
    data.save(&a.out)?;
    for (d, f) in gt.factors.iter().enumerate() {
        write_matrix(create(&a.out.join(format!("latent/{}.csv", data.schema.entities()[d].name)))?, cfg.h, f)?;
    }
    let mut metrics = BTreeMap::new();
    for (i, m) in data.observed.masks.iter().enumerate() {
        let name = &data.schema.relations()[i].name;
        ctx.say(&format!("{name}: {} of {} entries observed", m.count(), m.len()))?;
        metrics.insert(format!("observed_{name}"), m.count() as f64);
    }
    let sum: f64 = data.observed.tensors.iter().flat_map(|t| t.data.iter()).sum();
    metrics.insert("observed_sum".into(), sum);
    ctx.finish(cmd, a.seed, vec![], Some(&a.out), vec!["schema.txt".into(), "observed".into(), "truth".into()], metrics, true)
}

/// Test metrics when the dataset carries ground truth and a test set.
fn scored(data: &Dataset, pred: &[f64], metrics: &mut BTreeMap<String, f64>) -> Vec<String> {
    let truth = data.target_truth();
    let train = rmse(pred, &truth.data, &data.observed.masks[data.target]);
    metrics.insert("train_rmse".into(), train);
    let mut lines = vec![format!("train rmse {train:.6}")];
    if let (Some(test), Some(_)) = (&data.test, &data.truth) {
        let t = rmse(pred, &truth.data, test);
        metrics.insert("test_rmse".into(), t);
        lines.push(format!("test rmse {t:.6}"));
    }
    lines
}

fn metric_row(method: &str, seed: u64, data: &Dataset, metrics: &BTreeMap<String, f64>, seconds: f64) -> MetricRow {
    let m = &data.observed.masks[data.target];
    MetricRow {
        run_id: format!("{method}-{seed}"),
        method: method.into(),
        mode: String::new(),
        sparsity: m.count() as f64 / m.len().max(1) as f64,
        seed,
        train_rmse: metrics["train_rmse"],
        test_rmse: metrics.get("test_rmse").copied().unwrap_or(f64::NAN),
        seconds,
    }
}

fn train_eern(ctx: &mut Ctx, cmd: &Command, a: &TrainEernArgs) -> Result<Report> {
    let data = Dataset::load(&a.data_dir, a.target_relation.as_deref())?;
    let config = a.model.config(a.seed)?;
    let start = Instant::now();
    let (model, history) = eerl_core::model::train(config, &data.schema, &data.observed, data.target, None)?;
    let seconds = start.elapsed().as_secs_f64();
    let pred = model.predict(&data.schema, &data.observed)?;
    save_model(&a.out.join("model"), &model, &data.schema)?;
    let full = Mask::full(pred.positions());
    write_relation(create(&a.out.join("predictions.csv"))?, &data.schema, data.target, &pred, &full)?;
    write_codes(create(&a.out.join("codes.csv"))?, &data.schema, &model.encode(&data.schema, &data.observed)?)?;
    let mut metrics = BTreeMap::from([("params".to_string(), model.num_params() as f64)]);
    if let Some(l) = history.train_loss.last() {
        metrics.insert("final_loss".into(), *l);
    }
    for line in scored(&data, &pred.data, &mut metrics) {
        ctx.say(&line)?;
    }
    experiments::write_metrics(create(&a.out.join("metrics.csv"))?, &[metric_row("eern", a.seed, &data, &metrics, seconds)])?;
    let outputs = ["model", "predictions.csv", "codes.csv", "metrics.csv"].map(String::from).to_vec();
    ctx.finish(cmd, a.seed, vec![&a.data_dir], Some(&a.out), outputs, metrics, true)
}

fn train_cmtf(ctx: &mut Ctx, cmd: &Command, a: &TrainCmtfArgs) -> Result<Report> {
    let data = Dataset::load(&a.data_dir, a.target_relation.as_deref())?;
    let cfg = CmtfConfig { rank: a.rank, iters: a.epochs, lr: a.lr, seed: a.seed, step: step(a.step), zero_fill: a.cmtf_zero_fill };
    let tucker = a.mode == ModeArg::Tucker;
    let start = Instant::now();
    let (f, history) = eerl_core::cmtf::fit(&data.schema, &data.observed, &cfg, tucker)?;
    let seconds = start.elapsed().as_secs_f64();
    let pred = reconstruct(&f, &data.schema, data.target)?;
    for (d, z) in f.factors.iter().enumerate() {
        write_matrix(create(&a.out.join(format!("factors/{}.csv", data.schema.entities()[d].name)))?, f.rank, z)?;
    }
    for (i, c) in f.cores.iter().flatten().enumerate() {
        write_matrix(create(&a.out.join(format!("cores/{}.csv", data.schema.relations()[i].name)))?, f.rank, c)?;
    }
    write_relation(create(&a.out.join("predictions.csv"))?, &data.schema, data.target, &pred, &Mask::full(pred.positions()))?;
    let mut metrics = BTreeMap::new();
    if let Some(l) = history.last() {
        metrics.insert("final_loss".into(), *l);
    }
    for line in scored(&data, &pred.data, &mut metrics) {
        ctx.say(&line)?;
    }
    let method = if tucker { "c-tkf" } else { "c-cpf" };
    experiments::write_metrics(create(&a.out.join("metrics.csv"))?, &[metric_row(method, a.seed, &data, &metrics, seconds)])?;
    let outputs = ["factors", "predictions.csv", "metrics.csv"].map(String::from).to_vec();
    ctx.finish(cmd, a.seed, vec![&a.data_dir], Some(&a.out), outputs, metrics, true)
}

fn eval(ctx: &mut Ctx, cmd: &Command, a: &EvalArgs) -> Result<Report> {
    let data = Dataset::load(&a.data_dir, a.target_relation.as_deref())?;
    let (Some(truth), Some(test)) = (&data.truth, &data.test) else {
        return Err(Error::Format("dataset has no ground truth or test set".into()));
    };
    let truth = &truth.tensors[data.target];
    let (pred, input) = match (&a.predictions, &a.model) {
        (Some(p), _) => {
            let t = read_relation(File::open(p).map_err(Error::io(p))?, &data.schema, data.target)?;
            if t.mask().count() != t.mask().len() && !test.offsets().all(|q| t.mask().get(q)) {
                return Err(Error::Format("predictions do not cover every test entry".into()));
            }
            (t.to_dense(), p.as_path())
        }
        (None, Some(dir)) => {
            let model = load_model(dir, &data.schema)?;
            (model.predict(&data.schema, &data.observed)?, dir.as_path())
        }
        (None, None) => unreachable!("clap requires one of --predictions and --model"),
    };
    let test_rmse = rmse(&pred.data, &truth.data, test);
    ctx.say(&format!("test rmse {test_rmse:.6} over {} entries", test.count()))?;
    let metrics = BTreeMap::from([("test_rmse".to_string(), test_rmse)]);
    ctx.finish(cmd, 0, vec![&a.data_dir, input], a.out.as_deref(), vec![], metrics, true)
}

fn seeds(seed: u64, trials: u64) -> Vec<u64> {
    (seed..seed + trials.max(1)).collect()
}

fn row_metrics(rows: &[MetricRow]) -> BTreeMap<String, f64> {
    rows.iter().map(|r| (format!("{}_test_rmse", r.run_id), r.test_rmse)).collect()
}

fn table1(ctx: &mut Ctx, cmd: &Command, a: &Table1Args) -> Result<Report> {
    let cfg = experiments::Table1Config {
        synth: a.synth.config(a.seed)?,
        seeds: seeds(a.seed, a.trials),
        model: a.model.config(a.seed)?,
        cmtf: a.cmtf.config(a.seed),
    };
    let rows = experiments::table1(&cfg)?;
    experiments::write_metrics(create(&a.out.join("metrics.csv"))?, &rows)?;
    let mut metrics = row_metrics(&rows);
    for method in ["eern", "c-cpf", "c-tkf", "mean"] {
        let m = experiments::mean_test_rmse(&rows, method);
        ctx.say(&format!("{method:6} mean test rmse {m:.6}"))?;
        metrics.insert(format!("{method}_mean_test_rmse"), m);
    }
    ctx.finish(cmd, a.seed, vec![], Some(&a.out), vec!["metrics.csv".into()], metrics, true)
}

fn side_info(ctx: &mut Ctx, cmd: &Command, a: &SideInfoArgs) -> Result<Report> {
    let cfg = experiments::SideInfoConfig {
        synth: a.synth.config(a.seed)?,
        target_level: a.target_level,
        side_levels: a.side_levels.clone(),
        seeds: seeds(a.seed, a.trials),
        model: a.model.config(a.seed)?,
    };
    let rows = experiments::side_info(&cfg)?;
    experiments::write_metrics(create(&a.out.join("metrics.csv"))?, &rows)?;
    let mut metrics = row_metrics(&rows);
    let means = experiments::level_means(&rows);
    for (level, m) in &means {
        ctx.say(&format!("side level {level}: mean test rmse {m:.6}"))?;
        metrics.insert(format!("side_{level}_mean_test_rmse"), *m);
    }
    ctx.say(&format!("inversions: {}", experiments::inversions(&means)))?;
    ctx.finish(cmd, a.seed, vec![], Some(&a.out), vec!["metrics.csv".into()], metrics, true)
}

fn sweep(ctx: &mut Ctx, cmd: &Command, a: &SweepArgs) -> Result<Report> {
    let cfg = experiments::SweepConfig {
        synth: a.synth.config(a.seed)?,
        levels: a.levels.clone(),
        heldout: a.heldout,
        seeds: seeds(a.seed, a.trials),
        model: a.model.config(a.seed)?,
    };
    let (rows, grid) = experiments::sweep(&cfg)?;
    experiments::write_metrics(create(&a.out.join("metrics.csv"))?, &rows)?;
    let mut w = csv::Writer::from_writer(create(&a.out.join("grid.csv"))?);
    for cell in &grid {
        w.serialize(cell)?;
    }
    w.flush().map_err(Error::io(a.out.join("grid.csv")))?;
    for (level, m) in experiments::level_means(&rows) {
        ctx.say(&format!("level {level}: mean test rmse {m:.6}"))?;
    }
    let outputs = vec!["metrics.csv".into(), "grid.csv".into()];
    ctx.finish(cmd, a.seed, vec![], Some(&a.out), outputs, row_metrics(&rows), true)
}

fn inductive(ctx: &mut Ctx, cmd: &Command, a: &InductiveArgs) -> Result<Report> {
    let cfg = experiments::InductiveConfig {
        train: a.synth.config(a.seed)?,
        test_counts: three(&a.test_entities, "test-entities")?,
        test_seed: a.seed + 1,
        model: a.model.config(a.seed)?,
    };
    let (model, r) = experiments::inductive(&cfg)?;
    let schema = cfg.train.schema()?;
    save_model(&a.out.join("model"), &model, &schema)?;
    ctx.say(&format!("transductive test rmse {:.6}", r.transductive_rmse))?;
    ctx.say(&format!("inductive test rmse {:.6}", r.inductive_rmse))?;
    ctx.say(&format!("constant-mean baseline {:.6}", r.baseline_rmse))?;
    let metrics = BTreeMap::from([
        ("transductive_rmse".to_string(), r.transductive_rmse),
        ("inductive_rmse".to_string(), r.inductive_rmse),
        ("baseline_rmse".to_string(), r.baseline_rmse),
    ]);
    ctx.finish(cmd, a.seed, vec![], Some(&a.out), vec!["model".into()], metrics, true)
}

/// Replaces the value of `--out` (or appends it) in a recorded argument list.
fn with_out(argv: &[String], out: &Path) -> Vec<String> {
    let out = out.display().to_string();
    let mut args = Vec::with_capacity(argv.len() + 2);
    let mut it = argv.iter();
    let mut replaced = false;
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            args.extend(["--out".to_string(), out.clone()]);
            replaced = true;
        } else if a.starts_with("--out=") {
            args.push(format!("--out={out}"));
            replaced = true;
        } else {
            args.push(a.clone());
        }
    }
    if !replaced {
        args.extend(["--out".to_string(), out]);
    }
    args
}

fn replay(ctx: &mut Ctx, a: &ReplayArgs) -> Result<Report> {
    let original = RunManifest::load(&a.manifest)?;
    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.manifest.parent().unwrap_or(Path::new(".")).join("replay"),
    };
    let argv = with_out(&original.argv, &out);
    let cli = Cli::try_parse_from(std::iter::once("eerl".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| Error::Format(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Format("cannot replay a replay".into()));
    }
    let report = execute(&cli.command, argv, ctx.out)?;
    let again = report.manifest.expect("every command records a manifest");
    let mismatches = original.metric_mismatches(&again);
    if mismatches.is_empty() {
        ctx.say(&format!("replay of `{}` reproduced {} metrics exactly", original.command, original.metrics.len()))?;
    } else {
        ctx.say(&format!("replay of `{}` differs in: {}", original.command, mismatches.join(", ")))?;
    }
    Ok(Report { passed: report.passed && mismatches.is_empty(), manifest: Some(again) })
}

/// Runs a parsed command; `argv` excludes the program name.
pub fn execute(command: &Command, argv: Vec<String>, out: &mut dyn Write) -> Result<Report> {
    let mut ctx = Ctx { out, argv, start: Instant::now() };
    match command {
        Command::SchemaCheck(a) => schema_check(&mut ctx, command, a),
        Command::Pattern(a) => cmd_pattern(&mut ctx, command, a),
        Command::CheckEquivariance(a) => check_equivariance(&mut ctx, command, a),
        Command::Gen(a) => gen(&mut ctx, command, a),
        Command::TrainEern(a) => train_eern(&mut ctx, command, a),
        Command::TrainCmtf(a) => train_cmtf(&mut ctx, command, a),
        Command::Eval(a) => eval(&mut ctx, command, a),
        Command::Sweep(a) => sweep(&mut ctx, command, a),
        Command::SideInfo(a) => side_info(&mut ctx, command, a),
        Command::Table1(a) => table1(&mut ctx, command, a),
        Command::Inductive(a) => inductive(&mut ctx, command, a),
        Command::Replay(a) => replay(&mut ctx, a),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = if code == EXIT_OK { write!(out, "{}", e.render()) } else { write!(err, "{}", e.render()) };
            return code;
        }
    };
    match execute(&cli.command, args.into_iter().skip(1).collect(), out) {
        Ok(r) if r.passed => EXIT_OK,
        Ok(_) => EXIT_CHECK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Core(eerl_core::Error::Diverged { .. }) => EXIT_DIVERGED,
                _ => EXIT_CHECK,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_flag_is_replaced_or_appended() {
        let argv: Vec<String> = ["gen", "--out", "a", "--seed", "1"].map(String::from).to_vec();
        assert_eq!(with_out(&argv, Path::new("b")), ["gen", "--out", "b", "--seed", "1"]);
        let argv: Vec<String> = ["gen", "--out=a"].map(String::from).to_vec();
        assert_eq!(with_out(&argv, Path::new("b")), ["gen", "--out=b"]);
        let argv: Vec<String> = ["schema-check", "--schema", "s"].map(String::from).to_vec();
        assert_eq!(with_out(&argv, Path::new("b")), ["schema-check", "--schema", "s", "--out", "b"]);
    }

    #[test]
    fn three_values() {
        assert_eq!(three(&[2], "x").unwrap(), [2, 2, 2]);
        assert_eq!(three(&[1, 2, 3], "x").unwrap(), [1, 2, 3]);
        assert!(three(&[1, 2], "x").is_err());
    }
}
