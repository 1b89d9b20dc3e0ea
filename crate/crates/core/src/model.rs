//! Factorized auto-encoder for missing-record prediction.
//!
//! The encoder stack maps the observed database to `h′` channels, which are
//! averaged over the observed positions of every entity instance into code
//! matrices `Z^d`. The decoder input for relation `R` places the codes of its
//! members side by side as channels (zero-padded to the widest relation), and
//! the decoder stack maps that to one output channel.

use alloc::vec;
use alloc::vec::Vec;

use crate::layer::{backward, forward, Activation, Forward, PoolMode, PoolPlan};
use crate::optim::Adam;
use crate::relstore::{strides, DenseInstance, DenseTensor, Mask};
use crate::rng::{stream, uniform_vec};
use crate::schema::Schema;
use crate::tying::{subset_to_class, BlockSpec, TiedWeights};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoderConfig {
    /// Hidden widths of the encoder, before the code layer.
    pub encoder_widths: Vec<usize>,
    pub h_code: usize,
    /// Hidden widths of the decoder, before the output layer.
    pub decoder_widths: Vec<usize>,
    pub activation: Activation,
    pub pool: PoolMode,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of the target's training entries hidden from the encoder in
    /// every epoch; when positive, only hidden entries are scored.
    pub hide: f64,
}

impl Default for AutoEncoderConfig {
    fn default() -> Self {
        AutoEncoderConfig {
            encoder_widths: vec![16, 16],
            h_code: 10,
            decoder_widths: vec![16, 16],
            activation: Activation::leaky(),
            pool: PoolMode::Mean,
            lr: 1e-3,
            epochs: 1000,
            seed: 0,
            hide: 0.0,
        }
    }
}

impl AutoEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_code == 0 || self.encoder_widths.contains(&0) || self.decoder_widths.contains(&0) {
            return Err(Error::Config("layer widths and code size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(alloc::format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.hide) {
            return Err(Error::Config(alloc::format!("hidden fraction must lie in [0, 1), got {}", self.hide)));
        }
        if let Activation::LeakyRelu(leak) = self.activation {
            if !(leak > 0.0 && leak < 1.0) {
                return Err(Error::Config(alloc::format!("leak must lie in (0, 1), got {leak}")));
            }
        }
        Ok(())
    }
}

/// Code matrices `Z^d`, each `N_d × h′` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityCodes {
    pub h: usize,
    pub codes: Vec<Vec<f64>>,
}

impl EntityCodes {
    pub fn rows(&self, d: usize) -> usize {
        self.codes[d].len() / self.h
    }

    pub fn row(&self, d: usize, n: usize) -> &[f64] {
        &self.codes[d][n * self.h..(n + 1) * self.h]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoder {
    pub config: AutoEncoderConfig,
    /// Relation whose entries are reconstructed.
    pub target: usize,
    /// Largest relation arity; fixes the decoder's input width.
    pub max_arity: usize,
    pub encoder: Vec<TiedWeights>,
    pub decoder: Vec<TiedWeights>,
}

fn channel_chain(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
    let mut out = vec![first];
    out.extend_from_slice(hidden);
    out.push(last);
    out
}

/// Uniform init in `±sqrt(6 / (K_in · terms))` on pooling weights, where
/// `terms` counts the pooled inputs feeding an output relation.
fn init_layer(schema: &Schema, k_in: usize, k_out: usize, rng: &mut crate::rng::StreamRng) -> Result<TiedWeights> {
    let mut w = TiedWeights::zeros(schema, k_in, k_out)?;
    let r = schema.num_relations();
    let width = k_in * k_out;
    for i in 0..r {
        let specs: Vec<BlockSpec> = (0..r).map(|j| BlockSpec::new(schema, i, j)).collect::<Result<_>>()?;
        let terms: usize = specs.iter().map(|s| s.class_count()).sum();
        let scale = libm::sqrt(6.0 / (k_in * terms) as f64);
        for spec in &specs {
            let sw = uniform_vec(rng, spec.class_count() * width, -scale, scale);
            let theta = if spec.is_repeat_free() { subset_to_class(spec, &sw, width) } else { sw };
            w.block_mut(i, spec.j).copy_from_slice(&theta);
        }
    }
    w.apply_one_to_many(schema)?;
    Ok(w)
}

struct Pass {
    enc: Vec<Forward>,
    codes: EntityCodes,
    dec_in: DenseInstance,
    dec: Vec<Forward>,
}

impl AutoEncoder {
    pub fn new(schema: &Schema, config: AutoEncoderConfig, target: usize) -> Result<Self> {
        config.validate()?;
        schema.relation(target)?;
        let max_arity = schema.relations().iter().map(|r| r.arity()).max().unwrap_or(0);
        let mut rng = stream(config.seed, "init");
        let enc = channel_chain(1, &config.encoder_widths, config.h_code);
        let dec = channel_chain(max_arity * config.h_code, &config.decoder_widths, 1);
        let encoder = enc.windows(2).map(|c| init_layer(schema, c[0], c[1], &mut rng)).collect::<Result<_>>()?;
        let decoder = dec.windows(2).map(|c| init_layer(schema, c[0], c[1], &mut rng)).collect::<Result<_>>()?;
        Ok(AutoEncoder { config, target, max_arity, encoder, decoder })
    }

    pub fn layers(&self) -> impl Iterator<Item = &TiedWeights> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(TiedWeights::free_param_count).sum()
    }

    fn act(&self, layer: usize, count: usize) -> Activation {
        if layer + 1 == count {
            Activation::Identity
        } else {
            self.config.activation
        }
    }

    fn check(&self, schema: &Schema, x: &DenseInstance) -> Result<()> {
        x.check(schema, 1)?;
        let max_arity = schema.relations().iter().map(|r| r.arity()).max().unwrap_or(0);
        if max_arity != self.max_arity || self.target >= schema.num_relations() {
            return Err(Error::Shape("model does not match the schema".into()));
        }
        for w in self.layers() {
            w.check_schema(schema)?;
        }
        Ok(())
    }

    fn run(&self, schema: &Schema, plan: &PoolPlan, x: &DenseInstance) -> Result<Pass> {
        let mode = self.config.pool;
        let mut enc: Vec<Forward> = Vec::with_capacity(self.encoder.len());
        for (l, w) in self.encoder.iter().enumerate() {
            let input = enc.last().map_or(x, |f| &f.out);
            enc.push(forward(plan, input, w, self.act(l, self.encoder.len()), mode)?);
        }
        let codes = pool_codes(schema, &enc.last().unwrap().out, self.config.h_code);
        let dec_in = decoder_input(schema, &codes, self.max_arity);
        let mut dec: Vec<Forward> = Vec::with_capacity(self.decoder.len());
        for (l, w) in self.decoder.iter().enumerate() {
            let input = dec.last().map_or(&dec_in, |f| &f.out);
            dec.push(forward(plan, input, w, self.act(l, self.decoder.len()), mode)?);
        }
        Ok(Pass { enc, codes, dec_in, dec })
    }

    /// Code matrices for the observed entries of `x`.
    pub fn encode(&self, schema: &Schema, x: &DenseInstance) -> Result<EntityCodes> {
        self.check(schema, x)?;
        let plan = PoolPlan::new(schema)?;
        let mut h = x.clone();
        for (l, w) in self.encoder.iter().enumerate() {
            h = forward(&plan, &h, w, self.act(l, self.encoder.len()), self.config.pool)?.out;
        }
        Ok(pool_codes(schema, &h, self.config.h_code))
    }

    /// Reconstruction of the target relation at every position.
    pub fn decode(&self, schema: &Schema, codes: &EntityCodes) -> Result<DenseTensor> {
        let plan = PoolPlan::new(schema)?;
        let mut h = decoder_input(schema, codes, self.max_arity);
        for (l, w) in self.decoder.iter().enumerate() {
            h = forward(&plan, &h, w, self.act(l, self.decoder.len()), self.config.pool)?.out;
        }
        Ok(h.tensors.swap_remove(self.target))
    }

    pub fn predict(&self, schema: &Schema, x: &DenseInstance) -> Result<DenseTensor> {
        let codes = self.encode(schema, x)?;
        self.decode(schema, &codes)
    }

    /// RMSE of the target prediction against `truth` on `mask`.
    pub fn evaluate(&self, schema: &Schema, x: &DenseInstance, truth: &DenseTensor, mask: &Mask) -> Result<f64> {
        Ok(rmse(&self.predict(schema, x)?.data, &truth.data, mask))
    }
}

/// Root mean squared error over `mask`; 0 for an empty mask.
pub fn rmse(pred: &[f64], truth: &[f64], mask: &Mask) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for p in mask.offsets() {
        let e = pred[p] - truth[p];
        sum += e * e;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        libm::sqrt(sum / n as f64)
    }
}

fn code_counts(schema: &Schema, x: &DenseInstance) -> Vec<Vec<u32>> {
    let mut counts: Vec<Vec<u32>> = schema.entities().iter().map(|e| vec![0; e.count]).collect();
    for (rel, (t, m)) in schema.relations().iter().zip(x.tensors.iter().zip(&x.masks)) {
        let st = strides(&t.shape);
        for p in m.offsets() {
            for (a, d) in rel.members.iter().enumerate() {
                counts[d.index()][p / st[a] % t.shape[a]] += 1;
            }
        }
    }
    counts
}

fn pool_codes(schema: &Schema, x: &DenseInstance, h: usize) -> EntityCodes {
    let mut codes: Vec<Vec<f64>> = schema.entities().iter().map(|e| vec![0.0; e.count * h]).collect();
    for (rel, (t, m)) in schema.relations().iter().zip(x.tensors.iter().zip(&x.masks)) {
        let st = strides(&t.shape);
        for p in m.offsets() {
            let v = &t.data[p * h..(p + 1) * h];
            for (a, d) in rel.members.iter().enumerate() {
                let n = p / st[a] % t.shape[a];
                for (z, &v) in codes[d.index()][n * h..(n + 1) * h].iter_mut().zip(v) {
                    *z += v;
                }
            }
        }
    }
    for (z, c) in codes.iter_mut().zip(code_counts(schema, x)) {
        for (n, &c) in c.iter().enumerate() {
            if c > 1 {
                let inv = 1.0 / f64::from(c);
                z[n * h..(n + 1) * h].iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    EntityCodes { h, codes }
}

fn decoder_input(schema: &Schema, codes: &EntityCodes, max_arity: usize) -> DenseInstance {
    let h = codes.h;
    let k = max_arity * h;
    let mut tensors = Vec::with_capacity(schema.num_relations());
    for (i, rel) in schema.relations().iter().enumerate() {
        let shape = schema.shape(i).unwrap();
        let st = strides(&shape);
        let mut t = DenseTensor::zeros(shape.clone(), k);
        for (p, chunk) in t.data.chunks_mut(k).enumerate() {
            for (a, d) in rel.members.iter().enumerate() {
                chunk[a * h..(a + 1) * h].copy_from_slice(codes.row(d.index(), p / st[a] % shape[a]));
            }
        }
        tensors.push(t);
    }
    let masks = tensors.iter().map(|t| Mask::full(t.positions())).collect();
    DenseInstance { tensors, masks }
}

/// Loss and validation curves of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    /// Training MSE at the start of every epoch.
    pub train_loss: Vec<f64>,
    /// Validation RMSE at the start of every epoch, when requested.
    pub val_rmse: Vec<f64>,
}

/// Validation data: ground truth of the target relation and the positions to score.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub truth: &'a DenseTensor,
    pub mask: &'a Mask,
}

/// Full-batch training of the target reconstruction.
///
/// `x` carries the observed database (unobserved entries are ignored); its
/// target mask is the training set.
pub fn train(
    config: AutoEncoderConfig,
    schema: &Schema,
    x: &DenseInstance,
    target: usize,
    val: Option<Validation<'_>>,
) -> Result<(AutoEncoder, History)> {
    let mut model = AutoEncoder::new(schema, config, target)?;
    model.check(schema, x)?;
    if let Some(v) = val {
        if !v.mask.is_disjoint(&x.masks[target]) {
            return Err(Error::Config("validation and training masks overlap".into()));
        }
    }
    let plan = PoolPlan::new(schema)?;
    let train_mask = &x.masks[target];
    let n_train = train_mask.count();
    if n_train == 0 {
        return Err(Error::Config("no training entries in the target relation".into()));
    }
    let mut opt: Vec<Adam> = model.layers().map(|w| Adam::new(w.values().len(), model.config.lr)).collect();
    let mut history = History::default();
    let (n_enc, n_dec) = (model.encoder.len(), model.decoder.len());
    let mode = model.config.pool;
    let hide = model.config.hide;
    let mut hide_rng = stream(model.config.seed, "hide");
    let mut visible = x.clone();
    for epoch in 0..model.config.epochs {
        // Entries scored this epoch; with hiding they are removed from the input.
        let scored = if hide > 0.0 {
            let scored = hidden_entries(train_mask, hide, &mut hide_rng);
            visible.masks[target] = Mask::from_bools(
                train_mask.as_slice().iter().zip(scored.as_slice()).map(|(&t, &s)| t && !s).collect(),
            );
            visible.tensors[target].data.copy_from_slice(&x.tensors[target].data);
            visible.zero_unobserved();
            scored
        } else {
            train_mask.clone()
        };
        let input = if hide > 0.0 { &visible } else { x };
        let n_scored = scored.count().max(1) as f64;
        let pass = model.run(schema, &plan, input)?;
        let pred = &pass.dec.last().unwrap().out.tensors[target].data;
        let truth = &x.tensors[target].data;
        let mut loss = 0.0;
        let mut g_pred = vec![0.0; pred.len()];
        for p in scored.offsets() {
            let e = pred[p] - truth[p];
            loss += e * e;
            g_pred[p] = 2.0 * e / n_scored;
        }
        loss /= n_scored;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.train_loss.push(loss);
        if let Some(v) = val {
            history.val_rmse.push(rmse(pred, &v.truth.data, v.mask));
        }

        let mut upstream: Vec<Vec<f64>> = pass.dec[n_dec - 1].pre.iter().map(|v| vec![0.0; v.len()]).collect();
        upstream[target] = g_pred;
        let mut dec_grads = Vec::with_capacity(n_dec);
        for l in (0..n_dec).rev() {
            let input = if l == 0 { &pass.dec_in } else { &pass.dec[l - 1].out };
            let b = backward(&plan, input, &model.decoder[l], model.act(l, n_dec), mode, &pass.dec[l], &upstream)?;
            dec_grads.push(b.weights);
            upstream = b.input;
        }
        upstream = code_grad_to_encoder(schema, &pass, &upstream, model.max_arity);
        let mut grads = Vec::with_capacity(n_enc + n_dec);
        for l in (0..n_enc).rev() {
            let input = if l == 0 { input } else { &pass.enc[l - 1].out };
            let b = backward(&plan, input, &model.encoder[l], model.act(l, n_enc), mode, &pass.enc[l], &upstream)?;
            grads.push(b.weights);
            upstream = b.input;
        }
        grads.reverse();
        dec_grads.reverse();
        grads.extend(dec_grads);
        let layers = model.encoder.iter_mut().chain(model.decoder.iter_mut());
        for ((w, g), o) in layers.zip(&grads).zip(&mut opt) {
            o.step(w.values_mut(), g);
        }
    }
    Ok((model, history))
}

/// Random subset of `mask` holding `round(fraction · |mask|)` entries, at least one.
fn hidden_entries(mask: &Mask, fraction: f64, rng: &mut crate::rng::StreamRng) -> Mask {
    let offsets: Vec<usize> = mask.offsets().collect();
    let take = (libm::round(fraction * offsets.len() as f64) as usize).clamp(1, offsets.len());
    let order = crate::rng::permutation(rng, offsets.len());
    Mask::from_offsets(mask.len(), order[..take].iter().map(|&k| offsets[k]))
}

/// Pulls the decoder-input gradient back through the broadcast of the codes
/// and the code pooling onto the encoder output.
fn code_grad_to_encoder(schema: &Schema, pass: &Pass, g_in: &[Vec<f64>], max_arity: usize) -> Vec<Vec<f64>> {
    let h = pass.codes.h;
    let k = max_arity * h;
    let mut g_codes: Vec<Vec<f64>> = pass.codes.codes.iter().map(|z| vec![0.0; z.len()]).collect();
    for (i, rel) in schema.relations().iter().enumerate() {
        let shape = &pass.dec_in.tensors[i].shape;
        let st = strides(shape);
        for (p, chunk) in g_in[i].chunks(k).enumerate() {
            for (a, d) in rel.members.iter().enumerate() {
                let n = p / st[a] % shape[a];
                for (g, &v) in g_codes[d.index()][n * h..(n + 1) * h].iter_mut().zip(&chunk[a * h..(a + 1) * h]) {
                    *g += v;
                }
            }
        }
    }
    let enc_out = &pass.enc.last().unwrap().out;
    let counts = code_counts(schema, enc_out);
    let mut out = Vec::with_capacity(schema.num_relations());
    for (rel, (t, m)) in schema.relations().iter().zip(enc_out.tensors.iter().zip(&enc_out.masks)) {
        let st = strides(&t.shape);
        let mut g = vec![0.0; t.data.len()];
        for p in m.offsets() {
            for (a, d) in rel.members.iter().enumerate() {
                let n = p / st[a] % t.shape[a];
                let scale = 1.0 / f64::from(counts[d.index()][n]);
                for (o, &v) in g[p * h..(p + 1) * h].iter_mut().zip(&g_codes[d.index()][n * h..(n + 1) * h]) {
                    *o += scale * v;
                }
            }
        }
        out.push(g);
    }
    out
}
