//! The pooled equivariant layer.
//!
//! For repeat-free schemas the layer matrix is never formed. Output relation
//! `i` receives, for every input relation `j` and every subset `S` of the
//! shared entities, the input pooled over `S` and over the entities of `j`
//! absent from `i`, mixed across channels and broadcast back over `i`. Cost is
//! linear in the number of tensor entries.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::oracle::materialize_channel;
use crate::relstore::{strides, DenseInstance, DenseTensor, Mask};
use crate::schema::Schema;
use crate::tying::{BiasSpec, BlockSpec, TiedWeights};
use crate::{Error, Result};

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    /// `max(x, 0) + leak · min(x, 0)`.
    LeakyRelu(f64),
}

impl Activation {
    pub const DEFAULT_LEAK: f64 = 0.01;

    pub fn leaky() -> Self {
        Activation::LeakyRelu(Self::DEFAULT_LEAK)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(leak) => {
                if x > 0.0 {
                    x
                } else {
                    leak * x
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(leak) => {
                if x > 0.0 {
                    1.0
                } else {
                    leak
                }
            }
        }
    }
}

/// How observed entries are combined when pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    /// Plain sum; matches the dense layer matrix exactly.
    Sum,
    /// Mean over the observed entries of each pooled fiber, 0 when none are.
    Mean,
}

/// Flat key of every position of a tensor after dropping some axes.
///
/// `kept` lists `(axis, rank)` pairs: the rank orders the axes of the reduced
/// tensor, so two tensors keeping the same entities produce compatible keys.
fn keys_for(shape: &[usize], kept: &[(usize, usize)]) -> (Vec<u32>, usize) {
    let mut reduced_shape = vec![0; kept.len()];
    for &(axis, rank) in kept {
        reduced_shape[rank] = shape[axis];
    }
    let reduced_strides = strides(&reduced_shape);
    let cells: usize = reduced_shape.iter().product();
    let total: usize = shape.iter().product();
    let src_strides = strides(shape);
    let keys = (0..total)
        .map(|p| {
            kept.iter()
                .map(|&(axis, rank)| (p / src_strides[axis]) % shape[axis] * reduced_strides[rank])
                .sum::<usize>() as u32
        })
        .collect();
    (keys, cells)
}

fn pool_keys(data: &[f64], mask: &Mask, k: usize, keys: &[u32], cells: usize, mode: PoolMode) -> (Vec<f64>, Vec<u32>) {
    let mut out = vec![0.0; cells * k];
    let mut count = vec![0u32; cells];
    for (p, &key) in keys.iter().enumerate() {
        if !mask.get(p) {
            continue;
        }
        let key = key as usize;
        count[key] += 1;
        for (o, &v) in out[key * k..(key + 1) * k].iter_mut().zip(&data[p * k..(p + 1) * k]) {
            *o += v;
        }
    }
    if mode == PoolMode::Mean {
        for (cell, &c) in count.iter().enumerate() {
            if c > 1 {
                let inv = 1.0 / f64::from(c);
                out[cell * k..(cell + 1) * k].iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    (out, count)
}

fn kept_axes(shape_len: usize, pooled: &[usize]) -> Vec<(usize, usize)> {
    (0..shape_len).filter(|a| !pooled.contains(a)).enumerate().map(|(rank, a)| (a, rank)).collect()
}

/// Pools the observed entries of `x` over `axes`, keeping the other axes in
/// their original order. `axes = []` returns `x` with unobserved entries zeroed.
pub fn pool(x: &DenseTensor, mask: &Mask, axes: &[usize], mode: PoolMode) -> Result<DenseTensor> {
    if axes.iter().any(|&a| a >= x.shape.len()) {
        return Err(Error::Shape(alloc::format!("pool axes {axes:?} out of range for {:?}", x.shape)));
    }
    let kept = kept_axes(x.shape.len(), axes);
    let (keys, cells) = keys_for(&x.shape, &kept);
    let (data, _) = pool_keys(&x.data, mask, x.channels, &keys, cells, mode);
    let shape = kept.iter().map(|&(a, _)| x.shape[a]).collect();
    DenseTensor::from_data(shape, x.channels, data)
}

/// Replicates `y` along the `axes` of a tensor of shape `shape`; `y` holds the
/// remaining axes in order.
pub fn broadcast(y: &DenseTensor, shape: &[usize], axes: &[usize]) -> Result<DenseTensor> {
    let kept = kept_axes(shape.len(), axes);
    let expect: Vec<usize> = kept.iter().map(|&(a, _)| shape[a]).collect();
    if expect != y.shape {
        return Err(Error::Shape(alloc::format!("cannot broadcast {:?} into {shape:?}", y.shape)));
    }
    let (keys, _) = keys_for(shape, &kept);
    let k = y.channels;
    let mut data = Vec::with_capacity(keys.len() * k);
    for &key in &keys {
        data.extend_from_slice(&y.data[key as usize * k..(key as usize + 1) * k]);
    }
    DenseTensor::from_data(shape.to_vec(), k, data)
}

/// One `(i, j, S)` summand: pooled input `pool`, mixed by the pooling weight
/// of `class` in block `block`, broadcast through `cast`.
#[derive(Debug, Clone)]
struct Term {
    block: usize,
    class: usize,
    pool: usize,
    cast: usize,
}

/// A relation tensor reduced to a set of kept entities.
#[derive(Debug, Clone)]
struct Reduction {
    relation: usize,
    keys: Vec<u32>,
    cells: usize,
}

/// Precomputed pooling and broadcasting keys for one repeat-free schema.
///
/// Pooled tensors and broadcast targets are shared between all summands
/// that reduce the same relation to the same entities.
#[derive(Debug, Clone)]
pub struct PoolPlan {
    sizes: Vec<usize>,
    shapes: Vec<Vec<usize>>,
    specs: Vec<BlockSpec>,
    reductions: Vec<Reduction>,
    /// Reductions read from inputs, and written to outputs.
    pools: Vec<usize>,
    casts: Vec<usize>,
    terms: Vec<Term>,
}

impl PoolPlan {
    pub fn new(schema: &Schema) -> Result<Self> {
        if let Some(rel) = schema.relations().iter().find(|r| !r.is_repeat_free()) {
            return Err(Error::RepeatedEntity(rel.name.clone()));
        }
        let r = schema.num_relations();
        let shapes: Vec<Vec<usize>> = (0..r).map(|i| schema.shape(i)).collect::<Result<_>>()?;
        let mut reductions: Vec<Reduction> = Vec::new();
        let mut by_key: BTreeMap<(usize, Vec<u32>), usize> = BTreeMap::new();
        let mut reduction = |rel: usize, keep: Vec<u32>| -> usize {
            *by_key.entry((rel, keep.clone())).or_insert_with(|| {
                // Entities in `keep` are ascending, so ranks agree across relations.
                let members = &schema.relations()[rel].members;
                let kept: Vec<(usize, usize)> = keep
                    .iter()
                    .enumerate()
                    .map(|(rank, &d)| (members.iter().position(|m| m.0 == d).unwrap(), rank))
                    .collect();
                let (keys, cells) = keys_for(&shapes[rel], &kept);
                reductions.push(Reduction { relation: rel, keys, cells });
                reductions.len() - 1
            })
        };
        let (mut pools, mut casts, mut terms, mut specs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let slot = |list: &mut Vec<usize>, red: usize| match list.iter().position(|&x| x == red) {
            Some(k) => k,
            None => {
                list.push(red);
                list.len() - 1
            }
        };
        for i in 0..r {
            for j in 0..r {
                let spec = BlockSpec::new(schema, i, j)?;
                let shared = spec.shared().to_vec();
                for s in 0u32..1 << shared.len() {
                    let keep: Vec<u32> =
                        shared.iter().enumerate().filter(|(b, _)| s >> b & 1 == 0).map(|(_, d)| d.0).collect();
                    let src = reduction(j, keep.clone());
                    let dst = reduction(i, keep);
                    terms.push(Term {
                        block: specs.len(),
                        class: spec.subset_class(s),
                        pool: slot(&mut pools, src),
                        cast: slot(&mut casts, dst),
                    });
                }
                specs.push(spec);
            }
        }
        let sizes = shapes.iter().map(|s| s.iter().product()).collect();
        Ok(PoolPlan { sizes, shapes, specs, reductions, pools, casts, terms })
    }

    pub fn num_relations(&self) -> usize {
        self.shapes.len()
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    fn check(&self, x: &DenseInstance, w: &TiedWeights) -> Result<()> {
        let r = self.num_relations();
        if x.tensors.len() != r || x.masks.len() != r || w.num_relations() != r {
            return Err(Error::Shape("relation count mismatch".into()));
        }
        for (i, t) in x.tensors.iter().enumerate() {
            if t.shape != self.shapes[i] || x.masks[i].len() != self.sizes[i] {
                return Err(Error::Shape(alloc::format!("relation {i}: shape does not match plan")));
            }
            if t.channels != w.k_in() {
                return Err(Error::Shape(alloc::format!(
                    "relation {i}: {} input channels, weights expect {}",
                    t.channels,
                    w.k_in()
                )));
            }
        }
        for spec in &self.specs {
            if w.block_classes(spec.i, spec.j) != spec.class_count() {
                return Err(Error::Shape("weights do not match the schema's class layout".into()));
            }
        }
        Ok(())
    }

    /// Every pooled input, with observed counts per cell.
    fn pool_all(&self, x: &DenseInstance, k: usize, mode: PoolMode) -> Vec<(Vec<f64>, Vec<u32>)> {
        self.pools
            .iter()
            .map(|&r| {
                let red = &self.reductions[r];
                let j = red.relation;
                pool_keys(&x.tensors[j].data, &x.masks[j], k, &red.keys, red.cells, mode)
            })
            .collect()
    }
}

/// Result of a forward pass: activated output and cached pre-activations.
#[derive(Debug, Clone)]
pub struct Forward {
    pub out: DenseInstance,
    pub pre: Vec<Vec<f64>>,
}

/// Gradients of a layer.
#[derive(Debug, Clone)]
pub struct Backward {
    /// Same layout as [`TiedWeights::values`].
    pub weights: Vec<f64>,
    pub input: Vec<Vec<f64>>,
}

/// Runs one layer. Output masks are copied from the input.
pub fn forward(plan: &PoolPlan, x: &DenseInstance, w: &TiedWeights, act: Activation, mode: PoolMode) -> Result<Forward> {
    plan.check(x, w)?;
    let (k, kp) = (w.k_in(), w.k_out());
    let sw: Vec<Vec<f64>> = plan.specs.iter().map(|s| w.subset_weights(s)).collect();
    let pooled = plan.pool_all(x, k, mode);
    let mut acc: Vec<Vec<f64>> = plan.casts.iter().map(|&r| vec![0.0; plan.reductions[r].cells * kp]).collect();
    for t in &plan.terms {
        let m = &sw[t.block][t.class * k * kp..(t.class + 1) * k * kp];
        mix_into(&pooled[t.pool].0, m, k, kp, &mut acc[t.cast]);
    }
    let mut pre: Vec<Vec<f64>> = plan.sizes.iter().map(|&n| vec![0.0; n * kp]).collect();
    for (i, out) in pre.iter_mut().enumerate() {
        let bias = w.bias(i);
        for chunk in out.chunks_mut(kp) {
            chunk.copy_from_slice(&bias[..kp]);
        }
    }
    for (&r, a) in plan.casts.iter().zip(&acc) {
        let red = &plan.reductions[r];
        let out = &mut pre[red.relation];
        for (o, &key) in out.chunks_mut(kp).zip(&red.keys) {
            let key = key as usize;
            for (o, &v) in o.iter_mut().zip(&a[key * kp..(key + 1) * kp]) {
                *o += v;
            }
        }
    }
    let tensors = pre
        .iter()
        .zip(&plan.shapes)
        .map(|(v, s)| DenseTensor { shape: s.clone(), channels: kp, data: v.iter().map(|&z| act.apply(z)).collect() })
        .collect();
    Ok(Forward { out: DenseInstance { tensors, masks: x.masks.clone() }, pre })
}

/// `out[c] += y[c] · m` for every cell, `m` a `k × kp` row-major matrix.
fn mix_into(y: &[f64], m: &[f64], k: usize, kp: usize, out: &mut [f64]) {
    for (src, dst) in y.chunks(k).zip(out.chunks_mut(kp)) {
        for (a, &v) in src.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (o, &wv) in dst.iter_mut().zip(&m[a * kp..(a + 1) * kp]) {
                *o += v * wv;
            }
        }
    }
}

/// Exact adjoint of [`forward`]. `grad_out` holds `∂L/∂out` per relation.
pub fn backward(
    plan: &PoolPlan,
    x: &DenseInstance,
    w: &TiedWeights,
    act: Activation,
    mode: PoolMode,
    fwd: &Forward,
    grad_out: &[Vec<f64>],
) -> Result<Backward> {
    plan.check(x, w)?;
    let (k, kp) = (w.k_in(), w.k_out());
    if grad_out.len() != plan.num_relations()
        || grad_out.iter().zip(&plan.sizes).any(|(g, &n)| g.len() != n * kp)
    {
        return Err(Error::Shape("upstream gradient shape mismatch".into()));
    }
    let g_pre: Vec<Vec<f64>> = grad_out
        .iter()
        .zip(&fwd.pre)
        .map(|(g, z)| g.iter().zip(z).map(|(&g, &z)| g * act.derivative(z)).collect())
        .collect();
    let mut gw = vec![0.0; w.values().len()];
    for (i, g) in g_pre.iter().enumerate() {
        let range = w.bias_range(i);
        for chunk in g.chunks(kp) {
            for (dst, &v) in gw[range.clone()].iter_mut().zip(chunk) {
                *dst += v;
            }
        }
    }
    // Adjoint of broadcast: sum the upstream gradient into cells.
    let g_cast: Vec<Vec<f64>> = plan
        .casts
        .iter()
        .map(|&r| {
            let red = &plan.reductions[r];
            let mut g = vec![0.0; red.cells * kp];
            for (src, &key) in g_pre[red.relation].chunks(kp).zip(&red.keys) {
                let key = key as usize;
                for (o, &v) in g[key * kp..(key + 1) * kp].iter_mut().zip(src) {
                    *o += v;
                }
            }
            g
        })
        .collect();
    let sw: Vec<Vec<f64>> = plan.specs.iter().map(|s| w.subset_weights(s)).collect();
    let mut g_sw: Vec<Vec<f64>> = sw.iter().map(|v| vec![0.0; v.len()]).collect();
    let pooled = plan.pool_all(x, k, mode);
    let mut g_pool: Vec<Vec<f64>> = pooled.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
    for t in &plan.terms {
        let range = t.class * k * kp..(t.class + 1) * k * kp;
        let m = &sw[t.block][range.clone()];
        let gm = &mut g_sw[t.block][range];
        let y = &pooled[t.pool].0;
        let gp = &mut g_pool[t.pool];
        for ((yc, gc), gpc) in y.chunks(k).zip(g_cast[t.cast].chunks(kp)).zip(gp.chunks_mut(k)) {
            for a in 0..k {
                let row = &m[a * kp..(a + 1) * kp];
                let grow = &mut gm[a * kp..(a + 1) * kp];
                let mut acc = 0.0;
                for b in 0..kp {
                    grow[b] += yc[a] * gc[b];
                    acc += row[b] * gc[b];
                }
                gpc[a] += acc;
            }
        }
    }
    for (spec, g) in plan.specs.iter().zip(g_sw) {
        w.accumulate_subset_grad(spec, g, &mut gw);
    }
    // Adjoint of pooling: scatter back to observed positions.
    let mut gx: Vec<Vec<f64>> = plan.sizes.iter().map(|&n| vec![0.0; n * k]).collect();
    for ((&r, g), (_, count)) in plan.pools.iter().zip(&g_pool).zip(&pooled) {
        let red = &plan.reductions[r];
        let j = red.relation;
        for (p, (dst, &key)) in gx[j].chunks_mut(k).zip(&red.keys).enumerate() {
            if !x.masks[j].get(p) {
                continue;
            }
            let key = key as usize;
            let scale = match mode {
                PoolMode::Sum => 1.0,
                PoolMode::Mean => 1.0 / f64::from(count[key]),
            };
            for (o, &v) in dst.iter_mut().zip(&g[key * k..(key + 1) * k]) {
                *o += scale * v;
            }
        }
    }
    Ok(Backward { weights: gw, input: gx })
}

/// `σ(W vec(X) + vec(B))` through the dense matrices; unobserved inputs read
/// as zero. Accepts multiset relations.
pub fn forward_dense_oracle(schema: &Schema, x: &DenseInstance, w: &TiedWeights, act: Activation) -> Result<DenseInstance> {
    let (k, kp) = (w.k_in(), w.k_out());
    x.check(schema, k)?;
    w.check_schema(schema)?;
    let n = schema.total_size();
    let mut input = vec![0.0; n * k];
    let mut pos = 0;
    for (t, m) in x.tensors.iter().zip(&x.masks) {
        for p in 0..t.positions() {
            if m.get(p) {
                input[(pos + p) * k..(pos + p + 1) * k].copy_from_slice(&t.data[p * k..(p + 1) * k]);
            }
        }
        pos += t.positions();
    }
    let mut out = vec![0.0; n * kp];
    for a in 0..k {
        let chan: Vec<f64> = input.iter().skip(a).step_by(k).copied().collect();
        for b in 0..kp {
            let y = materialize_channel(schema, w, a, b)?.matvec(&chan);
            for (p, v) in y.into_iter().enumerate() {
                out[p * kp + b] += v;
            }
        }
    }
    let mut tensors = Vec::with_capacity(schema.num_relations());
    let mut pos = 0;
    for (i, t) in x.tensors.iter().enumerate() {
        let spec = BiasSpec::new(schema, i)?;
        let bias = w.bias(i);
        let mut data = Vec::with_capacity(t.positions() * kp);
        for p in 0..t.positions() {
            let class = spec.class_of(&crate::relstore::unravel(&t.shape, p));
            for b in 0..kp {
                data.push(act.apply(out[(pos + p) * kp + b] + bias[class * kp + b]));
            }
        }
        pos += t.positions();
        tensors.push(DenseTensor::from_data(t.shape.clone(), kp, data)?);
    }
    Ok(DenseInstance { tensors, masks: x.masks.clone() })
}
