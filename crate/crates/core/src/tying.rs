//! Parameter tying: which entries of the layer matrix share a free parameter.
//!
//! Entry `(n_i, n_j)` of block `(i, j)` is identified by the equality pattern
//! of the concatenated tuple `n_i ++ n_j`, restricted to the positions of each
//! entity separately. Per-entity pattern ordinals are combined in a mixed
//! radix over entities in ascending id order, with the highest id varying
//! fastest.

use alloc::vec;
use alloc::vec::Vec;

use crate::partitions::{bell, rgs_index, RankTable};
use crate::schema::{EntityId, Schema};
use crate::{Error, Result};

const MAX_TABLE_ARITY: usize = 6;

#[derive(Debug, Clone)]
struct EntityGroup {
    entity: EntityId,
    positions: Vec<usize>,
    stride: usize,
    table: Option<RankTable>,
}

/// Class structure of an index tuple over a fixed entity layout.
#[derive(Debug, Clone)]
struct PatternSpec {
    groups: Vec<EntityGroup>,
    class_count: usize,
}

impl PatternSpec {
    fn new(members: &[EntityId]) -> Result<Self> {
        let mut ids: Vec<EntityId> = members.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let mut groups: Vec<EntityGroup> = ids
            .into_iter()
            .map(|entity| {
                let positions: Vec<usize> = members
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m == entity)
                    .map(|(p, _)| p)
                    .collect();
                let table = (positions.len() <= MAX_TABLE_ARITY)
                    .then(|| RankTable::new(positions.len()));
                EntityGroup { entity, positions, stride: 0, table }
            })
            .collect();
        let mut stride = 1usize;
        for g in groups.iter_mut().rev() {
            g.stride = stride;
            stride *= bell(g.positions.len())? as usize;
        }
        Ok(PatternSpec { groups, class_count: stride })
    }

    fn class_of(&self, tuple: &[usize]) -> usize {
        let mut rgs = [0u8; 32];
        let mut firsts = [0usize; 32];
        let mut class = 0;
        for g in &self.groups {
            let len = g.positions.len();
            let mut used = 0usize;
            for (k, &p) in g.positions.iter().enumerate() {
                let v = tuple[p];
                let code = match firsts[..used].iter().position(|&f| f == v) {
                    Some(c) => c,
                    None => {
                        firsts[used] = v;
                        used += 1;
                        used - 1
                    }
                };
                rgs[k] = code as u8;
            }
            let ordinal = match &g.table {
                Some(t) => t.rank(&rgs[..len]),
                None => rgs_index(&rgs[..len]),
            };
            class += ordinal * g.stride;
        }
        class
    }
}

/// Tying layout of block `(i, j)` of the layer matrix.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub i: usize,
    pub j: usize,
    split: usize,
    spec: PatternSpec,
    /// Entities of `R_i ∩ R_j` in ascending order (repeat-free blocks only).
    shared: Vec<EntityId>,
    repeat_free: bool,
}

impl BlockSpec {
    pub fn new(schema: &Schema, i: usize, j: usize) -> Result<Self> {
        let (ri, rj) = (schema.relation(i)?, schema.relation(j)?);
        let concat: Vec<EntityId> = ri.members.iter().chain(&rj.members).copied().collect();
        let spec = PatternSpec::new(&concat)?;
        let repeat_free = ri.is_repeat_free() && rj.is_repeat_free();
        let shared = ri.distinct().into_iter().filter(|d| rj.members.contains(d)).collect();
        Ok(BlockSpec { i, j, split: ri.arity(), spec, shared, repeat_free })
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count
    }

    /// Per-entity arities `κ_i(d) + κ_j(d)` in ascending entity order.
    pub fn arities(&self) -> Vec<(EntityId, usize)> {
        self.spec.groups.iter().map(|g| (g.entity, g.positions.len())).collect()
    }

    /// Class ordinal of entry `(n_i, n_j)`; tuples are 0-based.
    pub fn class_of(&self, n_i: &[usize], n_j: &[usize]) -> usize {
        debug_assert_eq!(n_i.len(), self.split);
        let mut tuple = [0usize; 64];
        tuple[..n_i.len()].copy_from_slice(n_i);
        tuple[n_i.len()..n_i.len() + n_j.len()].copy_from_slice(n_j);
        self.spec.class_of(&tuple[..n_i.len() + n_j.len()])
    }

    pub fn is_repeat_free(&self) -> bool {
        self.repeat_free
    }

    /// Entities shared by both relations, ascending.
    pub fn shared(&self) -> &[EntityId] {
        &self.shared
    }

    /// Class whose pattern has the shared entities in `distinct` (a bitmask
    /// over [`Self::shared`]) unequal and all other shared entities equal.
    ///
    /// For repeat-free blocks this is a bijection between classes and subsets
    /// of the shared entities.
    pub fn subset_class(&self, distinct: u32) -> usize {
        debug_assert!(self.repeat_free);
        self.shared
            .iter()
            .enumerate()
            .filter(|(k, _)| distinct >> k & 1 == 1)
            .map(|(_, d)| {
                // Pattern [0, 1] has ordinal 1 among partitions of a pair.
                self.spec.groups.iter().find(|g| g.entity == *d).unwrap().stride
            })
            .sum()
    }
}

pub fn num_free_params(schema: &Schema, i: usize, j: usize) -> Result<usize> {
    Ok(BlockSpec::new(schema, i, j)?.class_count())
}

pub fn class_of(schema: &Schema, i: usize, n_i: &[usize], j: usize, n_j: &[usize]) -> Result<usize> {
    check_tuple(schema, i, n_i)?;
    check_tuple(schema, j, n_j)?;
    Ok(BlockSpec::new(schema, i, j)?.class_of(n_i, n_j))
}

fn check_tuple(schema: &Schema, i: usize, n: &[usize]) -> Result<()> {
    let shape = schema.shape(i)?;
    if shape.len() != n.len() {
        return Err(Error::Shape(alloc::format!(
            "relation {i} has arity {}, tuple has {} entries",
            shape.len(),
            n.len()
        )));
    }
    for (axis, (&v, &size)) in n.iter().zip(&shape).enumerate() {
        if v >= size {
            return Err(Error::IndexOutOfRange { axis, index: v, size });
        }
    }
    Ok(())
}

/// Tying layout of the bias tensor of relation `i`.
#[derive(Debug, Clone)]
pub struct BiasSpec {
    pub i: usize,
    spec: PatternSpec,
}

impl BiasSpec {
    pub fn new(schema: &Schema, i: usize) -> Result<Self> {
        Ok(BiasSpec { i, spec: PatternSpec::new(&schema.relation(i)?.members)? })
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count
    }

    pub fn class_of(&self, n: &[usize]) -> usize {
        self.spec.class_of(n)
    }
}

pub fn bias_num_params(schema: &Schema, i: usize) -> Result<usize> {
    Ok(BiasSpec::new(schema, i)?.class_count())
}

pub fn bias_class_of(schema: &Schema, i: usize, n: &[usize]) -> Result<usize> {
    check_tuple(schema, i, n)?;
    Ok(BiasSpec::new(schema, i)?.class_of(n))
}

/// Class pairs of block `(i, i)` that a one-to-many annotation on relation `i`
/// aliases: pooling over all of `R_i` and over `R_i` minus the "one" entity.
///
/// Ordinals are subset classes (see [`BlockSpec::subset_class`]).
pub fn one_to_many_merge(schema: &Schema, i: usize) -> Result<Vec<(usize, usize)>> {
    let rel = schema.relation(i)?;
    let one = rel.one.ok_or_else(|| Error::NoAnnotation(rel.name.clone()))?;
    if !rel.is_repeat_free() {
        return Err(Error::RepeatedEntity(rel.name.clone()));
    }
    let spec = BlockSpec::new(schema, i, i)?;
    let full = (1u32 << spec.shared().len()) - 1;
    let bit = spec.shared().iter().position(|&d| d == one).unwrap();
    Ok(vec![(spec.subset_class(full), spec.subset_class(full & !(1 << bit)))])
}

/// Converts class parameters of a repeat-free block into pooling weights.
///
/// Entry values satisfy `θ(F) = Σ_{S ⊇ F} w(S)` where `F` is the set of shared
/// entities whose indices differ and `w(S)` multiplies the pool over `S`; this
/// inverts that relation. `theta` holds `class_count` rows of `width` values.
pub fn class_to_subset(spec: &BlockSpec, theta: &[f64], width: usize) -> Vec<f64> {
    let k = spec.shared().len();
    let mut w = vec![0.0; theta.len()];
    for s in 0u32..1 << k {
        let out = spec.subset_class(s) * width;
        for t in supersets(s, k) {
            let sign = if (t & !s).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            let src = spec.subset_class(t) * width;
            for c in 0..width {
                w[out + c] += sign * theta[src + c];
            }
        }
    }
    w
}

/// Inverse of [`class_to_subset`].
pub fn subset_to_class(spec: &BlockSpec, w: &[f64], width: usize) -> Vec<f64> {
    let k = spec.shared().len();
    let mut theta = vec![0.0; w.len()];
    for f in 0u32..1 << k {
        let out = spec.subset_class(f) * width;
        for s in supersets(f, k) {
            let src = spec.subset_class(s) * width;
            for c in 0..width {
                theta[out + c] += w[src + c];
            }
        }
    }
    theta
}

/// Pulls a gradient with respect to pooling weights back to class parameters
/// (the transpose of [`class_to_subset`]).
pub fn subset_grad_to_class(spec: &BlockSpec, grad_w: &[f64], width: usize) -> Vec<f64> {
    let k = spec.shared().len();
    let mut g = vec![0.0; grad_w.len()];
    for t in 0u32..1 << k {
        let out = spec.subset_class(t) * width;
        for s in subsets(t) {
            let sign = if (t & !s).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            let src = spec.subset_class(s) * width;
            for c in 0..width {
                g[out + c] += sign * grad_w[src + c];
            }
        }
    }
    g
}

fn supersets(s: u32, k: usize) -> impl Iterator<Item = u32> {
    let full = (1u32 << k) - 1;
    subsets(full & !s).map(move |extra| s | extra)
}

fn subsets(t: u32) -> impl Iterator<Item = u32> {
    // Walks every submask of t, t itself first and 0 last.
    let mut next = Some(t);
    core::iter::from_fn(move || {
        let cur = next?;
        next = if cur == 0 { None } else { Some((cur - 1) & t) };
        Some(cur)
    })
}

/// Aliased pooling weights inside one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Merge {
    pub block: usize,
    /// Subset class whose pooling weight is kept.
    pub keep: usize,
    /// Subset class whose pooling weight is replaced by `keep`'s.
    pub alias: usize,
}

/// Free parameters of one layer: per block `(i, j)` a `class_count × K × K′`
/// array, per relation `i` a `bias_count × K′` array, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct TiedWeights {
    num_relations: usize,
    k_in: usize,
    k_out: usize,
    block_offsets: Vec<usize>,
    bias_offsets: Vec<usize>,
    values: Vec<f64>,
    merges: Vec<Merge>,
}

impl TiedWeights {
    pub fn zeros(schema: &Schema, k_in: usize, k_out: usize) -> Result<Self> {
        if k_in == 0 || k_out == 0 {
            return Err(Error::Config("channel counts must be at least 1".into()));
        }
        let r = schema.num_relations();
        let mut offset = 0;
        let mut block_offsets = Vec::with_capacity(r * r + 1);
        for i in 0..r {
            for j in 0..r {
                block_offsets.push(offset);
                offset += num_free_params(schema, i, j)? * k_in * k_out;
            }
        }
        block_offsets.push(offset);
        let mut bias_offsets = Vec::with_capacity(r + 1);
        for i in 0..r {
            bias_offsets.push(offset);
            offset += bias_num_params(schema, i)? * k_out;
        }
        bias_offsets.push(offset);
        Ok(TiedWeights {
            num_relations: r,
            k_in,
            k_out,
            block_offsets,
            bias_offsets,
            values: vec![0.0; offset],
            merges: Vec::new(),
        })
    }

    pub fn k_in(&self) -> usize {
        self.k_in
    }

    pub fn k_out(&self) -> usize {
        self.k_out
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    fn block_index(&self, i: usize, j: usize) -> usize {
        i * self.num_relations + j
    }

    /// Number of classes of block `(i, j)`.
    pub fn block_classes(&self, i: usize, j: usize) -> usize {
        let b = self.block_index(i, j);
        (self.block_offsets[b + 1] - self.block_offsets[b]) / (self.k_in * self.k_out)
    }

    pub fn bias_classes(&self, i: usize) -> usize {
        (self.bias_offsets[i + 1] - self.bias_offsets[i]) / self.k_out
    }

    /// Parameters of block `(i, j)`, laid out `[class][k_in][k_out]`.
    pub fn block(&self, i: usize, j: usize) -> &[f64] {
        let b = self.block_index(i, j);
        &self.values[self.block_offsets[b]..self.block_offsets[b + 1]]
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let b = self.block_index(i, j);
        let (lo, hi) = (self.block_offsets[b], self.block_offsets[b + 1]);
        &mut self.values[lo..hi]
    }

    /// Bias parameters of relation `i`, laid out `[class][k_out]`.
    pub fn bias(&self, i: usize) -> &[f64] {
        &self.values[self.bias_offsets[i]..self.bias_offsets[i + 1]]
    }

    pub fn bias_mut(&mut self, i: usize) -> &mut [f64] {
        let (lo, hi) = (self.bias_offsets[i], self.bias_offsets[i + 1]);
        &mut self.values[lo..hi]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Range of [`Self::values`] holding block `(i, j)`.
    pub fn block_range(&self, i: usize, j: usize) -> core::ops::Range<usize> {
        let b = self.block_index(i, j);
        self.block_offsets[b]..self.block_offsets[b + 1]
    }

    pub fn bias_range(&self, i: usize) -> core::ops::Range<usize> {
        self.bias_offsets[i]..self.bias_offsets[i + 1]
    }

    /// Checks that the class layout matches `schema` (instance counts may differ).
    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        let fresh = TiedWeights::zeros(schema, self.k_in, self.k_out)?;
        if fresh.block_offsets != self.block_offsets || fresh.bias_offsets != self.bias_offsets {
            return Err(Error::Shape("weights do not match the schema's class layout".into()));
        }
        Ok(())
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Applies every one-to-many annotation of `schema`. Idempotent.
    pub fn apply_one_to_many(&mut self, schema: &Schema) -> Result<()> {
        for (i, rel) in schema.relations().iter().enumerate() {
            if rel.one.is_none() {
                continue;
            }
            let block = self.block_index(i, i);
            for (keep, alias) in one_to_many_merge(schema, i)? {
                let m = Merge { block, keep, alias };
                if !self.merges.contains(&m) {
                    self.merges.push(m);
                }
            }
        }
        Ok(())
    }

    /// Number of free parameters after merges.
    pub fn free_param_count(&self) -> usize {
        self.values.len() - self.merges.len() * self.k_in * self.k_out
    }

    /// Pooling weights of repeat-free block `(i, j)` with merges applied.
    pub fn subset_weights(&self, spec: &BlockSpec) -> Vec<f64> {
        let width = self.k_in * self.k_out;
        let mut w = class_to_subset(spec, self.block(spec.i, spec.j), width);
        let b = self.block_index(spec.i, spec.j);
        for m in self.merges.iter().filter(|m| m.block == b) {
            for c in 0..width {
                w[m.alias * width + c] = w[m.keep * width + c];
            }
        }
        w
    }

    /// Class parameters of block `(i, j)` as actually used by the layer
    /// (identical to [`Self::block`] unless merges apply).
    pub fn effective_block(&self, spec: &BlockSpec) -> Vec<f64> {
        let b = self.block_index(spec.i, spec.j);
        if !self.merges.iter().any(|m| m.block == b) {
            return self.block(spec.i, spec.j).to_vec();
        }
        subset_to_class(spec, &self.subset_weights(spec), self.k_in * self.k_out)
    }

    /// Routes a gradient over pooling weights of block `(i, j)` through the
    /// merges and into the class parameters, accumulating into `grad`.
    pub fn accumulate_subset_grad(&self, spec: &BlockSpec, mut grad_w: Vec<f64>, grad: &mut [f64]) {
        let width = self.k_in * self.k_out;
        let b = self.block_index(spec.i, spec.j);
        for m in self.merges.iter().filter(|m| m.block == b) {
            for c in 0..width {
                grad_w[m.keep * width + c] += grad_w[m.alias * width + c];
                grad_w[m.alias * width + c] = 0.0;
            }
        }
        let g = subset_grad_to_class(spec, &grad_w, width);
        let range = self.block_range(spec.i, spec.j);
        for (dst, v) in grad[range].iter_mut().zip(g) {
            *dst += v;
        }
    }
}
