//! Relational data: sparse coordinate tensors, dense tensors with observation
//! masks, and the vectorization contract.
//!
//! Flattening is row-major over a relation's member order (last member varies
//! fastest) with channels innermost. Relation segments are concatenated in
//! schema order. Indices are 0-based here; the text formats convert from the
//! 1-based external convention.

use alloc::vec;
use alloc::vec::Vec;

use crate::schema::Schema;
use crate::{Error, Result};

/// Row-major strides of `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        out[a] = out[a + 1] * shape[a + 1];
    }
    out
}

pub fn ravel(shape: &[usize], index: &[usize]) -> usize {
    index.iter().zip(shape).fold(0, |acc, (&v, &n)| acc * n + v)
}

pub fn unravel(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    for a in (0..shape.len()).rev() {
        out[a] = flat % shape[a];
        flat /= shape[a];
    }
    out
}

/// Which positions of a relation tensor are observed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn full(len: usize) -> Self {
        Mask(vec![true; len])
    }

    pub fn empty(len: usize) -> Self {
        Mask(vec![false; len])
    }

    pub fn from_bools(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    pub fn from_offsets(len: usize, offsets: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Mask::empty(len);
        for o in offsets {
            m.0[o] = true;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, offset: usize) -> bool {
        self.0[offset]
    }

    pub fn set(&mut self, offset: usize, value: bool) {
        self.0[offset] = value;
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// Offsets of observed positions, ascending.
    pub fn offsets(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k)
    }

    pub fn is_disjoint(&self, other: &Mask) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| !(a && b))
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask(self.0.iter().zip(&other.0).map(|(&a, &b)| a || b).collect())
    }
}

/// A dense tensor over one relation, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub shape: Vec<usize>,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: Vec<usize>, channels: usize) -> Self {
        let len = shape.iter().product::<usize>() * channels;
        DenseTensor { shape, channels, data: vec![0.0; len] }
    }

    pub fn from_data(shape: Vec<usize>, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = shape.iter().product::<usize>() * channels;
        if data.len() != expected {
            return Err(Error::Shape(alloc::format!(
                "tensor of shape {shape:?} x {channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(DenseTensor { shape, channels, data })
    }

    /// Number of positions (product of the shape).
    pub fn positions(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn at(&self, index: &[usize]) -> &[f64] {
        let o = ravel(&self.shape, index) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn at_mut(&mut self, index: &[usize]) -> &mut [f64] {
        let o = ravel(&self.shape, index) * self.channels;
        &mut self.data[o..o + self.channels]
    }
}

/// Dense view of a database: one tensor and one observation mask per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseInstance {
    pub tensors: Vec<DenseTensor>,
    pub masks: Vec<Mask>,
}

impl DenseInstance {
    pub fn zeros(schema: &Schema, channels: usize) -> Self {
        let tensors: Vec<DenseTensor> = (0..schema.num_relations())
            .map(|i| DenseTensor::zeros(schema.shape(i).unwrap(), channels))
            .collect();
        let masks = tensors.iter().map(|t| Mask::full(t.positions())).collect();
        DenseInstance { tensors, masks }
    }

    pub fn channels(&self) -> usize {
        self.tensors.first().map_or(0, |t| t.channels)
    }

    /// Checks shapes against `schema` and that all tensors share `channels`.
    pub fn check(&self, schema: &Schema, channels: usize) -> Result<()> {
        if self.tensors.len() != schema.num_relations() || self.masks.len() != self.tensors.len() {
            return Err(Error::Shape(alloc::format!(
                "instance has {} tensors, schema has {} relations",
                self.tensors.len(),
                schema.num_relations()
            )));
        }
        for (i, (t, m)) in self.tensors.iter().zip(&self.masks).enumerate() {
            let shape = schema.shape(i)?;
            if t.shape != shape {
                return Err(Error::Shape(alloc::format!(
                    "relation {i}: tensor shape {:?}, schema shape {shape:?}",
                    t.shape
                )));
            }
            if t.channels != channels {
                return Err(Error::Shape(alloc::format!(
                    "relation {i}: {} channels, expected {channels}",
                    t.channels
                )));
            }
            if m.len() != t.positions() {
                return Err(Error::Shape(alloc::format!("relation {i}: mask length mismatch")));
            }
        }
        Ok(())
    }

    /// Observed entries as a sparse instance.
    pub fn to_sparse(&self, schema: &Schema) -> Result<RelInstance> {
        let tensors = self
            .tensors
            .iter()
            .zip(&self.masks)
            .enumerate()
            .map(|(i, (t, m))| {
                let offsets: Vec<usize> = m.offsets().collect();
                let values = offsets
                    .iter()
                    .flat_map(|&o| t.data[o * t.channels..(o + 1) * t.channels].iter().copied())
                    .collect();
                SparseRelTensor { relation: i, shape: t.shape.clone(), channels: t.channels, offsets, values }
            })
            .collect();
        RelInstance::new(schema.clone(), tensors)
    }

    /// Zeroes every unobserved position.
    pub fn zero_unobserved(&mut self) {
        for (t, m) in self.tensors.iter_mut().zip(&self.masks) {
            for (p, chunk) in t.data.chunks_mut(t.channels).enumerate() {
                if !m.get(p) {
                    chunk.fill(0.0);
                }
            }
        }
    }
}

/// Observed tuples of one relation in coordinate form, sorted by flat offset.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRelTensor {
    pub relation: usize,
    pub shape: Vec<usize>,
    pub channels: usize,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRelTensor {
    pub fn empty(relation: usize, shape: Vec<usize>, channels: usize) -> Self {
        SparseRelTensor { relation, shape, channels, offsets: Vec::new(), values: Vec::new() }
    }

    /// Builds from 0-based index tuples; rejects out-of-range and duplicate tuples.
    pub fn from_entries(
        relation: usize,
        shape: Vec<usize>,
        channels: usize,
        entries: impl IntoIterator<Item = (Vec<usize>, Vec<f64>)>,
    ) -> Result<Self> {
        let mut rows: Vec<(usize, Vec<usize>, Vec<f64>)> = Vec::new();
        for (index, x) in entries {
            if index.len() != shape.len() {
                return Err(Error::Shape(alloc::format!(
                    "tuple {index:?} has arity {}, relation has {}",
                    index.len(),
                    shape.len()
                )));
            }
            for (axis, (&v, &size)) in index.iter().zip(&shape).enumerate() {
                if v >= size {
                    return Err(Error::IndexOutOfRange { axis, index: v, size });
                }
            }
            if x.len() != channels {
                return Err(Error::Shape(alloc::format!(
                    "tuple {index:?} carries {} values, expected {channels}",
                    x.len()
                )));
            }
            rows.push((ravel(&shape, &index), index, x));
        }
        rows.sort_by_key(|r| r.0);
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateTuple(w[1].1.clone()));
        }
        let offsets = rows.iter().map(|r| r.0).collect();
        let values = rows.into_iter().flat_map(|r| r.2).collect();
        Ok(SparseRelTensor { relation, shape, channels, offsets, values })
    }

    pub fn nnz(&self) -> usize {
        self.offsets.len()
    }

    /// `(index tuple, channel values)` in ascending flat order.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, &[f64])> + '_ {
        self.offsets
            .iter()
            .zip(self.values.chunks(self.channels))
            .map(|(&o, x)| (unravel(&self.shape, o), x))
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn mask(&self) -> Mask {
        Mask::from_offsets(self.shape.iter().product(), self.offsets.iter().copied())
    }

    /// Dense array with zeros at unobserved positions.
    pub fn to_dense(&self) -> DenseTensor {
        let mut t = DenseTensor::zeros(self.shape.clone(), self.channels);
        let k = self.channels;
        for (e, &o) in self.offsets.iter().enumerate() {
            t.data[o * k..(o + 1) * k].copy_from_slice(&self.values[e * k..(e + 1) * k]);
        }
        t
    }
}

/// A full database: one sparse tensor per relation, in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct RelInstance {
    pub schema: Schema,
    pub tensors: Vec<SparseRelTensor>,
}

impl RelInstance {
    pub fn new(schema: Schema, tensors: Vec<SparseRelTensor>) -> Result<Self> {
        if tensors.len() != schema.num_relations() {
            return Err(Error::Shape(alloc::format!(
                "{} tensors for {} relations",
                tensors.len(),
                schema.num_relations()
            )));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.relation != i || t.shape != schema.shape(i)? {
                return Err(Error::Shape(alloc::format!("tensor {i} does not match relation {i}")));
            }
        }
        Ok(RelInstance { schema, tensors })
    }

    pub fn to_dense(&self) -> DenseInstance {
        DenseInstance {
            tensors: self.tensors.iter().map(SparseRelTensor::to_dense).collect(),
            masks: self.tensors.iter().map(SparseRelTensor::mask).collect(),
        }
    }
}

/// One relation's slice of a [`DenseVec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub relation: usize,
    pub offset: usize,
    pub len: usize,
}

/// The vectorized database `vec(X)`, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVec {
    pub values: Vec<f64>,
    pub channels: usize,
    pub segments: Vec<Segment>,
}

impl DenseVec {
    fn layout(schema: &Schema, channels: usize) -> Vec<Segment> {
        schema
            .offsets()
            .into_iter()
            .enumerate()
            .map(|(relation, o)| Segment {
                relation,
                offset: o * channels,
                len: schema.relation_size(relation).unwrap() * channels,
            })
            .collect()
    }
}

/// Concatenates the relation tensors in schema order.
pub fn vectorize(schema: &Schema, x: &DenseInstance) -> Result<DenseVec> {
    let channels = x.channels();
    x.check(schema, channels)?;
    let values = x.tensors.iter().flat_map(|t| t.data.iter().copied()).collect();
    Ok(DenseVec { values, channels, segments: DenseVec::layout(schema, channels) })
}

/// Inverse of [`vectorize`]; every position is marked observed.
pub fn unvectorize(schema: &Schema, v: &DenseVec) -> Result<DenseInstance> {
    let expected = schema.total_size() * v.channels;
    if v.values.len() != expected {
        return Err(Error::Shape(alloc::format!(
            "vector has {} values, schema needs {expected}",
            v.values.len()
        )));
    }
    let mut tensors = Vec::with_capacity(schema.num_relations());
    for seg in DenseVec::layout(schema, v.channels) {
        tensors.push(DenseTensor::from_data(
            schema.shape(seg.relation)?,
            v.channels,
            v.values[seg.offset..seg.offset + seg.len].to_vec(),
        )?);
    }
    let masks = tensors.iter().map(|t| Mask::full(t.positions())).collect();
    Ok(DenseInstance { tensors, masks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::example2;
    use proptest::prelude::*;

    #[test]
    fn sparse_to_dense() {
        let t = SparseRelTensor::from_entries(0, vec![5, 4], 1, [(vec![4, 3], vec![93.0])]).unwrap();
        let d = t.to_dense();
        assert_eq!(d.at(&[4, 3]), &[93.0]);
        assert_eq!(d.data.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(SparseRelTensor::empty(0, vec![2, 3], 1).to_dense().data, vec![0.0; 6]);
        let full = SparseRelTensor::from_entries(
            0,
            vec![2, 2],
            1,
            [(vec![1, 1], vec![4.0]), (vec![0, 0], vec![1.0]), (vec![1, 0], vec![3.0]), (vec![0, 1], vec![2.0])],
        )
        .unwrap();
        assert_eq!(full.to_dense().data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(full.mask().count(), 4);
    }

    #[test]
    fn sparse_validation() {
        let e = SparseRelTensor::from_entries(0, vec![5, 4], 1, [(vec![5, 0], vec![1.0])]);
        assert!(matches!(e, Err(Error::IndexOutOfRange { axis: 0, .. })));
        let e = SparseRelTensor::from_entries(
            0,
            vec![5, 4],
            1,
            [(vec![1, 1], vec![1.0]), (vec![1, 1], vec![2.0])],
        );
        assert!(matches!(e, Err(Error::DuplicateTuple(_))));
    }

    #[test]
    fn row_major_layout() {
        let s = Schema::builder().entity("a", 2).relation("r", &["a", "a"]).build().unwrap();
        let x = unvectorize(&s, &DenseVec { values: vec![1.0, 2.0, 3.0, 4.0], channels: 1, segments: vec![] })
            .unwrap();
        assert_eq!(x.tensors[0].at(&[0, 1]), &[2.0]);
        assert_eq!(x.tensors[0].at(&[1, 0]), &[3.0]);
        assert_eq!(vectorize(&s, &x).unwrap().values, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn example_offsets() {
        let s = example2();
        let v = vectorize(&s, &DenseInstance::zeros(&s, 1)).unwrap();
        let offs: Vec<usize> = v.segments.iter().map(|g| g.offset).collect();
        assert_eq!(offs, vec![0, 20, 36]);
        assert_eq!(v.values.len(), 51);
        let back = unvectorize(&s, &v).unwrap();
        assert!(back.tensors.iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
        let short = DenseVec { values: vec![0.0; 50], channels: 1, segments: vec![] };
        assert!(unvectorize(&s, &short).is_err());
    }

    #[test]
    fn dense_sparse_round_trip() {
        let s = example2();
        let mut x = DenseInstance::zeros(&s, 2);
        for (k, v) in x.tensors[0].data.iter_mut().enumerate() {
            *v = k as f64;
        }
        x.masks[0].set(3, false);
        x.zero_unobserved();
        let sparse = x.to_sparse(&s).unwrap();
        assert_eq!(sparse.tensors[0].nnz(), 19);
        assert_eq!(sparse.to_dense(), x);
    }

    fn random_instance() -> impl Strategy<Value = (Schema, DenseInstance)> {
        (proptest::collection::vec(1usize..=6, 1..4), 1usize..3).prop_flat_map(|(counts, channels)| {
            let d = counts.len();
            let mut b = Schema::builder();
            for (k, &c) in counts.iter().enumerate() {
                b = b.entity(&alloc::format!("e{k}"), c);
            }
            b = b.relation("r0", &["e0"]);
            if d > 1 {
                b = b.relation("r1", &["e0", "e1"]).relation("r2", &["e1", "e1"]);
            }
            if d > 2 {
                b = b.relation("r3", &["e2", "e0", "e1"]);
            }
            let s = b.build().unwrap();
            let n = s.total_size() * channels;
            proptest::collection::vec(-100i32..100, n).prop_map(move |vals| {
                let v = DenseVec {
                    values: vals.into_iter().map(f64::from).collect(),
                    channels,
                    segments: vec![],
                };
                let x = unvectorize(&s, &v).unwrap();
                (s.clone(), x)
            })
        })
    }

    proptest! {
        #[test]
        fn vectorize_round_trips((s, x) in random_instance()) {
            let v = vectorize(&s, &x).unwrap();
            let back = unvectorize(&s, &v).unwrap();
            prop_assert_eq!(&back, &x);
            prop_assert_eq!(vectorize(&s, &back).unwrap(), v);
        }
    }
}
