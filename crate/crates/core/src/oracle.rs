//! Brute-force ground truth on small schemas.
//!
//! Everything here is `O(N²)` in the vectorized size and guarded by
//! [`MAX_ORACLE_SIZE`]; the pooled layer in [`crate::layer`] is the path used
//! for training.

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::{Matrix, PermMatrix};
use crate::relstore::{ravel, strides, unravel, DenseInstance, DenseTensor, Mask, RelInstance, SparseRelTensor};
use crate::rng::{permutation, StreamRng};
use crate::schema::Schema;
use crate::tying::{BiasSpec, BlockSpec, TiedWeights};
use crate::{Error, Result};

/// Largest vectorized size the dense paths accept.
pub const MAX_ORACLE_SIZE: usize = 4096;

fn guard(schema: &Schema) -> Result<usize> {
    let n = schema.total_size();
    if n > MAX_ORACLE_SIZE {
        return Err(Error::SizeGuard { size: n, limit: MAX_ORACLE_SIZE });
    }
    Ok(n)
}

/// One permutation per entity; entity `d` instance `n` moves to `perms[d][n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LegalPerm {
    perms: Vec<PermMatrix>,
}

impl LegalPerm {
    pub fn new(schema: &Schema, maps: Vec<Vec<usize>>) -> Result<Self> {
        if maps.len() != schema.num_entities() {
            return Err(Error::Permutation(alloc::format!(
                "{} entity permutations for {} entities",
                maps.len(),
                schema.num_entities()
            )));
        }
        let perms = maps.into_iter().map(PermMatrix::new).collect::<Result<Vec<_>>>()?;
        for (p, e) in perms.iter().zip(schema.entities()) {
            if p.len() != e.count {
                return Err(Error::Permutation(alloc::format!(
                    "entity `{}` has {} instances, permutation has {}",
                    e.name,
                    e.count,
                    p.len()
                )));
            }
        }
        Ok(LegalPerm { perms })
    }

    pub fn identity(schema: &Schema) -> Self {
        LegalPerm { perms: schema.entities().iter().map(|e| PermMatrix::identity(e.count)).collect() }
    }

    pub fn random(schema: &Schema, rng: &mut StreamRng) -> Self {
        LegalPerm {
            perms: schema
                .entities()
                .iter()
                .map(|e| PermMatrix::new(permutation(rng, e.count)).unwrap())
                .collect(),
        }
    }

    pub fn entity(&self, d: usize) -> &PermMatrix {
        &self.perms[d]
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &LegalPerm) -> LegalPerm {
        LegalPerm { perms: self.perms.iter().zip(&other.perms).map(|(a, b)| a.compose(b)).collect() }
    }

    pub fn inverse(&self) -> LegalPerm {
        LegalPerm { perms: self.perms.iter().map(PermMatrix::inverse).collect() }
    }

    /// Image of a 0-based index tuple of relation `i`.
    pub fn map_tuple(&self, schema: &Schema, i: usize, tuple: &[usize]) -> Vec<usize> {
        schema.relations()[i]
            .members
            .iter()
            .zip(tuple)
            .map(|(&d, &v)| self.perms[d.index()].map()[v])
            .collect()
    }

    /// Recovers the per-entity permutations of a permutation of `vec(X)`, or
    /// `None` when it is not in the legal group.
    pub fn from_flat(schema: &Schema, g: &PermMatrix) -> Option<LegalPerm> {
        if g.len() != schema.total_size() {
            return None;
        }
        let offsets = schema.offsets();
        let mut maps: Vec<Vec<Option<usize>>> =
            schema.entities().iter().map(|e| vec![None; e.count]).collect();
        for (i, rel) in schema.relations().iter().enumerate() {
            let shape = schema.shape(i).ok()?;
            let size: usize = shape.iter().product();
            for local in 0..size {
                let target = g.map()[offsets[i] + local];
                if target < offsets[i] || target >= offsets[i] + size {
                    return None;
                }
                let from = unravel(&shape, local);
                let to = unravel(&shape, target - offsets[i]);
                for ((&d, &a), &b) in rel.members.iter().zip(&from).zip(&to) {
                    let slot = &mut maps[d.index()][a];
                    match slot {
                        Some(prev) if *prev != b => return None,
                        _ => *slot = Some(b),
                    }
                }
            }
        }
        // Entities that index no relation are unconstrained; take the identity.
        let maps: Vec<Vec<usize>> = maps
            .into_iter()
            .map(|m| m.iter().enumerate().map(|(k, v)| v.unwrap_or(k)).collect())
            .collect();
        let p = LegalPerm::new(schema, maps).ok()?;
        (perm_matrix(&p, schema).ok()? == *g).then_some(p)
    }
}

/// `G = ⊕_R ⊗_{d∈R} G^d` in the vectorization order.
pub fn perm_matrix(p: &LegalPerm, schema: &Schema) -> Result<PermMatrix> {
    guard(schema)?;
    let mut out = PermMatrix::identity(0);
    for rel in schema.relations() {
        let mut block = PermMatrix::identity(1);
        for &d in &rel.members {
            block = block.kron(&p.perms[d.index()]);
        }
        out = out.direct_sum(&block);
    }
    Ok(out)
}

fn permute_tensor(p: &LegalPerm, schema: &Schema, i: usize, t: &DenseTensor, m: &Mask) -> (DenseTensor, Mask) {
    let k = t.channels;
    let mut out = DenseTensor::zeros(t.shape.clone(), k);
    let mut mask = Mask::empty(m.len());
    for src in 0..t.positions() {
        let idx = unravel(&t.shape, src);
        let dst = ravel(&t.shape, &p.map_tuple(schema, i, &idx));
        out.data[dst * k..(dst + 1) * k].copy_from_slice(&t.data[src * k..(src + 1) * k]);
        mask.set(dst, m.get(src));
    }
    (out, mask)
}

/// Permutes every tensor axis of entity `d` by `g^d`; masks move with the data.
pub fn apply_perm_dense(p: &LegalPerm, schema: &Schema, x: &DenseInstance) -> DenseInstance {
    let (tensors, masks) = x
        .tensors
        .iter()
        .zip(&x.masks)
        .enumerate()
        .map(|(i, (t, m))| permute_tensor(p, schema, i, t, m))
        .unzip();
    DenseInstance { tensors, masks }
}

/// Re-indexes the observed tuples of every relation.
pub fn apply_perm(p: &LegalPerm, x: &RelInstance) -> Result<RelInstance> {
    let tensors = x
        .tensors
        .iter()
        .map(|t| {
            SparseRelTensor::from_entries(
                t.relation,
                t.shape.clone(),
                t.channels,
                t.entries().map(|(idx, v)| (p.map_tuple(&x.schema, t.relation, &idx), v.to_vec())),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    RelInstance::new(x.schema.clone(), tensors)
}

/// Global class id of every entry of `W`: block classes are numbered
/// consecutively in block order `(0,0), (0,1), …`.
#[derive(Debug, Clone)]
pub struct ClassPattern {
    pub size: usize,
    /// Row-major `size × size` class ids.
    pub ids: Vec<usize>,
    /// Class count of every block, row-major over `(i, j)`.
    pub block_classes: Vec<usize>,
}

impl ClassPattern {
    pub fn total_classes(&self) -> usize {
        self.block_classes.iter().sum()
    }
}

/// Visits every entry `(row, col)` of block `(i, j)` with its class ordinal.
fn for_each_block_entry(schema: &Schema, spec: &BlockSpec, mut f: impl FnMut(usize, usize, usize)) {
    let (si, sj) = (schema.shape(spec.i).unwrap(), schema.shape(spec.j).unwrap());
    let (ni, nj): (usize, usize) = (si.iter().product(), sj.iter().product());
    let cols: Vec<Vec<usize>> = (0..nj).map(|c| unravel(&sj, c)).collect();
    for r in 0..ni {
        let a = unravel(&si, r);
        for (c, b) in cols.iter().enumerate() {
            f(r, c, spec.class_of(&a, b));
        }
    }
}

pub fn class_pattern(schema: &Schema) -> Result<ClassPattern> {
    let n = guard(schema)?;
    let offsets = schema.offsets();
    let r = schema.num_relations();
    let mut ids = vec![0; n * n];
    let mut block_classes = Vec::with_capacity(r * r);
    let mut base = 0;
    for i in 0..r {
        for j in 0..r {
            let spec = BlockSpec::new(schema, i, j)?;
            for_each_block_entry(schema, &spec, |row, col, class| {
                ids[(offsets[i] + row) * n + offsets[j] + col] = base + class;
            });
            block_classes.push(spec.class_count());
            base += spec.class_count();
        }
    }
    Ok(ClassPattern { size: n, ids, block_classes })
}

/// Dense `N × N` matrix of channel pair `(k_in, k_out)`, merges applied.
pub fn materialize_channel(schema: &Schema, w: &TiedWeights, k_in: usize, k_out: usize) -> Result<Matrix> {
    let n = guard(schema)?;
    w.check_schema(schema)?;
    let offsets = schema.offsets();
    let width = w.k_in() * w.k_out();
    let mut m = Matrix::zeros(n, n);
    for i in 0..schema.num_relations() {
        for j in 0..schema.num_relations() {
            let spec = BlockSpec::new(schema, i, j)?;
            let params = w.effective_block(&spec);
            for_each_block_entry(schema, &spec, |row, col, class| {
                m[(offsets[i] + row, offsets[j] + col)] = params[class * width + k_in * w.k_out() + k_out];
            });
        }
    }
    Ok(m)
}

/// The single-channel layer matrix `W`.
pub fn materialize_w(schema: &Schema, w: &TiedWeights) -> Result<Matrix> {
    if w.k_in() != 1 || w.k_out() != 1 {
        return Err(Error::Shape("materialize_w needs single-channel weights".into()));
    }
    materialize_channel(schema, w, 0, 0)
}

/// `vec(B)` for output channel `k_out`.
pub fn materialize_bias(schema: &Schema, w: &TiedWeights, k_out: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(schema.total_size());
    for i in 0..schema.num_relations() {
        let spec = BiasSpec::new(schema, i)?;
        let shape = schema.shape(i)?;
        let b = w.bias(i);
        for flat in 0..shape.iter().product() {
            out.push(b[spec.class_of(&unravel(&shape, flat)) * w.k_out() + k_out]);
        }
    }
    Ok(out)
}

/// Largest entry of `|W G − G W|`, computed by index lookup (exact).
pub fn commutation_defect(w: &Matrix, g: &PermMatrix) -> f64 {
    assert_eq!(w.rows, g.len());
    assert_eq!(w.cols, g.len());
    // (W G)[a, c] = W[a, g(c)];  (G W)[r, b] = W[g⁻¹(r), b].
    let inv = g.inverse();
    let mut worst: f64 = 0.0;
    for a in 0..w.rows {
        for c in 0..w.cols {
            let wg = w[(a, g.map()[c])];
            let gw = w[(inv.map()[a], c)];
            worst = worst.max((wg - gw).abs());
        }
    }
    worst
}

pub fn commutes(w: &Matrix, g: &PermMatrix) -> bool {
    commutation_defect(w, g) == 0.0
}

/// Block built by `W_k = W ⊗ 1 + V ⊗ I` over distinct entities of sizes
/// `sizes`. `params` holds `2^|sizes|` values: the first half builds `W`, the
/// second half `V`, recursively.
pub fn recursive_block(sizes: &[usize], params: &[f64]) -> Result<Matrix> {
    if params.len() != 1 << sizes.len() {
        return Err(Error::Shape(alloc::format!(
            "{} entities need {} parameters, got {}",
            sizes.len(),
            1usize << sizes.len(),
            params.len()
        )));
    }
    let Some((&last, rest)) = sizes.split_last() else {
        return Ok(Matrix::scalar(params[0]));
    };
    let half = params.len() / 2;
    let w = recursive_block(rest, &params[..half])?;
    let v = recursive_block(rest, &params[half..])?;
    Ok(w.kron(&Matrix::ones(last)).add(&v.kron(&Matrix::identity(last))))
}

/// Checked variant taking entity ids: rejects a repeated entity.
pub fn recursive_block_for(schema: &Schema, entities: &[crate::EntityId], params: &[f64]) -> Result<Matrix> {
    for (k, d) in entities.iter().enumerate() {
        if entities[..k].contains(d) {
            return Err(Error::RepeatedEntity(alloc::format!("entity {d}")));
        }
    }
    let sizes: Vec<usize> = entities.iter().map(|&d| schema.count(d)).collect();
    recursive_block(&sizes, params)
}

/// Strides of a relation tensor, re-exported for callers building indices.
pub fn tensor_strides(schema: &Schema, i: usize) -> Result<Vec<usize>> {
    Ok(strides(&schema.shape(i)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::example2;
    use crate::relstore::{unvectorize, vectorize, DenseVec};
    use crate::rng::{stream, uniform_vec};
    use alloc::collections::{BTreeMap, BTreeSet};
    use rand::Rng;

    fn random_weights(schema: &Schema, rng: &mut StreamRng) -> TiedWeights {
        let mut w = TiedWeights::zeros(schema, 1, 1).unwrap();
        for v in w.values_mut() {
            *v = uniform_vec(rng, 1, -1.0, 1.0)[0];
        }
        w
    }

    #[test]
    fn example_matrix_has_nine_blocks() {
        let s = example2();
        let mut rng = stream(0, "t");
        let w = random_weights(&s, &mut rng);
        let m = materialize_w(&s, &w).unwrap();
        assert_eq!((m.rows, m.cols), (51, 51));
        let pattern = class_pattern(&s).unwrap();
        assert_eq!(pattern.block_classes, vec![4, 5, 2, 5, 15, 2, 2, 2, 4]);
        // Distinct values in block (1,2), rows 0..20, cols 20..36.
        let mut distinct = BTreeSet::new();
        for r in 0..20 {
            for c in 20..36 {
                distinct.insert(m[(r, c)].to_bits());
            }
        }
        assert_eq!(distinct.len(), 5);
        let zero = TiedWeights::zeros(&s, 1, 1).unwrap();
        assert!(materialize_w(&s, &zero).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_and_course_swap() {
        let s = example2();
        assert_eq!(perm_matrix(&LegalPerm::identity(&s), &s).unwrap(), PermMatrix::identity(51));
        let swap = LegalPerm::new(&s, vec![(0..5).collect(), vec![1, 0, 2, 3], (0..3).collect()]).unwrap();
        let g = perm_matrix(&swap, &s).unwrap();
        let moved: Vec<usize> = (0..51).filter(|&k| g.map()[k] != k).collect();
        assert!(!moved.is_empty());
        assert!(moved.iter().all(|&k| k < 36), "student-prof block must not move");
    }

    #[test]
    fn perm_matrix_is_homomorphism() {
        let s = example2();
        let mut rng = stream(1, "t");
        for _ in 0..20 {
            let p = LegalPerm::random(&s, &mut rng);
            let q = LegalPerm::random(&s, &mut rng);
            let pq = perm_matrix(&p.compose(&q), &s).unwrap();
            let prod = perm_matrix(&p, &s).unwrap().compose(&perm_matrix(&q, &s).unwrap());
            assert_eq!(pq, prod);
            assert_eq!(perm_matrix(&p.inverse(), &s).unwrap(), perm_matrix(&p, &s).unwrap().inverse());
            assert_eq!(LegalPerm::from_flat(&s, &perm_matrix(&p, &s).unwrap()), Some(p));
        }
    }

    #[test]
    fn apply_perm_matches_matrix() {
        let s = example2();
        let mut rng = stream(2, "t");
        for _ in 0..10 {
            let values = uniform_vec(&mut rng, 51 * 2, -1.0, 1.0);
            let x = unvectorize(&s, &DenseVec { values: values.clone(), channels: 2, segments: vec![] }).unwrap();
            let p = LegalPerm::random(&s, &mut rng);
            let lhs = vectorize(&s, &apply_perm_dense(&p, &s, &x)).unwrap().values;
            let g = perm_matrix(&p, &s).unwrap();
            for k in 0..2 {
                let chan: Vec<f64> = values.iter().skip(k).step_by(2).copied().collect();
                let moved = g.apply(&chan);
                let got: Vec<f64> = lhs.iter().skip(k).step_by(2).copied().collect();
                assert_eq!(got, moved);
            }
        }
    }

    #[test]
    fn sparse_apply_perm() {
        let s = example2();
        let mut rng = stream(3, "t");
        let x = RelInstance::new(
            s.clone(),
            vec![
                SparseRelTensor::from_entries(0, vec![5, 4], 1, [(vec![4, 3], vec![93.0]), (vec![0, 1], vec![2.0])]).unwrap(),
                SparseRelTensor::from_entries(1, vec![4, 4], 1, [(vec![2, 2], vec![1.0])]).unwrap(),
                SparseRelTensor::empty(2, vec![5, 3], 1),
            ],
        )
        .unwrap();
        assert_eq!(apply_perm(&LegalPerm::identity(&s), &x).unwrap(), x);
        let p = LegalPerm::random(&s, &mut rng);
        let y = apply_perm(&p, &x).unwrap();
        assert_eq!(y.to_dense(), apply_perm_dense(&p, &s, &x.to_dense()));
        // An involution applied twice is the identity.
        let inv = LegalPerm::new(&s, vec![vec![1, 0, 2, 4, 3], vec![3, 2, 1, 0], vec![0, 2, 1]]).unwrap();
        assert_eq!(apply_perm(&inv, &apply_perm(&inv, &x).unwrap()).unwrap(), x);
    }

    #[test]
    fn tied_w_commutes_with_legal_perms() {
        let s = example2();
        let mut rng = stream(4, "t");
        let w = materialize_w(&s, &random_weights(&s, &mut rng)).unwrap();
        for _ in 0..25 {
            let g = perm_matrix(&LegalPerm::random(&s, &mut rng), &s).unwrap();
            assert!(commutes(&w, &g));
            assert_eq!(commutation_defect(&w, &g), w.matmul(&g.to_matrix()).max_abs_diff(&g.to_matrix().matmul(&w)));
        }
        assert!(commutes(&Matrix::identity(51), &PermMatrix::new(permutation(&mut rng, 51)).unwrap()));
    }

    #[test]
    fn illegal_transposition_breaks_commutation() {
        let s = example2();
        let mut rng = stream(5, "t");
        let w = materialize_w(&s, &random_weights(&s, &mut rng)).unwrap();
        // Swap prereq entries (0,0) and (0,1): a diagonal and an off-diagonal course pair.
        let mut map: Vec<usize> = (0..51).collect();
        map.swap(20, 21);
        let g = PermMatrix::new(map).unwrap();
        assert!(LegalPerm::from_flat(&s, &g).is_none());
        assert!(!commutes(&w, &g));
    }

    #[test]
    fn bias_is_invariant_exactly_under_legal_perms() {
        let s = example2();
        let mut rng = stream(6, "t");
        let w = random_weights(&s, &mut rng);
        let b = materialize_bias(&s, &w, 0).unwrap();
        let prereq: BTreeSet<u64> = b[20..36].iter().map(|v| v.to_bits()).collect();
        assert_eq!(prereq.len(), 2);
        for _ in 0..10 {
            let g = perm_matrix(&LegalPerm::random(&s, &mut rng), &s).unwrap();
            assert_eq!(g.apply(&b), b);
        }
    }

    #[test]
    fn recursive_block_base_cases() {
        assert_eq!(recursive_block(&[], &[2.5]).unwrap(), Matrix::scalar(2.5));
        let m = recursive_block(&[3], &[2.0, 5.0]).unwrap();
        let expected = Matrix::ones(3).kron(&Matrix::scalar(2.0)).add(&Matrix::identity(3).kron(&Matrix::scalar(5.0)));
        assert_eq!(m, expected);
        assert_eq!(m[(0, 0)], 7.0);
        assert_eq!(m[(0, 1)], 2.0);
        let s = Schema::builder().entity("a", 2).build().unwrap();
        assert!(recursive_block_for(&s, &[crate::EntityId(1), crate::EntityId(1)], &[0.0; 4]).is_err());
    }

    #[test]
    fn recursive_block_matches_tying_pattern() {
        let mut rng = stream(7, "t");
        let s = Schema::builder().entity("a", 3).entity("b", 2).relation("r", &["a", "b"]).build().unwrap();
        let params: Vec<f64> = (0..4).map(|k| f64::from(1u32 << k)).collect();
        let m = recursive_block(&[3, 2], &params).unwrap();
        let spec = BlockSpec::new(&s, 0, 0).unwrap();
        let mut value_to_class = BTreeMap::new();
        let mut class_to_value = BTreeMap::new();
        for_each_block_entry(&s, &spec, |r, c, class| {
            let v = m[(r, c)].to_bits();
            assert_eq!(*value_to_class.entry(v).or_insert(class), class);
            assert_eq!(*class_to_value.entry(class).or_insert(v), v);
        });
        assert_eq!(value_to_class.len(), 4);
        let _ = rng.random::<u8>();
    }
}
