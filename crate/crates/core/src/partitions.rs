//! Set partitions as restricted growth strings (RGS).
//!
//! A partition of `L` positions is stored as `a[0..L]` with `a[0] = 0` and
//! `a[t] <= 1 + max(a[..t])`; positions sharing a code share a block. The
//! canonical order is lexicographic over these strings.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Largest `n` for which [`bell`] is defined.
pub const MAX_BELL: usize = 20;
/// Largest set size [`enumerate_partitions`] will list.
pub const MAX_ENUMERATE: usize = 12;

/// A set partition in restricted-growth form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartitionCode(Vec<u8>);

impl PartitionCode {
    /// Validates `rgs` as a restricted growth string.
    pub fn new(rgs: Vec<u8>) -> Result<Self> {
        let mut max: Option<u8> = None;
        for &a in &rgs {
            let limit = max.map_or(0, |m| m + 1);
            if a > limit {
                return Err(Error::InvalidRgs(rgs));
            }
            max = Some(max.map_or(a, |m| m.max(a)));
        }
        Ok(PartitionCode(rgs))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_blocks(&self) -> usize {
        self.0.iter().max().map_or(0, |&m| m as usize + 1)
    }
}

/// Number of partitions of an `n`-element set, via the Bell triangle.
pub fn bell(n: usize) -> Result<u64> {
    if n > MAX_BELL {
        return Err(Error::BellOverflow(n));
    }
    let mut row = vec![1u64];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for &x in &row {
            let last = *next.last().unwrap();
            next.push(last + x);
        }
        row = next;
    }
    Ok(row[0])
}

/// All partitions of an `n`-element set in lexicographic RGS order.
pub fn enumerate_partitions(n: usize) -> Result<Vec<PartitionCode>> {
    if !(1..=MAX_ENUMERATE).contains(&n) {
        return Err(Error::PartitionSize(n));
    }
    let mut out = Vec::with_capacity(bell(n)? as usize);
    let mut cur = vec![0u8; n];
    // Knuth's Algorithm H style increment over (code, running max).
    let mut maxes = vec![0u8; n];
    loop {
        out.push(PartitionCode(cur.clone()));
        let mut t = n - 1;
        loop {
            if t == 0 {
                return Ok(out);
            }
            if cur[t] <= maxes[t - 1] {
                cur[t] += 1;
                maxes[t] = maxes[t - 1].max(cur[t]);
                for u in t + 1..n {
                    cur[u] = 0;
                    maxes[u] = maxes[t];
                }
                break;
            }
            t -= 1;
        }
    }
}

/// Equality pattern of a tuple: equal values get equal codes, numbered by
/// first occurrence.
pub fn partition_of<T: PartialEq>(tuple: &[T]) -> PartitionCode {
    let mut firsts: Vec<&T> = Vec::new();
    let codes = tuple
        .iter()
        .map(|v| match firsts.iter().position(|f| *f == v) {
            Some(k) => k as u8,
            None => {
                firsts.push(v);
                (firsts.len() - 1) as u8
            }
        })
        .collect();
    PartitionCode(codes)
}

/// Number of ways to complete an RGS with `remaining` positions left when the
/// largest code used so far is `max`.
fn completions(remaining: usize, max: usize) -> u64 {
    // completions(r, m) = (m + 1) * completions(r - 1, m) + completions(r - 1, m + 1)
    let width = max + remaining + 2;
    let mut table = vec![1u64; width];
    for _ in 0..remaining {
        let next: Vec<u64> =
            (0..width - 1).map(|m| (m as u64 + 1) * table[m] + table[m + 1]).collect();
        table = next;
        table.push(0);
    }
    table[max]
}

/// Ordinal of `p` within [`enumerate_partitions`]`(p.len())`.
pub fn partition_index(p: &PartitionCode) -> usize {
    let a = p.as_slice();
    let len = a.len();
    let mut rank = 0u64;
    let mut max: usize = 0;
    for (t, &v) in a.iter().enumerate().skip(1) {
        let v = v as usize;
        for smaller in 0..v {
            rank += completions(len - t - 1, max.max(smaller));
        }
        max = max.max(v);
    }
    rank as usize
}

/// Ordinal of a raw RGS slice; callers guarantee validity.
pub(crate) fn rgs_index(a: &[u8]) -> usize {
    partition_index(&PartitionCode(a.to_vec()))
}

/// Precomputed RGS ranks for a fixed length, keyed by the mixed-radix value of
/// the string.
#[derive(Debug, Clone)]
pub(crate) struct RankTable {
    len: usize,
    ranks: Vec<usize>,
}

impl RankTable {
    pub(crate) fn new(len: usize) -> Self {
        let size = len.pow(len as u32).max(1);
        let mut ranks = vec![usize::MAX; size];
        if len > 0 {
            for (k, code) in enumerate_partitions(len).unwrap().into_iter().enumerate() {
                ranks[Self::key(len, code.as_slice())] = k;
            }
        } else {
            ranks[0] = 0;
        }
        RankTable { len, ranks }
    }

    fn key(len: usize, a: &[u8]) -> usize {
        a.iter().fold(0, |acc, &x| acc * len + x as usize)
    }

    pub(crate) fn rank(&self, a: &[u8]) -> usize {
        self.ranks[Self::key(self.len, a)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pairwise-equality oracle, relabelled canonically.
    fn partition_brute(t: &[i64]) -> Vec<u8> {
        let n = t.len();
        let mut label = vec![u8::MAX; n];
        let mut next = 0u8;
        for a in 0..n {
            if label[a] != u8::MAX {
                continue;
            }
            for b in a..n {
                if t[a] == t[b] {
                    label[b] = next;
                }
            }
            next += 1;
        }
        label
    }

    /// Bell numbers from the recurrence B(n+1) = sum C(n,k) B(k).
    fn bell_binomial(n: usize) -> u64 {
        let mut b = vec![1u64];
        for m in 0..n {
            let mut c = 1u64;
            let mut s = 0u64;
            for (k, bk) in b.iter().enumerate() {
                s += c * bk;
                c = c * (m - k) as u64 / (k + 1) as u64;
            }
            b.push(s);
        }
        b[n]
    }

    #[test]
    fn bell_values() {
        assert_eq!(bell(0).unwrap(), 1);
        assert_eq!(bell(1).unwrap(), 1);
        assert_eq!(bell(2).unwrap(), 2);
        assert_eq!(bell(3).unwrap(), 5);
        assert_eq!(bell(4).unwrap(), 15);
        for n in 0..=MAX_BELL {
            assert_eq!(bell(n).unwrap(), bell_binomial(n), "n = {n}");
        }
        assert_eq!(bell(21), Err(Error::BellOverflow(21)));
    }

    #[test]
    fn enumeration_small() {
        let two: Vec<Vec<u8>> =
            enumerate_partitions(2).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(two, vec![vec![0, 0], vec![0, 1]]);
        assert_eq!(enumerate_partitions(1).unwrap()[0].as_slice(), &[0]);
        assert_eq!(enumerate_partitions(3).unwrap().len(), 5);
        assert!(enumerate_partitions(0).is_err());
        assert!(enumerate_partitions(13).is_err());
    }

    #[test]
    fn enumeration_counts_and_order() {
        for n in 1..=10 {
            let all = enumerate_partitions(n).unwrap();
            assert_eq!(all.len() as u64, bell(n).unwrap());
            assert!(all.windows(2).all(|w| w[0] < w[1]), "not strictly lexicographic");
            assert!(all[0].as_slice().iter().all(|&a| a == 0));
            for p in &all {
                PartitionCode::new(p.0.clone()).unwrap();
            }
        }
    }

    #[test]
    fn partition_of_examples() {
        assert_eq!(partition_of(&[4, 4, 5]).as_slice(), &[0, 0, 1]);
        assert_eq!(partition_of(&[3, 3, 2]), partition_of(&[4, 4, 5]));
        assert_eq!(partition_of(&[7]).as_slice(), &[0]);
        let expected = partition_brute(&[1, 2, 1, 3]);
        assert_eq!(expected, vec![0, 1, 0, 2]);
        assert_eq!(partition_of(&[1, 2, 1, 3]).as_slice(), expected.as_slice());
    }

    #[test]
    fn index_is_bijective() {
        assert_eq!(partition_index(&PartitionCode::new(vec![0, 0]).unwrap()), 0);
        assert_eq!(partition_index(&PartitionCode::new(vec![0, 1]).unwrap()), 1);
        for n in 1..=8 {
            for (k, p) in enumerate_partitions(n).unwrap().iter().enumerate() {
                assert_eq!(partition_index(p), k);
            }
        }
        let four = enumerate_partitions(4).unwrap();
        let mut seen: Vec<usize> = four.iter().map(partition_index).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn rank_table_matches_index() {
        for n in 0..=5 {
            let table = RankTable::new(n);
            if n == 0 {
                assert_eq!(table.rank(&[]), 0);
                continue;
            }
            for (k, p) in enumerate_partitions(n).unwrap().iter().enumerate() {
                assert_eq!(table.rank(p.as_slice()), k);
            }
        }
    }

    #[test]
    fn invalid_rgs() {
        assert!(PartitionCode::new(vec![1]).is_err());
        assert!(PartitionCode::new(vec![0, 2]).is_err());
        assert!(PartitionCode::new(vec![0, 1, 0, 2]).is_ok());
    }

    proptest! {
        #[test]
        fn pattern_invariant_under_injective_relabel(
            t in proptest::collection::vec(0i64..6, 1..9),
            shift in -50i64..50,
            scale in 1i64..7,
        ) {
            let relabeled: Vec<i64> = t.iter().map(|&v| scale * v + shift).collect();
            prop_assert_eq!(partition_of(&t), partition_of(&relabeled));
            let (fast, brute) = (partition_of(&t), partition_brute(&t));
            prop_assert_eq!(fast.as_slice(), brute.as_slice());
        }
    }
}
