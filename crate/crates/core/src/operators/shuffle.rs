use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ShapeError};
use crate::linalg::{DenseMatrix, Scalar};

/// Zero-parameter group mixing: views a length-`m` vector as a `[g, m/g]`
/// matrix and transposes it, so element `b*(m/g) + k` moves to `k*g + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShuffleMix {
    len: usize,
    groups: usize,
}

impl ShuffleMix {
    pub fn new(len: usize, groups: usize) -> Result<Self, ConfigError> {
        if len == 0 {
            return Err(ConfigError::Zero { field: "m" });
        }
        if groups == 0 {
            return Err(ConfigError::Zero { field: "g" });
        }
        if !len.is_multiple_of(groups) {
            return Err(ConfigError::divides("g", "m"));
        }
        Ok(ShuffleMix { len, groups })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Destination of source index `i`.
    #[inline]
    pub fn target(&self, i: usize) -> usize {
        let per = self.len / self.groups;
        (i % per) * self.groups + i / per
    }

    /// The shuffle that undoes this one (`g' = m/g`).
    pub fn inverse(&self) -> ShuffleMix {
        ShuffleMix {
            len: self.len,
            groups: self.len / self.groups,
        }
    }

    pub fn apply<T: Scalar>(&self, v: &[T]) -> Result<Vec<T>, ShapeError> {
        ShapeError::check("shuffle", self.len, v.len())?;
        let mut out = vec![T::zero(); self.len];
        self.apply_into(v, &mut out);
        Ok(out)
    }

    pub fn apply_inverse<T: Scalar>(&self, v: &[T]) -> Result<Vec<T>, ShapeError> {
        self.inverse().apply(v)
    }

    /// Transpose of the `[g, m/g]` view.
    pub(crate) fn apply_into<T: Copy>(&self, v: &[T], out: &mut [T]) {
        let g = self.groups;
        let per = self.len / g;
        for b in 0..g {
            let src = &v[b * per..(b + 1) * per];
            for (k, &val) in src.iter().enumerate() {
                out[k * g + b] = val;
            }
        }
    }

    /// The permutation as a 0/1 matrix `P` with `(P v)[target(i)] = v[i]`.
    pub fn materialize<T: Scalar>(&self) -> DenseMatrix<T> {
        let mut p = DenseMatrix::zeros(self.len, self.len);
        for i in 0..self.len {
            p.set(self.target(i), i, T::one());
        }
        p
    }
}

pub fn apply_shuffle<T: Scalar>(s: &ShuffleMix, v: &[T]) -> Result<Vec<T>, ShapeError> {
    s.apply(v)
}

pub fn apply_shuffle_inverse<T: Scalar>(s: &ShuffleMix, v: &[T]) -> Result<Vec<T>, ShapeError> {
    s.apply_inverse(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interleaves_two_groups() {
        // (a0,a1,a2,b0,b1,b2) -> (a0,b0,a1,b1,a2,b2)
        let s = ShuffleMix::new(6, 2).unwrap();
        let v = [10.0, 11.0, 12.0, 20.0, 21.0, 22.0];
        let out = s.apply(&v).unwrap();
        assert_eq!(out, vec![10.0, 20.0, 11.0, 21.0, 12.0, 22.0]);
        assert_eq!(s.apply_inverse(&out).unwrap(), v.to_vec());
    }

    #[test]
    fn trivial_group_counts_are_identity() {
        let v: Vec<f64> = (0..8).map(f64::from).collect();
        assert_eq!(ShuffleMix::new(8, 1).unwrap().apply(&v).unwrap(), v);
        assert_eq!(ShuffleMix::new(8, 8).unwrap().apply(&v).unwrap(), v);
        assert_eq!(ShuffleMix::new(8, 1).unwrap().apply_inverse(&v).unwrap(), v);
    }

    #[test]
    fn round_trip_len_12_three_groups() {
        let s = ShuffleMix::new(12, 3).unwrap();
        let v: Vec<f64> = (0..12).map(|k| (k as f64 * 1.3).sin()).collect();
        assert_eq!(s.apply_inverse(&s.apply(&v).unwrap()).unwrap(), v);
    }

    #[test]
    fn materialized_rows_have_single_one() {
        let p: DenseMatrix<f64> = ShuffleMix::new(12, 4).unwrap().materialize();
        for i in 0..12 {
            assert_eq!(p.row(i).iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(p.row(i).iter().filter(|&&v| v == 0.0).count(), 11);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(ShuffleMix::new(6, 2).unwrap().apply(&[1.0; 5]).is_err());
        assert!(ShuffleMix::new(6, 4).is_err());
    }

    fn len_and_groups() -> impl Strategy<Value = (usize, usize)> {
        (1usize..=8, 1usize..=8).prop_map(|(g, per)| (g * per, g))
    }

    proptest! {
        #[test]
        fn shuffle_is_a_permutation((m, g) in len_and_groups(), seed in any::<u64>()) {
            let s = ShuffleMix::new(m, g).unwrap();
            let v: Vec<f64> = (0..m).map(|k| ((seed.wrapping_add(k as u64 * 7919)) % 1000) as f64).collect();
            let mut out = s.apply(&v).unwrap();
            let mut sorted = v.clone();
            out.sort_by(f64::total_cmp);
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(out, sorted);
            let back = ShuffleMix::new(m, m / g).unwrap().apply(&s.apply(&v).unwrap()).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
