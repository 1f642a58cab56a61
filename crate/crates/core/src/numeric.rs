//! Dense `f64` vectors and matrices plus the stable primitives the model is
//! built from (softmax, log-loss, argmax).

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability floor applied before taking a log.
pub const LOG_FLOOR: f64 = 1e-300;

/// Fixed-length vector of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn zeros(len: usize) -> Self {
        RealVector(vec![0.0; len])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        RealVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &RealVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                op: "dot",
                left: format!("vector[{}]", self.len()),
                right: format!("vector[{}]", other.len()),
            });
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl fmt::Debug for RealVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl Index<usize> for RealVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for RealVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for RealVector {
    fn from(v: Vec<f64>) -> Self {
        RealVector(v)
    }
}

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "RealMatrix::from_vec",
                left: format!("{rows}x{cols}"),
                right: format!("{} entries", data.len()),
            });
        }
        Ok(RealMatrix { rows, cols, data })
    }

    /// Builds from nested rows; all rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    op: "RealMatrix::from_rows",
                    left: format!("row of {cols}"),
                    right: format!("row of {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(RealMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn shape_str(&self) -> String {
        format!("matrix {}x{}", self.rows, self.cols)
    }

    /// Adds column `col` into `out`.
    pub(crate) fn add_column_into(&self, col: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.data[i * self.cols + col];
        }
    }

    /// `self[:, col] += delta`.
    pub(crate) fn accumulate_column(&mut self, col: usize, delta: &[f64]) {
        for (i, d) in delta.iter().enumerate() {
            self.data[i * self.cols + col] += d;
        }
    }

    /// `self += u vᵀ`.
    pub(crate) fn accumulate_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, ui) in u.iter().enumerate() {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, vj) in row.iter_mut().zip(v) {
                *r += ui * vj;
            }
        }
    }
}

impl fmt::Debug for RealMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = (0..self.rows).map(|i| self.row(i)).collect();
        write!(f, "RealMatrix{:?}", rows)
    }
}

impl Index<(usize, usize)> for RealMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RealMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `m · v`.
pub fn matvec(m: &RealMatrix, v: &RealVector) -> Result<RealVector> {
    if m.cols != v.len() {
        return Err(Error::DimensionMismatch {
            op: "matvec",
            left: m.shape_str(),
            right: format!("vector[{}]", v.len()),
        });
    }
    let out = (0..m.rows)
        .map(|i| m.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum())
        .collect();
    Ok(RealVector(out))
}

/// `mᵀ · v`.
pub fn matvec_transposed(m: &RealMatrix, v: &RealVector) -> Result<RealVector> {
    if m.rows != v.len() {
        return Err(Error::DimensionMismatch {
            op: "matvec_transposed",
            left: m.shape_str(),
            right: format!("vector[{}]", v.len()),
        });
    }
    let mut out = vec![0.0; m.cols];
    for (i, vi) in v.iter().enumerate() {
        for (o, a) in out.iter_mut().zip(m.row(i)) {
            *o += a * vi;
        }
    }
    Ok(RealVector(out))
}

/// Softmax with max-subtraction.
pub fn softmax_stable(logits: &RealVector) -> Result<RealVector> {
    if logits.is_empty() {
        return Err(Error::EmptyInput {
            op: "softmax_stable",
        });
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite {
            op: "softmax_stable",
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(RealVector(exps.into_iter().map(|e| e / sum).collect()))
}

/// `−ln(probs[label])`, with the probability floored at [`LOG_FLOOR`].
pub fn cross_entropy(probs: &RealVector, label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            len: probs.len(),
        });
    }
    Ok(-probs[label].max(LOG_FLOOR).ln())
}

/// Index of the maximum entry; ties go to the lowest index.
pub fn argmax_tiebreak(v: &RealVector) -> Result<usize> {
    let mut iter = v.iter().enumerate();
    let (mut best_i, mut best) = match iter.next() {
        Some((i, x)) => (i, *x),
        None => {
            return Err(Error::EmptyInput {
                op: "argmax_tiebreak",
            })
        }
    };
    for (i, x) in iter {
        if *x > best {
            best = *x;
            best_i = i;
        }
    }
    Ok(best_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.len()];
        for i in 0..m.len() {
            for j in 0..v.len() {
                out[i] += m[i][j] * v[j];
            }
        }
        out
    }

    #[test]
    fn matvec_identity_and_zero() {
        let v = RealVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(matvec(&RealMatrix::identity(3), &v).unwrap(), v);
        let z = matvec(&RealMatrix::zeros(2, 3), &v).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn matvec_hand_computed() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let m = RealMatrix::from_rows(&rows).unwrap();
        let v = RealVector::from_vec(vec![1.0, 1.0]);
        let got = matvec(&m, &v).unwrap();
        assert_eq!(got.as_slice(), naive_matvec(&rows, &[1.0, 1.0]).as_slice());
        assert_eq!(got.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_shape_error_names_both_shapes() {
        let err = matvec(&RealMatrix::zeros(2, 3), &RealVector::zeros(4)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("vector[4]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_stable(&RealVector::from_vec(vec![0.0; 3])).unwrap();
        for p in u.iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = softmax_stable(&RealVector::from_vec(vec![5.0, 1005.0])).unwrap();
        assert!(big.is_finite());
        assert!((big[1] - 1.0).abs() < 1e-15);

        // mpmath at 30 digits
        let s = softmax_stable(&RealVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let expected = [
            0.09003057317038046,
            0.24472847105479764,
            0.6652409557748219,
        ];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(
            softmax_stable(&RealVector::zeros(0)),
            Err(Error::EmptyInput { .. })
        ));
        assert!(matches!(
            softmax_stable(&RealVector::from_vec(vec![0.0, f64::NAN])),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            softmax_stable(&RealVector::from_vec(vec![f64::INFINITY])),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = RealVector::from_vec(vec![0.25; 4]);
        for label in 0..4 {
            let l = cross_entropy(&uniform, label).unwrap();
            assert!((l - 1.3862943611198906).abs() < 1e-15);
        }
        let certain = RealVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_eq!(cross_entropy(&certain, 0).unwrap(), 0.0);
        // floor keeps log(0) finite
        assert!((cross_entropy(&certain, 1).unwrap() - 690.7755278982137).abs() < 1e-9);

        let s = softmax_stable(&RealVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert!((cross_entropy(&s, 2).unwrap() - 0.4076059644443803).abs() < 1e-14);
        assert!(matches!(
            cross_entropy(&s, 3),
            Err(Error::LabelOutOfRange { label: 3, len: 3 })
        ));
    }

    #[test]
    fn argmax_examples() {
        let v = |x: &[f64]| RealVector::from_vec(x.to_vec());
        assert_eq!(argmax_tiebreak(&v(&[0.1, 0.7, 0.2])).unwrap(), 1);
        assert_eq!(argmax_tiebreak(&v(&[0.5, 0.5])).unwrap(), 0);
        let s = softmax_stable(&v(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(argmax_tiebreak(&s).unwrap(), 2);
        assert!(argmax_tiebreak(&v(&[])).is_err());
    }

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 2..=64)
    }

    proptest! {
        #[test]
        fn softmax_normalizes(x in logits()) {
            let s = softmax_stable(&RealVector::from_vec(x)).unwrap();
            let sum: f64 = s.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(s.iter().all(|p| *p >= 0.0));
        }

        #[test]
        fn softmax_shift_invariant(x in logits(), c in -100.0f64..100.0) {
            let a = softmax_stable(&RealVector::from_vec(x.clone())).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = softmax_stable(&RealVector::from_vec(shifted)).unwrap();
            for (p, q) in a.iter().zip(b.iter()) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }

        #[test]
        fn argmax_survives_softmax(x in logits()) {
            let v = RealVector::from_vec(x);
            let s = softmax_stable(&v).unwrap();
            prop_assert_eq!(argmax_tiebreak(&s).unwrap(), argmax_tiebreak(&v).unwrap());
        }

        #[test]
        fn cross_entropy_nonnegative(x in logits(), pick in 0usize..64) {
            let s = softmax_stable(&RealVector::from_vec(x)).unwrap();
            let label = pick % s.len();
            let l = cross_entropy(&s, label).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, s[label] == 1.0);
        }

        #[test]
        fn matvec_matches_scalar_loops(
            (rows, cols, data, v) in (1usize..=32, 1usize..=32).prop_flat_map(|(r, c)| (
                Just(r),
                Just(c),
                prop::collection::vec(-10.0f64..10.0, r * c),
                prop::collection::vec(-10.0f64..10.0, c),
            ))
        ) {
            let nested: Vec<Vec<f64>> = data.chunks(cols).map(|c| c.to_vec()).collect();
            let m = RealMatrix::from_vec(rows, cols, data).unwrap();
            let got = matvec(&m, &RealVector::from_vec(v.clone())).unwrap();
            let want = naive_matvec(&nested, &v);
            for (a, b) in got.iter().zip(&want) {
                prop_assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
            }
        }
    }
}
