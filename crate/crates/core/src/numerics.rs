//! Small deterministic vector and table helpers shared by every module.
//!
//! All ties resolve to the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `rows × cols` table of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DenseTable {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseTable {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "table values",
                expected: rows * cols,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Builds a table from nested rows; all rows must have equal length.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "table row",
                    expected: cols,
                    got: row.len(),
                });
            }
            values.extend(row);
        }
        Self::new(n, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// Sum of a row, independent of the order of its entries.
    pub fn row_sum(&self, r: usize) -> f64 {
        order_free_sum(self.row(r).to_vec())
    }

    /// Sum of a column, independent of the order of its entries.
    pub fn col_sum(&self, c: usize) -> f64 {
        order_free_sum(self.column(c))
    }

    pub fn total(&self) -> f64 {
        order_free_sum(self.values.clone())
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &DenseTable) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                what: "table shape",
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// `vᵀ · self` for a vector of length `rows`.
    pub fn left_mul(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                what: "left vector",
                expected: self.rows,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &x) in v.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += x * w;
            }
        }
        Ok(out)
    }

    /// `self · v` for a vector of length `cols`.
    pub fn right_mul(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "right vector",
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(w, x)| w * x).sum())
            .collect())
    }
}

impl TryFrom<Vec<Vec<f64>>> for DenseTable {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<DenseTable> for Vec<Vec<f64>> {
    fn from(t: DenseTable) -> Self {
        t.to_rows()
    }
}

/// Sums after sorting, so the result depends only on the multiset of
/// values. Keeps fitted mappings exactly equivariant under label
/// permutations.
pub fn order_free_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Numerically stable softmax (shifted by the maximum).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    check_finite(v)?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(v: &[f64]) -> Result<usize> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Indices of the `k` largest values, ordered by descending value and then
/// ascending index.
pub fn top_k_indices(v: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > v.len() {
        return Err(Error::invalid(format!(
            "top-k size {k} outside 1..={}",
            v.len()
        )));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// `-log softmax(mapped)[label]`, computed through log-sum-exp.
pub fn cross_entropy(mapped: &[f64], label: usize) -> Result<f64> {
    check_finite(mapped)?;
    if label >= mapped.len() {
        return Err(Error::IndexOutOfRange {
            index: label,
            len: mapped.len(),
        });
    }
    Ok((log_sum_exp(mapped) - mapped[label]).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let b = softmax(&[101.0, 102.0, 103.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_known_values() {
        // mpmath, 40 digits
        let want = [0.090_030_573_170_380_46, 0.244_728_471_054_797_65, 0.665_240_955_774_821_9];
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (x, w) in p.iter().zip(want) {
            assert!((x - w).abs() < 1e-15, "{x} vs {w}");
        }
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(softmax(&[]), Err(Error::EmptyVector)));
        assert!(matches!(softmax(&[1.0, f64::NAN]), Err(Error::NonFinite)));
        assert!(matches!(softmax(&[f64::INFINITY]), Err(Error::NonFinite)));
    }

    #[test]
    fn argmax_ties() {
        assert_eq!(argmax(&[0.2, 0.9, 0.1]).unwrap(), 1);
        assert_eq!(argmax(&[5.0, 5.0, 1.0]).unwrap(), 0);
        assert_eq!(argmax(&[-1.0, -1.0, -1.0]).unwrap(), 0);
        assert!(argmax(&[]).is_err());
    }

    #[test]
    fn top_k_cases() {
        assert_eq!(top_k_indices(&[0.1, 0.5, 0.3], 2).unwrap(), vec![1, 2]);
        assert_eq!(top_k_indices(&[7.0, 7.0, 1.0], 1).unwrap(), vec![0]);
        assert_eq!(
            top_k_indices(&[0.9, 0.05, 0.03, 0.02], 4).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert!(top_k_indices(&[1.0, 2.0], 0).is_err());
        assert!(top_k_indices(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        assert!((cross_entropy(&[0.0, 0.0], 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(cross_entropy(&[10.0, -10.0], 0).unwrap() < 1e-8);
        // mpmath: -log softmax([1,2,3])[2]
        let ce = cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((ce - 0.407_605_964_444_380_3).abs() < 1e-15);
        assert!(matches!(
            cross_entropy(&[1.0, 2.0], 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn table_shape_checks() {
        assert!(DenseTable::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseTable::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseTable::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        let t = DenseTable::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.left_mul(&[1.0, 1.0]).unwrap(), vec![4.0, 6.0]);
        assert_eq!(t.right_mul(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert_eq!(t.col_sum(1), 6.0);
    }

    fn finite_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 1..40)
    }

    proptest! {
        #[test]
        fn softmax_preserves_argmax(v in finite_vec()) {
            let p = softmax(&v).unwrap();
            prop_assert_eq!(argmax(&p).unwrap(), argmax(&v).unwrap());
        }

        #[test]
        fn softmax_is_distribution(v in finite_vec()) {
            let p = softmax(&v).unwrap();
            prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn full_top_k_is_permutation(v in finite_vec()) {
            let mut idx = top_k_indices(&v, v.len()).unwrap();
            idx.sort_unstable();
            prop_assert_eq!(idx, (0..v.len()).collect::<Vec<_>>());
        }

        #[test]
        fn order_free_sum_ignores_order(mut v in finite_vec(), seed in any::<u64>()) {
            let a = order_free_sum(v.clone());
            let n = v.len();
            v.rotate_left((seed as usize) % n);
            v.reverse();
            prop_assert_eq!(a.to_bits(), order_free_sum(v).to_bits());
        }
    }
}
