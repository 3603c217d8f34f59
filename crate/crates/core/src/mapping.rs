//! Label mapping matrices and the gradient-free estimators that fill them.
//!
//! A mapping `ω` is a `k_s × k_t` table; downstream scores for a logits
//! vector `f` are `fᵀ·ω`. Every estimator here produces column-stochastic
//! tables (each downstream label distributes unit weight over the source
//! labels). One-to-one estimators (RLM/FLM/ILM) produce sub-permutation
//! matrices.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, order_free_sum, softmax, top_k_indices, DenseTable};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = 0.15;

const COLUMN_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rlm")]
    Rlm,
    #[serde(rename = "flm")]
    Flm,
    #[serde(rename = "ilm")]
    Ilm,
    #[serde(rename = "blm")]
    Blm,
    #[serde(rename = "blm+")]
    BlmPlus,
    #[serde(rename = "dense")]
    Dense,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Rlm,
        Method::Flm,
        Method::Ilm,
        Method::Blm,
        Method::BlmPlus,
        Method::Dense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rlm => "rlm",
            Method::Flm => "flm",
            Method::Ilm => "ilm",
            Method::Blm => "blm",
            Method::BlmPlus => "blm+",
            Method::Dense => "dense",
        }
    }

    pub fn is_one_to_one(self) -> bool {
        matches!(self, Method::Rlm | Method::Flm | Method::Ilm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown mapping method '{s}'")))
    }
}

/// Per-sample source logits paired with ground-truth downstream labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsTable {
    logits: DenseTable,
    labels: Vec<usize>,
}

impl LogitsTable {
    pub fn new(logits: DenseTable, labels: Vec<usize>) -> Result<Self> {
        if logits.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labels per logits row",
                expected: logits.rows(),
                got: labels.len(),
            });
        }
        Ok(Self { logits, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k_s(&self) -> usize {
        self.logits.cols()
    }

    pub fn logits(&self) -> &DenseTable {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.logits.row(i)
    }

    fn check_labels(&self, k_t: usize) -> Result<()> {
        if self.n() == 0 {
            return Err(Error::EmptyVector);
        }
        match self.labels.iter().find(|&&y| y >= k_t) {
            Some(&y) => Err(Error::IndexOutOfRange { index: y, len: k_t }),
            None => Ok(()),
        }
    }
}

/// Counts of (predicted source label, true downstream label) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    pub table: DenseTable,
    pub n: usize,
}

/// Summed top-K softmax probabilities per (source label, downstream label).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMatrix {
    pub table: DenseTable,
    pub n: usize,
    pub k_top: usize,
}

pub fn build_frequency(lt: &LogitsTable, k_t: usize) -> Result<FrequencyMatrix> {
    lt.check_labels(k_t)?;
    let mut table = DenseTable::zeros(lt.k_s(), k_t);
    for (i, &y) in lt.labels().iter().enumerate() {
        table.add(argmax(lt.row(i))?, y, 1.0);
    }
    Ok(FrequencyMatrix { table, n: lt.n() })
}

pub fn build_aggregation(lt: &LogitsTable, k_t: usize, k_top: usize) -> Result<AggregationMatrix> {
    lt.check_labels(k_t)?;
    if k_top == 0 || k_top > lt.k_s() {
        return Err(Error::invalid(format!(
            "top-K size {k_top} outside 1..={}",
            lt.k_s()
        )));
    }
    let mut table = DenseTable::zeros(lt.k_s(), k_t);
    for (i, &y) in lt.labels().iter().enumerate() {
        let logits = lt.row(i);
        let probs = softmax(logits)?;
        for s in top_k_indices(logits, k_top)? {
            table.add(s, y, probs[s]);
        }
    }
    Ok(AggregationMatrix {
        table,
        n: lt.n(),
        k_top,
    })
}

/// `K = max(1, ⌊α·k_t⌋)`, capped at `k_s`.
pub fn top_k_from_alpha(alpha: f64, k_t: usize, k_s: usize) -> usize {
    let k = (alpha * k_t as f64).floor();
    let k = if k.is_finite() && k >= 1.0 { k as usize } else { 1 };
    k.min(k_s).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MappingFile {
    k_s: usize,
    k_t: usize,
    method: Method,
    lambda: Option<f64>,
    alpha: Option<f64>,
    omega: DenseTable,
}

/// A fitted `k_s × k_t` label mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MappingFile", into = "MappingFile")]
pub struct MappingMatrix {
    pub method: Method,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    omega: DenseTable,
}

impl TryFrom<MappingFile> for MappingMatrix {
    type Error = Error;

    fn try_from(f: MappingFile) -> Result<Self> {
        if f.omega.rows() != f.k_s || f.omega.cols() != f.k_t {
            return Err(Error::invalid(format!(
                "omega is {}x{} but header says {}x{}",
                f.omega.rows(),
                f.omega.cols(),
                f.k_s,
                f.k_t
            )));
        }
        let m = MappingMatrix {
            method: f.method,
            lambda: f.lambda,
            alpha: f.alpha,
            omega: f.omega,
        };
        m.validate()?;
        Ok(m)
    }
}

impl From<MappingMatrix> for MappingFile {
    fn from(m: MappingMatrix) -> Self {
        MappingFile {
            k_s: m.k_s(),
            k_t: m.k_t(),
            method: m.method,
            lambda: m.lambda,
            alpha: m.alpha,
            omega: m.omega,
        }
    }
}

impl MappingMatrix {
    /// Wraps a table, checking the structural invariants of `method`.
    pub fn new(method: Method, omega: DenseTable) -> Result<Self> {
        let m = Self {
            method,
            lambda: None,
            alpha: None,
            omega,
        };
        m.validate()?;
        Ok(m)
    }

    /// An unconstrained learned table; exempt from the stochastic checks.
    pub fn dense(omega: DenseTable) -> Self {
        Self {
            method: Method::Dense,
            lambda: None,
            alpha: None,
            omega,
        }
    }

    /// Builds a one-to-one mapping from `assignment[t] = s`.
    pub fn one_to_one(method: Method, k_s: usize, assignment: &[usize]) -> Result<Self> {
        let mut omega = DenseTable::zeros(k_s, assignment.len());
        for (t, &s) in assignment.iter().enumerate() {
            if s >= k_s {
                return Err(Error::IndexOutOfRange { index: s, len: k_s });
            }
            omega.set(s, t, 1.0);
        }
        Self::new(method, omega)
    }

    pub fn k_s(&self) -> usize {
        self.omega.rows()
    }

    pub fn k_t(&self) -> usize {
        self.omega.cols()
    }

    pub fn omega(&self) -> &DenseTable {
        &self.omega
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == Method::Dense {
            return Ok(());
        }
        for t in 0..self.k_t() {
            let col = self.omega.column(t);
            if col.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
                return Err(Error::invalid(format!("column {t} has entries outside [0, 1]")));
            }
            let sum = order_free_sum(col);
            if (sum - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::invalid(format!("column {t} sums to {sum}, not 1")));
            }
        }
        if self.method.is_one_to_one() {
            let binary = self.omega.values().iter().all(|&w| w == 0.0 || w == 1.0);
            let rows_ok = (0..self.k_s()).all(|s| self.omega.row_sum(s) <= 1.0);
            if !binary || !rows_ok {
                return Err(Error::invalid(format!(
                    "{} mapping is not a one-to-one binary matrix",
                    self.method
                )));
            }
        }
        Ok(())
    }

    /// For one-to-one mappings, the source label assigned to each column.
    pub fn assignment(&self) -> Option<Vec<usize>> {
        if !self.method.is_one_to_one() {
            return None;
        }
        (0..self.k_t())
            .map(|t| (0..self.k_s()).find(|&s| self.omega.get(s, t) == 1.0))
            .collect()
    }

    /// The `count` source labels with the largest weight for each
    /// downstream label.
    pub fn top_weighted(&self, count: usize) -> Result<Vec<Vec<usize>>> {
        let count = count.min(self.k_s());
        (0..self.k_t())
            .map(|t| top_k_indices(&self.omega.column(t), count))
            .collect()
    }
}

/// Random one-to-one mapping: each downstream label draws an unused source
/// label uniformly.
pub fn rlm_fit(k_s: usize, k_t: usize, seed: u64) -> Result<MappingMatrix> {
    if k_t > k_s {
        return Err(Error::InsufficientLabels { k_s, k_t });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unused: Vec<usize> = (0..k_s).collect();
    let assignment: Vec<usize> = (0..k_t)
        .map(|_| unused.remove(rng.random_range(0..unused.len())))
        .collect();
    MappingMatrix::one_to_one(Method::Rlm, k_s, &assignment)
}

/// Greedy one-to-one matching on a non-negative score table: repeatedly
/// take the largest entry among unmatched rows and columns. Returns the
/// matched row for each column.
pub fn greedy_assignment(scores: &DenseTable) -> Result<Vec<usize>> {
    let (k_s, k_t) = (scores.rows(), scores.cols());
    if k_t > k_s {
        return Err(Error::InsufficientLabels { k_s, k_t });
    }
    let mut row_used = vec![false; k_s];
    let mut assignment: Vec<Option<usize>> = vec![None; k_t];
    for _ in 0..k_t {
        let mut best: Option<(usize, usize)> = None;
        for s in (0..k_s).filter(|&s| !row_used[s]) {
            for t in (0..k_t).filter(|&t| assignment[t].is_none()) {
                // Strict comparison in row-major scan order keeps the
                // lowest (row, column) pair on ties.
                if best.is_none_or(|(bs, bt)| scores.get(s, t) > scores.get(bs, bt)) {
                    best = Some((s, t));
                }
            }
        }
        let (s, t) = best.expect("k_t <= k_s leaves a free pair");
        row_used[s] = true;
        assignment[t] = Some(s);
    }
    Ok(assignment.into_iter().map(Option::unwrap).collect())
}

pub fn flm_fit(fm: &FrequencyMatrix) -> Result<MappingMatrix> {
    let assignment = greedy_assignment(&fm.table)?;
    MappingMatrix::one_to_one(Method::Flm, fm.table.rows(), &assignment)
}

/// Conditional estimate `d[s][t] / (Σ_t d[s][t] + λ)` followed by column
/// normalization. The `(n + k_s·λ)/n` factor of the joint/marginal ratio is
/// constant per table and cancels in the normalization.
///
/// Source labels with no evidence and `λ = 0` contribute nothing. A
/// downstream label whose column is entirely zero gets a uniform column.
pub fn bayes_table(d: &DenseTable, lambda: f64) -> Result<DenseTable> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if d.values().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("joint statistics must be non-negative"));
    }
    let (k_s, k_t) = (d.rows(), d.cols());
    let mut omega = DenseTable::zeros(k_s, k_t);
    for s in 0..k_s {
        let denom = d.row_sum(s) + lambda;
        if denom > 0.0 {
            for t in 0..k_t {
                omega.set(s, t, d.get(s, t) / denom);
            }
        }
    }
    for t in 0..k_t {
        let sum = omega.col_sum(t);
        for s in 0..k_s {
            let w = if sum > 0.0 {
                omega.get(s, t) / sum
            } else {
                1.0 / k_s as f64
            };
            omega.set(s, t, w);
        }
    }
    Ok(omega)
}

pub fn blm_fit(fm: &FrequencyMatrix, lambda: f64) -> Result<MappingMatrix> {
    let mut m = MappingMatrix::new(Method::Blm, bayes_table(&fm.table, lambda)?)?;
    m.lambda = Some(lambda);
    Ok(m)
}

pub fn blm_plus_fit(am: &AggregationMatrix, lambda: f64) -> Result<MappingMatrix> {
    let mut m = MappingMatrix::new(Method::BlmPlus, bayes_table(&am.table, lambda)?)?;
    m.lambda = Some(lambda);
    Ok(m)
}

/// Downstream scores `logitsᵀ·ω`.
pub fn map_logits(logits: &[f64], m: &MappingMatrix) -> Result<Vec<f64>> {
    m.omega.left_mul(logits)
}

/// Per-sample downstream predictions and their accuracy.
pub fn predict(lt: &LogitsTable, m: &MappingMatrix) -> Result<(Vec<usize>, f64)> {
    if lt.n() == 0 {
        return Err(Error::EmptyVector);
    }
    if lt.k_s() != m.k_s() {
        return Err(Error::DimensionMismatch {
            what: "mapping rows vs logits width",
            expected: lt.k_s(),
            got: m.k_s(),
        });
    }
    let preds = (0..lt.n())
        .map(|i| argmax(&map_logits(lt.row(i), m)?))
        .collect::<Result<Vec<_>>>()?;
    let acc = accuracy(&preds, lt.labels());
    Ok((preds, acc))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Accuracy restricted to each true label; labels without samples get 0.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize], k_t: usize) -> Vec<f64> {
    let mut hits = vec![0usize; k_t];
    let mut totals = vec![0usize; k_t];
    for (&p, &y) in preds.iter().zip(labels) {
        if y < k_t {
            totals[y] += 1;
            if p == y {
                hits[y] += 1;
            }
        }
    }
    hits.iter()
        .zip(&totals)
        .map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]]) -> DenseTable {
        DenseTable::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn freq(rows: &[&[f64]]) -> FrequencyMatrix {
        let table = table(rows);
        let n = table.total() as usize;
        FrequencyMatrix { table, n }
    }

    /// Source labels: CockerSpaniel, EnglishSpringer, EgyptianCat.
    /// Downstream labels: Cat, Dog.
    fn cat_dog_logits() -> LogitsTable {
        let logits = table(&[
            &[5.0, 1.0, 0.0],
            &[5.0, 1.0, 0.0],
            &[1.0, 5.0, 0.0],
            &[0.0, 1.0, 5.0],
        ]);
        LogitsTable::new(logits, vec![1, 1, 1, 0]).unwrap()
    }

    fn assert_close(a: &DenseTable, b: &[&[f64]], tol: f64) {
        for (r, row) in b.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert!((a.get(r, c) - v).abs() <= tol, "[{r}][{c}] {} vs {v}", a.get(r, c));
            }
        }
    }

    #[test]
    fn frequency_cat_dog() {
        let fm = build_frequency(&cat_dog_logits(), 2).unwrap();
        assert_eq!(fm.table, table(&[&[0.0, 2.0], &[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(fm.n, 4);
        assert_eq!(fm.table.get(0, 1) / 4.0, 0.5);
        assert_eq!(fm.table.get(1, 1) / 4.0, 0.25);
        assert_eq!(fm.table.get(2, 0) / 4.0, 0.25);
    }

    #[test]
    fn frequency_edge_cases() {
        let empty = LogitsTable::new(DenseTable::zeros(0, 3), vec![]).unwrap();
        assert!(build_frequency(&empty, 2).is_err());

        let one = LogitsTable::new(table(&[&[3.0, 1.0]]), vec![1]).unwrap();
        let fm = build_frequency(&one, 2).unwrap();
        assert_eq!(fm.table, table(&[&[0.0, 1.0], &[0.0, 0.0]]));

        let bad = LogitsTable::new(table(&[&[3.0, 1.0]]), vec![2]).unwrap();
        assert!(matches!(
            build_frequency(&bad, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn aggregation_top1_trace() {
        // logits chosen so that softmax is exactly the listed distribution
        let l1: Vec<f64> = [0.7f64, 0.2, 0.1].iter().map(|p| p.ln()).collect();
        let l2: Vec<f64> = [0.1f64, 0.6, 0.3].iter().map(|p| p.ln()).collect();
        let lt = LogitsTable::new(DenseTable::from_rows(vec![l1, l2]).unwrap(), vec![0, 1]).unwrap();
        let am = build_aggregation(&lt, 2, 1).unwrap();
        assert_close(&am.table, &[&[0.7, 0.0], &[0.0, 0.6], &[0.0, 0.0]], 1e-12);
    }

    #[test]
    fn aggregation_full_k_conserves_mass() {
        let lt = cat_dog_logits();
        let am = build_aggregation(&lt, 2, 3).unwrap();
        assert!((am.table.col_sum(0) - 1.0).abs() < 1e-9);
        assert!((am.table.col_sum(1) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn aggregation_uniform_tie_order() {
        let lt = LogitsTable::new(table(&[&[0.0, 0.0, 0.0]]), vec![0]).unwrap();
        let am = build_aggregation(&lt, 1, 2).unwrap();
        assert!((am.table.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((am.table.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(am.table.get(2, 0), 0.0);
        assert!(build_aggregation(&lt, 1, 0).is_err());
        assert!(build_aggregation(&lt, 1, 4).is_err());
    }

    #[test]
    fn rlm_cases() {
        assert_eq!(rlm_fit(1, 1, 99).unwrap().omega(), &table(&[&[1.0]]));
        assert_eq!(rlm_fit(1000, 10, 7).unwrap(), rlm_fit(1000, 10, 7).unwrap());
        let perm = rlm_fit(3, 3, 5).unwrap();
        for s in 0..3 {
            assert_eq!(perm.omega().row_sum(s), 1.0);
        }
        assert!(matches!(
            rlm_fit(2, 3, 0),
            Err(Error::InsufficientLabels { k_s: 2, k_t: 3 })
        ));
    }

    #[test]
    fn flm_greedy_trace() {
        let m = flm_fit(&freq(&[&[5.0, 0.0], &[0.0, 3.0], &[2.0, 2.0]])).unwrap();
        assert_eq!(m.assignment().unwrap(), vec![0, 1]);

        let zeros = FrequencyMatrix { table: DenseTable::zeros(2, 2), n: 0 };
        assert_eq!(flm_fit(&zeros).unwrap().assignment().unwrap(), vec![0, 1]);

        let diag = flm_fit(&freq(&[&[9.0, 0.0], &[0.0, 9.0]])).unwrap();
        assert_eq!(diag.assignment().unwrap(), vec![0, 1]);

        let tall = FrequencyMatrix { table: DenseTable::zeros(1, 2), n: 0 };
        assert!(flm_fit(&tall).is_err());
    }

    #[test]
    fn flm_does_not_reuse_rows() {
        // Row 0 dominates both columns; the second column must fall back to
        // another row.
        let m = flm_fit(&freq(&[&[9.0, 8.0], &[0.0, 1.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(m.assignment().unwrap(), vec![0, 1]);
    }

    #[test]
    fn blm_cat_dog() {
        let fm = build_frequency(&cat_dog_logits(), 2).unwrap();
        let m = blm_fit(&fm, 1.0).unwrap();
        // exact rationals: Cat = [0, 0, 1], Dog = [4/7, 3/7, 0]
        assert_close(
            m.omega(),
            &[&[0.0, 4.0 / 7.0], &[0.0, 3.0 / 7.0], &[1.0, 0.0]],
            1e-12,
        );
        let (preds, acc) = predict(&cat_dog_logits(), &m).unwrap();
        assert_eq!(preds, vec![1, 1, 1, 0]);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn blm_diagonal_and_empty_columns() {
        for lambda in [0.0, 0.5, 1.0, 10.0] {
            let m = blm_fit(&freq(&[&[4.0, 0.0, 0.0], &[0.0, 4.0, 0.0], &[0.0, 0.0, 4.0]]), lambda).unwrap();
            assert_close(m.omega(), &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]], 0.0);
        }
        let m = blm_fit(&freq(&[&[3.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]]), 1.0).unwrap();
        for s in 0..3 {
            assert!((m.omega().get(s, 1) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(blm_fit(&freq(&[&[1.0]]), -1.0).is_err());
    }

    #[test]
    fn blm_zero_lambda_empty_row() {
        let m = blm_fit(&freq(&[&[2.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]), 0.0).unwrap();
        assert_close(m.omega(), &[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]], 0.0);
    }

    #[test]
    fn blm_plus_cases() {
        let am = AggregationMatrix {
            table: table(&[&[0.7, 0.0], &[0.0, 0.6], &[0.0, 0.0]]),
            n: 2,
            k_top: 1,
        };
        let m = blm_plus_fit(&am, 1.0).unwrap();
        assert_close(m.omega(), &[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]], 1e-15);

        let fm = freq(&[&[3.0, 1.0], &[0.0, 2.0], &[5.0, 0.0]]);
        let as_agg = AggregationMatrix { table: fm.table.clone(), n: fm.n, k_top: 1 };
        let a = blm_fit(&fm, 1.0).unwrap();
        let b = blm_plus_fit(&as_agg, 1.0).unwrap();
        for (x, y) in a.omega().values().iter().zip(b.omega().values()) {
            assert!((x - y).abs() < 1e-12);
        }

        let zero = AggregationMatrix { table: DenseTable::zeros(4, 2), n: 3, k_top: 1 };
        let m = blm_plus_fit(&zero, 1.0).unwrap();
        assert!(m.omega().values().iter().all(|&w| w == 0.25));
    }

    #[test]
    fn map_logits_cases() {
        let sel = MappingMatrix::one_to_one(Method::Flm, 3, &[0, 1]).unwrap();
        assert_eq!(map_logits(&[1.0, 2.0, 3.0], &sel).unwrap(), vec![1.0, 2.0]);

        let perm = MappingMatrix::one_to_one(Method::Rlm, 4, &[3, 0, 2]).unwrap();
        assert_eq!(map_logits(&[0.5, -1.0, 7.0, 2.5], &perm).unwrap(), vec![2.5, 0.5, 7.0]);

        let soft = MappingMatrix::new(
            Method::Blm,
            table(&[&[0.2, 1.0 / 3.0], &[0.5, 1.0 / 3.0], &[0.3, 1.0 / 3.0]]),
        )
        .unwrap();
        for y in map_logits(&[1.0, 1.0, 1.0], &soft).unwrap() {
            assert!((y - 1.0).abs() < 1e-15);
        }
        assert!(map_logits(&[1.0, 2.0], &sel).is_err());
    }

    #[test]
    fn predict_errors() {
        let sel = MappingMatrix::one_to_one(Method::Flm, 3, &[0, 1]).unwrap();
        let empty = LogitsTable::new(DenseTable::zeros(0, 3), vec![]).unwrap();
        assert!(predict(&empty, &sel).is_err());
        let narrow = LogitsTable::new(table(&[&[1.0, 2.0]]), vec![0]).unwrap();
        assert!(predict(&narrow, &sel).is_err());

        let lt = LogitsTable::new(table(&[&[3.0, 1.0, 0.0], &[0.0, 2.0, 9.0]]), vec![0, 1]).unwrap();
        assert_eq!(predict(&lt, &sel).unwrap(), (vec![0, 1], 1.0));
    }

    #[test]
    fn k_from_alpha() {
        assert_eq!(top_k_from_alpha(0.15, 5, 30), 1);
        assert_eq!(top_k_from_alpha(0.15, 100, 1000), 15);
        assert_eq!(top_k_from_alpha(1.0, 50, 10), 10);
        assert_eq!(top_k_from_alpha(0.0, 10, 10), 1);
    }

    #[test]
    fn json_shape_and_validation() {
        let mut m = blm_fit(&freq(&[&[3.0, 1.0], &[0.0, 2.0]]), 1.0).unwrap();
        m.alpha = None;
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.starts_with(r#"{"k_s":2,"k_t":2,"method":"blm","lambda":1.0,"alpha":null,"omega":[["#));
        let back: MappingMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);

        let bad = r#"{"k_s":2,"k_t":1,"method":"blm","lambda":1.0,"alpha":null,"omega":[[0.5],[0.6]]}"#;
        assert!(serde_json::from_str::<MappingMatrix>(bad).is_err());
        let bad_shape = r#"{"k_s":3,"k_t":1,"method":"blm","lambda":1.0,"alpha":null,"omega":[[0.5],[0.5]]}"#;
        assert!(serde_json::from_str::<MappingMatrix>(bad_shape).is_err());
        let dense = r#"{"k_s":2,"k_t":1,"method":"dense","lambda":null,"alpha":null,"omega":[[-3.0],[7.5]]}"#;
        assert!(serde_json::from_str::<MappingMatrix>(dense).is_ok());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bayes".parse::<Method>().is_err());
    }

    #[test]
    fn top_weighted_export() {
        let m = MappingMatrix::new(
            Method::Blm,
            table(&[&[0.1, 0.6], &[0.7, 0.3], &[0.2, 0.1]]),
        )
        .unwrap();
        assert_eq!(m.top_weighted(2).unwrap(), vec![vec![1, 2], vec![0, 1]]);
    }
}
