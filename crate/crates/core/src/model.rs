//! Shared domain types and the closed-form naive and shrinkage estimators.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

/// Ordered set of class names; index `i` is the position in every vector and
/// matrix the crate produces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassLabelMap {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassLabelMap {
    /// Keeps the declared order. Needs at least two distinct labels.
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::Input(format!(
                "need at least two classes, got {}",
                labels.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::Input("empty class label".into()));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate class label `{l}`")));
            }
        }
        Ok(Self { labels, index })
    }

    /// Distinct observed labels in numeric order when all of them are
    /// integers, lexicographic order otherwise.
    pub fn from_observed<S: AsRef<str>>(observed: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut labels: Vec<String> = observed.into_iter().map(|s| s.as_ref().to_string()).collect();
        labels.sort();
        labels.dedup();
        if labels.iter().all(|l| l.parse::<i64>().is_ok()) {
            labels.sort_by_key(|l| l.parse::<i64>().unwrap());
        }
        Self::new(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Probability vector on the simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProbs<T> {
    values: Vec<T>,
}

impl<T: Real> ClassProbs<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("probability vector is empty".into()));
        }
        let mut sum = T::zero();
        for &v in &values {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::ParameterDomain(format!(
                    "probability entry {v} is negative or not finite"
                )));
            }
            sum += v;
        }
        if (sum - T::one()).abs() > T::lit(T::SIMPLEX_TOL) {
            return Err(Error::ParameterDomain(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self { values })
    }

    /// Rescales non-negative weights to sum to one.
    pub fn from_weights(weights: Vec<T>) -> Result<Self> {
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) || !total.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "weights must have a positive finite total, got {total}"
            )));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub(crate) fn new_unchecked(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn uniform(c: usize) -> Self {
        let w = T::one() / T::from_usize(c).unwrap();
        Self { values: vec![w; c] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn l1_distance(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .sum()
    }
}

impl<T> std::ops::Index<usize> for ClassProbs<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

/// Row-stochastic matrix; entry `(i, j)` is P(predicted j | true i).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisclassMatrix<T> {
    c: usize,
    m: Vec<T>,
}

impl<T: Real> MisclassMatrix<T> {
    /// `data` is row-major and must hold `c * c` entries.
    pub fn new(c: usize, data: Vec<T>) -> Result<Self> {
        if c == 0 || data.len() != c * c {
            return Err(Error::Shape(format!(
                "expected {} entries for a {c}x{c} matrix, got {}",
                c * c,
                data.len()
            )));
        }
        for i in 0..c {
            let row = &data[i * c..(i + 1) * c];
            let mut sum = T::zero();
            for &x in row {
                if !(x >= T::zero()) || !x.is_finite() {
                    return Err(Error::ParameterDomain(format!(
                        "row {i} has a negative or non-finite entry {x}"
                    )));
                }
                sum += x;
            }
            if (sum - T::one()).abs() > T::lit(T::SIMPLEX_TOL) {
                return Err(Error::ParameterDomain(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(Self { c, m: data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let c = rows.len();
        let mut data = Vec::with_capacity(c * c);
        for r in rows {
            if r.len() != c {
                return Err(Error::Shape("matrix must be square".into()));
            }
            data.extend(r.iter().map(|&x| T::lit(x)));
        }
        Self::new(c, data)
    }

    pub(crate) fn new_unchecked(c: usize, m: Vec<T>) -> Self {
        Self { c, m }
    }

    pub fn identity(c: usize) -> Self {
        let mut m = vec![T::zero(); c * c];
        for i in 0..c {
            m[i * c + i] = T::one();
        }
        Self { c, m }
    }

    pub fn n_classes(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.m[i * self.c + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.m[i * self.c..(i + 1) * self.c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.m
    }
}

/// Counts of (true class, predicted class) pairs on the labeled target set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferErrorMatrix {
    c: usize,
    t: Vec<u64>,
}

impl TransferErrorMatrix {
    pub fn new(c: usize, data: Vec<u64>) -> Result<Self> {
        if c == 0 || data.len() != c * c {
            return Err(Error::Shape(format!(
                "expected {} counts for a {c}x{c} matrix, got {}",
                c * c,
                data.len()
            )));
        }
        Ok(Self { c, t: data })
    }

    pub fn zeros(c: usize) -> Self {
        Self { c, t: vec![0; c * c] }
    }

    pub fn diagonal(counts: &[u64]) -> Self {
        let c = counts.len();
        let mut t = vec![0; c * c];
        for (i, &n) in counts.iter().enumerate() {
            t[i * c + i] = n;
        }
        Self { c, t }
    }

    /// Tallies `(true, predicted)` index pairs.
    pub fn from_pairs(c: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut t = vec![0u64; c * c];
        for (i, j) in pairs {
            if i >= c || j >= c {
                return Err(Error::Shape(format!("pair ({i}, {j}) outside {c} classes")));
            }
            t[i * c + j] += 1;
        }
        Ok(Self { c, t })
    }

    pub fn n_classes(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.t[i * self.c + j]
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.t[i * self.c..(i + 1) * self.c]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.c).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.t.iter().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.c).all(|i| (0..self.c).all(|j| i == j || self.get(i, j) == 0))
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.t
    }
}

/// Predicted-label counts `v` on the unlabeled set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionCounts {
    v: Vec<u64>,
}

impl PredictionCounts {
    pub fn new(v: Vec<u64>) -> Self {
        Self { v }
    }

    pub fn from_labels(c: usize, labels: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut v = vec![0u64; c];
        for j in labels {
            if j >= c {
                return Err(Error::Shape(format!("label index {j} outside {c} classes")));
            }
            v[j] += 1;
        }
        Ok(Self { v })
    }

    pub fn n_classes(&self) -> usize {
        self.v.len()
    }

    pub fn total(&self) -> u64 {
        self.v.iter().sum()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.v
    }
}

/// Prior settings: smoothing `epsilon`, Dirichlet mass `delta` on `p`, and the
/// Gamma(`alpha_gamma`, `beta_gamma`) prior (rate parameterisation) on each
/// shrinkage weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams<T> {
    pub epsilon: T,
    pub delta: T,
    pub alpha_gamma: T,
    pub beta_gamma: T,
}

impl<T: Real> Default for Hyperparams<T> {
    fn default() -> Self {
        Self {
            epsilon: T::lit(0.001),
            delta: T::one(),
            alpha_gamma: T::one(),
            beta_gamma: T::one(),
        }
    }
}

impl<T: Real> Hyperparams<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon > T::zero()
            && self.delta >= T::zero()
            && self.alpha_gamma > T::zero()
            && self.beta_gamma > T::zero()
            && self.epsilon.is_finite()
            && self.delta.is_finite()
            && self.alpha_gamma.is_finite()
            && self.beta_gamma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::ParameterDomain(format!(
                "hyperparameters need epsilon > 0, delta >= 0, alpha, beta > 0; got {self:?}"
            )))
        }
    }
}

/// Fraction of the unlabeled set assigned to each class by the classifier.
pub fn naive_estimate<T: Real>(v: &PredictionCounts) -> Result<ClassProbs<T>> {
    let n = v.total();
    if n == 0 {
        return Err(Error::EmptyData("no predictions to estimate from".into()));
    }
    let n = T::from_count(n);
    Ok(ClassProbs::new_unchecked(
        v.as_slice().iter().map(|&x| T::from_count(x) / n).collect(),
    ))
}

/// `q = M' p`: the predicted-label marginal implied by true-class probabilities.
pub fn predicted_marginal<T: Real>(m: &MisclassMatrix<T>, p: &ClassProbs<T>) -> Result<ClassProbs<T>> {
    let c = m.n_classes();
    if p.len() != c {
        return Err(Error::Shape(format!(
            "matrix has {c} classes but probability vector has {}",
            p.len()
        )));
    }
    let q = (0..c)
        .map(|j| (0..c).map(|i| m.get(i, j) * p[i]).sum())
        .collect();
    Ok(ClassProbs::new_unchecked(q))
}

/// Row-wise convex combination of the empirical transfer rates and the
/// identity, with weight `gamma_i / (n_i + gamma_i)` on the identity row.
pub fn shrinkage_estimate<T: Real>(t: &TransferErrorMatrix, gamma: &[T]) -> Result<MisclassMatrix<T>> {
    let c = t.n_classes();
    if gamma.len() != c {
        return Err(Error::Shape(format!(
            "need {c} shrinkage weights, got {}",
            gamma.len()
        )));
    }
    if let Some(g) = gamma.iter().find(|&&g| !(g > T::zero())) {
        return Err(Error::ParameterDomain(format!("shrinkage weight {g} must be positive")));
    }
    let mut m = vec![T::zero(); c * c];
    for i in 0..c {
        let n_i: u64 = t.row(i).iter().sum();
        if n_i == 0 {
            m[i * c + i] = T::one();
            continue;
        }
        let n = T::from_count(n_i);
        let lambda = gamma[i] / (n + gamma[i]);
        for j in 0..c {
            let emp = T::from_count(t.get(i, j)) / n;
            let ident = if i == j { T::one() } else { T::zero() };
            m[i * c + j] = (T::one() - lambda) * emp + lambda * ident;
        }
    }
    Ok(MisclassMatrix::new_unchecked(c, m))
}

/// Posterior mean of each row under the smoothed Dirichlet prior given `T`
/// alone. Strictly positive, so usable as a starting point wherever logs of
/// the matrix are needed.
pub(crate) fn smoothed_shrinkage<T: Real>(
    t: &TransferErrorMatrix,
    gamma: T,
    epsilon: T,
) -> MisclassMatrix<T> {
    let c = t.n_classes();
    let cf = T::from_usize(c).unwrap();
    let mut m = vec![T::zero(); c * c];
    for i in 0..c {
        let n = T::from_count(t.row(i).iter().sum());
        let denom = n + gamma * (T::one() + cf * epsilon);
        for j in 0..c {
            let ident = if i == j { gamma } else { T::zero() };
            m[i * c + j] = (T::from_count(t.get(i, j)) + ident + gamma * epsilon) / denom;
        }
    }
    MisclassMatrix::new_unchecked(c, m)
}
