//! Population-level and individual-level accuracy measures.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClassProbs;
use crate::num::Real;

/// `1 - ||estimate - truth||_1 / (2 min_i truth_i)`. Equals one only at the
/// truth and is unbounded below.
pub fn csmf_accuracy<T: Real>(estimate: &ClassProbs<T>, truth: &ClassProbs<T>) -> Result<T> {
    if estimate.len() != truth.len() {
        return Err(Error::Shape(format!(
            "estimate has {} classes, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    let min = truth.as_slice().iter().copied().fold(T::infinity(), T::min);
    if !(min > T::zero()) {
        return Err(Error::UndefinedMetric(
            "CSMF accuracy needs every true class probability positive".into(),
        ));
    }
    Ok(T::one() - estimate.l1_distance(truth) / (T::lit(2.0) * min))
}

/// Counts of (true class, predicted class) pairs, true-class-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    c: usize,
    n: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(c: usize, n: Vec<u64>) -> Result<Self> {
        if n.len() != c * c {
            return Err(Error::Shape(format!("expected {} entries, got {}", c * c, n.len())));
        }
        Ok(Self { c, n })
    }

    pub fn from_pairs(c: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut n = vec![0u64; c * c];
        for (i, j) in pairs {
            if i >= c || j >= c {
                return Err(Error::Shape(format!("pair ({i}, {j}) out of range for {c} classes")));
            }
            n[i * c + j] += 1;
        }
        Ok(Self { c, n })
    }

    pub fn n_classes(&self) -> usize {
        self.c
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.n[i * self.c + j]
    }

    pub fn total(&self) -> u64 {
        self.n.iter().sum()
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.get(i, i)
    }

    pub fn fn_(&self, i: usize) -> u64 {
        (0..self.c).map(|j| self.get(i, j)).sum::<u64>() - self.tp(i)
    }

    pub fn fp(&self, i: usize) -> u64 {
        (0..self.c).map(|k| self.get(k, i)).sum::<u64>() - self.tp(i)
    }

    pub fn tn(&self, i: usize) -> u64 {
        self.total() - self.tp(i) - self.fn_(i) - self.fp(i)
    }
}

/// Which chance-corrected concordance to compute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CccVariant {
    /// `(1/C) sum_i (TP_i/(TP_i+TN_i) - 1/N) / (1 - 1/N)`, with counts.
    AsWritten,
    /// `(1/C) sum_i (TP_i/(TP_i+FN_i) - 1/C) / (1 - 1/C)`: sensitivity
    /// corrected for a uniform random guess.
    #[default]
    Literature,
}

impl FromStr for CccVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" => Ok(Self::AsWritten),
            "literature" => Ok(Self::Literature),
            _ => Err(Error::Input(format!(
                "unknown CCC variant `{s}` (expected as-written or literature)"
            ))),
        }
    }
}

pub fn ccc(conf: &ConfusionCounts, variant: CccVariant) -> Result<f64> {
    let c = conf.n_classes();
    let n = conf.total();
    if n <= 1 {
        return Err(Error::UndefinedMetric(format!("concordance needs more than one record, got {n}")));
    }
    let mut acc = 0.0;
    for i in 0..c {
        let (num, den, chance) = match variant {
            CccVariant::AsWritten => (conf.tp(i), conf.tp(i) + conf.tn(i), 1.0 / n as f64),
            CccVariant::Literature => (conf.tp(i), conf.tp(i) + conf.fn_(i), 1.0 / c as f64),
        };
        if den == 0 {
            return Err(Error::UndefinedMetric(format!("class {i} has an empty denominator")));
        }
        acc += (num as f64 / den as f64 - chance) / (1.0 - chance);
    }
    Ok(acc / c as f64)
}

/// Mean estimate minus truth, per class.
pub fn class_bias<T: Real>(estimates: &[ClassProbs<T>], truth: &ClassProbs<T>) -> Result<Vec<T>> {
    if estimates.is_empty() {
        return Err(Error::EmptyData("no estimates".into()));
    }
    let c = truth.len();
    if estimates.iter().any(|e| e.len() != c) {
        return Err(Error::Shape("estimates and truth differ in class count".into()));
    }
    let n = T::from_usize(estimates.len()).unwrap();
    Ok((0..c)
        .map(|i| estimates.iter().map(|e| e[i]).sum::<T>() / n - truth[i])
        .collect())
}
