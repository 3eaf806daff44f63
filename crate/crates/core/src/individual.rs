//! Class membership of a single record given its predicted label(s),
//! averaged over retained posterior draws.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ClassProbs;
use crate::num::Real;
use crate::summary::PosteriorSummary;

/// Warn when more than this share of draws had to be skipped.
const EXCLUDED_WARN_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndividualPosterior<T> {
    pub probs: Vec<T>,
    /// Standard error of each entry treating draws as independent.
    pub mc_se: Vec<T>,
    pub n_used: usize,
    /// Draws under which the pattern had zero probability.
    pub n_excluded: usize,
}

impl<T: Real> IndividualPosterior<T> {
    pub fn class_probs(&self) -> Result<ClassProbs<T>> {
        ClassProbs::new(self.probs.clone())
    }
}

/// Positions of `p` and of each `M^(k)` within a draw.
struct DrawIndex {
    p: Vec<usize>,
    m: Vec<Vec<usize>>,
}

impl DrawIndex {
    fn new<T: Real>(s: &PosteriorSummary<T>, k: Option<usize>) -> Result<Self> {
        let p = s.indices("p", None);
        let m = match k {
            None => vec![s.indices("m", None)],
            Some(k) => (0..k).map(|kk| s.indices("m", Some(kk))).collect(),
        };
        let c = p.len();
        if c == 0 || m.iter().any(|mk| mk.len() != c * c) {
            return Err(Error::Shape("draws do not contain p and matching misclassification matrices".into()));
        }
        Ok(Self { p, m })
    }
}

fn compose<T: Real>(s: &PosteriorSummary<T>, idx: &DrawIndex, pattern: &[usize]) -> Result<IndividualPosterior<T>> {
    let c = idx.p.len();
    if pattern.len() != idx.m.len() {
        return Err(Error::Shape(format!(
            "pattern has {} labels for {} classifiers",
            pattern.len(),
            idx.m.len()
        )));
    }
    if let Some(&j) = pattern.iter().find(|&&j| j >= c) {
        return Err(Error::Shape(format!("predicted class {j} out of range for {c} classes")));
    }
    let (mut sum, mut sumsq) = (vec![0.0f64; c], vec![0.0f64; c]);
    let (mut used, mut excluded) = (0usize, 0usize);
    let mut w = vec![0.0f64; c];
    for d in s.draws() {
        let mut total = 0.0;
        for i in 0..c {
            let mut u = d[idx.p[i]].f64();
            for (mk, &j) in idx.m.iter().zip(pattern) {
                u *= d[mk[i * c + j]].f64();
            }
            w[i] = u;
            total += u;
        }
        if !(total > 0.0) || !total.is_finite() {
            excluded += 1;
            continue;
        }
        used += 1;
        for i in 0..c {
            let x = w[i] / total;
            sum[i] += x;
            sumsq[i] += x * x;
        }
    }
    if used == 0 {
        if excluded == 0 {
            return Err(Error::EmptyData("no posterior draws".into()));
        }
        return Err(Error::DegenerateState(format!(
            "pattern {pattern:?} has zero probability under all {excluded} draws; the classifiers' \
             misclassification matrices rule out every true class for this combination"
        )));
    }
    if excluded as f64 > EXCLUDED_WARN_FRACTION * (used + excluded) as f64 {
        log::warn!("pattern {pattern:?}: {excluded} of {} draws had zero probability and were skipped", used + excluded);
    }
    let n = used as f64;
    let mean: Vec<f64> = sum.iter().map(|x| x / n).collect();
    let se = mean
        .iter()
        .zip(&sumsq)
        .map(|(m, ss)| {
            if used < 2 {
                0.0
            } else {
                ((ss - n * m * m).max(0.0) / (n - 1.0) / n).sqrt()
            }
        })
        .collect::<Vec<_>>();
    Ok(IndividualPosterior {
        probs: mean.into_iter().map(T::lit).collect(),
        mc_se: se.into_iter().map(T::lit).collect(),
        n_used: used,
        n_excluded: excluded,
    })
}

/// Posterior class membership of a record whose classifier predicted `pred`,
/// from the draws of a single-classifier run.
pub fn individual_posterior_single<T: Real>(pred: usize, draws: &PosteriorSummary<T>) -> Result<IndividualPosterior<T>> {
    compose(draws, &DrawIndex::new(draws, None)?, &[pred])
}

/// As [`individual_posterior_single`] for a record whose `K` classifiers
/// predicted `pattern`, from the draws of an ensemble run.
pub fn individual_posterior_ensemble<T: Real>(
    pattern: &[usize],
    draws: &PosteriorSummary<T>,
) -> Result<IndividualPosterior<T>> {
    compose(draws, &DrawIndex::new(draws, Some(pattern.len()))?, pattern)
}

/// Posteriors for many records, computed once per distinct pattern. With
/// `ensemble` false every pattern must have length one and the draws come
/// from a single-classifier run.
pub fn individual_posteriors<T: Real>(
    patterns: &[Vec<usize>],
    draws: &PosteriorSummary<T>,
    ensemble: bool,
) -> Result<Vec<IndividualPosterior<T>>> {
    let k = patterns.first().map(Vec::len).unwrap_or(1);
    let idx = DrawIndex::new(draws, ensemble.then_some(k))?;
    let mut cache: BTreeMap<&[usize], IndividualPosterior<T>> = BTreeMap::new();
    patterns
        .iter()
        .map(|p| {
            if let Some(r) = cache.get(p.as_slice()) {
                return Ok(r.clone());
            }
            let r = compose(draws, &idx, p)?;
            cache.insert(p.as_slice(), r.clone());
            Ok(r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{ensemble, single};
    use crate::summary::ChainOutput;

    fn single_draws(ps: &[Vec<f64>], ms: &[Vec<f64>]) -> PosteriorSummary<f64> {
        let c = ps[0].len();
        let mut draws = Vec::new();
        for (p, m) in ps.iter().zip(ms) {
            draws.extend_from_slice(p);
            draws.extend_from_slice(m);
            draws.extend(std::iter::repeat_n(1.0, c));
        }
        let chain = ChainOutput { n_params: c * (c + 2), draws, acceptance: vec![] };
        PosteriorSummary::from_chains(single::layout(c), vec![chain], &[]).unwrap()
    }

    fn identity(c: usize) -> Vec<f64> {
        (0..c * c).map(|n| if n / c == n % c { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn identity_puts_all_mass_on_prediction() {
        let s = single_draws(&[vec![0.25; 4], vec![0.1, 0.2, 0.3, 0.4]], &[identity(4), identity(4)]);
        let r = individual_posterior_single(2, &s).unwrap();
        assert_eq!(r.probs, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(r.mc_se, vec![0.0; 4]);
    }

    #[test]
    fn m2_single_draw() {
        let m2 = vec![1.0, 0.0, 0.0, 0.0, 0.65, 0.35, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0];
        let s = single_draws(&[vec![0.25; 4]], &[m2]);
        let r = individual_posterior_single(0, &s).unwrap();
        assert!((r.probs[0] - 1.0 / 1.65).abs() < 1e-12);
        assert!((r.probs[1] - 0.65 / 1.65).abs() < 1e-12);
        assert_eq!(&r.probs[2..], &[0.0, 0.0]);
    }

    #[test]
    fn same_prediction_same_posterior() {
        let s = single_draws(&[vec![0.25; 4]], &[vec![0.25; 16]]);
        let r = individual_posteriors(&[vec![1], vec![3], vec![1]], &s, false).unwrap();
        assert_eq!(r[0], r[2]);
    }

    fn ensemble_draws(p: Vec<f64>, ms: Vec<Vec<f64>>) -> PosteriorSummary<f64> {
        let c = p.len();
        let k = ms.len();
        let mut draws = p;
        for m in ms {
            draws.extend(m);
        }
        draws.extend(std::iter::repeat_n(1.0, k * c));
        let chain = ChainOutput { n_params: draws.len(), draws, acceptance: vec![] };
        PosteriorSummary::from_chains(ensemble::layout(c, k), vec![chain], &[]).unwrap()
    }

    #[test]
    fn ensemble_identity_and_conflict() {
        let s = ensemble_draws(vec![0.25; 4], vec![identity(4), identity(4)]);
        let r = individual_posterior_ensemble(&[1, 1], &s).unwrap();
        assert_eq!(r.probs, vec![0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(individual_posterior_ensemble(&[0, 1], &s), Err(Error::DegenerateState(_))));
    }

    #[test]
    fn one_classifier_ensemble_matches_single() {
        let p = vec![0.1, 0.2, 0.3, 0.4];
        let m: Vec<f64> = (0..16).map(|n| if n / 4 == n % 4 { 0.7 } else { 0.1 }).collect();
        let a = individual_posterior_ensemble(&[2], &ensemble_draws(p.clone(), vec![m.clone()])).unwrap();
        let b = individual_posterior_single(2, &single_draws(&[p], &[m])).unwrap();
        assert_eq!(a.probs, b.probs);
    }
}
