//! Posterior summaries and convergence diagnostics over retained draws.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Real;

/// Name of one scalar parameter: block name plus optional classifier,
/// row and column indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ParamId {
    pub block: &'static str,
    pub k: Option<usize>,
    pub row: Option<usize>,
    pub col: Option<usize>,
}

impl ParamId {
    pub fn vector(block: &'static str, i: usize) -> Self {
        Self { block, k: None, row: Some(i), col: None }
    }

    pub fn matrix(block: &'static str, i: usize, j: usize) -> Self {
        Self { block, k: None, row: Some(i), col: Some(j) }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }
}

/// Retained draws of one chain, stored row-major (`n_draws x n_params`).
#[derive(Clone, Debug)]
pub struct ChainOutput<T> {
    pub n_params: usize,
    pub draws: Vec<T>,
    /// MH acceptance rate of each shrinkage weight after burn-in, in layout order.
    pub acceptance: Vec<T>,
}

impl<T: Real> ChainOutput<T> {
    pub fn n_draws(&self) -> usize {
        self.draws.len().checked_div(self.n_params).unwrap_or(0)
    }

    pub fn draw(&self, d: usize) -> &[T] {
        &self.draws[d * self.n_params..(d + 1) * self.n_params]
    }

    pub fn param(&self, idx: usize) -> impl Iterator<Item = T> + '_ {
        self.draws.iter().skip(idx).step_by(self.n_params).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParamStats<T> {
    pub mean: T,
    pub sd: T,
    pub q025: T,
    pub q50: T,
    pub q975: T,
}

/// Pooled summary over all chains, with the draws kept for post-hoc use.
#[derive(Clone, Debug)]
pub struct PosteriorSummary<T> {
    pub layout: Vec<ParamId>,
    pub stats: Vec<ParamStats<T>>,
    pub chain_means: Vec<Vec<T>>,
    /// `(param index, split-chain potential scale reduction)` for the
    /// diagnosed parameters.
    pub rhat: Vec<(usize, T)>,
    pub chains: Vec<ChainOutput<T>>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted<T: Real>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = T::lit(h - lo as f64);
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

fn mean_var<T: Real>(xs: &[T]) -> (T, T) {
    let n = T::from_usize(xs.len()).unwrap();
    let mean = xs.iter().copied().sum::<T>() / n;
    if xs.len() < 2 {
        return (mean, T::zero());
    }
    let ss: T = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - T::one()))
}

/// Split-chain potential scale reduction. Returns `None` when there are
/// fewer than four draws per chain or the within-chain variance vanishes.
pub fn split_rhat<T: Real>(chains: &[Vec<T>]) -> Option<T> {
    let half = chains.iter().map(Vec::len).min()? / 2;
    if half < 2 {
        return None;
    }
    let mut pieces: Vec<&[T]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        pieces.push(&c[..half]);
        pieces.push(&c[half..2 * half]);
    }
    let n = T::from_usize(half).unwrap();
    let m = T::from_usize(pieces.len()).unwrap();
    let stats: Vec<(T, T)> = pieces.iter().map(|p| mean_var(p)).collect();
    let grand = stats.iter().map(|s| s.0).sum::<T>() / m;
    let b = n / (m - T::one())
        * stats.iter().map(|s| (s.0 - grand) * (s.0 - grand)).sum::<T>();
    let w = stats.iter().map(|s| s.1).sum::<T>() / m;
    if !(w > T::zero()) {
        return None;
    }
    let var_plus = (n - T::one()) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

impl<T: Real> PosteriorSummary<T> {
    /// `diagnose` lists the parameter indices that get a potential scale
    /// reduction; `log_scale` marks the ones assessed on the log scale.
    pub fn from_chains(
        layout: Vec<ParamId>,
        chains: Vec<ChainOutput<T>>,
        diagnose: &[(usize, bool)],
    ) -> Result<Self> {
        let n_params = layout.len();
        if chains.is_empty() || chains.iter().any(|c| c.n_params != n_params || c.n_draws() == 0) {
            return Err(Error::EmptyData("no retained draws to summarise".into()));
        }
        let mut stats = Vec::with_capacity(n_params);
        let mut pooled = Vec::with_capacity(chains.iter().map(|c| c.n_draws()).sum());
        for idx in 0..n_params {
            pooled.clear();
            for c in &chains {
                pooled.extend(c.param(idx));
            }
            let (mean, var) = mean_var(&pooled);
            pooled.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
            stats.push(ParamStats {
                mean,
                sd: var.sqrt(),
                q025: quantile_sorted(&pooled, 0.025),
                q50: quantile_sorted(&pooled, 0.5),
                q975: quantile_sorted(&pooled, 0.975),
            });
        }
        let chain_means = chains
            .iter()
            .map(|c| {
                let n = T::from_usize(c.n_draws()).unwrap();
                (0..n_params).map(|i| c.param(i).sum::<T>() / n).collect()
            })
            .collect();
        let mut rhat = Vec::new();
        for &(idx, log_scale) in diagnose {
            let per_chain: Vec<Vec<T>> = chains
                .iter()
                .map(|c| {
                    c.param(idx)
                        .map(|x| if log_scale { x.ln() } else { x })
                        .collect()
                })
                .collect();
            if let Some(r) = split_rhat(&per_chain) {
                rhat.push((idx, r));
            }
        }
        Ok(Self {
            layout,
            stats,
            chain_means,
            rhat,
            chains,
        })
    }

    /// Indices (in layout order) of every parameter in `block` for
    /// classifier `k` (use `None` for single-classifier blocks).
    pub fn indices(&self, block: &str, k: Option<usize>) -> Vec<usize> {
        self.layout
            .iter()
            .enumerate()
            .filter(|(_, p)| p.block == block && p.k == k)
            .map(|(i, _)| i)
            .collect()
    }

    /// Posterior means of a block in layout order.
    pub fn mean(&self, block: &str) -> Vec<T> {
        self.mean_k(block, None)
    }

    pub fn mean_k(&self, block: &str, k: Option<usize>) -> Vec<T> {
        self.indices(block, k).into_iter().map(|i| self.stats[i].mean).collect()
    }

    pub fn sd(&self, block: &str) -> Vec<T> {
        self.indices(block, None).into_iter().map(|i| self.stats[i].sd).collect()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.n_draws()).sum()
    }

    /// Iterates over every retained draw across chains, in chain order.
    pub fn draws(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.chains
            .iter()
            .flat_map(|c| (0..c.n_draws()).map(move |d| c.draw(d)))
    }

    pub fn max_rhat(&self) -> Option<T> {
        self.rhat.iter().map(|r| r.1).fold(None, |acc, r| match acc {
            None => Some(r),
            Some(a) => Some(a.max(r)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::distributions::std_normal;

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0f64, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 3.0);
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 5.0);
        assert!((quantile_sorted(&xs, 0.975) - 4.9).abs() < 1e-12);
    }

    #[test]
    fn rhat_near_one_for_iid_and_large_for_shifted() {
        let mut rng = RngStream::new(3, 0);
        let iid: Vec<Vec<f64>> = (0..4).map(|_| (0..2000).map(|_| std_normal(&mut rng)).collect()).collect();
        let r = split_rhat(&iid).unwrap();
        assert!((r - 1.0).abs() < 0.01, "{r}");
        let shifted: Vec<Vec<f64>> = (0..4)
            .map(|c| (0..2000).map(|_| std_normal(&mut rng) + c as f64 * 3.0).collect())
            .collect();
        assert!(split_rhat(&shifted).unwrap() > 1.5);
        assert!(split_rhat(&[vec![1.0f64; 10]]).is_none());
    }

    #[test]
    fn summary_stats_are_ordered() {
        let mut rng = RngStream::new(4, 0);
        let chains: Vec<ChainOutput<f64>> = (0..2)
            .map(|_| ChainOutput {
                n_params: 2,
                draws: (0..2000).map(|_| std_normal(&mut rng)).collect(),
                acceptance: vec![],
            })
            .collect();
        let layout = vec![ParamId::vector("p", 0), ParamId::vector("p", 1)];
        let s = PosteriorSummary::from_chains(layout, chains, &[(0, false)]).unwrap();
        for st in &s.stats {
            assert!(st.q025 <= st.q50 && st.q50 <= st.q975);
        }
        assert_eq!(s.mean("p").len(), 2);
        assert_eq!(s.n_draws(), 2000);
        assert_eq!(s.rhat.len(), 1);
    }
}
