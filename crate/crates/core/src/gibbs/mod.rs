//! Data-augmented Gibbs samplers for the single-classifier and ensemble
//! models, plus the pieces they share: chain configuration, the Dirichlet
//! row update for misclassification matrices, and the Metropolis update of
//! the shrinkage weights.

pub mod ensemble;
pub mod single;

use serde::{Deserialize, Serialize};

use crate::distributions::{log_dirichlet_into, mh_lognormal_step};
use crate::error::{Error, Result};
use crate::model::{Hyperparams, MisclassMatrix, TransferErrorMatrix};
use crate::num::Real;
use crate::rng::RngStream;
use crate::summary::ChainOutput;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_burnin: usize,
    /// Sweeps after burn-in; every `thin`-th one is retained.
    pub n_samples: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
    pub mh_proposal_sd: f64,
    /// Diminishing adaptation of the proposal scale toward 44% acceptance
    /// during burn-in only.
    pub adapt_mh: bool,
    /// When set, the shrinkage weights are held at these values and the
    /// Metropolis step is skipped.
    #[serde(default)]
    pub fixed_gamma: Option<Vec<f64>>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_burnin: 5000,
            n_samples: 5000,
            thin: 1,
            seed: 1,
            n_chains: 3,
            mh_proposal_sd: 0.5,
            adapt_mh: false,
            fixed_gamma: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.n_chains == 0 || self.n_samples == 0 {
            return Err(Error::ParameterDomain(
                "thin, n_chains and n_samples must be positive".into(),
            ));
        }
        if !(self.mh_proposal_sd >= 0.0) || !self.mh_proposal_sd.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "proposal sd must be non-negative, got {}",
                self.mh_proposal_sd
            )));
        }
        if let Some(g) = &self.fixed_gamma {
            if g.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::ParameterDomain("fixed gamma values must be positive".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn n_retained(&self) -> usize {
        self.n_samples.div_ceil(self.thin)
    }

    pub(crate) fn retain(&self, iter: usize) -> bool {
        iter >= self.n_burnin && (iter - self.n_burnin).is_multiple_of(self.thin)
    }

    pub(crate) fn total_sweeps(&self) -> usize {
        self.n_burnin + self.n_samples
    }

    pub(crate) fn fixed_gamma_for<T: Real>(&self, c: usize) -> Result<Option<Vec<T>>> {
        match &self.fixed_gamma {
            None => Ok(None),
            Some(g) if g.len() == 1 => Ok(Some(vec![T::lit(g[0]); c])),
            Some(g) if g.len() == c => Ok(Some(g.iter().map(|&x| T::lit(x)).collect())),
            Some(g) => Err(Error::Shape(format!(
                "fixed gamma has {} entries, expected 1 or {c}",
                g.len()
            ))),
        }
    }
}

/// Latent allocation counts: entry `(i, j)` is the share of the `v_j`
/// predictions of class `j` attributed to true class `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentationMatrix {
    c: usize,
    b: Vec<u64>,
}

impl AugmentationMatrix {
    pub fn zeros(c: usize) -> Self {
        Self { c, b: vec![0; c * c] }
    }

    pub fn from_vec(c: usize, b: Vec<u64>) -> Result<Self> {
        if b.len() != c * c {
            return Err(Error::Shape(format!("expected {} entries, got {}", c * c, b.len())));
        }
        Ok(Self { c, b })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.b[i * self.c + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, x: u64) {
        self.b[i * self.c + j] = x;
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.c)
            .map(|i| self.b[i * self.c..(i + 1) * self.c].iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.c).map(|j| (0..self.c).map(|i| self.get(i, j)).sum()).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.c
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.b
    }
}

/// A misclassification matrix draw together with its entrywise logarithm.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixDraw<T> {
    pub m: MisclassMatrix<T>,
    pub log_m: Vec<T>,
}

impl<T: Real> MatrixDraw<T> {
    pub fn from_matrix(m: MisclassMatrix<T>) -> Self {
        let log_m = m.as_slice().iter().map(|x| x.ln()).collect();
        Self { m, log_m }
    }
}

/// Draws every row of a misclassification matrix from
/// `Dirichlet(aug_i + t_i + gamma_i * epsilon + gamma_i * e_i)`.
/// `aug` is row-major `c x c`.
pub(crate) fn draw_matrix_rows<T: Real>(
    aug: &[u64],
    t: &TransferErrorMatrix,
    gamma: &[T],
    epsilon: T,
    rng: &mut RngStream,
) -> Result<MatrixDraw<T>> {
    let c = t.n_classes();
    let mut alpha = vec![T::zero(); c];
    let mut log_m = vec![T::zero(); c * c];
    for i in 0..c {
        for j in 0..c {
            let mut a = T::from_count(aug[i * c + j] + t.get(i, j)) + gamma[i] * epsilon;
            if i == j {
                a += gamma[i];
            }
            alpha[j] = a;
        }
        log_dirichlet_into(&alpha, &mut log_m[i * c..(i + 1) * c], rng)?;
    }
    let m = log_m.iter().map(|x| x.exp()).collect();
    Ok(MatrixDraw {
        m: MisclassMatrix::new_unchecked(c, m),
        log_m,
    })
}

/// Unnormalised log full conditional of the shrinkage weight of row `i`:
/// the Dirichlet normaliser, the Gamma prior, and the row's likelihood
/// contribution `sum_j (g*eps + g*[i == j]) * log m_ij`.
pub fn gamma_log_density<T: Real>(g: T, i: usize, log_m_row: &[T], hp: &Hyperparams<T>) -> T {
    if !(g > T::zero()) {
        return T::neg_infinity();
    }
    let c = T::from_usize(log_m_row.len()).unwrap();
    let ge = g * hp.epsilon;
    let norm = (c * ge + g).lgamma() - (c - T::one()) * ge.lgamma() - (ge + g).lgamma();
    let prior = (hp.alpha_gamma - T::one()) * g.ln() - hp.beta_gamma * g;
    let lik = log_m_row.iter().copied().sum::<T>() * ge + g * log_m_row[i];
    norm + prior + lik
}

/// Per-coordinate Metropolis bookkeeping for the shrinkage weights.
#[derive(Clone, Debug)]
pub(crate) struct GammaMh {
    log_sd: Vec<f64>,
    batch_accepts: Vec<u32>,
    batch_len: u32,
    n_batches: u32,
    accepts: Vec<u64>,
    tries: u64,
    adapt: bool,
}

const ADAPT_BATCH: u32 = 50;
const TARGET_ACCEPT: f64 = 0.44;

impl GammaMh {
    pub(crate) fn new(n: usize, cfg: &ChainConfig) -> Self {
        Self {
            log_sd: vec![cfg.mh_proposal_sd.ln(); n],
            batch_accepts: vec![0; n],
            batch_len: 0,
            n_batches: 0,
            accepts: vec![0; n],
            tries: 0,
            adapt: cfg.adapt_mh && cfg.mh_proposal_sd > 0.0,
        }
    }

    /// Updates `gamma` (one block of `c` weights per matrix) in place.
    /// `log_ms[k]` is the log matrix paired with `gamma[k*c..(k+1)*c]`.
    pub(crate) fn step<T: Real>(
        &mut self,
        gamma: &mut [T],
        log_ms: &[&[T]],
        hp: &Hyperparams<T>,
        burnin: bool,
        rng: &mut RngStream,
    ) -> Result<()> {
        let c = if log_ms.is_empty() { 0 } else { gamma.len() / log_ms.len() };
        for (k, log_m) in log_ms.iter().enumerate() {
            for i in 0..c {
                let idx = k * c + i;
                let row = &log_m[i * c..(i + 1) * c];
                let sd = T::lit(self.log_sd[idx].exp());
                let s = mh_lognormal_step(gamma[idx], |g| gamma_log_density(g, i, row, hp), sd, rng)
                    .map_err(|e| Error::InvalidState(format!("gamma[{k}][{i}]: {e}")))?;
                gamma[idx] = s.value;
                if burnin {
                    self.batch_accepts[idx] += s.accepted as u32;
                } else {
                    self.accepts[idx] += s.accepted as u64;
                }
            }
        }
        if burnin {
            self.batch_len += 1;
            if self.batch_len == ADAPT_BATCH {
                self.n_batches += 1;
                if self.adapt {
                    let delta = (1.0 / (self.n_batches as f64).sqrt()).min(0.01);
                    for (ls, &a) in self.log_sd.iter_mut().zip(&self.batch_accepts) {
                        let rate = a as f64 / ADAPT_BATCH as f64;
                        *ls += if rate > TARGET_ACCEPT { delta } else { -delta };
                    }
                }
                self.batch_accepts.iter_mut().for_each(|a| *a = 0);
                self.batch_len = 0;
            }
        } else {
            self.tries += 1;
        }
        Ok(())
    }

    pub(crate) fn rates<T: Real>(&self) -> Vec<T> {
        self.accepts
            .iter()
            .map(|&a| {
                if self.tries == 0 {
                    T::zero()
                } else {
                    T::lit(a as f64 / self.tries as f64)
                }
            })
            .collect()
    }
}

/// Runs `n_chains` independent chains on scoped threads. Chain `c` gets
/// stream `c` of the configured seed, so results do not depend on
/// scheduling.
pub(crate) fn run_chains<T, F>(cfg: &ChainConfig, chain: F) -> Result<Vec<ChainOutput<T>>>
where
    T: Real,
    F: Fn(RngStream, usize) -> Result<ChainOutput<T>> + Sync,
{
    let results: Vec<Result<ChainOutput<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.n_chains)
            .map(|c| {
                let chain = &chain;
                s.spawn(move || chain(RngStream::new(cfg.seed, c as u64), c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

/// Appends a retained draw, refusing non-finite values.
pub(crate) fn push_draw<T: Real>(out: &mut Vec<T>, draw: &[T], chain: usize, iter: usize) -> Result<()> {
    if let Some(pos) = draw.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidState(format!(
            "non-finite value in parameter {pos} of chain {chain} at sweep {iter}"
        )));
    }
    out.extend_from_slice(draw);
    Ok(())
}
