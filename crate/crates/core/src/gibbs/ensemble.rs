//! Samplers for K classifiers scoring the same records.
//!
//! The joint model allocates each observed prediction combination across
//! true classes through the product of the K misclassification rates. The
//! independent model keeps one allocation matrix per classifier and only
//! pools them when updating the class probabilities.

use std::collections::HashMap;

use crate::distributions::multinomial_weights_into;
use crate::error::{Error, Result};
use crate::gibbs::single::{allocate, dirichlet_or_degenerate};
use crate::gibbs::{draw_matrix_rows, push_draw, run_chains, AugmentationMatrix, ChainConfig, GammaMh, MatrixDraw};
use crate::model::{
    naive_estimate, smoothed_shrinkage, ClassProbs, Hyperparams, PredictionCounts, TransferErrorMatrix,
};
use crate::num::Real;
use crate::rng::RngStream;
use crate::summary::{ChainOutput, ParamId, PosteriorSummary};

/// Prediction counts for K classifiers: the per-classifier marginals and,
/// when record-level predictions are available, the counts of every
/// observed combination of predicted labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnsembleCounts {
    c: usize,
    marginals: Vec<PredictionCounts>,
    /// Sorted by combination so iteration order is reproducible.
    combos: Vec<(Vec<usize>, u64)>,
}

impl EnsembleCounts {
    /// Builds both the combination counts and the marginals from records,
    /// each holding one predicted class index per classifier.
    pub fn from_records<R: AsRef<[usize]>>(c: usize, records: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut map: HashMap<Vec<usize>, u64> = HashMap::new();
        let mut k = None;
        for r in records {
            let r = r.as_ref();
            if *k.get_or_insert(r.len()) != r.len() {
                return Err(Error::Shape("records disagree on the number of classifiers".into()));
            }
            *map.entry(r.to_vec()).or_default() += 1;
        }
        Self::from_combinations(c, map)
    }

    pub fn from_combinations(c: usize, combos: impl IntoIterator<Item = (Vec<usize>, u64)>) -> Result<Self> {
        let mut map: HashMap<Vec<usize>, u64> = HashMap::new();
        for (j, y) in combos {
            if y > 0 {
                *map.entry(j).or_default() += y;
            }
        }
        let mut combos: Vec<_> = map.into_iter().collect();
        combos.sort_unstable();
        let k = combos.first().map(|(j, _)| j.len()).unwrap_or(0);
        if k == 0 {
            return Err(Error::EmptyData("no prediction combinations".into()));
        }
        let mut marg = vec![vec![0u64; c]; k];
        for (j, y) in &combos {
            if j.len() != k {
                return Err(Error::Shape("combinations disagree on the number of classifiers".into()));
            }
            for (kk, &jk) in j.iter().enumerate() {
                if jk >= c {
                    return Err(Error::Shape(format!("class index {jk} out of range for {c} classes")));
                }
                marg[kk][jk] += y;
            }
        }
        Ok(Self {
            c,
            marginals: marg.into_iter().map(PredictionCounts::new).collect(),
            combos,
        })
    }

    /// Per-classifier counts only. Enough for the independent model; the
    /// joint model refuses these.
    pub fn from_marginals(marginals: Vec<PredictionCounts>) -> Result<Self> {
        let c = marginals.first().map(|v| v.n_classes()).unwrap_or(0);
        if marginals.is_empty() || marginals.iter().any(|v| v.n_classes() != c) {
            return Err(Error::Shape("marginal counts must share a class count".into()));
        }
        let n = marginals[0].total();
        if marginals.iter().any(|v| v.total() != n) {
            return Err(Error::Shape("classifiers scored different numbers of records".into()));
        }
        Ok(Self { c, marginals, combos: Vec::new() })
    }

    /// Checks that `v` matches the marginals implied by the combinations.
    pub fn check_marginals(&self, v: &[PredictionCounts]) -> Result<()> {
        if v != self.marginals.as_slice() {
            return Err(Error::Input(
                "per-classifier counts do not match the combination counts".into(),
            ));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.c
    }

    pub fn n_classifiers(&self) -> usize {
        self.marginals.len()
    }

    pub fn total(&self) -> u64 {
        self.marginals[0].total()
    }

    pub fn marginal(&self, k: usize) -> &PredictionCounts {
        &self.marginals[k]
    }

    pub fn marginals(&self) -> &[PredictionCounts] {
        &self.marginals
    }

    pub fn combinations(&self) -> &[(Vec<usize>, u64)] {
        &self.combos
    }

    pub fn has_combinations(&self) -> bool {
        !self.combos.is_empty()
    }
}

/// One labeled transfer matrix per classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnsembleTransferErrors {
    t: Vec<TransferErrorMatrix>,
}

impl EnsembleTransferErrors {
    /// Accepts matrices with differing row sums; callers that ingest real
    /// data should also call [`shares_row_sums`](Self::shares_row_sums).
    pub fn new(t: Vec<TransferErrorMatrix>) -> Result<Self> {
        let c = t.first().map(|m| m.n_classes()).unwrap_or(0);
        if t.is_empty() || t.iter().any(|m| m.n_classes() != c) {
            return Err(Error::Shape("transfer matrices must share a class count".into()));
        }
        Ok(Self { t })
    }

    pub fn shares_row_sums(&self) -> bool {
        let first = self.t[0].row_sums();
        self.t.iter().all(|m| m.row_sums() == first)
    }

    pub fn get(&self, k: usize) -> &TransferErrorMatrix {
        &self.t[k]
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.t[0].n_classes()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EnsembleAugmentation {
    /// One length-C vector per stored combination, concatenated.
    Joint(Vec<u64>),
    Independent(Vec<AugmentationMatrix>),
}

#[derive(Clone, Debug)]
pub struct EnsembleState<T> {
    pub p: ClassProbs<T>,
    pub m: Vec<MatrixDraw<T>>,
    /// `K x C`, classifier-major.
    pub gamma: Vec<T>,
    pub aug: EnsembleAugmentation,
}

impl<T: Real> EnsembleState<T> {
    /// `p` starts at the average naive estimate and each `M^(k)` at a
    /// smoothed shrinkage estimate, which is strictly positive so every
    /// combination has positive probability.
    pub fn initial(
        counts: &EnsembleCounts,
        errors: &EnsembleTransferErrors,
        hp: &Hyperparams<T>,
        gamma: Option<Vec<T>>,
        joint: bool,
    ) -> Result<Self> {
        let c = counts.n_classes();
        let k = counts.n_classifiers();
        let mut p = vec![T::zero(); c];
        for v in counts.marginals() {
            for (pi, x) in p.iter_mut().zip(naive_estimate::<T>(v)?.into_vec()) {
                *pi += x;
            }
        }
        let gamma = match gamma {
            Some(g) => (0..k).flat_map(|_| g.iter().copied()).collect(),
            None => vec![T::one(); k * c],
        };
        let eps = if hp.epsilon > T::zero() { hp.epsilon } else { T::lit(1e-3) };
        let m = (0..k)
            .map(|kk| MatrixDraw::from_matrix(smoothed_shrinkage(errors.get(kk), T::one(), eps)))
            .collect();
        let aug = if joint {
            EnsembleAugmentation::Joint(vec![0; counts.combinations().len() * c])
        } else {
            EnsembleAugmentation::Independent(vec![AugmentationMatrix::zeros(c); k])
        };
        Ok(Self {
            p: ClassProbs::from_weights(p)?,
            m,
            gamma,
            aug,
        })
    }
}

fn check_inputs<T: Real>(
    counts: &EnsembleCounts,
    errors: &EnsembleTransferErrors,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
) -> Result<()> {
    hp.validate()?;
    cfg.validate()?;
    let c = counts.n_classes();
    if c < 2 || errors.n_classes() != c || errors.len() != counts.n_classifiers() {
        return Err(Error::Shape(format!(
            "{} classifiers over {c} classes but {} transfer matrices over {} classes",
            counts.n_classifiers(),
            errors.len(),
            errors.n_classes()
        )));
    }
    if counts.total() == 0 {
        return Err(Error::EmptyData("no unlabeled predictions".into()));
    }
    if hp.delta == T::zero() && (0..c).any(|i| counts.marginals().iter().all(|v| v.as_slice()[i] == 0)) {
        return Err(Error::ParameterDomain(
            "delta = 0 needs every class predicted at least once".into(),
        ));
    }
    Ok(())
}

/// Allocates every stored combination across true classes with
/// probabilities proportional to `p_i * prod_k m^(k)[i][j_k]`.
pub fn joint_update_b<T: Real>(
    state: &EnsembleState<T>,
    counts: &EnsembleCounts,
    rng: &mut RngStream,
) -> Result<Vec<u64>> {
    let c = counts.n_classes();
    let mut out = vec![0u64; counts.combinations().len() * c];
    let mut w = vec![0.0f64; c];
    let log_p: Vec<f64> = state.p.as_slice().iter().map(|x| x.f64().ln()).collect();
    for (n, (j, y)) in counts.combinations().iter().enumerate() {
        // log space: products of K small rates underflow quickly
        let mut hi = f64::NEG_INFINITY;
        for i in 0..c {
            let mut lw = log_p[i];
            for (m, &jk) in state.m.iter().zip(j) {
                lw += m.log_m[i * c + jk].f64();
            }
            w[i] = lw;
            hi = hi.max(lw);
        }
        if hi == f64::NEG_INFINITY || hi.is_nan() {
            return Err(Error::DegenerateState(format!(
                "combination {j:?} has {y} records but zero probability under the current state"
            )));
        }
        let mut total = 0.0;
        for x in w.iter_mut() {
            *x = (*x - hi).exp();
            total += *x;
        }
        multinomial_weights_into(*y, &w, total, &mut out[n * c..(n + 1) * c], rng);
    }
    Ok(out)
}

/// Collapses joint allocations onto classifier `k`'s predicted label.
fn marginal_allocation(b: &[u64], counts: &EnsembleCounts, k: usize) -> Vec<u64> {
    let c = counts.n_classes();
    let mut aug = vec![0u64; c * c];
    for (n, (j, _)) in counts.combinations().iter().enumerate() {
        for i in 0..c {
            aug[i * c + j[k]] += b[n * c + i];
        }
    }
    aug
}

pub fn joint_update_m<T: Real>(
    state: &EnsembleState<T>,
    counts: &EnsembleCounts,
    errors: &EnsembleTransferErrors,
    hp: &Hyperparams<T>,
    rng: &mut RngStream,
) -> Result<Vec<MatrixDraw<T>>> {
    let c = counts.n_classes();
    (0..errors.len())
        .map(|k| {
            let gamma = &state.gamma[k * c..(k + 1) * c];
            match &state.aug {
                EnsembleAugmentation::Joint(b) => {
                    draw_matrix_rows(&marginal_allocation(b, counts, k), errors.get(k), gamma, hp.epsilon, rng)
                }
                EnsembleAugmentation::Independent(bs) => {
                    draw_matrix_rows(bs[k].as_slice(), errors.get(k), gamma, hp.epsilon, rng)
                }
            }
        })
        .collect()
}

/// Dirichlet over the allocated row sums plus `delta`. Under the
/// independent model the K allocation matrices are pooled.
pub fn joint_update_p<T: Real>(state: &EnsembleState<T>, hp: &Hyperparams<T>, rng: &mut RngStream) -> Result<ClassProbs<T>> {
    let c = state.p.len();
    let mut sums = vec![0u64; c];
    match &state.aug {
        EnsembleAugmentation::Joint(b) => {
            for (n, x) in b.iter().enumerate() {
                sums[n % c] += x;
            }
        }
        EnsembleAugmentation::Independent(bs) => {
            for b in bs {
                for (s, r) in sums.iter_mut().zip(b.row_sums()) {
                    *s += r;
                }
            }
        }
    }
    let alpha: Vec<T> = sums.into_iter().map(|s| T::from_count(s) + hp.delta).collect();
    dirichlet_or_degenerate(&alpha, rng)
}

/// One Metropolis step per `gamma_i^(k)` at the configured proposal scale.
pub fn joint_update_gamma<T: Real>(
    state: &EnsembleState<T>,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
    rng: &mut RngStream,
) -> Result<Vec<T>> {
    let mut gamma = state.gamma.clone();
    let mut mh = GammaMh::new(gamma.len(), &ChainConfig { adapt_mh: false, ..cfg.clone() });
    let logs: Vec<&[T]> = state.m.iter().map(|m| m.log_m.as_slice()).collect();
    mh.step(&mut gamma, &logs, hp, false, rng)?;
    Ok(gamma)
}

/// `p`, then each `M^(k)` row-major, then each `gamma^(k)`.
pub fn layout(c: usize, k: usize) -> Vec<ParamId> {
    let mut l: Vec<ParamId> = (0..c).map(|i| ParamId::vector("p", i)).collect();
    for kk in 0..k {
        for i in 0..c {
            l.extend((0..c).map(|j| ParamId::matrix("m", i, j).with_k(kk)));
        }
    }
    for kk in 0..k {
        l.extend((0..c).map(|i| ParamId::vector("gamma", i).with_k(kk)));
    }
    l
}

fn diagnosed(c: usize, k: usize, with_gamma: bool) -> Vec<(usize, bool)> {
    let mut d: Vec<(usize, bool)> = (0..c).map(|i| (i, false)).collect();
    if with_gamma {
        let start = c + k * c * c;
        d.extend((0..k * c).map(|i| (start + i, true)));
    }
    d
}

fn one_chain<T: Real>(
    counts: &EnsembleCounts,
    errors: &EnsembleTransferErrors,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
    joint: bool,
    mut rng: RngStream,
    chain: usize,
) -> Result<ChainOutput<T>> {
    let c = counts.n_classes();
    let k = counts.n_classifiers();
    let fixed = cfg.fixed_gamma_for::<T>(c)?;
    let mut state = EnsembleState::initial(counts, errors, hp, fixed.clone(), joint)?;
    let mut mh = GammaMh::new(k * c, cfg);
    let n_params = c + k * c * c + k * c;
    let mut draws = Vec::with_capacity(cfg.n_retained() * n_params);
    let mut buf = Vec::with_capacity(n_params);
    for iter in 0..cfg.total_sweeps() {
        state.aug = if joint {
            EnsembleAugmentation::Joint(joint_update_b(&state, counts, &mut rng)?)
        } else {
            EnsembleAugmentation::Independent(
                (0..k)
                    .map(|kk| allocate(&state.m[kk].m, &state.p, counts.marginal(kk), &mut rng))
                    .collect::<Result<_>>()?,
            )
        };
        state.m = joint_update_m(&state, counts, errors, hp, &mut rng)?;
        state.p = joint_update_p(&state, hp, &mut rng)?;
        if fixed.is_none() {
            let logs: Vec<&[T]> = state.m.iter().map(|m| m.log_m.as_slice()).collect();
            mh.step(&mut state.gamma, &logs, hp, iter < cfg.n_burnin, &mut rng)?;
        }
        if cfg.retain(iter) {
            buf.clear();
            buf.extend_from_slice(state.p.as_slice());
            for m in &state.m {
                buf.extend_from_slice(m.m.as_slice());
            }
            buf.extend_from_slice(&state.gamma);
            push_draw(&mut draws, &buf, chain, iter)?;
        }
    }
    Ok(ChainOutput {
        n_params,
        draws,
        acceptance: mh.rates(),
    })
}

fn run<T: Real>(
    counts: &EnsembleCounts,
    errors: &EnsembleTransferErrors,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
    joint: bool,
) -> Result<PosteriorSummary<T>> {
    check_inputs(counts, errors, hp, cfg)?;
    let (c, k) = (counts.n_classes(), counts.n_classifiers());
    let chains = run_chains(cfg, |rng, chain| one_chain(counts, errors, hp, cfg, joint, rng, chain))?;
    PosteriorSummary::from_chains(layout(c, k), chains, &diagnosed(c, k, cfg.fixed_gamma.is_none()))
}

/// Joint model over the observed prediction combinations.
pub fn run_joint<T: Real>(
    counts: &EnsembleCounts,
    errors: &EnsembleTransferErrors,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
) -> Result<PosteriorSummary<T>> {
    if !counts.has_combinations() {
        return Err(Error::Input(
            "the joint model needs record-level prediction combinations".into(),
        ));
    }
    run(counts, errors, hp, cfg, true)
}

/// Independent model: predictions of different classifiers are treated as
/// conditionally independent given nothing but `p`.
pub fn run_independent<T: Real>(
    counts: &EnsembleCounts,
    errors: &EnsembleTransferErrors,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
) -> Result<PosteriorSummary<T>> {
    run(counts, errors, hp, cfg, false)
}
