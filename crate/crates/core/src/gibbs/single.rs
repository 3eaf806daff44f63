//! Single-classifier sampler. One sweep updates, in order, the latent
//! allocation counts, the misclassification matrix, the class
//! probabilities and the shrinkage weights.

use crate::distributions::{draw_dirichlet, multinomial_weights_into};
use crate::error::{Error, Result};
use crate::gibbs::{
    draw_matrix_rows, push_draw, run_chains, AugmentationMatrix, ChainConfig, GammaMh, MatrixDraw,
};
use crate::model::{
    naive_estimate, shrinkage_estimate, ClassProbs, Hyperparams, MisclassMatrix, PredictionCounts,
    TransferErrorMatrix,
};
use crate::num::Real;
use crate::rng::RngStream;
use crate::summary::{ChainOutput, ParamId, PosteriorSummary};

#[derive(Clone, Debug)]
pub struct ChainState<T> {
    pub p: ClassProbs<T>,
    pub m: MatrixDraw<T>,
    pub gamma: Vec<T>,
    pub b: AugmentationMatrix,
}

impl<T: Real> ChainState<T> {
    /// Starts at the uncalibrated answer: `p` at the naive estimate and `M`
    /// at the shrinkage estimate with unit weights.
    pub fn initial(v: &PredictionCounts, t: &TransferErrorMatrix, gamma: Option<Vec<T>>) -> Result<Self> {
        let c = t.n_classes();
        let gamma = gamma.unwrap_or_else(|| vec![T::one(); c]);
        let m = shrinkage_estimate(t, &gamma)?;
        Ok(Self {
            p: naive_estimate(v)?,
            m: MatrixDraw::from_matrix(m),
            gamma,
            b: AugmentationMatrix::zeros(c),
        })
    }
}

pub(crate) fn check_inputs<T: Real>(
    v: &PredictionCounts,
    t: &TransferErrorMatrix,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
) -> Result<()> {
    hp.validate()?;
    cfg.validate()?;
    let c = t.n_classes();
    if c < 2 || v.n_classes() != c {
        return Err(Error::Shape(format!(
            "prediction counts have {} classes, transfer matrix has {c}",
            v.n_classes()
        )));
    }
    if v.total() == 0 {
        return Err(Error::EmptyData("no unlabeled predictions".into()));
    }
    if hp.delta == T::zero() && v.as_slice().contains(&0) {
        return Err(Error::ParameterDomain(
            "delta = 0 needs every class predicted at least once".into(),
        ));
    }
    Ok(())
}

/// Column `j` of the allocation matrix splits `v_j` across true classes with
/// probabilities proportional to `m_ij * p_i`.
pub fn update_b<T: Real>(
    state: &ChainState<T>,
    v: &PredictionCounts,
    rng: &mut RngStream,
) -> Result<AugmentationMatrix> {
    allocate(&state.m.m, &state.p, v, rng)
}

pub(crate) fn allocate<T: Real>(
    m: &MisclassMatrix<T>,
    p: &ClassProbs<T>,
    v: &PredictionCounts,
    rng: &mut RngStream,
) -> Result<AugmentationMatrix> {
    let c = p.len();
    let mut b = AugmentationMatrix::zeros(c);
    let mut w = vec![0.0; c];
    let mut col = vec![0u64; c];
    for (j, &vj) in v.as_slice().iter().enumerate() {
        if vj == 0 {
            continue;
        }
        let mut total = 0.0;
        for i in 0..c {
            w[i] = (m.get(i, j) * p[i]).f64();
            total += w[i];
        }
        if !(total > 0.0) {
            return Err(Error::DegenerateState(format!(
                "predicted class {j} has {vj} records but zero probability under the current state"
            )));
        }
        multinomial_weights_into(vj, &w, total, &mut col, rng);
        for (i, &x) in col.iter().enumerate() {
            b.set(i, j, x);
        }
    }
    Ok(b)
}

pub fn update_m<T: Real>(
    state: &ChainState<T>,
    t: &TransferErrorMatrix,
    hp: &Hyperparams<T>,
    rng: &mut RngStream,
) -> Result<MatrixDraw<T>> {
    draw_matrix_rows(state.b.as_slice(), t, &state.gamma, hp.epsilon, rng)
}

/// Dirichlet over the allocation row sums plus `delta`.
pub fn update_p<T: Real>(state: &ChainState<T>, hp: &Hyperparams<T>, rng: &mut RngStream) -> Result<ClassProbs<T>> {
    let alpha: Vec<T> = state
        .b
        .row_sums()
        .into_iter()
        .map(|s| T::from_count(s) + hp.delta)
        .collect();
    dirichlet_or_degenerate(&alpha, rng)
}

pub(crate) fn dirichlet_or_degenerate<T: Real>(alpha: &[T], rng: &mut RngStream) -> Result<ClassProbs<T>> {
    if let Some(i) = alpha.iter().position(|a| !(*a > T::zero())) {
        return Err(Error::DegenerateState(format!(
            "class {i} has no allocated records and delta = 0"
        )));
    }
    draw_dirichlet(alpha, rng)
}

/// One log-normal Metropolis step per shrinkage weight at the configured
/// proposal scale.
pub fn update_gamma<T: Real>(
    state: &ChainState<T>,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
    rng: &mut RngStream,
) -> Result<Vec<T>> {
    let mut gamma = state.gamma.clone();
    let mut mh = GammaMh::new(gamma.len(), &ChainConfig { adapt_mh: false, ..cfg.clone() });
    mh.step(&mut gamma, &[&state.m.log_m], hp, false, rng)?;
    Ok(gamma)
}

/// Parameter layout of a single-classifier draw: `p`, then `m` row-major,
/// then `gamma`.
pub fn layout(c: usize) -> Vec<ParamId> {
    let mut l = Vec::with_capacity(c * (c + 2));
    l.extend((0..c).map(|i| ParamId::vector("p", i)));
    for i in 0..c {
        l.extend((0..c).map(|j| ParamId::matrix("m", i, j)));
    }
    l.extend((0..c).map(|i| ParamId::vector("gamma", i)));
    l
}

pub(crate) fn diagnosed(c: usize, with_gamma: bool) -> Vec<(usize, bool)> {
    let mut d: Vec<(usize, bool)> = (0..c).map(|i| (i, false)).collect();
    if with_gamma {
        d.extend((0..c).map(|i| (c + c * c + i, true)));
    }
    d
}

fn one_chain<T: Real>(
    v: &PredictionCounts,
    t: &TransferErrorMatrix,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
    mut rng: RngStream,
    chain: usize,
) -> Result<ChainOutput<T>> {
    let c = t.n_classes();
    let fixed = cfg.fixed_gamma_for::<T>(c)?;
    let mut state = ChainState::initial(v, t, fixed.clone())?;
    let mut mh = GammaMh::new(c, cfg);
    let n_params = c * (c + 2);
    let mut draws = Vec::with_capacity(cfg.n_retained() * n_params);
    let mut buf = Vec::with_capacity(n_params);
    for iter in 0..cfg.total_sweeps() {
        state.b = update_b(&state, v, &mut rng)?;
        state.m = update_m(&state, t, hp, &mut rng)?;
        state.p = update_p(&state, hp, &mut rng)?;
        if fixed.is_none() {
            mh.step(&mut state.gamma, &[&state.m.log_m], hp, iter < cfg.n_burnin, &mut rng)?;
        }
        if cfg.retain(iter) {
            buf.clear();
            buf.extend_from_slice(state.p.as_slice());
            buf.extend_from_slice(state.m.m.as_slice());
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

/// Runs `cfg.n_chains` independent chains and pools their retained draws.
pub fn run_chain<T: Real>(
    v: &PredictionCounts,
    t: &TransferErrorMatrix,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
) -> Result<PosteriorSummary<T>> {
    check_inputs(v, t, hp, cfg)?;
    let c = t.n_classes();
    let chains = run_chains(cfg, |rng, chain| one_chain(v, t, hp, cfg, rng, chain))?;
    PosteriorSummary::from_chains(layout(c), chains, &diagnosed(c, cfg.fixed_gamma.is_none()))
}
