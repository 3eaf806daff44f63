//! Class probabilities that vary with covariates.
//!
//! Each covariate pattern `g` gets its own `p_g = softmax(x_g' beta)` with
//! the last class as reference. The misclassification matrix is shared
//! across patterns. Coefficients are updated class by class through
//! Polya-Gamma augmentation, which makes each conditional Gaussian.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::distributions::{multinomial_weights_into, polya_gamma_int, std_normal};
use crate::error::{Error, Result};
use crate::gibbs::{draw_matrix_rows, push_draw, run_chains, ChainConfig, GammaMh, MatrixDraw};
use crate::model::{shrinkage_estimate, ClassProbs, Hyperparams, MisclassMatrix, PredictionCounts, TransferErrorMatrix};
use crate::num::Real;
use crate::rng::RngStream;
use crate::summary::{ChainOutput, ParamId, PosteriorSummary};

/// One row of regression terms per covariate pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    g: usize,
    d: usize,
    x: Vec<f64>,
    terms: Vec<String>,
}

impl DesignMatrix {
    pub fn new(g: usize, d: usize, x: Vec<f64>, terms: Vec<String>) -> Result<Self> {
        if g == 0 || d == 0 || x.len() != g * d || terms.len() != d {
            return Err(Error::Shape(format!(
                "design needs {g} x {d} finite entries and {d} term names"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("design matrix has non-finite entries".into()));
        }
        Ok(Self { g, d, x, terms })
    }

    /// A single pattern with only an intercept.
    pub fn intercept_only() -> Self {
        Self { g: 1, d: 1, x: vec![1.0], terms: vec!["intercept".into()] }
    }

    pub fn n_groups(&self) -> usize {
        self.g
    }

    pub fn n_terms(&self) -> usize {
        self.d
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.x[g * self.d..(g + 1) * self.d]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

/// Predicted-label counts per covariate pattern, `G x C` row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StratifiedCounts {
    g: usize,
    c: usize,
    v: Vec<u64>,
}

impl StratifiedCounts {
    pub fn new(g: usize, c: usize, v: Vec<u64>) -> Result<Self> {
        if v.len() != g * c {
            return Err(Error::Shape(format!("expected {} counts, got {}", g * c, v.len())));
        }
        Ok(Self { g, c, v })
    }

    /// Counts from `(group, predicted class)` pairs.
    pub fn from_records(g: usize, c: usize, records: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut v = vec![0u64; g * c];
        for (grp, j) in records {
            if grp >= g || j >= c {
                return Err(Error::Shape(format!("record ({grp}, {j}) outside {g} groups x {c} classes")));
            }
            v[grp * c + j] += 1;
        }
        Ok(Self { g, c, v })
    }

    pub fn n_groups(&self) -> usize {
        self.g
    }

    pub fn n_classes(&self) -> usize {
        self.c
    }

    pub fn group(&self, g: usize) -> &[u64] {
        &self.v[g * self.c..(g + 1) * self.c]
    }

    pub fn group_sizes(&self) -> Vec<u64> {
        (0..self.g).map(|g| self.group(g).iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.v.iter().sum()
    }

    /// Counts summed over patterns.
    pub fn pooled(&self) -> PredictionCounts {
        let mut v = vec![0u64; self.c];
        for g in 0..self.g {
            for (a, b) in v.iter_mut().zip(self.group(g)) {
                *a += b;
            }
        }
        PredictionCounts::new(v)
    }
}

/// Builds a design matrix from raw covariate columns and maps each record
/// to its pattern. Columns whose values all parse as numbers enter as is;
/// any other column is dummy coded against its first level in sorted order.
/// An intercept comes first. Patterns are numbered in sorted order of their
/// raw values.
pub fn group_covariates<S: AsRef<str>>(names: &[S], rows: &[Vec<String>]) -> Result<(DesignMatrix, Vec<usize>)> {
    let p = names.len();
    if rows.is_empty() {
        return Err(Error::EmptyData("no covariate rows".into()));
    }
    if let Some(r) = rows.iter().position(|r| r.len() != p) {
        return Err(Error::Input(format!("covariate row {} has the wrong number of fields", r + 1)));
    }
    enum Col {
        Numeric,
        Levels(Vec<String>),
    }
    let cols: Vec<Col> = (0..p)
        .map(|k| {
            if rows.iter().all(|r| r[k].trim().parse::<f64>().is_ok_and(f64::is_finite)) {
                Col::Numeric
            } else {
                let mut l: Vec<String> = rows.iter().map(|r| r[k].clone()).collect();
                l.sort();
                l.dedup();
                Col::Levels(l)
            }
        })
        .collect();
    let mut terms = vec!["intercept".to_string()];
    for (name, col) in names.iter().zip(&cols) {
        match col {
            Col::Numeric => terms.push(name.as_ref().to_string()),
            Col::Levels(l) => terms.extend(l[1..].iter().map(|lv| format!("{}={lv}", name.as_ref()))),
        }
    }
    let mut patterns: BTreeMap<&[String], usize> = BTreeMap::new();
    for r in rows {
        patterns.insert(r.as_slice(), 0);
    }
    for (i, idx) in patterns.values_mut().enumerate() {
        *idx = i;
    }
    let d = terms.len();
    let mut x = Vec::with_capacity(patterns.len() * d);
    for key in patterns.keys() {
        x.push(1.0);
        for (k, col) in cols.iter().enumerate() {
            match col {
                Col::Numeric => x.push(key[k].trim().parse::<f64>().unwrap()),
                Col::Levels(l) => x.extend(l[1..].iter().map(|lv| if *lv == key[k] { 1.0 } else { 0.0 })),
            }
        }
    }
    let groups = rows.iter().map(|r| patterns[r.as_slice()]).collect();
    Ok((DesignMatrix::new(patterns.len(), d, x, terms)?, groups))
}

/// Gaussian prior on each non-reference class's coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionPrior {
    /// Per class, length `D`.
    pub means: Vec<Vec<f64>>,
    /// Per class, `D x D` row-major.
    pub covariances: Vec<Vec<f64>>,
}

impl RegressionPrior {
    /// Mean zero, covariance `variance * I` for every class.
    pub fn isotropic(d: usize, n_classes: usize, variance: f64) -> Self {
        let mut cov = vec![0.0; d * d];
        for r in 0..d {
            cov[r * d + r] = variance;
        }
        Self {
            means: vec![vec![0.0; d]; n_classes - 1],
            covariances: vec![cov; n_classes - 1],
        }
    }
}

/// `D x (C-1)` coefficients, class-major; the reference class is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionCoefficients {
    pub d: usize,
    pub beta: Vec<f64>,
}

impl RegressionCoefficients {
    pub fn zeros(d: usize, c: usize) -> Self {
        Self { d, beta: vec![0.0; d * (c - 1)] }
    }

    pub fn class(&self, i: usize) -> &[f64] {
        &self.beta[i * self.d..(i + 1) * self.d]
    }

    /// Linear predictors of every class for one covariate row, reference last.
    fn eta(&self, x: &[f64]) -> Vec<f64> {
        let n = self.beta.len() / self.d;
        let mut e: Vec<f64> = (0..n).map(|i| dot(self.class(i), x)).collect();
        e.push(0.0);
        e
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax of the linear predictors, with the reference class fixed at zero.
pub fn softmax_probs<T: Real>(beta: &RegressionCoefficients, x: &[f64]) -> ClassProbs<T> {
    let eta = beta.eta(x);
    let hi = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - hi).exp()).collect();
    let s: f64 = w.iter().sum();
    ClassProbs::new_unchecked(w.into_iter().map(|x| T::lit(x / s)).collect())
}

#[derive(Clone, Debug)]
pub struct CovariateState<T> {
    pub p_groups: Vec<ClassProbs<T>>,
    pub m: MatrixDraw<T>,
    pub gamma: Vec<T>,
    pub beta: RegressionCoefficients,
    /// `G x (C-1)`, group-major.
    pub omega: Vec<f64>,
    /// `G x C x C`: per group, true-class-major allocation counts.
    pub b: Vec<u64>,
}

/// Per group, splits each predicted-class count across true classes with
/// probabilities proportional to `m_ij * p_gi`.
pub fn update_b_stratified<T: Real>(
    p_groups: &[ClassProbs<T>],
    counts: &StratifiedCounts,
    m: &MisclassMatrix<T>,
    rng: &mut RngStream,
) -> Result<Vec<u64>> {
    let c = counts.n_classes();
    let mut b = vec![0u64; counts.n_groups() * c * c];
    let mut w = vec![0.0; c];
    let mut col = vec![0u64; c];
    for (g, p) in p_groups.iter().enumerate() {
        for (j, &vj) in counts.group(g).iter().enumerate() {
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
                    "group {g}, predicted class {j}: zero probability under the current state"
                )));
            }
            multinomial_weights_into(vj, &w, total, &mut col, rng);
            for i in 0..c {
                b[(g * c + i) * c + j] = col[i];
            }
        }
    }
    Ok(b)
}

/// Misclassification rows given allocation counts summed over groups.
pub fn update_m_stratified<T: Real>(
    b: &[u64],
    c: usize,
    gamma: &[T],
    t: &TransferErrorMatrix,
    hp: &Hyperparams<T>,
    rng: &mut RngStream,
) -> Result<MatrixDraw<T>> {
    let mut pooled = vec![0u64; c * c];
    for chunk in b.chunks(c * c) {
        for (a, x) in pooled.iter_mut().zip(chunk) {
            *a += x;
        }
    }
    draw_matrix_rows(&pooled, t, gamma, hp.epsilon, rng)
}

/// Prior precision and precision-weighted mean per class, computed once
/// per run.
pub struct PriorTerms {
    precision: Vec<DMatrix<f64>>,
    shift: Vec<DVector<f64>>,
}

impl PriorTerms {
    pub fn new(prior: &RegressionPrior, d: usize, c: usize) -> Result<Self> {
        if prior.means.len() != c - 1 || prior.covariances.len() != c - 1 {
            return Err(Error::Shape(format!("prior needs {} classes", c - 1)));
        }
        let mut precision = Vec::with_capacity(c - 1);
        let mut shift = Vec::with_capacity(c - 1);
        for (m0, w0) in prior.means.iter().zip(&prior.covariances) {
            if m0.len() != d || w0.len() != d * d {
                return Err(Error::Shape(format!("prior mean/covariance must be {d} / {d}x{d}")));
            }
            let w0 = DMatrix::from_row_slice(d, d, w0);
            let chol = Cholesky::new(w0).ok_or_else(|| {
                Error::NotPositiveDefinite("prior covariance is not positive definite".into())
            })?;
            let inv = chol.inverse();
            shift.push(&inv * DVector::from_column_slice(m0));
            precision.push(inv);
        }
        Ok(Self { precision, shift })
    }
}

/// For each non-reference class in turn: draw `omega_gi ~ PG(n_g, eta_gi -
/// c_gi)`, then `beta_i` from its Gaussian conditional. `c_gi` is the
/// log-sum-exp of the other classes' predictors under the current `beta`.
pub fn update_omega_beta(
    beta: &mut RegressionCoefficients,
    omega: &mut [f64],
    b: &[u64],
    counts: &StratifiedCounts,
    design: &DesignMatrix,
    prior: &PriorTerms,
    rng: &mut RngStream,
) -> Result<()> {
    let (g_n, c, d) = (design.n_groups(), counts.n_classes(), design.n_terms());
    let sizes = counts.group_sizes();
    // allocated counts per group and true class
    let mut alloc = vec![0u64; g_n * c];
    for g in 0..g_n {
        for i in 0..c {
            alloc[g * c + i] = b[(g * c + i) * c..(g * c + i + 1) * c].iter().sum();
        }
    }
    let mut offs = vec![0.0; g_n];
    for i in 0..c - 1 {
        let mut prec = prior.precision[i].clone();
        let mut rhs = prior.shift[i].clone();
        for g in 0..g_n {
            let x = design.row(g);
            let eta = beta.eta(x);
            let hi = eta
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, &e)| e)
                .fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = eta.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, e)| (e - hi).exp()).sum();
            offs[g] = hi + s.ln();
            let w = if sizes[g] == 0 {
                0.0
            } else {
                polya_gamma_int(sizes[g], eta[i] - offs[g], rng)
            };
            omega[g * (c - 1) + i] = w;
            let kappa = alloc[g * c + i] as f64 - 0.5 * sizes[g] as f64;
            let z = kappa + w * offs[g];
            for r in 0..d {
                rhs[r] += x[r] * z;
                for s in 0..d {
                    prec[(r, s)] += w * x[r] * x[s];
                }
            }
        }
        let chol = Cholesky::new(prec).ok_or_else(|| {
            Error::NotPositiveDefinite(format!("coefficient precision for class {i} is not positive definite"))
        })?;
        let mean = chol.solve(&rhs);
        let z = DVector::from_fn(d, |_, _| std_normal(rng));
        // L L' = precision, so L'^{-1} z has covariance precision^{-1}
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
        let draw = mean + noise;
        beta.beta[i * d..(i + 1) * d].copy_from_slice(draw.as_slice());
    }
    Ok(())
}

fn check_inputs<T: Real>(
    counts: &StratifiedCounts,
    design: &DesignMatrix,
    t: &TransferErrorMatrix,
    hp: &Hyperparams<T>,
    cfg: &ChainConfig,
) -> Result<()> {
    hp.validate()?;
    cfg.validate()?;
    let c = t.n_classes();
    if c < 2 || counts.n_classes() != c || counts.n_groups() != design.n_groups() {
        return Err(Error::Shape(format!(
            "counts are {} x {}, design has {} groups, transfer matrix has {c} classes",
            counts.n_groups(),
            counts.n_classes(),
            design.n_groups()
        )));
    }
    if counts.total() == 0 {
        return Err(Error::EmptyData("no unlabeled predictions".into()));
    }
    Ok(())
}

/// `p` (marginal), `m`, `gamma`, `beta` (term x class), then `p_group`
/// (group x class).
pub fn layout(c: usize, d: usize, g: usize) -> Vec<ParamId> {
    let mut l: Vec<ParamId> = (0..c).map(|i| ParamId::vector("p", i)).collect();
    for i in 0..c {
        l.extend((0..c).map(|j| ParamId::matrix("m", i, j)));
    }
    l.extend((0..c).map(|i| ParamId::vector("gamma", i)));
    for r in 0..d {
        l.extend((0..c - 1).map(|i| ParamId::matrix("beta", r, i)));
    }
    for grp in 0..g {
        l.extend((0..c).map(|i| ParamId::matrix("p_group", grp, i)));
    }
    l
}

fn one_chain<T: Real>(
    counts: &StratifiedCounts,
    design: &DesignMatrix,
    t: &TransferErrorMatrix,
    hp: &Hyperparams<T>,
    prior: &PriorTerms,
    cfg: &ChainConfig,
    mut rng: RngStream,
    chain: usize,
) -> Result<ChainOutput<T>> {
    let (c, d, g_n) = (t.n_classes(), design.n_terms(), design.n_groups());
    let fixed = cfg.fixed_gamma_for::<T>(c)?;
    let gamma = fixed.clone().unwrap_or_else(|| vec![T::one(); c]);
    let beta = RegressionCoefficients::zeros(d, c);
    let mut state = CovariateState {
        p_groups: (0..g_n).map(|g| softmax_probs(&beta, design.row(g))).collect(),
        m: MatrixDraw::from_matrix(shrinkage_estimate(t, &gamma)?),
        gamma,
        beta,
        omega: vec![0.0; g_n * (c - 1)],
        b: Vec::new(),
    };
    let weights: Vec<T> = counts
        .group_sizes()
        .iter()
        .map(|&n| T::lit(n as f64 / counts.total() as f64))
        .collect();
    let mut mh = GammaMh::new(c, cfg);
    let n_params = c + c * c + c + d * (c - 1) + g_n * c;
    let mut draws = Vec::with_capacity(cfg.n_retained() * n_params);
    let mut buf = Vec::with_capacity(n_params);
    for iter in 0..cfg.total_sweeps() {
        state.b = update_b_stratified(&state.p_groups, counts, &state.m.m, &mut rng)?;
        state.m = update_m_stratified(&state.b, c, &state.gamma, t, hp, &mut rng)?;
        update_omega_beta(&mut state.beta, &mut state.omega, &state.b, counts, design, prior, &mut rng)?;
        state.p_groups = (0..g_n).map(|g| softmax_probs(&state.beta, design.row(g))).collect();
        if fixed.is_none() {
            mh.step(&mut state.gamma, &[&state.m.log_m], hp, iter < cfg.n_burnin, &mut rng)?;
        }
        if cfg.retain(iter) {
            buf.clear();
            buf.extend((0..c).map(|i| {
                state
                    .p_groups
                    .iter()
                    .zip(&weights)
                    .map(|(p, &w)| w * p[i])
                    .sum::<T>()
            }));
            buf.extend_from_slice(state.m.m.as_slice());
            buf.extend_from_slice(&state.gamma);
            for r in 0..d {
                buf.extend((0..c - 1).map(|i| T::lit(state.beta.beta[i * d + r])));
            }
            for p in &state.p_groups {
                buf.extend_from_slice(p.as_slice());
            }
            push_draw(&mut draws, &buf, chain, iter)?;
        }
    }
    Ok(ChainOutput { n_params, draws, acceptance: mh.rates() })
}

/// Runs the covariate model. Marginal `p` is the group-size-weighted
/// average of the per-group probabilities, computed draw by draw.
pub fn run_covariate_chain<T: Real>(
    counts: &StratifiedCounts,
    design: &DesignMatrix,
    t: &TransferErrorMatrix,
    hp: &Hyperparams<T>,
    prior: &RegressionPrior,
    cfg: &ChainConfig,
) -> Result<PosteriorSummary<T>> {
    check_inputs(counts, design, t, hp, cfg)?;
    let (c, d, g) = (t.n_classes(), design.n_terms(), design.n_groups());
    let prior = PriorTerms::new(prior, d, c)?;
    let chains = run_chains(cfg, |rng, chain| one_chain(counts, design, t, hp, &prior, cfg, rng, chain))?;
    let mut diag: Vec<(usize, bool)> = (0..c).map(|i| (i, false)).collect();
    if cfg.fixed_gamma.is_none() {
        diag.extend((0..c).map(|i| (c + c * c + i, true)));
    }
    PosteriorSummary::from_chains(layout(c, d, g), chains, &diag)
}
