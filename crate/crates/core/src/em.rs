//! Posterior mode of `(p, M, gamma)` for the single-classifier model by EM.
//!
//! The E-step fills in expected allocation counts; the M-step maximises the
//! resulting complete-data log posterior in closed form for `M` and `p` and
//! by golden-section search for each shrinkage weight. Entries whose
//! closed-form numerator is not positive are held at a small floor, which
//! keeps every iterate interior so the objective stays finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::gamma_log_density;
use crate::model::{
    naive_estimate, smoothed_shrinkage, ClassProbs, Hyperparams, MisclassMatrix, PredictionCounts,
    TransferErrorMatrix,
};
use crate::num::Real;

const ASCENT_SLACK: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the relative change in the objective falls below this.
    pub tol: f64,
    /// Search interval for each shrinkage weight.
    pub gamma_bounds: (f64, f64),
    /// Width in `log gamma` at which the search stops.
    pub gamma_tol: f64,
    /// Lower bound for every entry of `M` and `p`.
    pub floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-8,
            gamma_bounds: (1e-4, 1e4),
            gamma_tol: 1e-9,
            floor: 1e-10,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.gamma_bounds;
        if !(self.tol > 0.0) || !(self.gamma_tol > 0.0) || !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::ParameterDomain(
                "EM needs tol > 0, gamma_tol > 0 and 0 < gamma_lo < gamma_hi".into(),
            ));
        }
        if !(self.floor > 0.0 && self.floor < 1e-3) {
            return Err(Error::ParameterDomain(format!("floor {} outside (0, 1e-3)", self.floor)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmState<T> {
    pub m: MisclassMatrix<T>,
    pub p: ClassProbs<T>,
    pub gamma: Vec<T>,
    /// Expected allocation counts, row-major `c x c`; column sums equal `v`.
    pub bhat: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    /// Objective at the start and after every iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Number of `M`/`p` entries held at the floor in the last M-step.
    pub floored: usize,
}

#[derive(Clone, Debug)]
pub struct EmFit<T> {
    pub state: EmState<T>,
    pub diagnostics: EmDiagnostics,
}

/// Maximiser of `sum_j a_j ln x_j` over the simplex with `x_j >= floor`.
///
/// Entries with `a_j <= 0` sit at the floor; the rest share the remaining
/// mass in proportion to `a_j`, repeating while any share drops below the
/// floor. Returns the point and how many entries were floored.
pub fn floored_simplex_max(a: &[f64], floor: f64) -> (Vec<f64>, usize) {
    let c = a.len();
    let mut fixed: Vec<bool> = a.iter().map(|&x| !(x > 0.0)).collect();
    if fixed.iter().all(|&f| f) {
        if a.iter().all(|&x| x == 0.0) {
            return (vec![1.0 / c as f64; c], 0);
        }
        // every numerator negative: the least negative takes the free mass
        let best = (0..c).fold(0, |b, j| if a[j] > a[b] { j } else { b });
        fixed[best] = false;
        let mut x = vec![floor; c];
        x[best] = 1.0 - (c - 1) as f64 * floor;
        return (x, c - 1);
    }
    loop {
        let n_fixed = fixed.iter().filter(|&&f| f).count();
        let mass = 1.0 - n_fixed as f64 * floor;
        let total: f64 = (0..c).filter(|&j| !fixed[j]).map(|j| a[j]).sum();
        let x: Vec<f64> = (0..c)
            .map(|j| if fixed[j] { floor } else { mass * a[j] / total })
            .collect();
        let mut changed = false;
        for j in 0..c {
            if !fixed[j] && x[j] < floor {
                fixed[j] = true;
                changed = true;
            }
        }
        if !changed {
            return (x, n_fixed);
        }
    }
}

/// Golden-section search for the maximiser of a unimodal `f` on `[lo, hi]`.
/// Returns the best point evaluated and its value.
pub fn golden_section_max(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

fn check_inputs<T: Real>(v: &PredictionCounts, t: &TransferErrorMatrix, hp: &Hyperparams<T>, cfg: &EmConfig) -> Result<()> {
    hp.validate()?;
    cfg.validate()?;
    let c = t.n_classes();
    if c < 2 || v.n_classes() != c {
        return Err(Error::Shape(format!(
            "prediction counts have {} classes, transfer matrix has {c}",
            v.n_classes()
        )));
    }
    Ok(())
}

/// `bhat_ij = v_j m_ij p_i / q_j`.
pub fn e_step<T: Real>(state: &EmState<T>, v: &PredictionCounts) -> Result<Vec<T>> {
    let c = state.p.len();
    let mut b = vec![T::zero(); c * c];
    for (j, &vj) in v.as_slice().iter().enumerate() {
        if vj == 0 {
            continue;
        }
        let q: T = (0..c).map(|i| state.m.get(i, j) * state.p[i]).sum();
        if !(q > T::zero()) {
            return Err(Error::DegenerateState(format!(
                "predicted class {j} has {vj} records but zero probability under the current state"
            )));
        }
        let scale = T::from_count(vj) / q;
        for i in 0..c {
            b[i * c + j] = state.m.get(i, j) * state.p[i] * scale;
        }
    }
    Ok(b)
}

/// Closed-form `M` and `p` from the expected counts in `state.bhat`, then
/// one golden-section search per shrinkage weight given the new `M`. A
/// weight only moves if that does not lower its objective.
pub fn m_step<T: Real>(
    state: &EmState<T>,
    t: &TransferErrorMatrix,
    hp: &Hyperparams<T>,
    cfg: &EmConfig,
) -> Result<(EmState<T>, usize)> {
    let c = state.p.len();
    let (eps, delta) = (hp.epsilon.f64(), hp.delta.f64());
    let mut floored = 0;
    let mut m = Vec::with_capacity(c * c);
    for i in 0..c {
        let g = state.gamma[i].f64();
        let a: Vec<f64> = (0..c)
            .map(|j| {
                let ident = if i == j { g } else { 0.0 };
                state.bhat[i * c + j].f64() + t.get(i, j) as f64 + g * eps + ident - 1.0
            })
            .collect();
        let (row, n) = floored_simplex_max(&a, cfg.floor);
        floored += n;
        m.extend(row.into_iter().map(T::lit));
    }
    let a: Vec<f64> = (0..c)
        .map(|i| (0..c).map(|j| state.bhat[i * c + j].f64()).sum::<f64>() + delta - 1.0)
        .collect();
    let (p, n) = floored_simplex_max(&a, cfg.floor);
    floored += n;

    let m = MisclassMatrix::new_unchecked(c, m);
    let hp64 = hp64(hp);
    let (lo, hi) = (cfg.gamma_bounds.0.ln(), cfg.gamma_bounds.1.ln());
    let mut gamma = state.gamma.clone();
    for (i, g) in gamma.iter_mut().enumerate() {
        let log_row: Vec<f64> = m.row(i).iter().map(|x| x.f64().ln()).collect();
        let f = |lg: f64| gamma_log_density(lg.exp(), i, &log_row, &hp64);
        let (best, fbest) = golden_section_max(f, lo, hi, cfg.gamma_tol);
        if fbest >= gamma_log_density(g.f64(), i, &log_row, &hp64) {
            *g = T::lit(best.exp());
        }
    }
    Ok((
        EmState {
            m,
            p: ClassProbs::new_unchecked(p.into_iter().map(T::lit).collect()),
            gamma,
            bhat: state.bhat.clone(),
        },
        floored,
    ))
}

fn hp64<T: Real>(hp: &Hyperparams<T>) -> Hyperparams<f64> {
    Hyperparams {
        epsilon: hp.epsilon.f64(),
        delta: hp.delta.f64(),
        alpha_gamma: hp.alpha_gamma.f64(),
        beta_gamma: hp.beta_gamma.f64(),
    }
}

/// Log posterior up to a constant: data term `sum_j v_j ln q_j`, the
/// labeled-data and Dirichlet-prior term for each row of `M`, the Dirichlet
/// prior on `p`, and each weight's normaliser and Gamma prior.
pub fn objective<T: Real>(state: &EmState<T>, v: &PredictionCounts, t: &TransferErrorMatrix, hp: &Hyperparams<T>) -> f64 {
    let c = state.p.len();
    let hp = hp64(hp);
    let p: Vec<f64> = state.p.as_slice().iter().map(|x| x.f64()).collect();
    let mut f = 0.0;
    for (j, &vj) in v.as_slice().iter().enumerate() {
        if vj > 0 {
            let q: f64 = (0..c).map(|i| state.m.get(i, j).f64() * p[i]).sum();
            f += vj as f64 * q.ln();
        }
    }
    for i in 0..c {
        let log_row: Vec<f64> = state.m.row(i).iter().map(|x| x.f64().ln()).collect();
        let g = state.gamma[i].f64();
        f += gamma_log_density(g, i, &log_row, &hp);
        for (j, lm) in log_row.iter().enumerate() {
            f += (t.get(i, j) as f64 - 1.0) * lm;
        }
    }
    f + (hp.delta - 1.0) * p.iter().map(|x| x.ln()).sum::<f64>()
}

/// Interior starting point: smoothed shrinkage `M`, naive `p` (uniform if
/// there are no predictions), unit weights, all pushed onto the floor.
pub fn initial_state<T: Real>(v: &PredictionCounts, t: &TransferErrorMatrix, hp: &Hyperparams<T>, cfg: &EmConfig) -> EmState<T> {
    let c = t.n_classes();
    let m0 = smoothed_shrinkage(t, T::one(), hp.epsilon);
    let mut m = Vec::with_capacity(c * c);
    for i in 0..c {
        let row: Vec<f64> = m0.row(i).iter().map(|x| x.f64()).collect();
        m.extend(floored_simplex_max(&row, cfg.floor).0.into_iter().map(T::lit));
    }
    let p0: Vec<f64> = match naive_estimate::<f64>(v) {
        Ok(p) => p.into_vec(),
        Err(_) => vec![1.0 / c as f64; c],
    };
    let p = floored_simplex_max(&p0, cfg.floor).0;
    EmState {
        m: MisclassMatrix::new_unchecked(c, m),
        p: ClassProbs::new_unchecked(p.into_iter().map(T::lit).collect()),
        gamma: vec![T::one(); c],
        bhat: vec![T::zero(); c * c],
    }
}

/// Iterates E- and M-steps until the relative change in the objective is
/// below `cfg.tol` or `cfg.max_iter` is reached. A decrease beyond rounding
/// aborts, since EM cannot legitimately go downhill.
pub fn run_em<T: Real>(
    v: &PredictionCounts,
    t: &TransferErrorMatrix,
    hp: &Hyperparams<T>,
    cfg: &EmConfig,
) -> Result<EmFit<T>> {
    check_inputs(v, t, hp, cfg)?;
    let mut state = initial_state(v, t, hp, cfg);
    let mut f = objective(&state, v, t, hp);
    let mut trace = vec![f];
    let mut converged = false;
    let mut floored = 0;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        state.bhat = e_step(&state, v)?;
        let (next, n) = m_step(&state, t, hp, cfg)?;
        let f_next = objective(&next, v, t, hp);
        iterations += 1;
        // rounding in the working precision bounds how flat "flat" can be
        let slack = ASCENT_SLACK.max(10.0 * T::epsilon().f64() * f.abs());
        if !(f_next >= f - slack) {
            return Err(Error::ObjectiveDecrease {
                iteration: iterations,
                before: f,
                after: f_next,
            });
        }
        let rel = (f_next - f).abs() / f.abs().max(1.0);
        state = next;
        floored = n;
        f = f_next;
        trace.push(f);
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    if floored > 0 {
        log::warn!("{floored} entries of M and p were held at the floor {}", cfg.floor);
    }
    Ok(EmFit {
        state,
        diagnostics: EmDiagnostics {
            iterations,
            objective: f,
            trace,
            converged,
            floored,
        },
    })
}
