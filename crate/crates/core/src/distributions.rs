//! Random-variate kernel used by every sampler.
//!
//! Gamma variates are produced on the log scale so Dirichlet components with
//! tiny concentration (the `gamma * epsilon` smoothing terms) keep a finite
//! logarithm instead of underflowing to zero.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ClassProbs;
use crate::num::{log_sum_exp, Real};
use crate::rng::RngStream;

#[inline]
pub(crate) fn std_normal(rng: &mut RngStream) -> f64 {
    rng.sample(StandardNormal)
}

#[inline]
fn std_exp(rng: &mut RngStream) -> f64 {
    rng.sample(Exp1)
}

/// Log of a Gamma(shape, 1) variate. Marsaglia–Tsang squeeze; shapes below
/// one are boosted through `G(a) = G(a + 1) * U^(1/a)`.
pub(crate) fn log_gamma_unit(shape: f64, rng: &mut RngStream) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let boost = rng.open01().ln() / shape;
        return log_gamma_unit(shape + 1.0, rng) + boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = std_normal(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = rng.open01();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

/// Gamma draw with shape/rate parameterisation.
pub fn draw_gamma<T: Real>(shape: T, rate: T, rng: &mut RngStream) -> Result<T> {
    if !(shape > T::zero() && rate > T::zero()) || !shape.is_finite() || !rate.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "gamma needs positive shape and rate, got shape={shape}, rate={rate}"
        )));
    }
    let x = (log_gamma_unit(shape.f64(), rng) - rate.f64().ln()).exp();
    Ok(T::lit(x.max(f64::MIN_POSITIVE)))
}

fn check_alpha<T: Real>(alpha: &[T]) -> Result<()> {
    if alpha.is_empty() {
        return Err(Error::ParameterDomain("empty Dirichlet parameter".into()));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > T::zero()) || !a.is_finite()) {
        return Err(Error::ParameterDomain(format!(
            "Dirichlet parameters must be positive and finite, got {a}"
        )));
    }
    Ok(())
}

/// Writes the log of a Dirichlet(alpha) draw into `out`.
pub(crate) fn log_dirichlet_into<T: Real>(alpha: &[T], out: &mut [T], rng: &mut RngStream) -> Result<()> {
    check_alpha(alpha)?;
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = T::lit(log_gamma_unit(a.f64(), rng));
    }
    let lse = log_sum_exp(out);
    for o in out.iter_mut() {
        *o -= lse;
    }
    Ok(())
}

/// Log of a Dirichlet draw; each entry is finite even when its probability
/// underflows.
pub fn draw_log_dirichlet<T: Real>(alpha: &[T], rng: &mut RngStream) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); alpha.len()];
    log_dirichlet_into(alpha, &mut out, rng)?;
    Ok(out)
}

pub fn draw_dirichlet<T: Real>(alpha: &[T], rng: &mut RngStream) -> Result<ClassProbs<T>> {
    let mut out = draw_log_dirichlet(alpha, rng)?;
    for o in out.iter_mut() {
        *o = o.exp();
    }
    // exp of a normalised log vector can be off by a few ulps
    let s: T = out.iter().copied().sum();
    for o in out.iter_mut() {
        *o /= s;
    }
    Ok(ClassProbs::new_unchecked(out))
}

/// Multinomial counts from non-negative weights with known positive total.
/// Sequential conditional binomials.
pub(crate) fn multinomial_weights_into(
    n: u64,
    weights: &[f64],
    total: f64,
    out: &mut [u64],
    rng: &mut RngStream,
) {
    let k = weights.len();
    let mut remaining = n;
    let mut mass = total;
    for i in 0..k {
        if remaining == 0 {
            out[i..].iter_mut().for_each(|o| *o = 0);
            return;
        }
        if i == k - 1 {
            out[i] = remaining;
            return;
        }
        let p = if mass > 0.0 {
            (weights[i] / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let x = if p >= 1.0 {
            remaining
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(remaining, p)
                .expect("binomial probability in [0, 1]")
                .sample(rng)
        };
        out[i] = x;
        remaining -= x;
        mass -= weights[i];
    }
}

pub fn draw_multinomial<T: Real>(n: u64, probs: &[T], rng: &mut RngStream) -> Result<Vec<u64>> {
    if probs.is_empty() {
        return Err(Error::ParameterDomain("empty probability vector".into()));
    }
    let w: Vec<f64> = probs.iter().map(|p| p.f64()).collect();
    if w.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::ParameterDomain("probabilities must be non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > T::SIMPLEX_TOL {
        return Err(Error::ParameterDomain(format!(
            "multinomial probabilities sum to {total}, not 1"
        )));
    }
    let mut out = vec![0; probs.len()];
    multinomial_weights_into(n, &w, total, &mut out, rng);
    Ok(out)
}

/// Index drawn from unnormalised weights.
pub(crate) fn categorical(weights: &[f64], total: f64, rng: &mut RngStream) -> usize {
    let u = rng.open01() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Parameters of PG(b, c).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolyaGammaParams<T> {
    pub b: T,
    pub c: T,
}

const PG_TRUNC: f64 = 0.64;
const PI: f64 = std::f64::consts::PI;

fn ln_norm_cdf(x: f64) -> f64 {
    (0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Coefficient of the alternating series for the J*(1, z) density.
fn pg_series_coef(n: u32, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > PG_TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

/// Probability of choosing the truncated-exponential proposal piece.
fn pg_mass_texpon(z: f64) -> f64 {
    let t = PG_TRUNC;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse-Gaussian(1/z, 1) draw truncated to (0, PG_TRUNC).
fn pg_truncated_inv_gauss(z: f64, rng: &mut RngStream) -> f64 {
    let t = PG_TRUNC;
    let mut x = t + 1.0;
    if 1.0 / t > z {
        // mean beyond truncation point: chi-square style proposal
        let mut alpha = 0.0;
        while rng.open01() > alpha {
            let mut e1 = std_exp(rng);
            let mut e2 = std_exp(rng);
            while e1 * e1 > 2.0 * e2 / t {
                e1 = std_exp(rng);
                e2 = std_exp(rng);
            }
            x = 1.0 + e1 * t;
            x = t / (x * x);
            alpha = (-0.5 * z * z * x).exp();
        }
    } else {
        let mu = 1.0 / z;
        while x > t {
            let y = std_normal(rng);
            let y = y * y;
            let half_mu = 0.5 * mu;
            let mu_y = mu * y;
            x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.open01() > mu / (mu + x) {
                x = mu * mu / x;
            }
        }
    }
    x
}

/// Exact PG(1, c) draw by Devroye-style alternating-series rejection.
pub(crate) fn polya_gamma_one(c: f64, rng: &mut RngStream) -> f64 {
    let z = 0.5 * c.abs();
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let mass = pg_mass_texpon(z);
    loop {
        let x = if rng.open01() < mass {
            PG_TRUNC + std_exp(rng) / fz
        } else {
            pg_truncated_inv_gauss(z, rng)
        };
        let mut s = pg_series_coef(0, x);
        let y = rng.open01() * s;
        let mut n = 0u32;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= pg_series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += pg_series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Above this shape a PG(b, c) draw is a moment-matched normal; the sum of
/// that many independent PG(1, c) terms is already very close to Gaussian.
const PG_NORMAL_ABOVE: u64 = 256;

/// Sum of `b` independent PG(1, c) draws, or its normal approximation for
/// large `b`.
pub(crate) fn polya_gamma_int(b: u64, c: f64, rng: &mut RngStream) -> f64 {
    if b > PG_NORMAL_ABOVE {
        let (m, v) = (polya_gamma_mean(b as f64, c), polya_gamma_var(b as f64, c));
        return (m + v.sqrt() * std_normal(rng)).max(f64::MIN_POSITIVE);
    }
    (0..b).map(|_| polya_gamma_one(c, rng)).sum()
}

/// PG(b, c) for positive integer `b`. Exact up to `b = 256`, moment-matched
/// normal beyond.
pub fn draw_polya_gamma<T: Real>(params: PolyaGammaParams<T>, rng: &mut RngStream) -> Result<T> {
    let b = params.b.f64();
    if !(b > 0.0) || b.fract() != 0.0 || !params.c.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "Polya-Gamma needs a positive integer shape and finite tilt, got b={}, c={}",
            params.b, params.c
        )));
    }
    Ok(T::lit(polya_gamma_int(b as u64, params.c.f64(), rng)))
}

/// `E[PG(b, c)] = b / (2c) * tanh(c / 2)`, with limit `b / 4` at zero.
pub fn polya_gamma_mean(b: f64, c: f64) -> f64 {
    if c.abs() < 1e-8 {
        b / 4.0
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}

/// `Var[PG(b, c)] = b (sinh c - c) / (4 c^3 cosh^2(c / 2))`, limit `b / 24`.
pub fn polya_gamma_var(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-2 {
        // the closed form cancels badly near zero
        let c2 = c * c;
        b * (1.0 / 24.0 - c2 / 120.0 + 17.0 * c2 * c2 / 13440.0)
    } else {
        let ch = (0.5 * c).cosh();
        b * (c.sinh() - c) / (4.0 * c.powi(3) * ch * ch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MhStep<T> {
    pub value: T,
    pub accepted: bool,
}

/// One random-walk Metropolis step on the log scale for a positive scalar.
/// The acceptance ratio carries the `proposal / current` Jacobian of the
/// log-normal proposal.
pub fn mh_lognormal_step<T, F>(
    current: T,
    log_target: F,
    proposal_sd: T,
    rng: &mut RngStream,
) -> Result<MhStep<T>>
where
    T: Real,
    F: Fn(T) -> T,
{
    if !(current > T::zero()) {
        return Err(Error::InvalidState(format!(
            "MH state must be positive, got {current}"
        )));
    }
    let here = log_target(current);
    if here.is_nan() {
        return Err(Error::InvalidState(format!(
            "log target is NaN at {current}"
        )));
    }
    if proposal_sd == T::zero() {
        return Ok(MhStep {
            value: current,
            accepted: false,
        });
    }
    let step = proposal_sd.f64() * std_normal(rng);
    let proposal = T::lit(current.f64() * step.exp());
    let u = rng.open01().ln();
    if !(proposal > T::zero()) || !proposal.is_finite() {
        return Ok(MhStep {
            value: current,
            accepted: false,
        });
    }
    let there = log_target(proposal);
    let log_ratio = (there - here).f64() + step;
    if there.is_finite() && u < log_ratio {
        Ok(MhStep {
            value: proposal,
            accepted: true,
        })
    } else {
        Ok(MhStep {
            value: current,
            accepted: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_of(draws: &[Vec<f64>]) -> Vec<f64> {
        let k = draws[0].len();
        let n = draws.len() as f64;
        (0..k).map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / n).collect()
    }

    #[test]
    fn dirichlet_flat_mean() {
        let mut rng = RngStream::new(11, 0);
        let draws: Vec<Vec<f64>> = (0..100_000)
            .map(|_| draw_dirichlet(&[1.0f64; 4], &mut rng).unwrap().into_vec())
            .collect();
        for d in &draws {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for m in mean_of(&draws) {
            assert!((m - 0.25).abs() < 0.005, "{m}");
        }
    }

    #[test]
    fn dirichlet_concentrated_mean() {
        let mut rng = RngStream::new(12, 0);
        let draws: Vec<Vec<f64>> = (0..100_000)
            .map(|_| draw_dirichlet(&[100.0f64, 200.0, 300.0, 400.0], &mut rng).unwrap().into_vec())
            .collect();
        for (m, e) in mean_of(&draws).into_iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((m - e).abs() < 0.01);
        }
    }

    #[test]
    fn dirichlet_tiny_components() {
        let mut rng = RngStream::new(13, 0);
        let mut first = 0.0;
        for _ in 0..100_000 {
            let logs = draw_log_dirichlet(&[10.0f64, 1e-6, 1e-6, 1e-6], &mut rng).unwrap();
            assert!(logs.iter().all(|l| l.is_finite()));
            first += logs[0].exp();
        }
        assert!(first / 100_000.0 > 0.999);
    }

    #[test]
    fn dirichlet_rejects_bad_alpha() {
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(
            draw_dirichlet(&[1.0f64, 0.0], &mut rng),
            Err(Error::ParameterDomain(_))
        ));
        assert!(draw_dirichlet(&[1.0f64, -1.0], &mut rng).is_err());
    }

    #[test]
    fn multinomial_examples() {
        let mut rng = RngStream::new(21, 0);
        assert_eq!(draw_multinomial(0, &[0.1f64, 0.2, 0.3, 0.4], &mut rng).unwrap(), vec![0; 4]);
        assert_eq!(
            draw_multinomial(7, &[0.0f64, 1.0, 0.0, 0.0], &mut rng).unwrap(),
            vec![0, 7, 0, 0]
        );
        let x = draw_multinomial(100_000, &[0.1f64, 0.2, 0.3, 0.4], &mut rng).unwrap();
        assert_eq!(x.iter().sum::<u64>(), 100_000);
        for (c, p) in x.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((*c as f64 / 1e5 - p).abs() < 0.01);
        }
        assert!(draw_multinomial(3, &[0.5f64, 0.4], &mut rng).is_err());
    }

    #[test]
    fn gamma_means() {
        let mut rng = RngStream::new(31, 0);
        let n = 100_000;
        let m1: f64 = (0..n).map(|_| draw_gamma(1.0f64, 1.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((m1 - 1.0).abs() < 0.02, "{m1}");
        let m2: f64 = (0..n).map(|_| draw_gamma(2.0f64, 4.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((m2 - 0.5).abs() < 0.01, "{m2}");
        let m3: f64 = (0..n).map(|_| draw_gamma(0.3f64, 1.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((m3 - 0.3).abs() < 0.01, "{m3}");
        assert!(draw_gamma(0.0f64, 1.0, &mut rng).is_err());
        assert!(draw_gamma(1.0f64, -1.0, &mut rng).is_err());
    }

    #[test]
    fn polya_gamma_means() {
        let mut rng = RngStream::new(41, 0);
        let n = 100_000;
        for (b, c) in [(1.0, 0.0), (2.0, 0.0), (1.0, 3.0)] {
            let m: f64 = (0..n)
                .map(|_| draw_polya_gamma(PolyaGammaParams { b, c }, &mut rng).unwrap())
                .sum::<f64>()
                / n as f64;
            let e = polya_gamma_mean(b, c);
            assert!(((m - e) / e).abs() < 0.01, "b={b} c={c}: {m} vs {e}");
        }
        assert!((polya_gamma_mean(1.0, 3.0) - 0.150858).abs() < 1e-6);
        assert!(draw_polya_gamma(PolyaGammaParams { b: 0.0, c: 1.0 }, &mut rng).is_err());
        assert!(draw_polya_gamma(PolyaGammaParams { b: 1.5, c: 1.0 }, &mut rng).is_err());
    }

    #[test]
    fn polya_gamma_variance() {
        let mut rng = RngStream::new(42, 0);
        let n = 200_000;
        for c in [0.0, 2.0] {
            let xs: Vec<f64> = (0..n).map(|_| polya_gamma_one(c, &mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let e = polya_gamma_var(1.0, c);
            assert!(((v - e) / e).abs() < 0.03, "c={c}: {v} vs {e}");
        }
        // reference values from 50-digit arithmetic
        assert!((polya_gamma_var(1.0, 1e-2) - 0.041665833345981966).abs() < 1e-12);
        assert!((polya_gamma_var(1.0, 1e-3) - 0.041_666_658_333_334_6).abs() < 1e-15);
        let big: f64 = (0..2000).map(|_| polya_gamma_int(1000, 1.0, &mut rng)).sum::<f64>() / 2000.0;
        assert!(((big - polya_gamma_mean(1000.0, 1.0)) / big).abs() < 0.005);
    }

    #[test]
    fn mh_zero_sd_is_identity() {
        let mut rng = RngStream::new(51, 0);
        let s = mh_lognormal_step(2.5f64, |x| -x, 0.0, &mut rng).unwrap();
        assert_eq!(s.value, 2.5);
        assert!(!s.accepted);
    }

    #[test]
    fn mh_refuses_impossible_proposals() {
        let mut rng = RngStream::new(52, 0);
        let mut x = 1.0f64;
        for _ in 0..1000 {
            x = mh_lognormal_step(x, |y| if y == 1.0 { 0.0 } else { f64::NEG_INFINITY }, 0.5, &mut rng)
                .unwrap()
                .value;
        }
        assert_eq!(x, 1.0);
    }

    #[test]
    fn mh_nan_target_is_an_error() {
        let mut rng = RngStream::new(53, 0);
        assert!(matches!(
            mh_lognormal_step(1.0f64, |_| f64::NAN, 0.5, &mut rng),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn mh_gamma_target_moments() {
        // Gamma(2, 1): mean 2, variance 2
        let mut rng = RngStream::new(54, 0);
        let mut x = 1.0f64;
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            x = mh_lognormal_step(x, |y: f64| y.ln() - y, 0.8, &mut rng).unwrap().value;
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "{mean}");
        assert!((var - 2.0).abs() / 2.0 < 0.05, "{var}");
    }
}
