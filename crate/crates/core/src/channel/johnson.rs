//! Johnson S_U distribution: sampling, moments, and maximum-likelihood fit.
//!
//! X = xi + lambda * sinh((Z - gamma) / delta) with Z standard normal. The
//! four parameters give an unbounded, skewed, heavy-tailed family that models
//! ranging error well. Fitting uses a quantile-matching initialization
//! (Slifker-Shapiro construction) refined by Nelder-Mead on the exact
//! log-likelihood.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JohnsonSuParams {
    /// Shape (skew); negative values skew right.
    pub gamma: f64,
    /// Shape (tail weight); must be > 0.
    pub delta: f64,
    /// Location (meters in this crate's use).
    pub xi: f64,
    /// Scale (meters); must be > 0.
    pub lambda: f64,
}

impl JohnsonSuParams {
    pub fn new(gamma: f64, delta: f64, xi: f64, lambda: f64) -> Result<Self> {
        let p = JohnsonSuParams { gamma, delta, xi, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma.is_finite()
            && self.delta.is_finite()
            && self.xi.is_finite()
            && self.lambda.is_finite()
            && self.delta > 0.0
            && self.lambda > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid Johnson S_U parameters {self:?}")))
        }
    }

    /// Closed-form mean: xi - lambda * exp(delta^-2 / 2) * sinh(gamma / delta).
    pub fn mean(&self) -> f64 {
        self.xi - self.lambda * (0.5 / (self.delta * self.delta)).exp() * (self.gamma / self.delta).sinh()
    }

    /// P(X <= x) via the defining normal transform.
    pub fn cdf(&self, x: f64) -> f64 {
        let z = self.gamma + self.delta * ((x - self.xi) / self.lambda).asinh();
        std_normal().cdf(z)
    }

    /// Quantile function (inverse cdf).
    pub fn quantile(&self, p: f64) -> f64 {
        let z = std_normal().inverse_cdf(p);
        self.xi + self.lambda * ((z - self.gamma) / self.delta).sinh()
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is always valid")
}

/// One draw: xi + lambda * sinh((z - gamma) / delta), z ~ N(0, 1).
pub fn sample_johnson_su<R: Rng + ?Sized>(params: &JohnsonSuParams, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    params.xi + params.lambda * ((z - params.gamma) / params.delta).sinh()
}

/// Average negative log-likelihood of `samples` under `params`.
///
/// ln f(x) = ln delta - ln lambda - ln sqrt(2 pi) - 0.5 ln(1 + u^2) - 0.5 z^2
/// with u = (x - xi)/lambda and z = gamma + delta asinh(u).
pub fn neg_log_likelihood(params: &JohnsonSuParams, samples: &[f64]) -> f64 {
    let ln_const = params.delta.ln() - params.lambda.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for &x in samples {
        let u = (x - params.xi) / params.lambda;
        let z = params.gamma + params.delta * u.asinh();
        total += ln_const - 0.5 * (1.0 + u * u).ln() - 0.5 * z * z;
    }
    -total / samples.len() as f64
}

/// Maximum-likelihood fit of Johnson S_U parameters.
///
/// Requires at least 100 samples with nonzero spread. Initialization follows
/// the Slifker-Shapiro quantile construction where the data supports it,
/// falling back to a median/spread guess otherwise; two chained Nelder-Mead
/// passes then refine (gamma, ln delta, xi, ln lambda).
pub fn fit_johnson_su(samples: &[f64]) -> Result<JohnsonSuParams> {
    if samples.len() < 100 {
        return Err(Error::InvalidInput(format!(
            "Johnson S_U fit needs >= 100 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    // Near-constant samples (e.g. float jitter around one value) leave the
    // scale unidentifiable just like exactly constant ones.
    let magnitude = sorted[0].abs().max(sorted[sorted.len() - 1].abs());
    if sorted[sorted.len() - 1] - sorted[0] <= 1e-9 * (1.0 + magnitude) {
        return Err(Error::Degenerate("(near) zero-variance samples".into()));
    }

    let start = quantile_init(&sorted).unwrap_or_else(|| fallback_init(&sorted));
    let objective = |theta: &[f64; 4]| -> f64 {
        let params = JohnsonSuParams {
            gamma: theta[0],
            delta: theta[1].exp(),
            xi: theta[2],
            lambda: theta[3].exp(),
        };
        if !params.delta.is_finite() || !params.lambda.is_finite() {
            return f64::INFINITY;
        }
        let nll = neg_log_likelihood(&params, samples);
        if nll.is_finite() {
            nll
        } else {
            f64::INFINITY
        }
    };

    let theta0 = [start.gamma, start.delta.ln(), start.xi, start.lambda.ln()];
    let spread = sorted[(sorted.len() - 1) * 3 / 4] - sorted[sorted.len() / 4];
    let steps = [0.25, 0.25, (0.1 * spread).max(1e-3), 0.25];
    let pass1 = nelder_mead(&objective, theta0, steps, 400);
    let fine = [0.05, 0.05, (0.02 * spread).max(1e-4), 0.05];
    let theta = nelder_mead(&objective, pass1, fine, 400);

    let fitted = JohnsonSuParams {
        gamma: theta[0],
        delta: theta[1].exp(),
        xi: theta[2],
        lambda: theta[3].exp(),
    };
    fitted.validate().map_err(|_| {
        Error::Degenerate("Johnson S_U likelihood optimization did not converge".into())
    })?;
    Ok(fitted)
}

/// Slifker-Shapiro initialization from four symmetric normal quantiles.
/// Returns None when the quantile geometry is not S_U-shaped.
fn quantile_init(sorted: &[f64]) -> Option<JohnsonSuParams> {
    let t = 0.5_f64;
    let norm = std_normal();
    let q = |z: f64| empirical_quantile(sorted, norm.cdf(z));
    let x3 = q(3.0 * t);
    let x1 = q(t);
    let xm1 = q(-t);
    let xm3 = q(-3.0 * t);

    let m = x3 - x1;
    let n = xm1 - xm3;
    let p = x1 - xm1;
    if p <= 0.0 || m <= 0.0 || n <= 0.0 {
        return None;
    }
    let mp = m / p;
    let np = n / p;
    let ratio = mp * np;
    if ratio <= 1.0 + 1e-9 || mp + np <= 2.0 + 1e-9 {
        return None; // bounded or normal-like geometry; fall back
    }

    let delta = 2.0 * t / (0.5 * (mp + np)).acosh();
    let gamma = delta * ((np - mp) / (2.0 * (ratio - 1.0).sqrt())).asinh();
    let lambda = 2.0 * p * (ratio - 1.0).sqrt() / ((mp + np - 2.0) * (mp + np + 2.0).sqrt());
    let xi = 0.5 * (x1 + xm1) + p * (np - mp) / (2.0 * (mp + np - 2.0));
    let init = JohnsonSuParams { gamma, delta, xi, lambda };
    init.validate().ok().map(|_| init)
}

fn fallback_init(sorted: &[f64]) -> JohnsonSuParams {
    let median = empirical_quantile(sorted, 0.5);
    let iqr = empirical_quantile(sorted, 0.75) - empirical_quantile(sorted, 0.25);
    JohnsonSuParams { gamma: 0.0, delta: 1.0, xi: median, lambda: (0.5 * iqr).max(1e-6) }
}

/// Linear-interpolation quantile of pre-sorted data.
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Minimal Nelder-Mead over 4 dimensions (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5). Good enough for a smooth 4-parameter
/// likelihood; convergence is checked by the fit round-trip tests.
fn nelder_mead<F>(f: &F, start: [f64; 4], steps: [f64; 4], max_iter: usize) -> [f64; 4]
where
    F: Fn(&[f64; 4]) -> f64,
{
    const DIM: usize = 4;
    let mut simplex: Vec<[f64; 4]> = Vec::with_capacity(DIM + 1);
    simplex.push(start);
    for i in 0..DIM {
        let mut v = start;
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=DIM).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[DIM];
        let second_worst = order[DIM - 1];

        if (values[worst] - values[best]).abs() <= 1e-10 * (1.0 + values[best].abs()) {
            break;
        }

        let mut centroid = [0.0; 4];
        for (idx, v) in simplex.iter().enumerate() {
            if idx != worst {
                for d in 0..DIM {
                    centroid[d] += v[d] / DIM as f64;
                }
            }
        }

        let blend = |a: f64| {
            let mut out = [0.0; 4];
            for d in 0..DIM {
                out[d] = centroid[d] + a * (centroid[d] - simplex[worst][d]);
            }
            out
        };

        let reflected = blend(1.0);
        let fr = f(&reflected);
        if fr < values[best] {
            let expanded = blend(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            let contracted = blend(-0.5);
            let fc = f(&contracted);
            if fc < values[worst] {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                let best_point = simplex[best];
                for idx in 0..=DIM {
                    if idx == best {
                        continue;
                    }
                    for d in 0..DIM {
                        simplex[idx][d] = 0.5 * (simplex[idx][d] + best_point[d]);
                    }
                    values[idx] = f(&simplex[idx]);
                }
            }
        }
    }

    let best = (0..=DIM).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("non-empty");
    simplex[best]
}
