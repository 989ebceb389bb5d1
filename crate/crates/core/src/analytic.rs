//! Reference threshold detectors with full channel knowledge.
//!
//! For Gaussian variation the bit error rate of a threshold `r` under a fixed
//! high-state offset `b` is
//!
//! ```text
//! P_b(r, b) = 1/2 (1 + Q((r - mu0)/sigma0) - Q((r - mu1 - b)/sigma1))
//! ```
//!
//! and its stationary point has a closed form. When the offset varies from
//! cell to cell the BER is the expectation of `P_b` over `b`, evaluated here by
//! Gauss-Hermite quadrature, and the optimum is located by bisection on the
//! derivative.
//!
//! Internally the BER is always evaluated as `1/2 (Q(z0) + Q(-z1))`, which is
//! algebraically the same expression but keeps full relative precision when
//! the error rate is far below machine epsilon.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, NoiseModel};
use crate::detectors::sweep_threshold;
use crate::error::{Error, Result};
use crate::rng::Purpose;

/// Default Gauss-Hermite node count for offset expectations.
pub const DEFAULT_GH_NODES: usize = 64;

/// Final bracket width of the bisection search, kΩ.
pub const BISECTION_TOL: f64 = 1e-9;

const BRACKET_STEP: f64 = 0.1;
const MAX_BRACKET_STEPS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMethod {
    ClosedForm,
    Bisection,
    EmpiricalSearch,
}

impl std::fmt::Display for ThresholdMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThresholdMethod::ClosedForm => "ClosedForm",
            ThresholdMethod::Bisection => "Bisection",
            ThresholdMethod::EmpiricalSearch => "EmpiricalSearch",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub r_th: f64,
    pub ber: f64,
    pub method: ThresholdMethod,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Standard normal upper tail `P(Z > t)`.
pub fn q_function(t: f64) -> f64 {
    0.5 * libm::erfc(t * FRAC_1_SQRT_2)
}

fn ln_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

fn normal_pdf(z: f64) -> f64 {
    ln_normal_pdf(z).exp()
}

fn require_gaussian(params: &ChannelParams) -> Result<()> {
    match params.noise_model {
        NoiseModel::Gaussian => Ok(()),
        other => Err(Error::UnsupportedModel(format!(
            "closed-form BER requires gaussian variation, got {other}"
        ))),
    }
}

/// BER of threshold `r_th` when every high-state cell is shifted by exactly `b`.
pub fn ber_fixed_offset(r_th: f64, params: &ChannelParams, b: f64) -> Result<f64> {
    require_gaussian(params)?;
    Ok(fixed_offset_ber(r_th, params.mu0, params.sigma0, params.mu1 + b, params.sigma1))
}

fn fixed_offset_ber(r: f64, mu0: f64, sigma0: f64, mu1: f64, sigma1: f64) -> f64 {
    0.5 * (q_function((r - mu0) / sigma0) + q_function((mu1 - r) / sigma1))
}

/// `d/dr P_b(r, b) = -phi0/(2 sigma0) + phi1/(2 sigma1)`.
pub fn ber_derivative(r_th: f64, params: &ChannelParams, b: f64) -> Result<f64> {
    require_gaussian(params)?;
    let z0 = (r_th - params.mu0) / params.sigma0;
    let z1 = (r_th - params.mu1 - b) / params.sigma1;
    Ok(-normal_pdf(z0) / (2.0 * params.sigma0) + normal_pdf(z1) / (2.0 * params.sigma1))
}

/// `ln(phi1/sigma1) - ln(phi0/sigma0)`: same sign as the derivative, no underflow.
fn fixed_log_slope(r: f64, mu0: f64, sigma0: f64, mu1: f64, sigma1: f64) -> f64 {
    let z0 = (r - mu0) / sigma0;
    let z1 = (r - mu1) / sigma1;
    (-0.5 * z1 * z1 - sigma1.ln()) - (-0.5 * z0 * z0 - sigma0.ln())
}

/// Stationary point of `P_b(r, b)`, with `mu1` replaced by `mu1 + b`.
pub fn optimal_threshold_closed_form(params: &ChannelParams, b: f64) -> Result<ThresholdResult> {
    require_gaussian(params)?;
    let (mu0, s0, s1) = (params.mu0, params.sigma0, params.sigma1);
    let mu1 = params.mu1 + b;
    let mut method = ThresholdMethod::ClosedForm;
    let mut warnings = Vec::new();

    let r_th = if (s0 - s1).abs() < 1e-12 * s0 {
        0.5 * (mu0 + mu1)
    } else {
        let (v0, v1) = (s0 * s0, s1 * s1);
        let disc = (mu0 - mu1).powi(2) + 2.0 * (s0 / s1).ln() * (v0 - v1);
        let r = (mu1 * v0 - mu0 * v1 - s0 * s1 * disc.sqrt()) / (v0 - v1);
        if is_local_min(r, mu0, s0, mu1, s1) {
            r
        } else {
            warnings.push(format!(
                "closed-form root {r} is not a minimizer; refined by bisection"
            ));
            method = ThresholdMethod::Bisection;
            let f = |x: f64| fixed_log_slope(x, mu0, s0, mu1, s1);
            bisect(f, mu0, mu1.max(mu0 + f64::EPSILON))?
        }
    };
    Ok(ThresholdResult {
        r_th,
        ber: fixed_offset_ber(r_th, mu0, s0, mu1, s1),
        method,
        warnings,
    })
}

fn is_local_min(r: f64, mu0: f64, s0: f64, mu1: f64, s1: f64) -> bool {
    if !r.is_finite() {
        return false;
    }
    let h = 1e-6 * (mu1 - mu0).abs().max(1e-3);
    fixed_log_slope(r - h, mu0, s0, mu1, s1) <= 0.0 && fixed_log_slope(r + h, mu0, s0, mu1, s1) >= 0.0
}

/// Gauss-Hermite rule for `∫ f(x) exp(-x²) dx`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes by Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("Gauss-Hermite rule needs at least one node"));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NoRoot(format!("Gauss-Hermite node {i} of {n} did not converge")));
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Ok(GaussHermite { nodes, weights })
    }

    /// The shared default rule.
    pub fn default_rule() -> &'static GaussHermite {
        static RULE: OnceLock<GaussHermite> = OnceLock::new();
        RULE.get_or_init(|| GaussHermite::new(DEFAULT_GH_NODES).expect("64-node rule"))
    }

    /// `E[f(B)]` for `B ~ N(mean, sd²)`.
    pub fn expect_normal(&self, mean: f64, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
        let s = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mean + SQRT_2 * sd * x))
            .sum::<f64>();
        s / PI.sqrt()
    }

    /// `ln E[exp(g(B))]` for `B ~ N(mean, sd²)`, accumulated with log-sum-exp.
    fn ln_expect_exp_normal(&self, mean: f64, sd: f64, g: impl Fn(f64) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w.ln() + g(mean + SQRT_2 * sd * x))
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln() - 0.5 * PI.ln()
    }
}

fn require_gaussian_offset(params: &ChannelParams) -> Result<()> {
    require_gaussian(params)?;
    if params.offset_sigma_b < 0.0 {
        return Err(Error::invalid("offset_sigma_b must be >= 0"));
    }
    Ok(())
}

/// BER of `r_th` averaged over the Gaussian offset, 64-node quadrature.
pub fn ber_variable_offset(r_th: f64, params: &ChannelParams) -> Result<f64> {
    ber_variable_offset_with(r_th, params, GaussHermite::default_rule())
}

pub fn ber_variable_offset_with(r_th: f64, params: &ChannelParams, rule: &GaussHermite) -> Result<f64> {
    require_gaussian_offset(params)?;
    let p0 = q_function((r_th - params.mu0) / params.sigma0);
    let p1 = if params.offset_sigma_b == 0.0 {
        q_function((params.mu1 + params.offset_mu_b - r_th) / params.sigma1)
    } else {
        rule.expect_normal(params.offset_mu_b, params.offset_sigma_b, |b| {
            q_function((params.mu1 + b - r_th) / params.sigma1)
        })
    };
    Ok(0.5 * (p0 + p1))
}

/// Derivative of [`ber_variable_offset`] with respect to the threshold.
pub fn ber_variable_offset_derivative(r_th: f64, params: &ChannelParams) -> Result<f64> {
    require_gaussian_offset(params)?;
    let (d0, ln_d1) = variable_slope_terms(r_th, params, GaussHermite::default_rule());
    Ok(-d0.exp() + ln_d1.exp())
}

/// `(ln(phi0/(2 sigma0)), ln(E[phi1]/(2 sigma1)))` for the variable-offset BER.
fn variable_slope_terms(r: f64, params: &ChannelParams, rule: &GaussHermite) -> (f64, f64) {
    let z0 = (r - params.mu0) / params.sigma0;
    let t0 = ln_normal_pdf(z0) - (2.0 * params.sigma0).ln();
    let t1 = if params.offset_sigma_b == 0.0 {
        ln_normal_pdf((r - params.mu1 - params.offset_mu_b) / params.sigma1)
    } else {
        rule.ln_expect_exp_normal(params.offset_mu_b, params.offset_sigma_b, |b| {
            ln_normal_pdf((r - params.mu1 - b) / params.sigma1)
        })
    } - (2.0 * params.sigma1).ln();
    (t0, t1)
}

/// Bisection on a sign function, expanding the bracket in 0.1 kΩ steps.
fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let mut steps = 0;
    while f(lo) >= 0.0 {
        if steps == MAX_BRACKET_STEPS {
            return Err(Error::NoRoot(format!(
                "derivative is non-negative at every lower bracket down to {lo}"
            )));
        }
        lo -= BRACKET_STEP;
        steps += 1;
    }
    while f(hi) <= 0.0 {
        if steps == MAX_BRACKET_STEPS {
            return Err(Error::NoRoot(format!(
                "derivative is non-positive at every upper bracket up to {hi}"
            )));
        }
        hi += BRACKET_STEP;
        steps += 1;
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// BER-minimizing threshold for the variable-offset channel.
///
/// Bisects the sign of the derivative (evaluated in the log domain so that
/// far-tail operating points do not underflow) on `[mu0, mu1 + max(0, mu_b)]`.
pub fn optimal_threshold_bisection(params: &ChannelParams) -> Result<ThresholdResult> {
    optimal_threshold_bisection_with(params, GaussHermite::default_rule())
}

pub fn optimal_threshold_bisection_with(params: &ChannelParams, rule: &GaussHermite) -> Result<ThresholdResult> {
    require_gaussian_offset(params)?;
    let slope = |r: f64| {
        let (t0, t1) = variable_slope_terms(r, params, rule);
        t1 - t0
    };
    let r_th = bisect(slope, params.mu0, params.mu1 + params.offset_mu_b.max(0.0))?;
    Ok(ThresholdResult {
        r_th,
        ber: ber_variable_offset_with(r_th, params, rule)?,
        method: ThresholdMethod::Bisection,
        warnings: Vec::new(),
    })
}

/// Empirical risk minimizer over `nblocks` simulated blocks of length `n`.
///
/// Works for any noise model; used as the optimum reference when the
/// variation is not Gaussian.
pub fn optimal_threshold_empirical(
    params: &ChannelParams,
    n: usize,
    nblocks: usize,
    seed: u64,
) -> Result<ThresholdResult> {
    if n == 0 || nblocks == 0 {
        return Err(Error::Empty("empirical threshold search needs data"));
    }
    let sampler = params.sampler()?;
    let blocks = sampler.generate(n, nblocks, seed, Purpose::Empirical, 0);
    let pairs: Vec<(f64, u8)> = blocks
        .iter()
        .flat_map(|b| b.y.iter().copied().zip(b.x.iter().copied()))
        .collect();
    let sweep = sweep_threshold(pairs)?;
    let mut warnings = Vec::new();
    if nblocks < 100 {
        warnings.push(format!("only {nblocks} blocks; empirical optimum is unreliable below 100"));
    }
    Ok(ThresholdResult {
        r_th: sweep.r_adj,
        ber: sweep.objective as f64 / (n * nblocks) as f64,
        method: ThresholdMethod::EmpiricalSearch,
        warnings,
    })
}

/// The three reference thresholds of the offset experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCurves {
    /// Optimized for the channel without offset.
    pub curve1: ThresholdResult,
    /// Optimized for a fixed offset `b = mu_b`.
    pub curve2: ThresholdResult,
    /// Optimized with full channel knowledge.
    pub curve3: ThresholdResult,
}

/// Curves 1-3 for `params`. The `ber` of every curve is the error rate on
/// the actual channel (Gaussian offset averaged), not on the channel the
/// threshold was designed for. Non-Gaussian channels need an
/// `empirical` full-knowledge reference and use Gaussian formulas for the
/// design of curves 1 and 2.
pub fn reference_curves(params: &ChannelParams, empirical: Option<ThresholdResult>) -> Result<ReferenceCurves> {
    let gaussian = ChannelParams {
        noise_model: NoiseModel::Gaussian,
        ..params.clone()
    };
    let mut curve1 = optimal_threshold_closed_form(&gaussian, 0.0)?;
    let mut curve2 = optimal_threshold_closed_form(&gaussian, params.offset_mu_b)?;
    let curve3 = match (params.noise_model, empirical) {
        (NoiseModel::Gaussian, _) => optimal_threshold_bisection(params)?,
        (_, Some(e)) => e,
        (other, None) => {
            return Err(Error::UnsupportedModel(format!(
                "full-knowledge optimum for {other} variation needs an empirical search"
            )))
        }
    };
    if params.noise_model == NoiseModel::Gaussian {
        curve1.ber = ber_variable_offset(curve1.r_th, params)?;
        curve2.ber = ber_variable_offset(curve2.r_th, params)?;
    } else {
        curve1.ber = f64::NAN;
        curve2.ber = f64::NAN;
    }
    Ok(ReferenceCurves { curve1, curve2, curve3 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chan(ratio: f64, mu_b: f64, sigma_b: f64) -> ChannelParams {
        ChannelParams::from_ratio(1.0, 2.0, ratio, mu_b, sigma_b, NoiseModel::Gaussian).unwrap()
    }

    /// Composite Simpson integration of the normal pdf over [t, t + 40].
    fn q_oracle(t: f64) -> f64 {
        let (a, b) = (t, t + 40.0);
        let n = 400_000;
        let h = (b - a) / n as f64;
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let mut s = pdf(a) + pdf(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(x);
        }
        s * h / 3.0
    }

    /// Golden-section minimizer, independent of the closed form.
    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        while b - a > 1e-10 {
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - g * (b - a);
            d = a + g * (b - a);
        }
        0.5 * (a + b)
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        for t in [0.3, 1.7, 4.2, 7.9] {
            assert!((q_function(t) + q_function(-t) - 1.0).abs() < 1e-15);
        }
        let q3 = q_oracle(3.0);
        assert!((q3 - 1.3499e-3).abs() < 1e-7);
        assert!((q_function(3.0) / q3 - 1.0).abs() < 1e-12);
        for t in [-8.0, -2.5, 0.5, 5.0, 8.0] {
            let rel = (q_function(t) / q_oracle(t) - 1.0).abs();
            assert!(rel < 1e-12, "t = {t}: rel err {rel}");
        }
    }

    #[test]
    fn fixed_offset_ber_examples() {
        let sigma = 0.1;
        let p = ChannelParams::new(1.0, 2.0, sigma, sigma, 0.0, 0.0, NoiseModel::Gaussian).unwrap();
        let ber = ber_fixed_offset(1.5, &p, 0.0).unwrap();
        assert!((ber - q_function(0.5 / sigma)).abs() < 1e-18);
        assert!((ber_fixed_offset(-1e9, &p, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((ber_fixed_offset(1e9, &p, 0.0).unwrap() - 0.5).abs() < 1e-15);
        let beta = ChannelParams { noise_model: NoiseModel::CenteredBeta, ..p };
        assert!(matches!(ber_fixed_offset(1.5, &beta, 0.0), Err(Error::UnsupportedModel(_))));
    }

    #[test]
    fn closed_form_examples() {
        let eq = ChannelParams::new(1.0, 2.0, 0.1, 0.1, 0.0, 0.0, NoiseModel::Gaussian).unwrap();
        assert_eq!(optimal_threshold_closed_form(&eq, 0.0).unwrap().r_th, 1.5);

        let p = chan(0.05, 0.0, 0.0);
        let res = optimal_threshold_closed_form(&p, 0.0).unwrap();
        assert_eq!(res.method, ThresholdMethod::ClosedForm);
        let golden = golden_min(|r| ber_fixed_offset(r, &p, 0.0).unwrap().ln(), 1.0, 2.0);
        assert!((res.r_th - golden).abs() < 1e-6, "{} vs {golden}", res.r_th);
        assert!((res.r_th - 1.3368).abs() < 5e-5);
        assert!(ber_derivative(res.r_th, &p, 0.0).unwrap().abs() < 1e-10);

        let shifted = optimal_threshold_closed_form(&p, -0.2).unwrap();
        let p18 = ChannelParams { mu1: 1.8, ..p.clone() };
        let direct = optimal_threshold_closed_form(&p18, 0.0).unwrap();
        assert!((shifted.r_th - direct.r_th).abs() < 1e-14);
    }

    #[test]
    fn derivative_signs_and_fd() {
        let p = ChannelParams::new(1.0, 2.0, 0.02, 0.04, 0.0, 0.0, NoiseModel::Gaussian).unwrap();
        assert!(ber_derivative(1.0, &p, 0.0).unwrap() < -5.0);
        let p = chan(0.1, 0.0, 0.0);
        for r in [1.1, 1.3, 1.45, 1.6, 1.9] {
            let h = 1e-6;
            let fd = (ber_fixed_offset(r + h, &p, -0.1).unwrap() - ber_fixed_offset(r - h, &p, -0.1).unwrap()) / (2.0 * h);
            let d = ber_derivative(r, &p, -0.1).unwrap();
            assert!(((fd - d) / d).abs() < 1e-6, "r={r}: fd {fd} vs {d}");
        }
    }

    #[test]
    fn gauss_hermite_integrates_moments() {
        for n in [1, 2, 5, 16, 64, 128] {
            let rule = GaussHermite::new(n).unwrap();
            let total: f64 = rule.weights.iter().sum();
            assert!((total / PI.sqrt() - 1.0).abs() < 1e-13, "n={n}");
            // E[X^2] = 1 and E[X^4] = 3 for X ~ N(0,1).
            if n >= 3 {
                assert!((rule.expect_normal(0.0, 1.0, |x| x * x) - 1.0).abs() < 1e-12);
                assert!((rule.expect_normal(0.0, 1.0, |x| x.powi(4)) - 3.0).abs() < 1e-11);
            }
        }
        assert!(GaussHermite::new(0).is_err());
    }

    #[test]
    fn variable_offset_examples() {
        let p = chan(0.05, -0.2, 0.0);
        for r in [1.2, 1.35, 1.5] {
            let a = ber_variable_offset(r, &p).unwrap();
            let b = ber_fixed_offset(r, &p, -0.2).unwrap();
            assert!((a - b).abs() <= 1e-15 * b.max(1e-300));
        }
        let p = chan(0.08, -0.2, 0.14);
        let s_eff = (p.sigma1.powi(2) + p.offset_sigma_b.powi(2)).sqrt();
        for i in 0..50 {
            let r = 1.0 + i as f64 * 0.02;
            let v = ber_variable_offset(r, &p).unwrap();
            let oracle = 0.5 * (1.0 + q_function((r - 1.0) / p.sigma0) - q_function((r - 1.8) / s_eff));
            assert!((v - oracle).abs() < 1e-10, "r={r}: {v} vs {oracle}");
        }
        let opt = optimal_threshold_bisection(&p).unwrap();
        let at = ber_variable_offset(opt.r_th, &p).unwrap();
        assert!(at < ber_variable_offset(opt.r_th + 0.05, &p).unwrap());
        assert!(at < ber_variable_offset(opt.r_th - 0.05, &p).unwrap());
    }

    #[test]
    fn variable_derivative_matches_fd() {
        let p = chan(0.1, -0.2, 0.08);
        for r in [1.2, 1.4, 1.6] {
            let h = 1e-6;
            let fd = (ber_variable_offset(r + h, &p).unwrap() - ber_variable_offset(r - h, &p).unwrap()) / (2.0 * h);
            let d = ber_variable_offset_derivative(r, &p).unwrap();
            assert!(((fd - d) / d).abs() < 1e-6);
        }
    }

    #[test]
    fn quadrature_converged_at_64_nodes() {
        let r128 = GaussHermite::new(128).unwrap();
        for (ratio, sb) in [(0.05, 0.08), (0.05, 0.14), (0.1, 0.08), (0.12, 0.14)] {
            let p = chan(ratio, -0.2, sb);
            for i in 0..20 {
                let r = 1.0 + i as f64 * 0.05;
                let a = ber_variable_offset(r, &p).unwrap();
                let b = ber_variable_offset_with(r, &p, &r128).unwrap();
                assert!((a - b).abs() < 1e-12, "ratio {ratio}, sb {sb}, r {r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn bisection_examples() {
        let p = chan(0.05, -0.2, 0.0);
        let bis = optimal_threshold_bisection(&p).unwrap();
        let cf = optimal_threshold_closed_form(&p, -0.2).unwrap();
        assert!((bis.r_th - cf.r_th).abs() < 1e-8);

        let p = chan(0.05, -0.2, 0.08);
        let bis = optimal_threshold_bisection(&p).unwrap();
        let reduced = ChannelParams {
            mu1: 1.8,
            sigma1: (0.01f64 + 0.0064).sqrt(),
            offset_mu_b: 0.0,
            offset_sigma_b: 0.0,
            ..p.clone()
        };
        let cf = optimal_threshold_closed_form(&reduced, 0.0).unwrap();
        assert!((bis.r_th - cf.r_th).abs() < 1e-8, "{} vs {}", bis.r_th, cf.r_th);

        // Grid oracle: 10^4 points of step 1e-4 from mu0.
        let grid_min = (0..10_000)
            .map(|i| 1.0 + i as f64 * 1e-4)
            .map(|r| ber_variable_offset(r, &p).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(bis.ber <= grid_min + 1e-12);
        assert!((grid_min - bis.ber).abs() < 1e-12, "{grid_min} vs {}", bis.ber);
    }

    #[test]
    fn bisection_expands_and_fails() {
        // Threshold root above mu1 + max(0, mu_b) requires expansion.
        let p = ChannelParams::new(1.0, 1.05, 0.1, 1.0, 0.0, 0.0, NoiseModel::Gaussian).unwrap();
        let res = optimal_threshold_bisection(&p).unwrap();
        assert!(res.r_th > 1.05);
        assert!(ber_variable_offset_derivative(res.r_th - 1e-4, &p).unwrap() < 0.0);
        assert!(ber_variable_offset_derivative(res.r_th + 1e-4, &p).unwrap() > 0.0);
        assert!(matches!(bisect(|_| -1.0, 0.0, 1.0), Err(Error::NoRoot(_))));
        assert!(matches!(bisect(|_| 1.0, 0.0, 1.0), Err(Error::NoRoot(_))));
    }

    #[test]
    fn closed_form_beats_grid() {
        for (ratio, b) in [(0.05, 0.0), (0.08, -0.2), (0.12, -0.3), (0.1, 0.1)] {
            let p = chan(ratio, b, 0.0);
            let opt = optimal_threshold_closed_form(&p, b).unwrap();
            let hi = 2.0 + b.abs();
            for i in 0..10_000 {
                let r = 1.0 + (hi - 1.0) * i as f64 / 9_999.0;
                assert!(opt.ber <= ber_fixed_offset(r, &p, b).unwrap() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn min_ber_degrades_with_spread() {
        let mut prev = 0.0;
        for i in 0..10 {
            let ratio = 0.03 + 0.01 * i as f64;
            let p = chan(ratio, -0.2, 0.14);
            let ber = optimal_threshold_bisection(&p).unwrap().ber;
            assert!(ber >= prev);
            prev = ber;
        }
    }

    #[test]
    fn empirical_noise_free_separates() {
        let p = ChannelParams::new(1.0, 2.0, 1e-6, 1e-6, 0.0, 0.0, NoiseModel::Gaussian).unwrap();
        let res = optimal_threshold_empirical(&p, 71, 200, 1).unwrap();
        assert_eq!(res.ber, 0.0);
        assert!(res.r_th > 1.0001 && res.r_th < 1.9999);
        assert!(res.warnings.is_empty());
        let few = optimal_threshold_empirical(&p, 71, 10, 1).unwrap();
        assert_eq!(few.warnings.len(), 1);
    }

    #[test]
    fn reference_curve_ordering() {
        for ratio in [0.05, 0.08, 0.1, 0.12] {
            for sb in [0.08, 0.14] {
                let c = reference_curves(&chan(ratio, -0.2, sb), None).unwrap();
                assert!(c.curve1.ber >= c.curve2.ber);
                assert!(c.curve2.ber >= c.curve3.ber);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn derivative_matches_central_difference(
                ratio in 0.03f64..0.15,
                b in -0.3f64..0.1,
                frac in 0.05f64..0.95,
            ) {
                let p = chan(ratio, 0.0, 0.0);
                let r = 1.0 + frac * (1.0 + b);
                let h = 1e-6;
                let d = ber_derivative(r, &p, b).unwrap();
                let fd = (ber_fixed_offset(r + h, &p, b).unwrap() - ber_fixed_offset(r - h, &p, b).unwrap()) / (2.0 * h);
                // Absolute floor for points deep in both tails.
                prop_assert!((fd - d).abs() <= 1e-6 * d.abs() + 1e-9, "fd {} vs {}", fd, d);
            }
        }
    }
}
