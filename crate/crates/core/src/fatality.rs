//! Probit fatality curves: `P(fatal | crash type, speed) = Phi(a + b * speed)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashType {
    Pedestrian,
    SideImpact,
    FrontImpact,
}

impl CrashType {
    pub const ALL: [CrashType; 3] = [CrashType::Pedestrian, CrashType::SideImpact, CrashType::FrontImpact];

    pub fn as_str(self) -> &'static str {
        match self {
            CrashType::Pedestrian => "pedestrian",
            CrashType::SideImpact => "side_impact",
            CrashType::FrontImpact => "front_impact",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        CrashType::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for CrashType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Observed fatality fraction at one impact speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub speed_mph: f64,
    pub fatality_fraction: f64,
    /// Number of crashes behind the fraction; used as the likelihood weight.
    pub n_obs: f64,
}

impl CurvePoint {
    pub fn validate(&self) -> Result<()> {
        if !self.speed_mph.is_finite() {
            return Err(Error::invalid("speed must be finite"));
        }
        if !(0.0..=1.0).contains(&self.fatality_fraction) {
            return Err(Error::invalid(format!(
                "fatality fraction {} outside [0, 1]",
                self.fatality_fraction
            )));
        }
        if !(self.n_obs > 0.0 && self.n_obs.is_finite()) {
            return Err(Error::invalid(format!("n_obs must be positive, got {}", self.n_obs)));
        }
        Ok(())
    }

    /// Fraction with exact 0 and 1 replaced by `1/(2n)` and `1 - 1/(2n)`.
    fn corrected_fraction(&self) -> f64 {
        let nudge = 1.0 / (2.0 * self.n_obs);
        if self.fatality_fraction <= 0.0 {
            nudge.min(0.5)
        } else if self.fatality_fraction >= 1.0 {
            (1.0 - nudge).max(0.5)
        } else {
            self.fatality_fraction
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatalityCurve {
    pub crash_type: CrashType,
    /// Intercept, in probit units.
    pub a: f64,
    /// Slope, in probit units per mph. Always positive.
    pub b: f64,
}

impl FatalityCurve {
    pub fn new(crash_type: CrashType, a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::numerical("fatality curve parameters must be finite"));
        }
        if !(b > 0.0) {
            return Err(Error::numerical(format!(
                "{crash_type}: fatality curve slope must be positive, got {b}"
            )));
        }
        Ok(FatalityCurve { crash_type, a, b })
    }

    pub fn fatality_probability(&self, speed_mph: f64) -> f64 {
        standard_normal_cdf(self.a + self.b * speed_mph)
    }

    pub fn survival_probability(&self, speed_mph: f64) -> f64 {
        1.0 - self.fatality_probability(speed_mph)
    }

    /// Speed at which fatality probability is one half.
    pub fn midpoint(&self) -> f64 {
        -self.a / self.b
    }
}

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `ln Phi(x)` without underflow in the far left tail.
fn log_cdf(x: f64) -> f64 {
    if x > -30.0 {
        standard_normal_cdf(x).ln()
    } else {
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// `phi(x) / Phi(x)`.
fn inverse_mills(x: f64) -> f64 {
    if x > -30.0 {
        normal_pdf(x) / standard_normal_cdf(x)
    } else {
        let x2 = x * x;
        -x / (1.0 - 1.0 / x2 + 3.0 / (x2 * x2))
    }
}

struct Obs {
    t: f64,
    y: f64,
    n: f64,
}

/// Per-observation log-likelihood, score and curvature with respect to the
/// linear predictor `eta`.
fn obs_terms(o: &Obs, eta: f64) -> (f64, f64, f64) {
    let l1 = inverse_mills(eta);
    let l0 = inverse_mills(-eta);
    let ll = o.n * (o.y * log_cdf(eta) + (1.0 - o.y) * log_cdf(-eta));
    let g = o.n * (o.y * l1 - (1.0 - o.y) * l0);
    let h = -o.n * (o.y * l1 * (eta + l1) + (1.0 - o.y) * l0 * (l0 - eta));
    (ll, g, h)
}

fn corrected(points: &[CurvePoint], center: f64, scale: f64) -> Vec<Obs> {
    points
        .iter()
        .map(|p| Obs {
            t: (p.speed_mph - center) / scale,
            y: p.corrected_fraction(),
            n: p.n_obs,
        })
        .collect()
}

fn sums(obs: &[Obs], alpha: f64, beta: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let mut ll = 0.0;
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    for o in obs {
        let (l, gi, hi) = obs_terms(o, alpha + beta * o.t);
        ll += l;
        g[0] += gi;
        g[1] += gi * o.t;
        h[0][0] += hi;
        h[0][1] += hi * o.t;
        h[1][1] += hi * o.t * o.t;
    }
    h[1][0] = h[0][1];
    (ll, g, h)
}

/// Weighted binomial probit log-likelihood of `(a, b)`, with the 0/1
/// continuity correction applied to the fractions.
pub fn log_likelihood(points: &[CurvePoint], a: f64, b: f64) -> f64 {
    sums(&corrected(points, 0.0, 1.0), a, b).0
}

/// Analytic gradient of [`log_likelihood`] with respect to `(a, b)`.
pub fn score(points: &[CurvePoint], a: f64, b: f64) -> [f64; 2] {
    sums(&corrected(points, 0.0, 1.0), a, b).1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbitFit {
    pub curve: FatalityCurve,
    pub log_likelihood: f64,
    pub iterations: usize,
}

const MAX_ITERATIONS: usize = 200;
const STEP_TOLERANCE: f64 = 1e-10;
const MAX_HALVINGS: usize = 60;

/// Maximum-likelihood probit fit by damped Newton iterations.
///
/// Speeds are standardized internally; the returned curve is in mph.
pub fn probit_fit(crash_type: CrashType, points: &[CurvePoint]) -> Result<ProbitFit> {
    if points.len() < 2 {
        return Err(Error::invalid(format!("{crash_type}: probit fit needs at least two points")));
    }
    for p in points {
        p.validate()?;
    }
    if points.iter().all(|p| p.fatality_fraction <= 0.0) || points.iter().all(|p| p.fatality_fraction >= 1.0) {
        return Err(Error::invalid(format!(
            "{crash_type}: fatality fractions are all 0 or all 1"
        )));
    }
    let total: f64 = points.iter().map(|p| p.n_obs).sum();
    let center = points.iter().map(|p| p.n_obs * p.speed_mph).sum::<f64>() / total;
    let var = points.iter().map(|p| p.n_obs * (p.speed_mph - center).powi(2)).sum::<f64>() / total;
    if !(var > 0.0) {
        return Err(Error::invalid(format!("{crash_type}: probit fit needs distinct speeds")));
    }
    let scale = var.sqrt();
    let obs = corrected(points, center, scale);

    let (mut alpha, mut beta) = (0.0, 0.0);
    let (mut ll, mut g, mut h) = sums(&obs, alpha, beta);
    for iteration in 1..=MAX_ITERATIONS {
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if !(det > 0.0) || !(h[0][0] < 0.0) {
            return Err(Error::numerical(format!("{crash_type}: probit Hessian is not negative definite")));
        }
        // Newton direction -H^{-1} g.
        let d_alpha = -(h[1][1] * g[0] - h[0][1] * g[1]) / det;
        let d_beta = -(-h[1][0] * g[0] + h[0][0] * g[1]) / det;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let (na, nb) = (alpha + step * d_alpha, beta + step * d_beta);
            let trial = sums(&obs, na, nb);
            if trial.0.is_finite() && trial.0 >= ll - 1e-12 * ll.abs() {
                accepted = Some((na, nb, trial));
                break;
            }
            step *= 0.5;
        }
        let Some((na, nb, trial)) = accepted else {
            return Err(Error::numerical(format!("{crash_type}: probit line search failed")));
        };
        let moved = (step * d_alpha).abs().max((step * d_beta).abs());
        (alpha, beta) = (na, nb);
        (ll, g, h) = trial;

        // Diverging slope: the data are (nearly) separable.
        if beta.abs() > 1e6 {
            return Err(Error::numerical(format!(
                "{crash_type}: probit slope diverges (perfect separation)"
            )));
        }
        if moved < STEP_TOLERANCE {
            let curve = FatalityCurve::new(crash_type, alpha - beta * center / scale, beta / scale)?;
            if curve.b < 1e-9 {
                return Err(Error::numerical(format!(
                    "{crash_type}: fitted slope {} is not positive",
                    curve.b
                )));
            }
            return Ok(ProbitFit {
                curve,
                log_likelihood: ll,
                iterations: iteration,
            });
        }
    }
    Err(Error::numerical(format!(
        "{crash_type}: probit fit did not converge in {MAX_ITERATIONS} iterations"
    )))
}
