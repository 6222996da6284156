//! Gaussian kernel density estimates over speeds and their discretization.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fatality::standard_normal_cdf;

/// Kernel width used when comparing simulator and roadside baselines.
pub const FIDELITY_KERNEL_WIDTH: f64 = 1.0;
/// Kernel width used for predicted technology-condition distributions.
pub const PREDICTION_KERNEL_WIDTH: f64 = 2.0;
/// Grid step of the fidelity comparison, in mph.
pub const FIDELITY_GRID_STEP: f64 = 0.5;
/// Padding of evaluation grids beyond the data, in kernel widths.
pub const GRID_PAD_WIDTHS: f64 = 8.0;
/// Floor applied to approximating masses before taking K-L divergence.
pub const MASS_FLOOR: f64 = 1e-12;

// exp(-z^2 / 2) underflows to exactly 0.0 beyond this many widths, so kernels
// farther away than this contribute nothing and can be skipped.
const KERNEL_REACH: f64 = 38.7;

/// Gaussian KDE: `f(x) = (1/n) sum_j N(x; x_j, h^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityRepr", into = "DensityRepr")]
pub struct Density {
    samples: Vec<f64>,
    width: f64,
}

#[derive(Serialize, Deserialize)]
struct DensityRepr {
    samples: Vec<f64>,
    width: f64,
}

impl TryFrom<DensityRepr> for Density {
    type Error = Error;

    fn try_from(r: DensityRepr) -> Result<Self> {
        Density::fit(&r.samples, r.width)
    }
}

impl From<Density> for DensityRepr {
    fn from(d: Density) -> Self {
        DensityRepr {
            samples: d.samples,
            width: d.width,
        }
    }
}

impl Density {
    pub fn fit(samples: &[f64], kernel_width: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("density needs at least one sample"));
        }
        if !(kernel_width > 0.0 && kernel_width.is_finite()) {
            return Err(Error::invalid(format!("kernel width must be positive, got {kernel_width}")));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("density samples must be finite"));
        }
        let mut samples = samples.to_vec();
        samples.sort_by(f64::total_cmp);
        Ok(Density {
            samples,
            width: kernel_width,
        })
    }

    /// Sample points in ascending order.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn min(&self) -> f64 {
        self.samples[0]
    }

    pub fn max(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Indices of samples within kernel reach of `x`.
    fn window(&self, x: f64) -> std::ops::Range<usize> {
        let reach = KERNEL_REACH * self.width;
        let lo = self.samples.partition_point(|&s| s < x - reach);
        let hi = self.samples.partition_point(|&s| s <= x + reach);
        lo..hi
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let h = self.width;
        let norm = 1.0 / (h * (2.0 * PI).sqrt() * self.samples.len() as f64);
        let sum: f64 = self.samples[self.window(x)]
            .iter()
            .map(|&s| {
                let z = (x - s) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        norm * sum
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let h = self.width;
        let sum: f64 = self.samples.iter().map(|&s| standard_normal_cdf((x - s) / h)).sum();
        sum / self.samples.len() as f64
    }

    /// Exact draw: a uniformly chosen sample point plus Gaussian kernel noise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let idx = rng.random_range(0..self.samples.len());
        let z: f64 = rng.sample(StandardNormal);
        self.samples[idx] + self.width * z
    }

    /// The same density translated by `offset` mph.
    pub fn shifted(&self, offset: f64) -> Density {
        Density {
            samples: self.samples.iter().map(|s| s + offset).collect(),
            width: self.width,
        }
    }

    /// `(min - pad*h, max + pad*h)`.
    pub fn support(&self, pad_widths: f64) -> (f64, f64) {
        let pad = pad_widths * self.width;
        (self.min() - pad, self.max() + pad)
    }
}

/// Uniform grid from `lo` to at least `hi` in steps of `step`.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && hi >= lo, "bad grid bounds");
    let n = ((hi - lo) / step).ceil() as usize + 1;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// Shared grid over several sample sets: `step` spacing from the smallest
/// sample minus `pad_widths * width` to the largest plus the same pad.
pub fn shared_grid(sets: &[&[f64]], width: f64, pad_widths: f64, step: f64) -> Result<Vec<f64>> {
    let all = sets.iter().flat_map(|s| s.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if !lo.is_finite() {
        return Err(Error::invalid("cannot build grid from empty sample sets"));
    }
    let pad = pad_widths * width;
    Ok(uniform_grid(lo - pad, hi + pad, step))
}

/// Normalized masses on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    grid: Vec<f64>,
    masses: Vec<f64>,
}

impl DiscreteDistribution {
    /// Validates grid and masses; masses must already sum to 1 within 1e-9.
    pub fn new(grid: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if grid.len() != masses.len() {
            return Err(Error::invalid("grid and masses differ in length"));
        }
        if grid.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid must be strictly increasing"));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::invalid("masses must be finite and nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("masses sum to {total}, not 1")));
        }
        Ok(DiscreteDistribution { grid, masses })
    }

    /// Normalizes nonnegative weights onto `grid`.
    pub fn from_weights(grid: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::numerical("distribution has no mass on the grid"));
        }
        let masses = weights.iter().map(|w| w / total).collect();
        DiscreteDistribution::new(grid, masses)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn same_grid(&self, other: &DiscreteDistribution) -> bool {
        self.grid == other.grid
    }

    /// Raises every mass to at least `floor` and renormalizes.
    pub fn floored(&self, floor: f64) -> DiscreteDistribution {
        let weights: Vec<f64> = self.masses.iter().map(|&m| m.max(floor)).collect();
        let total: f64 = weights.iter().sum();
        DiscreteDistribution {
            grid: self.grid.clone(),
            masses: weights.into_iter().map(|w| w / total).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().zip(&self.masses).map(|(x, m)| x * m).sum()
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::invalid("grid needs at least two points"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("grid must be strictly increasing"));
    }
    Ok(())
}

/// Masses proportional to the density at each grid point.
pub fn discretize(density: &Density, grid: &[f64]) -> Result<DiscreteDistribution> {
    check_grid(grid)?;
    let weights = grid.iter().map(|&x| density.evaluate(x)).collect();
    DiscreteDistribution::from_weights(grid.to_vec(), weights)
}

/// Discretizes the mixture `sum_k w_k f_k`. Weights need not be normalized.
pub fn discretize_mixture(components: &[(f64, &Density)], grid: &[f64]) -> Result<DiscreteDistribution> {
    check_grid(grid)?;
    let weights = grid
        .iter()
        .map(|&x| components.iter().map(|(w, d)| w * d.evaluate(x)).sum())
        .collect();
    DiscreteDistribution::from_weights(grid.to_vec(), weights)
}
