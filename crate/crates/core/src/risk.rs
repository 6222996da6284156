//! Per-condition speed distributions and Monte-Carlo expected-value risk.
//!
//! Losses are `L(fatality) = -1` and `L(survival) = +1`, so the expected
//! value of a crash at speed `s` is `1 - 2 p_f(s)` and lies in `[-1, 1]`.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Condition;
use crate::density::{discretize_mixture, Density, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::fatality::{CrashType, FatalityCurve};
use crate::model::Coefficients;
use crate::rng::{stream, Domain};

/// Baseline-average draws per zone when building predicted distributions.
pub const DEFAULT_PREDICTION_DRAWS: usize = 10_000;
pub const DEFAULT_TRIALS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Fatality,
    Survival,
}

impl Outcome {
    pub fn loss(self) -> f64 {
        match self {
            Outcome::Fatality => -1.0,
            Outcome::Survival => 1.0,
        }
    }
}

/// Expected loss over the binary outcome given a fatality probability.
pub fn outcome_expectation(p_fatal: f64) -> f64 {
    p_fatal * Outcome::Fatality.loss() + (1.0 - p_fatal) * Outcome::Survival.loss()
}

/// Marginal distribution of posted-speed zones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneMarginal {
    zones: Vec<u32>,
    probabilities: Vec<f64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl ZoneMarginal {
    pub fn uniform(zones: &[u32]) -> Result<Self> {
        ZoneMarginal::weighted(zones, &vec![1.0; zones.len()])
    }

    /// Normalizes nonnegative per-zone weights.
    pub fn weighted(zones: &[u32], weights: &[f64]) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::invalid("zone marginal needs at least one zone"));
        }
        if zones.len() != weights.len() {
            return Err(Error::invalid("one weight per zone is required"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("zone weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("zone weights sum to zero"));
        }
        let mut sorted = zones.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != zones.len() {
            return Err(Error::invalid("duplicate zone in marginal"));
        }
        let probabilities: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(ZoneMarginal {
            zones: zones.to_vec(),
            probabilities,
            cumulative,
        })
    }

    pub fn zones(&self) -> &[u32] {
        &self.zones
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.zones.len() - 1);
        self.zones[idx]
    }
}

/// A density over observed speeds for every (condition, zone) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDistributions {
    entries: BTreeMap<Condition, BTreeMap<u32, Density>>,
}

impl ConditionDistributions {
    pub fn new(entries: BTreeMap<Condition, BTreeMap<u32, Density>>) -> Self {
        ConditionDistributions { entries }
    }

    pub fn get(&self, condition: Condition, zone: u32) -> Option<&Density> {
        self.entries.get(&condition)?.get(&zone)
    }

    pub fn conditions(&self) -> impl Iterator<Item = Condition> + '_ {
        self.entries.keys().copied()
    }

    pub fn zones(&self, condition: Condition) -> impl Iterator<Item = u32> + '_ {
        self.entries.get(&condition).into_iter().flat_map(|z| z.keys().copied())
    }

    /// Every density of `condition` moved by `offset` mph.
    pub fn shift_condition(&mut self, condition: Condition, offset: f64) {
        if let Some(zones) = self.entries.get_mut(&condition) {
            for d in zones.values_mut() {
                *d = d.shifted(offset);
            }
        }
    }

    /// Checks that every condition has a density for every zone of the
    /// marginal.
    pub fn check_complete(&self, conditions: &[Condition], marginal: &ZoneMarginal) -> Result<()> {
        for &c in conditions {
            for &z in marginal.zones() {
                if self.get(c, z).is_none() {
                    return Err(Error::invalid(format!("no speed distribution for {c} in zone {z} mph")));
                }
            }
        }
        Ok(())
    }

    /// Zone mixture `sum_z p(z) f_{c,z}` discretized on `grid`.
    pub fn discretize_marginal(
        &self,
        condition: Condition,
        marginal: &ZoneMarginal,
        grid: &[f64],
    ) -> Result<DiscreteDistribution> {
        let mut components = Vec::with_capacity(marginal.zones().len());
        for (&z, &p) in marginal.zones().iter().zip(marginal.probabilities()) {
            let d = self
                .get(condition, z)
                .ok_or_else(|| Error::invalid(format!("no speed distribution for {condition} in zone {z} mph")))?;
            components.push((p, d));
        }
        discretize_mixture(&components, grid)
    }

    /// Smallest and largest speed any density puts mass on, padded by
    /// `pad_widths` kernel widths.
    pub fn support(&self, pad_widths: f64) -> Option<(f64, f64)> {
        self.entries
            .values()
            .flat_map(|z| z.values())
            .map(|d| d.support(pad_widths))
            .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }
}

/// Baseline densities are kept as given. For each IVS condition and zone,
/// `n_pred` baseline-average speeds are drawn, mapped through the speed
/// model with the condition's sign indicator, and smoothed with a
/// `kernel_width` KDE.
pub fn build_condition_distributions(
    baseline: &BTreeMap<u32, Density>,
    zones: &[u32],
    weights: &Coefficients,
    n_pred: usize,
    kernel_width: f64,
    master_seed: u64,
) -> Result<ConditionDistributions> {
    if n_pred == 0 {
        return Err(Error::invalid("n_pred must be positive"));
    }
    let mut entries: BTreeMap<Condition, BTreeMap<u32, Density>> = BTreeMap::new();
    for &z in zones {
        let base = baseline
            .get(&z)
            .ok_or_else(|| Error::invalid(format!("no baseline density for zone {z} mph")))?;
        entries.entry(Condition::Baseline).or_default().insert(z, base.clone());
        for condition in Condition::IVS {
            let delta = condition.delta_es().expect("IVS condition has an indicator");
            let mut rng = stream(master_seed, Domain::PredictedDistributions, stream_id(condition, z));
            let predicted: Vec<f64> = (0..n_pred)
                .map(|_| weights.predict(base.sample(&mut rng), delta))
                .collect();
            entries
                .entry(condition)
                .or_default()
                .insert(z, Density::fit(&predicted, kernel_width)?);
        }
    }
    Ok(ConditionDistributions { entries })
}

fn stream_id(condition: Condition, zone: u32) -> u64 {
    let c = match condition {
        Condition::Baseline => 0u64,
        Condition::IvsPlusEs => 1,
        Condition::IvsMinusEs => 2,
    };
    (c << 32) | u64::from(zone)
}

/// Closed-form expected value over a discretized speed distribution:
/// `sum_i m_i [L(1)(1 - p_f(s_i)) + L(0) p_f(s_i)]`.
pub fn expected_value_closed_form(speeds: &DiscreteDistribution, curve: &FatalityCurve) -> f64 {
    speeds
        .grid()
        .iter()
        .zip(speeds.masses())
        .map(|(&s, &m)| m * outcome_expectation(curve.fatality_probability(s)))
        .sum()
}

/// `sum_i m_i p_f(s_i)`.
pub fn expected_fatality(speeds: &DiscreteDistribution, curve: &FatalityCurve) -> f64 {
    speeds
        .grid()
        .iter()
        .zip(speeds.masses())
        .map(|(&s, &m)| m * curve.fatality_probability(s))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub condition: Condition,
    pub crash_type: CrashType,
    pub ev_mean: f64,
    pub ev_se: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationOptions {
    pub n_trials: usize,
    pub master_seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

// Compensated (Neumaier) summation in a fixed order.
fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Monte-Carlo risk simulation.
///
/// Each trial draws a zone from the marginal, then for every condition a speed
/// from that zone's density, then for every crash type records the exact
/// outcome expectation at that speed. Trial `n` uses only stream `n` of the
/// master seed, and per-trial values are reduced in trial order, so results
/// are bit-identical for any worker count.
pub fn monte_carlo_risk(
    marginal: &ZoneMarginal,
    dists: &ConditionDistributions,
    curves: &[FatalityCurve],
    conditions: &[Condition],
    options: SimulationOptions,
) -> Result<Vec<RiskEstimate>> {
    if options.n_trials == 0 {
        return Err(Error::invalid("n_trials must be at least 1"));
    }
    if curves.is_empty() || conditions.is_empty() {
        return Err(Error::invalid("simulation needs at least one curve and one condition"));
    }
    dists.check_complete(conditions, marginal)?;
    let lookup: Vec<Vec<&Density>> = conditions
        .iter()
        .map(|&c| marginal.zones().iter().map(|&z| dists.get(c, z).expect("checked")).collect())
        .collect();
    let zone_index: BTreeMap<u32, usize> = marginal.zones().iter().enumerate().map(|(i, &z)| (z, i)).collect();

    let cells = conditions.len() * curves.len();
    let mut per_trial = vec![0.0f64; options.n_trials * cells];
    let run = |per_trial: &mut [f64]| {
        per_trial.par_chunks_mut(cells).enumerate().for_each(|(n, out)| {
            let mut rng = stream(options.master_seed, Domain::MonteCarlo, n as u64);
            let zi = zone_index[&marginal.sample(&mut rng)];
            for (ci, densities) in lookup.iter().enumerate() {
                let speed = densities[zi].sample(&mut rng);
                for (ti, curve) in curves.iter().enumerate() {
                    out[ci * curves.len() + ti] = outcome_expectation(curve.fatality_probability(speed));
                }
            }
        });
    };
    match options.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?
            .install(|| run(&mut per_trial)),
        None => run(&mut per_trial),
    }

    let n = options.n_trials as f64;
    let mut out = Vec::with_capacity(cells);
    for (ci, &condition) in conditions.iter().enumerate() {
        for (ti, curve) in curves.iter().enumerate() {
            let cell = ci * curves.len() + ti;
            let values = || per_trial.iter().skip(cell).step_by(cells).copied();
            let mean = neumaier_sum(values()) / n;
            let se = if options.n_trials > 1 {
                let var = neumaier_sum(values().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            out.push(RiskEstimate {
                condition,
                crash_type: curve.crash_type,
                ev_mean: mean,
                ev_se: se,
                n_trials: options.n_trials,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Safer,
    Comparable,
    Riskier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub condition: Condition,
    pub crash_type: CrashType,
    pub ev_mean: f64,
    pub baseline_ev_mean: f64,
    /// `ev_mean - baseline_ev_mean`.
    pub difference: f64,
    /// Standard error of the difference.
    pub difference_se: f64,
    pub verdict: Verdict,
}

/// Labels every non-baseline cell against the baseline of its crash type.
/// A difference larger than two standard errors of the difference is a
/// change in safety; anything smaller is comparable.
pub fn compare_to_baseline(estimates: &[RiskEstimate]) -> Result<Vec<BaselineComparison>> {
    let baseline: BTreeMap<CrashType, &RiskEstimate> = estimates
        .iter()
        .filter(|e| e.condition == Condition::Baseline)
        .map(|e| (e.crash_type, e))
        .collect();
    let mut out = Vec::new();
    for e in estimates.iter().filter(|e| e.condition != Condition::Baseline) {
        let b = baseline
            .get(&e.crash_type)
            .ok_or_else(|| Error::invalid(format!("no baseline estimate for {}", e.crash_type)))?;
        let difference = e.ev_mean - b.ev_mean;
        let difference_se = (e.ev_se * e.ev_se + b.ev_se * b.ev_se).sqrt();
        let verdict = if difference > 2.0 * difference_se {
            Verdict::Safer
        } else if difference < -2.0 * difference_se {
            Verdict::Riskier
        } else {
            Verdict::Comparable
        };
        out.push(BaselineComparison {
            condition: e.condition,
            crash_type: e.crash_type,
            ev_mean: e.ev_mean,
            baseline_ev_mean: b.ev_mean,
            difference,
            difference_se,
            verdict,
        });
    }
    Ok(out)
}
