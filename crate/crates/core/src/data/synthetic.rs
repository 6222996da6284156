//! Seeded synthetic datasets with calibrated speed and fatality profiles.
//!
//! Speeds are drawn as percentages of the posted speed. For a zone `z` and a
//! condition profile `pct(z) = pct_at_reference + pct_slope_per_mph * (z - reference_zone_mph)`:
//!
//! * simulator speed = `z * (pct(z) + u_i + e) / 100` with a per-participant
//!   offset `u_i ~ N(0, participant_sd_pct)` shared across conditions and an
//!   observation term `e ~ N(0, observation_sd_pct)`;
//! * roadside speed = `z * (pct(z) + v_h + e) / 100` with an hourly offset
//!   `v_h ~ N(0, hourly_sd_pct)` and a vehicle term `e ~ N(0, vehicle_sd_pct)`,
//!   then binned;
//! * fatality fractions are `Binomial(n_obs, Phi(a + b s)) / n_obs`.
//!
//! Draws that come out non-positive are redrawn. Each of the three outputs
//! uses its own random stream, so changing one part of the configuration does
//! not perturb the others.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{on_bin_edge, BinnedZoneCount, Fidelity, SpeedRecord, TechGroup, DEFAULT_BIN_WIDTH};
use crate::error::{Error, Result};
use crate::fatality::{standard_normal_cdf, CrashType, CurvePoint};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedProfile {
    pub pct_at_reference: f64,
    #[serde(default)]
    pub pct_slope_per_mph: f64,
}

impl SpeedProfile {
    pub const fn flat(pct: f64) -> Self {
        SpeedProfile {
            pct_at_reference: pct,
            pct_slope_per_mph: 0.0,
        }
    }

    pub fn percent(&self, zone: f64, reference_zone: f64) -> f64 {
        self.pct_at_reference + self.pct_slope_per_mph * (zone - reference_zone)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowFiConfig {
    pub zones: Vec<u32>,
    pub reference_zone_mph: f64,
    pub participants_per_group: usize,
    /// Observations per participant, zone and IVS state.
    pub laps: usize,
    pub baseline: SpeedProfile,
    pub ivs_plus_es: SpeedProfile,
    pub ivs_minus_es: SpeedProfile,
    pub participant_sd_pct: f64,
    pub observation_sd_pct: f64,
}

impl Default for LowFiConfig {
    fn default() -> Self {
        LowFiConfig {
            zones: vec![30, 35, 40, 45, 50, 55, 60, 65],
            reference_zone_mph: 47.5,
            participants_per_group: 24,
            laps: 2,
            baseline: SpeedProfile::flat(106.79),
            ivs_plus_es: SpeedProfile {
                pct_at_reference: 106.44,
                pct_slope_per_mph: -0.5,
            },
            ivs_minus_es: SpeedProfile {
                pct_at_reference: 123.90,
                pct_slope_per_mph: -0.5,
            },
            participant_sd_pct: 3.0,
            observation_sd_pct: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HiFiConfig {
    pub zones: Vec<u32>,
    pub reference_zone_mph: f64,
    pub profile: SpeedProfile,
    pub hours: u32,
    /// Inclusive range of vehicles counted per hour.
    pub vehicles_per_hour: [u32; 2],
    pub hourly_sd_pct: f64,
    pub vehicle_sd_pct: f64,
    pub bin_width: f64,
}

impl Default for HiFiConfig {
    fn default() -> Self {
        HiFiConfig {
            zones: super::DEFAULT_HIFI_ZONES.to_vec(),
            reference_zone_mph: 50.0,
            profile: SpeedProfile::flat(106.79),
            hours: 168,
            vehicles_per_hour: [40, 160],
            hourly_sd_pct: 2.5,
            vehicle_sd_pct: 6.0,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub crash_type: CrashType,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FatalityPointsConfig {
    pub curves: Vec<CurveSpec>,
    pub speeds_mph: Vec<f64>,
    pub n_obs: u64,
}

impl Default for FatalityPointsConfig {
    fn default() -> Self {
        FatalityPointsConfig {
            curves: vec![
                CurveSpec {
                    crash_type: CrashType::Pedestrian,
                    a: -7.0,
                    b: 0.25,
                },
                CurveSpec {
                    crash_type: CrashType::SideImpact,
                    a: -36.0 / 7.0,
                    b: 1.0 / 7.0,
                },
                CurveSpec {
                    crash_type: CrashType::FrontImpact,
                    a: -4.85,
                    b: 0.1,
                },
            ],
            speeds_mph: (1..=16).map(|k| 5.0 * k as f64).collect(),
            n_obs: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub lowfi: LowFiConfig,
    pub hifi: HiFiConfig,
    pub fatality: FatalityPointsConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub lowfi: Vec<SpeedRecord>,
    pub hifi: Vec<BinnedZoneCount>,
    pub fatality: Vec<(CrashType, CurvePoint)>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be nonnegative, got {v}")))
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let lo = &self.lowfi;
        if lo.zones.is_empty() || self.hifi.zones.is_empty() {
            return Err(Error::invalid("synthetic zone lists must not be empty"));
        }
        if lo.zones.iter().chain(&self.hifi.zones).any(|&z| z == 0) {
            return Err(Error::invalid("zones must be positive"));
        }
        if lo.participants_per_group == 0 || lo.laps == 0 {
            return Err(Error::invalid("participants_per_group and laps must be positive"));
        }
        for p in [&lo.baseline, &lo.ivs_plus_es, &lo.ivs_minus_es, &self.hifi.profile] {
            positive("profile percent", p.pct_at_reference)?;
        }
        // Spreads must be strictly positive: zero spread would make every
        // hour (or participant) identical.
        positive("participant_sd_pct", lo.participant_sd_pct)?;
        positive("observation_sd_pct", lo.observation_sd_pct)?;
        let hi = &self.hifi;
        positive("hourly_sd_pct", hi.hourly_sd_pct)?;
        positive("vehicle_sd_pct", hi.vehicle_sd_pct)?;
        positive("bin_width", hi.bin_width)?;
        nonnegative("reference_zone_mph", lo.reference_zone_mph)?;
        nonnegative("reference_zone_mph", hi.reference_zone_mph)?;
        if hi.hours == 0 || hi.vehicles_per_hour[0] == 0 || hi.vehicles_per_hour[0] > hi.vehicles_per_hour[1] {
            return Err(Error::invalid("hours and vehicles_per_hour must be positive and ordered"));
        }
        let f = &self.fatality;
        if f.n_obs == 0 || f.speeds_mph.is_empty() {
            return Err(Error::invalid("fatality points need speeds and n_obs > 0"));
        }
        for c in &f.curves {
            if !(c.a.is_finite() && c.b > 0.0 && c.b.is_finite()) {
                return Err(Error::invalid(format!("{}: curve slope must be positive", c.crash_type)));
            }
        }
        Ok(())
    }
}

/// Draws `zone * (pct + N(0, sd)) / 100` until it is positive.
fn draw_speed<R: Rng>(rng: &mut R, zone: f64, pct: f64, noise: &Normal<f64>) -> f64 {
    loop {
        let s = zone * (pct + noise.sample(rng)) / 100.0;
        if s > 0.0 {
            return s;
        }
    }
}

fn round_to(x: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (x * k).round() / k
}

fn generate_lowfi(cfg: &LowFiConfig, seed: u64) -> Result<Vec<SpeedRecord>> {
    let mut rng = stream(seed, Domain::SyntheticLowFi, 0);
    let between = Normal::new(0.0, cfg.participant_sd_pct).map_err(|e| Error::invalid(e.to_string()))?;
    let within = Normal::new(0.0, cfg.observation_sd_pct).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::new();
    let mut pid = 0usize;
    for (group, ivs_profile) in [
        (TechGroup::IvsPlusEs, &cfg.ivs_plus_es),
        (TechGroup::IvsMinusEs, &cfg.ivs_minus_es),
    ] {
        for _ in 0..cfg.participants_per_group {
            pid += 1;
            let id = format!("p{pid:03}");
            let offset = between.sample(&mut rng);
            for &zone in &cfg.zones {
                let z = f64::from(zone);
                for _ in 0..cfg.laps {
                    for (ivs_present, profile) in [(false, &cfg.baseline), (true, ivs_profile)] {
                        let pct = profile.percent(z, cfg.reference_zone_mph) + offset;
                        out.push(SpeedRecord {
                            participant_id: id.clone(),
                            fidelity: Fidelity::Low,
                            tech_group: group,
                            ivs_present,
                            zone_mph: zone,
                            speed_mph: round_to(draw_speed(&mut rng, z, pct, &within), 3),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn generate_hifi(cfg: &HiFiConfig, seed: u64) -> Result<Vec<BinnedZoneCount>> {
    let hourly = Normal::new(0.0, cfg.hourly_sd_pct).map_err(|e| Error::invalid(e.to_string()))?;
    let vehicle = Normal::new(0.0, cfg.vehicle_sd_pct).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::new();
    for (zi, &zone) in cfg.zones.iter().enumerate() {
        let mut rng = stream(seed, Domain::SyntheticHighFi, zi as u64);
        let z = f64::from(zone);
        for hour in 0..cfg.hours {
            let pct = cfg.profile.percent(z, cfg.reference_zone_mph) + hourly.sample(&mut rng);
            let n = rng.random_range(cfg.vehicles_per_hour[0]..=cfg.vehicles_per_hour[1]);
            let mut bins: BTreeMap<i64, u64> = BTreeMap::new();
            for _ in 0..n {
                let s = draw_speed(&mut rng, z, pct, &vehicle);
                *bins.entry((s / cfg.bin_width).floor() as i64).or_default() += 1;
            }
            for (k, count) in bins {
                let lower = k as f64 * cfg.bin_width;
                debug_assert!(on_bin_edge(lower, cfg.bin_width));
                out.push(BinnedZoneCount {
                    zone_mph: zone,
                    hour_index: hour,
                    bin_lower_mph: lower,
                    count,
                });
            }
        }
    }
    Ok(out)
}

fn generate_fatality(cfg: &FatalityPointsConfig, seed: u64) -> Result<Vec<(CrashType, CurvePoint)>> {
    let mut out = Vec::new();
    for (ci, curve) in cfg.curves.iter().enumerate() {
        let mut rng = stream(seed, Domain::SyntheticFatality, ci as u64);
        for &s in &cfg.speeds_mph {
            let p = standard_normal_cdf(curve.a + curve.b * s);
            let k = Binomial::new(cfg.n_obs, p)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng);
            out.push((
                curve.crash_type,
                CurvePoint {
                    speed_mph: s,
                    fatality_fraction: k as f64 / cfg.n_obs as f64,
                    n_obs: cfg.n_obs as f64,
                },
            ));
        }
    }
    Ok(out)
}

/// Generates simulator records, roadside bin counts and fatality points.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    Ok(SyntheticDataset {
        lowfi: generate_lowfi(&cfg.lowfi, seed)?,
        hifi: generate_hifi(&cfg.hifi, seed)?,
        fatality: generate_fatality(&cfg.fatality, seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{median_percent_posted, write_hifi_bins, write_lowfi_records, Condition};

    fn bytes(d: &SyntheticDataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_lowfi_records(&mut buf, &d.lowfi).unwrap();
        write_hifi_bins(&mut buf, &d.hifi).unwrap();
        crate::data::write_fatality_points(&mut buf, &d.fatality).unwrap();
        buf
    }

    #[test]
    fn deterministic() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic_dataset(&cfg, 7).unwrap();
        let b = generate_synthetic_dataset(&cfg, 7).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let c = generate_synthetic_dataset(&cfg, 8).unwrap();
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn baseline_median_on_target() {
        let cfg = SyntheticConfig::default();
        let d = generate_synthetic_dataset(&cfg, 7).unwrap();
        let n_baseline = d.lowfi.iter().filter(|r| r.condition() == Condition::Baseline).count();
        assert!(n_baseline >= 500);
        let medians = median_percent_posted(&d.lowfi);
        let m = medians[&Condition::Baseline];
        assert!((105.7..=107.9).contains(&m), "{m}");
        assert!(medians[&Condition::IvsMinusEs] > medians[&Condition::IvsPlusEs] + 10.0);
    }

    #[test]
    fn hifi_zones_follow_config() {
        let d = generate_synthetic_dataset(&SyntheticConfig::default(), 7).unwrap();
        let zones: std::collections::BTreeSet<u32> = d.hifi.iter().map(|b| b.zone_mph).collect();
        assert_eq!(zones.into_iter().collect::<Vec<_>>(), vec![40, 50, 55, 60]);
        assert!(d.hifi.iter().all(|b| on_bin_edge(b.bin_lower_mph, 5.0) && b.count > 0));
    }

    #[test]
    fn records_are_valid() {
        let cfg = SyntheticConfig::default();
        let d = generate_synthetic_dataset(&cfg, 3).unwrap();
        for r in &d.lowfi {
            r.validate(&cfg.lowfi.zones).unwrap();
        }
        assert_eq!(d.fatality.len(), 3 * cfg.fatality.speeds_mph.len());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SyntheticConfig::default();
        cfg.lowfi.observation_sd_pct = 0.0;
        assert!(generate_synthetic_dataset(&cfg, 1).is_err());
        let mut cfg = SyntheticConfig::default();
        cfg.hifi.zones.clear();
        assert!(generate_synthetic_dataset(&cfg, 1).is_err());
        let mut cfg = SyntheticConfig::default();
        cfg.hifi.vehicle_sd_pct = -1.0;
        assert!(generate_synthetic_dataset(&cfg, 1).is_err());
    }
}
