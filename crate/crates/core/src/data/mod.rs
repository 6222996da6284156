//! Speed records, binned roadside counts and the transforms that turn them
//! into model features.

mod io;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    parse_fatality_points, parse_hifi_bins, parse_lowfi_records, read_fatality_points,
    read_hifi_bins, read_lowfi_records, read_speed_samples, write_fatality_points,
    write_hifi_bins, write_lowfi_records, FATALITY_HEADER, HIFI_HEADER, LOWFI_HEADER,
};

/// Default width of the roadside count bins, in mph.
pub const DEFAULT_BIN_WIDTH: f64 = 5.0;

/// Posted-speed zones covered by the roadside count data by default.
pub const DEFAULT_HIFI_ZONES: [u32; 4] = [40, 50, 55, 60];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Low,
    High,
}

/// Between-subjects technology group of a simulator participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechGroup {
    IvsPlusEs,
    IvsMinusEs,
    None,
}

/// Technology condition a speed was observed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Roadside signs only, no in-vehicle display.
    Baseline,
    /// In-vehicle display together with external signs.
    IvsPlusEs,
    /// In-vehicle display replacing external signs.
    IvsMinusEs,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Baseline, Condition::IvsPlusEs, Condition::IvsMinusEs];
    pub const IVS: [Condition; 2] = [Condition::IvsPlusEs, Condition::IvsMinusEs];

    /// External-sign indicator of the speed model. Only defined for the two
    /// IVS conditions.
    pub fn delta_es(self) -> Option<u8> {
        match self {
            Condition::Baseline => None,
            Condition::IvsPlusEs => Some(1),
            Condition::IvsMinusEs => Some(0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::IvsPlusEs => "ivs_plus_es",
            Condition::IvsMinusEs => "ivs_minus_es",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl TechGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            TechGroup::IvsPlusEs => "ivs_plus_es",
            TechGroup::IvsMinusEs => "ivs_minus_es",
            TechGroup::None => "none",
        }
    }
}

impl Fidelity {
    pub fn as_str(self) -> &'static str {
        match self {
            Fidelity::Low => "low",
            Fidelity::High => "high",
        }
    }
}

/// One observed vehicle speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedRecord {
    pub participant_id: String,
    pub fidelity: Fidelity,
    pub tech_group: TechGroup,
    pub ivs_present: bool,
    pub zone_mph: u32,
    pub speed_mph: f64,
}

impl SpeedRecord {
    /// Checks the record invariants against the configured zone set.
    pub fn validate(&self, zones: &[u32]) -> Result<()> {
        if !(self.speed_mph.is_finite() && self.speed_mph > 0.0) {
            return Err(Error::invalid(format!("speed must be positive, got {}", self.speed_mph)));
        }
        if !zones.contains(&self.zone_mph) {
            return Err(Error::invalid(format!("unknown zone {} mph", self.zone_mph)));
        }
        if self.fidelity == Fidelity::High && (self.tech_group != TechGroup::None || self.ivs_present) {
            return Err(Error::invalid("high-fidelity records must have tech_group none and no IVS"));
        }
        if self.ivs_present && self.tech_group == TechGroup::None {
            return Err(Error::invalid("IVS present but no technology group"));
        }
        Ok(())
    }

    pub fn condition(&self) -> Condition {
        match (self.ivs_present, self.tech_group) {
            (false, _) | (true, TechGroup::None) => Condition::Baseline,
            (true, TechGroup::IvsPlusEs) => Condition::IvsPlusEs,
            (true, TechGroup::IvsMinusEs) => Condition::IvsMinusEs,
        }
    }
}

/// Observed speed as a percentage of the posted speed.
pub fn percent_posted_speed(record: &SpeedRecord) -> f64 {
    100.0 * record.speed_mph / f64::from(record.zone_mph)
}

/// Vehicle count in one speed bin of one zone during one hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedZoneCount {
    pub zone_mph: u32,
    pub hour_index: u32,
    pub bin_lower_mph: f64,
    pub count: u64,
}

impl BinnedZoneCount {
    pub fn center(&self, bin_width: f64) -> f64 {
        self.bin_lower_mph + bin_width / 2.0
    }
}

/// Checks that `lower` sits on a multiple of `bin_width`.
pub(crate) fn on_bin_edge(lower: f64, bin_width: f64) -> bool {
    let k = lower / bin_width;
    (k - k.round()).abs() < 1e-9
}

/// Count-weighted mean of bin centers for one zone and one hour.
pub fn hourly_weighted_average(bins: &[BinnedZoneCount], bin_width: f64) -> Result<f64> {
    if !(bin_width > 0.0) {
        return Err(Error::invalid("bin width must be positive"));
    }
    if bins.is_empty() {
        return Err(Error::invalid("no bins for hour"));
    }
    let total: u64 = bins.iter().map(|b| b.count).sum();
    if total == 0 {
        return Err(Error::invalid(format!(
            "zone {} hour {}: zero total count",
            bins[0].zone_mph, bins[0].hour_index
        )));
    }
    let weighted: f64 = bins.iter().map(|b| b.center(bin_width) * b.count as f64).sum();
    Ok(weighted / total as f64)
}

/// Hourly weighted-average speeds per zone, in hour order. Hours whose total
/// count is zero are skipped.
pub fn hourly_averages(bins: &[BinnedZoneCount], bin_width: f64) -> Result<BTreeMap<u32, Vec<f64>>> {
    let mut grouped: BTreeMap<(u32, u32), Vec<BinnedZoneCount>> = BTreeMap::new();
    for b in bins {
        grouped.entry((b.zone_mph, b.hour_index)).or_default().push(b.clone());
    }
    let mut out: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for ((zone, _), hour) in grouped {
        if hour.iter().all(|b| b.count == 0) {
            continue;
        }
        out.entry(zone).or_default().push(hourly_weighted_average(&hour, bin_width)?);
    }
    Ok(out)
}

/// Per-vehicle speeds per zone, each counted vehicle placed at its bin center.
pub fn expand_bin_centers(bins: &[BinnedZoneCount], bin_width: f64) -> BTreeMap<u32, Vec<f64>> {
    let mut out: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for b in bins {
        let speeds = out.entry(b.zone_mph).or_default();
        speeds.extend(std::iter::repeat_n(b.center(bin_width), b.count as usize));
    }
    out
}

/// Speeds of records observed under `condition`, grouped by zone.
pub fn speeds_by_zone(records: &[SpeedRecord], condition: Condition) -> BTreeMap<u32, Vec<f64>> {
    let mut out: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.condition() == condition) {
        out.entry(r.zone_mph).or_default().push(r.speed_mph);
    }
    out
}

/// Median of a nonempty slice; even lengths use the midpoint of the two
/// central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median percent posted speed per condition.
pub fn median_percent_posted(records: &[SpeedRecord]) -> BTreeMap<Condition, f64> {
    let mut by: BTreeMap<Condition, Vec<f64>> = BTreeMap::new();
    for r in records {
        by.entry(r.condition()).or_default().push(percent_posted_speed(r));
    }
    by.into_iter()
        .filter_map(|(c, v)| median(&v).map(|m| (c, m)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bin(lower: f64, count: u64) -> BinnedZoneCount {
        BinnedZoneCount {
            zone_mph: 40,
            hour_index: 0,
            bin_lower_mph: lower,
            count,
        }
    }

    fn record(speed: f64, zone: u32) -> SpeedRecord {
        SpeedRecord {
            participant_id: "p01".into(),
            fidelity: Fidelity::Low,
            tech_group: TechGroup::IvsMinusEs,
            ivs_present: false,
            zone_mph: zone,
            speed_mph: speed,
        }
    }

    #[test]
    fn weighted_average_equal_bins() {
        let avg = hourly_weighted_average(&[bin(40.0, 2), bin(45.0, 2)], 5.0).unwrap();
        assert_eq!(avg, 45.0);
    }

    #[test]
    fn weighted_average_single_bin() {
        assert_eq!(hourly_weighted_average(&[bin(50.0, 7)], 5.0).unwrap(), 52.5);
    }

    #[test]
    fn weighted_average_zero_count() {
        assert!(hourly_weighted_average(&[bin(40.0, 0), bin(45.0, 0)], 5.0).is_err());
        assert!(hourly_weighted_average(&[], 5.0).is_err());
    }

    #[test]
    fn percent_posted() {
        assert_eq!(percent_posted_speed(&record(55.0, 55)), 100.0);
        assert!((percent_posted_speed(&record(68.145, 55)) - 123.9).abs() < 1e-9);
        assert!((percent_posted_speed(&record(58.74, 55)) - 106.8).abs() < 1e-9);
    }

    #[test]
    fn conditions() {
        let mut r = record(50.0, 40);
        assert_eq!(r.condition(), Condition::Baseline);
        r.ivs_present = true;
        assert_eq!(r.condition(), Condition::IvsMinusEs);
        r.tech_group = TechGroup::IvsPlusEs;
        assert_eq!(r.condition(), Condition::IvsPlusEs);
        assert_eq!(Condition::IvsPlusEs.delta_es(), Some(1));
        assert_eq!(Condition::IvsMinusEs.delta_es(), Some(0));
        assert_eq!(Condition::Baseline.delta_es(), None);
    }

    #[test]
    fn record_validation() {
        let zones = [40, 55];
        assert!(record(50.0, 40).validate(&zones).is_ok());
        assert!(record(0.0, 40).validate(&zones).is_err());
        assert!(record(50.0, 45).validate(&zones).is_err());
        let mut hi = record(50.0, 40);
        hi.fidelity = Fidelity::High;
        assert!(hi.validate(&zones).is_err());
        hi.tech_group = TechGroup::None;
        assert!(hi.validate(&zones).is_ok());
    }

    #[test]
    fn hourly_grouping() {
        let mut bins = vec![bin(40.0, 1), bin(45.0, 1)];
        bins.push(BinnedZoneCount { hour_index: 1, ..bin(50.0, 3) });
        bins.push(BinnedZoneCount { zone_mph: 55, ..bin(55.0, 1) });
        let avgs = hourly_averages(&bins, 5.0).unwrap();
        assert_eq!(avgs[&40], vec![45.0, 52.5]);
        assert_eq!(avgs[&55], vec![57.5]);
        let expanded = expand_bin_centers(&bins, 5.0);
        assert_eq!(expanded[&40], vec![42.5, 47.5, 52.5, 52.5, 52.5]);
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[1.0, 3.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    proptest! {
        #[test]
        fn weighted_average_within_centers(
            bins in prop::collection::vec((0u32..20, 0u64..50), 1..10)
        ) {
            let bins: Vec<_> = bins.iter().map(|&(k, c)| bin(5.0 * k as f64, c)).collect();
            prop_assume!(bins.iter().any(|b| b.count > 0));
            let avg = hourly_weighted_average(&bins, 5.0).unwrap();
            let lo = bins.iter().map(|b| b.center(5.0)).fold(f64::INFINITY, f64::min);
            let hi = bins.iter().map(|b| b.center(5.0)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(avg >= lo - 1e-9 && avg <= hi + 1e-9);
        }

        #[test]
        fn percent_posted_scale_invariant(speed in 1.0f64..120.0, zone in 10u32..60) {
            let a = percent_posted_speed(&record(speed, zone));
            let b = percent_posted_speed(&record(2.0 * speed, 2 * zone));
            prop_assert!((a - b).abs() < 1e-9 * a.abs());
        }
    }
}
