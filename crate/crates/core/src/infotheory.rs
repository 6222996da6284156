//! Entropy, K-L divergence and approximation efficiency, all in bits.

use serde::{Deserialize, Serialize};

use crate::density::DiscreteDistribution;
use crate::error::{Error, Result};

/// How well a low-fidelity distribution `Q` stands in for the high-fidelity
/// distribution `P` in one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub zone_mph: u32,
    /// `H(P)`.
    pub entropy_bits: f64,
    /// `K(P||Q)`.
    pub kl_bits: f64,
    /// `I(Q) = 100 K / H`: extra description length relative to `H(P)`.
    pub info_overhead_pct: f64,
    /// `E(Q) = 100 - I(Q)`. Negative when the divergence exceeds the entropy.
    pub efficiency_pct: f64,
}

/// `-sum p log2 p`, with `0 log 0 = 0`.
pub fn shannon_entropy(p: &DiscreteDistribution) -> f64 {
    let h: f64 = p
        .masses()
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| -m * m.log2())
        .sum();
    h.max(0.0)
}

/// `sum p log2(p/q)`. Infinite when `Q` has a hole where `P` has mass.
pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if !p.same_grid(q) {
        return Err(Error::invalid("K-L divergence needs both distributions on the same grid"));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.masses().iter().zip(q.masses()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pi * (pi / qi).log2();
    }
    // Rounding can leave a tiny negative residue when P == Q.
    Ok(kl.max(0.0))
}

impl FidelityReport {
    pub fn from_parts(zone_mph: u32, entropy_bits: f64, kl_bits: f64) -> Result<Self> {
        if !(entropy_bits > 0.0) {
            return Err(Error::numerical(format!(
                "zone {zone_mph}: reference distribution has zero entropy, efficiency undefined"
            )));
        }
        let info_overhead_pct = 100.0 * kl_bits / entropy_bits;
        Ok(FidelityReport {
            zone_mph,
            entropy_bits,
            kl_bits,
            info_overhead_pct,
            efficiency_pct: 100.0 - info_overhead_pct,
        })
    }
}

/// Efficiency of approximating `p` (reference) with `q`.
pub fn approximation_efficiency(
    zone_mph: u32,
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
) -> Result<FidelityReport> {
    let h = shannon_entropy(p);
    let kl = kl_divergence(p, q)?;
    FidelityReport::from_parts(zone_mph, h, kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn dist(masses: &[f64]) -> DiscreteDistribution {
        let grid = (0..masses.len()).map(|i| i as f64).collect();
        DiscreteDistribution::new(grid, masses.to_vec()).unwrap()
    }

    #[test]
    fn entropy_values() {
        assert_eq!(shannon_entropy(&dist(&[0.5, 0.5])), 1.0);
        assert_eq!(shannon_entropy(&dist(&[1.0])), 0.0);
        assert_eq!(shannon_entropy(&dist(&[1.0, 0.0])), 0.0);
        // -(0.25 log2 0.25 + 0.75 log2 0.75) = 0.5 + 0.311278...
        assert!((shannon_entropy(&dist(&[0.25, 0.75])) - 0.811_278_124_459_132_8).abs() < 1e-12);
    }

    #[test]
    fn kl_values() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.25, 0.75]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        // 0.5 log2 2 + 0.5 log2(2/3) = 1 - 0.5 log2 3
        let forward = 1.0 - 0.5 * 3f64.log2();
        assert!((kl_divergence(&p, &q).unwrap() - forward).abs() < 1e-12);
        assert!((forward - 0.207_519).abs() < 1e-6);
        // 0.25 log2 0.5 + 0.75 log2 1.5 = 0.75 log2 3 - 1
        let backward = 0.75 * 3f64.log2() - 1.0;
        assert!((kl_divergence(&q, &p).unwrap() - backward).abs() < 1e-12);
        assert!((forward - backward).abs() > 1e-3);
    }

    #[test]
    fn kl_grid_mismatch() {
        let p = dist(&[0.5, 0.5]);
        let q = DiscreteDistribution::new(vec![0.0, 2.0], vec![0.5, 0.5]).unwrap();
        assert!(kl_divergence(&p, &q).is_err());
    }

    #[test]
    fn kl_hole_is_infinite() {
        assert_eq!(kl_divergence(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn efficiency_arithmetic() {
        let r = FidelityReport::from_parts(55, 2.0, 0.38).unwrap();
        assert!((r.info_overhead_pct - 19.0).abs() < 1e-12);
        assert!((r.efficiency_pct - 81.0).abs() < 1e-12);
        let p = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(approximation_efficiency(40, &p, &p).unwrap().efficiency_pct, 100.0);
        assert!(approximation_efficiency(40, &dist(&[1.0, 0.0]), &dist(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn efficiency_can_go_negative() {
        let p = dist(&[0.5, 0.5, 0.0]);
        let q = dist(&[1e-6, 1e-6, 1.0 - 2e-6]);
        let r = approximation_efficiency(40, &p, &q).unwrap();
        assert!(r.efficiency_pct < 0.0);
    }

    #[test]
    fn kl_nonnegative_random_trials() {
        let mut rng = crate::rng::stream(5, crate::rng::Domain::MonteCarlo, 0);
        for _ in 0..10_000 {
            let n = rng.random_range(1..12);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
                DiscreteDistribution::from_weights((0..n).map(|i| i as f64).collect(), w).unwrap()
            };
            let (p, q) = (draw(&mut rng), draw(&mut rng));
            assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            let r = approximation_efficiency(0, &p, &q);
            if let Ok(r) = r {
                assert!(r.efficiency_pct <= 100.0);
            }
        }
    }

    proptest! {
        #[test]
        fn entropy_bounded_by_grid_size(w in prop::collection::vec(0.0f64..1.0, 1..40)) {
            prop_assume!(w.iter().sum::<f64>() > 1e-6);
            let n = w.len();
            let p = DiscreteDistribution::from_weights((0..n).map(|i| i as f64).collect(), w).unwrap();
            let h = shannon_entropy(&p);
            prop_assert!(h >= 0.0 && h <= (n as f64).log2() + 1e-12);
        }

        #[test]
        fn efficiency_hundred_only_for_identical(w in prop::collection::vec(0.01f64..1.0, 2..20), k in 0usize..20, bump in 0.01f64..1.0) {
            let n = w.len();
            let grid: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let p = DiscreteDistribution::from_weights(grid.clone(), w.clone()).unwrap();
            let mut w2 = w;
            w2[k % n] += bump;
            let q = DiscreteDistribution::from_weights(grid, w2).unwrap();
            let r = approximation_efficiency(0, &p, &q).unwrap();
            prop_assert!(r.efficiency_pct < 100.0);
            prop_assert_eq!(approximation_efficiency(0, &p, &p).unwrap().efficiency_pct, 100.0);
        }
    }
}
