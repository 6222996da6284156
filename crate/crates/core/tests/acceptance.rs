//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use mfrisk::data::Condition;
use mfrisk::density::uniform_grid;
use mfrisk::fatality::{log_likelihood, probit_fit, score, standard_normal_cdf, CrashType, CurvePoint};
use mfrisk::infotheory::{kl_divergence, shannon_entropy};
use mfrisk::model::{design_row, fit_least_squares, kfold_cv};
use mfrisk::pipeline::{results_bytes, run_full_pipeline, run_stages, OutputFormat, PipelineInputs, RunConfig};
use mfrisk::risk::{expected_fatality, expected_value_closed_form, monte_carlo_risk, RiskEstimate};
use mfrisk::rng::{stream, Domain};
use mfrisk::{data::synthetic::generate_synthetic_dataset, Coefficients, Density, DiscreteDistribution, TrainingRow};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bundled_config() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic/config.json");
    RunConfig::from_json_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn dist(masses: &[f64]) -> DiscreteDistribution {
    DiscreteDistribution::new((0..masses.len()).map(|i| i as f64).collect(), masses.to_vec()).unwrap()
}

fn information_theory() -> Outcome {
    let half = dist(&[0.5, 0.5]);
    let skew = dist(&[0.25, 0.75]);
    let h = shannon_entropy(&half);
    let kl_self = kl_divergence(&half, &half).map_err(|e| e.to_string())?;
    let kl = kl_divergence(&half, &skew).map_err(|e| e.to_string())?;
    // 0.5 log2(0.5/0.25) + 0.5 log2(0.5/0.75)
    let exact = 1.0 - 0.5 * 3f64.log2();
    check(
        (h - 1.0).abs() < 1e-9
            && kl_self.abs() < 1e-9
            && (kl - exact).abs() < 1e-9
            && (kl - 0.207519).abs() < 5e-7,
        format!("H={h} KL(P||P)={kl_self} KL={kl:.9}"),
    )
}

fn kde_normalization() -> Outcome {
    let mut rng = stream(101, Domain::MonteCarlo, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..200);
        let width = rng.random_range(0.5..3.0);
        let samples: Vec<f64> = (0..n).map(|_| rng.random_range(20.0..80.0)).collect();
        let d = Density::fit(&samples, width).map_err(|e| e.to_string())?;
        // composite Simpson over the padded support
        let (lo, hi) = (d.min() - 12.0 * width, d.max() + 12.0 * width);
        let m = 2 * ((hi - lo) / (width / 20.0)).ceil() as usize;
        let step = (hi - lo) / m as f64;
        let mut acc = d.evaluate(lo) + d.evaluate(hi);
        for i in 1..m {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * d.evaluate(lo + step * i as f64);
        }
        let integral = acc * step / 3.0;
        worst = worst.max((integral - 1.0).abs());
    }
    let samples: Vec<f64> = (0..500).map(|_| 45.0 + 10.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let d = Density::fit(&samples, 2.0).map_err(|e| e.to_string())?;
    let mut draws: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let ks = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = d.cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    check(worst <= 1e-3 && ks < 0.01, format!("max |integral-1|={worst:.2e} KS={ks:.4}"))
}

fn exact_recovery() -> Outcome {
    let truth = Coefficients([4.0, 0.8, -3.5, 0.004]);
    let mut rng = stream(202, Domain::MonteCarlo, 0);
    let rows: Vec<TrainingRow> = (0..200)
        .map(|i| {
            let s = rng.random_range(30.0..75.0);
            let d = (i % 2) as u8;
            TrainingRow {
                baseline_speed: s,
                delta_es: d,
                target_speed: truth.predict(s, d),
            }
        })
        .collect();
    let pooled = fit_least_squares(&rows).map_err(|e| e.to_string())?;
    let cv = kfold_cv(&rows, 10, &mut stream(202, Domain::CrossValidation, 0)).map_err(|e| e.to_string())?;
    let err = |c: &Coefficients| c.0.iter().zip(&truth.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let worst_fold = cv.fold_weights.iter().map(err).fold(0.0, f64::max);
    let mae = cv.median_abs_error().map_err(|e| e.to_string())?;
    // sanity on the design row itself
    let row = design_row(50.0, 1);
    check(
        err(&pooled) < 1e-6 && worst_fold < 1e-6 && mae < 1e-6 && row == [1.0, 50.0, 1.0, 2500.0],
        format!("pooled err={:.2e} worst fold err={worst_fold:.2e} CV median |e|={mae:.2e}", err(&pooled)),
    )
}

fn probit_recovery() -> Outcome {
    let (a0, b0) = (-10.0, 0.25);
    let n = 10_000u64;
    let mut rng = stream(303, Domain::SyntheticFatality, 0);
    let points: Vec<CurvePoint> = (1..=8)
        .map(|k| {
            let s = 10.0 * k as f64;
            let p = standard_normal_cdf(a0 + b0 * s);
            let deaths = (0..n).filter(|_| rng.random::<f64>() < p).count();
            CurvePoint {
                speed_mph: s,
                fatality_fraction: deaths as f64 / n as f64,
                n_obs: n as f64,
            }
        })
        .collect();
    let fit = probit_fit(CrashType::Pedestrian, &points).map_err(|e| e.to_string())?;
    let (a, b) = (fit.curve.a, fit.curve.b);
    let total: f64 = points.iter().map(|p| p.n_obs).sum();
    let mean_ll = |a: f64, b: f64| log_likelihood(&points, a, b) / total;
    let h = 1e-6;
    let fd = [
        (mean_ll(a + h, b) - mean_ll(a - h, b)) / (2.0 * h),
        (mean_ll(a, b + h) - mean_ll(a, b - h)) / (2.0 * h),
    ];
    let g = score(&points, a, b).map(|x| x / total);
    let rel_a = (a / a0 - 1.0).abs();
    let rel_b = (b / b0 - 1.0).abs();
    let grad = fd[0].abs().max(fd[1].abs()).max(g[0].abs()).max(g[1].abs());
    check(
        rel_a < 0.05 && rel_b < 0.05 && grad < 1e-5,
        format!("a={a:.4} ({:.2}%) b={b:.5} ({:.2}%) |grad|={grad:.2e}", 100.0 * rel_a, 100.0 * rel_b),
    )
}

fn closed_form_agreement() -> Outcome {
    let cfg = bundled_config();
    let out = run_full_pipeline(&cfg).map_err(|e| e.to_string())?;
    let (lo, hi) = out.distributions.support(12.0).ok_or("no distributions")?;
    let grid = uniform_grid(lo, hi, 0.05);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut ok = out.estimates.len() == 9;
    for e in &out.estimates {
        let curve = out.curves.iter().find(|c| c.crash_type == e.crash_type).ok_or("missing curve")?;
        let speeds = out
            .distributions
            .discretize_marginal(e.condition, &out.marginal, &grid)
            .map_err(|x| x.to_string())?;
        let cf = expected_value_closed_form(&speeds, curve);
        worst_identity = worst_identity.max((cf - (1.0 - 2.0 * expected_fatality(&speeds, curve))).abs());
        let diff = (e.ev_mean - cf).abs();
        // cells pinned at -1 have zero spread
        let within = diff < 3.0 * e.ev_se || diff < 1e-12;
        ok &= within && e.n_trials == 100_000;
        if e.ev_se > 0.0 {
            worst_ratio = worst_ratio.max(diff / e.ev_se);
        }
    }
    check(
        ok && worst_identity < 1e-12,
        format!("worst |MC-closed form|/SE={worst_ratio:.2} identity err={worst_identity:.1e}"),
    )
}

fn determinism() -> Outcome {
    let base = bundled_config();
    let mut bytes = Vec::new();
    for workers in [1, 8, 1, 8] {
        let cfg = RunConfig {
            workers: Some(workers),
            ..base.clone()
        };
        let out = run_full_pipeline(&cfg).map_err(|e| e.to_string())?;
        bytes.push(results_bytes(&out.estimates, OutputFormat::Json).map_err(|e| e.to_string())?);
    }
    let same = bytes.windows(2).all(|w| w[0] == w[1]);
    check(same, format!("4 runs (workers 1, 8, 1, 8): {} bytes each, identical={same}", bytes[0].len()))
}

fn cell(estimates: &[RiskEstimate], c: Condition, t: CrashType) -> f64 {
    estimates
        .iter()
        .find(|e| e.condition == c && e.crash_type == t)
        .map(|e| e.ev_mean)
        .expect("cell present")
}

fn reenactment() -> Outcome {
    let cfg = bundled_config();
    let out = run_full_pipeline(&cfg).map_err(|e| e.to_string())?;
    let mean_e = out.compare.mean_efficiency_pct;
    let ev = |c, t| cell(&out.estimates, c, t);
    let verdict = |c, t| {
        out.comparisons
            .iter()
            .find(|x| x.condition == c && x.crash_type == t)
            .map(|x| x.verdict)
    };
    use mfrisk::risk::Verdict::{Riskier, Safer};
    use Condition::{Baseline, IvsMinusEs, IvsPlusEs};
    use CrashType::{FrontImpact, Pedestrian, SideImpact};
    let a = (70.0..=95.0).contains(&mean_e);
    let b = verdict(IvsMinusEs, FrontImpact) == Some(Riskier)
        && verdict(IvsMinusEs, SideImpact) == Some(Riskier)
        && verdict(IvsPlusEs, FrontImpact) == Some(Safer)
        && Condition::ALL.iter().all(|&c| ev(c, Pedestrian) <= -0.9);
    let targets = [(Pedestrian, -0.99), (SideImpact, -0.92), (FrontImpact, -0.37)];
    let c = targets.iter().all(|&(t, v)| (ev(Baseline, t) - v).abs() <= 0.10);
    check(
        a && b && c,
        format!(
            "mean E(Q)={mean_e:.1}% baseline=({:.3}, {:.3}, {:.3}) ivs+es front={:.3} ivs-es front={:.3} side={:.3}",
            ev(Baseline, Pedestrian),
            ev(Baseline, SideImpact),
            ev(Baseline, FrontImpact),
            ev(IvsPlusEs, FrontImpact),
            ev(IvsMinusEs, FrontImpact),
            ev(IvsMinusEs, SideImpact),
        ),
    )
}

fn random_config(rng: &mut impl Rng, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        n_trials: 5_000,
        n_pred: 1_000,
        ..RunConfig::default()
    };
    let s = &mut cfg.synthetic;
    s.lowfi.participants_per_group = rng.random_range(8..30);
    s.lowfi.baseline.pct_at_reference = rng.random_range(95.0..115.0);
    s.lowfi.ivs_plus_es.pct_at_reference = rng.random_range(95.0..125.0);
    s.lowfi.ivs_plus_es.pct_slope_per_mph = rng.random_range(-1.0..0.5);
    s.lowfi.ivs_minus_es.pct_at_reference = rng.random_range(100.0..130.0);
    s.lowfi.ivs_minus_es.pct_slope_per_mph = rng.random_range(-1.0..0.5);
    s.lowfi.observation_sd_pct = rng.random_range(2.0..8.0);
    s.hifi.profile.pct_at_reference = rng.random_range(95.0..115.0);
    s.hifi.hours = rng.random_range(24..120);
    s.hifi.hourly_sd_pct = rng.random_range(1.0..4.0);
    s.hifi.vehicle_sd_pct = rng.random_range(3.0..9.0);
    for c in &mut s.fatality.curves {
        c.a = rng.random_range(-9.0..-3.0);
        c.b = rng.random_range(0.05..0.3);
    }
    cfg.zone_weights = Some(cfg.zones.iter().map(|_| rng.random_range(0.1..1.0)).collect());
    cfg
}

fn monotonicity() -> Outcome {
    let mut rng = stream(808, Domain::MonteCarlo, 0);
    let mut checked = 0;
    let mut violations = Vec::new();
    for k in 0..20 {
        let cfg = random_config(&mut rng, 1_000 + k);
        let data = generate_synthetic_dataset(&cfg.synthetic, cfg.seed).map_err(|e| e.to_string())?;
        let inputs = PipelineInputs {
            lowfi: data.lowfi,
            hifi: data.hifi,
            fatality: data.fatality,
        };
        let out = run_stages(&cfg, &inputs).map_err(|e| format!("config {k}: {e}"))?;
        let (lo, hi) = out.distributions.support(12.0).ok_or("no distributions")?;
        let grid = uniform_grid(lo, hi + 5.0, 0.25);
        let closed = |d: &mfrisk::ConditionDistributions| -> Result<BTreeMap<(Condition, CrashType), f64>, String> {
            let mut m = BTreeMap::new();
            for c in Condition::ALL {
                let speeds = d.discretize_marginal(c, &out.marginal, &grid).map_err(|e| e.to_string())?;
                for curve in &out.curves {
                    m.insert((c, curve.crash_type), expected_value_closed_form(&speeds, curve));
                }
            }
            Ok(m)
        };
        let before_cf = closed(&out.distributions)?;
        for c in Condition::ALL {
            let mut shifted = out.distributions.clone();
            shifted.shift_condition(c, 5.0);
            let after = monte_carlo_risk(&out.marginal, &shifted, &out.curves, &Condition::ALL, cfg.simulation_options())
                .map_err(|e| e.to_string())?;
            let after_cf = closed(&shifted)?;
            for (e0, e1) in out.estimates.iter().zip(&after) {
                checked += 1;
                if e1.ev_mean > e0.ev_mean {
                    violations.push(format!("config {k} shift {c}: {} {}", e0.condition, e0.crash_type));
                }
            }
            for (key, v0) in &before_cf {
                if after_cf[key] > v0 + 1e-12 {
                    violations.push(format!("config {k} shift {c}: closed form {key:?}"));
                }
            }
        }
    }
    check(
        violations.is_empty(),
        format!("{checked} cells over 20 configs x 3 shifts, violations={:?}", violations),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("information-theory oracles", information_theory, Some(Duration::from_secs(1))),
        ("KDE normalization and sampling", kde_normalization, Some(Duration::from_secs(30))),
        ("speed-model exact recovery", exact_recovery, Some(Duration::from_secs(5))),
        ("probit recovery", probit_recovery, Some(Duration::from_secs(5))),
        ("Monte Carlo vs closed form", closed_form_agreement, Some(Duration::from_secs(60))),
        ("determinism across runs and workers", determinism, None),
        ("reenactment on bundled synthetic data", reenactment, Some(Duration::from_secs(120))),
        ("monotonicity under +5 mph shift", monotonicity, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let slow = limit.is_some_and(|l| elapsed > l);
        let (status, detail) = match (&result, slow) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; exceeded {:?}", limit.unwrap())),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {} {status} {name} ({:.2}s): {detail}", i + 1, elapsed.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
