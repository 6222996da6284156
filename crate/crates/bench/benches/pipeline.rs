use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use mfrisk::data::synthetic::{generate_synthetic_dataset, SyntheticConfig};
use mfrisk::data::Condition;
use mfrisk::fatality::{probit_fit, CrashType, CurvePoint};
use mfrisk::pipeline::{fit_curves, run_stages, PipelineInputs, RunConfig};
use mfrisk::risk::{monte_carlo_risk, SimulationOptions};
use mfrisk::Density;

fn dataset() -> PipelineInputs {
    let d = generate_synthetic_dataset(&SyntheticConfig::default(), 7).unwrap();
    PipelineInputs {
        lowfi: d.lowfi,
        hifi: d.hifi,
        fatality: d.fatality,
    }
}

fn kde(c: &mut Criterion) {
    let samples: Vec<f64> = (0..10_000).map(|i| 40.0 + (i % 400) as f64 * 0.07).collect();
    let d = Density::fit(&samples, 2.0).unwrap();
    c.bench_function("kde_evaluate_10k", |b| b.iter(|| d.evaluate(black_box(52.3))));
    c.bench_function("kde_cdf_10k", |b| b.iter(|| d.cdf(black_box(52.3))));
}

fn probit(c: &mut Criterion) {
    let inputs = dataset();
    let points: Vec<CurvePoint> = inputs
        .fatality
        .iter()
        .filter(|(t, _)| *t == CrashType::SideImpact)
        .map(|(_, p)| p.clone())
        .collect();
    c.bench_function("probit_fit_side", |b| {
        b.iter(|| probit_fit(CrashType::SideImpact, black_box(&points)).unwrap())
    });
}

fn monte_carlo(c: &mut Criterion) {
    let cfg = RunConfig {
        n_trials: 10_000,
        n_pred: 2_000,
        ..RunConfig::default()
    };
    let inputs = dataset();
    let out = run_stages(&cfg, &inputs).unwrap();
    let curves = fit_curves(&inputs.fatality).unwrap();
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(20);
    for workers in [1usize, 4] {
        group.bench_function(format!("10k_trials_{workers}_workers"), |b| {
            b.iter(|| {
                monte_carlo_risk(
                    &out.marginal,
                    &out.distributions,
                    &curves,
                    &Condition::ALL,
                    SimulationOptions {
                        n_trials: 10_000,
                        master_seed: 1,
                        workers: Some(workers),
                    },
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, kde, probit, monte_carlo);
criterion_main!(benches);
