//! Stage orchestration: fidelity comparison, model fitting, fatality curves,
//! distribution construction, simulation, and artifact output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synthetic::SyntheticConfig;
use crate::data::{self, BinnedZoneCount, Condition, SpeedRecord};
use crate::density::{
    self, discretize, shared_grid, uniform_grid, Density, FIDELITY_GRID_STEP, FIDELITY_KERNEL_WIDTH, GRID_PAD_WIDTHS,
    MASS_FLOOR, PREDICTION_KERNEL_WIDTH,
};
use crate::error::{Error, Result, StageExt};
use crate::fatality::{probit_fit, CrashType, CurvePoint, FatalityCurve};
use crate::infotheory::{approximation_efficiency, FidelityReport};
use crate::model::{self, kfold_cv, training_rows, CrossValidation, ModelWeights, TrainingRow, WeightsFile};
use crate::risk::{
    self, build_condition_distributions, compare_to_baseline, monte_carlo_risk, BaselineComparison,
    ConditionDistributions, RiskEstimate, SimulationOptions, ZoneMarginal,
};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub lowfi: Option<PathBuf>,
    pub hifi: Option<PathBuf>,
    pub fatality: Option<PathBuf>,
}

/// Everything a run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Posted-speed zones of the roadside data and of the risk simulation.
    pub zones: Vec<u32>,
    /// Relative weight of each zone in the simulation; uniform when absent.
    pub zone_weights: Option<Vec<f64>>,
    /// Zones accepted in simulator records.
    pub lowfi_zones: Vec<u32>,
    pub fidelity_kernel_width: f64,
    pub prediction_kernel_width: f64,
    pub bin_width: f64,
    pub grid_step: f64,
    pub k_folds: usize,
    pub n_pred: usize,
    pub n_trials: usize,
    pub seed: u64,
    /// Simulation worker threads; all available cores when absent.
    pub workers: Option<usize>,
    pub inputs: InputPaths,
    pub out: PathBuf,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synthetic = SyntheticConfig::default();
        RunConfig {
            zones: data::DEFAULT_HIFI_ZONES.to_vec(),
            zone_weights: None,
            lowfi_zones: synthetic.lowfi.zones.clone(),
            fidelity_kernel_width: FIDELITY_KERNEL_WIDTH,
            prediction_kernel_width: PREDICTION_KERNEL_WIDTH,
            bin_width: data::DEFAULT_BIN_WIDTH,
            grid_step: FIDELITY_GRID_STEP,
            k_folds: model::DEFAULT_FOLDS,
            n_pred: risk::DEFAULT_PREDICTION_DRAWS,
            n_trials: risk::DEFAULT_TRIALS,
            seed: 7,
            workers: None,
            inputs: InputPaths::default(),
            out: PathBuf::from("out"),
            synthetic,
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative input paths are taken relative to the
    /// file's directory.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.inputs.lowfi, &mut cfg.inputs.hifi, &mut cfg.inputs.fatality]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() || self.lowfi_zones.is_empty() {
            return Err(Error::invalid("zone lists must not be empty"));
        }
        for (name, v) in [
            ("fidelity_kernel_width", self.fidelity_kernel_width),
            ("prediction_kernel_width", self.prediction_kernel_width),
            ("bin_width", self.bin_width),
            ("grid_step", self.grid_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.k_folds < 2 || self.n_pred == 0 || self.n_trials == 0 {
            return Err(Error::invalid("k_folds must be >= 2 and n_pred, n_trials positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be positive"));
        }
        if let Some(w) = &self.zone_weights {
            ZoneMarginal::weighted(&self.zones, w)?;
        }
        Ok(())
    }

    pub fn zone_marginal(&self) -> Result<ZoneMarginal> {
        match &self.zone_weights {
            Some(w) => ZoneMarginal::weighted(&self.zones, w),
            None => ZoneMarginal::uniform(&self.zones),
        }
    }

    pub fn simulation_options(&self) -> SimulationOptions {
        SimulationOptions {
            n_trials: self.n_trials,
            master_seed: self.seed,
            workers: self.workers,
        }
    }

    fn input(&self, path: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| Error::invalid(format!("no {name} input configured")))
    }

    pub fn lowfi_path(&self) -> Result<PathBuf> {
        self.input(&self.inputs.lowfi, "low-fidelity")
    }

    pub fn hifi_path(&self) -> Result<PathBuf> {
        self.input(&self.inputs.hifi, "high-fidelity")
    }

    pub fn fatality_path(&self) -> Result<PathBuf> {
        self.input(&self.inputs.fatality, "fatality")
    }
}

/// Both discretized baselines of one zone, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneComparison {
    pub report: FidelityReport,
    pub grid: Vec<f64>,
    pub reference: Vec<f64>,
    pub approximation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutput {
    pub zones: Vec<ZoneComparison>,
    pub mean_efficiency_pct: f64,
}

impl CompareOutput {
    pub fn reports(&self) -> Vec<FidelityReport> {
        self.zones.iter().map(|z| z.report.clone()).collect()
    }
}

/// Compares baseline speed distributions zone by zone. The high-fidelity
/// sample is the reference `P`; the low-fidelity sample is `Q`.
pub fn run_compare(
    cfg: &RunConfig,
    lowfi: &BTreeMap<u32, Vec<f64>>,
    hifi: &BTreeMap<u32, Vec<f64>>,
) -> Result<CompareOutput> {
    let h = cfg.fidelity_kernel_width;
    let mut zones = Vec::new();
    for (&zone, hi) in hifi {
        let Some(lo) = lowfi.get(&zone) else { continue };
        if hi.is_empty() || lo.is_empty() {
            continue;
        }
        let grid = shared_grid(&[hi, lo], h, GRID_PAD_WIDTHS, cfg.grid_step)?;
        let p = discretize(&Density::fit(hi, h)?, &grid)?;
        let q = discretize(&Density::fit(lo, h)?, &grid)?.floored(MASS_FLOOR);
        let report = approximation_efficiency(zone, &p, &q)?;
        zones.push(ZoneComparison {
            report,
            reference: p.masses().to_vec(),
            approximation: q.masses().to_vec(),
            grid,
        });
    }
    if zones.is_empty() {
        return Err(Error::invalid("low- and high-fidelity data share no zones"));
    }
    let mean_efficiency_pct = zones.iter().map(|z| z.report.efficiency_pct).sum::<f64>() / zones.len() as f64;
    Ok(CompareOutput {
        zones,
        mean_efficiency_pct,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelStage {
    pub rows: Vec<TrainingRow>,
    pub weights: ModelWeights,
    pub cv: CrossValidation,
    pub median_abs_error: f64,
}

pub fn fit_model(cfg: &RunConfig, records: &[SpeedRecord]) -> Result<ModelStage> {
    let rows = training_rows(records)?;
    let pooled = model::fit_least_squares(&rows)?;
    let cv = kfold_cv(&rows, cfg.k_folds, &mut stream(cfg.seed, Domain::CrossValidation, 0))?;
    let median_abs_error = cv.median_abs_error()?;
    Ok(ModelStage {
        weights: ModelWeights {
            pooled,
            folds: cv.fold_weights.clone(),
        },
        rows,
        cv,
        median_abs_error,
    })
}

/// One probit curve per crash type present, in crash-type order.
pub fn fit_curves(points: &[(CrashType, CurvePoint)]) -> Result<Vec<FatalityCurve>> {
    let mut grouped: BTreeMap<CrashType, Vec<CurvePoint>> = BTreeMap::new();
    for (c, p) in points {
        grouped.entry(*c).or_default().push(p.clone());
    }
    if grouped.is_empty() {
        return Err(Error::invalid("no fatality curve points"));
    }
    grouped
        .into_iter()
        .map(|(c, pts)| probit_fit(c, &pts).map(|f| f.curve))
        .collect()
}

/// KDE of the hourly weighted-average roadside speeds in each zone.
pub fn baseline_densities(cfg: &RunConfig, bins: &[BinnedZoneCount]) -> Result<BTreeMap<u32, Density>> {
    data::hourly_averages(bins, cfg.bin_width)?
        .into_iter()
        .map(|(zone, avgs)| Ok((zone, Density::fit(&avgs, cfg.fidelity_kernel_width)?)))
        .collect()
}

pub fn build_distributions(
    cfg: &RunConfig,
    bins: &[BinnedZoneCount],
    weights: &ModelWeights,
) -> Result<ConditionDistributions> {
    let baseline = baseline_densities(cfg, bins)?;
    build_condition_distributions(
        &baseline,
        &cfg.zones,
        &weights.pooled,
        cfg.n_pred,
        cfg.prediction_kernel_width,
        cfg.seed,
    )
}

pub fn simulate(
    cfg: &RunConfig,
    dists: &ConditionDistributions,
    curves: &[FatalityCurve],
) -> Result<Vec<RiskEstimate>> {
    monte_carlo_risk(&cfg.zone_marginal()?, dists, curves, &Condition::ALL, cfg.simulation_options())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub compare: CompareOutput,
    pub model: ModelStage,
    pub curves: Vec<FatalityCurve>,
    pub distributions: ConditionDistributions,
    pub marginal: ZoneMarginal,
    pub estimates: Vec<RiskEstimate>,
    pub comparisons: Vec<BaselineComparison>,
}

/// Raw inputs of a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInputs {
    pub lowfi: Vec<SpeedRecord>,
    pub hifi: Vec<BinnedZoneCount>,
    pub fatality: Vec<(CrashType, CurvePoint)>,
}

impl PipelineInputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let lowfi = cfg
            .lowfi_path()
            .and_then(|p| data::read_lowfi_records(&p, &cfg.lowfi_zones))
            .stage("load-lowfi")?;
        let hifi = cfg
            .hifi_path()
            .and_then(|p| data::read_hifi_bins(&p, &cfg.zones, cfg.bin_width))
            .stage("load-hifi")?;
        let fatality = cfg
            .fatality_path()
            .and_then(|p| data::read_fatality_points(&p))
            .stage("fatality")?;
        Ok(PipelineInputs { lowfi, hifi, fatality })
    }
}

/// Runs every stage on in-memory inputs.
pub fn run_stages(cfg: &RunConfig, inputs: &PipelineInputs) -> Result<PipelineOutput> {
    cfg.validate().stage("config")?;
    let lowfi_baseline = data::speeds_by_zone(&inputs.lowfi, Condition::Baseline);
    let hifi_vehicles = data::expand_bin_centers(&inputs.hifi, cfg.bin_width);
    let compare = run_compare(cfg, &lowfi_baseline, &hifi_vehicles).stage("compare")?;
    let model = fit_model(cfg, &inputs.lowfi).stage("fit-model")?;
    let curves = fit_curves(&inputs.fatality).stage("fatality")?;
    let distributions = build_distributions(cfg, &inputs.hifi, &model.weights).stage("build-dists")?;
    let marginal = cfg.zone_marginal().stage("simulate")?;
    let estimates = simulate(cfg, &distributions, &curves).stage("simulate")?;
    let comparisons = compare_to_baseline(&estimates).stage("compare-baseline")?;
    Ok(PipelineOutput {
        compare,
        model,
        curves,
        distributions,
        marginal,
        estimates,
        comparisons,
    })
}

/// Loads the configured inputs and runs every stage.
pub fn run_full_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    let inputs = PipelineInputs::load(cfg)?;
    run_stages(cfg, &inputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<PathBuf> {
    write_bytes(path, &to_json(value)?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
    write_bytes(path, &csv_bytes(header, rows)?)
}

pub fn write_fidelity(dir: &Path, reports: &[FidelityReport], format: OutputFormat) -> Result<PathBuf> {
    create_dir(dir)?;
    match format {
        OutputFormat::Json => write_json(&dir.join("fidelity.json"), reports),
        OutputFormat::Csv => write_csv(
            &dir.join("fidelity.csv"),
            &["zone_mph", "entropy_bits", "kl_bits", "info_overhead_pct", "efficiency_pct"],
            reports.iter().map(|r| {
                vec![
                    r.zone_mph.to_string(),
                    r.entropy_bits.to_string(),
                    r.kl_bits.to_string(),
                    r.info_overhead_pct.to_string(),
                    r.efficiency_pct.to_string(),
                ]
            }),
        ),
    }
}

pub fn results_bytes(estimates: &[RiskEstimate], format: OutputFormat) -> Result<Vec<u8>> {
    match format {
        OutputFormat::Json => to_json(estimates),
        OutputFormat::Csv => csv_bytes(
            &["condition", "crash_type", "ev_mean", "ev_se", "n_trials"],
            estimates.iter().map(|e| {
                vec![
                    e.condition.to_string(),
                    e.crash_type.to_string(),
                    e.ev_mean.to_string(),
                    e.ev_se.to_string(),
                    e.n_trials.to_string(),
                ]
            }),
        ),
    }
}

pub fn write_results(dir: &Path, estimates: &[RiskEstimate], format: OutputFormat) -> Result<PathBuf> {
    create_dir(dir)?;
    let name = match format {
        OutputFormat::Json => "results.json",
        OutputFormat::Csv => "results.csv",
    };
    write_bytes(&dir.join(name), &results_bytes(estimates, format)?)
}

pub fn write_weights(dir: &Path, weights: &ModelWeights, seed: u64) -> Result<PathBuf> {
    create_dir(dir)?;
    write_json(&dir.join("weights.json"), &WeightsFile::new(weights, seed))
}

pub fn write_curves(dir: &Path, curves: &[FatalityCurve]) -> Result<PathBuf> {
    create_dir(dir)?;
    write_json(&dir.join("curves.json"), curves)
}

pub fn write_distributions(dir: &Path, dists: &ConditionDistributions) -> Result<PathBuf> {
    create_dir(dir)?;
    write_json(&dir.join("distributions.json"), dists)
}

/// Writes every stage artifact and the figure data; returns the paths.
pub fn write_artifacts(dir: &Path, cfg: &RunConfig, out: &PipelineOutput, format: OutputFormat) -> Result<Vec<PathBuf>> {
    let mut paths = vec![
        write_fidelity(dir, &out.compare.reports(), format)?,
        write_weights(dir, &out.model.weights, cfg.seed)?,
        write_curves(dir, &out.curves)?,
        write_distributions(dir, &out.distributions)?,
        write_results(dir, &out.estimates, format)?,
        write_json(&dir.join("baseline_comparison.json"), &out.comparisons)?,
    ];
    paths.extend(emit_figure_data(out, dir)?);
    Ok(paths)
}

fn num(x: f64) -> String {
    x.to_string()
}

/// Writes a density evaluated on `grid` as `speed_mph,density`.
pub fn write_density_curve(path: &Path, density: &Density, grid: &[f64]) -> Result<PathBuf> {
    write_csv(
        path,
        &["speed_mph", "density"],
        grid.iter().map(|&x| vec![num(x), num(density.evaluate(x))]),
    )
}

/// CSV data behind the comparison, model, probit, sampling and risk plots.
pub fn emit_figure_data(out: &PipelineOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = dir.join("figures");
    create_dir(&dir)?;
    let mut paths = Vec::new();

    paths.push(write_csv(
        &dir.join("density_curves.csv"),
        &["zone_mph", "speed_mph", "p_hifi", "q_lowfi"],
        out.compare.zones.iter().flat_map(|z| {
            z.grid
                .iter()
                .zip(&z.reference)
                .zip(&z.approximation)
                .map(|((x, p), q)| vec![z.report.zone_mph.to_string(), num(*x), num(*p), num(*q)])
                .collect::<Vec<_>>()
        }),
    )?);

    paths.push(write_csv(
        &dir.join("model_training.csv"),
        &["baseline_speed_mph", "delta_es", "target_speed_mph"],
        out.model
            .rows
            .iter()
            .map(|r| vec![num(r.baseline_speed), r.delta_es.to_string(), num(r.target_speed)]),
    )?);

    let (lo, hi) = out
        .model
        .rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.baseline_speed), hi.max(r.baseline_speed)));
    let speed_grid = uniform_grid(lo.floor(), hi.ceil(), 0.5);
    paths.push(write_csv(
        &dir.join("model_curves.csv"),
        &["delta_es", "baseline_speed_mph", "pooled_mph", "fold_mean_mph", "fold_sem_mph"],
        [1u8, 0].into_iter().flat_map(|d| {
            speed_grid
                .iter()
                .map(|&s| {
                    let p = out.model.weights.predict(s, d);
                    vec![
                        d.to_string(),
                        num(s),
                        num(p.pooled),
                        p.fold_mean.map_or_else(String::new, num),
                        p.fold_sem.map_or_else(String::new, num),
                    ]
                })
                .collect::<Vec<_>>()
        }),
    )?);

    paths.push(write_csv(
        &dir.join("model_cv.csv"),
        &["row", "fold", "delta_es", "actual_mph", "predicted_mph"],
        out.model.cv.predictions.iter().map(|p| {
            vec![
                p.row.to_string(),
                p.fold.to_string(),
                p.delta_es.to_string(),
                num(p.actual),
                num(p.predicted),
            ]
        }),
    )?);

    let impact = uniform_grid(0.0, 100.0, 1.0);
    paths.push(write_csv(
        &dir.join("probit_curves.csv"),
        &["crash_type", "speed_mph", "fatality_probability"],
        out.curves.iter().flat_map(|c| {
            impact
                .iter()
                .map(|&s| vec![c.crash_type.to_string(), num(s), num(c.fatality_probability(s))])
                .collect::<Vec<_>>()
        }),
    )?);

    if let Some((lo, hi)) = out.distributions.support(GRID_PAD_WIDTHS) {
        let grid = uniform_grid(lo.floor(), hi.ceil(), 0.5);
        let mut columns = Vec::new();
        for c in Condition::ALL {
            let d = out.distributions.discretize_marginal(c, &out.marginal, &grid)?;
            // per-mph density so curves plot on a common scale
            columns.push(d.masses().iter().map(|m| m / 0.5).collect::<Vec<_>>());
        }
        paths.push(write_csv(
            &dir.join("sampling_distributions.csv"),
            &["speed_mph", "baseline", "ivs_plus_es", "ivs_minus_es"],
            grid.iter().enumerate().map(|(i, &x)| {
                let mut row = vec![num(x)];
                row.extend(columns.iter().map(|c| num(c[i])));
                row
            }),
        )?);
    }

    paths.push(write_csv(
        &dir.join("risk_bars.csv"),
        &["condition", "crash_type", "ev_mean", "ev_se", "n_trials"],
        out.estimates.iter().map(|e| {
            vec![
                e.condition.to_string(),
                e.crash_type.to_string(),
                num(e.ev_mean),
                num(e.ev_se),
                e.n_trials.to_string(),
            ]
        }),
    )?);
    Ok(paths)
}

/// Human-readable run summary.
pub fn summary(out: &PipelineOutput) -> String {
    let mut s = String::new();
    s.push_str("fidelity comparison (reference: high fidelity)\n");
    for z in &out.compare.zones {
        let r = &z.report;
        s.push_str(&format!(
            "  zone {:>2} mph  H={:.3} bits  K={:.3} bits  E(Q)={:.1}%\n",
            r.zone_mph, r.entropy_bits, r.kl_bits, r.efficiency_pct
        ));
    }
    s.push_str(&format!("  mean E(Q) = {:.1}%\n", out.compare.mean_efficiency_pct));
    let w = out.model.weights.pooled.0;
    s.push_str(&format!(
        "speed model: w = [{:.4}, {:.4}, {:.4}, {:.6}]  ({}-fold median |error| = {:.2} mph)\n",
        w[0],
        w[1],
        w[2],
        w[3],
        out.model.weights.folds.len(),
        out.model.median_abs_error
    ));
    for c in &out.curves {
        s.push_str(&format!(
            "probit {:<12} a={:.4} b={:.5} (50% at {:.1} mph)\n",
            c.crash_type.as_str(),
            c.a,
            c.b,
            c.midpoint()
        ));
    }
    s.push_str("expected value per crash (-1 fatal, +1 survive)\n");
    for e in &out.estimates {
        let verdict = out
            .comparisons
            .iter()
            .find(|c| c.condition == e.condition && c.crash_type == e.crash_type)
            .map(|c| format!("{:?}", c.verdict).to_lowercase())
            .unwrap_or_else(|| "reference".into());
        s.push_str(&format!(
            "  {:<13} {:<13} {:>7.4} ± {:.4}  {}\n",
            e.condition.as_str(),
            e.crash_type.as_str(),
            e.ev_mean,
            e.ev_se,
            verdict
        ));
    }
    s
}

/// Grid used to discretize a condition's zone mixture for closed-form checks.
pub fn closed_form_grid(dists: &ConditionDistributions, step: f64) -> Option<Vec<f64>> {
    dists
        .support(GRID_PAD_WIDTHS)
        .map(|(lo, hi)| density::uniform_grid(lo, hi, step))
}
