use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mfrisk::data::synthetic::generate_synthetic_dataset;
use mfrisk::data::{self, Condition};
use mfrisk::model::WeightsFile;
use mfrisk::pipeline::{self as pl, InputPaths, OutputFormat, PipelineInputs, RunConfig};
use mfrisk::risk::compare_to_baseline;
use mfrisk::{ConditionDistributions, FatalityCurve};

#[derive(Parser, Debug)]
#[command(name = "mfrisk", version, about = "Multifidelity speed fusion and crash-risk simulation")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of Monte-Carlo trials.
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads for the simulation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        }
    }
}

#[derive(Args, Debug, Default)]
struct Inputs {
    /// Simulator speed records CSV.
    #[arg(long)]
    lowfi: Option<PathBuf>,
    /// Roadside binned counts CSV.
    #[arg(long)]
    hifi: Option<PathBuf>,
    /// Fatality curve points CSV.
    #[arg(long)]
    fatality: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic dataset and a matching config.
    GenData,
    /// Compare low- and high-fidelity baseline speed distributions.
    Compare(Inputs),
    /// Fit the speed model with k-fold cross-validation.
    FitModel(Inputs),
    /// Fit probit fatality curves.
    FitProbit(Inputs),
    /// Build per-condition speed distributions.
    BuildDists {
        #[command(flatten)]
        inputs: Inputs,
        /// weights.json from fit-model.
        #[arg(long)]
        weights: PathBuf,
    },
    /// Run the Monte-Carlo risk simulation.
    Simulate {
        /// distributions.json from build-dists.
        #[arg(long)]
        dists: PathBuf,
        /// curves.json from fit-probit.
        #[arg(long)]
        curves: PathBuf,
    },
    /// Run every stage and write all artifacts.
    Pipeline(Inputs),
    /// Recompute stage outputs and write figure data only.
    Figures(Inputs),
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(t) = cli.trials {
        cfg.n_trials = t;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_inputs(cfg: &mut RunConfig, inputs: &Inputs) {
    let InputPaths { lowfi, hifi, fatality } = &mut cfg.inputs;
    for (slot, flag) in [(lowfi, &inputs.lowfi), (hifi, &inputs.hifi), (fatality, &inputs.fatality)] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
}

fn union_zones(cfg: &RunConfig) -> Vec<u32> {
    let mut z: Vec<u32> = cfg.zones.iter().chain(&cfg.lowfi_zones).copied().collect();
    z.sort_unstable();
    z.dedup();
    z
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let d = generate_synthetic_dataset(&cfg.synthetic, cfg.seed)?;
    let write = |name: &str, f: &dyn Fn(fs::File) -> mfrisk::Result<()>| -> Result<PathBuf> {
        let path = dir.join(name);
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        f(file)?;
        Ok(path)
    };
    let mut paths = vec![
        write("lowfi.csv", &|f| data::write_lowfi_records(f, &d.lowfi))?,
        write("hifi.csv", &|f| data::write_hifi_bins(f, &d.hifi))?,
        write("fatality_points.csv", &|f| data::write_fatality_points(f, &d.fatality))?,
    ];
    let bundled = RunConfig {
        inputs: InputPaths {
            lowfi: Some("lowfi.csv".into()),
            hifi: Some("hifi.csv".into()),
            fatality: Some("fatality_points.csv".into()),
        },
        out: "out".into(),
        workers: None,
        ..cfg.clone()
    };
    paths.push(pl::write_json(&dir.join("config.json"), &bundled)?);
    println!(
        "synthetic dataset (seed {}): {} simulator records, {} roadside bins, {} fatality points",
        cfg.seed,
        d.lowfi.len(),
        d.hifi.len(),
        d.fatality.len()
    );
    report_written(&paths);
    Ok(())
}

fn compare(cfg: &RunConfig, format: OutputFormat) -> Result<()> {
    let zones = union_zones(cfg);
    let lowfi = data::read_speed_samples(&cfg.lowfi_path()?, &zones, cfg.bin_width)?;
    let hifi = data::read_speed_samples(&cfg.hifi_path()?, &zones, cfg.bin_width)?;
    let out = pl::run_compare(cfg, &lowfi, &hifi).map_err(|e| e.in_stage("compare"))?;
    for r in out.reports() {
        println!(
            "zone {:>2} mph  H={:.3} bits  K={:.3} bits  I(Q)={:.1}%  E(Q)={:.1}%",
            r.zone_mph, r.entropy_bits, r.kl_bits, r.info_overhead_pct, r.efficiency_pct
        );
    }
    println!("mean E(Q) = {:.1}%", out.mean_efficiency_pct);
    report_written(&[pl::write_fidelity(&cfg.out, &out.reports(), format)?]);
    Ok(())
}

fn fit_model(cfg: &RunConfig) -> Result<()> {
    let records = data::read_lowfi_records(&cfg.lowfi_path()?, &cfg.lowfi_zones)?;
    let m = pl::fit_model(cfg, &records).map_err(|e| e.in_stage("fit-model"))?;
    let w = m.weights.pooled.0;
    println!(
        "pooled weights: w0={:.4} w1={:.4} w2={:.4} w3={:.6} ({} rows)",
        w[0],
        w[1],
        w[2],
        w[3],
        m.rows.len()
    );
    println!("{}-fold CV median |error| = {:.3} mph", cfg.k_folds, m.median_abs_error);
    report_written(&[pl::write_weights(&cfg.out, &m.weights, cfg.seed)?]);
    Ok(())
}

fn fit_probit(cfg: &RunConfig) -> Result<()> {
    let points = data::read_fatality_points(&cfg.fatality_path()?).map_err(|e| e.in_stage("fatality"))?;
    let curves = pl::fit_curves(&points).map_err(|e| e.in_stage("fatality"))?;
    for c in &curves {
        println!("{:<12} a={:.4} b={:.5} (50% at {:.1} mph)", c.crash_type.as_str(), c.a, c.b, c.midpoint());
    }
    report_written(&[pl::write_curves(&cfg.out, &curves)?]);
    Ok(())
}

fn build_dists(cfg: &RunConfig, weights: &Path) -> Result<()> {
    let bins = data::read_hifi_bins(&cfg.hifi_path()?, &cfg.zones, cfg.bin_width)?;
    let weights = pl::read_json::<WeightsFile>(weights)?.into_weights()?;
    let dists = pl::build_distributions(cfg, &bins, &weights).map_err(|e| e.in_stage("build-dists"))?;
    for c in Condition::ALL {
        let means: Vec<String> = dists
            .zones(c)
            .filter_map(|z| dists.get(c, z).map(|d| format!("{z}:{:.1}", d.mean())))
            .collect();
        println!("{:<13} mean speed by zone {}", c.as_str(), means.join(" "));
    }
    report_written(&[pl::write_distributions(&cfg.out, &dists)?]);
    Ok(())
}

fn simulate(cfg: &RunConfig, dists: &Path, curves: &Path, format: OutputFormat) -> Result<()> {
    let dists: ConditionDistributions = pl::read_json(dists)?;
    let curves: Vec<FatalityCurve> = pl::read_json(curves)?;
    let estimates = pl::simulate(cfg, &dists, &curves).map_err(|e| e.in_stage("simulate"))?;
    let comparisons = compare_to_baseline(&estimates).map_err(|e| e.in_stage("compare-baseline"))?;
    for e in &estimates {
        println!(
            "{:<13} {:<13} EV={:>7.4} SE={:.4}",
            e.condition.as_str(),
            e.crash_type.as_str(),
            e.ev_mean,
            e.ev_se
        );
    }
    for c in &comparisons {
        println!("{} vs baseline, {}: {:?}", c.condition, c.crash_type, c.verdict);
    }
    let paths = [
        pl::write_results(&cfg.out, &estimates, format)?,
        pl::write_json(&cfg.out.join("baseline_comparison.json"), &comparisons)?,
    ];
    report_written(&paths);
    Ok(())
}

fn pipeline(cfg: &RunConfig, format: OutputFormat) -> Result<()> {
    let out = pl::run_full_pipeline(cfg)?;
    print!("{}", pl::summary(&out));
    report_written(&pl::write_artifacts(&cfg.out, cfg, &out, format)?);
    Ok(())
}

fn figures(cfg: &RunConfig) -> Result<()> {
    let inputs = PipelineInputs::load(cfg)?;
    let out = pl::run_stages(cfg, &inputs)?;
    report_written(&pl::emit_figure_data(&out, &cfg.out)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let format = OutputFormat::from(cli.format);
    match &cli.command {
        Command::GenData => gen_data(&cfg),
        Command::Compare(i) => {
            apply_inputs(&mut cfg, i);
            compare(&cfg, format)
        }
        Command::FitModel(i) => {
            apply_inputs(&mut cfg, i);
            fit_model(&cfg)
        }
        Command::FitProbit(i) => {
            apply_inputs(&mut cfg, i);
            fit_probit(&cfg)
        }
        Command::BuildDists { inputs, weights } => {
            apply_inputs(&mut cfg, inputs);
            build_dists(&cfg, weights)
        }
        Command::Simulate { dists, curves } => simulate(&cfg, dists, curves, format),
        Command::Pipeline(i) => {
            apply_inputs(&mut cfg, i);
            pipeline(&cfg, format)
        }
        Command::Figures(i) => {
            apply_inputs(&mut cfg, i);
            figures(&cfg)
        }
    }
}

/// 2 for numerical failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<mfrisk::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
