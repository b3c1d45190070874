//! `nlv`: nested logit estimation with a CFA-scored latent construct.
//!
//! Subcommands mirror the pipeline stages: `run` executes all of them from a
//! single config file; `cfa fit`, `estimate`, and `simulate …` run pieces.
//! Exit codes distinguish the failing stage: 2 input validation, 3 CFA,
//! 4 estimation, 5 simulation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use nlv_core::engine::ParameterVector;
use nlv_core::estimate::{self, EstimationOptions, EstimationResult};
use nlv_core::model;
use nlv_core::report;
use nlv_core::simulate;

mod manifest;
mod pipeline;

use manifest::Manifest;
use pipeline::{fail, Stage, StageError};

#[derive(Parser)]
#[command(name = "nlv")]
#[command(about = "Two-level nested logit estimation with a latent construct")]
#[command(version)]
struct Cli {
    /// Worker threads (default: NLV_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run ingest, CFA, estimation, and share replication from one config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Estimation seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Confirmatory factor analysis.
    Cfa {
        #[command(subcommand)]
        command: CfaCommand,
    },
    /// Estimate the nested logit on prepared inputs.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        indicators: Option<PathBuf>,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        multistart: Option<usize>,
        #[arg(long)]
        gradient_tol: Option<f64>,
    },
    /// Market-share tools: replication, synthetic data, latent sweeps.
    Simulate {
        #[command(subcommand)]
        command: SimulateCommand,
    },
    /// Re-render report.txt from a results directory.
    Report { dir: PathBuf },
}

#[derive(Subcommand)]
enum CfaCommand {
    /// Fit the single-factor model and write loadings, fit, and scores.
    Fit {
        #[arg(long)]
        indicators: PathBuf,
        /// Model spec whose [latent] section names the indicators; without it
        /// every panel column is used.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fit the raw covariance matrix instead of the correlation matrix.
        #[arg(long)]
        no_standardize: bool,
    },
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Sample-enumeration share replication at estimated parameters.
    Shares {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// estimate.json from a previous run.
        #[arg(long)]
        params: PathBuf,
        /// scores.csv from the CFA stage (required when the model binds the latent term).
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with a known-truth record.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Shift every factor score by delta and compare shares before/after.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("NLV_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }

    let outcome = match cli.command {
        Command::Run { config, out, seed } => pipeline::run_pipeline(&config, out, seed, threads),
        Command::Cfa {
            command:
                CfaCommand::Fit {
                    indicators,
                    spec,
                    out,
                    no_standardize,
                },
        } => cfa_fit(&indicators, spec.as_deref(), &out, !no_standardize, threads),
        Command::Estimate {
            data,
            indicators,
            spec,
            out,
            seed,
            max_iterations,
            multistart,
            gradient_tol,
        } => estimate_cmd(
            &data,
            indicators.as_deref(),
            &spec,
            &out,
            seed,
            max_iterations,
            multistart,
            gradient_tol,
            threads,
        ),
        Command::Simulate { command } => match command {
            SimulateCommand::Shares {
                data,
                spec,
                params,
                scores,
                out,
            } => simulate_shares(&data, &spec, &params, scores.as_deref(), &out, threads),
            SimulateCommand::Generate { config, out, seed } => {
                simulate_generate(&config, &out, seed, threads)
            }
            SimulateCommand::Sweep {
                data,
                spec,
                params,
                scores,
                delta,
                out,
            } => simulate_sweep(&data, &spec, &params, &scores, delta, &out, threads),
        },
        Command::Report { dir } => report_cmd(&dir),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.stage.exit_code())
        }
    }
}

struct DataAndSpec {
    data: nlv_core::data::ChoiceDataset,
    spec: nlv_core::model::ModelSpec,
}

fn load_data_and_spec(data_path: &Path, spec_path: &Path) -> Result<DataAndSpec> {
    let data = nlv_core::data::load_choice_csv(data_path, &nlv_core::data::CsvSchema::default())?;
    let spec = model::parse_model_spec(spec_path)?;
    Ok(DataAndSpec { data, spec })
}

fn read_estimate_json(path: &Path) -> Result<EstimationResult> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read `{}`", path.display()))?;
    let result: EstimationResult = serde_json::from_str(&text)
        .with_context(|| format!("invalid result file `{}`", path.display()))?;
    if result.schema_version != estimate::RESULT_SCHEMA_VERSION {
        return Err(anyhow!(
            "result schema version {} does not match tool version {}",
            result.schema_version,
            estimate::RESULT_SCHEMA_VERSION
        ));
    }
    Ok(result)
}

fn cfa_fit(
    indicators: &Path,
    spec: Option<&Path>,
    out_dir: &Path,
    standardize: bool,
    threads: Option<usize>,
) -> std::result::Result<(), StageError> {
    let mut manifest = Manifest::begin("cfa fit");
    manifest.threads = threads;
    std::fs::create_dir_all(out_dir)
        .context("cannot create output directory")
        .map_err(|e| StageError {
            stage: Stage::Input,
            source: e,
        })?;
    manifest
        .record_input("indicators", indicators)
        .map_err(|e| StageError {
            stage: Stage::Input,
            source: e,
        })?;

    let panel = match nlv_core::data::load_indicator_csv(indicators) {
        Ok(p) => p,
        Err(e) => return fail(Stage::Input, e),
    };
    for w in panel.warnings() {
        eprintln!("indicator warning: {w}");
    }
    println!(
        "indicator means over {} respondents:",
        panel.n_respondents()
    );
    for (name, mean) in panel.indicator_names().iter().zip(panel.means()) {
        println!("  {name:<40}{mean:>8.4}");
    }
    let mut cfa_spec = match spec {
        Some(path) => {
            manifest
                .record_input("model_spec", path)
                .map_err(|e| StageError {
                    stage: Stage::Input,
                    source: e,
                })?;
            match model::parse_model_spec(path) {
                Ok(s) => match s.latent {
                    Some(latent) => match nlv_core::cfa::CfaSpec::new(latent.indicators) {
                        Ok(c) => c,
                        Err(e) => return fail(Stage::Input, e),
                    },
                    None => {
                        return fail(
                            Stage::Input,
                            anyhow!("model spec declares no [latent] section"),
                        )
                    }
                },
                Err(e) => return fail(Stage::Input, e),
            }
        }
        None => match nlv_core::cfa::CfaSpec::for_panel(&panel) {
            Ok(c) => c,
            Err(e) => return fail(Stage::Input, e),
        },
    };
    cfa_spec.standardize = standardize;

    let result = match nlv_core::cfa::fit_cfa(&panel, &cfa_spec) {
        Ok(r) => r,
        Err(e) => {
            manifest.stage_failed("cfa", &e.to_string());
            let _ = manifest.finish(Stage::Cfa.exit_code(), out_dir);
            return fail(Stage::Cfa, e);
        }
    };
    let scores = match nlv_core::cfa::score_respondents(&result, &panel) {
        Ok(s) => s,
        Err(e) => return fail(Stage::Cfa, e),
    };
    if let Err(e) = (|| -> Result<()> {
        pipeline::write_json(out_dir, "cfa.json", &result)?;
        pipeline::write_scores_csv(out_dir, "scores.csv", &scores)?;
        Ok(())
    })() {
        return fail(Stage::Cfa, e);
    }
    manifest.record_output("cfa.json");
    manifest.record_output("scores.csv");
    manifest.stage_ok("cfa");
    manifest.finish(0, out_dir).map_err(|e| StageError {
        stage: Stage::Cfa,
        source: e,
    })?;
    print!("{}", report::render_cfa(&result));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn estimate_cmd(
    data_path: &Path,
    indicators: Option<&Path>,
    spec_path: &Path,
    out_dir: &Path,
    seed: u64,
    max_iterations: Option<usize>,
    multistart: Option<usize>,
    gradient_tol: Option<f64>,
    threads: Option<usize>,
) -> std::result::Result<(), StageError> {
    let mut manifest = Manifest::begin("estimate");
    manifest.seed = Some(seed);
    manifest.threads = threads;
    std::fs::create_dir_all(out_dir)
        .context("cannot create output directory")
        .map_err(|e| StageError {
            stage: Stage::Input,
            source: e,
        })?;
    for (role, path) in [
        ("choices", Some(data_path)),
        ("model_spec", Some(spec_path)),
        ("indicators", indicators),
    ] {
        if let Some(path) = path {
            if let Err(e) = manifest.record_input(role, path) {
                return fail(Stage::Input, e);
            }
        }
    }

    let inputs = match pipeline::load_inputs(data_path, indicators, spec_path) {
        Ok(v) => v,
        Err(e) => return fail(Stage::Input, e),
    };
    manifest.stage_ok("input");

    let cfa_stage = if inputs.spec.latent.is_some() {
        match pipeline::run_cfa_stage(&inputs, true, out_dir, &mut manifest) {
            Ok(v) => {
                manifest.stage_ok("cfa");
                Some(v)
            }
            Err(e) => {
                manifest.stage_failed("cfa", &format!("{e:#}"));
                let _ = manifest.finish(Stage::Cfa.exit_code(), out_dir);
                return fail(Stage::Cfa, e);
            }
        }
    } else {
        manifest.stage_skipped("cfa", "model declares no latent construct");
        None
    };

    let mut options = EstimationOptions {
        seed,
        ..Default::default()
    };
    if let Some(v) = max_iterations {
        options.max_iterations = v;
    }
    if let Some(v) = multistart {
        options.multistart = v;
    }
    if let Some(v) = gradient_tol {
        options.gradient_tol = v;
    }
    let scores = cfa_stage.as_ref().map(|c| &c.scores);
    let scores_for_model = if inputs.spec.binds_latent() {
        scores
    } else {
        None
    };
    let result = match estimate::estimate(&inputs.data, scores_for_model, &inputs.spec, &options) {
        Ok(v) => v,
        Err(e) => {
            manifest.stage_failed("estimation", &e.to_string());
            let _ = manifest.finish(Stage::Estimation.exit_code(), out_dir);
            return fail(Stage::Estimation, e);
        }
    };
    let rendered = match report::render_report(
        &inputs.spec,
        &result,
        cfa_stage.as_ref().map(|c| &c.result),
        None,
    ) {
        Ok(v) => v,
        Err(e) => return fail(Stage::Estimation, e),
    };
    if let Err(e) = (|| -> Result<()> {
        pipeline::write_json(out_dir, "estimate.json", &result)?;
        pipeline::write_convergence_log(out_dir, &result)?;
        std::fs::copy(spec_path, out_dir.join("model.spec"))?;
        std::fs::write(out_dir.join("report.txt"), &rendered)?;
        Ok(())
    })() {
        return fail(Stage::Estimation, e);
    }
    for name in [
        "estimate.json",
        "convergence.log",
        "model.spec",
        "report.txt",
    ] {
        manifest.record_output(name);
    }
    manifest.stage_ok("estimation");
    manifest.finish(0, out_dir).map_err(|e| StageError {
        stage: Stage::Estimation,
        source: e,
    })?;
    println!("{rendered}");
    Ok(())
}

fn simulate_shares(
    data_path: &Path,
    spec_path: &Path,
    params: &Path,
    scores: Option<&Path>,
    out_dir: &Path,
    threads: Option<usize>,
) -> std::result::Result<(), StageError> {
    let mut manifest = Manifest::begin("simulate shares");
    manifest.threads = threads;
    std::fs::create_dir_all(out_dir)
        .context("cannot create output directory")
        .map_err(|e| StageError {
            stage: Stage::Input,
            source: e,
        })?;
    let inputs = match load_data_and_spec(data_path, spec_path) {
        Ok(v) => v,
        Err(e) => return fail(Stage::Input, e),
    };
    let result = match read_estimate_json(params) {
        Ok(v) => v,
        Err(e) => return fail(Stage::Input, e),
    };
    let score_values = match scores {
        Some(path) => match pipeline::read_scores_csv(path) {
            Ok(s) => Some(s),
            Err(e) => return fail(Stage::Input, e),
        },
        None => None,
    };
    if inputs.spec.binds_latent() && score_values.is_none() {
        return fail(
            Stage::Input,
            anyhow!("the model binds a latent construct; pass --scores with the CFA scores"),
        );
    }
    for (role, path) in [
        ("choices", Some(data_path)),
        ("model_spec", Some(spec_path)),
        ("params", Some(params)),
        ("scores", scores),
    ] {
        if let Some(path) = path {
            if let Err(e) = manifest.record_input(role, path) {
                return fail(Stage::Input, e);
            }
        }
    }
    manifest.stage_ok("input");

    let report = match simulate::enumerate_shares(
        &inputs.data,
        score_values.as_ref(),
        &result.theta(),
        &inputs.spec,
    ) {
        Ok(v) => v,
        Err(e) => {
            manifest.stage_failed("simulation", &e.to_string());
            let _ = manifest.finish(Stage::Simulation.exit_code(), out_dir);
            return fail(Stage::Simulation, e);
        }
    };
    if let Err(e) = (|| -> Result<()> {
        pipeline::write_shares_csv(out_dir, "shares.csv", &report)?;
        pipeline::write_json(out_dir, "share_report.json", &report)?;
        Ok(())
    })() {
        return fail(Stage::Simulation, e);
    }
    manifest.record_output("shares.csv");
    manifest.record_output("share_report.json");
    manifest.stage_ok("simulation");
    manifest.finish(0, out_dir).map_err(|e| StageError {
        stage: Stage::Simulation,
        source: e,
    })?;
    println!(
        "largest |observed - simulated| share gap: {:.6}",
        report.max_abs_gap
    );
    Ok(())
}

fn simulate_generate(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    threads: Option<usize>,
) -> std::result::Result<(), StageError> {
    let mut manifest = Manifest::begin("simulate generate");
    manifest.threads = threads;
    std::fs::create_dir_all(out_dir)
        .context("cannot create output directory")
        .map_err(|e| StageError {
            stage: Stage::Input,
            source: e,
        })?;
    if let Err(e) = manifest.record_input("config", config_path) {
        return fail(Stage::Input, e);
    }
    let mut config = match simulate::load_synthetic_config(config_path) {
        Ok(c) => c,
        Err(e) => return fail(Stage::Input, e),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    manifest.seed = Some(config.seed);
    manifest.stage_ok("input");

    let (data, panel, truth) = match simulate::generate_synthetic(&config) {
        Ok(v) => v,
        Err(e) => {
            manifest.stage_failed("simulation", &e.to_string());
            let _ = manifest.finish(Stage::Simulation.exit_code(), out_dir);
            return fail(Stage::Simulation, e);
        }
    };
    if let Err(e) = (|| -> Result<()> {
        let file = std::fs::File::create(out_dir.join("choices.csv"))?;
        data.write_csv(file)?;
        let file = std::fs::File::create(out_dir.join("indicators.csv"))?;
        panel.write_csv(file)?;
        pipeline::write_json(out_dir, "truth.json", &truth)?;
        Ok(())
    })() {
        return fail(Stage::Simulation, e);
    }
    for name in ["choices.csv", "indicators.csv", "truth.json"] {
        manifest.record_output(name);
    }
    manifest.stage_ok("simulation");
    manifest.finish(0, out_dir).map_err(|e| StageError {
        stage: Stage::Simulation,
        source: e,
    })?;
    println!(
        "generated {} observations for {} respondents (seed {})",
        data.n_observations(),
        data.n_respondents(),
        config.seed
    );
    Ok(())
}

fn simulate_sweep(
    data_path: &Path,
    spec_path: &Path,
    params: &Path,
    scores_path: &Path,
    delta: f64,
    out_dir: &Path,
    threads: Option<usize>,
) -> std::result::Result<(), StageError> {
    let mut manifest = Manifest::begin("simulate sweep");
    manifest.threads = threads;
    std::fs::create_dir_all(out_dir)
        .context("cannot create output directory")
        .map_err(|e| StageError {
            stage: Stage::Input,
            source: e,
        })?;
    let inputs = match load_data_and_spec(data_path, spec_path) {
        Ok(v) => v,
        Err(e) => return fail(Stage::Input, e),
    };
    let result = match read_estimate_json(params) {
        Ok(v) => v,
        Err(e) => return fail(Stage::Input, e),
    };
    let scores = match pipeline::read_scores_csv(scores_path) {
        Ok(s) => s,
        Err(e) => return fail(Stage::Input, e),
    };
    for (role, path) in [
        ("choices", data_path),
        ("model_spec", spec_path),
        ("params", params),
        ("scores", scores_path),
    ] {
        if let Err(e) = manifest.record_input(role, path) {
            return fail(Stage::Input, e);
        }
    }
    manifest.stage_ok("input");

    let theta: ParameterVector = result.theta();
    let (before, after) =
        match simulate::latent_sweep(&inputs.data, &scores, &theta, &inputs.spec, delta) {
            Ok(v) => v,
            Err(e) => {
                manifest.stage_failed("simulation", &e.to_string());
                let _ = manifest.finish(Stage::Simulation.exit_code(), out_dir);
                return fail(Stage::Simulation, e);
            }
        };
    if let Err(e) = (|| -> Result<()> {
        pipeline::write_shares_csv(out_dir, "shares_before.csv", &before)?;
        pipeline::write_shares_csv(out_dir, "shares_after.csv", &after)?;
        #[derive(serde::Serialize)]
        struct SweepOut<'a> {
            delta: f64,
            before: &'a nlv_core::simulate::ShareReport,
            after: &'a nlv_core::simulate::ShareReport,
        }
        pipeline::write_json(
            out_dir,
            "sweep.json",
            &SweepOut {
                delta,
                before: &before,
                after: &after,
            },
        )?;
        Ok(())
    })() {
        return fail(Stage::Simulation, e);
    }
    for name in ["shares_before.csv", "shares_after.csv", "sweep.json"] {
        manifest.record_output(name);
    }
    manifest.stage_ok("simulation");
    manifest.finish(0, out_dir).map_err(|e| StageError {
        stage: Stage::Simulation,
        source: e,
    })?;
    for (i, alt) in before.alternatives.iter().enumerate() {
        println!(
            "{alt}: {:.4} -> {:.4}",
            before.simulated[i], after.simulated[i]
        );
    }
    Ok(())
}

fn report_cmd(dir: &Path) -> std::result::Result<(), StageError> {
    let result = match read_estimate_json(&dir.join("estimate.json")) {
        Ok(v) => v,
        Err(e) => return fail(Stage::Input, e),
    };
    let spec = match model::parse_model_spec(dir.join("model.spec")) {
        Ok(v) => v,
        Err(e) => return fail(Stage::Input, e),
    };
    let cfa: Option<nlv_core::cfa::CfaResult> = match std::fs::read_to_string(dir.join("cfa.json"))
    {
        Ok(text) => match serde_json::from_str(&text) {
            Ok(v) => Some(v),
            Err(e) => return fail(Stage::Input, anyhow!("invalid cfa.json: {e}")),
        },
        Err(_) => None,
    };
    let shares: Option<nlv_core::simulate::ShareReport> =
        match std::fs::read_to_string(dir.join("share_report.json")) {
            Ok(text) => match serde_json::from_str(&text) {
                Ok(v) => Some(v),
                Err(e) => return fail(Stage::Input, anyhow!("invalid share_report.json: {e}")),
            },
            Err(_) => None,
        };
    let rendered = match report::render_report(&spec, &result, cfa.as_ref(), shares.as_ref()) {
        Ok(v) => v,
        Err(e) => return fail(Stage::Input, e),
    };
    if let Err(e) = std::fs::write(dir.join("report.txt"), &rendered) {
        return fail(Stage::Input, anyhow!(e));
    }
    print!("{rendered}");
    Ok(())
}
