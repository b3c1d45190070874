//! The four-stage pipeline behind `nlv run`: ingest, CFA, estimation,
//! simulation, plus the shared output-writing helpers.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Deserialize;

use nlv_core::cfa::{self, CfaResult, CfaSpec, Scores};
use nlv_core::data::{self, ChoiceDataset, CsvSchema, IndicatorPanel};
use nlv_core::estimate::{self, EstimationOptions, EstimationResult};
use nlv_core::model::{self, ModelSpec};
use nlv_core::report;
use nlv_core::simulate::{self, ShareReport};

use crate::manifest::Manifest;

/// Pipeline stages, in order; each maps to a distinct exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Input,
    Cfa,
    Estimation,
    Simulation,
}

impl Stage {
    pub fn exit_code(self) -> u8 {
        match self {
            Stage::Input => 2,
            Stage::Cfa => 3,
            Stage::Estimation => 4,
            Stage::Simulation => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Input => "input",
            Stage::Cfa => "cfa",
            Stage::Estimation => "estimation",
            Stage::Simulation => "simulation",
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: anyhow::Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage failed: {:#}", self.stage.name(), self.source)
    }
}

impl std::error::Error for StageError {}

pub fn fail<T>(stage: Stage, err: impl Into<anyhow::Error>) -> std::result::Result<T, StageError> {
    Err(StageError {
        stage,
        source: err.into(),
    })
}

trait InStage<T> {
    fn in_stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> InStage<T> for std::result::Result<T, E> {
    fn in_stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}

#[derive(Debug, Deserialize)]
pub struct PipelineConfig {
    pub inputs: InputsSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub cfa: CfaSection,
}

#[derive(Debug, Deserialize)]
pub struct InputsSection {
    pub choices: String,
    #[serde(default)]
    pub indicators: Option<String>,
    pub model_spec: String,
}

#[derive(Debug, Deserialize, Default)]
pub struct RunSection {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<String>,
    /// Run the share-replication stage (default true).
    #[serde(default)]
    pub simulate: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
pub struct EstimationSection {
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub multistart: Option<usize>,
    #[serde(default)]
    pub gradient_tol: Option<f64>,
    #[serde(default)]
    pub start_iv: Option<f64>,
}

impl EstimationSection {
    pub fn to_options(&self, seed: u64) -> EstimationOptions {
        let mut options = EstimationOptions {
            seed,
            ..Default::default()
        };
        if let Some(v) = self.max_iterations {
            options.max_iterations = v;
        }
        if let Some(v) = self.multistart {
            options.multistart = v;
        }
        if let Some(v) = self.gradient_tol {
            options.gradient_tol = v;
        }
        if let Some(v) = self.start_iv {
            options.start_iv = v;
        }
        options
    }
}

#[derive(Debug, Deserialize, Default)]
pub struct CfaSection {
    #[serde(default)]
    pub standardize: Option<bool>,
}

pub fn write_json<T: serde::Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(out_dir.join(name), text)
        .with_context(|| format!("cannot write `{}`", out_dir.join(name).display()))?;
    Ok(())
}

pub fn write_scores_csv(out_dir: &Path, name: &str, scores: &Scores) -> Result<()> {
    let mut w = csv::Writer::from_path(out_dir.join(name))?;
    w.write_record(["resp_id", "score"])?;
    for (id, value) in scores.respondents.iter().zip(&scores.values) {
        w.write_record([id.as_str(), &format!("{value}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Scores> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open scores file `{}`", path.display()))?;
    let mut respondents = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record?;
        respondents.push(record.get(0).unwrap_or("").to_string());
        values.push(
            record
                .get(1)
                .unwrap_or("")
                .parse::<f64>()
                .context("score column must be numeric")?,
        );
    }
    Ok(Scores {
        respondents,
        values,
    })
}

/// Plot-ready two-column share file: one row per alternative.
pub fn write_shares_csv(out_dir: &Path, name: &str, report: &ShareReport) -> Result<()> {
    let mut w = csv::Writer::from_path(out_dir.join(name))?;
    w.write_record(["alternative", "observed", "simulated"])?;
    for (i, alt) in report.alternatives.iter().enumerate() {
        w.write_record([
            alt.as_str(),
            &format!("{}", report.observed[i]),
            &format!("{}", report.simulated[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_convergence_log(out_dir: &Path, result: &EstimationResult) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!(
        "best start: {} (status {:?}, {} iterations, |grad| = {:.6e})\n",
        result.convergence.best_start,
        result.convergence.status,
        result.convergence.iterations,
        result.convergence.gradient_norm
    ));
    for trace in &result.convergence.starts {
        text.push_str(&format!(
            "start {}: LL = {:.6}, {} iterations, |grad| = {:.6e}, status {:?}\n",
            trace.start_index,
            trace.log_likelihood,
            trace.iterations,
            trace.gradient_norm,
            trace.status
        ));
        for (i, ll) in trace.ll_path.iter().enumerate() {
            text.push_str(&format!("  iter {i:>4}  LL = {ll:.6}\n"));
        }
    }
    std::fs::write(out_dir.join("convergence.log"), text)?;
    Ok(())
}

pub struct LoadedInputs {
    pub data: ChoiceDataset,
    pub panel: Option<IndicatorPanel>,
    pub spec: ModelSpec,
    pub spec_path: PathBuf,
}

pub fn load_inputs(
    choices: &Path,
    indicators: Option<&Path>,
    spec_path: &Path,
) -> Result<LoadedInputs> {
    let data = data::load_choice_csv(choices, &CsvSchema::default())?;
    let spec = model::parse_model_spec(spec_path)?;
    let panel = match indicators {
        Some(path) => {
            let panel = data::load_indicator_csv(path)?;
            panel.validate_against(&data)?;
            Some(panel)
        }
        None => None,
    };
    if spec.binds_latent() && panel.is_none() {
        return Err(anyhow!(
            "the model binds a latent construct; an indicator file is required"
        ));
    }
    Ok(LoadedInputs {
        data,
        panel,
        spec,
        spec_path: spec_path.to_path_buf(),
    })
}

pub struct CfaStage {
    pub result: CfaResult,
    pub scores: Scores,
}

pub fn run_cfa_stage(
    inputs: &LoadedInputs,
    standardize: bool,
    out_dir: &Path,
    manifest: &mut Manifest,
) -> Result<CfaStage> {
    let panel = inputs
        .panel
        .as_ref()
        .ok_or_else(|| anyhow!("no indicator panel loaded"))?;
    let mut cfa_spec = match &inputs.spec.latent {
        Some(latent) => CfaSpec::new(latent.indicators.clone())?,
        None => CfaSpec::for_panel(panel)?,
    };
    cfa_spec.standardize = standardize;
    let result = cfa::fit_cfa(panel, &cfa_spec)?;
    for w in &result.warnings {
        eprintln!("cfa warning: {w}");
    }
    let scores = cfa::score_respondents(&result, panel)?;
    write_json(out_dir, "cfa.json", &result)?;
    manifest.record_output("cfa.json");
    write_scores_csv(out_dir, "scores.csv", &scores)?;
    manifest.record_output("scores.csv");
    Ok(CfaStage { result, scores })
}

/// Runs ingest, CFA, estimation, and share replication. On stage failure a
/// partial manifest naming the failed stage is still written.
pub fn run_pipeline(
    config_path: &Path,
    out_override: Option<PathBuf>,
    seed_override: Option<u64>,
    threads: Option<usize>,
) -> std::result::Result<(), StageError> {
    let mut manifest = Manifest::begin("run");
    manifest.threads = threads;

    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("cannot read config `{}`", config_path.display()))
        .in_stage(Stage::Input)?;
    let config: PipelineConfig = toml::from_str(&text)
        .with_context(|| format!("invalid pipeline config `{}`", config_path.display()))
        .in_stage(Stage::Input)?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let choices = base.join(&config.inputs.choices);
    let indicators = config.inputs.indicators.as_ref().map(|p| base.join(p));
    let spec_path = base.join(&config.inputs.model_spec);
    let out_dir =
        out_override.unwrap_or_else(|| base.join(config.run.out.as_deref().unwrap_or("out")));
    let seed = seed_override.or(config.run.seed).unwrap_or(0);
    manifest.seed = Some(seed);

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create `{}`", out_dir.display()))
        .in_stage(Stage::Input)?;

    let finish_failure = |mut manifest: Manifest, err: StageError| -> StageError {
        manifest.stage_failed(err.stage.name(), &format!("{:#}", err.source));
        let _ = manifest.finish(err.stage.exit_code(), &out_dir);
        err
    };

    // Stage 1: ingest.
    manifest
        .record_input("config", config_path)
        .in_stage(Stage::Input)
        .map_err(|e| finish_failure(manifest.clone(), e))?;
    manifest
        .record_input("choices", &choices)
        .in_stage(Stage::Input)
        .map_err(|e| finish_failure(manifest.clone(), e))?;
    if let Some(ind) = &indicators {
        manifest
            .record_input("indicators", ind)
            .in_stage(Stage::Input)
            .map_err(|e| finish_failure(manifest.clone(), e))?;
    }
    manifest
        .record_input("model_spec", &spec_path)
        .in_stage(Stage::Input)
        .map_err(|e| finish_failure(manifest.clone(), e))?;

    let inputs =
        match load_inputs(&choices, indicators.as_deref(), &spec_path).in_stage(Stage::Input) {
            Ok(v) => v,
            Err(e) => return Err(finish_failure(manifest, e)),
        };
    if let Some(panel) = &inputs.panel {
        for w in panel.warnings() {
            eprintln!("indicator warning: {w}");
        }
    }
    manifest.stage_ok("input");

    // Stage 2: CFA (skipped when the spec declares no latent construct).
    let cfa_stage = if inputs.spec.latent.is_some() {
        let standardize = config.cfa.standardize.unwrap_or(true);
        match run_cfa_stage(&inputs, standardize, &out_dir, &mut manifest).in_stage(Stage::Cfa) {
            Ok(v) => {
                manifest.stage_ok("cfa");
                Some(v)
            }
            Err(e) => return Err(finish_failure(manifest, e)),
        }
    } else {
        manifest.stage_skipped("cfa", "model declares no latent construct");
        None
    };

    // Stage 3: estimation.
    let options = config.estimation.to_options(seed);
    let scores = cfa_stage.as_ref().map(|c| &c.scores);
    let scores_for_model = if inputs.spec.binds_latent() {
        scores
    } else {
        None
    };
    let result = match estimate::estimate(&inputs.data, scores_for_model, &inputs.spec, &options)
        .in_stage(Stage::Estimation)
    {
        Ok(v) => v,
        Err(e) => return Err(finish_failure(manifest, e)),
    };
    if let Err(e) = (|| -> Result<()> {
        write_json(&out_dir, "estimate.json", &result)?;
        write_convergence_log(&out_dir, &result)?;
        std::fs::copy(&inputs.spec_path, out_dir.join("model.spec"))?;
        Ok(())
    })()
    .in_stage(Stage::Estimation)
    {
        return Err(finish_failure(manifest, e));
    }
    manifest.record_output("estimate.json");
    manifest.record_output("convergence.log");
    manifest.record_output("model.spec");
    manifest.stage_ok("estimation");

    // Stage 4: share replication.
    let shares = if config.run.simulate.unwrap_or(true) {
        let report = match simulate::enumerate_shares(
            &inputs.data,
            scores_for_model,
            &result.theta(),
            &inputs.spec,
        )
        .in_stage(Stage::Simulation)
        {
            Ok(v) => v,
            Err(e) => return Err(finish_failure(manifest, e)),
        };
        if let Err(e) = (|| -> Result<()> {
            write_shares_csv(&out_dir, "shares.csv", &report)?;
            write_json(&out_dir, "share_report.json", &report)?;
            Ok(())
        })()
        .in_stage(Stage::Simulation)
        {
            return Err(finish_failure(manifest, e));
        }
        manifest.record_output("shares.csv");
        manifest.record_output("share_report.json");
        manifest.stage_ok("simulation");
        Some(report)
    } else {
        manifest.stage_skipped("simulation", "disabled in config");
        None
    };

    let rendered = match report::render_report(
        &inputs.spec,
        &result,
        cfa_stage.as_ref().map(|c| &c.result),
        shares.as_ref(),
    )
    .in_stage(Stage::Estimation)
    {
        Ok(v) => v,
        Err(e) => return Err(finish_failure(manifest, e)),
    };
    if let Err(e) =
        std::fs::write(out_dir.join("report.txt"), &rendered).in_stage(Stage::Estimation)
    {
        return Err(finish_failure(manifest, e));
    }
    manifest.record_output("report.txt");

    manifest
        .finish(0, &out_dir)
        .in_stage(Stage::Input)
        .map_err(|e| finish_failure(manifest.clone(), e))?;
    println!("{rendered}");
    println!("outputs written to {}", out_dir.display());
    Ok(())
}
