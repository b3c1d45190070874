//! Sample enumeration, market-share replication, what-if sweeps on the latent
//! scores, and the synthetic dataset generator used as the estimation oracle.
//!
//! Randomness is organized as counter-based streams (one ChaCha stream per
//! respondent and per observation), so generated data is independent of
//! scheduling and bit-identical for a fixed seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cfa::Scores;
use crate::data::{ChoiceDataset, IndicatorPanel};
use crate::engine::{self, DesignMatrix, ParameterVector};
use crate::error::{NlvError, Result};
use crate::model::{CompiledModel, ModelSpec, TermBinding, UtilityTerm};

/// Observed vs simulated market shares.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShareReport {
    pub alternatives: Vec<String>,
    /// Fraction of observations choosing each alternative.
    pub observed: Vec<f64>,
    /// Mean predicted probability per alternative.
    pub simulated: Vec<f64>,
    pub max_abs_gap: f64,
}

impl ShareReport {
    fn new(alternatives: Vec<String>, observed: Vec<f64>, simulated: Vec<f64>) -> Self {
        let max_abs_gap = observed
            .iter()
            .zip(&simulated)
            .map(|(o, s)| (o - s).abs())
            .fold(0.0, f64::max);
        ShareReport {
            alternatives,
            observed,
            simulated,
            max_abs_gap,
        }
    }
}

/// Mean predicted probability per alternative against observed shares.
pub fn enumerate_shares(
    data: &ChoiceDataset,
    scores: Option<&Scores>,
    theta: &ParameterVector,
    spec: &ModelSpec,
) -> Result<ShareReport> {
    let model = CompiledModel::new(spec, data)?;
    let aligned = match (model.binds_latent, scores) {
        (true, Some(s)) => Some(aligned_scores(data, s)?),
        (true, None) => {
            return Err(NlvError::Scoring(
                "the model binds a latent term; factor scores are required".into(),
            ))
        }
        (false, _) => None,
    };
    let design = DesignMatrix::build(&model, data, aligned.as_deref())?;
    let simulated = engine::mean_probabilities(&design, &model, theta)?;
    Ok(ShareReport::new(
        data.alternative_labels().to_vec(),
        data.observed_shares(),
        simulated,
    ))
}

fn aligned_scores(data: &ChoiceDataset, scores: &Scores) -> Result<Vec<f64>> {
    data.respondents()
        .iter()
        .map(|id| {
            scores
                .get(id)
                .ok_or_else(|| NlvError::Scoring(format!("no factor score for respondent {id}")))
        })
        .collect()
}

/// Recomputes shares with every factor score shifted by `delta`.
/// Returns the (baseline, shifted) pair.
pub fn latent_sweep(
    data: &ChoiceDataset,
    scores: &Scores,
    theta: &ParameterVector,
    spec: &ModelSpec,
    delta: f64,
) -> Result<(ShareReport, ShareReport)> {
    if !spec.binds_latent() {
        return Err(NlvError::Spec(
            "latent sweep needs a model that binds the latent construct".into(),
        ));
    }
    let before = enumerate_shares(data, Some(scores), theta, spec)?;
    let shifted = Scores {
        respondents: scores.respondents.clone(),
        values: scores.values.iter().map(|v| v + delta).collect(),
    };
    let after = enumerate_shares(data, Some(&shifted), theta, spec)?;
    Ok((before, after))
}

/// Covariate generating distributions, matched to simple survey marginals.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Normal {
        mean: f64,
        sd: f64,
    },
    Bernoulli {
        p: f64,
    },
    /// Rounded normal with a lower bound; for counts such as household size.
    CountNormal {
        mean: f64,
        sd: f64,
        min: f64,
    },
    /// `ln(max(|normal|, min))`; for logged positive quantities such as age.
    LogAbsNormal {
        mean: f64,
        sd: f64,
        min: f64,
    },
}

impl Generator {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Generator::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Generator::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Generator::CountNormal { mean, sd, min } => {
                let z: f64 = StandardNormal.sample(rng);
                (mean + sd * z).round().max(min)
            }
            Generator::LogAbsNormal { mean, sd, min } => {
                let z: f64 = StandardNormal.sample(rng);
                (mean + sd * z).abs().max(min).ln()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = match *self {
            Generator::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            Generator::Bernoulli { p } => (0.0..=1.0).contains(&p),
            Generator::CountNormal { mean, sd, min }
            | Generator::LogAbsNormal { mean, sd, min } => {
                mean.is_finite() && sd.is_finite() && sd >= 0.0 && min.is_finite()
            }
        };
        if finite {
            Ok(())
        } else {
            Err(NlvError::Validation(
                "covariate generator has non-finite or out-of-range parameters".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    /// Drawn once per respondent (socio-economics) or once per observation
    /// (vehicle attributes).
    #[serde(default)]
    pub per_respondent: bool,
    /// Alternatives whose rows carry the value; empty means all of them.
    /// Other rows hold 0, mirroring attributes that do not apply.
    #[serde(default)]
    pub applies_to: Vec<String>,
    pub dist: Generator,
}

/// Which latent quantity enters the generated utilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentRegressor {
    /// The factor draw itself.
    TrueFactor,
    /// The population regression score computed from the continuous
    /// indicators; this is what a fitted scorer converges to, so two-step
    /// re-estimation is consistent for the latent coefficient.
    RegressionScore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentConfig {
    pub mode: LatentRegressor,
    /// Generating loadings; indicator g is `loading_g * factor + noise`.
    pub loadings: Vec<f64>,
    /// When set, indicators are binarized at the empirical quantile that
    /// reproduces these means exactly (up to 1/2N rounding).
    #[serde(default)]
    pub indicator_means: Option<Vec<f64>>,
}

/// Everything needed to generate a dataset with known truth.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub name: String,
    pub seed: u64,
    pub observations: usize,
    pub respondents: usize,
    pub model: ModelSpec,
    pub covariates: Vec<CovariateSpec>,
    pub true_parameters: BTreeMap<String, f64>,
    pub latent: LatentConfig,
    /// Target expected shares per alternative. When present, constants are
    /// calibrated by fixed-point iteration so the expected shares match; every
    /// non-base alternative gains a calibration constant if it has none.
    pub share_targets: Option<BTreeMap<String, f64>>,
}

/// Generating truth written next to each synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    /// Full generating parameter vector, including calibrated constants.
    pub parameters: BTreeMap<String, f64>,
    pub loadings: Vec<f64>,
    pub expected_shares: BTreeMap<String, f64>,
    /// Log-likelihood of the generated choices at the generating parameters.
    pub ll_at_truth: f64,
}

#[derive(Debug, Deserialize)]
struct SyntheticConfigFile {
    name: String,
    seed: u64,
    observations: usize,
    respondents: usize,
    model_spec: String,
    #[serde(default)]
    covariates: Vec<CovariateSpec>,
    #[serde(default)]
    true_parameters: BTreeMap<String, f64>,
    latent: LatentConfig,
    #[serde(default)]
    share_targets: Option<BTreeMap<String, f64>>,
}

/// Loads a generator config file; the `model_spec` path is resolved relative
/// to the config file's directory.
pub fn load_synthetic_config(path: impl AsRef<Path>) -> Result<SyntheticConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| NlvError::io(path, e))?;
    let file: SyntheticConfigFile = toml::from_str(&text).map_err(|e| NlvError::SpecParse {
        path: path.to_path_buf(),
        message: e.to_string().replace('\n', " "),
    })?;
    let spec_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&file.model_spec);
    let model = crate::model::parse_model_spec(&spec_path)?;
    Ok(SyntheticConfig {
        name: file.name,
        seed: file.seed,
        observations: file.observations,
        respondents: file.respondents,
        model,
        covariates: file.covariates,
        true_parameters: file.true_parameters,
        latent: file.latent,
        share_targets: file.share_targets,
    })
}

const RESP_STREAM: u64 = 1 << 32;
const OBS_STREAM: u64 = 2 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a choice from a probability vector by inverse CDF.
pub fn draw_choice(probabilities: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, p) in probabilities.iter().enumerate() {
        if *p > 0.0 {
            cum += p;
            last_positive = i;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.observations < 1 || self.respondents < 1 {
            return Err(NlvError::Validation(
                "need at least one observation and one respondent".into(),
            ));
        }
        if self.observations < self.respondents {
            return Err(NlvError::Validation(
                "every respondent needs at least one observation".into(),
            ));
        }
        self.model.validate()?;
        for c in &self.covariates {
            c.dist.validate()?;
            let alts = self.model.alternatives();
            for a in &c.applies_to {
                if !alts.contains(a) {
                    return Err(NlvError::Validation(format!(
                        "covariate `{}` applies to unknown alternative `{a}`",
                        c.name
                    )));
                }
            }
        }
        for (name, v) in &self.true_parameters {
            if !v.is_finite() {
                return Err(NlvError::Validation(format!(
                    "true parameter `{name}` is not finite"
                )));
            }
        }
        let g = self.latent.loadings.len();
        if let Some(latent) = &self.model.latent {
            if latent.indicators.len() != g {
                return Err(NlvError::Validation(format!(
                    "{g} generating loadings for {} declared indicators",
                    latent.indicators.len()
                )));
            }
        } else if self.model.binds_latent() {
            return Err(NlvError::Validation(
                "model binds a latent term but declares no [latent] indicators".into(),
            ));
        }
        for l in &self.latent.loadings {
            if !l.is_finite() || l.abs() >= 1.0 {
                return Err(NlvError::Validation(
                    "generating loadings must be finite and inside (-1, 1)".into(),
                ));
            }
        }
        if let Some(means) = &self.latent.indicator_means {
            if means.len() != g {
                return Err(NlvError::Validation(
                    "indicator_means length must match loadings".into(),
                ));
            }
            if means.iter().any(|m| !(*m > 0.0 && *m < 1.0)) {
                return Err(NlvError::Validation(
                    "indicator_means must lie strictly inside (0, 1)".into(),
                ));
            }
            if self.latent.mode == LatentRegressor::RegressionScore {
                return Err(NlvError::Validation(
                    "regression_score mode needs continuous indicators (no indicator_means)".into(),
                ));
            }
        }
        if let Some(targets) = &self.share_targets {
            let alts = self.model.alternatives();
            let mut total = 0.0;
            for (alt, share) in targets {
                if !alts.contains(alt) {
                    return Err(NlvError::Validation(format!(
                        "share target names unknown alternative `{alt}`"
                    )));
                }
                if !(*share > 0.0 && *share < 1.0) {
                    return Err(NlvError::Validation(format!(
                        "share target for `{alt}` must be in (0, 1)"
                    )));
                }
                total += share;
            }
            if targets.len() != alts.len() || (total - 1.0).abs() > 1e-3 {
                return Err(NlvError::Validation(
                    "share targets must cover every alternative and sum to 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Generates a dataset, an indicator panel, and the truth record.
pub fn generate_synthetic(
    config: &SyntheticConfig,
) -> Result<(ChoiceDataset, IndicatorPanel, SyntheticTruth)> {
    config.validate()?;
    let q_total = config.observations;
    let n_resp = config.respondents;
    let alternatives = config.model.alternatives();
    let n_alts = alternatives.len();
    let g = config.latent.loadings.len();

    // Observation -> respondent assignment: consecutive blocks, remainder
    // spread over the first respondents.
    let base = q_total / n_resp;
    let rem = q_total % n_resp;
    let mut obs_respondent = Vec::with_capacity(q_total);
    let mut obs_labels = Vec::with_capacity(q_total);
    for r in 0..n_resp {
        let count = base + usize::from(r < rem);
        for k in 0..count {
            obs_respondent.push(r as u32);
            obs_labels.push(format!("{}", k + 1));
        }
    }
    let respondents: Vec<String> = (0..n_resp).map(|r| format!("R{:05}", r + 1)).collect();

    // Respondent-stream draws: per-respondent covariates, factor, noise.
    let per_resp_covs: Vec<usize> = (0..config.covariates.len())
        .filter(|&k| config.covariates[k].per_respondent)
        .collect();
    let mut resp_cov_values = vec![0.0f64; n_resp * config.covariates.len()];
    let mut factor = vec![0.0f64; n_resp];
    let mut raw_indicators = vec![0.0f64; n_resp * g];
    let noise_sd: Vec<f64> = config
        .latent
        .loadings
        .iter()
        .map(|l| (1.0 - l * l).max(0.05).sqrt())
        .collect();
    for r in 0..n_resp {
        let mut rng = stream_rng(config.seed, RESP_STREAM + r as u64);
        for &k in &per_resp_covs {
            resp_cov_values[r * config.covariates.len() + k] =
                config.covariates[k].dist.draw(&mut rng);
        }
        let x: f64 = StandardNormal.sample(&mut rng);
        factor[r] = x;
        for (k, loading) in config.latent.loadings.iter().enumerate() {
            let eta: f64 = StandardNormal.sample(&mut rng);
            raw_indicators[r * g + k] = loading * x + noise_sd[k] * eta;
        }
    }

    // Observation-stream draws: per-observation covariates and the choice uniform.
    let mut obs_cov_values = vec![0.0f64; q_total * config.covariates.len()];
    let mut choice_uniform = vec![0.0f64; q_total];
    for q in 0..q_total {
        let mut rng = stream_rng(config.seed, OBS_STREAM + q as u64);
        for (k, cov) in config.covariates.iter().enumerate() {
            if !cov.per_respondent {
                obs_cov_values[q * config.covariates.len() + k] = cov.dist.draw(&mut rng);
            }
        }
        choice_uniform[q] = rng.random::<f64>();
    }

    // Indicators: binarize at empirical quantiles when means are targeted.
    let panel_values = match &config.latent.indicator_means {
        None => raw_indicators.clone(),
        Some(means) => {
            let mut out = vec![0.0f64; n_resp * g];
            for (k, target) in means.iter().enumerate() {
                let mut column: Vec<f64> = (0..n_resp).map(|r| raw_indicators[r * g + k]).collect();
                let mut sorted = column.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let cut = (((1.0 - target) * n_resp as f64).round() as usize).min(n_resp);
                let threshold = if cut == 0 {
                    f64::NEG_INFINITY
                } else if cut == n_resp {
                    f64::INFINITY
                } else {
                    sorted[cut - 1]
                };
                for (r, v) in column.drain(..).enumerate() {
                    out[r * g + k] = if v > threshold { 1.0 } else { 0.0 };
                }
            }
            out
        }
    };
    let indicator_names = config
        .model
        .latent
        .as_ref()
        .map(|l| l.indicators.clone())
        .unwrap_or_else(|| (0..g).map(|k| format!("indicator_{k}")).collect());
    let panel = IndicatorPanel::from_parts(indicator_names, respondents.clone(), panel_values)?;

    // Latent regressor entering the generated utilities.
    let gen_scores: Vec<f64> = match config.latent.mode {
        LatentRegressor::TrueFactor => factor.clone(),
        LatentRegressor::RegressionScore => {
            // Population regression weights on the continuous indicators.
            let sigma = {
                let mut m = nalgebra::DMatrix::<f64>::zeros(g, g);
                for a in 0..g {
                    for b in 0..g {
                        m[(a, b)] = config.latent.loadings[a] * config.latent.loadings[b];
                    }
                    m[(a, a)] += noise_sd[a] * noise_sd[a];
                }
                m
            };
            let chol = nalgebra::linalg::Cholesky::new(sigma)
                .ok_or_else(|| NlvError::Numerical("generating covariance is singular".into()))?;
            let w = chol.solve(&nalgebra::DVector::from_column_slice(
                &config.latent.loadings,
            ));
            (0..n_resp)
                .map(|r| {
                    (0..g)
                        .map(|k| w[k] * raw_indicators[r * g + k])
                        .sum::<f64>()
                })
                .collect()
        }
    };

    // Assemble the covariate grid: value on applicable rows, 0 elsewhere.
    let covariate_names: Vec<String> = config.covariates.iter().map(|c| c.name.clone()).collect();
    let n_covs = covariate_names.len();
    let mut grid = vec![0.0f64; q_total * n_alts * n_covs];
    for q in 0..q_total {
        let r = obs_respondent[q] as usize;
        for (k, cov) in config.covariates.iter().enumerate() {
            let value = if cov.per_respondent {
                resp_cov_values[r * n_covs + k]
            } else {
                obs_cov_values[q * n_covs + k]
            };
            for (a, alt) in alternatives.iter().enumerate() {
                let applies = cov.applies_to.is_empty() || cov.applies_to.contains(alt);
                if applies {
                    grid[(q * n_alts + a) * n_covs + k] = value;
                }
            }
        }
    }

    // Calibration handles: the existing constant parameter, or a fresh one.
    let mut gen_spec = config.model.clone();
    if config.share_targets.is_some() {
        for alt in &alternatives {
            if *alt == gen_spec.base_alternative {
                continue;
            }
            let has_constant = gen_spec
                .bindings_for(alt)
                .any(|b| matches!(b.term, UtilityTerm::Constant));
            if !has_constant {
                gen_spec.bindings.push(TermBinding {
                    alternative: alt.clone(),
                    term: UtilityTerm::Constant,
                    parameter: format!("asc_cal_{alt}"),
                });
            }
        }
    }

    // Provisional dataset (chosen set later) to compile and enumerate against.
    let available = vec![true; q_total * n_alts];
    let provisional = ChoiceDataset::from_parts(
        alternatives.clone(),
        covariate_names.clone(),
        respondents.clone(),
        obs_respondent.clone(),
        obs_labels.clone(),
        vec![0; q_total],
        available.clone(),
        grid.clone(),
    )?;
    let model = CompiledModel::new(&gen_spec, &provisional)?;
    let score_arg = if model.binds_latent {
        Some(gen_scores.as_slice())
    } else {
        None
    };
    let design = DesignMatrix::build(&model, &provisional, score_arg)?;

    let mut theta = ParameterVector::start(&model, 0.8);
    for (i, name) in model.space.names.iter().enumerate() {
        if let Some(v) = config.true_parameters.get(name) {
            theta.values[i] = *v;
        } else if model.space.fixed[i].is_none()
            && matches!(
                model.space.roles[i],
                crate::model::ParamRole::InclusiveValue { .. }
            )
        {
            return Err(NlvError::Validation(format!(
                "true parameter for free inclusive value `{name}` is required",
            )));
        }
    }
    // Calibration constants default to 0 unless explicitly set.
    for (i, name) in model.space.names.iter().enumerate() {
        if name.starts_with("asc_cal_") && !config.true_parameters.contains_key(name) {
            theta.values[i] = 0.0;
        }
    }

    if let Some(targets) = &config.share_targets {
        calibrate_constants(&design, &model, &mut theta, targets, &alternatives)?;
    }

    // Expected shares at the generating parameters.
    let expected = engine::mean_probabilities(&design, &model, &theta)?;

    // Draw the choices.
    let mut chosen = vec![0u32; q_total];
    let mut v = vec![0.0f64; n_alts];
    for q in 0..q_total {
        design.utilities(q, &theta, &mut v);
        let ws = engine::choice_probabilities(&v, &theta, &model)?;
        chosen[q] = draw_choice(&ws.prob, choice_uniform[q]) as u32;
    }

    let data = ChoiceDataset::from_parts(
        alternatives.clone(),
        covariate_names,
        respondents,
        obs_respondent,
        obs_labels,
        chosen,
        available,
        grid,
    )?;

    let truth_design = DesignMatrix::build(&model, &data, score_arg)?;
    let ll_at_truth = engine::log_likelihood(&truth_design, &model, &theta);

    let parameters: BTreeMap<String, f64> = model
        .space
        .names
        .iter()
        .cloned()
        .zip(theta.values.iter().copied())
        .collect();
    let expected_shares: BTreeMap<String, f64> = alternatives
        .iter()
        .cloned()
        .zip(expected.iter().copied())
        .collect();

    Ok((
        data,
        panel,
        SyntheticTruth {
            schema_version: crate::estimate::RESULT_SCHEMA_VERSION,
            name: config.name.clone(),
            seed: config.seed,
            parameters,
            loadings: config.latent.loadings.clone(),
            expected_shares,
            ll_at_truth,
        },
    ))
}

/// Damped fixed-point adjustment of the per-alternative constants until the
/// expected shares match the targets.
fn calibrate_constants(
    design: &DesignMatrix,
    model: &CompiledModel,
    theta: &mut ParameterVector,
    targets: &BTreeMap<String, f64>,
    alternatives: &[String],
) -> Result<()> {
    // Handle = the constant parameter bound to each non-base alternative.
    let mut handles: Vec<Option<usize>> = vec![None; alternatives.len()];
    for (a, _alt) in alternatives.iter().enumerate() {
        if a == model.base_alternative {
            continue;
        }
        for term in &model.terms[a] {
            if term.source == crate::model::TermSource::Constant {
                handles[a] = Some(term.parameter);
            }
        }
        if handles[a].is_none() {
            return Err(NlvError::Estimation(format!(
                "no constant available to calibrate alternative `{}`",
                alternatives[a]
            )));
        }
    }
    let target_vec: Vec<f64> = alternatives.iter().map(|a| targets[a]).collect();
    let damping = 0.8;
    for _ in 0..500 {
        let current = engine::mean_probabilities(design, model, theta)?;
        let max_gap = current
            .iter()
            .zip(&target_vec)
            .map(|(c, t)| (c - t).abs())
            .fold(0.0, f64::max);
        if max_gap < 1e-6 {
            return Ok(());
        }
        for (a, handle) in handles.iter().enumerate() {
            if let Some(idx) = handle {
                let adj = (target_vec[a] / current[a].max(1e-12)).ln();
                theta.values[*idx] += damping * adj;
            }
        }
    }
    Err(NlvError::Estimation(
        "share calibration did not converge within 500 iterations".into(),
    ))
}
