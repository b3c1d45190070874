//! Maximum-likelihood estimation of the nested logit, with standard errors,
//! t-statistics, and the zero/constants benchmarks.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfa::Scores;
use crate::data::ChoiceDataset;
use crate::engine::{self, DesignMatrix, ParameterVector};
use crate::error::{NlvError, Result};
use crate::model::{constants_only_spec, CompiledModel, ModelSpec, ParamRole};
use crate::optim::{self, BfgsOptions, Transform};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the search-space gradient norm.
    pub gradient_tol: f64,
    /// Number of starts: the documented default start plus jittered ones.
    pub multistart: usize,
    pub seed: u64,
    /// Box constraint applied to free inclusive-value parameters during the
    /// search; consistency with (0, 1] is reported afterwards, not imposed.
    pub iv_lower: f64,
    pub iv_upper: f64,
    /// Start value for free inclusive-value parameters.
    pub start_iv: f64,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            max_iterations: 500,
            gradient_tol: 1e-6,
            multistart: 5,
            seed: 0,
            iv_lower: 0.01,
            iv_upper: 1.5,
            start_iv: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    Stalled,
    NonFinite,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartTrace {
    pub start_index: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub status: ConvergenceStatus,
    /// Objective value per accepted iteration (log-likelihood scale).
    pub ll_path: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceInfo {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub status: ConvergenceStatus,
    pub best_start: usize,
    pub starts: Vec<StartTrace>,
}

/// Per-nest inclusive-value summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IvReport {
    pub nest: String,
    pub parameter: String,
    pub value: f64,
    pub fixed: bool,
    /// Post-hoc consistency check: value in (0, 1].
    pub in_unit_interval: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub schema_version: u32,
    pub model_name: String,
    pub parameter_names: Vec<String>,
    /// Full parameter vector at convergence (fixed entries at their value).
    pub estimates: Vec<f64>,
    pub fixed: Vec<Option<f64>>,
    pub std_errors: Vec<Option<f64>>,
    pub t_stats: Vec<Option<f64>>,
    pub ll_beta: f64,
    pub ll_zero: f64,
    pub ll_const: f64,
    pub rho2: f64,
    pub pseudo_rho2: f64,
    pub convergence: ConvergenceInfo,
    pub iv_report: Vec<IvReport>,
    pub n_observations: usize,
    pub n_free_parameters: usize,
    pub notes: Vec<String>,
}

impl EstimationResult {
    pub fn theta(&self) -> ParameterVector {
        ParameterVector {
            values: self.estimates.clone(),
        }
    }

    pub fn estimate_of(&self, name: &str) -> Option<f64> {
        self.parameter_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.estimates[i])
    }

    pub fn std_error_of(&self, name: &str) -> Option<f64> {
        self.parameter_names
            .iter()
            .position(|n| n == name)
            .and_then(|i| self.std_errors[i])
    }
}

/// The three log-likelihood benchmarks and the derived fit ratios.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitBlock {
    pub ll_beta: f64,
    pub ll_zero: f64,
    pub ll_const: f64,
}

impl FitBlock {
    pub fn rho2(&self) -> f64 {
        1.0 - self.ll_beta / self.ll_zero
    }

    pub fn pseudo_rho2(&self) -> f64 {
        1.0 - self.ll_beta / self.ll_const
    }
}

fn align_scores(data: &ChoiceDataset, scores: &Scores) -> Result<Vec<f64>> {
    data.respondents()
        .iter()
        .map(|id| {
            scores
                .get(id)
                .ok_or_else(|| NlvError::Scoring(format!("no factor score for respondent {id}")))
        })
        .collect()
}

struct FreeView {
    indices: Vec<usize>,
    transforms: Vec<Transform>,
}

impl FreeView {
    fn new(model: &CompiledModel, options: &EstimationOptions) -> Self {
        let indices = model.space.free_indices();
        let transforms = indices
            .iter()
            .map(|&i| match model.space.roles[i] {
                ParamRole::Utility => Transform::Identity,
                ParamRole::InclusiveValue { .. } => Transform::Logistic {
                    lo: options.iv_lower,
                    hi: options.iv_upper,
                },
            })
            .collect();
        FreeView {
            indices,
            transforms,
        }
    }

    fn pack(&self, theta: &ParameterVector) -> Vec<f64> {
        self.indices.iter().map(|&i| theta.values[i]).collect()
    }

    fn unpack(&self, free: &[f64], template: &ParameterVector) -> ParameterVector {
        let mut theta = template.clone();
        for (k, &i) in self.indices.iter().enumerate() {
            theta.values[i] = free[k];
        }
        theta
    }
}

fn status_of(stop: optim::StopReason) -> ConvergenceStatus {
    match stop {
        optim::StopReason::GradientTol => ConvergenceStatus::Converged,
        optim::StopReason::MaxIterations => ConvergenceStatus::MaxIterations,
        optim::StopReason::LineSearchFailed => ConvergenceStatus::LineSearchFailed,
        optim::StopReason::StalledObjective => ConvergenceStatus::Stalled,
        optim::StopReason::NonFiniteObjective => ConvergenceStatus::NonFinite,
    }
}

/// Runs the multistart ascent and returns the best converged point.
fn maximize_ll(
    design: &DesignMatrix,
    model: &CompiledModel,
    starts: &[ParameterVector],
    options: &EstimationOptions,
) -> Result<(ParameterVector, f64, ConvergenceInfo)> {
    let view = FreeView::new(model, options);
    let template = starts[0].clone();
    let bfgs = BfgsOptions {
        max_iterations: options.max_iterations,
        gradient_tol: options.gradient_tol,
        ..Default::default()
    };

    let mut traces = Vec::with_capacity(starts.len());
    let mut best: Option<(usize, ParameterVector, f64, &StartTrace)> = None;
    let mut outcomes = Vec::with_capacity(starts.len());
    for (s, start) in starts.iter().enumerate() {
        let outcome = optim::minimize(
            |free| {
                let theta = view.unpack(free, &template);
                let ll = engine::log_likelihood(design, model, &theta);
                match engine::ll_gradient(design, model, &theta) {
                    Ok(grad) => {
                        let g = view.indices.iter().map(|&i| -grad[i]).collect();
                        (-ll, g)
                    }
                    // A start in an underflowing region: report a non-finite
                    // objective so the line search backs away from it.
                    Err(_) => (f64::INFINITY, vec![0.0; view.indices.len()]),
                }
            },
            &view.transforms,
            &view.pack(start),
            &bfgs,
        );
        traces.push(StartTrace {
            start_index: s,
            log_likelihood: -outcome.f,
            iterations: outcome.iterations,
            gradient_norm: outcome.gradient_norm,
            status: status_of(outcome.stop),
            ll_path: outcome.f_history.iter().map(|f| -f).collect(),
        });
        outcomes.push(outcome);
    }
    for (s, outcome) in outcomes.iter().enumerate() {
        if !outcome.converged {
            continue;
        }
        let ll = -outcome.f;
        if best.as_ref().map(|(_, _, b, _)| ll > *b).unwrap_or(true) {
            best = Some((s, view.unpack(&outcome.x, &template), ll, &traces[s]));
        }
    }

    match best {
        Some((s, theta, ll, trace)) => {
            let info = ConvergenceInfo {
                iterations: trace.iterations,
                gradient_norm: trace.gradient_norm,
                status: ConvergenceStatus::Converged,
                best_start: s,
                starts: traces.clone(),
            };
            Ok((theta, ll, info))
        }
        None => {
            let mut lines = String::new();
            for t in &traces {
                lines.push_str(&format!(
                    "\n  start {}: LL = {:.6}, {} iterations, |grad| = {:.3e}, status = {:?}",
                    t.start_index, t.log_likelihood, t.iterations, t.gradient_norm, t.status
                ));
            }
            Err(NlvError::Estimation(format!(
                "no start converged to gradient norm < {:.1e}:{lines}",
                options.gradient_tol
            )))
        }
    }
}

fn build_starts(
    model: &CompiledModel,
    options: &EstimationOptions,
    warm: Option<&ParameterVector>,
) -> Vec<ParameterVector> {
    let mut starts = Vec::with_capacity(options.multistart.max(1));
    let base = warm
        .cloned()
        .unwrap_or_else(|| ParameterVector::start(model, options.start_iv));
    starts.push(base.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let lo = options.iv_lower;
    let hi = options.iv_upper;
    for _ in 1..options.multistart.max(1) {
        let mut jittered = base.clone();
        for (i, role) in model.space.roles.iter().enumerate() {
            if model.space.fixed[i].is_some() {
                continue;
            }
            match role {
                ParamRole::Utility => {
                    jittered.values[i] += rng.random_range(-0.25..0.25);
                }
                ParamRole::InclusiveValue { .. } => {
                    let j: f64 = rng.random_range(-0.15..0.15);
                    jittered.values[i] = (jittered.values[i] + j)
                        .clamp(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo));
                }
            }
        }
        starts.push(jittered);
    }
    starts
}

/// Full estimation: multistart BFGS ascent, numerical-Hessian standard
/// errors, benchmark log-likelihoods, and fit ratios.
pub fn estimate(
    data: &ChoiceDataset,
    scores: Option<&Scores>,
    spec: &ModelSpec,
    options: &EstimationOptions,
) -> Result<EstimationResult> {
    let model = CompiledModel::new(spec, data)?;
    let aligned = match (model.binds_latent, scores) {
        (true, Some(s)) => Some(align_scores(data, s)?),
        (true, None) => {
            return Err(NlvError::Scoring(
                "the model binds a latent term; factor scores are required".into(),
            ))
        }
        (false, Some(_)) => {
            return Err(NlvError::Scoring(
                "factor scores were supplied but the model binds no latent term".into(),
            ))
        }
        (false, None) => None,
    };
    let design = DesignMatrix::build(&model, data, aligned.as_deref())?;

    let starts = build_starts(&model, options, None);
    let (theta_hat, ll_beta, convergence) = maximize_ll(&design, &model, &starts, options)?;

    let (std_errors, hessian_note) = std_errors_at(&design, &model, &theta_hat);
    let t_stats: Vec<Option<f64>> = theta_hat
        .values
        .iter()
        .zip(&std_errors)
        .map(|(est, se)| se.map(|s| est / s))
        .collect();

    let (ll_zero, ll_const) = benchmark_lls(data, spec)?;
    let fit = FitBlock {
        ll_beta,
        ll_zero,
        ll_const,
    };

    let iv_report = model
        .nests
        .iter()
        .map(|nest| {
            let value = theta_hat.values[nest.iv_parameter];
            IvReport {
                nest: nest.name.clone(),
                parameter: model.space.names[nest.iv_parameter].clone(),
                value,
                fixed: model.space.fixed[nest.iv_parameter].is_some(),
                in_unit_interval: value > 0.0 && value <= 1.0,
            }
        })
        .collect();

    let mut notes = Vec::new();
    if let Some(note) = hessian_note {
        notes.push(note);
    }

    Ok(EstimationResult {
        schema_version: RESULT_SCHEMA_VERSION,
        model_name: spec.name.clone(),
        parameter_names: model.space.names.clone(),
        estimates: theta_hat.values.clone(),
        fixed: model.space.fixed.clone(),
        std_errors,
        t_stats,
        ll_beta,
        ll_zero,
        ll_const,
        rho2: fit.rho2(),
        pseudo_rho2: fit.pseudo_rho2(),
        convergence,
        iv_report,
        n_observations: data.n_observations(),
        n_free_parameters: model.space.n_free(),
        notes,
    })
}

/// LL(0): equal probability over each observation's available set.
/// LL(c): converged constants-only multinomial logit (base constant 0).
pub fn benchmark_lls(data: &ChoiceDataset, spec: &ModelSpec) -> Result<(f64, f64)> {
    let terms: Vec<f64> = (0..data.n_observations())
        .map(|q| {
            let obs = data.observation(q);
            let n_avail = (0..data.n_alternatives())
                .filter(|&a| obs.available(a))
                .count();
            -((n_avail as f64).ln())
        })
        .collect();
    let ll_zero = engine::pairwise_sum(&terms);

    let const_spec = constants_only_spec(data, &spec.base_alternative)?;
    let model = CompiledModel::new(&const_spec, data)?;
    let design = DesignMatrix::build(&model, data, None)?;

    // Warm start at the full-availability closed form: asc_i = ln(share_i / share_base).
    let shares = data.observed_shares();
    let base_share = shares[model.base_alternative].max(1e-12);
    let mut warm = ParameterVector::start(&model, 1.0);
    for (a, label) in data.alternative_labels().iter().enumerate() {
        if a == model.base_alternative {
            continue;
        }
        if let Some(idx) = model.space.index_of(&format!("asc_{label}")) {
            warm.values[idx] = (shares[a].max(1e-12) / base_share).ln();
        }
    }
    let options = EstimationOptions {
        multistart: 1,
        gradient_tol: 1e-7,
        ..Default::default()
    };
    let starts = vec![warm];
    let (_, ll_const, _) = maximize_ll(&design, &model, &starts, &options).map_err(|e| {
        NlvError::Estimation(format!("constants-only benchmark did not converge: {e}"))
    })?;
    Ok((ll_zero, ll_const))
}

/// Standard errors from the inverse of the negative numerical Hessian at
/// `theta_hat`. Fixed parameters get `None`.
pub fn standard_errors(
    theta_hat: &ParameterVector,
    data: &ChoiceDataset,
    scores: Option<&Scores>,
    spec: &ModelSpec,
) -> Result<Vec<Option<f64>>> {
    let model = CompiledModel::new(spec, data)?;
    let aligned = match (model.binds_latent, scores) {
        (true, Some(s)) => Some(align_scores(data, s)?),
        _ => None,
    };
    let design = DesignMatrix::build(&model, data, aligned.as_deref())?;
    Ok(std_errors_at(&design, &model, theta_hat).0)
}

fn std_errors_at(
    design: &DesignMatrix,
    model: &CompiledModel,
    theta_hat: &ParameterVector,
) -> (Vec<Option<f64>>, Option<String>) {
    let free = model.space.free_indices();
    let n_free = free.len();
    let n_params = model.space.len();
    if n_free == 0 {
        return (vec![None; n_params], None);
    }
    let x0: Vec<f64> = free.iter().map(|&i| theta_hat.values[i]).collect();
    let grad_free = |x: &[f64]| -> Vec<f64> {
        let mut theta = theta_hat.clone();
        for (k, &i) in free.iter().enumerate() {
            theta.values[i] = x[k];
        }
        match engine::ll_gradient(design, model, &theta) {
            Ok(g) => free.iter().map(|&i| g[i]).collect(),
            Err(_) => vec![f64::NAN; n_free],
        }
    };
    // Central-difference Hessian of the log-likelihood via its analytic gradient.
    let hessian = optim::central_hessian(grad_free, &x0, 1e-5);
    let neg_h = -hessian;
    let mut note = None;
    let inverse = match robust_spd_inverse(&neg_h) {
        Some(inv) => Some(inv),
        None => {
            // One ridge retry, labeled in the result notes.
            let ridged = &neg_h + DMatrix::identity(n_free, n_free) * 1e-6;
            let retry = robust_spd_inverse(&ridged);
            if retry.is_some() {
                note = Some(
                    "negative Hessian was not positive definite; a 1e-6 ridge was applied to the diagonal"
                        .to_string(),
                );
            } else {
                note = Some(
                    "negative Hessian was not positive definite; standard errors unavailable"
                        .to_string(),
                );
            }
            retry
        }
    };
    let mut errors = vec![None; n_params];
    if let Some(inv) = inverse {
        for (k, &i) in free.iter().enumerate() {
            let var = inv[(k, k)];
            if var.is_finite() && var > 0.0 {
                errors[i] = Some(var.sqrt());
            }
        }
    }
    (errors, note)
}

fn robust_spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    nalgebra::linalg::Cholesky::new(m.clone()).map(|c| c.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_choice_csv, CsvSchema};
    use crate::model::parse_model_spec_str;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mnl_spec(alts: &[&str]) -> String {
        let mut s = String::from("[model]\nname = \"mnl\"\nbase_alternative = \"");
        s.push_str(alts[0]);
        s.push_str("\"\n\n[nests]\nall = [");
        s.push_str(
            &alts
                .iter()
                .map(|a| format!("{a:?}"))
                .collect::<Vec<_>>()
                .join(", "),
        );
        s.push_str("]\n");
        for a in &alts[1..] {
            s.push_str(&format!("\n[utility.{a}]\nconstant = \"asc_{a}\"\n"));
        }
        s.push_str("\n[fixed]\niv_all = 1.0\n");
        s
    }

    fn share_dataset(counts: &[(&str, usize)]) -> ChoiceDataset {
        let mut csv = String::from("resp_id,obs_id,alt,avail,chosen\n");
        let mut q = 0;
        for &(chosen_alt, n) in counts {
            for _ in 0..n {
                for (alt, _) in counts {
                    let ch = if *alt == chosen_alt { 1 } else { 0 };
                    csv.push_str(&format!("r{q},{q},{alt},1,{ch}\n"));
                }
                q += 1;
            }
        }
        read_choice_csv(csv.as_bytes(), &CsvSchema::default(), "shares.csv").unwrap()
    }

    #[test]
    fn constants_only_reproduces_observed_shares() {
        let data = share_dataset(&[("a", 12), ("b", 30), ("c", 18)]);
        let spec = parse_model_spec_str(&mnl_spec(&["a", "b", "c"]), "m.spec").unwrap();
        let result = estimate(&data, None, &spec, &EstimationOptions::default()).unwrap();
        let model = CompiledModel::new(&spec, &data).unwrap();
        let design = DesignMatrix::build(&model, &data, None).unwrap();
        let mean = engine::mean_probabilities(&design, &model, &result.theta()).unwrap();
        for (sim, obs) in mean.iter().zip(data.observed_shares()) {
            assert_abs_diff_eq!(*sim, obs, epsilon = 1e-6);
        }
    }

    #[test]
    fn benchmarks_match_closed_forms() {
        // Two alternatives, shares (0.75, 0.25) over Q = 4.
        let data = share_dataset(&[("x", 3), ("y", 1)]);
        let spec = parse_model_spec_str(&mnl_spec(&["x", "y"]), "m.spec").unwrap();
        let (ll_zero, ll_const) = benchmark_lls(&data, &spec).unwrap();
        assert_abs_diff_eq!(ll_zero, 4.0 * (0.5f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            ll_const,
            3.0 * (0.75f64).ln() + (0.25f64).ln(),
            epsilon = 1e-8
        );
    }

    #[test]
    fn equal_shares_collapse_ll_const_to_ll_zero() {
        let data = share_dataset(&[("a", 10), ("b", 10)]);
        let spec = parse_model_spec_str(&mnl_spec(&["a", "b"]), "m.spec").unwrap();
        let (ll_zero, ll_const) = benchmark_lls(&data, &spec).unwrap();
        assert_abs_diff_eq!(ll_const, ll_zero, epsilon = 1e-9);
    }

    #[test]
    fn gradient_vanishes_at_the_share_matching_optimum() {
        // Constants built from observed shares are the exact optimum of the
        // constants-only model; the analytic gradient is zero there.
        let data = share_dataset(&[("a", 21), ("b", 14), ("c", 35)]);
        let spec = constants_only_spec(&data, "a").unwrap();
        let model = CompiledModel::new(&spec, &data).unwrap();
        let design = DesignMatrix::build(&model, &data, None).unwrap();
        let shares = data.observed_shares();
        let mut theta = ParameterVector::start(&model, 1.0);
        for (a, label) in data.alternative_labels().iter().enumerate() {
            if let Some(idx) = model.space.index_of(&format!("asc_{label}")) {
                theta.values[idx] = (shares[a] / shares[0]).ln();
            }
        }
        let grad = engine::ll_gradient(&design, &model, &theta).unwrap();
        for g in grad {
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn binary_logit_standard_error_matches_fisher_information() {
        // One slope on x in {-1, +1}, balanced. The oracle is the closed-form
        // inverse Fisher information at the estimate.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let theta_true = 0.5f64;
        let mut csv = String::from("resp_id,obs_id,alt,avail,chosen,x\n");
        let q = 4000;
        for i in 0..q {
            let x = if i % 2 == 0 { 1.0 } else { -1.0 };
            let p = 1.0 / (1.0 + (-theta_true * x).exp());
            let choose_b = rng.random::<f64>() < p;
            csv.push_str(&format!(
                "r{i},{i},a,1,{},0\nr{i},{i},b,1,{},{x}\n",
                if choose_b { 0 } else { 1 },
                if choose_b { 1 } else { 0 },
            ));
        }
        let data = read_choice_csv(csv.as_bytes(), &CsvSchema::default(), "bl.csv").unwrap();
        let spec_text = r#"
[model]
name = "binary"
base_alternative = "a"

[nests]
all = ["a", "b"]

[utility.b]
x = "slope"

[fixed]
iv_all = 1.0
"#;
        let spec = parse_model_spec_str(spec_text, "b.spec").unwrap();
        let result = estimate(&data, None, &spec, &EstimationOptions::default()).unwrap();
        let slope = result.estimate_of("slope").unwrap();
        let se = result.std_error_of("slope").unwrap();

        // Fisher information: sum over observations of x^2 p (1 - p).
        let mut info = 0.0;
        for i in 0..q {
            let x: f64 = if i % 2 == 0 { 1.0 } else { -1.0 };
            let p = 1.0 / (1.0 + (-slope * x).exp());
            info += x * x * p * (1.0 - p);
        }
        let closed_form = (1.0 / info).sqrt();
        assert!(
            (se - closed_form).abs() / closed_form < 0.02,
            "se {se} vs closed form {closed_form}"
        );
        // The estimate itself should be near the truth on 4000 draws.
        assert!((slope - theta_true).abs() < 3.0 * se);
    }

    #[test]
    fn t_stat_sign_matches_coefficient_sign() {
        let data = share_dataset(&[("a", 9), ("b", 24), ("c", 3)]);
        let spec = parse_model_spec_str(&mnl_spec(&["a", "b", "c"]), "m.spec").unwrap();
        let result = estimate(&data, None, &spec, &EstimationOptions::default()).unwrap();
        for (est, t) in result.estimates.iter().zip(&result.t_stats) {
            if let Some(t) = t {
                assert_eq!(est.signum(), t.signum());
            }
        }
    }

    #[test]
    fn fixed_iv_parameters_have_no_standard_error() {
        let data = share_dataset(&[("a", 8), ("b", 12)]);
        let spec = parse_model_spec_str(&mnl_spec(&["a", "b"]), "m.spec").unwrap();
        let result = estimate(&data, None, &spec, &EstimationOptions::default()).unwrap();
        let iv_idx = result
            .parameter_names
            .iter()
            .position(|n| n == "iv_all")
            .unwrap();
        assert_eq!(result.std_errors[iv_idx], None);
        assert_eq!(result.estimates[iv_idx], 1.0);
        assert!(result.iv_report[0].fixed);
    }

    #[test]
    fn rho_squared_reproduces_from_stored_lls() {
        let fit = FitBlock {
            ll_beta: -6246.551,
            ll_zero: -8141.941,
            ll_const: -7484.911,
        };
        assert_abs_diff_eq!(fit.rho2(), 1.0 - 6246.551 / 8141.941, epsilon = 1e-12);
        let data = share_dataset(&[("a", 5), ("b", 20), ("c", 15)]);
        let spec = parse_model_spec_str(&mnl_spec(&["a", "b", "c"]), "m.spec").unwrap();
        let result = estimate(&data, None, &spec, &EstimationOptions::default()).unwrap();
        assert_abs_diff_eq!(
            result.rho2,
            1.0 - result.ll_beta / result.ll_zero,
            epsilon = 1e-10
        );
        assert!(result.ll_zero <= result.ll_const + 1e-9);
        assert!(result.ll_const <= result.ll_beta + 1e-9);
    }

    #[test]
    fn fixed_utility_parameters_never_move() {
        // Pin the slope; estimation optimizes the constant around it.
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut csv = String::from("resp_id,obs_id,alt,avail,chosen,x\n");
        for i in 0..400 {
            let x: f64 = rng.random_range(-1.0..1.0);
            let v = 0.3 + 0.9 * x;
            let b = rng.random::<f64>() < v.exp() / (1.0 + v.exp());
            csv.push_str(&format!(
                "r{i},{i},a,1,{},0\nr{i},{i},b,1,{},{x}\n",
                u8::from(!b),
                u8::from(b)
            ));
        }
        let data = read_choice_csv(csv.as_bytes(), &CsvSchema::default(), "f.csv").unwrap();
        let spec_text = r#"
[model]
name = "pinned"
base_alternative = "a"

[nests]
all = ["a", "b"]

[utility.b]
constant = "asc_b"
x = "slope"

[fixed]
iv_all = 1.0
slope = 0.9
"#;
        let spec = parse_model_spec_str(spec_text, "f.spec").unwrap();
        let result = estimate(&data, None, &spec, &EstimationOptions::default()).unwrap();
        assert_eq!(result.estimate_of("slope"), Some(0.9));
        assert_eq!(result.std_error_of("slope"), None);
        assert!(result.std_error_of("asc_b").is_some());
    }

    #[test]
    fn collinear_design_gets_ridge_labeled_standard_errors() {
        // Two copies of the same covariate bound to the same alternative
        // under different parameter names: the Hessian is singular along the
        // collinear direction, so the ridge retry kicks in and is labeled.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut csv = String::from("resp_id,obs_id,alt,avail,chosen,x,x_copy\n");
        for i in 0..300 {
            let x: f64 = rng.random_range(-1.0..1.0);
            let p = 1.0 / (1.0 + (-0.8 * x).exp());
            let b = rng.random::<f64>() < p;
            csv.push_str(&format!(
                "r{i},{i},a,1,{},0,0\nr{i},{i},b,1,{},{x},{x}\n",
                u8::from(!b),
                u8::from(b)
            ));
        }
        let data = read_choice_csv(csv.as_bytes(), &CsvSchema::default(), "c.csv").unwrap();
        let spec_text = r#"
[model]
name = "collinear"
base_alternative = "a"

[nests]
all = ["a", "b"]

[utility.b]
x = "slope_one"
x_copy = "slope_two"

[fixed]
iv_all = 1.0
"#;
        let spec = parse_model_spec_str(spec_text, "c.spec").unwrap();
        let result = estimate(&data, None, &spec, &EstimationOptions::default()).unwrap();
        // Estimation is still returned; the note records what happened.
        assert!(
            !result.notes.is_empty(),
            "expected a Hessian note, got none (std errors {:?})",
            result.std_errors
        );
    }

    #[test]
    fn score_presence_must_match_the_spec() {
        let data = share_dataset(&[("a", 6), ("b", 10)]);
        let spec = parse_model_spec_str(&mnl_spec(&["a", "b"]), "m.spec").unwrap();
        let scores = crate::cfa::Scores {
            respondents: data.respondents().to_vec(),
            values: vec![0.0; data.n_respondents()],
        };
        // Scores without a latent term are rejected, as is the reverse.
        assert!(estimate(&data, Some(&scores), &spec, &EstimationOptions::default()).is_err());

        let latent_spec = parse_model_spec_str(
            r#"
[model]
name = "latent"
base_alternative = "a"

[nests]
all = ["a", "b"]

[utility.b]
latent = "b_latent"

[fixed]
iv_all = 1.0

[latent]
name = "construct"
indicators = ["i1", "i2", "i3"]
"#,
            "l.spec",
        )
        .unwrap();
        assert!(estimate(&data, None, &latent_spec, &EstimationOptions::default()).is_err());
    }

    #[test]
    fn forced_single_iteration_reports_non_convergence_with_traces() {
        let data = share_dataset(&[("a", 9), ("b", 24), ("c", 3)]);
        let spec = parse_model_spec_str(&mnl_spec(&["a", "b", "c"]), "m.spec").unwrap();
        let options = EstimationOptions {
            max_iterations: 1,
            ..Default::default()
        };
        let err = estimate(&data, None, &spec, &options).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("start 0"), "{msg}");
        assert!(msg.contains("no start converged"), "{msg}");
    }

    #[test]
    fn covariate_rescaling_rescales_its_coefficient_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let make_csv = |scale: f64| {
            let mut csv = String::from("resp_id,obs_id,alt,avail,chosen,x\n");
            let mut inner_rng = ChaCha8Rng::seed_from_u64(17);
            for i in 0..600 {
                let x: f64 = inner_rng.random_range(-1.0..1.0);
                let v = 0.4 + 0.9 * x;
                let p = v.exp() / (1.0 + v.exp());
                let choose_b = inner_rng.random::<f64>() < p;
                csv.push_str(&format!(
                    "r{i},{i},a,1,{},0\nr{i},{i},b,1,{},{}\n",
                    if choose_b { 0 } else { 1 },
                    if choose_b { 1 } else { 0 },
                    x * scale,
                ));
            }
            csv
        };
        let _ = rng.random::<f64>();
        let spec_text = r#"
[model]
name = "scaling"
base_alternative = "a"

[nests]
all = ["a", "b"]

[utility.b]
constant = "asc_b"
x = "slope"

[fixed]
iv_all = 1.0
"#;
        let spec = parse_model_spec_str(spec_text, "s.spec").unwrap();
        let k = 5.0;
        let data1 =
            read_choice_csv(make_csv(1.0).as_bytes(), &CsvSchema::default(), "d1.csv").unwrap();
        let datak =
            read_choice_csv(make_csv(k).as_bytes(), &CsvSchema::default(), "dk.csv").unwrap();
        let r1 = estimate(&data1, None, &spec, &EstimationOptions::default()).unwrap();
        let rk = estimate(&datak, None, &spec, &EstimationOptions::default()).unwrap();
        assert_abs_diff_eq!(r1.ll_beta, rk.ll_beta, epsilon = 1e-6);
        assert_abs_diff_eq!(
            r1.estimate_of("slope").unwrap(),
            k * rk.estimate_of("slope").unwrap(),
            epsilon = 1e-5
        );
        assert_abs_diff_eq!(
            r1.estimate_of("asc_b").unwrap(),
            rk.estimate_of("asc_b").unwrap(),
            epsilon = 1e-5
        );
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = share_dataset(&[("a", 15), ("b", 25), ("c", 10)]);
        let spec = parse_model_spec_str(&mnl_spec(&["a", "b", "c"]), "m.spec").unwrap();
        let options = EstimationOptions {
            seed: 123,
            ..Default::default()
        };
        let r1 = estimate(&data, None, &spec, &options).unwrap();
        let r2 = estimate(&data, None, &spec, &options).unwrap();
        assert_eq!(r1.estimates, r2.estimates);
        assert_eq!(r1.ll_beta.to_bits(), r2.ll_beta.to_bits());
    }

    #[test]
    fn monotone_ascent_along_the_accepted_path() {
        let data = share_dataset(&[("a", 9), ("b", 24), ("c", 3)]);
        let spec = parse_model_spec_str(&mnl_spec(&["a", "b", "c"]), "m.spec").unwrap();
        let result = estimate(&data, None, &spec, &EstimationOptions::default()).unwrap();
        for trace in &result.convergence.starts {
            for pair in trace.ll_path.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-12, "LL decreased: {pair:?}");
            }
        }
    }
}
