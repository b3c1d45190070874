//! Two-level nested logit probability engine.
//!
//! Everything here is a pure function of a parameter vector over immutable
//! inputs. Utilities of unavailable alternatives carry a `-inf` sentinel and
//! contribute exact zeros downstream; log-sum-exp is max-shifted so utilities
//! at `±700` stay finite.
//!
//! The log-likelihood of one observation with chosen alternative `c` in nest
//! `m` is evaluated fully in log space:
//!
//! ```text
//! ln P = (V_c - IV_m) + g_m * IV_m - ln( sum_k exp(g_k * IV_k) )
//! ```
//!
//! with `IV_j = ln sum_{i in j} exp(V_i)`. The IV parameter `g_j` multiplies
//! the inclusive value in the nest marginal only; within-nest utilities are
//! not rescaled by `1/g_j` (the non-normalized variant — see the README note
//! on utility scale).

use rayon::prelude::*;

use crate::data::{ChoiceDataset, ObsView};
use crate::error::{NlvError, Result};
use crate::model::{CompiledModel, CompiledTerm, ParamRole, TermSource};

/// Full-length parameter vector indexed like a `ParameterSpace`.
///
/// Fixed entries hold their fixed value and never move during optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
}

impl ParameterVector {
    /// Start point: fixed entries at their value, free utility coefficients
    /// at 0, free IV parameters at `start_iv`.
    pub fn start(model: &CompiledModel, start_iv: f64) -> Self {
        let values = model
            .space
            .roles
            .iter()
            .zip(&model.space.fixed)
            .map(|(role, fixed)| match (fixed, role) {
                (Some(v), _) => *v,
                (None, ParamRole::Utility) => 0.0,
                (None, ParamRole::InclusiveValue { .. }) => start_iv,
            })
            .collect();
        ParameterVector { values }
    }

    pub fn from_named(model: &CompiledModel, named: &dyn Fn(&str) -> Option<f64>) -> Result<Self> {
        let mut theta = ParameterVector::start(model, 0.8);
        for (i, name) in model.space.names.iter().enumerate() {
            if let Some(v) = named(name) {
                if model.space.fixed[i].is_some() && (v - theta.values[i]).abs() > 1e-12 {
                    return Err(NlvError::Validation(format!(
                        "parameter `{name}` is fixed at {} and cannot be set to {v}",
                        theta.values[i]
                    )));
                }
                theta.values[i] = v;
            }
        }
        for (i, v) in theta.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(NlvError::Validation(format!(
                    "parameter `{}` is not finite",
                    model.space.names[i]
                )));
            }
        }
        Ok(theta)
    }

    pub fn iv(&self, model: &CompiledModel, nest: usize) -> f64 {
        self.values[model.nests[nest].iv_parameter]
    }
}

/// Per-observation workspace: utilities, inclusive values, probabilities.
#[derive(Debug, Clone)]
pub struct UtilityWorkspace {
    /// Systematic utilities, `-inf` for unavailable alternatives.
    pub v: Vec<f64>,
    /// Inclusive value per nest, `-inf` when no member is available.
    pub iv: Vec<f64>,
    /// Marginal nest probabilities, 0 for empty nests.
    pub nest_prob: Vec<f64>,
    /// Joint probabilities, exact 0 for unavailable alternatives.
    pub prob: Vec<f64>,
}

/// Systematic utility of every alternative for one observation.
///
/// `score` is the respondent's latent score; it is only read when the model
/// binds a latent term.
pub fn systematic_utility(
    model: &CompiledModel,
    obs: &ObsView<'_>,
    score: f64,
    theta: &ParameterVector,
) -> Vec<f64> {
    let i = model.n_alternatives();
    let mut v = vec![f64::NEG_INFINITY; i];
    for (alt, value) in v.iter_mut().enumerate() {
        if obs.available(alt) {
            *value = eval_terms(
                &model.terms[alt],
                theta,
                |col| obs.covariate(alt, col),
                score,
            );
        }
    }
    v
}

fn eval_terms(
    terms: &[CompiledTerm],
    theta: &ParameterVector,
    covariate: impl Fn(usize) -> f64,
    score: f64,
) -> f64 {
    let mut v = 0.0;
    for t in terms {
        let x = match t.source {
            TermSource::Constant => 1.0,
            TermSource::Covariate(col) => covariate(col),
            TermSource::Latent => score,
        };
        v += theta.values[t.parameter] * x;
    }
    v
}

/// Log-sum-exp of `v` over `members`, skipping `-inf` sentinels.
/// Returns `-inf` when every member is unavailable.
pub fn inclusive_value(v: &[f64], members: &[usize]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &m in members {
        if v[m] > max {
            max = v[m];
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = members
        .iter()
        .filter(|&&m| v[m] > f64::NEG_INFINITY)
        .map(|&m| (v[m] - max).exp())
        .sum();
    max + sum.ln()
}

/// Joint, conditional, and marginal probabilities for one utility vector.
///
/// NaN anywhere in `v` is a hard error; it is never folded into probabilities.
pub fn choice_probabilities(
    v: &[f64],
    theta: &ParameterVector,
    model: &CompiledModel,
) -> Result<UtilityWorkspace> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(NlvError::Numerical(
            "NaN utility passed to probability engine".into(),
        ));
    }
    let n_nests = model.n_nests();
    let mut iv = vec![f64::NEG_INFINITY; n_nests];
    for (j, nest) in model.nests.iter().enumerate() {
        iv[j] = inclusive_value(v, &nest.members);
    }

    // Nest marginals: softmax of g_j * IV_j over non-empty nests.
    let mut scaled = vec![f64::NEG_INFINITY; n_nests];
    let mut max_scaled = f64::NEG_INFINITY;
    for j in 0..n_nests {
        if iv[j] > f64::NEG_INFINITY {
            scaled[j] = theta.iv(model, j) * iv[j];
            if scaled[j] > max_scaled {
                max_scaled = scaled[j];
            }
        }
    }
    if max_scaled == f64::NEG_INFINITY {
        return Err(NlvError::Numerical(
            "no nest has an available alternative".into(),
        ));
    }
    let mut nest_prob = vec![0.0; n_nests];
    let mut denom = 0.0;
    for j in 0..n_nests {
        if scaled[j] > f64::NEG_INFINITY {
            nest_prob[j] = (scaled[j] - max_scaled).exp();
            denom += nest_prob[j];
        }
    }
    for p in nest_prob.iter_mut() {
        *p /= denom;
    }

    // Joint probabilities: P_ij = P(i|j) * P_j with P(i|j) = exp(V_i - IV_j).
    let mut prob = vec![0.0; model.n_alternatives()];
    for (j, nest) in model.nests.iter().enumerate() {
        if iv[j] == f64::NEG_INFINITY {
            continue;
        }
        for &i in &nest.members {
            if v[i] > f64::NEG_INFINITY {
                prob[i] = (v[i] - iv[j]).exp() * nest_prob[j];
            }
        }
    }

    Ok(UtilityWorkspace {
        v: v.to_vec(),
        iv,
        nest_prob,
        prob,
    })
}

/// Dataset compiled to flat per-(observation, alternative) term lists.
///
/// Latent scores are baked into the term values, so likelihood evaluation is
/// a pure function of the parameter vector.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub n_obs: usize,
    pub n_alts: usize,
    pub n_params: usize,
    offsets: Vec<u32>,
    entries: Vec<(u32, f64)>,
    available: Vec<bool>,
    chosen: Vec<u32>,
}

impl DesignMatrix {
    /// Bakes a dataset and (optionally) per-respondent scores into flat design
    /// rows. `scores` must be aligned to `data.respondents()` and must be
    /// present exactly when the model binds a latent term.
    pub fn build(
        model: &CompiledModel,
        data: &ChoiceDataset,
        scores: Option<&[f64]>,
    ) -> Result<Self> {
        match (model.binds_latent, scores) {
            (true, None) => {
                return Err(NlvError::Scoring(
                    "the model binds a latent term but no scores were supplied".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(NlvError::Scoring(
                    "scores were supplied but the model binds no latent term".into(),
                ))
            }
            _ => {}
        }
        if let Some(s) = scores {
            if s.len() != data.n_respondents() {
                return Err(NlvError::Scoring(format!(
                    "{} scores for {} respondents",
                    s.len(),
                    data.n_respondents()
                )));
            }
        }
        let q = data.n_observations();
        let i = data.n_alternatives();
        let mut offsets = Vec::with_capacity(q * i + 1);
        let mut entries = Vec::new();
        let mut available = Vec::with_capacity(q * i);
        let mut chosen = Vec::with_capacity(q);
        offsets.push(0u32);
        for qi in 0..q {
            let obs = data.observation(qi);
            let score = scores.map(|s| s[obs.respondent_index()]).unwrap_or(0.0);
            chosen.push(obs.chosen() as u32);
            for alt in 0..i {
                available.push(obs.available(alt));
                if obs.available(alt) {
                    for t in &model.terms[alt] {
                        let x = match t.source {
                            TermSource::Constant => 1.0,
                            TermSource::Covariate(col) => obs.covariate(alt, col),
                            TermSource::Latent => score,
                        };
                        if x != 0.0 {
                            entries.push((t.parameter as u32, x));
                        }
                    }
                }
                offsets.push(entries.len() as u32);
            }
        }
        Ok(DesignMatrix {
            n_obs: q,
            n_alts: i,
            n_params: model.space.len(),
            offsets,
            entries,
            available,
            chosen,
        })
    }

    #[inline]
    fn row(&self, q: usize, alt: usize) -> &[(u32, f64)] {
        let idx = q * self.n_alts + alt;
        &self.entries[self.offsets[idx] as usize..self.offsets[idx + 1] as usize]
    }

    #[inline]
    pub fn is_available(&self, q: usize, alt: usize) -> bool {
        self.available[q * self.n_alts + alt]
    }

    pub fn chosen(&self, q: usize) -> usize {
        self.chosen[q] as usize
    }

    /// Utilities for observation `q` at `theta` (`-inf` sentinel when unavailable).
    pub fn utilities(&self, q: usize, theta: &ParameterVector, out: &mut [f64]) {
        for (alt, value) in out.iter_mut().enumerate().take(self.n_alts) {
            *value = if self.is_available(q, alt) {
                self.row(q, alt)
                    .iter()
                    .map(|&(p, x)| theta.values[p as usize] * x)
                    .sum()
            } else {
                f64::NEG_INFINITY
            };
        }
    }
}

/// Fixed-order pairwise summation; bit-stable regardless of worker count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

const CHUNK: usize = 512;

/// Per-observation log-probability terms, in observation order.
fn ll_terms(design: &DesignMatrix, model: &CompiledModel, theta: &ParameterVector) -> Vec<f64> {
    let mut terms = vec![0.0f64; design.n_obs];
    terms
        .par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(chunk_idx, out)| {
            let base = chunk_idx * CHUNK;
            let mut v = vec![0.0f64; design.n_alts];
            for (k, slot) in out.iter_mut().enumerate() {
                let q = base + k;
                design.utilities(q, theta, &mut v);
                *slot = obs_log_prob(&v, model, theta, design.chosen(q));
            }
        });
    terms
}

/// ln P of the chosen alternative, evaluated in log space.
fn obs_log_prob(v: &[f64], model: &CompiledModel, theta: &ParameterVector, chosen: usize) -> f64 {
    let m = model.nest_of[chosen];
    let iv_m = inclusive_value(v, &model.nests[m].members);
    assert!(model.n_nests() <= 64, "at most 64 nests are supported");
    let mut max_scaled = f64::NEG_INFINITY;
    let mut scaled = [0.0f64; 64];
    for (slot, (j, nest)) in scaled.iter_mut().zip(model.nests.iter().enumerate()) {
        let iv_j = inclusive_value(v, &nest.members);
        *slot = if iv_j == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            theta.iv(model, j) * iv_j
        };
        if *slot > max_scaled {
            max_scaled = *slot;
        }
    }
    let mut denom = 0.0;
    for s in scaled.iter().take(model.n_nests()) {
        if *s > f64::NEG_INFINITY {
            denom += (s - max_scaled).exp();
        }
    }
    let log_denom = max_scaled + denom.ln();
    (v[chosen] - iv_m) + theta.iv(model, m) * iv_m - log_denom
}

/// Total log-likelihood. Returns `-inf` if any chosen probability underflows
/// to zero; `log_likelihood_checked` reports which observation did.
pub fn log_likelihood(
    design: &DesignMatrix,
    model: &CompiledModel,
    theta: &ParameterVector,
) -> f64 {
    log_likelihood_checked(design, model, theta).0
}

/// Log-likelihood plus the index of the first observation whose chosen
/// probability underflowed, if any.
pub fn log_likelihood_checked(
    design: &DesignMatrix,
    model: &CompiledModel,
    theta: &ParameterVector,
) -> (f64, Option<usize>) {
    let terms = ll_terms(design, model, theta);
    if let Some(bad) = terms.iter().position(|t| *t == f64::NEG_INFINITY) {
        return (f64::NEG_INFINITY, Some(bad));
    }
    (pairwise_sum(&terms), None)
}

/// Analytic gradient of the log-likelihood over the full parameter vector.
///
/// Entries of fixed parameters are reported as 0. Matches central finite
/// differences on the free coordinates.
pub fn ll_gradient(
    design: &DesignMatrix,
    model: &CompiledModel,
    theta: &ParameterVector,
) -> Result<Vec<f64>> {
    let n_params = design.n_params;
    let n_chunks = design.n_obs.div_ceil(CHUNK);
    let partials: Vec<Result<Vec<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk_idx| {
            let lo = chunk_idx * CHUNK;
            let hi = ((chunk_idx + 1) * CHUNK).min(design.n_obs);
            let mut grad = vec![0.0f64; n_params];
            let mut v = vec![0.0f64; design.n_alts];
            let n_nests = model.n_nests();
            let mut div = vec![0.0f64; n_nests * n_params];
            let mut iv = vec![0.0f64; n_nests];
            let mut nest_prob = vec![0.0f64; n_nests];
            for q in lo..hi {
                design.utilities(q, theta, &mut v);
                let chosen = design.chosen(q);
                if v[chosen] == f64::NEG_INFINITY || v[chosen].is_nan() {
                    return Err(NlvError::Numerical(format!(
                        "gradient undefined: chosen probability underflowed at observation {q}"
                    )));
                }

                // Inclusive values and nest marginals.
                let mut max_scaled = f64::NEG_INFINITY;
                for (j, nest) in model.nests.iter().enumerate() {
                    iv[j] = inclusive_value(&v, &nest.members);
                    let s = if iv[j] == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        theta.iv(model, j) * iv[j]
                    };
                    nest_prob[j] = s;
                    if s > max_scaled {
                        max_scaled = s;
                    }
                }
                let mut denom = 0.0;
                for p in nest_prob.iter_mut() {
                    if *p > f64::NEG_INFINITY {
                        *p = (*p - max_scaled).exp();
                        denom += *p;
                    } else {
                        *p = 0.0;
                    }
                }
                for p in nest_prob.iter_mut() {
                    *p /= denom;
                }

                // d IV_j / d theta_p = sum_{i in j} P(i|j) x_{ip}, sparse over rows.
                div.fill(0.0);
                for (j, nest) in model.nests.iter().enumerate() {
                    if iv[j] == f64::NEG_INFINITY {
                        continue;
                    }
                    for &i in &nest.members {
                        if v[i] == f64::NEG_INFINITY {
                            continue;
                        }
                        let w = (v[i] - iv[j]).exp();
                        for &(p, x) in design.row(q, i) {
                            div[j * n_params + p as usize] += w * x;
                        }
                    }
                }

                let m = model.nest_of[chosen];
                let g_m = theta.iv(model, m);
                // Utility-parameter contributions:
                //   x_c(p) + (g_m - 1) dIV_m/dp - sum_k P_k g_k dIV_k/dp
                for &(p, x) in design.row(q, chosen) {
                    grad[p as usize] += x;
                }
                for p in 0..n_params {
                    let d_m = div[m * n_params + p];
                    if d_m != 0.0 {
                        grad[p] += (g_m - 1.0) * d_m;
                    }
                }
                for j in 0..n_nests {
                    if nest_prob[j] == 0.0 {
                        continue;
                    }
                    let w = nest_prob[j] * theta.iv(model, j);
                    for p in 0..n_params {
                        let d = div[j * n_params + p];
                        if d != 0.0 {
                            grad[p] -= w * d;
                        }
                    }
                }
                // IV-parameter contributions: ([j == m] - P_j) IV_j.
                for (j, nest) in model.nests.iter().enumerate() {
                    if iv[j] == f64::NEG_INFINITY {
                        continue;
                    }
                    let indicator = if j == m { 1.0 } else { 0.0 };
                    grad[nest.iv_parameter] += (indicator - nest_prob[j]) * iv[j];
                }
            }
            Ok(grad)
        })
        .collect();

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n_chunks);
    for p in partials {
        columns.push(p?);
    }
    let mut grad = vec![0.0f64; n_params];
    let mut scratch = vec![0.0f64; n_chunks];
    for (p, g) in grad.iter_mut().enumerate() {
        for (c, col) in columns.iter().enumerate() {
            scratch[c] = col[p];
        }
        *g = pairwise_sum(&scratch);
    }
    // Fixed parameters do not move; their gradient is reported as 0.
    for (p, fixed) in model.space.fixed.iter().enumerate() {
        if fixed.is_some() {
            grad[p] = 0.0;
        }
    }
    Ok(grad)
}

/// Mean predicted probability per alternative over all observations.
pub fn mean_probabilities(
    design: &DesignMatrix,
    model: &CompiledModel,
    theta: &ParameterVector,
) -> Result<Vec<f64>> {
    let n_chunks = design.n_obs.div_ceil(CHUNK);
    let partials: Vec<Result<Vec<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk_idx| {
            let lo = chunk_idx * CHUNK;
            let hi = ((chunk_idx + 1) * CHUNK).min(design.n_obs);
            let mut acc = vec![0.0f64; design.n_alts];
            let mut v = vec![0.0f64; design.n_alts];
            for q in lo..hi {
                design.utilities(q, theta, &mut v);
                let ws = choice_probabilities(&v, theta, model)?;
                for (a, p) in ws.prob.iter().enumerate() {
                    acc[a] += p;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut columns = Vec::with_capacity(n_chunks);
    for p in partials {
        columns.push(p?);
    }
    let mut mean = vec![0.0f64; design.n_alts];
    let mut scratch = vec![0.0f64; n_chunks];
    for (a, m) in mean.iter_mut().enumerate() {
        for (c, col) in columns.iter().enumerate() {
            scratch[c] = col[a];
        }
        *m = pairwise_sum(&scratch) / design.n_obs as f64;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_choice_csv, CsvSchema};
    use crate::model::parse_model_spec_str;
    use approx::assert_abs_diff_eq;

    fn two_nest_model() -> (crate::data::ChoiceDataset, CompiledModel) {
        let spec_text = r#"
[model]
name = "toy"
base_alternative = "a1"

[nests]
na = ["a1", "a2"]
nb = ["b1"]

[utility.a2]
x = "b_x"

[utility.b1]
constant = "asc_b1"
x = "b_x_b"

[fixed]
iv_nb = 1.0
"#;
        let csv = "\
resp_id,obs_id,alt,avail,chosen,x
r1,1,a1,1,0,1.0
r1,1,a2,1,1,1.0
r1,1,b1,1,0,0.5
";
        let data = read_choice_csv(csv.as_bytes(), &CsvSchema::default(), "toy.csv").unwrap();
        let spec = parse_model_spec_str(spec_text, "toy.spec").unwrap();
        let model = CompiledModel::new(&spec, &data).unwrap();
        (data, model)
    }

    #[test]
    fn inclusive_value_matches_hand_values() {
        // Uniform case: m members at V = 0 gives ln(m).
        let v = vec![0.0, 0.0, 0.0];
        assert_abs_diff_eq!(
            inclusive_value(&v, &[0, 1, 2]),
            3.0f64.ln(),
            epsilon = 1e-15
        );
        // Degenerate nest: IV equals the single member's utility.
        let v = vec![1.7];
        assert_abs_diff_eq!(inclusive_value(&v, &[0]), 1.7, epsilon = 1e-15);
        // ln(e^1 + e^2).
        let v = vec![1.0, 2.0];
        assert_abs_diff_eq!(inclusive_value(&v, &[0, 1]), 2.31326168752, epsilon = 1e-9);
        // All members unavailable.
        let v = vec![f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert_eq!(inclusive_value(&v, &[0, 1]), f64::NEG_INFINITY);
    }

    #[test]
    fn utilities_zero_when_all_coefficients_zero() {
        let (data, model) = two_nest_model();
        let theta = ParameterVector::start(&model, 1.0);
        // start() zeroes free utility coefficients.
        let v = systematic_utility(&model, &data.observation(0), 0.0, &theta);
        for (alt, val) in v.iter().enumerate() {
            assert_abs_diff_eq!(*val, 0.0, epsilon = 1e-15);
            assert!(data.observation(0).available(alt));
        }
    }

    #[test]
    fn utility_evaluates_bound_terms() {
        let (data, model) = two_nest_model();
        let mut theta = ParameterVector::start(&model, 1.0);
        theta.values[model.space.index_of("asc_b1").unwrap()] = 1.325;
        let v = systematic_utility(&model, &data.observation(0), 0.0, &theta);
        // b1 carries constant 1.325 plus x-term 0 * 0.5.
        assert_abs_diff_eq!(v[2], 1.325, epsilon = 1e-15);
    }

    #[test]
    fn probabilities_sum_to_one_and_match_mnl_when_ivs_are_one() {
        let (_, model) = two_nest_model();
        let mut theta = ParameterVector::start(&model, 1.0);
        theta.values[model.space.index_of("b_x").unwrap()] = 0.7;
        theta.values[model.space.index_of("asc_b1").unwrap()] = -0.3;
        let v = vec![0.2, 0.9, -0.3];
        let ws = choice_probabilities(&v, &theta, &model).unwrap();
        let total: f64 = ws.prob.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        // With all IVs at 1 the joint probabilities are plain MNL.
        let denom: f64 = v.iter().map(|x| x.exp()).sum();
        for (i, p) in ws.prob.iter().enumerate() {
            assert_abs_diff_eq!(*p, v[i].exp() / denom, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_by_two_symmetry_gives_quarter_shares() {
        let spec_text = r#"
[model]
name = "sym"
base_alternative = "a1"

[nests]
na = ["a1", "a2"]
nb = ["b1", "b2"]
"#;
        let csv = "\
resp_id,obs_id,alt,avail,chosen
r1,1,a1,1,0
r1,1,a2,1,0
r1,1,b1,1,1
r1,1,b2,1,0
";
        let data = read_choice_csv(csv.as_bytes(), &CsvSchema::default(), "s.csv").unwrap();
        let spec = parse_model_spec_str(spec_text, "s.spec").unwrap();
        let model = CompiledModel::new(&spec, &data).unwrap();
        let theta = ParameterVector::start(&model, 0.5);
        let ws = choice_probabilities(&[0.0, 0.0, 0.0, 0.0], &theta, &model).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(ws.nest_prob[j], 0.5, epsilon = 1e-12);
        }
        for p in &ws.prob {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn unavailable_alternatives_have_exactly_zero_probability() {
        let (_, model) = two_nest_model();
        let theta = ParameterVector::start(&model, 0.9);
        let v = vec![0.4, f64::NEG_INFINITY, -0.2];
        let ws = choice_probabilities(&v, &theta, &model).unwrap();
        assert_eq!(ws.prob[1], 0.0);
        assert_abs_diff_eq!(ws.prob.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_nest_gets_zero_mass() {
        let (_, model) = two_nest_model();
        let theta = ParameterVector::start(&model, 0.9);
        let v = vec![0.4, 1.0, f64::NEG_INFINITY];
        let ws = choice_probabilities(&v, &theta, &model).unwrap();
        assert_eq!(ws.nest_prob[1], 0.0);
        assert_eq!(ws.prob[2], 0.0);
        assert_abs_diff_eq!(ws.prob.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nan_utility_is_a_hard_error() {
        let (_, model) = two_nest_model();
        let theta = ParameterVector::start(&model, 0.9);
        let v = vec![0.4, f64::NAN, -0.2];
        assert!(choice_probabilities(&v, &theta, &model).is_err());
    }

    #[test]
    fn extreme_utilities_stay_finite() {
        let (_, model) = two_nest_model();
        let theta = ParameterVector::start(&model, 0.9);
        for v in [
            vec![700.0, 700.0, -700.0],
            vec![-700.0, -700.0, 700.0],
            vec![700.0, -700.0, 700.0],
        ] {
            let ws = choice_probabilities(&v, &theta, &model).unwrap();
            for p in &ws.prob {
                assert!(p.is_finite() && (0.0..=1.0).contains(p), "p = {p}");
            }
            assert_abs_diff_eq!(ws.prob.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_likelihood_single_even_choice_is_ln_half() {
        let spec_text = r#"
[model]
name = "pair"
base_alternative = "a"

[nests]
all = ["a", "b"]

[fixed]
iv_all = 1.0
"#;
        let csv = "resp_id,obs_id,alt,avail,chosen\nr1,1,a,1,1\nr1,1,b,1,0\n";
        let data = read_choice_csv(csv.as_bytes(), &CsvSchema::default(), "p.csv").unwrap();
        let spec = parse_model_spec_str(spec_text, "p.spec").unwrap();
        let model = CompiledModel::new(&spec, &data).unwrap();
        let design = DesignMatrix::build(&model, &data, None).unwrap();
        let theta = ParameterVector::start(&model, 1.0);
        assert_abs_diff_eq!(
            log_likelihood(&design, &model, &theta),
            0.5f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn gradient_of_latent_weight_vanishes_when_scores_are_zero() {
        let spec_text = r#"
[model]
name = "lat"
base_alternative = "a"

[nests]
all = ["a", "b"]

[utility.b]
constant = "asc_b"
latent = "b_latent"

[fixed]
iv_all = 1.0

[latent]
name = "construct"
indicators = ["i1", "i2", "i3"]
"#;
        let csv =
            "resp_id,obs_id,alt,avail,chosen\nr1,1,a,1,1\nr1,1,b,1,0\nr2,2,a,1,0\nr2,2,b,1,1\n";
        let data = read_choice_csv(csv.as_bytes(), &CsvSchema::default(), "l.csv").unwrap();
        let spec = parse_model_spec_str(spec_text, "l.spec").unwrap();
        let model = CompiledModel::new(&spec, &data).unwrap();
        let design = DesignMatrix::build(&model, &data, Some(&[0.0, 0.0])).unwrap();
        let mut theta = ParameterVector::start(&model, 1.0);
        theta.values[model.space.index_of("asc_b").unwrap()] = 0.4;
        theta.values[model.space.index_of("b_latent").unwrap()] = -1.1;
        let grad = ll_gradient(&design, &model, &theta).unwrap();
        assert_eq!(grad[model.space.index_of("b_latent").unwrap()], 0.0);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_benign_input() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64) * 0.001 - 0.3).collect();
        let naive: f64 = xs.iter().sum();
        assert_abs_diff_eq!(pairwise_sum(&xs), naive, epsilon = 1e-9);
    }

    #[test]
    fn translation_invariance_when_ivs_equal() {
        let (_, model) = two_nest_model();
        let mut theta = ParameterVector::start(&model, 0.8);
        // Both nests at the same IV parameter value.
        for nest in &model.nests {
            theta.values[nest.iv_parameter] = 0.8;
        }
        let v = vec![0.3, -0.6, 1.1];
        let shifted: Vec<f64> = v.iter().map(|x| x + 5.0).collect();
        let p0 = choice_probabilities(&v, &theta, &model).unwrap().prob;
        let p1 = choice_probabilities(&shifted, &theta, &model).unwrap().prob;
        for (a, b) in p0.iter().zip(&p1) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}
