//! Single-factor confirmatory factor analysis: ML fit on the indicator
//! covariance matrix, fit indices, and regression-method factor scores.
//!
//! Identification fixes the factor variance at 1; reported loadings are
//! standardized (`g / sqrt(g^2 + psi)`), which bounds them in [-1, 1] by
//! construction. Scores are `w' z` with `w = Sigma^-1 g`, the conditional
//! expectation of the factor under the normal model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::IndicatorPanel;
use crate::error::{NlvError, Result};
use crate::optim::{self, BfgsOptions, Transform};

/// Error variances are floored here instead of collapsing to zero in Heywood
/// cases; the floor is small enough that an exactly collinear panel still
/// reproduces its covariance matrix to well below reporting precision.
pub const ERROR_VARIANCE_FLOOR: f64 = 1e-12;

/// Conventional cutoffs used when judging fit quality.
pub const GFI_THRESHOLD: f64 = 0.9;
pub const AGFI_THRESHOLD: f64 = 0.9;
pub const SRMR_THRESHOLD: f64 = 0.05;
pub const RMSEA_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CfaSpec {
    /// Indicator columns to fit, in reporting order.
    pub indicator_names: Vec<String>,
    /// Z-score indicators before fitting (the default).
    pub standardize: bool,
}

impl CfaSpec {
    pub fn new(indicator_names: Vec<String>) -> Result<Self> {
        if indicator_names.len() < 3 {
            return Err(NlvError::Validation(format!(
                "a single-factor model needs at least 3 indicators, got {}",
                indicator_names.len()
            )));
        }
        Ok(CfaSpec {
            indicator_names,
            standardize: true,
        })
    }

    /// Uses every column of the panel as an indicator.
    pub fn for_panel(panel: &IndicatorPanel) -> Result<Self> {
        CfaSpec::new(panel.indicator_names().to_vec())
    }
}

/// Chi-square and descriptive fit indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitIndices {
    pub chi_square: f64,
    pub df: usize,
    pub gfi: f64,
    pub agfi: f64,
    pub srmr: f64,
    pub rmsea: f64,
}

/// Pass/fail of each index against the conventional cutoffs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitAssessment {
    pub gfi_ok: bool,
    pub agfi_ok: bool,
    pub srmr_ok: bool,
    pub rmsea_ok: bool,
}

impl FitIndices {
    pub fn assess(&self) -> FitAssessment {
        FitAssessment {
            gfi_ok: self.gfi > GFI_THRESHOLD,
            agfi_ok: self.agfi > AGFI_THRESHOLD,
            srmr_ok: self.srmr < SRMR_THRESHOLD,
            rmsea_ok: self.rmsea < RMSEA_THRESHOLD,
        }
    }
}

/// Fitted single-factor model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CfaResult {
    pub indicator_names: Vec<String>,
    /// Standardized loadings, in [-1, 1].
    pub loadings: Vec<f64>,
    /// Delta-method standard errors of the standardized loadings, when the
    /// information matrix is invertible.
    pub loading_std_errors: Vec<Option<f64>>,
    pub loading_t_stats: Vec<Option<f64>>,
    /// Error variances in the fitted metric, each > 0.
    pub error_variances: Vec<f64>,
    pub fit: FitIndices,
    pub sample_size: usize,
    /// Factor scores of the fitting panel, aligned to its respondents.
    pub scores: Vec<f64>,
    pub warnings: Vec<String>,
    // Everything the scorer needs to be self-contained.
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub raw_loadings: Vec<f64>,
    pub implied_covariance: Vec<f64>,
    pub score_weights: Vec<f64>,
}

/// Factor scores keyed by respondent order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scores {
    pub respondents: Vec<String>,
    pub values: Vec<f64>,
}

impl Scores {
    pub fn get(&self, respondent: &str) -> Option<f64> {
        self.respondents
            .iter()
            .position(|r| r == respondent)
            .map(|i| self.values[i])
    }
}

/// Maximum-likelihood fit of the single-factor model.
pub fn fit_cfa(panel: &IndicatorPanel, spec: &CfaSpec) -> Result<CfaResult> {
    if spec.indicator_names.len() < 3 {
        return Err(NlvError::Validation(
            "a single-factor model needs at least 3 indicators".into(),
        ));
    }
    let g = spec.indicator_names.len();
    let n = panel.n_respondents();
    if n < g + 1 {
        return Err(NlvError::Validation(format!(
            "{n} respondents are too few to fit {g} indicators"
        )));
    }
    let columns: Vec<Vec<f64>> = spec
        .indicator_names
        .iter()
        .map(|name| {
            let idx = panel
                .indicator_names()
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| {
                    NlvError::Validation(format!("indicator `{name}` is not in the panel"))
                })?;
            Ok(panel.column(idx))
        })
        .collect::<Result<_>>()?;

    let mut means = vec![0.0; g];
    let mut scales = vec![1.0; g];
    for (k, col) in columns.iter().enumerate() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if var < 1e-12 {
            return Err(NlvError::Validation(format!(
                "indicator `{}` has zero variance",
                spec.indicator_names[k]
            )));
        }
        means[k] = mean;
        scales[k] = if spec.standardize { var.sqrt() } else { 1.0 };
    }

    // Sample covariance of the (optionally standardized) indicators.
    let mut s = DMatrix::<f64>::zeros(g, g);
    for a in 0..g {
        for b in a..g {
            let acc: f64 = columns[a]
                .iter()
                .zip(&columns[b])
                .map(|(x, y)| (x - means[a]) / scales[a] * ((y - means[b]) / scales[b]))
                .sum();
            let cov = acc / (n as f64 - 1.0);
            s[(a, b)] = cov;
            s[(b, a)] = cov;
        }
    }

    let mut warnings = Vec::new();
    let eig = s.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lambda2 = if g > 1 {
        eig.eigenvalues[order[1]]
    } else {
        0.0
    };

    let (mut raw_loadings, psi): (Vec<f64>, Vec<f64>);
    let mut se_available = true;
    let collinear = lambda2 < 1e-10 * lambda_max;
    if collinear {
        // The panel is exactly collinear: the covariance matrix is rank one
        // and the ML solution degenerates to its leading eigenpair with all
        // error variances at the floor.
        let v1 = eig.eigenvectors.column(order[0]);
        raw_loadings = (0..g).map(|k| v1[k] * lambda_max.sqrt()).collect();
        psi = vec![ERROR_VARIANCE_FLOOR; g];
        warnings.push(
            "indicators are exactly collinear; error variances floored and standard errors unavailable"
                .to_string(),
        );
        se_available = false;
    } else {
        let fitted = fit_ml(&s)?;
        raw_loadings = fitted.0;
        psi = fitted.1;
    }

    // Sign convention: the largest-magnitude loading is positive.
    let max_idx = (0..g)
        .max_by(|&a, &b| {
            raw_loadings[a]
                .abs()
                .partial_cmp(&raw_loadings[b].abs())
                .unwrap()
        })
        .unwrap();
    if raw_loadings[max_idx] < 0.0 {
        for l in raw_loadings.iter_mut() {
            *l = -*l;
        }
    }
    for (k, p) in psi.iter().enumerate() {
        if *p < ERROR_VARIANCE_FLOOR * 1.5 && se_available {
            warnings.push(format!(
                "error variance of `{}` hit the lower bound (Heywood case)",
                spec.indicator_names[k]
            ));
        }
    }

    let sigma_hat = implied_covariance(&raw_loadings, &psi);
    let fit = if collinear {
        rank_one_fit(&s, &sigma_hat, lambda_max, ERROR_VARIANCE_FLOOR, n)
    } else {
        compute_fit(&s, &sigma_hat, n)?
    };

    // Standardized loadings: corr(indicator, factor) = g / sqrt(g^2 + psi).
    let loadings: Vec<f64> = raw_loadings
        .iter()
        .zip(&psi)
        .map(|(l, p)| l / (l * l + p).sqrt())
        .collect();

    let (loading_std_errors, loading_t_stats) = if se_available {
        loading_errors(&s, &raw_loadings, &psi, &loadings, n)
    } else {
        (vec![None; g], vec![None; g])
    };

    // Regression-method score weights: w = Sigma_hat^-1 g.
    let chol = nalgebra::linalg::Cholesky::new(sigma_hat.clone())
        .ok_or_else(|| NlvError::Numerical("implied covariance is not positive definite".into()))?;
    let weights = chol.solve(&DVector::from_column_slice(&raw_loadings));

    let scores: Vec<f64> = (0..n)
        .map(|r| {
            (0..g)
                .map(|k| weights[k] * (columns[k][r] - means[k]) / scales[k])
                .sum()
        })
        .collect();

    Ok(CfaResult {
        indicator_names: spec.indicator_names.clone(),
        loadings,
        loading_std_errors,
        loading_t_stats,
        error_variances: psi,
        fit,
        sample_size: n,
        scores,
        warnings,
        means,
        scales,
        raw_loadings,
        implied_covariance: sigma_hat.as_slice().to_vec(),
        score_weights: weights.as_slice().to_vec(),
    })
}

fn implied_covariance(loadings: &[f64], psi: &[f64]) -> DMatrix<f64> {
    let g = loadings.len();
    let mut sigma = DMatrix::<f64>::zeros(g, g);
    for a in 0..g {
        for b in 0..g {
            sigma[(a, b)] = loadings[a] * loadings[b];
        }
        sigma[(a, a)] += psi[a];
    }
    sigma
}

/// ML discrepancy and its analytic gradient over (loadings, error variances).
fn f_ml_value_grad(s: &DMatrix<f64>, loadings: &[f64], psi: &[f64]) -> (f64, Vec<f64>) {
    let g = loadings.len();
    let sigma = implied_covariance(loadings, psi);
    let Some(chol) = nalgebra::linalg::Cholesky::new(sigma) else {
        return (f64::INFINITY, vec![0.0; 2 * g]);
    };
    let inv = chol.inverse();
    let logdet: f64 = (0..g).map(|k| chol.l_dirty()[(k, k)].ln()).sum::<f64>() * 2.0;
    let s_inv = s * &inv;
    let trace = s_inv.trace();
    // ln|S| is a constant; dropping it shifts the objective, not the optimum,
    // and keeps the fit well-defined while iterating.
    let f = logdet + trace - g as f64;

    // dF/dSigma = Sigma^-1 - Sigma^-1 S Sigma^-1.
    let d = &inv - &inv * s * &inv;
    let mut grad = vec![0.0; 2 * g];
    for a in 0..g {
        let mut dl = 0.0;
        for b in 0..g {
            dl += d[(a, b)] * loadings[b];
        }
        grad[a] = 2.0 * dl;
        grad[g + a] = d[(a, a)];
    }
    (f, grad)
}

fn fit_ml(s: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = s.nrows();
    let eig = s.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lambda1 = eig.eigenvalues[order[0]];
    let v1 = eig.eigenvectors.column(order[0]);

    let psi_hi = 2.0 * (0..g).map(|k| s[(k, k)]).fold(f64::MIN, f64::max) + 1.0;
    let mut transforms = vec![Transform::Identity; g];
    transforms.extend(vec![
        Transform::Logistic {
            lo: ERROR_VARIANCE_FLOOR,
            hi: psi_hi
        };
        g
    ]);

    let scale = (lambda1 - 0.5).max(0.2).sqrt();
    let mut start: Vec<f64> = (0..g).map(|k| v1[k] * scale).collect();
    let mut psi0: Vec<f64> = (0..g)
        .map(|k| (s[(k, k)] - start[k] * start[k]).max(0.1))
        .collect();
    start.append(&mut psi0);

    let options = BfgsOptions {
        max_iterations: 500,
        gradient_tol: 1e-9,
        ..Default::default()
    };
    // A couple of deterministic fallback starts guard against a bad first one.
    let fallback_scales = [1.0, 0.5, 1.5, 0.25];
    let mut last = None;
    for fs in fallback_scales {
        let x0: Vec<f64> = start
            .iter()
            .enumerate()
            .map(|(i, v)| if i < g { v * fs } else { *v })
            .collect();
        let outcome = optim::minimize(
            |x| f_ml_value_grad(s, &x[..g], &x[g..]),
            &transforms,
            &x0,
            &options,
        );
        let good_enough =
            outcome.converged || (outcome.gradient_norm < 1e-6 && outcome.f.is_finite());
        if good_enough {
            return Ok((outcome.x[..g].to_vec(), outcome.x[g..].to_vec()));
        }
        last = Some(outcome);
    }
    let last = last.unwrap();
    Err(NlvError::Estimation(format!(
        "factor model did not converge: {:?} after {} iterations, |grad| = {:.3e}",
        last.stop, last.iterations, last.gradient_norm
    )))
}

/// Delta-method standard errors of the standardized loadings.
fn loading_errors(
    s: &DMatrix<f64>,
    raw: &[f64],
    psi: &[f64],
    standardized: &[f64],
    n: usize,
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let g = raw.len();
    let mut x = raw.to_vec();
    x.extend_from_slice(psi);
    let hessian = optim::central_hessian(|p| f_ml_value_grad(s, &p[..g], &p[g..]).1, &x, 1e-6);
    // Cov(theta) = (2 / (n - 1)) * HF^-1.
    let Some(inv) = hessian.try_inverse() else {
        return (vec![None; g], vec![None; g]);
    };
    let scale = 2.0 / (n as f64 - 1.0);
    let mut ses = Vec::with_capacity(g);
    let mut ts = Vec::with_capacity(g);
    for k in 0..g {
        let denom = (raw[k] * raw[k] + psi[k]).powf(1.5);
        let dl = psi[k] / denom;
        let dp = -raw[k] / (2.0 * denom);
        let var = scale
            * (dl * dl * inv[(k, k)]
                + 2.0 * dl * dp * inv[(k, g + k)]
                + dp * dp * inv[(g + k, g + k)]);
        if var.is_finite() && var > 0.0 {
            let se = var.sqrt();
            ses.push(Some(se));
            ts.push(Some(standardized[k] / se));
        } else {
            ses.push(None);
            ts.push(None);
        }
    }
    (ses, ts)
}

/// Fit indices for a fitted pair of covariance matrices.
///
/// `df = 0` (a saturated model) has no defined indices and is an error here;
/// `fit_cfa` applies the saturated-model conventions itself.
pub fn fit_indices(
    s: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
    n: usize,
    df: usize,
) -> Result<FitIndices> {
    if df == 0 {
        return Err(NlvError::SaturatedModel);
    }
    if s.nrows() != s.ncols()
        || sigma_hat.nrows() != sigma_hat.ncols()
        || s.nrows() != sigma_hat.nrows()
    {
        return Err(NlvError::Numerical(
            "covariance matrices must be square and of equal order".into(),
        ));
    }
    compute_fit_with_df(s, sigma_hat, n, df)
}

fn one_factor_df(g: usize) -> usize {
    (g * (g + 1) / 2).saturating_sub(2 * g)
}

fn compute_fit(s: &DMatrix<f64>, sigma_hat: &DMatrix<f64>, n: usize) -> Result<FitIndices> {
    compute_fit_with_df(s, sigma_hat, n, one_factor_df(s.nrows()))
}

/// Fit indices at the collinear limit, where `sigma_hat = l1 v1 v1' + psi I`
/// with `psi` at the floor. Inverting that matrix numerically loses half the
/// significant digits, but its spectrum against S is known in closed form:
/// `Sigma^-1 S` has eigenvalues `l1 / (psi + l1)` and `l_k / psi`, so the
/// indices can be evaluated exactly on the retained (non-null) spectrum.
fn rank_one_fit(
    s: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
    lambda1: f64,
    psi: f64,
    n: usize,
) -> FitIndices {
    let g = s.nrows();
    let df = one_factor_df(g);
    let lam = lambda1 / (psi + lambda1);
    let f_ml = (lam - lam.ln() - 1.0).max(0.0);
    let chi_square = (n as f64 - 1.0) * f_ml;
    let gfi = 1.0 - (lam - 1.0).powi(2) / (lam * lam);
    let agfi = if df > 0 {
        1.0 - (g * (g + 1)) as f64 / (2.0 * df as f64) * (1.0 - gfi)
    } else {
        gfi
    };
    let srmr = srmr_of(s, sigma_hat);
    let rmsea = if df > 0 {
        ((chi_square - df as f64).max(0.0) / (df as f64 * (n as f64 - 1.0))).sqrt()
    } else {
        0.0
    };
    FitIndices {
        chi_square,
        df,
        gfi,
        agfi,
        srmr,
        rmsea,
    }
}

fn srmr_of(s: &DMatrix<f64>, sigma_hat: &DMatrix<f64>) -> f64 {
    let g = s.nrows();
    let mut resid_sq = 0.0;
    for a in 0..g {
        for b in 0..=a {
            let denom = (s[(a, a)] * s[(b, b)]).sqrt();
            let r = (s[(a, b)] - sigma_hat[(a, b)]) / denom;
            resid_sq += r * r;
        }
    }
    (resid_sq / (g * (g + 1)) as f64 * 2.0).sqrt()
}

fn compute_fit_with_df(
    s: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
    n: usize,
    df: usize,
) -> Result<FitIndices> {
    let g = s.nrows();
    let chol = nalgebra::linalg::Cholesky::new(sigma_hat.clone())
        .ok_or_else(|| NlvError::Numerical("implied covariance is singular".into()))?;

    // Whitened sample covariance W = L^-1 S L^-T shares the spectrum of
    // Sigma^-1 S; eigenvalues below numerical rank are dropped so that an
    // exactly collinear sample still reports its perfect-fit limit.
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| NlvError::Numerical("implied covariance is singular".into()))?;
    let w = &l_inv * s * l_inv.transpose();
    let eig = w.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let kept: Vec<f64> = eig
        .eigenvalues
        .iter()
        .cloned()
        .filter(|&l| l > 1e-12 * lambda_max.max(1.0))
        .collect();
    if kept.is_empty() {
        return Err(NlvError::Numerical(
            "sample covariance has no usable rank".into(),
        ));
    }

    // F_ML = sum(lambda - ln lambda - 1) over the retained spectrum.
    let f_ml: f64 = kept.iter().map(|&l| l - l.ln() - 1.0).sum::<f64>().max(0.0);
    let chi_square = (n as f64 - 1.0) * f_ml;

    let num: f64 = kept.iter().map(|&l| (l - 1.0).powi(2)).sum();
    let den: f64 = kept.iter().map(|&l| l * l).sum();
    let gfi = 1.0 - num / den;
    let agfi = if df > 0 {
        1.0 - (g * (g + 1)) as f64 / (2.0 * df as f64) * (1.0 - gfi)
    } else {
        gfi
    };

    let srmr = srmr_of(s, sigma_hat);

    let rmsea = if df > 0 {
        ((chi_square - df as f64).max(0.0) / (df as f64 * (n as f64 - 1.0))).sqrt()
    } else {
        0.0
    };

    Ok(FitIndices {
        chi_square,
        df,
        gfi,
        agfi,
        srmr,
        rmsea,
    })
}

/// Applies a fitted scorer to a panel: `x = w' z` per respondent.
pub fn score_respondents(result: &CfaResult, panel: &IndicatorPanel) -> Result<Scores> {
    let g = result.indicator_names.len();
    let cols: Vec<usize> = result
        .indicator_names
        .iter()
        .map(|name| {
            panel
                .indicator_names()
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| NlvError::Scoring(format!("indicator `{name}` missing from panel")))
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(panel.n_respondents());
    for r in 0..panel.n_respondents() {
        let row = panel.row(r);
        let mut acc = 0.0;
        for k in 0..g {
            let z = (row[cols[k]] - result.means[k]) / result.scales[k];
            acc += result.score_weights[k] * z;
        }
        values.push(acc);
    }
    Ok(Scores {
        respondents: panel.respondents().to_vec(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IndicatorPanel;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn one_factor_panel(n: usize, loadings: &[f64], noise_sd: &[f64], seed: u64) -> IndicatorPanel {
        let g = loadings.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(n * g);
        let mut respondents = Vec::with_capacity(n);
        for r in 0..n {
            let factor: f64 = StandardNormal.sample(&mut rng);
            respondents.push(format!("r{r}"));
            for k in 0..g {
                let noise: f64 = StandardNormal.sample(&mut rng);
                values.push(loadings[k] * factor + noise_sd[k] * noise);
            }
        }
        let names = (0..g).map(|k| format!("ind{k}")).collect();
        IndicatorPanel::from_parts(names, respondents, values).unwrap()
    }

    #[test]
    fn recovers_equal_loadings_on_large_sample() {
        // True loadings 0.5 with unit-variance indicators: implied
        // correlations are exactly 0.25 and the model fits them exactly.
        let noise = (0.75f64).sqrt();
        let panel = one_factor_panel(10_000, &[0.5, 0.5, 0.5], &[noise, noise, noise], 7);
        let result = fit_cfa(&panel, &CfaSpec::for_panel(&panel).unwrap()).unwrap();
        for l in &result.loadings {
            assert_abs_diff_eq!(*l, 0.5, epsilon = 0.02);
        }
        // Just-identified: chi-square collapses and df = 0 conventions apply.
        assert_eq!(result.fit.df, 0);
        assert!(result.fit.chi_square < 1e-6, "{}", result.fit.chi_square);
        assert_eq!(result.fit.rmsea, 0.0);
    }

    #[test]
    fn collinear_indicators_hit_the_floor_with_unit_loadings() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 600;
        let mut values = Vec::new();
        let mut respondents = Vec::new();
        for r in 0..n {
            let factor: f64 = StandardNormal.sample(&mut rng);
            respondents.push(format!("r{r}"));
            for scale in [1.0, 2.0, 0.5, 1.5, 0.7] {
                values.push(scale * factor);
            }
        }
        let names = (0..5).map(|k| format!("ind{k}")).collect();
        let panel = IndicatorPanel::from_parts(names, respondents, values).unwrap();
        let result = fit_cfa(&panel, &CfaSpec::for_panel(&panel).unwrap()).unwrap();
        for l in &result.loadings {
            assert_abs_diff_eq!(*l, 1.0, epsilon = 1e-6);
        }
        for p in &result.error_variances {
            assert!(*p <= ERROR_VARIANCE_FLOOR * 1.5);
        }
        assert!(result.fit.srmr < 1e-9, "srmr = {}", result.fit.srmr);
        assert!(!result.warnings.is_empty());
    }

    #[test]
    fn perfect_fit_yields_unit_gfi_zero_srmr() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.2, 0.3, 1.0, 0.25, 0.2, 0.25, 1.0]);
        // df must be positive for the standalone entry point, pass a nominal 1.
        let fit = fit_indices(&s, &s, 500, 1).unwrap();
        assert_abs_diff_eq!(fit.gfi, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.srmr, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.chi_square, 0.0, epsilon = 1e-9);
        assert_eq!(fit.rmsea, 0.0);
    }

    #[test]
    fn single_offdiagonal_residual_gives_known_srmr() {
        // One off-diagonal residual r on 3 standardized indicators:
        // SRMR = sqrt(r^2 / 6).
        let r = 0.12;
        let s = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.3 + r, 0.2, 0.3 + r, 1.0, 0.25, 0.2, 0.25, 1.0],
        );
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.2, 0.3, 1.0, 0.25, 0.2, 0.25, 1.0]);
        let fit = fit_indices(&s, &sigma, 500, 1).unwrap();
        assert_abs_diff_eq!(fit.srmr, (r * r / 6.0f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn saturated_df_is_rejected_by_fit_indices() {
        let s = DMatrix::identity(3, 3);
        assert!(matches!(
            fit_indices(&s, &s, 100, 0),
            Err(NlvError::SaturatedModel)
        ));
    }

    #[test]
    fn conventional_thresholds_evaluate() {
        let fit = FitIndices {
            chi_square: 10.0,
            df: 5,
            gfi: 0.992,
            agfi: 0.958,
            srmr: 0.033,
            rmsea: 0.008,
        };
        let a = fit.assess();
        assert!(a.gfi_ok && a.agfi_ok && a.srmr_ok && a.rmsea_ok);
        let bad = FitIndices {
            srmr: 0.06,
            gfi: 0.85,
            ..fit
        };
        let a = bad.assess();
        assert!(!a.gfi_ok && !a.srmr_ok);
    }

    #[test]
    fn f_ml_gradient_matches_finite_differences() {
        let panel = one_factor_panel(400, &[0.6, 0.5, 0.4, 0.7], &[0.8, 0.9, 0.9, 0.7], 11);
        let spec = CfaSpec::for_panel(&panel).unwrap();
        // Rebuild the correlation matrix the fit sees.
        let result = fit_cfa(&panel, &spec).unwrap();
        let g = 4;
        let sigma = DMatrix::from_row_slice(g, g, &result.implied_covariance);
        let _ = sigma;
        let mut s = DMatrix::<f64>::zeros(g, g);
        let n = panel.n_respondents();
        let cols: Vec<Vec<f64>> = (0..g).map(|k| panel.column(k)).collect();
        let means: Vec<f64> = cols
            .iter()
            .map(|c| c.iter().sum::<f64>() / n as f64)
            .collect();
        let sds: Vec<f64> = cols
            .iter()
            .zip(&means)
            .map(|(c, m)| {
                (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
            })
            .collect();
        for a in 0..g {
            for b in 0..g {
                let acc: f64 = cols[a]
                    .iter()
                    .zip(&cols[b])
                    .map(|(x, y)| (x - means[a]) / sds[a] * ((y - means[b]) / sds[b]))
                    .sum();
                s[(a, b)] = acc / (n as f64 - 1.0);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let loadings: Vec<f64> = (0..g).map(|_| rng.random_range(0.2..0.8)).collect();
            let psi: Vec<f64> = (0..g).map(|_| rng.random_range(0.3..1.0)).collect();
            let mut x: Vec<f64> = loadings.clone();
            x.extend_from_slice(&psi);
            let (_, analytic) = f_ml_value_grad(&s, &loadings, &psi);
            let h = 1e-6;
            for i in 0..2 * g {
                let mut plus = x.clone();
                plus[i] += h;
                let mut minus = x.clone();
                minus[i] -= h;
                let fp = f_ml_value_grad(&s, &plus[..g], &plus[g..]).0;
                let fm = f_ml_value_grad(&s, &minus[..g], &minus[g..]).0;
                let fd = (fp - fm) / (2.0 * h);
                let rel = (analytic[i] - fd).abs() / fd.abs().max(1e-4);
                assert!(
                    rel < 1e-6,
                    "coordinate {i}: analytic {} vs fd {fd}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn scale_invariance_of_standardized_solution() {
        let panel = one_factor_panel(2_000, &[0.6, 0.5, 0.4], &[0.8, 0.85, 0.9], 13);
        let spec = CfaSpec::for_panel(&panel).unwrap();
        let base = fit_cfa(&panel, &spec).unwrap();

        // Rescale the middle indicator by 7; standardized loadings must not move.
        let mut values = Vec::new();
        for r in 0..panel.n_respondents() {
            let row = panel.row(r);
            values.extend_from_slice(&[row[0], row[1] * 7.0, row[2]]);
        }
        let scaled = IndicatorPanel::from_parts(
            panel.indicator_names().to_vec(),
            panel.respondents().to_vec(),
            values,
        )
        .unwrap();
        let rescaled = fit_cfa(&scaled, &spec).unwrap();
        for (a, b) in base.loadings.iter().zip(&rescaled.loadings) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-8);
        }
    }

    #[test]
    fn scores_center_linear_and_antisymmetric() {
        let panel = one_factor_panel(500, &[0.6, 0.5, 0.45], &[0.8, 0.85, 0.9], 17);
        let result = fit_cfa(&panel, &CfaSpec::for_panel(&panel).unwrap()).unwrap();
        let mean: f64 = result.scores.iter().sum::<f64>() / result.scores.len() as f64;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-8);

        // All-average respondent scores 0; opposite rows score opposite.
        let names = result.indicator_names.clone();
        let m = result.means.clone();
        let sd = result.scales.clone();
        let plus: Vec<f64> = (0..3).map(|k| m[k] + sd[k]).collect();
        let minus: Vec<f64> = (0..3).map(|k| m[k] - sd[k]).collect();
        let mut values = m.clone();
        values.extend_from_slice(&plus);
        values.extend_from_slice(&minus);
        let probe = IndicatorPanel::from_parts(
            names,
            vec!["avg".into(), "plus".into(), "minus".into()],
            values,
        )
        .unwrap();
        let scores = score_respondents(&result, &probe).unwrap();
        assert_abs_diff_eq!(scores.values[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(scores.values[1], -scores.values[2], epsilon = 1e-12);

        // Affine combinations score affinely: score(a z1 + (1-a) z2).
        let alpha = 0.3;
        let z1 = panel.row(0).to_vec();
        let z2 = panel.row(1).to_vec();
        let mix: Vec<f64> = z1
            .iter()
            .zip(&z2)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        let mut values = z1.clone();
        values.extend_from_slice(&z2);
        values.extend_from_slice(&mix);
        let probe = IndicatorPanel::from_parts(
            result.indicator_names.clone(),
            vec!["one".into(), "two".into(), "mix".into()],
            values,
        )
        .unwrap();
        let s = score_respondents(&result, &probe).unwrap();
        assert_abs_diff_eq!(
            s.values[2],
            alpha * s.values[0] + (1.0 - alpha) * s.values[1],
            epsilon = 1e-12
        );
    }

    #[test]
    fn single_indicator_limit_scores_the_standardized_value() {
        // Limiting identity: loading 1, error variance at the floor.
        let result = CfaResult {
            indicator_names: vec!["only".into()],
            loadings: vec![1.0],
            loading_std_errors: vec![None],
            loading_t_stats: vec![None],
            error_variances: vec![ERROR_VARIANCE_FLOOR],
            fit: FitIndices {
                chi_square: 0.0,
                df: 0,
                gfi: 1.0,
                agfi: 1.0,
                srmr: 0.0,
                rmsea: 0.0,
            },
            sample_size: 1,
            scores: vec![],
            warnings: vec![],
            means: vec![2.0],
            scales: vec![0.5],
            raw_loadings: vec![1.0],
            implied_covariance: vec![1.0 + ERROR_VARIANCE_FLOOR],
            score_weights: vec![1.0 / (1.0 + ERROR_VARIANCE_FLOOR)],
        };
        let panel =
            IndicatorPanel::from_parts(vec!["only".into()], vec!["r1".into()], vec![2.75]).unwrap();
        let scores = score_respondents(&result, &panel).unwrap();
        let z = (2.75 - 2.0) / 0.5;
        assert_abs_diff_eq!(scores.values[0], z, epsilon = 1e-9);
    }

    #[test]
    fn missing_indicator_column_is_a_scoring_error() {
        let panel = one_factor_panel(100, &[0.6, 0.5, 0.45], &[0.8, 0.85, 0.9], 19);
        let result = fit_cfa(&panel, &CfaSpec::for_panel(&panel).unwrap()).unwrap();
        let other = IndicatorPanel::from_parts(
            vec!["ind0".into(), "ind1".into()],
            vec!["r1".into()],
            vec![0.1, 0.2],
        )
        .unwrap();
        assert!(score_respondents(&result, &other).is_err());
    }

    #[test]
    fn loadings_stay_bounded_across_fuzzed_panels() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..30 {
            let g = rng.random_range(3..6);
            let loadings: Vec<f64> = (0..g).map(|_| rng.random_range(-0.9..0.9)).collect();
            let noise: Vec<f64> = (0..g).map(|_| rng.random_range(0.2..1.2)).collect();
            let panel = one_factor_panel(300, &loadings, &noise, 100 + trial);
            let result = fit_cfa(&panel, &CfaSpec::for_panel(&panel).unwrap()).unwrap();
            for l in &result.loadings {
                assert!((-1.0..=1.0).contains(l), "loading {l} out of bounds");
            }
            for p in &result.error_variances {
                assert!(*p > 0.0);
            }
            assert!(result.fit.srmr >= 0.0 && result.fit.rmsea >= 0.0);
            assert!(result.fit.agfi <= result.fit.gfi + 1e-12);
        }
    }
}
