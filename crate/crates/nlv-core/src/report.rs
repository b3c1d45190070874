//! Deterministic text rendering of estimation results: a measurement block,
//! the nest-grouped coefficient table, the fit block, and the share
//! replication table. Rendering the same inputs twice is byte-identical.

use crate::cfa::CfaResult;
use crate::error::{NlvError, Result};
use crate::estimate::{EstimationResult, FitBlock, RESULT_SCHEMA_VERSION};
use crate::model::{ModelSpec, UtilityTerm};
use crate::simulate::ShareReport;

const DASH: &str = "—";

fn fmt_coef(v: f64) -> String {
    format!("{v:>10.3}")
}

fn fmt_t(t: Option<f64>) -> String {
    match t {
        Some(t) => format!("{t:>8.2}"),
        None => format!("{DASH:>8}"),
    }
}

/// Renders the full report. The CFA and share sections are omitted entirely
/// when absent, not left blank.
pub fn render_report(
    spec: &ModelSpec,
    result: &EstimationResult,
    cfa: Option<&CfaResult>,
    shares: Option<&ShareReport>,
) -> Result<String> {
    if result.schema_version != RESULT_SCHEMA_VERSION {
        return Err(NlvError::Validation(format!(
            "result schema version {} does not match renderer version {}",
            result.schema_version, RESULT_SCHEMA_VERSION
        )));
    }
    let mut out = String::new();
    let title = format!("Model: {}", result.model_name);
    out.push_str(&title);
    out.push('\n');
    out.push_str(&"=".repeat(title.len()));
    out.push_str("\n\n");

    if let Some(cfa) = cfa {
        render_cfa_block(&mut out, cfa);
    }

    out.push_str("Nested logit estimates\n");
    out.push_str("----------------------\n");
    out.push_str(&format!("{:<44}{:>10}{:>8}\n", "Term", "Coef.", "t-stat"));
    for nest in &spec.nests {
        out.push_str(&format!("Nest: {}\n", nest.name));
        for alt in &nest.members {
            let bindings: Vec<_> = spec.bindings_for(alt).collect();
            if alt == &spec.base_alternative {
                out.push_str(&format!("  {alt} (base alternative)\n"));
            } else if !bindings.is_empty() {
                out.push_str(&format!("  {alt}\n"));
            }
            for b in bindings {
                let label = match &b.term {
                    UtilityTerm::Constant => "constant".to_string(),
                    UtilityTerm::Latent => spec
                        .latent
                        .as_ref()
                        .map(|l| format!("latent: {}", l.name))
                        .unwrap_or_else(|| "latent".to_string()),
                    UtilityTerm::Covariate(c) => c.clone(),
                };
                let idx = result
                    .parameter_names
                    .iter()
                    .position(|n| n == &b.parameter)
                    .ok_or_else(|| {
                        NlvError::Validation(format!(
                            "parameter `{}` missing from result; spec and result do not match",
                            b.parameter
                        ))
                    })?;
                let t = if result.fixed[idx].is_some() {
                    None
                } else {
                    result.t_stats[idx]
                };
                out.push_str(&format!(
                    "    {:<40}{}{}\n",
                    label,
                    fmt_coef(result.estimates[idx]),
                    fmt_t(t)
                ));
            }
        }
    }
    out.push('\n');
    out.push_str("Inclusive value parameters\n");
    for iv in &result.iv_report {
        let t = if iv.fixed {
            format!("{DASH:>8}")
        } else {
            let idx = result
                .parameter_names
                .iter()
                .position(|n| n == &iv.parameter)
                .unwrap();
            fmt_t(result.t_stats[idx])
        };
        let flag = if iv.fixed {
            "  (fixed)"
        } else if iv.in_unit_interval {
            ""
        } else {
            "  [outside (0, 1]]"
        };
        out.push_str(&format!(
            "  {:<42}{}{}{}\n",
            iv.nest,
            fmt_coef(iv.value),
            t,
            flag
        ));
    }
    out.push('\n');

    let fit = FitBlock {
        ll_beta: result.ll_beta,
        ll_zero: result.ll_zero,
        ll_const: result.ll_const,
    };
    out.push_str("Fit\n");
    out.push_str("---\n");
    out.push_str(&format!(
        "  Observations            {:>12}\n",
        result.n_observations
    ));
    out.push_str(&format!(
        "  Free parameters         {:>12}\n",
        result.n_free_parameters
    ));
    out.push_str(&format!(
        "  LL at convergence       {:>12.3}\n",
        result.ll_beta
    ));
    out.push_str(&format!(
        "  LL at zero              {:>12.3}\n",
        result.ll_zero
    ));
    out.push_str(&format!(
        "  LL at constants         {:>12.3}\n",
        result.ll_const
    ));
    out.push_str(&format!("  rho-squared             {:>12.3}\n", fit.rho2()));
    out.push_str(&format!(
        "  pseudo rho-squared      {:>12.3}\n",
        fit.pseudo_rho2()
    ));
    out.push_str(&format!(
        "  Convergence             {:>12}\n",
        format!("{:?}", result.convergence.status)
    ));
    out.push_str(&format!(
        "  Iterations (best start) {:>12}\n",
        result.convergence.iterations
    ));
    out.push_str(&format!(
        "  Final gradient norm     {:>12.3e}\n",
        result.convergence.gradient_norm
    ));
    out.push('\n');

    if let Some(shares) = shares {
        out.push_str("Market share replication\n");
        out.push_str("-------------------------\n");
        out.push_str(&format!(
            "{:<24}{:>12}{:>12}{:>10}\n",
            "Alternative", "Observed", "Simulated", "Gap"
        ));
        for (i, alt) in shares.alternatives.iter().enumerate() {
            out.push_str(&format!(
                "{:<24}{:>11.2}%{:>11.2}%{:>10.4}\n",
                alt,
                100.0 * shares.observed[i],
                100.0 * shares.simulated[i],
                shares.simulated[i] - shares.observed[i]
            ));
        }
        out.push_str(&format!(
            "Largest absolute gap: {:.6}\n",
            shares.max_abs_gap
        ));
        out.push('\n');
    }

    out.push_str("Notes\n");
    out.push_str("-----\n");
    out.push_str(
        "  * Nest marginals multiply the inclusive value by its parameter without\n    rescaling within-nest utilities (non-normalized form); coefficients are\n    comparable across nests only up to that utility-scale convention.\n",
    );
    if spec.binds_latent() {
        out.push_str(
            "  * Latent scores are estimated in a prior step; the reported standard\n    errors ignore that first-stage noise and may be understated.\n",
        );
    }
    for note in &result.notes {
        out.push_str(&format!("  * {note}\n"));
    }
    Ok(out)
}

/// Renders the measurement block alone.
pub fn render_cfa(cfa: &CfaResult) -> String {
    let mut out = String::new();
    render_cfa_block(&mut out, cfa);
    out
}

fn render_cfa_block(out: &mut String, cfa: &CfaResult) {
    out.push_str("Measurement model (single factor)\n");
    out.push_str("---------------------------------\n");
    out.push_str(&format!(
        "{:<44}{:>10}{:>8}\n",
        "Indicator", "Loading", "t-stat"
    ));
    for (k, name) in cfa.indicator_names.iter().enumerate() {
        out.push_str(&format!(
            "  {:<42}{}{}\n",
            name,
            fmt_coef(cfa.loadings[k]),
            fmt_t(cfa.loading_t_stats[k])
        ));
    }
    let fit = &cfa.fit;
    out.push_str(&format!(
        "  n = {}; chi-square = {:.3} (df = {})\n",
        cfa.sample_size, fit.chi_square, fit.df
    ));
    out.push_str(&format!(
        "  GFI = {:.3}; AGFI = {:.3}; SRMR = {:.3}; RMSEA = {:.3}\n",
        fit.gfi, fit.agfi, fit.srmr, fit.rmsea
    ));
    let a = fit.assess();
    out.push_str(&format!(
        "  Thresholds: GFI > 0.9 [{}]; AGFI > 0.9 [{}]; SRMR < 0.05 [{}]; RMSEA < 0.05 [{}]\n",
        pass(a.gfi_ok),
        pass(a.agfi_ok),
        pass(a.srmr_ok),
        pass(a.rmsea_ok)
    ));
    for w in &cfa.warnings {
        out.push_str(&format!("  warning: {w}\n"));
    }
    out.push('\n');
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_choice_csv, CsvSchema};
    use crate::estimate::{estimate, EstimationOptions};
    use crate::model::parse_model_spec_str;

    fn fixture() -> (crate::data::ChoiceDataset, ModelSpec, EstimationResult) {
        let spec_text = r#"
[model]
name = "report-toy"
base_alternative = "keep"

[nests]
keep = ["keep"]
buy = ["buy_a", "buy_b"]

[utility.buy_a]
constant = "asc_a"

[utility.buy_b]
constant = "asc_b"

[fixed]
iv_keep = 1.0
"#;
        let mut csv = String::from("resp_id,obs_id,alt,avail,chosen\n");
        for q in 0..60 {
            let pick = ["keep", "buy_a", "buy_b"][if q % 5 == 0 {
                0
            } else if q % 3 == 0 {
                2
            } else {
                1
            }];
            for alt in ["keep", "buy_a", "buy_b"] {
                csv.push_str(&format!("r{q},{q},{alt},1,{}\n", u8::from(alt == pick)));
            }
        }
        let data = read_choice_csv(csv.as_bytes(), &CsvSchema::default(), "r.csv").unwrap();
        let spec = parse_model_spec_str(spec_text, "r.spec").unwrap();
        let result = estimate(&data, None, &spec, &EstimationOptions::default()).unwrap();
        (data, spec, result)
    }

    #[test]
    fn report_is_idempotent_and_shows_fixed_iv() {
        let (_data, spec, result) = fixture();
        let text1 = render_report(&spec, &result, None, None).unwrap();
        let text2 = render_report(&spec, &result, None, None).unwrap();
        assert_eq!(text1, text2);
        assert!(text1.contains("1.000"), "{text1}");
        assert!(text1.contains("(fixed)"), "{text1}");
        assert!(text1.contains("rho-squared"));
        // No share section when simulation was skipped.
        assert!(!text1.contains("Market share replication"));
    }

    #[test]
    fn survey_scale_fit_block_renders_expected_rho() {
        let (_data, spec, mut result) = fixture();
        result.ll_beta = -6246.551;
        result.ll_zero = -8141.941;
        result.ll_const = -7484.911;
        result.rho2 = 1.0 - result.ll_beta / result.ll_zero;
        result.pseudo_rho2 = 1.0 - result.ll_beta / result.ll_const;
        let text = render_report(&spec, &result, None, None).unwrap();
        assert!(
            text.contains("rho-squared                    0.233"),
            "{text}"
        );
        assert!(
            text.contains("pseudo rho-squared             0.165"),
            "{text}"
        );
    }

    #[test]
    fn schema_version_mismatch_is_an_error() {
        let (_data, spec, mut result) = fixture();
        result.schema_version ^= 0xff;
        assert!(render_report(&spec, &result, None, None).is_err());
    }
}
