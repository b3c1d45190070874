//! End-to-end library usage over the bundled dataset, mirroring the README
//! example: ingest, CFA, estimation, share replication.

use std::path::{Path, PathBuf};

use nlv_core::{cfa, data, estimate, model, simulate};

fn bundle() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/california")
}

#[test]
fn readme_pipeline_runs_on_the_bundled_data() {
    let schema = data::CsvSchema::default();
    let choices = data::load_choice_csv(bundle().join("choices.csv"), &schema).unwrap();
    let panel = data::load_indicator_csv(bundle().join("indicators.csv")).unwrap();
    panel.validate_against(&choices).unwrap();
    let spec = model::parse_model_spec(bundle().join("california.spec")).unwrap();

    let cfa_spec = cfa::CfaSpec::new(spec.latent.as_ref().unwrap().indicators.clone()).unwrap();
    let measurement = cfa::fit_cfa(&panel, &cfa_spec).unwrap();
    assert!(measurement.fit.assess().srmr_ok);
    let scores = cfa::score_respondents(&measurement, &panel).unwrap();

    let options = estimate::EstimationOptions {
        multistart: 2,
        ..Default::default()
    };
    let result = estimate::estimate(&choices, Some(&scores), &spec, &options).unwrap();
    assert!(result.ll_zero <= result.ll_const && result.ll_const <= result.ll_beta);
    assert!(result.rho2 > 0.0 && result.rho2 < 1.0);

    let shares =
        simulate::enumerate_shares(&choices, Some(&scores), &result.theta(), &spec).unwrap();
    assert!(shares.max_abs_gap < 0.02, "gap {}", shares.max_abs_gap);

    let rendered = nlv_core::report::render_report(&spec, &result, Some(&measurement), Some(&shares))
        .unwrap();
    assert!(rendered.contains("Inclusive value parameters"));
}
