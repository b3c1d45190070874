//! Declarative model specification: nest tree, utility terms, fixed parameters.
//!
//! The spec file is TOML with four sections:
//!
//! ```toml
//! [model]
//! name = "example"
//! base_alternative = "keep"
//!
//! [nests]
//! keep = ["keep"]
//! buy = ["buy_small", "buy_large"]
//!
//! [utility.buy_small]
//! constant = "asc_buy_small"   # reserved term: alternative-specific constant
//! income = "b_income_small"    # any other key names a covariate column
//! latent = "b_latent_small"    # reserved term: the scored latent construct
//!
//! [fixed]
//! iv_keep = 1.0                # inclusive-value parameters are named iv_<nest>
//!
//! [latent]
//! name = "construct"
//! indicators = ["q1", "q2", "q3"]
//! ```
//!
//! Exactly two levels are supported: nests of alternatives. A nest member that
//! names another nest would add a third level and is rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ChoiceDataset;
use crate::error::{NlvError, Result};

/// One nest and its member alternatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestSpec {
    pub name: String,
    pub members: Vec<String>,
}

impl NestSpec {
    /// Degenerate nests hold a single alternative; their IV parameter is not
    /// identified and must be fixed.
    pub fn is_degenerate(&self) -> bool {
        self.members.len() == 1
    }
}

/// What a utility term multiplies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum UtilityTerm {
    /// Alternative-specific constant (regressor 1).
    Constant,
    /// A named covariate column from the choice data.
    Covariate(String),
    /// The scored latent construct.
    Latent,
}

/// Binds one term on one alternative to a named parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermBinding {
    pub alternative: String,
    pub term: UtilityTerm,
    pub parameter: String,
}

/// Latent-construct declaration: which indicator columns measure it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub name: String,
    pub indicators: Vec<String>,
}

/// A validated model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub base_alternative: String,
    pub nests: Vec<NestSpec>,
    pub bindings: Vec<TermBinding>,
    pub fixed: BTreeMap<String, f64>,
    pub latent: Option<LatentSpec>,
}

/// IV parameters are named after their nest.
pub fn iv_parameter_name(nest: &str) -> String {
    format!("iv_{nest}")
}

impl ModelSpec {
    /// All alternatives, in nest declaration order.
    pub fn alternatives(&self) -> Vec<String> {
        self.nests
            .iter()
            .flat_map(|n| n.members.iter().cloned())
            .collect()
    }

    pub fn nest_of(&self, alternative: &str) -> Option<usize> {
        self.nests
            .iter()
            .position(|n| n.members.iter().any(|m| m == alternative))
    }

    pub fn bindings_for<'a>(
        &'a self,
        alternative: &'a str,
    ) -> impl Iterator<Item = &'a TermBinding> + 'a {
        self.bindings
            .iter()
            .filter(move |b| b.alternative == alternative)
    }

    /// True when any alternative carries a latent term.
    pub fn binds_latent(&self) -> bool {
        self.bindings
            .iter()
            .any(|b| matches!(b.term, UtilityTerm::Latent))
    }

    pub fn validate(&self) -> Result<()> {
        if self.nests.is_empty() {
            return Err(NlvError::Spec("spec declares no nests".into()));
        }
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        let nest_names: BTreeSet<&str> = self.nests.iter().map(|n| n.name.as_str()).collect();
        if nest_names.len() != self.nests.len() {
            return Err(NlvError::Spec("duplicate nest name".into()));
        }
        for nest in &self.nests {
            if nest.members.is_empty() {
                return Err(NlvError::Spec(format!(
                    "nest `{}` has no members",
                    nest.name
                )));
            }
            for m in &nest.members {
                // A member named after its own nest is the degenerate-nest
                // idiom; naming a different nest would add a third level.
                if nest_names.contains(m.as_str()) && m != &nest.name {
                    return Err(NlvError::Spec(format!(
                        "nest `{}` lists `{m}` which is itself a nest; only two levels are supported",
                        nest.name
                    )));
                }
                if let Some(prev) = seen.insert(m.as_str(), nest.name.as_str()) {
                    return Err(NlvError::Spec(format!(
                        "alternative `{m}` appears in nests `{prev}` and `{}`; nests must partition the alternatives",
                        nest.name
                    )));
                }
            }
        }
        let alternatives: BTreeSet<&str> = seen.keys().copied().collect();
        if alternatives.len() < 2 {
            return Err(NlvError::Spec("spec needs at least 2 alternatives".into()));
        }
        if !alternatives.contains(self.base_alternative.as_str()) {
            return Err(NlvError::Spec(format!(
                "base alternative `{}` is not a member of any nest",
                self.base_alternative
            )));
        }
        let mut bound: BTreeSet<(String, String)> = BTreeSet::new();
        for b in &self.bindings {
            if !alternatives.contains(b.alternative.as_str()) {
                return Err(NlvError::Spec(format!(
                    "utility section references unknown alternative `{}`",
                    b.alternative
                )));
            }
            let term_key = match &b.term {
                UtilityTerm::Constant => "constant".to_string(),
                UtilityTerm::Latent => "latent".to_string(),
                UtilityTerm::Covariate(c) => format!("cov:{c}"),
            };
            if !bound.insert((b.alternative.clone(), term_key.clone())) {
                return Err(NlvError::Spec(format!(
                    "alternative `{}` binds `{term_key}` twice",
                    b.alternative
                )));
            }
            if matches!(b.term, UtilityTerm::Constant)
                && b.alternative == self.base_alternative
                && !self.fixed.contains_key(&b.parameter)
            {
                return Err(NlvError::Spec(format!(
                    "base alternative `{}` must not carry a free constant",
                    self.base_alternative
                )));
            }
            if matches!(b.term, UtilityTerm::Latent) && self.latent.is_none() {
                return Err(NlvError::Spec(format!(
                    "alternative `{}` binds a latent term but no [latent] section is declared",
                    b.alternative
                )));
            }
        }
        // Every fixed name must exist among utility parameters or IV parameters.
        let mut known: BTreeSet<String> =
            self.bindings.iter().map(|b| b.parameter.clone()).collect();
        for nest in &self.nests {
            known.insert(iv_parameter_name(&nest.name));
        }
        for name in self.fixed.keys() {
            if !known.contains(name) {
                return Err(NlvError::Spec(format!(
                    "[fixed] names unknown parameter `{name}`"
                )));
            }
        }
        // Degenerate nests must have their IV fixed; conventionally at 1.
        for nest in &self.nests {
            if nest.is_degenerate() && !self.fixed.contains_key(&iv_parameter_name(&nest.name)) {
                return Err(NlvError::Spec(format!(
                    "nest `{}` is degenerate (single member); fix `{}` (conventionally at 1.0)",
                    nest.name,
                    iv_parameter_name(&nest.name)
                )));
            }
        }
        if let Some(latent) = &self.latent {
            if latent.indicators.is_empty() {
                return Err(NlvError::Spec("[latent] declares no indicators".into()));
            }
        }
        Ok(())
    }

    /// Renders the spec back to normalized TOML. `parse(serialize(spec))`
    /// reproduces `spec`, and serializing again is byte-identical.
    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        out.push_str("[model]\n");
        out.push_str(&format!("name = {}\n", toml_quote(&self.name)));
        out.push_str(&format!(
            "base_alternative = {}\n",
            toml_quote(&self.base_alternative)
        ));
        out.push_str("\n[nests]\n");
        for nest in &self.nests {
            let members: Vec<String> = nest.members.iter().map(|m| toml_quote(m)).collect();
            out.push_str(&format!(
                "{} = [{}]\n",
                toml_key(&nest.name),
                members.join(", ")
            ));
        }
        for alt in self.alternatives() {
            let bindings: Vec<&TermBinding> = self.bindings_for(&alt).collect();
            if bindings.is_empty() {
                continue;
            }
            out.push_str(&format!("\n[utility.{}]\n", toml_key(&alt)));
            for b in bindings {
                let key = match &b.term {
                    UtilityTerm::Constant => "constant".to_string(),
                    UtilityTerm::Latent => "latent".to_string(),
                    UtilityTerm::Covariate(c) => c.clone(),
                };
                out.push_str(&format!(
                    "{} = {}\n",
                    toml_key(&key),
                    toml_quote(&b.parameter)
                ));
            }
        }
        if !self.fixed.is_empty() {
            out.push_str("\n[fixed]\n");
            for (name, value) in &self.fixed {
                out.push_str(&format!("{} = {}\n", toml_key(name), format_f64(*value)));
            }
        }
        if let Some(latent) = &self.latent {
            out.push_str("\n[latent]\n");
            out.push_str(&format!("name = {}\n", toml_quote(&latent.name)));
            let quoted: Vec<String> = latent.indicators.iter().map(|i| toml_quote(i)).collect();
            out.push_str(&format!("indicators = [{}]\n", quoted.join(", ")));
        }
        out
    }
}

fn format_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{:.1}", v)
    } else {
        format!("{v}")
    }
}

fn toml_key(key: &str) -> String {
    let bare = !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if bare {
        key.to_string()
    } else {
        toml_quote(key)
    }
}

fn toml_quote(s: &str) -> String {
    format!("{:?}", s)
}

/// Parses and validates a model spec file.
pub fn parse_model_spec(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| NlvError::io(path, e))?;
    parse_model_spec_str(&text, path)
}

/// Parses a model spec from text; `origin` is used in error messages.
pub fn parse_model_spec_str(text: &str, origin: impl Into<PathBuf>) -> Result<ModelSpec> {
    let origin = origin.into();
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| NlvError::SpecParse {
            path: origin.clone(),
            // The toml error message carries "at line N, column M".
            message: e.to_string().replace('\n', " "),
        })?;

    let spec_err = |msg: String| NlvError::SpecParse {
        path: origin.clone(),
        message: msg,
    };

    let model = table
        .get("model")
        .and_then(|v| v.as_table())
        .ok_or_else(|| spec_err("missing [model] section".into()))?;
    let name = model
        .get("name")
        .and_then(|v| v.as_str())
        .unwrap_or("unnamed")
        .to_string();
    let base_alternative = model
        .get("base_alternative")
        .and_then(|v| v.as_str())
        .ok_or_else(|| spec_err("[model] must set base_alternative".into()))?
        .to_string();

    let nests_table = table
        .get("nests")
        .and_then(|v| v.as_table())
        .ok_or_else(|| spec_err("missing [nests] section".into()))?;
    let mut nests = Vec::new();
    for (nest_name, members) in nests_table {
        let arr = members.as_array().ok_or_else(|| {
            spec_err(format!(
                "nest `{nest_name}` must be an array of alternatives"
            ))
        })?;
        let mut list = Vec::new();
        for m in arr {
            let s = m
                .as_str()
                .ok_or_else(|| spec_err(format!("nest `{nest_name}` members must be strings")))?;
            list.push(s.to_string());
        }
        nests.push(NestSpec {
            name: nest_name.clone(),
            members: list,
        });
    }

    let mut bindings = Vec::new();
    if let Some(utility) = table.get("utility") {
        let utility = utility
            .as_table()
            .ok_or_else(|| spec_err("[utility] must contain per-alternative sections".into()))?;
        for (alt, terms) in utility {
            let terms = terms
                .as_table()
                .ok_or_else(|| spec_err(format!("[utility.{alt}] must be a table")))?;
            for (term_key, param) in terms {
                let parameter = param
                    .as_str()
                    .ok_or_else(|| {
                        spec_err(format!(
                            "[utility.{alt}] `{term_key}` must name a parameter (string)"
                        ))
                    })?
                    .to_string();
                let term = match term_key.as_str() {
                    "constant" => UtilityTerm::Constant,
                    "latent" => UtilityTerm::Latent,
                    other => UtilityTerm::Covariate(other.to_string()),
                };
                bindings.push(TermBinding {
                    alternative: alt.clone(),
                    term,
                    parameter,
                });
            }
        }
    }

    let mut fixed = BTreeMap::new();
    if let Some(fixed_table) = table.get("fixed") {
        let fixed_table = fixed_table
            .as_table()
            .ok_or_else(|| spec_err("[fixed] must be a table of parameter = value".into()))?;
        for (name, value) in fixed_table {
            let v = value
                .as_float()
                .or_else(|| value.as_integer().map(|i| i as f64))
                .ok_or_else(|| spec_err(format!("[fixed] `{name}` must be numeric")))?;
            fixed.insert(name.clone(), v);
        }
    }

    let latent = match table.get("latent") {
        None => None,
        Some(value) => {
            let t = value
                .as_table()
                .ok_or_else(|| spec_err("[latent] must be a table".into()))?;
            let name = t
                .get("name")
                .and_then(|v| v.as_str())
                .unwrap_or("latent")
                .to_string();
            let indicators = t
                .get("indicators")
                .and_then(|v| v.as_array())
                .ok_or_else(|| spec_err("[latent] must list indicators".into()))?
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(|s| s.to_string())
                        .ok_or_else(|| spec_err("[latent] indicators must be strings".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(LatentSpec { name, indicators })
        }
    };

    let spec = ModelSpec {
        name,
        base_alternative,
        nests,
        bindings,
        fixed,
        latent,
    };
    spec.validate()?;
    Ok(spec)
}

/// Role of one entry in the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    /// Utility coefficient (constant, covariate, or latent weight).
    Utility,
    /// Inclusive-value parameter of the given nest.
    InclusiveValue { nest: usize },
}

/// Ordered parameter metadata: utility parameters first, then one IV per nest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub names: Vec<String>,
    pub roles: Vec<ParamRole>,
    pub fixed: Vec<Option<f64>>,
}

impl ParameterSpace {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_free(&self, idx: usize) -> bool {
        self.fixed[idx].is_none()
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_free(i)).collect()
    }

    pub fn n_free(&self) -> usize {
        self.fixed.iter().filter(|f| f.is_none()).count()
    }
}

/// What a compiled term multiplies, resolved against a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TermSource {
    Constant,
    Covariate(usize),
    Latent,
}

/// One resolved utility term: parameter index and its data source.
#[derive(Debug, Clone, Copy)]
pub struct CompiledTerm {
    pub parameter: usize,
    pub source: TermSource,
}

/// A nest with members resolved to dataset alternative indices.
#[derive(Debug, Clone)]
pub struct CompiledNest {
    pub name: String,
    pub members: Vec<usize>,
    pub iv_parameter: usize,
}

/// Model spec resolved against a dataset's alternatives and covariates.
///
/// Alternative indices follow the dataset's label order throughout.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub space: ParameterSpace,
    pub alternatives: Vec<String>,
    pub nests: Vec<CompiledNest>,
    pub nest_of: Vec<usize>,
    pub terms: Vec<Vec<CompiledTerm>>,
    pub base_alternative: usize,
    pub binds_latent: bool,
}

impl CompiledModel {
    pub fn new(spec: &ModelSpec, data: &ChoiceDataset) -> Result<Self> {
        spec.validate()?;
        let labels = data.alternative_labels();
        let spec_alts: BTreeSet<String> = spec.alternatives().into_iter().collect();
        let data_alts: BTreeSet<String> = labels.iter().cloned().collect();
        if spec_alts != data_alts {
            let missing: Vec<_> = spec_alts.difference(&data_alts).cloned().collect();
            let extra: Vec<_> = data_alts.difference(&spec_alts).cloned().collect();
            return Err(NlvError::Binding(format!(
                "spec and dataset alternatives differ (missing from data: [{}]; not in spec: [{}])",
                missing.join(", "),
                extra.join(", ")
            )));
        }
        let alt_index = |name: &str| labels.iter().position(|l| l == name).unwrap();

        // Utility parameters in first-binding order, then IVs in nest order.
        let mut names: Vec<String> = Vec::new();
        let mut roles: Vec<ParamRole> = Vec::new();
        for b in &spec.bindings {
            if !names.contains(&b.parameter) {
                names.push(b.parameter.clone());
                roles.push(ParamRole::Utility);
            }
        }
        for (j, nest) in spec.nests.iter().enumerate() {
            let iv_name = iv_parameter_name(&nest.name);
            if names.contains(&iv_name) {
                return Err(NlvError::Spec(format!(
                    "parameter name `{iv_name}` collides with the IV parameter of nest `{}`",
                    nest.name
                )));
            }
            names.push(iv_name);
            roles.push(ParamRole::InclusiveValue { nest: j });
        }
        let fixed: Vec<Option<f64>> = names.iter().map(|n| spec.fixed.get(n).copied()).collect();
        let space = ParameterSpace {
            names,
            roles,
            fixed,
        };

        let mut nests = Vec::new();
        let mut nest_of = vec![usize::MAX; labels.len()];
        for (j, nest) in spec.nests.iter().enumerate() {
            let members: Vec<usize> = nest.members.iter().map(|m| alt_index(m)).collect();
            for &m in &members {
                nest_of[m] = j;
            }
            nests.push(CompiledNest {
                name: nest.name.clone(),
                members,
                iv_parameter: space.index_of(&iv_parameter_name(&nest.name)).unwrap(),
            });
        }

        let mut terms: Vec<Vec<CompiledTerm>> = vec![Vec::new(); labels.len()];
        for b in &spec.bindings {
            let source = match &b.term {
                UtilityTerm::Constant => TermSource::Constant,
                UtilityTerm::Latent => TermSource::Latent,
                UtilityTerm::Covariate(name) => {
                    let col = data.covariate_index(name).ok_or_else(|| {
                        NlvError::Binding(format!(
                            "utility of `{}` references covariate `{name}` which is not in the dataset",
                            b.alternative
                        ))
                    })?;
                    TermSource::Covariate(col)
                }
            };
            terms[alt_index(&b.alternative)].push(CompiledTerm {
                parameter: space.index_of(&b.parameter).unwrap(),
                source,
            });
        }

        Ok(CompiledModel {
            space,
            alternatives: labels.to_vec(),
            nests,
            nest_of,
            base_alternative: alt_index(&spec.base_alternative),
            terms,
            binds_latent: spec.binds_latent(),
        })
    }

    pub fn n_alternatives(&self) -> usize {
        self.alternatives.len()
    }

    pub fn n_nests(&self) -> usize {
        self.nests.len()
    }
}

/// Builds a constants-only multinomial logit spec over a dataset's
/// alternatives: one free constant per non-base alternative, a single nest
/// with its IV fixed at 1.
pub fn constants_only_spec(data: &ChoiceDataset, base_alternative: &str) -> Result<ModelSpec> {
    let labels = data.alternative_labels();
    if !labels.iter().any(|l| l == base_alternative) {
        return Err(NlvError::Spec(format!(
            "base alternative `{base_alternative}` is not in the dataset"
        )));
    }
    let bindings = labels
        .iter()
        .filter(|l| l.as_str() != base_alternative)
        .map(|l| TermBinding {
            alternative: l.clone(),
            term: UtilityTerm::Constant,
            parameter: format!("asc_{l}"),
        })
        .collect();
    let mut fixed = BTreeMap::new();
    fixed.insert(iv_parameter_name("root"), 1.0);
    Ok(ModelSpec {
        name: "constants-only".to_string(),
        base_alternative: base_alternative.to_string(),
        nests: vec![NestSpec {
            name: "root".to_string(),
            members: labels.to_vec(),
        }],
        bindings,
        fixed,
        latent: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
[model]
name = "toy"
base_alternative = "keep"

[nests]
keep = ["keep"]
buy = ["buy_small", "buy_large"]

[utility.buy_small]
constant = "asc_small"
income = "b_income"

[utility.buy_large]
constant = "asc_large"
income = "b_income"

[fixed]
iv_keep = 1.0
"#;

    #[test]
    fn toy_spec_parses() {
        let spec = parse_model_spec_str(TOY, "toy.spec").unwrap();
        assert_eq!(spec.nests.len(), 2);
        assert_eq!(spec.alternatives().len(), 3);
        assert_eq!(spec.fixed.get("iv_keep"), Some(&1.0));
        assert!(spec
            .nests
            .iter()
            .find(|n| n.name == "keep")
            .unwrap()
            .is_degenerate());
        // Shared parameter name appears once in the space.
        assert_eq!(
            spec.bindings
                .iter()
                .filter(|b| b.parameter == "b_income")
                .count(),
            2
        );
    }

    #[test]
    fn round_trip_is_idempotent() {
        let spec = parse_model_spec_str(TOY, "toy.spec").unwrap();
        let text1 = spec.to_toml_string();
        let spec2 = parse_model_spec_str(&text1, "toy2.spec").unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(text1, spec2.to_toml_string());
    }

    #[test]
    fn alternative_in_two_nests_is_a_partition_error() {
        let text = TOY.replace("keep = [\"keep\"]", "keep = [\"keep\", \"buy_small\"]");
        let err = parse_model_spec_str(&text, "bad.spec").unwrap_err();
        assert!(err.to_string().contains("partition"), "{err}");
    }

    #[test]
    fn nested_nest_is_rejected() {
        let text = TOY.replace("keep = [\"keep\"]", "keep = [\"keep\", \"buy\"]");
        let err = parse_model_spec_str(&text, "bad.spec").unwrap_err();
        assert!(err.to_string().contains("two levels"), "{err}");
    }

    #[test]
    fn base_with_free_constant_is_rejected() {
        let text = format!("{TOY}\n[utility.keep]\nconstant = \"asc_keep\"\n");
        let err = parse_model_spec_str(&text, "bad.spec").unwrap_err();
        assert!(err.to_string().contains("free constant"), "{err}");
    }

    #[test]
    fn unknown_fixed_parameter_is_rejected() {
        let text = TOY.replace("iv_keep = 1.0", "iv_keep = 1.0\nnot_a_param = 2.0");
        let err = parse_model_spec_str(&text, "bad.spec").unwrap_err();
        assert!(err.to_string().contains("not_a_param"), "{err}");
    }

    #[test]
    fn parse_error_cites_location() {
        let err = parse_model_spec_str("[model\nname = 3", "broken.spec").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn utility_for_unnested_alternative_is_rejected() {
        let text = format!("{TOY}\n[utility.add_bev]\nconstant = \"asc_bev\"\n");
        let err = parse_model_spec_str(&text, "bad.spec").unwrap_err();
        assert!(err.to_string().contains("add_bev"), "{err}");
    }

    #[test]
    fn single_nest_mnl_is_valid() {
        let text = r#"
[model]
name = "mnl"
base_alternative = "a"

[nests]
all = ["a", "b", "c"]

[utility.b]
constant = "asc_b"

[fixed]
iv_all = 1.0
"#;
        let spec = parse_model_spec_str(text, "mnl.spec").unwrap();
        assert_eq!(spec.nests.len(), 1);
        assert_eq!(spec.fixed.get("iv_all"), Some(&1.0));
    }
}
