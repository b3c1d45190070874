//! Choice datasets and indicator panels: typed storage plus CSV ingestion.
//!
//! Choice data is long format: one row per observation × alternative, grouped
//! by `(respondent, observation)` keys. Covariates are stored per row so that
//! attributes which do not apply to an alternative can simply hold 0 there and
//! be left unbound in the model spec.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NlvError, Result};

/// Column mapping for long-format choice CSV files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Respondent identifier column.
    pub respondent_col: String,
    /// Observation identifier column (unique within respondent).
    pub observation_col: String,
    /// Alternative label column.
    pub alternative_col: String,
    /// Availability flag column (0/1). `None` means every listed row is available.
    pub availability_col: Option<String>,
    /// Chosen flag column (0/1, exactly one per observation).
    pub chosen_col: String,
    /// Covariate columns. `None` selects every remaining column.
    pub covariate_cols: Option<Vec<String>>,
    /// Categorical covariates to dummy-encode, mapped to an optional base level.
    /// A categorical with k observed levels yields k-1 indicator columns.
    pub categorical: BTreeMap<String, Option<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            respondent_col: "resp_id".to_string(),
            observation_col: "obs_id".to_string(),
            alternative_col: "alt".to_string(),
            availability_col: Some("avail".to_string()),
            chosen_col: "chosen".to_string(),
            covariate_cols: None,
            categorical: BTreeMap::new(),
        }
    }
}

/// A validated long-format choice dataset.
///
/// Immutable after construction; estimation workers may share it freely.
#[derive(Debug, Clone)]
pub struct ChoiceDataset {
    alternative_labels: Vec<String>,
    covariate_names: Vec<String>,
    respondents: Vec<String>,
    obs_respondent: Vec<u32>,
    obs_labels: Vec<String>,
    chosen: Vec<u32>,
    available: Vec<bool>,
    covariates: Vec<f64>,
}

/// Borrowed view of a single observation.
#[derive(Debug, Clone, Copy)]
pub struct ObsView<'a> {
    data: &'a ChoiceDataset,
    index: usize,
}

impl ChoiceDataset {
    /// Assembles and validates a dataset from raw parts.
    ///
    /// `available` and `covariates` are row major over `(observation, alternative)`;
    /// covariate values within a row follow `covariate_names`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        alternative_labels: Vec<String>,
        covariate_names: Vec<String>,
        respondents: Vec<String>,
        obs_respondent: Vec<u32>,
        obs_labels: Vec<String>,
        chosen: Vec<u32>,
        available: Vec<bool>,
        covariates: Vec<f64>,
    ) -> Result<Self> {
        let data = ChoiceDataset {
            alternative_labels,
            covariate_names,
            respondents,
            obs_respondent,
            obs_labels,
            chosen,
            available,
            covariates,
        };
        data.validate()?;
        Ok(data)
    }

    fn validate(&self) -> Result<()> {
        let q = self.n_observations();
        let i = self.n_alternatives();
        let c = self.n_covariates();
        if q < 1 {
            return Err(NlvError::Validation("dataset has no observations".into()));
        }
        if i < 2 {
            return Err(NlvError::Validation(
                "dataset needs at least 2 alternatives".into(),
            ));
        }
        if self.respondents.is_empty() {
            return Err(NlvError::Validation("dataset has no respondents".into()));
        }
        if self.obs_respondent.len() != q
            || self.obs_labels.len() != q
            || self.available.len() != q * i
            || self.covariates.len() != q * i * c
        {
            return Err(NlvError::Validation(
                "internal dataset dimensions are inconsistent".into(),
            ));
        }
        for (qi, &r) in self.obs_respondent.iter().enumerate() {
            if r as usize >= self.respondents.len() {
                return Err(NlvError::Validation(format!(
                    "observation {} references unknown respondent index {r}",
                    self.obs_labels[qi]
                )));
            }
        }
        for qi in 0..q {
            let avail = &self.available[qi * i..(qi + 1) * i];
            let n_avail = avail.iter().filter(|&&a| a).count();
            if n_avail < 2 {
                return Err(NlvError::Validation(format!(
                    "observation {} has {n_avail} available alternative(s); at least 2 required",
                    self.obs_labels[qi]
                )));
            }
            let ch = self.chosen[qi] as usize;
            if ch >= i {
                return Err(NlvError::Validation(format!(
                    "observation {} has out-of-range chosen index {ch}",
                    self.obs_labels[qi]
                )));
            }
            if !avail[ch] {
                return Err(NlvError::Validation(format!(
                    "observation {} marks its chosen alternative `{}` unavailable",
                    self.obs_labels[qi], self.alternative_labels[ch]
                )));
            }
        }
        if let Some(pos) = self.covariates.iter().position(|v| !v.is_finite()) {
            let row = pos / (i * c);
            return Err(NlvError::Validation(format!(
                "non-finite covariate value in observation {}",
                self.obs_labels[row]
            )));
        }
        Ok(())
    }

    pub fn n_observations(&self) -> usize {
        self.chosen.len()
    }

    pub fn n_alternatives(&self) -> usize {
        self.alternative_labels.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_respondents(&self) -> usize {
        self.respondents.len()
    }

    pub fn alternative_labels(&self) -> &[String] {
        &self.alternative_labels
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn respondents(&self) -> &[String] {
        &self.respondents
    }

    pub fn observation(&self, q: usize) -> ObsView<'_> {
        assert!(q < self.n_observations(), "observation index out of range");
        ObsView {
            data: self,
            index: q,
        }
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Observed choice counts per alternative.
    pub fn observed_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_alternatives()];
        for &c in &self.chosen {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Observed choice shares per alternative (fractions of Q).
    pub fn observed_shares(&self) -> Vec<f64> {
        let q = self.n_observations() as f64;
        self.observed_counts()
            .into_iter()
            .map(|c| c as f64 / q)
            .collect()
    }

    /// Writes the dataset back out in the long CSV format.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "resp_id".to_string(),
            "obs_id".to_string(),
            "alt".to_string(),
            "avail".to_string(),
            "chosen".to_string(),
        ];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)
            .map_err(|e| NlvError::csv("<writer>", e))?;
        let i = self.n_alternatives();
        let c = self.n_covariates();
        for q in 0..self.n_observations() {
            for a in 0..i {
                let mut rec = vec![
                    self.respondents[self.obs_respondent[q] as usize].clone(),
                    self.obs_labels[q].clone(),
                    self.alternative_labels[a].clone(),
                    if self.available[q * i + a] { "1" } else { "0" }.to_string(),
                    if self.chosen[q] as usize == a {
                        "1"
                    } else {
                        "0"
                    }
                    .to_string(),
                ];
                for k in 0..c {
                    rec.push(format_covariate(self.covariates[(q * i + a) * c + k]));
                }
                w.write_record(&rec)
                    .map_err(|e| NlvError::csv("<writer>", e))?;
            }
        }
        w.flush().map_err(|e| NlvError::io("<writer>", e))?;
        Ok(())
    }
}

fn format_covariate(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e12 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl<'a> ObsView<'a> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn respondent_index(&self) -> usize {
        self.data.obs_respondent[self.index] as usize
    }

    pub fn respondent_id(&self) -> &'a str {
        &self.data.respondents[self.data.obs_respondent[self.index] as usize]
    }

    pub fn label(&self) -> &'a str {
        &self.data.obs_labels[self.index]
    }

    pub fn chosen(&self) -> usize {
        self.data.chosen[self.index] as usize
    }

    pub fn available(&self, alt: usize) -> bool {
        self.data.available[self.index * self.data.n_alternatives() + alt]
    }

    pub fn covariate(&self, alt: usize, covariate: usize) -> f64 {
        let i = self.data.n_alternatives();
        let c = self.data.n_covariates();
        self.data.covariates[(self.index * i + alt) * c + covariate]
    }
}

/// Per-respondent measurement indicators.
#[derive(Debug, Clone)]
pub struct IndicatorPanel {
    indicator_names: Vec<String>,
    respondents: Vec<String>,
    values: Vec<f64>,
    warnings: Vec<String>,
}

impl IndicatorPanel {
    pub fn from_parts(
        indicator_names: Vec<String>,
        respondents: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if respondents.is_empty() || indicator_names.is_empty() {
            return Err(NlvError::Validation(
                "indicator panel needs at least one respondent and one indicator".into(),
            ));
        }
        if values.len() != respondents.len() * indicator_names.len() {
            return Err(NlvError::Validation(
                "indicator panel dimensions are inconsistent".into(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let row = pos / indicator_names.len();
            return Err(NlvError::Validation(format!(
                "non-finite indicator value for respondent {}",
                respondents[row]
            )));
        }
        let mut panel = IndicatorPanel {
            indicator_names,
            respondents,
            values,
            warnings: Vec::new(),
        };
        for g in 0..panel.n_indicators() {
            let col = panel.column(g);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            if col.iter().all(|v| (v - mean).abs() < 1e-12) {
                panel.warnings.push(format!(
                    "indicator `{}` has zero variance",
                    panel.indicator_names[g]
                ));
            }
        }
        Ok(panel)
    }

    pub fn n_respondents(&self) -> usize {
        self.respondents.len()
    }

    pub fn n_indicators(&self) -> usize {
        self.indicator_names.len()
    }

    pub fn indicator_names(&self) -> &[String] {
        &self.indicator_names
    }

    pub fn respondents(&self) -> &[String] {
        &self.respondents
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let g = self.n_indicators();
        &self.values[n * g..(n + 1) * g]
    }

    pub fn column(&self, g: usize) -> Vec<f64> {
        let width = self.n_indicators();
        self.values.iter().skip(g).step_by(width).copied().collect()
    }

    /// Column means, in indicator order.
    pub fn means(&self) -> Vec<f64> {
        let n = self.n_respondents() as f64;
        (0..self.n_indicators())
            .map(|g| self.column(g).iter().sum::<f64>() / n)
            .collect()
    }

    pub fn respondent_index(&self, id: &str) -> Option<usize> {
        self.respondents.iter().position(|r| r == id)
    }

    /// Checks that every dataset respondent has exactly one indicator row.
    pub fn validate_against(&self, data: &ChoiceDataset) -> Result<()> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for r in &self.respondents {
            *seen.entry(r.as_str()).or_insert(0) += 1;
        }
        for (id, count) in &seen {
            if *count > 1 {
                return Err(NlvError::Validation(format!(
                    "respondent {id} appears {count} times in the indicator panel"
                )));
            }
        }
        for r in data.respondents() {
            if !seen.contains_key(r.as_str()) {
                return Err(NlvError::Validation(format!(
                    "respondent {r} is present in the choice data but missing from the indicator panel"
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["resp_id".to_string()];
        header.extend(self.indicator_names.iter().cloned());
        w.write_record(&header)
            .map_err(|e| NlvError::csv("<writer>", e))?;
        for n in 0..self.n_respondents() {
            let mut rec = vec![self.respondents[n].clone()];
            rec.extend(self.row(n).iter().map(|v| format_covariate(*v)));
            w.write_record(&rec)
                .map_err(|e| NlvError::csv("<writer>", e))?;
        }
        w.flush().map_err(|e| NlvError::io("<writer>", e))?;
        Ok(())
    }
}

/// Loads a long-format choice CSV per the given schema.
pub fn load_choice_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ChoiceDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| NlvError::io(path, e))?;
    read_choice_csv(file, schema, path)
}

/// Reads choice data from any source; `origin` is used in error messages.
pub fn read_choice_csv<R: Read>(
    reader: R,
    schema: &CsvSchema,
    origin: impl Into<PathBuf>,
) -> Result<ChoiceDataset> {
    let origin = origin.into();
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| NlvError::csv(&origin, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| NlvError::MissingColumn {
                column: name.to_string(),
                path: origin.clone(),
            })
    };
    let resp_col = col(&schema.respondent_col)?;
    let obs_col = col(&schema.observation_col)?;
    let alt_col = col(&schema.alternative_col)?;
    let chosen_col = col(&schema.chosen_col)?;
    let avail_col = match &schema.availability_col {
        Some(name) => Some(col(name)?),
        None => None,
    };

    let reserved = [resp_col, obs_col, alt_col, chosen_col]
        .into_iter()
        .chain(avail_col)
        .collect::<Vec<_>>();
    let covariate_cols: Vec<usize> = match &schema.covariate_cols {
        Some(names) => names.iter().map(|n| col(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|c| !reserved.contains(c))
            .collect(),
    };
    for (raw, _) in schema.categorical.iter().zip(0..) {
        if !headers.contains(raw.0) {
            return Err(NlvError::MissingColumn {
                column: raw.0.clone(),
                path: origin.clone(),
            });
        }
    }

    struct RawRow {
        line: u64,
        resp: String,
        obs: String,
        alt: String,
        avail: bool,
        chosen: bool,
        covs: Vec<String>,
    }

    let mut rows: Vec<RawRow> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| NlvError::csv(&origin, e))?;
        let line = idx as u64 + 2; // 1-based, after header
        let get = |c: usize| record.get(c).unwrap_or("").trim().to_string();
        let avail = match avail_col {
            Some(c) => parse_flag(&get(c), line, &origin, "avail")?,
            None => true,
        };
        rows.push(RawRow {
            line,
            resp: get(resp_col),
            obs: get(obs_col),
            alt: get(alt_col),
            avail,
            chosen: parse_flag(&get(chosen_col), line, &origin, "chosen")?,
            covs: covariate_cols.iter().map(|&c| get(c)).collect(),
        });
    }
    if rows.is_empty() {
        return Err(NlvError::Validation(format!(
            "`{}` contains no data rows",
            origin.display()
        )));
    }

    // Alternative labels ordered by first appearance.
    let mut alternative_labels: Vec<String> = Vec::new();
    for r in &rows {
        if !alternative_labels.contains(&r.alt) {
            alternative_labels.push(r.alt.clone());
        }
    }
    let alt_index: HashMap<&str, usize> = alternative_labels
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();

    // Dummy-encode categoricals: k observed levels yield k-1 columns.
    let mut covariate_names: Vec<String> = Vec::new();
    let mut encoders: Vec<CovariateEncoder> = Vec::new();
    for (k, &c) in covariate_cols.iter().enumerate() {
        let name = headers[c].clone();
        if let Some(base) = schema.categorical.get(&name) {
            let mut levels: Vec<String> = Vec::new();
            for r in &rows {
                if !levels.contains(&r.covs[k]) {
                    levels.push(r.covs[k].clone());
                }
            }
            levels.sort();
            let base_level = match base {
                Some(b) => {
                    if !levels.contains(b) {
                        return Err(NlvError::Validation(format!(
                            "categorical `{name}`: base level `{b}` never occurs"
                        )));
                    }
                    b.clone()
                }
                None => levels[0].clone(),
            };
            let emit: Vec<String> = levels.into_iter().filter(|l| *l != base_level).collect();
            for level in &emit {
                covariate_names.push(format!("{name}_{level}"));
            }
            encoders.push(CovariateEncoder::Categorical {
                raw: k,
                levels: emit,
            });
        } else {
            covariate_names.push(name);
            encoders.push(CovariateEncoder::Numeric { raw: k });
        }
    }

    // Group rows into observations by (respondent, obs id), first appearance order.
    let mut respondents: Vec<String> = Vec::new();
    let mut resp_index: HashMap<String, u32> = HashMap::new();
    let mut obs_key_index: HashMap<(String, String), usize> = HashMap::new();
    let mut obs_order: Vec<(String, String)> = Vec::new();
    for r in &rows {
        let key = (r.resp.clone(), r.obs.clone());
        if !obs_key_index.contains_key(&key) {
            obs_key_index.insert(key.clone(), obs_order.len());
            obs_order.push(key);
        }
        if !resp_index.contains_key(&r.resp) {
            resp_index.insert(r.resp.clone(), respondents.len() as u32);
            respondents.push(r.resp.clone());
        }
    }

    let q = obs_order.len();
    let i = alternative_labels.len();
    let c = covariate_names.len();
    if i < 2 {
        return Err(NlvError::Validation(format!(
            "`{}` lists only {i} alternative(s); at least 2 required",
            origin.display()
        )));
    }
    let mut available = vec![false; q * i];
    let mut covariates = vec![0f64; q * i * c];
    let mut chosen: Vec<Option<u32>> = vec![None; q];
    let mut seen_row = vec![false; q * i];
    let mut obs_respondent = vec![0u32; q];
    let mut obs_labels = vec![String::new(); q];

    for r in &rows {
        let qi = obs_key_index[&(r.resp.clone(), r.obs.clone())];
        let ai = alt_index[r.alt.as_str()];
        if seen_row[qi * i + ai] {
            return Err(NlvError::Validation(format!(
                "line {}: duplicate row for observation ({}, {}) alternative `{}`",
                r.line, r.resp, r.obs, r.alt
            )));
        }
        seen_row[qi * i + ai] = true;
        obs_respondent[qi] = resp_index[&r.resp];
        obs_labels[qi] = format!("({}, {})", r.resp, r.obs);
        available[qi * i + ai] = r.avail;
        if r.chosen {
            if !r.avail {
                return Err(NlvError::Validation(format!(
                    "line {}: observation ({}, {}) chooses `{}` which is marked unavailable",
                    r.line, r.resp, r.obs, r.alt
                )));
            }
            if let Some(prev) = chosen[qi] {
                return Err(NlvError::Validation(format!(
                    "line {}: observation ({}, {}) has multiple chosen alternatives (`{}` and `{}`)",
                    r.line, r.resp, r.obs, alternative_labels[prev as usize], r.alt
                )));
            }
            chosen[qi] = Some(ai as u32);
        }
        let mut out = 0usize;
        for enc in &encoders {
            match enc {
                CovariateEncoder::Numeric { raw } => {
                    let text = &r.covs[*raw];
                    let v: f64 = text.parse().map_err(|_| {
                        NlvError::Validation(format!(
                            "line {}: covariate `{}` has non-numeric value `{}`",
                            r.line, covariate_names[out], text
                        ))
                    })?;
                    covariates[(qi * i + ai) * c + out] = v;
                    out += 1;
                }
                CovariateEncoder::Categorical { raw, levels } => {
                    for level in levels {
                        covariates[(qi * i + ai) * c + out] =
                            if &r.covs[*raw] == level { 1.0 } else { 0.0 };
                        out += 1;
                    }
                }
            }
        }
    }

    let mut chosen_final = vec![0u32; q];
    for (qi, ch) in chosen.iter().enumerate() {
        match ch {
            Some(a) => chosen_final[qi] = *a,
            None => {
                return Err(NlvError::Validation(format!(
                    "observation {} has no chosen alternative",
                    obs_labels[qi]
                )))
            }
        }
    }

    ChoiceDataset::from_parts(
        alternative_labels,
        covariate_names,
        respondents,
        obs_respondent,
        obs_labels,
        chosen_final,
        available,
        covariates,
    )
}

enum CovariateEncoder {
    Numeric { raw: usize },
    Categorical { raw: usize, levels: Vec<String> },
}

fn parse_flag(text: &str, line: u64, origin: &Path, what: &str) -> Result<bool> {
    match text {
        "0" | "false" | "FALSE" => Ok(false),
        "1" | "true" | "TRUE" => Ok(true),
        other => Err(NlvError::Validation(format!(
            "line {line} of `{}`: `{what}` must be 0/1, got `{other}`",
            origin.display()
        ))),
    }
}

/// Loads an indicator CSV: `resp_id` plus one column per indicator.
pub fn load_indicator_csv(path: impl AsRef<Path>) -> Result<IndicatorPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| NlvError::io(path, e))?;
    read_indicator_csv(file, path)
}

pub fn read_indicator_csv<R: Read>(
    reader: R,
    origin: impl Into<PathBuf>,
) -> Result<IndicatorPanel> {
    let origin = origin.into();
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| NlvError::csv(&origin, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let resp_col =
        headers
            .iter()
            .position(|h| h == "resp_id")
            .ok_or_else(|| NlvError::MissingColumn {
                column: "resp_id".to_string(),
                path: origin.clone(),
            })?;
    let indicator_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != resp_col)
        .map(|(_, h)| h.clone())
        .collect();
    if indicator_names.is_empty() {
        return Err(NlvError::Validation(format!(
            "`{}` has no indicator columns",
            origin.display()
        )));
    }

    let mut respondents = Vec::new();
    let mut values = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| NlvError::csv(&origin, e))?;
        let line = idx + 2;
        respondents.push(record.get(resp_col).unwrap_or("").trim().to_string());
        for (c, _h) in headers.iter().enumerate() {
            if c == resp_col {
                continue;
            }
            let text = record.get(c).unwrap_or("").trim();
            let v: f64 = text.parse().map_err(|_| {
                NlvError::Validation(format!(
                    "line {line} of `{}`: indicator value `{text}` is not numeric",
                    origin.display()
                ))
            })?;
            if !v.is_finite() {
                return Err(NlvError::Validation(format!(
                    "line {line} of `{}`: non-finite indicator value",
                    origin.display()
                )));
            }
            values.push(v);
        }
    }
    IndicatorPanel::from_parts(indicator_names, respondents, values)
}
