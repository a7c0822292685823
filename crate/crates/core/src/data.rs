//! Long-format panel ingestion: one row per (person, occasion), grouped by
//! person in chronological order, with covariate standardization and a
//! date-based train/holdout split.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column roles in the input CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub person: String,
    pub date: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub risk_group: Option<String>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
}

/// What to do with a row that has a missing or unparseable required field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// Drop the row and report it.
    #[default]
    Drop,
    /// Abort ingestion with an error naming the line.
    Abort,
}

/// One (person, occasion) row.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    pub person_id: String,
    /// 1-based chronological index within the person.
    pub occasion: u32,
    pub date: NaiveDate,
    pub covariates: Vec<f64>,
    pub outcome: u8,
    pub external_risk_group: Option<u8>,
}

/// Per-column location/scale computed on training rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    /// Population standard deviations; 0 marks a constant column that is
    /// mapped to all-zeros.
    pub sds: Vec<f64>,
}

/// Counters and notes produced by ingestion.
#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub rows_parsed: usize,
    pub rows_dropped: usize,
    pub duplicate_date_pairs: usize,
    pub warnings: Vec<String>,
}

/// An immutable person-grouped panel. Rows are stored person-major and, per
/// person, in occasion order, so the row range of person i plays the role of
/// the incidence matrix W.
#[derive(Clone, Debug)]
pub struct PanelDataset {
    person_ids: Vec<String>,
    person_rows: Vec<Range<usize>>,
    person_of_row: Vec<u32>,
    x: Vec<f64>,
    y: Vec<u8>,
    dates: Vec<NaiveDate>,
    occasions: Vec<u32>,
    risk_groups: Vec<Option<u8>>,
    covariate_names: Vec<String>,
    p: usize,
    standardization: Option<StandardizationParams>,
}

struct RawRow {
    person: String,
    date: NaiveDate,
    outcome: u8,
    covariates: Vec<f64>,
    risk_group: Option<u8>,
    file_order: usize,
}

fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null")
}

fn parse_outcome(field: &str) -> Option<u8> {
    match field.trim() {
        "0" => Some(0),
        "1" => Some(1),
        other => match other.parse::<f64>() {
            Ok(v) if v == 0.0 => Some(0),
            Ok(v) if v == 1.0 => Some(1),
            _ => None,
        },
    }
}

/// Read a long-format CSV according to the schema. Rows are grouped by
/// person (first-appearance order), sorted by date within person with file
/// order breaking ties, and given contiguous occasion indices.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<(PanelDataset, IngestReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(file, schema)
}

pub fn ingest_reader(reader: impl std::io::Read, schema: &SchemaConfig) -> Result<(PanelDataset, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::config(format!("schema column '{name}' not found in header")))
    };
    let person_col = col(&schema.person)?;
    let date_col = col(&schema.date)?;
    let outcome_col = col(&schema.outcome)?;
    let cov_cols: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let group_col = match &schema.risk_group {
        Some(name) => Some(col(name)?),
        None => None,
    };

    let mut report = IngestReport::default();
    let mut rows: Vec<RawRow> = Vec::new();
    'rows: for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = idx + 2; // header is line 1
        report.rows_parsed += 1;
        macro_rules! bad_row {
            ($what:expr) => {{
                match schema.missing_policy {
                    MissingPolicy::Drop => {
                        report.rows_dropped += 1;
                        report.warnings.push(format!("line {line}: dropped ({})", $what));
                        continue 'rows;
                    }
                    MissingPolicy::Abort => {
                        return Err(Error::data(format!("line {line}: {}", $what)));
                    }
                }
            }};
        }

        let person = record.get(person_col).unwrap_or("").trim().to_string();
        if person.is_empty() {
            bad_row!("missing person id");
        }
        let date_field = record.get(date_col).unwrap_or("");
        let date = match NaiveDate::parse_from_str(date_field.trim(), "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) => bad_row!(format!("unparseable date '{date_field}'")),
        };
        let outcome_field = record.get(outcome_col).unwrap_or("");
        let outcome = match parse_outcome(outcome_field) {
            Some(y) => y,
            None => bad_row!(format!("missing or non-binary outcome '{outcome_field}'")),
        };
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for (&c, name) in cov_cols.iter().zip(&schema.covariates) {
            let field = record.get(c).unwrap_or("");
            if is_missing(field) {
                bad_row!(format!("missing covariate '{name}'"));
            }
            match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => covariates.push(v),
                _ => bad_row!(format!("unparseable covariate '{name}'='{field}'")),
            }
        }
        let risk_group = match group_col {
            Some(c) => {
                let field = record.get(c).unwrap_or("");
                if is_missing(field) {
                    None
                } else {
                    match field.trim().parse::<u8>() {
                        Ok(g) if (1..=6).contains(&g) => Some(g),
                        _ => bad_row!(format!("risk group '{field}' not in 1..6")),
                    }
                }
            }
            None => None,
        };
        rows.push(RawRow {
            person,
            date,
            outcome,
            covariates,
            risk_group,
            file_order: idx,
        });
    }

    let dataset = PanelDataset::from_raw_rows(rows, schema.covariates.clone(), &mut report)?;
    Ok((dataset, report))
}

impl PanelDataset {
    fn from_raw_rows(
        mut rows: Vec<RawRow>,
        covariate_names: Vec<String>,
        report: &mut IngestReport,
    ) -> Result<Self> {
        let p = covariate_names.len();
        // Group by first appearance, then date order with stable ties.
        let mut person_order: Vec<String> = Vec::new();
        let mut person_index: HashMap<String, usize> = HashMap::new();
        for row in &rows {
            if !person_index.contains_key(&row.person) {
                person_index.insert(row.person.clone(), person_order.len());
                person_order.push(row.person.clone());
            }
        }
        rows.sort_by(|a, b| {
            (person_index[&a.person], a.date, a.file_order).cmp(&(
                person_index[&b.person],
                b.date,
                b.file_order,
            ))
        });

        let n = rows.len();
        let mut x = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        let mut dates = Vec::with_capacity(n);
        let mut occasions = Vec::with_capacity(n);
        let mut risk_groups = Vec::with_capacity(n);
        let mut person_of_row = Vec::with_capacity(n);
        let mut person_rows: Vec<Range<usize>> = Vec::with_capacity(person_order.len());
        let mut start = 0usize;
        let mut current: Option<usize> = None;
        let mut occ = 0u32;
        for (r, row) in rows.iter().enumerate() {
            let pi = person_index[&row.person];
            if current != Some(pi) {
                if current.is_some() {
                    person_rows.push(start..r);
                }
                start = r;
                occ = 0;
                current = Some(pi);
            }
            if r > start && rows[r - 1].date == row.date {
                report.duplicate_date_pairs += 1;
            }
            occ += 1;
            x.extend_from_slice(&row.covariates);
            y.push(row.outcome);
            dates.push(row.date);
            occasions.push(occ);
            risk_groups.push(row.risk_group);
            person_of_row.push(pi as u32);
        }
        if current.is_some() {
            person_rows.push(start..n);
        }
        if report.duplicate_date_pairs > 0 {
            report.warnings.push(format!(
                "{} duplicate (person, date) pairs kept in file order",
                report.duplicate_date_pairs
            ));
        }
        Ok(PanelDataset {
            person_ids: person_order,
            person_rows,
            person_of_row,
            x,
            y,
            dates,
            occasions,
            risk_groups,
            covariate_names,
            p,
            standardization: None,
        })
    }

    /// Build directly from records; occasion indices are re-derived from
    /// dates (stable in input order within equal dates).
    pub fn from_records(records: Vec<ObservationRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let mut report = IngestReport::default();
        let rows = records
            .into_iter()
            .enumerate()
            .map(|(i, r)| RawRow {
                person: r.person_id,
                date: r.date,
                outcome: r.outcome,
                covariates: r.covariates,
                risk_group: r.external_risk_group,
                file_order: i,
            })
            .collect();
        Self::from_raw_rows(rows, covariate_names, &mut report)
    }

    pub fn n_persons(&self) -> usize {
        self.person_ids.len()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn person_id(&self, person: usize) -> &str {
        &self.person_ids[person]
    }

    pub fn person_index(&self, id: &str) -> Option<usize> {
        self.person_ids.iter().position(|p| p == id)
    }

    /// Row range of one person, in occasion order.
    pub fn rows_of_person(&self, person: usize) -> Range<usize> {
        self.person_rows[person].clone()
    }

    pub fn n_occasions(&self, person: usize) -> usize {
        self.person_rows[person].len()
    }

    pub fn person_of_row(&self, row: usize) -> usize {
        self.person_of_row[row] as usize
    }

    pub fn x_row(&self, row: usize) -> &[f64] {
        &self.x[row * self.p..(row + 1) * self.p]
    }

    pub fn outcome(&self, row: usize) -> u8 {
        self.y[row]
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.y
    }

    pub fn date(&self, row: usize) -> NaiveDate {
        self.dates[row]
    }

    pub fn occasion(&self, row: usize) -> u32 {
        self.occasions[row]
    }

    pub fn risk_group(&self, row: usize) -> Option<u8> {
        self.risk_groups[row]
    }

    pub fn standardization(&self) -> Option<&StandardizationParams> {
        self.standardization.as_ref()
    }

    pub fn records(&self) -> Vec<ObservationRecord> {
        (0..self.n_obs())
            .map(|r| ObservationRecord {
                person_id: self.person_ids[self.person_of_row(r)].clone(),
                occasion: self.occasions[r],
                date: self.dates[r],
                covariates: self.x_row(r).to_vec(),
                outcome: self.y[r],
                external_risk_group: self.risk_groups[r],
            })
            .collect()
    }

    /// Standardize covariate columns. Without `params` the dataset is
    /// treated as a training set and location/scale are computed from it
    /// (population standard deviation); with `params` the given transform is
    /// applied unchanged, as for holdout data. Constant columns map to
    /// all-zeros with a warning when `allow_constant` is set, otherwise they
    /// are an error.
    pub fn standardize(
        &self,
        params: Option<&StandardizationParams>,
        allow_constant: bool,
    ) -> Result<(PanelDataset, StandardizationParams, Vec<String>)> {
        let n = self.n_obs();
        let p = self.p;
        let params = match params {
            Some(p) => p.clone(),
            None => {
                if n == 0 {
                    return Err(Error::data("standardize: empty dataset"));
                }
                let mut means = vec![0.0; p];
                let mut sds = vec![0.0; p];
                for j in 0..p {
                    let mut sum = 0.0;
                    for r in 0..n {
                        sum += self.x[r * p + j];
                    }
                    means[j] = sum / n as f64;
                    let mut ss = 0.0;
                    for r in 0..n {
                        let d = self.x[r * p + j] - means[j];
                        ss += d * d;
                    }
                    sds[j] = (ss / n as f64).sqrt();
                }
                StandardizationParams { means, sds }
            }
        };
        if params.means.len() != p || params.sds.len() != p {
            return Err(Error::config("standardize: params dimension mismatch"));
        }
        let mut warnings = Vec::new();
        for (j, &sd) in params.sds.iter().enumerate() {
            if sd == 0.0 {
                if allow_constant {
                    warnings.push(format!(
                        "covariate '{}' is constant; standardized to all zeros",
                        self.covariate_names[j]
                    ));
                } else {
                    return Err(Error::data(format!(
                        "covariate '{}' has zero variance",
                        self.covariate_names[j]
                    )));
                }
            }
        }
        let mut out = self.clone();
        for r in 0..n {
            for j in 0..p {
                let v = &mut out.x[r * p + j];
                *v = if params.sds[j] == 0.0 {
                    0.0
                } else {
                    (*v - params.means[j]) / params.sds[j]
                };
            }
        }
        out.standardization = Some(params.clone());
        Ok((out, params, warnings))
    }

    /// Split into (train, holdout): rows strictly after the cutoff date form
    /// the holdout. Occasion indices are preserved, so a person seen in both
    /// continues their training sequence.
    pub fn split_train_holdout(&self, cutoff: NaiveDate) -> Result<(PanelDataset, PanelDataset)> {
        let train = self.filter_rows(|r| self.dates[r] <= cutoff);
        let holdout = self.filter_rows(|r| self.dates[r] > cutoff);
        if train.n_obs() == 0 {
            return Err(Error::data("split_train_holdout: empty training split"));
        }
        Ok((train, holdout))
    }

    /// Subset the rows (keeping occasion indices), re-grouping persons.
    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> PanelDataset {
        let mut person_ids = Vec::new();
        let mut person_rows = Vec::new();
        let mut person_of_row = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut dates = Vec::new();
        let mut occasions = Vec::new();
        let mut risk_groups = Vec::new();
        for (pi, range) in self.person_rows.iter().enumerate() {
            let start = y.len();
            for r in range.clone() {
                if keep(r) {
                    x.extend_from_slice(self.x_row(r));
                    y.push(self.y[r]);
                    dates.push(self.dates[r]);
                    occasions.push(self.occasions[r]);
                    risk_groups.push(self.risk_groups[r]);
                    person_of_row.push(person_ids.len() as u32);
                }
            }
            if y.len() > start {
                person_ids.push(self.person_ids[pi].clone());
                person_rows.push(start..y.len());
            }
        }
        PanelDataset {
            person_ids,
            person_rows,
            person_of_row,
            x,
            y,
            dates,
            occasions,
            risk_groups,
            covariate_names: self.covariate_names.clone(),
            p: self.p,
            standardization: self.standardization.clone(),
        }
    }

    /// Histogram of panel sizes: how many persons appear exactly k times.
    pub fn release_count_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for range in &self.person_rows {
            *hist.entry(range.len()).or_insert(0) += 1;
        }
        hist
    }

    /// Canonical serialized form: the input schema plus an occasion_index
    /// column, rows in person-major occasion order.
    pub fn write_csv(&self, mut w: impl Write, schema: &SchemaConfig) -> Result<()> {
        let mut header = vec![
            schema.person.clone(),
            schema.date.clone(),
            "occasion_index".to_string(),
            schema.outcome.clone(),
        ];
        if let Some(g) = &schema.risk_group {
            header.push(g.clone());
        }
        header.extend(self.covariate_names.iter().cloned());
        writeln!(w, "{}", header.join(","))?;
        for r in 0..self.n_obs() {
            let mut fields = vec![
                self.person_ids[self.person_of_row(r)].clone(),
                self.dates[r].format("%Y-%m-%d").to_string(),
                self.occasions[r].to_string(),
                self.y[r].to_string(),
            ];
            if schema.risk_group.is_some() {
                fields.push(match self.risk_groups[r] {
                    Some(g) => g.to_string(),
                    None => String::new(),
                });
            }
            for v in self.x_row(r) {
                fields.push(format!("{v}"));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}
