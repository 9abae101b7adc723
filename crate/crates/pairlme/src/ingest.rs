//! CSV ingestion into a numeric frame plus survey design columns.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use pairlme_core::design::SurveyDesign;
use pairlme_core::formula::ModelFormula;
use pairlme_core::sample::{Frame, SurveySample};

use crate::error::{CliError, CliResult};

/// Names of the design columns in the input file.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignColumns {
    pub stratum: String,
    pub psu: String,
    /// Defaults to the formula's grouping factor.
    pub group: Option<String>,
    pub p1: String,
    pub p2: String,
    pub ppair: Option<String>,
    pub npop: Option<String>,
}

impl Default for DesignColumns {
    fn default() -> Self {
        DesignColumns {
            stratum: "stratum".into(),
            psu: "psu".into(),
            group: None,
            p1: "p1".into(),
            p2: "p2".into(),
            ppair: None,
            npop: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub frame: Frame,
    pub design: SurveyDesign,
    pub rows_read: usize,
    /// Rows dropped for missing values in a used column.
    pub dropped: usize,
    /// Original labels of the group codes.
    pub group_labels: Vec<String>,
}

impl Ingested {
    pub fn sample(&self, formula: &ModelFormula) -> CliResult<SurveySample> {
        Ok(SurveySample::build(formula, &self.frame, &self.design)?)
    }
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "N/A" | "NaN" | "nan" | ".")
}

/// First-appearance integer codes for string labels.
#[derive(Default)]
struct Codes {
    map: HashMap<String, u32>,
    labels: Vec<String>,
}

impl Codes {
    fn code(&mut self, label: &str) -> u32 {
        if let Some(&c) = self.map.get(label) {
            return c;
        }
        let c = self.labels.len() as u32;
        self.map.insert(label.to_string(), c);
        self.labels.push(label.to_string());
        c
    }
}

pub fn ingest_csv(path: &Path, formula: &ModelFormula, cols: &DesignColumns) -> CliResult<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| CliError::user(format!("cannot open {}: {e}", path.display())))?;
    ingest_reader(file, formula, cols)
}

pub fn ingest_reader<R: Read>(reader: R, formula: &ModelFormula, cols: &DesignColumns) -> CliResult<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| CliError::user(format!("missing column `{name}`")))
    };

    let group_name = match &cols.group {
        Some(g) => g.clone(),
        None => formula.grouping_factor()?.to_string(),
    };
    let mut numeric: Vec<String> = vec![formula.response.clone()];
    for v in formula.fixed.vars.iter().chain(formula.re_groups.iter().flat_map(|g| g.terms.vars.iter())) {
        if !numeric.contains(v) {
            numeric.push(v.clone());
        }
    }
    let mut design_numeric = vec![cols.p1.clone(), cols.p2.clone()];
    design_numeric.extend(cols.ppair.iter().cloned());
    design_numeric.extend(cols.npop.iter().cloned());
    let all_numeric: Vec<String> = numeric.iter().chain(&design_numeric).cloned().collect();
    let num_idx: Vec<usize> = all_numeric.iter().map(|n| find(n)).collect::<CliResult<_>>()?;
    let id_idx = [find(&cols.stratum)?, find(&cols.psu)?, find(&group_name)?];

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); all_numeric.len()];
    let (mut strata, mut psus, mut groups) = (Codes::default(), Codes::default(), Codes::default());
    let (mut stratum, mut psu, mut group) = (Vec::new(), Vec::new(), Vec::new());
    let mut rows_read = 0;
    let mut dropped = 0;
    for rec in rdr.records() {
        let rec = rec?;
        rows_read += 1;
        let line = rec.position().map_or(rows_read + 1, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        if id_idx.iter().chain(&num_idx).any(|&i| is_missing(field(i))) {
            dropped += 1;
            continue;
        }
        let mut parsed = Vec::with_capacity(num_idx.len());
        for (c, &i) in num_idx.iter().enumerate() {
            let s = field(i);
            let v: f64 = s.parse().map_err(|_| {
                CliError::user(format!("non-numeric value `{s}` in column `{}` at line {line}", all_numeric[c]))
            })?;
            parsed.push(v);
        }
        for (col, v) in values.iter_mut().zip(parsed) {
            col.push(v);
        }
        let h = field(id_idx[0]);
        stratum.push(strata.code(h));
        // PSU labels are only unique within their stratum.
        psu.push(psus.code(&format!("{h}\u{1f}{}", field(id_idx[1]))));
        group.push(groups.code(field(id_idx[2])));
    }
    if stratum.is_empty() {
        return Err(CliError::user(if rows_read == 0 {
            "input has no data rows".to_string()
        } else {
            format!("no rows left after dropping {dropped} with missing values")
        }));
    }

    let mut frame = Frame::new();
    for (name, col) in numeric.iter().zip(values.iter()) {
        frame.push_column(name, col.clone())?;
    }
    let mut rest = values.into_iter().skip(numeric.len());
    let p_stage1 = rest.next().unwrap_or_default();
    let p_stage2 = rest.next().unwrap_or_default();
    let p_pair = cols.ppair.as_ref().map(|_| rest.next().unwrap_or_default());
    let pop_cluster_size = cols.npop.as_ref().map(|_| rest.next().unwrap_or_default());
    let design = SurveyDesign { stratum, psu, group, p_stage1, p_stage2, p_pair, pop_cluster_size };
    Ok(Ingested { frame, design, rows_read, dropped, group_labels: groups.labels })
}
