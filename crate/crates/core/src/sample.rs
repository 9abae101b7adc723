//! Observation tables and their split into model groups.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::design::{validate_design, PairProbPath, SurveyDesign};
use crate::error::{Error, Result};
use crate::formula::{ModelFormula, TermList};

/// Named numeric columns of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    n_rows: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Frame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        self.push_column(name, values)?;
        Ok(self)
    }

    pub fn push_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Data(format!("duplicate column `{name}`")));
        }
        if !self.names.is_empty() && values.len() != self.n_rows {
            return Err(Error::Data(format!("column `{name}` has {} rows, expected {}", values.len(), self.n_rows)));
        }
        self.n_rows = values.len();
        self.names.push(name.into());
        self.columns.push(values);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name).ok_or_else(|| Error::Data(format!("missing column `{name}`")))
    }
}

/// One model group with its design information.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub key: u32,
    pub psu: u32,
    pub stratum: u32,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// Stage-1 inclusion probability of the group.
    pub pi: f64,
    /// Stage-2 probabilities conditional on the group.
    pub pi_cond: Vec<f64>,
    /// `π_{jk|i}` for local pairs in lexicographic order.
    pub pair_cond: Vec<f64>,
    pub pop_size: Option<f64>,
}

impl GroupData {
    pub fn m(&self) -> usize {
        self.y.len()
    }
}

/// A validated sample ready for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveySample {
    pub groups: Vec<GroupData>,
    pub fixed_names: Vec<String>,
    pub random_names: Vec<String>,
    /// Sizes of the independent random-effect blocks.
    pub blocks: Vec<usize>,
    pub pair_paths: BTreeMap<PairProbPath, usize>,
}

fn design_matrix(frame: &Frame, terms: &TermList, rows: &[usize]) -> Result<DMatrix<f64>> {
    let cols: Vec<&[f64]> = terms.vars.iter().map(|v| frame.require(v)).collect::<Result<_>>()?;
    let width = terms.width();
    let off = usize::from(terms.intercept);
    let mut m = DMatrix::zeros(rows.len(), width);
    for (a, &r) in rows.iter().enumerate() {
        if terms.intercept {
            m[(a, 0)] = 1.0;
        }
        for (c, col) in cols.iter().enumerate() {
            m[(a, off + c)] = col[r];
        }
    }
    Ok(m)
}

impl SurveySample {
    /// Split `frame` into model groups. The design's group column is the
    /// formula's grouping factor.
    pub fn build(formula: &ModelFormula, frame: &Frame, design: &SurveyDesign) -> Result<Self> {
        formula.grouping_factor()?;
        if formula.fixed.width() == 0 {
            return Err(Error::InvalidFormula("model has no fixed effects".into()));
        }
        let checked = validate_design(design, frame.n_rows())?;
        let y = frame.require(&formula.response)?;
        for name in formula.fixed.vars.iter().chain(formula.re_groups.iter().flat_map(|g| g.terms.vars.iter())) {
            let col = frame.require(name)?;
            if let Some(r) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite value in `{name}` at row {r}")));
            }
        }
        if let Some(r) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite response at row {r}")));
        }
        let mut groups = Vec::with_capacity(checked.groups.len());
        for g in &checked.groups {
            let x = design_matrix(frame, &formula.fixed, &g.rows)?;
            let mut zs = Vec::with_capacity(formula.re_groups.len());
            for re in &formula.re_groups {
                zs.push(design_matrix(frame, &re.terms, &g.rows)?);
            }
            let q: usize = zs.iter().map(|z| z.ncols()).sum();
            let mut z = DMatrix::zeros(g.rows.len(), q);
            let mut off = 0;
            for block in zs {
                let w = block.ncols();
                z.view_mut((0, off), (g.rows.len(), w)).copy_from(&block);
                off += w;
            }
            groups.push(GroupData {
                key: g.key,
                psu: g.psu,
                stratum: g.stratum,
                y: DVector::from_iterator(g.rows.len(), g.rows.iter().map(|&r| y[r])),
                x,
                z,
                pi: g.pi,
                pi_cond: g.pi_cond.clone(),
                pair_cond: g.pair_cond.clone(),
                pop_size: g.pop_size,
            });
        }
        Ok(SurveySample {
            groups,
            fixed_names: formula.fixed_names(),
            random_names: formula.random_names(),
            blocks: formula.block_sizes(),
            pair_paths: checked.path_counts(),
        })
    }

    /// Assemble a sample from prepared groups. Groups are re-sorted by key.
    pub fn from_groups(
        mut groups: Vec<GroupData>,
        fixed_names: Vec<String>,
        random_names: Vec<String>,
        blocks: Vec<usize>,
    ) -> Result<Self> {
        let p = fixed_names.len();
        let q = random_names.len();
        if blocks.iter().sum::<usize>() != q {
            return Err(Error::InvalidArgument("block sizes do not add up to the random-effect count".into()));
        }
        for g in &groups {
            let m = g.m();
            if m == 0 || g.x.shape() != (m, p) || g.z.shape() != (m, q) || g.pi_cond.len() != m {
                return Err(Error::InvalidArgument(format!("inconsistent dimensions in group {}", g.key)));
            }
            if m >= 2 && g.pair_cond.len() != m * (m - 1) / 2 {
                return Err(Error::MissingPairProbability { group: g.key });
            }
        }
        groups.sort_by_key(|g| g.key);
        Ok(SurveySample { groups, fixed_names, random_names, blocks, pair_paths: BTreeMap::new() })
    }

    pub fn p(&self) -> usize {
        self.fixed_names.len()
    }

    pub fn q(&self) -> usize {
        self.random_names.len()
    }

    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(|g| g.m()).sum()
    }

    /// Same groups with the design replaced by a census (all probabilities one).
    pub fn as_census(&self) -> SurveySample {
        let mut out = self.clone();
        for g in &mut out.groups {
            g.pi = 1.0;
            g.pi_cond.iter_mut().for_each(|p| *p = 1.0);
            g.pair_cond.iter_mut().for_each(|p| *p = 1.0);
        }
        out
    }
}
