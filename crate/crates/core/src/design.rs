//! Survey design metadata and pairwise inclusion probabilities.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Lower clamp for approximated pair probabilities.
pub const PAIR_PROB_FLOOR: f64 = 1e-12;

/// Per-observation design columns.
///
/// Stage-1 probabilities are the probabilities of the model groups (schools),
/// stage-2 probabilities are conditional on the group. The optional pair
/// column carries `π_{jk|i}` for every pair inside the observation's group
/// and must therefore be constant within a group, as must the population
/// cluster size.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurveyDesign {
    pub stratum: Vec<u32>,
    pub psu: Vec<u32>,
    pub group: Vec<u32>,
    pub p_stage1: Vec<f64>,
    pub p_stage2: Vec<f64>,
    pub p_pair: Option<Vec<f64>>,
    pub pop_cluster_size: Option<Vec<f64>>,
}

impl SurveyDesign {
    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    /// Keep only the observations at `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> SurveyDesign {
        fn pick<T: Copy>(v: &[T], rows: &[usize]) -> Vec<T> {
            rows.iter().map(|&r| v[r]).collect()
        }
        SurveyDesign {
            stratum: pick(&self.stratum, rows),
            psu: pick(&self.psu, rows),
            group: pick(&self.group, rows),
            p_stage1: pick(&self.p_stage1, rows),
            p_stage2: pick(&self.p_stage2, rows),
            p_pair: self.p_pair.as_deref().map(|v| pick(v, rows)),
            pop_cluster_size: self.pop_cluster_size.as_deref().map(|v| pick(v, rows)),
        }
    }
}

/// How the within-group pair probabilities of a group were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PairProbPath {
    /// Supplied by the user.
    Supplied,
    /// Exact simple-random-sampling joint probability.
    ExactSrs,
    /// Hájek approximation from the marginal probabilities.
    Hajek,
    /// Group of size one: no pairs.
    NoPairs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDesign {
    pub key: u32,
    pub psu: u32,
    pub stratum: u32,
    /// Observation indices in the original table, ascending.
    pub rows: Vec<usize>,
    pub pi: f64,
    pub pi_cond: Vec<f64>,
    /// `π_{jk|i}` for local pairs `j < k` in lexicographic order.
    pub pair_cond: Vec<f64>,
    pub pop_size: Option<f64>,
    pub path: PairProbPath,
}

impl GroupDesign {
    pub fn size(&self) -> usize {
        self.rows.len()
    }
}

/// A design that passed validation, grouped by model group (sorted by key).
#[derive(Debug, Clone, PartialEq)]
pub struct CheckedDesign {
    pub groups: Vec<GroupDesign>,
}

impl CheckedDesign {
    /// Number of groups whose pair probabilities came from each path.
    pub fn path_counts(&self) -> BTreeMap<PairProbPath, usize> {
        let mut out = BTreeMap::new();
        for g in &self.groups {
            *out.entry(g.path).or_insert(0) += 1;
        }
        out
    }

    /// Number of distinct PSUs in each stratum.
    pub fn psus_per_stratum(&self) -> BTreeMap<u32, usize> {
        let mut seen: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for g in &self.groups {
            let v = seen.entry(g.stratum).or_default();
            if !v.contains(&g.psu) {
                v.push(g.psu);
            }
        }
        seen.into_iter().map(|(h, v)| (h, v.len())).collect()
    }
}

/// Index of local pair `(j, k)`, `j < k`, among the `m(m-1)/2` pairs of a group of size `m`.
#[inline]
pub fn pair_index(m: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k < m);
    j * (2 * m - j - 1) / 2 + (k - j - 1)
}

/// Joint inclusion probability of two given units under simple random sampling
/// of `n` from `pop` without replacement.
pub fn pair_probability_srs(n: usize, pop: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("sample size {n} has no pairs")));
    }
    if n > pop {
        return Err(Error::InvalidArgument(format!("sample size {n} exceeds population size {pop}")));
    }
    Ok((n as f64 * (n - 1) as f64) / (pop as f64 * (pop - 1) as f64))
}

/// Hájek approximation to the joint inclusion probabilities of all pairs of
/// sampled units. Returns `(j, k, π_jk)` with `j < k` indices into `pi`.
///
/// The denominator `Σ_k π_k(1-π_k)` is estimated by `Σ_{k sampled} (1-π_k)`.
/// When that sum is zero every sampled unit is a certainty unit and the exact
/// product is returned.
pub fn hajek_pair_approx(pi: &[f64], sampled: &[bool]) -> Result<Vec<(usize, usize, f64)>> {
    if pi.len() != sampled.len() {
        return Err(Error::InvalidArgument("probability and flag lengths differ".into()));
    }
    for &p in pi {
        check_prob("marginal probability", p)?;
    }
    let idx: Vec<usize> = (0..pi.len()).filter(|&i| sampled[i]).collect();
    if idx.len() < 2 {
        return Err(Error::InvalidArgument("fewer than two sampled units".into()));
    }
    let denom: f64 = idx.iter().map(|&k| 1.0 - pi[k]).sum();
    let mut out = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &j) in idx.iter().enumerate() {
        for &k in &idx[a + 1..] {
            let prod = pi[j] * pi[k];
            let p = if denom > 0.0 { prod * (1.0 - (1.0 - pi[j]) * (1.0 - pi[k]) / denom) } else { prod };
            let upper = pi[j].min(pi[k]);
            out.push((j, k, p.clamp(PAIR_PROB_FLOOR, upper)));
        }
    }
    Ok(out)
}

fn check_prob(what: &str, p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Probability { what: String::from(what), value: p })
    }
}

fn constant_within<T: PartialEq + Copy + core::fmt::Debug>(
    vals: &[T],
    rows: &[usize],
    key: u32,
    what: &str,
) -> Result<T> {
    let first = vals[rows[0]];
    if let Some(&r) = rows.iter().find(|&&r| vals[r] != first) {
        return Err(Error::Design(format!(
            "{what} is not constant within group {key} (row {r}: {:?} vs {:?})",
            vals[r], first
        )));
    }
    Ok(first)
}

/// Relative tolerance used to decide whether stage-2 probabilities are those
/// of simple random sampling.
const SRS_TOL: f64 = 1e-8;

/// Check nesting and probability invariants and fill the within-group pair
/// probabilities.
///
/// Pair probabilities come from the supplied column when present, otherwise
/// from exact SRS formulas when every unit in a group has the same stage-2
/// probability `n_i / N_i` (with `N_i` given, or recovered as an integer from
/// `n_i / π`), otherwise from the Hájek approximation.
pub fn validate_design(design: &SurveyDesign, n_obs: usize) -> Result<CheckedDesign> {
    let cols: [(&str, usize); 5] = [
        ("stratum", design.stratum.len()),
        ("psu", design.psu.len()),
        ("group", design.group.len()),
        ("p1", design.p_stage1.len()),
        ("p2", design.p_stage2.len()),
    ];
    for (name, len) in cols {
        if len != n_obs {
            return Err(Error::Design(format!("column `{name}` has {len} values for {n_obs} observations")));
        }
    }
    if let Some(v) = &design.p_pair {
        if v.len() != n_obs {
            return Err(Error::Design("column `ppair` has the wrong length".into()));
        }
    }
    if let Some(v) = &design.pop_cluster_size {
        if v.len() != n_obs {
            return Err(Error::Design("column `Npop` has the wrong length".into()));
        }
    }
    if n_obs == 0 {
        return Err(Error::Design("no observations".into()));
    }
    for r in 0..n_obs {
        check_prob("p1", design.p_stage1[r])?;
        check_prob("p2", design.p_stage2[r])?;
        if let Some(v) = &design.p_pair {
            check_prob("ppair", v[r])?;
        }
    }

    let mut by_group: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (r, &g) in design.group.iter().enumerate() {
        by_group.entry(g).or_default().push(r);
    }
    let mut psu_stratum: BTreeMap<u32, u32> = BTreeMap::new();
    let mut groups = Vec::with_capacity(by_group.len());
    for (key, rows) in by_group {
        let psu = constant_within(&design.psu, &rows, key, "PSU")?;
        let stratum = constant_within(&design.stratum, &rows, key, "stratum")?;
        match psu_stratum.get(&psu) {
            Some(&h) if h != stratum => {
                return Err(Error::Design(format!("PSU {psu} appears in strata {h} and {stratum}")));
            }
            _ => {
                psu_stratum.insert(psu, stratum);
            }
        }
        let pi = constant_within(&design.p_stage1, &rows, key, "stage-1 probability")?;
        let pop_size = match &design.pop_cluster_size {
            Some(v) => {
                let n_pop = constant_within(v, &rows, key, "population cluster size")?;
                if !(n_pop.is_finite() && n_pop >= rows.len() as f64 && libm::trunc(n_pop) == n_pop) {
                    return Err(Error::Design(format!(
                        "population size {n_pop} of group {key} is not an integer >= sample size {}",
                        rows.len()
                    )));
                }
                Some(n_pop)
            }
            None => None,
        };
        let pi_cond: Vec<f64> = rows.iter().map(|&r| design.p_stage2[r]).collect();
        let m = rows.len();
        let (pair_cond, path) = if m < 2 {
            (Vec::new(), PairProbPath::NoPairs)
        } else if let Some(v) = &design.p_pair {
            let p = constant_within(v, &rows, key, "pair probability")?;
            for a in 0..m {
                for b in a + 1..m {
                    if p > pi_cond[a].min(pi_cond[b]) * (1.0 + 1e-12) {
                        return Err(Error::Design(format!(
                            "pair probability {p} in group {key} exceeds a marginal probability"
                        )));
                    }
                }
            }
            (alloc::vec![p; m * (m - 1) / 2], PairProbPath::Supplied)
        } else if let Some(n_pop) = srs_population(&pi_cond, pop_size) {
            let p = pair_probability_srs(m, n_pop)?;
            (alloc::vec![p; m * (m - 1) / 2], PairProbPath::ExactSrs)
        } else {
            let flags = alloc::vec![true; m];
            let approx = hajek_pair_approx(&pi_cond, &flags)?;
            (approx.into_iter().map(|(_, _, p)| p).collect(), PairProbPath::Hajek)
        };
        groups.push(GroupDesign { key, psu, stratum, rows, pi, pi_cond, pair_cond, pop_size, path });
    }
    Ok(CheckedDesign { groups })
}

/// Population size implied by SRS within a group, if the stage-2
/// probabilities are consistent with SRS.
fn srs_population(pi_cond: &[f64], pop_size: Option<f64>) -> Option<usize> {
    let m = pi_cond.len();
    let p0 = pi_cond[0];
    if pi_cond.iter().any(|&p| (p - p0).abs() > SRS_TOL * p0) {
        return None;
    }
    let implied = m as f64 / p0;
    match pop_size {
        Some(n_pop) => ((implied - n_pop).abs() <= SRS_TOL * n_pop).then_some(n_pop as usize),
        None => {
            let rounded = libm::round(implied);
            ((implied - rounded).abs() <= 1e-6 * rounded && rounded >= m as f64).then_some(rounded as usize)
        }
    }
}
