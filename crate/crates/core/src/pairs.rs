//! Within-group pairs and their sampling weights.

use alloc::string::String;
use alloc::vec::Vec;

use crate::design::pair_index;
use crate::error::{Error, Result};
use crate::sample::SurveySample;

/// All sampled within-group pairs `j < k`, stored flat in (group, j, k) order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    p: usize,
    q: usize,
    /// Index into the sample's group list.
    pub group: Vec<usize>,
    pub rows: Vec<(u32, u32)>,
    /// `1/π_{i,jk}`, used for point estimation.
    pub weight: Vec<f64>,
    /// `1/(π_i π_{j|i} π_{k|i})`, the weight on pair scores in PSU totals.
    pub score_weight: Vec<f64>,
    /// `1/(π_ij π_ik)`, the product form of the sensitivity weight.
    pub product_weight: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<[f64; 2]>,
    pub group_key: Vec<u32>,
    pub group_psu: Vec<u32>,
    pub group_stratum: Vec<u32>,
    pub singletons_dropped: usize,
    pub fixed_names: Vec<String>,
    pub blocks: Vec<usize>,
}

impl PairSet {
    pub fn enumerate(sample: &SurveySample) -> Result<Self> {
        let p = sample.p();
        let q = sample.q();
        let total: usize = sample.groups.iter().map(|g| g.m() * g.m().saturating_sub(1) / 2).sum();
        let mut set = PairSet {
            p,
            q,
            group: Vec::with_capacity(total),
            rows: Vec::with_capacity(total),
            weight: Vec::with_capacity(total),
            score_weight: Vec::with_capacity(total),
            product_weight: Vec::with_capacity(total),
            x: Vec::with_capacity(total * 2 * p),
            z: Vec::with_capacity(total * 2 * q),
            y: Vec::with_capacity(total),
            group_key: sample.groups.iter().map(|g| g.key).collect(),
            group_psu: sample.groups.iter().map(|g| g.psu).collect(),
            group_stratum: sample.groups.iter().map(|g| g.stratum).collect(),
            singletons_dropped: 0,
            fixed_names: sample.fixed_names.clone(),
            blocks: sample.blocks.clone(),
        };
        for (gi, g) in sample.groups.iter().enumerate() {
            let m = g.m();
            if m < 2 {
                set.singletons_dropped += 1;
                continue;
            }
            if g.pair_cond.len() != m * (m - 1) / 2 {
                return Err(Error::MissingPairProbability { group: g.key });
            }
            for j in 0..m {
                for k in j + 1..m {
                    let pjk = g.pair_cond[pair_index(m, j, k)];
                    let w = 1.0 / (g.pi * pjk);
                    let sw = 1.0 / (g.pi * g.pi_cond[j] * g.pi_cond[k]);
                    if !(w.is_finite() && w > 0.0 && sw.is_finite()) {
                        return Err(Error::Probability { what: "pair".into(), value: pjk });
                    }
                    set.group.push(gi);
                    set.rows.push((j as u32, k as u32));
                    set.weight.push(w);
                    set.score_weight.push(sw);
                    set.product_weight.push(sw / g.pi);
                    set.x.extend(g.x.row(j).iter());
                    set.x.extend(g.x.row(k).iter());
                    set.z.extend(g.z.row(j).iter());
                    set.z.extend(g.z.row(k).iter());
                    set.y.push([g.y[j], g.y[k]]);
                }
            }
        }
        if set.is_empty() {
            return Err(Error::NoPairs);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_groups(&self) -> usize {
        self.group_psu.len()
    }

    /// `N̂_P = Σ w`.
    pub fn n_hat(&self) -> f64 {
        self.weight.iter().sum()
    }

    #[inline]
    pub fn x_pair(&self, t: usize) -> (&[f64], &[f64]) {
        let s = &self.x[2 * self.p * t..2 * self.p * (t + 1)];
        s.split_at(self.p)
    }

    #[inline]
    pub fn z_pair(&self, t: usize) -> (&[f64], &[f64]) {
        let s = &self.z[2 * self.q * t..2 * self.q * (t + 1)];
        s.split_at(self.q)
    }

    #[inline]
    pub fn y_pair(&self, t: usize) -> [f64; 2] {
        self.y[t]
    }

    /// Every weight multiplied by `c`.
    pub fn scale_weights(&self, c: f64) -> Result<PairSet> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument("weight scale must be positive".into()));
        }
        let mut out = self.clone();
        for w in out.weight.iter_mut().chain(&mut out.score_weight).chain(&mut out.product_weight) {
            *w *= c;
        }
        Ok(out)
    }

    /// Weights multiplied by a per-group factor. Pairs in groups with a zero
    /// factor are removed.
    pub fn with_group_multipliers(&self, mult: &[f64]) -> Result<PairSet> {
        if mult.len() != self.n_groups() || mult.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("group multipliers must be finite and non-negative".into()));
        }
        let mut out = self.clone_meta();
        for t in 0..self.len() {
            let m = mult[self.group[t]];
            if m == 0.0 {
                continue;
            }
            out.group.push(self.group[t]);
            out.rows.push(self.rows[t]);
            out.weight.push(self.weight[t] * m);
            out.score_weight.push(self.score_weight[t] * m);
            out.product_weight.push(self.product_weight[t] * m);
            out.x.extend_from_slice(&self.x[2 * self.p * t..2 * self.p * (t + 1)]);
            out.z.extend_from_slice(&self.z[2 * self.q * t..2 * self.q * (t + 1)]);
            out.y.push(self.y[t]);
        }
        if out.is_empty() {
            return Err(Error::NoPairs);
        }
        Ok(out)
    }

    fn clone_meta(&self) -> PairSet {
        PairSet {
            p: self.p,
            q: self.q,
            group: Vec::new(),
            rows: Vec::new(),
            weight: Vec::new(),
            score_weight: Vec::new(),
            product_weight: Vec::new(),
            x: Vec::new(),
            z: Vec::new(),
            y: Vec::new(),
            group_key: self.group_key.clone(),
            group_psu: self.group_psu.clone(),
            group_stratum: self.group_stratum.clone(),
            singletons_dropped: self.singletons_dropped,
            fixed_names: self.fixed_names.clone(),
            blocks: self.blocks.clone(),
        }
    }
}
