//! Simulation scenarios and the preset table.

use std::fmt;

use nalgebra::Matrix2;
use pairlme_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XDist {
    Normal,
    /// Equal mixture of N(0,1), N(0,4) and N(0,9).
    Mixture,
    /// Unit-level N(0,1) plus a cluster-level N(0,1).
    ClusterCorrelated,
}

/// What decides between the small and the large within-cluster sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Informative {
    None,
    /// Realized residual variance of the cluster above its median.
    VarEps,
    /// `|b_z|` above its median.
    AbsB,
    /// `b_z >= 0`.
    SignB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeRule {
    Fixed(usize),
    TwoOrSix(Informative),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub name: String,
    pub strata: usize,
    pub stratum_size: usize,
    pub cluster_size: usize,
    pub clusters_per_stratum: usize,
    pub rule: SizeRule,
    pub x_dist: XDist,
    /// Intercept, z, x.
    pub beta: [f64; 3],
    /// Relative covariance of `(b0, bz)`; effects are `N(0, σ² V)`.
    pub v: Matrix2<f64>,
    pub sigma2: f64,
    /// Fit `(1|id) + (0+z|id)` instead of `(1+z|id)`.
    pub independent: bool,
    pub replicates: usize,
    pub seed: u64,
}

pub const PRESETS: [&str; 9] =
    ["table1", "table2", "table3", "table4", "table5", "table6", "table7", "table8", "table9"];

// Relative covariances; with σ² = 2.5 the strong setting has
// var(b0) = 0.5, cov = 0.2, var(bz) = 2 and the weak one 0.25, 0.05, 0.5.
const STRONG_V: [f64; 4] = [0.2, 0.08, 0.08, 0.8];
const WEAK_V: [f64; 4] = [0.1, 0.02, 0.02, 0.2];
const SIGMA2: f64 = 2.5;
// Small-cluster setting: var(b0) = 1, var(bz) = 0.015, σ² = 0.025.
const SMALL_V: [f64; 4] = [40.0, 0.0, 0.0, 0.6];
const SMALL_SIGMA2: f64 = 0.025;

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            name: "custom".into(),
            strata: 160,
            stratum_size: 1000,
            cluster_size: 10,
            clusters_per_stratum: 10,
            rule: SizeRule::TwoOrSix(Informative::None),
            x_dist: XDist::Normal,
            beta: [1.0, 1.0, 1.0],
            v: Matrix2::from_row_slice(&STRONG_V),
            sigma2: SIGMA2,
            independent: false,
            replicates: 500,
            seed: 20240601,
        }
    }
}

impl SimScenario {
    pub fn preset(name: &str) -> Result<Self> {
        let base = SimScenario { name: name.to_string(), ..SimScenario::default() };
        let weak = Matrix2::from_row_slice(&WEAK_V);
        let sc = match name {
            "table1" => SimScenario { x_dist: XDist::Mixture, ..base },
            "table2" => base,
            "table3" => SimScenario { v: weak, ..base },
            "table4" => SimScenario { v: weak, x_dist: XDist::ClusterCorrelated, ..base },
            "table5" => SimScenario { x_dist: XDist::ClusterCorrelated, ..base },
            "table6" => SimScenario {
                strata: 80,
                cluster_size: 5,
                clusters_per_stratum: 20,
                rule: SizeRule::Fixed(3),
                independent: true,
                v: Matrix2::from_row_slice(&SMALL_V),
                sigma2: SMALL_SIGMA2,
                ..base
            },
            "table7" => SimScenario { rule: SizeRule::TwoOrSix(Informative::VarEps), ..base },
            "table8" => SimScenario { rule: SizeRule::TwoOrSix(Informative::AbsB), ..base },
            "table9" => SimScenario { rule: SizeRule::TwoOrSix(Informative::SignB), ..base },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(sc)
    }

    pub fn clusters_in_stratum(&self) -> usize {
        self.stratum_size / self.cluster_size
    }

    pub fn formula(&self) -> &'static str {
        if self.independent {
            "y ~ 1 + z + x + (1 | id) + (0 + z | id)"
        } else {
            "y ~ 1 + z + x + (1 + z | id)"
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.strata == 0 || self.cluster_size == 0 || self.clusters_per_stratum == 0 {
            return bad("strata, cluster size and sampled clusters must be positive".into());
        }
        if !self.stratum_size.is_multiple_of(self.cluster_size) {
            return bad(format!(
                "stratum size {} is not a multiple of the cluster size {}",
                self.stratum_size, self.cluster_size
            ));
        }
        if self.clusters_per_stratum > self.clusters_in_stratum() {
            return bad(format!(
                "cannot sample {} clusters from {} per stratum",
                self.clusters_per_stratum,
                self.clusters_in_stratum()
            ));
        }
        if self.clusters_per_stratum < 2 {
            return bad("at least two clusters per stratum are needed for variance estimation".into());
        }
        let max_n = match self.rule {
            SizeRule::Fixed(n) => n,
            SizeRule::TwoOrSix(_) => 6,
        };
        if max_n == 0 || max_n > self.cluster_size {
            return bad(format!("within-cluster sample size {max_n} does not fit clusters of {}", self.cluster_size));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad("sigma2 must be positive".into());
        }
        if self.v[(0, 1)] != self.v[(1, 0)]
            || self.v[(0, 0)] < 0.0
            || self.v[(1, 1)] < 0.0
            || self.v.determinant() < -1e-15
        {
            return bad("V must be symmetric positive semidefinite".into());
        }
        if self.independent && self.v[(0, 1)] != 0.0 {
            return bad("the independent model needs a diagonal V".into());
        }
        if self.replicates < 2 {
            return bad("at least two replicates are needed".into());
        }
        Ok(())
    }

    /// Key/value lines for report headers.
    pub fn describe(&self) -> Vec<(&'static str, String)> {
        vec![
            ("scenario", self.name.clone()),
            ("strata", self.strata.to_string()),
            ("stratum_size", self.stratum_size.to_string()),
            ("cluster_size", self.cluster_size.to_string()),
            ("clusters_per_stratum", self.clusters_per_stratum.to_string()),
            ("rule", self.rule.to_string()),
            ("x_dist", self.x_dist.to_string()),
            ("beta", format!("{},{},{}", self.beta[0], self.beta[1], self.beta[2])),
            ("v", format!("{},{},{}", self.v[(0, 0)], self.v[(1, 0)], self.v[(1, 1)])),
            ("sigma2", self.sigma2.to_string()),
            ("model", self.formula().to_string()),
            ("replicates", self.replicates.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

impl fmt::Display for XDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            XDist::Normal => "normal",
            XDist::Mixture => "mixture",
            XDist::ClusterCorrelated => "cluster-correlated",
        })
    }
}

impl fmt::Display for SizeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeRule::Fixed(n) => write!(f, "fixed({n})"),
            SizeRule::TwoOrSix(i) => write!(
                f,
                "two-or-six({})",
                match i {
                    Informative::None => "none",
                    Informative::VarEps => "var_eps",
                    Informative::AbsB => "abs_b",
                    Informative::SignB => "sign_b",
                }
            ),
        }
    }
}

impl std::str::FromStr for XDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(XDist::Normal),
            "mixture" => Ok(XDist::Mixture),
            "cluster-correlated" | "correlated" => Ok(XDist::ClusterCorrelated),
            _ => Err(Error::InvalidArgument(format!("unknown X distribution `{s}`"))),
        }
    }
}

impl std::str::FromStr for SizeRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(n) = s.strip_prefix("fixed(").and_then(|r| r.strip_suffix(')')).or_else(|| s.strip_prefix("fixed:"))
        {
            return n
                .trim()
                .parse()
                .map(SizeRule::Fixed)
                .map_err(|_| Error::InvalidArgument(format!("bad fixed sample size in `{s}`")));
        }
        let by = s.strip_prefix("two-or-six(").and_then(|r| r.strip_suffix(')')).unwrap_or(s);
        let inf = match by {
            "none" => Informative::None,
            "var_eps" => Informative::VarEps,
            "abs_b" => Informative::AbsB,
            "sign_b" => Informative::SignB,
            _ => return Err(Error::InvalidArgument(format!("unknown sample-size rule `{s}`"))),
        };
        Ok(SizeRule::TwoOrSix(inf))
    }
}
