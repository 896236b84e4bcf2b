//! The barrier-condition objectives. Each is a scalar function whose minimum
//! over its domain is non-negative (strictly positive for the unsafe set)
//! exactly when the condition holds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::nn::barrier::VectorBarrier;
use crate::nn::graph::{CompGraph, GraphBuilder};
use crate::nn::mlp::AffineMap;
use crate::sets::{BoxDomain, SafetySpec};
use crate::systems::ClosedLoop;

/// Component indices are zero-based in memory and one-based when displayed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConditionId {
    /// `B_{i*}(x) > 0` on the unsafe set.
    UnsafePositivity,
    /// `B_i(x) <= 0` on the initial set.
    InitNonpositivity(usize),
    /// `B_i(f(x)) <= a_i^T B(x)` on the workspace.
    Decrease(usize),
}

impl ConditionId {
    /// All `2m + 1` conditions in a fixed order.
    pub fn all(m: usize) -> Vec<ConditionId> {
        let mut v = vec![ConditionId::UnsafePositivity];
        v.extend((0..m).map(ConditionId::InitNonpositivity));
        v.extend((0..m).map(ConditionId::Decrease));
        v
    }

    pub fn domain<'a>(&self, spec: &'a SafetySpec) -> &'a BoxDomain {
        match self {
            ConditionId::UnsafePositivity => &spec.unsafe_set,
            ConditionId::InitNonpositivity(_) => &spec.initial,
            ConditionId::Decrease(_) => &spec.workspace,
        }
    }

    pub fn is_strict(&self) -> bool {
        matches!(self, ConditionId::UnsafePositivity)
    }

    /// Whether objective value `v` breaks the condition.
    pub fn violated(&self, v: f64) -> bool {
        v < 0.0 || (self.is_strict() && v <= 0.0)
    }

    fn check(&self, m: usize) -> Result<()> {
        match *self {
            ConditionId::InitNonpositivity(i) | ConditionId::Decrease(i) if i >= m => {
                Err(Error::IndexOutOfRange { index: i + 1, size: m })
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionId::UnsafePositivity => write!(f, "unsafe"),
            ConditionId::InitNonpositivity(i) => write!(f, "init[{}]", i + 1),
            ConditionId::Decrease(i) => write!(f, "decrease[{}]", i + 1),
        }
    }
}

impl FromStr for ConditionId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "unsafe" {
            return Ok(ConditionId::UnsafePositivity);
        }
        let parse = |prefix: &str| -> Option<usize> {
            let idx: usize = s.strip_prefix(prefix)?.strip_suffix(']')?.parse().ok()?;
            idx.checked_sub(1)
        };
        if let Some(i) = parse("init[") {
            return Ok(ConditionId::InitNonpositivity(i));
        }
        if let Some(i) = parse("decrease[") {
            return Ok(ConditionId::Decrease(i));
        }
        Err(Error::Config(format!("unknown condition `{s}`")))
    }
}

impl Serialize for ConditionId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConditionId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Single-row affine map `x -> w.x + q`.
fn row_map(w: Vec<f64>, q: f64) -> AffineMap {
    let n = w.len();
    AffineMap::new(Matrix::from_row_major(1, n, w).expect("row"), vec![q]).expect("row")
}

/// Builds the objective for `cond`. The decrease objective inlines the
/// closed-loop step and a second copy of the feature map.
pub fn build_condition_graph(bf: &VectorBarrier, sys: &ClosedLoop, cond: ConditionId) -> Result<CompGraph> {
    let m = bf.m();
    cond.check(m)?;
    check_dim(sys.state_dim(), bf.input_dim())?;
    let mut g = GraphBuilder::new(bf.input_dim());
    let x = g.input();
    let phi = g.basis(x, &bf.basis)?;
    let out = match cond {
        ConditionId::UnsafePositivity => {
            let i = bf.i_star;
            g.affine(phi, row_map(bf.c_mat.row(i).to_vec(), bf.b_vec[i]))?
        }
        ConditionId::InitNonpositivity(i) => {
            let w = bf.c_mat.row(i).iter().map(|v| -v).collect();
            g.affine(phi, row_map(w, -bf.b_vec[i]))?
        }
        ConditionId::Decrease(i) => {
            // a_i^T (C phi + b) as one row over phi.
            let a = bf.a_mat.row(i);
            let w = bf.c_mat.tmatvec(a);
            let q = dot(a, &bf.b_vec);
            let lhs = g.affine(phi, row_map(w, q))?;

            let d = &sys.dynamics;
            let drift = g.affine(x, AffineMap::new(d.a_d.clone(), d.c_d.clone())?)?;
            let next = match &sys.controller {
                Some(pi) => {
                    let u = g.mlp(x, pi)?;
                    let bu = g.affine(u, AffineMap::new(d.b_d.clone(), vec![0.0; d.state_dim()])?)?;
                    g.sum(drift, bu)?
                }
                None => drift,
            };
            let phi_next = g.basis(next, &bf.basis)?;
            let w_next = bf.c_mat.row(i).iter().map(|v| -v).collect();
            let rhs = g.affine(phi_next, row_map(w_next, -bf.b_vec[i]))?;
            g.sum(lhs, rhs)?
        }
    };
    g.finish(out)
}

/// Direct evaluation of the objective through separate forward passes.
pub fn condition_value(bf: &VectorBarrier, sys: &ClosedLoop, cond: ConditionId, x: &[f64]) -> Result<f64> {
    cond.check(bf.m())?;
    let b = bf.eval(x)?;
    Ok(match cond {
        ConditionId::UnsafePositivity => b[bf.i_star],
        ConditionId::InitNonpositivity(i) => -b[i],
        ConditionId::Decrease(i) => {
            let bn = bf.eval(&sys.step(x)?)?;
            dot(bf.a_mat.row(i), &b) - bn[i]
        }
    })
}
