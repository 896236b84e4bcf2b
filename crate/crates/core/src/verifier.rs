//! Global minimization of condition objectives over boxes by input-split
//! branch-and-bound, an exhaustive activation-pattern oracle, and barrier
//! verification reports.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use log::debug;
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::bounds::{backward_linear, ibp_all, refined_intervals, BoundMethod, Interval};
use crate::error::{check_dim, Error, Result};
use crate::falsifier::{cmp_candidate, pgd_descend};
use crate::linalg::Matrix;
use crate::nn::barrier::VectorBarrier;
use crate::nn::condition::{build_condition_graph, ConditionId};
use crate::nn::graph::{CompGraph, Node};
use crate::sets::{BoxDomain, SafetySpec};
use crate::systems::ClosedLoop;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BabConfig {
    /// Gap at which minimization stops.
    pub gap_tol: f64,
    /// Certify threshold for the non-strict conditions.
    pub kappa: f64,
    /// Certify threshold for the strict unsafe-set condition.
    pub kappa_strict: f64,
    pub max_nodes: usize,
    /// Descent steps used to probe each node for a witness.
    pub probe_steps: usize,
    pub bound_method: BoundMethod,
    /// Wall-clock cap per objective; exceeded runs end as `Unknown`.
    pub max_seconds: Option<f64>,
    /// Absolute cut-off shared by every objective of a run.
    #[serde(skip)]
    pub deadline: Option<Instant>,
}

impl Default for BabConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            kappa: 0.0,
            kappa_strict: 1e-6,
            max_nodes: 200_000,
            probe_steps: 10,
            bound_method: BoundMethod::Refined,
            max_seconds: None,
            deadline: None,
        }
    }
}

impl BabConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) {
            return Err(Error::Config("gap tolerance must be positive".into()));
        }
        if !(self.kappa >= 0.0) || !(self.kappa_strict >= 0.0) {
            return Err(Error::Config("certify thresholds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn kappa_for(&self, cond: ConditionId) -> f64 {
        if cond.is_strict() {
            self.kappa_strict
        } else {
            self.kappa
        }
    }

    pub fn requirement_for(&self, cond: ConditionId) -> Requirement {
        Requirement { kappa: self.kappa_for(cond), strict: cond.is_strict() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConditionStatus {
    Certified { lower_bound: f64 },
    Falsified { state: Vec<f64>, value: f64 },
    Unknown { lower_bound: f64, upper_bound: f64, nodes: usize, witness: Vec<f64> },
}

impl ConditionStatus {
    pub fn is_certified(&self) -> bool {
        matches!(self, ConditionStatus::Certified { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            ConditionStatus::Certified { .. } => "certified",
            ConditionStatus::Falsified { .. } => "falsified",
            ConditionStatus::Unknown { .. } => "unknown",
        }
    }
}

/// Bookkeeping from one branch-and-bound run.
#[derive(Clone, Debug, Default)]
pub struct BabTrace {
    pub nodes: usize,
    /// Global lower bound after each processed node.
    pub lower_bounds: Vec<f64>,
}

struct Bounded {
    lb: f64,
    /// State attaining the smallest value seen in this box.
    witness: (Vec<f64>, f64),
}

fn bound_node(g: &CompGraph, dom: &BoxDomain, cfg: &BabConfig) -> Bounded {
    let ivs = match cfg.bound_method {
        BoundMethod::Refined => refined_intervals(g, dom),
        _ => ibp_all(g, dom),
    }
    .expect("dimensions checked by caller");
    let plain = ivs[g.output()][0];
    let mut cands = vec![dom.center()];
    let iv = if cfg.bound_method == BoundMethod::Ibp {
        plain
    } else {
        let (lin, liv) = backward_linear(g, dom, &ivs).expect("intervals present");
        // vertex minimizing the affine lower bound
        cands.push(
            lin.lower.0.iter().enumerate().map(|(j, a)| if *a >= 0.0 { dom.lo()[j] } else { dom.hi()[j] }).collect(),
        );
        let mut iv = plain.intersect(&liv);
        if cfg.bound_method == BoundMethod::Refined {
            // neither pass dominates the other
            let base = ibp_all(g, dom).expect("dimensions checked by caller");
            iv = iv.intersect(&backward_linear(g, dom, &base).expect("intervals present").1);
        }
        iv
    };
    let step: Vec<f64> = dom.widths().iter().map(|w| 0.25 * w).collect();
    let witness = cands
        .iter()
        .map(|x| pgd_descend(g, dom, x, &step, cfg.probe_steps))
        .min_by(cmp_candidate)
        .expect("candidates");
    Bounded { lb: iv.lo.min(witness.1), witness }
}

struct Item {
    lb: f64,
    seq: usize,
    dom: BoxDomain,
}

impl PartialEq for Item {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Item {
    // reversed so the max-heap pops the smallest bound, oldest first
    fn cmp(&self, o: &Self) -> Ordering {
        o.lb.total_cmp(&self.lb).then_with(|| o.seq.cmp(&self.seq))
    }
}

/// Certify `min g >= kappa`; refute with a negative value, or with a zero
/// value too when `strict`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub kappa: f64,
    pub strict: bool,
}

impl Requirement {
    pub fn violated_by(&self, v: f64) -> bool {
        v < 0.0 || (self.strict && v <= 0.0)
    }
}

enum Goal {
    /// Stop at the first violating witness or once every box is `>= kappa`.
    Decide(Requirement),
    /// Stop once `upper - lower <= gap`.
    Minimize(f64),
}

/// A box whose sound lower bound is this close to a value attained in it is
/// treated as solved exactly; this absorbs the rounding pad of the bounds.
const CLOSE_TOL: f64 = 1e-9;

struct Search {
    lower: f64,
    best: (Vec<f64>, f64),
    exhausted: bool,
    falsified: bool,
    trace: BabTrace,
}

fn search(g: &CompGraph, domain: &BoxDomain, cfg: &BabConfig, goal: Goal) -> Search {
    let start = Instant::now();
    let mut trace = BabTrace::default();
    let mut best = (domain.center(), f64::INFINITY);
    // smallest value over boxes closed exactly
    let mut closed_min = f64::INFINITY;
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let mut pending = vec![(domain.clone(), f64::NEG_INFINITY)];
    loop {
        for (dom, parent_lb) in pending.drain(..) {
            let bn = bound_node(g, &dom, cfg);
            trace.nodes += 1;
            if cmp_candidate(&bn.witness, &best) == Ordering::Less {
                best = bn.witness.clone();
            }
            let lb = bn.lb.max(parent_lb);
            if bn.witness.1 - lb <= CLOSE_TOL * (1.0 + bn.witness.1.abs()) {
                closed_min = closed_min.min(bn.witness.1);
            } else {
                seq += 1;
                heap.push(Item { lb, seq, dom });
            }
        }
        let open_lb = heap.peek().map_or(f64::INFINITY, |t| t.lb);
        let lower = open_lb.min(closed_min);
        trace.lower_bounds.push(lower);
        let violated = |v: f64| match &goal {
            Goal::Decide(req) => req.violated_by(v),
            Goal::Minimize(_) => v < 0.0,
        };
        let finish = |exhausted: bool, lower: f64, best: (Vec<f64>, f64), trace: BabTrace| Search {
            lower,
            falsified: violated(best.1),
            best,
            exhausted,
            trace,
        };
        match goal {
            Goal::Decide(Requirement { kappa, .. }) => {
                if violated(best.1) || lower >= kappa {
                    return finish(false, lower, best, trace);
                }
                // nothing negative remains, yet some solved box sits below kappa
                if open_lb >= 0.0 && closed_min < kappa {
                    return finish(true, lower, best, trace);
                }
            }
            Goal::Minimize(gap) => {
                if best.1 - lower <= gap || heap.is_empty() {
                    return finish(false, lower, best, trace);
                }
            }
        }
        let over_time = cfg.max_seconds.is_some_and(|s| start.elapsed().as_secs_f64() > s)
            || cfg.deadline.is_some_and(|d| Instant::now() >= d);
        if trace.nodes >= cfg.max_nodes || over_time {
            return finish(true, lower, best, trace);
        }
        let item = heap.pop().expect("open box below the target");
        let (a, b) = item.dom.bisect(item.dom.widest_dim());
        pending.push((a, item.lb));
        pending.push((b, item.lb));
    }
}

/// Decides whether the minimum of `g` over `domain` is at least `kappa`.
pub fn bab_min(g: &CompGraph, domain: &BoxDomain, kappa: f64, cfg: &BabConfig) -> Result<(ConditionStatus, BabTrace)> {
    bab_decide(g, domain, Requirement { kappa, strict: false }, cfg)
}

pub fn bab_decide(g: &CompGraph, domain: &BoxDomain, req: Requirement, cfg: &BabConfig) -> Result<(ConditionStatus, BabTrace)> {
    check_dim(g.input_dim(), domain.dim())?;
    let s = search(g, domain, cfg, Goal::Decide(req));
    let status = if s.falsified {
        ConditionStatus::Falsified { state: s.best.0, value: s.best.1 }
    } else if s.exhausted {
        ConditionStatus::Unknown { lower_bound: s.lower, upper_bound: s.best.1, nodes: s.trace.nodes, witness: s.best.0 }
    } else {
        ConditionStatus::Certified { lower_bound: s.lower }
    };
    debug!("bab: {} after {} nodes", status.label(), s.trace.nodes);
    Ok((status, s.trace))
}

/// Result of minimizing to a gap tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct MinResult {
    pub lower: f64,
    pub upper: f64,
    pub state: Vec<f64>,
    pub nodes: usize,
    /// False if the node budget ran out before the gap closed.
    pub converged: bool,
}

pub fn bab_minimize(g: &CompGraph, domain: &BoxDomain, cfg: &BabConfig) -> Result<MinResult> {
    check_dim(g.input_dim(), domain.dim())?;
    let s = search(g, domain, cfg, Goal::Minimize(cfg.gap_tol));
    Ok(MinResult { lower: s.lower, upper: s.best.1, state: s.best.0, nodes: s.trace.nodes, converged: !s.exhausted })
}

/// Affine form `M x + v` of a node's value.
#[derive(Clone)]
struct Form {
    m: Matrix,
    v: Vec<f64>,
}

/// Exact global minimum by enumerating every ReLU activation pattern and
/// solving the induced linear program over the pattern's region.
pub fn brute_force_min(g: &CompGraph, domain: &BoxDomain) -> Result<(f64, Vec<f64>)> {
    check_dim(g.input_dim(), domain.dim())?;
    if g.has_square() {
        return Err(Error::Unsupported("activation enumeration needs a piecewise-linear graph".into()));
    }
    let relus = g.relu_count();
    if relus > 16 {
        return Err(Error::TooManyRelus { max: 16, got: relus });
    }
    let n = g.input_dim();
    let ivs = ibp_all(g, domain)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    'patterns: for mask in 0u32..(1u32 << relus) {
        let mut forms: Vec<Form> = Vec::with_capacity(g.output() + 1);
        // rows `a.x + c >= 0`
        let mut cons: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut unit = 0;
        for (id, node) in g.nodes()[..=g.output()].iter().enumerate() {
            let f = match node {
                Node::Input { .. } => Form { m: Matrix::identity(n), v: vec![0.0; n] },
                Node::Affine { input, map } => {
                    let p = &forms[*input];
                    let mut v = map.weight.matvec(&p.v);
                    for (vi, bi) in v.iter_mut().zip(&map.bias) {
                        *vi += bi;
                    }
                    Form { m: map.weight.matmul(&p.m).expect("shapes"), v }
                }
                Node::Sum { lhs, rhs } => {
                    let (a, b) = (&forms[*lhs], &forms[*rhs]);
                    let mut m = a.m.clone();
                    for (x, y) in m.data_mut().iter_mut().zip(b.m.data()) {
                        *x += y;
                    }
                    Form { m, v: a.v.iter().zip(&b.v).map(|(x, y)| x + y).collect() }
                }
                Node::Negate { input } => {
                    let p = &forms[*input];
                    Form { m: p.m.map(|x| -x), v: p.v.iter().map(|x| -x).collect() }
                }
                Node::Relu { input } => {
                    let p = &forms[*input];
                    let pre = &ivs[*input];
                    let mut f = p.clone();
                    for j in 0..g.dim(id) {
                        let active = mask >> unit & 1 == 1;
                        unit += 1;
                        // patterns contradicting the interval bounds are empty
                        if active && pre[j].hi < 0.0 || !active && pre[j].lo > 0.0 {
                            continue 'patterns;
                        }
                        if active {
                            cons.push((p.m.row(j).to_vec(), p.v[j]));
                        } else {
                            cons.push((p.m.row(j).iter().map(|x| -x).collect(), -p.v[j]));
                            f.m.row_mut(j).iter_mut().for_each(|x| *x = 0.0);
                            f.v[j] = 0.0;
                        }
                    }
                    f
                }
                Node::Square { .. } => unreachable!("rejected above"),
            };
            forms.push(f);
        }
        let out = &forms[g.output()];
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> =
            (0..n).map(|j| lp.add_var(out.m.get(0, j), (domain.lo()[j], domain.hi()[j]))).collect();
        for (a, c) in &cons {
            let terms: Vec<_> = vars.iter().copied().zip(a.iter().copied()).filter(|(_, w)| *w != 0.0).collect();
            if terms.is_empty() {
                if *c < 0.0 {
                    continue 'patterns;
                }
                continue;
            }
            lp.add_constraint(terms.as_slice(), ComparisonOp::Ge, -c);
        }
        let Ok(sol) = lp.solve() else { continue };
        let value = sol.objective() + out.v[0];
        let x: Vec<f64> = vars.iter().map(|v| sol[*v]).collect();
        if best.as_ref().map_or(true, |b| value < b.0) {
            best = Some((value, x));
        }
    }
    best.ok_or_else(|| Error::Numerical("no activation pattern was feasible".into()))
}

/// Minimal verification interface: decide a requirement on `min g` over a box.
pub trait Verifier {
    fn decide(&self, g: &CompGraph, domain: &BoxDomain, req: Requirement) -> Result<(ConditionStatus, usize)>;
}

/// Built-in complete verifier.
#[derive(Clone, Debug, Default)]
pub struct BabVerifier {
    pub cfg: BabConfig,
}

impl Verifier for BabVerifier {
    fn decide(&self, g: &CompGraph, domain: &BoxDomain, req: Requirement) -> Result<(ConditionStatus, usize)> {
        let (status, trace) = bab_decide(g, domain, req, &self.cfg)?;
        Ok((status, trace.nodes))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: ConditionId,
    #[serde(flatten)]
    pub status: ConditionStatus,
    pub nodes: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub conditions: Vec<ConditionReport>,
    pub seconds: f64,
}

impl VerificationReport {
    pub fn all_certified(&self) -> bool {
        self.conditions.iter().all(|c| c.status.is_certified())
    }

    pub fn total_nodes(&self) -> usize {
        self.conditions.iter().map(|c| c.nodes).sum()
    }

    pub fn get(&self, cond: ConditionId) -> Option<&ConditionStatus> {
        self.conditions.iter().find(|c| c.condition == cond).map(|c| &c.status)
    }

    /// Falsifying states, at most one per condition.
    pub fn counterexamples(&self) -> Vec<(ConditionId, Vec<f64>, f64)> {
        self.conditions
            .iter()
            .filter_map(|c| match &c.status {
                ConditionStatus::Falsified { state, value } => Some((c.condition, state.clone(), *value)),
                _ => None,
            })
            .collect()
    }
}

/// Checks all `2m + 1` conditions with `verifier`.
pub fn verify_barrier_with(
    bf: &VectorBarrier,
    sys: &ClosedLoop,
    spec: &SafetySpec,
    verifier: &dyn Verifier,
    cfg: &BabConfig,
) -> Result<VerificationReport> {
    let start = Instant::now();
    let mut conditions = Vec::new();
    for cond in ConditionId::all(bf.m()) {
        let t = Instant::now();
        let g = build_condition_graph(bf, sys, cond)?;
        let (status, nodes) = verifier.decide(&g, cond.domain(spec), cfg.requirement_for(cond))?;
        conditions.push(ConditionReport { condition: cond, status, nodes, seconds: t.elapsed().as_secs_f64() });
    }
    Ok(VerificationReport { conditions, seconds: start.elapsed().as_secs_f64() })
}

pub fn verify_barrier(
    bf: &VectorBarrier,
    sys: &ClosedLoop,
    spec: &SafetySpec,
    cfg: &BabConfig,
) -> Result<VerificationReport> {
    cfg.validate()?;
    verify_barrier_with(bf, sys, spec, &BabVerifier { cfg: cfg.clone() }, cfg)
}

impl Interval {
    /// `true` if `self` lies entirely at or above `kappa`.
    pub fn certifies(&self, kappa: f64) -> bool {
        self.lo >= kappa
    }
}
