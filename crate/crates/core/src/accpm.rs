//! Analytic-center cutting-plane fine-tuning of the last linear layer
//! `W = vec(C, b)` with the feature map and `A` frozen.

use std::time::{Duration, Instant};

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::falsifier::{augment, pgd_minimize, AttackConfig};
use crate::linalg::{axpy, dot, norm};
use crate::nn::barrier::VectorBarrier;
use crate::nn::condition::{build_condition_graph, condition_value, ConditionId};
use crate::sets::{SafetySpec, SampleSet};
use crate::systems::ClosedLoop;
use crate::verifier::{verify_barrier, BabConfig, ConditionStatus, VerificationReport};

/// Where a sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Initial,
    Counterexample,
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutSource {
    pub condition: ConditionId,
    pub state: Vec<f64>,
    pub origin: Origin,
}

/// `g . w >= h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub g: Vec<f64>,
    pub h: f64,
    pub source: CutSource,
}

impl Cut {
    pub fn slack(&self, w: &[f64]) -> f64 {
        dot(&self.g, w) - self.h
    }
}

/// `[phi; 1]`
fn lifted(bf: &VectorBarrier, x: &[f64]) -> Vec<f64> {
    let mut v = bf.basis.features_unchecked(x);
    v.push(1.0);
    v
}

/// Linear constraints on `W` implied by the conditions at each sample. The
/// unsafe-set cut uses margin `eps_u`; cuts with a zero normal are dropped.
pub fn cuts_from_samples(
    bf: &VectorBarrier,
    samples: &SampleSet,
    sys: &ClosedLoop,
    eps_u: f64,
    origin: Origin,
) -> Result<Vec<Cut>> {
    let n = bf.input_dim();
    let (m, stride) = (bf.m(), bf.feature_dim() + 1);
    let len = bf.last_layer_len();
    let mut cuts = Vec::new();
    let mut push = |g: Vec<f64>, h: f64, condition: ConditionId, x: &[f64]| {
        if g.iter().any(|v| *v != 0.0) {
            cuts.push(Cut { g, h, source: CutSource { condition, state: x.to_vec(), origin } });
        }
    };
    for x in &samples.su {
        check_dim(n, x.len())?;
        let mut g = vec![0.0; len];
        g[bf.i_star * stride..(bf.i_star + 1) * stride].copy_from_slice(&lifted(bf, x));
        push(g, eps_u, ConditionId::UnsafePositivity, x);
    }
    for x in &samples.s0 {
        check_dim(n, x.len())?;
        let p = lifted(bf, x);
        for i in 0..m {
            let mut g = vec![0.0; len];
            for (gk, pk) in g[i * stride..(i + 1) * stride].iter_mut().zip(&p) {
                *gk = -pk;
            }
            push(g, 0.0, ConditionId::InitNonpositivity(i), x);
        }
    }
    for x in &samples.sx {
        check_dim(n, x.len())?;
        let p = lifted(bf, x);
        let pn = lifted(bf, &sys.step(x)?);
        for i in 0..m {
            let mut g = vec![0.0; len];
            for k in 0..m {
                axpy(bf.a_mat.get(i, k), &p, &mut g[k * stride..(k + 1) * stride]);
            }
            axpy(-1.0, &pn, &mut g[i * stride..(i + 1) * stride]);
            push(g, 0.0, ConditionId::Decrease(i), x);
        }
    }
    Ok(cuts)
}

/// Normalized cuts plus the box `|w_i| <= R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSet {
    pub dim: usize,
    pub radius: f64,
    pub cuts: Vec<Cut>,
}

impl LocalizationSet {
    pub fn new(dim: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config("radius must be positive".into()));
        }
        Ok(Self { dim, radius, cuts: Vec::new() })
    }

    /// Adds a unit-normal copy of `cut`; a cut whose normal matches an
    /// existing one within 1e-12 only tightens that one's offset. Returns the
    /// index of the cut that changed, if any.
    pub fn add(&mut self, cut: Cut) -> Result<Option<usize>> {
        check_dim(self.dim, cut.g.len())?;
        let nrm = norm(&cut.g);
        if !(nrm > 0.0) || !nrm.is_finite() || !cut.h.is_finite() {
            return Err(Error::Numerical("cut normal must be finite and non-zero".into()));
        }
        let g: Vec<f64> = cut.g.iter().map(|v| v / nrm).collect();
        let h = cut.h / nrm;
        for (k, c) in self.cuts.iter_mut().enumerate() {
            let d = c.g.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if d <= 1e-12 {
                if h > c.h {
                    c.h = h;
                    c.source = cut.source;
                    return Ok(Some(k));
                }
                return Ok(None);
            }
        }
        self.cuts.push(Cut { g, h, source: cut.source });
        Ok(Some(self.cuts.len() - 1))
    }

    pub fn min_slack(&self, w: &[f64]) -> f64 {
        let box_slack = w.iter().map(|v| self.radius - v.abs()).fold(f64::INFINITY, f64::min);
        self.cuts.iter().map(|c| c.slack(w)).fold(box_slack, f64::min)
    }

    /// Gradient of `-sum log(g.w - h) - sum log(w_i + R) - sum log(R - w_i)`.
    pub fn potential_grad(&self, w: &[f64]) -> Vec<f64> {
        let mut grad: Vec<f64> =
            w.iter().map(|v| -1.0 / (v + self.radius) + 1.0 / (self.radius - v)).collect();
        for c in &self.cuts {
            axpy(-1.0 / c.slack(w), &c.g, &mut grad);
        }
        grad
    }
}

/// `a . z - b >= 0` with a sparse row.
struct Row {
    a: Vec<(usize, f64)>,
    b: f64,
}

impl Row {
    fn slack(&self, z: &[f64]) -> f64 {
        self.a.iter().map(|(j, v)| v * z[*j]).sum::<f64>() - self.b
    }
}

/// Minimizes `t c.z - sum log(slack_j(z))` from a strictly feasible point.
struct Barrier {
    n: usize,
    rows: Vec<Row>,
}

#[derive(Debug)]
struct NewtonInfo {
    decrement_sq: f64,
    grad_norm: f64,
}

impl Barrier {
    fn value(&self, c: &[f64], t: f64, z: &[f64]) -> f64 {
        let mut v = t * dot(c, z);
        for r in &self.rows {
            let s = r.slack(z);
            if !(s > 0.0) {
                return f64::INFINITY;
            }
            v -= s.ln();
        }
        v
    }

    fn grad_hess(&self, c: &[f64], t: f64, z: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::from_iterator(self.n, c.iter().map(|v| t * v));
        let mut h = DMatrix::zeros(self.n, self.n);
        for r in &self.rows {
            let s = r.slack(z);
            let inv = 1.0 / s;
            for (j, a) in &r.a {
                g[*j] -= a * inv;
            }
            let inv2 = inv * inv;
            for (j, aj) in &r.a {
                for (k, ak) in &r.a {
                    h[(*j, *k)] += aj * ak * inv2;
                }
            }
        }
        (g, h)
    }

    fn solve(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
        let mut reg = 0.0;
        let scale = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for _ in 0..8 {
            let mut hr = h.clone();
            for i in 0..hr.nrows() {
                hr[(i, i)] += reg;
            }
            if let Some(ch) = hr.cholesky() {
                return Ok(-ch.solve(g));
            }
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        }
        Err(Error::Numerical("Hessian is not positive definite".into()))
    }

    /// Damped Newton with backtracking line search (alpha, beta) = (0.25, 0.5).
    fn newton(&self, c: &[f64], t: f64, z: &mut Vec<f64>, max_iter: usize) -> Result<NewtonInfo> {
        const ALPHA: f64 = 0.25;
        const BETA: f64 = 0.5;
        let mut info = NewtonInfo { decrement_sq: f64::INFINITY, grad_norm: f64::INFINITY };
        let mut polish = 0;
        for _ in 0..max_iter {
            let (g, h) = self.grad_hess(c, t, z);
            let d = Self::solve(&h, &g)?;
            let lam2 = -g.dot(&d);
            info = NewtonInfo { decrement_sq: lam2, grad_norm: g.norm() };
            if lam2 <= 1e-8 {
                // Inside the quadratic region barrier values are too flat for
                // the Armijo test; take full steps while the gradient shrinks.
                if info.grad_norm <= 1e-10 || polish >= 5 {
                    break;
                }
                polish += 1;
                let next: Vec<f64> = z.iter().zip(d.iter()).map(|(zi, di)| zi + di).collect();
                if !self.value(c, t, &next).is_finite() || self.grad_hess(c, t, &next).0.norm() >= info.grad_norm {
                    break;
                }
                *z = next;
                continue;
            }
            let f0 = self.value(c, t, z);
            let mut step = 1.0;
            let mut next: Vec<f64>;
            loop {
                next = z.iter().zip(d.iter()).map(|(zi, di)| zi + step * di).collect();
                let f1 = self.value(c, t, &next);
                if f1.is_finite() && f1 <= f0 - ALPHA * step * lam2 {
                    break;
                }
                step *= BETA;
                if step < 1e-20 {
                    // no further decrease representable
                    return Ok(info);
                }
            }
            *z = next;
        }
        Ok(info)
    }
}

fn box_rows(n: usize, radius: f64, s_col: Option<usize>) -> Vec<Row> {
    let mut rows = Vec::with_capacity(2 * n);
    for i in 0..n {
        for sign in [1.0, -1.0] {
            // sign * w_i + R (- s) >= 0
            let mut a = vec![(i, sign)];
            if let Some(s) = s_col {
                a.push((s, -1.0));
            }
            rows.push(Row { a, b: -radius });
        }
    }
    rows
}

fn dense(g: &[f64]) -> Vec<(usize, f64)> {
    g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect()
}

/// Declared empty at or below this best min-slack.
pub const EMPTY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseOne {
    pub w: Vec<f64>,
    pub s_star: f64,
}

impl PhaseOne {
    pub fn is_empty(&self) -> bool {
        self.s_star <= EMPTY_TOL
    }
}

/// `max s` subject to `g_j.w - h_j >= s` and `R -+ w_i >= s`, by a barrier
/// method on `(w, s)`. With `early_exit`, stops as soon as `s` exceeds the
/// emptiness tolerance (the returned `w` is then strictly feasible but not
/// the maximizer).
pub fn phase_one(loc: &LocalizationSet, start: Option<&[f64]>, early_exit: bool) -> Result<PhaseOne> {
    let n = loc.dim;
    let mut rows = box_rows(n, loc.radius, Some(n));
    for c in &loc.cuts {
        let mut a = dense(&c.g);
        a.push((n, -1.0));
        rows.push(Row { a, b: c.h });
    }
    let bar = Barrier { n: n + 1, rows };
    let w0: Vec<f64> = match start {
        Some(w) => {
            check_dim(n, w.len())?;
            w.to_vec()
        }
        None => vec![0.0; n],
    };
    let s0 = loc.min_slack(&w0) - 1.0;
    let mut z = w0;
    z.push(s0);
    let mut c = vec![0.0; n + 1];
    c[n] = -1.0;
    let m = bar.rows.len() as f64;
    let mut t = 1.0;
    loop {
        bar.newton(&c, t, &mut z, 100)?;
        let s = z[n];
        let gap = m / t;
        if early_exit && s > EMPTY_TOL {
            break;
        }
        if s + gap <= EMPTY_TOL || gap < 1e-10 {
            break;
        }
        t *= 10.0;
    }
    let s_star = z[n];
    z.truncate(n);
    Ok(PhaseOne { w: z, s_star })
}

/// Minimizer of the log-barrier potential of `loc`, from a strictly feasible
/// point.
pub fn analytic_center(loc: &LocalizationSet, w0: &[f64]) -> Result<Vec<f64>> {
    check_dim(loc.dim, w0.len())?;
    if !(loc.min_slack(w0) > 0.0) {
        return Err(Error::Numerical("analytic center needs a strictly feasible start".into()));
    }
    let mut rows = box_rows(loc.dim, loc.radius, None);
    rows.extend(loc.cuts.iter().map(|c| Row { a: dense(&c.g), b: c.h }));
    let bar = Barrier { n: loc.dim, rows };
    let mut w = w0.to_vec();
    let info = bar.newton(&vec![0.0; loc.dim], 0.0, &mut w, 500)?;
    debug!("analytic center: decrement^2 {:.2e}, |grad| {:.2e}", info.decrement_sq, info.grad_norm);
    if !(loc.min_slack(&w) > 0.0) {
        return Err(Error::Numerical("analytic center lost strict feasibility".into()));
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccpmConfig {
    pub radius: f64,
    pub eps_u: f64,
    pub max_iters: usize,
    /// Add augmented neighbors of each counterexample as extra cuts.
    pub augment: bool,
    pub attack: AttackConfig,
    pub bab: BabConfig,
    pub seed: u64,
    /// Wall-clock cap; running out ends the loop as `Budget`.
    pub max_seconds: Option<f64>,
}

impl Default for AccpmConfig {
    fn default() -> Self {
        Self {
            radius: 10.0,
            eps_u: 1e-3,
            max_iters: 200,
            augment: true,
            attack: AttackConfig { restarts: 20, steps: 50, ..Default::default() },
            bab: BabConfig::default(),
            seed: 0,
            max_seconds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Feasible { w: Vec<f64> },
    Empty,
    /// Iteration budget spent, or no verifier witness could cut the center.
    Budget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccpmIter {
    pub iter: usize,
    pub cuts: usize,
    pub s_star: f64,
    pub center: Vec<f64>,
    /// Smallest objective value found by descent, per condition.
    pub minima: Vec<(ConditionId, f64)>,
    pub verified: bool,
    pub new_cuts: usize,
    /// Whether the center violates one of the cuts added after it.
    pub progress: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct AccpmResult {
    pub outcome: Outcome,
    /// Input barrier with the last proposed `W` installed.
    pub barrier: VectorBarrier,
    pub trace: Vec<AccpmIter>,
    pub report: Option<VerificationReport>,
    /// Samples accumulated by the loop (initial ones first).
    pub samples: SampleSet,
}

fn push_sample(s: &mut SampleSet, cond: ConditionId, x: Vec<f64>) {
    match cond {
        ConditionId::UnsafePositivity => s.su.push(x),
        ConditionId::InitNonpositivity(_) => s.s0.push(x),
        ConditionId::Decrease(_) => s.sx.push(x),
    }
}

/// Learner/verifier loop: propose the analytic center of the localization
/// set, try to refute it, cut it away with the refutations, repeat.
pub fn accpm_loop(
    bf: &VectorBarrier,
    sys: &ClosedLoop,
    spec: &SafetySpec,
    init: &SampleSet,
    cfg: &AccpmConfig,
) -> Result<AccpmResult> {
    bf.validate()?;
    let start = Instant::now();
    let deadline = cfg.max_seconds.map(|s| start + Duration::from_secs_f64(s.max(0.0)));
    let mut bab = cfg.bab.clone();
    bab.deadline = match (bab.deadline, deadline) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let mut bf = bf.clone();
    let mut loc = LocalizationSet::new(bf.last_layer_len(), cfg.radius)?;
    let mut samples = init.clone();
    let mut trace: Vec<AccpmIter> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut warm: Option<Vec<f64>> = None;
    let mut report = None;
    let conds = ConditionId::all(bf.m());
    let graphs_for = |bf: &VectorBarrier| -> Result<Vec<_>> {
        conds.iter().map(|c| build_condition_graph(bf, sys, *c)).collect()
    };

    for iter in 0..cfg.max_iters {
        if bab.deadline.is_some_and(|d| Instant::now() >= d) {
            info!("accpm: out of time after {iter} iterations");
            break;
        }
        if iter == 0 {
            for cut in cuts_from_samples(&bf, init, sys, cfg.eps_u, Origin::Initial)? {
                loc.add(cut)?;
            }
        }
        let p1 = phase_one(&loc, warm.as_deref(), true)?;
        if p1.is_empty() {
            info!("accpm: localization set empty at iteration {iter} (s* = {:.3e})", p1.s_star);
            return Ok(AccpmResult { outcome: Outcome::Empty, barrier: bf, trace, report, samples });
        }
        let center = analytic_center(&loc, &p1.w)?;
        bf.set_last_layer(&center)?;
        warm = Some(center.clone());

        let graphs = graphs_for(&bf)?;
        let mut minima = Vec::new();
        let mut ces: Vec<(ConditionId, Vec<f64>, f64)> = Vec::new();
        for (k, (cond, g)) in conds.iter().zip(&graphs).enumerate() {
            let acfg = AttackConfig { seed: cfg.attack.seed.wrapping_add((iter * 131 + k) as u64), ..cfg.attack.clone() };
            let (x, v) = pgd_minimize(g, cond.domain(spec), &acfg);
            minima.push((*cond, v));
            if cond.violated(v) {
                ces.push((*cond, x, v));
            }
        }
        let mut verified = false;
        if ces.is_empty() {
            let r = verify_barrier(&bf, sys, spec, &bab)?;
            verified = true;
            if r.all_certified() {
                trace.push(AccpmIter {
                    iter,
                    cuts: loc.cuts.len(),
                    s_star: p1.s_star,
                    center: center.clone(),
                    minima,
                    verified,
                    new_cuts: 0,
                    progress: None,
                });
                info!("accpm: feasible after {} iterations", iter + 1);
                return Ok(AccpmResult {
                    outcome: Outcome::Feasible { w: center },
                    barrier: bf,
                    trace,
                    report: Some(r),
                    samples,
                });
            }
            for c in &r.conditions {
                match &c.status {
                    ConditionStatus::Falsified { state, value } => ces.push((c.condition, state.clone(), *value)),
                    ConditionStatus::Unknown { witness, upper_bound, .. } => {
                        // usable only if near-negative and its cut removes the center
                        if *upper_bound >= bab.gap_tol {
                            continue;
                        }
                        let one = sample_of(c.condition, witness.clone());
                        let cuts = cuts_from_samples(&bf, &one, sys, cfg.eps_u, Origin::Counterexample)?;
                        if cuts.iter().any(|k| k.source.condition == c.condition && k.slack(&center) < 0.0) {
                            ces.push((c.condition, witness.clone(), *upper_bound));
                        }
                    }
                    ConditionStatus::Certified { .. } => {}
                }
            }
            report = Some(r);
        }
        debug!("accpm iter {iter}: {} cuts, s* {:.3e}, {} counterexamples", loc.cuts.len(), p1.s_star, ces.len());
        trace.push(AccpmIter {
            iter,
            cuts: loc.cuts.len(),
            s_star: p1.s_star,
            center: center.clone(),
            minima,
            verified,
            new_cuts: 0,
            progress: None,
        });
        if ces.is_empty() {
            info!("accpm: verifier inconclusive without a usable witness at iteration {iter}");
            return Ok(AccpmResult { outcome: Outcome::Budget, barrier: bf, trace, report, samples });
        }

        let mut fresh = SampleSet::default();
        let mut aug = SampleSet::default();
        for (k, (cond, x, _)) in ces.iter().enumerate() {
            push_sample(&mut fresh, *cond, x.clone());
            if cfg.augment {
                let g = &graphs[conds.iter().position(|c| c == cond).expect("listed")];
                let acfg = AttackConfig { seed: cfg.attack.seed.wrapping_add(k as u64), ..cfg.attack.clone() };
                for y in augment(std::slice::from_ref(x), cond.domain(spec), g, &acfg, &mut rng) {
                    if cond.violated(condition_value(&bf, sys, *cond, &y)?) {
                        push_sample(&mut aug, *cond, y);
                    }
                }
            }
        }
        samples.extend(fresh.clone());
        samples.extend(aug.clone());
        // raw counterexamples first so their provenance wins on duplicates
        let mut cuts = cuts_from_samples(&bf, &fresh, sys, cfg.eps_u, Origin::Counterexample)?;
        cuts.extend(cuts_from_samples(&bf, &aug, sys, cfg.eps_u, Origin::Augmented)?);
        let before = loc.cuts.len();
        let mut progress = false;
        for cut in cuts {
            if let Some(k) = loc.add(cut)? {
                progress |= loc.cuts[k].slack(&center) < 0.0;
            }
        }
        let last = trace.last_mut().expect("pushed above");
        last.new_cuts = loc.cuts.len() - before;
        last.progress = Some(progress);
        if !progress {
            return Err(Error::Numerical(format!("iteration {iter}: rejected center survives every new cut")));
        }
    }
    Ok(AccpmResult { outcome: Outcome::Budget, barrier: bf, trace, report, samples })
}

fn sample_of(cond: ConditionId, x: Vec<f64>) -> SampleSet {
    let mut s = SampleSet::default();
    push_sample(&mut s, cond, x);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::barrier::{BarrierArch, Basis};
    use crate::systems::{builtin, BenchmarkId};
    use rand::Rng;

    fn src() -> CutSource {
        CutSource { condition: ConditionId::UnsafePositivity, state: vec![], origin: Origin::Initial }
    }

    fn cut(g: Vec<f64>, h: f64) -> Cut {
        Cut { g, h, source: src() }
    }

    #[test]
    fn scalar_identity_unsafe_cut() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let bf = VectorBarrier::new(Basis::Identity { dim: 2 }, Matrix::zeros(1, 2), vec![0.0], Matrix::identity(1), 0)
            .unwrap();
        let s = SampleSet { su: vec![vec![1.0, 0.0]], ..Default::default() };
        let cuts = cuts_from_samples(&bf, &s, &bm.system, 1e-3, Origin::Initial).unwrap();
        assert_eq!(cuts.len(), 1);
        assert_eq!(cuts[0].g, vec![1.0, 0.0, 1.0]);
        assert_eq!(cuts[0].h, 1e-3);
        assert!(cuts_from_samples(&bf, &SampleSet::default(), &bm.system, 1e-3, Origin::Initial).unwrap().is_empty());
    }

    #[test]
    fn cuts_agree_with_condition_values() {
        let bm = builtin(BenchmarkId::DoubleIntegrator).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = BarrierArch::Network { input_dim: 2, hidden: vec![6, 4], outputs: 3 };
        let mut bf = VectorBarrier::random(&arch, &mut rng).unwrap();
        let s = SampleSet::uniform(&bm.spec, 3, 3, 5, &mut rng);
        let cuts = cuts_from_samples(&bf, &s, &bm.system, 0.0, Origin::Initial).unwrap();
        for _ in 0..20 {
            let w: Vec<f64> = (0..bf.last_layer_len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            bf.set_last_layer(&w).unwrap();
            for c in &cuts {
                let v = condition_value(&bf, &bm.system, c.source.condition, &c.source.state).unwrap();
                assert!((c.slack(&w) - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn scaled_feasible_point_stays_feasible() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bf = VectorBarrier::random(&bm.arch, &mut rng).unwrap();
        let s = SampleSet::uniform(&bm.spec, 5, 5, 5, &mut rng);
        let cuts = cuts_from_samples(&bf, &s, &bm.system, 0.0, Origin::Initial).unwrap();
        for _ in 0..50 {
            let w: Vec<f64> = (0..bf.last_layer_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if cuts.iter().all(|c| c.slack(&w) >= 0.0) {
                let w2: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
                assert!(cuts.iter().all(|c| c.slack(&w2) >= 0.0));
            }
        }
    }

    #[test]
    fn phase_one_without_cuts() {
        let loc = LocalizationSet::new(3, 10.0).unwrap();
        let p = phase_one(&loc, None, false).unwrap();
        assert!((p.s_star - 10.0).abs() < 1e-6);
        assert!(p.w.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn phase_one_detects_contradiction() {
        let mut loc = LocalizationSet::new(1, 10.0).unwrap();
        loc.add(cut(vec![1.0], 1.0)).unwrap();
        loc.add(cut(vec![-1.0], 0.0)).unwrap();
        let p = phase_one(&loc, None, false).unwrap();
        assert!(p.s_star <= -0.5 + 1e-6);
        assert!(p.is_empty());
    }

    #[test]
    fn phase_one_point_satisfies_cuts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(1..8);
            let mut loc = LocalizationSet::new(n, 10.0).unwrap();
            let anchor: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            for _ in 0..rng.gen_range(1..30) {
                let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let h = dot(&g, &anchor) - rng.gen_range(0.1..1.0);
                loc.add(cut(g, h)).unwrap();
            }
            let p = phase_one(&loc, None, false).unwrap();
            assert!(p.s_star > 0.0);
            for c in &loc.cuts {
                assert!(c.slack(&p.w) >= p.s_star - 1e-6);
            }
        }
    }

    #[test]
    fn center_of_symmetric_sets_is_origin() {
        let loc = LocalizationSet::new(4, 10.0).unwrap();
        let c = analytic_center(&loc, &[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-9));
        let mut loc = LocalizationSet::new(1, 10.0).unwrap();
        loc.add(cut(vec![1.0], -1.0)).unwrap();
        loc.add(cut(vec![-1.0], -1.0)).unwrap();
        let c = analytic_center(&loc, &[0.3]).unwrap();
        assert!(c[0].abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_center_matches_bisection() {
        let mut loc = LocalizationSet::new(1, 10.0).unwrap();
        loc.add(cut(vec![1.0], 1.0)).unwrap();
        let c = analytic_center(&loc, &[5.0]).unwrap();
        let f = |w: f64| -1.0 / (w - 1.0) - 1.0 / (w + 10.0) + 1.0 / (10.0 - w);
        let (mut lo, mut hi) = (1.0 + 1e-12, 10.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((c[0] - 0.5 * (lo + hi)).abs() < 1e-8);
    }

    #[test]
    fn duplicates_keep_tighter_offset() {
        let mut loc = LocalizationSet::new(2, 10.0).unwrap();
        assert_eq!(loc.add(cut(vec![1.0, 1.0], 0.0)).unwrap(), Some(0));
        assert_eq!(loc.add(cut(vec![2.0, 2.0], 1.0)).unwrap(), Some(0));
        assert_eq!(loc.add(cut(vec![3.0, 3.0], 0.0)).unwrap(), None);
        assert_eq!(loc.cuts.len(), 1);
        assert!((loc.cuts[0].h - 1.0 / 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn contradictory_samples_are_empty() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let bf = VectorBarrier::new(Basis::Identity { dim: 2 }, Matrix::zeros(1, 2), vec![0.0], Matrix::identity(1), 0)
            .unwrap();
        let x = vec![-1.2, -1.2];
        let s = SampleSet { s0: vec![x.clone()], su: vec![x], sx: vec![] };
        let r = accpm_loop(&bf, &bm.system, &bm.spec, &s, &AccpmConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Empty);
    }

    #[test]
    fn zero_iterations_is_budget() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bf = VectorBarrier::random(&bm.arch, &mut rng).unwrap();
        let cfg = AccpmConfig { max_iters: 0, ..Default::default() };
        let r = accpm_loop(&bf, &bm.system, &bm.spec, &SampleSet::default(), &cfg).unwrap();
        assert_eq!(r.outcome, Outcome::Budget);
        assert!(r.trace.is_empty() && r.report.is_none());
    }
}
