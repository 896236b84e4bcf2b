//! Verification-aided learning: train, attack, verify, fine-tune, augment,
//! shrink-and-perturb, repeat. Also certificate persistence and the
//! fine-tuning versus verification-only comparison.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::accpm::{accpm_loop, AccpmConfig, AccpmIter, Outcome};
use crate::error::{Error, Result};
use crate::falsifier::{augment, pgd_minimize, AttackConfig};
use crate::linalg::Matrix;
use crate::nn::barrier::{BarrierArch, VectorBarrier};
use crate::nn::condition::{build_condition_graph, ConditionId};
use crate::sets::{BoxDomain, SafetySpec, SampleSet};
use crate::systems::{builtin, BenchmarkId, ClosedLoop, SystemDef};
use crate::training::{shrink_and_perturb, train, TrainConfig};
use crate::verifier::{verify_barrier, BabConfig, ConditionStatus, VerificationReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleCounts {
    pub initial: usize,
    pub unsafe_set: usize,
    pub workspace: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self { initial: 200, unsafe_set: 200, workspace: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub enabled: bool,
    pub radius: f64,
    pub eps_u: f64,
    pub max_iters: usize,
    pub augment: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        let a = AccpmConfig::default();
        Self { enabled: true, radius: a.radius, eps_u: a.eps_u, max_iters: 50, augment: a.augment }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub benchmark: Option<BenchmarkId>,
    /// System JSON, used instead of a benchmark; needs `spec` and `arch`.
    pub system: Option<PathBuf>,
    pub spec: Option<SafetySpec>,
    pub workspace: Option<BoxDomain>,
    pub arch: Option<BarrierArch>,
    /// Keeps `A` at this value instead of training it.
    pub a_fixed: Option<Matrix>,
    pub samples: SampleCounts,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub bab: BabConfig,
    pub finetune: FinetuneConfig,
    pub outer_iters: usize,
    pub shrink: f64,
    pub noise: f64,
    pub seed: u64,
    pub budget_seconds: Option<f64>,
    /// JSON-lines event log.
    pub log: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            benchmark: None,
            system: None,
            spec: None,
            workspace: None,
            arch: None,
            a_fixed: None,
            samples: SampleCounts::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            bab: BabConfig::default(),
            finetune: FinetuneConfig::default(),
            outer_iters: 5,
            shrink: 0.4,
            noise: 0.1,
            seed: 0,
            budget_seconds: None,
            log: None,
        }
    }
}

/// Everything a run needs once benchmark defaults and overrides are merged.
#[derive(Clone, Debug)]
pub struct Problem {
    pub system: ClosedLoop,
    pub spec: SafetySpec,
    pub arch: BarrierArch,
    pub a_fixed: Option<Matrix>,
}

impl PipelineConfig {
    pub fn for_benchmark(id: BenchmarkId) -> Self {
        Self { benchmark: Some(id), ..Default::default() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 {
            return Err(Error::Config("outer_iters must be at least 1".into()));
        }
        for (name, v) in [("shrink", self.shrink), ("noise", self.noise)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.budget_seconds.is_some_and(|b| !(b >= 0.0)) {
            return Err(Error::Config("budget must be non-negative".into()));
        }
        if !(self.finetune.radius > 0.0) || !(self.finetune.eps_u > 0.0) {
            return Err(Error::Config("fine-tuning radius and eps_u must be positive".into()));
        }
        self.train.validate()?;
        self.bab.validate()
    }

    /// Relative `system` paths resolve against `base`.
    pub fn resolve(&self, base: Option<&Path>) -> Result<Problem> {
        let (system, mut spec, arch, a_fixed) = match (&self.benchmark, &self.system) {
            (Some(id), None) => {
                let b = builtin(*id)?;
                (b.system, b.spec, b.arch, b.a_fixed)
            }
            (None, Some(p)) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                let spec = self.spec.clone().ok_or_else(|| Error::Config("`system` needs `spec`".into()))?;
                let arch = self.arch.clone().ok_or_else(|| Error::Config("`system` needs `arch`".into()))?;
                (SystemDef::load(&path)?, spec, arch, None)
            }
            _ => return Err(Error::Config("set exactly one of `benchmark` and `system`".into())),
        };
        if let Some(s) = &self.spec {
            spec = s.clone();
        }
        if let Some(ws) = &self.workspace {
            spec = SafetySpec::new(ws.clone(), spec.initial.clone(), spec.unsafe_set.clone())?;
        }
        let arch = self.arch.clone().unwrap_or(arch);
        let a_fixed = self.a_fixed.clone().or(a_fixed);
        if system.state_dim() != spec.dim() || arch.input_dim() != spec.dim() {
            return Err(Error::Config("system, spec and barrier dimensions disagree".into()));
        }
        Ok(Problem { system, spec, arch, a_fixed })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub version: String,
    pub barrier: VectorBarrier,
    pub system: SystemDef,
    pub spec: SafetySpec,
    pub report: VerificationReport,
    #[serde(default)]
    pub accpm_trace: Vec<AccpmIter>,
    pub seed: u64,
    pub outer_iteration: usize,
    pub finetuned: bool,
    pub started_unix: f64,
    pub finished_unix: f64,
}

impl Certificate {
    pub fn closed_loop(&self) -> Result<ClosedLoop> {
        self.system.build(None)
    }

    pub fn validate(&self) -> Result<()> {
        self.barrier.validate().or_else(|e| invalid(e.to_string()))?;
        let sys = self.closed_loop().or_else(|e| invalid(e.to_string()))?;
        let n = self.spec.dim();
        if sys.state_dim() != n || self.barrier.input_dim() != n {
            return invalid("barrier, system and spec dimensions disagree".into());
        }
        let want = ConditionId::all(self.barrier.m());
        let got: Vec<ConditionId> = self.report.conditions.iter().map(|c| c.condition).collect();
        if got != want {
            return invalid(format!("report must list the {} conditions in order", want.len()));
        }
        if let Some(c) = self.report.conditions.iter().find(|c| !c.status.is_certified()) {
            return invalid(format!("condition {} is not certified", c.condition));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cert: Certificate =
            serde_json::from_str(&text).map_err(|e| Error::InvalidCertificate(e.to_string()))?;
        cert.validate()?;
        Ok(cert)
    }

    /// Independent re-run of the verifier on the stored weights.
    pub fn reverify(&self, cfg: &BabConfig) -> Result<VerificationReport> {
        verify_barrier(&self.barrier, &self.closed_loop()?, &self.spec, cfg)
    }
}

/// The parts of a certificate needed to re-check it. Any certificate file
/// also parses as a bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub barrier: VectorBarrier,
    pub system: SystemDef,
    pub spec: SafetySpec,
}

impl Bundle {
    pub fn load(path: &Path) -> Result<(Self, ClosedLoop)> {
        let text = std::fs::read_to_string(path)?;
        let b: Bundle = serde_json::from_str(&text)?;
        let sys = b.system.build(path.parent())?;
        if sys.state_dim() != b.spec.dim() || b.barrier.input_dim() != b.spec.dim() {
            return Err(Error::Config("barrier, system and spec dimensions disagree".into()));
        }
        Ok((b, sys))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Budget,
    Iterations,
    NonFiniteLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub reason: FailureReason,
    pub outer_iters: usize,
    pub samples: usize,
    pub counterexamples: usize,
    pub augmented: usize,
    pub last_report: Option<VerificationReport>,
    pub last_accpm: Option<Outcome>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub barrier: VectorBarrier,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SynthOutcome {
    Certificate(Box<Certificate>),
    Failure(Box<Failure>),
}

impl SynthOutcome {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            SynthOutcome::Certificate(c) => Some(c),
            SynthOutcome::Failure(_) => None,
        }
    }
}

/// One JSON object per line: `{"t": seconds, "event": name, ...}`.
pub struct EventLog {
    out: Option<BufWriter<File>>,
    start: Instant,
}

impl EventLog {
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let out = match path {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        };
        Ok(Self { out, start: Instant::now() })
    }

    pub fn emit(&mut self, event: &str, fields: serde_json::Value) {
        let Some(out) = self.out.as_mut() else { return };
        let mut obj = serde_json::Map::new();
        obj.insert("t".into(), json!(self.start.elapsed().as_secs_f64()));
        obj.insert("event".into(), json!(event));
        if let serde_json::Value::Object(m) = fields {
            obj.extend(m);
        }
        let line = serde_json::Value::Object(obj).to_string();
        if writeln!(out, "{line}").and_then(|_| out.flush()).is_err() {
            warn!("event log write failed");
        }
    }
}

fn invalid<T>(m: String) -> Result<T> {
    Err(Error::InvalidCertificate(m))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn push_sample(s: &mut SampleSet, cond: ConditionId, x: Vec<f64>) {
    match cond {
        ConditionId::UnsafePositivity => s.su.push(x),
        ConditionId::InitNonpositivity(_) => s.s0.push(x),
        ConditionId::Decrease(_) => s.sx.push(x),
    }
}

fn tail(s: &SampleSet, from: &SampleSet) -> SampleSet {
    SampleSet {
        s0: s.s0[from.s0.len().min(s.s0.len())..].to_vec(),
        su: s.su[from.su.len().min(s.su.len())..].to_vec(),
        sx: s.sx[from.sx.len().min(s.sx.len())..].to_vec(),
    }
}

/// Runs the synthesis loop. Relative paths in `cfg` resolve against `base`.
pub fn synthesize(cfg: &PipelineConfig, base: Option<&Path>) -> Result<SynthOutcome> {
    cfg.validate()?;
    let problem = cfg.resolve(base)?;
    let mut log = EventLog::open(cfg.log.as_deref())?;
    synthesize_problem(cfg, &problem, &mut log)
}

pub fn synthesize_problem(cfg: &PipelineConfig, p: &Problem, log: &mut EventLog) -> Result<SynthOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let started_unix = unix_now();
    let deadline = cfg.budget_seconds.map(|s| start + Duration::from_secs_f64(s));
    let out_of_time = || deadline.is_some_and(|d| Instant::now() >= d);
    let mut bab = cfg.bab.clone();
    bab.deadline = match (bab.deadline, deadline) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = &cfg.samples;
    let mut samples = SampleSet::uniform(&p.spec, c.initial, c.unsafe_set, c.workspace, &mut rng);
    let mut bf = VectorBarrier::random(&p.arch, &mut rng)?;
    let mut tcfg = cfg.train.clone();
    if let Some(a) = &p.a_fixed {
        bf.a_mat = a.clone();
        bf.validate()?;
        tcfg.learnable.a_mat = false;
    }
    log.emit(
        "start",
        json!({"seed": cfg.seed, "finetune": cfg.finetune.enabled, "benchmark": cfg.benchmark, "samples": samples.len()}),
    );
    info!("synthesis: seed {}, fine-tuning {}", cfg.seed, if cfg.finetune.enabled { "on" } else { "off" });

    let conds = ConditionId::all(bf.m());
    let (mut n_ce, mut n_aug) = (0usize, 0usize);
    let mut last_report = None;
    let mut last_accpm = None;
    let fail = |reason, outer, bf: VectorBarrier, samples: &SampleSet, n_ce, n_aug, rep, acc, log: &mut EventLog| {
        let d = Diagnostics {
            reason,
            outer_iters: outer,
            samples: samples.len(),
            counterexamples: n_ce,
            augmented: n_aug,
            last_report: rep,
            last_accpm: acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        log.emit("failure", json!({"reason": reason, "outer_iters": outer}));
        Ok(SynthOutcome::Failure(Box::new(Failure { barrier: bf, diagnostics: d })))
    };
    let certify = |bf: VectorBarrier, report, trace, outer, finetuned, log: &mut EventLog| {
        let cert = Certificate {
            version: env!("CARGO_PKG_VERSION").into(),
            barrier: bf,
            system: p.system.to_def(),
            spec: p.spec.clone(),
            report,
            accpm_trace: trace,
            seed: cfg.seed,
            outer_iteration: outer,
            finetuned,
            started_unix,
            finished_unix: unix_now(),
        };
        log.emit("certificate", json!({"outer": outer, "finetuned": finetuned}));
        info!("synthesis: certificate at outer iteration {outer}");
        Ok(SynthOutcome::Certificate(Box::new(cert)))
    };

    for outer in 0..cfg.outer_iters {
        if out_of_time() {
            return fail(FailureReason::Budget, outer, bf, &samples, n_ce, n_aug, last_report, last_accpm, log);
        }
        tcfg.seed = cfg.train.seed.wrapping_add(cfg.seed).wrapping_add(outer as u64);
        let trained = match train(&bf, &samples, &p.system, &tcfg) {
            Ok(t) => t,
            Err(Error::NonFiniteLoss { epoch }) => {
                warn!("training diverged at epoch {epoch}");
                return fail(FailureReason::NonFiniteLoss, outer, bf, &samples, n_ce, n_aug, last_report, last_accpm, log);
            }
            Err(e) => return Err(e),
        };
        bf = trained.barrier;
        log.emit("train", json!({"outer": outer, "loss": trained.final_loss, "epochs": trained.epochs_run}));

        let graphs = conds.iter().map(|c| build_condition_graph(&bf, &p.system, *c)).collect::<Result<Vec<_>>>()?;
        let mut ces: Vec<(ConditionId, Vec<f64>)> = Vec::new();
        for (k, (cond, g)) in conds.iter().zip(&graphs).enumerate() {
            let acfg = AttackConfig {
                seed: cfg.attack.seed.wrapping_add(cfg.seed).wrapping_add((outer * 1009 + k) as u64),
                ..cfg.attack.clone()
            };
            let (x, v) = pgd_minimize(g, cond.domain(&p.spec), &acfg);
            if cond.violated(v) {
                ces.push((*cond, x));
            }
        }
        log.emit("attack", json!({"outer": outer, "counterexamples": ces.len()}));

        if ces.is_empty() {
            let report = verify_barrier(&bf, &p.system, &p.spec, &bab)?;
            log.emit(
                "verify",
                json!({"outer": outer, "certified": report.all_certified(), "nodes": report.total_nodes(),
                       "verdicts": report.conditions.iter().map(|c| c.status.label()).collect::<Vec<_>>()}),
            );
            if report.all_certified() {
                return certify(bf, report, Vec::new(), outer, false, log);
            }
            for c in &report.conditions {
                match &c.status {
                    ConditionStatus::Falsified { state, .. } => ces.push((c.condition, state.clone())),
                    ConditionStatus::Unknown { witness, upper_bound, .. } if *upper_bound < bab.gap_tol => {
                        ces.push((c.condition, witness.clone()))
                    }
                    _ => {}
                }
            }
            last_report = Some(report);
        }

        if cfg.finetune.enabled && !out_of_time() {
            let acfg = AccpmConfig {
                radius: cfg.finetune.radius,
                eps_u: cfg.finetune.eps_u,
                max_iters: cfg.finetune.max_iters,
                augment: cfg.finetune.augment,
                attack: cfg.attack.clone(),
                bab: bab.clone(),
                seed: cfg.seed.wrapping_add(outer as u64),
                max_seconds: None,
            };
            let acc = accpm_loop(&bf, &p.system, &p.spec, &samples, &acfg)?;
            log.emit(
                "accpm",
                json!({"outer": outer, "outcome": &acc.outcome, "iters": acc.trace.len(),
                       "cuts": acc.trace.last().map(|t| t.cuts)}),
            );
            if let (Outcome::Feasible { .. }, Some(report)) = (&acc.outcome, acc.report.clone()) {
                return certify(acc.barrier, report, acc.trace, outer, true, log);
            }
            let extra = tail(&acc.samples, &samples);
            n_ce += extra.len();
            samples.extend(extra);
            last_accpm = Some(acc.outcome);
        }

        let mut fresh = SampleSet::default();
        let mut aug = SampleSet::default();
        for (k, (cond, x)) in ces.iter().enumerate() {
            push_sample(&mut fresh, *cond, x.clone());
            let g = &graphs[conds.iter().position(|c| c == cond).expect("listed")];
            let acfg = AttackConfig { seed: cfg.attack.seed.wrapping_add(k as u64), ..cfg.attack.clone() };
            for y in augment(std::slice::from_ref(x), cond.domain(&p.spec), g, &acfg, &mut rng) {
                push_sample(&mut aug, *cond, y);
            }
        }
        n_ce += fresh.len();
        n_aug += aug.len();
        log.emit(
            "samples",
            json!({"outer": outer, "counterexample": fresh.len(), "augmented": aug.len(), "total": samples.len() + fresh.len() + aug.len()}),
        );
        samples.extend(fresh);
        samples.extend(aug);
        bf = shrink_and_perturb(&bf, cfg.shrink, cfg.noise, tcfg.learnable, &mut rng)?;
    }
    let reason = if out_of_time() { FailureReason::Budget } else { FailureReason::Iterations };
    fail(reason, cfg.outer_iters, bf, &samples, n_ce, n_aug, last_report, last_accpm, log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub seed: u64,
    pub method: String,
    pub status: String,
    pub seconds: f64,
    pub outer_iters: usize,
}

/// Runs every seed with and without fine-tuning.
pub fn compare_harness(cfg: &PipelineConfig, seeds: &[u64], base: Option<&Path>) -> Result<Vec<CompareRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let problem = cfg.resolve(base)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        for finetune in [true, false] {
            let mut c = cfg.clone();
            c.seed = seed;
            c.finetune.enabled = finetune;
            c.log = None;
            let t = Instant::now();
            let out = synthesize_problem(&c, &problem, &mut EventLog::open(None)?)?;
            let (status, outer) = match &out {
                SynthOutcome::Certificate(cert) => ("success", cert.outer_iteration + 1),
                SynthOutcome::Failure(f) => match f.diagnostics.reason {
                    FailureReason::Budget => ("timeout", f.diagnostics.outer_iters),
                    _ => ("failure", f.diagnostics.outer_iters),
                },
            };
            rows.push(CompareRow {
                seed,
                method: if finetune { "fine_tuning" } else { "verification_only" }.into(),
                status: status.into(),
                seconds: t.elapsed().as_secs_f64(),
                outer_iters: outer,
            });
        }
    }
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("seed,method,status,seconds,outer_iters\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.seed, r.method, r.status, r.seconds, r.outer_iters));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(id: BenchmarkId) -> PipelineConfig {
        PipelineConfig {
            samples: SampleCounts { initial: 20, unsafe_set: 20, workspace: 50 },
            train: TrainConfig { epochs: 200, learning_rate: 1e-2, ..Default::default() },
            attack: AttackConfig { restarts: 8, steps: 30, batch: 4, ..Default::default() },
            ..PipelineConfig::for_benchmark(id)
        }
    }

    #[test]
    fn config_validation() {
        let ok = PipelineConfig::for_benchmark(BenchmarkId::Example1);
        assert!(ok.validate().is_ok());
        for bad in [
            PipelineConfig { outer_iters: 0, ..ok.clone() },
            PipelineConfig { shrink: 1.5, ..ok.clone() },
            PipelineConfig { noise: -0.1, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        assert!(PipelineConfig::default().resolve(None).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"benchmark": "example1", "seed": 3}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.outer_iters, 5);
        assert_eq!(cfg.shrink, 0.4);
        assert!(cfg.finetune.enabled);
    }

    #[test]
    fn workspace_override() {
        let cfg = PipelineConfig {
            workspace: Some(crate::systems::double_integrator_small_workspace()),
            ..PipelineConfig::for_benchmark(BenchmarkId::DoubleIntegrator)
        };
        let p = cfg.resolve(None).unwrap();
        assert_eq!(p.spec.workspace.lo(), &[-0.5, -1.0]);
    }

    #[test]
    fn example1_certifies_and_round_trips() {
        let out = synthesize(&quick(BenchmarkId::Example1), None).unwrap();
        let cert = out.certificate().expect("example 1 certifies").clone();
        assert_eq!(cert.outer_iteration, 0);
        cert.validate().unwrap();
        assert!(cert.reverify(&BabConfig::default()).unwrap().all_certified());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cert.json");
        cert.save(&path).unwrap();
        let back = Certificate::load(&path).unwrap();
        assert_eq!(back, cert);
    }

    #[test]
    fn tampered_certificate_rejected() {
        let out = synthesize(&quick(BenchmarkId::Example1), None).unwrap();
        let cert = out.certificate().unwrap().clone();
        let mut v: serde_json::Value = serde_json::to_value(&cert).unwrap();
        v["barrier"]["A"][0][1] = json!(-0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(Certificate::load(&path), Err(Error::InvalidCertificate(_))));
        let mut c2 = cert.clone();
        c2.report.conditions[0].status = ConditionStatus::Unknown {
            lower_bound: -1.0,
            upper_bound: 1.0,
            nodes: 1,
            witness: vec![0.0, 0.0],
        };
        assert!(c2.validate().is_err());
    }

    #[test]
    fn untrained_double_integrator_returns_well_formed() {
        let cfg = PipelineConfig {
            outer_iters: 1,
            train: TrainConfig { epochs: 0, ..Default::default() },
            bab: BabConfig { max_nodes: 200, ..Default::default() },
            finetune: FinetuneConfig { max_iters: 3, ..Default::default() },
            ..quick(BenchmarkId::DoubleIntegrator)
        };
        match synthesize(&cfg, None).unwrap() {
            SynthOutcome::Certificate(c) => c.validate().unwrap(),
            SynthOutcome::Failure(f) => assert_eq!(f.diagnostics.outer_iters, 1),
        }
    }

    #[test]
    fn zero_budget_fails_with_budget() {
        let cfg = PipelineConfig { budget_seconds: Some(0.0), ..quick(BenchmarkId::Example1) };
        match synthesize(&cfg, None).unwrap() {
            SynthOutcome::Failure(f) => assert_eq!(f.diagnostics.reason, FailureReason::Budget),
            SynthOutcome::Certificate(_) => panic!("no time to certify"),
        }
    }

    #[test]
    fn event_log_lines_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let cfg = PipelineConfig { log: Some(path.clone()), finetune: FinetuneConfig { enabled: false, ..Default::default() }, ..quick(BenchmarkId::Example1) };
        synthesize(&cfg, None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let events: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(events[0]["event"], "start");
        assert_eq!(events[0]["finetune"], false);
    }

    #[test]
    fn compare_rows_shape() {
        let cfg = PipelineConfig { budget_seconds: Some(0.0), ..quick(BenchmarkId::Example1) };
        let rows = compare_harness(&cfg, &[7], None).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.status == "success" || r.status == "timeout"));
        let csv = compare_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn deterministic_training_path() {
        let cfg = PipelineConfig { outer_iters: 1, finetune: FinetuneConfig { enabled: false, ..Default::default() }, ..quick(BenchmarkId::Example1) };
        let a = synthesize(&cfg, None).unwrap();
        let b = synthesize(&cfg, None).unwrap();
        let w = |o: &SynthOutcome| match o {
            SynthOutcome::Certificate(c) => c.barrier.clone(),
            SynthOutcome::Failure(f) => f.barrier.clone(),
        };
        assert_eq!(w(&a), w(&b));
    }
}
