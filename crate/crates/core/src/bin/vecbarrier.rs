use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vecbarrier::accpm::{accpm_loop, AccpmConfig, Outcome};
use vecbarrier::nn::VectorBarrier;
use vecbarrier::pipeline::{compare_csv, compare_harness, synthesize, Bundle, Certificate, PipelineConfig, SynthOutcome};
use vecbarrier::plot::{grid_csv, trajectories_csv};
use vecbarrier::sets::SampleSet;
use vecbarrier::systems::Verdict;
use vecbarrier::verifier::{verify_barrier, BabConfig, ConditionStatus};

#[derive(Parser)]
#[command(name = "vecbarrier", version, about = "Neural vector barrier synthesis and verification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train, verify and fine-tune until a certificate is found.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_finetune: bool,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines event log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Re-verify a certificate (or a barrier/system/spec bundle).
    Verify {
        #[arg(long)]
        cert: PathBuf,
        /// Verifier settings as JSON.
        #[arg(long)]
        bab: Option<PathBuf>,
    },
    /// Fine-tune only the last layer of a given barrier.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Extra sample set JSON (`s0`, `su`, `sx`) merged into the initial samples.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Roll out trajectories from the initial set.
    Simulate {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write barrier values on a grid over a planar workspace as CSV.
    Plot {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write sampled trajectories (`traj,k,x1,x2`) here.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        n_traj: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
    },
    /// Success/runtime table, with and without fine-tuning.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_config(path: &Path) -> Result<PipelineConfig, String> {
    PipelineConfig::load(path).map_err(|e| format!("{}: {e}", file_name(path)))
}

fn synth(config: &Path, seed: Option<u64>, no_finetune: bool, out: &Path, log: Option<PathBuf>) -> ExitCode {
    let mut cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if no_finetune {
        cfg.finetune.enabled = false;
    }
    if log.is_some() {
        cfg.log = log;
    }
    match synthesize(&cfg, config.parent()) {
        Ok(SynthOutcome::Certificate(cert)) => {
            if let Err(e) = cert.save(out) {
                return fail(e);
            }
            println!("certificate written to {} (outer iteration {}, fine-tuned: {})", file_name(out), cert.outer_iteration, cert.finetuned);
            ExitCode::SUCCESS
        }
        Ok(SynthOutcome::Failure(f)) => {
            let d = &f.diagnostics;
            eprintln!(
                "no certificate: {:?} after {} outer iterations, {} samples, {:.1}s",
                d.reason, d.outer_iters, d.samples, d.seconds
            );
            ExitCode::from(2)
        }
        Err(e) => fail(e),
    }
}

fn verify(cert: &Path, bab: Option<PathBuf>) -> ExitCode {
    let cfg = match bab {
        Some(p) => match std::fs::read_to_string(&p).map_err(|e| e.to_string()).and_then(|t| serde_json::from_str::<BabConfig>(&t).map_err(|e| e.to_string())) {
            Ok(c) => c,
            Err(e) => return fail(e),
        },
        None => BabConfig::default(),
    };
    let (b, sys) = match Bundle::load(cert) {
        Ok(x) => x,
        Err(e) => return fail(format!("{}: {e}", file_name(cert))),
    };
    let report = match verify_barrier(&b.barrier, &sys, &b.spec, &cfg) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    for c in &report.conditions {
        let detail = match &c.status {
            ConditionStatus::Certified { lower_bound } => format!("lower bound {lower_bound:.6e}"),
            ConditionStatus::Falsified { state, value } => format!("value {value:.6e} at {state:?}"),
            ConditionStatus::Unknown { lower_bound, upper_bound, nodes, .. } => {
                format!("bounds [{lower_bound:.6e}, {upper_bound:.6e}] after {nodes} nodes")
            }
        };
        println!("{:<14} {:<10} {detail}", c.condition.to_string(), c.status.label());
    }
    println!("{} nodes, {:.2}s", report.total_nodes(), report.seconds);
    if report.all_certified() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn finetune(model: &Path, config: &Path, out: &Path, max_iters: Option<usize>, extra: Option<PathBuf>) -> ExitCode {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let problem = match cfg.resolve(config.parent()) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let bf: VectorBarrier = match std::fs::read_to_string(model).map_err(|e| e.to_string()).and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string())) {
        Ok(b) => b,
        Err(e) => return fail(format!("{}: {e}", file_name(model))),
    };
    if bf.input_dim() != problem.spec.dim() {
        return fail("barrier input dimension does not match the system");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = &cfg.samples;
    let mut samples = SampleSet::uniform(&problem.spec, c.initial, c.unsafe_set, c.workspace, &mut rng);
    if let Some(p) = extra {
        match std::fs::read_to_string(&p).map_err(|e| e.to_string()).and_then(|t| serde_json::from_str::<SampleSet>(&t).map_err(|e| e.to_string())) {
            Ok(s) => samples.extend(s),
            Err(e) => return fail(format!("{}: {e}", file_name(&p))),
        }
    }
    let acfg = AccpmConfig {
        radius: cfg.finetune.radius,
        eps_u: cfg.finetune.eps_u,
        max_iters: max_iters.unwrap_or(cfg.finetune.max_iters),
        augment: cfg.finetune.augment,
        attack: cfg.attack.clone(),
        bab: cfg.bab.clone(),
        seed: cfg.seed,
        max_seconds: cfg.budget_seconds,
    };
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let res = match accpm_loop(&bf, &problem.system, &problem.spec, &samples, &acfg) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    println!("{} iterations", res.trace.len());
    match (res.outcome, res.report) {
        (Outcome::Feasible { .. }, Some(report)) => {
            let cert = Certificate {
                version: env!("CARGO_PKG_VERSION").into(),
                barrier: res.barrier,
                system: problem.system.to_def(),
                spec: problem.spec,
                report,
                accpm_trace: res.trace,
                seed: cfg.seed,
                outer_iteration: 0,
                finetuned: true,
                started_unix: started,
                finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
            };
            if let Err(e) = cert.save(out) {
                return fail(e);
            }
            println!("feasible; certificate written to {}", file_name(out));
            ExitCode::SUCCESS
        }
        (Outcome::Empty, _) => {
            println!("empty: no last layer satisfies the sampled conditions");
            ExitCode::from(3)
        }
        _ => {
            println!("budget exhausted");
            ExitCode::from(2)
        }
    }
}

fn simulate(cert: &Path, n: usize, steps: usize, seed: u64) -> ExitCode {
    let (b, sys) = match Bundle::load(cert) {
        Ok(x) => x,
        Err(e) => return fail(format!("{}: {e}", file_name(cert))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unsafe_runs = 0;
    for x0 in b.spec.initial.sample_uniform(n, &mut rng) {
        match sys.rollout(&b.spec, &x0, steps) {
            Ok(r) if r.verdict != Verdict::Safe => unsafe_runs += 1,
            Ok(_) => {}
            Err(e) => return fail(e),
        }
    }
    println!("{n} rollouts of {steps} steps: {unsafe_runs} unsafe");
    if unsafe_runs == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn plot(cert: &Path, grid: usize, out: &Path, traj: Option<PathBuf>, n_traj: usize, steps: usize) -> ExitCode {
    let (b, sys) = match Bundle::load(cert) {
        Ok(x) => x,
        Err(e) => return fail(format!("{}: {e}", file_name(cert))),
    };
    let csv = match grid_csv(&b.barrier, &b.spec, grid) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Err(e) = std::fs::write(out, csv) {
        return fail(e);
    }
    if let Some(p) = traj {
        let csv = match trajectories_csv(&sys, &b.spec, n_traj, steps, &mut ChaCha8Rng::seed_from_u64(0)) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        if let Err(e) = std::fs::write(&p, csv) {
            return fail(e);
        }
    }
    ExitCode::SUCCESS
}

fn compare(config: &Path, seeds: &[u64], out: &Path) -> ExitCode {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match compare_harness(&cfg, seeds, config.parent()) {
        Ok(rows) => {
            let csv = compare_csv(&rows);
            print!("{csv}");
            match std::fs::write(out, csv) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Err(e) => fail(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.cmd {
        Cmd::Synth { config, seed, no_finetune, out, log } => synth(&config, seed, no_finetune, &out, log),
        Cmd::Verify { cert, bab } => verify(&cert, bab),
        Cmd::Finetune { model, config, out, max_iters, samples } => finetune(&model, &config, &out, max_iters, samples),
        Cmd::Simulate { cert, n, steps, seed } => simulate(&cert, n, steps, seed),
        Cmd::Plot { cert, grid, out, trajectories, n_traj, steps } => plot(&cert, grid, &out, trajectories, n_traj, steps),
        Cmd::Compare { config, seeds, out } => compare(&config, &seeds, &out),
    }
}
