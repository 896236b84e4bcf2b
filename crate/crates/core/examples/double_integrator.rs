//! End-to-end synthesis for the double integrator under its bundled ReLU
//! controller: a 2-30-20-10-5 vector barrier, trained, attacked, verified
//! and fine-tuned.
//!
//!     cargo run --release --example double_integrator [-- <seed> <budget seconds>]

use std::time::Instant;

use vecbarrier::pipeline::{synthesize, PipelineConfig, SynthOutcome};
use vecbarrier::systems::BenchmarkId;

fn main() -> vecbarrier::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let budget = args.next().and_then(|s| s.parse().ok()).unwrap_or(1800.0);
    let cfg = PipelineConfig {
        seed,
        budget_seconds: Some(budget),
        outer_iters: 10,
        ..PipelineConfig::for_benchmark(BenchmarkId::DoubleIntegrator)
    };
    let t = Instant::now();
    match synthesize(&cfg, None)? {
        SynthOutcome::Certificate(cert) => {
            println!(
                "certificate after {:.1}s at outer iteration {} (fine-tuned: {}, {} ACCPM iterations)",
                t.elapsed().as_secs_f64(),
                cert.outer_iteration,
                cert.finetuned,
                cert.accpm_trace.len()
            );
            let path = std::env::temp_dir().join(format!("double_integrator_seed{seed}.json"));
            cert.save(&path)?;
            println!("saved to {}", path.display());
        }
        SynthOutcome::Failure(f) => {
            let d = &f.diagnostics;
            println!("no certificate ({:?}) after {} outer iterations, {:.1}s, {} samples", d.reason, d.outer_iters, d.seconds, d.samples);
        }
    }
    Ok(())
}
