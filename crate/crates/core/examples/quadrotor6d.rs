//! The 6-state quadrotor benchmark with a short budget. Deep barrier
//! networks over six inputs usually exhaust input-splitting budgets, so no
//! outcome is expected.
//!
//!     cargo run --release --example quadrotor6d [-- <budget seconds>]

use vecbarrier::pipeline::{synthesize, PipelineConfig, SampleCounts, SynthOutcome};
use vecbarrier::systems::BenchmarkId;
use vecbarrier::training::TrainConfig;
use vecbarrier::verifier::BabConfig;

fn main() -> vecbarrier::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let budget = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300.0);
    let cfg = PipelineConfig {
        budget_seconds: Some(budget),
        outer_iters: 2,
        samples: SampleCounts { initial: 200, unsafe_set: 200, workspace: 1000 },
        train: TrainConfig { epochs: 200, ..Default::default() },
        bab: BabConfig { max_nodes: 2000, ..Default::default() },
        ..PipelineConfig::for_benchmark(BenchmarkId::Quadrotor6d)
    };
    match synthesize(&cfg, None)? {
        SynthOutcome::Certificate(c) => println!("certificate at outer iteration {}", c.outer_iteration),
        SynthOutcome::Failure(f) => println!("no certificate: {:?}", f.diagnostics),
    }
    Ok(())
}
