//! Two linear barriers coupled by A = [[1, 1], [0, 1]] certify the sheared
//! linear system, then the certificate is re-verified, simulated and
//! written out as a plot grid.
//!
//!     cargo run --release --example example1_vector_barrier

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vecbarrier::pipeline::{synthesize, PipelineConfig, SynthOutcome};
use vecbarrier::plot::grid_csv;
use vecbarrier::systems::{BenchmarkId, Verdict};
use vecbarrier::verifier::BabConfig;

fn main() -> vecbarrier::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = PipelineConfig::for_benchmark(BenchmarkId::Example1);
    let cert = match synthesize(&cfg, None)? {
        SynthOutcome::Certificate(c) => c,
        SynthOutcome::Failure(f) => {
            println!("no certificate: {:?}", f.diagnostics.reason);
            return Ok(());
        }
    };
    let bf = &cert.barrier;
    for i in 0..bf.m() {
        println!("B{}(x) = {:+.4} x1 {:+.4} x2 {:+.4}", i + 1, bf.c_mat.get(i, 0), bf.c_mat.get(i, 1), bf.b_vec[i]);
    }
    for c in &cert.report.conditions {
        println!("  {:<12} {}", c.condition.to_string(), c.status.label());
    }

    let again = cert.reverify(&BabConfig::default())?;
    println!("re-verified: {}", again.all_certified());

    let sys = cert.closed_loop()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let unsafe_runs = cert
        .spec
        .initial
        .sample_uniform(10_000, &mut rng)
        .iter()
        .filter(|x0| sys.rollout(&cert.spec, x0, 200).map(|r| r.verdict != Verdict::Safe).unwrap_or(true))
        .count();
    println!("unsafe rollouts: {unsafe_runs} / 10000");

    let csv = grid_csv(bf, &cert.spec, 41)?;
    let path = std::env::temp_dir().join("example1_grid.csv");
    std::fs::write(&path, csv)?;
    println!("grid written to {}", path.display());
    Ok(())
}
