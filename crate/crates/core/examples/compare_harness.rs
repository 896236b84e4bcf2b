//! Success and runtime, with and without last-layer fine-tuning, over a few
//! seeds. Prints CSV.
//!
//!     cargo run --release --example compare_harness [-- example1|double_integrator <budget seconds>]

use vecbarrier::pipeline::{compare_csv, compare_harness, PipelineConfig};
use vecbarrier::systems::BenchmarkId;

fn main() -> vecbarrier::Result<()> {
    let mut args = std::env::args().skip(1);
    let id: BenchmarkId = args.next().as_deref().unwrap_or("example1").parse()?;
    let budget = args.next().and_then(|s| s.parse().ok()).unwrap_or(120.0);
    let cfg = PipelineConfig { budget_seconds: Some(budget), ..PipelineConfig::for_benchmark(id) };
    let rows = compare_harness(&cfg, &[0, 1, 2], None)?;
    print!("{}", compare_csv(&rows));
    Ok(())
}
