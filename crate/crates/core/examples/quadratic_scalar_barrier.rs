//! A single barrier over the quadratic features (x1, x2, x1^2, x1 x2, x2^2)
//! found by the cutting-plane fine-tuner alone, with no training.
//!
//!     cargo run --release --example quadratic_scalar_barrier

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vecbarrier::accpm::{accpm_loop, AccpmConfig, Outcome};
use vecbarrier::linalg::Matrix;
use vecbarrier::nn::{Basis, VectorBarrier};
use vecbarrier::sets::SampleSet;
use vecbarrier::systems::{builtin, BenchmarkId};

fn main() -> vecbarrier::Result<()> {
    let bm = builtin(BenchmarkId::Example1)?;
    let bf = VectorBarrier::new(Basis::Quadratic { dim: 2 }, Matrix::zeros(1, 5), vec![0.0], Matrix::identity(1), 0)?;
    let samples = SampleSet::uniform(&bm.spec, 20, 20, 50, &mut ChaCha8Rng::seed_from_u64(0));
    let res = accpm_loop(&bf, &bm.system, &bm.spec, &samples, &AccpmConfig::default())?;
    for it in &res.trace {
        println!("iter {:3}: {:4} cuts, s* = {:.3e}, new cuts {}", it.iter, it.cuts, it.s_star, it.new_cuts);
    }
    match res.outcome {
        Outcome::Feasible { w } => {
            let names = ["x1", "x2", "x1^2", "x1*x2", "x2^2", "1"];
            let terms: Vec<String> = w.iter().zip(names).map(|(c, n)| format!("{c:+.4} {n}")).collect();
            println!("B(x) = {}", terms.join(" "));
        }
        other => println!("outcome: {other:?}"),
    }
    Ok(())
}
