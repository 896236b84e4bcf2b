//! Searches for a single linear barrier B(f(x)) <= gamma B(x) on the sheared
//! system for two decay rates and reports what the fine-tuner concludes.
//!
//!     cargo run --release --example scalar_linear_infeasibility

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vecbarrier::accpm::{accpm_loop, AccpmConfig};
use vecbarrier::linalg::Matrix;
use vecbarrier::nn::{Basis, VectorBarrier};
use vecbarrier::sets::SampleSet;
use vecbarrier::systems::{builtin, BenchmarkId};

fn main() -> vecbarrier::Result<()> {
    let bm = builtin(BenchmarkId::Example1)?;
    let samples = SampleSet::uniform(&bm.spec, 20, 20, 50, &mut ChaCha8Rng::seed_from_u64(0));
    for gamma in [0.5, 1.0] {
        let a = Matrix::from_rows(&[vec![gamma]])?;
        let bf = VectorBarrier::new(Basis::Identity { dim: 2 }, Matrix::zeros(1, 2), vec![0.0], a, 0)?;
        let cfg = AccpmConfig { max_iters: 500, ..Default::default() };
        let res = accpm_loop(&bf, &bm.system, &bm.spec, &samples, &cfg)?;
        println!("gamma = {gamma}: {:?} after {} iterations", res.outcome, res.trace.len());
    }
    Ok(())
}
