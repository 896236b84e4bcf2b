//! Output bounds of a random ReLU graph on shrinking boxes: interval
//! propagation, the backward linear relaxation, and both combined, next to
//! the sampled range.
//!
//!     cargo run --release --example bounds_demo

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vecbarrier::bounds::{best_bounds, BoundMethod};
use vecbarrier::nn::{random_graph, RandomGraphSpec};
use vecbarrier::sets::BoxDomain;

fn main() -> vecbarrier::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_graph(&RandomGraphSpec { input_dim: 2, max_relus: 24, width: (4, 8), allow_square: false }, &mut rng);
    println!("graph with {} ReLUs", g.relu_count());
    println!("{:>8} {:>24} {:>24} {:>24} {:>24}", "radius", "ibp", "backward", "refined", "sampled");
    for r in [1.0, 0.5, 0.1, 0.01] {
        let dom = BoxDomain::cube(2, -r, r)?;
        let show = |m| best_bounds(&g, &dom, m).map(|iv| format!("[{:+.4}, {:+.4}]", iv.lo, iv.hi));
        let vals: Vec<f64> = dom.sample_uniform(20_000, &mut rng).iter().map(|x| g.eval(x).unwrap()).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{r:>8} {:>24} {:>24} {:>24} {:>24}",
            show(BoundMethod::Ibp)?,
            show(BoundMethod::Backward)?,
            show(BoundMethod::Refined)?,
            format!("[{lo:+.4}, {hi:+.4}]")
        );
    }
    Ok(())
}
