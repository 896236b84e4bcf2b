//! Branch-and-bound global minimization of small random ReLU graphs, checked
//! against exhaustive enumeration of activation patterns.
//!
//!     cargo run --release --example verify_demo

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vecbarrier::nn::{random_graph, RandomGraphSpec};
use vecbarrier::sets::BoxDomain;
use vecbarrier::verifier::{bab_min, bab_minimize, brute_force_min, BabConfig};

fn main() -> vecbarrier::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = BabConfig { gap_tol: 1e-8, ..Default::default() };
    for k in 0..8 {
        let g = random_graph(&RandomGraphSpec { input_dim: 2, max_relus: 12, width: (2, 6), allow_square: false }, &mut rng);
        let dom = BoxDomain::cube(2, -1.0, 1.0)?;
        let bab = bab_minimize(&g, &dom, &cfg)?;
        let (exact, _) = brute_force_min(&g, &dom)?;
        let (verdict, _) = bab_min(&g, &dom, 0.0, &BabConfig::default())?;
        println!(
            "graph {k}: {:2} ReLUs  bab [{:+.8}, {:+.8}] in {:5} nodes  exact {:+.8}  verdict {}",
            g.relu_count(),
            bab.lower,
            bab.upper,
            bab.nodes,
            exact,
            verdict.label()
        );
    }
    Ok(())
}
