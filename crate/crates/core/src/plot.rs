//! CSV data for drawing zero-level sets of planar barriers.

use std::fmt::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::barrier::VectorBarrier;
use crate::sets::SafetySpec;
use crate::systems::ClosedLoop;

fn axis(lo: f64, hi: f64, g: usize) -> Vec<f64> {
    if g == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..g).map(|i| lo + (hi - lo) * i as f64 / (g - 1) as f64).collect()
}

fn require_planar(n: usize) -> Result<()> {
    if n != 2 {
        return Err(Error::Unsupported(format!("plotting needs a 2-D state, got {n}-D")));
    }
    Ok(())
}

/// `g x g` grid over the workspace, header `x1,x2,B1,...,Bm`, `x1` varying
/// fastest.
pub fn grid_csv(bf: &VectorBarrier, spec: &SafetySpec, g: usize) -> Result<String> {
    require_planar(spec.dim())?;
    if g == 0 {
        return Err(Error::Config("grid size must be positive".into()));
    }
    let ws = &spec.workspace;
    let mut out = String::from("x1,x2");
    for i in 1..=bf.m() {
        write!(out, ",B{i}").expect("string write");
    }
    out.push('\n');
    for x2 in axis(ws.lo()[1], ws.hi()[1], g) {
        for x1 in axis(ws.lo()[0], ws.hi()[0], g) {
            write!(out, "{x1},{x2}").expect("string write");
            for v in bf.eval(&[x1, x2])? {
                write!(out, ",{v}").expect("string write");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Rollouts from uniform initial states, header `traj,k,x1,x2`.
pub fn trajectories_csv<R: Rng + ?Sized>(
    sys: &ClosedLoop,
    spec: &SafetySpec,
    n: usize,
    steps: usize,
    rng: &mut R,
) -> Result<String> {
    require_planar(spec.dim())?;
    let mut out = String::from("traj,k,x1,x2\n");
    for (t, x0) in spec.initial.sample_uniform(n, rng).iter().enumerate() {
        let r = sys.rollout(spec, x0, steps)?;
        for (k, x) in r.trajectory.iter().enumerate() {
            writeln!(out, "{t},{k},{},{}", x[0], x[1]).expect("string write");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin, BenchmarkId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_shape() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let bf = VectorBarrier::random(&bm.arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let csv = grid_csv(&bf, &bm.spec, 3).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x1,x2,B1,B2");
        assert_eq!(lines.len(), 10);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
        assert!(csv.ends_with('\n'));
        assert!(lines[1].starts_with("-2,-2,"));
    }

    #[test]
    fn rejects_non_planar() {
        let bm = builtin(BenchmarkId::Quadrotor6d).unwrap();
        let bf = VectorBarrier::random(&bm.arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(grid_csv(&bf, &bm.spec, 3), Err(Error::Unsupported(_))));
    }

    #[test]
    fn trajectories_start_in_initial_set() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let csv = trajectories_csv(&bm.system, &bm.spec, 4, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for l in csv.lines().skip(1) {
            let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            if f[1] == 0.0 {
                assert!(bm.spec.initial.contains(&f[2..]).unwrap());
            }
        }
    }
}
