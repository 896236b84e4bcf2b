//! Projected signed-gradient search for negative values of a condition
//! objective, and counterexample augmentation.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::graph::CompGraph;
use crate::sets::BoxDomain;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub restarts: usize,
    pub steps: usize,
    /// Initial step as a fraction of the domain width, per coordinate.
    pub step_frac: f64,
    /// Augmentation points per counterexample.
    pub batch: usize,
    /// Augmentation box radius as a fraction of the domain width.
    pub radius_frac: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { restarts: 50, steps: 100, step_frac: 0.1, batch: 32, radius_frac: 0.05, seed: 0 }
    }
}

/// Total order on candidates: value first, then the state lexicographically.
pub(crate) fn cmp_candidate(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| {
        for (u, v) in a.0.iter().zip(&b.0) {
            match u.total_cmp(v) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    })
}

/// Descends from `x0` with step `step[j] * (1 - k / steps)` along the sign of
/// the gradient, projecting onto `domain`. Returns the best visited state and
/// its re-evaluated value.
pub fn pgd_descend(g: &CompGraph, domain: &BoxDomain, x0: &[f64], step: &[f64], steps: usize) -> (Vec<f64>, f64) {
    let mut x = domain.project_unchecked(x0);
    let mut best = (x.clone(), g.eval_unchecked(&x));
    for k in 0..steps {
        let (v, grad) = g.value_and_grad_unchecked(&x);
        let cand = (x.clone(), v);
        if cmp_candidate(&cand, &best) == Ordering::Less {
            best = cand;
        }
        if grad.iter().all(|d| *d == 0.0) {
            break;
        }
        let decay = 1.0 - k as f64 / steps as f64;
        for ((xi, d), s) in x.iter_mut().zip(&grad).zip(step) {
            if *d > 0.0 {
                *xi -= s * decay;
            } else if *d < 0.0 {
                *xi += s * decay;
            }
        }
        x = domain.project_unchecked(&x);
    }
    let v = g.eval_unchecked(&x);
    let last = (x, v);
    if cmp_candidate(&last, &best) == Ordering::Less {
        best = last;
    }
    let v = g.eval_unchecked(&best.0);
    (best.0, v)
}

/// Multi-start minimization over the box. Half of the starts are uniform,
/// the rest are corners and the center.
pub fn pgd_minimize(g: &CompGraph, domain: &BoxDomain, cfg: &AttackConfig) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let restarts = cfg.restarts.max(1);
    let n_uniform = restarts / 2;
    let mut starts = domain.sample_uniform(n_uniform, &mut rng);
    let structured = restarts - n_uniform;
    starts.push(domain.center());
    let corners = domain.corners(structured.saturating_sub(1));
    starts.extend(corners);
    starts.extend(domain.sample_uniform(restarts.saturating_sub(starts.len()), &mut rng));
    let step: Vec<f64> = domain.widths().iter().map(|w| w * cfg.step_frac).collect();
    starts
        .iter()
        .map(|x0| pgd_descend(g, domain, x0, &step, cfg.steps))
        .min_by(cmp_candidate)
        .expect("at least one start")
}

/// The best state found if its value is negative.
pub fn pgd_falsify(g: &CompGraph, domain: &BoxDomain, cfg: &AttackConfig) -> Option<(Vec<f64>, f64)> {
    let best = pgd_minimize(g, domain, cfg);
    (best.1 < 0.0).then_some(best)
}

/// Samples `cfg.batch` states around each counterexample (radius
/// `cfg.radius_frac` of the domain width, clipped to the domain) and refines
/// each by descent. Every output lies in `domain`.
pub fn augment<R: Rng + ?Sized>(
    ces: &[Vec<f64>],
    domain: &BoxDomain,
    g: &CompGraph,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let radius: Vec<f64> = domain.widths().iter().map(|w| w * cfg.radius_frac).collect();
    let step: Vec<f64> = radius.iter().map(|r| r * cfg.step_frac * 2.0).collect();
    let mut out = Vec::with_capacity(ces.len() * cfg.batch);
    for ce in ces {
        let Ok(nb) = domain.neighborhood(ce, &radius) else { continue };
        for x0 in nb.sample_uniform(cfg.batch, rng) {
            out.push(pgd_descend(g, domain, &x0, &step, cfg.steps).0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::graph::GraphBuilder;
    use crate::nn::mlp::AffineMap;

    fn constant(v: f64) -> CompGraph {
        let mut b = GraphBuilder::new(2);
        let x = b.input();
        let o = b.affine(x, AffineMap::new(Matrix::zeros(1, 2), vec![v]).unwrap()).unwrap();
        b.finish(o).unwrap()
    }

    fn identity_1d() -> CompGraph {
        let mut b = GraphBuilder::new(1);
        let x = b.input();
        let o = b.affine(x, AffineMap::identity(1)).unwrap();
        b.finish(o).unwrap()
    }

    /// |x1 - 0.3| + |x2 + 0.2| as a ReLU graph.
    pub(crate) fn bowl() -> CompGraph {
        let mut b = GraphBuilder::new(2);
        let x = b.input();
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let h = b.affine(x, AffineMap::new(w, vec![-0.3, 0.3, 0.2, -0.2]).unwrap()).unwrap();
        let r = b.relu(h).unwrap();
        let o = b.affine(r, AffineMap::new(Matrix::from_rows(&[vec![1.0; 4]]).unwrap(), vec![0.0]).unwrap()).unwrap();
        b.finish(o).unwrap()
    }

    #[test]
    fn constant_negative_found() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let (x, v) = pgd_falsify(&constant(-1.0), &dom, &AttackConfig::default()).unwrap();
        assert_eq!(v, -1.0);
        assert!(dom.contains(&x).unwrap());
        assert!(pgd_falsify(&constant(1.0), &dom, &AttackConfig::default()).is_none());
    }

    #[test]
    fn linear_minimized_at_boundary() {
        let dom = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let (x, v) = pgd_falsify(&identity_1d(), &dom, &AttackConfig::default()).unwrap();
        assert!((x[0] + 1.0).abs() < 1e-6 && (v + 1.0).abs() < 1e-6);
    }

    #[test]
    fn returned_value_is_re_evaluated() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let g = bowl();
        let (x, v) = pgd_minimize(&g, &dom, &AttackConfig::default());
        assert!((g.eval(&x).unwrap() - v).abs() <= 1e-9);
        assert!(v < 1e-3);
    }

    #[test]
    fn deterministic_given_seed() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let cfg = AttackConfig { seed: 4, ..Default::default() };
        assert_eq!(pgd_minimize(&bowl(), &dom, &cfg), pgd_minimize(&bowl(), &dom, &cfg));
    }

    #[test]
    fn augment_counts_and_containment() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AttackConfig::default();
        assert!(augment(&[], &dom, &bowl(), &cfg, &mut rng).is_empty());
        let out = augment(&[vec![1.0, -1.0]], &dom, &bowl(), &cfg, &mut rng);
        assert_eq!(out.len(), 32);
        assert!(out.iter().all(|x| dom.contains(x).unwrap()));
    }

    #[test]
    fn augmented_states_cluster_at_minimizer() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let g = bowl();
        // dense grid locates the unique minimizer
        let mut best = (vec![0.0, 0.0], f64::INFINITY);
        for i in 0..=200 {
            for j in 0..=200 {
                let x = vec![-1.0 + i as f64 * 0.01, -1.0 + j as f64 * 0.01];
                let v = g.eval(&x).unwrap();
                if v < best.1 {
                    best = (x, v);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ce = vec![best.0[0] + 0.05, best.0[1] - 0.04];
        for x in augment(&[ce], &dom, &g, &AttackConfig::default(), &mut rng) {
            for j in 0..2 {
                assert!((x[j] - best.0[j]).abs() <= 0.1 * dom.width(j));
            }
        }
    }
}
