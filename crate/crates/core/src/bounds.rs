//! Sound output bounds of a [`CompGraph`] over a box: interval propagation
//! and a backward linear relaxation.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::nn::graph::{CompGraph, Node, NodeId};
use crate::sets::BoxDomain;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(!(lo > hi), "interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Tightest interval implied by both.
    pub fn intersect(&self, other: &Interval) -> Interval {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        // Both are sound, so any crossing is rounding noise.
        if lo > hi {
            let mid = 0.5 * (lo + hi);
            Interval { lo: mid, hi: mid }
        } else {
            Interval { lo, hi }
        }
    }
}

/// Affine lower and upper bounding functions of a scalar graph, valid over
/// `domain`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBounds {
    pub lower: (Vec<f64>, f64),
    pub upper: (Vec<f64>, f64),
    pub domain: BoxDomain,
}

impl LinearBounds {
    pub fn lower_at(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.lower.0, x) + self.lower.1
    }

    pub fn upper_at(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.upper.0, x) + self.upper.1
    }
}

/// Relative pad applied to concretized bounds so floating-point rounding in
/// the bound computation cannot make them unsound.
const PAD: f64 = 1e-12;

fn pad_lo(v: f64, scale: f64) -> f64 {
    v - PAD * (1.0 + scale)
}

fn pad_hi(v: f64, scale: f64) -> f64 {
    v + PAD * (1.0 + scale)
}

fn affine_interval(map: &crate::nn::mlp::AffineMap, x: &[Interval]) -> Vec<Interval> {
    (0..map.out_dim())
        .map(|i| {
            let mut lo = map.bias[i];
            let mut hi = map.bias[i];
            let mut scale = map.bias[i].abs();
            for (w, iv) in map.weight.row(i).iter().zip(x) {
                if *w >= 0.0 {
                    lo += w * iv.lo;
                    hi += w * iv.hi;
                } else {
                    lo += w * iv.hi;
                    hi += w * iv.lo;
                }
                scale += w.abs() * iv.lo.abs().max(iv.hi.abs());
            }
            Interval::new(pad_lo(lo, scale), pad_hi(hi, scale))
        })
        .collect()
}

fn node_interval(node: &Node, ivs: &[Vec<Interval>], domain: &BoxDomain) -> Vec<Interval> {
    match node {
        Node::Input { .. } => domain.lo().iter().zip(domain.hi()).map(|(l, h)| Interval::new(*l, *h)).collect(),
        Node::Affine { input, map } => affine_interval(map, &ivs[*input]),
        Node::Relu { input } => ivs[*input].iter().map(|iv| Interval::new(iv.lo.max(0.0), iv.hi.max(0.0))).collect(),
        Node::Square { input } => ivs[*input]
            .iter()
            .map(|iv| {
                let (l2, h2) = (iv.lo * iv.lo, iv.hi * iv.hi);
                if iv.lo >= 0.0 {
                    Interval::new(l2, h2 * (1.0 + PAD))
                } else if iv.hi <= 0.0 {
                    Interval::new(h2, l2 * (1.0 + PAD))
                } else {
                    Interval::new(0.0, l2.max(h2) * (1.0 + PAD))
                }
            })
            .collect(),
        Node::Sum { lhs, rhs } => ivs[*lhs]
            .iter()
            .zip(&ivs[*rhs])
            .map(|(a, b)| {
                let s = a.lo.abs().max(a.hi.abs()) + b.lo.abs().max(b.hi.abs());
                Interval::new(pad_lo(a.lo + b.lo, s), pad_hi(a.hi + b.hi, s))
            })
            .collect(),
        Node::Negate { input } => ivs[*input].iter().map(|iv| Interval::new(-iv.hi, -iv.lo)).collect(),
    }
}

/// Interval bounds of every node up to the output.
pub fn ibp_all(g: &CompGraph, domain: &BoxDomain) -> Result<Vec<Vec<Interval>>> {
    check_dim(g.input_dim(), domain.dim())?;
    let mut ivs: Vec<Vec<Interval>> = Vec::with_capacity(g.output() + 1);
    for node in &g.nodes()[..=g.output()] {
        let v = node_interval(node, &ivs, domain);
        ivs.push(v);
    }
    Ok(ivs)
}

pub fn ibp(g: &CompGraph, domain: &BoxDomain) -> Result<Interval> {
    Ok(ibp_all(g, domain)?[g.output()][0])
}

fn add_into(slot: &mut Option<Matrix>, m: Matrix) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(m.data()) {
                *a += b;
            }
        }
        None => *slot = Some(m),
    }
}

/// Lower linear bounds on each row of `coef * value(target)`: returns, per
/// row, `(a, c)` with `a.x + c <= row(x)` over the box described by `ivs`.
fn backward_lower(g: &CompGraph, ivs: &[Vec<Interval>], target: NodeId, coef: Matrix) -> (Matrix, Vec<f64>) {
    let k = coef.rows();
    let mut lam: Vec<Option<Matrix>> = vec![None; target + 1];
    let mut cst = vec![0.0; k];
    lam[target] = Some(coef);
    for id in (1..=target).rev() {
        let Some(l) = lam[id].take() else { continue };
        match &g.nodes()[id] {
            Node::Input { .. } => unreachable!("only node 0 is an input"),
            Node::Affine { input, map } => {
                for (r, c) in cst.iter_mut().enumerate() {
                    *c += crate::linalg::dot(l.row(r), &map.bias);
                }
                add_into(&mut lam[*input], l.matmul(&map.weight).expect("shapes"));
            }
            Node::Sum { lhs, rhs } => {
                add_into(&mut lam[*lhs], l.clone());
                add_into(&mut lam[*rhs], l);
            }
            Node::Negate { input } => add_into(&mut lam[*input], l.map(|v| -v)),
            Node::Relu { input } => {
                let pre = &ivs[*input];
                let mut out = Matrix::zeros(k, pre.len());
                for r in 0..k {
                    for (j, iv) in pre.iter().enumerate() {
                        let w = l.get(r, j);
                        if w == 0.0 || iv.hi <= 0.0 {
                            continue;
                        }
                        if iv.lo >= 0.0 {
                            out.set(r, j, w);
                        } else if w > 0.0 {
                            // lower relaxation z >= alpha y
                            if iv.hi >= -iv.lo {
                                out.set(r, j, w);
                            }
                        } else {
                            // upper relaxation z <= s (y - lo), the chord
                            let s = iv.hi / (iv.hi - iv.lo);
                            out.set(r, j, w * s);
                            cst[r] -= w * s * iv.lo;
                        }
                    }
                }
                add_into(&mut lam[*input], out);
            }
            Node::Square { input } => {
                let pre = &ivs[*input];
                let mut out = Matrix::zeros(k, pre.len());
                for r in 0..k {
                    for (j, iv) in pre.iter().enumerate() {
                        let w = l.get(r, j);
                        if w == 0.0 {
                            continue;
                        }
                        if w > 0.0 {
                            // tangent at the midpoint: z >= 2 t y - t^2
                            let t = 0.5 * (iv.lo + iv.hi);
                            out.set(r, j, 2.0 * t * w);
                            cst[r] -= w * t * t;
                        } else {
                            // chord: z <= (lo + hi) y - lo hi
                            out.set(r, j, w * (iv.lo + iv.hi));
                            cst[r] -= w * iv.lo * iv.hi;
                        }
                    }
                }
                add_into(&mut lam[*input], out);
            }
        }
    }
    let a = lam[0].take().unwrap_or_else(|| Matrix::zeros(k, g.input_dim()));
    (a, cst)
}

/// `min_{x in box} a.x + c`, padded down.
fn concretize_lower(a: &[f64], c: f64, domain: &BoxDomain) -> f64 {
    let mut v = c;
    let mut scale = c.abs();
    for ((w, l), h) in a.iter().zip(domain.lo()).zip(domain.hi()) {
        let t = if *w >= 0.0 { w * l } else { w * h };
        v += t;
        scale += t.abs();
    }
    pad_lo(v, scale)
}

fn relaxed_nodes(g: &CompGraph) -> Vec<NodeId> {
    let mut ids: Vec<NodeId> = g.nodes()[..=g.output()]
        .iter()
        .filter_map(|n| match n {
            Node::Relu { input } | Node::Square { input } => Some(*input),
            _ => None,
        })
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Node intervals where the inputs of every ReLU/square node are tightened
/// by backward passes (using the already tightened earlier nodes).
pub fn refined_intervals(g: &CompGraph, domain: &BoxDomain) -> Result<Vec<Vec<Interval>>> {
    check_dim(g.input_dim(), domain.dim())?;
    let relaxed = relaxed_nodes(g);
    let mut ivs: Vec<Vec<Interval>> = Vec::with_capacity(g.output() + 1);
    for (id, node) in g.nodes()[..=g.output()].iter().enumerate() {
        let mut v = node_interval(node, &ivs, domain);
        if relaxed.binary_search(&id).is_ok() && !matches!(node, Node::Input { .. }) {
            let d = g.dim(id);
            let mut coef = Matrix::zeros(2 * d, d);
            for j in 0..d {
                coef.set(j, j, 1.0);
                coef.set(d + j, j, -1.0);
            }
            // the node's own entry is not used by the backward pass
            ivs.push(v.clone());
            let (a, c) = backward_lower(g, &ivs, id, coef);
            for j in 0..d {
                let lo = concretize_lower(a.row(j), c[j], domain);
                let hi = -concretize_lower(a.row(d + j), c[d + j], domain);
                v[j] = v[j].intersect(&Interval::new(lo.min(hi), hi.max(lo)));
            }
            ivs.pop();
        }
        ivs.push(v);
    }
    Ok(ivs)
}

/// Backward linear relaxation of the output using the given node intervals
/// (at least every ReLU/square input must be present).
pub fn backward_linear(
    g: &CompGraph,
    domain: &BoxDomain,
    intervals: &[Vec<Interval>],
) -> Result<(LinearBounds, Interval)> {
    check_dim(g.input_dim(), domain.dim())?;
    for id in relaxed_nodes(g) {
        if intervals.get(id).map_or(true, |v| v.len() != g.dim(id)) {
            return Err(Error::InvalidGraph(format!("missing intermediate interval for node {id}")));
        }
    }
    let coef = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).expect("static");
    let (a, c) = backward_lower(g, intervals, g.output(), coef);
    let lower = (a.row(0).to_vec(), c[0]);
    let upper = (a.row(1).iter().map(|v| -v).collect::<Vec<_>>(), -c[1]);
    let lo = concretize_lower(&lower.0, lower.1, domain);
    let hi = -concretize_lower(a.row(1), c[1], domain);
    Ok((LinearBounds { lower, upper, domain: domain.clone() }, Interval::new(lo.min(hi), hi.max(lo))))
}

/// Which bounding passes to combine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    Ibp,
    /// Backward relaxation over plain interval intermediates.
    Backward,
    /// Backward relaxation over backward-tightened intermediates.
    Refined,
}

/// Elementwise best of interval propagation and the backward relaxation.
/// `Refined` also keeps the plain backward result: tighter intermediates can
/// change the ReLU lower slopes, so neither pass dominates the other.
pub fn best_bounds(g: &CompGraph, domain: &BoxDomain, method: BoundMethod) -> Result<Interval> {
    if method == BoundMethod::Ibp {
        return ibp(g, domain);
    }
    let ivs = ibp_all(g, domain)?;
    let mut best = ivs[g.output()][0].intersect(&backward_linear(g, domain, &ivs)?.1);
    if method == BoundMethod::Refined {
        let ivs = refined_intervals(g, domain)?;
        best = best.intersect(&ivs[g.output()][0]).intersect(&backward_linear(g, domain, &ivs)?.1);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::{random_graph, GraphBuilder, RandomGraphSpec};
    use crate::nn::mlp::AffineMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square_box(r: f64) -> BoxDomain {
        BoxDomain::cube(2, -r, r).unwrap()
    }

    #[test]
    fn shear_then_sum() {
        let mut b = GraphBuilder::new(2);
        let x = b.input();
        let h = b.affine(x, AffineMap::new(crate::systems::shear(), vec![0.0; 2]).unwrap()).unwrap();
        let s = b.affine(h, AffineMap::new(Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(), vec![0.0]).unwrap()).unwrap();
        let g = b.finish(s).unwrap();
        let iv = ibp(&g, &square_box(1.0)).unwrap();
        assert!((iv.lo + 3.0).abs() < 1e-9 && (iv.hi - 3.0).abs() < 1e-9);
    }

    fn single_relu() -> CompGraph {
        let mut b = GraphBuilder::new(1);
        let x = b.input();
        let r = b.relu(x).unwrap();
        b.finish(r).unwrap()
    }

    #[test]
    fn relu_interval_clamps() {
        let g = single_relu();
        let dom = BoxDomain::new(vec![-1.0], vec![2.0]).unwrap();
        let iv = ibp(&g, &dom).unwrap();
        assert_eq!((iv.lo, iv.hi), (0.0, 2.0));
    }

    #[test]
    fn relu_upper_bound_is_the_chord() {
        let g = single_relu();
        let dom = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let ivs = ibp_all(&g, &dom).unwrap();
        let (lb, _) = backward_linear(&g, &dom, &ivs).unwrap();
        assert!((lb.upper.0[0] - 0.5).abs() < 1e-15);
        assert!((lb.upper.1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn affine_graph_is_exact_for_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = GraphBuilder::new(3);
        let x = b.input();
        let h = b.affine(x, AffineMap::random(4, 3, &mut rng)).unwrap();
        let k = b.negate(h).unwrap();
        let skip = b.affine(x, AffineMap::random(4, 3, &mut rng)).unwrap();
        let s = b.sum(k, skip).unwrap();
        let out = b.affine(s, AffineMap::random(1, 4, &mut rng)).unwrap();
        let g = b.finish(out).unwrap();
        let dom = BoxDomain::cube(3, -1.0, 2.0).unwrap();
        let ivs = ibp_all(&g, &dom).unwrap();
        let (lb, iv) = backward_linear(&g, &dom, &ivs).unwrap();
        // exact range from vertex enumeration
        let vals: Vec<f64> = dom.corners(8).iter().map(|c| g.eval(c).unwrap()).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((iv.lo - lo).abs() < 1e-9 && (iv.hi - hi).abs() < 1e-9);
        assert_eq!(lb.lower.0.len(), 3);
        for (a, b) in lb.lower.0.iter().zip(&lb.upper.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_intervals_rejected() {
        let g = single_relu();
        let dom = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        assert!(backward_linear(&g, &dom, &[]).is_err());
    }

    #[test]
    fn square_relaxation_is_sound() {
        let mut b = GraphBuilder::new(1);
        let x = b.input();
        let s = b.square(x).unwrap();
        let g = b.finish(s).unwrap();
        let dom = BoxDomain::new(vec![-0.5], vec![2.0]).unwrap();
        let ivs = ibp_all(&g, &dom).unwrap();
        let (lb, iv) = backward_linear(&g, &dom, &ivs).unwrap();
        for k in 0..=100 {
            let x = -0.5 + 2.5 * k as f64 / 100.0;
            let y = x * x;
            assert!(lb.lower_at(&[x]) <= y + 1e-12 && y <= lb.upper_at(&[x]) + 1e-12);
            assert!(iv.contains(y));
        }
    }

    fn random_box<R: Rng>(n: usize, rng: &mut R) -> BoxDomain {
        let lo: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..1.0)).collect();
        let hi = lo.iter().map(|l| l + rng.gen_range(0.01..2.0)).collect();
        BoxDomain::new(lo, hi).unwrap()
    }

    #[test]
    fn bounds_contain_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for t in 0..100 {
            let spec = RandomGraphSpec { input_dim: 1 + t % 3, max_relus: 24, width: (2, 8), allow_square: t % 4 == 0 };
            let g = random_graph(&spec, &mut rng);
            let dom = random_box(spec.input_dim, &mut rng);
            let ivs = ibp_all(&g, &dom).unwrap();
            let (lin, liv) = backward_linear(&g, &dom, &ivs).unwrap();
            let refined = best_bounds(&g, &dom, BoundMethod::Refined).unwrap();
            for x in dom.sample_uniform(300, &mut rng) {
                let y = g.eval(&x).unwrap();
                assert!(ivs[g.output()][0].contains(y));
                assert!(liv.contains(y));
                assert!(refined.contains(y));
                assert!(lin.lower_at(&x) <= y + 1e-9 && y <= lin.upper_at(&x) + 1e-9);
            }
        }
    }

    #[test]
    fn methods_are_nested() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let spec = RandomGraphSpec { input_dim: 2, max_relus: 20, width: (2, 8), allow_square: false };
            let g = random_graph(&spec, &mut rng);
            let dom = random_box(2, &mut rng);
            let i = best_bounds(&g, &dom, BoundMethod::Ibp).unwrap();
            let b = best_bounds(&g, &dom, BoundMethod::Backward).unwrap();
            let r = best_bounds(&g, &dom, BoundMethod::Refined).unwrap();
            assert!(i.lo <= b.lo && b.hi <= i.hi);
            assert!(b.lo <= r.lo && r.hi <= b.hi);
        }
    }

    #[test]
    fn ibp_monotone_under_splitting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = RandomGraphSpec { input_dim: 2, max_relus: 16, width: (2, 8), allow_square: false };
        for _ in 0..100 {
            let g = random_graph(&spec, &mut rng);
            let dom = random_box(2, &mut rng);
            let parent = ibp(&g, &dom).unwrap();
            let (a, b) = dom.bisect(dom.widest_dim());
            let child = ibp(&g, &a).unwrap().lo.min(ibp(&g, &b).unwrap().lo);
            assert!(child >= parent.lo - 1e-12);
        }
    }
}
