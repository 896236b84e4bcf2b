//! Scalar-output computation graphs over a single vector input.
//!
//! Nodes are stored in topological order: every node only references nodes
//! with smaller ids, so the graph is acyclic by construction. Pre-composition
//! with a constant affine map (`x -> Px + q` ahead of a subnetwork) is an
//! ordinary [`Node::Affine`] fed by the input.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::nn::barrier::Basis;
use crate::nn::mlp::{AffineMap, Mlp};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Input { dim: usize },
    Affine { input: NodeId, map: AffineMap },
    Relu { input: NodeId },
    /// Elementwise square.
    Square { input: NodeId },
    Sum { lhs: NodeId, rhs: NodeId },
    Negate { input: NodeId },
}

impl Node {
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Node::Input { .. } => vec![],
            Node::Affine { input, .. } | Node::Relu { input } | Node::Square { input } | Node::Negate { input } => {
                vec![*input]
            }
            Node::Sum { lhs, rhs } => vec![*lhs, *rhs],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompGraph {
    nodes: Vec<Node>,
    dims: Vec<usize>,
    output: NodeId,
}

pub struct GraphBuilder {
    nodes: Vec<Node>,
    dims: Vec<usize>,
}

impl GraphBuilder {
    /// New builder whose node 0 is the input.
    pub fn new(input_dim: usize) -> Self {
        Self { nodes: vec![Node::Input { dim: input_dim }], dims: vec![input_dim] }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn dim(&self, id: NodeId) -> usize {
        self.dims[id]
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::InvalidGraph(format!("node {id} does not exist")))
        }
    }

    fn push(&mut self, node: Node, dim: usize) -> NodeId {
        self.nodes.push(node);
        self.dims.push(dim);
        self.nodes.len() - 1
    }

    pub fn affine(&mut self, input: NodeId, map: AffineMap) -> Result<NodeId> {
        self.check(input)?;
        check_dim(self.dims[input], map.in_dim())?;
        let d = map.out_dim();
        Ok(self.push(Node::Affine { input, map }, d))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let d = self.dims[input];
        Ok(self.push(Node::Relu { input }, d))
    }

    pub fn square(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let d = self.dims[input];
        Ok(self.push(Node::Square { input }, d))
    }

    pub fn sum(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.check(lhs)?;
        self.check(rhs)?;
        check_dim(self.dims[lhs], self.dims[rhs])?;
        let d = self.dims[lhs];
        Ok(self.push(Node::Sum { lhs, rhs }, d))
    }

    pub fn negate(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let d = self.dims[input];
        Ok(self.push(Node::Negate { input }, d))
    }

    /// Inlines a ReLU network applied to `input`.
    pub fn mlp(&mut self, input: NodeId, net: &Mlp) -> Result<NodeId> {
        let mut h = input;
        let last = net.layers().len() - 1;
        for (k, layer) in net.layers().iter().enumerate() {
            h = self.affine(h, layer.clone())?;
            if k < last {
                h = self.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Inlines a barrier feature map applied to `input`.
    pub fn basis(&mut self, input: NodeId, basis: &Basis) -> Result<NodeId> {
        check_dim(basis.input_dim(), self.dims[input])?;
        match basis {
            Basis::Identity { .. } => Ok(input),
            Basis::Network { net, output_relu } => {
                let h = self.mlp(input, net)?;
                if *output_relu {
                    self.relu(h)
                } else {
                    Ok(h)
                }
            }
            Basis::Quadratic { dim } => {
                let n = *dim;
                // x_i x_j = ((x_i + x_j)^2 - (x_i - x_j)^2) / 4, x_i^2 = (x_i)^2.
                let mut pre_rows: Vec<Vec<f64>> = Vec::new();
                let mut combos: Vec<(usize, Option<(usize, usize)>)> = Vec::new();
                for i in 0..n {
                    for j in i..n {
                        if i == j {
                            let mut r = vec![0.0; n];
                            r[i] = 1.0;
                            combos.push((pre_rows.len(), None));
                            pre_rows.push(r);
                        } else {
                            let mut plus = vec![0.0; n];
                            plus[i] = 1.0;
                            plus[j] = 1.0;
                            let mut minus = vec![0.0; n];
                            minus[i] = 1.0;
                            minus[j] = -1.0;
                            combos.push((pre_rows.len(), Some((pre_rows.len(), pre_rows.len() + 1))));
                            pre_rows.push(plus);
                            pre_rows.push(minus);
                        }
                    }
                }
                let np = pre_rows.len();
                let pre = self.affine(input, AffineMap::new(Matrix::from_rows(&pre_rows)?, vec![0.0; np])?)?;
                let sq = self.square(pre)?;
                let fdim = basis.feature_dim();
                let mut lin = Matrix::zeros(fdim, n);
                for i in 0..n {
                    lin.set(i, i, 1.0);
                }
                let mut quad = Matrix::zeros(fdim, np);
                for (k, (row, pair)) in combos.iter().enumerate() {
                    match pair {
                        None => quad.set(n + k, *row, 1.0),
                        Some((p, q)) => {
                            quad.set(n + k, *p, 0.25);
                            quad.set(n + k, *q, -0.25);
                        }
                    }
                }
                let a = self.affine(input, AffineMap::new(lin, vec![0.0; fdim])?)?;
                let b = self.affine(sq, AffineMap::new(quad, vec![0.0; fdim])?)?;
                self.sum(a, b)
            }
        }
    }

    pub fn finish(self, output: NodeId) -> Result<CompGraph> {
        self.check(output)?;
        if self.dims[output] != 1 {
            return Err(Error::InvalidGraph(format!("output node has dimension {}", self.dims[output])));
        }
        CompGraph::from_nodes(self.nodes, output)
    }
}

impl CompGraph {
    /// Validates topological order, dimensions, and the single input node.
    pub fn from_nodes(nodes: Vec<Node>, output: NodeId) -> Result<Self> {
        let mut dims = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.iter().enumerate() {
            if id == 0 {
                match node {
                    Node::Input { dim } => dims.push(*dim),
                    _ => return Err(Error::InvalidGraph("node 0 must be the input".into())),
                }
                continue;
            }
            for p in node.inputs() {
                if p >= id {
                    return Err(Error::InvalidGraph(format!("node {id} references later node {p}")));
                }
            }
            let d = match node {
                Node::Input { .. } => return Err(Error::InvalidGraph("more than one input node".into())),
                Node::Affine { input, map } => {
                    check_dim(dims[*input], map.in_dim())?;
                    map.out_dim()
                }
                Node::Relu { input } | Node::Square { input } | Node::Negate { input } => dims[*input],
                Node::Sum { lhs, rhs } => {
                    check_dim(dims[*lhs], dims[*rhs])?;
                    dims[*lhs]
                }
            };
            dims.push(d);
        }
        if nodes.is_empty() || output >= nodes.len() || dims[output] != 1 {
            return Err(Error::InvalidGraph("output must be an existing scalar node".into()));
        }
        Ok(Self { nodes, dims, output })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn dim(&self, id: NodeId) -> usize {
        self.dims[id]
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn relu_count(&self) -> usize {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n, Node::Relu { .. }))
            .map(|(id, _)| self.dims[id])
            .sum()
    }

    pub fn has_square(&self) -> bool {
        self.nodes.iter().any(|n| matches!(n, Node::Square { .. }))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.eval_nodes(x)[self.output][0]
    }

    /// Values of every node (only nodes up to the output are computed).
    pub fn eval_nodes(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(self.output + 1);
        for node in &self.nodes[..=self.output] {
            let v = match node {
                Node::Input { .. } => x.to_vec(),
                Node::Affine { input, map } => map.apply(&vals[*input]),
                Node::Relu { input } => vals[*input].iter().map(|v| v.max(0.0)).collect(),
                Node::Square { input } => vals[*input].iter().map(|v| v * v).collect(),
                Node::Sum { lhs, rhs } => vals[*lhs].iter().zip(&vals[*rhs]).map(|(a, b)| a + b).collect(),
                Node::Negate { input } => vals[*input].iter().map(|v| -v).collect(),
            };
            vals.push(v);
        }
        vals
    }

    /// Output value and its gradient with respect to the input. The ReLU
    /// slope at exactly zero is taken as 0.
    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.value_and_grad_unchecked(x))
    }

    pub(crate) fn value_and_grad_unchecked(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let vals = self.eval_nodes(x);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.output + 1];
        grads[self.output] = Some(vec![1.0]);
        for id in (1..=self.output).rev() {
            let Some(g) = grads[id].take() else { continue };
            let mut add = |target: NodeId, contrib: Vec<f64>| match &mut grads[target] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            };
            match &self.nodes[id] {
                Node::Input { .. } => unreachable!("only node 0 is an input"),
                Node::Affine { input, map } => add(*input, map.weight.tmatvec(&g)),
                Node::Relu { input } => {
                    let c = g.iter().zip(&vals[*input]).map(|(gi, z)| if *z > 0.0 { *gi } else { 0.0 }).collect();
                    add(*input, c)
                }
                Node::Square { input } => {
                    let c = g.iter().zip(&vals[*input]).map(|(gi, z)| 2.0 * z * gi).collect();
                    add(*input, c)
                }
                Node::Sum { lhs, rhs } => {
                    add(*lhs, g.clone());
                    add(*rhs, g)
                }
                Node::Negate { input } => add(*input, g.iter().map(|v| -v).collect()),
            }
        }
        let grad = grads[0].take().unwrap_or_else(|| vec![0.0; self.input_dim()]);
        (vals[self.output][0], grad)
    }

    pub fn grad_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(x)?.1)
    }

    /// Active/inactive flag for every ReLU unit at `x`.
    pub fn relu_pattern(&self, x: &[f64]) -> Vec<bool> {
        let vals = self.eval_nodes(x);
        let mut p = Vec::new();
        for node in &self.nodes[..=self.output] {
            if let Node::Relu { input } = node {
                p.extend(vals[*input].iter().map(|v| *v > 0.0));
            }
        }
        p
    }

    /// Smallest `|pre-activation|` over all ReLU units at `x`; used to keep
    /// finite-difference checks away from kinks.
    pub fn kink_distance(&self, x: &[f64]) -> f64 {
        let vals = self.eval_nodes(x);
        let mut d = f64::INFINITY;
        for node in &self.nodes[..=self.output] {
            if let Node::Relu { input } = node {
                for v in &vals[*input] {
                    d = d.min(v.abs());
                }
            }
        }
        d
    }
}

/// Shape parameters for [`random_graph`].
#[derive(Clone, Debug)]
pub struct RandomGraphSpec {
    pub input_dim: usize,
    /// Upper bound on total ReLU units.
    pub max_relus: usize,
    /// Width range of each hidden block.
    pub width: (usize, usize),
    pub allow_square: bool,
}

/// Random DAG with affine/ReLU blocks, skip connections and negations.
pub fn random_graph<R: Rng + ?Sized>(spec: &RandomGraphSpec, rng: &mut R) -> CompGraph {
    let mut b = GraphBuilder::new(spec.input_dim);
    let mut pool: Vec<NodeId> = vec![b.input()];
    let mut relus = 0;
    loop {
        let w = rng.gen_range(spec.width.0..=spec.width.1);
        if relus + w > spec.max_relus {
            break;
        }
        let src = pool[rng.gen_range(0..pool.len())];
        let mut h = b.affine(src, AffineMap::random(w, b.dim(src), rng)).expect("dims");
        if rng.gen_bool(0.3) && pool.len() > 1 {
            let other = pool[rng.gen_range(0..pool.len())];
            let skip = b.affine(other, AffineMap::random(w, b.dim(other), rng)).expect("dims");
            h = b.sum(h, skip).expect("dims");
        }
        if rng.gen_bool(0.15) {
            h = b.negate(h).expect("node");
        }
        h = b.relu(h).expect("node");
        relus += w;
        pool.push(h);
        if spec.allow_square && rng.gen_bool(0.3) {
            let s = b.square(h).expect("node");
            pool.push(s);
        }
        if rng.gen_bool(0.25) {
            break;
        }
    }
    let last = *pool.last().expect("non-empty");
    let mut out = b.affine(last, AffineMap::random(1, b.dim(last), rng)).expect("dims");
    let other = pool[rng.gen_range(0..pool.len())];
    if other != last {
        let o = b.affine(other, AffineMap::random(1, b.dim(other), rng)).expect("dims");
        out = b.sum(out, o).expect("dims");
    }
    if rng.gen_bool(0.3) {
        out = b.negate(out).expect("node");
    }
    b.finish(out).expect("scalar output")
}
