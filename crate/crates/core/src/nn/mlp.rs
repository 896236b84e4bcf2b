use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, Matrix};

/// `x -> weight * x + bias`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAffine")]
pub struct AffineMap {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Deserialize)]
struct RawAffine {
    weight: Matrix,
    bias: Vec<f64>,
}

impl TryFrom<RawAffine> for AffineMap {
    type Error = Error;
    fn try_from(raw: RawAffine) -> Result<Self> {
        AffineMap::new(raw.weight, raw.bias)
    }
}

impl AffineMap {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::InvalidNetwork(format!(
                "bias has {} entries but weight has {} rows",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Matrix::zeros(out_dim, in_dim), bias: vec![0.0; out_dim] }
    }

    pub fn identity(n: usize) -> Self {
        Self { weight: Matrix::identity(n), bias: vec![0.0; n] }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (yi, bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        y
    }

    pub fn num_params(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    /// Kaiming-style uniform init: weights in `±sqrt(6 / fan_in)`, biases in
    /// `±1 / sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let fan_in = in_dim.max(1) as f64;
        let wb = (6.0 / fan_in).sqrt();
        let bb = 1.0 / fan_in.sqrt();
        let data = (0..out_dim * in_dim).map(|_| rng.gen_range(-wb..wb)).collect();
        let weight = Matrix::from_row_major(out_dim, in_dim, data).expect("shape");
        let bias = (0..out_dim).map(|_| rng.gen_range(-bb..bb)).collect();
        Self { weight, bias }
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.data_mut().iter_mut().chain(self.bias.iter_mut())
    }

    pub(crate) fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.data().iter().chain(self.bias.iter())
    }
}

/// ReLU multilayer perceptron. ReLU sits between consecutive layers; the
/// final layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlp")]
pub struct Mlp {
    layers: Vec<AffineMap>,
}

#[derive(Deserialize)]
struct RawMlp {
    layers: Vec<AffineMap>,
}

impl TryFrom<RawMlp> for Mlp {
    type Error = Error;
    fn try_from(raw: RawMlp) -> Result<Self> {
        Mlp::new(raw.layers)
    }
}

/// Intermediate values from a forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    /// Input to each layer (post-activation of the previous one).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pub pre: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("non-empty network")
    }
}

impl Mlp {
    pub fn new(layers: Vec<AffineMap>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        for (k, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    w[0].out_dim(),
                    k + 1,
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn identity(n: usize) -> Self {
        Self { layers: vec![AffineMap::identity(n)] }
    }

    /// Random network with layer widths `dims = [in, h1, ..., out]`.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidNetwork("need at least input and output widths".into()));
        }
        let layers = dims.windows(2).map(|w| AffineMap::random(w[1], w[0], rng)).collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[AffineMap] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [AffineMap] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Layer widths `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim()).chain(self.layers.iter().map(AffineMap::out_dim)).collect()
    }

    pub fn relu_count(&self) -> usize {
        self.layers[..self.layers.len() - 1].iter().map(AffineMap::out_dim).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.in_dim(), x.len())?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if k < last {
                relu_inplace(&mut h);
            }
        }
        h
    }

    pub fn forward_trace(&self, x: &[f64]) -> MlpTrace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            inputs.push(h);
            h = z.clone();
            if k < last {
                relu_inplace(&mut h);
            }
            pre.push(z);
        }
        MlpTrace { inputs, pre }
    }

    /// Accumulates parameter gradients into `grads` given the gradient of a
    /// scalar loss with respect to the network output, and returns the
    /// gradient with respect to the input. ReLU slope at 0 is taken as 0.
    pub fn backward(&self, trace: &MlpTrace, grad_out: &[f64], grads: Option<&mut [AffineMap]>) -> Vec<f64> {
        let mut grads = grads;
        let mut dz = grad_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if let Some(g) = grads.as_deref_mut() {
                let gk = &mut g[k];
                for (i, &d) in dz.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, &trace.inputs[k], gk.weight.row_mut(i));
                        gk.bias[i] += d;
                    }
                }
            }
            let mut da = layer.weight.tmatvec(&dz);
            if k > 0 {
                for (a, z) in da.iter_mut().zip(&trace.pre[k - 1]) {
                    if *z <= 0.0 {
                        *a = 0.0;
                    }
                }
            }
            dz = da;
        }
        dz
    }

    pub fn zeros_like(&self) -> Vec<AffineMap> {
        self.layers.iter().map(|l| AffineMap::zeros(l.out_dim(), l.in_dim())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(AffineMap::num_params).sum()
    }
}

pub(crate) fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_identity_layer_has_no_activation() {
        let net = Mlp::identity(2);
        assert_eq!(net.forward(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn relu_between_layers() {
        let net = Mlp::new(vec![AffineMap::identity(2), AffineMap::identity(2)]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn incompatible_layers_rejected() {
        let r = Mlp::new(vec![AffineMap::zeros(3, 2), AffineMap::zeros(1, 2)]);
        assert!(r.is_err());
        assert!(Mlp::identity(2).forward(&[1.0]).is_err());
    }

    // Independent evaluation with explicit nested loops.
    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = net.layers().len();
        for (k, layer) in net.layers().iter().enumerate() {
            let mut out = Vec::new();
            for i in 0..layer.out_dim() {
                let mut s = layer.bias[i];
                for j in 0..layer.in_dim() {
                    s += layer.weight.get(i, j) * h[j];
                }
                out.push(if k + 1 < n { s.max(0.0) } else { s });
            }
            h = out;
        }
        h
    }

    #[test]
    fn matches_reference_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::random(&[2, 8, 3], &mut rng).unwrap();
        let x = [0.3, -0.7];
        let a = net.forward(&x).unwrap();
        let b = reference_forward(&net, &x);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::random(&[2, 4, 1], &mut rng).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        assert!(s.starts_with(r#"{"layers":[{"weight":[["#));
        let back: Mlp = serde_json::from_str(&s).unwrap();
        assert_eq!(back, net);
    }
}
