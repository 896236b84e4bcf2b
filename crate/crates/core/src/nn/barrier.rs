use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::nn::mlp::{relu_inplace, AffineMap, Mlp, MlpTrace};

/// Feature map `phi` feeding the last linear layer of a barrier.
#[derive(Clone, Debug, PartialEq)]
pub enum Basis {
    /// `phi(x) = x`.
    Identity { dim: usize },
    /// All monomials of degree 1 and 2: `x_1..x_n`, then `x_i x_j` for `i <= j`.
    Quadratic { dim: usize },
    /// `phi(x) = net(x)`, followed by a ReLU when `output_relu` is set.
    Network { net: Mlp, output_relu: bool },
}

impl Basis {
    pub fn input_dim(&self) -> usize {
        match self {
            Basis::Identity { dim } | Basis::Quadratic { dim } => *dim,
            Basis::Network { net, .. } => net.in_dim(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Basis::Identity { dim } => *dim,
            Basis::Quadratic { dim } => dim + dim * (dim + 1) / 2,
            Basis::Network { net, .. } => net.out_dim(),
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, Basis::Network { .. })
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.features_unchecked(x))
    }

    pub(crate) fn features_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Basis::Identity { .. } => x.to_vec(),
            Basis::Quadratic { dim } => {
                let mut f = x.to_vec();
                for i in 0..*dim {
                    for j in i..*dim {
                        f.push(x[i] * x[j]);
                    }
                }
                f
            }
            Basis::Network { net, output_relu } => {
                let mut h = net.forward_unchecked(x);
                if *output_relu {
                    relu_inplace(&mut h);
                }
                h
            }
        }
    }

    /// Forward pass keeping what backprop needs. `None` for fixed bases.
    pub(crate) fn trace(&self, x: &[f64]) -> (Vec<f64>, Option<MlpTrace>) {
        match self {
            Basis::Network { net, output_relu } => {
                let t = net.forward_trace(x);
                let mut h = t.output().to_vec();
                if *output_relu {
                    relu_inplace(&mut h);
                }
                (h, Some(t))
            }
            _ => (self.features_unchecked(x), None),
        }
    }

    /// Backprop of `dL/dphi` into network parameter gradients.
    pub(crate) fn backward(&self, trace: &MlpTrace, grad_phi: &[f64], grads: &mut [AffineMap]) {
        if let Basis::Network { net, output_relu } = self {
            let mut g = grad_phi.to_vec();
            if *output_relu {
                for (gi, z) in g.iter_mut().zip(trace.output()) {
                    if *z <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            net.backward(trace, &g, Some(grads));
        }
    }

    /// Fresh basis of the same kind and shape.
    pub fn reinitialized<R: Rng + ?Sized>(&self, rng: &mut R) -> Basis {
        match self {
            Basis::Network { net, output_relu } => Basis::Network {
                net: Mlp::random(&net.dims(), rng).expect("dims from a valid network"),
                output_relu: *output_relu,
            },
            other => other.clone(),
        }
    }
}

/// `B(x) = C phi(x) + b` with a non-negative transition matrix `A` and a
/// distinguished component `i_star` that must be positive on the unsafe set.
///
/// `i_star` is zero-based in memory and one-based in JSON.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorBarrier {
    pub basis: Basis,
    pub c_mat: Matrix,
    pub b_vec: Vec<f64>,
    pub a_mat: Matrix,
    pub i_star: usize,
}

/// Layer sizes used to initialize a barrier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "basis", rename_all = "snake_case")]
pub enum BarrierArch {
    Identity { input_dim: usize, outputs: usize },
    Quadratic { input_dim: usize, outputs: usize },
    /// `input_dim -> hidden[0] -> ... -> hidden[last]` (ReLU after each),
    /// then the `hidden[last] -> outputs` last layer.
    Network { input_dim: usize, hidden: Vec<usize>, outputs: usize },
}

impl BarrierArch {
    pub fn input_dim(&self) -> usize {
        match self {
            BarrierArch::Identity { input_dim, .. }
            | BarrierArch::Quadratic { input_dim, .. }
            | BarrierArch::Network { input_dim, .. } => *input_dim,
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            BarrierArch::Identity { outputs, .. }
            | BarrierArch::Quadratic { outputs, .. }
            | BarrierArch::Network { outputs, .. } => *outputs,
        }
    }
}

impl VectorBarrier {
    pub fn new(basis: Basis, c_mat: Matrix, b_vec: Vec<f64>, a_mat: Matrix, i_star: usize) -> Result<Self> {
        let bf = Self { basis, c_mat, b_vec, a_mat, i_star };
        bf.validate()?;
        Ok(bf)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.b_vec.len();
        if m == 0 {
            return Err(Error::InvalidNetwork("barrier needs at least one output".into()));
        }
        if self.c_mat.rows() != m || self.c_mat.cols() != self.basis.feature_dim() {
            return Err(Error::InvalidNetwork(format!(
                "C is {}x{}, expected {}x{}",
                self.c_mat.rows(),
                self.c_mat.cols(),
                m,
                self.basis.feature_dim()
            )));
        }
        if self.a_mat.rows() != m || self.a_mat.cols() != m {
            return Err(Error::InvalidNetwork(format!("A must be {m}x{m}")));
        }
        if self.a_mat.data().iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::InvalidNetwork("A must be elementwise non-negative".into()));
        }
        if self.i_star >= m {
            return Err(Error::IndexOutOfRange { index: self.i_star + 1, size: m });
        }
        Ok(())
    }

    /// Random initialization: Kaiming-uniform network weights, `A = I + U[0, 0.1]`.
    pub fn random<R: Rng + ?Sized>(arch: &BarrierArch, rng: &mut R) -> Result<Self> {
        let m = arch.outputs();
        let basis = match arch {
            BarrierArch::Identity { input_dim, .. } => Basis::Identity { dim: *input_dim },
            BarrierArch::Quadratic { input_dim, .. } => Basis::Quadratic { dim: *input_dim },
            BarrierArch::Network { input_dim, hidden, .. } => {
                if hidden.is_empty() {
                    return Err(Error::Config("network barrier needs at least one hidden layer".into()));
                }
                let dims: Vec<usize> = std::iter::once(*input_dim).chain(hidden.iter().copied()).collect();
                Basis::Network { net: Mlp::random(&dims, rng)?, output_relu: true }
            }
        };
        let last = AffineMap::random(m, basis.feature_dim(), rng);
        let mut a_mat = Matrix::identity(m);
        for v in a_mat.data_mut() {
            *v += rng.gen_range(0.0..0.1);
        }
        Self::new(basis, last.weight, last.bias, a_mat, 0)
    }

    pub fn m(&self) -> usize {
        self.b_vec.len()
    }

    pub fn input_dim(&self) -> usize {
        self.basis.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.basis.feature_dim()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.eval_features(&self.basis.features_unchecked(x)))
    }

    /// `C phi + b` for precomputed features.
    pub fn eval_features(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.m()).map(|i| dot(self.c_mat.row(i), phi) + self.b_vec[i]).collect()
    }

    /// Length of `vec(C, b)`: `m * (M + 1)`.
    pub fn last_layer_len(&self) -> usize {
        self.m() * (self.feature_dim() + 1)
    }

    /// `vec(C, b)` laid out row by row as `[c_i1 .. c_iM, b_i]`.
    pub fn last_layer(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.last_layer_len());
        for i in 0..self.m() {
            w.extend_from_slice(self.c_mat.row(i));
            w.push(self.b_vec[i]);
        }
        w
    }

    pub fn set_last_layer(&mut self, w: &[f64]) -> Result<()> {
        check_dim(self.last_layer_len(), w.len())?;
        let stride = self.feature_dim() + 1;
        for i in 0..self.m() {
            let row = &w[i * stride..(i + 1) * stride];
            self.c_mat.row_mut(i).copy_from_slice(&row[..stride - 1]);
            self.b_vec[i] = row[stride - 1];
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawBarrier {
    #[serde(default = "default_basis_kind")]
    basis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layers: Option<Vec<AffineMap>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_relu: Option<bool>,
    #[serde(rename = "C")]
    c_mat: Matrix,
    b: Vec<f64>,
    #[serde(rename = "A")]
    a_mat: Matrix,
    i_star: usize,
}

fn default_basis_kind() -> String {
    "network".into()
}

impl Serialize for VectorBarrier {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (basis, input_dim, layers, output_relu) = match &self.basis {
            Basis::Identity { dim } => ("identity", Some(*dim), None, None),
            Basis::Quadratic { dim } => ("quadratic", Some(*dim), None, None),
            Basis::Network { net, output_relu } => {
                ("network", None, Some(net.layers().to_vec()), Some(*output_relu))
            }
        };
        RawBarrier {
            basis: basis.into(),
            input_dim,
            layers,
            output_relu,
            c_mat: self.c_mat.clone(),
            b: self.b_vec.clone(),
            a_mat: self.a_mat.clone(),
            i_star: self.i_star + 1,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for VectorBarrier {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = RawBarrier::deserialize(d)?;
        let dim_from_c = raw.c_mat.cols();
        let basis = match raw.basis.as_str() {
            "identity" => Basis::Identity { dim: raw.input_dim.unwrap_or(dim_from_c) },
            "quadratic" => Basis::Quadratic {
                dim: raw.input_dim.ok_or_else(|| D::Error::custom("quadratic basis needs input_dim"))?,
            },
            "network" => {
                let layers = raw.layers.ok_or_else(|| D::Error::custom("network basis needs layers"))?;
                Basis::Network {
                    net: Mlp::new(layers).map_err(D::Error::custom)?,
                    output_relu: raw.output_relu.unwrap_or(true),
                }
            }
            other => return Err(D::Error::custom(format!("unknown basis `{other}`"))),
        };
        if raw.i_star == 0 {
            return Err(D::Error::custom("i_star is one-based"));
        }
        VectorBarrier::new(basis, raw.c_mat, raw.b, raw.a_mat, raw.i_star - 1).map_err(D::Error::custom)
    }
}
