//! Empirical barrier risk, projected Adam training, and shrink-and-perturb.

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::nn::barrier::{Basis, VectorBarrier};
use crate::nn::mlp::AffineMap;
use crate::sets::SampleSet;
use crate::systems::ClosedLoop;

/// Which parameter groups the optimizer may change. `C` and `b` always move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Learnable {
    pub basis: bool,
    pub a_mat: bool,
}

impl Default for Learnable {
    fn default() -> Self {
        Self { basis: true, a_mat: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin_u: f64,
    pub margin_0: f64,
    pub margin_dec: f64,
    pub seed: u64,
    pub learnable: Learnable,
    /// Stop once the full-sample loss reaches exactly zero.
    pub stop_at_zero: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 4096,
            learning_rate: 1e-3,
            margin_u: 0.01,
            margin_0: 0.01,
            margin_dec: 0.01,
            seed: 0,
            learnable: Learnable::default(),
            stop_at_zero: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if [self.margin_u, self.margin_0, self.margin_dec].iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::Config("margins must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    /// Zero-margin copy: the loss then equals the plain empirical risk.
    pub fn without_margins(&self) -> Self {
        Self { margin_u: 0.0, margin_0: 0.0, margin_dec: 0.0, ..self.clone() }
    }
}

/// Flat parameter layout: basis network layers (weights then bias, per
/// layer), then `C`, `b`, `A`.
pub fn flat_params(bf: &VectorBarrier) -> Vec<f64> {
    let mut v = Vec::new();
    if let Basis::Network { net, .. } = &bf.basis {
        for l in net.layers() {
            v.extend(l.params());
        }
    }
    v.extend_from_slice(bf.c_mat.data());
    v.extend_from_slice(&bf.b_vec);
    v.extend_from_slice(bf.a_mat.data());
    v
}

pub fn set_flat_params(bf: &mut VectorBarrier, w: &[f64]) -> Result<()> {
    crate::error::check_dim(flat_params(bf).len(), w.len())?;
    let mut it = w.iter();
    if let Basis::Network { net, .. } = &mut bf.basis {
        for l in net.layers_mut() {
            for p in l.params_mut() {
                *p = *it.next().expect("length checked");
            }
        }
    }
    for p in bf.c_mat.data_mut().iter_mut().chain(bf.b_vec.iter_mut()).chain(bf.a_mat.data_mut().iter_mut()) {
        *p = *it.next().expect("length checked");
    }
    Ok(())
}

fn learnable_mask(bf: &VectorBarrier, learn: Learnable) -> Vec<bool> {
    let mut v = Vec::new();
    if let Basis::Network { net, .. } = &bf.basis {
        v.resize(net.num_params(), learn.basis);
    }
    v.resize(v.len() + bf.c_mat.data().len() + bf.m(), true);
    v.resize(v.len() + bf.m() * bf.m(), learn.a_mat);
    v
}

/// Gradients with the same shapes as the barrier's parameters.
#[derive(Clone, Debug)]
pub struct BarrierGrads {
    pub net: Vec<AffineMap>,
    pub c_mat: Matrix,
    pub b_vec: Vec<f64>,
    pub a_mat: Matrix,
}

impl BarrierGrads {
    pub fn zeros(bf: &VectorBarrier) -> Self {
        let net = match &bf.basis {
            Basis::Network { net, .. } => net.zeros_like(),
            _ => Vec::new(),
        };
        Self {
            net,
            c_mat: Matrix::zeros(bf.m(), bf.feature_dim()),
            b_vec: vec![0.0; bf.m()],
            a_mat: Matrix::zeros(bf.m(), bf.m()),
        }
    }

    /// Same layout as [`flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.net {
            v.extend(l.params());
        }
        v.extend_from_slice(self.c_mat.data());
        v.extend_from_slice(&self.b_vec);
        v.extend_from_slice(self.a_mat.data());
        v
    }
}

/// Accumulates the parameter gradient of a scalar `L` into `grads`, given
/// `dL/dB(x)`. Returns `B(x)`.
pub fn barrier_backward(bf: &VectorBarrier, x: &[f64], d_b: &[f64], grads: &mut BarrierGrads) -> Vec<f64> {
    let (phi, trace) = bf.basis.trace(x);
    let b = bf.eval_features(&phi);
    accumulate(bf, &phi, trace.as_ref(), d_b, grads);
    b
}

fn accumulate(
    bf: &VectorBarrier,
    phi: &[f64],
    trace: Option<&crate::nn::mlp::MlpTrace>,
    d_b: &[f64],
    grads: &mut BarrierGrads,
) {
    if d_b.iter().all(|d| *d == 0.0) {
        return;
    }
    for (i, &d) in d_b.iter().enumerate() {
        if d != 0.0 {
            axpy(d, phi, grads.c_mat.row_mut(i));
            grads.b_vec[i] += d;
        }
    }
    if let Some(t) = trace {
        let d_phi = bf.c_mat.tmatvec(d_b);
        bf.basis.backward(t, &d_phi, &mut grads.net);
    }
}

/// Precomputed closed-loop successors of the workspace samples.
fn successors(sys: &ClosedLoop, sx: &[Vec<f64>]) -> Vec<Vec<f64>> {
    sx.iter().map(|x| sys.step_unchecked(x)).collect()
}

struct Batch<'a> {
    s0: Vec<&'a [f64]>,
    su: Vec<&'a [f64]>,
    sx: Vec<(&'a [f64], &'a [f64])>,
}

fn batch_loss(bf: &VectorBarrier, batch: &Batch<'_>, cfg: &TrainConfig, mut grads: Option<&mut BarrierGrads>) -> f64 {
    let m = bf.m();
    let mut loss = 0.0;
    if !batch.s0.is_empty() {
        let w = 1.0 / batch.s0.len() as f64;
        for x in &batch.s0 {
            let (phi, trace) = bf.basis.trace(x);
            let b = bf.eval_features(&phi);
            let mut d_b = vec![0.0; m];
            for i in 0..m {
                let r = b[i] + cfg.margin_0;
                if r > 0.0 {
                    loss += w * r;
                    d_b[i] = w;
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                accumulate(bf, &phi, trace.as_ref(), &d_b, g);
            }
        }
    }
    if !batch.su.is_empty() {
        let w = 1.0 / batch.su.len() as f64;
        let i = bf.i_star;
        for x in &batch.su {
            let (phi, trace) = bf.basis.trace(x);
            let b = bf.eval_features(&phi);
            let r = -b[i] + cfg.margin_u;
            if r > 0.0 {
                loss += w * r;
                if let Some(g) = grads.as_deref_mut() {
                    let mut d_b = vec![0.0; m];
                    d_b[i] = -w;
                    accumulate(bf, &phi, trace.as_ref(), &d_b, g);
                }
            }
        }
    }
    if !batch.sx.is_empty() {
        let w = 1.0 / batch.sx.len() as f64;
        for (x, xn) in &batch.sx {
            let (phi, trace) = bf.basis.trace(x);
            let b = bf.eval_features(&phi);
            let (phin, tracen) = bf.basis.trace(xn);
            let bn = bf.eval_features(&phin);
            let ab = bf.a_mat.matvec(&b);
            let mut d_b = vec![0.0; m];
            let mut d_bn = vec![0.0; m];
            let mut any = false;
            for i in 0..m {
                let r = bn[i] - ab[i] + cfg.margin_dec;
                if r > 0.0 {
                    any = true;
                    loss += w * r;
                    d_bn[i] = w;
                    axpy(-w, bf.a_mat.row(i), &mut d_b);
                    if let Some(g) = grads.as_deref_mut() {
                        axpy(-w, &b, g.a_mat.row_mut(i));
                    }
                }
            }
            if any {
                if let Some(g) = grads.as_deref_mut() {
                    accumulate(bf, &phi, trace.as_ref(), &d_b, g);
                    accumulate(bf, &phin, tracen.as_ref(), &d_bn, g);
                }
            }
        }
    }
    loss
}

fn full_batch<'a>(samples: &'a SampleSet, next: &'a [Vec<f64>]) -> Batch<'a> {
    Batch {
        s0: samples.s0.iter().map(Vec::as_slice).collect(),
        su: samples.su.iter().map(Vec::as_slice).collect(),
        sx: samples.sx.iter().zip(next).map(|(x, y)| (x.as_slice(), y.as_slice())).collect(),
    }
}

fn warn_empty(samples: &SampleSet) {
    for (name, v) in [("s0", &samples.s0), ("su", &samples.su), ("sx", &samples.sx)] {
        if v.is_empty() {
            warn!("sample set {name} is empty; its loss term is zero");
        }
    }
}

/// Margin-shifted empirical barrier risk. With zero margins this is the
/// plain risk: mean hinge violations over the three sample sets.
pub fn barrier_loss(bf: &VectorBarrier, samples: &SampleSet, sys: &ClosedLoop, cfg: &TrainConfig) -> f64 {
    warn_empty(samples);
    let next = successors(sys, &samples.sx);
    batch_loss(bf, &full_batch(samples, &next), cfg, None)
}

pub fn loss_and_grads(
    bf: &VectorBarrier,
    samples: &SampleSet,
    sys: &ClosedLoop,
    cfg: &TrainConfig,
) -> (f64, BarrierGrads) {
    let next = successors(sys, &samples.sx);
    let mut g = BarrierGrads::zeros(bf);
    let loss = batch_loss(bf, &full_batch(samples, &next), cfg, Some(&mut g));
    (loss, g)
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], mask: Option<&[bool]>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            if mask.is_some_and(|m| !m[k]) {
                continue;
            }
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub barrier: VectorBarrier,
    pub final_loss: f64,
    pub epochs_run: usize,
}

fn project_a(a: &mut Matrix) {
    for v in a.data_mut() {
        *v = v.max(0.0);
    }
}

/// Projected Adam on the margin-shifted risk. `A` is clipped to be
/// non-negative after every step.
pub fn train(bf: &VectorBarrier, samples: &SampleSet, sys: &ClosedLoop, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    warn_empty(samples);
    let mut bf = bf.clone();
    let learn = Learnable { basis: cfg.learnable.basis && bf.basis.is_learnable(), ..cfg.learnable };
    let mask = learnable_mask(&bf, learn);
    let mut params = flat_params(&bf);
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let next = successors(sys, &samples.sx);
    let full = full_batch(samples, &next);
    let total = samples.len();
    let n_batches = if total <= cfg.batch_size { 1 } else { total.div_ceil(cfg.batch_size) };

    let mut loss = batch_loss(&bf, &full, cfg, None);
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        if cfg.stop_at_zero && loss == 0.0 {
            break;
        }
        let batches = if n_batches == 1 {
            vec![None]
        } else {
            let mut i0: Vec<usize> = (0..full.s0.len()).collect();
            let mut iu: Vec<usize> = (0..full.su.len()).collect();
            let mut ix: Vec<usize> = (0..full.sx.len()).collect();
            i0.shuffle(&mut rng);
            iu.shuffle(&mut rng);
            ix.shuffle(&mut rng);
            (0..n_batches)
                .map(|k| {
                    let chunk = |v: &[usize]| -> Vec<usize> {
                        let lo = k * v.len() / n_batches;
                        let hi = (k + 1) * v.len() / n_batches;
                        v[lo..hi].to_vec()
                    };
                    Some((chunk(&i0), chunk(&iu), chunk(&ix)))
                })
                .collect()
        };
        for b in batches {
            let mut g = BarrierGrads::zeros(&bf);
            match b {
                None => {
                    batch_loss(&bf, &full, cfg, Some(&mut g));
                }
                Some((i0, iu, ix)) => {
                    let sub = Batch {
                        s0: i0.iter().map(|&i| full.s0[i]).collect(),
                        su: iu.iter().map(|&i| full.su[i]).collect(),
                        sx: ix.iter().map(|&i| full.sx[i]).collect(),
                    };
                    batch_loss(&bf, &sub, cfg, Some(&mut g));
                }
            }
            adam.step(&mut params, &g.flatten(), Some(&mask));
            set_flat_params(&mut bf, &params)?;
            project_a(&mut bf.a_mat);
            params = flat_params(&bf);
        }
        epochs_run = epoch + 1;
        loss = batch_loss(&bf, &full, cfg, None);
        if epoch % 200 == 0 {
            debug!("epoch {epoch}: loss {loss:.6e}");
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: epochs_run });
    }
    Ok(TrainOutcome { barrier: bf, final_loss: loss, epochs_run })
}

/// A freshly initialized barrier with the same architecture as `bf`.
pub fn fresh_like<R: Rng + ?Sized>(bf: &VectorBarrier, rng: &mut R) -> VectorBarrier {
    let basis = bf.basis.reinitialized(rng);
    let last = AffineMap::random(bf.m(), bf.feature_dim(), rng);
    let mut a_mat = Matrix::identity(bf.m());
    for v in a_mat.data_mut() {
        *v += rng.gen_range(0.0..0.1);
    }
    VectorBarrier { basis, c_mat: last.weight, b_vec: last.bias, a_mat, i_star: bf.i_star }
}

/// `W <- lambda W + sigma W_fresh` for every learnable parameter, where the
/// fresh network is drawn from `rng`. `A` is re-projected afterwards.
pub fn shrink_and_perturb<R: Rng + ?Sized>(
    bf: &VectorBarrier,
    lambda: f64,
    sigma: f64,
    learn: Learnable,
    rng: &mut R,
) -> Result<VectorBarrier> {
    let fresh = fresh_like(bf, rng);
    shrink_and_perturb_with(bf, &fresh, lambda, sigma, learn)
}

pub fn shrink_and_perturb_with(
    bf: &VectorBarrier,
    fresh: &VectorBarrier,
    lambda: f64,
    sigma: f64,
    learn: Learnable,
) -> Result<VectorBarrier> {
    if !(0.0..=1.0).contains(&lambda) || !(0.0..=1.0).contains(&sigma) {
        return Err(Error::Config("shrink and noise weights must lie in [0, 1]".into()));
    }
    let old = flat_params(bf);
    let new = flat_params(fresh);
    crate::error::check_dim(old.len(), new.len())?;
    let learn = Learnable { basis: learn.basis && bf.basis.is_learnable(), ..learn };
    let mask = learnable_mask(bf, learn);
    let mixed: Vec<f64> = old
        .iter()
        .zip(&new)
        .zip(&mask)
        .map(|((o, f), &on)| if on { lambda * o + sigma * f } else { *o })
        .collect();
    let mut out = bf.clone();
    set_flat_params(&mut out, &mixed)?;
    project_a(&mut out.a_mat);
    Ok(out)
}

/// Fraction of samples whose margin-free condition holds, per set.
pub fn sample_satisfaction(bf: &VectorBarrier, samples: &SampleSet, sys: &ClosedLoop) -> [f64; 3] {
    let frac = |ok: usize, n: usize| if n == 0 { 1.0 } else { ok as f64 / n as f64 };
    let ok0 = samples.s0.iter().filter(|x| bf.eval(x).map(|b| b.iter().all(|v| *v <= 0.0)).unwrap_or(false)).count();
    let oku = samples.su.iter().filter(|x| bf.eval(x).map(|b| b[bf.i_star] > 0.0).unwrap_or(false)).count();
    let okx = samples
        .sx
        .iter()
        .filter(|x| {
            let b = bf.eval_features(&bf.basis.features_unchecked(x));
            let bn = bf.eval_features(&bf.basis.features_unchecked(&sys.step_unchecked(x)));
            (0..bf.m()).all(|i| bn[i] <= dot(bf.a_mat.row(i), &b))
        })
        .count();
    [frac(ok0, samples.s0.len()), frac(oku, samples.su.len()), frac(okx, samples.sx.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::barrier::BarrierArch;
    use crate::systems::{builtin, BenchmarkId};

    fn const_barrier(v: f64) -> VectorBarrier {
        VectorBarrier::new(Basis::Identity { dim: 2 }, Matrix::zeros(1, 2), vec![v], Matrix::identity(1), 0).unwrap()
    }

    #[test]
    fn constant_barrier_init_term() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let s = SampleSet { s0: vec![vec![-1.2, -1.2]], ..Default::default() };
        let cfg = TrainConfig::default().without_margins();
        assert_eq!(barrier_loss(&const_barrier(0.5), &s, &bm.system, &cfg), 0.5);
    }

    #[test]
    fn zero_loss_for_satisfying_barrier() {
        // B(x) = x1 - 0.2 on example 1 with A = 1: decrease holds since x2 < 0.
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let bf = VectorBarrier::new(
            Basis::Identity { dim: 2 },
            Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            vec![-0.2],
            Matrix::identity(1),
            0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = SampleSet::uniform(&bm.spec, 50, 50, 50, &mut rng);
        assert_eq!(barrier_loss(&bf, &s, &bm.system, &TrainConfig::default().without_margins()), 0.0);
    }

    #[test]
    fn grad_of_bias_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let arch = BarrierArch::Network { input_dim: 2, hidden: vec![4], outputs: 3 };
        let bf = VectorBarrier::random(&arch, &mut rng).unwrap();
        let mut g = BarrierGrads::zeros(&bf);
        barrier_backward(&bf, &[0.1, 0.2], &[1.0, 0.0, 0.0], &mut g);
        assert_eq!(g.b_vec, vec![1.0, 0.0, 0.0]);
        let phi = bf.basis.features(&[0.1, 0.2]).unwrap();
        assert_eq!(g.c_mat.row(0), phi.as_slice());
        assert!(g.c_mat.row(1).iter().all(|v| *v == 0.0));
    }

    fn fd_check(bf: &VectorBarrier, samples: &SampleSet, sys: &ClosedLoop, cfg: &TrainConfig) -> usize {
        let (_, g) = loss_and_grads(bf, samples, sys, cfg);
        let g = g.flatten();
        let p = flat_params(bf);
        let h = 1e-6;
        let mut bad = 0;
        for k in 0..p.len() {
            let mut plus = bf.clone();
            let mut pp = p.clone();
            pp[k] += h;
            set_flat_params(&mut plus, &pp).unwrap();
            let mut minus = bf.clone();
            pp[k] -= 2.0 * h;
            set_flat_params(&mut minus, &pp).unwrap();
            let fd = (barrier_loss(&plus, samples, sys, cfg) - barrier_loss(&minus, samples, sys, cfg)) / (2.0 * h);
            if (fd - g[k]).abs() > 1e-4 * fd.abs().max(g[k].abs()).max(1e-3) {
                bad += 1;
            }
        }
        bad
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let bm = builtin(BenchmarkId::DoubleIntegrator).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arch = BarrierArch::Network { input_dim: 2, hidden: vec![6, 5], outputs: 3 };
        let bf = VectorBarrier::random(&arch, &mut rng).unwrap();
        let s = SampleSet::uniform(&bm.spec, 5, 5, 8, &mut rng);
        assert_eq!(fd_check(&bf, &s, &bm.system, &TrainConfig::default()), 0);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bf = VectorBarrier::random(&bm.arch, &mut rng).unwrap();
        let s = SampleSet::uniform(&bm.spec, 10, 10, 10, &mut rng);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert_eq!(train(&bf, &s, &bm.system, &cfg).unwrap().barrier, bf);
    }

    #[test]
    fn training_keeps_a_nonnegative_and_is_deterministic() {
        let bm = builtin(BenchmarkId::DoubleIntegrator).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let arch = BarrierArch::Network { input_dim: 2, hidden: vec![8], outputs: 2 };
        let mut bf = VectorBarrier::random(&arch, &mut rng).unwrap();
        bf.a_mat = Matrix::from_rows(&[vec![0.0, 1e-4], vec![1e-4, 0.0]]).unwrap();
        let s = SampleSet::uniform(&bm.spec, 20, 20, 40, &mut rng);
        let cfg = TrainConfig { epochs: 50, learning_rate: 1e-2, ..Default::default() };
        let a = train(&bf, &s, &bm.system, &cfg).unwrap();
        let b = train(&bf, &s, &bm.system, &cfg).unwrap();
        assert!(a.barrier.a_mat.data().iter().all(|v| *v >= 0.0));
        assert_eq!(flat_params(&a.barrier), flat_params(&b.barrier));
    }

    #[test]
    fn minibatch_training_runs() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bf = VectorBarrier::random(&bm.arch, &mut rng).unwrap();
        let s = SampleSet::uniform(&bm.spec, 30, 30, 60, &mut rng);
        let cfg = TrainConfig { epochs: 5, batch_size: 32, ..Default::default() };
        let out = train(&bf, &s, &bm.system, &cfg).unwrap();
        assert_eq!(out.epochs_run, 5);
    }

    #[test]
    fn example1_training_reaches_zero_loss() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bf = VectorBarrier::random(&bm.arch, &mut rng).unwrap();
        bf.a_mat = bm.a_fixed.clone().unwrap();
        let s = SampleSet::uniform(&bm.spec, 100, 100, 300, &mut rng);
        let cfg = TrainConfig {
            epochs: 2000,
            learning_rate: 1e-2,
            learnable: Learnable { basis: false, a_mat: false },
            ..Default::default()
        };
        let out = train(&bf, &s, &bm.system, &cfg).unwrap();
        assert_eq!(out.final_loss, 0.0, "loss {}", out.final_loss);
    }

    #[test]
    fn shrink_and_perturb_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let arch = BarrierArch::Network { input_dim: 2, hidden: vec![5, 4], outputs: 2 };
        let bf = VectorBarrier::random(&arch, &mut rng).unwrap();
        let fresh = fresh_like(&bf, &mut rng);
        let all = Learnable::default();
        assert_eq!(shrink_and_perturb_with(&bf, &fresh, 1.0, 0.0, all).unwrap(), bf);
        assert_eq!(flat_params(&shrink_and_perturb_with(&bf, &fresh, 0.0, 1.0, all).unwrap()), flat_params(&fresh));
        let mixed = shrink_and_perturb_with(&bf, &fresh, 0.4, 0.1, all).unwrap();
        for ((m, o), f) in flat_params(&mixed).iter().zip(flat_params(&bf)).zip(flat_params(&fresh)) {
            assert!((m - (0.4 * o + 0.1 * f)).abs() < 1e-12);
        }
        assert!(shrink_and_perturb_with(&bf, &fresh, 1.5, 0.0, all).is_err());
    }

    #[test]
    fn frozen_groups_survive_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let arch = BarrierArch::Network { input_dim: 2, hidden: vec![3], outputs: 2 };
        let bf = VectorBarrier::random(&arch, &mut rng).unwrap();
        let out = shrink_and_perturb(&bf, 0.4, 0.1, Learnable { basis: false, a_mat: false }, &mut rng).unwrap();
        assert_eq!(out.basis, bf.basis);
        assert_eq!(out.a_mat, bf.a_mat);
        assert_ne!(out.c_mat, bf.c_mat);
    }
}
