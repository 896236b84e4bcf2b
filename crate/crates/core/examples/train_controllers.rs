//! Regenerates the bundled ReLU controllers by imitating saturated LQR
//! policies, then checks closed-loop rollouts from each initial set.
//!
//!     cargo run --release --example train_controllers [-- <out dir>]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vecbarrier::linalg::Matrix;
use vecbarrier::nn::Mlp;
use vecbarrier::sets::{BoxDomain, SafetySpec};
use vecbarrier::systems::{builtin, quadrotor_matrices, AffineDynamics, BenchmarkId, ClosedLoop, Verdict, GRAVITY};
use vecbarrier::training::Adam;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Gain of the infinite-horizon discrete LQR, by Riccati iteration.
fn lqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..10_000 {
        let btp = b.transpose() * &p;
        let k = (r + &btp * b).try_inverse().expect("R + B'PB invertible") * &btp * a;
        let next = q + a.transpose() * &p * (a - b * &k);
        let done = (&next - &p).amax() < 1e-12;
        p = next;
        if done {
            break;
        }
    }
    let btp = b.transpose() * &p;
    (r + &btp * b).try_inverse().expect("R + B'PB invertible") * btp * a
}

fn flat(net: &Mlp) -> Vec<f64> {
    net.layers().iter().flat_map(|l| l.weight.data().iter().chain(&l.bias).copied()).collect()
}

fn unflat(net: &Mlp, w: &[f64]) -> Mlp {
    let mut layers = net.layers().to_vec();
    let mut k = 0;
    for l in &mut layers {
        for v in l.weight.data_mut().iter_mut().chain(l.bias.iter_mut()) {
            *v = w[k];
            k += 1;
        }
    }
    Mlp::new(layers).expect("same shape")
}

/// Mean-squared-error regression with Adam and minibatches.
fn fit(dims: &[usize], xs: &[Vec<f64>], ys: &[Vec<f64>], epochs: usize, seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::random(dims, &mut rng).expect("valid dims");
    let mut w = flat(&net);
    let mut adam = Adam::new(w.len(), 3e-3);
    let batch = 256;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads = net.zeros_like();
            for &i in chunk {
                let tr = net.forward_trace(&xs[i]);
                let err: Vec<f64> = tr.output().iter().zip(&ys[i]).map(|(o, y)| o - y).collect();
                total += err.iter().map(|e| e * e).sum::<f64>();
                let g: Vec<f64> = err.iter().map(|e| 2.0 * e / chunk.len() as f64).collect();
                net.backward(&tr, &g, Some(&mut grads));
            }
            let gflat: Vec<f64> = grads.iter().flat_map(|l| l.weight.data().iter().chain(&l.bias).copied()).collect();
            adam.step(&mut w, &gflat, None);
            net = unflat(&net, &w);
        }
        if epoch % 200 == 0 || epoch + 1 == epochs {
            println!("  epoch {epoch:5}: mse {:.3e}", total / xs.len() as f64);
        }
    }
    net
}

fn check(name: &str, sys: &ClosedLoop, spec: &SafetySpec, teacher: impl Fn(&[f64]) -> Vec<f64>, net: &Mlp) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let test = spec.workspace.sample_uniform(2000, &mut rng);
    let worst = test
        .iter()
        .map(|x| {
            let o = net.forward(x).expect("dims");
            o.iter().zip(teacher(x)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let mut unsafe_runs = 0;
    for x0 in spec.initial.sample_uniform(2000, &mut rng) {
        if sys.rollout(spec, &x0, 200).expect("x0 in X0").verdict != Verdict::Safe {
            unsafe_runs += 1;
        }
    }
    println!("{name}: max imitation error {worst:.3e}, unsafe rollouts {unsafe_runs}/2000");
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/core/data".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    // double integrator, |u| <= 1
    let di = builtin(BenchmarkId::DoubleIntegrator).unwrap();
    let a = to_na(&di.system.dynamics.a_d);
    let b = to_na(&di.system.dynamics.b_d);
    let k = lqr(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1));
    println!("double integrator K = {}", k);
    let k_di = k.clone();
    let teacher = move |x: &[f64]| vec![(-(&k_di * DVector::from_column_slice(x))[0]).clamp(-1.0, 1.0)];
    let xs = di.spec.workspace.sample_uniform(8000, &mut rng);
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| teacher(x)).collect();
    let net = fit(&[2, 10, 5, 1], &xs, &ys, 1500, 1);
    let sys = ClosedLoop::new(di.system.dynamics.clone(), Some(net.clone())).unwrap();
    check("double integrator", &sys, &di.spec, &teacher, &net);
    std::fs::write(out.join("double_integrator_controller.json"), serde_json::to_string(&net).unwrap()).unwrap();

    // quadrotor, regulating to the workspace center around hover thrust
    let (qa, qb, qc) = quadrotor_matrices();
    let qd = AffineDynamics::new(qa.clone(), qb.clone(), qc).unwrap();
    let q_spec = builtin(BenchmarkId::Quadrotor6d).unwrap().spec;
    let k = lqr(&to_na(&qa), &to_na(&qb), &DMatrix::identity(6, 6), &DMatrix::identity(3, 3));
    let x_ref = DVector::from_column_slice(&q_spec.workspace.center());
    let u_eq = DVector::from_column_slice(&[0.0, 0.0, GRAVITY]);
    let limits = BoxDomain::new(vec![-0.5, -0.5, 0.0], vec![0.5, 0.5, 2.0 * GRAVITY]).unwrap();
    let teacher = move |x: &[f64]| {
        let u = &u_eq - &k * (DVector::from_column_slice(x) - &x_ref);
        limits.project(u.as_slice()).unwrap()
    };
    let xs = q_spec.workspace.sample_uniform(8000, &mut rng);
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| teacher(x)).collect();
    let net = fit(&[6, 32, 32, 32, 3], &xs, &ys, 600, 2);
    let sys = ClosedLoop::new(qd, Some(net.clone())).unwrap();
    check("quadrotor", &sys, &q_spec, &teacher, &net);
    std::fs::write(out.join("quadrotor_controller.json"), serde_json::to_string(&net).unwrap()).unwrap();
}
