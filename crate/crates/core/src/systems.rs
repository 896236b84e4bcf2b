//! Affine plant dynamics closed with a ReLU policy, trajectory rollout, and
//! the bundled benchmarks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::nn::barrier::BarrierArch;
use crate::nn::mlp::Mlp;
use crate::sets::{BoxDomain, SafetySpec};

/// `x+ = A x + B u + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineDynamics {
    pub a_d: Matrix,
    pub b_d: Matrix,
    pub c_d: Vec<f64>,
}

impl AffineDynamics {
    pub fn new(a_d: Matrix, b_d: Matrix, c_d: Vec<f64>) -> Result<Self> {
        let n = a_d.rows();
        check_dim(n, a_d.cols())?;
        check_dim(n, c_d.len())?;
        if b_d.rows() != n && !(b_d.rows() == 0 && b_d.cols() == 0) {
            return Err(Error::Dimension { expected: n, got: b_d.rows() });
        }
        let b_d = if b_d.rows() == 0 { Matrix::zeros(n, 0) } else { b_d };
        Ok(Self { a_d, b_d, c_d })
    }

    pub fn state_dim(&self) -> usize {
        self.a_d.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_d.cols()
    }
}

/// Dynamics composed with a policy `u = pi(x)`; no policy means `u = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoop {
    pub dynamics: AffineDynamics,
    pub controller: Option<Mlp>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Safe,
    /// First in-workspace step that landed in the unsafe set.
    Unsafe { step: usize },
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub trajectory: Vec<Vec<f64>>,
    pub verdict: Verdict,
}

impl ClosedLoop {
    pub fn new(dynamics: AffineDynamics, controller: Option<Mlp>) -> Result<Self> {
        if let Some(pi) = &controller {
            check_dim(dynamics.state_dim(), pi.in_dim())?;
            check_dim(dynamics.input_dim(), pi.out_dim())?;
        } else if dynamics.input_dim() > 0 {
            // a missing controller is u = 0, fine for any input dimension
        }
        Ok(Self { dynamics, controller })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.state_dim(), x.len())?;
        Ok(self.step_unchecked(x))
    }

    pub(crate) fn step_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let d = &self.dynamics;
        let mut y = d.a_d.matvec(x);
        if let Some(pi) = &self.controller {
            let u = pi.forward_unchecked(x);
            for (yi, bu) in y.iter_mut().zip(d.b_d.matvec(&u)) {
                *yi += bu;
            }
        }
        for (yi, ci) in y.iter_mut().zip(&d.c_d) {
            *yi += ci;
        }
        y
    }

    /// Simulates from `x0` until the state leaves the workspace or `k_max`
    /// steps have been taken. Unsafe iff some visited in-workspace state
    /// lies in the unsafe set.
    pub fn rollout(&self, spec: &SafetySpec, x0: &[f64], k_max: usize) -> Result<Rollout> {
        check_dim(self.state_dim(), x0.len())?;
        if !spec.initial.contains(x0)? {
            return Err(Error::OutsideInitialSet(x0.to_vec()));
        }
        let mut trajectory = vec![x0.to_vec()];
        let mut x = x0.to_vec();
        for k in 0..=k_max {
            if !spec.workspace.contains_unchecked(&x) {
                break;
            }
            if spec.unsafe_set.contains_unchecked(&x) {
                return Ok(Rollout { trajectory, verdict: Verdict::Unsafe { step: k } });
            }
            if k == k_max {
                break;
            }
            x = self.step_unchecked(&x);
            trajectory.push(x.clone());
        }
        Ok(Rollout { trajectory, verdict: Verdict::Safe })
    }

    pub fn to_def(&self) -> SystemDef {
        SystemDef {
            a_d: self.dynamics.a_d.clone(),
            b_d: self.dynamics.b_d.clone(),
            c_d: self.dynamics.c_d.clone(),
            controller: self.controller.clone().map(ControllerRef::Inline),
        }
    }
}

/// JSON system description: `{"A", "B", "c", "controller"}` where the
/// controller is a path to a network file, an inline network, or null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemDef {
    #[serde(rename = "A")]
    pub a_d: Matrix,
    #[serde(rename = "B")]
    pub b_d: Matrix,
    #[serde(rename = "c")]
    pub c_d: Vec<f64>,
    #[serde(default)]
    pub controller: Option<ControllerRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControllerRef {
    Path(String),
    Inline(Mlp),
}

impl SystemDef {
    /// Builds the closed loop; relative controller paths resolve against `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<ClosedLoop> {
        let dynamics = AffineDynamics::new(self.a_d.clone(), self.b_d.clone(), self.c_d.clone())?;
        let controller = match &self.controller {
            None => None,
            Some(ControllerRef::Inline(net)) => Some(net.clone()),
            Some(ControllerRef::Path(p)) => {
                let path = match base {
                    Some(b) if Path::new(p).is_relative() => b.join(p),
                    _ => Path::new(p).to_path_buf(),
                };
                let text = std::fs::read_to_string(&path)?;
                Some(serde_json::from_str::<Mlp>(&text)?)
            }
        };
        ClosedLoop::new(dynamics, controller)
    }

    pub fn load(path: &Path) -> Result<ClosedLoop> {
        let def: SystemDef = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        def.build(path.parent())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkId {
    Example1,
    DoubleIntegrator,
    Quadrotor6d,
}

impl std::str::FromStr for BenchmarkId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example1" => Ok(BenchmarkId::Example1),
            "double_integrator" => Ok(BenchmarkId::DoubleIntegrator),
            "quadrotor6d" => Ok(BenchmarkId::Quadrotor6d),
            other => Err(Error::UnknownBenchmark(other.into())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub system: ClosedLoop,
    pub spec: SafetySpec,
    pub arch: BarrierArch,
    /// Transition matrix the benchmark is meant to be certified with, if fixed.
    pub a_fixed: Option<Matrix>,
}

pub const GRAVITY: f64 = 9.81;
pub const QUADROTOR_DT: f64 = 0.1;

const DOUBLE_INTEGRATOR_CONTROLLER: &str = include_str!("../data/double_integrator_controller.json");
const QUADROTOR_CONTROLLER: &str = include_str!("../data/quadrotor_controller.json");

fn bx(lo: &[f64], hi: &[f64]) -> BoxDomain {
    BoxDomain::new(lo.to_vec(), hi.to_vec()).expect("static box")
}

pub fn shear() -> Matrix {
    Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).expect("static")
}

/// Smaller double-integrator workspace, usable as a config override.
pub fn double_integrator_small_workspace() -> BoxDomain {
    bx(&[-0.5, -1.0], &[3.0, 0.5])
}

pub fn builtin(id: BenchmarkId) -> Result<Benchmark> {
    match id {
        BenchmarkId::Example1 => {
            // Every workspace state has x2 <= -0.25: the shear moves everything
            // left at a rate bounded away from zero.
            let dynamics = AffineDynamics::new(shear(), Matrix::zeros(2, 0), vec![0.0, 0.0])?;
            let spec = SafetySpec::new(
                bx(&[-2.0, -2.0], &[2.0, -0.25]),
                bx(&[-1.5, -1.5], &[-1.0, -1.0]),
                bx(&[0.5, -1.2], &[1.0, -0.4]),
            )?;
            Ok(Benchmark {
                system: ClosedLoop::new(dynamics, None)?,
                spec,
                arch: BarrierArch::Identity { input_dim: 2, outputs: 2 },
                a_fixed: Some(shear()),
            })
        }
        BenchmarkId::DoubleIntegrator => {
            let b = Matrix::from_rows(&[vec![0.5], vec![1.0]])?;
            let dynamics = AffineDynamics::new(shear(), b, vec![0.0, 0.0])?;
            let controller: Mlp = serde_json::from_str(DOUBLE_INTEGRATOR_CONTROLLER)?;
            let spec = SafetySpec::new(
                bx(&[-3.0, -3.0], &[3.0, 3.0]),
                bx(&[2.5, -0.5], &[2.8, 0.0]),
                bx(&[1.5, -0.25], &[1.8, 0.0]),
            )?;
            Ok(Benchmark {
                system: ClosedLoop::new(dynamics, Some(controller))?,
                spec,
                arch: BarrierArch::Network { input_dim: 2, hidden: vec![30, 20, 10], outputs: 5 },
                a_fixed: None,
            })
        }
        BenchmarkId::Quadrotor6d => {
            let (a, b, c) = quadrotor_matrices();
            let dynamics = AffineDynamics::new(a, b, c)?;
            let controller: Mlp = serde_json::from_str(QUADROTOR_CONTROLLER)?;
            let spec = SafetySpec::new(
                bx(&[4.0, 4.0, 2.5, -1.0, -1.0, -1.0], &[5.0, 5.0, 3.5, 1.0, 1.0, 1.0]),
                bx(&[4.69, 4.65, 2.975, 0.9499, -0.0001, -0.0001], &[4.71, 4.75, 3.025, 0.9501, 0.0001, 0.0001]),
                bx(&[4.4, 4.3, 2.9, 0.95, -0.1, -0.1], &[4.45, 4.35, 3.0, 1.0, 0.1, 0.1]),
            )?;
            Ok(Benchmark {
                system: ClosedLoop::new(dynamics, Some(controller))?,
                spec,
                arch: BarrierArch::Network { input_dim: 6, hidden: vec![100, 80, 60, 40, 20], outputs: 10 },
                a_fixed: None,
            })
        }
    }
}

/// `A = I + dt [[0, I], [0, 0]]`, `B = dt [[0,0,0,g,0,0],[0,0,0,0,-g,0],[0,0,0,0,0,1]]^T`,
/// `c = dt [0,0,0,0,0,-g]`.
pub fn quadrotor_matrices() -> (Matrix, Matrix, Vec<f64>) {
    let dt = QUADROTOR_DT;
    let mut a = Matrix::identity(6);
    for i in 0..3 {
        a.set(i, i + 3, dt);
    }
    let mut b = Matrix::zeros(6, 3);
    b.set(3, 0, dt * GRAVITY);
    b.set(4, 1, -dt * GRAVITY);
    b.set(5, 2, dt);
    let mut c = vec![0.0; 6];
    c[5] = -dt * GRAVITY;
    (a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_dynamics() -> ClosedLoop {
        let d = AffineDynamics::new(Matrix::zeros(2, 2), Matrix::zeros(2, 1), vec![0.0, 0.0]).unwrap();
        ClosedLoop::new(d, None).unwrap()
    }

    #[test]
    fn example1_step() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        assert_eq!(bm.system.step(&[1.0, 1.0]).unwrap(), vec![2.0, 1.0]);
        assert!(bm.system.controller.is_none());
        assert_eq!(bm.system.dynamics.a_d, shear());
    }

    #[test]
    fn zero_dynamics_maps_to_origin() {
        assert_eq!(zero_dynamics().step(&[3.0, -4.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn double_integrator_with_zero_controller() {
        let b = Matrix::from_rows(&[vec![0.5], vec![1.0]]).unwrap();
        let d = AffineDynamics::new(shear(), b, vec![0.0, 0.0]).unwrap();
        let zero = Mlp::new(vec![crate::nn::AffineMap::zeros(1, 2)]).unwrap();
        let sys = ClosedLoop::new(d, Some(zero)).unwrap();
        assert_eq!(sys.step(&[2.0, -1.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn double_integrator_sets() {
        let bm = builtin(BenchmarkId::DoubleIntegrator).unwrap();
        assert_eq!(bm.spec.initial, bx(&[2.5, -0.5], &[2.8, 0.0]));
        assert_eq!(bm.spec.unsafe_set, bx(&[1.5, -0.25], &[1.8, 0.0]));
        assert_eq!(bm.spec.workspace, bx(&[-3.0, -3.0], &[3.0, 3.0]));
        let pi = bm.system.controller.as_ref().unwrap();
        assert_eq!(pi.dims(), vec![2, 10, 5, 1]);
    }

    #[test]
    fn quadrotor_matrices_match_discretization() {
        let bm = builtin(BenchmarkId::Quadrotor6d).unwrap();
        let d = &bm.system.dynamics;
        assert_eq!(d.a_d.get(0, 3), 0.1);
        assert_eq!(d.a_d.get(3, 3), 1.0);
        assert_eq!(d.a_d.get(3, 0), 0.0);
        assert!((d.c_d[5] + 0.981).abs() < 1e-12);
        assert!((d.b_d.get(3, 0) - 0.981).abs() < 1e-12);
        assert!((d.b_d.get(4, 1) + 0.981).abs() < 1e-12);
        assert_eq!(bm.system.controller.as_ref().unwrap().dims(), vec![6, 32, 32, 32, 3]);
    }

    #[test]
    fn rollout_zero_steps() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        let r = bm.system.rollout(&bm.spec, &[-1.2, -1.2], 0).unwrap();
        assert_eq!(r.trajectory, vec![vec![-1.2, -1.2]]);
        assert_eq!(r.verdict, Verdict::Safe);
    }

    #[test]
    fn rollout_from_example1_corners_is_safe() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        for x0 in bm.spec.initial.corners(4) {
            let r = bm.system.rollout(&bm.spec, &x0, 100).unwrap();
            assert_eq!(r.verdict, Verdict::Safe);
            for w in r.trajectory.windows(2) {
                assert_eq!(bm.system.step(&w[0]).unwrap(), w[1]);
            }
        }
    }

    #[test]
    fn rollout_overlapping_sets_is_unsafe() {
        let x = BoxDomain::cube(2, -2.0, 2.0).unwrap();
        let s = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let spec = SafetySpec::new(x, s.clone(), s).unwrap();
        let r = zero_dynamics().rollout(&spec, &[0.5, 0.5], 10).unwrap();
        assert_eq!(r.verdict, Verdict::Unsafe { step: 0 });
    }

    #[test]
    fn rollout_rejects_start_outside_initial_set() {
        let bm = builtin(BenchmarkId::Example1).unwrap();
        assert!(matches!(bm.system.rollout(&bm.spec, &[0.0, -1.0], 5), Err(Error::OutsideInitialSet(_))));
    }

    #[test]
    fn unknown_benchmark() {
        assert!("cartpole".parse::<BenchmarkId>().is_err());
    }

    #[test]
    fn system_json() {
        let text = r#"{"A": [[1.0, 1.0], [0.0, 1.0]], "B": [[0.5], [1.0]], "c": [0.0, 0.0], "controller": null}"#;
        let def: SystemDef = serde_json::from_str(text).unwrap();
        let sys = def.build(None).unwrap();
        assert_eq!(sys.step(&[1.0, 1.0]).unwrap(), vec![2.0, 1.0]);
    }
}
