//! Axis-aligned boxes for the workspace, initial and unsafe sets, plus the
//! finite sample sets the learner trains on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Closed hyperrectangle `{x : lo <= x <= hi}`. Membership is inclusive on
/// both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<RawBox> for BoxDomain {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        BoxDomain::new(raw.lo, raw.hi)
    }
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::InvalidBox(format!(
                "lo has {} entries, hi has {}",
                lo.len(),
                hi.len()
            )));
        }
        for (j, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::InvalidBox(format!("non-finite bound in dimension {j}")));
            }
            if l > h {
                return Err(Error::InvalidBox(format!("lo[{j}] = {l} > hi[{j}] = {h}")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The box `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.width(j)).collect()
    }

    pub fn max_width(&self) -> f64 {
        self.widths().into_iter().fold(0.0, f64::max)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        check_dim(self.dim(), x.len())?;
        Ok(self.contains_unchecked(x))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Componentwise clip of `x` onto the box.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.project_unchecked(x))
    }

    pub(crate) fn project_unchecked(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    }

    pub fn is_subset_of(&self, other: &BoxDomain) -> bool {
        self.dim() == other.dim()
            && self.lo.iter().zip(&other.lo).all(|(a, b)| a >= b)
            && self.hi.iter().zip(&other.hi).all(|(a, b)| a <= b)
    }

    pub fn intersects(&self, other: &BoxDomain) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|j| self.lo[j] <= other.hi[j] && other.lo[j] <= self.hi[j])
    }

    /// `n` points drawn uniformly from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                self.lo
                    .iter()
                    .zip(&self.hi)
                    .map(|(&l, &h)| if h > l { rng.gen_range(l..=h) } else { l })
                    .collect()
            })
            .collect()
    }

    /// Index of the widest dimension (lowest index on ties).
    pub fn widest_dim(&self) -> usize {
        let mut best = 0;
        for j in 1..self.dim() {
            if self.width(j) > self.width(best) {
                best = j;
            }
        }
        best
    }

    /// Halves the box along dimension `j`.
    pub fn bisect(&self, j: usize) -> (BoxDomain, BoxDomain) {
        let mid = 0.5 * (self.lo[j] + self.hi[j]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[j] = mid;
        right.lo[j] = mid;
        (left, right)
    }

    /// Box of half-width `radius[j]` around `x`, intersected with `self`.
    pub fn neighborhood(&self, x: &[f64], radius: &[f64]) -> Result<BoxDomain> {
        check_dim(self.dim(), x.len())?;
        let lo = (0..self.dim()).map(|j| (x[j] - radius[j]).clamp(self.lo[j], self.hi[j])).collect();
        let hi = (0..self.dim()).map(|j| (x[j] + radius[j]).clamp(self.lo[j], self.hi[j])).collect();
        BoxDomain::new(lo, hi)
    }

    /// Up to `limit` vertices, enumerated in binary order.
    pub fn corners(&self, limit: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let total = if n >= usize::BITS as usize { usize::MAX } else { 1usize << n };
        (0..total.min(limit))
            .map(|mask| {
                (0..n).map(|j| if mask >> j & 1 == 1 { self.hi[j] } else { self.lo[j] }).collect()
            })
            .collect()
    }
}

/// Workspace `X`, initial set `X0` and unsafe set `Xu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct SafetySpec {
    pub workspace: BoxDomain,
    pub initial: BoxDomain,
    #[serde(rename = "unsafe")]
    pub unsafe_set: BoxDomain,
}

#[derive(Deserialize)]
struct RawSpec {
    workspace: BoxDomain,
    initial: BoxDomain,
    #[serde(rename = "unsafe")]
    unsafe_set: BoxDomain,
}

impl TryFrom<RawSpec> for SafetySpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        SafetySpec::new(raw.workspace, raw.initial, raw.unsafe_set)
    }
}

impl SafetySpec {
    pub fn new(workspace: BoxDomain, initial: BoxDomain, unsafe_set: BoxDomain) -> Result<Self> {
        if !initial.is_subset_of(&workspace) {
            return Err(Error::InvalidBox("initial set is not contained in the workspace".into()));
        }
        if !unsafe_set.is_subset_of(&workspace) {
            return Err(Error::InvalidBox("unsafe set is not contained in the workspace".into()));
        }
        Ok(Self { workspace, initial, unsafe_set })
    }

    pub fn dim(&self) -> usize {
        self.workspace.dim()
    }
}

/// Finite samples from `X0`, `Xu` and `X`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub s0: Vec<Vec<f64>>,
    pub su: Vec<Vec<f64>>,
    pub sx: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn uniform<R: Rng + ?Sized>(
        spec: &SafetySpec,
        n0: usize,
        nu: usize,
        nx: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            s0: spec.initial.sample_uniform(n0, rng),
            su: spec.unsafe_set.sample_uniform(nu, rng),
            sx: spec.workspace.sample_uniform(nx, rng),
        }
    }

    pub fn len(&self) -> usize {
        self.s0.len() + self.su.len() + self.sx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extend(&mut self, other: SampleSet) {
        self.s0.extend(other.s0);
        self.su.extend(other.su);
        self.sx.extend(other.sx);
    }

    /// Checks that every member lies in its set.
    pub fn validate(&self, spec: &SafetySpec) -> Result<()> {
        let groups = [
            ("s0", &self.s0, &spec.initial),
            ("su", &self.su, &spec.unsafe_set),
            ("sx", &self.sx, &spec.workspace),
        ];
        for (name, pts, dom) in groups {
            for x in pts.iter() {
                if !dom.contains(x)? {
                    return Err(Error::InvalidBox(format!("{name} sample {x:?} outside its set")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit2() -> BoxDomain {
        BoxDomain::cube(2, -1.0, 1.0).unwrap()
    }

    #[test]
    fn membership_is_inclusive() {
        let b = unit2();
        assert!(b.contains(&[0.0, 0.0]).unwrap());
        assert!(b.contains(&[1.0, 1.0]).unwrap());
        assert!(!b.contains(&[1.0001, 0.0]).unwrap());
        assert!(b.contains(&[0.0]).is_err());
    }

    #[test]
    fn projection_examples() {
        let b = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(b.project(&[2.0]).unwrap(), vec![1.0]);
        assert_eq!(b.project(&[0.5]).unwrap(), vec![0.5]);
        assert_eq!(unit2().project(&[-3.0, 0.2]).unwrap(), vec![-1.0, 0.2]);
        assert!(unit2().project(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoxDomain::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxDomain::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(serde_json::from_str::<BoxDomain>(r#"{"lo":[2.0],"hi":[1.0]}"#).is_err());
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(unit2().sample_uniform(0, &mut rng).is_empty());
        let point = BoxDomain::new(vec![2.0, 3.0], vec![2.0, 3.0]).unwrap();
        assert_eq!(point.sample_uniform(5, &mut rng), vec![vec![2.0, 3.0]; 5]);
    }

    #[test]
    fn sampling_mean_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let pts = b.sample_uniform(10_000, &mut rng);
        let mean = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn spec_requires_containment() {
        let x = unit2();
        let inside = BoxDomain::cube(2, -0.5, 0.5).unwrap();
        let outside = BoxDomain::cube(2, 0.5, 1.5).unwrap();
        assert!(SafetySpec::new(x.clone(), inside.clone(), inside.clone()).is_ok());
        assert!(SafetySpec::new(x, outside, inside).is_err());
    }

    #[test]
    fn json_shape() {
        let s = serde_json::to_string(&unit2()).unwrap();
        assert_eq!(s, r#"{"lo":[-1.0,-1.0],"hi":[1.0,1.0]}"#);
    }

    fn arb_box() -> impl Strategy<Value = BoxDomain> {
        prop::collection::vec((-5.0f64..5.0, 0.0f64..3.0), 1..5).prop_map(|v| {
            let lo = v.iter().map(|p| p.0).collect();
            let hi = v.iter().map(|p| p.0 + p.1).collect();
            BoxDomain::new(lo, hi).unwrap()
        })
    }

    proptest! {
        #[test]
        fn projection_lands_in_box_and_is_idempotent(b in arb_box(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..b.dim()).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let p = b.project(&x).unwrap();
            prop_assert!(b.contains(&p).unwrap());
            prop_assert_eq!(b.project(&p).unwrap(), p.clone());
            prop_assert_eq!(p == x, b.contains(&x).unwrap());
        }

        #[test]
        fn samples_are_members_and_reproducible(b in arb_box(), seed in 0u64..1000) {
            let a = b.sample_uniform(20, &mut ChaCha8Rng::seed_from_u64(seed));
            let c = b.sample_uniform(20, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(a.iter().all(|x| b.contains(x).unwrap()));
            prop_assert_eq!(a, c);
        }
    }
}
