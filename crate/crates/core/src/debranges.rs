//! Finite Blaschke products and the spaces PW_a + span{(t - lambda)^{-1}}.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{rational_gram, sine_kernel, validate_poles, KernelSpec};
use crate::linalg::{c, CMat, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HalfPlane {
    Upper,
    Lower,
}

impl HalfPlane {
    pub fn contains(self, z: Complex64) -> bool {
        match self {
            HalfPlane::Upper => z.im > 0.0,
            HalfPlane::Lower => z.im < 0.0,
        }
    }
}

/// Zero sets of the two Blaschke products and the bandwidth of the exponential factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlaschkeSpec {
    /// [re, im] pairs in the open upper half-plane.
    #[serde(default)]
    pub plus: Vec<[f64; 2]>,
    /// [re, im] pairs in the open lower half-plane.
    #[serde(default)]
    pub minus: Vec<[f64; 2]>,
    pub bandwidth: f64,
}

fn to_complex(v: &[[f64; 2]]) -> Vec<Complex64> {
    v.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

impl BlaschkeSpec {
    pub fn new(plus: &[Complex64], minus: &[Complex64], bandwidth: f64) -> Result<Self> {
        let spec = BlaschkeSpec {
            plus: plus.iter().map(|z| [z.re, z.im]).collect(),
            minus: minus.iter().map(|z| [z.re, z.im]).collect(),
            bandwidth,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: BlaschkeSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn plus_points(&self) -> Vec<Complex64> {
        to_complex(&self.plus)
    }

    pub fn minus_points(&self) -> Vec<Complex64> {
        to_complex(&self.minus)
    }

    pub fn all_points(&self) -> Vec<Complex64> {
        let mut v = self.plus_points();
        v.extend(self.minus_points());
        v
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::Argument(format!("bandwidth {} must be positive", self.bandwidth)));
        }
        for z in self.plus_points() {
            if !(z.im > 0.0) {
                return Err(Error::Argument(format!("{z} is not in the upper half-plane")));
            }
        }
        for z in self.minus_points() {
            if !(z.im < 0.0) {
                return Err(Error::Argument(format!("{z} is not in the lower half-plane")));
            }
        }
        validate_poles(&self.all_points())
    }
}

/// Product of (z - lambda)/(z - conj lambda) over the points.
pub fn blaschke_product(points: &[Complex64], half: HalfPlane, z: Complex64) -> Result<Complex64> {
    let mut prod = c(1.0);
    for &lam in points {
        if !half.contains(lam) {
            return Err(Error::Argument(format!("{lam} is not in the {half:?} half-plane")));
        }
        let den = z - lam.conj();
        if den.norm() <= 1e-14 * lam.norm().max(1.0) {
            return Err(Error::Pole(z));
        }
        prod *= (z - lam) / den;
    }
    Ok(prod)
}

/// Reproducing kernel of PW_a + span{(t - lambda)^{-1}}, with the rational part
/// orthonormalized once at construction.
#[derive(Clone, Debug)]
pub struct ModelSpace {
    spec: BlaschkeSpec,
    /// Points in orthogonalization order (|Im| descending).
    points: Vec<Complex64>,
    /// Row m holds the coefficients of the m-th orthonormal function in the residual functions.
    coeffs: CMat,
}

impl ModelSpace {
    pub fn new(spec: &BlaschkeSpec) -> Result<Self> {
        spec.validate()?;
        let mut points = spec.all_points();
        points.sort_by(|a, b| b.im.abs().total_cmp(&a.im.abs()).then(a.re.total_cmp(&b.re)));
        let a = spec.bandwidth;
        // residuals r_j = (t - l_j)^{-1} - P_PW (t - l_j)^{-1} = s_j u_j, u_j the unit-phase direction
        let scales: Vec<Complex64> = points.iter().map(|&l| pw_residual_scale(a, l)).collect();
        let g = rational_gram(&points);
        let m = points.len();
        // <r_j, r_k> = s_j conj(s_k) <u_j, u_k>
        let inner = |x: &[Complex64], y: &[Complex64]| -> Complex64 {
            let mut s = ZERO;
            for j in 0..m {
                for k in 0..m {
                    s += x[j] * scales[j] * (y[k] * scales[k]).conj() * g[(k, j)];
                }
            }
            s
        };
        let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m);
        for j in 0..m {
            let mut v = vec![ZERO; m];
            v[j] = c(1.0);
            let norm0 = inner(&v, &v).re.sqrt();
            for _ in 0..2 {
                for e in &basis {
                    let proj = inner(&v, e);
                    for k in 0..m {
                        v[k] -= proj * e[k];
                    }
                }
            }
            let nrm = inner(&v, &v).re.max(0.0).sqrt();
            if !(nrm > 1e-10 * norm0) {
                return Err(Error::IllConditioned("rational directions are numerically dependent".into()));
            }
            for vk in v.iter_mut() {
                *vk /= nrm;
            }
            basis.push(v);
        }
        let coeffs = CMat::from_fn(m, m, |r, j| basis[r][j]);
        Ok(ModelSpace { spec: spec.clone(), points, coeffs })
    }

    pub fn spec(&self) -> &BlaschkeSpec {
        &self.spec
    }

    /// Number of rational directions added to PW_a.
    pub fn extra_dimension(&self) -> usize {
        self.points.len()
    }

    /// The m-th orthonormal rational function at x.
    pub fn orthonormal_function(&self, m: usize, x: f64) -> Complex64 {
        let a = self.spec.bandwidth;
        (0..self.points.len()).map(|j| self.coeffs[(m, j)] * pw_residual(a, self.points[j], x)).sum()
    }

    pub fn kernel(&self, x: f64, y: f64) -> Complex64 {
        let mut k = c(sine_kernel(self.spec.bandwidth, x, y));
        for m in 0..self.points.len() {
            k += self.orthonormal_function(m, x) * self.orthonormal_function(m, y).conj();
        }
        k
    }

    /// The same space as a kernel-zoo spec (inverse-Gram route).
    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::perturbed_sine(self.spec.bandwidth, self.spec.all_points())
    }
}

/// Reproducing kernel of the model space at real points x, y.
pub fn model_space_kernel(spec: &BlaschkeSpec, x: f64, y: f64) -> Result<Complex64> {
    if !(x.is_finite() && y.is_finite()) {
        return Err(Error::Domain("model-space kernel needs finite real points".into()));
    }
    Ok(ModelSpace::new(spec)?.kernel(x, y))
}

fn pw_residual_scale(a: f64, lam: Complex64) -> Complex64 {
    let s = if lam.im < 0.0 { 1.0 } else { -1.0 };
    (Complex64::new(0.0, -s * a) * lam).exp()
}

/// (t - lambda)^{-1} minus its projection onto PW_a:
/// e^{ia(t - lambda)}/(t - lambda) below the axis, e^{-ia(t - lambda)}/(t - lambda) above.
pub fn pw_residual(a: f64, lam: Complex64, t: f64) -> Complex64 {
    let s = if lam.im < 0.0 { 1.0 } else { -1.0 };
    (Complex64::new(0.0, s * a) * (c(t) - lam)).exp() / (c(t) - lam)
}

/// Projection of (t - lambda)^{-1} onto PW_a.
pub fn pw_projection(a: f64, lam: Complex64, t: f64) -> Complex64 {
    1.0 / (c(t) - lam) - pw_residual(a, lam, t)
}

/// |Im lambda| / pi, the normalizing constant of a single added direction.
pub fn single_pole_constant(lam: Complex64) -> f64 {
    lam.im.abs() / PI
}
