//! Closed-form reproducing kernels and the integrable (A, B) constructor.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{c, CMat, ZERO};
use crate::quadrature;
use crate::special;

/// Largest number of rational directions added to a Paley–Wiener space.
pub const MAX_POLES: usize = 16;
/// Poles closer than this are treated as accumulating.
pub const MIN_POLE_SEPARATION: f64 = 1e-6;

/// Real (A, B) data of an integrable kernel (A(x)B(y) - B(x)A(y)) / (x - y).
pub trait AbFunctions: Send + Sync + fmt::Debug {
    fn a(&self, x: f64) -> f64;
    fn b(&self, x: f64) -> f64;
    fn da(&self, x: f64) -> f64;
    fn db(&self, x: f64) -> f64;
    fn in_domain(&self, x: f64) -> bool {
        x.is_finite()
    }
    fn label(&self) -> String;
}

/// Profile u of a rank-one kernel u(x) conj(u(y)).
pub trait RankOneProfile: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> Complex64;
    fn derivative(&self, x: f64) -> Option<Complex64> {
        let _ = x;
        None
    }
    fn in_domain(&self, x: f64) -> bool {
        x.is_finite()
    }
    fn label(&self) -> String;
}

#[derive(Clone, Debug)]
pub enum KernelSpec {
    Sine { a: f64 },
    PerturbedSine(Arc<PerturbedSine>),
    FromAb(Arc<dyn AbFunctions>),
    RankOne(Arc<dyn RankOneProfile>),
    Airy,
    Bessel { order: f64 },
}

impl KernelSpec {
    pub fn sine(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Argument(format!("bandwidth {a} must be positive")));
        }
        Ok(KernelSpec::Sine { a })
    }

    pub fn perturbed_sine(a: f64, poles: Vec<Complex64>) -> Result<Self> {
        Ok(KernelSpec::PerturbedSine(Arc::new(PerturbedSine::new(a, poles)?)))
    }

    pub fn bessel(order: f64) -> Result<Self> {
        if !(order.is_finite() && order > -1.0) {
            return Err(Error::Argument(format!("Bessel order {order} must exceed -1")));
        }
        Ok(KernelSpec::Bessel { order })
    }

    pub fn from_ab(data: impl AbFunctions + 'static) -> Self {
        KernelSpec::FromAb(Arc::new(data))
    }

    pub fn rank_one(profile: impl RankOneProfile + 'static) -> Self {
        KernelSpec::RankOne(Arc::new(profile))
    }

    pub fn label(&self) -> String {
        match self {
            KernelSpec::Sine { a } => format!("sine(a={a})"),
            KernelSpec::PerturbedSine(p) => {
                let poles: Vec<String> = p.poles.iter().map(|z| format!("{}{:+}i", z.re, z.im)).collect();
                format!("perturbed-sine(a={}, poles=[{}])", p.a, poles.join(", "))
            }
            KernelSpec::FromAb(d) => format!("from-ab({})", d.label()),
            KernelSpec::RankOne(u) => format!("rank-one({})", u.label()),
            KernelSpec::Airy => "airy".into(),
            KernelSpec::Bessel { order } => format!("bessel(s={order})"),
        }
    }

    pub fn in_domain(&self, x: f64) -> bool {
        match self {
            KernelSpec::FromAb(d) => d.in_domain(x),
            KernelSpec::RankOne(u) => u.in_domain(x),
            KernelSpec::Bessel { .. } => x.is_finite() && x > 0.0,
            _ => x.is_finite(),
        }
    }

    /// Domain error unless x lies in the kernel domain.
    pub fn check(&self, x: f64) -> Result<()> {
        if self.in_domain(x) {
            Ok(())
        } else {
            Err(Error::Domain(format!("{} is outside the domain of {}", x, self.label())))
        }
    }

    /// (A, B, A', B') when the kernel is given in integrable form.
    pub fn ab_data(&self) -> Option<Arc<dyn AbFunctions>> {
        match self {
            KernelSpec::FromAb(d) => Some(Arc::clone(d)),
            KernelSpec::Airy => Some(Arc::new(AiryAb)),
            KernelSpec::Bessel { order } => Some(Arc::new(BesselAb { order: *order })),
            _ => None,
        }
    }

    /// Whether the kernel takes only real values.
    pub fn is_real(&self) -> bool {
        !matches!(self, KernelSpec::PerturbedSine(_) | KernelSpec::RankOne(_))
    }
}

/// K(x, y), with the diagonal taken from the analytic limit.
pub fn eval_kernel(spec: &KernelSpec, x: f64, y: f64) -> Result<Complex64> {
    spec.check(x)?;
    spec.check(y)?;
    Ok(match spec {
        KernelSpec::Sine { a } => c(sine_kernel(*a, x, y)),
        KernelSpec::PerturbedSine(p) => p.eval(x, y),
        KernelSpec::RankOne(u) => u.value(x) * u.value(y).conj(),
        _ => {
            let d = spec.ab_data().expect("integrable variant");
            c(ab_kernel(d.as_ref(), x, y))
        }
    })
}

/// d/dt K(t, x), closed form where the kernel supplies one.
pub fn kernel_d1(spec: &KernelSpec, t: f64, x: f64) -> Result<Option<Complex64>> {
    spec.check(t)?;
    spec.check(x)?;
    Ok(match spec {
        KernelSpec::Sine { a } => Some(c(sine_kernel_d1(*a, t, x))),
        KernelSpec::PerturbedSine(p) => Some(p.d1(t, x)),
        KernelSpec::RankOne(u) => u.derivative(t).map(|d| d * u.value(x).conj()),
        _ => {
            let d = spec.ab_data().expect("integrable variant");
            ab_kernel_d1(d.as_ref(), t, x).map(c)
        }
    })
}

/// d/dt K(t, x) by central differences with step h and one Richardson step.
/// Returns the extrapolated value and its gap to the plain step-h estimate.
pub fn kernel_d1_fd(spec: &KernelSpec, t: f64, x: f64, h: f64) -> Result<(Complex64, f64)> {
    let central = |h: f64| -> Result<Complex64> {
        Ok((eval_kernel(spec, t + h, x)? - eval_kernel(spec, t - h, x)?) / (2.0 * h))
    };
    let d1 = central(h)?;
    let d2 = central(0.5 * h)?;
    let rich = (4.0 * d2 - d1) / 3.0;
    Ok((rich, (rich - d1).norm()))
}

/// d/dt K(t, x), closed form if available, else Richardson differences with step h.
pub fn kernel_d1_or_fd(spec: &KernelSpec, t: f64, x: f64, h: f64) -> Result<Complex64> {
    match kernel_d1(spec, t, x)? {
        Some(d) => Ok(d),
        None => kernel_d1_fd(spec, t, x, h).map(|(d, _)| d),
    }
}

/// Symmetric Nystrom matrix sqrt(w_i) K(x_i, x_j) sqrt(w_j).
pub fn kernel_matrix(spec: &KernelSpec, grid: &Grid) -> Result<CMat> {
    kernel_matrix_on(spec, grid.nodes(), grid.weights())
}

/// Nystrom matrix on explicit nodes and weights.
pub fn kernel_matrix_on(spec: &KernelSpec, nodes: &[f64], weights: &[f64]) -> Result<CMat> {
    let n = nodes.len();
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let rows: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| eval_kernel(spec, nodes[i], nodes[j]).map(|k| k * sw[i] * sw[j]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = CMat::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            if i == j {
                m[(i, i)] = c(v.re);
            } else {
                m[(i, j)] = v;
                m[(j, i)] = v.conj();
            }
        }
    }
    Ok(m)
}

/// Unscaled kernel columns K(x_i, a_j) for nodes x and anchors a.
pub fn kernel_columns(spec: &KernelSpec, nodes: &[f64], anchors: &[f64]) -> Result<CMat> {
    let cols: Vec<Vec<Complex64>> = anchors
        .par_iter()
        .map(|&a| nodes.iter().map(|&x| eval_kernel(spec, x, a)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut m = CMat::zeros(nodes.len(), anchors.len());
    for (j, col) in cols.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        let u2 = u * u;
        1.0 - u2 / 6.0 + u2 * u2 / 120.0
    } else {
        u.sin() / u
    }
}

fn sinc_d(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        let u2 = u * u;
        -u / 3.0 + u * u2 / 30.0 - u * u2 * u2 / 840.0
    } else {
        (u * u.cos() - u.sin()) / (u * u)
    }
}

pub fn sine_kernel(a: f64, x: f64, y: f64) -> f64 {
    a / PI * sinc(a * (x - y))
}

fn sine_kernel_d1(a: f64, t: f64, x: f64) -> f64 {
    a * a / PI * sinc_d(a * (t - x))
}

fn near_diagonal(x: f64, y: f64) -> bool {
    (x - y).abs() <= 5e-6 * x.abs().max(y.abs()).max(1.0)
}

fn ab_diagonal(d: &dyn AbFunctions, x: f64) -> f64 {
    d.da(x) * d.b(x) - d.db(x) * d.a(x)
}

fn ab_kernel(d: &dyn AbFunctions, x: f64, y: f64) -> f64 {
    if x == y {
        ab_diagonal(d, x)
    } else if near_diagonal(x, y) {
        // symmetric kernel: the first-order term vanishes at the midpoint
        ab_diagonal(d, 0.5 * (x + y))
    } else {
        (d.a(x) * d.b(y) - d.b(x) * d.a(y)) / (x - y)
    }
}

fn ab_kernel_d1(d: &dyn AbFunctions, t: f64, x: f64) -> Option<f64> {
    if (t - x).abs() <= 1e-3 * t.abs().max(x.abs()).max(1.0) {
        return None;
    }
    let n = d.a(t) * d.b(x) - d.b(t) * d.a(x);
    let dn = d.da(t) * d.b(x) - d.db(t) * d.a(x);
    let dt = t - x;
    Some((dn * dt - n) / (dt * dt))
}

/// Sine kernel plus the projection onto span{e^{+-iax}/(x - lambda)}, which is
/// orthogonal to PW_a; the sign follows the half-plane of lambda.
#[derive(Clone, Debug)]
pub struct PerturbedSine {
    a: f64,
    poles: Vec<Complex64>,
    /// Inverse Gram matrix of the rational directions.
    ginv: CMat,
    quadrature_gap: f64,
}

impl PerturbedSine {
    pub fn new(a: f64, poles: Vec<Complex64>) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Argument(format!("bandwidth {a} must be positive")));
        }
        validate_poles(&poles)?;
        let gram = rational_gram(&poles);
        let quad = rational_gram_quadrature(&poles);
        let scale = gram.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
        let quadrature_gap = gram.iter().zip(quad.iter()).map(|(g, q)| (g - q).norm()).fold(0.0, f64::max) / scale;
        if quadrature_gap > 1e-8 {
            return Err(Error::Numeric(format!(
                "closed-form Gram disagrees with quadrature by {quadrature_gap:e}"
            )));
        }
        let ginv = gram
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::IllConditioned("Gram matrix of the poles is singular".into()))?;
        Ok(PerturbedSine { a, poles, ginv, quadrature_gap })
    }

    pub fn bandwidth(&self) -> f64 {
        self.a
    }

    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    /// Inverse Gram matrix; for a single pole the 1x1 entry |Im lambda| / pi.
    pub fn normalization(&self) -> &CMat {
        &self.ginv
    }

    /// Relative gap between the closed-form Gram and its quadrature.
    pub fn quadrature_gap(&self) -> f64 {
        self.quadrature_gap
    }

    pub(crate) fn u(&self, j: usize, x: f64) -> Complex64 {
        rational_direction(self.a, self.poles[j], x)
    }

    fn du(&self, j: usize, x: f64) -> Complex64 {
        let lam = self.poles[j];
        let s = if lam.im < 0.0 { 1.0 } else { -1.0 };
        let phase = Complex64::new(0.0, s * self.a * x).exp();
        let r = 1.0 / (c(x) - lam);
        phase * (Complex64::new(0.0, s * self.a) * r - r * r)
    }

    fn eval(&self, x: f64, y: f64) -> Complex64 {
        let m = self.poles.len();
        let ux: Vec<Complex64> = (0..m).map(|j| self.u(j, x)).collect();
        let uy: Vec<Complex64> = (0..m).map(|k| self.u(k, y).conj()).collect();
        c(sine_kernel(self.a, x, y)) + bilinear(&ux, &self.ginv, &uy)
    }

    fn d1(&self, t: f64, x: f64) -> Complex64 {
        let m = self.poles.len();
        let ut: Vec<Complex64> = (0..m).map(|j| self.du(j, t)).collect();
        let ux: Vec<Complex64> = (0..m).map(|k| self.u(k, x).conj()).collect();
        c(sine_kernel_d1(self.a, t, x)) + bilinear(&ut, &self.ginv, &ux)
    }
}

fn bilinear(l: &[Complex64], m: &CMat, r: &[Complex64]) -> Complex64 {
    let mut s = ZERO;
    for (j, lj) in l.iter().enumerate() {
        for (k, rk) in r.iter().enumerate() {
            s += lj * m[(j, k)] * rk;
        }
    }
    s
}

pub(crate) fn validate_poles(poles: &[Complex64]) -> Result<()> {
    if poles.len() > MAX_POLES {
        return Err(Error::Capacity { len: poles.len(), cap: MAX_POLES });
    }
    for z in poles {
        if !(z.re.is_finite() && z.im.is_finite()) || z.im == 0.0 {
            return Err(Error::Argument(format!("pole {z} must lie strictly off the real line")));
        }
    }
    for (i, z) in poles.iter().enumerate() {
        for w in &poles[i + 1..] {
            if (z - w).norm() < MIN_POLE_SEPARATION {
                return Err(Error::IllConditioned(format!("poles {z} and {w} nearly coincide")));
            }
        }
    }
    Ok(())
}

/// e^{iax}/(x - lambda) for lambda below the axis, e^{-iax}/(x - lambda) above.
pub fn rational_direction(a: f64, lam: Complex64, x: f64) -> Complex64 {
    let s = if lam.im < 0.0 { 1.0 } else { -1.0 };
    Complex64::new(0.0, s * a * x).exp() / (c(x) - lam)
}

/// G[k][j] = <u_j, u_k> in L^2(R, dx) by residues.
pub fn rational_gram(poles: &[Complex64]) -> CMat {
    let m = poles.len();
    DMatrix::from_fn(m, m, |k, j| {
        let (lj, lk) = (poles[j], poles[k]);
        match (lj.im < 0.0, lk.im < 0.0) {
            (true, true) => Complex64::new(0.0, 2.0 * PI) / (lk.conj() - lj),
            (false, false) => Complex64::new(0.0, 2.0 * PI) / (lj - lk.conj()),
            _ => ZERO,
        }
    })
}

/// The same Gram matrix by Gauss–Legendre quadrature on R mapped from (-1, 1).
fn rational_gram_quadrature(poles: &[Complex64]) -> CMat {
    let m = poles.len();
    let scale = poles.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let (t, w) = quadrature::gauss_legendre(800);
    DMatrix::from_fn(m, m, |k, j| {
        let (lj, lk) = (poles[j], poles[k]);
        if (lj.im < 0.0) != (lk.im < 0.0) {
            // the two directions have disjoint Fourier supports
            return ZERO;
        }
        let mut s = ZERO;
        for (ti, wi) in t.iter().zip(&w) {
            let d = 1.0 - ti * ti;
            let x = scale * ti / d;
            let dx = scale * (1.0 + ti * ti) / (d * d);
            s += wi * dx / ((c(x) - lj) * (c(x) - lk.conj()));
        }
        s
    })
}

#[derive(Debug, Clone, Copy)]
pub struct AiryAb;

impl AbFunctions for AiryAb {
    fn a(&self, x: f64) -> f64 {
        special::airy_ai(x).0
    }
    fn b(&self, x: f64) -> f64 {
        special::airy_ai(x).1
    }
    fn da(&self, x: f64) -> f64 {
        special::airy_ai(x).1
    }
    fn db(&self, x: f64) -> f64 {
        x * special::airy_ai(x).0
    }
    fn label(&self) -> String {
        "airy".into()
    }
}

/// A = J_s(sqrt x)/sqrt 2, B = sqrt x J_s'(sqrt x)/sqrt 2 on x > 0.
#[derive(Debug, Clone, Copy)]
pub struct BesselAb {
    pub order: f64,
}

impl AbFunctions for BesselAb {
    fn a(&self, x: f64) -> f64 {
        special::bessel_j(self.order, x.sqrt()).0 / 2f64.sqrt()
    }
    fn b(&self, x: f64) -> f64 {
        let r = x.sqrt();
        r * special::bessel_j(self.order, r).1 / 2f64.sqrt()
    }
    fn da(&self, x: f64) -> f64 {
        let r = x.sqrt();
        special::bessel_j(self.order, r).1 / (2.0 * r * 2f64.sqrt())
    }
    fn db(&self, x: f64) -> f64 {
        // d/dx [r J'(r)] = (J'(r) + r J''(r)) / (2r) = -(1 - s^2/r^2) J(r) r / (2r)
        let r = x.sqrt();
        let (j, _) = special::bessel_j(self.order, r);
        -(1.0 - self.order * self.order / (r * r)) * j / (2.0 * 2f64.sqrt())
    }
    fn in_domain(&self, x: f64) -> bool {
        x.is_finite() && x > 0.0
    }
    fn label(&self) -> String {
        format!("bessel(s={})", self.order)
    }
}

/// A = sin(ax)/pi, B = cos(ax): the sine kernel in integrable form.
#[derive(Debug, Clone, Copy)]
pub struct SineAb {
    pub a: f64,
}

impl AbFunctions for SineAb {
    fn a(&self, x: f64) -> f64 {
        (self.a * x).sin() / PI
    }
    fn b(&self, x: f64) -> f64 {
        (self.a * x).cos()
    }
    fn da(&self, x: f64) -> f64 {
        self.a * (self.a * x).cos() / PI
    }
    fn db(&self, x: f64) -> f64 {
        -self.a * (self.a * x).sin()
    }
    fn label(&self) -> String {
        format!("sine-ab(a={})", self.a)
    }
}

/// Gaussian profile amplitude * exp(-(x - center)^2 / (2 width^2)).
#[derive(Debug, Clone, Copy)]
pub struct GaussianProfile {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl RankOneProfile for GaussianProfile {
    fn value(&self, x: f64) -> Complex64 {
        let z = (x - self.center) / self.width;
        c(self.amplitude * (-0.5 * z * z).exp())
    }
    fn derivative(&self, x: f64) -> Option<Complex64> {
        let z = (x - self.center) / self.width;
        Some(c(-self.amplitude * z / self.width * (-0.5 * z * z).exp()))
    }
    fn label(&self) -> String {
        format!("gaussian(center={}, width={}, amplitude={})", self.center, self.width, self.amplitude)
    }
}

/// Gaussian profile with a prescribed real zero: (x - zero) exp(-(x - center)^2 / (2 width^2)).
#[derive(Debug, Clone, Copy)]
pub struct VanishingGaussian {
    pub center: f64,
    pub width: f64,
    pub zero: f64,
}

impl RankOneProfile for VanishingGaussian {
    fn value(&self, x: f64) -> Complex64 {
        let z = (x - self.center) / self.width;
        c((x - self.zero) * (-0.5 * z * z).exp())
    }
    fn derivative(&self, x: f64) -> Option<Complex64> {
        let z = (x - self.center) / self.width;
        let e = (-0.5 * z * z).exp();
        Some(c(e - (x - self.zero) * z / self.width * e))
    }
    fn label(&self) -> String {
        format!("vanishing-gaussian(center={}, width={}, zero={})", self.center, self.width, self.zero)
    }
}

/// Column of the sine kernel, scale * K_a(x, q).
#[derive(Debug, Clone, Copy)]
pub struct SineColumn {
    pub a: f64,
    pub q: f64,
    pub scale: f64,
}

impl RankOneProfile for SineColumn {
    fn value(&self, x: f64) -> Complex64 {
        c(self.scale * sine_kernel(self.a, x, self.q))
    }
    fn derivative(&self, x: f64) -> Option<Complex64> {
        Some(c(self.scale * sine_kernel_d1(self.a, x, self.q)))
    }
    fn label(&self) -> String {
        format!("sine-column(a={}, q={}, scale={})", self.a, self.q, self.scale)
    }
}

/// Serializable kernel description, as read from configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelDescriptor {
    Sine {
        bandwidth: f64,
    },
    PerturbedSine {
        bandwidth: f64,
        /// [re, im] pairs
        poles: Vec<[f64; 2]>,
    },
    FromAb {
        family: AbFamily,
    },
    RankOne {
        profile: ProfileDescriptor,
    },
    Airy,
    Bessel {
        order: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AbFamily {
    Sine { bandwidth: f64 },
    Airy,
    Bessel { order: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileDescriptor {
    Gaussian {
        center: f64,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    SineColumn {
        bandwidth: f64,
        q: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    VanishingGaussian {
        center: f64,
        width: f64,
        zero: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Argument(format!("{name} = {v} must be positive and finite")))
    }
}

impl KernelDescriptor {
    pub fn build(&self) -> Result<KernelSpec> {
        match self {
            KernelDescriptor::Sine { bandwidth } => KernelSpec::sine(*bandwidth),
            KernelDescriptor::PerturbedSine { bandwidth, poles } => {
                KernelSpec::perturbed_sine(*bandwidth, poles.iter().map(|p| Complex64::new(p[0], p[1])).collect())
            }
            KernelDescriptor::FromAb { family } => Ok(match family {
                AbFamily::Sine { bandwidth } => KernelSpec::from_ab(SineAb { a: positive("bandwidth", *bandwidth)? }),
                AbFamily::Airy => KernelSpec::from_ab(AiryAb),
                AbFamily::Bessel { order } => {
                    KernelSpec::bessel(*order)?;
                    KernelSpec::from_ab(BesselAb { order: *order })
                }
            }),
            KernelDescriptor::RankOne { profile } => Ok(match profile {
                ProfileDescriptor::Gaussian { center, width, amplitude } => {
                    if !center.is_finite() || !amplitude.is_finite() {
                        return Err(Error::Argument("non-finite Gaussian profile".into()));
                    }
                    KernelSpec::rank_one(GaussianProfile {
                        center: *center,
                        width: positive("width", *width)?,
                        amplitude: *amplitude,
                    })
                }
                ProfileDescriptor::SineColumn { bandwidth, q, scale } => {
                    if !q.is_finite() || !scale.is_finite() {
                        return Err(Error::Argument("non-finite sine column".into()));
                    }
                    KernelSpec::rank_one(SineColumn { a: positive("bandwidth", *bandwidth)?, q: *q, scale: *scale })
                }
                ProfileDescriptor::VanishingGaussian { center, width, zero } => {
                    if !center.is_finite() || !zero.is_finite() {
                        return Err(Error::Argument("non-finite vanishing Gaussian".into()));
                    }
                    KernelSpec::rank_one(VanishingGaussian { center: *center, width: positive("width", *width)?, zero: *zero })
                }
            }),
            KernelDescriptor::Airy => Ok(KernelSpec::Airy),
            KernelDescriptor::Bessel { order } => KernelSpec::bessel(*order),
        }
    }

    pub fn from_json(text: &str) -> Result<KernelSpec> {
        let d: KernelDescriptor = serde_json::from_str(text)?;
        d.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Domain, Rule};
    use crate::linalg::{hermitian_eigen, singular_values};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[derive(Debug)]
    struct Linear;
    impl AbFunctions for Linear {
        fn a(&self, x: f64) -> f64 {
            x
        }
        fn b(&self, _: f64) -> f64 {
            1.0
        }
        fn da(&self, _: f64) -> f64 {
            1.0
        }
        fn db(&self, _: f64) -> f64 {
            0.0
        }
        fn label(&self) -> String {
            "linear".into()
        }
    }

    fn one_pole() -> KernelSpec {
        KernelSpec::perturbed_sine(1.0, vec![Complex64::new(0.0, -1.0)]).unwrap()
    }

    #[test]
    fn sine_diagonal_is_a_over_pi() {
        let k = eval_kernel(&KernelSpec::sine(1.0).unwrap(), 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(k.re, 1.0 / PI, epsilon = 1e-16);
        let k = eval_kernel(&KernelSpec::sine(1.0).unwrap(), PI, 0.0).unwrap();
        assert!(k.norm() < 1e-16);
    }

    #[test]
    fn linear_ab_kernel_is_one() {
        let spec = KernelSpec::from_ab(Linear);
        for (x, y) in [(0.3, -2.0), (5.0, 1.0), (1.0, 1.0), (1.0, 1.0 + 1e-9)] {
            assert_abs_diff_eq!(eval_kernel(&spec, x, y).unwrap().re, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_pole_normalization_matches_residue_oracle() {
        // C = |Im lambda| / pi from the integral of 1/|x - lambda|^2 = pi/|Im lambda|
        let KernelSpec::PerturbedSine(p) = one_pole() else { unreachable!() };
        assert_abs_diff_eq!(p.normalization()[(0, 0)].re, 1.0 / PI, epsilon = 1e-14);
        assert!(p.quadrature_gap() < 1e-10);
        let k = eval_kernel(&one_pole(), 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(k.re, 2.0 / PI, epsilon = 1e-14);
        assert!(k.im.abs() < 1e-15);
        let KernelSpec::PerturbedSine(p) = KernelSpec::perturbed_sine(2.0, vec![Complex64::new(1.0, 2.5)]).unwrap()
        else {
            unreachable!()
        };
        assert_abs_diff_eq!(p.normalization()[(0, 0)].re, 2.5 / PI, epsilon = 1e-14);
    }

    #[test]
    fn perturbed_sine_matches_remark_formula() {
        // K = sin(x-y)/(pi(x-y)) + C e^{i(x-y)} / ((y - conj l)(x - l)), C = 1/pi
        let lam = Complex64::new(0.0, -1.0);
        let spec = one_pole();
        for (x, y) in [(0.4, -1.3), (2.0, 7.5), (-3.0, -3.0)] {
            let direct = c(sine_kernel(1.0, x, y))
                + Complex64::new(0.0, x - y).exp() / PI / ((c(y) - lam.conj()) * (c(x) - lam));
            assert!((eval_kernel(&spec, x, y).unwrap() - direct).norm() < 1e-14);
        }
    }

    #[test]
    fn pole_validation() {
        assert!(matches!(
            KernelSpec::perturbed_sine(1.0, vec![Complex64::new(1.0, 0.0)]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            KernelSpec::perturbed_sine(1.0, vec![Complex64::new(0.0, -1.0), Complex64::new(1e-8, -1.0)]),
            Err(Error::IllConditioned(_))
        ));
        let many = (0..17).map(|k| Complex64::new(k as f64, -1.0)).collect();
        assert!(matches!(KernelSpec::perturbed_sine(1.0, many), Err(Error::Capacity { .. })));
    }

    #[test]
    fn mixed_half_plane_poles_are_orthogonal() {
        let g = rational_gram(&[Complex64::new(0.0, -1.0), Complex64::new(1.0, 2.0)]);
        assert_eq!(g[(0, 1)], ZERO);
        let spec = KernelSpec::perturbed_sine(1.0, vec![Complex64::new(0.0, -1.0), Complex64::new(1.0, 2.0)]).unwrap();
        let k = eval_kernel(&spec, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(k.re, 1.0 / PI + 1.0 / PI + 2.0 / PI / 5.0, epsilon = 1e-13);
    }

    #[test]
    fn sine_ab_reproduces_sine() {
        let ab = KernelSpec::from_ab(SineAb { a: 1.0 });
        let s = KernelSpec::sine(1.0).unwrap();
        for (x, y) in [(0.5, 2.0), (-7.0, 3.3), (10.0, -10.0), (0.1, 0.2)] {
            assert_abs_diff_eq!(eval_kernel(&ab, x, y).unwrap().re, eval_kernel(&s, x, y).unwrap().re, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(eval_kernel(&ab, 1.0, 1.0).unwrap().re, 1.0 / PI, epsilon = 1e-15);
    }

    #[test]
    fn airy_diagonal_rule() {
        for x in [-3.0, 0.0, 1.5] {
            let (ai, dai) = special::airy_ai(x);
            let k = eval_kernel(&KernelSpec::Airy, x, x).unwrap().re;
            assert_abs_diff_eq!(k, dai * dai - x * ai * ai, epsilon = 1e-14);
            let near = eval_kernel(&KernelSpec::Airy, x, x + 1e-3).unwrap().re;
            assert!((near - k).abs() < 1e-3);
        }
    }

    #[test]
    fn bessel_diagonal_rule() {
        // K(x,x) = (J_s(r)^2 - J_{s+1}(r) J_{s-1}(r)) / 4, r = sqrt x
        let s = 1.5;
        let spec = KernelSpec::bessel(s).unwrap();
        for x in [0.5f64, 4.0, 30.0] {
            let r: f64 = x.sqrt();
            let j = special::bessel_j(s, r).0;
            let jp = special::bessel_j(s + 1.0, r).0;
            let jm = special::bessel_j(s - 1.0, r).0;
            let k = eval_kernel(&spec, x, x).unwrap().re;
            assert_abs_diff_eq!(k, (j * j - jp * jm) / 4.0, epsilon = 1e-12);
        }
        assert!(matches!(eval_kernel(&spec, -1.0, 1.0), Err(Error::Domain(_))));
        assert!(KernelSpec::bessel(-1.5).is_err());
    }

    #[test]
    fn closed_form_derivatives_match_richardson() {
        let specs = [KernelSpec::sine(1.3).unwrap(), one_pole(), KernelSpec::Airy, KernelSpec::bessel(0.5).unwrap()];
        for spec in &specs {
            for (t, x) in [(0.7, 2.9), (3.0, 1.0), (1.2, 5.5)] {
                if let Some(d) = kernel_d1(spec, t, x).unwrap() {
                    let (fd, gap) = kernel_d1_fd(spec, t, x, 1e-2).unwrap();
                    assert!((d - fd).norm() < 1e-8, "{}: {d} vs {fd}", spec.label());
                    assert!(gap < 1e-4);
                }
            }
        }
    }

    #[test]
    fn rank_one_matrix_has_single_eigenvalue() {
        let g = build_grid(Domain::interval(-4.0, 4.0), 60, Rule::GaussLegendre).unwrap();
        let prof = GaussianProfile { center: 0.5, width: 0.8, amplitude: 1.0 };
        let spec = KernelSpec::rank_one(prof);
        let m = kernel_matrix(&spec, &g).unwrap();
        let (vals, _) = hermitian_eigen(&m);
        let expected: f64 = g.integrate(|x| prof.value(x).norm_sqr());
        assert_abs_diff_eq!(vals[vals.len() - 1], expected, epsilon = 1e-12);
        assert!(vals[vals.len() - 2].abs() < 1e-12);
    }

    #[test]
    fn sine_matrix_is_nearly_a_projection() {
        let g = build_grid(Domain::interval(-20.0, 20.0), 200, Rule::GaussLegendre).unwrap();
        let m = kernel_matrix(&KernelSpec::sine(1.0).unwrap(), &g).unwrap();
        let (vals, _) = hermitian_eigen(&m);
        let top = vals[vals.len() - 1];
        assert!((0.99..=1.01).contains(&top), "top eigenvalue {top}");
        for i in 0..g.len() {
            assert_abs_diff_eq!(m[(i, i)].re, g.weights()[i] / PI, epsilon = 1e-15);
        }
    }

    #[test]
    fn perturbation_has_rank_one() {
        let g = build_grid(Domain::interval(-10.0, 10.0), 120, Rule::GaussLegendre).unwrap();
        let a = kernel_matrix(&one_pole(), &g).unwrap();
        let b = kernel_matrix(&KernelSpec::sine(1.0).unwrap(), &g).unwrap();
        let s = singular_values(&(a - b));
        assert!(s[1] < 1e-10 * s[0]);
    }

    #[test]
    fn descriptor_round_trip_and_rejection() {
        let spec = KernelDescriptor::from_json(r#"{"kind":"perturbed-sine","bandwidth":1.0,"poles":[[0,-1]]}"#).unwrap();
        assert!(matches!(spec, KernelSpec::PerturbedSine(_)));
        assert!(KernelDescriptor::from_json(r#"{"kind":"sine","bandwidth":1.0,"x":1}"#).is_err());
        assert!(KernelDescriptor::from_json(r#"{"kind":"sine","bandwidth":-1.0}"#).is_err());
        let d = KernelDescriptor::RankOne {
            profile: ProfileDescriptor::Gaussian { center: 0.0, width: 1.0, amplitude: 1.0 },
        };
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<KernelDescriptor>(&text).unwrap(), d);
    }

    proptest! {
        #[test]
        fn hermitian_symmetry(x in -30.0f64..30.0, y in -30.0f64..30.0, re in -3.0f64..3.0, im in 0.2f64..3.0) {
            let specs = [
                KernelSpec::sine(1.0).unwrap(),
                KernelSpec::perturbed_sine(1.0, vec![Complex64::new(re, -im), Complex64::new(-re, im + 0.1)]).unwrap(),
                KernelSpec::Airy,
            ];
            for spec in &specs {
                let kxy = eval_kernel(spec, x, y).unwrap();
                let kyx = eval_kernel(spec, y, x).unwrap();
                prop_assert!((kxy - kyx.conj()).norm() <= 1e-13 * kxy.norm().max(1e-3));
            }
        }

        #[test]
        fn near_diagonal_is_continuous(x in -10.0f64..10.0, d in 1e-12f64..1e-4) {
            for spec in [KernelSpec::Airy, KernelSpec::from_ab(SineAb { a: 2.0 })] {
                let k0 = eval_kernel(&spec, x, x).unwrap();
                let k1 = eval_kernel(&spec, x, x + d).unwrap();
                prop_assert!((k0 - k1).norm() < 2.0 * d + 1e-9);
            }
        }
    }
}
