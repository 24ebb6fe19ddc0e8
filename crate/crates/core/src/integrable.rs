//! Recovery of the integrable representation (A_p, B_p) from kernel data.
//!
//! With phi_x(t) = (K(t,x)K(p,p) - K(p,x)K(t,p)) / (t - p), the pair
//! A_p(x) = (x - p) K(x, p) and B_p(x) = K(x, p) - (x - p) conj(phi_x(p)) / K(p,p)
//! satisfies K(x,y) = (A(x) conj(B(y)) - conj(A(y)) B(x)) / ((x - y) K(p,p)).

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, Grid, GridFunction};
use crate::kernel::{eval_kernel, kernel_d1_or_fd, KernelSpec};
use crate::linalg::c;

#[derive(Clone, Copy, Debug)]
pub struct ExtractOptions {
    /// Relative anchor floor: |K(p,p)| must exceed this times max_i K(x_i, x_i).
    pub anchor_floor: f64,
    /// Finite-difference step as a multiple of the minimum grid spacing.
    pub fd_step_factor: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { anchor_floor: 1e-8, fd_step_factor: 1e-2 }
    }
}

#[derive(Clone, Debug)]
pub struct IntegrablePair {
    spec: KernelSpec,
    p: f64,
    kpp: f64,
    a: GridFunction,
    b: GridFunction,
    phi_p: GridFunction,
    h: f64,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct ResidualReport {
    pub max: f64,
    pub mean: f64,
    pub pairs: usize,
}

impl IntegrablePair {
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn kpp(&self) -> f64 {
        self.kpp
    }

    pub fn a(&self) -> &GridFunction {
        &self.a
    }

    pub fn b(&self) -> &GridFunction {
        &self.b
    }

    pub fn phi_p(&self) -> &GridFunction {
        &self.phi_p
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.a.grid()
    }

    /// phi_x(p) at an arbitrary point x.
    pub fn phi_at(&self, x: f64) -> Result<Complex64> {
        phi_at_anchor(&self.spec, self.p, self.kpp, x, self.h)
    }

    pub fn a_at(&self, x: f64) -> Result<Complex64> {
        Ok((x - self.p) * eval_kernel(&self.spec, x, self.p)?)
    }

    pub fn b_at(&self, x: f64) -> Result<Complex64> {
        let phi = self.phi_at(x)?;
        Ok(eval_kernel(&self.spec, x, self.p)? - (x - self.p) * phi.conj() / self.kpp)
    }

    /// (A(x) conj(B(y)) - conj(A(y)) B(x)) / ((x - y) K(p,p)) for x != y.
    pub fn reconstruct(&self, x: f64, y: f64) -> Result<Complex64> {
        if x == y {
            return Err(Error::Diagonal(x));
        }
        Ok(combine(self.a_at(x)?, self.b_at(x)?, self.a_at(y)?, self.b_at(y)?, x - y, self.kpp))
    }

    /// Max and mean |reconstruction - K| over the off-diagonal grid pairs.
    pub fn residual_report(&self) -> Result<ResidualReport> {
        let x = self.grid().nodes();
        let n = x.len();
        let (a, b) = (self.a.values(), self.b.values());
        let rows: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut worst: f64 = 0.0;
                let mut sum = 0.0;
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let r = combine(a[i], b[i], a[j], b[j], x[i] - x[j], self.kpp);
                    let d = (r - eval_kernel(&self.spec, x[i], x[j])?).norm();
                    worst = worst.max(d);
                    sum += d;
                }
                Ok((worst, sum))
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs = n * (n - 1);
        let max = rows.iter().map(|r| r.0).fold(0.0, f64::max);
        let total: f64 = rows.iter().map(|r| r.1).sum();
        Ok(ResidualReport { max, mean: if pairs > 0 { total / pairs as f64 } else { 0.0 }, pairs })
    }

    /// CSV with columns node, A_re, A_im, B_re, B_im.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["node", "A_re", "A_im", "B_re", "B_im"])?;
        for ((x, a), b) in self.grid().nodes().iter().zip(self.a.values()).zip(self.b.values()) {
            wtr.write_record([fmt_f64(*x), fmt_f64(a.re), fmt_f64(a.im), fmt_f64(b.re), fmt_f64(b.im)])?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

fn combine(ax: Complex64, bx: Complex64, ay: Complex64, by: Complex64, dxy: f64, kpp: f64) -> Complex64 {
    (ax * by.conj() - ay.conj() * bx) / (dxy * kpp)
}

fn phi_at_anchor(spec: &KernelSpec, p: f64, kpp: f64, x: f64, h: f64) -> Result<Complex64> {
    // K(p,p) d/dt K(t,x) - K(p,x) d/dt K(t,p), both at t = p
    let dx = kernel_d1_or_fd(spec, p, x, h)?;
    let dp = kernel_d1_or_fd(spec, p, p, h)?;
    Ok(kpp * dx - eval_kernel(spec, p, x)? * dp)
}

fn anchor_value(spec: &KernelSpec, grid: &Grid, p: f64, floor: f64) -> Result<f64> {
    let kpp = eval_kernel(spec, p, p)?.re;
    let mut diag_max: f64 = 0.0;
    for &x in grid.nodes() {
        diag_max = diag_max.max(eval_kernel(spec, x, x)?.re.abs());
    }
    let floor = floor * diag_max;
    if !(kpp.abs() > floor) {
        return Err(Error::DegenerateAnchor { p, kpp, floor });
    }
    Ok(kpp)
}

/// Extracts (A_p, B_p) on the grid nodes.
pub fn extract_ab(spec: &KernelSpec, grid: &Arc<Grid>, p: f64, opts: &ExtractOptions) -> Result<IntegrablePair> {
    if !spec.in_domain(p) {
        return Err(Error::Domain(format!("anchor {p} outside the kernel domain")));
    }
    let kpp = anchor_value(spec, grid, p, opts.anchor_floor)?;
    let h = opts.fd_step_factor * grid.min_spacing();
    let nodes = grid.nodes();
    let rows: Vec<(Complex64, Complex64, Complex64)> = nodes
        .par_iter()
        .map(|&x| {
            let k = eval_kernel(spec, x, p)?;
            let phi = phi_at_anchor(spec, p, kpp, x, h)?;
            let a = (x - p) * k;
            let b = k - (x - p) * phi.conj() / kpp;
            Ok((a, b, phi))
        })
        .collect::<Result<Vec<_>>>()?;
    let a = rows.iter().map(|r| r.0).collect();
    let b = rows.iter().map(|r| r.1).collect();
    let phi = rows.iter().map(|r| r.2).collect();
    Ok(IntegrablePair {
        spec: spec.clone(),
        p,
        kpp,
        a: GridFunction::new(Arc::clone(grid), a)?,
        b: GridFunction::new(Arc::clone(grid), b)?,
        phi_p: GridFunction::new(Arc::clone(grid), phi)?,
        h,
    })
}

/// phi_x(t) = (K(t,x) K(p,p) - K(p,x) K(t,p)) / (t - p), continuous at t = p.
pub fn phi_function(spec: &KernelSpec, p: f64, x: f64, t: f64, h: f64) -> Result<Complex64> {
    let kpp = eval_kernel(spec, p, p)?.re;
    if t == p {
        return phi_at_anchor(spec, p, kpp, x, h);
    }
    Ok((eval_kernel(spec, t, x)? * kpp - eval_kernel(spec, p, x)? * eval_kernel(spec, t, p)?) / (t - p))
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct SelfAdjointDefect {
    /// |<(t-p) phi_x, phi_y> - <phi_x, (t-p) phi_y>| with both sides expanded
    /// through the reproducing property into point values of phi.
    pub reproducing: f64,
    /// The same difference computed by quadrature on the grid.
    pub quadrature: f64,
}

/// Defect of the symmetry of multiplication by (t - p) on the functions phi_x, phi_y.
pub fn self_adjoint_defect(spec: &KernelSpec, grid: &Grid, p: f64, x: f64, y: f64) -> Result<SelfAdjointDefect> {
    let h = 1e-2 * grid.min_spacing();
    let kpp = eval_kernel(spec, p, p)?.re;
    let phi_y_at_x = phi_function(spec, p, y, x, h)?;
    let phi_y_at_p = phi_function(spec, p, y, p, h)?;
    let phi_x_at_y = phi_function(spec, p, x, y, h)?;
    let phi_x_at_p = phi_function(spec, p, x, p, h)?;
    let lhs = kpp * phi_y_at_x.conj() - eval_kernel(spec, p, x)? * phi_y_at_p.conj();
    let rhs = kpp * phi_x_at_y - eval_kernel(spec, p, y)?.conj() * phi_x_at_p;
    let mut quad = Complex64::new(0.0, 0.0);
    for (&t, &w) in grid.nodes().iter().zip(grid.weights()) {
        let fx = phi_function(spec, p, x, t, h)?;
        let fy = phi_function(spec, p, y, t, h)?;
        quad += ((t - p) * fx * fy.conj() - fx * ((t - p) * fy).conj()) * w;
    }
    Ok(SelfAdjointDefect { reproducing: (lhs - rhs).norm(), quadrature: quad.norm() })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ConvergenceReport {
    pub y_star: f64,
    /// Consecutive differences, entry n compares terms n and n + 1.
    pub sup_a: Vec<f64>,
    pub sup_b: Vec<f64>,
    pub x_a: Vec<f64>,
    pub x_b: Vec<f64>,
    pub x_combined: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StableSequence {
    pub a: Vec<GridFunction>,
    pub b: Vec<GridFunction>,
    pub kpp: Vec<f64>,
    pub report: ConvergenceReport,
}

pub const PROBE_COUNT: usize = 32;

/// Extracts (A_n, B_n) for a kernel sequence, with B_n normalized to vanish at a
/// common point y* where the limit of A_n does not vanish.
pub fn stable_extract_sequence(
    specs: &[KernelSpec],
    grid: &Arc<Grid>,
    p: f64,
    opts: &ExtractOptions,
) -> Result<StableSequence> {
    if specs.is_empty() {
        return Err(Error::Argument("empty kernel sequence".into()));
    }
    let pairs = specs.iter().map(|s| extract_ab(s, grid, p, opts)).collect::<Result<Vec<_>>>()?;
    let n = grid.len();
    let probes: Vec<usize> = (0..PROBE_COUNT.min(n))
        .map(|k| ((k as f64) * (n - 1) as f64 / (PROBE_COUNT.min(n) - 1).max(1) as f64).round() as usize)
        .collect();
    let tail = pairs.last().expect("non-empty").a().values();
    let scale = tail.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let &best = probes
        .iter()
        .max_by(|&&i, &&j| tail[i].norm().total_cmp(&tail[j].norm()))
        .expect("probes");
    if !(tail[best].norm() > 1e-12 * scale) || scale == 0.0 {
        return Err(Error::SequenceDegenerate);
    }
    for pair in &pairs {
        let v = pair.a().values()[best].norm();
        if !(v > 1e-12 * scale) {
            return Err(Error::SequenceDegenerate);
        }
    }
    let mut a_list = Vec::with_capacity(pairs.len());
    let mut b_list = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let a = pair.a().values();
        let b = pair.b().values();
        let ratio = b[best] / a[best];
        let bn: Vec<Complex64> = b.iter().zip(a).map(|(bi, ai)| bi - ratio * ai).collect();
        a_list.push(pair.a().clone());
        b_list.push(GridFunction::new(Arc::clone(grid), bn)?);
    }
    let w = grid.weights();
    let x = grid.nodes();
    let sup = |f: &GridFunction, g: &GridFunction| {
        f.values().iter().zip(g.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    };
    let xsq = |f: &GridFunction, g: &GridFunction| -> f64 {
        f.values()
            .iter()
            .zip(g.values())
            .enumerate()
            .map(|(i, (a, b))| (a - b).norm_sqr() * w[i] / (1.0 + x[i] * x[i]))
            .sum()
    };
    let mut report = ConvergenceReport {
        y_star: x[best],
        sup_a: vec![],
        sup_b: vec![],
        x_a: vec![],
        x_b: vec![],
        x_combined: vec![],
    };
    for k in 1..pairs.len() {
        let (da, db) = (xsq(&a_list[k], &a_list[k - 1]), xsq(&b_list[k], &b_list[k - 1]));
        report.sup_a.push(sup(&a_list[k], &a_list[k - 1]));
        report.sup_b.push(sup(&b_list[k], &b_list[k - 1]));
        report.x_a.push(da.sqrt());
        report.x_b.push(db.sqrt());
        report.x_combined.push((da + db).sqrt());
    }
    Ok(StableSequence { a: a_list, b: b_list, kpp: pairs.iter().map(|p| p.kpp()).collect(), report })
}

/// A_p for the sine kernel of bandwidth a at p = 0: sin(ax)/pi.
pub fn sine_a_closed_form(a: f64, x: f64) -> Complex64 {
    c((a * x).sin() / std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Domain, Rule};
    use crate::kernel::{GaussianProfile, SineAb};
    use std::f64::consts::PI;

    fn sine_grid() -> Arc<Grid> {
        build_grid(Domain::interval(-20.0, 20.0), 200, Rule::GaussLegendre).unwrap()
    }

    #[test]
    fn sine_pair_is_closed_form() {
        let g = sine_grid();
        let pair = extract_ab(&KernelSpec::sine(1.0).unwrap(), &g, 0.0, &ExtractOptions::default()).unwrap();
        for (x, a) in g.nodes().iter().zip(pair.a().values()) {
            assert!((a - sine_a_closed_form(1.0, *x)).norm() < 1e-12);
        }
        for (x, b) in g.nodes().iter().zip(pair.b().values()) {
            assert!((b - c(x.cos() / PI)).norm() < 1e-12, "B({x}) = {b}");
            assert!(b.im.abs() < 1e-12);
        }
        assert!(pair.residual_report().unwrap().max < 1e-9);
    }

    #[test]
    fn rank_one_has_vanishing_phi() {
        let g = build_grid(Domain::interval(-3.0, 3.0), 50, Rule::GaussLegendre).unwrap();
        let spec = KernelSpec::rank_one(GaussianProfile { center: 0.2, width: 0.7, amplitude: 1.3 });
        let pair = extract_ab(&spec, &g, 0.1, &ExtractOptions::default()).unwrap();
        for (i, phi) in pair.phi_p().values().iter().enumerate() {
            assert!(phi.norm() < 1e-13);
            let x = g.nodes()[i];
            assert!((pair.b().values()[i] - eval_kernel(&spec, x, 0.1).unwrap()).norm() < 1e-13);
        }
        assert!(pair.residual_report().unwrap().max < 1e-13);
    }

    #[test]
    fn anchor_values() {
        let g = sine_grid();
        let spec = KernelSpec::perturbed_sine(1.0, vec![Complex64::new(0.0, -1.0)]).unwrap();
        let pair = extract_ab(&spec, &g, 0.7, &ExtractOptions::default()).unwrap();
        assert_eq!(pair.a_at(0.7).unwrap(), c(0.0));
        assert!((pair.b_at(0.7).unwrap() - c(pair.kpp())).norm() < 1e-15);
        assert!(matches!(pair.reconstruct(1.0, 1.0), Err(Error::Diagonal(_))));
    }

    #[test]
    fn degenerate_anchor_is_rejected() {
        let g = build_grid(Domain::interval(-3.0, 3.0), 40, Rule::GaussLegendre).unwrap();
        let spec = KernelSpec::rank_one(GaussianProfile { center: 0.0, width: 0.1, amplitude: 1.0 });
        assert!(matches!(
            extract_ab(&spec, &g, 2.9, &ExtractOptions::default()),
            Err(Error::DegenerateAnchor { .. })
        ));
    }

    #[test]
    fn two_anchors_reconstruct_the_same_kernel() {
        let g = build_grid(Domain::interval(-8.0, 8.0), 80, Rule::GaussLegendre).unwrap();
        let spec = KernelSpec::perturbed_sine(1.0, vec![Complex64::new(0.5, -1.5)]).unwrap();
        let p1 = extract_ab(&spec, &g, 0.0, &ExtractOptions::default()).unwrap();
        let p2 = extract_ab(&spec, &g, 1.3, &ExtractOptions::default()).unwrap();
        let r = p1.residual_report().unwrap().max.max(p2.residual_report().unwrap().max);
        for (x, y) in [(0.3, -2.0), (4.0, 5.5), (-7.0, 1.0)] {
            let d = (p1.reconstruct(x, y).unwrap() - p2.reconstruct(x, y).unwrap()).norm();
            assert!(d <= 10.0 * r.max(1e-15), "{d} vs {r}");
        }
    }

    #[test]
    fn finite_difference_route_matches_closed_form() {
        let g = build_grid(Domain::interval(-10.0, 10.0), 100, Rule::GaussLegendre).unwrap();
        let closed = extract_ab(&KernelSpec::sine(1.0).unwrap(), &g, 0.0, &ExtractOptions::default()).unwrap();
        let fd = extract_ab(&KernelSpec::from_ab(SineAb { a: 1.0 }), &g, 0.0, &ExtractOptions::default()).unwrap();
        for (b1, b2) in closed.b().values().iter().zip(fd.b().values()) {
            assert!((b1 - b2).norm() < 1e-8);
        }
    }

    #[test]
    fn self_adjointness_holds_for_complex_kernel() {
        let g = build_grid(Domain::interval(-20.0, 20.0), 200, Rule::GaussLegendre).unwrap();
        let spec = KernelSpec::perturbed_sine(1.0, vec![Complex64::new(1.0, -1.0), Complex64::new(-2.0, 0.5)]).unwrap();
        for (x, y) in [(0.4, -3.0), (7.0, 2.5), (-11.0, 13.0)] {
            let d = self_adjoint_defect(&spec, &g, 0.3, x, y).unwrap();
            assert!(d.reproducing < 1e-12, "{d:?}");
            assert!(d.quadrature < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn constant_sequence_has_zero_differences() {
        let g = sine_grid();
        let specs = vec![KernelSpec::sine(1.0).unwrap(); 5];
        let seq = stable_extract_sequence(&specs, &g, 0.0, &ExtractOptions::default()).unwrap();
        assert!(seq.report.x_combined.iter().all(|&d| d == 0.0));
        assert!(seq.report.sup_b.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn rank_one_sequence_converges_like_one_over_n() {
        let g = build_grid(Domain::interval(-4.0, 4.0), 60, Rule::GaussLegendre).unwrap();
        let specs: Vec<KernelSpec> = (1..=8)
            .map(|n| {
                KernelSpec::rank_one(GaussianProfile { center: 0.3, width: 1.0, amplitude: 1.0 + 1.0 / n as f64 })
            })
            .collect();
        let seq = stable_extract_sequence(&specs, &g, 0.0, &ExtractOptions::default()).unwrap();
        let d = &seq.report.x_a;
        assert!(d.windows(2).all(|w| w[1] < w[0]));
        // amplitude^2 differences behave like 2/n^2
        for (k, v) in d.iter().enumerate() {
            let n = (k + 1) as f64;
            let ratio = v * n * (n + 1.0);
            assert!(ratio > 0.5 && ratio < 20.0, "n = {n}: {v}");
        }
    }

    #[test]
    fn degenerate_sequence_is_reported() {
        let g = build_grid(Domain::interval(-3.0, 3.0), 40, Rule::GaussLegendre).unwrap();
        let specs = vec![
            KernelSpec::rank_one(GaussianProfile { center: 0.0, width: 1.0, amplitude: 1.0 }),
            KernelSpec::rank_one(GaussianProfile { center: 0.0, width: 1.0, amplitude: 0.0 }),
        ];
        assert!(stable_extract_sequence(&specs, &g, 0.0, &ExtractOptions::default()).is_err());
    }
}
