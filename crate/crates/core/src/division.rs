//! Division operators on finite kernel-column models of H: resolvents,
//! analytic continuation, pole sets and closure diagnostics.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debranges::HalfPlane;
use crate::error::{Error, Result};
use crate::grid::{Domain, Grid};
use crate::kernel::{eval_kernel, kernel_columns, kernel_d1_or_fd, KernelSpec};
use crate::linalg::{
    c, frobenius, general_eigen, hermitian_defect, numerical_rank, singular_values, solve_with_condition, CMat, CVec,
    ZERO,
};

#[derive(Clone, Copy, Debug)]
pub struct SubspaceOptions {
    /// Gram eigenvalues below this fraction of the largest are discarded.
    pub gram_rank_tol: f64,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        SubspaceOptions { gram_rank_tol: 1e-16 }
    }
}

/// Orthonormal model of H spanned by kernel columns K(., a_j) on a grid.
#[derive(Clone, Debug)]
pub struct Subspace {
    spec: KernelSpec,
    grid: Arc<Grid>,
    anchors: Vec<f64>,
    basis: CMat,
    gram: CMat,
    /// onb = basis * coef
    coef: CMat,
    onb: CMat,
    gram_eigenvalues: Vec<f64>,
}

pub fn build_subspace(
    spec: &KernelSpec,
    grid: &Arc<Grid>,
    anchors: &[f64],
    opts: &SubspaceOptions,
) -> Result<Subspace> {
    if anchors.is_empty() {
        return Err(Error::EmptySpace);
    }
    let mut sorted = anchors.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|p| p[0] == p[1]) {
        return Err(Error::Argument("duplicate anchors".into()));
    }
    for &a in anchors {
        if !grid.domain().contains(a) || !spec.in_domain(a) {
            return Err(Error::Domain(format!("anchor {a} outside the domain")));
        }
    }
    let basis = kernel_columns(spec, grid.nodes(), anchors)?;
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut scaled = basis.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= c(sw[i]);
    }
    let gram = scaled.adjoint() * &scaled;
    let svd = scaled.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    let cut = opts.gram_rank_tol.sqrt() * smax;
    let keep: Vec<usize> = order.iter().copied().filter(|&i| svd.singular_values[i] > cut && smax > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::EmptySpace);
    }
    let m = anchors.len();
    let mut coef = CMat::zeros(m, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        let s = svd.singular_values[i];
        for j in 0..m {
            coef[(j, k)] = v_t[(i, j)].conj() / s;
        }
    }
    let onb = &basis * &coef;
    // one Cholesky pass removes the kappa * eps loss of orthogonality from dividing by small sigma
    let mut sonb = onb.clone();
    for (i, mut row) in sonb.row_iter_mut().enumerate() {
        row *= c(sw[i]);
    }
    let l = (sonb.adjoint() * &sonb)
        .cholesky()
        .ok_or_else(|| Error::Numeric("orthonormal basis lost rank".into()))?
        .l();
    let r_inv = l.adjoint().try_inverse().ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let coef = coef * &r_inv;
    let onb = onb * r_inv;
    let gram_eigenvalues = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    Ok(Subspace {
        spec: spec.clone(),
        grid: Arc::clone(grid),
        anchors: anchors.to_vec(),
        basis,
        gram,
        coef,
        onb,
        gram_eigenvalues,
    })
}

/// Subspace anchored at every grid node.
pub fn build_full_subspace(spec: &KernelSpec, grid: &Arc<Grid>, opts: &SubspaceOptions) -> Result<Subspace> {
    build_subspace(spec, grid, grid.nodes(), opts)
}

fn near(x: f64, c0: f64) -> bool {
    (x - c0).abs() <= 1e-9 * c0.abs().max(1.0)
}

impl Subspace {
    pub fn dim(&self) -> usize {
        self.onb.ncols()
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn basis(&self) -> &CMat {
        &self.basis
    }

    pub fn gram(&self) -> &CMat {
        &self.gram
    }

    pub fn onb(&self) -> &CMat {
        &self.onb
    }

    /// Gram eigenvalues, descending, including the discarded ones.
    pub fn gram_eigenvalues(&self) -> &[f64] {
        &self.gram_eigenvalues
    }

    /// Max entry of |onb^H W onb - I|.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.weighted_adjoint(&self.onb);
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { c(1.0) } else { ZERO };
                worst = worst.max((g[(i, j)] - target).norm());
            }
        }
        worst
    }

    /// onb^H W m for a matrix of grid columns.
    fn weighted_adjoint(&self, m: &CMat) -> CMat {
        let w = self.grid.weights();
        let mut wm = m.clone();
        for (i, mut row) in wm.row_iter_mut().enumerate() {
            row *= c(w[i]);
        }
        self.onb.adjoint() * wm
    }

    /// Row (e_1(z), ..., e_d(z)) of the orthonormal functions extended off the grid
    /// through their kernel-column representation.
    pub fn eval_onb(&self, z: f64) -> Result<CVec> {
        let k: Vec<Complex64> = self.anchors.iter().map(|&a| eval_kernel(&self.spec, z, a)).collect::<Result<_>>()?;
        Ok((CMat::from_row_slice(1, k.len(), &k) * &self.coef).transpose().column(0).into_owned())
    }

    /// Derivative of the orthonormal functions at z.
    pub fn eval_onb_d1(&self, z: f64) -> Result<CVec> {
        let h = 1e-2 * self.grid.min_spacing();
        let k: Vec<Complex64> =
            self.anchors.iter().map(|&a| kernel_d1_or_fd(&self.spec, z, a, h)).collect::<Result<_>>()?;
        Ok((CMat::from_row_slice(1, k.len(), &k) * &self.coef).transpose().column(0).into_owned())
    }

    /// Value at z of the element with the given coefficients.
    pub fn evaluate(&self, coeffs: &CVec, z: f64) -> Result<Complex64> {
        Ok(self.eval_onb(z)?.dot(coeffs))
    }

    /// Grid values of the element with the given coefficients.
    pub fn values(&self, coeffs: &CVec) -> CVec {
        &self.onb * coeffs
    }

    /// Coefficients of the orthogonal projection of grid values onto the model.
    pub fn project(&self, values: &CVec) -> CVec {
        let w = self.grid.weights();
        let wv = CVec::from_iterator(values.len(), values.iter().zip(w).map(|(v, &w)| v * w));
        self.onb.adjoint() * wv
    }

    /// Coefficients of K(., q) projected onto the model.
    pub fn kernel_column_coeffs(&self, q: f64) -> Result<CVec> {
        let col: Vec<Complex64> =
            self.grid.nodes().iter().map(|&x| eval_kernel(&self.spec, x, q)).collect::<Result<_>>()?;
        Ok(self.project(&CVec::from_vec(col)))
    }

    pub fn weighted_norm(&self, values: &CVec) -> f64 {
        values.iter().zip(self.grid.weights()).map(|(v, w)| v.norm_sqr() * w).sum::<f64>().sqrt()
    }

    /// ||(I - P) g|| / ||g|| for grid values g.
    pub fn projection_residual(&self, values: &CVec) -> f64 {
        let n = self.weighted_norm(values);
        if n == 0.0 {
            return 0.0;
        }
        let r = values - self.values(&self.project(values));
        self.weighted_norm(&r) / n
    }

    /// Reproducing kernel of the model itself, sum_k e_k(x) conj(e_k(y)).
    pub fn model_kernel(&self, x: f64, y: f64) -> Result<Complex64> {
        let ex = self.eval_onb(x)?;
        let ey = self.eval_onb(y)?;
        Ok(ex.iter().zip(ey.iter()).map(|(a, b)| a * b.conj()).sum())
    }

    /// Largest |model kernel - K| over pairs of the given points.
    pub fn reproducing_defect(&self, points: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &x in points {
            for &y in points {
                worst = worst.max((self.model_kernel(x, y)? - eval_kernel(&self.spec, x, y)?).norm());
            }
        }
        Ok(worst)
    }

    /// Subtracts a multiple of the projected kernel column at k so the element
    /// vanishes at k.
    pub fn vanishing_at(&self, k: f64, coeffs: &CVec) -> Result<CVec> {
        let e = self.eval_onb(k)?;
        let ck = self.kernel_column_coeffs(k)?;
        let kk = e.dot(&ck);
        if !(kk.norm() > 0.0) {
            return Err(Error::DegenerateAnchor { p: k, kpp: kk.norm(), floor: 0.0 });
        }
        let fk = e.dot(coeffs);
        Ok(coeffs - ck * (fk / kk))
    }

    fn check_center(&self, w: f64) -> Result<()> {
        if !self.grid.domain().contains(w) || !self.spec.in_domain(w) {
            return Err(Error::Domain(format!("center {w} outside the domain")));
        }
        Ok(())
    }

    /// (f - f(c))/(x - c) column-wise for grid values `f` with values `fc` and
    /// derivatives `dfc` at c; nodes at c take the derivative.
    fn divide(&self, f: &CMat, fc: &[Complex64], dfc: &[Complex64], center: f64) -> CMat {
        let x = self.grid.nodes();
        CMat::from_fn(f.nrows(), f.ncols(), |i, k| {
            if near(x[i], center) {
                dfc[k]
            } else {
                (f[(i, k)] - fc[k]) / (x[i] - center)
            }
        })
    }

    /// Max relative projection residual of the divided spanning columns.
    fn spanning_residual(&self, divided: &CMat) -> f64 {
        let w = self.grid.weights();
        let coeffs = self.weighted_adjoint(divided);
        let back = &self.onb * coeffs;
        (0..divided.ncols())
            .map(|j| {
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..divided.nrows() {
                    num += (divided[(i, j)] - back[(i, j)]).norm_sqr() * w[i];
                    den += divided[(i, j)].norm_sqr() * w[i];
                }
                if den > 0.0 {
                    (num / den).sqrt()
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivisionKind {
    Strong,
    Weak,
}

/// Which kernel the weak operator subtracts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeakKernel {
    /// The true K_p with rho = 1/K(p,p); values at p read through the kernel extension.
    Reproducing,
    /// The model's own reproducing kernel at p, which makes f - rho f(p) K_p
    /// the orthogonal projection onto {f(p) = 0} inside the model.
    Model,
}

#[derive(Clone, Copy, Debug)]
pub struct DivisionOptions {
    /// Projection residual above which the division property counts as violated.
    pub tolerance: f64,
    /// Return an error when the residual exceeds the tolerance.
    pub enforce: bool,
    /// Relative anchor floor for the weak operator.
    pub anchor_floor: f64,
}

impl Default for DivisionOptions {
    fn default() -> Self {
        DivisionOptions { tolerance: 1e-5, enforce: true, anchor_floor: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct DivisionOperatorMatrix {
    pub kind: DivisionKind,
    pub center: f64,
    pub matrix: CMat,
    /// 1/K(p,p) for the weak kind.
    pub rho: Option<f64>,
    /// 1 / (model kernel at (p,p)) for the weak kind.
    pub rho_model: Option<f64>,
    pub weak_kernel: Option<WeakKernel>,
    /// Max relative projection residual of divided spanning columns.
    pub residual: f64,
    /// Orthonormal functions evaluated at the center.
    pub eval_row: CVec,
}

impl DivisionOperatorMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        Ok(general_eigen(&self.matrix)?.into_iter().map(|p| p.value).collect())
    }

    /// rho used by the ratio continuation.
    fn active_rho(&self) -> f64 {
        match self.weak_kernel {
            Some(WeakKernel::Model) => self.rho_model.unwrap_or(0.0),
            _ => self.rho.unwrap_or(0.0),
        }
    }
}

pub fn strong_division_operator(sub: &Subspace, w: f64, opts: &DivisionOptions) -> Result<DivisionOperatorMatrix> {
    sub.check_center(w)?;
    let e = sub.eval_onb(w)?;
    let de = sub.eval_onb_d1(w)?;
    let img = sub.divide(&sub.onb, e.as_slice(), de.as_slice(), w);
    let matrix = sub.weighted_adjoint(&img);
    let h = 1e-2 * sub.grid.min_spacing();
    let kw: Vec<Complex64> = sub.anchors.iter().map(|&a| eval_kernel(&sub.spec, w, a)).collect::<Result<_>>()?;
    let dkw: Vec<Complex64> = sub.anchors.iter().map(|&a| kernel_d1_or_fd(&sub.spec, w, a, h)).collect::<Result<_>>()?;
    let divided = sub.divide(&sub.basis, &kw, &dkw, w);
    let residual = sub.spanning_residual(&divided);
    if opts.enforce && !(residual <= opts.tolerance) {
        return Err(Error::StrongDivisionViolated { center: w, residual, threshold: opts.tolerance });
    }
    Ok(DivisionOperatorMatrix {
        kind: DivisionKind::Strong,
        center: w,
        matrix,
        rho: None,
        rho_model: None,
        weak_kernel: None,
        residual,
        eval_row: e,
    })
}

pub fn weak_division_operator(
    sub: &Subspace,
    p: f64,
    which: WeakKernel,
    opts: &DivisionOptions,
) -> Result<DivisionOperatorMatrix> {
    sub.check_center(p)?;
    let kpp = eval_kernel(&sub.spec, p, p)?.re;
    let mut diag_max: f64 = 0.0;
    for &x in sub.grid.nodes() {
        diag_max = diag_max.max(eval_kernel(&sub.spec, x, x)?.re.abs());
    }
    let floor = opts.anchor_floor * diag_max;
    if !(kpp.abs() > floor) {
        return Err(Error::DegenerateAnchor { p, kpp, floor });
    }
    let rho = 1.0 / kpp;
    let e = sub.eval_onb(p)?;
    let de = sub.eval_onb_d1(p)?;
    let norm2: f64 = e.iter().map(|z| z.norm_sqr()).sum();
    let rho_model = 1.0 / norm2;
    let h = 1e-2 * sub.grid.min_spacing();
    let nodes = sub.grid.nodes();
    let d = sub.dim();
    let img = match which {
        WeakKernel::Reproducing => {
            // f - rho f(p) K_p for each orthonormal f, then divide; value at p is 0
            let kp: Vec<Complex64> = nodes.iter().map(|&x| eval_kernel(&sub.spec, x, p)).collect::<Result<_>>()?;
            let dkp = kernel_d1_or_fd(&sub.spec, p, p, h)?;
            let g = CMat::from_fn(nodes.len(), d, |i, k| sub.onb[(i, k)] - rho * e[k] * kp[i]);
            let dg: Vec<Complex64> = (0..d).map(|k| de[k] - rho * e[k] * dkp).collect();
            sub.divide(&g, &vec![ZERO; d], &dg, p)
        }
        WeakKernel::Model => {
            let q = model_projection(&e, rho_model);
            let g = &sub.onb * &q;
            let dg = (de.transpose() * &q).transpose();
            sub.divide(&g, &vec![ZERO; d], dg.as_slice(), p)
        }
    };
    let matrix = sub.weighted_adjoint(&img);
    // residual on the spanning columns with the true kernel
    let kp: Vec<Complex64> = nodes.iter().map(|&x| eval_kernel(&sub.spec, x, p)).collect::<Result<_>>()?;
    let dkp = kernel_d1_or_fd(&sub.spec, p, p, h)?;
    let kpa: Vec<Complex64> = sub.anchors.iter().map(|&a| eval_kernel(&sub.spec, p, a)).collect::<Result<_>>()?;
    let dka: Vec<Complex64> = sub.anchors.iter().map(|&a| kernel_d1_or_fd(&sub.spec, p, a, h)).collect::<Result<_>>()?;
    let g = CMat::from_fn(nodes.len(), sub.anchors.len(), |i, j| sub.basis[(i, j)] - rho * kpa[j] * kp[i]);
    let dg: Vec<Complex64> = (0..sub.anchors.len()).map(|j| dka[j] - rho * kpa[j] * dkp).collect();
    let divided = sub.divide(&g, &vec![ZERO; sub.anchors.len()], &dg, p);
    let residual = sub.spanning_residual(&divided);
    if opts.enforce && !(residual <= opts.tolerance) {
        return Err(Error::Numeric(format!("weak division residual {residual:e} above {:e}", opts.tolerance)));
    }
    Ok(DivisionOperatorMatrix {
        kind: DivisionKind::Weak,
        center: p,
        matrix,
        rho: Some(rho),
        rho_model: Some(rho_model),
        weak_kernel: Some(which),
        residual,
        eval_row: e,
    })
}

/// I - rho conj(e) e^T: orthogonal projection onto {f : f(p) = 0} in coefficients.
fn model_projection(e: &CVec, rho: f64) -> CMat {
    let d = e.len();
    CMat::from_fn(d, d, |i, j| {
        let id = if i == j { c(1.0) } else { ZERO };
        id - e[i].conj() * e[j] * rho
    })
}

#[derive(Clone, Debug)]
pub struct ResolventSolution {
    pub solution: CVec,
    pub condition: f64,
}

pub const NEAR_SPECTRUM_CONDITION: f64 = 1e12;

/// Solves (D - lambda) f = g.
pub fn resolvent_apply(op: &DivisionOperatorMatrix, lambda: Complex64, g: &CVec) -> Result<ResolventSolution> {
    let n = op.dim();
    if g.len() != n {
        return Err(Error::Argument(format!("vector of length {} for a {n}-dimensional operator", g.len())));
    }
    let a = &op.matrix - CMat::identity(n, n) * lambda;
    let (solution, condition) = solve_with_condition(&a, g)?;
    if !(condition <= NEAR_SPECTRUM_CONDITION) {
        let nearest = op
            .eigenvalues()?
            .into_iter()
            .min_by(|x, y| (x - lambda).norm().total_cmp(&(y - lambda).norm()))
            .unwrap_or(lambda);
        return Err(Error::NearSpectrum { cond: condition, nearest });
    }
    Ok(ResolventSolution { solution, condition })
}

/// Frobenius norm of (D_w - lambda)^{-1} + lambda^{-1} I + lambda^{-2} D_{w + 1/lambda}.
pub fn resolvent_identity_error(sub: &Subspace, w: f64, lambda: f64) -> Result<f64> {
    let opts = DivisionOptions { enforce: false, ..Default::default() };
    let dw = strong_division_operator(sub, w, &opts)?;
    let ds = strong_division_operator(sub, w + 1.0 / lambda, &opts)?;
    let n = dw.dim();
    let a = &dw.matrix - CMat::identity(n, n) * c(lambda);
    let inv = a.try_inverse().ok_or_else(|| Error::Numeric("singular resolvent".into()))?;
    let r = inv + CMat::identity(n, n) * c(1.0 / lambda) + &ds.matrix * c(1.0 / (lambda * lambda));
    Ok(frobenius(&r))
}

/// Continuation of f from the strong operator at w:
/// f(w + 1/lambda) = -lambda <(D_w - lambda)^{-1} f, K_w>.
pub fn continue_with_strong(op: &DivisionOperatorMatrix, f: &CVec, z: Complex64) -> Result<Complex64> {
    if op.kind != DivisionKind::Strong {
        return Err(Error::Argument("strong continuation needs the strong operator".into()));
    }
    let dz = z - c(op.center);
    if dz.norm() == 0.0 {
        return Ok(op.eval_row.dot(f));
    }
    let lambda = 1.0 / dz;
    let h = resolvent_apply(op, lambda, f)?.solution;
    Ok(-lambda * op.eval_row.dot(&h))
}

pub fn analytic_continue_strong(sub: &Subspace, f: &CVec, w: f64, z: Complex64) -> Result<Complex64> {
    let op = strong_division_operator(sub, w, &DivisionOptions::default())?;
    continue_with_strong(&op, f, z)
}

/// Continuation of f / K_p from the weak operator at p:
/// (f/K_p)(p + 1/lambda) = -lambda rho <(D_p - lambda)^{-1} f, K_p>.
pub fn continue_ratio_with_weak(op: &DivisionOperatorMatrix, f: &CVec, z: Complex64) -> Result<Complex64> {
    if op.kind != DivisionKind::Weak {
        return Err(Error::Argument("ratio continuation needs the weak operator".into()));
    }
    let dz = z - c(op.center);
    if dz.norm() == 0.0 {
        return Err(Error::Argument("z coincides with p; the ratio there is f(p)/K(p,p)".into()));
    }
    let lambda = 1.0 / dz;
    let h = resolvent_apply(op, lambda, f)?.solution;
    Ok(-lambda * op.active_rho() * op.eval_row.dot(&h))
}

pub fn analytic_continue_ratio(sub: &Subspace, f: &CVec, p: f64, z: Complex64) -> Result<Complex64> {
    let op = weak_division_operator(sub, p, WeakKernel::Reproducing, &DivisionOptions::default())?;
    continue_ratio_with_weak(&op, f, z)
}

/// ||(I - P)[f/(x - k)]|| / ||f/(x - k)|| for an element f vanishing at k.
pub fn division_closure_residual(sub: &Subspace, k: f64, f: &CVec) -> Result<f64> {
    if f.len() != sub.dim() {
        return Err(Error::Argument("coefficient vector has the wrong length".into()));
    }
    let norm = f.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let fk = sub.evaluate(f, k)?;
    if !(fk.norm() < 1e-8 * norm) {
        return Err(Error::Precondition(format!("f({k}) = {fk} does not vanish")));
    }
    let vals = sub.values(f);
    let dfk = sub.eval_onb_d1(k)?.dot(f);
    let col = CMat::from_column_slice(vals.len(), 1, vals.as_slice());
    let g = sub.divide(&col, &[fk], &[dfk], k);
    Ok(sub.projection_residual(&g.column(0).into_owned()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlaschkeSum {
    pub sum: f64,
    pub diverging: bool,
    pub terms: usize,
}

pub const DEFAULT_BLASCHKE_CAP: f64 = 5.0;

/// Partial sums of -+ Im z / (1 + |z|^2); diverging when a partial sum exceeds `cap`.
pub fn blaschke_condition_sum(points: &[Complex64], half: HalfPlane, cap: f64) -> Result<BlaschkeSum> {
    let sign = match half {
        HalfPlane::Upper => 1.0,
        HalfPlane::Lower => -1.0,
    };
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut diverging = false;
    for &z in points {
        if !(z.re.is_finite() && z.im.is_finite()) || z.im == 0.0 {
            return Err(Error::Argument(format!("{z} is not off the real line")));
        }
        if !half.contains(z) {
            return Err(Error::Argument(format!("{z} is not in the {half:?} half-plane")));
        }
        // compensated summation
        let t = sign * z.im / (1.0 + z.norm_sqr());
        let y = t - comp;
        let s = sum + y;
        comp = (s - sum) - y;
        sum = s;
        if sum > cap {
            diverging = true;
        }
    }
    Ok(BlaschkeSum { sum, diverging, terms: points.len() })
}

#[derive(Clone, Copy, Debug)]
pub struct PoleOptions {
    pub cosine_threshold: f64,
    pub persistence_tol: f64,
    /// Second center offset as a fraction of the window half-length.
    pub second_center_fraction: f64,
    /// Collar kept away from the window ends, as a fraction of the half-length.
    pub collar_fraction: f64,
    /// Fattening of the essential-spectrum window in the localization diagnostic.
    pub eta: f64,
    pub backward_error_tol: f64,
}

impl Default for PoleOptions {
    fn default() -> Self {
        PoleOptions {
            cosine_threshold: 0.99,
            persistence_tol: 1e-2,
            second_center_fraction: 0.1,
            collar_fraction: 0.1,
            eta: 0.05,
            backward_error_tol: 1e-8,
        }
    }
}

/// Closed segment of the real line; `None` ends are infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Segment {
    fn distance(&self, z: Complex64) -> f64 {
        let lo = self.lo.unwrap_or(f64::NEG_INFINITY);
        let hi = self.hi.unwrap_or(f64::INFINITY);
        let dx = if z.re < lo {
            lo - z.re
        } else if z.re > hi {
            z.re - hi
        } else {
            0.0
        };
        dx.hypot(z.im)
    }
}

/// clos((supp mu - w)^{-1}) for supp mu = [a, b].
pub fn essential_window(domain: Domain, w: f64) -> Vec<Segment> {
    let (a, b) = domain.bounds();
    let inv = |t: f64| if t == 0.0 { None } else { Some(1.0 / t) };
    if w > a && w < b {
        vec![Segment { lo: None, hi: inv(a - w) }, Segment { lo: inv(b - w), hi: None }]
    } else {
        vec![Segment { lo: inv(b - w), hi: inv(a - w) }]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub center: f64,
    pub kind: DivisionKind,
    pub dim: usize,
    /// [re, im]
    pub eigenvalues: Vec<[f64; 2]>,
    pub pole_candidates: Vec<[f64; 2]>,
    #[serde(rename = "N")]
    pub n_set: Vec<[f64; 2]>,
    pub ess_window: Vec<Segment>,
    pub residuals: Vec<f64>,
    pub cosine: Vec<f64>,
    pub persistence_shift: Vec<f64>,
    pub second_center: f64,
    /// Fraction of non-pole eigenvalues farther than eta from the window.
    pub outside_fraction: f64,
    /// Indices of eigenvalues that are numerically repeated.
    pub repeated: Vec<usize>,
    pub division_residual: f64,
}

impl SpectralReport {
    pub fn poles(&self) -> Vec<Complex64> {
        self.n_set.iter().map(|p| Complex64::new(p[0], p[1])).collect()
    }
}

struct Candidates {
    eigen: Vec<crate::linalg::EigenPair>,
    z: Vec<Option<Complex64>>,
}

fn candidates(op: &DivisionOperatorMatrix) -> Result<Candidates> {
    let eigen = general_eigen(&op.matrix)?;
    let scale = frobenius(&op.matrix).max(1e-300);
    let z = eigen
        .iter()
        .map(|p| if p.value.norm() > 1e-8 * scale.max(1.0) { Some(c(op.center) + 1.0 / p.value) } else { None })
        .collect();
    Ok(Candidates { eigen, z })
}

fn build_operator(sub: &Subspace, w: f64, kind: DivisionKind) -> Result<DivisionOperatorMatrix> {
    let opts = DivisionOptions { enforce: false, ..Default::default() };
    match kind {
        DivisionKind::Strong => strong_division_operator(sub, w, &opts),
        DivisionKind::Weak => weak_division_operator(sub, w, WeakKernel::Reproducing, &opts),
    }
}

/// Eigen-analysis of the division operator at w with pole filtering.
pub fn pole_set(sub: &Subspace, w: f64, kind: DivisionKind, opts: &PoleOptions) -> Result<SpectralReport> {
    if sub.dim() == 0 {
        return Err(Error::EmptySpace);
    }
    let op = build_operator(sub, w, kind)?;
    let (a, b) = sub.grid.domain().bounds();
    let half = 0.5 * (b - a);
    let mut w2 = w - opts.second_center_fraction * half;
    if w2 <= a {
        w2 = w + opts.second_center_fraction * half;
    }
    let op2 = build_operator(sub, w2, kind)?;
    let first = candidates(&op)?;
    let second = candidates(&op2)?;
    let collar = opts.collar_fraction * half;
    let x = sub.grid.nodes();
    let wts = sub.grid.weights();
    let mut n_set = Vec::new();
    let mut cands = Vec::new();
    let mut cosine = Vec::new();
    let mut shift = Vec::new();
    for (pair, z) in first.eigen.iter().zip(&first.z) {
        let Some(z) = *z else {
            cosine.push(0.0);
            shift.push(f64::INFINITY);
            continue;
        };
        cands.push([z.re, z.im]);
        let g = sub.values(&pair.vector);
        let (mut ip, mut ng, mut nr) = (ZERO, 0.0, 0.0);
        for i in 0..x.len() {
            let r = 1.0 / (c(x[i]) - z);
            ip += g[i] * r.conj() * wts[i];
            ng += g[i].norm_sqr() * wts[i];
            nr += r.norm_sqr() * wts[i];
        }
        let cs = if ng > 0.0 && nr > 0.0 && nr.is_finite() { ip.norm() / (ng * nr).sqrt() } else { 0.0 };
        let moved = second.z.iter().flatten().map(|z2| (z2 - z).norm()).fold(f64::INFINITY, f64::min);
        cosine.push(cs);
        shift.push(moved);
        let inside = z.re >= a + collar && z.re <= b - collar;
        let off_axis = kind == DivisionKind::Weak || z.im.abs() > 0.0;
        if cs > opts.cosine_threshold && moved < opts.persistence_tol && inside && off_axis {
            n_set.push([z.re, z.im]);
        }
    }
    let window = essential_window(sub.grid.domain(), w);
    let pole_like: Vec<bool> = first
        .z
        .iter()
        .map(|z| z.map(|z| n_set.iter().any(|p| p[0] == z.re && p[1] == z.im)).unwrap_or(false))
        .collect();
    let others: Vec<Complex64> =
        first.eigen.iter().zip(&pole_like).filter(|(_, &p)| !p).map(|(e, _)| e.value).collect();
    let outside = others
        .iter()
        .filter(|&&l| window.iter().map(|s| s.distance(l)).fold(f64::INFINITY, f64::min) > opts.eta)
        .count();
    let scale = frobenius(&op.matrix).max(1e-300);
    let mut repeated = Vec::new();
    for i in 0..first.eigen.len() {
        for j in 0..first.eigen.len() {
            if i != j && (first.eigen[i].value - first.eigen[j].value).norm() < 1e-8 * scale {
                repeated.push(i);
                break;
            }
        }
    }
    for p in &first.eigen {
        if !(p.backward_error <= opts.backward_error_tol) {
            return Err(Error::Numeric(format!("eigenpair backward error {:e}", p.backward_error)));
        }
    }
    Ok(SpectralReport {
        center: w,
        kind,
        dim: op.dim(),
        eigenvalues: first.eigen.iter().map(|p| [p.value.re, p.value.im]).collect(),
        pole_candidates: cands,
        n_set,
        ess_window: window,
        residuals: first.eigen.iter().map(|p| p.backward_error).collect(),
        cosine,
        persistence_shift: shift.into_iter().map(|s| if s.is_finite() { s } else { -1.0 }).collect(),
        second_center: w2,
        outside_fraction: if others.is_empty() { 0.0 } else { outside as f64 / others.len() as f64 },
        repeated,
        division_residual: op.residual,
    })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CompressionReport {
    pub p: f64,
    pub w: f64,
    /// Largest distance between matched nonzero eigenvalues of T_p and D_p.
    pub eigenvalue_mismatch: f64,
    pub nonzero_count: usize,
    pub tp_hermitian_defect: f64,
    pub rank_dp_minus_tp: usize,
    pub rank_dw_minus_a: usize,
}

/// Compares the weak operator D_p with its compression T_p = Q mult(1/(x-p)) Q,
/// and the strong operator D_w with A = P D_w P.
pub fn compression_analysis(sub: &Subspace, p: f64, w: f64) -> Result<CompressionReport> {
    let opts = DivisionOptions { enforce: false, ..Default::default() };
    let dp = weak_division_operator(sub, p, WeakKernel::Model, &opts)?;
    let q = model_projection(&dp.eval_row, dp.rho_model.unwrap_or(0.0));
    let tp = &q * &dp.matrix;
    let tp_hermitian_defect = hermitian_defect(&tp);
    let scale = frobenius(&dp.matrix).max(1e-300);
    let cut = 1e-9 * scale;
    let nonzero = |m: &CMat| -> Result<Vec<Complex64>> {
        Ok(general_eigen(m)?.into_iter().map(|e| e.value).filter(|v| v.norm() > cut).collect())
    };
    let et = nonzero(&tp)?;
    let ed = nonzero(&dp.matrix)?;
    let mut mismatch: f64 = if et.len() == ed.len() { 0.0 } else { f64::INFINITY };
    let mut used = vec![false; ed.len()];
    for l in &et {
        let best = (0..ed.len())
            .filter(|&j| !used[j])
            .min_by(|&i, &j| (ed[i] - l).norm().total_cmp(&(ed[j] - l).norm()));
        match best {
            Some(j) => {
                used[j] = true;
                mismatch = mismatch.max((ed[j] - l).norm());
            }
            None => mismatch = f64::INFINITY,
        }
    }
    let rank_dp_minus_tp = numerical_rank(&(&dp.matrix - &tp), 1e-9, scale);
    let dw = strong_division_operator(sub, w, &opts)?;
    let norm2: f64 = dw.eval_row.iter().map(|z| z.norm_sqr()).sum();
    let pw = model_projection(&dw.eval_row, 1.0 / norm2);
    let a = &pw * &dw.matrix * &pw;
    let rank_dw_minus_a = numerical_rank(&(&dw.matrix - a), 1e-9, frobenius(&dw.matrix).max(1e-300));
    Ok(CompressionReport {
        p,
        w,
        eigenvalue_mismatch: mismatch,
        nonzero_count: et.len(),
        tp_hermitian_defect,
        rank_dp_minus_tp,
        rank_dw_minus_a,
    })
}

/// Singular values of a division-operator matrix, for rank diagnostics.
pub fn operator_singular_values(op: &DivisionOperatorMatrix) -> Vec<f64> {
    singular_values(&op.matrix)
}

/// Divided difference f -> (f(x) - f(x_c))/(x - x_c) on all functions on the grid
/// nodes, uncompressed. The row of the center itself is left zero.
pub fn grid_divided_difference(grid: &Grid, center: usize) -> CMat {
    let x = grid.nodes();
    let n = x.len();
    let w = x[center];
    CMat::from_fn(n, n, |i, j| {
        if i == center {
            ZERO
        } else if j == i {
            c(1.0 / (x[i] - w))
        } else if j == center {
            c(-1.0 / (x[i] - w))
        } else {
            ZERO
        }
    })
}

/// Fraction of eigenvalues among `values` farther than eta from the window.
pub fn outside_window_fraction(values: &[Complex64], window: &[Segment], eta: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values
        .par_iter()
        .filter(|&&l| window.iter().map(|s| s.distance(l)).fold(f64::INFINITY, f64::min) > eta)
        .count();
    n as f64 / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Rule};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn model(spec: &KernelSpec) -> Subspace {
        let g = build_grid(Domain::interval(-30.0, 30.0), 300, Rule::GaussLegendre).unwrap();
        build_full_subspace(spec, &g, &SubspaceOptions::default()).unwrap()
    }

    fn sine_at(z: Complex64, y: f64) -> Complex64 {
        let d = z - c(y);
        if d.norm() < 1e-12 {
            return c(1.0 / PI);
        }
        d.sin() / (d * PI)
    }

    #[test]
    fn subspace_is_orthonormal_and_reproduces_columns() {
        let s = model(&KernelSpec::sine(1.0).unwrap());
        assert!(s.orthonormality_defect() < 1e-7);
        let col: Vec<Complex64> = s.grid().nodes().iter().map(|&x| c(crate::kernel::sine_kernel(1.0, x, 2.0))).collect();
        assert!(s.projection_residual(&CVec::from_vec(col)) < 1e-7);
        let ev = s.gram_eigenvalues();
        assert!(ev.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn strong_continuation_of_sine_column() {
        let s = model(&KernelSpec::sine(1.0).unwrap());
        let f = s.kernel_column_coeffs(0.0).unwrap();
        let v = analytic_continue_strong(&s, &f, 0.3, Complex64::new(0.0, 1.0)).unwrap();
        assert!((v - c(1f64.sinh() / PI)).norm() < 1e-6, "{v}");
        for z in [Complex64::new(0.5, 0.5), Complex64::new(2.0, -1.0), c(4.25)] {
            let v = analytic_continue_strong(&s, &f, 0.3, z).unwrap();
            assert!((v - sine_at(z, 0.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn ratio_continuation_of_sine_columns() {
        let s = model(&KernelSpec::sine(1.0).unwrap());
        let f = s.kernel_column_coeffs(1.7).unwrap();
        let z = Complex64::new(2.0, -1.0);
        let r = analytic_continue_ratio(&s, &f, 0.3, z).unwrap();
        let expect = sine_at(z, 1.7) / sine_at(z, 0.3);
        assert!((r - expect).norm() < 1e-8, "{r} vs {expect}");
    }

    #[test]
    fn poles_of_perturbed_sine() {
        let s = model(&KernelSpec::sine(1.0).unwrap());
        let rep = pole_set(&s, 0.3, DivisionKind::Strong, &PoleOptions::default()).unwrap();
        assert!(rep.n_set.is_empty());
        let lam = [Complex64::new(0.0, -1.0), Complex64::new(2.0, -1.0)];
        let s = model(&KernelSpec::perturbed_sine(1.0, lam.to_vec()).unwrap());
        let rep = pole_set(&s, 0.3, DivisionKind::Strong, &PoleOptions::default()).unwrap();
        let found = rep.poles();
        assert_eq!(found.len(), 2, "{found:?}");
        for l in lam {
            assert!(found.iter().any(|z| (z - l).norm() < 2e-2));
        }
        assert_eq!(rep.ess_window.len(), 2);
    }

    #[test]
    fn closure_and_negative_control() {
        let s = model(&KernelSpec::perturbed_sine(1.0, vec![Complex64::new(0.0, -1.0)]).unwrap());
        let f = s.vanishing_at(0.9, &s.kernel_column_coeffs(-2.2).unwrap()).unwrap();
        assert!(division_closure_residual(&s, 0.9, &f).unwrap() < 1e-6);
        let g = s.kernel_column_coeffs(-2.2).unwrap();
        assert!(matches!(division_closure_residual(&s, 0.9, &g), Err(Error::Precondition(_))));

        let profile = crate::kernel::VanishingGaussian { center: 0.0, width: 1.0, zero: 0.5 };
        let spec = KernelSpec::rank_one(profile);
        let g = build_grid(Domain::interval(-8.0, 8.0), 200, Rule::GaussLegendre).unwrap();
        let s = build_full_subspace(&spec, &g, &SubspaceOptions::default()).unwrap();
        assert_eq!(s.dim(), 1);
        let f = CVec::from_element(1, c(1.0));
        assert!(division_closure_residual(&s, 0.5, &f).unwrap() > 0.1);
    }

    #[test]
    fn compression_ranks() {
        let s = model(&KernelSpec::sine(1.0).unwrap());
        let r = compression_analysis(&s, 0.3, 0.5).unwrap();
        assert!(r.eigenvalue_mismatch < 1e-6);
        assert!(r.rank_dp_minus_tp <= 1);
        assert!(r.rank_dw_minus_a <= 2);
        assert!(r.tp_hermitian_defect < 1e-10);
    }

    #[test]
    fn strong_operator_rejects_non_divisible_space() {
        let profile = crate::kernel::GaussianProfile { center: 0.0, width: 1.0, amplitude: 1.0 };
        let spec = KernelSpec::rank_one(profile);
        let g = build_grid(Domain::interval(-8.0, 8.0), 120, Rule::GaussLegendre).unwrap();
        let s = build_full_subspace(&spec, &g, &SubspaceOptions::default()).unwrap();
        assert!(matches!(
            strong_division_operator(&s, 0.2, &DivisionOptions::default()),
            Err(Error::StrongDivisionViolated { .. })
        ));
    }

    #[test]
    fn resolvent_reports_near_spectrum() {
        let lam = Complex64::new(0.0, -1.0);
        let s = model(&KernelSpec::perturbed_sine(1.0, vec![lam]).unwrap());
        let d = strong_division_operator(&s, 0.0, &DivisionOptions::default()).unwrap();
        let eig = d.eigenvalues().unwrap();
        let target = eig.iter().min_by(|a, b| (**a - 1.0 / lam).norm().total_cmp(&(**b - 1.0 / lam).norm())).unwrap();
        let f = CVec::from_element(s.dim(), c(1.0));
        assert!(matches!(resolvent_apply(&d, *target, &f), Err(Error::NearSpectrum { .. })));
        let ok = resolvent_apply(&d, Complex64::new(0.0, 5.0), &f).unwrap();
        let back = (&d.matrix - CMat::identity(s.dim(), s.dim()) * Complex64::new(0.0, 5.0)) * &ok.solution;
        assert!((back - f).norm() < 1e-8);
    }

    #[test]
    fn uncompressed_divided_difference_satisfies_resolvent_identity() {
        let g = build_grid(Domain::interval(-3.0, 3.0), 40, Rule::GaussLegendre).unwrap();
        let (r, s) = (7usize, 23usize);
        let dr = grid_divided_difference(&g, r);
        let ds = grid_divided_difference(&g, s);
        let (xr, xs) = (g.nodes()[r], g.nodes()[s]);
        let lhs = &dr - &ds;
        let rhs = &dr * &ds * c(xr - xs);
        for i in (0..g.len()).filter(|&i| i != r && i != s) {
            for j in 0..g.len() {
                assert!((lhs[(i, j)] - rhs[(i, j)]).norm() < 1e-9 * (1.0 + lhs[(i, j)].norm()));
            }
        }
    }

    #[test]
    fn compressed_resolvent_identity_is_reported() {
        let s = model(&KernelSpec::sine(1.0).unwrap());
        let e = resolvent_identity_error(&s, 0.3, 0.7).unwrap();
        assert!(e.is_finite() && e > 0.0);
    }

    #[test]
    fn essential_window_shapes() {
        let d = Domain::interval(-1.0, 1.0);
        let w = essential_window(d, 0.0);
        assert_eq!(w, vec![Segment { lo: None, hi: Some(-1.0) }, Segment { lo: Some(1.0), hi: None }]);
        let w = essential_window(d, 3.0);
        assert_eq!(w, vec![Segment { lo: Some(-0.5), hi: Some(-0.25) }]);
        let w = essential_window(d, -1.0);
        assert_eq!(w, vec![Segment { lo: Some(0.5), hi: None }]);
    }

    #[test]
    fn blaschke_sums() {
        let one = blaschke_condition_sum(&[Complex64::new(0.0, -1.0)], HalfPlane::Lower, DEFAULT_BLASCHKE_CAP).unwrap();
        assert_eq!(one.sum, 0.5);
        assert!(!one.diverging);
        let many: Vec<Complex64> = (1..=1000).map(|n| Complex64::new(0.0, -(n as f64))).collect();
        assert!(blaschke_condition_sum(&many, HalfPlane::Lower, DEFAULT_BLASCHKE_CAP).unwrap().diverging);
        let sq: Vec<Complex64> = (1..=1000).map(|n| Complex64::new(0.0, (n * n) as f64)).collect();
        assert!(!blaschke_condition_sum(&sq, HalfPlane::Upper, DEFAULT_BLASCHKE_CAP).unwrap().diverging);
        assert!(blaschke_condition_sum(&[c(1.0)], HalfPlane::Lower, 5.0).is_err());
        assert!(blaschke_condition_sum(&[Complex64::new(0.0, 1.0)], HalfPlane::Lower, 5.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn vanishing_at_vanishes(k in -20.0f64..20.0, q in -20.0f64..20.0) {
            let s = model(&KernelSpec::sine(1.0).unwrap());
            let f = s.vanishing_at(k, &s.kernel_column_coeffs(q).unwrap()).unwrap();
            prop_assert!(s.evaluate(&f, k).unwrap().norm() < 1e-10 * f.norm().max(1e-300));
        }
    }
}
