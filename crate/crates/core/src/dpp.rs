//! Projection determinantal point processes: sampling, counts, gap
//! probabilities and the local trace-class report.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, Domain, Grid, MeasureKind};
use crate::integrable::{extract_ab, ExtractOptions};
use crate::kernel::{eval_kernel, kernel_matrix_on, AbFunctions, KernelSpec, SineAb};
use crate::linalg::{c, hermitian_eigen, CMat, CVec};
use crate::quadrature::gauss_legendre_on;

/// Eigenvalues outside [-PROJECTION_SLACK, 1 + PROJECTION_SLACK] reject sampling.
pub const PROJECTION_SLACK: f64 = 0.05;
pub const GAP_REFINEMENT_TOL: f64 = 1e-4;
pub const ASYMMETRY_TOL: f64 = 1e-8;

/// Kahan-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

fn kahan(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = KahanSum::default();
    for x in xs {
        s.add(x);
    }
    s.value()
}

/// Quadrature nodes and weights on [a, b] consistent with `grid`: the grid itself
/// when it spans exactly [a, b], its lattice points for counting measure, and
/// otherwise a Gauss–Legendre rule with as many nodes, weighted by the grid density.
pub fn window_rule(grid: &Grid, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(Error::Domain(format!("bad window [{a}, {b}]")));
    }
    let (lo, hi) = grid.domain().bounds();
    if a < lo || b > hi {
        return Err(Error::Domain(format!("window [{a}, {b}] leaves the domain [{lo}, {hi}]")));
    }
    if a == b {
        return Ok((Vec::new(), Vec::new()));
    }
    if grid.measure() == MeasureKind::Counting || (a == lo && b == hi) {
        let idx = grid.indices_in(a, b);
        return Ok((idx.iter().map(|&i| grid.nodes()[i]).collect(), idx.iter().map(|&i| grid.weights()[i]).collect()));
    }
    let (nodes, mut weights) = gauss_legendre_on(a, b, grid.len().max(2));
    if let Some(d) = grid.density() {
        for (w, &x) in weights.iter_mut().zip(&nodes) {
            *w *= d.eval(x);
        }
    }
    Ok((nodes, weights))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointConfiguration {
    pub points: Vec<f64>,
    pub window: [f64; 2],
    pub seed: u64,
    pub kernel: String,
    /// Eigenvalue range of the window matrix before clipping.
    pub eigenvalue_range: [f64; 2],
    /// Number of eigenfunctions kept by the Bernoulli stage.
    pub selected: usize,
}

impl PointConfiguration {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// One point per row under a commented metadata header.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(&format!("# kernel: {}\n", self.kernel));
        out.push_str(&format!("# window: {},{}\n", fmt_f64(self.window[0]), fmt_f64(self.window[1])));
        out.push_str(&format!("# seed: {}\n", self.seed));
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["x"])?;
        for &x in &self.points {
            wtr.write_record([fmt_f64(x)])?;
        }
        let body = wtr.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Io(e.to_string()))?);
        Ok(out)
    }
}

/// Spectral data of the window matrix, shared by all replicas.
#[derive(Clone, Debug)]
pub struct DppSampler {
    kernel: String,
    window: [f64; 2],
    nodes: Vec<f64>,
    /// Voronoi cell of each node, clipped to the window.
    cells: Vec<(f64, f64)>,
    eigenvalues: Vec<f64>,
    /// Eigenvectors of W^{1/2} K W^{1/2} as columns.
    vectors: CMat,
    raw_range: [f64; 2],
}

impl DppSampler {
    pub fn new(spec: &KernelSpec, window: (f64, f64), grid: &Grid) -> Result<Self> {
        let (a, b) = window;
        let (nodes, weights) = window_rule(grid, a, b)?;
        let n = nodes.len();
        let m = kernel_matrix_on(spec, &nodes, &weights)?;
        let (vals, vecs) = if n == 0 { (Vec::new(), CMat::zeros(0, 0)) } else { hermitian_eigen(&m) };
        let raw_range = match (vals.first(), vals.last()) {
            (Some(&lo), Some(&hi)) => [lo, hi],
            _ => [0.0, 0.0],
        };
        if raw_range[0] < -PROJECTION_SLACK || raw_range[1] > 1.0 + PROJECTION_SLACK {
            return Err(Error::NotAProjection { min: raw_range[0], max: raw_range[1] });
        }
        let cells = (0..n)
            .map(|i| {
                let lo = if i == 0 { a } else { 0.5 * (nodes[i - 1] + nodes[i]) };
                let hi = if i + 1 == n { b } else { 0.5 * (nodes[i] + nodes[i + 1]) };
                (lo, hi)
            })
            .collect();
        Ok(DppSampler {
            kernel: spec.label(),
            window: [a, b],
            nodes,
            cells,
            eigenvalues: vals.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            vectors: vecs,
            raw_range,
        })
    }

    pub fn eigenvalue_range(&self) -> [f64; 2] {
        self.raw_range
    }

    /// Clipped eigenvalues, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Sum of the clipped eigenvalues, the expected number of points.
    pub fn mean_count(&self) -> f64 {
        kahan(self.eigenvalues.iter().copied())
    }

    pub fn sample(&self, seed: u64) -> Result<PointConfiguration> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let chosen: Vec<usize> =
            (0..self.eigenvalues.len()).filter(|&k| rng.random::<f64>() < self.eigenvalues[k]).collect();
        let n = self.nodes.len();
        let mut v = CMat::from_fn(n, chosen.len(), |i, k| self.vectors[(i, chosen[k])]);
        let mut points = Vec::with_capacity(chosen.len());
        let mut taken = vec![false; n];
        while v.ncols() > 0 {
            let m = v.ncols();
            let probs: Vec<f64> = (0..n).map(|i| if taken[i] { 0.0 } else { v.row(i).norm_squared() }).collect();
            let total = kahan(probs.iter().copied());
            if !(total > 0.0) {
                return Err(Error::Numeric("projection sampler lost mass".into()));
            }
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc && p > 0.0 {
                    pick = i;
                    break;
                }
            }
            while probs[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            taken[pick] = true;
            let (lo, hi) = self.cells[pick];
            let mut x = rng.random_range(lo..hi);
            while x <= self.window[0] || x >= self.window[1] {
                x = rng.random_range(lo..hi);
            }
            points.push(x);
            if m == 1 {
                break;
            }
            v = &v * complement_basis(&v.row(pick).adjoint());
        }
        points.sort_by(f64::total_cmp);
        if points.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Numeric("duplicate points in a configuration".into()));
        }
        Ok(PointConfiguration {
            points,
            window: self.window,
            seed,
            kernel: self.kernel.clone(),
            eigenvalue_range: self.raw_range,
            selected: chosen.len(),
        })
    }
}

/// Orthonormal basis (m x (m-1)) of the complement of r in C^m, from a Householder reflector.
fn complement_basis(r: &CVec) -> CMat {
    let m = r.len();
    let nr = r.norm();
    let u = r / c(nr);
    let phase = if u[0].norm() > 0.0 { u[0] / u[0].norm() } else { c(1.0) };
    let mut w = u.clone();
    w[0] += phase;
    let ww = w.norm_squared();
    let h = CMat::identity(m, m) - &w * w.adjoint() * c(2.0 / ww);
    h.columns(1, m - 1).into_owned()
}

pub fn sample_dpp(spec: &KernelSpec, window: (f64, f64), grid: &Grid, seed: u64) -> Result<PointConfiguration> {
    DppSampler::new(spec, window, grid)?.sample(seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountStatistics {
    pub samples: usize,
    pub base_seed: u64,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub counts: Vec<usize>,
}

/// Counts of `samples` replicas with seeds base_seed + i, run in parallel.
pub fn count_statistics(sampler: &DppSampler, base_seed: u64, samples: usize) -> Result<CountStatistics> {
    if samples < 2 {
        return Err(Error::Argument("need at least two samples".into()));
    }
    let counts: Vec<usize> = (0..samples)
        .into_par_iter()
        .map(|i| sampler.sample(base_seed.wrapping_add(i as u64)).map(|p| p.len()))
        .collect::<Result<_>>()?;
    let n = samples as f64;
    let mean = kahan(counts.iter().map(|&k| k as f64)) / n;
    let m2 = kahan(counts.iter().map(|&k| (k as f64 - mean).powi(2))) / n;
    let m4 = kahan(counts.iter().map(|&k| (k as f64 - mean).powi(4))) / n;
    let variance = m2 * n / (n - 1.0);
    let se_variance = ((m4 - variance * variance * (n - 3.0) / (n - 1.0)).max(0.0) / n).sqrt();
    Ok(CountStatistics { samples, base_seed, mean, variance, se_mean: (variance / n).sqrt(), se_variance, counts })
}

/// Integral of K(x, x) over the window.
pub fn expected_count(spec: &KernelSpec, window: (f64, f64), grid: &Grid) -> Result<f64> {
    let (nodes, weights) = window_rule(grid, window.0, window.1)?;
    let terms: Vec<f64> = nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| eval_kernel(spec, x, x).map(|k| k.re * w))
        .collect::<Result<_>>()?;
    Ok(kahan(terms))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapProbability {
    pub s: f64,
    pub n_quad: usize,
    pub value: f64,
    /// Value with 2 n_quad nodes.
    pub refined: f64,
    pub refinement_gap: f64,
    pub warning: Option<String>,
}

fn fredholm_on(spec: &KernelSpec, a: f64, b: f64, n: usize) -> Result<f64> {
    let (nodes, weights) = gauss_legendre_on(a, b, n);
    let m = kernel_matrix_on(spec, &nodes, &weights)?;
    let id = CMat::identity(n, n);
    let det = (id - m).lu().determinant();
    Ok(det.re)
}

/// det(I - K) on [0, s] by symmetric Nystrom, certified by doubling n_quad.
pub fn gap_probability(spec: &KernelSpec, s: f64, n_quad: usize) -> Result<GapProbability> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::Argument(format!("s = {s} must be nonnegative")));
    }
    if n_quad < 10 {
        return Err(Error::Argument(format!("n_quad = {n_quad} < 10")));
    }
    if s == 0.0 {
        return Ok(GapProbability { s, n_quad, value: 1.0, refined: 1.0, refinement_gap: 0.0, warning: None });
    }
    spec.check(0.0)?;
    spec.check(s)?;
    let value = fredholm_on(spec, 0.0, s, n_quad)?;
    let refined = fredholm_on(spec, 0.0, s, 2 * n_quad)?;
    let refinement_gap = (value - refined).abs();
    let warning = (refinement_gap > GAP_REFINEMENT_TOL)
        .then(|| format!("refinement from {} to {} nodes moved the value by {refinement_gap:e}", n_quad, 2 * n_quad));
    Ok(GapProbability { s, n_quad, value, refined, refinement_gap, warning })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceReport {
    pub window: [f64; 2],
    pub trace: f64,
    /// Hilbert–Schmidt norm squared of the compression to the window.
    pub hs_norm_sq: f64,
    /// Integral of |K|^2 over window x domain.
    pub row_integral: f64,
    pub eigenvalue_range: [f64; 2],
    pub epsilon: f64,
    /// Integral of |K|^2 over x in the window, |x - y| > epsilon.
    pub offdiag_integral: f64,
    /// Right side of the off-diagonal bound, when (A, B) are available.
    pub offdiag_bound: Option<f64>,
    /// Integral of |K|^2 over x in the window, |x - y| <= epsilon.
    pub near_diagonal_integral: f64,
    pub asymmetry: f64,
}

/// Sign-change zeros of f on a fine sampling of [a, b].
fn real_zeros(f: impl Fn(f64) -> f64, a: f64, b: f64, samples: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let h = (b - a) / samples as f64;
    let mut x0 = a;
    let mut f0 = f(a);
    for i in 1..=samples {
        let x1 = a + h * i as f64;
        let f1 = f(x1);
        if f0 == 0.0 {
            out.push(x0);
        } else if f0 * f1 < 0.0 {
            let (mut lo, mut hi, mut flo) = (x0, x1, f0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm * flo <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        x0 = x1;
        f0 = f1;
    }
    out
}

fn ab_of(spec: &KernelSpec) -> Option<Arc<dyn AbFunctions>> {
    match spec {
        KernelSpec::Sine { a } => Some(Arc::new(SineAb { a: *a })),
        _ => spec.ab_data(),
    }
}

/// Half the distance between the zeros of A and of B on the window, or 0.5.
pub fn default_epsilon(spec: &KernelSpec, window: (f64, f64)) -> f64 {
    let Some(ab) = ab_of(spec) else { return 0.5 };
    let (a, b) = window;
    if !(b > a) || !ab.in_domain(a) || !ab.in_domain(b) {
        return 0.5;
    }
    let za = real_zeros(|x| ab.a(x), a, b, 4000);
    let zb = real_zeros(|x| ab.b(x), a, b, 4000);
    let d = za.iter().flat_map(|x| zb.iter().map(move |y| (x - y).abs())).fold(f64::INFINITY, f64::min);
    if d.is_finite() && d > 0.0 {
        0.5 * d
    } else {
        0.5
    }
}

/// (1 + y^2)/(x - y)^2 bounded over x in the window, |x - y| > eps.
fn c_epsilon(window: (f64, f64), eps: f64) -> f64 {
    let r = window.0.abs().max(window.1.abs()) + eps;
    ((1.0 + r * r) / (eps * eps)).max(1.0)
}

pub fn local_trace_report(
    spec: &KernelSpec,
    window: (f64, f64),
    grid: &Arc<Grid>,
    epsilon: Option<f64>,
) -> Result<TraceReport> {
    let (a, b) = window;
    if !(b > a) {
        return Err(Error::Domain(format!("window [{a}, {b}] is empty")));
    }
    let eps = epsilon.unwrap_or_else(|| default_epsilon(spec, window));
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Argument(format!("epsilon = {eps} must be positive")));
    }
    let (wn, ww) = window_rule(grid, a, b)?;
    let (yn, yw) = (grid.nodes(), grid.weights());
    // rows over window x domain
    let rows: Vec<(f64, f64, f64)> = wn
        .par_iter()
        .zip(ww.par_iter())
        .map(|(&x, &wx)| {
            let kxx = eval_kernel(spec, x, x)?.re;
            let (mut all, mut off) = (KahanSum::default(), KahanSum::default());
            for (&y, &wy) in yn.iter().zip(yw) {
                let v = eval_kernel(spec, x, y)?.norm_sqr() * wy * wx;
                all.add(v);
                if (x - y).abs() > eps {
                    off.add(v);
                }
            }
            Ok((kxx * wx, all.value(), off.value()))
        })
        .collect::<Result<_>>()?;
    let trace = kahan(rows.iter().map(|r| r.0));
    let row_integral = kahan(rows.iter().map(|r| r.1));
    let offdiag_integral = kahan(rows.iter().map(|r| r.2));
    let near_diagonal_integral = row_integral - offdiag_integral;
    let mut asymmetry: f64 = 0.0;
    for (i, &x) in wn.iter().enumerate() {
        for &y in &wn[i..] {
            asymmetry = asymmetry.max((eval_kernel(spec, x, y)? - eval_kernel(spec, y, x)?.conj()).norm());
        }
    }
    if asymmetry > ASYMMETRY_TOL {
        return Err(Error::Consistency(format!("kernel asymmetry {asymmetry:e} on the window")));
    }
    let m = kernel_matrix_on(spec, &wn, &ww)?;
    let hs_norm_sq = kahan(m.iter().map(|z| z.norm_sqr()));
    let (vals, _) = hermitian_eigen(&m);
    let eigenvalue_range = [vals.first().copied().unwrap_or(0.0), vals.last().copied().unwrap_or(0.0)];
    let offdiag_bound = offdiag_bound(spec, window, grid, &wn, &ww, eps);
    for v in [trace, hs_norm_sq, row_integral, offdiag_integral, near_diagonal_integral] {
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite trace report entry".into()));
        }
    }
    Ok(TraceReport {
        window: [a, b],
        trace,
        hs_norm_sq,
        row_integral,
        eigenvalue_range,
        epsilon: eps,
        offdiag_integral,
        offdiag_bound,
        near_diagonal_integral,
        asymmetry,
    })
}

/// 2 C_eps (int_W |A|^2 int |B|^2/(1+y^2) + int_W |B|^2 int |A|^2/(1+y^2)).
fn offdiag_bound(
    spec: &KernelSpec,
    window: (f64, f64),
    grid: &Arc<Grid>,
    wn: &[f64],
    ww: &[f64],
    eps: f64,
) -> Option<f64> {
    let (yn, yw) = (grid.nodes(), grid.weights());
    let (aw, bw, ad, bd) = if let Some(ab) = ab_of(spec) {
        let sq = |f: &dyn Fn(f64) -> f64, xs: &[f64], ws: &[f64], damp: bool| {
            kahan(xs.iter().zip(ws).map(|(&x, &w)| f(x).powi(2) * w / if damp { 1.0 + x * x } else { 1.0 }))
        };
        let fa = |x: f64| ab.a(x);
        let fb = |x: f64| ab.b(x);
        (sq(&fa, wn, ww, false), sq(&fb, wn, ww, false), sq(&fa, yn, yw, true), sq(&fb, yn, yw, true))
    } else {
        let mid = 0.5 * (window.0 + window.1);
        let pair = extract_ab(spec, grid, mid, &ExtractOptions::default()).ok()?;
        let sq = |f: &dyn Fn(f64) -> Result<Complex64>, xs: &[f64], ws: &[f64], damp: bool| -> Option<f64> {
            let mut s = KahanSum::default();
            for (&x, &w) in xs.iter().zip(ws) {
                s.add(f(x).ok()?.norm_sqr() * w / if damp { 1.0 + x * x } else { 1.0 });
            }
            Some(s.value())
        };
        let fa = |x: f64| pair.a_at(x);
        let fb = |x: f64| pair.b_at(x);
        (sq(&fa, wn, ww, false)?, sq(&fb, wn, ww, false)?, sq(&fa, yn, yw, true)?, sq(&fb, yn, yw, true)?)
    };
    let v = 2.0 * c_epsilon(window, eps) * (aw * bd + bw * ad);
    v.is_finite().then_some(v)
}

/// Grid over the window, for callers that want a self-contained trace computation.
pub fn window_grid(window: (f64, f64), n: usize) -> Result<Arc<Grid>> {
    crate::grid::build_grid(Domain::interval(window.0, window.1), n, crate::grid::Rule::GaussLegendre)
}
