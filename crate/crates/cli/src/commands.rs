//! One function per command; each returns its artifacts without touching disk.

use std::sync::Arc;

use divkern_core::debranges::{blaschke_product, BlaschkeSpec, HalfPlane, ModelSpace};
use divkern_core::division::{
    blaschke_condition_sum, build_subspace, compression_analysis, continue_ratio_with_weak, continue_with_strong,
    division_closure_residual, pole_set, strong_division_operator, weak_division_operator, DivisionOptions,
    PoleOptions, Subspace, SubspaceOptions, WeakKernel,
};
use divkern_core::dpp::{count_statistics, expected_count, gap_probability, local_trace_report, DppSampler};
use divkern_core::grid::{build_grid_with_density, Grid};
use divkern_core::integrable::{extract_ab, stable_extract_sequence, ExtractOptions};
use divkern_core::kernel::{eval_kernel, KernelDescriptor, KernelSpec};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::output::Artifact;
use crate::{CliError, Command};

type Out = Result<Vec<Artifact>, CliError>;

pub fn execute(cmd: Command, cfg: &RunConfig) -> Out {
    let spec = cfg.kernel.build()?;
    let g = &cfg.grid;
    let grid = build_grid_with_density(g.domain, g.n, g.rule, g.density.clone())?;
    match cmd {
        Command::ExtractAb => extract(cfg, &spec, &grid),
        Command::VerifyDivision => verify_division(cfg, &spec, &grid),
        Command::Continue => continuation(cfg, &spec, &grid),
        Command::Poles => poles(cfg, &spec, &grid),
        Command::Blaschke => blaschke(cfg),
        Command::KernelEval => kernel_eval(cfg, &spec),
        Command::SampleDpp => sample(cfg, &spec, &grid),
        Command::GapProb => gap(cfg, &spec),
        Command::TraceReport => trace(cfg, &spec, &grid),
        Command::Stability => stability(cfg, &grid),
    }
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

fn extract_opts(cfg: &RunConfig) -> ExtractOptions {
    ExtractOptions { anchor_floor: cfg.params.anchor_floor, ..ExtractOptions::default() }
}

fn division_opts(cfg: &RunConfig, enforce: bool) -> DivisionOptions {
    DivisionOptions { tolerance: cfg.params.division_tolerance, enforce, anchor_floor: cfg.params.anchor_floor }
}

fn window(cfg: &RunConfig, grid: &Grid) -> (f64, f64) {
    match cfg.params.window {
        Some([a, b]) => (a, b),
        None => grid.domain().bounds(),
    }
}

fn subspace(cfg: &RunConfig, spec: &KernelSpec, grid: &Arc<Grid>) -> Result<Subspace, CliError> {
    let anchors = cfg.params.anchors.clone().unwrap_or_else(|| grid.nodes().to_vec());
    Ok(build_subspace(spec, grid, &anchors, &SubspaceOptions { gram_rank_tol: cfg.params.gram_rank_tol })?)
}

fn extract(cfg: &RunConfig, spec: &KernelSpec, grid: &Arc<Grid>) -> Out {
    let pair = extract_ab(spec, grid, cfg.params.p, &extract_opts(cfg))?;
    let report = pair.residual_report()?;
    Ok(vec![
        Artifact::csv("ab.csv", pair.to_csv()?),
        Artifact::json(
            "residuals.json",
            json!({ "p": pair.p(), "kpp": pair.kpp(), "max_residual": report.max, "mean_residual": report.mean, "pairs": report.pairs }),
        )?,
    ])
}

fn verify_division(cfg: &RunConfig, spec: &KernelSpec, grid: &Arc<Grid>) -> Out {
    let p = &cfg.params;
    let sub = subspace(cfg, spec, grid)?;
    let opts = division_opts(cfg, false);
    let strong = strong_division_operator(&sub, p.w, &opts)?;
    let weak = weak_division_operator(&sub, p.p, WeakKernel::Reproducing, &opts)?;
    let f = sub.vanishing_at(p.k, &sub.kernel_column_coeffs(p.q)?)?;
    let closure = division_closure_residual(&sub, p.k, &f)?;
    let compression = compression_analysis(&sub, p.p, p.w)?;
    Ok(vec![Artifact::json(
        "division.json",
        json!({
            "dim": sub.dim(),
            "strong": { "center": p.w, "residual": strong.residual, "holds": strong.residual <= p.division_tolerance },
            "weak": { "center": p.p, "residual": weak.residual, "holds": weak.residual <= p.division_tolerance },
            "closure": { "k": p.k, "q": p.q, "residual": closure },
            "compression": compression,
        }),
    )?])
}

fn continuation(cfg: &RunConfig, spec: &KernelSpec, grid: &Arc<Grid>) -> Out {
    let p = &cfg.params;
    let sub = subspace(cfg, spec, grid)?;
    let f = sub.kernel_column_coeffs(p.q)?;
    let strong = strong_division_operator(&sub, p.w, &division_opts(cfg, true))?;
    let weak = weak_division_operator(&sub, p.p, WeakKernel::Reproducing, &division_opts(cfg, false))?;
    let mut rows = Vec::with_capacity(p.z.len());
    for &[re, im] in &p.z {
        let z = Complex64::new(re, im);
        let value = continue_with_strong(&strong, &f, z)?;
        let ratio = if z == Complex64::new(p.p, 0.0) { None } else { Some(pair(continue_ratio_with_weak(&weak, &f, z)?)) };
        let direct = if im == 0.0 && spec.in_domain(re) { Some(pair(eval_kernel(spec, re, p.q)?)) } else { None };
        rows.push(json!({ "z": [re, im], "value": pair(value), "ratio": ratio, "direct": direct }));
    }
    Ok(vec![Artifact::json("continuation.json", json!({ "q": p.q, "w": p.w, "p": p.p, "points": rows }))?])
}

fn poles(cfg: &RunConfig, spec: &KernelSpec, grid: &Arc<Grid>) -> Out {
    let sub = subspace(cfg, spec, grid)?;
    let report = pole_set(&sub, cfg.params.w, cfg.params.pole_kind, &PoleOptions::default())?;
    Ok(vec![Artifact::json("poles.json", report)?])
}

fn blaschke_spec(cfg: &RunConfig) -> Result<BlaschkeSpec, CliError> {
    if let Some(b) = &cfg.params.blaschke {
        return Ok(b.clone());
    }
    match &cfg.kernel {
        KernelDescriptor::PerturbedSine { bandwidth, poles } => {
            let (plus, minus): (Vec<[f64; 2]>, Vec<[f64; 2]>) = poles.iter().partition(|p| p[1] > 0.0);
            let spec = BlaschkeSpec { plus, minus, bandwidth: *bandwidth };
            spec.validate()?;
            Ok(spec)
        }
        _ => Err(CliError::Validation("blaschke needs params.blaschke or a perturbed-sine kernel".into())),
    }
}

fn blaschke(cfg: &RunConfig) -> Out {
    let spec = blaschke_spec(cfg)?;
    let cap = cfg.params.blaschke_cap;
    let plus = blaschke_condition_sum(&spec.plus_points(), HalfPlane::Upper, cap)?;
    let minus = blaschke_condition_sum(&spec.minus_points(), HalfPlane::Lower, cap)?;
    let mut values = Vec::new();
    for &x in &cfg.params.x {
        let z = Complex64::new(x, 0.0);
        values.push(json!({
            "x": x,
            "plus": pair(blaschke_product(&spec.plus_points(), HalfPlane::Upper, z)?),
            "minus": pair(blaschke_product(&spec.minus_points(), HalfPlane::Lower, z)?),
        }));
    }
    let space = ModelSpace::new(&spec)?;
    Ok(vec![Artifact::json(
        "blaschke.json",
        json!({ "plus": plus, "minus": minus, "cap": cap, "extra_dimension": space.extra_dimension(), "values": values }),
    )?])
}

fn kernel_eval(cfg: &RunConfig, spec: &KernelSpec) -> Out {
    let mut body = String::from("x,y,re,im\n");
    for &x in &cfg.params.x {
        for &y in &cfg.params.y {
            let k = eval_kernel(spec, x, y)?;
            body.push_str(&format!("{x:?},{y:?},{:?},{:?}\n", k.re, k.im));
        }
    }
    Ok(vec![Artifact::csv("kernel.csv", body)])
}

fn sample(cfg: &RunConfig, spec: &KernelSpec, grid: &Arc<Grid>) -> Out {
    let win = window(cfg, grid);
    let sampler = DppSampler::new(spec, win, grid)?;
    let points = sampler.sample(cfg.seed)?;
    let mut out = vec![Artifact::csv("points.csv", points.to_csv()?)];
    if cfg.params.samples >= 2 {
        let stats = count_statistics(&sampler, cfg.seed, cfg.params.samples)?;
        let expected = expected_count(spec, win, grid)?;
        out.push(Artifact::json(
            "counts.json",
            json!({ "window": [win.0, win.1], "expected_count": expected, "eigenvalue_range": sampler.eigenvalue_range(), "statistics": stats }),
        )?);
    }
    Ok(out)
}

fn gap(cfg: &RunConfig, spec: &KernelSpec) -> Out {
    let g = gap_probability(spec, cfg.params.s, cfg.params.n_quad)?;
    if let Some(w) = &g.warning {
        eprintln!("divkern: warning: {w}");
    }
    Ok(vec![Artifact::json("gap.json", g)?])
}

fn trace(cfg: &RunConfig, spec: &KernelSpec, grid: &Arc<Grid>) -> Out {
    let r = local_trace_report(spec, window(cfg, grid), grid, cfg.params.epsilon)?;
    Ok(vec![Artifact::json("trace.json", r)?])
}

/// Bandwidths a + 1/n, n = 1..=L, converging to the configured kernel.
fn stability(cfg: &RunConfig, grid: &Arc<Grid>) -> Out {
    let build = |a: f64| -> Result<KernelSpec, CliError> {
        let d = match &cfg.kernel {
            KernelDescriptor::Sine { .. } => KernelDescriptor::Sine { bandwidth: a },
            KernelDescriptor::PerturbedSine { poles, .. } => {
                KernelDescriptor::PerturbedSine { bandwidth: a, poles: poles.clone() }
            }
            _ => return Err(CliError::Validation("stability needs a sine or perturbed-sine kernel".into())),
        };
        Ok(d.build()?)
    };
    let a = match &cfg.kernel {
        KernelDescriptor::Sine { bandwidth } | KernelDescriptor::PerturbedSine { bandwidth, .. } => *bandwidth,
        _ => return Err(CliError::Validation("stability needs a sine or perturbed-sine kernel".into())),
    };
    let len = cfg.params.sequence_length;
    let bandwidths: Vec<f64> = (1..=len).map(|n| a + 1.0 / n as f64).collect();
    let specs = bandwidths.iter().map(|&b| build(b)).collect::<Result<Vec<_>, _>>()?;
    let opts = extract_opts(cfg);
    let seq = stable_extract_sequence(&specs, grid, cfg.params.p, &opts)?;
    let limit = extract_ab(&build(a)?, grid, cfg.params.p, &opts)?;
    let (x, w) = (grid.nodes(), grid.weights());
    let gaps: Vec<Value> = seq
        .a
        .iter()
        .map(|an| {
            let d: Vec<Complex64> = an.values().iter().zip(limit.a().values()).map(|(u, v)| u - v).collect();
            let sup = d.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let xn: f64 = d.iter().enumerate().map(|(i, z)| z.norm_sqr() * w[i] / (1.0 + x[i] * x[i])).sum();
            json!({ "sup": sup, "x_norm": xn.sqrt() })
        })
        .collect();
    let xs = &seq.report.x_combined;
    let decreasing = xs.windows(2).all(|p| p[1] < p[0]);
    Ok(vec![Artifact::json(
        "stability.json",
        json!({ "bandwidths": bandwidths, "report": seq.report, "strictly_decreasing": decreasing, "gap_to_limit": gaps }),
    )?])
}
