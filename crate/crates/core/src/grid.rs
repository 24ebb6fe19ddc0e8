//! Quadrature discretizations of (R, mu) and sampled functions on them.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    /// Integer points lo..=hi.
    Lattice { lo: i64, hi: i64 },
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Self {
        Domain::Interval { a, b }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Domain::Interval { a, b } => (a, b),
            Domain::Lattice { lo, hi } => (lo as f64, hi as f64),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let (a, b) = self.bounds();
        x >= a && x <= b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    GaussLegendre,
    UniformTrapezoid,
    Lattice,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    LebesgueDensity,
    Counting,
}

/// Density of mu with respect to Lebesgue measure.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Density {
    Gaussian {
        sigma: f64,
    },
    /// 1 / (1 + (x/scale)^2)
    Cauchy {
        scale: f64,
    },
    #[serde(skip)]
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Density {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Density::Gaussian { sigma } => (-0.5 * (x / sigma).powi(2)).exp(),
            Density::Cauchy { scale } => 1.0 / (1.0 + (x / scale).powi(2)),
            Density::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Gaussian { sigma } => write!(f, "Gaussian {{ sigma: {sigma} }}"),
            Density::Cauchy { scale } => write!(f, "Cauchy {{ scale: {scale} }}"),
            Density::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PartialEq for Density {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Density::Gaussian { sigma: a }, Density::Gaussian { sigma: b }) => a == b,
            (Density::Cauchy { scale: a }, Density::Cauchy { scale: b }) => a == b,
            (Density::Custom(a), Density::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    domain: Domain,
    rule: Rule,
    measure: MeasureKind,
    density: Option<Density>,
}

impl Grid {
    /// Validating constructor for externally supplied nodes and weights.
    pub fn new(
        domain: Domain,
        rule: Rule,
        measure: MeasureKind,
        density: Option<Density>,
        nodes: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if nodes.len() != weights.len() {
            return Err(Error::Argument(format!(
                "{} nodes but {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.is_empty() {
            return Err(Error::Argument("grid has no nodes".into()));
        }
        let (a, b) = domain.bounds();
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Domain(format!("bad domain [{a}, {b}]")));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument("non-finite node".into()));
        }
        if !nodes.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::Argument("nodes not strictly increasing".into()));
        }
        if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(Error::Argument("weights must be finite and positive".into()));
        }
        let slack = 1e-12 * (b - a).max(1.0);
        if nodes[0] < a - slack || nodes[nodes.len() - 1] > b + slack {
            return Err(Error::Domain("nodes outside the domain".into()));
        }
        match (measure, domain) {
            (MeasureKind::Counting, _) => {
                if weights.iter().any(|&w| w != 1.0) {
                    return Err(Error::Argument("counting measure needs unit weights".into()));
                }
                if nodes.iter().any(|x| x.fract() != 0.0) {
                    return Err(Error::Argument("counting measure needs lattice nodes".into()));
                }
                if density.is_some() {
                    return Err(Error::Argument("counting measure takes no density".into()));
                }
            }
            (MeasureKind::LebesgueDensity, Domain::Lattice { .. }) => {
                return Err(Error::Domain("lattice domain needs the counting measure".into()));
            }
            _ => {}
        }
        if (rule == Rule::Lattice) != (measure == MeasureKind::Counting) {
            return Err(Error::Argument("lattice rule goes with the counting measure".into()));
        }
        Ok(Grid { nodes, weights, domain, rule, measure, density })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn measure(&self) -> MeasureKind {
        self.measure
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    /// Smallest gap between consecutive nodes (the domain length for one node).
    pub fn min_spacing(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|p| p[1] - p[0])
            .fold(f64::INFINITY, f64::min)
            .min(self.domain.bounds().1 - self.domain.bounds().0)
    }

    /// Indices of nodes inside the closed interval [a, b].
    pub fn indices_in(&self, a: f64, b: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.nodes[i] >= a && self.nodes[i] <= b).collect()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["node", "weight"])?;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            wtr.write_record([fmt_f64(*x), fmt_f64(*w)])?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    /// Parses the `node,weight` CSV form; domain and rule are supplied by the caller.
    pub fn from_csv(text: &str, domain: Domain, rule: Rule) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "node" || &headers[1] != "weight" {
            return Err(Error::Parse("expected header `node,weight`".into()));
        }
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Parse("expected two columns".into()));
            }
            nodes.push(parse_f64(&rec[0])?);
            weights.push(parse_f64(&rec[1])?);
        }
        let measure = if rule == Rule::Lattice { MeasureKind::Counting } else { MeasureKind::LebesgueDensity };
        Grid::new(domain, rule, measure, None, nodes, weights)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GridJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: GridJson = serde_json::from_str(text)?;
        let measure = if g.rule == Rule::Lattice { MeasureKind::Counting } else { MeasureKind::LebesgueDensity };
        Grid::new(g.domain, g.rule, measure, g.density, g.nodes, g.weights)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridJson {
    domain: Domain,
    rule: Rule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<Density>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl From<&Grid> for GridJson {
    fn from(g: &Grid) -> Self {
        GridJson {
            domain: g.domain,
            rule: g.rule,
            density: g.density.clone().filter(|d| !matches!(d, Density::Custom(_))),
            nodes: g.nodes.clone(),
            weights: g.weights.clone(),
        }
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")))
}

/// Builds a grid on `domain` with `n` nodes and Lebesgue (or counting) measure.
pub fn build_grid(domain: Domain, n: usize, rule: Rule) -> Result<Arc<Grid>> {
    build_grid_with_density(domain, n, rule, None)
}

/// As [`build_grid`], with quadrature weights multiplied by `density`.
pub fn build_grid_with_density(
    domain: Domain,
    n: usize,
    rule: Rule,
    density: Option<Density>,
) -> Result<Arc<Grid>> {
    if n < 2 {
        return Err(Error::Argument(format!("n = {n} < 2")));
    }
    let (a, b) = domain.bounds();
    match (domain, rule) {
        (Domain::Lattice { lo, hi }, Rule::Lattice) => {
            if hi <= lo {
                return Err(Error::Domain(format!("empty lattice {lo}..={hi}")));
            }
            let count = (hi - lo + 1) as usize;
            if count != n {
                return Err(Error::Argument(format!("lattice {lo}..={hi} has {count} points, n = {n}")));
            }
            let nodes = (lo..=hi).map(|k| k as f64).collect();
            Grid::new(domain, rule, MeasureKind::Counting, None, nodes, vec![1.0; n]).map(Arc::new)
        }
        (Domain::Lattice { .. }, _) => Err(Error::Domain("quadrature rule on a lattice domain".into())),
        (Domain::Interval { .. }, Rule::Lattice) => {
            Err(Error::Argument("lattice rule needs a lattice domain and counting measure".into()))
        }
        (Domain::Interval { .. }, _) => {
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::Domain(format!("non-finite interval [{a}, {b}]")));
            }
            if a >= b {
                return Err(Error::Domain(format!("empty interval [{a}, {b}]")));
            }
            let (nodes, mut weights) = match rule {
                Rule::GaussLegendre => quadrature::gauss_legendre_on(a, b, n),
                _ => quadrature::trapezoid_on(a, b, n),
            };
            if let Some(d) = &density {
                for (w, x) in weights.iter_mut().zip(&nodes) {
                    *w *= d.eval(*x);
                }
            }
            Grid::new(domain, rule, MeasureKind::LebesgueDensity, density, nodes, weights).map(Arc::new)
        }
    }
}

/// Values of a function sampled on a shared grid.
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Argument(format!(
                "{} values on a {}-node grid",
                values.len(),
                grid.len()
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        GridFunction { grid: Arc::clone(grid), values }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        GridFunction { grid: Arc::clone(grid), values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        inner_product(self, self).map(|z| z.re.max(0.0).sqrt()).unwrap_or(0.0)
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }
}

/// Sum over nodes of f(x_i) conj(g(x_i)) w_i.
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<Complex64> {
    if !f.same_grid(g) {
        return Err(Error::Argument("grid mismatch".into()));
    }
    Ok(f.values
        .iter()
        .zip(&g.values)
        .zip(f.grid.weights())
        .map(|((a, b), &w)| a * b.conj() * w)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_weights_sum_to_length() {
        let g = build_grid(Domain::interval(-1.0, 1.0), 16, Rule::GaussLegendre).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lattice_grid_has_unit_weights() {
        let g = build_grid(Domain::Lattice { lo: -5, hi: 5 }, 11, Rule::Lattice).unwrap();
        assert_eq!(g.len(), 11);
        assert!(g.weights().iter().all(|&w| w == 1.0));
        assert_eq!(g.measure(), MeasureKind::Counting);
    }

    #[test]
    fn trapezoid_integrates_sine() {
        let g = build_grid(Domain::interval(0.0, std::f64::consts::PI), 64, Rule::UniformTrapezoid).unwrap();
        assert!((g.integrate(f64::sin) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            build_grid(Domain::interval(0.0, 1.0), 1, Rule::GaussLegendre),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            build_grid(Domain::interval(0.0, f64::INFINITY), 8, Rule::GaussLegendre),
            Err(Error::Domain(_))
        ));
        assert!(build_grid(Domain::interval(0.0, 1.0), 8, Rule::Lattice).is_err());
        assert!(build_grid(Domain::Lattice { lo: 0, hi: 4 }, 5, Rule::GaussLegendre).is_err());
        assert!(build_grid(Domain::Lattice { lo: 0, hi: 4 }, 6, Rule::Lattice).is_err());
    }

    #[test]
    fn density_scales_weights() {
        let d = Density::Cauchy { scale: 1.0 };
        let g = build_grid_with_density(Domain::interval(-200.0, 200.0), 2000, Rule::GaussLegendre, Some(d)).unwrap();
        let total = g.weights().iter().sum::<f64>();
        assert!((total - 2.0 * 200f64.atan()).abs() < 1e-6);
    }

    #[test]
    fn zero_inner_product_and_real_symmetry() {
        let g = build_grid(Domain::interval(-3.0, 3.0), 40, Rule::GaussLegendre).unwrap();
        let z = GridFunction::zeros(&g);
        assert_eq!(inner_product(&z, &z).unwrap(), Complex64::new(0.0, 0.0));
        let f = GridFunction::from_fn(&g, |x| Complex64::new(x.cos(), 0.0));
        let h = GridFunction::from_fn(&g, |x| Complex64::new(x * x - 1.0, 0.0));
        assert!(inner_product(&f, &h).unwrap().im.abs() < 1e-15);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let g1 = build_grid(Domain::interval(-1.0, 1.0), 10, Rule::GaussLegendre).unwrap();
        let g2 = build_grid(Domain::interval(-1.0, 1.0), 11, Rule::GaussLegendre).unwrap();
        let f = GridFunction::zeros(&g1);
        let h = GridFunction::zeros(&g2);
        assert!(matches!(inner_product(&f, &h), Err(Error::Argument(_))));
        assert!(GridFunction::new(g1, vec![Complex64::new(0.0, 0.0); 3]).is_err());
    }

    #[test]
    fn csv_and_json_round_trip() {
        let g = build_grid(Domain::interval(-2.0, 3.0), 9, Rule::UniformTrapezoid).unwrap();
        let back = Grid::from_csv(&g.to_csv().unwrap(), g.domain(), g.rule()).unwrap();
        assert_eq!(back, *g);
        let back = Grid::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, *g);
    }

    #[test]
    fn json_rejects_unknown_keys_and_bad_weights() {
        let bad = r#"{"domain":{"kind":"interval","a":0,"b":1},"rule":"gauss-legendre","nodes":[0.5],"weights":[1],"extra":1}"#;
        assert!(Grid::from_json(bad).is_err());
        let neg = r#"{"domain":{"kind":"interval","a":0,"b":1},"rule":"gauss-legendre","nodes":[0.5],"weights":[-1]}"#;
        assert!(Grid::from_json(neg).is_err());
    }
}
