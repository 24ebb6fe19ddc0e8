//! Run configuration: schema, defaults and `--set key=value` overrides.

use std::path::PathBuf;

use divkern_core::debranges::BlaschkeSpec;
use divkern_core::division::DivisionKind;
use divkern_core::grid::{Density, Domain, Rule};
use divkern_core::kernel::KernelDescriptor;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelDescriptor,
    pub grid: GridConfig,
    #[serde(default)]
    pub params: Params,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub domain: Domain,
    pub n: usize,
    #[serde(default = "default_rule")]
    pub rule: Rule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Density>,
}

fn default_rule() -> Rule {
    Rule::GaussLegendre
}

/// Command-specific settings; every command reads only the keys it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Anchor of the integrable extraction and of the weak division operator.
    pub p: f64,
    /// Center of the strong division operator.
    pub w: f64,
    /// The test function is the kernel column at q.
    pub q: f64,
    /// Point where the closure test function is made to vanish.
    pub k: f64,
    /// Continuation targets, [re, im].
    pub z: Vec<[f64; 2]>,
    pub pole_kind: DivisionKind,
    /// Subspace anchors; all grid nodes when absent.
    pub anchors: Option<Vec<f64>>,
    /// Observation window; the grid domain when absent.
    pub window: Option<[f64; 2]>,
    pub samples: usize,
    pub s: f64,
    pub n_quad: usize,
    pub epsilon: Option<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub blaschke: Option<BlaschkeSpec>,
    pub blaschke_cap: f64,
    pub sequence_length: usize,
    pub division_tolerance: f64,
    pub gram_rank_tol: f64,
    pub anchor_floor: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            p: 0.0,
            w: 0.3,
            q: 0.0,
            k: 0.9,
            z: vec![[0.0, 1.0]],
            pole_kind: DivisionKind::Strong,
            anchors: None,
            window: None,
            samples: 1,
            s: 1.0,
            n_quad: 40,
            epsilon: None,
            x: vec![-1.0, 0.0, 1.0],
            y: vec![-1.0, 0.0, 1.0],
            blaschke: None,
            blaschke_cap: 5.0,
            sequence_length: 10,
            division_tolerance: 1e-5,
            gram_rank_tol: 1e-16,
            anchor_floor: 1e-8,
        }
    }
}

/// Parses `key.path=value`; the value is read as JSON and falls back to a string.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) =
        text.split_once('=').ok_or_else(|| CliError::Validation(format!("override `{text}` has no `=`")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(|s| s.is_empty()) {
        return Err(CliError::Validation(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok((path, value))
}

pub fn apply_override(root: &mut Value, path: &[String], value: Value) -> Result<(), CliError> {
    let mut node = root;
    for (i, key) in path.iter().enumerate() {
        let map = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Map::new());
                node.as_object_mut().expect("object")
            }
            _ => {
                return Err(CliError::Validation(format!("`{}` is not an object", path[..i].join("."))));
            }
        };
        if i + 1 == path.len() {
            map.insert(key.clone(), value);
            return Ok(());
        }
        node = map.entry(key.clone()).or_insert(Value::Null);
    }
    Ok(())
}

/// Reads the config text, applies overrides in order and validates the result.
pub fn resolve(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut root: Value =
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config is not valid JSON: {e}")))?;
    if !root.is_object() {
        return Err(CliError::Validation("config must be a JSON object".into()));
    }
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut root, &path, value)?;
    }
    let cfg: RunConfig =
        serde_json::from_value(root).map_err(|e| CliError::Validation(format!("config schema: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.kernel.build().map_err(CliError::from_core)?;
        let p = &self.params;
        for (name, v) in [("p", p.p), ("w", p.w), ("q", p.q), ("k", p.k), ("s", p.s)] {
            if !v.is_finite() {
                return Err(CliError::Validation(format!("params.{name} must be finite")));
            }
        }
        if p.n_quad < 10 {
            return Err(CliError::Validation("params.n_quad must be at least 10".into()));
        }
        if p.sequence_length < 2 {
            return Err(CliError::Validation("params.sequence_length must be at least 2".into()));
        }
        if let Some([a, b]) = p.window {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(CliError::Validation(format!("params.window [{a}, {b}] is not an interval")));
            }
        }
        if !(p.division_tolerance > 0.0 && p.gram_rank_tol > 0.0 && p.anchor_floor > 0.0) {
            return Err(CliError::Validation("tolerances must be positive".into()));
        }
        if let Some(b) = &p.blaschke {
            b.validate().map_err(CliError::from_core)?;
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"kernel":{"kind":"sine","bandwidth":1},"grid":{"domain":{"kind":"interval","a":-20,"b":20},"n":200}}"#;

    #[test]
    fn defaults_fill_in() {
        let c = resolve(BASE, &[]).unwrap();
        assert_eq!(c.grid.rule, Rule::GaussLegendre);
        assert_eq!(c.params, Params::default());
        assert_eq!(c.out, PathBuf::from("out"));
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = resolve(BASE, &["grid.n=300".into(), "params.window=[-1,1]".into(), "kernel.bandwidth=2".into()])
            .unwrap();
        assert_eq!(c.grid.n, 300);
        assert_eq!(c.params.window, Some([-1.0, 1.0]));
        assert_eq!(c.kernel, KernelDescriptor::Sine { bandwidth: 2.0 });
        let c = resolve(BASE, &["params.pole_kind=weak".into()]).unwrap();
        assert_eq!(c.params.pole_kind, DivisionKind::Weak);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve(BASE, &["params.bogus=1".into()]).is_err());
        assert!(resolve(BASE, &["colour=1".into()]).is_err());
        assert!(resolve(BASE, &["grid.n.x=1".into()]).is_err());
        assert!(resolve(BASE, &["noequals".into()]).is_err());
        assert!(resolve("[1,2]", &[]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = resolve(BASE, &["seed=9".into()]).unwrap();
        let text = serde_json::to_string(&c.to_value()).unwrap();
        assert_eq!(resolve(&text, &[]).unwrap(), c);
    }

    #[test]
    fn bad_kernel_is_a_validation_error() {
        let e = resolve(BASE, &["kernel.bandwidth=-1".into()]).unwrap_err();
        assert!(matches!(e, CliError::Validation(_)));
    }
}
