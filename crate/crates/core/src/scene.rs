//! Scene documents: a TOML description of a manifold window, its charts,
//! the vector field, named open domains, and the probes to run. The
//! built-in gallery ships the canonical scenarios as fixtures.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;

use crate::atlas::{Chart, DomainPredicate, ManifoldModel};
use crate::expr::{self, coord_names, Expr};
use crate::flow::{DeclaredProperties, VectorFieldModel};
use crate::numerics;
use crate::tolerances::Tolerances;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("cannot read scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene document parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("validation error at {place}: {msg}")]
    Validation { place: String, msg: String },
}

fn invalid(place: impl Into<String>, msg: impl Into<String>) -> SceneError {
    SceneError::Validation { place: place.into(), msg: msg.into() }
}

/// One probe request; parameters stay schemaless until the runner
/// interprets them per kind.
#[derive(Debug, Clone, Deserialize)]
pub struct ProbeSpec {
    pub name: String,
    pub kind: String,
    #[serde(flatten)]
    pub params: toml::Table,
}

#[derive(Debug, Deserialize)]
struct RawChart {
    id: String,
    forward: Vec<String>,
    inverse: Vec<String>,
    #[serde(default)]
    domain: Vec<String>,
    #[serde(default)]
    domain_union: Vec<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct RawDomain {
    #[serde(default)]
    conjuncts: Vec<String>,
    #[serde(default)]
    union: Vec<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct RawScene {
    name: String,
    #[serde(default)]
    description: String,
    dim: usize,
    #[serde(default)]
    seed: u64,
    window: Vec<[f64; 2]>,
    #[serde(default)]
    declared: Vec<String>,
    #[serde(default)]
    speed_limited: bool,
    #[serde(default)]
    periodic: BTreeMap<String, f64>,
    #[serde(default)]
    tolerances: Option<Tolerances>,
    field: BTreeMap<String, Vec<String>>,
    charts: Vec<RawChart>,
    #[serde(default)]
    domains: BTreeMap<String, RawDomain>,
    #[serde(default)]
    probes: Vec<ProbeSpec>,
}

/// A validated scene, ready for the check runner.
#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub manifold: Arc<ManifoldModel>,
    pub field: VectorFieldModel,
    pub domains: BTreeMap<String, DomainPredicate>,
    pub probes: Vec<ProbeSpec>,
}

impl Scene {
    pub fn domain(&self, name: &str) -> Result<&DomainPredicate, SceneError> {
        self.domains
            .get(name)
            .ok_or_else(|| invalid(format!("domain `{name}`"), "not defined in the scene"))
    }

    pub fn chart(&self, id: &str) -> Result<&Chart, SceneError> {
        self.manifold
            .chart(id)
            .ok_or_else(|| invalid(format!("chart `{id}`"), "not defined in the scene"))
    }
}

/// Parse one strict-inequality conjunct. Accepts a bare expression (read
/// as e > 0) or the explicit form `e > 0`; non-strict or reversed
/// comparators are rejected: domains must be open.
pub fn parse_conjunct(place: &str, text: &str) -> Result<Expr, SceneError> {
    let t = text.trim();
    if t.contains(">=") || t.contains("<=") || t.contains('<') {
        return Err(invalid(place, "domains must be open: use strict `> 0` inequalities"));
    }
    let body = match t.find('>') {
        Some(pos) => {
            let rhs = t[pos + 1..].trim();
            if rhs != "0" {
                return Err(invalid(place, "inequalities must have the form `expr > 0`"));
            }
            &t[..pos]
        }
        None => t,
    };
    expr::parse(body).map_err(|e| invalid(place, e.to_string()))
}

fn parse_component(place: &str, text: &str) -> Result<Expr, SceneError> {
    expr::parse(text).map_err(|e| invalid(place, e.to_string()))
}

fn check_vars(place: &str, e: &Expr, dim: usize) -> Result<(), SceneError> {
    let names = coord_names(dim);
    for v in e.free_vars() {
        if !names.contains(&v) {
            return Err(invalid(place, format!("unknown variable `{v}` (expected x0..x{})", dim - 1)));
        }
    }
    Ok(())
}

fn build_predicate(
    place: &str,
    conjuncts: &[String],
    union: &[Vec<String>],
    dim: usize,
) -> Result<DomainPredicate, SceneError> {
    if !union.is_empty() {
        let mut lists = Vec::new();
        for (i, list) in union.iter().enumerate() {
            let mut exprs = Vec::new();
            for (j, c) in list.iter().enumerate() {
                let e = parse_conjunct(&format!("{place}.union[{i}][{j}]"), c)?;
                check_vars(&format!("{place}.union[{i}][{j}]"), &e, dim)?;
                exprs.push(e);
            }
            lists.push(exprs);
        }
        return Ok(DomainPredicate::from_union(lists));
    }
    let mut exprs = Vec::new();
    for (j, c) in conjuncts.iter().enumerate() {
        let e = parse_conjunct(&format!("{place}[{j}]"), c)?;
        check_vars(&format!("{place}[{j}]"), &e, dim)?;
        exprs.push(e);
    }
    Ok(DomainPredicate::from_conjuncts(exprs))
}

/// Parse and validate a scene document from TOML text.
pub fn parse_scene(text: &str) -> Result<Scene, SceneError> {
    let raw: RawScene = toml::from_str(text)?;
    let dim = raw.dim;
    if dim < 2 {
        return Err(invalid("dim", "dimension must be at least 2 (N >= 1)"));
    }
    if raw.window.len() != dim {
        return Err(invalid("window", format!("expected {dim} axis ranges")));
    }

    let mut charts: Vec<Chart> = Vec::new();
    for rc in &raw.charts {
        if rc.forward.len() != dim || rc.inverse.len() != dim {
            return Err(invalid(
                format!("charts.{}", rc.id),
                format!("forward and inverse must each have {dim} components"),
            ));
        }
        let mut forward = Vec::new();
        for (i, s) in rc.forward.iter().enumerate() {
            let place = format!("charts.{}.forward[{i}]", rc.id);
            let e = parse_component(&place, s)?;
            check_vars(&place, &e, dim)?;
            forward.push(e);
        }
        let mut inverse = Vec::new();
        for (i, s) in rc.inverse.iter().enumerate() {
            let place = format!("charts.{}.inverse[{i}]", rc.id);
            let e = parse_component(&place, s)?;
            check_vars(&place, &e, dim)?;
            inverse.push(e);
        }
        let domain = build_predicate(
            &format!("charts.{}.domain", rc.id),
            &rc.domain,
            &rc.domain_union,
            dim,
        )?;
        charts.push(Chart::analytic(&rc.id, dim, forward, inverse, domain));
    }
    let ref_idx = charts
        .iter()
        .position(|c| c.id == "reference")
        .ok_or_else(|| invalid("charts", "a chart with id `reference` is required"))?;
    let reference = charts.remove(ref_idx);

    let tols = raw.tolerances.unwrap_or_default();
    let window: Vec<(f64, f64)> = raw.window.iter().map(|[a, b]| (*a, *b)).collect();
    let manifold = Arc::new(ManifoldModel {
        dim,
        reference,
        atlas: charts,
        window,
        tols,
    });

    // Validate chart round trips and Jacobians on a few domain samples.
    for chart in manifold.all_charts() {
        let samples = manifold.sample_where(&chart.domain, 8, 0xC4A7);
        for p in &samples {
            let place = format!("charts.{}", chart.id);
            let y = chart
                .forward(p)
                .map_err(|e| invalid(&place, format!("forward failed at {p:?}: {e}")))?;
            let back = chart
                .inverse(&y)
                .map_err(|e| invalid(&place, format!("inverse failed at {y:?}: {e}")))?;
            let err = numerics::inf_dist(&back, p);
            if err > manifold.tols.tol_chart.max(1e-8) {
                return Err(invalid(
                    &place,
                    format!("round trip off by {err:.3e} at {p:?}: inverse is not an inverse"),
                ));
            }
            let jac = chart
                .jacobian_forward(p)
                .map_err(|e| invalid(&place, format!("jacobian failed at {p:?}: {e}")))?;
            let det = numerics::determinant(&jac);
            if !det.is_finite() || det.abs() <= manifold.tols.tol_sing {
                return Err(invalid(
                    &place,
                    format!("forward map is singular at {p:?} (det = {det:.3e})"),
                ));
            }
        }
    }

    // Field components.
    let mut components: BTreeMap<String, Vec<Expr>> = BTreeMap::new();
    for (chart_id, comps) in &raw.field {
        if manifold.chart(chart_id).is_none() {
            return Err(invalid(
                format!("field.{chart_id}"),
                "field components reference an unknown chart",
            ));
        }
        if comps.len() != dim {
            return Err(invalid(
                format!("field.{chart_id}"),
                format!("expected {dim} components"),
            ));
        }
        let mut exprs = Vec::new();
        for (i, s) in comps.iter().enumerate() {
            let place = format!("field.{chart_id}[{i}]");
            let e = parse_component(&place, s)?;
            check_vars(&place, &e, dim)?;
            exprs.push(e);
        }
        components.insert(chart_id.clone(), exprs);
    }
    if !components.contains_key(&manifold.reference.id) {
        return Err(invalid("field", "components in the reference chart are required"));
    }

    // Periodic identifications.
    let mut periods = vec![None; dim];
    for (axis, period) in &raw.periodic {
        let names = coord_names(dim);
        let idx = names
            .iter()
            .position(|n| n == axis)
            .ok_or_else(|| invalid(format!("periodic.{axis}"), "unknown coordinate"))?;
        if *period <= 0.0 {
            return Err(invalid(format!("periodic.{axis}"), "period must be positive"));
        }
        periods[idx] = Some(*period);
    }

    let mut declared = DeclaredProperties::default();
    for d in &raw.declared {
        match d.as_str() {
            "nonVanishing" => declared.non_vanishing = true,
            "orbitsClosed" => declared.orbits_closed = true,
            "orbitsNonPeriodic" => declared.orbits_non_periodic = true,
            other => {
                return Err(invalid("declared", format!("unknown property `{other}`")));
            }
        }
    }

    let field = VectorFieldModel {
        manifold: manifold.clone(),
        components,
        periods,
        speed_limited: raw.speed_limited,
        declared,
    };

    let mut domains = BTreeMap::new();
    for (name, rd) in &raw.domains {
        let pred = build_predicate(&format!("domains.{name}"), &rd.conjuncts, &rd.union, dim)?;
        domains.insert(name.clone(), pred);
    }

    // Probe name uniqueness keeps reports unambiguous.
    let mut seen = std::collections::BTreeSet::new();
    for p in &raw.probes {
        if !seen.insert(p.name.clone()) {
            return Err(invalid(format!("probes.{}", p.name), "duplicate probe name"));
        }
    }

    Ok(Scene {
        name: raw.name,
        description: raw.description,
        seed: raw.seed,
        manifold,
        field,
        domains,
        probes: raw.probes,
    })
}

/// Load a scene document from disk.
pub fn load_scene(path: &std::path::Path) -> Result<Scene, SceneError> {
    let text = std::fs::read_to_string(path)?;
    parse_scene(&text)
}

const GALLERY: &[(&str, &str)] = &[
    ("constant", include_str!("../scenes/constant.toml")),
    ("warp-pushforward", include_str!("../scenes/warp-pushforward.toml")),
    ("quadratic-clock", include_str!("../scenes/quadratic-clock.toml")),
    ("kruskal-2d", include_str!("../scenes/kruskal-2d.toml")),
    ("two-origins", include_str!("../scenes/two-origins.toml")),
    ("rotation-periodic", include_str!("../scenes/rotation-periodic.toml")),
    ("annulus-reentry", include_str!("../scenes/annulus-reentry.toml")),
    ("torus-irrational", include_str!("../scenes/torus-irrational.toml")),
    ("rotating-frame", include_str!("../scenes/rotating-frame.toml")),
];

/// Names and one-line descriptions of the built-in scenes.
pub fn gallery_list() -> Vec<(String, String)> {
    GALLERY
        .iter()
        .map(|(name, text)| {
            let description = parse_scene(text)
                .map(|s| s.description)
                .unwrap_or_else(|e| format!("(broken fixture: {e})"));
            (name.to_string(), description)
        })
        .collect()
}

/// Load a built-in scene by name.
pub fn gallery_scene(name: &str) -> Result<Scene, SceneError> {
    let text = GALLERY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| invalid(format!("gallery `{name}`"), "no such built-in scene"))?;
    parse_scene(text)
}

/// Raw text of a built-in scene (for `gallery emit`).
pub fn gallery_source(name: &str) -> Option<&'static str> {
    GALLERY.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gallery_scenes_all_parse() {
        for (name, _) in GALLERY {
            let scene = gallery_scene(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&scene.name, name);
            assert!(!scene.probes.is_empty(), "{name} has no probes");
        }
    }

    #[test]
    fn unknown_variable_is_positioned() {
        let doc = r#"
name = "bad"
dim = 2
window = [[-1.0, 1.0], [-1.0, 1.0]]
[field]
reference = ["x2", "0"]
[[charts]]
id = "reference"
forward = ["x0", "x1"]
inverse = ["x0", "x1"]
"#;
        let err = parse_scene(doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("field.reference[0]"), "{msg}");
        assert!(msg.contains("x2"), "{msg}");
    }

    #[test]
    fn non_strict_inequality_rejected() {
        let doc = r#"
name = "bad"
dim = 2
window = [[-1.0, 1.0], [-1.0, 1.0]]
[field]
reference = ["1", "0"]
[[charts]]
id = "reference"
forward = ["x0", "x1"]
inverse = ["x0", "x1"]
[domains.closed]
conjuncts = ["1 - x0^2 >= 0"]
"#;
        let err = parse_scene(doc).unwrap_err();
        assert!(err.to_string().contains("must be open"), "{err}");
    }

    #[test]
    fn broken_inverse_rejected_at_load() {
        let doc = r#"
name = "bad"
dim = 2
window = [[0.5, 1.5], [0.5, 1.5]]
[field]
reference = ["1", "0"]
[[charts]]
id = "reference"
forward = ["x0", "x1"]
inverse = ["x0", "x1"]
[[charts]]
id = "fold"
forward = ["x0", "x1^2"]
inverse = ["x0", "x1"]
"#;
        let err = parse_scene(doc).unwrap_err();
        assert!(err.to_string().contains("round trip"), "{err}");
    }
}
