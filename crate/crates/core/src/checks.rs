//! The check pipeline: interpret a scene's probes, dispatch them to the
//! library operations (in parallel, deterministically merged), and emit the
//! JSON report plus optional CSV artifacts.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adapt::{
    adapted_by_slice_criterion, build_straightening, check_adapted, check_fiber_aligned,
    check_product_form, normality_probe, return_set_probe, seed_grid, shrink_to_isolate,
    AdaptError,
};
use crate::atlas::{
    check_atlas_compatibility, Coordinates, DomainPredicate, PointRef, ScalarField,
};
use crate::expr::{BinOp, Expr};
use crate::flow::{
    flow, group_law_check, interval_set, orbit_polyline, FlowStatus,
};
use crate::numerics;
use crate::orbit_space::{
    atlas_compatibility_quotient, embed_local_to_global, frame_equivalent, hausdorff_probe,
    make_orbit_chart, same_orbit, LocalFrame, OrbitChart, OrbitKey, SeparationStatus,
};
use crate::report::{CheckEntry, Report, Verdict};
use crate::scene::{ProbeSpec, Scene};
use crate::transversality::{
    endpoint_stability, infinity_tangency_probe, pullback_boundary_check,
    pullback_classify_one, tangency_scan, InfinityVerdict, TransversalityError,
};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Restrict to these probe names (all when empty).
    pub selection: Vec<String>,
    pub seed_override: Option<u64>,
    pub horizon_override: Option<f64>,
    /// Directory for CSV / scene-patch artifacts.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for independent probes (0 = rayon default).
    pub workers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub scene: String,
    pub schema: u32,
    pub tool_version: String,
    pub seed: u64,
    pub checks: Vec<CheckEntry>,
    pub exit_code: i32,
}

impl CheckReport {
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

struct Artifact {
    filename: String,
    content: String,
}

type ProbeOutput = (Report, Vec<Artifact>);

/// Execute the scene's probes (optionally a selection) and assemble the
/// deterministic report. Exit code 0 iff no fail verdicts.
pub fn run_checks(scene: &Scene, opts: &RunOptions) -> CheckReport {
    let seed = opts.seed_override.unwrap_or(scene.seed);
    let probes: Vec<&ProbeSpec> = scene
        .probes
        .iter()
        .filter(|p| opts.selection.is_empty() || opts.selection.iter().any(|s| s == &p.name))
        .collect();

    let run_one = |probe: &ProbeSpec| -> ProbeOutput {
        match dispatch(scene, probe, seed, opts.horizon_override) {
            Ok(out) => out,
            Err(msg) => {
                let mut r = Report::new();
                r.fail(&probe.name, vec![format!("probe error: {msg}")]);
                (r, vec![])
            }
        }
    };

    let outputs: Vec<ProbeOutput> = if opts.workers == 1 {
        probes.iter().map(|p| run_one(p)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .expect("thread pool");
        pool.install(|| probes.par_iter().map(|p| run_one(p)).collect())
    };

    let mut checks = Vec::new();
    let mut artifacts = Vec::new();
    for (probe, (report, arts)) in probes.iter().zip(outputs) {
        for mut entry in report.entries {
            entry.name = format!("{}/{}", probe.name, entry.name);
            checks.push(entry);
        }
        artifacts.extend(arts);
    }

    if let Some(dir) = &opts.out_dir {
        let _ = std::fs::create_dir_all(dir);
        for a in artifacts {
            let _ = std::fs::write(dir.join(&a.filename), a.content);
        }
    }

    let exit_code = if checks.iter().any(|c| c.verdict == Verdict::Fail) { 1 } else { 0 };
    CheckReport {
        scene: scene.name.clone(),
        schema: 1,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        checks,
        exit_code,
    }
}

/// Render a report as human-readable text (the `report` subcommand).
pub fn render_report_text(report: &CheckReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "scene {} (tool {} / schema {}, seed {})\n",
        report.scene, report.tool_version, report.schema, report.seed
    ));
    for c in &report.checks {
        let tag = match c.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "????",
        };
        out.push_str(&format!("  [{tag}] {}", c.name));
        if let Some(d) = &c.detail {
            out.push_str(&format!(" — {d}"));
        }
        if let Some(h) = c.horizon {
            out.push_str(&format!(" (horizon {h})"));
        }
        out.push('\n');
        for w in &c.witnesses {
            out.push_str(&format!("         witness: {w}\n"));
        }
    }
    out.push_str(&format!("exit code {}\n", report.exit_code));
    out
}

// ---------------------------------------------------------------------
// Parameter extraction

type Params = toml::Table;

fn p_f64(t: &Params, key: &str) -> Result<f64, String> {
    match t.get(key) {
        Some(toml::Value::Float(f)) => Ok(*f),
        Some(toml::Value::Integer(i)) => Ok(*i as f64),
        Some(_) => Err(format!("parameter `{key}` must be a number")),
        None => Err(format!("missing parameter `{key}`")),
    }
}

fn p_f64_or(t: &Params, key: &str, default: f64) -> Result<f64, String> {
    if t.contains_key(key) {
        p_f64(t, key)
    } else {
        Ok(default)
    }
}

fn p_usize_or(t: &Params, key: &str, default: usize) -> Result<usize, String> {
    if t.contains_key(key) {
        Ok(p_f64(t, key)? as usize)
    } else {
        Ok(default)
    }
}

fn p_bool_or(t: &Params, key: &str, default: bool) -> Result<bool, String> {
    match t.get(key) {
        Some(toml::Value::Boolean(b)) => Ok(*b),
        Some(_) => Err(format!("parameter `{key}` must be a boolean")),
        None => Ok(default),
    }
}

fn p_str<'a>(t: &'a Params, key: &str) -> Result<&'a str, String> {
    match t.get(key) {
        Some(toml::Value::String(s)) => Ok(s),
        Some(_) => Err(format!("parameter `{key}` must be a string")),
        None => Err(format!("missing parameter `{key}`")),
    }
}

fn p_str_or<'a>(t: &'a Params, key: &str, default: &'a str) -> Result<&'a str, String> {
    if t.contains_key(key) {
        p_str(t, key)
    } else {
        Ok(default)
    }
}

fn value_to_f64(v: &toml::Value) -> Result<f64, String> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err("expected a number".to_string()),
    }
}

fn p_point(t: &Params, key: &str) -> Result<Vec<f64>, String> {
    match t.get(key) {
        Some(toml::Value::Array(a)) => a.iter().map(value_to_f64).collect(),
        Some(_) => Err(format!("parameter `{key}` must be a coordinate array")),
        None => Err(format!("missing parameter `{key}`")),
    }
}

fn p_points(t: &Params, key: &str) -> Result<Vec<Vec<f64>>, String> {
    match t.get(key) {
        Some(toml::Value::Array(rows)) => rows
            .iter()
            .map(|row| match row {
                toml::Value::Array(a) => a.iter().map(value_to_f64).collect(),
                _ => Err("expected an array of coordinate arrays".to_string()),
            })
            .collect(),
        Some(_) => Err(format!("parameter `{key}` must be an array of points")),
        None => Err(format!("missing parameter `{key}`")),
    }
}

fn p_f64s(t: &Params, key: &str) -> Result<Vec<f64>, String> {
    p_point(t, key)
}

fn p_str_list(t: &Params, key: &str) -> Result<Vec<String>, String> {
    match t.get(key) {
        Some(toml::Value::Array(a)) => a
            .iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s.clone()),
                _ => Err("expected strings".to_string()),
            })
            .collect(),
        Some(_) => Err(format!("parameter `{key}` must be an array of strings")),
        None => Err(format!("missing parameter `{key}`")),
    }
}

fn probe_rng(scene_seed: u64, probe_name: &str) -> ChaCha8Rng {
    let mut h = scene_seed;
    for b in probe_name.bytes() {
        h = h.wrapping_mul(0x100000001B3).wrapping_add(b as u64);
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn reference_point(scene: &Scene, coords: Vec<f64>) -> PointRef {
    PointRef { chart: scene.manifold.reference.id.clone(), coords: Coordinates(coords) }
}

fn sample_in_model(
    scene: &Scene,
    rng: &mut ChaCha8Rng,
    attempts: usize,
) -> Option<Vec<f64>> {
    for _ in 0..attempts {
        let p: Vec<f64> = scene
            .manifold
            .window
            .iter()
            .map(|(lo, hi)| rng.gen_range(*lo..*hi))
            .collect();
        if scene.manifold.in_model(&p) {
            return Some(p);
        }
    }
    None
}

// ---------------------------------------------------------------------
// Dispatch

fn dispatch(
    scene: &Scene,
    probe: &ProbeSpec,
    seed: u64,
    horizon_override: Option<f64>,
) -> Result<ProbeOutput, String> {
    let t = &probe.params;
    let horizon = |default: f64| -> Result<f64, String> {
        match horizon_override {
            Some(h) => Ok(h),
            None => p_f64_or(t, "horizon", default),
        }
    };
    match probe.kind.as_str() {
        "atlas" => {
            let samples = p_usize_or(t, "samples", 40)?;
            Ok((check_atlas_compatibility(&scene.manifold, samples), vec![]))
        }
        "field" => probe_field(scene, t),
        "group-law" => probe_group_law(scene, t, seed, &probe.name),
        "reversibility" => probe_reversibility(scene, t, seed, &probe.name),
        "flow-anchor" => probe_flow_anchor(scene, t),
        "interval-set" => probe_interval_set(scene, t, &probe.name, horizon(20.0)?),
        "orbit" => probe_orbit(scene, t, &probe.name, horizon(20.0)?),
        "fiber-aligned" => probe_fiber_aligned(scene, t),
        "straighten" => probe_straighten(scene, t, &probe.name),
        "product-form" => probe_product_form(scene, t),
        "adapted" => probe_adapted(scene, t, horizon(20.0)?),
        "detectors-agree" => probe_detectors_agree(scene, t, seed, &probe.name, horizon(20.0)?),
        "return-set" => probe_return_set(scene, t, &probe.name),
        "shrink" => probe_shrink(scene, t, horizon(20.0)?),
        "normality" => probe_normality(scene, t),
        "tangency" => probe_tangency(scene, t, &probe.name, horizon(10.0)?),
        "pullback" => probe_pullback(scene, t, seed, &probe.name),
        "infinity" => probe_infinity(scene, t),
        "endpoints" => probe_endpoints(scene, t, &probe.name, horizon(10.0)?),
        "quotient-transition" => probe_quotient_transition(scene, t, horizon(20.0)?),
        "hausdorff" => probe_hausdorff(scene, t, horizon(20.0)?),
        "frame" => probe_frame(scene, t),
        "embedding" => probe_embedding(scene, t, horizon(20.0)?),
        "metrizable" => probe_metrizable(scene, t, horizon(20.0)?),
        "same-orbit" => probe_same_orbit(scene, t, horizon(20.0)?),
        other => Err(format!("unknown probe kind `{other}`")),
    }
}

fn build_orbit_chart(
    scene: &Scene,
    chart_id: &str,
    domain_name: &str,
    budget: usize,
    horizon: f64,
) -> Result<(OrbitChart, crate::adapt::AdaptedVerdict), String> {
    let chart = scene.chart(chart_id).map_err(|e| e.to_string())?;
    let u = scene.domain(domain_name).map_err(|e| e.to_string())?;
    let seeds = seed_grid(&scene.manifold, u, budget);
    let verdict =
        check_adapted(&scene.field, chart, u, &seeds, horizon).map_err(|e| e.to_string())?;
    let oc = make_orbit_chart(&scene.field, chart, u, &verdict)
        .map_err(|e| format!("{e} ({:?})", verdict.witnesses))?;
    Ok((oc, verdict))
}

fn probe_field(scene: &Scene, t: &Params) -> Result<ProbeOutput, String> {
    let samples = p_usize_or(t, "samples", 40)?;
    let mut report = Report::new();
    let vf = &scene.field;
    let m = &scene.manifold;
    let points = m.sample_where(&DomainPredicate::everywhere(), samples, 0x11E1D);
    if vf.declared.non_vanishing {
        let mut worst = f64::INFINITY;
        for p in &points {
            if let Ok(v) = vf.eval_reference(p) {
                let n: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                worst = worst.min(n);
            }
        }
        if worst > m.tols.tol_sing {
            report.pass("non-vanishing", format!("min |v| = {worst:.3e} over {} samples", points.len()));
        } else {
            report.fail("non-vanishing", vec![format!("|v| = {worst:.3e} at a sample")]);
        }
    }
    // Explicit per-chart components must agree with the pushforward.
    for (chart_id, _) in vf.components.iter().filter(|(id, _)| **id != m.reference.id) {
        let chart = match m.chart(chart_id) {
            Some(c) => c,
            None => continue,
        };
        let mut worst = 0.0_f64;
        let mut count = 0;
        for p in &points {
            if !chart.domain.contains(p) {
                continue;
            }
            let explicit = match vf.components_in_chart(chart, p) {
                Ok(v) => v,
                Err(_) => continue,
            };
            // Pushforward route.
            let vref = match vf.eval_reference(p) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let jac = match chart.jacobian_forward(p) {
                Ok(j) => j,
                Err(_) => continue,
            };
            let push = numerics::mat_vec(&jac, &vref);
            worst = worst.max(numerics::inf_dist(&explicit, &push));
            count += 1;
        }
        let name = format!("pushforward consistency {chart_id}");
        if count == 0 {
            report.inconclusive(&name, "no overlap samples");
        } else if worst < m.tols.tol_field {
            report.pass(&name, format!("worst deviation {worst:.3e} over {count} samples"));
        } else {
            report.fail(&name, vec![format!("deviation {worst:.3e} exceeds tol_field")]);
        }
    }
    if report.entries.is_empty() {
        report.pass("field", "no declared properties to verify");
    }
    Ok((report, vec![]))
}

fn probe_group_law(
    scene: &Scene,
    t: &Params,
    seed: u64,
    name: &str,
) -> Result<ProbeOutput, String> {
    let count = p_usize_or(t, "count", 100)?;
    let span = p_f64_or(t, "span", 0.5)?;
    let mut rng = probe_rng(seed, name);
    let mut report = Report::new();
    let mut done = 0;
    let mut attempts = 0;
    let mut worst = 0.0_f64;
    while done < count && attempts < count * 60 {
        attempts += 1;
        let x = match sample_in_model(scene, &mut rng, 20) {
            Some(x) => x,
            None => break,
        };
        let s = rng.gen_range(-span..span);
        let tt = rng.gen_range(-span..span);
        let rep = group_law_check(&scene.field, &reference_point(scene, x), s, tt);
        if rep.entries.iter().any(|e| e.verdict == Verdict::Inconclusive) {
            continue;
        }
        if rep.any_failed() {
            report.merge(rep);
            return Ok((report, vec![]));
        }
        if let Some(d) = rep.entries[0]
            .detail
            .as_ref()
            .and_then(|d| d.split('=').nth(1))
            .and_then(|v| v.trim().parse::<f64>().ok())
        {
            worst = worst.max(d);
        }
        done += 1;
    }
    if done == count {
        report.pass(
            "group law",
            format!("{count} seeded triples, worst deviation {worst:.3e}"),
        );
    } else {
        report.inconclusive(
            "group law",
            format!("only {done}/{count} triples stayed interior"),
        );
    }
    Ok((report, vec![]))
}

fn probe_reversibility(
    scene: &Scene,
    t: &Params,
    seed: u64,
    name: &str,
) -> Result<ProbeOutput, String> {
    let count = p_usize_or(t, "count", 50)?;
    let s = p_f64_or(t, "s", 0.8)?;
    let tol = 10.0 * scene.manifold.tols.tol_pos;
    let mut rng = probe_rng(seed, name);
    let mut report = Report::new();
    let mut done = 0;
    let mut attempts = 0;
    let mut worst = 0.0_f64;
    while done < count && attempts < count * 60 {
        attempts += 1;
        let x = match sample_in_model(scene, &mut rng, 20) {
            Some(x) => x,
            None => break,
        };
        let fwd = flow(&scene.field, &reference_point(scene, x.clone()), s)
            .map_err(|e| e.to_string())?;
        if fwd.status != FlowStatus::Interior {
            continue;
        }
        let back = flow(&scene.field, &fwd.point, -s).map_err(|e| e.to_string())?;
        if back.status != FlowStatus::Interior {
            continue;
        }
        let d = scene.field.wrapped_dist(&back.point.coords.0, &x);
        worst = worst.max(d);
        done += 1;
        if d >= tol {
            report.fail(
                "reversibility",
                vec![format!("returned {d:.3e} away from the seed at X = {x:?}")],
            );
            return Ok((report, vec![]));
        }
    }
    if done == count {
        report.pass("reversibility", format!("{count} round trips, worst {worst:.3e}"));
    } else {
        report.inconclusive("reversibility", format!("only {done}/{count} stayed interior"));
    }
    Ok((report, vec![]))
}

fn probe_flow_anchor(scene: &Scene, t: &Params) -> Result<ProbeOutput, String> {
    let x = p_point(t, "seed_point")?;
    let s = p_f64(t, "s")?;
    let expect = p_point(t, "expect_point")?;
    let tol = p_f64_or(t, "tol", 1e-8)?;
    let mut report = Report::new();
    let r = flow(&scene.field, &reference_point(scene, x), s).map_err(|e| e.to_string())?;
    let d = scene.field.wrapped_dist(&r.point.coords.0, &expect);
    if r.status == FlowStatus::Interior && d < tol {
        report.pass("flow anchor", format!("|F(s,X) - expected| = {d:.3e}"));
    } else {
        report.fail(
            "flow anchor",
            vec![format!("status {:?}, distance {d:.3e} at s = {s}", r.status)],
        );
    }
    Ok((report, vec![]))
}

fn probe_interval_set(
    scene: &Scene,
    t: &Params,
    name: &str,
    horizon: f64,
) -> Result<ProbeOutput, String> {
    let u = scene.domain(p_str(t, "domain")?).map_err(|e| e.to_string())?;
    let x = p_point(t, "seed_point")?;
    let pr = reference_point(scene, x.clone());
    let iset = interval_set(&scene.field, &pr, u, horizon).map_err(|e| e.to_string())?;
    let mut report = Report::new();

    let seed_inside = u.contains(&scene.field.wrap(&x));
    if seed_inside && !iset.contains_zero() {
        report.fail(
            "interval invariant",
            vec!["seed is in U but 0 is in no component".to_string()],
        );
    }
    if let Some(expected) = t.get("expect_components") {
        let n = value_to_f64(expected)? as usize;
        if iset.components.len() == n {
            report.pass("component count", format!("{n} components"));
        } else {
            report.fail(
                "component count",
                vec![format!("expected {n}, found {}", iset.components.len())],
            );
        }
    }
    if t.contains_key("expect_endpoints") {
        let expected = p_points(t, "expect_endpoints")?;
        let tol = p_f64_or(t, "endpoint_tol", 1e-6)?;
        let mut ok = expected.len() == iset.components.len();
        let mut detail = Vec::new();
        if ok {
            for (c, e) in iset.components.iter().zip(&expected) {
                if (c.a - e[0]).abs() > tol || (c.b - e[1]).abs() > tol {
                    ok = false;
                    detail.push(format!("({:.8}, {:.8}) vs expected ({}, {})", c.a, c.b, e[0], e[1]));
                }
            }
        } else {
            detail.push(format!(
                "component count {} vs expected {}",
                iset.components.len(),
                expected.len()
            ));
        }
        if ok {
            report.pass("endpoints", format!("{} endpoints within {tol:.1e}", 2 * expected.len()));
        } else {
            report.fail("endpoints", detail);
        }
    }
    let payload = json!({
        "components": iset.components.iter().map(|c| json!({
            "a": c.a, "b": c.b,
            "kind_a": c.kind_a.label(), "kind_b": c.kind_b.label(),
            "dgds_a": c.kind_a.dgds(), "dgds_b": c.kind_b.dgds(),
        })).collect::<Vec<_>>(),
        "outside_touches": iset.outside_touches.len(),
        "tangential_warnings": iset.tangential_warnings,
    });
    report.push(CheckEntry {
        name: "interval set".to_string(),
        verdict: Verdict::Pass,
        witnesses: vec![],
        detail: Some(format!("{} components", iset.components.len())),
        payload: Some(payload),
        horizon: Some(horizon),
    });

    let mut csv = String::from("a,b,kind_a,kind_b,dgds_a,dgds_b\n");
    for c in &iset.components {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.a,
            c.b,
            c.kind_a.label(),
            c.kind_b.label(),
            c.kind_a.dgds().map(|v| v.to_string()).unwrap_or_default(),
            c.kind_b.dgds().map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    let artifact = Artifact { filename: format!("{name}-intervals.csv"), content: csv };
    report.stamp_horizon(horizon);
    Ok((report, vec![artifact]))
}

fn probe_orbit(
    scene: &Scene,
    t: &Params,
    name: &str,
    horizon: f64,
) -> Result<ProbeOutput, String> {
    let x = p_point(t, "seed_point")?;
    let max_points = p_usize_or(t, "max_points", 512)?;
    let orbit = orbit_polyline(&scene.field, &reference_point(scene, x), horizon, max_points)
        .map_err(|e| e.to_string())?;
    let mut report = Report::new();

    if t.contains_key("expect_periodic") {
        let expect = p_bool_or(t, "expect_periodic", false)?;
        match (expect, orbit.periodic) {
            (true, Some(period)) => {
                if t.contains_key("expect_period") {
                    let want = p_f64(t, "expect_period")?;
                    let tol = p_f64_or(t, "period_tol", 1e-6)?;
                    if (period - want).abs() < tol {
                        report.pass("periodicity", format!("period {period:.9} matches"));
                    } else {
                        report.fail(
                            "periodicity",
                            vec![format!("period {period:.9} vs expected {want}")],
                        );
                    }
                } else {
                    report.pass("periodicity", format!("period {period:.9} detected"));
                }
            }
            (false, None) => report.pass("periodicity", "no period detected, as expected"),
            (true, None) => report.fail("periodicity", vec!["expected a period".to_string()]),
            (false, Some(p)) => {
                report.fail("periodicity", vec![format!("unexpected period {p:.9}")])
            }
        }
    }
    if t.contains_key("expect_exit_abs") {
        let want = p_f64(t, "expect_exit_abs")?;
        let tol = p_f64_or(t, "exit_tol", 1e-5)?;
        let first = orbit.samples.first().map(|(s, _)| s.abs()).unwrap_or(f64::NAN);
        let last = orbit.samples.last().map(|(s, _)| s.abs()).unwrap_or(f64::NAN);
        if (first - want).abs() < tol && (last - want).abs() < tol {
            report.pass("domain exit", format!("orbit ends at |s| = {last:.8}"));
        } else {
            report.fail(
                "domain exit",
                vec![format!("ends at |s| = {first:.8} / {last:.8}, expected {want}")],
            );
        }
    }
    if report.entries.is_empty() {
        report.pass("orbit", format!("{} polyline samples", orbit.samples.len()));
    }

    let ref_id = &scene.manifold.reference.id;
    let mut csv = String::from("s,chart,");
    csv.push_str(
        &(0..scene.manifold.dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(","),
    );
    csv.push('\n');
    for (s, p) in &orbit.samples {
        csv.push_str(&format!(
            "{},{},{}\n",
            s,
            ref_id,
            p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        ));
    }
    report.stamp_horizon(horizon);
    Ok((report, vec![Artifact { filename: format!("{name}-orbit.csv"), content: csv }]))
}

fn probe_fiber_aligned(scene: &Scene, t: &Params) -> Result<ProbeOutput, String> {
    let chart = scene.chart(p_str(t, "chart")?).map_err(|e| e.to_string())?;
    let expect = p_bool_or(t, "expect_aligned", true)?;
    let a = check_fiber_aligned(&scene.field, chart).map_err(|e| e.to_string())?;
    let mut report = Report::new();
    let f_range = a
        .f_samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, f)| (lo.min(*f), hi.max(*f)));
    let detail = format!(
        "worst spatial component {:.3e}, f in [{:.6}, {:.6}]",
        a.worst_spatial_component, f_range.0, f_range.1
    );
    if a.aligned == expect {
        report.pass("fiber alignment", detail);
    } else {
        report.fail("fiber alignment", vec![detail]);
    }
    Ok((report, vec![]))
}

fn probe_straighten(scene: &Scene, t: &Params, name: &str) -> Result<ProbeOutput, String> {
    let chart = scene.chart(p_str(t, "chart")?).map_err(|e| e.to_string())?;
    let at = p_point(t, "at")?;
    let radius = p_f64_or(t, "radius", 0.5)?;
    let grid = p_usize_or(t, "grid", 5)?;
    let tol = scene.manifold.tols.tol_check;
    let mut report = Report::new();

    let st = build_straightening(&scene.field, chart, &reference_point(scene, at.clone()), radius)
        .map_err(|e| e.to_string())?;

    // Pushed-forward components on a grid of the construction box.
    let anchor = chart.forward(&at).map_err(|e| e.to_string())?;
    let mut worst0 = 0.0_f64;
    let mut worst_sp = 0.0_f64;
    let mut checked = 0;
    let per = grid.max(2);
    for flat in 0..per.pow(scene.manifold.dim as u32) {
        let mut idx = flat;
        let mut y = anchor.clone();
        for v in y.iter_mut() {
            let k = idx % per;
            idx /= per;
            *v += 0.8 * radius * (2.0 * (k as f64 + 0.5) / per as f64 - 1.0);
        }
        let p = match chart.inverse(&y) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if !scene.manifold.in_model(&p) {
            continue;
        }
        let v = match scene.field.components_in_chart(&st, &p) {
            Ok(v) => v,
            Err(_) => continue,
        };
        worst0 = worst0.max((v[0] - 1.0).abs());
        for c in &v[1..] {
            worst_sp = worst_sp.max(c.abs());
        }
        checked += 1;
    }
    if checked == 0 {
        report.inconclusive("straightened field", "no grid points stayed in the model");
    } else if worst0 < tol && worst_sp < tol {
        report.pass(
            "straightened field",
            format!("|v'0 - 1| <= {worst0:.3e}, |v'j| <= {worst_sp:.3e} on {checked} grid points"),
        );
    } else {
        report.fail(
            "straightened field",
            vec![format!("|v'0 - 1| = {worst0:.3e}, |v'j| = {worst_sp:.3e}")],
        );
    }

    if t.contains_key("expect_time_map") {
        let table = p_points(t, "expect_time_map")?;
        let tol_map = p_f64_or(t, "time_map_tol", 1e-9)?;
        let mut worst = 0.0_f64;
        for row in &table {
            let mut y = anchor.clone();
            y[0] = row[0];
            let p = chart.inverse(&y).map_err(|e| e.to_string())?;
            let out = st.forward(&p).map_err(|e| e.to_string())?;
            worst = worst.max((out[0] - row[1]).abs());
        }
        if worst < tol_map {
            report.pass("time map", format!("max |y'0 - expected| = {worst:.3e}"));
        } else {
            report.fail("time map", vec![format!("max deviation {worst:.3e}")]);
        }
    }

    // Emit the constructed chart as a scene patch: a quadrature table along
    // the anchor fiber with monotone cubic interpolation.
    let knots = 33;
    let mut xs = Vec::with_capacity(knots);
    let mut ys = Vec::with_capacity(knots);
    for k in 0..knots {
        let y0 = anchor[0] + radius * (2.0 * k as f64 / (knots - 1) as f64 - 1.0);
        let mut y = anchor.clone();
        y[0] = y0;
        if let Ok(p) = chart.inverse(&y) {
            if let Ok(out) = st.forward(&p) {
                xs.push(y0);
                ys.push(out[0]);
            }
        }
    }
    let slopes = numerics::pchip_slopes(&xs, &ys);
    let patch = json!({
        "kind": "numeric chart",
        "id": st.id,
        "base": chart.id,
        "anchor": anchor,
        "radius": radius,
        "time_map": {
            "interpolation": "monotone-cubic",
            "knots": xs.iter().zip(&ys).map(|(a, b)| json!([a, b])).collect::<Vec<_>>(),
            "slopes": slopes,
        },
        "spatial": "inherited from base chart",
    });
    let artifact = Artifact {
        filename: format!("{name}-chart-patch.json"),
        content: serde_json::to_string_pretty(&patch).unwrap(),
    };
    Ok((report, vec![artifact]))
}

fn probe_product_form(scene: &Scene, t: &Params) -> Result<ProbeOutput, String> {
    let chart = scene.chart(p_str(t, "chart")?).map_err(|e| e.to_string())?;
    let u = scene.domain(p_str(t, "domain")?).map_err(|e| e.to_string())?;
    let grid = p_usize_or(t, "grid", 8)?;
    let expect = p_bool_or(t, "expect", true)?;
    let inner = check_product_form(&scene.manifold, chart, u, grid);
    let mut report = Report::new();
    let observed = inner.all_passed();
    let detail = inner
        .entries
        .first()
        .and_then(|e| e.detail.clone())
        .unwrap_or_else(|| format!("{:?}", inner.entries.first().map(|e| &e.witnesses)));
    if observed == expect {
        report.pass("product form", format!("as expected ({detail})"));
    } else {
        let mut witnesses = vec![format!("expected pass={expect}")];
        for e in &inner.entries {
            witnesses.extend(e.witnesses.clone());
        }
        report.fail("product form", witnesses);
    }
    Ok((report, vec![]))
}

fn probe_adapted(scene: &Scene, t: &Params, horizon: f64) -> Result<ProbeOutput, String> {
    let chart = scene.chart(p_str(t, "chart")?).map_err(|e| e.to_string())?;
    let u = scene.domain(p_str(t, "domain")?).map_err(|e| e.to_string())?;
    let budget = p_usize_or(t, "budget", 16)?;
    let expect_adapted = p_bool_or(t, "expect_adapted", true)?;
    let expect_nice = p_bool_or(t, "expect_nice", expect_adapted)?;
    let seeds = seed_grid(&scene.manifold, u, budget);
    if seeds.is_empty() {
        let mut r = Report::new();
        r.inconclusive("adapted", "no seeds inside the domain");
        return Ok((r, vec![]));
    }
    let v = check_adapted(&scene.field, chart, u, &seeds, horizon).map_err(|e| e.to_string())?;
    let mut report = Report::new();
    let detail = format!(
        "adapted={} nice={} ({} orbits, periodic_detected={})",
        v.adapted,
        v.nice,
        v.bar_values.len(),
        v.periodic_detected
    );
    if v.adapted == expect_adapted && v.nice == expect_nice {
        report.push(CheckEntry {
            name: "adapted".to_string(),
            verdict: Verdict::Pass,
            witnesses: v.witnesses.clone().into_iter().take(3).collect(),
            detail: Some(detail),
            payload: Some(json!({
                "bar_values": v.bar_values.iter().take(16).map(|(p, x)| json!({
                    "seed": p.coords.0, "x": x,
                })).collect::<Vec<_>>(),
            })),
            horizon: Some(horizon),
        });
    } else {
        let mut w = vec![detail];
        w.extend(v.witnesses.into_iter().take(4));
        report.fail("adapted", w);
    }
    Ok((report, vec![]))
}

fn probe_detectors_agree(
    scene: &Scene,
    t: &Params,
    seed: u64,
    name: &str,
    horizon: f64,
) -> Result<ProbeOutput, String> {
    let chart = scene.chart(p_str(t, "chart")?).map_err(|e| e.to_string())?;
    let u = scene.domain(p_str(t, "domain")?).map_err(|e| e.to_string())?;
    let budget = p_usize_or(t, "budget", 9)?;
    let subdomains = p_usize_or(t, "subdomains", 8)?;
    let mut rng = probe_rng(seed, name);
    let mut report = Report::new();

    // Chart-image bounding box of U drives the random product sub-boxes.
    let inside = scene.manifold.sample_where(u, 60, 0xD157);
    if inside.is_empty() {
        report.inconclusive("detectors agree", "no samples in the domain");
        return Ok((report, vec![]));
    }
    let dim = scene.manifold.dim;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in &inside {
        if let Ok(y) = chart.forward(p) {
            for i in 0..dim {
                lo[i] = lo[i].min(y[i]);
                hi[i] = hi[i].max(y[i]);
            }
        }
    }

    let mut disagreements = Vec::new();
    let mut compared = 0;
    let chart_arc = std::sync::Arc::new(chart.clone());
    for _ in 0..subdomains {
        // A random box in chart coordinates, intersected with U.
        let mut conjuncts = Vec::new();
        for i in 0..dim {
            let c = rng.gen_range(lo[i]..hi[i]);
            let h = rng.gen_range(0.15..0.6) * (hi[i] - lo[i]);
            let delta = Expr::bin(BinOp::Sub, Expr::var(&format!("x{i}")), Expr::lit(c));
            let e = Expr::bin(
                BinOp::Sub,
                Expr::lit(h * h),
                Expr::bin(BinOp::Pow, delta, Expr::lit(2.0)),
            );
            conjuncts.push(ScalarField::ChartExpr { chart: chart_arc.clone(), expr: e });
        }
        let sub = u.intersect_with(conjuncts);
        let seeds = seed_grid(&scene.manifold, &sub, budget);
        if seeds.is_empty() {
            continue;
        }
        let by_definition = check_adapted(&scene.field, chart, &sub, &seeds, horizon)
            .map_err(|e| e.to_string())?
            .adapted;
        let by_slices = adapted_by_slice_criterion(&scene.field, chart, &sub, &seeds, horizon)
            .map_err(|e| e.to_string())?;
        compared += 1;
        if by_definition != by_slices {
            disagreements.push(format!(
                "sub-domain {compared}: x-constancy says {by_definition}, slice count says {by_slices}"
            ));
        }
    }
    if compared == 0 {
        report.inconclusive("detectors agree", "no usable sub-domains");
    } else if disagreements.is_empty() {
        report.pass("detectors agree", format!("{compared} product sub-domains, 0 disagreements"));
    } else {
        report.fail("detectors agree", disagreements);
    }
    report.stamp_horizon(horizon);
    Ok((report, vec![]))
}

fn probe_return_set(scene: &Scene, t: &Params, name: &str) -> Result<ProbeOutput, String> {
    let chart = scene.chart(p_str(t, "chart")?).map_err(|e| e.to_string())?;
    let x = p_point(t, "seed_point")?;
    let horizons = p_f64s(t, "horizons")?;
    let pr = reference_point(scene, x);
    let mut report = Report::new();
    let mut gaps = Vec::new();
    let mut counts = Vec::new();
    let mut last_csv = String::new();
    for h in &horizons {
        let rs = return_set_probe(&scene.field, chart, &pr, *h).map_err(|e| e.to_string())?;
        gaps.push(rs.min_gap);
        counts.push(rs.x_values.len());
        let mut csv = String::from("index,");
        csv.push_str(
            &(1..scene.manifold.dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(","),
        );
        csv.push('\n');
        for (i, v) in rs.x_values.iter().enumerate() {
            csv.push_str(&format!(
                "{i},{}\n",
                v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
            ));
        }
        last_csv = csv;
    }
    let payload = json!({ "horizons": horizons, "min_gaps": gaps, "return_counts": counts });
    if t.contains_key("expect_single") && p_bool_or(t, "expect_single", false)? {
        if counts.iter().all(|c| *c == 1) {
            report.pass("single return", format!("one arc at every horizon {horizons:?}"));
        } else {
            report.fail("single return", vec![format!("return counts {counts:?}")]);
        }
    }
    if t.contains_key("expect_final_gap_below") {
        let bound = p_f64(t, "expect_final_gap_below")?;
        let last = *gaps.last().unwrap();
        if last < bound {
            report.pass("gap bound", format!("min gap {last:.3e} < {bound}"));
        } else {
            report.fail("gap bound", vec![format!("min gap {last:.3e} >= {bound}")]);
        }
    }
    if p_bool_or(t, "expect_decreasing", false)? {
        let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
        if monotone {
            report.pass("gap decreases", format!("gaps {gaps:?} across horizons"));
        } else {
            report.fail("gap decreases", vec![format!("gaps {gaps:?} not monotone")]);
        }
    }
    let verdict_entry = CheckEntry {
        name: "return set".to_string(),
        verdict: Verdict::Pass,
        witnesses: vec![],
        detail: Some(format!("returns {counts:?}, min gaps {gaps:?}")),
        payload: Some(payload),
        horizon: horizons.last().copied(),
    };
    report.push(verdict_entry);
    Ok((report, vec![Artifact { filename: format!("{name}-returns.csv"), content: last_csv }]))
}

fn probe_shrink(scene: &Scene, t: &Params, horizon: f64) -> Result<ProbeOutput, String> {
    let chart = scene.chart(p_str(t, "chart")?).map_err(|e| e.to_string())?;
    let x = p_point(t, "seed_point")?;
    let expect_unavailable = p_bool_or(t, "expect_unavailable", false)?;
    let pr = reference_point(scene, x.clone());
    let mut report = Report::new();
    let rs = return_set_probe(&scene.field, chart, &pr, horizon).map_err(|e| e.to_string())?;
    match shrink_to_isolate(&scene.field, chart, &pr, &rs) {
        Ok(shrunk) => {
            if expect_unavailable {
                report.fail(
                    "shrink to isolate",
                    vec!["expected IsolationUnavailable but the domain shrank".to_string()],
                );
            } else {
                // Prop 3 conclusion: the seed's orbit meets the shrunk domain
                // in a connected set; re-check adaptedness for the seed.
                let v = check_adapted(&scene.field, chart, &shrunk, &[x], horizon)
                    .map_err(|e| e.to_string())?;
                if v.adapted {
                    report.pass(
                        "shrink to isolate",
                        format!("re-check adapted on the shrunk domain ({})", shrunk.describe()),
                    );
                } else {
                    report.fail("shrink to isolate", v.witnesses);
                }
            }
        }
        Err(AdaptError::IsolationUnavailable(g)) => {
            if expect_unavailable {
                report.pass(
                    "shrink to isolate",
                    format!("isolation unavailable as expected (min gap {g:.3e})"),
                );
            } else {
                report.fail(
                    "shrink to isolate",
                    vec![format!("isolation unavailable (min gap {g:.3e})")],
                );
            }
        }
        Err(e) => return Err(e.to_string()),
    }
    report.stamp_horizon(horizon);
    Ok((report, vec![]))
}

fn probe_normality(scene: &Scene, t: &Params) -> Result<ProbeOutput, String> {
    let points = p_points(t, "points")?;
    let budget = p_usize_or(t, "budget", 16)?;
    let inner = normality_probe(&scene.field, &points, budget);
    let mut report = Report::new();
    if t.contains_key("expect") {
        let expect = p_str_list(t, "expect")?;
        if expect.len() != points.len() {
            return Err("`expect` must list one verdict per probe point".to_string());
        }
        for (i, want) in expect.iter().enumerate() {
            let entry = &inner.entries[i];
            let observed = match entry.verdict {
                Verdict::Pass => "evidence",
                Verdict::Fail => "counterexample",
                Verdict::Inconclusive => "inconclusive",
            };
            let info = entry
                .detail
                .clone()
                .or_else(|| entry.witnesses.first().cloned())
                .unwrap_or_default();
            let name = format!("normality point {i}");
            if observed == want {
                report.pass(&name, format!("{observed}: {info}"));
            } else {
                report.fail(&name, vec![format!("observed {observed} ({info}), expected {want}")]);
            }
        }
    } else {
        report.merge(inner);
    }
    Ok((report, vec![]))
}

fn probe_tangency(
    scene: &Scene,
    t: &Params,
    name: &str,
    horizon: f64,
) -> Result<ProbeOutput, String> {
    let u = scene.domain(p_str(t, "domain")?).map_err(|e| e.to_string())?;
    let points = p_points(t, "points")?;
    let scan = tangency_scan(&scene.field, u, &points, horizon).map_err(|e| e.to_string())?;
    let mut report = Report::new();
    if t.contains_key("expect_flags") {
        let expect: Vec<bool> = match t.get("expect_flags") {
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    toml::Value::Boolean(b) => Ok(*b),
                    _ => Err("expect_flags must be booleans".to_string()),
                })
                .collect::<Result<_, _>>()?,
            _ => return Err("expect_flags must be an array".to_string()),
        };
        if expect == scan.in_s_sigma {
            report.pass("tangency flags", format!("{:?}", scan.in_s_sigma));
        } else {
            report.fail(
                "tangency flags",
                vec![format!("observed {:?}, expected {:?}", scan.in_s_sigma, expect)],
            );
        }
    } else {
        report.pass(
            "tangency scan",
            format!("{} points, {} flagged", points.len(), scan.witnesses.len()),
        );
    }
    let mut csv = String::from("point,flag,worst_abs_dgds\n");
    for ((p, flag), worst) in points.iter().zip(&scan.in_s_sigma).zip(&scan.worst_dgds) {
        csv.push_str(&format!(
            "\"{}\",{},{}\n",
            p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
            flag,
            worst
        ));
    }
    report.stamp_horizon(horizon);
    Ok((report, vec![Artifact { filename: format!("{name}-tangency.csv"), content: csv }]))
}

fn probe_pullback(
    scene: &Scene,
    t: &Params,
    seed: u64,
    name: &str,
) -> Result<ProbeOutput, String> {
    let u = scene.domain(p_str(t, "domain")?).map_err(|e| e.to_string())?;
    let samples = p_usize_or(t, "samples", 500)?;
    let s_range = p_f64_or(t, "s_range", 3.0)?;
    let mut rng = probe_rng(seed, name);
    let mut report = pullback_boundary_check(&scene.field, u, samples, s_range, rng.gen());
    // Constructed boundary cases, when provided.
    if t.contains_key("cases") {
        let cases = match t.get("cases") {
            Some(toml::Value::Array(a)) => a.clone(),
            _ => return Err("cases must be an array of tables".to_string()),
        };
        for (i, case) in cases.iter().enumerate() {
            let table = case.as_table().ok_or("each case must be a table")?;
            let s = p_f64(table, "s")?;
            let x = p_point(table, "point")?;
            let expect = p_str(table, "expect")?;
            let (img, pre) = pullback_classify_one(&scene.field, u, s, &x)
                .map_err(|e| e.to_string())?;
            let name = format!("pullback case {i}");
            if img == expect && pre == expect {
                report.pass(&name, format!("both classify {expect}"));
            } else {
                report.fail(
                    &name,
                    vec![format!("image {img}, preimage {pre}, expected {expect}")],
                );
            }
        }
    }
    Ok((report, vec![]))
}

fn probe_infinity(scene: &Scene, t: &Params) -> Result<ProbeOutput, String> {
    let u = scene.domain(p_str(t, "domain")?).map_err(|e| e.to_string())?;
    let x = p_point(t, "seed_point")?;
    let r = p_f64(t, "r")?;
    let r_max = p_f64(t, "r_max")?;
    let expect = p_str_or(t, "expect", "no-evidence")?;
    let ev = infinity_tangency_probe(&scene.field, u, &reference_point(scene, x), r, r_max)
        .map_err(|e| e.to_string())?;
    let observed = match ev.verdict {
        InfinityVerdict::NoEvidence => "no-evidence",
        InfinityVerdict::PossibleTangencyAtInfinity => "possible",
    };
    let mut report = Report::new();
    let detail = format!("bound {:.3e} over |s| in [{r}, {r_max}]", ev.delta_lower_bound);
    if observed == expect {
        report.pass("infinity tangency", format!("{observed}: {detail}"));
    } else {
        report.fail("infinity tangency", vec![format!("observed {observed} ({detail})")]);
    }
    Ok((report, vec![]))
}

fn probe_endpoints(
    scene: &Scene,
    t: &Params,
    name: &str,
    horizon: f64,
) -> Result<ProbeOutput, String> {
    let u = scene.domain(p_str(t, "domain")?).map_err(|e| e.to_string())?;
    let x = p_point(t, "seed_point")?;
    let direction = p_point(t, "direction")?;
    let magnitudes = p_f64s(t, "magnitudes")?;
    let mut report = Report::new();
    let ef = match endpoint_stability(
        &scene.field,
        u,
        &reference_point(scene, x),
        &direction,
        &magnitudes,
        horizon,
    ) {
        Ok(ef) => ef,
        Err(TransversalityError::PersistenceViolation { offset, components }) => {
            if p_bool_or(t, "expect_persistence_violation", false)? {
                report.pass(
                    "endpoint persistence",
                    format!("violation at offset {offset} ({components} components), as expected"),
                );
                return Ok((report, vec![]));
            }
            report.fail(
                "endpoint persistence",
                vec![format!("{components} components at offset {offset}")],
            );
            return Ok((report, vec![]));
        }
        Err(e) => return Err(e.to_string()),
    };
    if p_bool_or(t, "expect_persistence_violation", false)? {
        report.fail(
            "endpoint persistence",
            vec!["expected a persistence violation".to_string()],
        );
        return Ok((report, vec![]));
    }

    // Two-step FD agreement: smoothness evidence for phi_1, phi_2.
    let mut worst = 0.0_f64;
    for (d1h, d1h2, d2h, d2h2) in &ef.fd_derivatives {
        worst = worst.max((d1h - d1h2).abs() / (1.0 + d1h2.abs()));
        worst = worst.max((d2h - d2h2).abs() / (1.0 + d2h2.abs()));
    }
    if worst < 0.05 {
        report.pass("endpoint smoothness", format!("two-step FD agreement {worst:.3e}"));
    } else {
        report.fail("endpoint smoothness", vec![format!("FD disagreement {worst:.3e}")]);
    }
    if t.contains_key("expect_phi") {
        let table = p_points(t, "expect_phi")?;
        let tol = p_f64_or(t, "phi_tol", 1e-6)?;
        let mut bad = Vec::new();
        for row in &table {
            let m = row[0];
            let idx = ef
                .offsets
                .iter()
                .position(|o| (o - m).abs() < 1e-12)
                .ok_or(format!("offset {m} not tabulated"))?;
            if (ef.phi1[idx] - row[1]).abs() > tol || (ef.phi2[idx] - row[2]).abs() > tol {
                bad.push(format!(
                    "offset {m}: ({}, {}) vs expected ({}, {})",
                    ef.phi1[idx], ef.phi2[idx], row[1], row[2]
                ));
            }
        }
        if bad.is_empty() {
            report.pass("endpoint values", format!("{} offsets within {tol:.1e}", table.len()));
        } else {
            report.fail("endpoint values", bad);
        }
    }
    let mut csv = String::from("offset,phi1,phi2,dphi1_h,dphi1_h2,dphi2_h,dphi2_h2\n");
    for (i, m) in ef.offsets.iter().enumerate() {
        let (a, b, c, d) = ef.fd_derivatives[i];
        csv.push_str(&format!("{m},{},{},{a},{b},{c},{d}\n", ef.phi1[i], ef.phi2[i]));
    }
    report.stamp_horizon(horizon);
    Ok((report, vec![Artifact { filename: format!("{name}-endpoints.csv"), content: csv }]))
}

fn probe_quotient_transition(
    scene: &Scene,
    t: &Params,
    horizon: f64,
) -> Result<ProbeOutput, String> {
    let budget = p_usize_or(t, "budget", 16)?;
    let samples = p_usize_or(t, "samples", 8)?;
    let (a, _) = build_orbit_chart(scene, p_str(t, "chart_a")?, p_str(t, "domain_a")?, budget, horizon)?;
    let (b, _) = build_orbit_chart(scene, p_str(t, "chart_b")?, p_str(t, "domain_b")?, budget, horizon)?;
    let report = atlas_compatibility_quotient(&scene.field, &[a, b], samples);
    Ok((report, vec![]))
}

fn probe_hausdorff(scene: &Scene, t: &Params, horizon: f64) -> Result<ProbeOutput, String> {
    let budget = p_usize_or(t, "budget", 16)?;
    let shrink_steps = p_usize_or(t, "shrink_steps", 20)?;
    let expect = p_str_or(t, "expect", "separated")?;
    let chart_specs = p_points_as_pairs(t, "charts")?;
    let mut charts = Vec::new();
    for (chart_id, domain_name) in &chart_specs {
        let (oc, _) = build_orbit_chart(scene, chart_id, domain_name, budget, horizon)?;
        charts.push(oc);
    }
    let seed_a = p_point(t, "seed_a")?;
    let seed_b = p_point(t, "seed_b")?;
    let key = |seed: &Vec<f64>| -> OrbitKey {
        let pr = reference_point(scene, seed.clone());
        for oc in &charts {
            if let Ok(Some(x)) = oc.key_of_orbit(&scene.field, seed, horizon) {
                return OrbitKey { nice_chart: oc.chart.id.clone(), x_value: x, seed: pr.clone() };
            }
        }
        OrbitKey { nice_chart: String::new(), x_value: vec![], seed: pr }
    };
    let k1 = key(&seed_a);
    let k2 = key(&seed_b);
    let verdict = hausdorff_probe(&scene.field, &charts, &k1, &k2, shrink_steps, horizon);
    let observed = match verdict.status {
        SeparationStatus::Separated => "separated",
        SeparationStatus::NotSeparatedWitness => "not-separated",
        SeparationStatus::Inconclusive => "inconclusive",
    };
    let mut report = Report::new();
    let payload = json!({
        "witnesses": verdict.witnesses.iter().map(|(r, w)| json!({"radius": r, "seed": w})).collect::<Vec<_>>(),
        "resolution": verdict.resolution,
        "boxes": verdict.boxes.as_ref().map(|(b1, b2)| json!([
            {"chart": b1.chart, "center": b1.center, "radius": b1.radius},
            {"chart": b2.chart, "center": b2.center, "radius": b2.radius},
        ])),
    });
    if observed == expect {
        report.push(CheckEntry {
            name: "separation".to_string(),
            verdict: Verdict::Pass,
            witnesses: vec![],
            detail: Some(format!("{observed} at resolution {:.3e}", verdict.resolution)),
            payload: Some(payload),
            horizon: Some(horizon),
        });
    } else {
        report.push(CheckEntry {
            name: "separation".to_string(),
            verdict: Verdict::Fail,
            witnesses: vec![format!("observed {observed}, expected {expect}")],
            detail: None,
            payload: Some(payload),
            horizon: Some(horizon),
        });
    }
    Ok((report, vec![]))
}

fn p_points_as_pairs(t: &Params, key: &str) -> Result<Vec<(String, String)>, String> {
    match t.get(key) {
        Some(toml::Value::Array(rows)) => rows
            .iter()
            .map(|row| match row {
                toml::Value::Array(pair) if pair.len() == 2 => {
                    let a = pair[0].as_str().ok_or("expected string".to_string())?;
                    let b = pair[1].as_str().ok_or("expected string".to_string())?;
                    Ok((a.to_string(), b.to_string()))
                }
                _ => Err("expected [chart, domain] pairs".to_string()),
            })
            .collect(),
        _ => Err(format!("missing parameter `{key}`")),
    }
}

fn probe_frame(scene: &Scene, t: &Params) -> Result<ProbeOutput, String> {
    let a = scene.chart(p_str(t, "chart_a")?).map_err(|e| e.to_string())?;
    let b = scene.chart(p_str(t, "chart_b")?).map_err(|e| e.to_string())?;
    let u = scene.domain(p_str(t, "domain")?).map_err(|e| e.to_string())?;
    let samples = p_usize_or(t, "samples", 12)?;
    let expect = p_bool_or(t, "expect_equivalent", true)?;
    let mut ca = a.clone();
    ca.domain = u.clone();
    let mut cb = b.clone();
    cb.domain = u.clone();
    let inner = frame_equivalent(&scene.manifold, &ca, &cb, samples);
    let observed = inner.all_passed();
    let mut report = Report::new();
    if observed == expect {
        report.pass(
            "frame equivalence",
            format!("equivalent={observed}, as expected"),
        );
    } else {
        let mut w = vec![format!("observed equivalent={observed}, expected {expect}")];
        for e in &inner.entries {
            w.extend(e.witnesses.iter().take(2).cloned());
        }
        report.fail("frame equivalence", w);
    }
    Ok((report, vec![]))
}

fn probe_embedding(scene: &Scene, t: &Params, horizon: f64) -> Result<ProbeOutput, String> {
    let chart_ids = p_str_list(t, "charts")?;
    let domain_name = p_str(t, "domain")?;
    let budget = p_usize_or(t, "budget", 100)?;
    let u = scene.domain(domain_name).map_err(|e| e.to_string())?;
    let mut charts = Vec::new();
    for id in &chart_ids {
        let mut c = scene.chart(id).map_err(|e| e.to_string())?.clone();
        c.domain = u.clone();
        charts.push(c);
    }
    if charts.is_empty() {
        return Err("embedding needs at least one chart".to_string());
    }
    let frame = LocalFrame { domain: u.clone(), charts };
    let mut report = frame.validate(&scene.manifold, 10);
    if report.any_failed() {
        return Ok((report, vec![]));
    }
    let seeds = seed_grid(&scene.manifold, u, budget);
    let verdict = check_adapted(&scene.field, &frame.charts[0], u, &seeds, horizon)
        .map_err(|e| e.to_string())?;
    let oc = make_orbit_chart(&scene.field, &frame.charts[0], u, &verdict)
        .map_err(|e| format!("frame chart is not nice: {e}"))?;
    report.merge(embed_local_to_global(&scene.field, &frame, &oc, &seeds, horizon));
    Ok((report, vec![]))
}

fn probe_metrizable(scene: &Scene, t: &Params, horizon: f64) -> Result<ProbeOutput, String> {
    let budget = p_usize_or(t, "budget", 16)?;
    let coverage = p_usize_or(t, "coverage_samples", 20)?;
    let expect = p_bool_or(t, "expect", true)?;
    let (oc, verdict) =
        match build_orbit_chart(scene, p_str(t, "chart")?, p_str(t, "domain")?, budget, horizon) {
            Ok(v) => v,
            Err(e) => {
                let mut report = Report::new();
                if expect {
                    report.fail("metrizable-separable", vec![format!("no global nice chart: {e}")]);
                } else {
                    report.pass("metrizable-separable", "not established (no global nice chart)");
                }
                return Ok((report, vec![]));
            }
        };
    let _ = verdict;
    // Coverage: every sampled orbit meets the chart domain, i.e. D_U = N_v
    // in evidence.
    let probes = scene.manifold.sample_where(&DomainPredicate::everywhere(), coverage, 0x0D0);
    let mut missed = 0;
    for p in &probes {
        match oc.key_of_orbit(&scene.field, p, horizon) {
            Ok(Some(_)) => {}
            _ => missed += 1,
        }
    }
    let flag = missed == 0;
    let mut report = Report::new();
    let detail = format!(
        "global nice chart `{}`: coverage {}/{} sampled orbits",
        oc.chart.id,
        probes.len() - missed,
        probes.len()
    );
    if flag == expect {
        report.pass("metrizable-separable", format!("flag {flag}: {detail}"));
    } else {
        report.fail("metrizable-separable", vec![detail]);
    }
    report.stamp_horizon(horizon);
    Ok((report, vec![]))
}

fn probe_same_orbit(scene: &Scene, t: &Params, horizon: f64) -> Result<ProbeOutput, String> {
    let pairs = match t.get("pairs") {
        Some(toml::Value::Array(rows)) => rows.clone(),
        _ => return Err("missing `pairs` array".to_string()),
    };
    let mut report = Report::new();
    for (i, row) in pairs.iter().enumerate() {
        let table = row.as_table().ok_or("each pair must be a table")?;
        let a = p_point(table, "a")?;
        let b = p_point(table, "b")?;
        let expect = p_bool_or(table, "same", true)?;
        let v = same_orbit(&scene.field, &a, &b, horizon);
        let name = format!("same orbit {i}");
        let conf = format!("{:?}", v.confidence);
        if v.same == expect {
            report.pass(
                &name,
                format!("same={} ({conf}, min distance {:.3e})", v.same, v.min_distance),
            );
        } else {
            report.fail(
                &name,
                vec![format!(
                    "same={} expected {expect} ({conf}, min distance {:.3e})",
                    v.same, v.min_distance
                )],
            );
        }
    }
    report.stamp_horizon(horizon);
    Ok((report, vec![]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_probe_kind_is_a_fail_entry() {
        let doc = r#"
name = "tiny"
dim = 2
window = [[-1.0, 1.0], [-1.0, 1.0]]
[field]
reference = ["1", "0"]
[[charts]]
id = "reference"
forward = ["x0", "x1"]
inverse = ["x0", "x1"]
[[probes]]
name = "bogus"
kind = "does-not-exist"
"#;
        let scene = crate::scene::parse_scene(doc).unwrap();
        let report = run_checks(&scene, &RunOptions { workers: 1, ..Default::default() });
        assert_eq!(report.exit_code, 1);
        assert_eq!(report.checks.len(), 1);
        assert_eq!(report.checks[0].verdict, Verdict::Fail);
    }

    #[test]
    fn selection_filters_probes() {
        let doc = r#"
name = "tiny"
dim = 2
window = [[-1.0, 1.0], [-1.0, 1.0]]
[field]
reference = ["1", "0"]
[[charts]]
id = "reference"
forward = ["x0", "x1"]
inverse = ["x0", "x1"]
[[probes]]
name = "rev"
kind = "reversibility"
count = 3
s = 0.2
[[probes]]
name = "bogus"
kind = "does-not-exist"
"#;
        let scene = crate::scene::parse_scene(doc).unwrap();
        let opts = RunOptions { selection: vec!["rev".into()], workers: 1, ..Default::default() };
        let report = run_checks(&scene, &opts);
        assert_eq!(report.exit_code, 0, "{report:?}");
        assert!(report.checks.iter().all(|c| c.name.starts_with("rev/")));
    }
}
