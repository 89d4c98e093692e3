//! Chart properties along the flow: fiber alignment (v = f d_0), the
//! straightening reparametrization of the time coordinate, product-form
//! domains, adaptedness and niceness verdicts, return-set isolation, domain
//! shrinking, and the pointwise normality probe.

use std::sync::Arc;

use crate::atlas::{
    spatial_project_raw, AtlasError, Chart, ChartMap, Coordinates, DomainPredicate, ManifoldModel,
    PointRef, ScalarField,
};
use crate::expr::{BinOp, Expr};
use crate::flow::{
    flow_point, interval_set, orbit_polyline, FlowError, IntervalSet, VectorFieldModel,
};
use crate::numerics;
use crate::orbit_space::{same_orbit, OrbitIdentity};
use crate::report::Report;

#[derive(Debug, Clone, thiserror::Error)]
pub enum AdaptError {
    #[error("chart is not fiber-aligned (worst spatial component {0:.3e})")]
    NotAligned(f64),
    #[error("f changes sign or falls below the singularity threshold in the construction box")]
    ZeroOfF,
    #[error("time-reparametrization quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("return set is not isolated at the working horizon (min gap {0:.3e})")]
    IsolationUnavailable(f64),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
}

/// Result of the v = f d_0 test in a chart.
#[derive(Debug, Clone)]
pub struct FiberAlignment {
    pub aligned: bool,
    /// Sampled values of f = v'^0, keyed by chart-coordinate points.
    pub f_samples: Vec<(PointRef, f64)>,
    pub worst_spatial_component: f64,
}

/// Push the field into chart coordinates on a sampled grid; aligned iff all
/// spatial components stay below tol_field.
pub fn check_fiber_aligned(
    vf: &VectorFieldModel,
    chart: &Chart,
) -> Result<FiberAlignment, AdaptError> {
    let m = &vf.manifold;
    let points = m.sample_where(&chart.domain, 24, 0xA11);
    let mut worst = 0.0_f64;
    let mut f_samples = Vec::new();
    for p in &points {
        let v = vf.components_in_chart(chart, p)?;
        for c in &v[1..] {
            worst = worst.max(c.abs());
        }
        let y = chart.forward(p)?;
        f_samples.push((
            PointRef { chart: chart.id.clone(), coords: Coordinates(y) },
            v[0],
        ));
    }
    Ok(FiberAlignment {
        aligned: worst < m.tols.tol_field,
        f_samples,
        worst_spatial_component: worst,
    })
}

/// Build the chart that replaces y^0 by the integral of 1/f along the fiber
/// (the straightening construction). The domain is the coordinate box of
/// the given radius around the chart image of X.
pub fn build_straightening(
    vf: &VectorFieldModel,
    chart: &Chart,
    x: &PointRef,
    radius: f64,
) -> Result<Chart, AdaptError> {
    let m = &vf.manifold;
    let alignment = check_fiber_aligned(vf, chart)?;
    if !alignment.aligned {
        return Err(AdaptError::NotAligned(alignment.worst_spatial_component));
    }
    let x_ref = m.to_reference(x)?;
    let anchor = chart.forward(&x_ref)?;
    let field = vf.components.get(&m.reference.id).cloned().unwrap_or_default();

    // f must keep one sign with margin over the whole box: 64 samples per
    // axis line through the anchor plus a low-discrepancy fill.
    let mut probes: Vec<Vec<f64>> = Vec::new();
    for axis in 0..m.dim {
        for k in 0..64 {
            let mut y = anchor.clone();
            y[axis] += radius * (2.0 * k as f64 / 63.0 - 1.0);
            probes.push(y);
        }
    }
    let mut seq = numerics::KroneckerSeq::new(m.dim, 0xF00D);
    for _ in 0..256 {
        let t = seq.next_point();
        let y: Vec<f64> = anchor
            .iter()
            .zip(&t)
            .map(|(a, ti)| a + radius * (2.0 * ti - 1.0))
            .collect();
        probes.push(y);
    }
    let mut sign = 0.0_f64;
    for y in &probes {
        let f = match crate::atlas::reparam_f(chart, &field, vf.speed_limited, y) {
            Ok(f) => f,
            Err(_) => continue, // probe fell off the chart; box edge
        };
        if f.abs() <= m.tols.tol_sing {
            return Err(AdaptError::ZeroOfF);
        }
        if sign == 0.0 {
            sign = f.signum();
        } else if f.signum() != sign {
            return Err(AdaptError::ZeroOfF);
        }
    }
    if sign == 0.0 {
        return Err(AdaptError::ZeroOfF);
    }

    let base = Arc::new(chart.clone());
    let mut conjuncts = Vec::with_capacity(m.dim);
    for mu in 0..m.dim {
        // radius^2 - (y_mu - anchor_mu)^2 > 0
        let delta = Expr::bin(
            BinOp::Sub,
            Expr::var(&format!("x{mu}")),
            Expr::lit(anchor[mu]),
        );
        let e = Expr::bin(
            BinOp::Sub,
            Expr::lit(radius * radius),
            Expr::bin(BinOp::Pow, delta, Expr::lit(2.0)),
        );
        conjuncts.push(ScalarField::ChartExpr { chart: base.clone(), expr: e });
    }
    Ok(Chart {
        id: format!("{}-straightened", chart.id),
        dim: m.dim,
        map: ChartMap::TimeReparam {
            base,
            field,
            limited: vf.speed_limited,
            anchor,
            radius,
        },
        domain: DomainPredicate { disjuncts: vec![conjuncts] },
    })
}

/// Check that the chart image of U is a union of slices I_x x {x}: every
/// sampled spatial value has a single-interval s-slice.
pub fn check_product_form(
    m: &ManifoldModel,
    chart: &Chart,
    u: &DomainPredicate,
    grid: usize,
) -> Report {
    let mut report = Report::new();
    let inside = m.sample_where(u, 200, 0xB0C5);
    if inside.is_empty() {
        report.inconclusive("product form", "no sample points found inside the domain");
        return report;
    }
    let mut images = Vec::new();
    for p in &inside {
        if let Ok(y) = chart.forward(p) {
            images.push(y);
        }
    }
    if images.is_empty() {
        report.inconclusive("product form", "chart image of the domain is empty");
        return report;
    }
    let dim = m.dim;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for y in &images {
        for i in 0..dim {
            lo[i] = lo[i].min(y[i]);
            hi[i] = hi[i].max(y[i]);
        }
    }
    // Pad the s-range so slices are scanned past their endpoints.
    let s_pad = 0.1 * (hi[0] - lo[0]).max(1e-6);
    let (s_lo, s_hi) = (lo[0] - s_pad, hi[0] + s_pad);
    let s_steps = (grid * 8).max(64);

    let member = |s: f64, x: &[f64]| -> bool {
        let mut y = Vec::with_capacity(dim);
        y.push(s);
        y.extend_from_slice(x);
        match chart.inverse(&y) {
            Ok(p) => u.contains(&p) && chart.domain.contains(&p),
            Err(_) => false,
        }
    };

    // Spatial grid over the sampled bounding box.
    let spatial_dim = dim - 1;
    let per_axis = grid.max(2);
    let mut witnesses = Vec::new();
    let mut slices_checked = 0usize;
    let total = per_axis.pow(spatial_dim as u32).min(4096);
    for flat in 0..total {
        let mut idx = flat;
        let mut x = Vec::with_capacity(spatial_dim);
        for j in 0..spatial_dim {
            let k = idx % per_axis;
            idx /= per_axis;
            let t = (k as f64 + 0.5) / per_axis as f64;
            x.push(lo[j + 1] + t * (hi[j + 1] - lo[j + 1]));
        }
        let mut runs = 0;
        let mut prev_in = false;
        let mut run_bounds: Vec<(f64, f64)> = Vec::new();
        for k in 0..=s_steps {
            let s = s_lo + (s_hi - s_lo) * k as f64 / s_steps as f64;
            let now_in = member(s, &x);
            if now_in && !prev_in {
                runs += 1;
                run_bounds.push((s, s));
            } else if now_in {
                if let Some(last) = run_bounds.last_mut() {
                    last.1 = s;
                }
            }
            prev_in = now_in;
        }
        if runs == 0 {
            continue;
        }
        slices_checked += 1;
        if runs > 1 {
            witnesses.push(format!("x = {:?}: {} slice intervals {:?}", x, runs, run_bounds));
        }
    }
    if slices_checked == 0 {
        report.inconclusive("product form", "no nonempty slices met the spatial grid");
    } else if witnesses.is_empty() {
        report.pass("product form", format!("{slices_checked} slices, all single intervals"));
    } else {
        witnesses.truncate(5);
        report.fail("product form", witnesses);
    }
    report
}

/// Deterministic seed grid: ceil(budget^(1/dim)) points per window axis,
/// kept when they satisfy the domain (and the model).
pub fn seed_grid(m: &ManifoldModel, u: &DomainPredicate, budget: usize) -> Vec<Vec<f64>> {
    let per_axis = (budget as f64).powf(1.0 / m.dim as f64).ceil() as usize;
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(m.dim as u32);
    let mut out = Vec::new();
    for flat in 0..total {
        let mut idx = flat;
        let mut p = Vec::with_capacity(m.dim);
        for (lo, hi) in &m.window {
            let k = idx % per_axis;
            idx /= per_axis;
            let t = (k as f64 + 0.5) / per_axis as f64;
            p.push(lo + t * (hi - lo));
        }
        if m.in_model(&p) && u.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Adaptedness / niceness verdict over the sampled orbits.
#[derive(Debug, Clone)]
pub struct AdaptedVerdict {
    pub adapted: bool,
    pub nice: bool,
    /// Human-readable witnesses of failures (seed plus offending pair).
    pub witnesses: Vec<String>,
    /// One representative (seed, constant spatial value) per orbit,
    /// populated when adapted.
    pub bar_values: Vec<(PointRef, Vec<f64>)>,
    pub periodic_detected: bool,
}

/// Definition-level detector: the spatial projection of the chart image is
/// constant on every sampled orbit arc; nice additionally requires distinct
/// orbits to carry distinct values.
pub fn check_adapted(
    vf: &VectorFieldModel,
    chart: &Chart,
    u: &DomainPredicate,
    seeds: &[Vec<f64>],
    horizon: f64,
) -> Result<AdaptedVerdict, AdaptError> {
    let m = &vf.manifold;
    let tol = m.tols.tol_check;
    let mut witnesses = Vec::new();
    let mut adapted = true;
    let mut periodic_detected = false;

    struct OrbitRecord {
        seed: Vec<f64>,
        x_value: Vec<f64>,
    }
    let mut records: Vec<OrbitRecord> = Vec::new();

    for seed in seeds {
        let pr = PointRef { chart: m.reference.id.clone(), coords: Coordinates(seed.clone()) };
        let iset = interval_set(vf, &pr, u, horizon)?;
        if iset.components.is_empty() {
            continue;
        }
        if !vf.declared.orbits_non_periodic && !periodic_detected {
            let probe = orbit_polyline(vf, &pr, horizon.min(m.tols.s_max), 256)?;
            if probe.periodic.is_some() {
                periodic_detected = true;
            }
        }
        let mut per_orbit: Vec<Vec<f64>> = Vec::new();
        for comp in &iset.components {
            let len = comp.b - comp.a;
            let eps = (0.02 * len).min(1e-4).max(10.0 * m.tols.tol_event);
            for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let s = (comp.a + eps).max(comp.a + frac * len).min(comp.b - eps);
                let p = match flow_point(vf, seed, s) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                if !u.contains(&p) {
                    continue;
                }
                let y = chart.forward(&p)?;
                per_orbit.push(spatial_project_raw(&y));
            }
        }
        if per_orbit.is_empty() {
            continue;
        }
        let mut spread = 0.0_f64;
        let mut pair = (0, 0);
        for i in 0..per_orbit.len() {
            for j in i + 1..per_orbit.len() {
                let d = numerics::inf_dist(&per_orbit[i], &per_orbit[j]);
                if d > spread {
                    spread = d;
                    pair = (i, j);
                }
            }
        }
        if spread > tol {
            adapted = false;
            witnesses.push(format!(
                "orbit through {:?} carries x = {:?} and x = {:?} (spread {:.3e})",
                seed, per_orbit[pair.0], per_orbit[pair.1], spread
            ));
        } else {
            records.push(OrbitRecord { seed: seed.clone(), x_value: per_orbit[0].clone() });
        }
    }

    // Niceness: collisions in x filtered first, then confirmed by orbit
    // reachability.
    let mut nice = adapted;
    let mut bar_values: Vec<(PointRef, Vec<f64>)> = Vec::new();
    if adapted {
        let mut used = vec![false; records.len()];
        for i in 0..records.len() {
            if used[i] {
                continue;
            }
            for j in i + 1..records.len() {
                if used[j] {
                    continue;
                }
                if numerics::inf_dist(&records[i].x_value, &records[j].x_value) < tol {
                    let verdict = same_orbit(vf, &records[i].seed, &records[j].seed, horizon);
                    if verdict.same {
                        used[j] = true; // one orbit seen from two seeds
                    } else if verdict.confidence == OrbitIdentity::Proven {
                        // cannot happen: Proven is only returned with same=true
                    } else {
                        nice = false;
                        witnesses.push(format!(
                            "distinct orbits through {:?} and {:?} share x = {:?} \
                             (not connected within horizon {horizon})",
                            records[i].seed, records[j].seed, records[i].x_value
                        ));
                    }
                }
            }
        }
        for (i, r) in records.iter().enumerate() {
            if !used[i] {
                bar_values.push((
                    PointRef { chart: m.reference.id.clone(), coords: Coordinates(r.seed.clone()) },
                    r.x_value.clone(),
                ));
            }
        }
    }

    Ok(AdaptedVerdict { adapted, nice, witnesses, bar_values, periodic_detected })
}

/// Slice-form detector for fiber-aligned charts on product-form domains:
/// the orbit image is a single slice iff its parameter set has exactly one
/// component. Agrees with `check_adapted` there (the two detectors are
/// compared on every gallery scene).
pub fn adapted_by_slice_criterion(
    vf: &VectorFieldModel,
    chart: &Chart,
    u: &DomainPredicate,
    seeds: &[Vec<f64>],
    horizon: f64,
) -> Result<bool, AdaptError> {
    let alignment = check_fiber_aligned(vf, chart)?;
    if !alignment.aligned {
        return Err(AdaptError::NotAligned(alignment.worst_spatial_component));
    }
    let m = &vf.manifold;
    for seed in seeds {
        let pr = PointRef { chart: m.reference.id.clone(), coords: Coordinates(seed.clone()) };
        let iset = interval_set(vf, &pr, u, horizon)?;
        if iset.components.len() > 1 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The set E of spatial values where an orbit pierces a straightened chart.
#[derive(Debug, Clone)]
pub struct ReturnSet {
    pub chart: String,
    pub orbit_seed: PointRef,
    pub x_values: Vec<Vec<f64>>,
    /// Smallest pairwise distance among the piercing values; infinity for a
    /// single return.
    pub min_gap: f64,
    pub isolation_evidence: bool,
    pub horizon: f64,
}

/// Collect the spatial chart values of every arc of the orbit through X
/// inside the chart domain, within the horizon.
pub fn return_set_probe(
    vf: &VectorFieldModel,
    straight_chart: &Chart,
    x: &PointRef,
    horizon: f64,
) -> Result<ReturnSet, AdaptError> {
    let m = &vf.manifold;
    let x_ref = m.to_reference(x)?;
    let pr = PointRef { chart: m.reference.id.clone(), coords: Coordinates(x_ref.clone()) };
    let iset: IntervalSet = interval_set(vf, &pr, &straight_chart.domain, horizon)?;
    let periods = vf.periods_or_none();
    let spatial_period: Vec<Option<f64>> = periods[1..].to_vec();

    let mut values: Vec<Vec<f64>> = Vec::new();
    for comp in &iset.components {
        let s_mid = 0.5 * (comp.a + comp.b);
        let p = match flow_point(vf, &x_ref, s_mid) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let y = match straight_chart.forward(&p) {
            Ok(y) => y,
            Err(_) => continue,
        };
        let mut xv = spatial_project_raw(&y);
        // Identified scenes: reduce spatial values modulo the period so
        // wrap counts do not split one section value into many.
        for (v, per) in xv.iter_mut().zip(&spatial_period) {
            if let Some(t) = per {
                *v = v.rem_euclid(*t);
            }
        }
        values.push(xv);
    }
    // Dedupe at check resolution (circularly on identified axes).
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(&spatial_period)
            .map(|((x, y), per)| {
                let d = (x - y).abs();
                match per {
                    Some(t) => d.min(t - d.rem_euclid(*t)).min(d.rem_euclid(*t)),
                    None => d,
                }
            })
            .fold(0.0, f64::max)
    };
    let mut dedup: Vec<Vec<f64>> = Vec::new();
    for v in values {
        if dedup.iter().all(|w| dist(w, &v) > m.tols.tol_check) {
            dedup.push(v);
        }
    }
    let mut min_gap = f64::INFINITY;
    for i in 0..dedup.len() {
        for j in i + 1..dedup.len() {
            min_gap = min_gap.min(dist(&dedup[i], &dedup[j]));
        }
    }
    let isolation_evidence = min_gap > 10.0 * m.tols.tol_check;
    Ok(ReturnSet {
        chart: straight_chart.id.clone(),
        orbit_seed: pr,
        x_values: dedup,
        min_gap,
        isolation_evidence,
        horizon,
    })
}

/// Shrink the chart domain to a product-form subdomain whose spatial factor
/// is a ball of radius min_gap/3 around the orbit's own value, then verify
/// at an extended horizon that no further return invades the ball.
pub fn shrink_to_isolate(
    vf: &VectorFieldModel,
    straight_chart: &Chart,
    x: &PointRef,
    rs: &ReturnSet,
) -> Result<DomainPredicate, AdaptError> {
    let m = &vf.manifold;
    if !rs.isolation_evidence {
        return Err(AdaptError::IsolationUnavailable(rs.min_gap));
    }
    let x_ref = m.to_reference(x)?;
    let y = straight_chart.forward(&x_ref)?;
    let home = spatial_project_raw(&y);

    let shrunk = if rs.min_gap.is_finite() {
        let radius = rs.min_gap / 3.0;
        let ball = spatial_ball_conjunct(straight_chart, &home, radius);
        straight_chart.domain.intersect_with(vec![ball])
    } else {
        // Single return: the full spatial factor already isolates.
        straight_chart.domain.clone()
    };

    // Returns accumulate only slowly for quasi-periodic flows; re-probe at
    // an extended horizon before certifying the shrunk domain.
    let extended = (rs.horizon * 8.0).min(m.tols.s_max);
    if extended > rs.horizon {
        let recheck = return_set_probe(vf, straight_chart, x, extended)?;
        let radius = if rs.min_gap.is_finite() { rs.min_gap / 3.0 } else { f64::INFINITY };
        let invaders = recheck
            .x_values
            .iter()
            .filter(|v| {
                let d = numerics::inf_dist(v, &home);
                d > m.tols.tol_check && d < radius
            })
            .count();
        if invaders > 0 {
            return Err(AdaptError::IsolationUnavailable(recheck.min_gap));
        }
    }
    Ok(shrunk)
}

/// radius^2 - |x_spatial - center|^2 > 0 over the chart coordinates.
fn spatial_ball_conjunct(chart: &Chart, center: &[f64], radius: f64) -> ScalarField {
    let mut sum = Expr::lit(radius * radius);
    for (j, c) in center.iter().enumerate() {
        let delta = Expr::bin(BinOp::Sub, Expr::var(&format!("x{}", j + 1)), Expr::lit(*c));
        sum = Expr::bin(BinOp::Sub, sum, Expr::bin(BinOp::Pow, delta, Expr::lit(2.0)));
    }
    ScalarField::ChartExpr { chart: Arc::new(chart.clone()), expr: sum }
}

/// Per-point normality evidence: non-periodic closed-orbit behaviour
/// (isolated returns), a flow-box straightening chart, and a shrunk
/// product-form domain on which the chart is adapted and nice.
pub fn normality_probe(vf: &VectorFieldModel, points: &[Vec<f64>], budget: usize) -> Report {
    let mut report = Report::new();
    let m = &vf.manifold;
    let horizon = (0.25 * m.tols.s_max).max(10.0).min(50.0);

    if !vf.declared.non_vanishing {
        report.inconclusive(
            "normality",
            "scene does not declare a non-vanishing field; probe skipped",
        );
        return report;
    }

    for (idx, x) in points.iter().enumerate() {
        let name = format!("normality probe {idx}");
        match probe_point(vf, x, budget, horizon) {
            Ok(ProbeVerdict::NormalEvidence(detail)) => report.pass(&name, detail),
            Ok(ProbeVerdict::Counterexample(w)) => report.fail(&name, vec![w]),
            Ok(ProbeVerdict::Inconclusive(detail)) => report.inconclusive(&name, detail),
            Err(e) => report.inconclusive(&name, format!("probe aborted: {e}")),
        }
    }
    report.stamp_horizon(horizon);
    report
}

enum ProbeVerdict {
    NormalEvidence(String),
    Counterexample(String),
    Inconclusive(String),
}

fn probe_point(
    vf: &VectorFieldModel,
    x: &[f64],
    budget: usize,
    horizon: f64,
) -> Result<ProbeVerdict, AdaptError> {
    let m = &vf.manifold;
    if !m.in_model(x) {
        return Ok(ProbeVerdict::Inconclusive("probe point outside the model".into()));
    }
    let v0 = vf.eval_reference(x)?;
    let speed: f64 = v0.iter().map(|c| c * c).sum::<f64>().sqrt();
    if speed <= m.tols.tol_sing {
        return Ok(ProbeVerdict::Counterexample(format!(
            "field vanishes at probe point {x:?} (|v| = {speed:.3e})"
        )));
    }

    // Periodic orbits violate the non-periodicity assumption outright.
    let pr = PointRef { chart: m.reference.id.clone(), coords: Coordinates(x.to_vec()) };
    let orbit = orbit_polyline(vf, &pr, horizon, 256)?;
    if let Some(period) = orbit.periodic {
        return Ok(ProbeVerdict::Counterexample(format!(
            "assumption violated: F_X periodic with period {period:.7}"
        )));
    }

    let chart = flow_box_chart(vf, x, &v0)?;

    // (a) return accumulation across sub-horizons.
    let mut gaps = Vec::new();
    for h in [horizon / 4.0, horizon / 2.0, horizon] {
        let rs = return_set_probe(vf, &chart, &pr, h)?;
        gaps.push(rs.min_gap);
    }
    let accumulating = gaps
        .windows(2)
        .all(|w| w[1].is_finite() && (w[0] / w[1] >= 1.0 || !w[0].is_finite()))
        && gaps[0].is_finite()
        && gaps[0] / gaps[2] >= 1.5;
    if accumulating {
        return Ok(ProbeVerdict::Inconclusive(format!(
            "returns accumulate: min gaps {gaps:?} across horizons"
        )));
    }

    // (b) isolate and re-check adaptedness on the shrunk domain.
    let rs = return_set_probe(vf, &chart, &pr, horizon)?;
    let shrunk = match shrink_to_isolate(vf, &chart, &pr, &rs) {
        Ok(d) => d,
        Err(AdaptError::IsolationUnavailable(g)) => {
            return Ok(ProbeVerdict::Inconclusive(format!(
                "isolation unavailable at horizon {horizon} (min gap {g:.3e})"
            )))
        }
        Err(e) => return Err(e),
    };
    let seeds = flow_box_seeds(&chart, budget)?;
    let verdict = check_adapted(vf, &chart, &shrunk, &seeds, horizon)?;
    if verdict.adapted && verdict.nice {
        Ok(ProbeVerdict::NormalEvidence(format!(
            "straightening chart with isolated returns; {} orbits adapted and nice",
            verdict.bar_values.len()
        )))
    } else {
        Ok(ProbeVerdict::Counterexample(
            verdict
                .witnesses
                .first()
                .cloned()
                .unwrap_or_else(|| "adaptedness failed on the shrunk domain".into()),
        ))
    }
}

/// Flow-box chart at x: coordinates (s, xi) with the section spanned by the
/// axes least aligned with v(x).
pub fn flow_box_chart(
    vf: &VectorFieldModel,
    x: &[f64],
    v0: &[f64],
) -> Result<Chart, AdaptError> {
    let n = x.len();
    let speed: f64 = v0.iter().map(|c| c * c).sum::<f64>().sqrt();
    let unit: Vec<f64> = v0.iter().map(|c| c / speed).collect();
    // Gram-Schmidt the coordinate axes against v, keep the n-1 strongest.
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    for axis in 0..n {
        let mut e = vec![0.0; n];
        e[axis] = 1.0;
        let dot: f64 = e.iter().zip(&unit).map(|(a, b)| a * b).sum();
        let mut r: Vec<f64> = e.iter().zip(&unit).map(|(a, b)| a - dot * b).collect();
        let norm: f64 = r.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for c in &mut r {
                *c /= norm;
            }
            candidates.push((norm, r));
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut frame = vec![v0.to_vec()];
    // Orthonormalize the retained section vectors among themselves.
    let mut section: Vec<Vec<f64>> = Vec::new();
    for (_, mut r) in candidates {
        for s in &section {
            let dot: f64 = r.iter().zip(s).map(|(a, b)| a * b).sum();
            for (ri, si) in r.iter_mut().zip(s) {
                *ri -= dot * si;
            }
        }
        let norm: f64 = r.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for c in &mut r {
                *c /= norm;
            }
            section.push(r);
        }
        if section.len() == n - 1 {
            break;
        }
    }
    if section.len() != n - 1 {
        return Err(AdaptError::Atlas(AtlasError::MapSolveFailed));
    }
    frame.extend(section);

    let field = vf.components.get(&vf.manifold.reference.id).cloned().unwrap_or_default();
    let s_half = (0.35 / speed.max(0.35)).min(0.5);
    let xi_half = 0.3;
    let mut chart = Chart {
        id: format!("flow-box@{x:?}"),
        dim: n,
        map: ChartMap::FlowBox {
            field,
            limited: vf.speed_limited,
            periods: vf.periods_or_none(),
            anchor: x.to_vec(),
            frame,
            s_half,
            xi_half,
        },
        domain: DomainPredicate::everywhere(),
    };
    // Domain: the open coordinate box, described through the chart itself.
    let shared = Arc::new(chart.clone());
    let mut conjuncts = Vec::with_capacity(n);
    for mu in 0..n {
        let half = if mu == 0 { s_half } else { xi_half };
        let e = Expr::bin(
            BinOp::Sub,
            Expr::lit(half * half),
            Expr::bin(BinOp::Pow, Expr::var(&format!("x{mu}")), Expr::lit(2.0)),
        );
        conjuncts.push(ScalarField::ChartExpr { chart: shared.clone(), expr: e });
    }
    chart.domain = DomainPredicate { disjuncts: vec![conjuncts] };
    Ok(chart)
}

/// Seeds for adaptedness checks in a flow-box chart: a chart-coordinate
/// grid mapped through the inverse (cheap), rather than rejection sampling
/// the window against a Newton-solved membership test.
fn flow_box_seeds(chart: &Chart, budget: usize) -> Result<Vec<Vec<f64>>, AdaptError> {
    let (s_half, xi_half, dim) = match &chart.map {
        ChartMap::FlowBox { s_half, xi_half, anchor, .. } => (*s_half, *xi_half, anchor.len()),
        _ => return Err(AdaptError::Atlas(AtlasError::MapSolveFailed)),
    };
    let per_axis = (budget as f64).powf(1.0 / dim as f64).ceil().max(2.0) as usize;
    let mut out = Vec::new();
    let total = per_axis.pow(dim as u32);
    for flat in 0..total {
        let mut idx = flat;
        let mut y = Vec::with_capacity(dim);
        for mu in 0..dim {
            let half = if mu == 0 { s_half } else { xi_half };
            let k = idx % per_axis;
            idx /= per_axis;
            let t = (k as f64 + 0.5) / per_axis as f64;
            y.push(-0.8 * half + 1.6 * half * t);
        }
        if let Ok(p) = chart.inverse(&y) {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::tolerances::Tolerances;
    use std::sync::Arc as StdArc;

    fn plane_model() -> StdArc<ManifoldModel> {
        StdArc::new(ManifoldModel {
            dim: 2,
            reference: Chart::identity("reference", 2, DomainPredicate::everywhere()),
            atlas: vec![],
            window: vec![(-3.0, 3.0), (-3.0, 3.0)],
            tols: Tolerances::default(),
        })
    }

    fn constant_field() -> VectorFieldModel {
        VectorFieldModel::new(plane_model(), vec![parse("1").unwrap(), parse("0").unwrap()])
    }

    #[test]
    fn constant_field_is_aligned_in_identity_chart() {
        let vf = constant_field();
        let chart = Chart::identity("reference", 2, DomainPredicate::everywhere());
        let a = check_fiber_aligned(&vf, &chart).unwrap();
        assert!(a.aligned);
        assert!(a.f_samples.iter().all(|(_, f)| (f - 1.0).abs() < 1e-12));
    }

    #[test]
    fn sheared_chart_is_not_aligned() {
        let vf = constant_field();
        let chart = Chart::analytic(
            "shear",
            2,
            vec![parse("x0").unwrap(), parse("x1 - x0").unwrap()],
            vec![parse("x0").unwrap(), parse("x1 + x0").unwrap()],
            DomainPredicate::everywhere(),
        );
        let a = check_fiber_aligned(&vf, &chart).unwrap();
        assert!(!a.aligned);
        assert!((a.worst_spatial_component - 1.0).abs() < 1e-9);
    }

    #[test]
    fn straightening_constant_f() {
        // f = 2: the new time coordinate is (y0 - x0)/2.
        let vf = VectorFieldModel::new(plane_model(), vec![parse("2").unwrap(), parse("0").unwrap()]);
        let chart = Chart::identity("reference", 2, DomainPredicate::everywhere());
        let x = PointRef::new("reference", vec![0.0, 0.0]).unwrap();
        let st = build_straightening(&vf, &chart, &x, 1.0).unwrap();
        let y = st.forward(&[0.5, 0.1]).unwrap();
        assert!((y[0] - 0.25).abs() < 1e-10, "{y:?}");
        assert!((y[1] - 0.1).abs() < 1e-12);
        let back = st.inverse(&y).unwrap();
        assert!(numerics::inf_dist(&back, &[0.5, 0.1]) < 1e-9);
    }

    #[test]
    fn straightening_atan_profile() {
        let vf = VectorFieldModel::new(
            plane_model(),
            vec![parse("1 + x0^2").unwrap(), parse("0").unwrap()],
        );
        let chart = Chart::identity("reference", 2, DomainPredicate::everywhere());
        let x = PointRef::new("reference", vec![0.0, 0.0]).unwrap();
        let st = build_straightening(&vf, &chart, &x, 0.9).unwrap();
        for k in 0..20 {
            let y0 = -0.85 + 1.7 * k as f64 / 19.0;
            let y = st.forward(&[y0, 0.3]).unwrap();
            assert!((y[0] - y0.atan()).abs() < 1e-9, "y0={y0} got {}", y[0]);
        }
        // Pushed-forward field is (1, 0) in the new chart.
        let v = vf.components_in_chart(&st, &[0.4, 0.2]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-6, "{v:?}");
        assert!(v[1].abs() < 1e-6);
    }

    #[test]
    fn straightening_rejects_sign_change() {
        let vf =
            VectorFieldModel::new(plane_model(), vec![parse("x0").unwrap(), parse("0").unwrap()]);
        let chart = Chart::identity("reference", 2, DomainPredicate::everywhere());
        let x = PointRef::new("reference", vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            build_straightening(&vf, &chart, &x, 0.5),
            Err(AdaptError::ZeroOfF)
        ));
    }

    #[test]
    fn product_form_box_vs_annulus() {
        let m = plane_model();
        let chart = Chart::identity("reference", 2, DomainPredicate::everywhere());
        let boxd = DomainPredicate::from_conjuncts(vec![
            parse("1 - x0^2").unwrap(),
            parse("1 - x1^2").unwrap(),
        ]);
        assert!(check_product_form(&m, &chart, &boxd, 8).all_passed());

        let annulus = DomainPredicate::from_conjuncts(vec![
            parse("x0^2 + x1^2 - 0.25").unwrap(),
            parse("1 - x0^2 - x1^2").unwrap(),
        ]);
        assert!(check_product_form(&m, &chart, &annulus, 8).any_failed());

        let star = DomainPredicate::from_conjuncts(vec![parse("1 + x1^2 - x0^2").unwrap()]);
        assert!(check_product_form(&m, &chart, &star, 8).all_passed());
    }

    #[test]
    fn adapted_identity_vs_shear() {
        let vf = constant_field();
        let boxd = DomainPredicate::from_conjuncts(vec![
            parse("1 - x0^2").unwrap(),
            parse("1 - x1^2").unwrap(),
        ]);
        let seeds = seed_grid(&vf.manifold, &boxd, 16);
        assert!(!seeds.is_empty());

        let id = Chart::identity("reference", 2, DomainPredicate::everywhere());
        let v = check_adapted(&vf, &id, &boxd, &seeds, 20.0).unwrap();
        assert!(v.adapted && v.nice, "{:?}", v.witnesses);

        let shear = Chart::analytic(
            "shear",
            2,
            vec![parse("x0").unwrap(), parse("x1 - x0").unwrap()],
            vec![parse("x0").unwrap(), parse("x1 + x0").unwrap()],
            DomainPredicate::everywhere(),
        );
        let v = check_adapted(&vf, &shear, &boxd, &seeds, 20.0).unwrap();
        assert!(!v.adapted);
    }

    #[test]
    fn return_set_single_for_constant_field() {
        let vf = constant_field();
        let chart = Chart::identity(
            "boxchart",
            2,
            DomainPredicate::from_conjuncts(vec![
                parse("1 - x0^2").unwrap(),
                parse("1 - x1^2").unwrap(),
            ]),
        );
        let x = PointRef::new("reference", vec![0.0, 0.25]).unwrap();
        let rs = return_set_probe(&vf, &chart, &x, 20.0).unwrap();
        assert_eq!(rs.x_values.len(), 1);
        assert!(rs.min_gap.is_infinite());
        assert!(rs.isolation_evidence);
        let shrunk = shrink_to_isolate(&vf, &chart, &x, &rs).unwrap();
        assert!(shrunk.contains(&[0.0, 0.25]));
    }
}
