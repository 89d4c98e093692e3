//! The space of orbits as a chart-described quotient: orbit identity by
//! flow reachability, orbit charts from nice adapted charts, transitions
//! through the flow, separation probes, local frames, and the embedding of
//! a frame's space manifold into the orbit space.

use crate::adapt::AdaptedVerdict;
use crate::atlas::{
    spatial_project_raw, transition_jacobian, AtlasError, Chart, Coordinates, DomainPredicate,
    ManifoldModel, PointRef,
};
use crate::flow::{flow_point, interval_set, orbit_polyline, FlowError, VectorFieldModel};
use crate::numerics;
use crate::report::Report;

#[derive(Debug, Clone, thiserror::Error)]
pub enum QuotientError {
    #[error("chart is not certified nice; orbit chart construction refused")]
    NotNice,
    #[error("the lifted orbit does not meet the target chart domain within the horizon")]
    OrbitMissesTarget,
    #[error("lift point lies outside the source orbit-chart domain")]
    LiftOutsideDomain,
    #[error("frame hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
}

/// How a sameness verdict was reached. False verdicts are always
/// horizon-qualified: the orbit may connect beyond the searched range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrbitIdentity {
    Proven,
    UnreachedWithinHorizon,
}

#[derive(Debug, Clone)]
pub struct SameOrbitVerdict {
    pub same: bool,
    pub confidence: OrbitIdentity,
    /// Parameter at which the orbit through X reaches Y, when proven.
    pub s_hit: Option<f64>,
    pub min_distance: f64,
}

/// Does the orbit through X reach Y within the horizon (both directions)?
pub fn same_orbit(
    vf: &VectorFieldModel,
    x: &[f64],
    y: &[f64],
    horizon: f64,
) -> SameOrbitVerdict {
    let tols = vf.manifold.tols;
    let seed = PointRef {
        chart: vf.manifold.reference.id.clone(),
        coords: Coordinates(x.to_vec()),
    };
    let y_wrapped = vf.wrap(y);
    if vf.wrapped_dist(&vf.wrap(x), &y_wrapped) < tols.tol_orbit {
        return SameOrbitVerdict {
            same: true,
            confidence: OrbitIdentity::Proven,
            s_hit: Some(0.0),
            min_distance: 0.0,
        };
    }
    let orbit = match orbit_polyline(vf, &seed, horizon, 4096) {
        Ok(o) => o,
        Err(_) => {
            return SameOrbitVerdict {
                same: false,
                confidence: OrbitIdentity::UnreachedWithinHorizon,
                s_hit: None,
                min_distance: f64::INFINITY,
            }
        }
    };
    let mut best = (f64::INFINITY, 0.0_f64);
    for (s, p) in &orbit.samples {
        let d = vf.wrapped_dist(p, &y_wrapped);
        if d < best.0 {
            best = (d, *s);
        }
    }
    // Refine around the best sample.
    let idx = orbit.samples.iter().position(|(s, _)| *s == best.1).unwrap_or(0);
    let lo = if idx > 0 { orbit.samples[idx - 1].0 } else { best.1 };
    let hi = if idx + 1 < orbit.samples.len() { orbit.samples[idx + 1].0 } else { best.1 };
    let (s_min, d_min) = if hi > lo {
        numerics::golden_min(
            |s| match flow_point(vf, x, s) {
                Ok(p) => vf.wrapped_dist(&vf.wrap(&p), &y_wrapped),
                Err(_) => f64::INFINITY,
            },
            lo,
            hi,
            tols.tol_event,
        )
    } else {
        (best.1, best.0)
    };
    let (d_min, s_min) = if d_min <= best.0 { (d_min, s_min) } else { (best.0, best.1) };
    if d_min < tols.tol_orbit {
        SameOrbitVerdict {
            same: true,
            confidence: OrbitIdentity::Proven,
            s_hit: Some(s_min),
            min_distance: d_min,
        }
    } else {
        SameOrbitVerdict {
            same: false,
            confidence: OrbitIdentity::UnreachedWithinHorizon,
            s_hit: None,
            min_distance: d_min,
        }
    }
}

/// Canonical key for an orbit: its constant spatial value in a nice chart,
/// with the provenance seed.
#[derive(Debug, Clone)]
pub struct OrbitKey {
    pub nice_chart: String,
    pub x_value: Vec<f64>,
    pub seed: PointRef,
}

/// A chart on the orbit space: the map orbit -> constant spatial value of a
/// nice adapted chart, with its sampled domain image.
#[derive(Debug, Clone)]
pub struct OrbitChart {
    pub chart: Chart,
    pub domain: DomainPredicate,
    pub keys: Vec<OrbitKey>,
}

/// Construct the orbit chart from a certified adapted + nice verdict.
pub fn make_orbit_chart(
    _vf: &VectorFieldModel,
    chart: &Chart,
    u: &DomainPredicate,
    verdict: &AdaptedVerdict,
) -> Result<OrbitChart, QuotientError> {
    if !(verdict.adapted && verdict.nice) {
        return Err(QuotientError::NotNice);
    }
    let keys = verdict
        .bar_values
        .iter()
        .map(|(seed, x)| OrbitKey {
            nice_chart: chart.id.clone(),
            x_value: x.clone(),
            seed: seed.clone(),
        })
        .collect();
    Ok(OrbitChart { chart: chart.clone(), domain: u.clone(), keys })
}

impl OrbitChart {
    /// Does the orbit through the given reference point meet this chart's
    /// domain within the horizon? Returns its key value when it does.
    pub fn key_of_orbit(
        &self,
        vf: &VectorFieldModel,
        x_ref: &[f64],
        horizon: f64,
    ) -> Result<Option<Vec<f64>>, QuotientError> {
        let pr = PointRef {
            chart: vf.manifold.reference.id.clone(),
            coords: Coordinates(x_ref.to_vec()),
        };
        let iset = interval_set(vf, &pr, &self.domain, horizon)?;
        let comp = match iset.components.first() {
            Some(c) => c,
            None => return Ok(None),
        };
        let p = flow_point(vf, x_ref, 0.5 * (comp.a + comp.b))?;
        let y = self.chart.forward(&p)?;
        Ok(Some(spatial_project_raw(&y)))
    }
}

/// A quotient transition with its flow shift frozen for a neighborhood,
/// mirroring the lemma's construction g(Y) = F(s, Y).
pub struct QuotientTransition {
    pub shift: f64,
    pub t_slice: f64,
}

impl QuotientTransition {
    /// Find the shift for the base orbit lifted at (t, y) in chart A.
    pub fn new(
        vf: &VectorFieldModel,
        a: &OrbitChart,
        b: &OrbitChart,
        y: &[f64],
        t: f64,
    ) -> Result<QuotientTransition, QuotientError> {
        let x = lift(a, y, t)?;
        let pr = PointRef {
            chart: vf.manifold.reference.id.clone(),
            coords: Coordinates(x.clone()),
        };
        let horizon = vf.manifold.tols.s_max;
        let iset = interval_set(vf, &pr, &b.domain, horizon)?;
        let comp = iset.components.first().ok_or(QuotientError::OrbitMissesTarget)?;
        Ok(QuotientTransition { shift: 0.5 * (comp.a + comp.b), t_slice: t })
    }

    /// Apply: lift y at the frozen slice, flow by the frozen shift, project
    /// through chart B.
    pub fn apply(
        &self,
        vf: &VectorFieldModel,
        a: &OrbitChart,
        b: &OrbitChart,
        y: &[f64],
    ) -> Result<Vec<f64>, QuotientError> {
        let x = lift(a, y, self.t_slice)?;
        let p = flow_point(vf, &x, self.shift)?;
        if !b.domain.contains(&p) {
            return Err(QuotientError::OrbitMissesTarget);
        }
        let out = b.chart.forward(&p)?;
        Ok(spatial_project_raw(&out))
    }
}

fn lift(a: &OrbitChart, y: &[f64], t: f64) -> Result<Vec<f64>, QuotientError> {
    let mut coords = Vec::with_capacity(y.len() + 1);
    coords.push(t);
    coords.extend_from_slice(y);
    let x = a.chart.inverse(&coords)?;
    if !a.domain.contains(&x) {
        return Err(QuotientError::LiftOutsideDomain);
    }
    Ok(x)
}

/// One-shot transition: find the shift for this y and apply it.
pub fn quotient_transition(
    vf: &VectorFieldModel,
    a: &OrbitChart,
    b: &OrbitChart,
    y: &[f64],
    t: f64,
) -> Result<Vec<f64>, QuotientError> {
    let map = QuotientTransition::new(vf, a, b, y, t)?;
    map.apply(vf, a, b, y)
}

/// A slice parameter t for chart A at which (t, y) lies in the chart image
/// of the domain, taken from a key's seed.
pub fn slice_parameter(a: &OrbitChart, key: &OrbitKey, m: &ManifoldModel) -> Option<f64> {
    let seed_ref = m.to_reference(&key.seed).ok()?;
    let y = a.chart.forward(&seed_ref).ok()?;
    Some(y[0])
}

/// Pairwise smoothness and invertibility of flow-computed transitions on
/// overlapping orbit-chart domains.
pub fn atlas_compatibility_quotient(
    vf: &VectorFieldModel,
    charts: &[OrbitChart],
    samples: usize,
) -> Report {
    let mut report = Report::new();
    let m = &vf.manifold;
    let tol = m.tols.tol_check;
    let horizon = m.tols.s_max;
    for i in 0..charts.len() {
        for j in i + 1..charts.len() {
            let (a, b) = (&charts[i], &charts[j]);
            let name = format!("quotient transition {} -> {}", a.chart.id, b.chart.id);
            // Base orbits of A whose orbit also meets B.
            let mut shared: Vec<&OrbitKey> = Vec::new();
            for key in &a.keys {
                let seed = match m.to_reference(&key.seed) {
                    Ok(s) => s,
                    Err(_) => continue,
                };
                if matches!(b.key_of_orbit(vf, &seed, horizon), Ok(Some(_))) {
                    shared.push(key);
                }
                if shared.len() >= samples.max(1) {
                    break;
                }
            }
            if shared.is_empty() {
                continue;
            }
            let mut witnesses = Vec::new();
            let mut checked = 0;
            for key in shared {
                let t = match slice_parameter(a, key, m) {
                    Some(t) => t,
                    None => continue,
                };
                let fwd = match QuotientTransition::new(vf, a, b, &key.x_value, t) {
                    Ok(f) => f,
                    Err(e) => {
                        witnesses.push(format!("shift search failed at {:?}: {e}", key.x_value));
                        continue;
                    }
                };
                let out = match fwd.apply(vf, a, b, &key.x_value) {
                    Ok(o) => o,
                    Err(e) => {
                        witnesses.push(format!("transition failed at {:?}: {e}", key.x_value));
                        continue;
                    }
                };
                checked += 1;
                // Invertibility: round trip through the reverse transition.
                if let Some(tb) = b
                    .keys
                    .iter()
                    .find(|k| numerics::inf_dist(&k.x_value, &out) < 0.5)
                    .and_then(|k| slice_parameter(b, k, m))
                    .or_else(|| {
                        // Fall back: lift via B at the forward image's seed time.
                        None
                    })
                {
                    match quotient_transition(vf, b, a, &out, tb) {
                        Ok(back) => {
                            let d = numerics::inf_dist(&back, &key.x_value);
                            if d > 2.0 * tol {
                                witnesses
                                    .push(format!("round trip off by {d:.3e} at {:?}", key.x_value));
                            }
                        }
                        Err(e) => witnesses
                            .push(format!("reverse transition failed at {:?}: {e}", key.x_value)),
                    }
                }
                // Smoothness proxy: FD Jacobian two-step agreement.
                let n = key.x_value.len();
                let mut ok = true;
                'fd: for col in 0..n {
                    let mut jcol = [vec![0.0; n], vec![0.0; n]];
                    for (h, slot) in [(1e-4, 0), (5e-5, 1)] {
                        let mut yp = key.x_value.clone();
                        let mut ym = key.x_value.clone();
                        yp[col] += h;
                        ym[col] -= h;
                        let fp = fwd.apply(vf, a, b, &yp);
                        let fm = fwd.apply(vf, a, b, &ym);
                        match (fp, fm) {
                            (Ok(fp), Ok(fm)) => {
                                for r in 0..n {
                                    jcol[slot][r] = (fp[r] - fm[r]) / (2.0 * h);
                                }
                            }
                            _ => {
                                ok = false;
                                break 'fd;
                            }
                        }
                        if slot == 1 {
                            let d = numerics::inf_dist(&jcol[0], &jcol[1]);
                            let scale = 1.0
                                + jcol[1].iter().map(|v| v.abs()).fold(0.0, f64::max);
                            if d / scale > 0.05 {
                                witnesses.push(format!(
                                    "FD Jacobian two-step disagreement {d:.3e} at {:?}",
                                    key.x_value
                                ));
                            }
                        }
                    }
                }
                if !ok {
                    witnesses.push(format!("FD Jacobian probe left the domain at {:?}", key.x_value));
                }
            }
            if witnesses.is_empty() && checked > 0 {
                report.pass(&name, format!("{checked} base orbits checked"));
            } else if checked == 0 {
                report.inconclusive(&name, "no transition could be evaluated");
            } else {
                witnesses.truncate(5);
                report.fail(&name, witnesses);
            }
        }
    }
    if report.entries.is_empty() {
        report.pass("quotient transitions", "no overlapping orbit domains".to_string());
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeparationStatus {
    Separated,
    NotSeparatedWitness,
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct OrbitBox {
    pub chart: String,
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct SeparationVerdict {
    pub status: SeparationStatus,
    /// Disjoint chart-image boxes certifying separation.
    pub boxes: Option<(OrbitBox, OrbitBox)>,
    /// Witness orbits (radius, seed) meeting both shrinking neighborhoods.
    pub witnesses: Vec<(f64, Vec<f64>)>,
    pub resolution: f64,
}

/// Separation probe. Separated is only claimed through the single-chart
/// construction (disjoint spatial boxes in one orbit chart); otherwise a
/// witness search over shrinking neighborhood radii 2^-n runs, and
/// persistent witnesses certify non-separation at the reached resolution.
pub fn hausdorff_probe(
    vf: &VectorFieldModel,
    charts: &[OrbitChart],
    k1: &OrbitKey,
    k2: &OrbitKey,
    shrink_steps: usize,
    horizon: f64,
) -> SeparationVerdict {
    let m = &vf.manifold;
    let tol = m.tols.tol_check;
    let seed1 = match m.to_reference(&k1.seed) {
        Ok(s) => s,
        Err(_) => {
            return SeparationVerdict {
                status: SeparationStatus::Inconclusive,
                boxes: None,
                witnesses: vec![],
                resolution: f64::INFINITY,
            }
        }
    };
    let seed2 = match m.to_reference(&k2.seed) {
        Ok(s) => s,
        Err(_) => {
            return SeparationVerdict {
                status: SeparationStatus::Inconclusive,
                boxes: None,
                witnesses: vec![],
                resolution: f64::INFINITY,
            }
        }
    };

    if same_orbit(vf, &seed1, &seed2, horizon).same {
        return SeparationVerdict {
            status: SeparationStatus::Inconclusive,
            boxes: None,
            witnesses: vec![],
            resolution: f64::INFINITY,
        };
    }

    // Single-chart construction: both orbits in one chart domain with
    // distinct values separate by disjoint balls.
    for oc in charts {
        let v1 = oc.key_of_orbit(vf, &seed1, horizon).unwrap_or(None);
        let v2 = oc.key_of_orbit(vf, &seed2, horizon).unwrap_or(None);
        if let (Some(x1), Some(x2)) = (v1, v2) {
            let d = numerics::inf_dist(&x1, &x2);
            if d > tol {
                let r = d / 3.0;
                return SeparationVerdict {
                    status: SeparationStatus::Separated,
                    boxes: Some((
                        OrbitBox { chart: oc.chart.id.clone(), center: x1, radius: r },
                        OrbitBox { chart: oc.chart.id.clone(), center: x2, radius: r },
                    )),
                    witnesses: vec![],
                    resolution: d,
                };
            }
        }
    }

    // Witness search: does some orbit meet both shrinking neighborhoods?
    let mut witnesses: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut all_radii_witnessed = true;
    let mut resolution = 1.0_f64;
    for n in 0..shrink_steps {
        let r = 2.0_f64.powi(-(n as i32));
        resolution = r;
        let mut found = None;
        'cand: for axis in 1..m.dim {
            for sign in [1.0, -1.0] {
                let mut c = seed1.clone();
                c[axis] += sign * 0.5 * r;
                if !m.in_model(&c) {
                    continue;
                }
                // The candidate orbit must come within r of both seeds.
                if vf.wrapped_dist(&vf.wrap(&c), &vf.wrap(&seed1)) >= r {
                    continue;
                }
                let v = same_orbit_distance(vf, &c, &seed2, horizon);
                if v < r {
                    found = Some(c);
                    break 'cand;
                }
            }
        }
        match found {
            Some(c) => witnesses.push((r, c)),
            None => {
                all_radii_witnessed = false;
                break;
            }
        }
    }

    if all_radii_witnessed && witnesses.len() == shrink_steps {
        SeparationVerdict {
            status: SeparationStatus::NotSeparatedWitness,
            boxes: None,
            witnesses,
            resolution,
        }
    } else {
        SeparationVerdict {
            status: SeparationStatus::Inconclusive,
            boxes: None,
            witnesses,
            resolution,
        }
    }
}

/// Minimal approach distance of the orbit through c to the target point.
fn same_orbit_distance(vf: &VectorFieldModel, c: &[f64], target: &[f64], horizon: f64) -> f64 {
    same_orbit(vf, c, target, horizon).min_distance
}

/// Purely spatial coordinate-change equivalence of two charts on one
/// domain: f^0(X) = x^0 and the spatial components do not depend on x^0.
pub fn frame_equivalent(m: &ManifoldModel, a: &Chart, b: &Chart, samples: usize) -> Report {
    let mut report = Report::new();
    let tol = m.tols.tol_check;
    let points = m.sample_where(&a.domain, samples.max(4), 0xFACE);
    if points.is_empty() {
        report.inconclusive("frame equivalence", "no sample points in the shared domain");
        return report;
    }
    let mut witnesses = Vec::new();
    for p in &points {
        let ya = match a.forward(p) {
            Ok(y) => y,
            Err(e) => {
                witnesses.push(format!("chart {} failed at {p:?}: {e}", a.id));
                continue;
            }
        };
        let yb = match b.forward(p) {
            Ok(y) => y,
            Err(e) => {
                witnesses.push(format!("chart {} failed at {p:?}: {e}", b.id));
                continue;
            }
        };
        if (yb[0] - ya[0]).abs() > tol {
            witnesses.push(format!(
                "time coordinate changes: f0 = {} vs x0 = {} at {p:?}",
                yb[0], ya[0]
            ));
            continue;
        }
        match transition_jacobian(a, b, p) {
            Ok(jac) => {
                for (kk, row) in jac.iter().enumerate().skip(1) {
                    if row[0].abs() > tol {
                        witnesses.push(format!(
                            "spatial component {kk} depends on x0: df{kk}/dx0 = {:.3e} at {p:?}",
                            row[0]
                        ));
                    }
                }
            }
            Err(e) => witnesses.push(format!("transition Jacobian failed at {p:?}: {e}")),
        }
    }
    let name = format!("frame equivalence {} ~ {}", a.id, b.id);
    if witnesses.is_empty() {
        report.pass(&name, format!("{} samples", points.len()));
    } else {
        witnesses.truncate(5);
        report.fail(&name, witnesses);
    }
    report
}

/// A reference frame: charts on one domain exchanging by purely spatial
/// coordinate changes.
#[derive(Debug, Clone)]
pub struct LocalFrame {
    pub domain: DomainPredicate,
    pub charts: Vec<Chart>,
}

impl LocalFrame {
    pub fn validate(&self, m: &ManifoldModel, samples: usize) -> Report {
        let mut report = Report::new();
        for i in 0..self.charts.len() {
            for j in i + 1..self.charts.len() {
                report.merge(frame_equivalent(m, &self.charts[i], &self.charts[j], samples));
            }
        }
        if report.entries.is_empty() {
            report.pass("frame equivalence", "single-chart frame");
        }
        report
    }
}

/// The identification I = chibar^-1 o chitilde of the frame's space
/// manifold with the open subset D_U of the orbit space: bijectivity on
/// sampled world lines, the pointwise identity l = I(l) ∩ U, and frame
/// invariance of the construction.
pub fn embed_local_to_global(
    vf: &VectorFieldModel,
    frame: &LocalFrame,
    orbit_chart: &OrbitChart,
    seeds: &[Vec<f64>],
    horizon: f64,
) -> Report {
    let mut report = Report::new();
    let m = &vf.manifold;
    let tol = m.tols.tol_check;
    let chart = &frame.charts[0];
    if orbit_chart.chart.id != chart.id && !frame.charts.iter().any(|c| c.id == orbit_chart.chart.id)
    {
        report.fail(
            "embedding hypothesis",
            vec![format!(
                "orbit chart {} is not a member of the frame",
                orbit_chart.chart.id
            )],
        );
        return report;
    }
    let u = &frame.domain;

    // Collect distinct world lines from the seeds.
    let mut lines: Vec<(Vec<f64>, Vec<f64>)> = Vec::new(); // (x value, seed point)
    for p in seeds {
        if !u.contains(p) {
            continue;
        }
        let y = match chart.forward(p) {
            Ok(y) => y,
            Err(_) => continue,
        };
        let x = spatial_project_raw(&y);
        if lines.iter().all(|(xv, _)| numerics::inf_dist(xv, &x) > tol) {
            lines.push((x, p.clone()));
        }
    }
    if lines.is_empty() {
        report.inconclusive("embedding", "no world lines sampled");
        return report;
    }

    // Image bbox of U for the t-range of line samples.
    let u_points = m.sample_where(u, 100, 0xEE);
    let mut t_lo = f64::INFINITY;
    let mut t_hi = f64::NEG_INFINITY;
    for p in &u_points {
        if let Ok(y) = chart.forward(p) {
            t_lo = t_lo.min(y[0]);
            t_hi = t_hi.max(y[0]);
        }
    }
    let t_grid: Vec<f64> = (0..20)
        .map(|k| t_lo + (t_hi - t_lo) * (k as f64 + 0.5) / 20.0)
        .collect();

    let mut pointwise_witnesses: Vec<String> = Vec::new();
    let mut checked_points = 0usize;
    for (x_val, seed) in &lines {
        // Samples of the world line l: chart preimages of (t, x) inside U.
        let mut line_points: Vec<Vec<f64>> = Vec::new();
        for t in &t_grid {
            let mut y = Vec::with_capacity(m.dim);
            y.push(*t);
            y.extend_from_slice(x_val);
            if let Ok(p) = chart.inverse(&y) {
                if u.contains(&p) && m.in_model(&p) {
                    line_points.push(p);
                }
            }
        }
        if line_points.is_empty() {
            continue;
        }
        // I(l): the orbit through any point of l. (a) every line sample lies
        // on that orbit; (b) every orbit sample inside U projects to x.
        let t_seed = chart.forward(seed).map(|y| y[0]).unwrap_or(0.0);
        for q in &line_points {
            checked_points += 1;
            // The chart's own time coordinate gives a candidate flow
            // parameter; the verification itself is a flow distance.
            let hint = chart.forward(q).map(|y| y[0] - t_seed).unwrap_or(0.0);
            let (_, d_hint) = numerics::golden_min(
                |s| match flow_point(vf, seed, s) {
                    Ok(p) => vf.wrapped_dist(&p, q),
                    Err(_) => f64::INFINITY,
                },
                hint - 0.25,
                hint + 0.25,
                1e-9,
            );
            if d_hint < tol {
                continue;
            }
            let v = same_orbit(vf, seed, q, horizon);
            if !v.same {
                pointwise_witnesses.push(format!(
                    "line point {q:?} not reached by the orbit through {seed:?} \
                     (min distance {:.3e})",
                    v.min_distance
                ));
            }
        }
        let pr = PointRef { chart: m.reference.id.clone(), coords: Coordinates(seed.clone()) };
        if let Ok(iset) = interval_set(vf, &pr, u, horizon) {
            for comp in &iset.components {
                for frac in [0.25, 0.5, 0.75] {
                    let s = comp.a + frac * (comp.b - comp.a);
                    if let Ok(p) = flow_point(vf, seed, s) {
                        if !u.contains(&p) {
                            continue;
                        }
                        if let Ok(y) = chart.forward(&p) {
                            let d = numerics::inf_dist(&spatial_project_raw(&y), x_val);
                            if d > tol {
                                pointwise_witnesses.push(format!(
                                    "orbit sample at s={s:.4} projects to a different x \
                                     (off by {d:.3e}) for line x={x_val:?}"
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    if pointwise_witnesses.is_empty() {
        report.pass(
            "embedding pointwise identity",
            format!("l = I(l) ∩ U on {checked_points} sampled points of {} lines", lines.len()),
        );
    } else {
        pointwise_witnesses.truncate(5);
        report.fail("embedding pointwise identity", pointwise_witnesses);
    }

    // (b) injectivity on the sampled set: distinct x values, and spot-check
    // that the first few pairs are genuinely distinct orbits.
    let mut injective = true;
    'outer: for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            if numerics::inf_dist(&lines[i].0, &lines[j].0) < tol {
                injective = false;
                break 'outer;
            }
        }
    }
    let spot = lines.len().min(4);
    for i in 0..spot {
        for j in i + 1..spot {
            if same_orbit(vf, &lines[i].1, &lines[j].1, horizon).same {
                injective = false;
            }
        }
    }
    if injective {
        report.pass("embedding injectivity", format!("{} distinct lines", lines.len()));
    } else {
        report.fail("embedding injectivity", vec!["sampled lines collide".to_string()]);
    }

    // (c) surjectivity evidence: every sampled orbit-chart key is hit by a
    // sampled world line.
    let mut missed = 0;
    for key in &orbit_chart.keys {
        let hit = lines.iter().any(|(x, _)| numerics::inf_dist(x, &key.x_value) < 10.0 * tol)
            || {
                // The key's level set is nonempty in U: lift directly.
                let mut y = Vec::with_capacity(m.dim);
                y.push(t_grid[t_grid.len() / 2]);
                y.extend_from_slice(&key.x_value);
                chart.inverse(&y).map(|p| u.contains(&p)).unwrap_or(false)
            };
        if !hit {
            missed += 1;
        }
    }
    if missed == 0 {
        report.pass(
            "embedding surjectivity evidence",
            format!("all {} sampled orbit keys realized by world lines", orbit_chart.keys.len()),
        );
    } else {
        report.fail(
            "embedding surjectivity evidence",
            vec![format!("{missed} orbit keys not realized")],
        );
    }

    // Frame invariance: every frame chart induces the same world lines.
    let mut invariance_witnesses = Vec::new();
    for other in frame.charts.iter().skip(1) {
        for (x_val, seed) in lines.iter().take(10) {
            // The other chart's value must be constant along the line.
            let mut values: Vec<Vec<f64>> = Vec::new();
            for t in t_grid.iter().step_by(4) {
                let mut y = Vec::with_capacity(m.dim);
                y.push(*t);
                y.extend_from_slice(x_val);
                if let Ok(p) = chart.inverse(&y) {
                    if u.contains(&p) {
                        if let Ok(yo) = other.forward(&p) {
                            values.push(spatial_project_raw(&yo));
                        }
                    }
                }
            }
            for w in values.windows(2) {
                let d = numerics::inf_dist(&w[0], &w[1]);
                if d > tol {
                    invariance_witnesses.push(format!(
                        "chart {} projection varies by {d:.3e} along the line of {seed:?}",
                        other.id
                    ));
                    break;
                }
            }
        }
    }
    if invariance_witnesses.is_empty() {
        report.pass(
            "embedding frame invariance",
            format!("{} charts agree on world lines", frame.charts.len()),
        );
    } else {
        invariance_witnesses.truncate(5);
        report.fail("embedding frame invariance", invariance_witnesses);
    }
    report.stamp_horizon(horizon);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{check_adapted, seed_grid};
    use crate::atlas::Chart;
    use crate::expr::parse;
    use crate::tolerances::Tolerances;
    use std::sync::Arc;

    fn plane_model() -> Arc<ManifoldModel> {
        Arc::new(ManifoldModel {
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
    fn same_orbit_on_horizontal_lines() {
        let vf = constant_field();
        let v = same_orbit(&vf, &[0.0, 0.5], &[3.0, 0.5], 10.0);
        assert!(v.same);
        assert_eq!(v.confidence, OrbitIdentity::Proven);
        let v = same_orbit(&vf, &[0.0, 0.5], &[0.0, 0.6], 10.0);
        assert!(!v.same);
        assert_eq!(v.confidence, OrbitIdentity::UnreachedWithinHorizon);
    }

    #[test]
    fn orbit_chart_and_identity_transition() {
        let vf = constant_field();
        let boxd = DomainPredicate::from_conjuncts(vec![
            parse("1 - x0^2").unwrap(),
            parse("1 - x1^2").unwrap(),
        ]);
        let chart = Chart::identity("reference", 2, DomainPredicate::everywhere());
        let seeds = seed_grid(&vf.manifold, &boxd, 16);
        let verdict = check_adapted(&vf, &chart, &boxd, &seeds, 20.0).unwrap();
        let oc = make_orbit_chart(&vf, &chart, &boxd, &verdict).unwrap();
        assert!(!oc.keys.is_empty());
        // Two restrictions of one chart: the transition is the identity.
        let out = quotient_transition(&vf, &oc, &oc, &[0.25], 0.0).unwrap();
        assert!((out[0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn disjoint_domains_connected_by_flow() {
        let vf = constant_field();
        let left = DomainPredicate::from_conjuncts(vec![
            parse("x0 + 1").unwrap(),
            parse("-x0").unwrap(),
            parse("1 - x1^2").unwrap(),
        ]);
        // Separate the second box along x0 well beyond the first.
        let right = DomainPredicate::from_conjuncts(vec![
            parse("x0 - 5").unwrap(),
            parse("6 - x0").unwrap(),
            parse("1 - x1^2").unwrap(),
        ]);
        let chart = Chart::identity("reference", 2, DomainPredicate::everywhere());
        // Model window covers x0 in (-3, 3); extend for the right box.
        let model = Arc::new(ManifoldModel {
            dim: 2,
            reference: Chart::identity("reference", 2, DomainPredicate::everywhere()),
            atlas: vec![],
            window: vec![(-2.0, 7.0), (-2.0, 2.0)],
            tols: Tolerances::default(),
        });
        let vf = VectorFieldModel::new(model, vec![parse("1").unwrap(), parse("0").unwrap()]);
        let seeds_l = seed_grid(&vf.manifold, &left, 16);
        let seeds_r = seed_grid(&vf.manifold, &right, 16);
        let va = check_adapted(&vf, &chart, &left, &seeds_l, 30.0).unwrap();
        let vb = check_adapted(&vf, &chart, &right, &seeds_r, 30.0).unwrap();
        let a = make_orbit_chart(&vf, &chart, &left, &va).unwrap();
        let b = make_orbit_chart(&vf, &chart, &right, &vb).unwrap();
        // The transition is computed only via the flow and is the identity.
        let out = quotient_transition(&vf, &a, &b, &[0.4], -0.5).unwrap();
        assert!((out[0] - 0.4).abs() < 1e-7, "{out:?}");
        let _ = vf;
    }

    #[test]
    fn frame_equivalence_examples() {
        let m = plane_model();
        let id = Chart::identity("id", 2, DomainPredicate::everywhere());
        let cubic = Chart::analytic(
            "cubic",
            2,
            vec![parse("x0").unwrap(), parse("x1^3 + x1").unwrap()],
            vec![
                parse("x0").unwrap(),
                parse("(x1/2 + sqrt(x1^2/4 + 1/27))^(1/3) - (sqrt(x1^2/4 + 1/27) - x1/2)^(1/3)")
                    .unwrap(),
            ],
            DomainPredicate::everywhere(),
        );
        assert!(frame_equivalent(&m, &id, &cubic, 12).all_passed());

        let time_shear = Chart::analytic(
            "tshear",
            2,
            vec![parse("x0 + x1").unwrap(), parse("x1").unwrap()],
            vec![parse("x0 - x1").unwrap(), parse("x1").unwrap()],
            DomainPredicate::everywhere(),
        );
        assert!(frame_equivalent(&m, &id, &time_shear, 12).any_failed());

        let boost = Chart::analytic(
            "boost",
            2,
            vec![parse("x0").unwrap(), parse("x1 + 0.1*x0").unwrap()],
            vec![parse("x0").unwrap(), parse("x1 - 0.1*x0").unwrap()],
            DomainPredicate::everywhere(),
        );
        assert!(frame_equivalent(&m, &id, &boost, 12).any_failed());
    }
}
