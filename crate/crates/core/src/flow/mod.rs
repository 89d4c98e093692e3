//! Numerical realization of the flow of a vector field: trajectories with
//! event-located boundary crossings, the parameter sets I'_{X,U} as disjoint
//! open intervals, and orbit polylines with periodicity detection.

pub mod rk;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::atlas::{AtlasError, Chart, Coordinates, DomainPredicate, ManifoldModel, PointRef};
use crate::expr::{coord_names, eval_real, Expr, ExprError};
use crate::numerics;
use crate::report::Report;
use rk::{integrate, DenseStep, IntegrationStatus, StepOutcome};

#[derive(Debug, Clone, thiserror::Error)]
pub enum FlowError {
    #[error("integrator step size underflowed near s = {s}")]
    StepFailure { s: f64 },
    #[error("seed point lies outside the model domain")]
    OutsideModel,
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Scene-declared properties of the field (assumptions the checks may
/// rely on or must falsify).
#[derive(Debug, Clone, Copy, Default)]
pub struct DeclaredProperties {
    pub non_vanishing: bool,
    pub orbits_closed: bool,
    pub orbits_non_periodic: bool,
}

/// The vector field v: per-chart component expressions, with the reference
/// chart entry mandatory. Components in other charts default to the
/// pushforward through the transition Jacobian.
#[derive(Debug, Clone)]
pub struct VectorFieldModel {
    pub manifold: Arc<ManifoldModel>,
    pub components: BTreeMap<String, Vec<Expr>>,
    /// Per-coordinate periods for identified (torus-like) scenes.
    pub periods: Vec<Option<f64>>,
    /// Rescale v by 1/(1+|v|^2) to emulate completeness near domain edges.
    pub speed_limited: bool,
    pub declared: DeclaredProperties,
}

impl VectorFieldModel {
    pub fn new(manifold: Arc<ManifoldModel>, reference_components: Vec<Expr>) -> Self {
        let mut components = BTreeMap::new();
        components.insert(manifold.reference.id.clone(), reference_components);
        VectorFieldModel {
            manifold,
            components,
            periods: vec![],
            speed_limited: false,
            declared: DeclaredProperties::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim
    }

    fn reference_exprs(&self) -> &[Expr] {
        &self.components[&self.manifold.reference.id]
    }

    pub fn periods_or_none(&self) -> Vec<Option<f64>> {
        if self.periods.len() == self.dim() {
            self.periods.clone()
        } else {
            vec![None; self.dim()]
        }
    }

    /// Field components at a model (reference-chart) point.
    pub fn eval_reference(&self, x: &[f64]) -> Result<Vec<f64>, FlowError> {
        let names = coord_names(self.dim());
        let mut v: Vec<f64> = self
            .reference_exprs()
            .iter()
            .map(|e| eval_real(e, &names, x))
            .collect::<Result<_, _>>()?;
        if self.speed_limited {
            let n2: f64 = v.iter().map(|c| c * c).sum();
            let fac = 1.0 / (1.0 + n2);
            for c in &mut v {
                *c *= fac;
            }
        }
        Ok(v)
    }

    /// Components in the given chart at the model point x: the explicit
    /// per-chart expressions when the scene supplies them, otherwise the
    /// pushforward through the chart's forward Jacobian.
    pub fn components_in_chart(&self, chart: &Chart, x: &[f64]) -> Result<Vec<f64>, FlowError> {
        if let Some(exprs) = self.components.get(&chart.id) {
            if chart.id != self.manifold.reference.id {
                let y = chart.forward(x)?;
                let names = coord_names(self.dim());
                return Ok(exprs
                    .iter()
                    .map(|e| eval_real(e, &names, &y))
                    .collect::<Result<_, _>>()?);
            }
        }
        let v = self.eval_reference(x)?;
        let jac = chart.jacobian_forward(x)?;
        Ok(numerics::mat_vec(&jac, &v))
    }

    /// Wrap a point into the fundamental domain of the identifications.
    pub fn wrap(&self, p: &[f64]) -> Vec<f64> {
        let periods = self.periods_or_none();
        p.iter()
            .zip(&periods)
            .map(|(v, per)| match per {
                Some(t) => v.rem_euclid(*t),
                None => *v,
            })
            .collect()
    }

    /// Max-distance respecting periodic identifications.
    pub fn wrapped_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        let periods = self.periods_or_none();
        a.iter()
            .zip(b)
            .zip(&periods)
            .map(|((x, y), per)| {
                let d = (x - y).abs();
                match per {
                    Some(t) => {
                        let m = d.rem_euclid(*t);
                        m.min(t - m)
                    }
                    None => d,
                }
            })
            .fold(0.0, f64::max)
    }

    fn integrand(&self) -> impl FnMut(&[f64], &mut [f64]) -> Result<(), ()> + '_ {
        let names = coord_names(self.dim());
        let exprs = self.reference_exprs().to_vec();
        let limited = self.speed_limited;
        move |y: &[f64], dy: &mut [f64]| {
            for (i, e) in exprs.iter().enumerate() {
                match eval_real(e, &names, y) {
                    Ok(v) => dy[i] = v,
                    Err(_) => return Err(()),
                }
            }
            if limited {
                let n2: f64 = dy.iter().map(|c| c * c).sum();
                let fac = 1.0 / (1.0 + n2);
                for c in dy.iter_mut() {
                    *c *= fac;
                }
            }
            Ok(())
        }
    }
}

/// Outcome of a single flow query.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowStatus {
    Interior,
    ExitedModelDomain,
    HorizonReached,
    StepFailure,
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub point: PointRef,
    pub status: FlowStatus,
    pub s_achieved: f64,
}

/// Integrate the flow F(s, X) in reference coordinates, stopping at the
/// model-domain frontier. Touching the frontier (a conjunct minimum at or
/// below tol_touch) also terminates the orbit: the frontier point is not in
/// the open model domain.
pub fn flow(vf: &VectorFieldModel, x: &PointRef, s: f64) -> Result<FlowResult, FlowError> {
    let x0 = vf.manifold.to_reference(x)?;
    if !vf.manifold.in_model(&x0) {
        return Err(FlowError::OutsideModel);
    }
    let tols = vf.manifold.tols;
    let mut clamped = false;
    let mut target = s;
    if target.abs() > tols.s_max {
        target = target.signum() * tols.s_max;
        clamped = true;
    }

    let periods = vf.periods_or_none();
    let model_domain = vf.manifold.reference.domain.clone();
    let mut scan = DomainExitScan::new(&model_domain, vf, tols.tol_event, tols.tol_touch);
    let out = integrate(
        vf.integrand(),
        &x0,
        target,
        tols.tol_pos,
        tols.h_max,
        &periods,
        |step| scan.inspect(step),
    );

    let status = match out.status {
        IntegrationStatus::Completed => {
            if clamped {
                FlowStatus::HorizonReached
            } else {
                FlowStatus::Interior
            }
        }
        IntegrationStatus::Stopped => FlowStatus::ExitedModelDomain,
        IntegrationStatus::StepFailure => FlowStatus::StepFailure,
    };
    let point = PointRef {
        chart: vf.manifold.reference.id.clone(),
        coords: Coordinates(out.y_end.clone()),
    };
    Ok(FlowResult { point, status, s_achieved: out.s_end })
}

/// Convenience: flow and require Interior status.
pub fn flow_point(vf: &VectorFieldModel, x0: &[f64], s: f64) -> Result<Vec<f64>, FlowError> {
    let pr = PointRef { chart: vf.manifold.reference.id.clone(), coords: Coordinates(x0.to_vec()) };
    let r = flow(vf, &pr, s)?;
    match r.status {
        FlowStatus::Interior => Ok(r.point.coords.0),
        FlowStatus::StepFailure => Err(FlowError::StepFailure { s: r.s_achieved }),
        _ => Err(FlowError::OutsideModel),
    }
}

/// Group-law check |F(t, F(s, X)) - F(s+t, X)| < tol_check.
pub fn group_law_check(vf: &VectorFieldModel, x: &PointRef, s: f64, t: f64) -> Report {
    let mut report = Report::new();
    let tol = vf.manifold.tols.tol_check;
    let run = || -> Result<(f64, bool), FlowError> {
        let mid = flow(vf, x, s)?;
        if mid.status != FlowStatus::Interior {
            return Ok((f64::NAN, false));
        }
        let via = flow(vf, &mid.point, t)?;
        let direct = flow(vf, x, s + t)?;
        if via.status != FlowStatus::Interior || direct.status != FlowStatus::Interior {
            return Ok((f64::NAN, false));
        }
        let d = vf.wrapped_dist(&via.point.coords.0, &direct.point.coords.0);
        Ok((d, true))
    };
    match run() {
        Ok((_, false)) => report.inconclusive(
            "group law",
            "an integration left the model domain before the comparison".to_string(),
        ),
        Ok((d, true)) => {
            if d < tol {
                report.pass("group law", format!("|F(t,F(s,X)) - F(s+t,X)| = {d:.3e}"));
            } else {
                report.fail("group law", vec![format!("deviation {d:.3e} at s={s}, t={t}")]);
            }
        }
        Err(e) => report.fail("group law", vec![format!("integration error: {e}")]),
    }
    report
}

/// A located boundary crossing along a trajectory.
#[derive(Debug, Clone)]
pub struct Crossing {
    pub s: f64,
    /// (disjunct, conjunct) index of the active boundary conjunct.
    pub conjunct: (usize, usize),
    /// d/ds of the active conjunct composed with the flow, via AD gradient
    /// dotted with the field.
    pub dgds: f64,
    pub transverse: bool,
}

#[derive(Debug, Clone)]
pub enum EndpointKind {
    Crossing(Crossing),
    Horizon,
    ModelBoundary,
}

impl EndpointKind {
    pub fn label(&self) -> &'static str {
        match self {
            EndpointKind::Crossing(_) => "crossing",
            EndpointKind::Horizon => "horizon",
            EndpointKind::ModelBoundary => "model-boundary",
        }
    }

    pub fn dgds(&self) -> Option<f64> {
        match self {
            EndpointKind::Crossing(c) => Some(c.dgds),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntervalComponent {
    pub a: f64,
    pub b: f64,
    pub kind_a: EndpointKind,
    pub kind_b: EndpointKind,
}

/// The open set I'_{X,U} truncated to the working horizon, as disjoint open
/// intervals with crossing metadata.
#[derive(Debug, Clone)]
pub struct IntervalSet {
    pub components: Vec<IntervalComponent>,
    /// Boundary touches that do not change membership (line tangent to
    /// Fr(U) from outside).
    pub outside_touches: Vec<Crossing>,
    pub tangential_warnings: Vec<String>,
    pub horizon: f64,
}

impl IntervalSet {
    pub fn contains_zero(&self) -> bool {
        self.components.iter().any(|c| c.a < 0.0 && 0.0 < c.b)
    }

    /// All located crossings, interval endpoints and outside touches alike,
    /// ordered by s.
    pub fn all_crossings(&self) -> Vec<Crossing> {
        let mut out: Vec<Crossing> = Vec::new();
        for c in &self.components {
            for k in [&c.kind_a, &c.kind_b] {
                if let EndpointKind::Crossing(cr) = k {
                    out.push(cr.clone());
                }
            }
        }
        out.extend(self.outside_touches.iter().cloned());
        out.sort_by(|a, b| a.s.partial_cmp(&b.s).unwrap());
        out.dedup_by(|a, b| (a.s - b.s).abs() < 1e-12);
        out
    }
}

enum ScanEventKind {
    Flip(Crossing),
    TouchInside(Crossing),
    TouchOutside(Crossing),
}

struct ScanEvent {
    s: f64,
    kind: ScanEventKind,
}

/// Streaming scan for sign changes and touches of the model-domain margin;
/// used by `flow` to halt at the frontier.
struct DomainExitScan<'a> {
    domain: &'a DomainPredicate,
    vf: &'a VectorFieldModel,
    tol_event: f64,
    tol_touch: f64,
    active: bool,
}

impl<'a> DomainExitScan<'a> {
    fn new(
        domain: &'a DomainPredicate,
        vf: &'a VectorFieldModel,
        tol_event: f64,
        tol_touch: f64,
    ) -> Self {
        DomainExitScan { domain, vf, tol_event, tol_touch, active: !domain.is_everywhere() }
    }

    fn margin_at(&self, step: &DenseStep, s: f64) -> f64 {
        self.domain.margin(&self.vf.wrap(&step.eval(s)))
    }

    fn inspect(&mut self, step: &DenseStep) -> StepOutcome {
        if !self.active {
            return StepOutcome::Continue;
        }
        match locate_exit(step, self.tol_event, self.tol_touch, |s| self.margin_at(step, s)) {
            Some(s_exit) => StepOutcome::Stop(s_exit),
            None => StepOutcome::Continue,
        }
    }
}

const SAMPLES_PER_STEP: usize = 8;

/// First parameter in the step where the margin crosses or touches zero.
fn locate_exit(
    step: &DenseStep,
    tol_event: f64,
    tol_touch: f64,
    margin: impl Fn(f64) -> f64,
) -> Option<f64> {
    let mut prev_s = step.s0;
    let mut prev_h = margin(prev_s);
    if prev_h <= 0.0 {
        // Seed already outside (or on the frontier): callers guarantee the
        // start is interior, so this is the frontier itself.
        return Some(step.s0);
    }
    let span = step.s1 - step.s0;
    for j in 1..=SAMPLES_PER_STEP {
        let s = step.s0 + span * j as f64 / SAMPLES_PER_STEP as f64;
        let h = margin(s);
        if h <= 0.0 {
            let root = numerics::bisect(|t| margin(t), prev_s, s, prev_h, tol_event);
            return Some(root);
        }
        // A dip toward zero without a sign change may be a tangential touch.
        if h < prev_h && j < SAMPLES_PER_STEP {
            let s_next = step.s0 + span * (j + 1) as f64 / SAMPLES_PER_STEP as f64;
            let h_next = margin(s_next);
            if h_next > h && h < 0.01 {
                let (s_min, h_min) = numerics::golden_min(|t| margin(t), prev_s, s_next, tol_event);
                if h_min <= tol_touch {
                    return Some(s_min);
                }
            }
        }
        prev_s = s;
        prev_h = h;
    }
    None
}

/// One direction of an interval-set scan: crossings/touches of U and the
/// terminal endpoint.
struct DirectionScan {
    events: Vec<ScanEvent>,
    terminal_s: f64,
    terminal: EndpointKind,
    inside_at_terminal: bool,
}

fn crossing_at(
    vf: &VectorFieldModel,
    u: &DomainPredicate,
    p: &[f64],
    s: f64,
    tol_tangent: f64,
) -> Result<Crossing, FlowError> {
    let idx = u.active_conjunct(p).unwrap_or((0, 0));
    let grad = u.conjunct(idx).gradient(p).unwrap_or_else(|_| vec![0.0; p.len()]);
    let v = vf.eval_reference(p)?;
    let dgds: f64 = grad.iter().zip(&v).map(|(g, vi)| g * vi).sum();
    Ok(Crossing { s, conjunct: idx, dgds, transverse: dgds.abs() > tol_tangent })
}

fn scan_direction(
    vf: &VectorFieldModel,
    x0: &[f64],
    u: &DomainPredicate,
    horizon: f64,
) -> Result<DirectionScan, FlowError> {
    let tols = vf.manifold.tols;
    let periods = vf.periods_or_none();
    let model_domain = &vf.manifold.reference.domain;
    let model_active = !model_domain.is_everywhere();

    let mut events: Vec<ScanEvent> = Vec::new();
    let mut exit_from_inside = false;

    // Sliding sample window across step boundaries for touch refinement.
    struct Window {
        prev_step: Option<DenseStep>,
        samples: Vec<(f64, f64)>, // (s, h_u) most recent last
    }
    let mut win = Window { prev_step: None, samples: Vec::new() };
    let h0 = u.margin(&vf.wrap(x0));
    win.samples.push((0.0, h0));

    let mut scan_err: Option<FlowError> = None;
    {
        let u_margin = |win: &Window, step: &DenseStep, s: f64| -> f64 {
            // Evaluate on whichever retained step covers s.
            let in_cur = (s - step.s0) * (step.s1 - s) >= -1e-18
                || ((s - step.s0).abs() <= (step.s1 - step.s0).abs() * 1.000001);
            let p = if in_cur || win.prev_step.is_none() {
                step.eval(s)
            } else {
                let prev = win.prev_step.as_ref().unwrap();
                if (s - prev.s0).abs() <= (prev.s1 - prev.s0).abs() * 1.000001 {
                    prev.eval(s)
                } else {
                    step.eval(s)
                }
            };
            u.margin(&vf.wrap(&p))
        };

        let out = integrate(
            vf.integrand(),
            x0,
            horizon,
            tols.tol_pos,
            tols.h_max,
            &periods,
            |step| {
                // Model-domain exit first: it truncates the scan range.
                let exit_s = if model_active {
                    locate_exit(step, tols.tol_event, tols.tol_touch, |s| {
                        model_domain.margin(&vf.wrap(&step.eval(s)))
                    })
                } else {
                    None
                };
                let span = step.s1 - step.s0;
                let limit = exit_s.unwrap_or(step.s1);
                for j in 1..=SAMPLES_PER_STEP {
                    let s = step.s0 + span * j as f64 / SAMPLES_PER_STEP as f64;
                    let past_limit = if span >= 0.0 { s > limit } else { s < limit };
                    if past_limit {
                        // The model frontier truncates the scan; the terminal
                        // endpoint classification covers any coincident
                        // U-boundary, so no flip is recorded here.
                        break;
                    }
                    let h = u_margin(&win, step, s);
                    let (s_prev, h_prev) = *win.samples.last().unwrap();
                    if (h > 0.0) != (h_prev > 0.0) && s != s_prev {
                        // Membership flip: locate the crossing.
                        let root = numerics::bisect(
                            |t| u_margin(&win, step, t),
                            s_prev,
                            s,
                            h_prev,
                            tols.tol_event,
                        );
                        let p = vf.wrap(&step.eval(root));
                        match crossing_at(vf, u, &p, root, tols.tol_tangent) {
                            Ok(cr) => events.push(ScanEvent { s: root, kind: ScanEventKind::Flip(cr) }),
                            Err(e) => {
                                scan_err = Some(e);
                                return StepOutcome::Stop(root);
                            }
                        }
                    } else if win.samples.len() >= 2 && s != s_prev {
                        // Same-sign triple with a dip toward zero: possible touch.
                        let (s_pp, h_pp) = win.samples[win.samples.len() - 2];
                        let same_sign = (h_pp > 0.0) == (h_prev > 0.0) && (h > 0.0) == (h_prev > 0.0);
                        let dips = if h_prev > 0.0 {
                            h_prev < h_pp && h_prev < h && h_prev < 0.01
                        } else {
                            h_prev > h_pp && h_prev > h && h_prev > -0.01
                        };
                        if same_sign && dips {
                            let inward = h_prev > 0.0;
                            let objective = |t: f64| {
                                let v = u_margin(&win, step, t);
                                if inward {
                                    v
                                } else {
                                    -v
                                }
                            };
                            let (s_min, v_min) =
                                numerics::golden_min(objective, s_pp, s, tols.tol_event);
                            let scale = 1.0 + h_pp.abs().max(h.abs());
                            if v_min.abs() <= 1e-9 * scale {
                                let p = vf.wrap(&step.eval(s_min));
                                match crossing_at(vf, u, &p, s_min, tols.tol_tangent) {
                                    Ok(cr) => {
                                        let kind = if inward {
                                            ScanEventKind::TouchInside(cr)
                                        } else {
                                            ScanEventKind::TouchOutside(cr)
                                        };
                                        events.push(ScanEvent { s: s_min, kind });
                                    }
                                    Err(e) => {
                                        scan_err = Some(e);
                                        return StepOutcome::Stop(s_min);
                                    }
                                }
                            }
                        }
                    }
                    win.samples.push((s, h));
                    if win.samples.len() > 3 {
                        win.samples.remove(0);
                    }
                }
                win.prev_step = Some(step.clone());
                match exit_s {
                    Some(s) => {
                        exit_from_inside = u_margin(&win, step, s - 0.01 * span) > 0.0;
                        StepOutcome::Stop(s)
                    }
                    None => StepOutcome::Continue,
                }
            },
        );

        if let Some(e) = scan_err {
            return Err(e);
        }
        if out.status == IntegrationStatus::StepFailure {
            return Err(FlowError::StepFailure { s: out.s_end });
        }

        let terminal_s = out.s_end;
        let (terminal, inside_at_terminal) = match out.status {
            IntegrationStatus::Completed => {
                let inside = u.margin(&vf.wrap(&out.y_end)) > 0.0;
                (EndpointKind::Horizon, inside)
            }
            IntegrationStatus::Stopped => {
                // Model frontier. If a U-conjunct vanishes there too, the
                // endpoint is a genuine U-crossing (U shares the frontier).
                let p = vf.wrap(&out.y_end);
                let m = u.margin(&p);
                let kind = if m.abs() <= 1e-7 * (1.0 + m.abs()) {
                    match crossing_at(vf, u, &p, terminal_s, tols.tol_tangent) {
                        Ok(cr) => EndpointKind::Crossing(cr),
                        Err(_) => EndpointKind::ModelBoundary,
                    }
                } else {
                    EndpointKind::ModelBoundary
                };
                (kind, exit_from_inside)
            }
            IntegrationStatus::StepFailure => unreachable!(),
        };
        Ok(DirectionScan { events, terminal_s, terminal, inside_at_terminal })
    }
}

/// Compute I'_{X,U} over [-horizon, horizon]: integrate both directions,
/// detect sign changes of the domain margin on dense output (8 interior
/// samples per accepted step), refine crossings by bisection to tol_event,
/// and record dg/ds at each crossing.
pub fn interval_set(
    vf: &VectorFieldModel,
    x: &PointRef,
    u: &DomainPredicate,
    horizon: f64,
) -> Result<IntervalSet, FlowError> {
    let x0 = vf.manifold.to_reference(x)?;
    if !vf.manifold.in_model(&x0) {
        return Err(FlowError::OutsideModel);
    }
    let tols = vf.manifold.tols;
    let horizon = horizon.min(tols.s_max);

    // Seed exactly on Fr(U): a tangential contact from outside produces no
    // sign change in either direction, so record it here. (A contact with
    // interior on both sides shows up as a flip in each direction scan.)
    let mut seed_touch: Option<Crossing> = None;
    let h0 = u.margin(&vf.wrap(&x0));
    if h0.abs() <= 1e-9 {
        let eps = 100.0 * tols.tol_event;
        let side = |s: f64| -> f64 {
            flow_point(vf, &x0, s)
                .map(|p| u.margin(&vf.wrap(&p)))
                .unwrap_or(f64::NEG_INFINITY)
        };
        if side(eps) <= 0.0 && side(-eps) <= 0.0 {
            seed_touch = Some(crossing_at(vf, u, &vf.wrap(&x0), 0.0, tols.tol_tangent)?);
        }
    }

    let fwd = scan_direction(vf, &x0, u, horizon)?;
    let bwd = scan_direction(vf, &x0, u, -horizon)?;

    // Merge into an ascending event stream over [bwd.terminal_s, fwd.terminal_s].
    let mut stream: Vec<ScanEvent> = Vec::new();
    let mut bevents = bwd.events;
    bevents.reverse();
    stream.extend(bevents);
    stream.extend(fwd.events);

    let mut components = Vec::new();
    let mut outside_touches = Vec::new();
    let mut warnings = Vec::new();
    if let Some(cr) = seed_touch {
        warnings.push("seed lies on Fr(U): tangential contact at s = 0".to_string());
        outside_touches.push(cr);
    }

    let mut inside = bwd.inside_at_terminal;
    let mut open: Option<(f64, EndpointKind)> = if inside {
        Some((bwd.terminal_s, bwd.terminal.clone()))
    } else {
        None
    };

    for ev in stream {
        match ev.kind {
            ScanEventKind::Flip(cr) => {
                if !cr.transverse {
                    warnings.push(format!(
                        "tangential crossing at s = {:.6e} (|dg/ds| = {:.3e})",
                        cr.s,
                        cr.dgds.abs()
                    ));
                }
                if inside {
                    if let Some((a, ka)) = open.take() {
                        components.push(IntervalComponent {
                            a,
                            b: ev.s,
                            kind_a: ka,
                            kind_b: EndpointKind::Crossing(cr),
                        });
                    }
                    inside = false;
                } else {
                    open = Some((ev.s, EndpointKind::Crossing(cr)));
                    inside = true;
                }
            }
            ScanEventKind::TouchInside(cr) => {
                warnings.push(format!("interior tangential contact at s = {:.6e}", cr.s));
                if let Some((a, ka)) = open.take() {
                    if ev.s > a {
                        components.push(IntervalComponent {
                            a,
                            b: ev.s,
                            kind_a: ka,
                            kind_b: EndpointKind::Crossing(cr.clone()),
                        });
                    }
                }
                open = Some((ev.s, EndpointKind::Crossing(cr)));
            }
            ScanEventKind::TouchOutside(cr) => {
                outside_touches.push(cr);
            }
        }
    }
    if inside {
        if let Some((a, ka)) = open.take() {
            if fwd.terminal_s > a {
                components.push(IntervalComponent {
                    a,
                    b: fwd.terminal_s,
                    kind_a: ka,
                    kind_b: fwd.terminal.clone(),
                });
            }
        }
    }

    Ok(IntervalSet { components, outside_touches, tangential_warnings: warnings, horizon })
}

/// Orbit sample cache with periodicity information.
#[derive(Debug, Clone)]
pub struct OrbitRef {
    pub seed: PointRef,
    /// Detected period, when the orbit returns to the seed with aligned
    /// direction.
    pub periodic: Option<f64>,
    /// (s, reference coordinates) polyline, ascending in s.
    pub samples: Vec<(f64, Vec<f64>)>,
    /// Cumulative wrap counts at the forward horizon (identified scenes).
    pub wraps: Vec<i64>,
}

/// Arc-length-adaptive polyline of the orbit through X over [-horizon,
/// horizon], with explicit periodicity detection.
pub fn orbit_polyline(
    vf: &VectorFieldModel,
    x: &PointRef,
    horizon: f64,
    max_points: usize,
) -> Result<OrbitRef, FlowError> {
    let x0 = vf.manifold.to_reference(x)?;
    if !vf.manifold.in_model(&x0) {
        return Err(FlowError::OutsideModel);
    }
    let tols = vf.manifold.tols;
    let horizon = horizon.min(tols.s_max);
    let periods = vf.periods_or_none();
    let model_domain = vf.manifold.reference.domain.clone();

    let speed0 = vf
        .eval_reference(&x0)?
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    let target_arc = (2.0 * horizon * speed0 / max_points.max(8) as f64).max(1e-9);

    let mut all: Vec<(f64, Vec<f64>)> = vec![(0.0, vf.wrap(&x0))];
    let mut wraps = vec![0i64; vf.dim()];
    let mut periodic: Option<f64> = None;

    for dir in [1.0f64, -1.0] {
        let mut scan = DomainExitScan::new(&model_domain, vf, tols.tol_event, tols.tol_touch);
        let mut dips: Vec<(f64, f64)> = Vec::new(); // candidate (s_lo, s_hi) return brackets
        let mut prev_d: Option<(f64, f64)> = None;
        let out = integrate(
            vf.integrand(),
            &x0,
            dir * horizon,
            tols.tol_pos,
            tols.h_max,
            &periods,
            |step| {
                let s_stop = match scan.inspect(step) {
                    StepOutcome::Stop(s) => Some(s),
                    StepOutcome::Continue => None,
                };
                // Emit arc-spaced samples, truncated at a domain exit.
                let y0 = step.start();
                let y1 = step.end();
                let arc = numerics::inf_dist(&y0, &y1);
                let n_sub = ((arc / target_arc).ceil() as usize).clamp(1, 16);
                for j in 1..=n_sub {
                    let s = step.s0 + (step.s1 - step.s0) * j as f64 / n_sub as f64;
                    let s = match s_stop {
                        Some(stop) if (s - step.s0).abs() >= (stop - step.s0).abs() => stop,
                        _ => s,
                    };
                    all.push((s, vf.wrap(&step.eval(s))));
                    if s_stop == Some(s) {
                        break;
                    }
                }
                // Track near-returns to the seed for periodicity.
                if dir > 0.0 && !vf.declared.orbits_non_periodic && s_stop.is_none() {
                    for j in 0..=SAMPLES_PER_STEP {
                        let s = step.s0 + (step.s1 - step.s0) * j as f64 / SAMPLES_PER_STEP as f64;
                        let d = vf.wrapped_dist(&vf.wrap(&step.eval(s)), &vf.wrap(&x0));
                        if let Some((sp, dp)) = prev_d {
                            let falling_then_rising = d > dp;
                            if falling_then_rising && dp < 0.05 && sp > tols.tol_event * 10.0 {
                                dips.push((sp - (s - sp), s));
                            }
                        }
                        prev_d = Some((s, d));
                    }
                }
                match s_stop {
                    Some(s) => StepOutcome::Stop(s),
                    None => StepOutcome::Continue,
                }
            },
        );
        if out.status == IntegrationStatus::StepFailure {
            return Err(FlowError::StepFailure { s: out.s_end });
        }
        if dir > 0.0 {
            wraps = out.wraps.clone();
            // Refine the earliest credible return.
            for (lo, hi) in dips {
                if periodic.is_some() {
                    break;
                }
                if let Some(period) = refine_period(vf, &x0, lo.max(tols.tol_event), hi) {
                    periodic = Some(period);
                }
            }
        }
    }

    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    all.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-15);
    Ok(OrbitRef { seed: x.clone(), periodic, samples: all, wraps })
}

/// Bisect the phase condition (F(s) - X) . v(X) = 0 inside the bracket and
/// accept when the return distance and direction-cosine tests pass.
fn refine_period(vf: &VectorFieldModel, x0: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let tols = vf.manifold.tols;
    let v0 = vf.eval_reference(x0).ok()?;
    let phase = |s: f64| -> f64 {
        match flow_point(vf, x0, s) {
            Ok(p) => p
                .iter()
                .zip(x0)
                .zip(&v0)
                .map(|((a, b), v)| {
                    // Wrapped difference along periodic coordinates.
                    let mut d = a - b;
                    if let Some(per) = vf
                        .periods_or_none()
                        .get(0)
                        .and_then(|x| *x)
                        .filter(|_| false)
                    {
                        d = d.rem_euclid(per);
                    }
                    d * v
                })
                .sum(),
            Err(_) => f64::NAN,
        }
    };
    let (pa, pb) = (phase(lo), phase(hi));
    if !pa.is_finite() || !pb.is_finite() || (pa > 0.0) == (pb > 0.0) {
        // Fall back to distance minimization on the bracket.
        let (s_min, d_min) = numerics::golden_min(
            |s| flow_point(vf, x0, s).map(|p| vf.wrapped_dist(&p, x0)).unwrap_or(f64::MAX),
            lo,
            hi,
            tols.tol_event,
        );
        return accept_period(vf, x0, s_min, d_min);
    }
    let s_root = numerics::bisect(phase, lo, hi, pa, tols.tol_event);
    let d = flow_point(vf, x0, s_root).map(|p| vf.wrapped_dist(&p, x0)).unwrap_or(f64::MAX);
    accept_period(vf, x0, s_root, d)
}

fn accept_period(vf: &VectorFieldModel, x0: &[f64], s: f64, d: f64) -> Option<f64> {
    let tols = vf.manifold.tols;
    if d >= tols.tol_orbit || s <= 10.0 * tols.tol_event {
        return None;
    }
    let p = flow_point(vf, x0, s).ok()?;
    let v0 = vf.eval_reference(x0).ok()?;
    let v1 = vf.eval_reference(&p).ok()?;
    let dot: f64 = v0.iter().zip(&v1).map(|(a, b)| a * b).sum();
    let n0: f64 = v0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n1: f64 = v1.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n0 * n1 == 0.0 {
        return None;
    }
    if dot / (n0 * n1) > 0.999 {
        Some(s)
    } else {
        None
    }
}

/// Integrate bare component expressions without any model bookkeeping.
/// Used by numeric chart maps (flow-box shooting).
pub fn raw_flow(
    field: &[Expr],
    limited: bool,
    periods: &[Option<f64>],
    y0: &[f64],
    s: f64,
) -> Result<Vec<f64>, FlowError> {
    let names = coord_names(y0.len());
    let f = |y: &[f64], dy: &mut [f64]| -> Result<(), ()> {
        for (i, e) in field.iter().enumerate() {
            match eval_real(e, &names, y) {
                Ok(v) => dy[i] = v,
                Err(_) => return Err(()),
            }
        }
        if limited {
            let n2: f64 = dy.iter().map(|c| c * c).sum();
            let fac = 1.0 / (1.0 + n2);
            for c in dy.iter_mut() {
                *c *= fac;
            }
        }
        Ok(())
    };
    let out = integrate(f, y0, s, 1e-12, 0.5, periods, |_| StepOutcome::Continue);
    match out.status {
        IntegrationStatus::Completed => Ok(out.y_end),
        _ => Err(FlowError::StepFailure { s: out.s_end }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::tolerances::Tolerances;

    pub(crate) fn plane_model() -> Arc<ManifoldModel> {
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

    fn rotation_field() -> VectorFieldModel {
        VectorFieldModel::new(plane_model(), vec![parse("-x1").unwrap(), parse("x0").unwrap()])
    }

    fn pt(x: f64, y: f64) -> PointRef {
        PointRef::new("reference", vec![x, y]).unwrap()
    }

    #[test]
    fn constant_flow_is_translation() {
        let vf = constant_field();
        let r = flow(&vf, &pt(0.25, 0.5), 0.5).unwrap();
        assert_eq!(r.status, FlowStatus::Interior);
        assert!((r.point.coords.0[0] - 0.75).abs() < 1e-12);
        assert!((r.point.coords.0[1] - 0.5).abs() < 1e-12);
        // s = 0 returns X unchanged.
        let r0 = flow(&vf, &pt(0.25, 0.5), 0.0).unwrap();
        assert_eq!(r0.point.coords.0, vec![0.25, 0.5]);
    }

    #[test]
    fn rotation_flow_quarter_turn() {
        let vf = rotation_field();
        let r = flow(&vf, &pt(1.0, 0.0), std::f64::consts::FRAC_PI_2).unwrap();
        assert!(numerics::inf_dist(&r.point.coords.0, &[0.0, 1.0]) < 1e-8);
    }

    #[test]
    fn group_law_constant_field() {
        let vf = constant_field();
        let rep = group_law_check(&vf, &pt(0.0, 0.0), 0.3, 0.4);
        assert!(rep.all_passed(), "{rep:?}");
        let rep = group_law_check(&vf, &pt(0.0, 0.0), 0.5, 0.0);
        assert!(rep.all_passed());
    }

    #[test]
    fn interval_set_box() {
        let vf = constant_field();
        let u = DomainPredicate::from_conjuncts(vec![
            parse("1 - x0^2").unwrap(),
            parse("1 - x1^2").unwrap(),
        ]);
        let is = interval_set(&vf, &pt(0.0, 0.0), &u, 10.0).unwrap();
        assert_eq!(is.components.len(), 1);
        let c = &is.components[0];
        assert!((c.a + 1.0).abs() < 1e-8 && (c.b - 1.0).abs() < 1e-8);
        assert!(matches!(c.kind_a, EndpointKind::Crossing(_)));
        assert!(matches!(c.kind_b, EndpointKind::Crossing(_)));
        assert!(is.contains_zero());
    }

    #[test]
    fn interval_set_two_slabs() {
        let vf = constant_field();
        let u = DomainPredicate::from_union(vec![
            vec![parse("x0 + 2").unwrap(), parse("-1 - x0").unwrap(), parse("1 - x1^2").unwrap()],
            vec![parse("x0 - 1").unwrap(), parse("2 - x0").unwrap(), parse("1 - x1^2").unwrap()],
        ]);
        let is = interval_set(&vf, &pt(1.5, 0.0), &u, 10.0).unwrap();
        assert_eq!(is.components.len(), 2);
        assert!((is.components[0].a + 3.5).abs() < 1e-8);
        assert!((is.components[0].b + 2.5).abs() < 1e-8);
        assert!((is.components[1].a + 0.5).abs() < 1e-8);
        assert!((is.components[1].b - 0.5).abs() < 1e-8);
    }

    #[test]
    fn interval_set_rotation_half_plane() {
        let vf = rotation_field();
        let u = DomainPredicate::from_conjuncts(vec![parse("x0").unwrap()]);
        let is = interval_set(&vf, &pt(1.0, 0.0), &u, 10.0).unwrap();
        // cos s > 0 within |s| <= 10: three full components.
        assert_eq!(is.components.len(), 3, "{:?}", is.components);
        let pi = std::f64::consts::PI;
        let expect = [
            (-2.5 * pi, -1.5 * pi),
            (-0.5 * pi, 0.5 * pi),
            (1.5 * pi, 2.5 * pi),
        ];
        for (c, (a, b)) in is.components.iter().zip(expect) {
            assert!((c.a - a).abs() < 1e-7, "a: {} vs {}", c.a, a);
            assert!((c.b - b).abs() < 1e-7);
        }
    }

    #[test]
    fn periodic_orbit_detected() {
        let vf = rotation_field();
        let orbit = orbit_polyline(&vf, &pt(1.0, 0.0), 10.0, 400).unwrap();
        let period = orbit.periodic.expect("rotation orbit is periodic");
        assert!((period - 2.0 * std::f64::consts::PI).abs() < 1e-6, "period {period}");
    }

    #[test]
    fn straight_orbit_not_periodic() {
        let vf = constant_field();
        let orbit = orbit_polyline(&vf, &pt(0.0, 0.0), 5.0, 200).unwrap();
        assert!(orbit.periodic.is_none());
        let first = orbit.samples.first().unwrap();
        let last = orbit.samples.last().unwrap();
        assert!((first.0 + 5.0).abs() < 1e-9 && (last.0 - 5.0).abs() < 1e-9);
        assert!((first.1[0] + 5.0).abs() < 1e-7 && (last.1[0] - 5.0).abs() < 1e-7);
    }

    #[test]
    fn tangential_domain_touch_splits_rays() {
        // Plane minus origin, horizontal field: the orbit through (-1, 0)
        // terminates at the puncture.
        let model = Arc::new(ManifoldModel {
            dim: 2,
            reference: Chart::identity(
                "reference",
                2,
                DomainPredicate::from_conjuncts(vec![parse("x0^2 + x1^2").unwrap()]),
            ),
            atlas: vec![],
            window: vec![(-3.0, 3.0), (-3.0, 3.0)],
            tols: Tolerances::default(),
        });
        let vf = VectorFieldModel::new(model, vec![parse("1").unwrap(), parse("0").unwrap()]);
        let r = flow(&vf, &pt(-1.0, 0.0), 3.0).unwrap();
        assert_eq!(r.status, FlowStatus::ExitedModelDomain);
        assert!((r.s_achieved - 1.0).abs() < 1e-4, "stopped at s = {}", r.s_achieved);
        // A nearby orbit passes the puncture unharmed.
        let r = flow(&vf, &pt(-1.0, 2.0_f64.powi(-20)), 3.0).unwrap();
        assert_eq!(r.status, FlowStatus::Interior);
    }

    #[test]
    fn translation_property_of_intervals() {
        let vf = constant_field();
        let u = DomainPredicate::from_conjuncts(vec![
            parse("1 - x0^2").unwrap(),
            parse("1 - x1^2").unwrap(),
        ]);
        let s_shift = 0.25;
        let x = pt(0.0, 0.2);
        let y_pt = flow(&vf, &x, s_shift).unwrap().point;
        let ix = interval_set(&vf, &x, &u, 10.0).unwrap();
        let iy = interval_set(&vf, &y_pt, &u, 10.0).unwrap();
        assert_eq!(ix.components.len(), iy.components.len());
        for (cx, cy) in ix.components.iter().zip(&iy.components) {
            assert!((cy.a - (cx.a - s_shift)).abs() < 2e-10);
            assert!((cy.b - (cx.b - s_shift)).abs() < 2e-10);
        }
    }
}
