//! The manifold V as an atlas of coordinate charts: points, open domain
//! predicates, chart maps (closed-form or numeric), transitions, and the
//! spatial projection dropping the time coordinate.

use std::sync::Arc;

use crate::expr::{self, coord_names, eval_real, Expr, ExprError};
use crate::numerics;
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, thiserror::Error)]
pub enum AtlasError {
    #[error("point violates the chart domain predicate")]
    DomainViolation,
    #[error("intermediate point lies outside the target chart domain")]
    OverlapViolation,
    #[error("non-finite value while evaluating a chart map: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coordinates must be finite")]
    NotFinite,
    #[error("numeric chart map failed to converge")]
    MapSolveFailed,
    #[error("expression error: {0}")]
    Expr(#[from] ExprError),
}

/// Coordinate tuple (x^0, ..., x^N) of a point in some chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates(pub Vec<f64>);

impl Coordinates {
    pub fn new(values: Vec<f64>) -> Result<Coordinates, AtlasError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AtlasError::NotFinite);
        }
        Ok(Coordinates(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Spatial tuple (x^1, ..., x^N).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCoordinates(pub Vec<f64>);

/// Drop the time component, keep the rest in order. Linear by construction.
pub fn spatial_project(c: &Coordinates) -> SpatialCoordinates {
    SpatialCoordinates(c.0[1..].to_vec())
}

pub fn spatial_project_raw(c: &[f64]) -> Vec<f64> {
    c[1..].to_vec()
}

/// A point tagged with the chart its coordinates live in.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRef {
    pub chart: String,
    pub coords: Coordinates,
}

impl PointRef {
    pub fn new(chart: &str, coords: Vec<f64>) -> Result<PointRef, AtlasError> {
        Ok(PointRef { chart: chart.to_string(), coords: Coordinates::new(coords)? })
    }
}

/// Scalar function of a model point, used as an open-set conjunct e(X) > 0.
#[derive(Debug, Clone)]
pub enum ScalarField {
    /// Closed-form expression over the model reference coordinates.
    Expr(Expr),
    /// Expression over the coordinates of `chart`, composed with its
    /// forward map. Lets constructed (numeric) charts describe domains.
    ChartExpr { chart: Arc<Chart>, expr: Expr },
}

impl ScalarField {
    pub fn eval(&self, p: &[f64]) -> Result<f64, AtlasError> {
        match self {
            ScalarField::Expr(e) => Ok(eval_real(e, &coord_names(p.len()), p)?),
            ScalarField::ChartExpr { chart, expr } => {
                let y = chart.forward(p)?;
                Ok(eval_real(expr, &coord_names(y.len()), &y)?)
            }
        }
    }

    /// Gradient with respect to the model coordinates.
    pub fn gradient(&self, p: &[f64]) -> Result<Vec<f64>, AtlasError> {
        match self {
            ScalarField::Expr(e) => Ok(expr::eval_dual(
                e,
                &coord_names(p.len()),
                p,
                &coord_names(p.len()),
            )?
            .partials),
            ScalarField::ChartExpr { chart, expr } => {
                let y = chart.forward(p)?;
                let names = coord_names(y.len());
                let gy = expr::eval_dual(expr, &names, &y, &names)?.partials;
                let jac = chart.jacobian_forward(p)?;
                // grad_x = J^T grad_y
                let mut out = vec![0.0; p.len()];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..y.len()).map(|m| jac[m][i] * gy[m]).sum();
                }
                Ok(out)
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ScalarField::Expr(e) => e.render(),
            ScalarField::ChartExpr { chart, expr } => format!("[{}]{}", chart.id, expr.render()),
        }
    }
}

/// Open subset of the model, as a finite union of conjunctions of strict
/// inequalities e_i(X) > 0. The frontier is where an active conjunct
/// vanishes while the rest stay nonnegative.
#[derive(Debug, Clone)]
pub struct DomainPredicate {
    pub disjuncts: Vec<Vec<ScalarField>>,
}

impl DomainPredicate {
    /// The whole model (no constraints).
    pub fn everywhere() -> DomainPredicate {
        DomainPredicate { disjuncts: vec![vec![]] }
    }

    pub fn from_conjuncts(conjuncts: Vec<Expr>) -> DomainPredicate {
        DomainPredicate {
            disjuncts: vec![conjuncts.into_iter().map(ScalarField::Expr).collect()],
        }
    }

    pub fn from_union(lists: Vec<Vec<Expr>>) -> DomainPredicate {
        DomainPredicate {
            disjuncts: lists
                .into_iter()
                .map(|l| l.into_iter().map(ScalarField::Expr).collect())
                .collect(),
        }
    }

    pub fn is_everywhere(&self) -> bool {
        self.disjuncts.iter().any(|d| d.is_empty())
    }

    /// max over disjuncts of min over conjuncts; positive inside, negative
    /// outside, zero on the frontier. Evaluation failures count as outside.
    pub fn margin(&self, p: &[f64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for conj in &self.disjuncts {
            let mut worst = f64::INFINITY;
            for field in conj {
                let v = field.eval(p).unwrap_or(f64::NEG_INFINITY);
                if v < worst {
                    worst = v;
                }
            }
            if worst > best {
                best = worst;
            }
        }
        best
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.margin(p) > 0.0
    }

    /// The conjunct whose zero realizes the frontier at a near-boundary
    /// point: within the best disjunct, the conjunct of smallest value.
    pub fn active_conjunct(&self, p: &[f64]) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (di, conj) in self.disjuncts.iter().enumerate() {
            if conj.is_empty() {
                continue;
            }
            let mut worst = f64::INFINITY;
            let mut worst_ci = 0;
            for (ci, field) in conj.iter().enumerate() {
                let v = field.eval(p).unwrap_or(f64::NEG_INFINITY);
                if v < worst {
                    worst = v;
                    worst_ci = ci;
                }
            }
            match best {
                Some((_, _, b)) if worst <= b => {}
                _ => best = Some((di, worst_ci, worst)),
            }
        }
        best.map(|(d, c, _)| (d, c))
    }

    pub fn conjunct(&self, idx: (usize, usize)) -> &ScalarField {
        &self.disjuncts[idx.0][idx.1]
    }

    /// Conjunction with extra conjuncts applied to every disjunct.
    pub fn intersect_with(&self, extra: Vec<ScalarField>) -> DomainPredicate {
        DomainPredicate {
            disjuncts: self
                .disjuncts
                .iter()
                .map(|c| {
                    let mut c = c.clone();
                    c.extend(extra.iter().cloned());
                    c
                })
                .collect(),
        }
    }

    pub fn describe(&self) -> String {
        self.disjuncts
            .iter()
            .map(|c| {
                if c.is_empty() {
                    "true".to_string()
                } else {
                    c.iter().map(|f| format!("{} > 0", f.describe())).collect::<Vec<_>>().join(" & ")
                }
            })
            .collect::<Vec<_>>()
            .join(" | ")
    }
}

/// How a chart realizes its coordinate map.
#[derive(Debug, Clone)]
pub enum ChartMap {
    /// Closed-form forward and inverse component expressions.
    Analytic { forward: Vec<Expr>, inverse: Vec<Expr> },
    /// Reparametrized time coordinate y'0 = integral of 1/f along x^0 from
    /// an anchor, on top of a fiber-aligned base chart. Spatial components
    /// pass through unchanged.
    TimeReparam {
        base: Arc<Chart>,
        /// Reference-chart components of the vector field (for f = v'^0).
        field: Vec<Expr>,
        /// Whether the scene applies the 1/(1+|v|^2) speed limiter.
        limited: bool,
        /// Base-chart coordinates of the construction point.
        anchor: Vec<f64>,
        /// Half-width of the construction box in base-chart coordinates.
        radius: f64,
    },
    /// Flow-box coordinates (s, xi): the point F(s, anchor + xi . frame).
    /// The forward map is a shooting Newton solve.
    FlowBox {
        /// Reference-chart components of the vector field.
        field: Vec<Expr>,
        limited: bool,
        /// Optional coordinate periods (wrapped during integration).
        periods: Vec<Option<f64>>,
        anchor: Vec<f64>,
        /// frame[j] spans the transverse section; frame[0] is v(anchor).
        frame: Vec<Vec<f64>>,
        s_half: f64,
        xi_half: f64,
    },
}

/// A coordinate chart: map from model reference coordinates to chart
/// coordinates, with an open domain given in model coordinates.
#[derive(Debug, Clone)]
pub struct Chart {
    pub id: String,
    pub dim: usize,
    pub map: ChartMap,
    pub domain: DomainPredicate,
}

impl Chart {
    pub fn analytic(
        id: &str,
        dim: usize,
        forward: Vec<Expr>,
        inverse: Vec<Expr>,
        domain: DomainPredicate,
    ) -> Chart {
        Chart { id: id.to_string(), dim, map: ChartMap::Analytic { forward, inverse }, domain }
    }

    pub fn identity(id: &str, dim: usize, domain: DomainPredicate) -> Chart {
        let vars: Vec<Expr> = (0..dim).map(|i| Expr::var(&format!("x{i}"))).collect();
        Chart::analytic(id, dim, vars.clone(), vars, domain)
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self.map, ChartMap::Analytic { .. })
    }

    pub fn forward(&self, p: &[f64]) -> Result<Vec<f64>, AtlasError> {
        if p.len() != self.dim {
            return Err(AtlasError::DimensionMismatch { expected: self.dim, got: p.len() });
        }
        match &self.map {
            ChartMap::Analytic { forward, .. } => {
                let names = coord_names(self.dim);
                forward
                    .iter()
                    .map(|e| eval_real(e, &names, p).map_err(AtlasError::from))
                    .collect()
            }
            ChartMap::TimeReparam { base, field, limited, anchor, .. } => {
                let y = base.forward(p)?;
                let q = reparam_integral(base, field, *limited, anchor, y[0], &y[1..])?;
                let mut out = y;
                out[0] = q;
                Ok(out)
            }
            ChartMap::FlowBox { field, limited, periods, anchor, frame, s_half, xi_half } => {
                flow_box_forward(field, *limited, periods, anchor, frame, *s_half, *xi_half, p)
            }
        }
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>, AtlasError> {
        if y.len() != self.dim {
            return Err(AtlasError::DimensionMismatch { expected: self.dim, got: y.len() });
        }
        match &self.map {
            ChartMap::Analytic { inverse, .. } => {
                let names = coord_names(self.dim);
                inverse
                    .iter()
                    .map(|e| eval_real(e, &names, y).map_err(AtlasError::from))
                    .collect()
            }
            ChartMap::TimeReparam { base, field, limited, anchor, radius } => {
                let y0 = invert_reparam(base, field, *limited, anchor, *radius, y[0], &y[1..])?;
                let mut base_coords = y.to_vec();
                base_coords[0] = y0;
                base.inverse(&base_coords)
            }
            ChartMap::FlowBox { field, limited, periods, anchor, frame, .. } => {
                let mut start = anchor.clone();
                for (j, u) in frame.iter().enumerate().skip(1) {
                    for (s, ui) in start.iter_mut().zip(u) {
                        *s += y[j] * ui;
                    }
                }
                crate::flow::raw_flow(field, *limited, periods, &start, y[0])
                    .map_err(|_| AtlasError::MapSolveFailed)
            }
        }
    }

    /// Jacobian of the forward map at a model point (rows indexed by chart
    /// coordinate). Closed-form maps use AD; numeric maps use central
    /// differences on the smooth direction of the pair.
    pub fn jacobian_forward(&self, p: &[f64]) -> Result<Vec<Vec<f64>>, AtlasError> {
        match &self.map {
            ChartMap::Analytic { forward, .. } => {
                let names = coord_names(self.dim);
                forward
                    .iter()
                    .map(|e| {
                        expr::eval_dual(e, &names, p, &names)
                            .map(|d| d.partials)
                            .map_err(AtlasError::from)
                    })
                    .collect()
            }
            ChartMap::TimeReparam { base, field, limited, anchor, .. } => {
                let jb = base.jacobian_forward(p)?;
                let y = base.forward(p)?;
                let f = reparam_f(base, field, *limited, &y)?;
                // Row 0 of the reparam factor: (1/f, dQ/dy_sp by central FD).
                let mut row0 = vec![0.0; self.dim];
                row0[0] = 1.0 / f;
                let h = 1e-5;
                for j in 1..self.dim {
                    let mut sp_plus = y[1..].to_vec();
                    let mut sp_minus = y[1..].to_vec();
                    sp_plus[j - 1] += h;
                    sp_minus[j - 1] -= h;
                    let qp = reparam_integral(base, field, *limited, anchor, y[0], &sp_plus)?;
                    let qm = reparam_integral(base, field, *limited, anchor, y[0], &sp_minus)?;
                    row0[j] = (qp - qm) / (2.0 * h);
                }
                let mut out = jb.clone();
                for col in 0..self.dim {
                    out[0][col] = (0..self.dim).map(|m| row0[m] * jb[m][col]).sum();
                }
                Ok(out)
            }
            ChartMap::FlowBox { .. } => {
                // d(inverse)/dy is smooth (a flow); invert it.
                let y = self.forward(p)?;
                let h = 1e-5;
                let n = self.dim;
                let mut jinv = vec![vec![0.0; n]; n];
                for j in 0..n {
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[j] += h;
                    ym[j] -= h;
                    let xp = self.inverse(&yp)?;
                    let xm = self.inverse(&ym)?;
                    for i in 0..n {
                        jinv[i][j] = (xp[i] - xm[i]) / (2.0 * h);
                    }
                }
                numerics::invert(&jinv).ok_or(AtlasError::MapSolveFailed)
            }
        }
    }

    /// Chart-coordinate expressions for the spatial forward components when
    /// the map is closed-form through the spatial slots.
    pub fn spatial_forward_exprs(&self) -> Option<Vec<Expr>> {
        match &self.map {
            ChartMap::Analytic { forward, .. } => Some(forward[1..].to_vec()),
            ChartMap::TimeReparam { base, .. } => base.spatial_forward_exprs(),
            ChartMap::FlowBox { .. } => None,
        }
    }
}

pub(crate) fn reparam_f(
    base: &Chart,
    field: &[Expr],
    limited: bool,
    y_base: &[f64],
) -> Result<f64, AtlasError> {
    let x = base.inverse(y_base)?;
    let names = coord_names(x.len());
    let mut v: Vec<f64> = field
        .iter()
        .map(|e| eval_real(e, &names, &x))
        .collect::<Result<_, _>>()?;
    if limited {
        let n2: f64 = v.iter().map(|c| c * c).sum();
        let fac = 1.0 / (1.0 + n2);
        for c in &mut v {
            *c *= fac;
        }
    }
    let jac = base.jacobian_forward(&x)?;
    Ok(jac[0].iter().zip(&v).map(|(a, b)| a * b).sum())
}

fn reparam_integral(
    base: &Chart,
    field: &[Expr],
    limited: bool,
    anchor: &[f64],
    y0: f64,
    y_spatial: &[f64],
) -> Result<f64, AtlasError> {
    let integrand = |u: f64| -> Result<f64, numerics::QuadratureError> {
        let mut y = Vec::with_capacity(1 + y_spatial.len());
        y.push(u);
        y.extend_from_slice(y_spatial);
        let f = reparam_f(base, field, limited, &y)
            .map_err(|e| numerics::QuadratureError::Integrand(e.to_string()))?;
        if f.abs() < 1e-300 {
            return Err(numerics::QuadratureError::Integrand("f vanished".into()));
        }
        Ok(1.0 / f)
    };
    let (a, b) = (anchor[0], y0);
    if (a - b).abs() < 1e-300 {
        return Ok(0.0);
    }
    let v = if a <= b {
        numerics::adaptive_simpson(&integrand, a, b, 1e-12)
    } else {
        numerics::adaptive_simpson(&integrand, b, a, 1e-12).map(|v| -v)
    };
    v.map_err(|e| AtlasError::NonFinite(e.to_string()))
}

#[allow(clippy::too_many_arguments)]
fn invert_reparam(
    base: &Chart,
    field: &[Expr],
    limited: bool,
    anchor: &[f64],
    radius: f64,
    target: f64,
    y_spatial: &[f64],
) -> Result<f64, AtlasError> {
    // Q is strictly monotone in y0 on the construction box (f keeps sign).
    let q = |y0: f64| reparam_integral(base, field, limited, anchor, y0, y_spatial);
    let (mut lo, mut hi) = (anchor[0] - radius, anchor[0] + radius);
    let (qlo, qhi) = (q(lo)?, q(hi)?);
    let increasing = qhi > qlo;
    let (mut flo, _fhi) = if increasing { (qlo - target, qhi - target) } else { (target - qlo, target - qhi) };
    if flo > 0.0 {
        return Err(AtlasError::MapSolveFailed);
    }
    for _ in 0..200 {
        if (hi - lo).abs() < 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = if increasing { q(mid)? - target } else { target - q(mid)? };
        if fm <= 0.0 {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let _ = flo;
    Ok(0.5 * (lo + hi))
}

#[allow(clippy::too_many_arguments)]
fn flow_box_forward(
    field: &[Expr],
    limited: bool,
    periods: &[Option<f64>],
    anchor: &[f64],
    frame: &[Vec<f64>],
    s_half: f64,
    xi_half: f64,
    p: &[f64],
) -> Result<Vec<f64>, AtlasError> {
    let n = anchor.len();
    // Cheap reject: the box image sits inside a ball around the anchor.
    let dist = numerics::inf_dist(anchor, p);
    let speed = frame[0].iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let frame_scale = frame
        .iter()
        .skip(1)
        .map(|u| u.iter().map(|v| v.abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let reach = 4.0 * (s_half * speed + xi_half * frame_scale + 1e-6);
    if dist > reach {
        return Err(AtlasError::MapSolveFailed);
    }

    let eval = |y: &[f64]| -> Result<Vec<f64>, AtlasError> {
        let mut start = anchor.to_vec();
        for (j, u) in frame.iter().enumerate().skip(1) {
            for (s, ui) in start.iter_mut().zip(u) {
                *s += y[j] * ui;
            }
        }
        crate::flow::raw_flow(field, limited, periods, &start, y[0])
            .map_err(|_| AtlasError::MapSolveFailed)
    };

    // Initial guess: project p - anchor on the frame.
    let diff: Vec<f64> = p.iter().zip(anchor).map(|(a, b)| a - b).collect();
    let basis: Vec<Vec<f64>> = (0..n).map(|i| frame.iter().map(|u| u[i]).collect()).collect();
    let mut y = numerics::solve_linear(&basis, &diff).ok_or(AtlasError::MapSolveFailed)?;

    let h = 1e-6;
    for _ in 0..60 {
        let cur = eval(&y)?;
        let res: Vec<f64> = cur.iter().zip(p).map(|(a, b)| a - b).collect();
        let err = res.iter().map(|r| r.abs()).fold(0.0, f64::max);
        if err < 1e-11 * speed.max(1.0) {
            if y[0].abs() <= s_half * 1.5 && y[1..].iter().all(|v| v.abs() <= xi_half * 1.5) {
                return Ok(y);
            }
            return Err(AtlasError::MapSolveFailed);
        }
        // FD Jacobian of eval.
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += h;
            ym[j] -= h;
            let fp = eval(&yp)?;
            let fm = eval(&ym)?;
            for i in 0..n {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let delta = numerics::solve_linear(&jac, &res).ok_or(AtlasError::MapSolveFailed)?;
        let scale = delta.iter().map(|d| d.abs()).fold(0.0, f64::max);
        let damp = if scale > 0.5 * (s_half + xi_half) { 0.5 * (s_half + xi_half) / scale } else { 1.0 };
        for (yi, d) in y.iter_mut().zip(&delta) {
            *yi -= damp * d;
        }
        if y[0].abs() > 4.0 * s_half || y[1..].iter().any(|v| v.abs() > 4.0 * xi_half) {
            return Err(AtlasError::MapSolveFailed);
        }
    }
    Err(AtlasError::MapSolveFailed)
}

/// The manifold: a designated reference chart whose domain is the model,
/// plus further charts expressed over the same reference coordinates.
#[derive(Debug, Clone)]
pub struct ManifoldModel {
    pub dim: usize,
    pub reference: Chart,
    pub atlas: Vec<Chart>,
    /// Authoring window in reference coordinates; all sampling happens here.
    pub window: Vec<(f64, f64)>,
    pub tols: Tolerances,
}

impl ManifoldModel {
    pub fn chart(&self, id: &str) -> Option<&Chart> {
        if self.reference.id == id {
            return Some(&self.reference);
        }
        self.atlas.iter().find(|c| c.id == id)
    }

    pub fn all_charts(&self) -> Vec<&Chart> {
        let mut v = vec![&self.reference];
        v.extend(self.atlas.iter());
        v
    }

    pub fn in_model(&self, p: &[f64]) -> bool {
        self.reference.domain.contains(p)
    }

    /// Low-discrepancy samples of the window filtered by `pred` (and the
    /// model domain). Deterministic in (seed, count).
    pub fn sample_where(&self, pred: &DomainPredicate, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut seq = numerics::KroneckerSeq::new(self.dim, seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count * 400 {
            if out.len() >= count {
                break;
            }
            let p = seq.next_in_box(&self.window);
            if self.in_model(&p) && pred.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    /// Express a point reference in model (reference-chart) coordinates.
    pub fn to_reference(&self, p: &PointRef) -> Result<Vec<f64>, AtlasError> {
        if p.chart == self.reference.id {
            return Ok(p.coords.0.clone());
        }
        let chart = self.chart(&p.chart).ok_or(AtlasError::DomainViolation)?;
        chart.inverse(&p.coords.0)
    }
}

/// Apply the chart's forward map; the point must satisfy the domain.
pub fn eval_chart(chart: &Chart, p: &Coordinates) -> Result<Coordinates, AtlasError> {
    if !chart.domain.contains(&p.0) {
        return Err(AtlasError::DomainViolation);
    }
    let out = chart.forward(&p.0)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(AtlasError::NonFinite(chart.id.clone()));
    }
    Ok(Coordinates(out))
}

/// Transition map: chart-a coordinates to chart-b coordinates.
pub fn transition(a: &Chart, b: &Chart, c: &Coordinates) -> Result<Coordinates, AtlasError> {
    let x = a.inverse(&c.0)?;
    if !b.domain.contains(&x) {
        return Err(AtlasError::OverlapViolation);
    }
    Ok(Coordinates(b.forward(&x)?))
}

/// Transition Jacobian at a model point, via the chain of forward Jacobians.
pub fn transition_jacobian(a: &Chart, b: &Chart, x: &[f64]) -> Result<Vec<Vec<f64>>, AtlasError> {
    let ja = a.jacobian_forward(x)?;
    let jb = b.jacobian_forward(x)?;
    let ja_inv = numerics::invert(&ja).ok_or(AtlasError::MapSolveFailed)?;
    let n = x.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (0..n).map(|k| jb[i][k] * ja_inv[k][j]).sum();
        }
    }
    Ok(out)
}

/// Smoothness proxy over every overlapping chart pair: the AD Jacobian of
/// the transition exists, is finite, and |det| > tol_sing at all sampled
/// overlap points. Failures become report entries with witness points.
pub fn check_atlas_compatibility(m: &ManifoldModel, samples: usize) -> crate::report::Report {
    let mut report = crate::report::Report::new();
    let charts = m.all_charts();
    let mut pairs = 0;
    for i in 0..charts.len() {
        for j in i + 1..charts.len() {
            let (a, b) = (charts[i], charts[j]);
            let mut seq = numerics::KroneckerSeq::new(m.dim, 0x5EED ^ (i as u64) << 8 ^ j as u64);
            let mut overlap = Vec::new();
            for _ in 0..samples * 200 {
                if overlap.len() >= samples {
                    break;
                }
                let p = seq.next_in_box(&m.window);
                if m.in_model(&p) && a.domain.contains(&p) && b.domain.contains(&p) {
                    overlap.push(p);
                }
            }
            if overlap.is_empty() {
                continue;
            }
            pairs += 1;
            let name = format!("transition {} -> {}", a.id, b.id);
            let mut witnesses = Vec::new();
            for p in &overlap {
                match transition_jacobian(a, b, p) {
                    Ok(jac) => {
                        let det = numerics::determinant(&jac);
                        if !det.is_finite() || det.abs() <= m.tols.tol_sing {
                            witnesses.push(format!("|det|={:.3e} at {:?}", det.abs(), p));
                        }
                    }
                    Err(e) => witnesses.push(format!("jacobian failed at {p:?}: {e}")),
                }
            }
            if witnesses.is_empty() {
                report.pass(&name, format!("{} overlap points checked", overlap.len()));
            } else {
                witnesses.truncate(5);
                report.fail(&name, witnesses);
            }
        }
    }
    report.pass("atlas pairs", format!("{pairs} overlapping pairs"));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn warp_chart() -> Chart {
        Chart::analytic(
            "warp",
            2,
            vec![parse("x0").unwrap(), parse("x1 + 0.2*sin(x0)").unwrap()],
            vec![parse("x0").unwrap(), parse("x1 - 0.2*sin(x0)").unwrap()],
            DomainPredicate::everywhere(),
        )
    }

    #[test]
    fn eval_chart_identity_and_warp() {
        let id = Chart::identity("id", 2, DomainPredicate::everywhere());
        let p = Coordinates::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(eval_chart(&id, &p).unwrap().0, vec![0.3, 0.7]);

        let w = warp_chart();
        let p = Coordinates::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(eval_chart(&w, &p).unwrap().0, vec![0.0, 1.0]);
        let p = Coordinates::new(vec![std::f64::consts::FRAC_PI_2, 0.0]).unwrap();
        let out = eval_chart(&w, &p).unwrap().0;
        assert!((out[0] - 1.5707963).abs() < 1e-6);
        assert!((out[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn spatial_projection_drops_time() {
        let c = Coordinates::new(vec![5.0, 1.0, 2.0]).unwrap();
        assert_eq!(spatial_project(&c).0, vec![1.0, 2.0]);
        let c = Coordinates::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(spatial_project(&c).0, vec![0.0]);
        let c = Coordinates::new(vec![-1.5, 3.25]).unwrap();
        assert_eq!(spatial_project(&c).0, vec![3.25]);
    }

    #[test]
    fn transition_through_spatial_change() {
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
        let c = Coordinates::new(vec![0.5, 1.0]).unwrap();
        let out = transition(&id, &cubic, &c).unwrap();
        assert!((out.0[0] - 0.5).abs() < 1e-12);
        assert!((out.0[1] - 2.0).abs() < 1e-12);
        // Round trip through the cubic inverse.
        let back = transition(&cubic, &id, &out).unwrap();
        assert!((back.0[1] - 1.0).abs() < 1e-9);

        // Warp chart inverse direction.
        let w = warp_chart();
        let id2 = Chart::identity("id", 2, DomainPredicate::everywhere());
        let c = Coordinates::new(vec![std::f64::consts::FRAC_PI_2, 0.2]).unwrap();
        let out = transition(&w, &id2, &c).unwrap();
        assert!((out.0[0] - 1.5707963).abs() < 1e-6);
        assert!(out.0[1].abs() < 1e-12);
    }

    #[test]
    fn domain_predicate_margins_and_unions() {
        let disk = DomainPredicate::from_conjuncts(vec![parse("1 - x0^2 - x1^2").unwrap()]);
        assert!(disk.contains(&[0.0, 0.0]));
        assert!(!disk.contains(&[1.0, 0.0]));
        assert!(disk.margin(&[2.0, 0.0]) < 0.0);

        let slabs = DomainPredicate::from_union(vec![
            vec![parse("x0 + 2").unwrap(), parse("-1 - x0").unwrap()],
            vec![parse("x0 - 1").unwrap(), parse("2 - x0").unwrap()],
        ]);
        assert!(slabs.contains(&[-1.5, 0.0]));
        assert!(slabs.contains(&[1.5, 0.0]));
        assert!(!slabs.contains(&[0.0, 0.0]));
    }

    #[test]
    fn predicate_is_open_in_spirit() {
        // The frontier itself is excluded (strict inequalities).
        let disk = DomainPredicate::from_conjuncts(vec![parse("1 - x0^2 - x1^2").unwrap()]);
        assert!(!disk.contains(&[0.0, 1.0]));
    }
}
