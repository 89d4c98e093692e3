//! Crossings of parameter lines with the boundary of the flow preimage of
//! a domain: transversality classification, tangency scans, the boundary
//! pullback identity, tangency-at-infinity evidence, and persistence and
//! smoothness of interval endpoints under seed perturbations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::atlas::{Coordinates, DomainPredicate, PointRef};
use crate::flow::{flow, flow_point, interval_set, FlowError, FlowStatus, VectorFieldModel};
use crate::numerics;
use crate::report::Report;

/// A crossing of the line R x {X} with the boundary of F^{-1}(U), located
/// on the trajectory through X.
pub use crate::flow::Crossing as CrossingEvent;

#[derive(Debug, Clone, thiserror::Error)]
pub enum TransversalityError {
    #[error("precondition violated: {0}")]
    InvalidPrecondition(String),
    #[error("interval persistence violated at offset {offset}: {components} components")]
    PersistenceViolation { offset: f64, components: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Crossing events of the line through X with Fr(F^{-1}(U)): the endpoints
/// of the interval-set components of kind crossing, plus boundary touches,
/// each carrying dg/ds.
pub fn line_crossings(
    vf: &VectorFieldModel,
    x: &PointRef,
    u: &DomainPredicate,
    horizon: f64,
) -> Result<Vec<CrossingEvent>, TransversalityError> {
    let iset = interval_set(vf, x, u, horizon)?;
    Ok(iset.all_crossings())
}

/// Classification of grid points by tangency of their line with Sigma_U.
#[derive(Debug, Clone)]
pub struct TangencyScan {
    pub grid: Vec<PointRef>,
    pub in_s_sigma: Vec<bool>,
    pub witnesses: Vec<(PointRef, CrossingEvent)>,
    /// Worst (smallest) |dg/ds| seen per grid point; infinity when the line
    /// has no crossing at all.
    pub worst_dgds: Vec<f64>,
}

/// Flag every grid point whose line has a non-transverse crossing within
/// the horizon (the apparent-contour estimate).
pub fn tangency_scan(
    vf: &VectorFieldModel,
    u: &DomainPredicate,
    grid: &[Vec<f64>],
    horizon: f64,
) -> Result<TangencyScan, TransversalityError> {
    let mut out = TangencyScan {
        grid: Vec::with_capacity(grid.len()),
        in_s_sigma: Vec::with_capacity(grid.len()),
        witnesses: Vec::new(),
        worst_dgds: Vec::with_capacity(grid.len()),
    };
    for p in grid {
        let pr = PointRef {
            chart: vf.manifold.reference.id.clone(),
            coords: Coordinates(p.clone()),
        };
        let crossings = line_crossings(vf, &pr, u, horizon)?;
        let mut tangent = false;
        let mut worst = f64::INFINITY;
        for c in &crossings {
            worst = worst.min(c.dgds.abs());
            if !c.transverse {
                tangent = true;
                out.witnesses.push((pr.clone(), c.clone()));
            }
        }
        out.grid.push(pr);
        out.in_s_sigma.push(tangent);
        out.worst_dgds.push(worst);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Interior,
    Boundary,
    Exterior,
}

/// Classify a model point against U by predicate sign and an estimated
/// distance to the active level set.
fn classify_point(u: &DomainPredicate, p: &[f64], band: f64) -> Region {
    let m = u.margin(p);
    let grad_norm = u
        .active_conjunct(p)
        .and_then(|idx| u.conjunct(idx).gradient(p).ok())
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .unwrap_or(1.0)
        .max(1e-9);
    if (m / grad_norm).abs() <= band {
        Region::Boundary
    } else if m > 0.0 {
        Region::Interior
    } else {
        Region::Exterior
    }
}

/// Classify (s, X) against D_U = F^{-1}(U) by a local perturbation flip
/// test with radius eps.
fn classify_flow_preimage(
    vf: &VectorFieldModel,
    u: &DomainPredicate,
    s: f64,
    x: &[f64],
    eps: f64,
) -> Result<Region, FlowError> {
    let mut stencil: Vec<(f64, Vec<f64>)> = vec![(s, x.to_vec())];
    stencil.push((s + eps, x.to_vec()));
    stencil.push((s - eps, x.to_vec()));
    for j in 0..x.len() {
        for sign in [1.0, -1.0] {
            let mut q = x.to_vec();
            q[j] += sign * eps;
            stencil.push((s, q));
        }
    }
    let mut inside = 0;
    let mut outside = 0;
    for (si, q) in &stencil {
        if !vf.manifold.in_model(q) {
            outside += 1;
            continue;
        }
        match flow_point(vf, q, *si) {
            Ok(p) => {
                if u.contains(&p) {
                    inside += 1;
                } else {
                    outside += 1;
                }
            }
            Err(_) => outside += 1,
        }
    }
    Ok(if inside > 0 && outside > 0 {
        Region::Boundary
    } else if inside > 0 {
        Region::Interior
    } else {
        Region::Exterior
    })
}

/// The pullback identity Fr(F^{-1}(U)) = F^{-1}(Fr(U)) checked sample-wise:
/// the image classification of F(s,X) against U must agree with the local
/// perturbation classification of (s,X) against D_U.
pub fn pullback_boundary_check(
    vf: &VectorFieldModel,
    u: &DomainPredicate,
    samples: usize,
    s_range: f64,
    seed: u64,
) -> Report {
    let mut report = Report::new();
    let m = &vf.manifold;
    let eps = 10.0 * m.tols.tol_event;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = Vec::new();
    let mut checked = 0usize;
    let mut attempts = 0usize;
    while checked < samples && attempts < samples * 50 {
        attempts += 1;
        let x: Vec<f64> = m
            .window
            .iter()
            .map(|(lo, hi)| rng.gen_range(*lo..*hi))
            .collect();
        if !m.in_model(&x) {
            continue;
        }
        let s = rng.gen_range(-s_range..s_range);
        let pr = PointRef { chart: m.reference.id.clone(), coords: Coordinates(x.clone()) };
        let fr = match flow(vf, &pr, s) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if fr.status != FlowStatus::Interior {
            continue;
        }
        checked += 1;
        let image_class = classify_point(u, &fr.point.coords.0, eps);
        let preimage_class = match classify_flow_preimage(vf, u, s, &x, eps) {
            Ok(c) => c,
            Err(_) => continue,
        };
        if image_class != preimage_class {
            mismatches.push(format!(
                "(s, X) = ({s:.6}, {x:?}): image {image_class:?} vs preimage {preimage_class:?}"
            ));
        }
    }
    if checked == 0 {
        report.inconclusive("boundary pullback", "no usable samples");
    } else if mismatches.is_empty() {
        report.pass("boundary pullback", format!("{checked} samples, zero mismatches"));
    } else {
        mismatches.truncate(5);
        report.fail("boundary pullback", mismatches);
    }
    report
}

/// Classify an exactly-prepared triple (used by scene probes for the
/// constructed boundary cases).
pub fn pullback_classify_one(
    vf: &VectorFieldModel,
    u: &DomainPredicate,
    s: f64,
    x: &[f64],
) -> Result<(String, String), TransversalityError> {
    let eps = 10.0 * vf.manifold.tols.tol_event;
    let p = flow_point(vf, x, s)?;
    let image = classify_point(u, &p, eps);
    let pre = classify_flow_preimage(vf, u, s, x, eps)?;
    Ok((format!("{image:?}"), format!("{pre:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfinityVerdict {
    NoEvidence,
    PossibleTangencyAtInfinity,
}

#[derive(Debug, Clone)]
pub struct InfinityTangencyEvidence {
    pub horizon_r: f64,
    /// Lower bound on inf over |s| in [R, Rmax] of d(X, Sigma_s);
    /// +infinity when every probed slice is empty.
    pub delta_lower_bound: f64,
    pub verdict: InfinityVerdict,
}

/// Estimate inf over |s| in [R, Rmax] of the distance from X to the slice
/// Sigma_s of Fr(F^{-1}(U)). Slices are traced by flowing sampled frontier
/// points of U backwards: Sigma_s = F_{-s}(Fr(U)).
pub fn infinity_tangency_probe(
    vf: &VectorFieldModel,
    u: &DomainPredicate,
    x: &PointRef,
    r: f64,
    r_max: f64,
) -> Result<InfinityTangencyEvidence, TransversalityError> {
    if !(r < r_max) {
        return Err(TransversalityError::InvalidPrecondition(
            "requires R < Rmax".to_string(),
        ));
    }
    let m = &vf.manifold;
    let x0 = m.to_reference(x).map_err(FlowError::from)?;
    if u.is_everywhere() {
        return Ok(InfinityTangencyEvidence {
            horizon_r: r,
            delta_lower_bound: f64::INFINITY,
            verdict: InfinityVerdict::NoEvidence,
        });
    }

    let frontier = sample_frontier(vf, u, 48);
    if frontier.is_empty() {
        return Ok(InfinityTangencyEvidence {
            horizon_r: r,
            delta_lower_bound: f64::INFINITY,
            verdict: InfinityVerdict::NoEvidence,
        });
    }

    // Slice points are Sigma_s = F_{-s}(Fr U): scan a coarse (Z, s) grid,
    // then refine the best candidates locally over s and over the frontier
    // tangent directions.
    let n_slices = 24;
    let mut candidates: Vec<(f64, Vec<f64>, f64)> = Vec::new(); // (d, Z, s)
    for z in &frontier {
        for dir in [1.0f64, -1.0] {
            let pr = PointRef { chart: m.reference.id.clone(), coords: Coordinates(z.clone()) };
            let reach = match flow(vf, &pr, -dir * r_max) {
                Ok(rr) => rr.s_achieved.abs(),
                Err(_) => 0.0,
            };
            for k in 0..=n_slices {
                let s = dir * (r + (r_max - r) * k as f64 / n_slices as f64);
                if s.abs() > reach + 1e-12 {
                    continue;
                }
                if let Ok(y) = flow_point(vf, z, -s) {
                    let d = vf.wrapped_dist(&y, &x0);
                    candidates.push((d, z.clone(), s));
                }
            }
        }
    }
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    candidates.truncate(3);

    let mut best = f64::INFINITY;
    for (d0, z0_pt, s0) in candidates {
        best = best.min(d0);
        let refined = refine_slice_distance(vf, u, &x0, &z0_pt, s0, r, r_max);
        best = best.min(refined);
    }

    let verdict = if best > m.tols.tol_delta {
        InfinityVerdict::NoEvidence
    } else {
        InfinityVerdict::PossibleTangencyAtInfinity
    };
    Ok(InfinityTangencyEvidence { horizon_r: r, delta_lower_bound: best, verdict })
}

/// Coordinate descent of d(X, F(-s, Z)) over the slice parameter s (kept in
/// [R, Rmax] in absolute value) and the frontier point Z, which slides
/// along the tangent directions of Fr(U) with Newton reprojection onto the
/// level set after every move.
fn refine_slice_distance(
    vf: &VectorFieldModel,
    u: &DomainPredicate,
    x0: &[f64],
    z_start: &[f64],
    s_start: f64,
    r: f64,
    r_max: f64,
) -> f64 {
    let dim = x0.len();
    let project = |z: &[f64]| -> Option<Vec<f64>> {
        let mut p = z.to_vec();
        for _ in 0..40 {
            let g = u.margin(&p);
            if g.abs() < 1e-12 {
                return Some(p);
            }
            let idx = u.active_conjunct(&p)?;
            let grad = u.conjunct(idx).gradient(&p).ok()?;
            let n2: f64 = grad.iter().map(|v| v * v).sum();
            if n2 < 1e-18 {
                return None;
            }
            for (pi, gi) in p.iter_mut().zip(&grad) {
                *pi -= g * gi / n2;
            }
        }
        None
    };
    let objective = |z: &[f64], s: f64| -> f64 {
        match flow_point(vf, z, -s) {
            Ok(y) => vf.wrapped_dist(&y, x0),
            Err(_) => f64::INFINITY,
        }
    };
    let sign = s_start.signum();
    let (s_lo, s_hi) = (r, r_max);

    let mut z = z_start.to_vec();
    let mut s = s_start.abs();
    let mut best = objective(&z, sign * s);
    let mut step = 0.25_f64;
    for _ in 0..40 {
        // s line search within the allowed band.
        let (s_new, d_s) = numerics::golden_min(
            |t| objective(&z, sign * t),
            (s - step).max(s_lo),
            (s + step).min(s_hi),
            1e-10,
        );
        if d_s < best {
            best = d_s;
            s = s_new;
        }
        // Tangent moves: directions orthogonal to the active gradient.
        if let Some(idx) = u.active_conjunct(&z) {
            if let Ok(grad) = u.conjunct(idx).gradient(&z) {
                let gn: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let unit: Vec<f64> = grad.iter().map(|v| v / gn).collect();
                for axis in 0..dim {
                    let mut t_dir = vec![0.0; dim];
                    t_dir[axis] = 1.0;
                    let dot: f64 = t_dir.iter().zip(&unit).map(|(a, b)| a * b).sum();
                    for (ti, ui) in t_dir.iter_mut().zip(&unit) {
                        *ti -= dot * ui;
                    }
                    let norm: f64 = t_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < 1e-9 {
                        continue;
                    }
                    for c in &mut t_dir {
                        *c /= norm;
                    }
                    let (t_best, d_t) = numerics::golden_min(
                        |t| {
                            let cand: Vec<f64> =
                                z.iter().zip(&t_dir).map(|(zi, ti)| zi + t * ti).collect();
                            match project(&cand) {
                                Some(p) => objective(&p, sign * s),
                                None => f64::INFINITY,
                            }
                        },
                        -step,
                        step,
                        1e-10,
                    );
                    if d_t < best {
                        best = d_t;
                        if let Some(p) = project(
                            &z.iter().zip(&t_dir).map(|(zi, ti)| zi + t_best * ti).collect::<Vec<_>>(),
                        ) {
                            z = p;
                        }
                    }
                }
            }
        }
        step *= 0.6;
        if step < 1e-11 {
            break;
        }
    }
    best
}

/// Points on Fr(U): bisect the margin along segments between inside and
/// outside samples of the window.
fn sample_frontier(vf: &VectorFieldModel, u: &DomainPredicate, count: usize) -> Vec<Vec<f64>> {
    let m = &vf.manifold;
    let mut seq = numerics::KroneckerSeq::new(m.dim, 0xF40);
    let mut inside: Vec<Vec<f64>> = Vec::new();
    let mut outside: Vec<Vec<f64>> = Vec::new();
    for _ in 0..count * 60 {
        if inside.len() >= count && outside.len() >= count {
            break;
        }
        let p = seq.next_in_box(&m.window);
        if !m.in_model(&p) {
            continue;
        }
        if u.contains(&p) {
            if inside.len() < count {
                inside.push(p);
            }
        } else if outside.len() < count {
            outside.push(p);
        }
    }
    let mut frontier = Vec::new();
    for (a, b) in inside.iter().zip(outside.iter()) {
        // Margin along the segment a -> b changes sign.
        let at = |t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect()
        };
        let f = |t: f64| u.margin(&at(t));
        let root = numerics::bisect(f, 0.0, 1.0, u.margin(a), 1e-12);
        frontier.push(at(root));
    }
    frontier
}

/// Tabulated endpoint functions phi_1 < phi_2 of the perturbed interval,
/// with finite-difference derivative estimates at two step sizes.
#[derive(Debug, Clone)]
pub struct EndpointFunctions {
    pub center: PointRef,
    pub direction: Vec<f64>,
    pub offsets: Vec<f64>,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    /// Per offset: (dphi1 at h, dphi1 at h/2, dphi2 at h, dphi2 at h/2).
    pub fd_derivatives: Vec<(f64, f64, f64, f64)>,
    pub fd_step: f64,
}

fn single_bounded_interval(
    vf: &VectorFieldModel,
    u: &DomainPredicate,
    p: &[f64],
    horizon: f64,
) -> Result<Option<(f64, f64, bool)>, FlowError> {
    let pr = PointRef { chart: vf.manifold.reference.id.clone(), coords: Coordinates(p.to_vec()) };
    let iset = interval_set(vf, &pr, u, horizon)?;
    if iset.components.len() != 1 {
        return Ok(None);
    }
    let c = &iset.components[0];
    let transverse = matches!(&c.kind_a, crate::flow::EndpointKind::Crossing(cr) if cr.transverse)
        && matches!(&c.kind_b, crate::flow::EndpointKind::Crossing(cr) if cr.transverse);
    Ok(Some((c.a, c.b, transverse)))
}

/// Recompute the interval at perturbed seeds Y = X + m * direction,
/// asserting single-component persistence and tabulating the endpoint
/// functions with two-step FD derivative estimates.
pub fn endpoint_stability(
    vf: &VectorFieldModel,
    u: &DomainPredicate,
    x: &PointRef,
    direction: &[f64],
    magnitudes: &[f64],
    horizon: f64,
) -> Result<EndpointFunctions, TransversalityError> {
    let m = &vf.manifold;
    let x0 = m.to_reference(x).map_err(FlowError::from)?;
    match single_bounded_interval(vf, u, &x0, horizon)? {
        Some((_, _, true)) => {}
        Some((_, _, false)) => {
            return Err(TransversalityError::InvalidPrecondition(
                "base interval endpoints are not both transverse crossings".into(),
            ))
        }
        None => {
            return Err(TransversalityError::InvalidPrecondition(
                "base seed does not have a single bounded interval".into(),
            ))
        }
    }

    let h = 1e-3;
    let probe = |mag: f64| -> Result<(f64, f64), TransversalityError> {
        let p: Vec<f64> = x0.iter().zip(direction).map(|(a, d)| a + mag * d).collect();
        match single_bounded_interval(vf, u, &p, horizon)? {
            Some((a, b, _)) => Ok((a, b)),
            None => {
                let pr =
                    PointRef { chart: m.reference.id.clone(), coords: Coordinates(p.clone()) };
                let n = interval_set(vf, &pr, u, horizon)?.components.len();
                Err(TransversalityError::PersistenceViolation { offset: mag, components: n })
            }
        }
    };

    let mut phi1 = Vec::with_capacity(magnitudes.len());
    let mut phi2 = Vec::with_capacity(magnitudes.len());
    let mut fd = Vec::with_capacity(magnitudes.len());
    for &mag in magnitudes {
        let (a, b) = probe(mag)?;
        phi1.push(a);
        phi2.push(b);
        let mut d = [0.0_f64; 4];
        for (i, step) in [h, h / 2.0].iter().enumerate() {
            let (ap, bp) = probe(mag + step)?;
            let (am, bm) = probe(mag - step)?;
            d[i] = (ap - am) / (2.0 * step);
            d[i + 2] = (bp - bm) / (2.0 * step);
        }
        fd.push((d[0], d[1], d[2], d[3]));
    }
    Ok(EndpointFunctions {
        center: x.clone(),
        direction: direction.to_vec(),
        offsets: magnitudes.to_vec(),
        phi1,
        phi2,
        fd_derivatives: fd,
        fd_step: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::{Chart, ManifoldModel};
    use crate::expr::parse;
    use crate::tolerances::Tolerances;
    use std::sync::Arc;

    fn plane() -> Arc<ManifoldModel> {
        Arc::new(ManifoldModel {
            dim: 2,
            reference: Chart::identity("reference", 2, DomainPredicate::everywhere()),
            atlas: vec![],
            window: vec![(-3.0, 3.0), (-3.0, 3.0)],
            tols: Tolerances::default(),
        })
    }

    fn constant_field() -> VectorFieldModel {
        VectorFieldModel::new(plane(), vec![parse("1").unwrap(), parse("0").unwrap()])
    }

    fn disk() -> DomainPredicate {
        DomainPredicate::from_conjuncts(vec![parse("1 - x0^2 - x1^2").unwrap()])
    }

    fn pt(x: f64, y: f64) -> PointRef {
        PointRef::new("reference", vec![x, y]).unwrap()
    }

    #[test]
    fn disk_crossings_with_derivatives() {
        let vf = constant_field();
        let events = line_crossings(&vf, &pt(0.0, 0.0), &disk(), 10.0).unwrap();
        assert_eq!(events.len(), 2);
        // g = 1 - (x0+s)^2 - x1^2 along the line: dg/ds = -2(x0+s).
        assert!((events[0].s + 1.0).abs() < 1e-8);
        assert!((events[0].dgds - 2.0).abs() < 1e-6, "{:?}", events[0]);
        assert!((events[1].s - 1.0).abs() < 1e-8);
        assert!((events[1].dgds + 2.0).abs() < 1e-6);
        assert!(events.iter().all(|e| e.transverse));
    }

    #[test]
    fn tangent_line_flagged() {
        let vf = constant_field();
        let events = line_crossings(&vf, &pt(0.0, 1.0), &disk(), 10.0).unwrap();
        assert_eq!(events.len(), 1, "{events:?}");
        assert!(events[0].s.abs() < 1e-5);
        assert!(!events[0].transverse);
        assert!(events[0].dgds.abs() < 1e-4);
    }

    #[test]
    fn tangency_scan_flags_only_near_rim() {
        let vf = constant_field();
        let grid = vec![
            vec![-2.0, -1.2],
            vec![-2.0, 0.0],
            vec![-2.0, 0.999],
            vec![-2.0, 1.0],
        ];
        let scan = tangency_scan(&vf, &disk(), &grid, 10.0).unwrap();
        assert!(!scan.in_s_sigma[0]); // no crossings at all
        assert!(scan.worst_dgds[0].is_infinite());
        assert!(!scan.in_s_sigma[1]); // central line crosses transversally
        // |dgds| = 2 sqrt(1 - x1^2) -> 0.0894 at x1 = 0.999; still transverse
        // at tol_tangent but small.
        assert!(scan.worst_dgds[2] < 0.1);
        assert!(scan.in_s_sigma[3]); // exactly tangent
    }

    #[test]
    fn square_faces_have_unit_dgds() {
        let vf = constant_field();
        let square = DomainPredicate::from_conjuncts(vec![
            parse("1 - x0").unwrap(),
            parse("x0 + 1").unwrap(),
            parse("1 - x1").unwrap(),
            parse("x1 + 1").unwrap(),
        ]);
        let events = line_crossings(&vf, &pt(-2.0, 0.5), &square, 10.0).unwrap();
        assert_eq!(events.len(), 2);
        for e in &events {
            assert!((e.dgds.abs() - 1.0).abs() < 1e-8);
            assert!(e.transverse);
        }
    }

    #[test]
    fn pullback_constructed_cases() {
        let vf = constant_field();
        let u = disk();
        let (img, pre) = pullback_classify_one(&vf, &u, 0.25, &[0.0, 0.0]).unwrap();
        assert_eq!(img, "Interior");
        assert_eq!(pre, "Interior");
        let (img, pre) = pullback_classify_one(&vf, &u, 1.0, &[0.0, 0.0]).unwrap();
        assert_eq!(img, "Boundary");
        assert_eq!(pre, "Boundary");
        let (img, pre) = pullback_classify_one(&vf, &u, 3.0, &[0.0, 0.0]).unwrap();
        assert_eq!(img, "Exterior");
        assert_eq!(pre, "Exterior");
    }

    #[test]
    fn pullback_random_samples_agree() {
        let vf = constant_field();
        let rep = pullback_boundary_check(&vf, &disk(), 100, 3.0, 99);
        assert!(rep.all_passed(), "{rep:?}");
    }

    #[test]
    fn infinity_probe_disk() {
        let vf = constant_field();
        let ev = infinity_tangency_probe(&vf, &disk(), &pt(0.0, 0.0), 5.0, 20.0).unwrap();
        assert_eq!(ev.verdict, InfinityVerdict::NoEvidence);
        // d(X, Sigma_s) = |s| - 1 at best: at s = 5 the bound is 4.
        assert!((ev.delta_lower_bound - 4.0).abs() < 0.05, "{ev:?}");
        // R too small: slices at |s| slightly above 0.5 come within reach of
        // the crossing band, driving the bound to zero.
        let ev = infinity_tangency_probe(&vf, &disk(), &pt(0.0, 0.0), 0.5, 20.0).unwrap();
        assert_eq!(ev.verdict, InfinityVerdict::PossibleTangencyAtInfinity);
        // Empty frontier: U = everything.
        let ev = infinity_tangency_probe(
            &vf,
            &DomainPredicate::everywhere(),
            &pt(0.0, 0.0),
            5.0,
            20.0,
        )
        .unwrap();
        assert_eq!(ev.verdict, InfinityVerdict::NoEvidence);
        assert!(ev.delta_lower_bound.is_infinite());
    }

    #[test]
    fn endpoint_functions_of_disk() {
        let vf = constant_field();
        let ef = endpoint_stability(
            &vf,
            &disk(),
            &pt(0.0, 0.0),
            &[0.0, 1.0],
            &[0.0, 0.25, 0.5],
            10.0,
        )
        .unwrap();
        for (k, &mag) in ef.offsets.iter().enumerate() {
            let expect = (1.0 - mag * mag).sqrt();
            assert!((ef.phi1[k] + expect).abs() < 1e-6);
            assert!((ef.phi2[k] - expect).abs() < 1e-6);
        }
        // dphi2/dy at y = 0.5 is -y/sqrt(1-y^2) = -0.57735.
        let (_, _, d_h, d_h2) = ef.fd_derivatives[2];
        assert!((d_h2 + 0.5 / (0.75_f64).sqrt()).abs() < 1e-3, "{d_h2}");
        let agree = (d_h - d_h2).abs() / (1.0 + d_h2.abs());
        assert!(agree < 0.05);
    }

    #[test]
    fn endpoint_persistence_violation_near_tangency() {
        let vf = constant_field();
        let err = endpoint_stability(
            &vf,
            &disk(),
            &pt(0.0, 0.0),
            &[0.0, 1.0],
            &[0.0, 0.999],
            10.0,
        );
        assert!(matches!(
            err,
            Err(TransversalityError::PersistenceViolation { .. })
        ));
    }
}
