//! The precision ladder. Scene documents may override any entry; defaults
//! sit below the check tolerance so detector noise never masquerades as a
//! geometric verdict.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Chart round-trip agreement.
    pub tol_chart: f64,
    /// Singularity threshold for Jacobian determinants and |f|, |v|.
    pub tol_sing: f64,
    /// Vector pushforward consistency between charts.
    pub tol_field: f64,
    /// Integrator per-step error target.
    pub tol_pos: f64,
    /// Event (crossing) location accuracy in the flow parameter s.
    pub tol_event: f64,
    /// |dg/ds| below this flags a tangential crossing.
    pub tol_tangent: f64,
    /// Orbit identity / periodicity distance threshold.
    pub tol_orbit: f64,
    /// Verdict-level numeric agreement.
    pub tol_check: f64,
    /// Infinity-tangency evidence threshold on the distance bound.
    pub tol_delta: f64,
    /// Along-orbit minimum of a domain conjunct at or below this counts as
    /// touching the frontier (tangential model-domain exit).
    pub tol_touch: f64,
    /// Hard cap on |s| for any integration.
    pub s_max: f64,
    /// Integrator maximum step size (scenes with thin domains lower this).
    pub h_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_chart: 1e-9,
            tol_sing: 1e-12,
            tol_field: 1e-7,
            tol_pos: 1e-9,
            tol_event: 1e-10,
            tol_tangent: 1e-7,
            tol_orbit: 1e-6,
            tol_check: 1e-6,
            tol_delta: 1e-6,
            tol_touch: 1e-14,
            s_max: 100.0,
            h_max: 1.0,
        }
    }
}
