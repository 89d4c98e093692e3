//! Executable differential geometry for reference fluids: numerical flows
//! of a vector field on a chart-based manifold, detection and construction
//! of flow-adapted coordinate charts, transversality and boundary-crossing
//! analysis, and assembly of the orbit-space atlas with separation and
//! local-to-global embedding checks.
//!
//! The library is scene-driven: a scene document declares a reference chart,
//! an atlas, a vector field, named open domains, and a list of probes; the
//! check runner executes the probes and emits a deterministic JSON report.
//! A built-in gallery covers the canonical scenarios (constant and warped
//! fields, a Kruskal-style hyperbolic-domain chart, the plane minus a point
//! whose orbit space is the line with two origins, a periodic rotation and
//! an irrational torus winding as negative controls, and a rotating frame).

pub mod adapt;
pub mod atlas;
pub mod checks;
pub mod expr;
pub mod flow;
pub mod numerics;
pub mod orbit_space;
pub mod report;
pub mod scene;
pub mod tolerances;
pub mod transversality;

pub use atlas::{
    check_atlas_compatibility, eval_chart, spatial_project, transition, Chart, ChartMap,
    Coordinates, DomainPredicate, ManifoldModel, PointRef, ScalarField, SpatialCoordinates,
};
pub use flow::{
    flow, group_law_check, interval_set, orbit_polyline, Crossing, EndpointKind, FlowResult,
    FlowStatus, IntervalComponent, IntervalSet, OrbitRef, VectorFieldModel,
};
pub use report::{CheckEntry, Report, Verdict};
pub use tolerances::Tolerances;
