//! Manifold diagnostics over finite embedding clouds.

mod hausdorff;
mod manifold;
mod pca;
mod proximity;

pub use hausdorff::{directed_hausdorff, hausdorff_distance, PointCloud};
pub use manifold::{
    class_manifolds, manifold_report, ClassFragmentation, ClassManifolds, LocalDistance,
    ManifoldReport,
};
pub use pca::{pca_project_2d, Projection2d};
pub use proximity::{proximity_harness, ProximityConfig, ProximityReport, ProximitySeedResult};
