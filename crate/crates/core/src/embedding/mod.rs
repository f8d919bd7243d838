//! Shared-basis PCA and per-client K-means++ clustering.
//!
//! Clients exchange only first and second moments of their points. The pooled
//! moments define one global PCA basis, so every client's centroids live in the
//! same coordinate system and cross-client centroid distances are meaningful.

mod kmeans;
mod moments;
mod pca;

pub use kmeans::{cluster_local, kmeanspp_init, lloyd_iterate, wcss, ClusterModel, LloydStep};
pub use moments::{local_moments, MomentStats};
pub use pca::{fit_shared_pca, project, reconstruct, PcaBasis};
