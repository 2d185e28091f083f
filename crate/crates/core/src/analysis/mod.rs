//! Subarray reverse engineering and spatial-feature correlation.

mod cluster;
mod f1;
mod report;
mod scan;

pub use cluster::{
    cluster_subarrays, kmeans, rowclone_validate, silhouette, standardize, ClusterConfig, KMeansFit, LayoutCandidate,
    SilhouettePoint, Validation,
};
pub use f1::{
    f1_report, feature_f1, hcfirst_class, macro_f1, majority_f1, plant_correlation, F1Report, FeatureScore,
    SpatialFeature, F1_THRESHOLD,
};
pub use report::*;
pub use scan::{single_sided_scan, single_sided_scan_with, RowSignature};
