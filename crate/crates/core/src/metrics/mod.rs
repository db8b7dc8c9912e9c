//! FID and KID over feature sets from a pluggable extractor.

mod features;
mod fid;
mod kid;
mod linalg;
mod report;

pub use features::{
    decode_features, encode_features, extract_features, is_feature_file, load_features,
    save_features, Extractor, FeatureSet,
};
pub use fid::{fid, fid_from_features, gaussian_stats, GaussianStats, FID_FLOOR};
pub use kid::{kid, mmd2_unbiased, KidConfig, KidEstimate, PolynomialKernel};
pub use linalg::{spd_eigenvalues, sqrtm_spd, symmetrize, trace, LinalgScalar};
pub use report::{evaluate, MetricReport, BUILTIN_PROVENANCE};
