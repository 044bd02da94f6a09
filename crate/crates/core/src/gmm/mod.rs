//! Gaussian mixture over joint configurations: EM fitting, Mahalanobis
//! scoring and refinement of predicted actions.

mod em;
pub mod linalg;
mod mixture;

pub use em::{em_fit, responsibilities, EmFit, EmOptions, COLLAPSE_THRESHOLD};
pub use linalg::{Mat6, Vec6, DIM};
pub use mixture::{
    conditional_aggregate, consistency_weights, gmm_density, gmm_log_density, log_sum_exp,
    mahalanobis_all, mahalanobis_distance, nearest_component, refine, select_nearest, Factorized,
    GmmParams, RefineMode,
};
