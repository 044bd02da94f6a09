//! Synthetic demonstrations, dataset persistence and end-to-end evaluation.

pub mod dataset;
pub mod eval;
pub mod kinematics;
pub mod scene;

pub use dataset::{encode_png, read_png, write_png, Dataset, Demonstration};
pub use eval::{
    evaluate_policy, evaluate_with, implied_shape, skill_accuracy, ActionSource, EvalConfig,
    Metrics, OracleLabeler,
};
pub use kinematics::kinematic_map;
pub use scene::{generate_dataset, generate_scene, skill_color, Placement, SceneSpec, SLOTS};
