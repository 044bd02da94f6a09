//! Visuomotor policy toolkit: a recurrent spatial-mixing regression network,
//! Gaussian-mixture action refinement, a rule-based skill selector, and a
//! synthetic demonstration harness.

pub mod checkpoint;
pub mod error;
pub mod gmm;
pub mod gss;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod rope;
pub mod spatial_mixing;
pub mod verification;

pub use error::{Error, ErrorKind, Result};
pub use gmm::{em_fit, refine, EmOptions, GmmParams, RefineMode};
pub use gss::{BoundingBox, Instruction, Observation, ShapeCategory, Skill, SkillDecision};
pub use harness::{Dataset, Demonstration, Metrics, SceneSpec};
pub use model::{predict, train_policy, ActionVector, ModelConfig, PolicyModel, TrainConfig};
pub use numerics::{ConvSpec, DenseTensor, Parameter, ParameterSet};
pub use rope::{apply_rope, build_rope_table, RopeTable};
