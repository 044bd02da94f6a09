use crate::error::{Error, Result};
use crate::gmm::{refine, GmmParams, RefineMode};
use crate::gss::{
    compute_accuracy, select_skill, BoundingBox, RuleSet, SceneSummary, ShapeCategory, Skill,
};
use crate::harness::dataset::{Dataset, Demonstration};
use crate::harness::kinematics::kinematic_map;
use crate::model::{ActionVector, PolicyModel, ACTION_DIM};
use serde::{Deserialize, Serialize};

/// Anything that maps a demonstration's observation to a raw action.
pub trait ActionSource {
    fn predict_demo(&self, demo: &Demonstration) -> Result<ActionVector>;

    fn predict_all(&self, demos: &[Demonstration]) -> Result<Vec<ActionVector>> {
        demos.iter().map(|d| self.predict_demo(d)).collect()
    }
}

impl ActionSource for PolicyModel {
    fn predict_demo(&self, demo: &Demonstration) -> Result<ActionVector> {
        crate::model::predict(self, &demo.image)
    }

    fn predict_all(&self, demos: &[Demonstration]) -> Result<Vec<ActionVector>> {
        let mut out = Vec::with_capacity(demos.len());
        for chunk in demos.chunks(16) {
            let shape = chunk[0].image.shape().to_vec();
            let mut data = Vec::with_capacity(chunk.len() * chunk[0].image.len());
            for d in chunk {
                if d.image.shape() != shape.as_slice() {
                    return Err(Error::invalid("test images differ in shape"));
                }
                data.extend_from_slice(d.image.data());
            }
            let batch = crate::numerics::DenseTensor::new(
                &[chunk.len(), shape[0], shape[1], shape[2]],
                data,
            )?;
            let y = self.forward(&batch)?;
            for row in y.data().chunks(ACTION_DIM) {
                let mut a = [0.0; ACTION_DIM];
                a.copy_from_slice(row);
                out.push(a);
            }
        }
        Ok(out)
    }
}

/// Labels each demonstration from its recorded target centre.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleLabeler;

impl ActionSource for OracleLabeler {
    fn predict_demo(&self, demo: &Demonstration) -> Result<ActionVector> {
        let s = demo.image.shape();
        kinematic_map((demo.center[0], demo.center[1]), (s[2], s[1]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: RefineMode,
    /// Largest per-joint absolute error, in radians, that still counts as a success.
    pub tol: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: RefineMode::Nearest,
            tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc_s: f64,
    pub acc_t: f64,
    pub acc: f64,
    /// Mean absolute error per joint of the refined action.
    pub joint_mae: [f64; ACTION_DIM],
    pub samples: usize,
    pub successes: usize,
    pub mode: RefineMode,
    pub tol: f64,
}

/// The shape category a skill's synthetic target stands for.
pub fn implied_shape(skill: Skill) -> ShapeCategory {
    match skill {
        Skill::SideGrasp => ShapeCategory::Cylindrical,
        Skill::LiftUp => ShapeCategory::Squashed,
        Skill::TopPinch => ShapeCategory::ThinSmall,
    }
}

/// Fraction of scenes on which the rule catalog picks the dataset's skill,
/// using each target's recorded box and the skill's implied shape.
pub fn skill_accuracy(data: &Dataset, rules: &RuleSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let mut hits = 0usize;
    for d in &data.demos {
        let [cx, cy] = d.center;
        let raw = BoundingBox {
            x1: cx - d.radius,
            y1: cy - d.radius,
            x2: cx + d.radius,
            y2: cy + d.radius,
        };
        let bbox = raw
            .clipped(data.width, data.height)
            .ok_or_else(|| Error::invalid(format!("target box {raw} lies outside the image")))?;
        let summary = SceneSummary::from_boxes(&bbox, &[], data.width, data.height);
        let decision = select_skill(&bbox, implied_shape(data.skill), &summary, rules)?;
        hits += usize::from(decision.skill == data.skill);
    }
    Ok(hits as f64 / data.len() as f64)
}

pub fn evaluate_policy(
    model: &PolicyModel,
    theta: &GmmParams,
    test: &Dataset,
    mode: RefineMode,
    tol: f64,
) -> Result<Metrics> {
    evaluate_with(model, theta, test, &EvalConfig { mode, tol })
}

/// Refines every prediction through the mixture and scores it against the label.
pub fn evaluate_with(
    source: &dyn ActionSource,
    theta: &GmmParams,
    test: &Dataset,
    cfg: &EvalConfig,
) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    if !(cfg.tol >= 0.0 && cfg.tol.is_finite()) {
        return Err(Error::invalid(format!(
            "tol must be finite and >= 0, got {}",
            cfg.tol
        )));
    }
    theta.validate()?;
    let raw = source.predict_all(&test.demos)?;
    let mut successes = 0usize;
    let mut errors: Vec<Vec<f64>> = (0..ACTION_DIM)
        .map(|_| Vec::with_capacity(test.len()))
        .collect();
    for (a_in, demo) in raw.iter().zip(&test.demos) {
        if a_in.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("prediction {a_in:?}")));
        }
        let a = refine(a_in, theta, cfg.mode)?;
        let mut worst: f64 = 0.0;
        for j in 0..ACTION_DIM {
            let e = (a[j] - demo.joints[j]).abs();
            worst = worst.max(e);
            errors[j].push(e);
        }
        successes += usize::from(worst < cfg.tol);
    }
    let n = test.len() as f64;
    let mut joint_mae = [0.0; ACTION_DIM];
    for (j, e) in errors.iter_mut().enumerate() {
        // Sorted so the sum does not depend on test-set order.
        e.sort_by(f64::total_cmp);
        joint_mae[j] = e.iter().sum::<f64>() / n;
    }
    let acc_s = skill_accuracy(test, &RuleSet::shipped())?;
    let acc_t = successes as f64 / n;
    Ok(Metrics {
        acc_s,
        acc_t,
        acc: compute_accuracy(acc_s, acc_t)?,
        joint_mae,
        samples: test.len(),
        successes,
        mode: cfg.mode,
        tol: cfg.tol,
    })
}
