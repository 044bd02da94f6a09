//! Independent reference computations used by the `wkv-check` command and
//! the test suites.

use crate::error::Result;
use crate::gss::{select_skill, RuleSet, SceneSummary};
use crate::model::{parameter_group, ModelConfig, PolicyModel, SupervisedLoss, ACTION_DIM};
use crate::numerics::{grad_check, sigmoid, DenseTensor, GradCheckReport};
use crate::spatial_mixing::{wkv_scan, InitMode, PatchSequence};
use crate::{BoundingBox, ShapeCategory, Skill};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const WKV_CHECK_TOLERANCE: f64 = 1e-10;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
pub const GRAD_CHECK_EPS: f64 = 1e-4;
pub const GRAD_CHECK_STEM_STD: f64 = 0.3;

/// Scan outputs from the explicit sums
/// `n_i = n_0 * prod_{t=1..i} a_t + sum_{j=1..i} k_j v_j prod_{t=j+1..i} a_t`
/// (and likewise `d_i`), every product formed from scratch.
pub fn unrolled_wkv(
    k: &PatchSequence,
    v: &PatchSequence,
    w: &PatchSequence,
    u: &[f64],
    init: InitMode,
) -> Vec<f64> {
    let (count, len) = (k.count(), k.patch_len());
    let area = k.patch * k.patch;
    let mut out = vec![0.0; k.data.len()];
    let decay = |s: usize, t: usize, l: usize| (-w.step(s, t)[l]).exp();
    for s in 0..k.batch {
        for i in 0..count {
            for l in 0..len {
                let kk = |t: usize| k.step(s, t)[l];
                let vv = |t: usize| v.step(s, t)[l];
                let mut head = 1.0;
                for t in 1..=i {
                    head *= decay(s, t, l);
                }
                let n0 = match init {
                    InitMode::K => kk(0),
                    InitMode::Kv => kk(0) * vv(0),
                };
                let mut n = n0 * head;
                let mut d = kk(0) * head;
                for j in 1..=i {
                    let mut tail = 1.0;
                    for t in j + 1..=i {
                        tail *= decay(s, t, l);
                    }
                    n += kk(j) * vv(j) * tail;
                    d += kk(j) * tail;
                }
                let eu = u[l / area].exp();
                let den = d + eu * kk(i);
                let den = if den.abs() < 1e-8 {
                    1e-8f64.copysign(den)
                } else {
                    den
                };
                out[(s * count + i) * len + l] = (n + eu * kk(i) * vv(i)) / den;
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct WkvCheck {
    pub seed: u64,
    pub patches: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Random scan inputs with `patches` steps, compared against
/// [`unrolled_wkv`] under both initialisation modes.
pub fn wkv_check(seed: u64, patches: usize) -> Result<WkvCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, channels, patch) = (2, 3, 2);
    let n = batch * patches * channels * patch * patch;
    let mut draw = |f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| -> Vec<f64> {
        (0..n).map(|_| f(&mut rng)).collect()
    };
    let k = draw(&mut |r| r.random_range(-1.5..1.5f64).exp());
    let v = draw(&mut |r| r.random_range(0.1..2.0));
    let w = draw(&mut |r| sigmoid(r.random_range(-4.0..4.0)));
    let k = PatchSequence::from_steps(batch, patches, channels, patch, k)?;
    let v = PatchSequence::from_steps(batch, patches, channels, patch, v)?;
    let w = PatchSequence::from_steps(batch, patches, channels, patch, w)?;
    let u: Vec<f64> = (0..channels)
        .map(|_| sigmoid(rng.random_range(-3.0..3.0)))
        .collect();
    let mut worst: f64 = 0.0;
    for init in [InitMode::K, InitMode::Kv] {
        let got = wkv_scan(&k, &v, &w, &u, init)?;
        let want = unrolled_wkv(&k, &v, &w, &u, init);
        for (a, b) in got.data.iter().zip(&want) {
            worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(WkvCheck {
        seed,
        patches,
        max_relative_error: worst,
        tolerance: WKV_CHECK_TOLERANCE,
        passed: worst <= WKV_CHECK_TOLERANCE,
    })
}

/// Small network used by the whole-model gradient check: 32x32 input,
/// widths (4, 6, 8), scan patch 2.
pub fn grad_check_config() -> ModelConfig {
    ModelConfig {
        image_height: 32,
        image_width: 32,
        widths: [4, 6, 8],
        patch: 2,
        ..ModelConfig::default()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NetworkGradCheck {
    pub seed: u64,
    pub report: GradCheckReport,
    /// Worst relative error per parameter group, sorted by group name.
    pub groups: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central differences against the analytic gradient of the 1-sample MSE of
/// a randomly initialised network on a random image, with the label drawn
/// within 0.2 of the prediction.
pub fn network_grad_check(seed: u64) -> Result<NetworkGradCheck> {
    let cfg = grad_check_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = PolicyModel::new(cfg.clone(), &mut rng)?;
    let images = DenseTensor::from_fn(&[1, 3, cfg.image_height, cfg.image_width], |_| {
        rng.random::<f64>()
    });
    // Stem activations at std 0.3 keep the deeper gradients above the
    // rounding noise of the differences without large third derivatives;
    // a label near the prediction keeps the loss, and so its rounding, small.
    model.stem.calibrate(&images, GRAD_CHECK_STEM_STD)?;
    let pred = crate::model::predict(&model, &images)?;
    let label: [f64; ACTION_DIM] = std::array::from_fn(|j| pred[j] + rng.random_range(-0.2..0.2));
    let mut loss = SupervisedLoss {
        model,
        images,
        labels: vec![label],
    };
    let report = grad_check(&mut loss, GRAD_CHECK_EPS, seed)?;
    let mut groups = std::collections::BTreeMap::<String, f64>::new();
    for p in &report.parameters {
        let g = groups
            .entry(parameter_group(&p.name).to_string())
            .or_insert(0.0);
        *g = g.max(p.max_relative_error);
    }
    let passed = report.max_relative_error() < GRAD_CHECK_TOLERANCE
        && report.parameters.iter().all(|p| p.entries_checked > 0);
    Ok(NetworkGradCheck {
        seed,
        report,
        groups: groups.into_iter().collect(),
        tolerance: GRAD_CHECK_TOLERANCE,
        passed,
    })
}

/// Expected skill for every `(shape, side clear, top clear, small)` cell,
/// written out by hand rather than derived from the rule catalog.
pub const DECISION_TABLE: [(ShapeCategory, bool, bool, bool, Skill); 32] = {
    use ShapeCategory::*;
    use Skill::*;
    [
        (Cylindrical, true, true, false, SideGrasp),
        (Cylindrical, true, true, true, SideGrasp),
        (Cylindrical, true, false, false, SideGrasp),
        (Cylindrical, true, false, true, SideGrasp),
        (Cylindrical, false, true, false, LiftUp),
        (Cylindrical, false, true, true, LiftUp),
        (Cylindrical, false, false, false, LiftUp),
        (Cylindrical, false, false, true, LiftUp),
        (Squashed, true, true, false, LiftUp),
        (Squashed, true, true, true, LiftUp),
        (Squashed, true, false, false, LiftUp),
        (Squashed, true, false, true, LiftUp),
        (Squashed, false, true, false, LiftUp),
        (Squashed, false, true, true, LiftUp),
        (Squashed, false, false, false, LiftUp),
        (Squashed, false, false, true, LiftUp),
        (ThinSmall, true, true, false, TopPinch),
        (ThinSmall, true, true, true, TopPinch),
        (ThinSmall, true, false, false, TopPinch),
        (ThinSmall, true, false, true, TopPinch),
        (ThinSmall, false, true, false, TopPinch),
        (ThinSmall, false, true, true, TopPinch),
        (ThinSmall, false, false, false, TopPinch),
        (ThinSmall, false, false, true, TopPinch),
        (Other, true, true, false, LiftUp),
        (Other, true, true, true, TopPinch),
        (Other, true, false, false, LiftUp),
        (Other, true, false, true, LiftUp),
        (Other, false, true, false, LiftUp),
        (Other, false, true, true, TopPinch),
        (Other, false, false, false, LiftUp),
        (Other, false, false, true, LiftUp),
    ]
};

/// Cells of [`DECISION_TABLE`] where `rules` picks the expected skill, and
/// the first disagreement if any.
pub fn decision_table_agreement(rules: &RuleSet) -> (usize, Option<String>) {
    let bbox = BoundingBox {
        x1: 0.0,
        y1: 0.0,
        x2: 1.0,
        y2: 1.0,
    };
    let mut agree = 0;
    let mut first = None;
    for &(shape, side_clear, top_clear, small, want) in &DECISION_TABLE {
        let scene = SceneSummary {
            side_clear,
            top_clear,
            small,
        };
        match select_skill(&bbox, shape, &scene, rules) {
            Ok(d) if d.skill == want => agree += 1,
            got => {
                first.get_or_insert(format!(
                    "{shape} side {side_clear} top {top_clear} small {small}: expected {want:?}, got {:?}",
                    got.map(|d| d.skill)
                ));
            }
        }
    }
    (agree, first)
}
