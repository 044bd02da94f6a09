//! Skill selection: target localization through a vision-language client,
//! shape classification, and a prioritised rule catalog.

mod client;
mod prompt;
mod rules;
mod shape;
mod types;

pub use client::{
    MockClient, RemoteClient, SceneManifest, SceneObject, VlmClient, VlmRequest, TOKEN_VAR, URL_VAR,
};
pub use prompt::{parse_box, parse_skill, ContextExample, PlanningContext};
pub use rules::{compute_accuracy, select_skill, Rule, RuleSet, SceneSummary, OCCUPANCY_MARGIN};
pub use shape::{classify_shape, mask_stats, shape_from_stats, MaskStats, SMALL_AREA_FRACTION};
pub use types::{BoundingBox, Instruction, Observation, ShapeCategory, Skill, SkillDecision};

use crate::error::{Error, Result};
use base64::Engine;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    #[default]
    Mock,
    Remote,
}

impl std::str::FromStr for ClientKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(ClientKind::Mock),
            "remote" => Ok(ClientKind::Remote),
            _ => Err(Error::invalid(format!(
                "unknown client {s:?}, expected mock or remote"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Attempts per query before giving up.
    pub rounds: usize,
    pub client: ClientKind,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            client: ClientKind::Mock,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("session needs at least one round"));
        }
        Ok(())
    }
}

/// A located target box; `clipped` is set when the reply fell partly
/// outside the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Localization {
    pub bbox: BoundingBox,
    pub clipped: bool,
    pub attempts: usize,
    pub reply: String,
}

fn encode_image(obs: &Observation) -> Result<String> {
    let Some(img) = &obs.image else {
        return Ok(String::new());
    };
    let bytes = crate::harness::encode_png(img)?;
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

/// Asks the client for the box of the object named in the instruction,
/// retrying failed or unparseable replies up to `session.rounds` times.
pub fn locate_target(
    instruction: &Instruction,
    obs: &Observation,
    context: &PlanningContext,
    client: &dyn VlmClient,
    session: &SessionConfig,
) -> Result<Localization> {
    session.validate()?;
    context.validate()?;
    let prompt = context.locate_prompt(instruction);
    let image_b64 = encode_image(obs)?;
    let request = VlmRequest {
        prompt: &prompt,
        instruction,
        image_b64: &image_b64,
    };
    let mut last = String::new();
    for attempt in 1..=session.rounds {
        let reply = match client.complete(&request) {
            Ok(r) => r,
            Err(e @ (Error::Client { .. } | Error::Format(_) | Error::Io(_) | Error::Json(_))) => {
                log::warn!("localization attempt {attempt} failed: {e}");
                last = e.to_string();
                continue;
            }
            Err(e) => return Err(e),
        };
        let raw = match parse_box(&reply) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("localization attempt {attempt}: {e}");
                last = e.to_string();
                continue;
            }
        };
        if raw.validate(obs.width, obs.height).is_ok() {
            return Ok(Localization {
                bbox: raw,
                clipped: false,
                attempts: attempt,
                reply,
            });
        }
        match raw.clipped(obs.width, obs.height) {
            Some(bbox) => {
                return Ok(Localization {
                    bbox,
                    clipped: true,
                    attempts: attempt,
                    reply,
                })
            }
            None => {
                last = format!(
                    "box {raw} lies outside the {}x{} image",
                    obs.width, obs.height
                )
            }
        }
    }
    Err(Error::Client {
        attempts: session.rounds,
        message: last,
    })
}

/// Runs localization, shape classification and rule selection for a scene.
/// Shape labels come from the manifest object overlapping the box most, then
/// from the scene image.
pub fn simulate(
    scene: &SceneManifest,
    obs: &Observation,
    instruction: &Instruction,
    client: &dyn VlmClient,
    session: &SessionConfig,
    rules: &RuleSet,
) -> Result<SkillDecision> {
    let loc = locate_target(
        instruction,
        obs,
        &PlanningContext::default(),
        client,
        session,
    )?;
    let overlap = |o: &SceneObject| {
        let b = o.bounding_box();
        let w = (b.x2.min(loc.bbox.x2) - b.x1.max(loc.bbox.x1)).max(0.0);
        let h = (b.y2.min(loc.bbox.y2) - b.y1.max(loc.bbox.y1)).max(0.0);
        w * h / (b.area() + loc.bbox.area() - w * h)
    };
    let target = scene
        .objects
        .iter()
        .map(|o| (overlap(o), o))
        .filter(|(iou, _)| *iou > 0.5)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, o)| o);
    let mut labelled = obs.clone();
    if labelled.shape_label.is_none() {
        labelled.shape_label = target.and_then(|o| o.shape);
    }
    let shape = classify_shape(&labelled, &loc.bbox)?;
    let others: Vec<BoundingBox> = scene
        .objects
        .iter()
        .filter(|o| target.is_none_or(|t| !std::ptr::eq(*o, t)))
        .map(|o| o.bounding_box())
        .collect();
    let summary = SceneSummary::from_boxes(&loc.bbox, &others, obs.width, obs.height);
    let mut decision = select_skill(&loc.bbox, shape, &summary, rules)?;
    decision.rationale = format!("shape {shape}; {}", decision.rationale);
    if loc.clipped {
        decision
            .rationale
            .push_str(&format!("; box {} clipped to the image", loc.reply.trim()));
    }
    Ok(decision)
}
