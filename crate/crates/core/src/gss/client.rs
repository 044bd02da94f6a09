use crate::error::{Error, Result};
use crate::gss::types::{BoundingBox, Instruction, ShapeCategory};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Duration;

pub const URL_VAR: &str = "RGMP_VLM_URL";
pub const TOKEN_VAR: &str = "RGMP_VLM_TOKEN";

/// One object listed in a scene manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    /// `[x1, y1, x2, y2]` in pixels.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default)]
    pub shape: Option<ShapeCategory>,
}

impl SceneObject {
    pub fn bounding_box(&self) -> BoundingBox {
        let [x1, y1, x2, y2] = self.bbox;
        BoundingBox { x1, y1, x2, y2 }
    }
}

fn default_width() -> usize {
    640
}

fn default_height() -> usize {
    480
}

/// JSON description of a table-top scene used by the mock client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    /// Optional PNG of the scene, relative to the manifest.
    #[serde(default)]
    pub image: Option<String>,
    pub objects: Vec<SceneObject>,
}

impl SceneManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene extents must be positive"));
        }
        for o in &self.objects {
            if o.name.trim().is_empty() {
                return Err(Error::invalid("scene object with an empty name"));
            }
            o.bounding_box()
                .validate(self.width, self.height)
                .map_err(|e| Error::invalid(format!("object {:?}: {e}", o.name)))?;
        }
        Ok(())
    }

    /// The object whose name occurs in the instruction; the longest name wins,
    /// then the earliest listed.
    pub fn find_named(&self, instruction: &Instruction) -> Option<&SceneObject> {
        let text = instruction.text().to_lowercase();
        let mut best: Option<&SceneObject> = None;
        for o in &self.objects {
            if text.contains(&o.name.to_lowercase())
                && best.is_none_or(|b| o.name.len() > b.name.len())
            {
                best = Some(o);
            }
        }
        best
    }
}

/// A query for the language model.
#[derive(Clone, Copy, Debug)]
pub struct VlmRequest<'a> {
    pub prompt: &'a str,
    pub instruction: &'a Instruction,
    /// Base64 of the encoded image, empty when there is none.
    pub image_b64: &'a str,
}

pub trait VlmClient: Send + Sync {
    /// Returns the model's text reply.
    fn complete(&self, request: &VlmRequest<'_>) -> Result<String>;
}

/// Answers localization queries from a scene manifest.
#[derive(Clone, Debug)]
pub struct MockClient {
    scene: SceneManifest,
}

impl MockClient {
    pub fn new(scene: SceneManifest) -> Result<Self> {
        scene.validate()?;
        Ok(Self { scene })
    }

    pub fn scene(&self) -> &SceneManifest {
        &self.scene
    }
}

impl VlmClient for MockClient {
    fn complete(&self, request: &VlmRequest<'_>) -> Result<String> {
        match self.scene.find_named(request.instruction) {
            Some(o) => Ok(o.bounding_box().to_string()),
            None => Err(Error::TargetNotFound(
                request.instruction.text().to_string(),
            )),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    image_b64: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// HTTP client for a hosted vision-language endpoint.
pub struct RemoteClient {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(url: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            url: url.into(),
            token,
            agent,
        }
    }

    /// Reads the endpoint from `RGMP_VLM_URL` and the optional bearer token
    /// from `RGMP_VLM_TOKEN`.
    pub fn from_env() -> Result<Self> {
        let url =
            std::env::var(URL_VAR).map_err(|_| Error::invalid(format!("{URL_VAR} is not set")))?;
        let token = std::env::var(TOKEN_VAR).ok().filter(|t| !t.is_empty());
        Ok(Self::new(url, token, Duration::from_secs(30)))
    }
}

impl VlmClient for RemoteClient {
    fn complete(&self, request: &VlmRequest<'_>) -> Result<String> {
        let body = serde_json::to_string(&WireRequest {
            prompt: request.prompt,
            image_b64: request.image_b64,
        })?;
        let fail = |e: &dyn std::fmt::Display| Error::Client {
            attempts: 1,
            message: e.to_string(),
        };
        let mut req = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send(body.as_str()).map_err(|e| fail(&e))?;
        let text = resp.body_mut().read_to_string().map_err(|e| fail(&e))?;
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("malformed reply body: {e}")))?;
        Ok(parsed.text)
    }
}
