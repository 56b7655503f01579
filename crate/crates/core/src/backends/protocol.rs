//! JSON bodies of the remote backend protocol.
//!
//! ```text
//! POST /l2a   {scene, instruction, temperature, seed} -> {grounding, action}
//! POST /a2l   {scene, action, temperature, seed}      -> {grounding, text}
//! POST /l2c   {scene, instruction, candidate}         -> {grounding, z0, z1}
//! GET  /health                                        -> {status, model_id}
//! ```

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scene::{quantize, Action, Point2, Scene};

/// One detected object of the grounding stage: name and center.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedObject {
    pub name: String,
    pub center: Point2,
}

#[derive(Serialize, Deserialize)]
struct RawGrounded {
    name: String,
    x: f64,
    y: f64,
}

impl Serialize for GroundedObject {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawGrounded {
            name: self.name.clone(),
            x: quantize(self.center.x()),
            y: quantize(self.center.y()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GroundedObject {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawGrounded::deserialize(deserializer)?;
        if raw.name.trim().is_empty() {
            return Err(serde::de::Error::custom("grounded object name is empty"));
        }
        let center = Point2::new(raw.x, raw.y).map_err(serde::de::Error::custom)?;
        Ok(GroundedObject {
            name: raw.name,
            center,
        })
    }
}

/// Chain-of-thought grounding output: every object the model detected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundingSet(pub Vec<GroundedObject>);

impl GroundingSet {
    /// Perfect perception of a symbolic scene.
    pub fn from_scene(scene: &Scene) -> Self {
        GroundingSet(
            scene
                .objects()
                .iter()
                .map(|o| GroundedObject {
                    name: o.name().to_owned(),
                    center: o.center(),
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2ARequest {
    pub scene: Scene,
    pub instruction: String,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2AResponse {
    pub grounding: GroundingSet,
    pub action: Action,
    /// Set when the backend could not interpret the instruction and emitted
    /// a placeholder action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2LRequest {
    pub scene: Scene,
    pub action: Action,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2LResponse {
    pub grounding: GroundingSet,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2CRequest {
    pub scene: Scene,
    pub instruction: String,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2CResponse {
    pub grounding: GroundingSet,
    pub z0: f64,
    pub z1: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: String,
}
