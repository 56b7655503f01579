//! Controlled-grammar task descriptions.
//!
//! Given a scene and a pick-and-place action this module decides which
//! description styles are admissible (absolute grid cell vs. direction from
//! a nearby reference object), picks one, and renders it through a
//! [`TemplateBank`]. Every sentence has the shape
//!
//! ```text
//! <pick verb> the <object> and <place verb> it <frame>
//! ```
//!
//! where `<frame>` is an absolute template mentioning `<cell>` or a
//! relative template mentioning `<direction>` and `<reference>`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang_parser::Parser;
use crate::scene::{direction_of, grid_cell_of, Action, Direction8, GridCell, Point2, Scene};
use crate::seed;

/// Default radius binding a pick point to an object center.
pub const DEFAULT_PICK_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LangError {
    #[error("no object within {radius} of the pick point ({x:.4}, {y:.4})")]
    NoPickTarget { x: f64, y: f64, radius: f64 },
    #[error("no usable reference object for a relative description")]
    NoReference,
    #[error(
        "invalid thresholds: need 0 < d_abs <= d_rel <= sqrt(2), got d_abs={d_abs}, d_rel={d_rel}"
    )]
    InvalidThresholds { d_abs: f64, d_rel: f64 },
    #[error("template bank: {0}")]
    Template(String),
}

/// Where to put the picked object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PlacementSpec {
    Absolute {
        cell: GridCell,
    },
    Relative {
        direction: Direction8,
        reference: String,
    },
}

impl PlacementSpec {
    pub fn kind(&self) -> DescriptionType {
        match self {
            PlacementSpec::Absolute { .. } => DescriptionType::Absolute,
            PlacementSpec::Relative { .. } => DescriptionType::Relative,
        }
    }
}

/// Structured meaning of an instruction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Intent {
    pub pick_target: String,
    pub placement: PlacementSpec,
}

impl Intent {
    pub fn absolute(pick_target: impl Into<String>, cell: GridCell) -> Self {
        Self {
            pick_target: pick_target.into(),
            placement: PlacementSpec::Absolute { cell },
        }
    }

    pub fn relative(
        pick_target: impl Into<String>,
        direction: Direction8,
        reference: impl Into<String>,
    ) -> Self {
        Self {
            pick_target: pick_target.into(),
            placement: PlacementSpec::Relative {
                direction,
                reference: reference.into(),
            },
        }
    }

    /// Checks the intent against a scene: both names exist and differ.
    pub fn is_valid_in(&self, scene: &Scene) -> bool {
        if scene.object(&self.pick_target).is_none() {
            return false;
        }
        match &self.placement {
            PlacementSpec::Absolute { .. } => true,
            PlacementSpec::Relative { reference, .. } => {
                reference != &self.pick_target && scene.object(reference).is_some()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionType {
    Absolute,
    Relative,
}

impl fmt::Display for DescriptionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescriptionType::Absolute => "absolute",
            DescriptionType::Relative => "relative",
        })
    }
}

/// Distance thresholds gating the description styles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub d_abs: f64,
    pub d_rel: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            d_abs: 0.15,
            d_rel: 0.3,
        }
    }
}

impl ThresholdConfig {
    pub fn new(d_abs: f64, d_rel: f64) -> Result<Self, LangError> {
        let cfg = Self { d_abs, d_rel };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LangError> {
        if self.d_abs > 0.0 && self.d_abs <= self.d_rel && self.d_rel <= std::f64::consts::SQRT_2 {
            Ok(())
        } else {
            Err(LangError::InvalidThresholds {
                d_abs: self.d_abs,
                d_rel: self.d_rel,
            })
        }
    }
}

/// Which styles may describe a placement, and the reference a relative one
/// would use.
#[derive(Debug, Clone, PartialEq)]
pub struct Eligibility {
    pub types: BTreeSet<DescriptionType>,
    /// Nearest non-picked object to the place point and its distance.
    pub reference: Option<(String, f64)>,
}

impl Eligibility {
    pub fn allows(&self, kind: DescriptionType) -> bool {
        self.types.contains(&kind)
    }

    pub fn distance(&self) -> Option<f64> {
        self.reference.as_ref().map(|(_, d)| *d)
    }
}

/// Eligibility from the raw distance `d` to the nearest non-picked object
/// (`None` when no such object exists).
pub fn eligible_for_distance(d: Option<f64>, cfg: &ThresholdConfig) -> BTreeSet<DescriptionType> {
    let mut types = BTreeSet::new();
    match d {
        Some(d) => {
            if d < cfg.d_rel {
                types.insert(DescriptionType::Relative);
            }
            if d > cfg.d_abs {
                types.insert(DescriptionType::Absolute);
            }
        }
        None => {
            types.insert(DescriptionType::Absolute);
        }
    }
    if types.is_empty() {
        // Only reachable at d == d_abs == d_rel.
        types.insert(DescriptionType::Absolute);
    }
    types
}

/// Eligible styles for placing `pick_target` at `place`.
pub fn eligibility(
    scene: &Scene,
    pick_target: &str,
    place: Point2,
    cfg: &ThresholdConfig,
) -> Eligibility {
    let reference = scene
        .nearest_object(place, Some(pick_target))
        .ok()
        .map(|(o, d)| (o.name().to_owned(), d));
    Eligibility {
        types: eligible_for_distance(reference.as_ref().map(|(_, d)| *d), cfg),
        reference,
    }
}

/// Eligible styles for an action, taking the object nearest the pick point
/// as the picked one.
pub fn eligible_description_types(
    scene: &Scene,
    action: &Action,
    cfg: &ThresholdConfig,
) -> BTreeSet<DescriptionType> {
    match scene.nearest_object(action.pick, None) {
        Ok((picked, _)) => eligibility(scene, picked.name(), action.place, cfg).types,
        Err(_) => eligible_for_distance(None, cfg),
    }
}

/// Object bound to a pick point: the nearest one, if within `radius`.
pub fn pick_target(scene: &Scene, pick: Point2, radius: f64) -> Result<&str, LangError> {
    match scene.nearest_object(pick, None) {
        Ok((obj, d)) if d <= radius => Ok(obj.name()),
        _ => Err(LangError::NoPickTarget {
            x: pick.x(),
            y: pick.y(),
            radius,
        }),
    }
}

/// The exact meaning of an action under the given description style.
pub fn intent_for(
    scene: &Scene,
    target: &str,
    place: Point2,
    kind: DescriptionType,
    elig: &Eligibility,
) -> Result<Intent, LangError> {
    match kind {
        DescriptionType::Absolute => Ok(Intent::absolute(target, grid_cell_of(place))),
        DescriptionType::Relative => {
            let (reference, _) = elig.reference.as_ref().ok_or(LangError::NoReference)?;
            let ref_center = scene
                .object(reference)
                .ok_or(LangError::NoReference)?
                .center();
            let direction = direction_of(ref_center, place).map_err(|_| LangError::NoReference)?;
            Ok(Intent::relative(target, direction, reference.clone()))
        }
    }
}

/// The same intent with its cell or direction replaced by a uniformly
/// chosen different one.
pub fn perturb_relation<R: Rng + ?Sized>(intent: &Intent, rng: &mut R) -> Intent {
    let placement = match &intent.placement {
        PlacementSpec::Absolute { cell } => {
            let others: Vec<GridCell> = GridCell::ALL.into_iter().filter(|c| c != cell).collect();
            PlacementSpec::Absolute {
                cell: *others.choose(rng).expect("eight other cells"),
            }
        }
        PlacementSpec::Relative {
            direction,
            reference,
        } => {
            let others: Vec<Direction8> = Direction8::ALL
                .into_iter()
                .filter(|d| d != direction)
                .collect();
            PlacementSpec::Relative {
                direction: *others.choose(rng).expect("seven other directions"),
                reference: reference.clone(),
            }
        }
    };
    Intent {
        pick_target: intent.pick_target.clone(),
        placement,
    }
}

/// Rendered description plus its structured meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct Description {
    pub text: String,
    pub intent: Intent,
}

/// Describes `action` in `scene`: binds the pick point to an object, picks a
/// style uniformly among the eligible ones and renders it with `bank`.
pub fn describe(
    scene: &Scene,
    action: &Action,
    thresholds: &ThresholdConfig,
    pick_radius: f64,
    bank: &TemplateBank,
    rng_seed: u64,
) -> Result<Description, LangError> {
    let target = pick_target(scene, action.pick, pick_radius)?;
    let elig = eligibility(scene, target, action.place, thresholds);
    let types: Vec<DescriptionType> = elig.types.iter().copied().collect();
    let mut rng = seed::rng(seed::derive_tagged(rng_seed, "describe"));
    let kind = *types.choose(&mut rng).expect("eligibility is never empty");
    let intent = intent_for(scene, target, action.place, kind, &elig)?;
    let text = bank.render(&intent, rng.random());
    Ok(Description { text, intent })
}

/// Renders `intent` with templates drawn uniformly from `bank`.
pub fn render(intent: &Intent, bank: &TemplateBank, rng_seed: u64) -> String {
    bank.render(intent, rng_seed)
}

/// Template choice for one rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TemplateChoice {
    pub pick_verb: usize,
    pub place_verb: usize,
    pub frame: usize,
}

/// The controlled vocabulary of the grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateBank {
    pub pick_verbs: Vec<String>,
    pub place_verbs: Vec<String>,
    pub absolute_frames: Vec<String>,
    pub relative_frames: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| (*s).to_owned()).collect()
}

impl Default for TemplateBank {
    fn default() -> Self {
        Self {
            pick_verbs: strings(&["pick", "pick up", "grasp", "take"]),
            place_verbs: strings(&["place", "put", "move"]),
            absolute_frames: strings(&[
                "in the <cell> of the workspace",
                "at the <cell> of the table",
            ]),
            relative_frames: strings(&[
                "to the <direction> of the <reference>",
                "on the <direction> side of the <reference>",
            ]),
        }
    }
}

pub const CELL_SLOT: &str = "<cell>";
pub const DIRECTION_SLOT: &str = "<direction>";
pub const REFERENCE_SLOT: &str = "<reference>";

impl TemplateBank {
    /// Parses the plain-text asset format: one `slot: template` entry per
    /// line with slot in `pick`, `place`, `absolute`, `relative`. Blank lines
    /// and lines starting with `#` are ignored.
    pub fn from_asset(text: &str) -> Result<Self, LangError> {
        let mut bank = TemplateBank {
            pick_verbs: vec![],
            place_verbs: vec![],
            absolute_frames: vec![],
            relative_frames: vec![],
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (slot, template) = line.split_once(':').ok_or_else(|| {
                LangError::Template(format!("line {}: expected `slot: template`", lineno + 1))
            })?;
            let template = template
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase();
            let list = match slot.trim() {
                "pick" => &mut bank.pick_verbs,
                "place" => &mut bank.place_verbs,
                "absolute" => &mut bank.absolute_frames,
                "relative" => &mut bank.relative_frames,
                other => {
                    return Err(LangError::Template(format!(
                        "line {}: unknown slot {other:?}",
                        lineno + 1
                    )))
                }
            };
            list.push(template);
        }
        bank.validate()?;
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self, LangError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LangError::Template(format!("{}: {e}", path.display())))?;
        Self::from_asset(&text)
    }

    pub fn to_asset(&self) -> String {
        let mut out = String::new();
        for (slot, list) in [
            ("pick", &self.pick_verbs),
            ("place", &self.place_verbs),
            ("absolute", &self.absolute_frames),
            ("relative", &self.relative_frames),
        ] {
            for t in list {
                out.push_str(slot);
                out.push_str(": ");
                out.push_str(t);
                out.push('\n');
            }
        }
        out
    }

    /// Checks slot structure and that every template survives a
    /// render/parse round trip.
    pub fn validate(&self) -> Result<(), LangError> {
        let err = |m: String| Err(LangError::Template(m));
        for (name, list) in [
            ("pick", &self.pick_verbs),
            ("place", &self.place_verbs),
            ("absolute", &self.absolute_frames),
            ("relative", &self.relative_frames),
        ] {
            if list.is_empty() {
                return err(format!("no {name} templates"));
            }
        }
        for verb in self.pick_verbs.iter().chain(&self.place_verbs) {
            if verb.contains('<') {
                return err(format!("verb {verb:?} contains a slot"));
            }
        }
        for frame in &self.absolute_frames {
            if frame.matches(CELL_SLOT).count() != 1
                || frame.contains(DIRECTION_SLOT)
                || frame.contains(REFERENCE_SLOT)
            {
                return err(format!(
                    "absolute frame {frame:?} needs exactly one {CELL_SLOT}"
                ));
            }
        }
        for frame in &self.relative_frames {
            if frame.matches(DIRECTION_SLOT).count() != 1
                || frame.matches(REFERENCE_SLOT).count() != 1
                || frame.contains(CELL_SLOT)
            {
                return err(format!(
                    "relative frame {frame:?} needs one {DIRECTION_SLOT} and one {REFERENCE_SLOT}"
                ));
            }
        }

        let catalog = ["object", "other object"];
        let parser = Parser::new(self.clone(), catalog.iter().map(|s| s.to_string()));
        let mut probes = vec![Intent::absolute("object", GridCell::ALL[0])];
        probes.extend(
            Direction8::ALL
                .iter()
                .map(|d| Intent::relative("object", *d, "other object")),
        );
        probes.extend(
            GridCell::ALL
                .iter()
                .map(|c| Intent::absolute("other object", *c)),
        );
        for intent in &probes {
            for pick_verb in 0..self.pick_verbs.len() {
                for place_verb in 0..self.place_verbs.len() {
                    let frames = match intent.placement {
                        PlacementSpec::Absolute { .. } => self.absolute_frames.len(),
                        PlacementSpec::Relative { .. } => self.relative_frames.len(),
                    };
                    for frame in 0..frames {
                        let choice = TemplateChoice {
                            pick_verb,
                            place_verb,
                            frame,
                        };
                        let text = self.render_with(intent, choice);
                        match parser.parse(&text) {
                            Ok(parsed) if &parsed == intent => {}
                            Ok(parsed) => {
                                return err(format!(
                                    "{text:?} parses to {parsed:?}, expected {intent:?}"
                                ))
                            }
                            Err(e) => return err(format!("{text:?} does not parse: {e}")),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn render_with(&self, intent: &Intent, choice: TemplateChoice) -> String {
        let pick_verb = &self.pick_verbs[choice.pick_verb % self.pick_verbs.len()];
        let place_verb = &self.place_verbs[choice.place_verb % self.place_verbs.len()];
        let frame = match &intent.placement {
            PlacementSpec::Absolute { cell } => self.absolute_frames
                [choice.frame % self.absolute_frames.len()]
            .replace(CELL_SLOT, cell.name()),
            PlacementSpec::Relative {
                direction,
                reference,
            } => self.relative_frames[choice.frame % self.relative_frames.len()]
                .replace(DIRECTION_SLOT, direction.name())
                .replace(REFERENCE_SLOT, reference),
        };
        format!(
            "{pick_verb} the {} and {place_verb} it {frame}",
            intent.pick_target
        )
    }

    /// Rendering with the first template of every list.
    pub fn render_canonical(&self, intent: &Intent) -> String {
        self.render_with(intent, TemplateChoice::default())
    }

    pub fn render(&self, intent: &Intent, rng_seed: u64) -> String {
        let mut rng = seed::rng(seed::derive_tagged(rng_seed, "render"));
        let frames = match intent.placement {
            PlacementSpec::Absolute { .. } => self.absolute_frames.len(),
            PlacementSpec::Relative { .. } => self.relative_frames.len(),
        };
        let choice = TemplateChoice {
            pick_verb: rng.random_range(0..self.pick_verbs.len()),
            place_verb: rng.random_range(0..self.place_verbs.len()),
            frame: rng.random_range(0..frames),
        };
        self.render_with(intent, choice)
    }
}
