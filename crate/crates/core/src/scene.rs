//! Workspace geometry: normalized points, objects, scenes, pick-and-place
//! actions and the 3×3 grid reference frame.
//!
//! Coordinates are normalized to `[0, 1]` with `(0, 0)` at the left/top
//! border and `(1, 1)` at the right/bottom border, so `y` grows downward.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default minimum center-to-center distance between two objects of a scene.
pub const DEFAULT_MIN_SEPARATION: f64 = 0.08;

/// Points closer than this are treated as coincident by [`direction_of`].
pub const DEGENERATE_EPS: f64 = 1e-9;

/// Serialized coordinates carry this many decimal digits.
pub const COORD_DECIMALS: i32 = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("coordinate ({x}, {y}) outside the normalized workspace [0,1]²")]
    OutOfWorkspace { x: f64, y: f64 },
    #[error("scene has no objects")]
    EmptyScene,
    #[error(
        "invalid object name {0:?}: names are non-empty lowercase words separated by single spaces"
    )]
    InvalidName(String),
    #[error("duplicate object name {0:?}")]
    DuplicateName(String),
    #[error(
        "objects {a:?} and {b:?} are {distance:.4} apart, below the minimum separation {min:.4}"
    )]
    TooClose {
        a: String,
        b: String,
        distance: f64,
        min: f64,
    },
    #[error("direction between coincident points is undefined")]
    DegenerateDirection,
    #[error("unknown {kind} {value:?}")]
    UnknownName { kind: &'static str, value: String },
}

/// Rounds to the serialized precision.
pub fn quantize(v: f64) -> f64 {
    let scale = 10f64.powi(COORD_DECIMALS);
    (v * scale).round() / scale
}

/// A point in normalized workspace coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    x: f64,
    y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Result<Self, SceneError> {
        if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
            Ok(Self { x, y })
        } else {
            Err(SceneError::OutOfWorkspace { x, y })
        }
    }

    /// Builds a point, clamping each coordinate into `[0, 1]`. NaN maps to 0.5.
    pub fn clamped(x: f64, y: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.5 } else { v.clamp(0.0, 1.0) };
        Self { x: c(x), y: c(y) }
    }

    pub const fn center() -> Self {
        Self { x: 0.5, y: 0.5 }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// The point snapped to the serialized precision.
    pub fn quantized(&self) -> Self {
        Self::clamped(quantize(self.x), quantize(self.y))
    }
}

// Wire and file form: `{"x": .., "y": ..}` with six decimal digits.
impl Serialize for Point2 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Raw {
            x: f64,
            y: f64,
        }
        Raw {
            x: quantize(self.x),
            y: quantize(self.y),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Point2 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            x: f64,
            y: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        Point2::new(raw.x, raw.y).map_err(serde::de::Error::custom)
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.split(' ').all(|w| !w.is_empty())
        && !name
            .chars()
            .any(|c| c.is_uppercase() || (c.is_whitespace() && c != ' '))
}

/// A named object with its center in the workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    name: String,
    center: Point2,
}

impl SceneObject {
    pub fn new(name: impl Into<String>, center: Point2) -> Result<Self, SceneError> {
        let name = name.into();
        if !valid_name(&name) {
            return Err(SceneError::InvalidName(name));
        }
        Ok(Self { name, center })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn center(&self) -> Point2 {
        self.center
    }
}

#[derive(Serialize, Deserialize)]
struct RawObject {
    name: String,
    x: f64,
    y: f64,
}

impl Serialize for SceneObject {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawObject {
            name: self.name.clone(),
            x: quantize(self.center.x),
            y: quantize(self.center.y),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SceneObject {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawObject::deserialize(deserializer)?;
        let center = Point2::new(raw.x, raw.y).map_err(serde::de::Error::custom)?;
        SceneObject::new(raw.name, center).map_err(serde::de::Error::custom)
    }
}

/// Symbolic observation of the tabletop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    scene_id: String,
    objects: Vec<SceneObject>,
}

impl Scene {
    /// Builds a scene enforcing [`DEFAULT_MIN_SEPARATION`].
    pub fn new(scene_id: impl Into<String>, objects: Vec<SceneObject>) -> Result<Self, SceneError> {
        Self::with_min_separation(scene_id, objects, DEFAULT_MIN_SEPARATION)
    }

    pub fn with_min_separation(
        scene_id: impl Into<String>,
        objects: Vec<SceneObject>,
        min_separation: f64,
    ) -> Result<Self, SceneError> {
        if objects.is_empty() {
            return Err(SceneError::EmptyScene);
        }
        for (i, a) in objects.iter().enumerate() {
            for b in &objects[i + 1..] {
                if a.name == b.name {
                    return Err(SceneError::DuplicateName(a.name.clone()));
                }
                let distance = a.center.distance(&b.center);
                if distance < min_separation {
                    return Err(SceneError::TooClose {
                        a: a.name.clone(),
                        b: b.name.clone(),
                        distance,
                        min: min_separation,
                    });
                }
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            objects,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.objects.iter().map(|o| o.name.clone()).collect()
    }

    /// Object whose center is closest to `p`, skipping `exclude`.
    ///
    /// Ties go to the object listed first.
    pub fn nearest_object(
        &self,
        p: Point2,
        exclude: Option<&str>,
    ) -> Result<(&SceneObject, f64), SceneError> {
        let mut best: Option<(&SceneObject, f64)> = None;
        for obj in &self.objects {
            if exclude == Some(obj.name.as_str()) {
                continue;
            }
            let d = obj.center.distance(&p);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((obj, d));
            }
        }
        best.ok_or(SceneError::EmptyScene)
    }
}

impl<'de> Deserialize<'de> for Scene {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            scene_id: String,
            objects: Vec<SceneObject>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Scene::new(raw.scene_id, raw.objects).map_err(serde::de::Error::custom)
    }
}

/// A pick-and-place action: grasp at `pick`, release at `place`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub pick: Point2,
    pub place: Point2,
}

impl Action {
    pub fn new(pick: Point2, place: Point2) -> Self {
        Self { pick, place }
    }

    pub fn quantized(&self) -> Self {
        Self {
            pick: self.pick.quantized(),
            place: self.place.quantized(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Row {
    Top,
    Middle,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Col {
    Left,
    Center,
    Right,
}

/// One of the nine cells of the 3×3 workspace grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridCell {
    pub row: Row,
    pub col: Col,
}

const THIRD: f64 = 1.0 / 3.0;
const TWO_THIRDS: f64 = 2.0 / 3.0;

impl GridCell {
    pub const ALL: [GridCell; 9] = {
        use Col::*;
        use Row::*;
        [
            GridCell {
                row: Top,
                col: Left,
            },
            GridCell {
                row: Top,
                col: Center,
            },
            GridCell {
                row: Top,
                col: Right,
            },
            GridCell {
                row: Middle,
                col: Left,
            },
            GridCell {
                row: Middle,
                col: Center,
            },
            GridCell {
                row: Middle,
                col: Right,
            },
            GridCell {
                row: Bottom,
                col: Left,
            },
            GridCell {
                row: Bottom,
                col: Center,
            },
            GridCell {
                row: Bottom,
                col: Right,
            },
        ]
    };

    pub const fn new(row: Row, col: Col) -> Self {
        Self { row, col }
    }

    /// Canonical surface name, e.g. `"top left"` or `"center"`.
    pub fn name(&self) -> &'static str {
        use Col::*;
        use Row::*;
        match (self.row, self.col) {
            (Top, Left) => "top left",
            (Top, Center) => "top center",
            (Top, Right) => "top right",
            (Middle, Left) => "middle left",
            (Middle, Center) => "center",
            (Middle, Right) => "middle right",
            (Bottom, Left) => "bottom left",
            (Bottom, Center) => "bottom center",
            (Bottom, Right) => "bottom right",
        }
    }

    /// Cell bounds as `(x_min, x_max, y_min, y_max)`.
    ///
    /// The lower bound is exclusive except for the first row/column.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let span = |i: usize| match i {
            0 => (0.0, THIRD),
            1 => (THIRD, TWO_THIRDS),
            _ => (TWO_THIRDS, 1.0),
        };
        let (x0, x1) = span(self.col as usize);
        let (y0, y1) = span(self.row as usize);
        (x0, x1, y0, y1)
    }

    pub fn centroid(&self) -> Point2 {
        let (x0, x1, y0, y1) = self.bounds();
        Point2::clamped((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GridCell {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "middle center" {
            return Ok(GridCell::new(Row::Middle, Col::Center));
        }
        GridCell::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| SceneError::UnknownName {
                kind: "grid cell",
                value: s.to_owned(),
            })
    }
}

impl Serialize for GridCell {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for GridCell {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn third_index(v: f64) -> usize {
    if v <= THIRD {
        0
    } else if v <= TWO_THIRDS {
        1
    } else {
        2
    }
}

/// The grid cell containing `p`. Boundary values belong to the left/top cell.
pub fn grid_cell_of(p: Point2) -> GridCell {
    let row = [Row::Top, Row::Middle, Row::Bottom][third_index(p.y)];
    let col = [Col::Left, Col::Center, Col::Right][third_index(p.x)];
    GridCell { row, col }
}

/// Eight compass relations, listed counterclockwise from `Right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction8 {
    Right,
    TopRight,
    Top,
    TopLeft,
    Left,
    BottomLeft,
    Bottom,
    BottomRight,
}

impl Direction8 {
    pub const ALL: [Direction8; 8] = [
        Direction8::Right,
        Direction8::TopRight,
        Direction8::Top,
        Direction8::TopLeft,
        Direction8::Left,
        Direction8::BottomLeft,
        Direction8::Bottom,
        Direction8::BottomRight,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Direction8::Right => "right",
            Direction8::TopRight => "top right",
            Direction8::Top => "top",
            Direction8::TopLeft => "top left",
            Direction8::Left => "left",
            Direction8::BottomLeft => "bottom left",
            Direction8::Bottom => "bottom",
            Direction8::BottomRight => "bottom right",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }

    pub fn opposite(&self) -> Direction8 {
        Self::ALL[(self.index() + 4) % 8]
    }

    /// Axis angle in radians, counterclockwise from +x with y pointing up.
    pub fn axis_angle(&self) -> f64 {
        self.index() as f64 * std::f64::consts::FRAC_PI_4
    }

    /// Unit vector of the sector axis in workspace coordinates (y down).
    pub fn unit(&self) -> (f64, f64) {
        let a = self.axis_angle();
        (a.cos(), -a.sin())
    }
}

impl fmt::Display for Direction8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction8 {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Direction8::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| SceneError::UnknownName {
                kind: "direction",
                value: s.to_owned(),
            })
    }
}

impl Serialize for Direction8 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Direction8 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Compass relation of `target` as seen from `reference`.
///
/// The plane is split into eight 45° sectors centered on the cardinal and
/// diagonal axes. An angle exactly on a sector boundary belongs to the
/// sector counterclockwise of it.
pub fn direction_of(reference: Point2, target: Point2) -> Result<Direction8, SceneError> {
    let dx = target.x - reference.x;
    let dy_up = reference.y - target.y;
    if dx.hypot(dy_up) < DEGENERATE_EPS {
        return Err(SceneError::DegenerateDirection);
    }
    let deg = dy_up.atan2(dx).to_degrees().rem_euclid(360.0);
    let sector = ((deg + 22.5) / 45.0).floor() as usize % 8;
    Ok(Direction8::ALL[sector])
}
