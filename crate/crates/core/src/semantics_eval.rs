//! Ground-truth evaluators for the three tasks and the metrics report.
//!
//! * L2A: the right object is grasped and dropped inside the region the
//!   instruction describes.
//! * A2L: the description names the grasped object, its placement region
//!   contains the drop point, and its style was admissible for the action.
//! * L2C: the binary consistency judgment matches the ground truth.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang_parser::Parser;
use crate::scene::{
    direction_of, grid_cell_of, Action, Direction8, GridCell, Point2, Scene, DEGENERATE_EPS,
};
use crate::spatial_lang::{
    eligibility, Intent, PlacementSpec, ThresholdConfig, DEFAULT_PICK_RADIUS,
};

/// Side length of the sampling lattice used for region intersection.
pub const REGION_GRID: usize = 200;

/// Masks held by a [`RegionCache`] before it is flushed (~5 KiB each).
pub const REGION_CACHE_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no results to report")]
    EmptyResults,
    #[error("reference object {0:?} is not in the scene")]
    UnknownReference(String),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
}

/// The set of drop points that satisfy a placement spec in a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlacementRegion {
    /// A grid cell.
    Cell(GridCell),
    /// Points in the `direction` sector around `center`, closer than `radius`.
    Wedge {
        center: Point2,
        direction: Direction8,
        radius: f64,
    },
}

impl PlacementRegion {
    pub fn of(
        scene: &Scene,
        spec: &PlacementSpec,
        thresholds: &ThresholdConfig,
    ) -> Result<Self, EvalError> {
        match spec {
            PlacementSpec::Absolute { cell } => Ok(PlacementRegion::Cell(*cell)),
            PlacementSpec::Relative {
                direction,
                reference,
            } => {
                let obj = scene
                    .object(reference)
                    .ok_or_else(|| EvalError::UnknownReference(reference.clone()))?;
                Ok(PlacementRegion::Wedge {
                    center: obj.center(),
                    direction: *direction,
                    radius: thresholds.d_rel,
                })
            }
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        match *self {
            PlacementRegion::Cell(cell) => grid_cell_of(p) == cell,
            PlacementRegion::Wedge {
                center,
                direction,
                radius,
            } => {
                let d = center.distance(&p);
                d < radius && d >= DEGENERATE_EPS && direction_of(center, p).ok() == Some(direction)
            }
        }
    }

    /// Axis-aligned bounds of the region clipped to the workspace, as
    /// `(x_min, x_max, y_min, y_max)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            PlacementRegion::Cell(cell) => cell.bounds(),
            PlacementRegion::Wedge { center, radius, .. } => (
                (center.x() - radius).max(0.0),
                (center.x() + radius).min(1.0),
                (center.y() - radius).max(0.0),
                (center.y() + radius).min(1.0),
            ),
        }
    }

    /// A point inside the region, deterministic. Cells give their centroid,
    /// wedges a point on the sector axis kept inside the workspace.
    pub fn representative(&self) -> Point2 {
        match *self {
            PlacementRegion::Cell(cell) => cell.centroid(),
            PlacementRegion::Wedge {
                center,
                direction,
                radius,
            } => {
                let (ux, uy) = direction.unit();
                let reach = |c: f64, u: f64| {
                    if u > 1e-12 {
                        (1.0 - c) / u
                    } else if u < -1e-12 {
                        -c / u
                    } else {
                        f64::INFINITY
                    }
                };
                let t_max = reach(center.x(), ux).min(reach(center.y(), uy));
                let t = (radius / 2.0).min(t_max / 2.0);
                Point2::clamped(center.x() + t * ux, center.y() + t * uy)
            }
        }
    }

    /// Uniform draw from the region by rejection inside [`Self::bounds`];
    /// falls back to [`Self::representative`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        let (x0, x1, y0, y1) = self.bounds();
        for _ in 0..1000 {
            let p = Point2::clamped(rng.random_range(x0..=x1), rng.random_range(y0..=y1));
            if self.contains(p) {
                return p;
            }
        }
        self.representative()
    }

    /// Membership of the region on the `REGION_GRID`² lattice of cell
    /// midpoints.
    pub fn mask(&self) -> RegionMask {
        let mut mask = RegionMask::empty();
        let (x0, x1, y0, y1) = self.bounds();
        let g = REGION_GRID as f64;
        let lo = |v: f64| ((v * g - 0.5).floor().max(0.0)) as usize;
        let hi = |v: f64| ((v * g - 0.5).ceil().max(0.0) as usize).min(REGION_GRID - 1);
        for j in lo(y0)..=hi(y1) {
            for i in lo(x0)..=hi(x1) {
                let p = Point2::clamped((i as f64 + 0.5) / g, (j as f64 + 0.5) / g);
                if self.contains(p) {
                    mask.set(i, j);
                }
            }
        }
        mask
    }

    /// Whether the two regions share a lattice point.
    pub fn intersects(&self, other: &PlacementRegion) -> bool {
        self.mask().intersects(&other.mask())
    }
}

/// Bitset over the region sampling lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    bits: Vec<u64>,
}

impl RegionMask {
    fn empty() -> Self {
        Self {
            bits: vec![0; (REGION_GRID * REGION_GRID).div_ceil(64)],
        }
    }

    fn set(&mut self, i: usize, j: usize) {
        let k = j * REGION_GRID + i;
        self.bits[k / 64] |= 1 << (k % 64);
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn intersects(&self, other: &RegionMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| a & b != 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum RegionKey {
    Cell(GridCell),
    Wedge(u64, u64, Direction8, u64),
}

impl From<&PlacementRegion> for RegionKey {
    fn from(r: &PlacementRegion) -> Self {
        match *r {
            PlacementRegion::Cell(c) => RegionKey::Cell(c),
            PlacementRegion::Wedge {
                center,
                direction,
                radius,
            } => RegionKey::Wedge(
                center.x().to_bits(),
                center.y().to_bits(),
                direction,
                radius.to_bits(),
            ),
        }
    }
}

/// Shared cache of region masks. A wedge depends only on its reference
/// center, direction and radius, so the key is the region itself.
#[derive(Debug, Default, Clone)]
pub struct RegionCache {
    masks: Arc<Mutex<HashMap<RegionKey, Arc<RegionMask>>>>,
}

impl RegionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mask(&self, region: &PlacementRegion) -> Arc<RegionMask> {
        let key = RegionKey::from(region);
        if let Some(m) = self.masks.lock().expect("region cache poisoned").get(&key) {
            return Arc::clone(m);
        }
        let mask = Arc::new(region.mask());
        let mut masks = self.masks.lock().expect("region cache poisoned");
        if masks.len() >= REGION_CACHE_CAPACITY {
            masks.clear();
        }
        masks.entry(key).or_insert(mask).clone()
    }

    pub fn intersects(&self, a: &PlacementRegion, b: &PlacementRegion) -> bool {
        self.mask(a).intersects(&self.mask(b))
    }

    pub fn len(&self) -> usize {
        self.masks.lock().expect("region cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub pick_radius: f64,
    pub thresholds: ThresholdConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pick_radius: DEFAULT_PICK_RADIUS,
            thresholds: ThresholdConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, min_separation: f64) -> Result<(), EvalError> {
        self.thresholds
            .validate()
            .map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
        if !(self.pick_radius > 0.0 && self.pick_radius < min_separation) {
            return Err(EvalError::InvalidConfig(format!(
                "pick_radius {} must be positive and below min_separation = {min_separation}",
                self.pick_radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    WrongObject,
    MissedGrasp,
    WrongPlacement,
    Unparseable,
    IneligibleType,
}

impl FailReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailReason::WrongObject => "wrong_object",
            FailReason::MissedGrasp => "missed_grasp",
            FailReason::WrongPlacement => "wrong_placement",
            FailReason::Unparseable => "unparseable",
            FailReason::IneligibleType => "ineligible_type",
        }
    }
}

/// Outcome of one L2A or A2L check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    pub fail_reason: Option<FailReason>,
}

impl Outcome {
    pub const SUCCESS: Outcome = Outcome {
        success: true,
        fail_reason: None,
    };

    pub fn fail(reason: FailReason) -> Self {
        Self {
            success: false,
            fail_reason: Some(reason),
        }
    }
}

fn grasp_check(
    scene: &Scene,
    target: &str,
    pick: Point2,
    cfg: &EvalConfig,
) -> Result<(), FailReason> {
    let Ok((nearest, d)) = scene.nearest_object(pick, None) else {
        return Err(FailReason::MissedGrasp);
    };
    if nearest.name() == target {
        if d <= cfg.pick_radius {
            Ok(())
        } else {
            Err(FailReason::MissedGrasp)
        }
    } else if d <= cfg.pick_radius {
        Err(FailReason::WrongObject)
    } else {
        Err(FailReason::MissedGrasp)
    }
}

/// Whether `action` carries out `intent` in `scene`.
pub fn eval_l2a(scene: &Scene, intent: &Intent, action: &Action, cfg: &EvalConfig) -> Outcome {
    if let Err(r) = grasp_check(scene, &intent.pick_target, action.pick, cfg) {
        return Outcome::fail(r);
    }
    match PlacementRegion::of(scene, &intent.placement, &cfg.thresholds) {
        Ok(region) if region.contains(action.place) => Outcome::SUCCESS,
        _ => Outcome::fail(FailReason::WrongPlacement),
    }
}

/// Whether `text` correctly describes `action` in `scene`.
pub fn eval_a2l(scene: &Scene, action: &Action, text: &str, cfg: &EvalConfig) -> Outcome {
    let parser = Parser::with_catalog(&scene.names());
    eval_a2l_with(&parser, scene, action, text, cfg)
}

pub fn eval_a2l_with(
    parser: &Parser,
    scene: &Scene,
    action: &Action,
    text: &str,
    cfg: &EvalConfig,
) -> Outcome {
    let Ok(intent) = parser.parse(text) else {
        return Outcome::fail(FailReason::Unparseable);
    };
    if let Err(r) = grasp_check(scene, &intent.pick_target, action.pick, cfg) {
        return Outcome::fail(r);
    }
    if let PlacementSpec::Relative { reference, .. } = &intent.placement {
        if reference == &intent.pick_target {
            return Outcome::fail(FailReason::WrongPlacement);
        }
    }
    match PlacementRegion::of(scene, &intent.placement, &cfg.thresholds) {
        Ok(region) if region.contains(action.place) => {}
        _ => return Outcome::fail(FailReason::WrongPlacement),
    }
    let elig = eligibility(scene, &intent.pick_target, action.place, &cfg.thresholds);
    if elig.allows(intent.placement.kind()) {
        Outcome::SUCCESS
    } else {
        Outcome::fail(FailReason::IneligibleType)
    }
}

/// Whether a consistency judgment matches the ground truth.
pub fn eval_l2c(judgment: bool, truth: bool) -> bool {
    judgment == truth
}

/// Per-item evaluation results; a task left `None` was not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalRecord {
    pub l2a: Option<Outcome>,
    pub a2l: Option<Outcome>,
    pub l2c: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskCounts {
    pub evaluated: usize,
    pub correct: usize,
}

impl TaskCounts {
    fn pct(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.evaluated as f64
        }
    }

    fn add(&mut self, ok: bool) {
        self.evaluated += 1;
        self.correct += ok as usize;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricCounts {
    pub l2a: TaskCounts,
    pub a2l: TaskCounts,
    pub l2c: TaskCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub l2a_pct: f64,
    pub a2l_pct: f64,
    pub l2c_pct: f64,
    pub counts: MetricCounts,
    /// Failure counts keyed `"<task>.<reason>"`, e.g. `"l2a.wrong_object"`.
    pub failure_histogram: BTreeMap<String, usize>,
}

pub fn metrics_report(results: &[EvalRecord]) -> Result<MetricsReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let mut counts = MetricCounts::default();
    let mut hist = BTreeMap::new();
    fn note(hist: &mut BTreeMap<String, usize>, task: &str, o: &Outcome, c: &mut TaskCounts) {
        c.add(o.success);
        if let Some(r) = o.fail_reason {
            *hist.entry(format!("{task}.{}", r.as_str())).or_insert(0) += 1;
        }
    }
    for r in results {
        if let Some(o) = &r.l2a {
            note(&mut hist, "l2a", o, &mut counts.l2a);
        }
        if let Some(o) = &r.a2l {
            note(&mut hist, "a2l", o, &mut counts.a2l);
        }
        if let Some(ok) = r.l2c {
            counts.l2c.add(ok);
            if !ok {
                *hist.entry("l2c.incorrect".to_owned()).or_insert(0) += 1;
            }
        }
    }
    Ok(MetricsReport {
        l2a_pct: counts.l2a.pct(),
        a2l_pct: counts.a2l.pct(),
        l2c_pct: counts.l2c.pct(),
        counts,
        failure_histogram: hist,
    })
}

/// Aligned plain-text table with one row per labelled report.
pub fn format_table(rows: &[(String, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>7}",
        "Method", "L2A (%)", "A2L (%)", "L2C (%)"
    );
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{label:<width$}  {:>7.1}  {:>7.1}  {:>7.1}",
            r.l2a_pct, r.a2l_pct, r.l2c_pct
        );
    }
    out
}
