//! Random tabletop scenes, scripted demonstrations and JSONL persistence.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang_parser::is_parse_safe;
use crate::scene::{Action, Point2, Scene, SceneError, SceneObject, DEFAULT_MIN_SEPARATION};
use crate::seed;
use crate::semantics_eval::{eval_l2a, EvalConfig};
use crate::spatial_lang::{describe, Intent, LangError, TemplateBank};

/// Rejection-sampling budget for one scene.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Object centers and place points are drawn from `[MARGIN, 1 − MARGIN]²`.
pub const MARGIN: f64 = 0.05;

const MAX_DEMO_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: schema violation: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("could not place {k} objects {min_separation} apart within {attempts} attempts")]
    PlacementInfeasible {
        k: usize,
        min_separation: f64,
        attempts: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Language(#[from] LangError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatagenError + '_ {
    move |source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub name: String,
    pub tags: Vec<String>,
}

/// The set of object names scenes are drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    entries: Vec<CatalogEntry>,
}

const YCB_NAMES: [&str; 32] = [
    "master chef can",
    "cracker box",
    "sugar box",
    "tomato soup can",
    "mustard bottle",
    "tuna fish can",
    "pudding box",
    "gelatin box",
    "potted meat can",
    "banana",
    "strawberry",
    "apple",
    "lemon",
    "peach",
    "pear",
    "orange",
    "plum",
    "pitcher base",
    "bleach cleanser",
    "bowl",
    "mug",
    "sponge",
    "spatula",
    "power drill",
    "wood block",
    "scissors",
    "marker",
    "foam brick",
    "tennis ball",
    "yellow block",
    "cable",
    "towel",
];

const REAL_WORLD_NAMES: [&str; 12] = [
    "mustard bottle",
    "banana",
    "apple",
    "bowl",
    "mug",
    "sponge",
    "scissors",
    "marker",
    "foam brick",
    "yellow block",
    "cable",
    "towel",
];

impl Catalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self, DatagenError> {
        if entries.is_empty() {
            return Err(DatagenError::InvalidConfig("catalog is empty".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            SceneObject::new(e.name.clone(), Point2::center())?;
            if !is_parse_safe(&e.name) {
                return Err(DatagenError::InvalidConfig(format!(
                    "catalog name {:?} contains a grammar keyword",
                    e.name
                )));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(DatagenError::InvalidConfig(format!(
                    "duplicate catalog name {:?}",
                    e.name
                )));
            }
        }
        Ok(Self { entries })
    }

    /// 32 tabletop objects; the real-world subset is tagged `real`.
    pub fn ycb() -> Self {
        let entries = YCB_NAMES
            .iter()
            .map(|n| CatalogEntry {
                name: (*n).to_owned(),
                tags: if REAL_WORLD_NAMES.contains(n) {
                    vec!["real".to_owned()]
                } else {
                    vec![]
                },
            })
            .collect();
        Self::new(entries).expect("built-in catalog is valid")
    }

    /// The 12-object real-world subset.
    pub fn real_world() -> Self {
        let ycb = Self::ycb();
        let entries = ycb
            .entries
            .into_iter()
            .filter(|e| e.tags.iter().any(|t| t == "real"))
            .collect();
        Self::new(entries).expect("built-in catalog is valid")
    }

    /// Built-in catalog by name (`ycb` or `real`).
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "ycb" => Some(Self::ycb()),
            "real" | "real-world" => Some(Self::real_world()),
            _ => None,
        }
    }

    /// One entry per line: `name` or `name | tag tag ...`; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, DatagenError> {
        let mut entries = vec![];
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, tags) = match line.split_once('|') {
                Some((n, t)) => (n.trim(), t.split_whitespace().map(str::to_owned).collect()),
                None => (line, vec![]),
            };
            entries.push(CatalogEntry {
                name: name.split_whitespace().collect::<Vec<_>>().join(" "),
                tags,
            });
        }
        Self::new(entries)
    }

    /// A built-in name or a path to a catalog file.
    pub fn resolve(spec: &str) -> Result<Self, DatagenError> {
        if let Some(c) = Self::builtin(spec) {
            return Ok(c);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_text(&text)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Cycle,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Human => "human",
            Provenance::Cycle => "cycle",
        })
    }
}

/// An (observation, instruction, action) triplet with its meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demonstration {
    pub id: String,
    pub provenance: Provenance,
    pub scene: Scene,
    pub instruction: String,
    pub action: Action,
    pub intent: Intent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatagenConfig {
    pub min_separation: f64,
    pub eval: EvalConfig,
    pub bank: TemplateBank,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            min_separation: DEFAULT_MIN_SEPARATION,
            eval: EvalConfig::default(),
            bank: TemplateBank::default(),
        }
    }
}

fn uniform_point<R: Rng>(rng: &mut R) -> Point2 {
    Point2::clamped(
        rng.random_range(MARGIN..=1.0 - MARGIN),
        rng.random_range(MARGIN..=1.0 - MARGIN),
    )
    .quantized()
}

/// A scene of `k` distinct catalog objects at least `min_separation` apart.
pub fn gen_scene(
    catalog: &Catalog,
    k: usize,
    min_separation: f64,
    rng_seed: u64,
) -> Result<Scene, DatagenError> {
    if k == 0 || k > catalog.len() {
        return Err(DatagenError::InvalidConfig(format!(
            "object count {k} outside 1..={}",
            catalog.len()
        )));
    }
    let mut rng = seed::rng(seed::derive_tagged(rng_seed, "scene"));
    let mut names = catalog.names();
    names.shuffle(&mut rng);
    names.truncate(k);

    let mut centers: Vec<Point2> = Vec::with_capacity(k);
    let mut attempts = 0;
    while centers.len() < k {
        if attempts >= MAX_PLACEMENT_ATTEMPTS {
            return Err(DatagenError::PlacementInfeasible {
                k,
                min_separation,
                attempts,
            });
        }
        attempts += 1;
        let c = uniform_point(&mut rng);
        if centers.iter().all(|o| o.distance(&c) >= min_separation) {
            centers.push(c);
        }
    }
    let objects = names
        .into_iter()
        .zip(centers)
        .map(|(n, c)| SceneObject::new(n, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Scene::with_min_separation(
        format!("scene-{rng_seed:016x}"),
        objects,
        min_separation,
    )?)
}

/// A successful scripted demonstration in `scene`: random object, random
/// drop point, oracle description.
pub fn gen_demo(
    scene: &Scene,
    cfg: &DatagenConfig,
    rng_seed: u64,
) -> Result<Demonstration, DatagenError> {
    let mut rng = seed::rng(seed::derive_tagged(rng_seed, "demo"));
    let mut last = None;
    for _ in 0..MAX_DEMO_ATTEMPTS {
        let target = scene
            .objects()
            .choose(&mut rng)
            .expect("scenes are non-empty");
        let action = Action::new(target.center(), uniform_point(&mut rng));
        match describe(
            scene,
            &action,
            &cfg.eval.thresholds,
            cfg.eval.pick_radius,
            &cfg.bank,
            rng.random(),
        ) {
            Ok(d) => {
                if !eval_l2a(scene, &d.intent, &action, &cfg.eval).success {
                    continue;
                }
                return Ok(Demonstration {
                    id: String::new(),
                    provenance: Provenance::Human,
                    scene: scene.clone(),
                    instruction: d.text,
                    action,
                    intent: d.intent,
                });
            }
            Err(e @ LangError::NoReference) => last = Some(e),
            Err(e) => return Err(e.into()),
        }
    }
    Err(last.unwrap_or(LangError::NoReference).into())
}

/// Dataset generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub id_prefix: String,
}

impl DatasetSpec {
    pub fn new(count: usize, objects_min: usize, objects_max: usize) -> Self {
        Self {
            count,
            objects_min,
            objects_max,
            id_prefix: "demo".into(),
        }
    }
}

/// `spec.count` demonstrations, one fresh scene each. Item `i` depends only
/// on `(rng_seed, i)`, so the result is independent of thread count.
pub fn gen_dataset(
    catalog: &Catalog,
    spec: &DatasetSpec,
    cfg: &DatagenConfig,
    rng_seed: u64,
) -> Result<Vec<Demonstration>, DatagenError> {
    if spec.objects_min == 0
        || spec.objects_min > spec.objects_max
        || spec.objects_max > catalog.len()
    {
        return Err(DatagenError::InvalidConfig(format!(
            "object range {}..={} invalid for a catalog of {}",
            spec.objects_min,
            spec.objects_max,
            catalog.len()
        )));
    }
    (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let item_seed = seed::derive(rng_seed, i as u64);
            let mut rng = seed::rng(item_seed);
            let k = rng.random_range(spec.objects_min..=spec.objects_max);
            let scene = gen_scene(
                catalog,
                k,
                cfg.min_separation,
                seed::derive_tagged(item_seed, "scene"),
            )?;
            let mut demo = gen_demo(&scene, cfg, seed::derive_tagged(item_seed, "demo"))?;
            demo.id = format!("{}-{i:06}", spec.id_prefix);
            Ok(demo)
        })
        .collect()
}

/// Replaces `path` with `bytes` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatagenError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.flush().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

/// JSONL text: one JSON value per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String, DatagenError> {
    let mut out = String::new();
    for item in items {
        out.push_str(
            &serde_json::to_string(item).map_err(|e| DatagenError::InvalidConfig(e.to_string()))?,
        );
        out.push('\n');
    }
    Ok(out)
}

/// Writes one JSON value per line, atomically.
pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), DatagenError> {
    write_atomic(path, to_jsonl(items)?.as_bytes())
}

pub fn save(dataset: &[Demonstration], path: &Path) -> Result<(), DatagenError> {
    write_jsonl(dataset, path)
}

/// Reads JSONL values; blank lines are skipped, line numbers are 1-based.
pub fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(
    reader: R,
) -> Result<Vec<T>, DatagenError> {
    let mut out = vec![];
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DatagenError::SchemaViolation {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| DatagenError::SchemaViolation {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Loads a dataset and checks that every intent is valid in its scene.
pub fn load(path: &Path) -> Result<Vec<Demonstration>, DatagenError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let demos: Vec<Demonstration> = read_jsonl(BufReader::new(file))?;
    for (i, d) in demos.iter().enumerate() {
        if !d.intent.is_valid_in(&d.scene) {
            return Err(DatagenError::SchemaViolation {
                line: i + 1,
                message: format!("intent of {} names objects missing from its scene", d.id),
            });
        }
    }
    Ok(demos)
}

/// Count of demonstrations per description style.
pub fn type_distribution(dataset: &[Demonstration]) -> (usize, usize) {
    use crate::spatial_lang::DescriptionType::*;
    dataset
        .iter()
        .fold((0, 0), |(a, r), d| match d.intent.placement.kind() {
            Absolute => (a + 1, r),
            Relative => (a, r + 1),
        })
}
