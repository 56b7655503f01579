//! The L2A2L pipeline and confidence-gated, majority-voted augmentation.
//!
//! For every demonstration `(o, l, a)` the engine runs a deterministic
//! L2A → A2L → L2C pass. When the resulting confidence `c` is at most `τ`,
//! it draws `N` candidate actions, describes each of them `N` times and
//! keeps the candidates for which at least `ν·N` descriptions are judged
//! consistent with `l`. Kept candidates become new `(o, l, â)` triplets.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, BackendExt, OracleBackend};
use crate::datagen::{Demonstration, Provenance};
use crate::lang_parser::{intents_equivalent, Parser};
use crate::scene::Action;
use crate::seed;
use crate::semantics_eval::{
    eval_a2l_with, eval_l2a, eval_l2c, metrics_report, EvalConfig, EvalRecord, MetricsReport,
};
use crate::spatial_lang::{describe, perturb_relation, TemplateBank};

/// Confidence above which an L2C judgment counts as "consistent" when
/// scoring L2C accuracy.
pub const L2C_DECISION_THRESHOLD: f64 = 0.5;

/// Pipeline stage a backend error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    L2a,
    A2l,
    L2c,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::L2a => "l2a",
            Stage::A2l => "a2l",
            Stage::L2c => "l2c",
        })
    }
}

#[derive(Debug, Error)]
pub enum CycleError {
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("invalid cycle config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("retrain hook failed in round {round}: {message}")]
    Retrain { round: usize, message: String },
    #[error("evaluation of {id} failed: {message}")]
    Evaluation { id: String, message: String },
}

impl CycleError {
    /// Whether the error means the backend could not be reached at all.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, CycleError::Stage { source, .. } if source.is_unavailable())
    }
}

fn stage(stage: Stage) -> impl FnOnce(BackendError) -> CycleError {
    move |source| CycleError::Stage { stage, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    /// Stochastic samples per stage.
    pub n: usize,
    pub tau: f64,
    pub nu: f64,
    pub iterations: usize,
    /// Maximum number of new triplets per round. When set, further passes
    /// over the dataset are made until the quota is met or a pass adds
    /// nothing.
    pub per_round_quota: Option<usize>,
    /// Sampling temperature of the stochastic stages.
    pub temperature: f64,
    pub max_passes: usize,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            n: 5,
            tau: 0.5,
            nu: 0.5,
            iterations: 1,
            per_round_quota: None,
            temperature: 1.0,
            max_passes: 20,
            workers: None,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<(), CycleError> {
        let bad = |m: String| Err(CycleError::InvalidConfig(m));
        if self.n == 0 {
            return bad("N must be >= 1".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must be in (0,1), got {}", self.tau));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad(format!("nu must be in (0,1], got {}", self.nu));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.max_passes == 0 {
            return bad("max_passes must be >= 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        Ok(())
    }

    /// `N_p / N ≥ ν`, in exact integer arithmetic where possible.
    pub fn accepts(&self, votes: usize) -> bool {
        votes as f64 >= self.nu * self.n as f64 - 1e-12
    }
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn in_pool<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, CycleError> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CycleError::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Output of one deterministic L2A → A2L → L2C pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutput {
    pub action: Action,
    pub reconstructed_text: String,
    pub c: f64,
}

/// One deterministic (temperature 0) round trip of `instruction`.
pub fn l2a2l_once<B: Backend + ?Sized>(
    scene: &crate::scene::Scene,
    instruction: &str,
    backend: &B,
    rng_seed: u64,
) -> Result<CycleOutput, CycleError> {
    let action = backend
        .l2a(
            scene,
            instruction,
            0.0,
            seed::derive_tagged(rng_seed, "l2a"),
        )
        .map_err(stage(Stage::L2a))?
        .action;
    let text = backend
        .a2l(scene, &action, 0.0, seed::derive_tagged(rng_seed, "a2l"))
        .map_err(stage(Stage::A2l))?
        .text;
    let (_, c) = backend
        .l2c_confidence(scene, instruction, &text)
        .map_err(stage(Stage::L2c))?;
    Ok(CycleOutput {
        action,
        reconstructed_text: text,
        c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    /// Accepted by the vote and appended to the dataset.
    Added,
    /// Accepted, but an equal triplet is already present.
    Duplicate,
    /// Accepted after the round's quota was filled.
    OverQuota,
    /// Failed the vote.
    Rejected,
}

/// A stochastic candidate action with its vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotedAction {
    pub action: Action,
    /// `N_p`: descriptions with confidence `≥ τ`.
    pub votes: usize,
    /// L2C confidence of each sampled description; empty when the
    /// candidate could not be described.
    pub confidences: Vec<f64>,
    pub status: CandidateStatus,
}

/// What the engine did with one demonstration in one pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub source_id: String,
    pub round: usize,
    pub pass: usize,
    pub n: usize,
    pub tau: f64,
    pub nu: f64,
    pub deterministic_c: Option<f64>,
    pub gated: bool,
    pub candidates_tried: usize,
    pub accepted_actions: Vec<VotedAction>,
    pub rejected_actions: Vec<VotedAction>,
    pub error: Option<String>,
}

impl AugmentationRecord {
    fn new(source_id: &str, round: usize, pass: usize, cfg: &CycleConfig) -> Self {
        Self {
            source_id: source_id.to_owned(),
            round,
            pass,
            n: cfg.n,
            tau: cfg.tau,
            nu: cfg.nu,
            deterministic_c: None,
            gated: false,
            candidates_tried: 0,
            accepted_actions: Vec::new(),
            rejected_actions: Vec::new(),
            error: None,
        }
    }

    /// Checks the gate and vote conditions against the recorded numbers.
    pub fn replay(&self) -> Result<(), String> {
        if self.error.is_some() {
            if self
                .accepted_actions
                .iter()
                .any(|a| a.status == CandidateStatus::Added)
            {
                return Err("failed item added data".into());
            }
            return Ok(());
        }
        let c = self
            .deterministic_c
            .ok_or("missing deterministic confidence")?;
        let tried = self.accepted_actions.len() + self.rejected_actions.len();
        if tried != self.candidates_tried {
            return Err(format!(
                "{tried} candidates listed, {} recorded",
                self.candidates_tried
            ));
        }
        if c > self.tau {
            if self.gated || self.candidates_tried != 0 {
                return Err(format!(
                    "c={c} > tau={} but candidates were sampled",
                    self.tau
                ));
            }
            return Ok(());
        }
        if !self.gated || self.candidates_tried != self.n {
            return Err(format!(
                "c={c} <= tau={} but {} candidates tried",
                self.tau, self.candidates_tried
            ));
        }
        let need = self.nu * self.n as f64 - 1e-12;
        for a in self.accepted_actions.iter().chain(&self.rejected_actions) {
            let counted = a.confidences.iter().filter(|&&c| c >= self.tau).count();
            if counted != a.votes {
                return Err(format!(
                    "{} votes recorded, {counted} confidences >= tau",
                    a.votes
                ));
            }
            if !a.confidences.is_empty() && a.confidences.len() != self.n {
                return Err(format!(
                    "{} descriptions for N={}",
                    a.confidences.len(),
                    self.n
                ));
            }
            let passes = a.votes as f64 >= need;
            let listed_accepted = a.status != CandidateStatus::Rejected;
            if passes != listed_accepted {
                return Err(format!(
                    "votes {}/{} but status {:?}",
                    a.votes, self.n, a.status
                ));
            }
        }
        if self
            .accepted_actions
            .iter()
            .any(|a| a.status == CandidateStatus::Rejected)
            || self
                .rejected_actions
                .iter()
                .any(|a| a.status != CandidateStatus::Rejected)
        {
            return Err("candidate listed under the wrong outcome".into());
        }
        Ok(())
    }
}

struct ItemResult {
    record: AugmentationRecord,
    /// Vote-accepted actions, in sampling order.
    accepted: Vec<Action>,
}

fn process_item<B: Backend + ?Sized>(
    demo: &Demonstration,
    backend: &B,
    cfg: &CycleConfig,
    round: usize,
    pass: usize,
    item_seed: u64,
) -> ItemResult {
    let mut record = AugmentationRecord::new(&demo.id, round, pass, cfg);
    match sample_item(demo, backend, cfg, item_seed, &mut record) {
        Ok(accepted) => ItemResult { record, accepted },
        Err(e) => {
            log::warn!("{}: {e}", demo.id);
            record.error = Some(e.to_string());
            record.accepted_actions.clear();
            record.rejected_actions.clear();
            record.candidates_tried = 0;
            ItemResult {
                record,
                accepted: Vec::new(),
            }
        }
    }
}

fn sample_item<B: Backend + ?Sized>(
    demo: &Demonstration,
    backend: &B,
    cfg: &CycleConfig,
    item_seed: u64,
    record: &mut AugmentationRecord,
) -> Result<Vec<Action>, CycleError> {
    let scene = &demo.scene;
    let l = demo.instruction.as_str();
    let det = l2a2l_once(
        scene,
        l,
        backend,
        seed::derive_tagged(item_seed, "deterministic"),
    )?;
    record.deterministic_c = Some(det.c);
    if det.c > cfg.tau {
        return Ok(Vec::new());
    }
    record.gated = true;
    let candidates = backend
        .stochastic_l2a(
            scene,
            l,
            cfg.n,
            cfg.temperature,
            seed::derive_tagged(item_seed, "candidates"),
        )
        .map_err(stage(Stage::L2a))?;
    let mut accepted = Vec::new();
    for (i, action) in candidates.into_iter().enumerate() {
        let desc_seed = seed::derive(seed::derive_tagged(item_seed, "descriptions"), i as u64);
        let descriptions =
            match backend.stochastic_a2l(scene, &action, cfg.n, cfg.temperature, desc_seed) {
                Ok(d) => d,
                Err(BackendError::Language(_)) => Vec::new(),
                Err(e) => {
                    return Err(CycleError::Stage {
                        stage: Stage::A2l,
                        source: e,
                    })
                }
            };
        let mut confidences = Vec::with_capacity(descriptions.len());
        for l_hat in &descriptions {
            let (_, c) = backend
                .l2c_confidence(scene, l, l_hat)
                .map_err(stage(Stage::L2c))?;
            confidences.push(c);
        }
        let votes = confidences.iter().filter(|&&c| c >= cfg.tau).count();
        record.candidates_tried += 1;
        if cfg.accepts(votes) {
            accepted.push(action);
            record.accepted_actions.push(VotedAction {
                action,
                votes,
                confidences,
                status: CandidateStatus::Added,
            });
        } else {
            record.rejected_actions.push(VotedAction {
                action,
                votes,
                confidences,
                status: CandidateStatus::Rejected,
            });
        }
    }
    Ok(accepted)
}

type DedupKey = (String, [i64; 4]);

fn dedup_key(instruction: &str, action: &Action) -> DedupKey {
    let r = |v: f64| (v * 1e4).round() as i64;
    (
        instruction.to_owned(),
        [
            r(action.pick.x()),
            r(action.pick.y()),
            r(action.place.x()),
            r(action.place.y()),
        ],
    )
}

/// Result of one augmentation round.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutput {
    /// The input dataset followed by the new triplets.
    pub d_aug: Vec<Demonstration>,
    pub records: Vec<AugmentationRecord>,
    pub passes: usize,
}

impl AugmentOutput {
    pub fn new_items(&self) -> &[Demonstration] {
        &self.d_aug[self.d_aug.len() - self.added()..]
    }

    pub fn added(&self) -> usize {
        self.records
            .iter()
            .flat_map(|r| &r.accepted_actions)
            .filter(|a| a.status == CandidateStatus::Added)
            .count()
    }
}

/// One pass of augmentation over `dataset`, as round 0.
pub fn augment<B: Backend + ?Sized>(
    dataset: &[Demonstration],
    backend: &B,
    cfg: &CycleConfig,
    rng_seed: u64,
) -> Result<AugmentOutput, CycleError> {
    augment_round(dataset, backend, cfg, 0, rng_seed)
}

/// Augments `dataset` with new triplets. Items are processed in parallel
/// with per-item seeds and merged in dataset order, so the output does not
/// depend on scheduling.
pub fn augment_round<B: Backend + ?Sized>(
    dataset: &[Demonstration],
    backend: &B,
    cfg: &CycleConfig,
    round: usize,
    rng_seed: u64,
) -> Result<AugmentOutput, CycleError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(CycleError::EmptyDataset);
    }
    let round_seed = seed::derive(rng_seed, round as u64);
    let mut seen: HashSet<DedupKey> = dataset
        .iter()
        .map(|d| dedup_key(&d.instruction, &d.action))
        .collect();
    let mut d_aug = dataset.to_vec();
    let mut records = Vec::new();
    let mut added = 0usize;
    let quota = cfg.per_round_quota;
    let mut passes = 0;
    for pass in 0..cfg.max_passes {
        let pass_seed = seed::derive(round_seed, pass as u64);
        let results: Vec<ItemResult> = in_pool(cfg.workers, || {
            dataset
                .par_iter()
                .enumerate()
                .map(|(i, demo)| {
                    process_item(
                        demo,
                        backend,
                        cfg,
                        round,
                        pass,
                        seed::derive(pass_seed, i as u64),
                    )
                })
                .collect()
        })?;
        passes += 1;
        let before = added;
        for (demo, mut res) in dataset.iter().zip(results) {
            for (k, (action, voted)) in res
                .accepted
                .iter()
                .zip(res.record.accepted_actions.iter_mut())
                .enumerate()
            {
                let action = action.quantized();
                if quota.is_some_and(|q| added >= q) {
                    voted.status = CandidateStatus::OverQuota;
                    continue;
                }
                if !seen.insert(dedup_key(&demo.instruction, &action)) {
                    voted.status = CandidateStatus::Duplicate;
                    continue;
                }
                d_aug.push(Demonstration {
                    id: format!("{}~r{round}p{pass}c{k}", demo.id),
                    provenance: Provenance::Cycle,
                    scene: demo.scene.clone(),
                    instruction: demo.instruction.clone(),
                    action,
                    intent: demo.intent.clone(),
                });
                added += 1;
            }
            records.push(res.record);
        }
        match quota {
            Some(q) if added < q && added > before => continue,
            _ => break,
        }
    }
    if let Some(q) = quota {
        if added < q {
            log::warn!(
                "round {round}: quota {q} not met, {added} new triplets after {passes} passes"
            );
        }
    }
    Ok(AugmentOutput {
        d_aug,
        records,
        passes,
    })
}

/// Stands in for re-training: maps the merged dataset of a round to the
/// backend used from then on. Implementations start from the base model
/// every time rather than continuing from the previous round's model.
pub trait RetrainHook {
    fn retrain(
        &mut self,
        merged: &[Demonstration],
        round: usize,
    ) -> Result<Arc<dyn Backend>, String>;
}

/// Keeps using the same backend.
pub struct FrozenHook(pub Arc<dyn Backend>);

impl RetrainHook for FrozenHook {
    fn retrain(
        &mut self,
        _merged: &[Demonstration],
        _round: usize,
    ) -> Result<Arc<dyn Backend>, String> {
        Ok(self.0.clone())
    }
}

/// Oracle "training": the base oracle's noise is scaled by
/// `1 − a·n_cycle/n_total`, where `a` is the ground-truth L2A accuracy of
/// the cycle-generated triplets in the merged dataset.
pub struct NoiseShrinkHook {
    base: OracleBackend,
}

impl NoiseShrinkHook {
    pub fn new(base: OracleBackend) -> Self {
        Self { base }
    }

    pub fn factor(&self, merged: &[Demonstration]) -> f64 {
        let cycle: Vec<&Demonstration> = merged
            .iter()
            .filter(|d| d.provenance == Provenance::Cycle)
            .collect();
        if cycle.is_empty() || merged.is_empty() {
            return 1.0;
        }
        let cfg = self.base.eval_config();
        let ok = cycle
            .iter()
            .filter(|d| eval_l2a(&d.scene, &d.intent, &d.action, cfg).success)
            .count();
        let a = ok as f64 / cycle.len() as f64;
        1.0 - a * cycle.len() as f64 / merged.len() as f64
    }
}

impl RetrainHook for NoiseShrinkHook {
    fn retrain(
        &mut self,
        merged: &[Demonstration],
        round: usize,
    ) -> Result<Arc<dyn Backend>, String> {
        let factor = self.factor(merged);
        log::info!("round {round}: noise factor {factor:.4}");
        let model = self
            .base
            .with_noise(self.base.noise().scaled(factor))
            .map_err(|e| e.to_string())?
            .with_model_id(format!("oracle-r{round}"));
        Ok(Arc::new(model))
    }
}

/// Evaluation setup for a held-out set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSettings {
    pub eval: EvalConfig,
    pub bank: TemplateBank,
}

/// Scores `backend` on L2A, A2L and L2C over `holdout`.
///
/// L2A and A2L run at temperature 0. The L2C probe for item `i` pairs the
/// instruction with a fresh description of the same action (even `i`) or
/// with a description whose relation was changed (odd `i`); the judgment is
/// `c ≥ 0.5` and the truth comes from [`intents_equivalent`].
pub fn evaluate<B: Backend + ?Sized>(
    holdout: &[Demonstration],
    backend: &B,
    settings: &EvalSettings,
    rng_seed: u64,
    workers: Option<usize>,
) -> Result<(Vec<EvalRecord>, MetricsReport), CycleError> {
    let results: Result<Vec<EvalRecord>, CycleError> = in_pool(workers, || {
        holdout
            .par_iter()
            .enumerate()
            .map(|(i, d)| evaluate_item(i, d, backend, settings, seed::derive(rng_seed, i as u64)))
            .collect()
    })?;
    let records = results?;
    let report = metrics_report(&records).map_err(|e| CycleError::Evaluation {
        id: "holdout".into(),
        message: e.to_string(),
    })?;
    Ok((records, report))
}

fn evaluate_item<B: Backend + ?Sized>(
    index: usize,
    d: &Demonstration,
    backend: &B,
    settings: &EvalSettings,
    item_seed: u64,
) -> Result<EvalRecord, CycleError> {
    let cfg = &settings.eval;
    let scene = &d.scene;
    let parser = Parser::new(settings.bank.clone(), scene.names());

    let action = backend
        .l2a(
            scene,
            &d.instruction,
            0.0,
            seed::derive_tagged(item_seed, "l2a"),
        )
        .map_err(stage(Stage::L2a))?
        .action;
    let l2a = eval_l2a(scene, &d.intent, &action, cfg);

    let text = backend
        .a2l(scene, &d.action, 0.0, seed::derive_tagged(item_seed, "a2l"))
        .map_err(stage(Stage::A2l))?
        .text;
    let a2l = eval_a2l_with(&parser, scene, &d.action, &text, cfg);

    let probe_seed = seed::derive_tagged(item_seed, "l2c");
    let candidate = if index.is_multiple_of(2) {
        describe(
            scene,
            &d.action,
            &cfg.thresholds,
            cfg.pick_radius,
            &settings.bank,
            probe_seed,
        )
        .map_err(|e| CycleError::Evaluation {
            id: d.id.clone(),
            message: e.to_string(),
        })?
        .text
    } else {
        let mut rng = seed::rng(probe_seed);
        let wrong = perturb_relation(&d.intent, &mut rng);
        settings.bank.render(&wrong, rng.random())
    };
    let truth = match (parser.parse(&d.instruction), parser.parse(&candidate)) {
        (Ok(a), Ok(b)) => intents_equivalent(&a, &b, scene, &cfg.thresholds),
        _ => false,
    };
    let (_, c) = backend
        .l2c_confidence(scene, &d.instruction, &candidate)
        .map_err(stage(Stage::L2c))?;
    let l2c = eval_l2c(c >= L2C_DECISION_THRESHOLD, truth);

    Ok(EvalRecord {
        l2a: Some(l2a),
        a2l: Some(a2l),
        l2c: Some(l2c),
    })
}

/// Metrics of the model obtained after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub dataset_size: usize,
    pub new_items: usize,
    pub model_id: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub dataset: Vec<Demonstration>,
    pub records: Vec<AugmentationRecord>,
    pub metrics: RoundMetrics,
}

/// Rounds completed by [`self_improve`]; `error` is set when a later round
/// could not be completed.
#[derive(Debug)]
pub struct SelfImproveOutput {
    /// Round 0 is the initial dataset scored with the initial backend.
    pub rounds: Vec<RoundResult>,
    pub error: Option<CycleError>,
}

/// Iterated augmentation: each round augments the current dataset with the
/// current backend, hands the merged dataset to `hook` and scores the
/// returned backend on `holdout`.
pub fn self_improve(
    initial: &[Demonstration],
    holdout: &[Demonstration],
    backend: Arc<dyn Backend>,
    hook: &mut dyn RetrainHook,
    cfg: &CycleConfig,
    settings: &EvalSettings,
    rng_seed: u64,
) -> Result<SelfImproveOutput, CycleError> {
    cfg.validate()?;
    if initial.is_empty() || holdout.is_empty() {
        return Err(CycleError::EmptyDataset);
    }
    let eval_seed = seed::derive_tagged(rng_seed, "eval");
    let (_, report) = evaluate(holdout, backend.as_ref(), settings, eval_seed, cfg.workers)?;
    let mut rounds = vec![RoundResult {
        dataset: initial.to_vec(),
        records: Vec::new(),
        metrics: RoundMetrics {
            round: 0,
            dataset_size: initial.len(),
            new_items: 0,
            model_id: backend.model_id(),
            metrics: report,
        },
    }];
    let aug_seed = seed::derive_tagged(rng_seed, "augment");
    let mut current = backend;
    for round in 1..=cfg.iterations {
        let step = (|| {
            let data = &rounds.last().expect("round 0 exists").dataset;
            let out = augment_round(data, current.as_ref(), cfg, round, aug_seed)?;
            let next = hook
                .retrain(&out.d_aug, round)
                .map_err(|message| CycleError::Retrain { round, message })?;
            let (_, report) = evaluate(holdout, next.as_ref(), settings, eval_seed, cfg.workers)?;
            Ok::<_, CycleError>((out, next, report))
        })();
        match step {
            Ok((out, next, report)) => {
                let new_items = out.added();
                rounds.push(RoundResult {
                    metrics: RoundMetrics {
                        round,
                        dataset_size: out.d_aug.len(),
                        new_items,
                        model_id: next.model_id(),
                        metrics: report,
                    },
                    dataset: out.d_aug,
                    records: out.records,
                });
                current = next;
            }
            Err(e) => {
                return Ok(SelfImproveOutput {
                    rounds,
                    error: Some(e),
                })
            }
        }
    }
    Ok(SelfImproveOutput {
        rounds,
        error: None,
    })
}
