//! End-to-end acceptance checks, one PASS/FAIL line each.
//!
//! Every quantity is recomputed here from raw outputs rather than taken
//! from the library's own summaries.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use statrs::distribution::{Binomial, DiscreteCDF};

use langcycle_core::backends::{confidence, Backend, BackendExt, OracleBackend, OracleNoise};
use langcycle_core::cycle_engine::{
    augment, evaluate, self_improve, AugmentationRecord, CandidateStatus, CycleConfig,
    EvalSettings, NoiseShrinkHook, RetrainHook,
};
use langcycle_core::datagen::{
    self, gen_dataset, Catalog, DatagenConfig, DatasetSpec, Demonstration, Provenance,
};
use langcycle_core::lang_parser::Parser;
use langcycle_core::scene::{Direction8, GridCell, Point2, Scene, SceneObject};
use langcycle_core::semantics_eval::{eval_l2a, EvalConfig};
use langcycle_core::spatial_lang::{Intent, PlacementSpec, TemplateBank, TemplateChoice};

const SOFTMAX_TOL: f64 = 1e-12;
const D_ABS: f64 = 0.15;
const D_REL: f64 = 0.3;
const BAND_RATIO: (f64, f64) = (0.4, 0.6);
const LIFT_ALPHA: f64 = 0.01;
const LIFT_SOURCES: usize = 1000;
const SELF_IMPROVE_SEEDS: u64 = 20;

type Check = Result<String, String>;

fn noisy() -> OracleBackend {
    OracleBackend::new(OracleNoise {
        p_wrong_object: 0.3,
        place_sigma: 0.05,
        ..OracleNoise::noiseless()
    })
    .unwrap()
}

fn data(n: usize, objects: (usize, usize), seed: u64) -> Vec<Demonstration> {
    gen_dataset(
        &Catalog::ycb(),
        &DatasetSpec::new(n, objects.0, objects.1),
        &DatagenConfig::default(),
        seed,
    )
    .unwrap()
}

fn softmax_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let z0: f64 = rng.random_range(-50.0..=50.0);
        let z1: f64 = rng.random_range(-50.0..=50.0);
        let softmax = z1.exp() / (z0.exp() + z1.exp());
        worst = worst.max((confidence(z0, z1) - softmax).abs());
    }
    let detail = format!("10000 pairs, max |diff| = {worst:.3e} (tol {SOFTMAX_TOL:e})");
    if worst <= SOFTMAX_TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn all_choices(bank: &TemplateBank, relative: bool) -> Vec<TemplateChoice> {
    let frames = if relative {
        bank.relative_frames.len()
    } else {
        bank.absolute_frames.len()
    };
    let mut out = Vec::new();
    for pick_verb in 0..bank.pick_verbs.len() {
        for place_verb in 0..bank.place_verbs.len() {
            for frame in 0..frames {
                out.push(TemplateChoice {
                    pick_verb,
                    place_verb,
                    frame,
                });
            }
        }
    }
    out
}

fn grammar_round_trip() -> Check {
    let bank = TemplateBank::default();
    let names = Catalog::ycb().names();
    let full = Parser::new(bank.clone(), names.clone());
    let (mut checked, mut failures) = (0usize, Vec::new());
    let mut check = |parser: &Parser, intent: &Intent, choice: TemplateChoice| {
        let text = bank.render_with(intent, choice);
        checked += 1;
        match parser.parse(&text) {
            Ok(got) if &got == intent => {}
            other => failures.push(format!("{text:?} -> {other:?}")),
        }
    };
    for name in &names {
        for cell in GridCell::ALL {
            let intent = Intent::absolute(name.clone(), cell);
            for choice in all_choices(&bank, false) {
                check(&full, &intent, choice);
            }
        }
    }
    let positions = [(0.2, 0.2), (0.5, 0.5), (0.8, 0.8)];
    for (i, name) in names.iter().enumerate() {
        for (j, reference) in names.iter().enumerate() {
            if i == j {
                continue;
            }
            let third = names
                .iter()
                .enumerate()
                .find(|(k, _)| *k != i && *k != j)
                .unwrap()
                .1;
            let objects = [name, reference, third]
                .iter()
                .zip(positions)
                .map(|(n, (x, y))| {
                    SceneObject::new(n.as_str(), Point2::new(x, y).unwrap()).unwrap()
                })
                .collect();
            let scene = Scene::new(format!("rt-{i}-{j}"), objects).unwrap();
            let local = Parser::new(bank.clone(), scene.names());
            for direction in Direction8::ALL {
                let intent = Intent::relative(name.clone(), direction, reference.clone());
                for choice in all_choices(&bank, true) {
                    check(&local, &intent, choice);
                    check(&full, &intent, choice);
                }
            }
        }
    }
    let detail = format!("{checked} renderings, {} failures", failures.len());
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; first: {}", failures[0]))
    }
}

/// Distance from the place point to the nearest object other than the
/// picked one.
fn reference_distance(d: &Demonstration) -> Option<f64> {
    let place = d.action.place;
    d.scene
        .objects()
        .iter()
        .filter(|o| o.name() != d.intent.pick_target)
        .map(|o| {
            ((o.center().x() - place.x()).powi(2) + (o.center().y() - place.y()).powi(2)).sqrt()
        })
        .min_by(f64::total_cmp)
}

fn threshold_law() -> Check {
    let d = data(10_000, (2, 6), 3);
    let (mut rel_bad, mut abs_bad, mut band_rel, mut band_total) = (0, 0, 0usize, 0usize);
    for x in &d {
        let dist = reference_distance(x).expect("scenes have at least two objects");
        let relative = matches!(x.intent.placement, PlacementSpec::Relative { .. });
        if relative && dist >= D_REL {
            rel_bad += 1;
        }
        if !relative && dist <= D_ABS {
            abs_bad += 1;
        }
        if dist > D_ABS && dist < D_REL {
            band_total += 1;
            band_rel += relative as usize;
        }
    }
    let ratio = band_rel as f64 / band_total as f64;
    let detail = format!(
        "10000 descriptions: relative with d >= {D_REL}: {rel_bad}, absolute with d <= {D_ABS}: {abs_bad}, \
         in-band relative ratio {ratio:.4} over {band_total} (allowed [{}, {}])",
        BAND_RATIO.0, BAND_RATIO.1
    );
    if rel_bad == 0 && abs_bad == 0 && (BAND_RATIO.0..=BAND_RATIO.1).contains(&ratio) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_coherence() -> Check {
    let d = data(2000, (3, 6), 4);
    let (records, report) = evaluate(
        &d,
        &OracleBackend::noiseless(),
        &EvalSettings::default(),
        5,
        None,
    )
    .map_err(|e| e.to_string())?;
    let count = |f: fn(&langcycle_core::semantics_eval::EvalRecord) -> bool| {
        records.iter().filter(|r| f(r)).count()
    };
    let l2a = count(|r| r.l2a.is_some_and(|o| o.success));
    let a2l = count(|r| r.a2l.is_some_and(|o| o.success));
    let l2c = count(|r| r.l2c == Some(true));
    let detail = format!(
        "2000 items: L2A {l2a}, A2L {a2l}, L2C {l2c} correct (report {:.1}/{:.1}/{:.1})",
        report.l2a_pct, report.a2l_pct, report.l2c_pct
    );
    if l2a == 2000 && a2l == 2000 && l2c == 2000 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Re-derives the gate and vote decisions from the recorded numbers.
fn replay(r: &AugmentationRecord, cfg: &CycleConfig) -> Result<(), String> {
    if let Some(e) = &r.error {
        return Err(format!("{}: backend error {e}", r.source_id));
    }
    let c = r.deterministic_c.ok_or("no deterministic confidence")?;
    let candidates: Vec<_> = r
        .accepted_actions
        .iter()
        .chain(&r.rejected_actions)
        .collect();
    if c > cfg.tau {
        if r.gated || !candidates.is_empty() || r.candidates_tried != 0 {
            return Err(format!(
                "{}: c={c} above tau but candidates sampled",
                r.source_id
            ));
        }
        return Ok(());
    }
    if !r.gated || candidates.len() != cfg.n || r.candidates_tried != cfg.n {
        return Err(format!(
            "{}: c={c} at or below tau but {} candidates",
            r.source_id,
            candidates.len()
        ));
    }
    for a in &r.accepted_actions {
        let votes = a.confidences.iter().filter(|&&c| c >= cfg.tau).count();
        if votes != a.votes
            || (votes as f64 / cfg.n as f64) < cfg.nu
            || a.status == CandidateStatus::Rejected
        {
            return Err(format!(
                "{}: accepted with {votes}/{} votes",
                r.source_id, cfg.n
            ));
        }
    }
    for a in &r.rejected_actions {
        let votes = a.confidences.iter().filter(|&&c| c >= cfg.tau).count();
        if votes != a.votes
            || (votes as f64 / cfg.n as f64) >= cfg.nu
            || a.status != CandidateStatus::Rejected
        {
            return Err(format!(
                "{}: rejected with {votes}/{} votes",
                r.source_id, cfg.n
            ));
        }
    }
    Ok(())
}

fn gate_vote_soundness() -> Check {
    let d = data(500, (3, 6), 6);
    let cfg = CycleConfig::default();
    let out = augment(&d, &noisy(), &cfg, 7).map_err(|e| e.to_string())?;
    let mut text = Vec::new();
    for r in &out.records {
        text.push(serde_json::to_string(r).unwrap());
    }
    let records: Vec<AugmentationRecord> = text
        .iter()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let gated = records.iter().filter(|r| r.gated).count();
    let accepted: usize = records.iter().map(|r| r.accepted_actions.len()).sum();
    let rejected: usize = records.iter().map(|r| r.rejected_actions.len()).sum();
    let added: Vec<_> = records
        .iter()
        .flat_map(|r| {
            r.accepted_actions
                .iter()
                .filter(|a| a.status == CandidateStatus::Added)
        })
        .collect();
    let errors: Vec<String> = records
        .iter()
        .filter_map(|r| replay(r, &cfg).err())
        .collect();
    let new_items = &out.d_aug[d.len()..];
    let prefix_ok = out.d_aug[..d.len()] == d[..];
    let appended_ok = new_items.len() == added.len()
        && new_items
            .iter()
            .zip(&added)
            .all(|(x, a)| x.action == a.action.quantized());
    let detail = format!(
        "{} records, {gated} gated, {accepted} accepted / {rejected} rejected candidates, {} new items, \
         {} replay failures",
        records.len(),
        new_items.len(),
        errors.len()
    );
    if errors.is_empty() && gated > 0 && accepted > 0 && rejected > 0 && prefix_ok && appended_ok {
        Ok(detail)
    } else {
        Err(format!(
            "{detail}; prefix {prefix_ok}, appended {appended_ok}; {:?}",
            errors.first()
        ))
    }
}

fn filter_lift() -> Check {
    let oracle = noisy();
    let d = data(LIFT_SOURCES, (3, 6), 8);
    let out = augment(&d, &oracle, &CycleConfig::default(), 9).map_err(|e| e.to_string())?;
    let cfg = EvalConfig::default();
    let (mut pool_n, mut pool_ok, mut acc_n, mut acc_ok) = (0u64, 0u64, 0u64, 0u64);
    for (x, r) in d.iter().zip(&out.records) {
        for a in &r.accepted_actions {
            let ok = eval_l2a(&x.scene, &x.intent, &a.action, &cfg).success as u64;
            acc_n += 1;
            acc_ok += ok;
            pool_n += 1;
            pool_ok += ok;
        }
        for a in &r.rejected_actions {
            pool_n += 1;
            pool_ok += eval_l2a(&x.scene, &x.intent, &a.action, &cfg).success as u64;
        }
    }
    if acc_n == 0 || pool_n == 0 {
        return Err(format!("no candidates (pool {pool_n}, accepted {acc_n})"));
    }
    let p0 = pool_ok as f64 / pool_n as f64;
    let p1 = acc_ok as f64 / acc_n as f64;
    let binom = Binomial::new(p0, acc_n).unwrap();
    let p_value = if acc_ok == 0 {
        1.0
    } else {
        binom.sf(acc_ok - 1)
    };
    let detail = format!(
        "{LIFT_SOURCES} sources: pool {pool_ok}/{pool_n} = {p0:.4}, accepted {acc_ok}/{acc_n} = {p1:.4}, \
         one-sided binomial p = {p_value:.3e} (alpha {LIFT_ALPHA})"
    );
    if p1 > p0 && p_value < LIFT_ALPHA {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn self_improvement() -> Check {
    let cfg = CycleConfig {
        iterations: 3,
        per_round_quota: Some(100),
        ..CycleConfig::default()
    };
    let eval = EvalConfig::default();
    let mut sums = [0.0f64; 4];
    let mut bad_sizes = Vec::new();
    for s in 0..SELF_IMPROVE_SEEDS {
        let d0 = data(100, (3, 6), 1000 + s);
        let holdout = data(200, (3, 6), 2000 + s);
        let base = noisy();
        let mut hook = NoiseShrinkHook::new(base.clone());
        let out = self_improve(
            &d0,
            &holdout,
            Arc::new(base),
            &mut hook,
            &cfg,
            &EvalSettings::default(),
            s,
        )
        .map_err(|e| e.to_string())?;
        if let Some(e) = out.error {
            return Err(format!("seed {s}: {e}"));
        }
        let sizes: Vec<usize> = out.rounds.iter().map(|r| r.dataset.len()).collect();
        if sizes != [100, 200, 300, 400] {
            bad_sizes.push((s, sizes));
        }
        let mut retrain = NoiseShrinkHook::new(noisy());
        for (i, r) in out.rounds.iter().enumerate() {
            let model = if i == 0 {
                Arc::new(noisy()) as Arc<dyn Backend>
            } else {
                retrain.retrain(&r.dataset, i).unwrap()
            };
            let ok = holdout
                .iter()
                .enumerate()
                .filter(|(k, x)| {
                    let a = model
                        .l2a(&x.scene, &x.instruction, 0.0, 7 * *k as u64 + s)
                        .unwrap()
                        .action;
                    eval_l2a(&x.scene, &x.intent, &a, &eval).success
                })
                .count();
            sums[i] += 100.0 * ok as f64 / holdout.len() as f64;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / SELF_IMPROVE_SEEDS as f64).collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let detail = format!(
        "{SELF_IMPROVE_SEEDS} seeds, sizes 100/200/300/400 in {} seeds, mean L2A% by round {:?}",
        SELF_IMPROVE_SEEDS as usize - bad_sizes.len(),
        means.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>()
    );
    if bad_sizes.is_empty() && monotone {
        Ok(detail)
    } else {
        Err(format!("{detail}; size mismatches {bad_sizes:?}"))
    }
}

fn sha256_file(path: &Path) -> Result<String, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn run_cycle_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_langcycle");
    let dataset = dir.path().join("d0.jsonl");
    let status = Command::new(bin)
        .args(["gen-dataset", "--count", "100", "--seed", "11", "--out"])
        .arg(&dataset)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    let mut hashes = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out_dir = dir.path().join(run);
        let out = Command::new(bin)
            .args(["--workers", workers, "run-cycle", "--dataset"])
            .arg(&dataset)
            .args([
                "--noise-profile",
                "noisy",
                "--N",
                "5",
                "--tau",
                "0.5",
                "--nu",
                "0.5",
                "--iterations",
                "2",
                "--quota",
                "100",
                "--seed",
                "12",
                "--out-dir",
            ])
            .arg(&out_dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "run {run}: {}",
                String::from_utf8_lossy(&out.stderr)
            ));
        }
        hashes.push(sha256_file(&out_dir.join("d_aug.jsonl"))?);
    }
    let lines =
        std::fs::read_to_string(dir.path().join("a/d_aug.jsonl")).map_err(|e| e.to_string())?;
    let detail = format!(
        "d_aug sha256 {} / {} (workers 1), {} (workers 4); {} lines",
        &hashes[0][..16],
        &hashes[1][..16],
        &hashes[2][..16],
        lines.lines().count()
    );
    if hashes[0] == hashes[1] && hashes[1] == hashes[2] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn persistence() -> Check {
    let oracle = noisy();
    let mut d = data(10_000, (2, 6), 13);
    for (i, x) in d.iter_mut().enumerate().filter(|(i, _)| i % 2 == 1) {
        let a = oracle
            .stochastic_l2a(&x.scene, &x.instruction, 1, 1.0, i as u64)
            .map_err(|e| e.to_string())?;
        x.action = a[0].quantized();
        x.provenance = Provenance::Cycle;
        x.id = format!("{}~r1p0c0", x.id);
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = dir.path().join("first.jsonl");
    let second = dir.path().join("second.jsonl");
    datagen::save(&d, &first).map_err(|e| e.to_string())?;
    let loaded = datagen::load(&first).map_err(|e| e.to_string())?;
    datagen::save(&loaded, &second).map_err(|e| e.to_string())?;
    let (a, b) = (
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap(),
    );
    let cycle = loaded
        .iter()
        .filter(|x| x.provenance == Provenance::Cycle)
        .count();
    let detail = format!(
        "{} records ({cycle} cycle), {} bytes, identical: {}, values equal: {}",
        loaded.len(),
        a.len(),
        a == b,
        loaded == d
    );
    if a == b && loaded == d && loaded.len() == 10_000 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

type Named = (&'static str, fn() -> Check);

fn main() {
    let checks: [Named; 9] = [
        (
            "sigmoid of logit gap equals two-class softmax",
            softmax_identity,
        ),
        ("grammar round-trip", grammar_round_trip),
        ("description threshold law", threshold_law),
        ("noiseless oracle coherence", oracle_coherence),
        ("gate and vote soundness", gate_vote_soundness),
        ("filter lift", filter_lift),
        ("self-improvement shape", self_improvement),
        ("run-cycle determinism", run_cycle_determinism),
        ("dataset persistence", persistence),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
