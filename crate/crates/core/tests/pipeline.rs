use std::io::Write;

use langcycle_core::backends::{Backend, BackendExt, OracleBackend, OracleNoise};
use langcycle_core::cycle_engine::{evaluate, EvalSettings};
use langcycle_core::datagen::{
    self, gen_dataset, gen_scene, type_distribution, Catalog, DatagenConfig, DatagenError,
    DatasetSpec,
};
use langcycle_core::semantics_eval::{eval_l2a, EvalConfig};
use langcycle_core::spatial_lang::TemplateBank;

fn dataset(n: usize, seed: u64) -> Vec<datagen::Demonstration> {
    gen_dataset(
        &Catalog::ycb(),
        &DatasetSpec::new(n, 2, 6),
        &DatagenConfig::default(),
        seed,
    )
    .unwrap()
}

#[test]
fn scenes_respect_min_separation() {
    let catalog = Catalog::ycb();
    for s in 0..1000u64 {
        let k = 1 + (s as usize % 10);
        let scene = gen_scene(&catalog, k, 0.08, s).unwrap();
        assert_eq!(scene.objects().len(), k);
        let objs = scene.objects();
        for i in 0..objs.len() {
            for j in i + 1..objs.len() {
                assert!(objs[i].center().distance(&objs[j].center()) >= 0.08);
            }
        }
    }
    assert_eq!(
        gen_scene(&catalog, 5, 0.08, 77).unwrap(),
        gen_scene(&catalog, 5, 0.08, 77).unwrap()
    );
    assert!(matches!(
        gen_scene(&catalog, 32, 0.5, 1),
        Err(DatagenError::PlacementInfeasible { .. })
    ));
    assert!(gen_scene(&catalog, 33, 0.01, 1).is_err());
    assert!(gen_scene(&catalog, 0, 0.01, 1).is_err());
}

#[test]
fn both_description_types_appear() {
    let d = dataset(10_000, 4);
    let (abs, rel) = type_distribution(&d);
    assert_eq!(abs + rel, 10_000);
    assert!(abs > 1000 && rel > 1000, "absolute {abs}, relative {rel}");
}

#[test]
fn persistence_round_trip_and_append() {
    let dir = tempfile::tempdir().unwrap();
    let a = dataset(1000, 5);
    let pa = dir.path().join("a.jsonl");
    datagen::save(&a, &pa).unwrap();
    let back = datagen::load(&pa).unwrap();
    assert_eq!(back, a);
    let first = std::fs::read(&pa).unwrap();
    datagen::save(&back, &pa).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), first);

    let b = dataset(10, 6);
    let pb = dir.path().join("b.jsonl");
    datagen::save(&b, &pb).unwrap();
    let mut joined = first.clone();
    joined.extend(std::fs::read(&pb).unwrap());
    let pj = dir.path().join("joined.jsonl");
    std::fs::write(&pj, joined).unwrap();
    let all = datagen::load(&pj).unwrap();
    assert_eq!(all.len(), 1010);
    assert_eq!(&all[1000..], &b[..]);
}

#[test]
fn malformed_lines_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dataset(5, 7);
    let path = dir.path().join("bad.jsonl");
    datagen::save(&d, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let cut = &lines[3][..lines[3].len() / 2];
    lines[3] = cut;
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "{}", lines.join("\n")).unwrap();
    match datagen::load(&path) {
        Err(DatagenError::SchemaViolation { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a schema violation, got {other:?}"),
    }
    std::fs::write(&path, "{\"id\":\"x\"}\n").unwrap();
    assert!(matches!(
        datagen::load(&path),
        Err(DatagenError::SchemaViolation { line: 1, .. })
    ));
    assert!(matches!(
        datagen::load(&dir.path().join("missing.jsonl")),
        Err(DatagenError::Io { .. })
    ));
}

#[test]
fn six_decimal_coordinates() {
    let d = dataset(50, 8);
    let text = datagen::to_jsonl(&d).unwrap();
    for v in text.split(|c: char| !(c.is_ascii_digit() || c == '.')) {
        if let Some((_, frac)) = v.split_once('.') {
            assert!(frac.len() <= 6, "{v}");
        }
    }
}

/// Standard error of a Bernoulli rate estimate.
fn se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn wrong_object_rate_matches_its_probability() {
    let q = 0.3;
    let oracle = OracleBackend::new(OracleNoise {
        p_wrong_object: q,
        ..OracleNoise::noiseless()
    })
    .unwrap();
    let d = dataset(2000, 9);
    let cfg = EvalConfig::default();
    let ok = d
        .iter()
        .enumerate()
        .filter(|(i, x)| {
            let a = oracle
                .l2a(&x.scene, &x.instruction, 0.0, *i as u64)
                .unwrap()
                .action;
            eval_l2a(&x.scene, &x.intent, &a, &cfg).success
        })
        .count();
    let rate = ok as f64 / d.len() as f64;
    assert!(
        (rate - (1.0 - q)).abs() < 3.0 * se(1.0 - q, d.len()),
        "rate {rate}"
    );

    let (_, report) = evaluate(&d, &oracle, &EvalSettings::default(), 3, None).unwrap();
    let l2a = report.l2a_pct / 100.0;
    assert!((l2a - 0.7).abs() < 3.0 * se(0.7, d.len()), "l2a {l2a}");
    assert_eq!(report.a2l_pct, 100.0);
}

#[test]
fn stochastic_samples() {
    let oracle = OracleBackend::noiseless();
    let cfg = EvalConfig::default();
    for x in dataset(100, 10) {
        let a = oracle
            .stochastic_l2a(&x.scene, &x.instruction, 5, 1.0, 11)
            .unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(
            a,
            oracle
                .stochastic_l2a(&x.scene, &x.instruction, 5, 1.0, 11)
                .unwrap()
        );
        assert!(a
            .iter()
            .all(|a| eval_l2a(&x.scene, &x.intent, a, &cfg).success));
        let texts = oracle
            .stochastic_a2l(&x.scene, &x.action, 3, 1.0, 2)
            .unwrap();
        assert_eq!(texts.len(), 3);
    }
    let x = &dataset(1, 1)[0];
    assert!(oracle
        .stochastic_l2a(&x.scene, &x.instruction, 0, 1.0, 1)
        .is_err());
    assert!(oracle
        .stochastic_l2a(&x.scene, &x.instruction, 2, 0.0, 1)
        .is_err());
}

#[test]
fn custom_assets_load_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let bank = TemplateBank::default();
    let path = dir.path().join("templates.txt");
    std::fs::write(&path, bank.to_asset()).unwrap();
    assert_eq!(TemplateBank::load(&path).unwrap(), bank);

    let catalog_path = dir.path().join("catalog.txt");
    std::fs::write(
        &catalog_path,
        "# shelf\nred cup | kitchen\nblue plate\nfork | kitchen\n",
    )
    .unwrap();
    let cat = Catalog::resolve(catalog_path.to_str().unwrap()).unwrap();
    assert_eq!(cat.names(), vec!["red cup", "blue plate", "fork"]);
    let d = gen_dataset(
        &cat,
        &DatasetSpec::new(20, 2, 3),
        &DatagenConfig::default(),
        1,
    )
    .unwrap();
    assert!(d.iter().all(|x| x.scene.objects().len() <= 3));
    std::fs::write(&catalog_path, "the cup\n").unwrap();
    assert!(Catalog::resolve(catalog_path.to_str().unwrap()).is_err());
}
