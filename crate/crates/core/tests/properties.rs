use proptest::prelude::*;

use langcycle_core::backends::{confidence, sigmoid};
use langcycle_core::datagen::{gen_demo, gen_scene, Catalog, DatagenConfig};
use langcycle_core::lang_parser::{intents_equivalent, Parser};
use langcycle_core::scene::{
    direction_of, grid_cell_of, Action, Direction8, GridCell, Point2, Scene,
};
use langcycle_core::semantics_eval::{eval_a2l, eval_l2a, EvalConfig, PlacementRegion};
use langcycle_core::spatial_lang::{
    describe, Intent, PlacementSpec, TemplateBank, TemplateChoice, ThresholdConfig,
};

fn point() -> impl Strategy<Value = Point2> {
    (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(x, y)| Point2::new(x, y).unwrap())
}

fn scene() -> impl Strategy<Value = Scene> {
    (1usize..=8, any::<u64>()).prop_map(|(k, s)| gen_scene(&Catalog::ycb(), k, 0.08, s).unwrap())
}

fn intent_in(scene: &Scene, a: usize, b: usize, cell: usize, dir: usize, relative: bool) -> Intent {
    let names = scene.names();
    let target = names[a % names.len()].clone();
    let others: Vec<&String> = names.iter().filter(|n| **n != target).collect();
    if relative && !others.is_empty() {
        Intent::relative(
            target,
            Direction8::ALL[dir % 8],
            others[b % others.len()].clone(),
        )
    } else {
        Intent::absolute(target, GridCell::ALL[cell % 9])
    }
}

fn arb_intent_pair() -> impl Strategy<Value = (Scene, Intent, Intent)> {
    (
        scene(),
        any::<(usize, usize, usize, usize, bool)>(),
        any::<(usize, usize, usize, usize, bool)>(),
    )
        .prop_map(|(s, x, y)| {
            let a = intent_in(&s, x.0, x.1, x.2, x.3, x.4);
            let b = intent_in(&s, y.0, y.1, y.2, y.3, y.4);
            (s, a, b)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parser_never_panics_on_text(text in ".{0,120}") {
        let _ = Parser::with_catalog(&Catalog::ycb().names()).parse(&text);
    }

    #[test]
    fn parser_never_panics_on_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let text = String::from_utf8_lossy(&bytes);
        let _ = Parser::with_catalog(&Catalog::ycb().names()).parse(&text);
    }

    #[test]
    fn parser_errors_point_inside_the_input(prefix in "(pick|grasp|take) (the )?[a-z ]{0,30}") {
        if let Err(e) = Parser::with_catalog(&Catalog::ycb().names()).parse(&prefix) {
            prop_assert!(e.span.start <= e.span.end);
            prop_assert!(e.span.end <= prefix.chars().count());
        }
    }

    #[test]
    fn directions_are_opposite(r in point(), t in point()) {
        prop_assume!(r.distance(&t) > 1e-6);
        let d = direction_of(r, t).unwrap();
        let back = direction_of(t, r).unwrap();
        // Exact sector boundaries flip to the counterclockwise side in both directions.
        let dx = t.x() - r.x();
        let dy = r.y() - t.y();
        let deg = dy.atan2(dx).to_degrees().rem_euclid(360.0);
        let on_boundary = ((deg - 22.5) / 45.0).fract().abs() < 1e-9;
        prop_assume!(!on_boundary);
        prop_assert_eq!(back, d.opposite());
    }

    #[test]
    fn direction_is_the_closest_axis(r in point(), t in point()) {
        prop_assume!(r.distance(&t) > 1e-6);
        let (dx, dy) = (t.x() - r.x(), t.y() - r.y());
        let norm = dx.hypot(dy);
        let dots: Vec<f64> = Direction8::ALL
            .iter()
            .map(|d| {
                let (ux, uy) = d.unit();
                (ux * dx + uy * dy) / norm
            })
            .collect();
        let best = dots.iter().cloned().fold(f64::MIN, f64::max);
        let got = direction_of(r, t).unwrap();
        let idx = Direction8::ALL.iter().position(|d| *d == got).unwrap();
        prop_assert!(best - dots[idx] < 1e-9);
    }

    #[test]
    fn grid_cells_partition_the_square(p in point()) {
        let third = |v: f64| if v <= 1.0 / 3.0 { 0 } else if v <= 2.0 / 3.0 { 1 } else { 2 };
        let cell = grid_cell_of(p);
        prop_assert_eq!(cell, GridCell::ALL[3 * third(p.y()) + third(p.x())]);
        let containing = GridCell::ALL
            .iter()
            .filter(|c| PlacementRegion::Cell(**c).contains(p))
            .count();
        prop_assert_eq!(containing, 1);
    }

    #[test]
    fn nearest_is_minimal(s in scene(), p in point(), skip in any::<usize>()) {
        let names = s.names();
        let exclude = (names.len() > 1).then(|| names[skip % names.len()].clone());
        let (obj, d) = s.nearest_object(p, exclude.as_deref()).unwrap();
        prop_assert!((obj.center().distance(&p) - d).abs() < 1e-15);
        for o in s.objects() {
            if Some(o.name()) != exclude.as_deref() {
                prop_assert!(d <= o.center().distance(&p));
            }
        }
    }

    #[test]
    fn nearest_ignores_order_except_ties(s in scene(), p in point()) {
        let mut objects = s.objects().to_vec();
        objects.reverse();
        let rev = Scene::new("rev", objects).unwrap();
        let (a, da) = s.nearest_object(p, None).unwrap();
        let (b, db) = rev.nearest_object(p, None).unwrap();
        prop_assert_eq!(da, db);
        if a.name() != b.name() {
            prop_assert_eq!(a.center().distance(&p), b.center().distance(&p));
        }
    }

    #[test]
    fn softmax_identity(z0 in -50.0..50.0f64, z1 in -50.0..50.0f64) {
        let softmax = z1.exp() / (z0.exp() + z1.exp());
        prop_assert!((confidence(z0, z1) - softmax).abs() <= 1e-12);
    }

    #[test]
    fn sigmoid_is_increasing(a in -60.0..60.0f64, b in -60.0..60.0f64) {
        prop_assume!(a < b);
        prop_assert!(sigmoid(a) <= sigmoid(b));
        if b - a > 1e-9 && b < 30.0 {
            prop_assert!(sigmoid(a) < sigmoid(b));
        }
    }

    #[test]
    fn equivalence_is_reflexive_and_symmetric((s, a, b) in arb_intent_pair()) {
        let t = ThresholdConfig::default();
        prop_assert!(intents_equivalent(&a, &a, &s, &t));
        prop_assert_eq!(intents_equivalent(&a, &b, &s, &t), intents_equivalent(&b, &a, &s, &t));
        if a.pick_target != b.pick_target {
            prop_assert!(!intents_equivalent(&a, &b, &s, &t));
        }
    }

    #[test]
    fn render_then_parse_is_identity(
        (s, a, _) in arb_intent_pair(),
        choice in (0usize..4, 0usize..3, 0usize..2),
    ) {
        let bank = TemplateBank::default();
        let text = bank.render_with(&a, TemplateChoice { pick_verb: choice.0, place_verb: choice.1, frame: choice.2 });
        let parsed = Parser::new(bank, s.names()).parse(&text).unwrap();
        prop_assert_eq!(parsed, a);
    }

    #[test]
    fn generated_demos_are_coherent(s in scene(), seed in any::<u64>()) {
        let cfg = DatagenConfig::default();
        let d = gen_demo(&s, &cfg, seed).unwrap();
        prop_assert!(eval_l2a(&d.scene, &d.intent, &d.action, &cfg.eval).success);
        prop_assert!(eval_a2l(&d.scene, &d.action, &d.instruction, &cfg.eval).success);
    }

    #[test]
    fn described_actions_evaluate_as_success(s in scene(), place in point(), who in any::<usize>(), seed in any::<u64>()) {
        let cfg = EvalConfig::default();
        let names = s.names();
        let target = s.object(&names[who % names.len()]).unwrap();
        let action = Action::new(target.center(), place);
        let bank = TemplateBank::default();
        if let Ok(d) = describe(&s, &action, &cfg.thresholds, cfg.pick_radius, &bank, seed) {
            prop_assert!(eval_l2a(&s, &d.intent, &action, &cfg).success, "{}", d.text);
            prop_assert!(eval_a2l(&s, &action, &d.text, &cfg).success, "{}", d.text);
            if let PlacementSpec::Relative { reference, .. } = &d.intent.placement {
                let (nearest, dist) = s.nearest_object(place, Some(target.name())).unwrap();
                prop_assert_eq!(nearest.name(), reference.as_str());
                prop_assert!(dist < cfg.thresholds.d_rel);
            }
        }
    }
}
