use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    check_temperature, A2LResponse, Backend, BackendError, GroundingSet, Health, L2AResponse,
    L2CResponse,
};
use crate::lang_parser::{intents_equivalent_with, Parser};
use crate::scene::{Action, Point2, Scene};
use crate::seed;
use crate::semantics_eval::{EvalConfig, PlacementRegion, RegionCache};
use crate::spatial_lang::{describe, perturb_relation, Intent, PlacementSpec, TemplateBank};

/// Corruption knobs that make the oracle behave like an imperfect model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleNoise {
    /// Probability of grasping a uniformly chosen wrong object.
    pub p_wrong_object: f64,
    /// Std. dev. of the Gaussian added to the place point at temperature 0;
    /// scaled by `1 + temperature` when sampling.
    pub place_sigma: f64,
    /// Probability that a description states a wrong cell or direction.
    pub p_wrong_relation: f64,
    /// Half-width of the L2C logit gap: `z1 − z0 = ±scale`.
    pub l2c_logit_scale: f64,
    /// Std. dev. of Gaussian noise on the L2C logit gap, keyed by the inputs.
    pub l2c_logit_noise: f64,
}

impl Default for OracleNoise {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl OracleNoise {
    pub const fn noiseless() -> Self {
        Self {
            p_wrong_object: 0.0,
            place_sigma: 0.0,
            p_wrong_relation: 0.0,
            l2c_logit_scale: 4.0,
            l2c_logit_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(format!("{name} must be in [0,1], got {p}"))
            }
        };
        prob("p_wrong_object", self.p_wrong_object)?;
        prob("p_wrong_relation", self.p_wrong_relation)?;
        if !(self.place_sigma >= 0.0 && self.place_sigma.is_finite()) {
            return Err(format!(
                "place_sigma must be >= 0, got {}",
                self.place_sigma
            ));
        }
        if !(self.l2c_logit_noise >= 0.0 && self.l2c_logit_noise.is_finite()) {
            return Err(format!(
                "l2c_logit_noise must be >= 0, got {}",
                self.l2c_logit_noise
            ));
        }
        if !(self.l2c_logit_scale > 0.0 && self.l2c_logit_scale.is_finite()) {
            return Err(format!(
                "l2c_logit_scale must be > 0, got {}",
                self.l2c_logit_scale
            ));
        }
        Ok(())
    }

    /// All corruption magnitudes multiplied by `factor` (clamped to be valid).
    pub fn scaled(&self, factor: f64) -> Self {
        let f = factor.max(0.0);
        Self {
            p_wrong_object: (self.p_wrong_object * f).min(1.0),
            place_sigma: self.place_sigma * f,
            p_wrong_relation: (self.p_wrong_relation * f).min(1.0),
            l2c_logit_scale: self.l2c_logit_scale,
            l2c_logit_noise: self.l2c_logit_noise * f,
        }
    }
}

/// Built-in backend that answers from scene semantics, optionally corrupted.
///
/// Each call is a pure function of its inputs and seed.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    noise: OracleNoise,
    eval: EvalConfig,
    bank: TemplateBank,
    cache: RegionCache,
    model_id: String,
}

impl OracleBackend {
    pub fn new(noise: OracleNoise) -> Result<Self, BackendError> {
        Self::with_config(noise, EvalConfig::default(), TemplateBank::default())
    }

    pub fn noiseless() -> Self {
        Self::new(OracleNoise::noiseless()).expect("noiseless profile is valid")
    }

    pub fn with_config(
        noise: OracleNoise,
        eval: EvalConfig,
        bank: TemplateBank,
    ) -> Result<Self, BackendError> {
        noise.validate().map_err(BackendError::InvalidRequest)?;
        eval.thresholds
            .validate()
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        Ok(Self {
            noise,
            eval,
            bank,
            cache: RegionCache::new(),
            model_id: "oracle".to_owned(),
        })
    }

    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    pub fn noise(&self) -> &OracleNoise {
        &self.noise
    }

    pub fn eval_config(&self) -> &EvalConfig {
        &self.eval
    }

    pub fn bank(&self) -> &TemplateBank {
        &self.bank
    }

    /// Same configuration and region cache, different noise.
    pub fn with_noise(&self, noise: OracleNoise) -> Result<Self, BackendError> {
        noise.validate().map_err(BackendError::InvalidRequest)?;
        Ok(Self {
            noise,
            ..self.clone()
        })
    }

    fn parser(&self, scene: &Scene) -> Parser {
        Parser::new(self.bank.clone(), scene.names())
    }

    /// Ground-truth consistency of two descriptions, with cached regions.
    pub fn consistent(&self, scene: &Scene, a: &Intent, b: &Intent) -> bool {
        intents_equivalent_with(a, b, scene, &self.eval.thresholds, |ra, rb| {
            self.cache.intersects(ra, rb)
        })
    }
}

/// A place point inside `region`. For relative placements the point is also
/// kept where the reference is the nearest object other than the moved one,
/// so that describing the result names the same reference.
fn place_in<R: Rng>(
    scene: &Scene,
    intent: &Intent,
    region: &PlacementRegion,
    temperature: f64,
    rng: &mut R,
) -> Point2 {
    let PlacementSpec::Relative { reference, .. } = &intent.placement else {
        return if temperature > 0.0 {
            region.sample(rng)
        } else {
            region.representative()
        };
    };
    let describable = |p: Point2| {
        region.contains(p)
            && scene
                .nearest_object(p, Some(&intent.pick_target))
                .is_ok_and(|(o, _)| o.name() == reference)
    };
    let PlacementRegion::Wedge {
        center,
        direction,
        radius,
    } = *region
    else {
        return region.representative();
    };
    if temperature > 0.0 {
        let (x0, x1, y0, y1) = region.bounds();
        for _ in 0..1000 {
            let p = Point2::clamped(rng.random_range(x0..=x1), rng.random_range(y0..=y1));
            if describable(p) {
                return p;
            }
        }
    }
    let (ux, uy) = direction.unit();
    for frac in [0.5, 0.35, 0.25, 0.15, 0.1, 0.05] {
        let t = radius * frac;
        let (x, y) = (center.x() + t * ux, center.y() + t * uy);
        if let Ok(p) = Point2::new(x, y) {
            if describable(p) {
                return p;
            }
        }
    }
    region.representative()
}

impl Backend for OracleBackend {
    fn model_id(&self) -> String {
        self.model_id.clone()
    }

    fn health(&self) -> Result<Health, BackendError> {
        Ok(Health {
            status: "ok".into(),
            model_id: self.model_id.clone(),
        })
    }

    fn l2a(
        &self,
        scene: &Scene,
        instruction: &str,
        temperature: f64,
        seed: u64,
    ) -> Result<L2AResponse, BackendError> {
        check_temperature(temperature)?;
        let grounding = GroundingSet::from_scene(scene);
        let intent = match self.parser(scene).parse(instruction) {
            Ok(i) => i,
            Err(e) => {
                log::warn!("oracle l2a: unparseable instruction {instruction:?}: {e}");
                return Ok(L2AResponse {
                    grounding,
                    action: Action::new(Point2::center(), Point2::center()),
                    warning: Some(format!("unparseable instruction: {e}")),
                });
            }
        };
        let mut rng = seed::rng(seed::derive_tagged(seed, "l2a"));

        let target = scene
            .object(&intent.pick_target)
            .expect("parser only binds scene objects");
        let wrong = rng.random::<f64>() < self.noise.p_wrong_object;
        let others: Vec<_> = scene
            .objects()
            .iter()
            .filter(|o| o.name() != target.name())
            .collect();
        let grasped = match others.choose(&mut rng) {
            Some(other) if wrong => *other,
            _ => target,
        };

        let place = match PlacementRegion::of(scene, &intent.placement, &self.eval.thresholds) {
            Ok(region) => place_in(scene, &intent, &region, temperature, &mut rng),
            Err(_) => Point2::center(),
        };
        let sigma = self.noise.place_sigma * (1.0 + temperature);
        let place = if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
            Point2::clamped(
                place.x() + normal.sample(&mut rng),
                place.y() + normal.sample(&mut rng),
            )
        } else {
            place
        };
        Ok(L2AResponse {
            grounding,
            action: Action::new(grasped.center(), place),
            warning: None,
        })
    }

    fn a2l(
        &self,
        scene: &Scene,
        action: &Action,
        temperature: f64,
        seed: u64,
    ) -> Result<A2LResponse, BackendError> {
        check_temperature(temperature)?;
        let desc = describe(
            scene,
            action,
            &self.eval.thresholds,
            self.eval.pick_radius,
            &self.bank,
            seed::derive_tagged(seed, "describe"),
        )?;
        let mut rng = seed::rng(seed::derive_tagged(seed, "a2l"));
        let text = if rng.random::<f64>() < self.noise.p_wrong_relation {
            let wrong = perturb_relation(&desc.intent, &mut rng);
            self.bank.render(&wrong, rng.random())
        } else {
            desc.text
        };
        Ok(A2LResponse {
            grounding: GroundingSet::from_scene(scene),
            text,
        })
    }

    fn l2c(
        &self,
        scene: &Scene,
        instruction: &str,
        candidate: &str,
    ) -> Result<L2CResponse, BackendError> {
        let parser = self.parser(scene);
        let consistent = match (parser.parse(instruction), parser.parse(candidate)) {
            (Ok(a), Ok(b)) => self.consistent(scene, &a, &b),
            _ => false,
        };
        let mut gap = if consistent {
            self.noise.l2c_logit_scale
        } else {
            -self.noise.l2c_logit_scale
        };
        if self.noise.l2c_logit_noise > 0.0 {
            let key = format!("{}\u{1f}{instruction}\u{1f}{candidate}", scene.scene_id());
            let mut rng = seed::rng(seed::digest_u64(key.as_bytes()));
            let normal = Normal::new(0.0, self.noise.l2c_logit_noise).expect("noise is finite");
            gap += normal.sample(&mut rng);
        }
        Ok(L2CResponse {
            grounding: GroundingSet::from_scene(scene),
            z0: -gap / 2.0,
            z1: gap / 2.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{confidence, BackendExt};
    use crate::scene::SceneObject;
    use crate::semantics_eval::{eval_a2l, eval_l2a, FailReason, Outcome};

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y).unwrap()
    }

    fn scene() -> Scene {
        Scene::new(
            "s",
            vec![
                SceneObject::new("sponge", p(0.2, 0.8)).unwrap(),
                SceneObject::new("mug", p(0.7, 0.3)).unwrap(),
                SceneObject::new("banana", p(0.8, 0.8)).unwrap(),
            ],
        )
        .unwrap()
    }

    const CENTER: &str = "pick the sponge and place it in the center of the workspace";

    #[test]
    fn noiseless_l2a_places_at_centroid() {
        let o = OracleBackend::noiseless();
        let r = o.l2a(&scene(), CENTER, 0.0, 1).unwrap();
        assert_eq!(r.action, Action::new(p(0.2, 0.8), p(0.5, 0.5)));
        assert_eq!(r.grounding.0.len(), 3);
        assert!(r.warning.is_none());
    }

    #[test]
    fn forced_wrong_object() {
        let noise = OracleNoise {
            p_wrong_object: 1.0,
            ..OracleNoise::noiseless()
        };
        let o = OracleBackend::new(noise).unwrap();
        let s = scene();
        for seed in 0..20 {
            let a = o.l2a(&s, CENTER, 0.0, seed).unwrap().action;
            assert_ne!(a.pick, p(0.2, 0.8));
            assert!(s.objects().iter().any(|obj| obj.center() == a.pick));
        }
    }

    #[test]
    fn sampled_places_stay_in_region() {
        let o = OracleBackend::noiseless();
        let s = scene();
        let intent = Intent::absolute("sponge", "center".parse().unwrap());
        let a = o.l2a(&s, CENTER, 1.0, 1).unwrap().action;
        let b = o.l2a(&s, CENTER, 1.0, 2).unwrap().action;
        assert_ne!(a.place, b.place);
        for act in [a, b] {
            assert_eq!(
                eval_l2a(&s, &intent, &act, o.eval_config()),
                Outcome::SUCCESS
            );
        }
        let actions = o.stochastic_l2a(&s, CENTER, 5, 1.0, 9).unwrap();
        assert_eq!(actions.len(), 5);
        assert_eq!(actions, o.stochastic_l2a(&s, CENTER, 5, 1.0, 9).unwrap());
        for act in &actions {
            assert_eq!(
                eval_l2a(&s, &intent, act, o.eval_config()),
                Outcome::SUCCESS
            );
        }
    }

    #[test]
    fn unparseable_instruction_is_flagged() {
        let o = OracleBackend::noiseless();
        let r = o.l2a(&scene(), "fold the towel", 0.0, 0).unwrap();
        assert!(r.warning.is_some());
        assert_eq!(r.action, Action::new(Point2::center(), Point2::center()));
    }

    #[test]
    fn a2l_coherence_and_corruption() {
        let s = scene();
        let clean = OracleBackend::noiseless();
        let action = Action::new(p(0.2, 0.8), p(0.45, 0.35));
        let cfg = *clean.eval_config();
        for seed in 0..20 {
            let text = clean.a2l(&s, &action, 0.0, seed).unwrap().text;
            assert_eq!(eval_a2l(&s, &action, &text, &cfg), Outcome::SUCCESS);
            assert_eq!(text, clean.a2l(&s, &action, 0.0, seed).unwrap().text);
        }
        let noise = OracleNoise {
            p_wrong_relation: 1.0,
            ..OracleNoise::noiseless()
        };
        let liar = OracleBackend::new(noise).unwrap();
        for seed in 0..20 {
            let text = liar.a2l(&s, &action, 0.0, seed).unwrap().text;
            assert_eq!(
                eval_a2l(&s, &action, &text, &cfg),
                Outcome::fail(FailReason::WrongPlacement),
                "{text}"
            );
        }
        let miss = Action::new(p(0.5, 0.5), p(0.1, 0.1));
        assert!(matches!(
            clean.a2l(&s, &miss, 0.0, 0),
            Err(BackendError::Language(_))
        ));
    }

    #[test]
    fn l2c_logits() {
        let s = scene();
        let noise = OracleNoise {
            l2c_logit_scale: 2.0,
            ..OracleNoise::noiseless()
        };
        let o = OracleBackend::new(noise).unwrap();
        let (r, c) = o.l2c_confidence(&s, CENTER, CENTER).unwrap();
        assert_eq!(r.z1 - r.z0, 2.0);
        assert!((c - 0.880_797_077_977_882_3).abs() < 1e-12);
        let other = "pick the mug and place it in the center of the workspace";
        let (r, c) = o.l2c_confidence(&s, CENTER, other).unwrap();
        assert!(r.z1 < r.z0 && c < 0.5);
        assert_eq!(c, confidence(r.z0, r.z1));
        assert!(o.l2c_confidence(&s, "", CENTER).is_err());
    }

    #[test]
    fn l2c_noise_is_keyed_by_inputs() {
        let s = scene();
        let noise = OracleNoise {
            l2c_logit_noise: 1.0,
            ..OracleNoise::noiseless()
        };
        let o = OracleBackend::new(noise).unwrap();
        let a = o.l2c(&s, CENTER, CENTER).unwrap();
        let b = o.l2c(&s, CENTER, CENTER).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.z1 - a.z0, 4.0);
    }

    #[test]
    fn invalid_noise_rejected() {
        assert!(OracleBackend::new(OracleNoise {
            p_wrong_object: 1.5,
            ..OracleNoise::noiseless()
        })
        .is_err());
        assert!(OracleBackend::new(OracleNoise {
            l2c_logit_scale: 0.0,
            ..OracleNoise::noiseless()
        })
        .is_err());
        assert!(OracleBackend::noiseless()
            .l2a(&scene(), CENTER, -1.0, 0)
            .is_err());
    }
}
