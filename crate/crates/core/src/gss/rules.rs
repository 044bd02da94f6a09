use crate::error::{Error, Result};
use crate::gss::shape::SMALL_AREA_FRACTION;
use crate::gss::types::{BoundingBox, ShapeCategory, Skill, SkillDecision};

/// Clearance margin around the target, in pixels.
pub const OCCUPANCY_MARGIN: f64 = 10.0;

/// What surrounds the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SceneSummary {
    /// No other object within the margin to the left or right of the box.
    pub side_clear: bool,
    /// No other object overlapping the box (nothing stacked on or under it).
    pub top_clear: bool,
    /// Box area below 2% of the image.
    pub small: bool,
}

impl SceneSummary {
    pub fn from_boxes(
        target: &BoundingBox,
        others: &[BoundingBox],
        width: usize,
        height: usize,
    ) -> Self {
        let m = OCCUPANCY_MARGIN;
        let left = BoundingBox {
            x1: target.x1 - m,
            y1: target.y1,
            x2: target.x1,
            y2: target.y2,
        };
        let right = BoundingBox {
            x1: target.x2,
            y1: target.y1,
            x2: target.x2 + m,
            y2: target.y2,
        };
        Self {
            side_clear: !others
                .iter()
                .any(|o| o.intersects(&left) || o.intersects(&right)),
            top_clear: !others.iter().any(|o| o.intersects(target)),
            small: target.area() < SMALL_AREA_FRACTION * (width * height) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub priority: u32,
    pub name: &'static str,
    pub shape: Option<ShapeCategory>,
    pub side_clear: Option<bool>,
    pub top_clear: Option<bool>,
    pub small: Option<bool>,
    pub skill: Skill,
    pub confidence: f64,
}

impl Rule {
    pub fn matches(&self, shape: ShapeCategory, scene: &SceneSummary) -> bool {
        self.shape.is_none_or(|s| s == shape)
            && self.side_clear.is_none_or(|v| v == scene.side_clear)
            && self.top_clear.is_none_or(|v| v == scene.top_clear)
            && self.small.is_none_or(|v| v == scene.small)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

const fn rule(
    priority: u32,
    name: &'static str,
    shape: Option<ShapeCategory>,
    side_clear: Option<bool>,
    top_clear: Option<bool>,
    small: Option<bool>,
    skill: Skill,
) -> Rule {
    Rule {
        priority,
        name,
        shape,
        side_clear,
        top_clear,
        small,
        skill,
        confidence: 0.9,
    }
}

impl RuleSet {
    /// Sorts by priority and rejects empty sets and duplicate priorities.
    pub fn new(mut rules: Vec<Rule>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::invalid("rule set is empty"));
        }
        rules.sort_by_key(|r| r.priority);
        if let Some(w) = rules.windows(2).find(|w| w[0].priority == w[1].priority) {
            return Err(Error::invalid(format!(
                "duplicate rule priority {}",
                w[0].priority
            )));
        }
        if let Some(r) = rules.iter().find(|r| !(0.0..=1.0).contains(&r.confidence)) {
            return Err(Error::invalid(format!(
                "rule {} has confidence outside [0, 1]",
                r.name
            )));
        }
        Ok(Self { rules })
    }

    /// The shipped 20-rule catalog.
    pub fn shipped() -> Self {
        use ShapeCategory::*;
        use Skill::*;
        let (t, f) = (Some(true), Some(false));
        let mut rules = vec![
            rule(
                1,
                "cylindrical, side clear, top clear",
                Some(Cylindrical),
                t,
                t,
                f,
                SideGrasp,
            ),
            rule(
                2,
                "cylindrical, side clear, top blocked",
                Some(Cylindrical),
                t,
                f,
                f,
                SideGrasp,
            ),
            rule(
                3,
                "small cylindrical, side clear",
                Some(Cylindrical),
                t,
                None,
                t,
                SideGrasp,
            ),
            rule(
                4,
                "cylindrical, side blocked, top clear",
                Some(Cylindrical),
                f,
                t,
                None,
                LiftUp,
            ),
            rule(
                5,
                "cylindrical, side and top blocked",
                Some(Cylindrical),
                f,
                f,
                None,
                LiftUp,
            ),
            rule(6, "squashed, top clear", Some(Squashed), None, t, f, LiftUp),
            rule(
                7,
                "squashed, top blocked",
                Some(Squashed),
                None,
                f,
                f,
                LiftUp,
            ),
            rule(
                8,
                "small squashed, side clear",
                Some(Squashed),
                t,
                None,
                t,
                LiftUp,
            ),
            rule(
                9,
                "small squashed, side blocked",
                Some(Squashed),
                f,
                None,
                t,
                LiftUp,
            ),
            rule(
                10,
                "thin, top and side clear",
                Some(ThinSmall),
                t,
                t,
                None,
                TopPinch,
            ),
            rule(
                11,
                "thin, top clear, side blocked",
                Some(ThinSmall),
                f,
                t,
                None,
                TopPinch,
            ),
            rule(
                12,
                "small thin, top blocked",
                Some(ThinSmall),
                None,
                f,
                t,
                TopPinch,
            ),
            rule(
                13,
                "thin, top blocked",
                Some(ThinSmall),
                None,
                f,
                f,
                TopPinch,
            ),
            rule(
                14,
                "small other, top clear",
                Some(Other),
                None,
                t,
                t,
                TopPinch,
            ),
            rule(
                15,
                "small other, top blocked, side clear",
                Some(Other),
                t,
                f,
                t,
                LiftUp,
            ),
            rule(
                16,
                "small other, top and side blocked",
                Some(Other),
                f,
                f,
                t,
                LiftUp,
            ),
            rule(
                17,
                "other, side and top clear",
                Some(Other),
                t,
                t,
                f,
                LiftUp,
            ),
            rule(
                18,
                "other, side clear, top blocked",
                Some(Other),
                t,
                f,
                f,
                LiftUp,
            ),
            rule(19, "other, side blocked", Some(Other), f, None, f, LiftUp),
            rule(20, "fallback", None, None, None, None, LiftUp),
        ];
        rules[19].confidence = 0.5;
        Self::new(rules).expect("shipped catalog is well formed")
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// First matching rule by priority.
    pub fn first_match(&self, shape: ShapeCategory, scene: &SceneSummary) -> Option<&Rule> {
        self.rules.iter().find(|r| r.matches(shape, scene))
    }
}

/// Applies the first matching rule.
pub fn select_skill(
    bbox: &BoundingBox,
    shape: ShapeCategory,
    scene: &SceneSummary,
    rules: &RuleSet,
) -> Result<SkillDecision> {
    let r = rules.first_match(shape, scene).ok_or_else(|| {
        Error::NoApplicableSkill(format!(
            "shape {shape}, side clear {}, top clear {}, small {}",
            scene.side_clear, scene.top_clear, scene.small
        ))
    })?;
    Ok(SkillDecision {
        skill: r.skill,
        bbox: *bbox,
        confidence: r.confidence,
        rationale: format!(
            "rule {} ({}) -> {}",
            r.priority,
            r.name,
            r.skill.display_name()
        ),
    })
}

/// Overall accuracy as the product of skill and execution accuracy.
pub fn compute_accuracy(acc_s: f64, acc_t: f64) -> Result<f64> {
    for (name, v) in [("acc_s", acc_s), ("acc_t", acc_t)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} = {v} is outside [0, 1]")));
        }
    }
    Ok(acc_s * acc_t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(side_clear: bool, top_clear: bool, small: bool) -> SceneSummary {
        SceneSummary {
            side_clear,
            top_clear,
            small,
        }
    }

    #[test]
    fn catalog_has_twenty_rules() {
        assert_eq!(RuleSet::shipped().len(), 20);
    }

    #[test]
    fn duplicate_priorities_rejected() {
        let r = RuleSet::shipped().rules()[0].clone();
        assert!(RuleSet::new(vec![r.clone(), r]).is_err());
        assert!(RuleSet::new(vec![]).is_err());
    }

    #[test]
    fn no_match_is_an_error() {
        let rules = RuleSet::new(vec![RuleSet::shipped().rules()[0].clone()]).unwrap();
        let b = BoundingBox {
            x1: 0.0,
            y1: 0.0,
            x2: 1.0,
            y2: 1.0,
        };
        let err =
            select_skill(&b, ShapeCategory::Other, &summary(true, true, true), &rules).unwrap_err();
        assert!(err.to_string().contains("no applicable skill"));
    }

    #[test]
    fn accuracy_product() {
        assert!((compute_accuracy(0.85, 0.76).unwrap() - 0.646).abs() < 1e-12);
        assert_eq!(compute_accuracy(1.0, 0.3).unwrap(), 0.3);
        assert_eq!(compute_accuracy(0.0, 0.7).unwrap(), 0.0);
        assert!(compute_accuracy(1.1, 0.5).is_err());
        assert!(compute_accuracy(0.5, -0.1).is_err());
    }

    #[test]
    fn occupancy_from_boxes() {
        let t = BoundingBox {
            x1: 100.0,
            y1: 100.0,
            x2: 200.0,
            y2: 200.0,
        };
        let near = BoundingBox {
            x1: 205.0,
            y1: 120.0,
            x2: 230.0,
            y2: 140.0,
        };
        let far = BoundingBox {
            x1: 300.0,
            y1: 100.0,
            x2: 350.0,
            y2: 200.0,
        };
        let on = BoundingBox {
            x1: 110.0,
            y1: 90.0,
            x2: 140.0,
            y2: 110.0,
        };
        let s = SceneSummary::from_boxes(&t, &[near], 640, 480);
        assert!(!s.side_clear && s.top_clear && !s.small);
        let s = SceneSummary::from_boxes(&t, &[far], 640, 480);
        assert!(s.side_clear && s.top_clear);
        let s = SceneSummary::from_boxes(&t, &[on], 640, 480);
        assert!(s.side_clear && !s.top_clear);
    }
}
