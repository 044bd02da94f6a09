use crate::error::{Error, Result};
use crate::gss::types::{BoundingBox, Instruction, ShapeCategory, Skill};

pub const BOX_CONTEXT: &str = include_str!("../../assets/prompts/box_context.txt");
pub const LOCATE_TEMPLATE: &str = include_str!("../../assets/prompts/locate.txt");
pub const SKILL_TEMPLATE: &str = include_str!("../../assets/prompts/skill.txt");

/// One in-context example shown to the language model before the query.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextExample {
    pub instruction: String,
    pub bbox: BoundingBox,
    pub shape: ShapeCategory,
    pub skill: Skill,
}

/// Prompt templates plus the in-context examples.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanningContext {
    pub box_context: String,
    pub locate_template: String,
    pub skill_template: String,
    pub examples: Vec<ContextExample>,
}

impl Default for PlanningContext {
    fn default() -> Self {
        Self {
            box_context: BOX_CONTEXT.trim_end().to_string(),
            locate_template: LOCATE_TEMPLATE.trim_end().to_string(),
            skill_template: SKILL_TEMPLATE.trim_end().to_string(),
            examples: vec![
                ContextExample {
                    instruction: "I want Fanta".into(),
                    bbox: BoundingBox {
                        x1: 250.0,
                        y1: 120.0,
                        x2: 310.0,
                        y2: 260.0,
                    },
                    shape: ShapeCategory::Cylindrical,
                    skill: Skill::SideGrasp,
                },
                ContextExample {
                    instruction: "Pick up the crushed cola can".into(),
                    bbox: BoundingBox {
                        x1: 380.0,
                        y1: 300.0,
                        x2: 500.0,
                        y2: 350.0,
                    },
                    shape: ShapeCategory::Squashed,
                    skill: Skill::LiftUp,
                },
                ContextExample {
                    instruction: "Hand me a napkin".into(),
                    bbox: BoundingBox {
                        x1: 100.0,
                        y1: 400.0,
                        x2: 140.0,
                        y2: 420.0,
                    },
                    shape: ShapeCategory::ThinSmall,
                    skill: Skill::TopPinch,
                },
            ],
        }
    }
}

impl PlanningContext {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("box context", &self.box_context),
            ("locate template", &self.locate_template),
            ("skill template", &self.skill_template),
        ] {
            if t.trim().is_empty() {
                return Err(Error::invalid(format!("{name} is empty")));
            }
        }
        Ok(())
    }

    pub fn locate_prompt(&self, instruction: &Instruction) -> String {
        let mut p = format!("{}\n", self.box_context);
        for ex in &self.examples {
            p.push_str(&format!("User: {}\nBox: {}\n", ex.instruction, ex.bbox));
        }
        p.push_str(&format!(
            "{}\nUser: {}\n",
            self.locate_template,
            instruction.text()
        ));
        p
    }

    pub fn skill_prompt(&self, bbox: &BoundingBox, shape: ShapeCategory) -> String {
        let mut p = format!("{}\n", self.skill_template);
        for ex in &self.examples {
            p.push_str(&format!(
                "Coordinates: {} Shape: {} Skill: {}\n",
                ex.bbox,
                ex.shape,
                ex.skill.display_name()
            ));
        }
        p.push_str(&format!("Coordinates: {bbox} Shape: {shape} Skill:"));
        p
    }
}

/// Parses the first `[x1, y1, x2, y2]` group in a reply. The box is not
/// range checked.
pub fn parse_box(text: &str) -> Result<BoundingBox> {
    let bad = || Error::Format(format!("no [x1, y1, x2, y2] box in reply {text:?}"));
    let mut rest = text;
    while let Some(start) = rest.find('[') {
        let after = &rest[start + 1..];
        let Some(end) = after.find(']') else { break };
        let nums: std::result::Result<Vec<f64>, _> = after[..end]
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect();
        if let Ok(v) = nums {
            if v.len() == 4 && v.iter().all(|x| x.is_finite()) {
                return Ok(BoundingBox {
                    x1: v[0],
                    y1: v[1],
                    x2: v[2],
                    y2: v[3],
                });
            }
        }
        rest = &after[end + 1..];
    }
    Err(bad())
}

/// Finds the earliest skill name mentioned in a reply, ignoring case.
pub fn parse_skill(text: &str) -> Result<Skill> {
    let lower = text.to_ascii_lowercase();
    Skill::ALL
        .iter()
        .filter_map(|&s| {
            let names = [
                s.display_name().to_ascii_lowercase(),
                s.to_string().to_ascii_lowercase(),
            ];
            names
                .iter()
                .filter_map(|n| lower.find(n.as_str()))
                .min()
                .map(|pos| (pos, s))
        })
        .min_by_key(|&(pos, _)| pos)
        .map(|(_, s)| s)
        .ok_or_else(|| Error::Format(format!("no skill name in reply {text:?}")))
}
