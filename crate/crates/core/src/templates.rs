//! Built-in board templates and the innovation-process stage machine.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{quantize, Point, Rect, Size};

/// The five built-in board backgrounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    FreeWall,
    DesignThinking,
    Swot,
    Kanban,
    Scrum,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 5] = [
        TemplateKind::FreeWall,
        TemplateKind::DesignThinking,
        TemplateKind::Swot,
        TemplateKind::Kanban,
        TemplateKind::Scrum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::FreeWall => "free_wall",
            TemplateKind::DesignThinking => "design_thinking",
            TemplateKind::Swot => "swot",
            TemplateKind::Kanban => "kanban",
            TemplateKind::Scrum => "scrum",
        }
    }

    pub fn label_key(self) -> String {
        format!("tpl.{}.name", self.as_str())
    }

    /// Whether an idea-generation technique label may be attached.
    pub fn accepts_technique(self) -> bool {
        matches!(self, TemplateKind::FreeWall | TemplateKind::DesignThinking)
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named sub-rectangle of a board.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: String,
    pub label_key: String,
    pub rect: Rect,
}

fn region(kind: TemplateKind, id: &str, rect: Rect) -> Region {
    Region {
        region_id: id.to_owned(),
        label_key: format!("tpl.{}.{}", kind.as_str(), id),
        rect,
    }
}

/// Equal-width full-height columns. Edges are quantized like every other
/// stored coordinate; adjacent columns share an edge exactly.
fn columns(kind: TemplateKind, ids: &[&str]) -> Vec<Region> {
    let n = ids.len();
    let edge = |i: usize| quantize(i as f64 / n as f64);
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            let (left, right) = (edge(i), edge(i + 1));
            region(kind, id, Rect::new(left, 0.0, quantize(right - left), 1.0))
        })
        .collect()
}

/// Fixed region layout of a template. Regions partition the unit square and
/// are listed in tie-break order.
pub fn layout(kind: TemplateKind) -> Vec<Region> {
    match kind {
        TemplateKind::FreeWall => vec![region(kind, "wall", Rect::new(0.0, 0.0, 1.0, 1.0))],
        TemplateKind::Swot => vec![
            region(kind, "strengths", Rect::new(0.0, 0.0, 0.5, 0.5)),
            region(kind, "weaknesses", Rect::new(0.5, 0.0, 0.5, 0.5)),
            region(kind, "opportunities", Rect::new(0.0, 0.5, 0.5, 0.5)),
            region(kind, "threats", Rect::new(0.5, 0.5, 0.5, 0.5)),
        ],
        TemplateKind::Kanban => columns(kind, &["todo", "doing", "done"]),
        TemplateKind::Scrum => columns(kind, &["backlog", "sprint", "in_progress", "review", "done"]),
        TemplateKind::DesignThinking => {
            columns(kind, &["empathize", "define", "ideate", "prototype", "test"])
        }
    }
}

/// Region containing the center of the note rect. Ties on a shared boundary
/// go to the region listed first.
pub fn region_of(kind: TemplateKind, pos: Point, size: Size) -> String {
    let regions = layout(kind);
    let center = Rect::from_parts(pos, size).center();
    regions
        .iter()
        .find(|r| r.rect.contains(center))
        // the center of a clamped note is always inside the unit square;
        // fall back to the nearest region for out-of-range input
        .or_else(|| {
            regions.iter().min_by(|a, b| {
                distance_sq(&a.rect, center).total_cmp(&distance_sq(&b.rect, center))
            })
        })
        .map(|r| r.region_id.clone())
        .expect("every layout has at least one region")
}

fn distance_sq(rect: &Rect, p: Point) -> f64 {
    let dx = (rect.x - p.x).max(0.0).max(p.x - rect.right());
    let dy = (rect.y - p.y).max(0.0).max(p.y - rect.bottom());
    dx * dx + dy * dy
}

/// Regions the note rect overlaps with positive area, in layout order.
pub fn regions_overlapped(kind: TemplateKind, pos: Point, size: Size) -> Vec<String> {
    let note = Rect::from_parts(pos, size);
    layout(kind)
        .into_iter()
        .filter(|r| r.rect.intersection_area(&note) > 0.0)
        .map(|r| r.region_id)
        .collect()
}

/// A note straddling two or more regions, e.g. a Kanban card between
/// "doing" and "done".
pub fn is_transitional(kind: TemplateKind, pos: Point, size: Size) -> bool {
    regions_overlapped(kind, pos, size).len() > 1
}

/// Stages of the collaborative innovation value chain, in process order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnovationStage {
    Preparation,
    IdeaGeneration,
    IdeaEvaluation,
    Planning,
    Prototyping,
    MarketingReflection,
}

impl InnovationStage {
    pub const ALL: [InnovationStage; 6] = [
        InnovationStage::Preparation,
        InnovationStage::IdeaGeneration,
        InnovationStage::IdeaEvaluation,
        InnovationStage::Planning,
        InnovationStage::Prototyping,
        InnovationStage::MarketingReflection,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InnovationStage::Preparation => "preparation",
            InnovationStage::IdeaGeneration => "idea_generation",
            InnovationStage::IdeaEvaluation => "idea_evaluation",
            InnovationStage::Planning => "planning",
            InnovationStage::Prototyping => "prototyping",
            InnovationStage::MarketingReflection => "marketing_reflection",
        }
    }

    pub fn label_key(self) -> String {
        format!("stage.{}", self.as_str())
    }

    pub fn next(self) -> Option<InnovationStage> {
        Self::ALL.get(self.index() + 1).copied()
    }
}

impl fmt::Display for InnovationStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Idea-generation technique a brainstorming board is labelled with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechniqueTag {
    DesignThinking,
    Method635,
    AbcMethod,
    StopAndGoBrainstorming,
}

impl TechniqueTag {
    pub const ALL: [TechniqueTag; 4] = [
        TechniqueTag::DesignThinking,
        TechniqueTag::Method635,
        TechniqueTag::AbcMethod,
        TechniqueTag::StopAndGoBrainstorming,
    ];

    pub fn label_key(self) -> &'static str {
        match self {
            TechniqueTag::DesignThinking => "technique.design_thinking",
            TechniqueTag::Method635 => "technique.method_635",
            TechniqueTag::AbcMethod => "technique.abc_method",
            TechniqueTag::StopAndGoBrainstorming => "technique.stop_and_go_brainstorming",
        }
    }
}

pub fn recommended_templates(stage: InnovationStage) -> Vec<TemplateKind> {
    use InnovationStage::*;
    match stage {
        IdeaGeneration => vec![TemplateKind::FreeWall, TemplateKind::DesignThinking],
        IdeaEvaluation => vec![TemplateKind::Swot],
        Planning => vec![TemplateKind::Kanban, TemplateKind::Scrum],
        Preparation | Prototyping | MarketingReflection => vec![TemplateKind::FreeWall],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot jump from stage {from} to {to}: only one step forward is allowed")]
pub struct TransitionError {
    pub from: InnovationStage,
    pub to: InnovationStage,
}

/// Stage transition rule: one step forward, or any number of steps back.
/// Staying on the current stage is accepted as a no-op transition.
pub fn check_transition(from: InnovationStage, to: InnovationStage) -> Result<(), TransitionError> {
    if to.index() <= from.index() + 1 {
        Ok(())
    } else {
        Err(TransitionError { from, to })
    }
}
