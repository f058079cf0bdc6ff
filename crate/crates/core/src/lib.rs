//! Replicated innovation-board documents.
//!
//! A [`model::Project`] holds boards of sticky notes, note connections,
//! navigation links and a chat log. Every change travels as an
//! [`model::Operation`]; replicas integrate operations in any order and
//! converge on byte-identical [`canonical`] renderings.

pub mod canonical;
pub mod geometry;
pub mod i18n;
pub mod model;
pub mod navigation;
pub mod oracle;
pub mod replication;
pub mod stamp;
pub mod templates;

pub use geometry::{clamp_position, Point, Rect, Size};
pub use model::{apply, validate, Board, NavTarget, Operation, Outcome, Payload, Project, ProjectId, StickyNote};
pub use replication::{merge_field, Merge, ReplicaState};
pub use stamp::{BoardId, ClientId, NoteId, VersionStamp};
pub use templates::{InnovationStage, TemplateKind};
