//! Jump-point directory and link resolution over a project snapshot.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::model::{NavTarget, Project};
use crate::stamp::{BoardId, NoteId};

/// Maximum number of characters of note text shown in the directory.
pub const NOTE_PREFIX_CHARS: usize = 40;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpPoint {
    BoardTitle { board: BoardId, title: String },
    NotePoint { board: BoardId, note: NoteId, text: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolution {
    Location { board: BoardId, note: Option<NoteId> },
    Dangling,
    ExternalUrl { url: String },
}

/// Argument of [`backlinks`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LinkTarget {
    Board(BoardId),
    Note(BoardId, NoteId),
}

pub fn resolve(project: &Project, target: &NavTarget) -> Resolution {
    match target {
        NavTarget::Note { board, note } => match project.boards.get(board) {
            Some(b) if b.notes.contains_key(note) => Resolution::Location {
                board: board.clone(),
                note: Some(note.clone()),
            },
            _ => Resolution::Dangling,
        },
        NavTarget::BlockTitle { board } => {
            if project.boards.contains_key(board) {
                Resolution::Location {
                    board: board.clone(),
                    note: None,
                }
            } else {
                Resolution::Dangling
            }
        }
        NavTarget::External { url } => Resolution::ExternalUrl { url: url.clone() },
    }
}

fn text_prefix(text: &str) -> String {
    text.chars().take(NOTE_PREFIX_CHARS).collect()
}

/// Boards in project order, each followed by the notes on it that some
/// live nav ref points at, in note id order.
pub fn jump_points(project: &Project) -> Vec<JumpPoint> {
    let referenced: BTreeSet<(BoardId, NoteId)> = project
        .boards
        .values()
        .flat_map(|b| b.notes.values())
        .flat_map(|n| n.nav_refs.values())
        .filter_map(|r| match resolve(project, &r.target) {
            Resolution::Location { board, note: Some(note) } => Some((board, note)),
            _ => None,
        })
        .collect();

    let mut out = Vec::new();
    for board in project.boards.values() {
        out.push(JumpPoint::BoardTitle {
            board: board.id.clone(),
            title: board.title.clone(),
        });
        for (_, note_id) in referenced.range((board.id.clone(), min_note())..).take_while(|(b, _)| b == &board.id) {
            let note = &board.notes[note_id];
            out.push(JumpPoint::NotePoint {
                board: board.id.clone(),
                note: note_id.clone(),
                text: text_prefix(&note.text),
            });
        }
    }
    out
}

fn min_note() -> NoteId {
    NoteId(crate::stamp::VersionStamp::ZERO)
}

/// Notes whose nav refs resolve to `target`, by (board order, note id).
pub fn backlinks(project: &Project, target: &LinkTarget) -> Vec<(BoardId, NoteId)> {
    let wanted = match target {
        LinkTarget::Board(board) => Resolution::Location {
            board: board.clone(),
            note: None,
        },
        LinkTarget::Note(board, note) => Resolution::Location {
            board: board.clone(),
            note: Some(note.clone()),
        },
    };
    if !matches!(resolve_link(project, target), Resolution::Location { .. }) {
        return Vec::new();
    }
    let mut out = Vec::new();
    for board in project.boards.values() {
        for note in board.notes.values() {
            if note.nav_refs.values().any(|r| resolve(project, &r.target) == wanted) {
                out.push((board.id.clone(), note.id.clone()));
            }
        }
    }
    out
}

fn resolve_link(project: &Project, target: &LinkTarget) -> Resolution {
    match target {
        LinkTarget::Board(board) => resolve(project, &NavTarget::BlockTitle { board: board.clone() }),
        LinkTarget::Note(board, note) => resolve(
            project,
            &NavTarget::Note {
                board: board.clone(),
                note: note.clone(),
            },
        ),
    }
}
