//! Reference replay: sorts a set of operations by stamp and folds them in
//! that order with the plainest possible semantics. Any replica that has
//! integrated the same set, in any order, must hold exactly this document.
//!
//! Kept separate from [`crate::model::Project::apply`] on purpose: no
//! parking, no tombstone ledger, no candidate history. In stamp order
//! an op can only see entities created before it, and a deleted note
//! simply stays gone.

use std::collections::BTreeMap;

use crate::geometry::{clamp_position, quantize, Point};
use crate::model::{
    AttachmentRef, Board, BoardStamps, ChatMessage, Connection, NavRef, NoteStamps, Payload,
    Project, StickyNote, DEFAULT_NOTE_SIZE,
};
use crate::model::Operation;
use crate::stamp::{AttachmentId, BoardId, ConnectionId, NavRefId, NoteId, VersionStamp};
use crate::templates::layout;

/// Replays `ops` over `base` in stamp order, ignoring duplicate ids.
pub fn replay<'a>(base: &Project, ops: impl IntoIterator<Item = &'a Operation>) -> Project {
    let mut sorted: BTreeMap<&VersionStamp, &Operation> = BTreeMap::new();
    for op in ops {
        sorted.entry(&op.id).or_insert(op);
    }
    let mut doc = base.clone();
    for op in sorted.values() {
        step(&mut doc, op);
    }
    doc
}

fn find_note<'d>(doc: &'d mut Project, id: &NoteId) -> Option<&'d mut StickyNote> {
    doc.boards.values_mut().find_map(|b| b.notes.get_mut(id))
}

fn to_unit(p: Point) -> Point {
    let c = |v: f64| quantize(v.clamp(0.0, 1.0));
    Point::new(c(p.x), c(p.y))
}

fn step(doc: &mut Project, op: &Operation) {
    if op.payload.check().is_err() {
        return;
    }
    let id = op.id.clone();
    match &op.payload {
        Payload::CreateBoard {
            kind,
            title,
            perspective,
            technique,
        } => {
            let board_id = BoardId(id.clone());
            doc.boards.insert(
                board_id.clone(),
                Board {
                    id: board_id,
                    kind: *kind,
                    title: title.clone(),
                    perspective: *perspective,
                    technique: if kind.accepts_technique() { *technique } else { None },
                    regions: layout(*kind),
                    notes: BTreeMap::new(),
                    connections: BTreeMap::new(),
                    field_stamps: BoardStamps {
                        title: id.clone(),
                        perspective: id,
                    },
                },
            );
        }
        Payload::RenameBoard { board, title } => {
            if let Some(b) = doc.boards.get_mut(board) {
                b.title = title.clone();
                b.field_stamps.title = id;
            }
        }
        Payload::SetPerspective { board, perspective } => {
            if let Some(b) = doc.boards.get_mut(board) {
                b.perspective = *perspective;
                b.field_stamps.perspective = id;
            }
        }
        Payload::CreateNote {
            board,
            position,
            size,
            text,
            color,
        } => {
            if let Some(b) = doc.boards.get_mut(board) {
                let size = size.unwrap_or(DEFAULT_NOTE_SIZE).clamped();
                let requested = to_unit(*position);
                let note_id = NoteId(id.clone());
                b.notes.insert(
                    note_id.clone(),
                    StickyNote {
                        id: note_id,
                        position: clamp_position(requested, size),
                        requested_position: requested,
                        size,
                        text: text.clone(),
                        color: color.unwrap_or_default(),
                        highlighted: false,
                        nav_refs: BTreeMap::new(),
                        attachments: BTreeMap::new(),
                        field_stamps: NoteStamps {
                            position: id.clone(),
                            size: id.clone(),
                            text: id.clone(),
                            color: id.clone(),
                            highlighted: id,
                        },
                    },
                );
            }
        }
        Payload::EditNoteText { note, text } => {
            if let Some(n) = find_note(doc, note) {
                n.text = text.clone();
                n.field_stamps.text = id;
            }
        }
        Payload::MoveNote { note, position } => {
            if let Some(n) = find_note(doc, note) {
                n.requested_position = to_unit(*position);
                n.position = clamp_position(n.requested_position, n.size);
                n.field_stamps.position = id;
            }
        }
        Payload::ResizeNote { note, size } => {
            if let Some(n) = find_note(doc, note) {
                n.size = size.clamped();
                n.position = clamp_position(n.requested_position, n.size);
                n.field_stamps.size = id;
            }
        }
        Payload::SetNoteColor { note, color } => {
            if let Some(n) = find_note(doc, note) {
                n.color = *color;
                n.field_stamps.color = id;
            }
        }
        Payload::SetHighlight { note, highlighted } => {
            if let Some(n) = find_note(doc, note) {
                n.highlighted = *highlighted;
                n.field_stamps.highlighted = id;
            }
        }
        Payload::DeleteNote { note } => {
            for b in doc.boards.values_mut() {
                if b.notes.remove(note).is_some() {
                    b.connections.retain(|_, c| &c.from != note && &c.to != note);
                }
            }
        }
        Payload::CreateConnection { from, to } => {
            for b in doc.boards.values_mut() {
                if !(b.notes.contains_key(from) && b.notes.contains_key(to)) {
                    continue;
                }
                let taken = b
                    .connections
                    .values()
                    .any(|c| (&c.from == from && &c.to == to) || (&c.from == to && &c.to == from));
                if !taken {
                    let cid = ConnectionId(id.clone());
                    b.connections.insert(
                        cid.clone(),
                        Connection {
                            id: cid,
                            from: from.clone(),
                            to: to.clone(),
                        },
                    );
                }
            }
        }
        Payload::DeleteConnection { connection } => {
            for b in doc.boards.values_mut() {
                b.connections.remove(connection);
            }
        }
        Payload::AddAttachment { note, url, label } => {
            if let Some(n) = find_note(doc, note) {
                let aid = AttachmentId(id);
                n.attachments.insert(
                    aid.clone(),
                    AttachmentRef {
                        id: aid,
                        url: url.clone(),
                        label: label.clone(),
                    },
                );
            }
        }
        Payload::RemoveAttachment { attachment, .. } => {
            for b in doc.boards.values_mut() {
                for n in b.notes.values_mut() {
                    n.attachments.remove(attachment);
                }
            }
        }
        Payload::AddNavRef { note, target } => {
            if let Some(n) = find_note(doc, note) {
                let rid = NavRefId(id);
                n.nav_refs.insert(
                    rid.clone(),
                    NavRef {
                        id: rid,
                        target: target.clone(),
                    },
                );
            }
        }
        Payload::RemoveNavRef { nav_ref, .. } => {
            for b in doc.boards.values_mut() {
                for n in b.notes.values_mut() {
                    n.nav_refs.remove(nav_ref);
                }
            }
        }
        Payload::PostChat { text } => {
            doc.chat.insert(
                id.clone(),
                ChatMessage {
                    author: id.client.clone(),
                    text: text.clone(),
                    stamp: id,
                },
            );
        }
        Payload::SetStage { stage } => {
            doc.stage = *stage;
            doc.field_stamps.stage = id;
        }
        Payload::SetProjectTitle { title } => {
            doc.title = title.clone();
            doc.field_stamps.title = id;
        }
    }
}
