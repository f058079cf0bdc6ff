//! Random but well-formed operations, drawn from what one replica can see.

use board_core::model::{NavTarget, NoteColor, Perspective};
use board_core::stamp::{AttachmentId, ConnectionId, NavRefId};
use board_core::templates::{check_transition, InnovationStage};
use board_core::{BoardId, NoteId, Payload, Point, Project, Size, TemplateKind};
use rand::seq::SliceRandom;
use rand::Rng;

const URLS: [&str; 4] = [
    "https://files.example.org/trail-map.pdf",
    "https://video.example.org/lakeside.mp4",
    "https://files.example.org/budget.xlsx",
    "https://cloud.example.org/s/visitor-survey",
];

fn point(rng: &mut impl Rng) -> Point {
    // deliberately overshoots the unit square
    Point::new(rng.gen_range(-0.25..1.25), rng.gen_range(-0.25..1.25))
}

fn size(rng: &mut impl Rng) -> Size {
    Size::new(rng.gen_range(0.02..0.6), rng.gen_range(0.02..0.6))
}

fn new_note(rng: &mut impl Rng, board: &BoardId) -> Payload {
    Payload::CreateNote {
        board: board.clone(),
        position: point(rng),
        size: rng.gen_bool(0.2).then(|| size(rng)),
        text: format!("idea {}", rng.gen_range(0..1000)),
        color: rng.gen_bool(0.5).then(|| *NoteColor::ALL.choose(rng).expect("non-empty")),
    }
}

struct View {
    boards: Vec<BoardId>,
    notes: Vec<(BoardId, NoteId)>,
    connections: Vec<ConnectionId>,
    attachments: Vec<(NoteId, AttachmentId)>,
    nav_refs: Vec<(NoteId, NavRefId)>,
}

impl View {
    fn of(doc: &Project) -> Self {
        let mut v = View {
            boards: doc.boards.keys().cloned().collect(),
            notes: Vec::new(),
            connections: Vec::new(),
            attachments: Vec::new(),
            nav_refs: Vec::new(),
        };
        for b in doc.boards.values() {
            v.connections.extend(b.connections.keys().cloned());
            for n in b.notes.values() {
                v.notes.push((b.id.clone(), n.id.clone()));
                v.attachments.extend(n.attachments.keys().map(|a| (n.id.clone(), a.clone())));
                v.nav_refs.extend(n.nav_refs.keys().map(|r| (n.id.clone(), r.clone())));
            }
        }
        v
    }
}

/// One payload for a client whose current document is `doc`.
pub fn random_payload<R: Rng>(rng: &mut R, doc: &Project) -> Payload {
    let view = View::of(doc);
    if view.boards.is_empty() || (view.boards.len() < 4 && rng.gen_bool(0.04)) {
        let kind = *TemplateKind::ALL.choose(rng).expect("non-empty");
        return Payload::CreateBoard {
            kind,
            title: format!("board {}", rng.gen_range(0..100)),
            perspective: if rng.gen_bool(0.3) { Perspective::Detail } else { Perspective::Overview },
            technique: None,
        };
    }
    let board = view.boards.choose(rng).expect("non-empty").clone();
    let create_note = |rng: &mut R| new_note(rng, &board);
    let Some((_, note)) = view.notes.choose(rng).cloned() else {
        return create_note(rng);
    };
    match rng.gen_range(0..100) {
        0..=21 => create_note(rng),
        22..=35 => Payload::MoveNote { note, position: point(rng) },
        36..=40 => Payload::ResizeNote { note, size: size(rng) },
        41..=49 => Payload::EditNoteText {
            note,
            text: format!("edited {}", rng.gen_range(0..1000)),
        },
        50..=54 => Payload::SetNoteColor {
            note,
            color: *NoteColor::ALL.choose(rng).expect("non-empty"),
        },
        55..=58 => Payload::SetHighlight {
            note,
            highlighted: rng.gen_bool(0.5),
        },
        59..=65 => Payload::DeleteNote { note },
        66..=71 => {
            let (b, _) = view.notes.iter().find(|(_, n)| *n == note).expect("picked from view").clone();
            let peers: Vec<&NoteId> = view.notes.iter().filter(|(pb, n)| *pb == b && *n != note).map(|(_, n)| n).collect();
            match peers.choose(rng) {
                Some(&to) => Payload::CreateConnection { from: note, to: to.clone() },
                None => create_note(rng),
            }
        }
        72..=74 => match view.connections.choose(rng) {
            Some(c) => Payload::DeleteConnection { connection: c.clone() },
            None => Payload::PostChat { text: "no links yet".into() },
        },
        75..=77 => Payload::AddAttachment {
            note,
            url: (*URLS.choose(rng).expect("non-empty")).into(),
            label: "file".into(),
        },
        78..=79 => match view.attachments.choose(rng) {
            Some((n, a)) => Payload::RemoveAttachment {
                note: n.clone(),
                attachment: a.clone(),
            },
            None => Payload::PostChat { text: "nothing attached".into() },
        },
        80..=83 => {
            let target = match rng.gen_range(0..3) {
                0 => NavTarget::BlockTitle {
                    board: view.boards.choose(rng).expect("non-empty").clone(),
                },
                1 => {
                    let (b, n) = view.notes.choose(rng).expect("non-empty").clone();
                    NavTarget::Note { board: b, note: n }
                }
                _ => NavTarget::External {
                    url: (*URLS.choose(rng).expect("non-empty")).into(),
                },
            };
            Payload::AddNavRef { note, target }
        }
        84..=85 => match view.nav_refs.choose(rng) {
            Some((n, r)) => Payload::RemoveNavRef {
                note: n.clone(),
                nav_ref: r.clone(),
            },
            None => Payload::PostChat { text: "no refs".into() },
        },
        86..=91 => Payload::PostChat {
            text: format!("message {}", rng.gen_range(0..1000)),
        },
        92..=93 => {
            let allowed: Vec<InnovationStage> = InnovationStage::ALL
                .into_iter()
                .filter(|s| check_transition(doc.stage, *s).is_ok())
                .collect();
            Payload::SetStage {
                stage: *allowed.choose(rng).expect("current stage is always allowed"),
            }
        }
        94..=95 => Payload::RenameBoard {
            board,
            title: format!("renamed {}", rng.gen_range(0..100)),
        },
        96..=97 => Payload::SetPerspective {
            board,
            perspective: if rng.gen_bool(0.5) { Perspective::Detail } else { Perspective::Overview },
        },
        _ => Payload::SetProjectTitle {
            title: format!("project {}", rng.gen_range(0..10)),
        },
    }
}
