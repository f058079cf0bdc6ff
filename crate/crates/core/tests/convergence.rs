//! Order-insensitivity of `apply` against the stamp-order reference replay.

use board_core::canonical::canonical_bytes;
use board_core::geometry::{Point, Size};
use board_core::model::{NavTarget, NoteColor, Perspective};
use board_core::navigation::{backlinks, jump_points, resolve, LinkTarget, Resolution};
use board_core::oracle;
use board_core::stamp::{AttachmentId, ConnectionId, NavRefId};
use board_core::{validate, BoardId, NoteId, Operation, Payload, Project, ProjectId, ReplicaState, TemplateKind, VersionStamp};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Raw draw for one op; interpreted against the ids created so far.
#[derive(Debug, Clone)]
struct Step {
    client: usize,
    kind: u8,
    pick_a: usize,
    pick_b: usize,
    x: f64,
    y: f64,
    ghost: bool,
    observe: bool,
}

fn step() -> impl Strategy<Value = Step> {
    (0..3usize, 0..20u8, any::<usize>(), any::<usize>(), -0.5..1.5f64, -0.5..1.5f64, prop::bool::weighted(0.05), any::<bool>())
        .prop_map(|(client, kind, pick_a, pick_b, x, y, ghost, observe)| Step { client, kind, pick_a, pick_b, x, y, ghost, observe })
}

#[derive(Default)]
struct Builder {
    clocks: [u64; 3],
    max_seen: u64,
    boards: Vec<VersionStamp>,
    notes: Vec<VersionStamp>,
    note_boards: Vec<(VersionStamp, VersionStamp)>,
    connections: Vec<VersionStamp>,
    attachments: Vec<(VersionStamp, VersionStamp)>,
    nav_refs: Vec<(VersionStamp, VersionStamp)>,
    ops: Vec<Operation>,
}

const CLIENTS: [&str; 3] = ["anna", "bjorn", "carla"];

impl Builder {
    fn pick(list: &[VersionStamp], i: usize) -> Option<VersionStamp> {
        (!list.is_empty()).then(|| list[i % list.len()].clone())
    }

    fn stamp(&mut self, s: &Step, seen: Option<&VersionStamp>) -> VersionStamp {
        let c = s.client;
        let mut base = self.clocks[c];
        if s.observe {
            base = base.max(self.max_seen);
        }
        if let Some(seen) = seen {
            base = base.max(seen.lamport);
        }
        self.clocks[c] = base + 1;
        self.max_seen = self.max_seen.max(base + 1);
        VersionStamp::new(base + 1, CLIENTS[c])
    }

    fn push(&mut self, s: &Step) {
        let ghost = VersionStamp::new(1_000_000, "ghost");
        let note = if s.ghost { Some(ghost.clone()) } else { Self::pick(&self.notes, s.pick_a) };
        let other_note = Self::pick(&self.notes, s.pick_b);
        let board = if s.ghost { Some(ghost.clone()) } else { Self::pick(&self.boards, s.pick_a) };
        let pos = Point::new(s.x, s.y);
        let payload_for = |b: &mut Builder| -> Option<(Payload, Option<VersionStamp>)> {
            Some(match s.kind {
                0 | 1 if b.boards.len() < 2 || (s.kind == 0 && b.boards.len() < 6) => (
                    Payload::CreateBoard {
                        kind: TemplateKind::ALL[s.pick_a % 5],
                        title: format!("board {}", s.pick_b % 100),
                        perspective: if s.pick_b % 2 == 0 { Perspective::Overview } else { Perspective::Detail },
                        technique: None,
                    },
                    None,
                ),
                0..=3 => {
                    let board = board.clone()?;
                    (
                        Payload::CreateNote {
                            board: BoardId(board.clone()),
                            position: pos,
                            size: (s.pick_b % 3 == 0).then(|| Size::new(0.06, 0.04)),
                            text: format!("note {}", s.pick_b % 1000),
                            color: None,
                        },
                        Some(board),
                    )
                }
                4 => (Payload::MoveNote { note: NoteId(note.clone()?), position: pos }, note),
                5 => (
                    Payload::ResizeNote {
                        note: NoteId(note.clone()?),
                        size: Size::new(s.x.abs().max(0.01), s.y.abs().max(0.01)),
                    },
                    note,
                ),
                6 => (Payload::EditNoteText { note: NoteId(note.clone()?), text: format!("edit {}", s.pick_b % 50) }, note),
                7 => (Payload::SetNoteColor { note: NoteId(note.clone()?), color: NoteColor::ALL[s.pick_b % 6] }, note),
                8 => (Payload::SetHighlight { note: NoteId(note.clone()?), highlighted: s.pick_b % 2 == 0 }, note),
                9 => (Payload::DeleteNote { note: NoteId(note.clone()?) }, note),
                10 | 11 => {
                    let (a, z) = (note.clone()?, other_note.clone()?);
                    let seen = a.clone().max(z.clone());
                    (Payload::CreateConnection { from: NoteId(a), to: NoteId(z) }, Some(seen))
                }
                12 => {
                    let c = Self::pick(&b.connections, s.pick_b)?;
                    (Payload::DeleteConnection { connection: ConnectionId(c.clone()) }, Some(c))
                }
                13 => (
                    Payload::AddAttachment {
                        note: NoteId(note.clone()?),
                        url: format!("https://files.example.org/{}.pdf", s.pick_b % 10),
                        label: "doc".into(),
                    },
                    note,
                ),
                14 => {
                    let (n, a) = b.attachments.get(s.pick_b % b.attachments.len().max(1))?.clone();
                    (Payload::RemoveAttachment { note: NoteId(n), attachment: AttachmentId(a.clone()) }, Some(a))
                }
                15 => {
                    let target = match s.pick_b % 3 {
                        0 => NavTarget::BlockTitle { board: BoardId(Self::pick(&b.boards, s.pick_b)?) },
                        1 => {
                            let n = other_note.clone()?;
                            let owner = b.note_board(&n)?;
                            NavTarget::Note { board: BoardId(owner), note: NoteId(n) }
                        }
                        _ => NavTarget::External { url: "https://video.example.org/tour.mp4".into() },
                    };
                    (Payload::AddNavRef { note: NoteId(note.clone()?), target }, note)
                }
                16 => {
                    let (n, r) = b.nav_refs.get(s.pick_b % b.nav_refs.len().max(1))?.clone();
                    (Payload::RemoveNavRef { note: NoteId(n), nav_ref: NavRefId(r.clone()) }, Some(r))
                }
                17 => (Payload::PostChat { text: format!("msg {}", s.pick_b % 100) }, None),
                18 => (Payload::SetStage { stage: board_core::InnovationStage::ALL[s.pick_b % 6] }, None),
                _ => (
                    Payload::RenameBoard { board: BoardId(board.clone()?), title: format!("renamed {}", s.pick_b % 7) },
                    board,
                ),
            })
        };
        let Some((payload, seen)) = payload_for(self) else {
            return;
        };
        let id = self.stamp(s, seen.as_ref());
        match &payload {
            Payload::CreateBoard { .. } => self.boards.push(id.clone()),
            Payload::CreateNote { board, .. } => {
                self.notes.push(id.clone());
                self.note_boards.push((id.clone(), board.0.clone()));
            }
            Payload::CreateConnection { .. } => self.connections.push(id.clone()),
            Payload::AddAttachment { note, .. } => self.attachments.push((note.0.clone(), id.clone())),
            Payload::AddNavRef { note, .. } => self.nav_refs.push((note.0.clone(), id.clone())),
            _ => {}
        }
        self.ops.push(Operation::new(id, payload));
    }

    fn note_board(&self, note: &VersionStamp) -> Option<VersionStamp> {
        self.note_boards.iter().find(|(n, _)| n == note).map(|(_, b)| b.clone())
    }
}

fn build(steps: &[Step]) -> Vec<Operation> {
    let mut b = Builder::default();
    for s in steps {
        b.push(s);
    }
    b.ops
}

fn base() -> Project {
    Project::new(ProjectId::new("ConvergenceTestProject"), "Park", "en")
}

fn integrate_all<'a>(ops: impl IntoIterator<Item = &'a Operation>) -> ReplicaState {
    let mut r = ReplicaState::new("replica".into(), base());
    for op in ops {
        r.integrate(op);
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn any_delivery_order_matches_stamp_order_replay(steps in prop::collection::vec(step(), 1..80), seed in any::<u64>()) {
        let ops = build(&steps);
        let expected = canonical_bytes(&oracle::replay(&base(), &ops));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..3 {
            let mut delivery: Vec<&Operation> = ops.iter().collect();
            // duplicates
            let extra: Vec<&Operation> = delivery.choose_multiple(&mut rng, ops.len() / 4).copied().collect();
            delivery.extend(extra);
            delivery.shuffle(&mut rng);
            let replica = integrate_all(delivery);
            prop_assert_eq!(String::from_utf8(canonical_bytes(replica.doc())).unwrap(), String::from_utf8(expected.clone()).unwrap());
            prop_assert!(validate(replica.doc()).is_empty(), "{:?}", validate(replica.doc()));
        }
    }

    #[test]
    fn compacting_the_ledger_midway_changes_nothing(steps in prop::collection::vec(step(), 1..80), seed in any::<u64>()) {
        let ops = build(&steps);
        let expected = canonical_bytes(&oracle::replay(&base(), &ops));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut delivery: Vec<&Operation> = ops.iter().collect();
        let extra: Vec<&Operation> = delivery.choose_multiple(&mut rng, ops.len() / 3).copied().collect();
        delivery.extend(extra);
        delivery.shuffle(&mut rng);
        let mut replica = ReplicaState::new("replica".into(), base());
        for op in &delivery {
            replica.integrate(op);
            if rng.gen_bool(0.4) {
                replica.compact_ledger();
            }
        }
        replica.compact_ledger();
        for op in &ops {
            replica.integrate(op);
        }
        prop_assert_eq!(String::from_utf8(canonical_bytes(replica.doc())).unwrap(), String::from_utf8(expected).unwrap());
    }

    #[test]
    fn replaying_any_op_again_changes_nothing(steps in prop::collection::vec(step(), 1..60), pick in any::<usize>()) {
        let ops = build(&steps);
        prop_assume!(!ops.is_empty());
        let mut doc = base();
        for op in &ops {
            doc.apply(op);
        }
        let before = doc.clone();
        doc.apply(&ops[pick % ops.len()]);
        prop_assert_eq!(canonical_bytes(&doc), canonical_bytes(&before));
    }

    #[test]
    fn notes_stay_on_the_board(steps in prop::collection::vec(step(), 1..80)) {
        let ops = build(&steps);
        let mut doc = base();
        for op in &ops {
            doc.apply(op);
            for note in doc.boards.values().flat_map(|b| b.notes.values()) {
                prop_assert!(note.rect().within_unit_square(), "{:?}", note);
            }
        }
    }

    #[test]
    fn jump_points_never_dangle_and_backlinks_invert_refs(steps in prop::collection::vec(step(), 1..80)) {
        let doc = oracle::replay(&base(), &build(&steps));
        for point in jump_points(&doc) {
            let target = match point {
                board_core::navigation::JumpPoint::BoardTitle { board, .. } => NavTarget::BlockTitle { board },
                board_core::navigation::JumpPoint::NotePoint { board, note, .. } => NavTarget::Note { board, note },
            };
            prop_assert_ne!(resolve(&doc, &target), Resolution::Dangling);
        }
        // brute-force inverse of the resolved nav-ref relation
        for board in doc.boards.values() {
            let mut targets = vec![LinkTarget::Board(board.id.clone())];
            targets.extend(board.notes.keys().map(|n| LinkTarget::Note(board.id.clone(), n.clone())));
            for target in targets {
                let want = match &target {
                    LinkTarget::Board(b) => Resolution::Location { board: b.clone(), note: None },
                    LinkTarget::Note(b, n) => Resolution::Location { board: b.clone(), note: Some(n.clone()) },
                };
                let mut expected = Vec::new();
                for b in doc.boards.values() {
                    for n in b.notes.values() {
                        if n.nav_refs.values().any(|r| resolve(&doc, &r.target) == want) {
                            expected.push((b.id.clone(), n.id.clone()));
                        }
                    }
                }
                prop_assert_eq!(backlinks(&doc, &target), expected);
            }
        }
    }
}
