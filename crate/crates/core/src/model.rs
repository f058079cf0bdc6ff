//! Board document types and the replicated state-transition function.
//!
//! [`Project::apply`] is deterministic and idempotent, and it does not care
//! about arrival order: a replica that has applied a set of operations
//! holds the same document whatever order they arrived in. Three pieces
//! of bookkeeping make that work, all kept in a [`Ledger`] outside the
//! canonical document:
//!
//! * tombstones for deleted notes, connections, attachments and nav refs,
//!   so a late creation or edit cannot resurrect them (delete wins);
//! * parked operations, whose target has not arrived yet and which are
//!   replayed once it does;
//! * the full candidate history of note connections, so the one live
//!   connection per note pair can be recomputed in stamp order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geometry::{clamp_position, quantize, Point, Rect, Size};
use crate::stamp::{AttachmentId, BoardId, ClientId, ConnectionId, NavRefId, NoteId, VersionStamp};
use crate::templates::{layout, InnovationStage, Region, TechniqueTag, TemplateKind};

/// Size of a freshly created note when the op does not carry one.
pub const DEFAULT_NOTE_SIZE: Size = Size::new(0.12, 0.08);

/// Length of generated project tokens.
pub const PROJECT_ID_LEN: usize = 22;

/// Join token of a project, also its URL path segment.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProjectId(String);

impl ProjectId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// 22 characters from `[A-Za-z0-9]`.
    pub fn is_well_formed(&self) -> bool {
        self.0.len() == PROJECT_ID_LEN && self.0.bytes().all(|b| b.is_ascii_alphanumeric())
    }
}

impl fmt::Display for ProjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perspective {
    #[default]
    Overview,
    Detail,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteColor {
    #[default]
    Yellow,
    Green,
    Blue,
    Pink,
    Orange,
    Gray,
}

impl NoteColor {
    pub const ALL: [NoteColor; 6] = [
        NoteColor::Yellow,
        NoteColor::Green,
        NoteColor::Blue,
        NoteColor::Pink,
        NoteColor::Orange,
        NoteColor::Gray,
    ];

    pub fn label_key(self) -> &'static str {
        match self {
            NoteColor::Yellow => "color.yellow",
            NoteColor::Green => "color.green",
            NoteColor::Blue => "color.blue",
            NoteColor::Pink => "color.pink",
            NoteColor::Orange => "color.orange",
            NoteColor::Gray => "color.gray",
        }
    }
}

/// Where a note link points to.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NavTarget {
    Note { board: BoardId, note: NoteId },
    BlockTitle { board: BoardId },
    External { url: String },
}

impl NavTarget {
    pub fn is_valid(&self) -> bool {
        match self {
            NavTarget::External { url } => is_absolute_uri(url),
            _ => true,
        }
    }
}

/// Absolute URI check used for external links and attachments.
pub fn is_absolute_uri(s: &str) -> bool {
    !s.is_empty() && url::Url::parse(s).is_ok()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavRef {
    pub id: NavRefId,
    pub target: NavTarget,
}

/// A link to media stored elsewhere. Only the reference is kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttachmentRef {
    pub id: AttachmentId,
    pub url: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteStamps {
    pub position: VersionStamp,
    pub size: VersionStamp,
    pub text: VersionStamp,
    pub color: VersionStamp,
    pub highlighted: VersionStamp,
}

impl NoteStamps {
    fn all(stamp: &VersionStamp) -> Self {
        Self {
            position: stamp.clone(),
            size: stamp.clone(),
            text: stamp.clone(),
            color: stamp.clone(),
            highlighted: stamp.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StickyNote {
    pub id: NoteId,
    /// Top-left corner as rendered: `requested_position` clamped to the
    /// board for the current size.
    pub position: Point,
    /// Top-left corner as last set by a create or move.
    pub requested_position: Point,
    pub size: Size,
    pub text: String,
    pub color: NoteColor,
    pub highlighted: bool,
    #[serde(with = "as_list")]
    pub nav_refs: BTreeMap<NavRefId, NavRef>,
    #[serde(with = "as_list")]
    pub attachments: BTreeMap<AttachmentId, AttachmentRef>,
    pub field_stamps: NoteStamps,
}

impl StickyNote {
    pub fn rect(&self) -> Rect {
        Rect::from_parts(self.position, self.size)
    }

    fn reclamp(&mut self) {
        self.position = clamp_position(self.requested_position, self.size);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub id: ConnectionId,
    pub from: NoteId,
    pub to: NoteId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoardStamps {
    pub title: VersionStamp,
    pub perspective: VersionStamp,
}

/// One template instance within a project.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Board {
    pub id: BoardId,
    pub kind: TemplateKind,
    pub title: String,
    pub perspective: Perspective,
    pub technique: Option<TechniqueTag>,
    pub regions: Vec<Region>,
    #[serde(with = "as_list")]
    pub notes: BTreeMap<NoteId, StickyNote>,
    #[serde(with = "as_list")]
    pub connections: BTreeMap<ConnectionId, Connection>,
    pub field_stamps: BoardStamps,
}

impl Board {
    /// Size a client should give new notes: halved in the detail
    /// perspective so more notes fit.
    pub fn default_note_size(&self) -> Size {
        match self.perspective {
            Perspective::Overview => DEFAULT_NOTE_SIZE,
            Perspective::Detail => DEFAULT_NOTE_SIZE.halved(),
        }
    }

    pub fn region_of(&self, note: &StickyNote) -> String {
        crate::templates::region_of(self.kind, note.position, note.size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub author: ClientId,
    pub text: String,
    pub stamp: VersionStamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectStamps {
    pub title: VersionStamp,
    pub stage: VersionStamp,
}

/// One collaborative document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: ProjectId,
    pub title: String,
    pub stage: InnovationStage,
    pub default_locale: String,
    /// Ordered by id, i.e. by creation stamp.
    #[serde(with = "as_list")]
    pub boards: BTreeMap<BoardId, Board>,
    #[serde(with = "as_list")]
    pub chat: BTreeMap<VersionStamp, ChatMessage>,
    pub field_stamps: ProjectStamps,
    #[serde(skip)]
    pub(crate) ledger: Ledger,
}

/// Bookkeeping that keeps [`Project::apply`] order-insensitive. Never part
/// of the canonical document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    /// Deleted entity id → earliest effective delete stamp.
    pub tombstones: BTreeMap<VersionStamp, VersionStamp>,
    /// Awaited entity id → ops waiting for it.
    #[serde(with = "parked_list")]
    pub parked: BTreeMap<VersionStamp, BTreeMap<VersionStamp, Operation>>,
    /// Every connection creation that passed validation, live or not.
    #[serde(with = "as_list")]
    pub connection_candidates: BTreeMap<ConnectionId, ConnectionCandidate>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionCandidate {
    pub id: ConnectionId,
    pub board: BoardId,
    pub from: NoteId,
    pub to: NoteId,
}

impl ConnectionCandidate {
    fn pair(&self) -> (NoteId, NoteId) {
        unordered(&self.from, &self.to)
    }
}

fn unordered(a: &NoteId, b: &NoteId) -> (NoteId, NoteId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl Ledger {
    pub fn is_empty(&self) -> bool {
        self.tombstones.is_empty() && self.parked.is_empty() && self.connection_candidates.is_empty()
    }

    pub fn parked_len(&self) -> usize {
        self.parked.values().map(BTreeMap::len).sum()
    }

    /// Forgets bookkeeping no future op can need. `applied` tells whether
    /// an op id has been integrated; an id counts as settled when it has
    /// and is not itself waiting in `parked`.
    ///
    /// * tombstones of settled entities go: duplicate suppression of the
    ///   creating op keeps them dead. Tombstones of connection candidates
    ///   stay, since later candidates for the same pair are settled
    ///   against them.
    /// * candidates with a settled, deleted endpoint go: that pair can
    ///   never be live again.
    /// * ops parked on a settled, deleted entity go: it will not be created.
    pub fn compact(&mut self, applied: impl Fn(&VersionStamp) -> bool) {
        let waiting: BTreeSet<&VersionStamp> = self.parked.values().flat_map(BTreeMap::keys).collect();
        let settled = |id: &VersionStamp| applied(id) && !waiting.contains(id);
        let dead: BTreeSet<VersionStamp> = self.tombstones.keys().filter(|id| settled(id)).cloned().collect();
        self.connection_candidates
            .retain(|_, c| !dead.contains(c.from.stamp()) && !dead.contains(c.to.stamp()));
        let candidates = &self.connection_candidates;
        let keep: BTreeSet<VersionStamp> = self
            .tombstones
            .keys()
            .filter(|id| !settled(id) || candidates.contains_key(&ConnectionId((*id).clone())))
            .cloned()
            .collect();
        self.parked.retain(|awaited, _| !dead.contains(awaited));
        self.tombstones.retain(|id, _| keep.contains(id));
    }
}

/// The replicated unit of change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Operation {
    pub id: VersionStamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<ProjectId>,
    #[serde(flatten)]
    pub payload: Payload,
}

impl Operation {
    pub fn new(id: VersionStamp, payload: Payload) -> Self {
        Self {
            id,
            project: None,
            payload,
        }
    }

    pub fn for_project(mut self, project: ProjectId) -> Self {
        self.project = Some(project);
        self
    }

    /// Static validity of the payload, independent of any document.
    pub fn check(&self) -> Result<(), InvalidOp> {
        if self.id.lamport == 0 || self.id.client.as_str().is_empty() {
            return Err(InvalidOp::Stamp);
        }
        self.payload.check()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum InvalidOp {
    #[error("op id must have a positive lamport counter and a client id")]
    Stamp,
    #[error("coordinates must be finite")]
    Position,
    #[error("note size must be finite and positive")]
    Size,
    #[error("url must be an absolute URI")]
    Url,
    #[error("a connection needs two distinct notes")]
    SelfConnection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    CreateBoard {
        kind: TemplateKind,
        title: String,
        #[serde(default)]
        perspective: Perspective,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        technique: Option<TechniqueTag>,
    },
    RenameBoard {
        board: BoardId,
        title: String,
    },
    SetPerspective {
        board: BoardId,
        perspective: Perspective,
    },
    CreateNote {
        board: BoardId,
        position: Point,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        size: Option<Size>,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        color: Option<NoteColor>,
    },
    EditNoteText {
        note: NoteId,
        text: String,
    },
    MoveNote {
        note: NoteId,
        position: Point,
    },
    ResizeNote {
        note: NoteId,
        size: Size,
    },
    SetNoteColor {
        note: NoteId,
        color: NoteColor,
    },
    SetHighlight {
        note: NoteId,
        highlighted: bool,
    },
    DeleteNote {
        note: NoteId,
    },
    CreateConnection {
        from: NoteId,
        to: NoteId,
    },
    DeleteConnection {
        connection: ConnectionId,
    },
    AddAttachment {
        note: NoteId,
        url: String,
        #[serde(default)]
        label: String,
    },
    RemoveAttachment {
        note: NoteId,
        attachment: AttachmentId,
    },
    AddNavRef {
        note: NoteId,
        target: NavTarget,
    },
    RemoveNavRef {
        note: NoteId,
        nav_ref: NavRefId,
    },
    PostChat {
        text: String,
    },
    SetStage {
        stage: InnovationStage,
    },
    SetProjectTitle {
        title: String,
    },
}

impl Payload {
    /// Fills in what the issuing client decides from its current view:
    /// a note created without a size gets its board's default size.
    pub fn with_client_defaults(mut self, doc: &Project) -> Self {
        if let Payload::CreateNote { board, size: size @ None, .. } = &mut self {
            if let Some(b) = doc.boards.get(board) {
                *size = Some(b.default_note_size());
            }
        }
        self
    }

    pub fn check(&self) -> Result<(), InvalidOp> {
        match self {
            Payload::CreateNote { position, size, .. } => {
                if !position.is_finite() {
                    return Err(InvalidOp::Position);
                }
                match size {
                    Some(s) if !s.is_valid() => Err(InvalidOp::Size),
                    _ => Ok(()),
                }
            }
            Payload::MoveNote { position, .. } if !position.is_finite() => Err(InvalidOp::Position),
            Payload::ResizeNote { size, .. } if !size.is_valid() => Err(InvalidOp::Size),
            Payload::AddAttachment { url, .. } if !is_absolute_uri(url) => Err(InvalidOp::Url),
            Payload::AddNavRef { target, .. } if !target.is_valid() => Err(InvalidOp::Url),
            Payload::CreateConnection { from, to } if from == to => Err(InvalidOp::SelfConnection),
            _ => Ok(()),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Payload::CreateBoard { .. } => "create_board",
            Payload::RenameBoard { .. } => "rename_board",
            Payload::SetPerspective { .. } => "set_perspective",
            Payload::CreateNote { .. } => "create_note",
            Payload::EditNoteText { .. } => "edit_note_text",
            Payload::MoveNote { .. } => "move_note",
            Payload::ResizeNote { .. } => "resize_note",
            Payload::SetNoteColor { .. } => "set_note_color",
            Payload::SetHighlight { .. } => "set_highlight",
            Payload::DeleteNote { .. } => "delete_note",
            Payload::CreateConnection { .. } => "create_connection",
            Payload::DeleteConnection { .. } => "delete_connection",
            Payload::AddAttachment { .. } => "add_attachment",
            Payload::RemoveAttachment { .. } => "remove_attachment",
            Payload::AddNavRef { .. } => "add_nav_ref",
            Payload::RemoveNavRef { .. } => "remove_nav_ref",
            Payload::PostChat { .. } => "post_chat",
            Payload::SetStage { .. } => "set_stage",
            Payload::SetProjectTitle { .. } => "set_project_title",
        }
    }
}

/// What [`Project::apply`] did with an operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// The document changed, or the op was superseded by a later field write.
    Applied,
    /// Target not known yet; held until it is created.
    Parked(VersionStamp),
    /// Recorded no-op.
    Ignored(NoOp),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoOp {
    /// Payload failed [`Payload::check`].
    Invalid,
    /// Stamped before its target existed.
    Stale,
    /// Target was deleted.
    Deleted,
    /// Already applied.
    Duplicate,
    /// Connection endpoints on different boards.
    CrossBoard,
}

/// Pure form of [`Project::apply`].
pub fn apply(mut doc: Project, op: &Operation) -> Project {
    doc.apply(op);
    doc
}

impl Project {
    pub fn new(project_id: ProjectId, title: impl Into<String>, default_locale: impl Into<String>) -> Self {
        Self {
            project_id,
            title: title.into(),
            stage: InnovationStage::Preparation,
            default_locale: default_locale.into(),
            boards: BTreeMap::new(),
            chat: BTreeMap::new(),
            field_stamps: ProjectStamps {
                title: VersionStamp::ZERO,
                stage: VersionStamp::ZERO,
            },
            ledger: Ledger::default(),
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    pub fn with_ledger(mut self, ledger: Ledger) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn board_order(&self) -> Vec<BoardId> {
        self.boards.keys().cloned().collect()
    }

    pub fn board_of(&self, note: &NoteId) -> Option<&BoardId> {
        self.boards
            .values()
            .find(|b| b.notes.contains_key(note))
            .map(|b| &b.id)
    }

    pub fn note(&self, note: &NoteId) -> Option<&StickyNote> {
        self.boards.values().find_map(|b| b.notes.get(note))
    }

    fn note_mut(&mut self, note: &NoteId) -> Option<&mut StickyNote> {
        self.boards.values_mut().find_map(|b| b.notes.get_mut(note))
    }

    pub fn is_tombstoned(&self, id: &VersionStamp) -> bool {
        self.ledger.tombstones.contains_key(id)
    }

    /// Applies one operation. Deterministic, idempotent, and independent of
    /// the order in which a set of operations is applied.
    pub fn apply(&mut self, op: &Operation) -> Outcome {
        if op.payload.check().is_err() {
            return Outcome::Ignored(NoOp::Invalid);
        }
        let id = &op.id;
        match &op.payload {
            Payload::CreateBoard {
                kind,
                title,
                perspective,
                technique,
            } => {
                let board_id = BoardId(id.clone());
                if self.boards.contains_key(&board_id) {
                    return Outcome::Ignored(NoOp::Duplicate);
                }
                let board = Board {
                    id: board_id,
                    kind: *kind,
                    title: title.clone(),
                    perspective: *perspective,
                    technique: technique.filter(|_| kind.accepts_technique()),
                    regions: layout(*kind),
                    notes: BTreeMap::new(),
                    connections: BTreeMap::new(),
                    field_stamps: BoardStamps {
                        title: id.clone(),
                        perspective: id.clone(),
                    },
                };
                self.boards.insert(board.id.clone(), board);
                self.release_parked(id);
                Outcome::Applied
            }
            Payload::RenameBoard { board, title } => self.with_board(op, board, |b| {
                if id > &b.field_stamps.title {
                    b.title = title.clone();
                    b.field_stamps.title = id.clone();
                }
            }),
            Payload::SetPerspective { board, perspective } => self.with_board(op, board, |b| {
                if id > &b.field_stamps.perspective {
                    b.perspective = *perspective;
                    b.field_stamps.perspective = id.clone();
                }
            }),
            Payload::CreateNote {
                board,
                position,
                size,
                text,
                color,
            } => {
                let note_id = NoteId(id.clone());
                if self.is_tombstoned(id) {
                    return Outcome::Ignored(NoOp::Deleted);
                }
                let outcome = self.with_board(op, board, |b| {
                    if b.notes.contains_key(&note_id) {
                        return;
                    }
                    let size = size.unwrap_or(DEFAULT_NOTE_SIZE).clamped();
                    let requested = unit_point(*position);
                    b.notes.insert(
                        note_id.clone(),
                        StickyNote {
                            id: note_id.clone(),
                            position: clamp_position(requested, size),
                            requested_position: requested,
                            size,
                            text: text.clone(),
                            color: color.unwrap_or_default(),
                            highlighted: false,
                            nav_refs: BTreeMap::new(),
                            attachments: BTreeMap::new(),
                            field_stamps: NoteStamps::all(id),
                        },
                    );
                });
                if outcome == Outcome::Applied {
                    self.release_parked(id);
                }
                outcome
            }
            Payload::EditNoteText { note, text } => self.with_note(op, note, |n| {
                if id > &n.field_stamps.text {
                    n.text = text.clone();
                    n.field_stamps.text = id.clone();
                }
            }),
            Payload::MoveNote { note, position } => self.with_note(op, note, |n| {
                if id > &n.field_stamps.position {
                    n.requested_position = unit_point(*position);
                    n.field_stamps.position = id.clone();
                    n.reclamp();
                }
            }),
            Payload::ResizeNote { note, size } => self.with_note(op, note, |n| {
                if id > &n.field_stamps.size {
                    n.size = size.clamped();
                    n.field_stamps.size = id.clone();
                    n.reclamp();
                }
            }),
            Payload::SetNoteColor { note, color } => self.with_note(op, note, |n| {
                if id > &n.field_stamps.color {
                    n.color = *color;
                    n.field_stamps.color = id.clone();
                }
            }),
            Payload::SetHighlight { note, highlighted } => self.with_note(op, note, |n| {
                if id > &n.field_stamps.highlighted {
                    n.highlighted = *highlighted;
                    n.field_stamps.highlighted = id.clone();
                }
            }),
            Payload::DeleteNote { note } => {
                if id <= note.stamp() {
                    return Outcome::Ignored(NoOp::Stale);
                }
                self.tombstone(note.stamp(), id);
                self.ledger.parked.remove(note.stamp());
                for board in self.boards.values_mut() {
                    if board.notes.remove(note).is_some() {
                        board.connections.retain(|_, c| &c.from != note && &c.to != note);
                    }
                }
                Outcome::Applied
            }
            Payload::CreateConnection { from, to } => self.create_connection(op, from, to),
            Payload::DeleteConnection { connection } => {
                if id <= connection.stamp() {
                    return Outcome::Ignored(NoOp::Stale);
                }
                self.tombstone(connection.stamp(), id);
                if let Some(candidate) = self.ledger.connection_candidates.get(connection).cloned() {
                    self.settle_pair(&candidate.board, &candidate.pair());
                }
                Outcome::Applied
            }
            Payload::AddAttachment { note, url, label } => {
                if self.is_tombstoned(id) {
                    return Outcome::Ignored(NoOp::Deleted);
                }
                self.with_note(op, note, |n| {
                    let key = AttachmentId(id.clone());
                    n.attachments.entry(key.clone()).or_insert_with(|| AttachmentRef {
                        id: key,
                        url: url.clone(),
                        label: label.clone(),
                    });
                })
            }
            // removal is keyed by the attachment id alone; the note is only a hint
            Payload::RemoveAttachment { attachment, .. } => {
                if id <= attachment.stamp() {
                    return Outcome::Ignored(NoOp::Stale);
                }
                self.tombstone(attachment.stamp(), id);
                for n in self.boards.values_mut().flat_map(|b| b.notes.values_mut()) {
                    n.attachments.remove(attachment);
                }
                Outcome::Applied
            }
            Payload::AddNavRef { note, target } => {
                if self.is_tombstoned(id) {
                    return Outcome::Ignored(NoOp::Deleted);
                }
                self.with_note(op, note, |n| {
                    let key = NavRefId(id.clone());
                    n.nav_refs.entry(key.clone()).or_insert_with(|| NavRef {
                        id: key,
                        target: target.clone(),
                    });
                })
            }
            Payload::RemoveNavRef { nav_ref, .. } => {
                if id <= nav_ref.stamp() {
                    return Outcome::Ignored(NoOp::Stale);
                }
                self.tombstone(nav_ref.stamp(), id);
                for n in self.boards.values_mut().flat_map(|b| b.notes.values_mut()) {
                    n.nav_refs.remove(nav_ref);
                }
                Outcome::Applied
            }
            Payload::PostChat { text } => {
                if self.chat.contains_key(id) {
                    return Outcome::Ignored(NoOp::Duplicate);
                }
                self.chat.insert(
                    id.clone(),
                    ChatMessage {
                        author: id.client.clone(),
                        text: text.clone(),
                        stamp: id.clone(),
                    },
                );
                Outcome::Applied
            }
            Payload::SetStage { stage } => {
                if id > &self.field_stamps.stage {
                    self.stage = *stage;
                    self.field_stamps.stage = id.clone();
                }
                Outcome::Applied
            }
            Payload::SetProjectTitle { title } => {
                if id > &self.field_stamps.title {
                    self.title = title.clone();
                    self.field_stamps.title = id.clone();
                }
                Outcome::Applied
            }
        }
    }

    fn tombstone(&mut self, target: &VersionStamp, by: &VersionStamp) {
        self.ledger
            .tombstones
            .entry(target.clone())
            .and_modify(|at| {
                if by < at {
                    *at = by.clone();
                }
            })
            .or_insert_with(|| by.clone());
    }

    fn park(&mut self, awaiting: &VersionStamp, op: &Operation) -> Outcome {
        self.ledger
            .parked
            .entry(awaiting.clone())
            .or_default()
            .insert(op.id.clone(), op.clone());
        Outcome::Parked(awaiting.clone())
    }

    fn release_parked(&mut self, created: &VersionStamp) {
        if let Some(waiting) = self.ledger.parked.remove(created) {
            for op in waiting.values() {
                self.apply(op);
            }
        }
    }

    fn with_board(&mut self, op: &Operation, board: &BoardId, f: impl FnOnce(&mut Board)) -> Outcome {
        if &op.id <= board.stamp() {
            return Outcome::Ignored(NoOp::Stale);
        }
        match self.boards.get_mut(board) {
            Some(b) => {
                f(b);
                Outcome::Applied
            }
            None => self.park(board.stamp(), op),
        }
    }

    fn with_note(&mut self, op: &Operation, note: &NoteId, f: impl FnOnce(&mut StickyNote)) -> Outcome {
        if &op.id <= note.stamp() {
            return Outcome::Ignored(NoOp::Stale);
        }
        if self.is_tombstoned(note.stamp()) {
            return Outcome::Ignored(NoOp::Deleted);
        }
        match self.note_mut(note) {
            Some(n) => {
                f(n);
                Outcome::Applied
            }
            None => self.park(note.stamp(), op),
        }
    }

    fn create_connection(&mut self, op: &Operation, from: &NoteId, to: &NoteId) -> Outcome {
        let id = ConnectionId(op.id.clone());
        if &op.id <= from.stamp() || &op.id <= to.stamp() {
            return Outcome::Ignored(NoOp::Stale);
        }
        if self.is_tombstoned(from.stamp()) || self.is_tombstoned(to.stamp()) {
            return Outcome::Ignored(NoOp::Deleted);
        }
        if self.ledger.connection_candidates.contains_key(&id) {
            return Outcome::Ignored(NoOp::Duplicate);
        }
        let from_board = match self.board_of(from) {
            Some(b) => b.clone(),
            None => return self.park(from.stamp(), op),
        };
        let to_board = match self.board_of(to) {
            Some(b) => b.clone(),
            None => return self.park(to.stamp(), op),
        };
        if from_board != to_board {
            return Outcome::Ignored(NoOp::CrossBoard);
        }
        let candidate = ConnectionCandidate {
            id: id.clone(),
            board: from_board,
            from: from.clone(),
            to: to.clone(),
        };
        let (board, pair) = (candidate.board.clone(), candidate.pair());
        self.ledger.connection_candidates.insert(id, candidate);
        self.settle_pair(&board, &pair);
        Outcome::Applied
    }

    /// Recomputes the live connection of a note pair by replaying its
    /// candidates in stamp order: a candidate takes the pair only if no
    /// earlier candidate still holds it at that stamp.
    fn settle_pair(&mut self, board_id: &BoardId, pair: &(NoteId, NoteId)) {
        let mut holder: Option<(&ConnectionCandidate, Option<&VersionStamp>)> = None;
        for candidate in self.ledger.connection_candidates.values() {
            if &candidate.board != board_id || &candidate.pair() != pair {
                continue;
            }
            let held = matches!(holder, Some((_, deleted_at)) if deleted_at.is_none_or(|d| d > candidate.id.stamp()));
            if !held {
                holder = Some((candidate, self.ledger.tombstones.get(candidate.id.stamp())));
            }
        }
        let live = holder.and_then(|(c, deleted_at)| deleted_at.is_none().then(|| c.clone()));
        let Some(board) = self.boards.get_mut(board_id) else {
            return;
        };
        board
            .connections
            .retain(|_, c| &unordered(&c.from, &c.to) != pair);
        if let Some(c) = live {
            if board.notes.contains_key(&c.from) && board.notes.contains_key(&c.to) {
                board.connections.insert(
                    c.id.clone(),
                    Connection {
                        id: c.id,
                        from: c.from,
                        to: c.to,
                    },
                );
            }
        }
    }
}

fn unit_point(p: Point) -> Point {
    Point::new(quantize(p.x.clamp(0.0, 1.0)), quantize(p.y.clamp(0.0, 1.0)))
}

/// A broken document invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    BoardKeyMismatch { board: String },
    RegionLayout { board: String },
    NoteKeyMismatch { note: String },
    NoteOutOfBounds { note: String },
    NoteSize { note: String },
    DanglingConnection { connection: String, note: String },
    SelfConnection { connection: String },
    DuplicateConnection { connection: String },
    ChatOrder { message: String },
    BadUrl { note: String, id: String },
    StampRegression { entity: String, field: &'static str },
}

/// Checks every document invariant. Empty iff the document is well-formed.
pub fn validate(doc: &Project) -> Vec<Violation> {
    let mut out = Vec::new();
    for (key, board) in &doc.boards {
        if key != &board.id {
            out.push(Violation::BoardKeyMismatch { board: key.to_string() });
        }
        if board.regions != layout(board.kind) {
            out.push(Violation::RegionLayout { board: key.to_string() });
        }
        for (key, note) in &board.notes {
            let name = key.to_string();
            if key != &note.id {
                out.push(Violation::NoteKeyMismatch { note: name.clone() });
            }
            if !note.size.is_valid() || note.size.w > 1.0 || note.size.h > 1.0 {
                out.push(Violation::NoteSize { note: name.clone() });
            }
            if !note.rect().within_unit_square() && note.size.is_valid() {
                out.push(Violation::NoteOutOfBounds { note: name.clone() });
            }
            for att in note.attachments.values() {
                if !is_absolute_uri(&att.url) {
                    out.push(Violation::BadUrl { note: name.clone(), id: att.id.to_string() });
                }
            }
            for nav in note.nav_refs.values() {
                if !nav.target.is_valid() {
                    out.push(Violation::BadUrl { note: name.clone(), id: nav.id.to_string() });
                }
            }
            let stamps = &note.field_stamps;
            for (field, stamp) in [
                ("position", &stamps.position),
                ("size", &stamps.size),
                ("text", &stamps.text),
                ("color", &stamps.color),
                ("highlighted", &stamps.highlighted),
            ] {
                if stamp < note.id.stamp() {
                    out.push(Violation::StampRegression { entity: name.clone(), field });
                }
            }
        }
        let mut pairs = BTreeSet::new();
        for conn in board.connections.values() {
            let name = conn.id.to_string();
            if conn.from == conn.to {
                out.push(Violation::SelfConnection { connection: name.clone() });
            }
            for end in [&conn.from, &conn.to] {
                if !board.notes.contains_key(end) {
                    out.push(Violation::DanglingConnection {
                        connection: name.clone(),
                        note: end.to_string(),
                    });
                }
            }
            if !pairs.insert(unordered(&conn.from, &conn.to)) {
                out.push(Violation::DuplicateConnection { connection: name });
            }
        }
    }
    for (key, msg) in &doc.chat {
        if key != &msg.stamp || msg.author != msg.stamp.client {
            out.push(Violation::ChatOrder { message: key.to_string() });
        }
    }
    out
}

/// Items stored in id-keyed maps but serialized as arrays ordered by id.
pub(crate) trait Keyed {
    type Key: Ord;
    fn key(&self) -> Self::Key;
}

macro_rules! keyed {
    ($ty:ty, $key:ty, $field:ident) => {
        impl Keyed for $ty {
            type Key = $key;
            fn key(&self) -> $key {
                self.$field.clone()
            }
        }
    };
}

keyed!(Board, BoardId, id);
keyed!(StickyNote, NoteId, id);
keyed!(Connection, ConnectionId, id);
keyed!(NavRef, NavRefId, id);
keyed!(AttachmentRef, AttachmentId, id);
keyed!(ChatMessage, VersionStamp, stamp);
keyed!(ConnectionCandidate, ConnectionId, id);

mod as_list {
    use super::*;

    pub fn serialize<S, K, V>(map: &BTreeMap<K, V>, serializer: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        V: Serialize,
    {
        serializer.collect_seq(map.values())
    }

    pub fn deserialize<'de, D, V>(deserializer: D) -> Result<BTreeMap<V::Key, V>, D::Error>
    where
        D: Deserializer<'de>,
        V: DeserializeOwned + Keyed,
    {
        let items = Vec::<V>::deserialize(deserializer)?;
        let mut map = BTreeMap::new();
        for item in items {
            if map.insert(item.key(), item).is_some() {
                return Err(serde::de::Error::custom("duplicate id in list"));
            }
        }
        Ok(map)
    }
}

mod parked_list {
    use super::*;

    type Parked = BTreeMap<VersionStamp, BTreeMap<VersionStamp, Operation>>;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        awaiting: VersionStamp,
        op: Operation,
    }

    pub fn serialize<S: Serializer>(parked: &Parked, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(parked.iter().flat_map(|(awaiting, ops)| {
            ops.values().map(move |op| Entry {
                awaiting: awaiting.clone(),
                op: op.clone(),
            })
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Parked, D::Error> {
        let mut parked = Parked::new();
        for e in Vec::<Entry>::deserialize(deserializer)? {
            parked.entry(e.awaiting).or_default().insert(e.op.id.clone(), e.op);
        }
        Ok(parked)
    }
}
