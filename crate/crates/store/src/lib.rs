//! Durable project storage.
//!
//! Each project lives in its own directory under the data dir:
//!
//! ```text
//! <data_dir>/<project_id>/snapshot.json   canonical doc + replica metadata + snapshot_seq
//! <data_dir>/<project_id>/ops.log         JSON lines: {"seq":N,"op":{...}}
//! ```
//!
//! Appends are synced before they return, so an op is durable before the
//! server broadcasts it. Compaction writes a new snapshot to a temporary
//! file and renames it into place, then trims the log; a crash at any point
//! leaves a snapshot/log pair that loads to the same state.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use board_core::canonical;
use board_core::replication::{ReplicaMeta, ReplicaState};
use board_core::{ClientId, Operation, Project, ProjectId};
use serde::{Deserialize, Serialize};

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const LOG_FILE: &str = "ops.log";
const SNAPSHOT_TMP: &str = "snapshot.json.tmp";
const LOG_TMP: &str = "ops.log.tmp";

pub const DEFAULT_COMPACT_THRESHOLD: usize = 1000;

/// Format tag written into exports.
pub const EXPORT_FORMAT: &str = "innovation-board-export";
pub const EXPORT_VERSION: u32 = 1;

/// Client id the persisted replica runs under.
pub const SERVER_CLIENT: &str = "server";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Corrupt { path: PathBuf, line: usize, detail: String },
    #[error("append out of order: expected seq {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("project {0} already exists")]
    Exists(ProjectId),
    #[error("no such project {0}")]
    NotFound(ProjectId),
    #[error("invalid project id {0:?}")]
    BadProjectId(String),
    #[error("injected fault: {0:?}")]
    Injected(Fault),
    #[error("bad export: {0}")]
    BadExport(String),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Points where a test can make the store fail as if the process died.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// New snapshot fully written to the temp file, not yet renamed.
    CompactAfterTempWrite,
    /// New snapshot renamed into place, log not yet trimmed.
    CompactAfterRename,
    /// Append fails before touching the log.
    AppendIo,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SnapshotFile {
    snapshot_seq: u64,
    doc: Project,
    replica: ReplicaMeta,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    op: Operation,
}

/// A project as found on disk, replayed to its head.
#[derive(Debug)]
pub struct Loaded {
    pub replica: ReplicaState,
    pub snapshot_seq: u64,
    pub head_seq: u64,
    /// Log entries after the snapshot, in seq order.
    pub log: Vec<(u64, Operation)>,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
    compact_threshold: usize,
    fault: Option<Fault>,
    durable: bool,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self {
            root,
            compact_threshold: DEFAULT_COMPACT_THRESHOLD,
            fault: None,
            durable: true,
        })
    }

    /// With `false`, nothing is fsynced. Only for simulations and tests
    /// where the data dir is throwaway.
    pub fn with_durability(mut self, durable: bool) -> Self {
        self.durable = durable;
        self
    }

    pub fn with_compact_threshold(mut self, threshold: usize) -> Self {
        self.compact_threshold = threshold.max(1);
        self
    }

    /// Arms a fault for every project handle opened afterwards.
    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &ProjectId) -> Result<PathBuf> {
        // ids become directory names
        if id.as_str().is_empty() || !id.as_str().bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
            return Err(StoreError::BadProjectId(id.to_string()));
        }
        Ok(self.root.join(id.as_str()))
    }

    pub fn exists(&self, id: &ProjectId) -> bool {
        self.dir(id).is_ok_and(|d| d.join(SNAPSHOT_FILE).is_file())
    }

    pub fn list(&self) -> Result<Vec<ProjectId>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if let Some(name) = entry.file_name().to_str() {
                let id = ProjectId::new(name);
                if self.exists(&id) {
                    out.push(id);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Persists a fresh project at seq 0.
    pub fn create(&self, doc: &Project) -> Result<ProjectStore> {
        let dir = self.dir(&doc.project_id)?;
        if dir.join(SNAPSHOT_FILE).exists() {
            return Err(StoreError::Exists(doc.project_id.clone()));
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let snapshot = SnapshotFile {
            snapshot_seq: 0,
            doc: doc.clone(),
            replica: ReplicaMeta::default(),
        };
        write_atomic(&dir.join(SNAPSHOT_TMP), &dir.join(SNAPSHOT_FILE), render_snapshot(&snapshot).as_bytes(), None, self.durable)?;
        let log_path = dir.join(LOG_FILE);
        File::create(&log_path).map_err(io_err(&log_path))?;
        if self.durable {
            sync_dir(&dir);
        }
        self.handle(doc.project_id.clone(), dir, 0, 0, 0)
    }

    fn handle(&self, id: ProjectId, dir: PathBuf, snapshot_seq: u64, head_seq: u64, log_len: usize) -> Result<ProjectStore> {
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        Ok(ProjectStore {
            id,
            dir,
            log,
            snapshot_seq,
            head_seq,
            log_len,
            compact_threshold: self.compact_threshold,
            fault: self.fault,
            durable: self.durable,
        })
    }

    /// Loads snapshot + log without taking a write handle.
    pub fn load(&self, id: &ProjectId) -> Result<Loaded> {
        let dir = self.dir(id)?;
        if !dir.join(SNAPSHOT_FILE).is_file() {
            return Err(StoreError::NotFound(id.clone()));
        }
        load_dir(&dir)
    }

    /// Loads a project and opens it for appending.
    pub fn open_project(&self, id: &ProjectId) -> Result<(ProjectStore, Loaded)> {
        let loaded = self.load(id)?;
        let dir = self.dir(id)?;
        // a torn tail from a crash mid-append is dropped before new appends
        rewrite_log(&dir, &loaded.log, self.durable)?;
        let handle = self.handle(id.clone(), dir, loaded.snapshot_seq, loaded.head_seq, loaded.log.len())?;
        Ok((handle, loaded))
    }

    /// Self-contained JSON export of the live document.
    pub fn export(&self, id: &ProjectId) -> Result<String> {
        let loaded = self.load(id)?;
        Ok(export_doc(loaded.replica.doc()))
    }
}

/// Export envelope around the canonical document. Tombstones and other
/// replica bookkeeping are not part of it.
pub fn export_doc(doc: &Project) -> String {
    #[derive(Serialize)]
    struct Export<'a> {
        format: &'static str,
        version: u32,
        project: &'a Project,
    }
    canonical::to_canonical_string(&Export {
        format: EXPORT_FORMAT,
        version: EXPORT_VERSION,
        project: doc,
    })
}

pub fn import(json: &str) -> Result<Project> {
    #[derive(Deserialize)]
    struct Import {
        format: String,
        version: u32,
        project: Project,
    }
    let parsed: Import = serde_json::from_str(json).map_err(|e| StoreError::BadExport(e.to_string()))?;
    if parsed.format != EXPORT_FORMAT || parsed.version != EXPORT_VERSION {
        return Err(StoreError::BadExport(format!(
            "unsupported format {} v{}",
            parsed.format, parsed.version
        )));
    }
    let violations = board_core::validate(&parsed.project);
    if !violations.is_empty() {
        return Err(StoreError::BadExport(format!("{violations:?}")));
    }
    Ok(parsed.project)
}

fn render_snapshot(s: &SnapshotFile) -> String {
    canonical::to_canonical_string(s)
}

fn load_dir(dir: &Path) -> Result<Loaded> {
    let snap_path = dir.join(SNAPSHOT_FILE);
    let text = fs::read_to_string(&snap_path).map_err(io_err(&snap_path))?;
    let snapshot: SnapshotFile = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: snap_path.clone(),
        line: e.line(),
        detail: e.to_string(),
    })?;
    let mut replica = snapshot.replica.restore(ClientId::new(SERVER_CLIENT), snapshot.doc);
    let log = read_log(&dir.join(LOG_FILE), snapshot.snapshot_seq)?;
    let mut head_seq = snapshot.snapshot_seq;
    for (seq, op) in &log {
        replica.integrate(op);
        head_seq = *seq;
    }
    Ok(Loaded {
        replica,
        snapshot_seq: snapshot.snapshot_seq,
        head_seq,
        log,
    })
}

/// Entries with seq > `after`. Entries at or below it are leftovers of an
/// interrupted compaction and are skipped. A final line without a newline
/// is a torn append and is ignored.
fn read_log(path: &Path, after: u64) -> Result<Vec<(u64, Operation)>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut expected = after + 1;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            tracing::warn!(path = %path.display(), line = line_no, "dropping torn log tail");
            break;
        }
        if buf.trim().is_empty() {
            continue;
        }
        let entry: LogLine = serde_json::from_str(&buf).map_err(|e| StoreError::Corrupt {
            path: path.to_owned(),
            line: line_no,
            detail: e.to_string(),
        })?;
        if entry.seq <= after {
            continue;
        }
        if entry.seq != expected {
            return Err(StoreError::Corrupt {
                path: path.to_owned(),
                line: line_no,
                detail: format!("expected seq {expected}, found {}", entry.seq),
            });
        }
        expected += 1;
        out.push((entry.seq, entry.op));
    }
    Ok(out)
}

fn log_bytes(entries: &[(u64, Operation)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (seq, op) in entries {
        let line = serde_json::to_string(&LogLine { seq: *seq, op: op.clone() }).expect("ops serialize");
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    out
}

fn rewrite_log(dir: &Path, entries: &[(u64, Operation)], durable: bool) -> Result<()> {
    write_atomic(&dir.join(LOG_TMP), &dir.join(LOG_FILE), &log_bytes(entries), None, durable)
}

/// Write-temp, fsync, rename. `fault` fires between the temp write and the
/// rename. The fsyncs are skipped when not `durable`.
fn write_atomic(tmp: &Path, dest: &Path, bytes: &[u8], fault: Option<Fault>, durable: bool) -> Result<()> {
    {
        let mut f = File::create(tmp).map_err(io_err(tmp))?;
        f.write_all(bytes).map_err(io_err(tmp))?;
        if durable {
            f.sync_all().map_err(io_err(tmp))?;
        }
    }
    if fault == Some(Fault::CompactAfterTempWrite) {
        return Err(StoreError::Injected(Fault::CompactAfterTempWrite));
    }
    fs::rename(tmp, dest).map_err(io_err(dest))?;
    if let Some(dir) = dest.parent().filter(|_| durable) {
        sync_dir(dir);
    }
    Ok(())
}

fn sync_dir(dir: &Path) {
    // directory fsync is best effort; not every platform supports it
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

/// Write handle for one project. Owned by the project's single writer.
#[derive(Debug)]
pub struct ProjectStore {
    id: ProjectId,
    dir: PathBuf,
    log: File,
    snapshot_seq: u64,
    head_seq: u64,
    log_len: usize,
    compact_threshold: usize,
    fault: Option<Fault>,
    durable: bool,
}

impl ProjectStore {
    pub fn project_id(&self) -> &ProjectId {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn head_seq(&self) -> u64 {
        self.head_seq
    }

    pub fn snapshot_seq(&self) -> u64 {
        self.snapshot_seq
    }

    pub fn log_len(&self) -> usize {
        self.log_len
    }

    pub fn needs_compaction(&self) -> bool {
        self.log_len >= self.compact_threshold
    }

    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    /// Appends and syncs one op. `seq` must be exactly `head_seq + 1`.
    pub fn append(&mut self, seq: u64, op: &Operation) -> Result<()> {
        let expected = self.head_seq + 1;
        if seq != expected {
            return Err(StoreError::OutOfOrder { expected, got: seq });
        }
        if self.fault == Some(Fault::AppendIo) {
            return Err(StoreError::Injected(Fault::AppendIo));
        }
        let path = self.dir.join(LOG_FILE);
        let bytes = log_bytes(&[(seq, op.clone())]);
        self.log.write_all(&bytes).map_err(io_err(&path))?;
        if self.durable {
            self.log.sync_data().map_err(io_err(&path))?;
        }
        self.head_seq = seq;
        self.log_len += 1;
        Ok(())
    }

    /// Folds the log into a new snapshot at the current head. Tombstones
    /// whose entity creation is already integrated are dropped.
    pub fn compact(&mut self) -> Result<()> {
        let loaded = load_dir(&self.dir)?;
        debug_assert_eq!(loaded.head_seq, self.head_seq);
        let mut replica = loaded.replica;
        replica.compact_ledger();
        let snapshot = SnapshotFile {
            snapshot_seq: loaded.head_seq,
            doc: replica.doc().clone(),
            replica: ReplicaMeta::of(&replica),
        };
        write_atomic(
            &self.dir.join(SNAPSHOT_TMP),
            &self.dir.join(SNAPSHOT_FILE),
            render_snapshot(&snapshot).as_bytes(),
            self.fault.filter(|f| *f == Fault::CompactAfterTempWrite),
            self.durable,
        )?;
        self.snapshot_seq = loaded.head_seq;
        if self.fault == Some(Fault::CompactAfterRename) {
            return Err(StoreError::Injected(Fault::CompactAfterRename));
        }
        rewrite_log(&self.dir, &[], self.durable)?;
        let path = self.dir.join(LOG_FILE);
        self.log = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        self.log_len = 0;
        tracing::debug!(project = %self.id, seq = self.snapshot_seq, "compacted");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use board_core::model::Payload;
    use board_core::VersionStamp;

    fn project() -> Project {
        Project::new(ProjectId::new("StoreUnitTestProject01"), "t", "en")
    }

    fn chat(l: u64) -> Operation {
        Operation::new(VersionStamp::new(l, "a"), Payload::PostChat { text: format!("m{l}") })
    }

    #[test]
    fn out_of_order_append_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut ps = store.create(&project()).unwrap();
        ps.append(1, &chat(1)).unwrap();
        assert!(matches!(ps.append(3, &chat(3)), Err(StoreError::OutOfOrder { expected: 2, got: 3 })));
        assert!(matches!(ps.append(1, &chat(1)), Err(StoreError::OutOfOrder { .. })));
    }

    #[test]
    fn create_twice_fails() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.create(&project()).unwrap();
        assert!(matches!(store.create(&project()), Err(StoreError::Exists(_))));
        assert_eq!(store.list().unwrap(), vec![project().project_id]);
    }

    #[test]
    fn empty_log_loads_snapshot_state() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.create(&project()).unwrap();
        let loaded = store.load(&project().project_id).unwrap();
        assert_eq!(loaded.head_seq, 0);
        assert_eq!(canonical::canonical_bytes(loaded.replica.doc()), canonical::canonical_bytes(&project()));
    }

    #[test]
    fn rejects_path_like_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(matches!(store.load(&ProjectId::new("../etc")), Err(StoreError::BadProjectId(_))));
        assert!(matches!(store.load(&ProjectId::new("Missing")), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn appended_line_shape() {
        let bytes = log_bytes(&[(7, chat(2))]);
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["seq"], 7);
        assert_eq!(v["op"]["type"], "post_chat");
        assert_eq!(v["op"]["id"], "2@a");
    }
}
