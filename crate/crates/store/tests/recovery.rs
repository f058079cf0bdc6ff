use board_core::canonical::canonical_bytes;
use board_core::model::Payload;
use board_core::replication::ReplicaState;
use board_core::{BoardId, NoteId, Operation, Point, Project, ProjectId, TemplateKind, VersionStamp};
use board_store::{export_doc, import, Fault, Store, StoreError, LOG_FILE, SNAPSHOT_FILE};
use std::io::Write;

fn project() -> Project {
    Project::new(ProjectId::new("RecoveryTestProject001"), "Recovery", "en")
}

/// Board, notes, edits, a connection and deletes, all from one client.
fn script(n: u64) -> Vec<Operation> {
    let s = |l: u64| VersionStamp::new(l, "w");
    let board = BoardId(s(1));
    let mut ops = vec![Operation::new(
        s(1),
        Payload::CreateBoard {
            kind: TemplateKind::Kanban,
            title: "b".into(),
            perspective: Default::default(),
            technique: None,
        },
    )];
    let mut notes: Vec<NoteId> = Vec::new();
    for l in 2..=n {
        let payload = match l % 6 {
            0 | 1 => Payload::CreateNote {
                board: board.clone(),
                position: Point::new((l % 10) as f64 / 9.0, (l % 7) as f64 / 6.0),
                size: None,
                text: format!("n{l}"),
                color: None,
            },
            2 if !notes.is_empty() => Payload::MoveNote {
                note: notes[l as usize % notes.len()].clone(),
                position: Point::new(1.2, -0.1),
            },
            3 if notes.len() >= 2 => Payload::CreateConnection {
                from: notes[0].clone(),
                to: notes[notes.len() - 1].clone(),
            },
            4 if notes.len() > 3 => Payload::DeleteNote { note: notes.remove(1) },
            _ => Payload::PostChat { text: format!("c{l}") },
        };
        if matches!(payload, Payload::CreateNote { .. }) {
            notes.push(NoteId(s(l)));
        }
        ops.push(Operation::new(s(l), payload));
    }
    ops
}

fn expected(ops: &[Operation]) -> Vec<u8> {
    let mut r = ReplicaState::new("x".into(), project());
    for op in ops {
        r.integrate(op);
    }
    canonical_bytes(r.doc())
}

#[test]
fn reopen_after_crash_recovers_every_acked_op() {
    let dir = tempfile::tempdir().unwrap();
    let ops = script(120);
    {
        let store = Store::open(dir.path()).unwrap();
        let mut ps = store.create(&project()).unwrap();
        for (i, op) in ops.iter().enumerate() {
            ps.append(i as u64 + 1, op).unwrap();
        }
        // dropped without any shutdown step
    }
    let store = Store::open(dir.path()).unwrap();
    let (ps, loaded) = store.open_project(&project().project_id).unwrap();
    assert_eq!(loaded.head_seq, 120);
    assert_eq!(ps.head_seq(), 120);
    assert_eq!(canonical_bytes(loaded.replica.doc()), expected(&ops));
}

#[test]
fn torn_tail_is_dropped_and_appends_continue() {
    let dir = tempfile::tempdir().unwrap();
    let ops = script(30);
    let store = Store::open(dir.path()).unwrap();
    let mut ps = store.create(&project()).unwrap();
    for (i, op) in ops[..20].iter().enumerate() {
        ps.append(i as u64 + 1, op).unwrap();
    }
    let log = ps.dir().join(LOG_FILE);
    drop(ps);
    // half-written line for seq 21
    let mut f = std::fs::OpenOptions::new().append(true).open(&log).unwrap();
    f.write_all(br#"{"seq":21,"op":{"id":"21@w","ty"#).unwrap();
    drop(f);

    let (mut ps, loaded) = store.open_project(&project().project_id).unwrap();
    assert_eq!(loaded.head_seq, 20);
    assert_eq!(canonical_bytes(loaded.replica.doc()), expected(&ops[..20]));
    for (i, op) in ops[20..].iter().enumerate() {
        ps.append(i as u64 + 21, op).unwrap();
    }
    let loaded = store.load(&project().project_id).unwrap();
    assert_eq!(canonical_bytes(loaded.replica.doc()), expected(&ops));
}

#[test]
fn gap_in_log_is_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let ps = store.create(&project()).unwrap();
    let log = ps.dir().join(LOG_FILE);
    let op = serde_json::to_string(&script(1)[0]).unwrap();
    std::fs::write(&log, format!("{{\"seq\":2,\"op\":{op}}}\n")).unwrap();
    assert!(matches!(store.load(&project().project_id), Err(StoreError::Corrupt { .. })));
}

#[test]
fn compaction_preserves_state_and_trims_log() {
    let dir = tempfile::tempdir().unwrap();
    let ops = script(200);
    let store = Store::open(dir.path()).unwrap().with_compact_threshold(50);
    let mut ps = store.create(&project()).unwrap();
    for (i, op) in ops.iter().enumerate() {
        ps.append(i as u64 + 1, op).unwrap();
        if ps.needs_compaction() {
            ps.compact().unwrap();
        }
    }
    assert_eq!(ps.snapshot_seq(), 200);
    assert_eq!(ps.log_len(), 0);
    assert_eq!(std::fs::read(ps.dir().join(LOG_FILE)).unwrap(), b"");
    let loaded = store.load(&project().project_id).unwrap();
    assert_eq!(loaded.head_seq, 200);
    assert_eq!(canonical_bytes(loaded.replica.doc()), expected(&ops));

    // compacting again at the same head rewrites an identical snapshot
    let before = std::fs::read(ps.dir().join(SNAPSHOT_FILE)).unwrap();
    ps.compact().unwrap();
    assert_eq!(std::fs::read(ps.dir().join(SNAPSHOT_FILE)).unwrap(), before);
}

#[test]
fn late_duplicates_after_compaction_change_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let ops = script(60);
    let store = Store::open(dir.path()).unwrap();
    let mut ps = store.create(&project()).unwrap();
    for (i, op) in ops.iter().enumerate() {
        ps.append(i as u64 + 1, op).unwrap();
    }
    ps.compact().unwrap();
    let mut replica = store.load(&project().project_id).unwrap().replica;
    for op in &ops {
        assert!(!replica.integrate(op));
    }
    assert_eq!(canonical_bytes(replica.doc()), expected(&ops));
}

#[test]
fn crash_mid_compaction_leaves_a_valid_pair() {
    for fault in [Fault::CompactAfterTempWrite, Fault::CompactAfterRename] {
        let dir = tempfile::tempdir().unwrap();
        let ops = script(80);
        let store = Store::open(dir.path()).unwrap();
        let mut ps = store.create(&project()).unwrap();
        for (i, op) in ops[..40].iter().enumerate() {
            ps.append(i as u64 + 1, op).unwrap();
        }
        ps.compact().unwrap();
        for (i, op) in ops[40..].iter().enumerate() {
            ps.append(i as u64 + 41, op).unwrap();
        }
        ps.set_fault(Some(fault));
        assert!(matches!(ps.compact(), Err(StoreError::Injected(f)) if f == fault));
        drop(ps);

        let (mut ps, loaded) = store.open_project(&project().project_id).unwrap();
        assert_eq!(loaded.head_seq, 80, "{fault:?}");
        assert_eq!(canonical_bytes(loaded.replica.doc()), expected(&ops), "{fault:?}");
        ps.compact().unwrap();
        let loaded = store.load(&project().project_id).unwrap();
        assert_eq!(canonical_bytes(loaded.replica.doc()), expected(&ops), "{fault:?}");
    }
}

#[test]
fn failed_append_is_not_acked() {
    let dir = tempfile::tempdir().unwrap();
    let ops = script(3);
    let store = Store::open(dir.path()).unwrap();
    let mut ps = store.create(&project()).unwrap();
    ps.append(1, &ops[0]).unwrap();
    ps.set_fault(Some(Fault::AppendIo));
    assert!(ps.append(2, &ops[1]).is_err());
    assert_eq!(ps.head_seq(), 1);
    drop(ps);
    let loaded = store.load(&project().project_id).unwrap();
    assert_eq!(loaded.head_seq, 1);
    assert_eq!(canonical_bytes(loaded.replica.doc()), expected(&ops[..1]));
}

#[test]
fn export_import_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ops = script(90);
    let store = Store::open(dir.path()).unwrap();
    let mut ps = store.create(&project()).unwrap();
    for (i, op) in ops.iter().enumerate() {
        ps.append(i as u64 + 1, op).unwrap();
    }
    let json = store.export(&project().project_id).unwrap();
    let doc = import(&json).unwrap();
    assert_eq!(canonical_bytes(&doc), expected(&ops));
    assert_eq!(export_doc(&doc), json);

    // an imported doc can seed a new project under the same id elsewhere
    let other = tempfile::tempdir().unwrap();
    let store2 = Store::open(other.path()).unwrap();
    store2.create(&doc).unwrap();
    assert_eq!(store2.export(&doc.project_id).unwrap(), json);
}

#[test]
fn import_rejects_foreign_json() {
    assert!(import(r#"{"format":"other","version":1,"project":{}}"#).is_err());
    assert!(import("not json").is_err());
}
