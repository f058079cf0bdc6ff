//! The per-project sequencer. Transport independent: every call returns
//! the messages to deliver and to whom, and the caller owns the sockets.

use std::collections::{BTreeMap, HashMap};

use board_core::replication::ReplicaMeta;
use board_core::{ClientId, Operation, Project, ProjectId, ReplicaState, VersionStamp};
use board_store::{Loaded, ProjectStore, Store, StoreError};
use rand::distributions::Alphanumeric;
use rand::Rng;

use crate::protocol::{ErrorCode, PresenceEntry, Rejection, ServerMsg};

/// One message and its recipients.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub to: Vec<ClientId>,
    pub msg: ServerMsg,
}

impl Delivery {
    fn one(to: &ClientId, msg: ServerMsg) -> Self {
        Self {
            to: vec![to.clone()],
            msg,
        }
    }
}

/// Fresh 22-character `[A-Za-z0-9]` project token.
pub fn new_project_token(rng: &mut impl Rng) -> ProjectId {
    let token: String = rng
        .sample_iter(&Alphanumeric)
        .take(board_core::model::PROJECT_ID_LEN)
        .map(char::from)
        .collect();
    ProjectId::new(token)
}

#[derive(Debug)]
pub struct ProjectHub {
    id: ProjectId,
    store: ProjectStore,
    replica: ReplicaState,
    /// Sequenced ops after the store's snapshot, in seq order.
    log: Vec<(u64, Operation)>,
    seq_of: HashMap<VersionStamp, u64>,
    sessions: BTreeMap<ClientId, String>,
}

impl ProjectHub {
    pub fn open(store: &Store, id: &ProjectId) -> Result<Self, StoreError> {
        let (handle, loaded) = store.open_project(id)?;
        Ok(Self::from_loaded(id.clone(), handle, loaded))
    }

    fn from_loaded(id: ProjectId, store: ProjectStore, loaded: Loaded) -> Self {
        let seq_of = loaded.log.iter().map(|(seq, op)| (op.id.clone(), *seq)).collect();
        Self {
            id,
            store,
            replica: loaded.replica,
            log: loaded.log,
            seq_of,
            sessions: BTreeMap::new(),
        }
    }

    pub fn project_id(&self) -> &ProjectId {
        &self.id
    }

    pub fn doc(&self) -> &Project {
        self.replica.doc()
    }

    pub fn head_seq(&self) -> u64 {
        self.store.head_seq()
    }

    pub fn snapshot_seq(&self) -> u64 {
        self.store.snapshot_seq()
    }

    /// Ops still held in the log, i.e. after the last snapshot.
    pub fn log(&self) -> &[(u64, Operation)] {
        &self.log
    }

    pub fn store_mut(&mut self) -> &mut ProjectStore {
        &mut self.store
    }

    pub fn presence(&self) -> Vec<PresenceEntry> {
        self.sessions
            .iter()
            .map(|(client, locale)| PresenceEntry {
                client: client.to_string(),
                locale: locale.clone(),
            })
            .collect()
    }

    pub fn locale_of(&self, client: &ClientId) -> Option<&str> {
        self.sessions.get(client).map(String::as_str)
    }

    fn presence_broadcast(&self) -> Delivery {
        Delivery {
            to: self.sessions.keys().cloned().collect(),
            msg: ServerMsg::Presence {
                clients: self.presence(),
            },
        }
    }

    /// Snapshot when the client has nothing, is behind the last snapshot,
    /// or claims a seq this server never issued. Otherwise the missing ops.
    fn catch_up(&self, to: &ClientId, last_seq: u64) -> Vec<Delivery> {
        let head = self.head_seq();
        if last_seq == 0 || last_seq < self.snapshot_seq() || last_seq > head {
            return vec![Delivery::one(
                to,
                ServerMsg::Snapshot {
                    seq: head,
                    doc: self.doc().clone(),
                    replica: Some(ReplicaMeta::of(&self.replica)),
                },
            )];
        }
        self.log
            .iter()
            .filter(|(seq, _)| *seq > last_seq)
            .map(|(seq, op)| {
                Delivery::one(
                    to,
                    ServerMsg::Op {
                        seq: *seq,
                        op: op.clone(),
                    },
                )
            })
            .collect()
    }

    pub fn hello(&mut self, client: ClientId, last_seq: u64, locale: String) -> Result<Vec<Delivery>, Rejection> {
        if client.as_str().is_empty() {
            return Err(Rejection::new(ErrorCode::BadMessage, "empty client id"));
        }
        if self.sessions.contains_key(&client) {
            return Err(Rejection::new(ErrorCode::ClientIdTaken, client.to_string()));
        }
        let mut out = self.catch_up(&client, last_seq);
        self.sessions.insert(client, locale);
        out.push(self.presence_broadcast());
        Ok(out)
    }

    pub fn resync(&self, client: &ClientId, from_seq: u64) -> Result<Vec<Delivery>, Rejection> {
        self.joined(client)?;
        Ok(self.catch_up(client, from_seq))
    }

    pub fn leave(&mut self, client: &ClientId) -> Vec<Delivery> {
        if self.sessions.remove(client).is_none() {
            return Vec::new();
        }
        vec![self.presence_broadcast()]
    }

    fn joined(&self, client: &ClientId) -> Result<(), Rejection> {
        if self.sessions.contains_key(client) {
            Ok(())
        } else {
            Err(Rejection::new(ErrorCode::NotJoined, "send hello first"))
        }
    }

    /// Sequences, persists, integrates and broadcasts one op. The sender
    /// gets the broadcast too; that echo is its ack.
    pub fn op(&mut self, client: &ClientId, op: Operation) -> Result<Vec<Delivery>, Rejection> {
        self.joined(client)?;
        if let Some(project) = &op.project {
            if project != &self.id {
                return Err(Rejection::new(ErrorCode::WrongProject, project.to_string()));
            }
        }
        op.check().map_err(|e| Rejection::new(ErrorCode::BadOp, e.to_string()))?;
        if &op.id.client != client {
            return Err(Rejection::new(
                ErrorCode::BadOp,
                format!("op {} is not stamped by {client}", op.id),
            ));
        }
        if self.replica.has_applied(&op.id) {
            // seq 0 when the original has been folded into a snapshot
            let seq = self.seq_of.get(&op.id).copied().unwrap_or(0);
            return Ok(vec![Delivery::one(client, ServerMsg::Op { seq, op })]);
        }
        let seq = self.head_seq() + 1;
        self.store.append(seq, &op).map_err(|e| {
            tracing::error!(project = %self.id, error = %e, "append failed");
            Rejection::new(ErrorCode::StorageError, e.to_string())
        })?;
        self.replica.integrate(&op);
        self.seq_of.insert(op.id.clone(), seq);
        self.log.push((seq, op.clone()));
        let out = vec![Delivery {
            to: self.sessions.keys().cloned().collect(),
            msg: ServerMsg::Op { seq, op },
        }];
        if self.store.needs_compaction() {
            self.compact();
        }
        Ok(out)
    }

    /// Failure leaves the previous snapshot and log in place, so it is
    /// logged and retried on the next trigger.
    pub fn compact(&mut self) {
        match self.store.compact() {
            Ok(()) => {
                self.replica.compact_ledger();
                let cut = self.store.snapshot_seq();
                self.log.retain(|(seq, _)| *seq > cut);
                self.seq_of.retain(|_, seq| *seq > cut);
            }
            Err(e) => tracing::warn!(project = %self.id, error = %e, "compaction failed"),
        }
    }
}

/// Synchronous registry of hubs over one store.
#[derive(Debug)]
pub struct Hubs {
    store: Store,
    hubs: HashMap<ProjectId, ProjectHub>,
}

impl Hubs {
    pub fn new(store: Store) -> Self {
        Self {
            store,
            hubs: HashMap::new(),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn create_project(&mut self, title: &str, locale: &str, rng: &mut impl Rng) -> Result<ProjectId, StoreError> {
        loop {
            let id = new_project_token(rng);
            if self.store.exists(&id) {
                continue;
            }
            self.store.create(&Project::new(id.clone(), title, locale))?;
            return Ok(id);
        }
    }

    /// Loads the hub on first use.
    pub fn hub(&mut self, id: &ProjectId) -> Result<&mut ProjectHub, Rejection> {
        if !self.hubs.contains_key(id) {
            let hub = ProjectHub::open(&self.store, id).map_err(|e| match e {
                StoreError::NotFound(_) | StoreError::BadProjectId(_) => {
                    Rejection::new(ErrorCode::NoSuchProject, id.to_string())
                }
                other => Rejection::new(ErrorCode::StorageError, other.to_string()),
            })?;
            self.hubs.insert(id.clone(), hub);
        }
        Ok(self.hubs.get_mut(id).expect("inserted above"))
    }
}
