//! Deterministic multi-client simulation against an in-process server.
//!
//! Clients and the server exchange the real wire messages over simulated
//! links. Time is a logical tick counter; every random choice comes from
//! one seeded generator, so a seed fully determines the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use board_core::canonical::canonical_bytes;
use board_core::{oracle, ClientId, Operation, Project, ProjectId, ReplicaState};
use board_server::{ClientMsg, Hubs, ServerMsg};
use board_store::Store;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SIM_PROJECT: &str = "SimulationProject00001";
/// Upper bound (exclusive) of the uniform link delay, in ticks.
pub const UNIFORM_MAX_DELAY: u64 = 50;
/// Messages an adversarial link holds back before releasing them reversed.
pub const REORDER_BUFFER: usize = 5;
pub const DUPLICATE_PROBABILITY: f64 = 0.05;
pub const RESYNC_PROBABILITY: f64 = 0.02;
pub const SIM_COMPACT_THRESHOLD: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayModel {
    None,
    Uniform,
    Adversarial,
}

impl DelayModel {
    pub const ALL: [DelayModel; 3] = [DelayModel::None, DelayModel::Uniform, DelayModel::Adversarial];
}

impl fmt::Display for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DelayModel::None => "none",
            DelayModel::Uniform => "uniform",
            DelayModel::Adversarial => "adversarial",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown delay model {0:?} (expected none, uniform or adversarial)")]
pub struct UnknownDelayModel(String);

impl FromStr for DelayModel {
    type Err = UnknownDelayModel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(DelayModel::None),
            "uniform" => Ok(DelayModel::Uniform),
            "adversarial" => Ok(DelayModel::Adversarial),
            other => Err(UnknownDelayModel(other.to_owned())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub clients: usize,
    pub ops_per_client: usize,
    pub seed: u64,
    pub delay: DelayModel,
    pub compact_threshold: usize,
}

impl SimConfig {
    pub fn new(clients: usize, ops_per_client: usize, seed: u64, delay: DelayModel) -> Self {
        Self {
            clients,
            ops_per_client,
            seed,
            delay,
            compact_threshold: SIM_COMPACT_THRESHOLD,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("need at least 2 clients, got {0}")]
    TooFewClients(usize),
    #[error("temp dir: {0}")]
    TempDir(#[source] std::io::Error),
    #[error("store: {0}")]
    Store(#[from] board_store::StoreError),
    #[error("server: {0}")]
    Server(#[from] board_server::Rejection),
    #[error("clock overflow at client {0}")]
    Clock(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReplicaReport {
    pub client: String,
    pub hash: String,
    pub ops_sent: usize,
    pub ops_integrated: usize,
    pub frames_received: usize,
    pub snapshots_adopted: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub clients: usize,
    pub ops_per_client: usize,
    pub delay: DelayModel,
    pub ops_total: usize,
    pub head_seq: u64,
    pub snapshot_seq: u64,
    pub duplicates_injected: usize,
    pub resyncs: usize,
    pub rejections: usize,
    pub logical_time: u64,
    pub replicas: Vec<ReplicaReport>,
    pub server_hash: String,
    pub recovered_hash: String,
    pub oracle_hash: String,
    pub converged: bool,
}

pub fn hash(doc: &Project) -> String {
    hex::encode(Sha256::digest(canonical_bytes(doc)))
}

#[derive(Clone, Debug)]
enum Frame {
    Up(usize, ClientMsg),
    Down(usize, ServerMsg),
}

/// A one-directional link with its delay model state.
#[derive(Default)]
struct Link {
    held: Vec<Frame>,
}

struct Client {
    replica: ReplicaState,
    /// Every op this client has seen, own or received. Re-integrated after
    /// adopting a snapshot.
    seen: BTreeMap<board_core::VersionStamp, Operation>,
    received: BTreeSet<u64>,
    ops_left: usize,
    ops_sent: usize,
    ops_integrated: usize,
    frames_received: usize,
    snapshots_adopted: usize,
}

impl Client {
    /// Highest seq below which nothing is missing.
    fn contiguous(&self) -> u64 {
        let mut n = 0;
        while self.received.contains(&(n + 1)) {
            n += 1;
        }
        n
    }

    fn integrate(&mut self, op: &Operation) {
        self.seen.entry(op.id.clone()).or_insert_with(|| op.clone());
        if self.replica.integrate(op) {
            self.ops_integrated += 1;
        }
    }
}

struct Sim {
    config: SimConfig,
    rng: ChaCha8Rng,
    now: u64,
    order: u64,
    queue: BTreeMap<(u64, u64), Frame>,
    up: Vec<Link>,
    down: Vec<Link>,
    emits: BTreeMap<(u64, usize), ()>,
    clients: Vec<Client>,
    duplicates: usize,
    resyncs: usize,
    rejections: usize,
    emitted: Vec<Operation>,
}

impl Sim {
    fn client_id(i: usize) -> ClientId {
        ClientId::new(format!("client{i}"))
    }

    fn schedule(&mut self, at: u64, frame: Frame) {
        self.order += 1;
        self.queue.insert((at, self.order), frame);
    }

    fn send(&mut self, frame: Frame) {
        let copies = if self.rng.gen_bool(DUPLICATE_PROBABILITY) {
            self.duplicates += 1;
            2
        } else {
            1
        };
        for _ in 0..copies {
            self.transmit(frame.clone());
        }
    }

    fn transmit(&mut self, frame: Frame) {
        match self.config.delay {
            DelayModel::None => self.schedule(self.now + 1, frame),
            DelayModel::Uniform => {
                let delay = self.rng.gen_range(0..UNIFORM_MAX_DELAY);
                self.schedule(self.now + 1 + delay, frame);
            }
            DelayModel::Adversarial => {
                let link = match &frame {
                    Frame::Up(c, _) => &mut self.up[*c],
                    Frame::Down(c, _) => &mut self.down[*c],
                };
                link.held.push(frame);
                if link.held.len() >= REORDER_BUFFER {
                    let batch = std::mem::take(&mut link.held);
                    self.release(batch);
                }
            }
        }
    }

    fn release(&mut self, batch: Vec<Frame>) {
        for frame in batch.into_iter().rev() {
            self.schedule(self.now + 1, frame);
        }
    }

    /// Releases whatever adversarial links still hold. Returns false when
    /// there was nothing left.
    fn flush_links(&mut self) -> bool {
        let mut batches = Vec::new();
        for link in self.up.iter_mut().chain(self.down.iter_mut()) {
            if !link.held.is_empty() {
                batches.push(std::mem::take(&mut link.held));
            }
        }
        let any = !batches.is_empty();
        for batch in batches {
            self.release(batch);
        }
        any
    }

    fn emit(&mut self, c: usize) -> Result<(), SimError> {
        let doc = self.clients[c].replica.doc();
        let payload = crate::workload::random_payload(&mut self.rng, doc).with_client_defaults(doc);
        let client = &mut self.clients[c];
        let stamp = client
            .replica
            .tick(None)
            .map_err(|_| SimError::Clock(client.replica.client.to_string()))?;
        let op = Operation::new(stamp, payload);
        client.integrate(&op);
        client.ops_left -= 1;
        client.ops_sent += 1;
        self.emitted.push(op.clone());
        self.send(Frame::Up(c, ClientMsg::Op { op }));
        if self.rng.gen_bool(RESYNC_PROBABILITY) {
            self.resyncs += 1;
            let from_seq = self.clients[c].contiguous();
            self.send(Frame::Up(c, ClientMsg::Resync { from_seq }));
        }
        if self.clients[c].ops_left > 0 {
            let at = self.now + self.rng.gen_range(1..=10);
            self.emits.insert((at, c), ());
        }
        Ok(())
    }

    fn server_recv(&mut self, hubs: &mut Hubs, c: usize, msg: ClientMsg) -> Result<(), SimError> {
        let hub = hubs.hub(&ProjectId::new(SIM_PROJECT))?;
        let client = Self::client_id(c);
        let result = match msg {
            ClientMsg::Op { op } => hub.op(&client, op),
            ClientMsg::Resync { from_seq } => hub.resync(&client, from_seq),
            ClientMsg::Hello { .. } => unreachable!("clients join before the run"),
        };
        match result {
            Ok(out) => {
                for d in out {
                    for to in d.to {
                        let idx = self.index_of(&to);
                        self.send(Frame::Down(idx, d.msg.clone()));
                    }
                }
            }
            Err(rejection) => {
                tracing::warn!(%rejection, "server rejected a simulated frame");
                self.rejections += 1;
            }
        }
        Ok(())
    }

    fn index_of(&self, client: &ClientId) -> usize {
        client.as_str()["client".len()..].parse().expect("simulated client ids")
    }

    fn client_recv(&mut self, c: usize, msg: ServerMsg) {
        let client = &mut self.clients[c];
        client.frames_received += 1;
        match msg {
            ServerMsg::Op { seq, op } => {
                if seq > 0 {
                    client.received.insert(seq);
                }
                client.integrate(&op);
            }
            ServerMsg::Snapshot { seq, doc, replica } => adopt(client, seq, doc, replica),
            ServerMsg::Presence { .. } | ServerMsg::Error { .. } => {}
        }
    }
}

/// Replaces the replica with the snapshot, then re-integrates every op the
/// client had seen; the snapshot's applied set filters those it covers.
fn adopt(client: &mut Client, seq: u64, doc: Project, meta: Option<board_core::replication::ReplicaMeta>) {
    let id = client.replica.client.clone();
    let clock = client.replica.local_clock();
    let mut meta = meta.unwrap_or_default();
    meta.clock = meta.clock.max(clock);
    client.replica = meta.restore(id, doc);
    for op in client.seen.values() {
        client.replica.integrate(op);
    }
    client.received.extend(1..=seq);
    client.snapshots_adopted += 1;
}

pub fn simulate(config: &SimConfig) -> Result<ConvergenceReport, SimError> {
    if config.clients < 2 {
        return Err(SimError::TooFewClients(config.clients));
    }
    let dir = tempfile::tempdir().map_err(SimError::TempDir)?;
    let store = Store::open(dir.path())?
        .with_compact_threshold(config.compact_threshold)
        .with_durability(false);
    let base = Project::new(ProjectId::new(SIM_PROJECT), "Simulation", "en");
    store.create(&base)?;
    let mut hubs = Hubs::new(store);

    let mut sim = Sim {
        config: config.clone(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        now: 0,
        order: 0,
        queue: BTreeMap::new(),
        up: (0..config.clients).map(|_| Link::default()).collect(),
        down: (0..config.clients).map(|_| Link::default()).collect(),
        emits: BTreeMap::new(),
        clients: Vec::new(),
        duplicates: 0,
        resyncs: 0,
        rejections: 0,
        emitted: Vec::new(),
    };

    // join: snapshot at seq 0, delivered directly
    let locales = ["en", "de", "fi"];
    for c in 0..config.clients {
        let hub = hubs.hub(&base.project_id)?;
        let out = hub.hello(Sim::client_id(c), 0, locales[c % locales.len()].to_owned())?;
        let mut client = Client {
            replica: ReplicaState::new(Sim::client_id(c), base.clone()),
            seen: BTreeMap::new(),
            received: BTreeSet::new(),
            ops_left: config.ops_per_client,
            ops_sent: 0,
            ops_integrated: 0,
            frames_received: 0,
            snapshots_adopted: 0,
        };
        if let Some(ServerMsg::Snapshot { seq, doc, replica }) = out.into_iter().next().map(|d| d.msg) {
            adopt(&mut client, seq, doc, replica);
        }
        sim.clients.push(client);
        if config.ops_per_client > 0 {
            let at = sim.rng.gen_range(1..=10);
            sim.emits.insert((at, c), ());
        }
    }

    loop {
        let next_frame = sim.queue.keys().next().map(|k| k.0);
        let next_emit = sim.emits.keys().next().map(|k| k.0);
        match (next_frame, next_emit) {
            (None, None) => {
                if !sim.flush_links() {
                    break;
                }
            }
            (Some(f), e) if e.is_none_or(|e| f <= e) => {
                let (key, frame) = sim.queue.pop_first().expect("peeked");
                sim.now = key.0;
                match frame {
                    Frame::Up(c, msg) => sim.server_recv(&mut hubs, c, msg)?,
                    Frame::Down(c, msg) => sim.client_recv(c, msg),
                }
            }
            _ => {
                let ((at, c), ()) = sim.emits.pop_first().expect("peeked");
                sim.now = at;
                sim.emit(c)?;
            }
        }
    }

    let hub = hubs.hub(&base.project_id)?;
    let server_hash = hash(hub.doc());
    let head_seq = hub.head_seq();
    let snapshot_seq = hub.snapshot_seq();
    let recovered = hubs.store().load(&base.project_id)?;
    let recovered_hash = hash(recovered.replica.doc());
    let oracle_hash = hash(&oracle::replay(&base, &sim.emitted));

    let replicas: Vec<ReplicaReport> = sim
        .clients
        .iter()
        .enumerate()
        .map(|(i, c)| ReplicaReport {
            client: Sim::client_id(i).to_string(),
            hash: hash(c.replica.doc()),
            ops_sent: c.ops_sent,
            ops_integrated: c.ops_integrated,
            frames_received: c.frames_received,
            snapshots_adopted: c.snapshots_adopted,
        })
        .collect();
    let ops_total = sim.emitted.len();
    let converged = sim.rejections == 0
        && head_seq == ops_total as u64
        && server_hash == oracle_hash
        && recovered_hash == oracle_hash
        && replicas.iter().all(|r| r.hash == oracle_hash);

    Ok(ConvergenceReport {
        seed: config.seed,
        clients: config.clients,
        ops_per_client: config.ops_per_client,
        delay: config.delay,
        ops_total,
        head_seq,
        snapshot_seq,
        duplicates_injected: sim.duplicates,
        resyncs: sim.resyncs,
        rejections: sim.rejections,
        logical_time: sim.now,
        replicas,
        server_hash,
        recovered_hash,
        oracle_hash,
        converged,
    })
}
