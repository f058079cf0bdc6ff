//! Scripted multi-client sessions replayed through the in-process server
//! and compared against checked-in golden files.
//!
//! A script names its clients and lists steps. Each step is an operation
//! body without an `id`; the issuing client stamps it. A step may `bind`
//! the new op id to a name, and later steps refer to it as `"$name"`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use board_core::canonical::to_canonical_string;
use board_core::navigation::{backlinks, jump_points, LinkTarget};
use board_core::templates::check_transition;
use board_core::{canonical, ClientId, Operation, Payload, Project, ProjectId, ReplicaState};
use board_server::{Hubs, ServerMsg};
use board_store::{export_doc, Store};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, Deserialize)]
pub struct Script {
    pub project: ProjectSpec,
    pub clients: Vec<ClientSpec>,
    pub steps: Vec<Step>,
    pub goldens: Goldens,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ProjectSpec {
    pub id: String,
    pub title: String,
    pub locale: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ClientSpec {
    pub id: String,
    pub locale: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct Step {
    pub client: String,
    #[serde(default)]
    pub bind: Option<String>,
    pub op: Value,
}

/// Golden file names, relative to the script.
#[derive(Clone, Debug, Deserialize)]
pub struct Goldens {
    pub export: PathBuf,
    pub directory: PathBuf,
    pub backlinks: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("script {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("step {step}: {detail}")]
    BadStep { step: usize, detail: String },
    #[error("store: {0}")]
    Store(#[from] board_store::StoreError),
    #[error("server rejected step {step}: {rejection}")]
    Rejected {
        step: usize,
        rejection: board_server::Rejection,
    },
    #[error("client {0} diverged from the server")]
    Diverged(String),
}

/// The three artifacts a replay produces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifacts {
    pub export: String,
    pub directory: String,
    pub backlinks: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    pub golden: PathBuf,
    pub diff: String,
}

#[derive(Clone, Debug)]
pub struct Replay {
    pub doc: Project,
    pub artifacts: Artifacts,
    /// Canonical bytes of each client's replica, keyed by `client@locale`.
    pub replicas: BTreeMap<String, Vec<u8>>,
}

pub fn load_script(path: &Path) -> Result<Script, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ScenarioError::Parse {
        path: path.to_owned(),
        source,
    })
}

fn substitute(value: &mut Value, names: &BTreeMap<String, String>, step: usize) -> Result<(), ScenarioError> {
    match value {
        Value::String(s) if s.starts_with('$') => {
            let id = names.get(&s[1..]).ok_or_else(|| ScenarioError::BadStep {
                step,
                detail: format!("unbound reference {s}"),
            })?;
            *s = id.clone();
        }
        Value::Array(items) => {
            for item in items {
                substitute(item, names, step)?;
            }
        }
        Value::Object(map) => {
            for item in map.values_mut() {
                substitute(item, names, step)?;
            }
        }
        _ => {}
    }
    Ok(())
}

pub fn replay(script: &Script) -> Result<Replay, ScenarioError> {
    let dir = tempfile::tempdir().map_err(|source| ScenarioError::Io {
        path: std::env::temp_dir(),
        source,
    })?;
    let store = Store::open(dir.path())?.with_durability(false);
    let project_id = ProjectId::new(script.project.id.clone());
    let base = Project::new(project_id.clone(), script.project.title.clone(), script.project.locale.clone());
    store.create(&base)?;
    let mut hubs = Hubs::new(store);
    let reject = |step| move |rejection| ScenarioError::Rejected { step, rejection };

    let mut replicas: BTreeMap<ClientId, ReplicaState> = BTreeMap::new();
    for c in &script.clients {
        let client = ClientId::new(c.id.clone());
        let out = hubs.hub(&project_id).map_err(reject(0))?.hello(client.clone(), 0, c.locale.clone()).map_err(reject(0))?;
        let mut replica = ReplicaState::new(client.clone(), base.clone());
        if let Some(ServerMsg::Snapshot { doc, replica: meta, .. }) = out.into_iter().next().map(|d| d.msg) {
            replica = meta.unwrap_or_default().restore(client.clone(), doc);
        }
        replicas.insert(client, replica);
    }

    let mut names: BTreeMap<String, String> = BTreeMap::new();
    for (i, step) in script.steps.iter().enumerate() {
        let n = i + 1;
        let client = ClientId::new(step.client.clone());
        let replica = replicas.get_mut(&client).ok_or_else(|| ScenarioError::BadStep {
            step: n,
            detail: format!("unknown client {}", step.client),
        })?;
        let mut body = step.op.clone();
        substitute(&mut body, &names, n)?;
        let stamp = replica.tick(None).map_err(|e| ScenarioError::BadStep {
            step: n,
            detail: e.to_string(),
        })?;
        let Value::Object(ref mut map) = body else {
            return Err(ScenarioError::BadStep {
                step: n,
                detail: "op must be an object".into(),
            });
        };
        map.insert("id".into(), Value::String(stamp.to_string()));
        let mut op: Operation = serde_json::from_value(body).map_err(|e| ScenarioError::BadStep {
            step: n,
            detail: e.to_string(),
        })?;
        op.payload = op.payload.with_client_defaults(replica.doc());
        if let Payload::SetStage { stage } = &op.payload {
            check_transition(replica.doc().stage, *stage).map_err(|e| ScenarioError::BadStep {
                step: n,
                detail: e.to_string(),
            })?;
        }
        replica.integrate(&op);
        if let Some(name) = &step.bind {
            names.insert(name.clone(), op.id.to_string());
        }
        let out = hubs.hub(&project_id).map_err(reject(n))?.op(&client, op).map_err(reject(n))?;
        for d in out {
            if let ServerMsg::Op { op, .. } = d.msg {
                for to in d.to {
                    if let Some(r) = replicas.get_mut(&to) {
                        r.integrate(&op);
                    }
                }
            }
        }
    }

    let doc = hubs.hub(&project_id).map_err(reject(0))?.doc().clone();
    let server_bytes = canonical::canonical_bytes(&doc);
    let locales: BTreeMap<&str, &str> = script.clients.iter().map(|c| (c.id.as_str(), c.locale.as_str())).collect();
    let mut by_client = BTreeMap::new();
    for (client, replica) in &replicas {
        let bytes = canonical::canonical_bytes(replica.doc());
        if bytes != server_bytes {
            return Err(ScenarioError::Diverged(client.to_string()));
        }
        by_client.insert(format!("{client}@{}", locales[client.as_str()]), bytes);
    }
    Ok(Replay {
        artifacts: artifacts(&doc),
        doc,
        replicas: by_client,
    })
}

#[derive(Serialize)]
struct Backlink {
    target: Target,
    sources: Vec<Target>,
}

#[derive(Serialize)]
struct Target {
    board: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

pub fn artifacts(doc: &Project) -> Artifacts {
    let mut links = Vec::new();
    for board in doc.boards.values() {
        let mut targets = vec![LinkTarget::Board(board.id.clone())];
        targets.extend(board.notes.keys().map(|n| LinkTarget::Note(board.id.clone(), n.clone())));
        for target in targets {
            let sources = backlinks(doc, &target);
            if sources.is_empty() {
                continue;
            }
            let target = match target {
                LinkTarget::Board(b) => Target {
                    board: b.to_string(),
                    note: None,
                },
                LinkTarget::Note(b, n) => Target {
                    board: b.to_string(),
                    note: Some(n.to_string()),
                },
            };
            links.push(Backlink {
                target,
                sources: sources
                    .into_iter()
                    .map(|(b, n)| Target {
                        board: b.to_string(),
                        note: Some(n.to_string()),
                    })
                    .collect(),
            });
        }
    }
    Artifacts {
        export: export_doc(doc),
        directory: to_canonical_string(&jump_points(doc)),
        backlinks: to_canonical_string(&links),
    }
}

/// Line diff around the first difference.
pub fn diff(expected: &str, actual: &str) -> String {
    let e: Vec<&str> = expected.lines().collect();
    let a: Vec<&str> = actual.lines().collect();
    let Some(first) = (0..e.len().max(a.len())).find(|&i| e.get(i) != a.get(i)) else {
        return String::new();
    };
    let from = first.saturating_sub(3);
    let mut out = format!("first difference at line {}\n", first + 1);
    for i in from..(first + 4).min(e.len()) {
        out.push_str(&format!("-{:5} {}\n", i + 1, e[i]));
    }
    for i in from..(first + 4).min(a.len()) {
        out.push_str(&format!("+{:5} {}\n", i + 1, a[i]));
    }
    out
}

/// Compares each artifact with its golden file, or rewrites the goldens.
pub fn check_goldens(
    script_path: &Path,
    goldens: &Goldens,
    artifacts: &Artifacts,
    update: bool,
) -> Result<Vec<Mismatch>, ScenarioError> {
    let base = script_path.parent().unwrap_or(Path::new("."));
    let pairs = [
        (&goldens.export, &artifacts.export),
        (&goldens.directory, &artifacts.directory),
        (&goldens.backlinks, &artifacts.backlinks),
    ];
    let mut mismatches = Vec::new();
    for (name, actual) in pairs {
        let path = base.join(name);
        if update {
            std::fs::write(&path, actual).map_err(|source| ScenarioError::Io {
                path: path.clone(),
                source,
            })?;
            continue;
        }
        let expected = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(source) => return Err(ScenarioError::Io { path, source }),
        };
        if &expected != actual {
            mismatches.push(Mismatch {
                diff: diff(&expected, actual),
                golden: path,
            });
        }
    }
    Ok(mismatches)
}
