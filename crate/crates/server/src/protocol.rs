//! Wire messages. One JSON object per text frame, discriminated by `"t"`.

use board_core::replication::ReplicaMeta;
use board_core::{Operation, Project};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NoSuchProject,
    ClientIdTaken,
    WrongProject,
    BadOp,
    BadMessage,
    NotJoined,
    StorageError,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 7] = [
        ErrorCode::NoSuchProject,
        ErrorCode::ClientIdTaken,
        ErrorCode::WrongProject,
        ErrorCode::BadOp,
        ErrorCode::BadMessage,
        ErrorCode::NotJoined,
        ErrorCode::StorageError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::NoSuchProject => "no_such_project",
            ErrorCode::ClientIdTaken => "client_id_taken",
            ErrorCode::WrongProject => "wrong_project",
            ErrorCode::BadOp => "bad_op",
            ErrorCode::BadMessage => "bad_message",
            ErrorCode::NotJoined => "not_joined",
            ErrorCode::StorageError => "storage_error",
        }
    }

    pub fn label_key(self) -> String {
        format!("error.{}", self.as_str())
    }
}

/// An error reply before localization.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{}: {detail}", code.as_str())]
pub struct Rejection {
    pub code: ErrorCode,
    pub detail: String,
}

impl Rejection {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum ClientMsg {
    Hello {
        project: String,
        client: String,
        last_seq: u64,
        locale: String,
    },
    Op {
        op: Operation,
    },
    Resync {
        from_seq: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceEntry {
    pub client: String,
    pub locale: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum ServerMsg {
    /// `replica` carries the apply ledger and integrated op ids so the
    /// receiver can keep integrating out-of-order ops on top of `doc`.
    Snapshot {
        seq: u64,
        doc: Project,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        replica: Option<ReplicaMeta>,
    },
    Op { seq: u64, op: Operation },
    Presence { clients: Vec<PresenceEntry> },
    Error { code: ErrorCode, detail: String },
}

impl ServerMsg {
    /// Compact JSON with object keys sorted.
    pub fn encode(&self) -> String {
        let value = serde_json::to_value(self).expect("server messages serialize");
        value.to_string()
    }
}

/// Parses a client frame. An `op` frame whose payload does not parse is
/// reported as `bad_op` so the session can carry on; anything else that
/// does not parse is `bad_message`.
pub fn decode(text: &str) -> Result<ClientMsg, Rejection> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Rejection::new(ErrorCode::BadMessage, e.to_string()))?;
    let is_op = value.get("t").and_then(|t| t.as_str()) == Some("op");
    serde_json::from_value(value).map_err(|e| {
        let code = if is_op { ErrorCode::BadOp } else { ErrorCode::BadMessage };
        Rejection::new(code, e.to_string())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use board_core::model::Payload;
    use board_core::VersionStamp;

    #[test]
    fn hello_shape() {
        let msg = decode(r#"{"t":"hello","project":"p","client":"c","last_seq":4,"locale":"de","extra":1}"#).unwrap();
        assert_eq!(
            msg,
            ClientMsg::Hello {
                project: "p".into(),
                client: "c".into(),
                last_seq: 4,
                locale: "de".into()
            }
        );
    }

    #[test]
    fn malformed_op_is_bad_op() {
        let err = decode(r#"{"t":"op","op":{"id":"1@a","type":"move_note"}}"#).unwrap_err();
        assert_eq!(err.code, ErrorCode::BadOp);
        let err = decode(r#"{"t":"nope"}"#).unwrap_err();
        assert_eq!(err.code, ErrorCode::BadMessage);
        let err = decode("{").unwrap_err();
        assert_eq!(err.code, ErrorCode::BadMessage);
    }

    #[test]
    fn server_frames() {
        let op = Operation::new(VersionStamp::new(3, "a"), Payload::PostChat { text: "hi".into() });
        let text = ServerMsg::Op { seq: 9, op }.encode();
        assert_eq!(text, r#"{"op":{"id":"3@a","text":"hi","type":"post_chat"},"seq":9,"t":"op"}"#);
        let text = ServerMsg::Error {
            code: ErrorCode::NoSuchProject,
            detail: "x".into(),
        }
        .encode();
        assert_eq!(text, r#"{"code":"no_such_project","detail":"x","t":"error"}"#);
    }

    #[test]
    fn codes_match_catalog() {
        let names: Vec<_> = ErrorCode::ALL.iter().map(|c| c.as_str()).collect();
        assert_eq!(names, board_core::i18n::ERROR_CODES);
    }
}
