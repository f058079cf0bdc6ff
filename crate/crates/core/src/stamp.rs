//! Version stamps and the identifiers derived from them.
//!
//! A [`VersionStamp`] is a `(lamport, client)` pair. Stamps are totally
//! ordered: the lamport counter is compared first and ties are broken by the
//! lexicographic order of the client id, the larger one winning.
//!
//! Every replicated entity (board, note, connection, attachment, nav ref,
//! chat message) is identified by the stamp of the operation that created
//! it, so ids are globally unique without any coordination.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Opaque client identifier. Unique per project at any instant.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(String);

impl ClientId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClientId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// `(lamport, client)` pair giving a total order over operations.
///
/// Rendered on the wire and on disk as `"<lamport>@<client>"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VersionStamp {
    pub lamport: u64,
    pub client: ClientId,
}

impl VersionStamp {
    /// The stamp every initial field value carries. Any stamp produced by
    /// [`crate::replication::tick`] supersedes it.
    pub const ZERO: VersionStamp = VersionStamp {
        lamport: 0,
        client: ClientId(String::new()),
    };

    pub fn new(lamport: u64, client: impl Into<String>) -> Self {
        Self {
            lamport,
            client: ClientId::new(client),
        }
    }
}

impl Ord for VersionStamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.lamport
            .cmp(&other.lamport)
            .then_with(|| self.client.cmp(&other.client))
    }
}

impl PartialOrd for VersionStamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for VersionStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.lamport, self.client)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed version stamp {0:?}, expected \"<lamport>@<client>\"")]
pub struct ParseStampError(pub String);

impl FromStr for VersionStamp {
    type Err = ParseStampError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lamport, client) = s.split_once('@').ok_or_else(|| ParseStampError(s.to_owned()))?;
        if lamport.is_empty() || !lamport.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseStampError(s.to_owned()));
        }
        let lamport = lamport.parse().map_err(|_| ParseStampError(s.to_owned()))?;
        Ok(Self::new(lamport, client))
    }
}

impl Serialize for VersionStamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VersionStamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! stamp_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub VersionStamp);

        impl $name {
            pub fn stamp(&self) -> &VersionStamp {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl From<VersionStamp> for $name {
            fn from(stamp: VersionStamp) -> Self {
                Self(stamp)
            }
        }

        impl FromStr for $name {
            type Err = ParseStampError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.parse().map(Self)
            }
        }
    };
}

stamp_id!(
    /// Id of a board: the stamp of its `CreateBoard` op.
    BoardId
);
stamp_id!(
    /// Id of a sticky note: the stamp of its `CreateNote` op.
    NoteId
);
stamp_id!(ConnectionId);
stamp_id!(AttachmentId);
stamp_id!(NavRefId);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_lamport_then_client() {
        assert!(VersionStamp::new(5, "b") > VersionStamp::new(5, "a"));
        assert!(VersionStamp::new(6, "a") > VersionStamp::new(5, "z"));
        assert!(VersionStamp::ZERO < VersionStamp::new(0, "a"));
    }

    #[test]
    fn string_form_round_trips() {
        let s = VersionStamp::new(42, "anna@example");
        assert_eq!(s.to_string(), "42@anna@example");
        assert_eq!("42@anna@example".parse::<VersionStamp>().unwrap(), s);
        assert!("x@a".parse::<VersionStamp>().is_err());
        assert!("12".parse::<VersionStamp>().is_err());
        assert!("@a".parse::<VersionStamp>().is_err());
        assert!("+3@a".parse::<VersionStamp>().is_err());
    }

    #[test]
    fn json_form_is_a_string() {
        let id = NoteId(VersionStamp::new(3, "c"));
        assert_eq!(serde_json::to_string(&id).unwrap(), "\"3@c\"");
        let back: NoteId = serde_json::from_str("\"3@c\"").unwrap();
        assert_eq!(back, id);
    }
}
