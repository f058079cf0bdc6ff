//! Lamport clocks, last-writer-wins merging and operation integration.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{Ledger, Operation, Outcome, Project};
use crate::stamp::{ClientId, VersionStamp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplicationError {
    #[error("lamport clock overflow; the replica must resync from a snapshot")]
    ClockOverflow,
}

/// Result of comparing an incoming field write against the current one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Merge {
    Keep,
    Replace,
}

/// Last-writer-wins: the incoming write replaces the current one iff its
/// stamp is strictly greater.
pub fn merge_field(current: &VersionStamp, incoming: &VersionStamp) -> Merge {
    if incoming > current {
        Merge::Replace
    } else {
        Merge::Keep
    }
}

/// A replica of one project: the document plus the set of integrated ops.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaState {
    pub client: ClientId,
    doc: Project,
    applied: BTreeSet<VersionStamp>,
    local_clock: u64,
}

impl ReplicaState {
    pub fn new(client: ClientId, doc: Project) -> Self {
        Self {
            client,
            doc,
            applied: BTreeSet::new(),
            local_clock: 0,
        }
    }

    /// Rebuilds a replica from persisted parts.
    pub fn from_parts(client: ClientId, doc: Project, applied: BTreeSet<VersionStamp>, local_clock: u64) -> Self {
        let local_clock = applied.iter().map(|s| s.lamport).fold(local_clock, u64::max);
        Self {
            client,
            doc,
            applied,
            local_clock,
        }
    }

    pub fn doc(&self) -> &Project {
        &self.doc
    }

    pub fn into_doc(self) -> Project {
        self.doc
    }

    pub fn applied(&self) -> &BTreeSet<VersionStamp> {
        &self.applied
    }

    pub fn local_clock(&self) -> u64 {
        self.local_clock
    }

    pub fn has_applied(&self, id: &VersionStamp) -> bool {
        self.applied.contains(id)
    }

    /// Issues a fresh stamp for a local op. Lamport rule:
    /// `clock = max(clock, observed) + 1`.
    pub fn tick(&mut self, observed: Option<&VersionStamp>) -> Result<VersionStamp, ReplicationError> {
        let base = observed.map_or(self.local_clock, |o| o.lamport.max(self.local_clock));
        let next = base.checked_add(1).ok_or(ReplicationError::ClockOverflow)?;
        self.local_clock = next;
        Ok(VersionStamp {
            lamport: next,
            client: self.client.clone(),
        })
    }

    /// Integrates a local or remote op. Returns `false` for a duplicate,
    /// leaving the replica untouched.
    pub fn integrate(&mut self, op: &Operation) -> bool {
        self.integrate_with_outcome(op).is_some()
    }

    pub fn integrate_with_outcome(&mut self, op: &Operation) -> Option<Outcome> {
        if !self.applied.insert(op.id.clone()) {
            return None;
        }
        self.local_clock = self.local_clock.max(op.id.lamport);
        Some(self.doc.apply(op))
    }

    /// See [`crate::model::Ledger::compact`].
    pub fn compact_ledger(&mut self) {
        let applied = &self.applied;
        self.doc.ledger_mut().compact(|id| applied.contains(id));
    }
}

/// Everything besides the canonical document that a replica needs to
/// resume: integrated op ids, the clock and the apply ledger.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicaMeta {
    pub clock: u64,
    pub applied: BTreeSet<VersionStamp>,
    pub ledger: Ledger,
}

impl ReplicaMeta {
    pub fn of(state: &ReplicaState) -> Self {
        Self {
            clock: state.local_clock,
            applied: state.applied.clone(),
            ledger: state.doc.ledger().clone(),
        }
    }

    pub fn restore(self, client: ClientId, doc: Project) -> ReplicaState {
        ReplicaState::from_parts(client, doc.with_ledger(self.ledger), self.applied, self.clock)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Payload, ProjectId};

    fn replica(clock: u64) -> ReplicaState {
        let mut r = ReplicaState::new(ClientId::new("me"), Project::new(ProjectId::new("x"), "", "en"));
        r.local_clock = clock;
        r
    }

    #[test]
    fn tick_follows_lamport_rule() {
        let mut r = replica(5);
        assert_eq!(r.tick(Some(&VersionStamp::new(9, "o"))).unwrap().lamport, 10);
        let mut r = replica(5);
        assert_eq!(r.tick(None).unwrap().lamport, 6);
        let a = r.tick(None).unwrap();
        let b = r.tick(None).unwrap();
        assert!(b > a);
    }

    #[test]
    fn tick_overflow_is_fatal() {
        let mut r = replica(u64::MAX);
        assert_eq!(r.tick(None), Err(ReplicationError::ClockOverflow));
    }

    #[test]
    fn merge_examples() {
        assert_eq!(merge_field(&VersionStamp::new(5, "a"), &VersionStamp::new(5, "b")), Merge::Replace);
        assert_eq!(merge_field(&VersionStamp::new(7, "z"), &VersionStamp::new(6, "z")), Merge::Keep);
        let s = VersionStamp::new(3, "q");
        assert_eq!(merge_field(&s, &s), Merge::Keep);
    }

    #[test]
    fn merge_picks_same_winner_both_ways() {
        // exhaustive over a small grid of stamps
        let clients = ["", "a", "b", "ab", "z"];
        let stamps: Vec<_> = (0..4)
            .flat_map(|l| clients.iter().map(move |c| VersionStamp::new(l, *c)))
            .collect();
        for a in &stamps {
            for b in &stamps {
                if a == b {
                    continue;
                }
                let winner_ab = if merge_field(a, b) == Merge::Replace { b } else { a };
                let winner_ba = if merge_field(b, a) == Merge::Replace { a } else { b };
                assert_eq!(winner_ab, winner_ba);
                assert_eq!(winner_ab, a.max(b));
            }
        }
    }

    #[test]
    fn duplicate_delivery_is_noop() {
        let mut r = replica(0);
        let op = Operation::new(VersionStamp::new(4, "o"), Payload::PostChat { text: "hi".into() });
        assert!(r.integrate(&op));
        let snapshot = r.clone();
        assert!(!r.integrate(&op));
        assert_eq!(r, snapshot);
        assert_eq!(r.local_clock(), 4);
    }
}
