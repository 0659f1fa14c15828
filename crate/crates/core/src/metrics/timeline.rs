use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Phase, PhaseNs};
use crate::netsim::SimTime;
use crate::protocol::PartyId;

/// The message that ended a wait.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRef {
    pub src: PartyId,
    pub sent_at: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Busy(Phase),
    Wait(Option<MessageRef>),
}

/// `[start, end)` of one party's activity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: SimTime,
    pub end: SimTime,
    pub kind: SegmentKind,
}

/// Per-party activity, each party's segments in time order.
#[derive(Clone, Debug, Default)]
pub struct Timeline {
    parties: BTreeMap<PartyId, Vec<Segment>>,
}

impl Timeline {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment. Empty segments are ignored.
    pub fn push(&mut self, party: PartyId, start: SimTime, end: SimTime, kind: SegmentKind) {
        assert!(end >= start, "segment ends before it starts");
        if end == start {
            return;
        }
        let segs = self.parties.entry(party).or_default();
        if let Some(last) = segs.last() {
            assert!(start >= last.end, "overlapping segments for {party}");
        }
        segs.push(Segment { start, end, kind });
    }

    pub fn segments(&self, party: PartyId) -> &[Segment] {
        self.parties.get(&party).map_or(&[], Vec::as_slice)
    }

    /// Segment of `party` with `start < t <= end`.
    fn covering(&self, party: PartyId, t: SimTime) -> Option<&Segment> {
        let segs = self.segments(party);
        let i = segs.partition_point(|s| s.end < t);
        segs.get(i).filter(|s| s.start < t)
    }

    /// Latest segment end over all parties.
    pub fn end(&self) -> SimTime {
        self.parties
            .values()
            .filter_map(|s| s.last())
            .map(|s| s.end)
            .max()
            .unwrap_or(0)
    }

    /// Party whose activity ends last (lowest id on ties).
    pub fn last_party(&self) -> Option<PartyId> {
        let end = self.end();
        self.parties
            .iter()
            .find(|(_, s)| s.last().is_some_and(|s| s.end == end))
            .map(|(p, _)| *p)
    }
}

/// Splits `[from, to]` into phases by walking the critical path backwards
/// from `party` at time `to`.
///
/// Busy time counts toward its own phase. A wait ended by a message counts as
/// communication back to the later of the wait start and the send time; the
/// walk then continues at the sender if the message was sent during the wait.
/// Time not covered by any segment is communication. The result sums to
/// `to - from` exactly.
pub fn critical_path(tl: &Timeline, party: PartyId, from: SimTime, to: SimTime) -> PhaseNs {
    let mut out = PhaseNs::default();
    let mut party = party;
    let mut t = to;
    while t > from {
        let Some(seg) = tl.covering(party, t) else {
            out.add(Phase::Communication, t - from);
            break;
        };
        let lo = seg.start.max(from);
        match seg.kind {
            SegmentKind::Busy(phase) => {
                out.add(phase, t - lo);
                t = lo;
            }
            SegmentKind::Wait(None) => {
                out.add(Phase::Communication, t - lo);
                t = lo;
            }
            SegmentKind::Wait(Some(m)) => {
                if m.sent_at > seg.start {
                    let lo = m.sent_at.max(from).min(t);
                    out.add(Phase::Communication, t - lo);
                    t = lo;
                    party = m.src;
                } else {
                    out.add(Phase::Communication, t - lo);
                    t = lo;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: PartyId = PartyId::GUEST;

    fn h(k: u32) -> PartyId {
        PartyId::host(k)
    }

    #[test]
    fn backtrace_follows_messages() {
        let mut tl = Timeline::new();
        // Host computes 0..4, encrypts 4..10, sends; arrives at the guest at 15.
        tl.push(h(1), 0, 4, SegmentKind::Busy(Phase::Computation));
        tl.push(h(1), 4, 10, SegmentKind::Busy(Phase::Encryption));
        // Guest is busy 0..2 then waits until 15.
        tl.push(G, 0, 2, SegmentKind::Busy(Phase::Computation));
        tl.push(
            G,
            2,
            15,
            SegmentKind::Wait(Some(MessageRef {
                src: h(1),
                sent_at: 10,
            })),
        );
        tl.push(G, 15, 20, SegmentKind::Busy(Phase::Computation));
        let p = critical_path(&tl, G, 0, 20);
        assert_eq!(p.computation, 5 + 4);
        assert_eq!(p.encryption, 6);
        assert_eq!(p.communication, 5);
        assert_eq!(p.total(), 20);
    }

    #[test]
    fn message_sent_before_wait_stays_on_receiver() {
        let mut tl = Timeline::new();
        tl.push(h(1), 0, 1, SegmentKind::Busy(Phase::Encryption));
        tl.push(G, 0, 5, SegmentKind::Busy(Phase::Computation));
        tl.push(
            G,
            5,
            8,
            SegmentKind::Wait(Some(MessageRef {
                src: h(1),
                sent_at: 1,
            })),
        );
        let p = critical_path(&tl, G, 0, 8);
        assert_eq!((p.computation, p.communication, p.encryption), (5, 3, 0));
    }

    #[test]
    fn window_is_clipped_and_gaps_are_communication() {
        let mut tl = Timeline::new();
        tl.push(G, 3, 10, SegmentKind::Busy(Phase::Computation));
        let p = critical_path(&tl, G, 5, 10);
        assert_eq!(p.computation, 5);
        let p = critical_path(&tl, G, 0, 10);
        assert_eq!((p.computation, p.communication), (7, 3));
        assert_eq!(tl.end(), 10);
        assert_eq!(tl.last_party(), Some(G));
    }
}
