//! Phase accounting (computation, encryption, communication, other), the
//! compute-time cost model, critical-path attribution over party timelines,
//! and run reports.

mod cost;
mod report;
mod timeline;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::{ns_to_secs, secs_to_ns, SimTime};

pub use cost::{CostModel, TimingMode};
pub use report::{
    read_iterations_jsonl, summary_csv_header, summary_csv_row, write_iterations_jsonl, write_run_dir,
    IterationRecord, RunMetrics, ComparisonTable, TableRow, COMPARISON_MODES,
};
pub use timeline::{critical_path, MessageRef, Segment, SegmentKind, Timeline};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Computation,
    Encryption,
    Communication,
    Other,
}

/// Phase durations in integer nanoseconds, so sums are exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseNs {
    pub computation: SimTime,
    pub encryption: SimTime,
    pub communication: SimTime,
    pub other: SimTime,
}

impl PhaseNs {
    pub fn get(&self, phase: Phase) -> SimTime {
        match phase {
            Phase::Computation => self.computation,
            Phase::Encryption => self.encryption,
            Phase::Communication => self.communication,
            Phase::Other => self.other,
        }
    }

    fn slot(&mut self, phase: Phase) -> &mut SimTime {
        match phase {
            Phase::Computation => &mut self.computation,
            Phase::Encryption => &mut self.encryption,
            Phase::Communication => &mut self.communication,
            Phase::Other => &mut self.other,
        }
    }

    pub fn add(&mut self, phase: Phase, ns: SimTime) {
        *self.slot(phase) += ns;
    }

    pub fn plus(&self, o: &PhaseNs) -> PhaseNs {
        PhaseNs {
            computation: self.computation + o.computation,
            encryption: self.encryption + o.encryption,
            communication: self.communication + o.communication,
            other: self.other + o.other,
        }
    }

    pub fn total(&self) -> SimTime {
        self.computation + self.encryption + self.communication + self.other
    }

    pub fn to_breakdown(&self) -> PhaseBreakdown {
        PhaseBreakdown {
            computation_s: ns_to_secs(self.computation),
            encryption_s: ns_to_secs(self.encryption),
            communication_s: ns_to_secs(self.communication),
            other_s: ns_to_secs(self.other),
        }
    }
}

/// Phase durations in simulated seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub computation_s: f64,
    pub encryption_s: f64,
    pub communication_s: f64,
    pub other_s: f64,
}

impl PhaseBreakdown {
    pub fn total_s(&self) -> f64 {
        self.computation_s + self.encryption_s + self.communication_s + self.other_s
    }

    /// Everything that is not communication.
    pub fn compute_side_s(&self) -> f64 {
        self.computation_s + self.encryption_s + self.other_s
    }
}

/// Accumulates durations into exactly one phase each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseAccumulator {
    ns: PhaseNs,
}

impl PhaseAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attribute(&mut self, phase: Phase, seconds: f64) -> Result<()> {
        if !(seconds >= 0.0) || !seconds.is_finite() {
            return Err(Error::NegativeDuration(seconds));
        }
        self.ns.add(phase, secs_to_ns(seconds));
        Ok(())
    }

    pub fn attribute_ns(&mut self, phase: Phase, ns: SimTime) {
        self.ns.add(phase, ns);
    }

    pub fn snapshot(&self) -> PhaseNs {
        self.ns
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accounting_identity_is_exact() {
        let mut acc = PhaseAccumulator::new();
        acc.attribute(Phase::Computation, 0.1).unwrap();
        acc.attribute(Phase::Encryption, 0.2).unwrap();
        acc.attribute(Phase::Communication, 1.0 / 3.0).unwrap();
        acc.attribute(Phase::Other, 2.0).unwrap();
        let ns = acc.snapshot();
        assert_eq!(ns.total(), 100_000_000 + 200_000_000 + 333_333_333 + 2_000_000_000);
        let b = ns.to_breakdown();
        assert_eq!(
            b.total_s(),
            b.computation_s + b.encryption_s + b.communication_s + b.other_s
        );
    }

    #[test]
    fn negative_duration_rejected() {
        let mut acc = PhaseAccumulator::new();
        assert!(matches!(
            acc.attribute(Phase::Other, -1.0),
            Err(Error::NegativeDuration(_))
        ));
        assert!(acc.attribute(Phase::Other, f64::NAN).is_err());
        assert_eq!(acc.snapshot(), PhaseNs::default());
    }
}
