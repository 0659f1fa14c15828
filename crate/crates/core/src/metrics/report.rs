use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PhaseBreakdown;
use crate::enc_linalg::OpSnapshot;
use crate::error::{Error, Result};
use crate::netsim::{write_trace_jsonl, TraceRecord};
use crate::protocol::PartyId;

/// One training round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    /// Simulated time of this round by phase.
    pub phases: PhaseBreakdown,
    /// Running totals up to and including this round.
    pub cumulative: PhaseBreakdown,
    /// Ops of all parties spent on this round.
    pub ops: OpSnapshot,
    /// Encrypted multiplications inside the parties' gradient products.
    pub gradient_enc_mul: u64,
    pub bytes: u64,
    pub messages: u32,
    /// Decrypted training loss as reported through the arbiter.
    pub loss: Option<f64>,
    /// Regularized mean loss on the full data at the parameters after this round.
    pub objective: Option<f64>,
    pub auc: Option<f64>,
    /// Hosts whose fresh share was used, in arrival order.
    pub arrivals: Vec<PartyId>,
    /// Hosts filled from the cache, with share age.
    pub compensated: Vec<(PartyId, u32)>,
    pub dropped: Vec<PartyId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub label: String,
    /// 0 in plain mode.
    pub key_bits: usize,
    pub iterations: Vec<IterationRecord>,
    pub totals: PhaseBreakdown,
    pub ops: OpSnapshot,
    pub warnings: Vec<String>,
}

impl RunMetrics {
    pub fn total_sim_s(&self) -> f64 {
        self.totals.total_s()
    }

    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    pub fn gradient_enc_mul(&self) -> u64 {
        self.iterations.iter().map(|r| r.gradient_enc_mul).sum()
    }

    pub fn bytes(&self) -> u64 {
        self.iterations.iter().map(|r| r.bytes).sum()
    }

    pub fn compensations(&self) -> usize {
        self.iterations.iter().map(|r| r.compensated.len()).sum()
    }
}

/// Writes one JSON object per iteration.
pub fn write_iterations_jsonl<W: Write>(records: &[IterationRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Config(e.to_string()))?;
        out.write_all(b"\n")
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

pub fn read_iterations_jsonl<R: BufRead>(input: R) -> Result<Vec<IterationRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Config(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Writes `iterations.jsonl`, `summary.csv`, `metrics.json` and, when
/// `trace` is non-empty, `trace.jsonl` into `dir`.
pub fn write_run_dir(dir: &Path, m: &RunMetrics, trace: &[TraceRecord]) -> Result<()> {
    let io = |e: std::io::Error| Error::Config(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut buf = Vec::new();
    write_iterations_jsonl(&m.iterations, &mut buf)?;
    std::fs::write(dir.join("iterations.jsonl"), buf).map_err(io)?;
    let summary = format!("{}\n{}\n", summary_csv_header(), summary_csv_row(m));
    std::fs::write(dir.join("summary.csv"), summary).map_err(io)?;
    let json = serde_json::to_string_pretty(m).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("metrics.json"), json + "\n").map_err(io)?;
    if !trace.is_empty() {
        let mut buf = Vec::new();
        write_trace_jsonl(trace, &mut buf).map_err(io)?;
        std::fs::write(dir.join("trace.jsonl"), buf).map_err(io)?;
    }
    Ok(())
}

pub fn summary_csv_header() -> &'static str {
    "label,iterations,computation_s,encryption_s,communication_s,other_s,total_s,\
final_loss,final_objective,final_auc,enc_mul,gradient_enc_mul,encryptions,bytes,compensations"
}

pub fn summary_csv_row(m: &RunMetrics) -> String {
    let last = m.final_record();
    let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    let t = &m.totals;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.label,
        m.iterations.len(),
        t.computation_s,
        t.encryption_s,
        t.communication_s,
        t.other_s,
        t.total_s(),
        opt(last.and_then(|r| r.loss)),
        opt(last.and_then(|r| r.objective)),
        opt(last.and_then(|r| r.auc)),
        m.ops.enc_mul,
        m.gradient_enc_mul(),
        m.ops.encryptions,
        m.bytes(),
        m.compensations(),
    )
}

/// Mode names of the comparison table, in display order.
pub const COMPARISON_MODES: [&str; 4] = ["Origin", "Backup", "PCA", "Ours"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub mode: String,
    /// Everything except communication.
    pub comp: f64,
    pub comm: f64,
    pub sum: f64,
}

/// Comp / Comm / Sum per training mode, with reductions against the first row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub unit: String,
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    /// Reference runtimes in minutes for the four modes on a full-scale workload.
    pub fn reference() -> Self {
        let row = |mode: &str, comp: f64, comm: f64, sum: f64| TableRow {
            mode: mode.into(),
            comp,
            comm,
            sum,
        };
        ComparisonTable {
            unit: "min".into(),
            rows: vec![
                row("Origin", 98.2, 141.0, 239.2),
                row("Backup", 93.6, 48.3, 141.9),
                row("PCA", 58.5, 137.6, 196.1),
                row("Ours", 59.9, 46.4, 106.3),
            ],
        }
    }

    pub fn from_runs(runs: &[(&str, &RunMetrics)]) -> Self {
        ComparisonTable {
            unit: "s".into(),
            rows: runs
                .iter()
                .map(|(mode, m)| TableRow {
                    mode: mode.to_string(),
                    comp: m.totals.compute_side_s(),
                    comm: m.totals.communication_s,
                    sum: m.totals.total_s(),
                })
                .collect(),
        }
    }

    pub fn row(&self, mode: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Percent reductions `(comp, comm, sum)` of `mode` relative to the first row.
    pub fn reduction(&self, mode: &str) -> Option<(f64, f64, f64)> {
        let base = self.rows.first()?;
        let r = self.row(mode)?;
        let pct = |b: f64, v: f64| if b == 0.0 { 0.0 } else { 100.0 * (b - v) / b };
        Some((
            pct(base.comp, r.comp),
            pct(base.comm, r.comm),
            pct(base.sum, r.sum),
        ))
    }

    /// Fixed-width text table. With `reference`, each row also shows the
    /// reference Sum for the same mode.
    pub fn render(&self, reference: Option<&ComparisonTable>) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{:<8} {:>12} {:>12} {:>12} {:>9} {:>9} {:>9}",
            "Mode",
            format!("Comp.({})", self.unit),
            format!("Comm.({})", self.unit),
            format!("Sum({})", self.unit),
            "dComp%",
            "dComm%",
            "dSum%"
        );
        if let Some(r) = reference {
            let _ = write!(s, " {:>12}", format!("Ref.Sum({})", r.unit));
        }
        s.push('\n');
        for row in &self.rows {
            let (dc, dm, ds) = self.reduction(&row.mode).unwrap_or_default();
            let _ = write!(
                s,
                "{:<8} {:>12.3} {:>12.3} {:>12.3} {:>9.1} {:>9.1} {:>9.1}",
                row.mode, row.comp, row.comm, row.sum, dc, dm, ds
            );
            if let Some(r) = reference {
                match r.row(&row.mode) {
                    Some(rr) => {
                        let _ = write!(s, " {:>12.1}", rr.sum);
                    }
                    None => {
                        let _ = write!(s, " {:>12}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,comp,comm,sum,comp_reduction_pct,comm_reduction_pct,sum_reduction_pct\n");
        for row in &self.rows {
            let (dc, dm, ds) = self.reduction(&row.mode).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{dc},{dm},{ds}",
                row.mode, row.comp, row.comm, row.sum
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u32) -> IterationRecord {
        IterationRecord {
            iteration: i,
            phases: PhaseBreakdown {
                computation_s: 0.1 * i as f64,
                encryption_s: 1.0 / 3.0,
                communication_s: 2.5e-7,
                other_s: 2.0,
            },
            cumulative: PhaseBreakdown::default(),
            ops: OpSnapshot {
                enc_mul: 12,
                ..Default::default()
            },
            gradient_enc_mul: 10,
            bytes: 4096,
            messages: 7,
            loss: Some(0.693_147_180_559_945_3),
            objective: Some(0.1 + 0.2),
            auc: None,
            arrivals: vec![PartyId::host(2)],
            compensated: vec![(PartyId::host(1), 1)],
            dropped: vec![],
        }
    }

    #[test]
    fn jsonl_roundtrip_is_lossless() {
        let recs: Vec<_> = (1..=3).map(record).collect();
        let mut buf = Vec::new();
        write_iterations_jsonl(&recs, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 3);
        assert_eq!(read_iterations_jsonl(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn reference_reductions() {
        let t = ComparisonTable::reference();
        let (_, comm, sum) = t.reduction("Ours").unwrap();
        assert!((comm - 67.1).abs() < 0.05, "{comm}");
        assert!((sum - 55.6).abs() < 0.05, "{sum}");
        let modes: Vec<_> = t.rows.iter().map(|r| r.mode.as_str()).collect();
        assert_eq!(modes, COMPARISON_MODES);
        for r in &t.rows {
            assert!((r.comp + r.comm - r.sum).abs() < 1e-9);
        }
        let text = t.render(Some(&ComparisonTable::reference()));
        assert!(text.contains("67.1"));
        assert_eq!(t.to_csv().lines().count(), 5);
    }

    #[test]
    fn summary_row_has_header_width() {
        let m = RunMetrics {
            label: "x".into(),
            key_bits: 0,
            iterations: vec![record(1)],
            totals: record(1).phases,
            ops: OpSnapshot::default(),
            warnings: vec![],
        };
        let cols = summary_csv_header().split(',').count();
        assert_eq!(summary_csv_row(&m).split(',').count(), cols);
        assert_eq!(m.compensations(), 1);
    }
}
