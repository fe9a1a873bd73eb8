//! Per-trial CSV rows and event-trace files.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::harness::oracle::Verdict;
use crate::netsim::{write_trace, CostLedger, TraceEvent};

/// One CSV row. Column order is the file's column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub protocol: &'static str,
    pub n: usize,
    pub phi: f64,
    pub k: usize,
    pub m: usize,
    pub messages_unicast: u64,
    pub messages_broadcast: u64,
    pub messages_total: u64,
    pub rounds: u64,
    pub verdict: Verdict,
    pub fallback_used: bool,
    pub result_rank: Option<usize>,
}

pub const COLUMNS: [&str; 14] = [
    "trial",
    "seed",
    "protocol",
    "n",
    "phi",
    "k",
    "m",
    "messages_unicast",
    "messages_broadcast",
    "messages_total",
    "rounds",
    "verdict",
    "fallback_used",
    "result_rank",
];

impl TrialRecord {
    pub fn set_ledger(&mut self, ledger: CostLedger) {
        self.messages_unicast = ledger.unicasts;
        self.messages_broadcast = ledger.broadcasts;
        self.messages_total = ledger.total_messages();
        self.rounds = ledger.rounds;
    }

    pub fn ledger(&self) -> CostLedger {
        CostLedger { broadcasts: self.messages_broadcast, unicasts: self.messages_unicast, rounds: self.rounds }
    }
}

/// Writes all rows with a header. Rows are serialized into memory first, so a
/// failure leaves nothing half-written in `out`.
pub fn write_csv<W: Write>(out: &mut W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    out.write_all(&bytes)?;
    Ok(())
}

pub fn write_traces<W: Write>(out: &mut W, traces: &[(u64, Vec<TraceEvent>)]) -> Result<()> {
    let mut buf = Vec::new();
    for (trial, events) in traces {
        write_trace(&mut buf, *trial, events)?;
    }
    out.write_all(&buf)?;
    Ok(())
}
