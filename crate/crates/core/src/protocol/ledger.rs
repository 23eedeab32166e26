use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    Model,
    Features,
    Prototypes,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

impl TransferKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferKind::Model => "model",
            TransferKind::Features => "features",
            TransferKind::Prototypes => "prototypes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: usize,
    pub direction: Direction,
    pub kind: TransferKind,
    pub bytes: usize,
    pub client_id: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerFilter {
    pub round: Option<usize>,
    pub direction: Option<Direction>,
    pub kind: Option<TransferKind>,
    pub client_id: Option<usize>,
}

impl LedgerFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn round(mut self, round: usize) -> Self {
        self.round = Some(round);
        self
    }

    pub fn direction(mut self, direction: Direction) -> Self {
        self.direction = Some(direction);
        self
    }

    pub fn kind(mut self, kind: TransferKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn client(mut self, client_id: usize) -> Self {
        self.client_id = Some(client_id);
        self
    }

    fn matches(&self, e: &LedgerEntry) -> bool {
        self.round.is_none_or(|r| r == e.round)
            && self.direction.is_none_or(|d| d == e.direction)
            && self.kind.is_none_or(|k| k == e.kind)
            && self.client_id.is_none_or(|c| c == e.client_id)
    }
}

/// Append-only log of every client/server transfer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn record_bytes(
        &mut self,
        round: usize,
        direction: Direction,
        kind: TransferKind,
        client_id: usize,
        bytes: usize,
    ) {
        self.record(LedgerEntry {
            round,
            direction,
            kind,
            bytes,
            client_id,
        });
    }

    /// Records a transfer whose size is the length of `blob`.
    pub fn record_blob(
        &mut self,
        round: usize,
        direction: Direction,
        kind: TransferKind,
        client_id: usize,
        blob: &[u8],
    ) {
        self.record_bytes(round, direction, kind, client_id, blob.len());
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total(&self, filter: LedgerFilter) -> usize {
        self.entries
            .iter()
            .filter(|e| filter.matches(e))
            .map(|e| e.bytes)
            .sum()
    }

    /// Number of distinct rounds in which any transfer happened.
    pub fn communication_events(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.round)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Appends another ledger's entries; used to merge per-client logs in id order.
    pub fn extend(&mut self, other: CommLedger) {
        self.entries.extend(other.entries);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "round,direction,kind,bytes,client_id")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.round,
                e.direction.as_str(),
                e.kind.as_str(),
                e.bytes,
                e.client_id
            )?;
        }
        w.flush()?;
        Ok(())
    }
}
