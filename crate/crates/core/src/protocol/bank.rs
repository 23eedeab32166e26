use std::collections::{BTreeMap, VecDeque};

use rand::seq::index;

use super::wire::FeatureRecord;
use crate::seeding::{stream_id, stream_rng, tags};

pub const DEFAULT_BANK_CAPACITY: usize = 512;

/// Server-side store of uploaded embeddings, keyed by `(client, class)`.
///
/// Each key holds at most `capacity` records; the oldest are evicted first.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    capacity: usize,
    records: BTreeMap<(usize, usize), VecDeque<FeatureRecord>>,
}

impl Default for FeatureBank {
    fn default() -> Self {
        Self::new(DEFAULT_BANK_CAPACITY)
    }
}

impl FeatureBank {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            records: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn insert<I: IntoIterator<Item = FeatureRecord>>(&mut self, records: I) {
        for rec in records {
            let slot = self.records.entry((rec.client_id, rec.label)).or_default();
            slot.push_back(rec);
            while slot.len() > self.capacity {
                slot.pop_front();
            }
        }
    }

    pub fn len(&self) -> usize {
        self.records.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn client_len(&self, client_id: usize) -> usize {
        self.records
            .range((client_id, 0)..=(client_id, usize::MAX))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Client ids with at least one stored record, ascending.
    pub fn clients(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.records.keys().map(|k| k.0).collect();
        ids.dedup();
        ids
    }

    fn client_records(&self, client_id: usize) -> impl Iterator<Item = &FeatureRecord> {
        self.records
            .range((client_id, 0)..=(client_id, usize::MAX))
            .flat_map(|(_, v)| v.iter())
    }

    /// Up to `per_client` records from every other client, drawn uniformly
    /// without replacement. Deterministic in `seed`.
    pub fn sample(
        &self,
        requesting_client: usize,
        per_client: usize,
        seed: u64,
    ) -> Vec<FeatureRecord> {
        let mut rng = stream_rng(
            seed,
            stream_id(tags::BANK_SAMPLE, requesting_client as u64, 0, 0),
        );
        let mut out = Vec::new();
        for client in self.clients() {
            if client == requesting_client {
                continue;
            }
            let pool: Vec<&FeatureRecord> = self.client_records(client).collect();
            let take = per_client.min(pool.len());
            let mut picks = index::sample(&mut rng, pool.len(), take).into_vec();
            picks.sort_unstable();
            out.extend(picks.into_iter().map(|i| pool[i].clone()));
        }
        out
    }
}
