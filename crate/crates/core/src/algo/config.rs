use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, OptimizerKind};
use crate::protocol::DEFAULT_BANK_CAPACITY;

/// Settings for one federated run. Defaults follow the reference hyperparameters:
/// Adam with learning rate 1e-4, weight decay 5e-4, batch 64, client EMA 0.5,
/// server EMA 0.7.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub rounds: usize,
    pub num_clients: usize,
    pub local_epochs: usize,
    pub num_classes: usize,
    pub batch_size: usize,
    pub mu_client: f64,
    pub mu_server: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub enable_sfmc: bool,
    pub enable_cpgma: bool,
    /// Foreign records sampled from each other client per round.
    pub sample_per_client: usize,
    /// Records kept per (client, class) in the server's feature bank.
    pub bank_capacity: usize,
    /// Maximum records a client uploads per communication; `None` uploads every final-epoch record.
    pub upload_cap: Option<usize>,
    pub eps_guard: f64,
    pub seed: u64,
    /// Compute the Hausdorff manifold report after every round.
    pub track_geometry: bool,
    /// Run client updates on the rayon pool.
    pub parallel: bool,
    /// Sequential client scheduling order; results never depend on it.
    pub client_order: Option<Vec<usize>>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            num_clients: 3,
            local_epochs: 1,
            num_classes: 2,
            batch_size: 64,
            mu_client: 0.5,
            mu_server: 0.7,
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            optimizer: OptimizerKind::Adam,
            enable_sfmc: true,
            enable_cpgma: true,
            sample_per_client: 64,
            bank_capacity: DEFAULT_BANK_CAPACITY,
            upload_cap: None,
            eps_guard: 1e-8,
            seed: 0,
            track_geometry: true,
            parallel: false,
            client_order: None,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rounds == 0 || self.num_clients == 0 || self.local_epochs == 0 {
            return bad("rounds, num_clients and local_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if !(self.mu_client > 0.0 && self.mu_client <= 1.0) {
            return bad(format!("mu_client {} outside (0, 1]", self.mu_client));
        }
        if !(self.mu_server > 0.0 && self.mu_server <= 1.0) {
            return bad(format!("mu_server {} outside (0, 1]", self.mu_server));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0 && self.eps_guard > 0.0) {
            return bad("learning_rate and weight_decay must be ≥ 0 and eps_guard > 0".into());
        }
        if let Some(order) = &self.client_order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..self.num_clients).collect::<Vec<_>>() {
                return bad(format!(
                    "client_order {order:?} is not a permutation of the clients"
                ));
            }
        }
        Ok(())
    }

    pub fn modules_enabled(&self) -> bool {
        self.enable_sfmc || self.enable_cpgma
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Same settings with both auxiliary modules off.
    pub fn fedavg(&self) -> Self {
        Self {
            enable_sfmc: false,
            enable_cpgma: false,
            ..self.clone()
        }
    }
}
