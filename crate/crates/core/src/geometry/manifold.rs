use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hausdorff::{hausdorff_distance, PointCloud};
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::nn::{forward_extractor, NetworkSpec, Parameters, Tensor};

/// Per-(client, class) embedding clouds and their per-class unions.
#[derive(Debug, Clone)]
pub struct ClassManifolds {
    pub local: BTreeMap<(usize, usize), PointCloud>,
    pub global: BTreeMap<usize, PointCloud>,
}

impl ClassManifolds {
    /// Groups labelled embeddings by `(client, class)`. Rows of `embeddings[i]`
    /// belong to `clients[i]` with labels `labels[i]`.
    pub fn from_embeddings(
        clients: &[usize],
        embeddings: &[Tensor],
        labels: &[&[usize]],
    ) -> Result<Self> {
        let mut rows: BTreeMap<(usize, usize), Vec<Vec<f64>>> = BTreeMap::new();
        for ((&client, emb), ys) in clients.iter().zip(embeddings).zip(labels) {
            for (r, &y) in ys.iter().enumerate() {
                rows.entry((client, y))
                    .or_default()
                    .push(emb.row(r).to_vec());
            }
        }
        let mut local = BTreeMap::new();
        for ((client, class), pts) in rows {
            let cloud = PointCloud::from_rows(&pts)?.with_tags(Some(class), Some(client));
            local.insert((client, class), cloud);
        }
        let mut global: BTreeMap<usize, PointCloud> = BTreeMap::new();
        for (&(_, class), cloud) in &local {
            let merged = match global.remove(&class) {
                Some(acc) => acc.union(cloud)?,
                None => cloud.clone().with_tags(Some(class), None),
            };
            global.insert(class, merged);
        }
        Ok(Self { local, global })
    }

    pub fn clients(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.local.keys().map(|k| k.0).collect();
        ids.dedup();
        ids
    }
}

/// Embeds every shard sample with `params`' extractor.
pub fn class_manifolds(
    params: &Parameters,
    spec: &NetworkSpec,
    shards: &[ClientShard],
) -> Result<ClassManifolds> {
    let embeddings = shards
        .iter()
        .map(|s| forward_extractor(params, spec, &s.inputs))
        .collect::<Result<Vec<_>>>()?;
    let clients: Vec<usize> = shards.iter().map(|s| s.client_id).collect();
    let labels: Vec<&[usize]> = shards.iter().map(|s| s.labels.as_slice()).collect();
    ClassManifolds::from_embeddings(&clients, &embeddings, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDistance {
    pub client_id: usize,
    pub class: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFragmentation {
    pub class: usize,
    pub fragmentation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub round: usize,
    /// `d_H(M_i^(c), M^(c))` for every client and class.
    pub local_to_global: Vec<LocalDistance>,
    /// Mean pairwise `d_H(M_i^(c), M_j^(c))` over client pairs.
    pub fragmentation: Vec<ClassFragmentation>,
}

impl ManifoldReport {
    /// Mean of the local-to-global distances.
    pub fn hausdorff_mean(&self) -> f64 {
        let n = self.local_to_global.len().max(1) as f64;
        self.local_to_global.iter().map(|d| d.distance).sum::<f64>() / n
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "round,metric,client_id,class,value")?;
        for d in &self.local_to_global {
            writeln!(
                w,
                "{},local_to_global,{},{},{:?}",
                self.round, d.client_id, d.class, d.distance
            )?;
        }
        for f in &self.fragmentation {
            writeln!(
                w,
                "{},fragmentation,,{},{:?}",
                self.round, f.class, f.fragmentation
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn manifold_report(round: usize, manifolds: &ClassManifolds) -> Result<ManifoldReport> {
    let clients = manifolds.clients();
    if clients.len() < 2 {
        return Err(Error::Config(format!(
            "manifold report needs at least two clients, got {}",
            clients.len()
        )));
    }
    let mut local_to_global = Vec::new();
    for (&(client_id, class), cloud) in &manifolds.local {
        let global = &manifolds.global[&class];
        local_to_global.push(LocalDistance {
            client_id,
            class,
            distance: hausdorff_distance(cloud, global)?,
        });
    }
    let mut fragmentation = Vec::new();
    for &class in manifolds.global.keys() {
        let members: Vec<&PointCloud> = clients
            .iter()
            .filter_map(|&c| manifolds.local.get(&(c, class)))
            .collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                total += hausdorff_distance(members[i], members[j])?;
                pairs += 1;
            }
        }
        if pairs > 0 {
            fragmentation.push(ClassFragmentation {
                class,
                fragmentation: total / pairs as f64,
            });
        }
    }
    Ok(ManifoldReport {
        round,
        local_to_global,
        fragmentation,
    })
}
