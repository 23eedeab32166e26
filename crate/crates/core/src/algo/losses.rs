//! Local objective terms: manifold-completion cross-entropy on foreign
//! embeddings, prototype cosine alignment, and their adaptive combination.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{
    backward_layers, forward_layers, softmax_cross_entropy, NetworkSpec, Parameters, Tensor,
};
use crate::protocol::FeatureRecord;

/// Stacks foreign embeddings into `[n, width]` plus their labels.
pub fn stack_records(records: &[FeatureRecord], width: usize) -> Result<(Tensor, Vec<usize>)> {
    let mut data = Vec::with_capacity(records.len() * width);
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        if r.embedding.len() != width {
            return Err(shape_err(
                format!("foreign record from client {}", r.client_id),
                width,
                r.embedding.len(),
            ));
        }
        data.extend_from_slice(&r.embedding);
        labels.push(r.label);
    }
    Ok((Tensor::matrix(records.len(), width, data)?, labels))
}

/// Mean cross-entropy of the classifier on foreign embeddings.
///
/// Gradients are nonzero only for classifier layers; the extractor never sees
/// these samples.
pub fn compute_sfmc_loss(
    params: &Parameters,
    spec: &NetworkSpec,
    foreign: &[FeatureRecord],
) -> Result<(f64, Parameters)> {
    if foreign.is_empty() {
        return Ok((0.0, params.zeros_like()));
    }
    let (u, labels) = stack_records(foreign, spec.embedding_width())?;
    let (logits, cache) = forward_layers(spec.layers(), params, spec.classifier_range(), &u)?;
    let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
    let (grads, _) = backward_layers(spec.layers(), params, &cache, &grad)?;
    Ok((loss, grads))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Alignment loss `−Σ_c (1/|I_c|) Σ_{j∈I_c} cos(u_j, p_c)` and its gradient
/// with respect to the embeddings.
///
/// Classes whose prototype norm is below `eps_guard` are skipped, as are
/// embeddings with norm below `eps_guard` (they still count in `|I_c|`).
pub fn cpgma_from_embeddings(
    embeddings: &Tensor,
    labels: &[usize],
    prototypes: &[Vec<f64>],
    eps_guard: f64,
) -> Result<(f64, Tensor)> {
    if labels.len() != embeddings.rows() {
        return Err(shape_err(
            "alignment labels",
            embeddings.rows(),
            labels.len(),
        ));
    }
    let width = embeddings.cols();
    let k = prototypes.len();
    let mut counts = vec![0usize; k];
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: k,
            });
        }
        counts[y] += 1;
    }
    let unit: Vec<Option<Vec<f64>>> = prototypes
        .iter()
        .map(|p| {
            if p.len() != width {
                return Err(shape_err("prototype", width, p.len()));
            }
            let n = norm(p);
            Ok((n >= eps_guard).then(|| p.iter().map(|v| v / n).collect()))
        })
        .collect::<Result<_>>()?;

    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![embeddings.rows(), width]);
    for (r, &y) in labels.iter().enumerate() {
        let Some(p_hat) = &unit[y] else { continue };
        let u = embeddings.row(r);
        let u_norm = norm(u);
        if u_norm < eps_guard {
            continue;
        }
        let scale = 1.0 / counts[y] as f64;
        let cos = u.iter().zip(p_hat).map(|(a, b)| a * b).sum::<f64>() / u_norm;
        loss -= scale * cos;
        // d cos / du = p̂/‖u‖ − cos · u/‖u‖²
        for ((g, ui), pi) in grad.row_mut(r).iter_mut().zip(u).zip(p_hat) {
            *g = -scale * (pi / u_norm - cos * ui / (u_norm * u_norm));
        }
    }
    Ok((loss, grad))
}

/// Alignment loss evaluated through the extractor; gradients land on extractor layers only.
pub fn compute_cpgma_loss(
    params: &Parameters,
    spec: &NetworkSpec,
    inputs: &Tensor,
    labels: &[usize],
    prototypes: &[Vec<f64>],
    eps_guard: f64,
) -> Result<(f64, Parameters)> {
    if labels.is_empty() {
        return Err(Error::Empty("alignment loss over an empty batch".into()));
    }
    let (u, cache) = forward_layers(spec.layers(), params, spec.extractor_range(), inputs)?;
    let (loss, grad_u) = cpgma_from_embeddings(&u, labels, prototypes, eps_guard)?;
    let (grads, _) = backward_layers(spec.layers(), params, &cache, &grad_u)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LossFlags {
    pub sfmc: bool,
    pub cpgma: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub local: f64,
    pub sfmc: f64,
    pub cpgma: f64,
    pub total: f64,
    pub sfmc_weight: f64,
    pub cpgma_weight: f64,
}

/// `L = ℓ_local + w_s·ℓ_sfmc + w_c·ℓ_cpgma` with detached weights
/// `w = |ℓ_local| / (|ℓ_aux| + eps_guard)`. Disabled terms get weight 0.
///
/// The weights are plain numbers: callers scale the auxiliary gradients by
/// them without differentiating through the ratio.
pub fn combine_losses(
    local: f64,
    sfmc: f64,
    cpgma: f64,
    flags: LossFlags,
    eps_guard: f64,
) -> Result<LossBreakdown> {
    for (name, v) in [
        ("local loss", local),
        ("sfmc loss", sfmc),
        ("cpgma loss", cpgma),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    let weight = |enabled: bool, aux: f64| {
        if enabled {
            local.abs() / (aux.abs() + eps_guard)
        } else {
            0.0
        }
    };
    let sfmc_weight = weight(flags.sfmc, sfmc);
    let cpgma_weight = weight(flags.cpgma, cpgma);
    let mut total = local;
    if flags.sfmc {
        total += sfmc_weight * sfmc;
    }
    if flags.cpgma {
        total += cpgma_weight * cpgma;
    }
    Ok(LossBreakdown {
        local,
        sfmc: if flags.sfmc { sfmc } else { 0.0 },
        cpgma: if flags.cpgma { cpgma } else { 0.0 },
        total,
        sfmc_weight,
        cpgma_weight,
    })
}
