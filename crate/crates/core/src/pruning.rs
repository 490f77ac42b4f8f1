//! Layer pruning: resolve a strategy into an explicit retention plan, apply
//! it to a model, and verify the result.
//!
//! Layers are indexed bottom-up from 0 (the block nearest the input). "Top"
//! therefore removes the blocks nearest the output. For a 12-layer model and
//! `k = 6` the three strategies keep the first, the outer, and the last six
//! blocks respectively, which is the same physical split regardless of whether
//! one reads published layer ranges as kept or removed blocks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneKind {
    Top,
    Middle,
    Bottom,
}

impl PruneKind {
    pub const ALL: [PruneKind; 3] = [PruneKind::Top, PruneKind::Middle, PruneKind::Bottom];

    pub fn as_str(self) -> &'static str {
        match self {
            PruneKind::Top => "top",
            PruneKind::Middle => "middle",
            PruneKind::Bottom => "bottom",
        }
    }
}

impl fmt::Display for PruneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PruneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(PruneKind::Top),
            "middle" => Ok(PruneKind::Middle),
            "bottom" => Ok(PruneKind::Bottom),
            other => Err(Error::input(format!(
                "unknown pruning strategy {other:?} (expected top, middle or bottom)"
            ))),
        }
    }
}

/// Which region to remove and how many layers (`k`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneStrategy {
    pub kind: PruneKind,
    pub k: usize,
}

impl PruneStrategy {
    pub fn new(kind: PruneKind, k: usize) -> Self {
        Self { kind, k }
    }

    /// Accepts a signed `k` so that negative counts from user input surface as
    /// input errors rather than wrapping.
    pub fn from_signed(kind: PruneKind, k: i64) -> Result<Self> {
        let k = usize::try_from(k).map_err(|_| Error::input(format!("k must be non-negative, got {k}")))?;
        Ok(Self { kind, k })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub original_layers: usize,
    pub retained: Vec<usize>,
    pub removed: Vec<usize>,
}

impl PrunePlan {
    /// Keeps exactly the given layers, which must be strictly increasing.
    pub fn from_retained(original_layers: usize, retained: Vec<usize>) -> Result<Self> {
        if retained.is_empty() {
            return Err(Error::Plan("cannot remove all layers".into()));
        }
        if retained.windows(2).any(|w| w[0] >= w[1]) || retained[retained.len() - 1] >= original_layers {
            return Err(Error::Plan(format!(
                "retained layers {retained:?} must be strictly increasing and below {original_layers}"
            )));
        }
        let removed = (0..original_layers).filter(|i| !retained.contains(i)).collect();
        Ok(Self {
            original_layers,
            retained,
            removed,
        })
    }

    pub fn identity(layers: usize) -> Self {
        Self {
            original_layers: layers,
            retained: (0..layers).collect(),
            removed: Vec::new(),
        }
    }
}

/// Resolves `strategy` against a model with `layers` blocks.
pub fn plan_prune(layers: usize, strategy: PruneStrategy) -> Result<PrunePlan> {
    let k = strategy.k;
    if k >= layers {
        return Err(Error::Plan(format!(
            "cannot remove all layers (k = {k}, model has {layers})"
        )));
    }
    let start = match strategy.kind {
        PruneKind::Top => layers - k,
        PruneKind::Bottom => 0,
        PruneKind::Middle => (layers - k) / 2,
    };
    let removed: Vec<usize> = (start..start + k).collect();
    let retained = (0..layers).filter(|i| !removed.contains(i)).collect();
    Ok(PrunePlan {
        original_layers: layers,
        retained,
        removed,
    })
}

/// Copies the retained layers, in order, into a new model. Embeddings are
/// copied unchanged; the input is not modified.
pub fn prune_model<T: Scalar>(model: &EncoderModel<T>, plan: &PrunePlan) -> Result<EncoderModel<T>> {
    if plan.original_layers != model.num_layers() {
        return Err(Error::Plan(format!(
            "plan expects {} layers but model has {}",
            plan.original_layers,
            model.num_layers()
        )));
    }
    if plan.retained.is_empty() {
        return Err(Error::Plan("cannot remove all layers".into()));
    }
    if let Some(&bad) = plan.retained.iter().find(|&&i| i >= model.num_layers()) {
        return Err(Error::Plan(format!("retained layer {bad} does not exist")));
    }
    let mut config = model.config.clone();
    config.num_layers = plan.retained.len();
    Ok(EncoderModel {
        config,
        token_embedding: model.token_embedding.clone(),
        position_embedding: model.position_embedding.clone(),
        layers: plan.retained.iter().map(|&i| model.layers[i].clone()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub pruned_layer: usize,
    pub source_layer: usize,
    /// `None` when shapes differ.
    pub max_abs_diff: Option<f64>,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub ok: bool,
    pub original_layers: usize,
    pub pruned_layers: usize,
    pub expected_layers: usize,
    pub layers: Vec<LayerCheck>,
    pub issues: Vec<String>,
}

/// Checks that `pruned` is exactly `original` restricted to `plan.retained`.
pub fn verify_prune<T: Scalar>(
    original: &EncoderModel<T>,
    pruned: &EncoderModel<T>,
    plan: &PrunePlan,
) -> VerificationReport {
    let mut issues = Vec::new();
    let expected = plan.retained.len();
    if plan.original_layers != original.num_layers() {
        issues.push(format!(
            "layer count mismatch: plan expects {} original layers, model has {}",
            plan.original_layers,
            original.num_layers()
        ));
    }
    if plan.retained.len() + plan.removed.len() != plan.original_layers {
        issues.push(format!(
            "layer count mismatch: {} retained + {} removed != {}",
            plan.retained.len(),
            plan.removed.len(),
            plan.original_layers
        ));
    }
    if pruned.num_layers() != expected || pruned.config.num_layers != expected {
        issues.push(format!(
            "layer count mismatch: pruned model has {} layers, plan retains {expected}",
            pruned.num_layers()
        ));
    }
    let mut config = original.config.clone();
    config.num_layers = pruned.config.num_layers;
    if config != pruned.config {
        issues.push("config differs beyond num_layers".into());
    }
    for (name, a, b) in [
        ("token embedding", &original.token_embedding, &pruned.token_embedding),
        (
            "position embedding",
            &original.position_embedding,
            &pruned.position_embedding,
        ),
    ] {
        if !a.bit_eq(b) {
            issues.push(format!("{name} differs from the original"));
        }
    }

    let mut layers = Vec::new();
    for (j, &src) in plan.retained.iter().enumerate() {
        let (Some(p), Some(o)) = (pruned.layers.get(j), original.layers.get(src)) else {
            continue;
        };
        let ok = p.bit_eq(o);
        let max_abs_diff = p.max_abs_diff(o);
        if !ok {
            issues.push(format!(
                "pruned layer {j} differs from source layer {src} (max |diff| = {})",
                max_abs_diff.map_or("shape mismatch".to_string(), |d| format!("{d:e}"))
            ));
        }
        layers.push(LayerCheck {
            pruned_layer: j,
            source_layer: src,
            max_abs_diff,
            ok,
        });
    }
    VerificationReport {
        ok: issues.is_empty(),
        original_layers: original.num_layers(),
        pruned_layers: pruned.num_layers(),
        expected_layers: expected,
        layers,
        issues,
    }
}
