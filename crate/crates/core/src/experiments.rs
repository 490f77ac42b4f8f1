//! The two comparisons the toolkit exists for: which depth region to prune,
//! and whether a pruned model beats one of the same size trained from scratch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{NliExample, StsExample, Vocab};
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::evaluation::{eval_sts, SimilarityReport};
use crate::pruning::{plan_prune, prune_model, PruneKind, PruneStrategy};
use crate::training::{two_phase_pipeline, TrainConfig};

/// Fine-tuning data and the STS pairs scored afterwards.
#[derive(Clone, Copy, Debug)]
pub struct ExperimentData<'a> {
    pub vocab: &'a Vocab,
    pub nli_train: &'a [NliExample],
    pub sts_train: &'a [StsExample],
    pub sts_eval: &'a [StsExample],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub nli: TrainConfig,
    pub sts: TrainConfig,
}

impl ExperimentConfig {
    /// Default schedules; the STS phase is seeded one past the NLI phase.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            nli: TrainConfig::nli_default().with_seed(seed),
            sts: TrainConfig::sts_default().with_seed(seed.wrapping_add(1)),
        }
    }
}

fn fine_tune_and_score(
    model: EncoderModel<f32>,
    data: &ExperimentData,
    cfg: &ExperimentConfig,
) -> Result<SimilarityReport> {
    let (trained, _) = two_phase_pipeline(model, data.vocab, data.nli_train, data.sts_train, &cfg.nli, &cfg.sts)?;
    eval_sts(&trained, data.vocab, data.sts_eval)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub k: usize,
    pub original_layers: usize,
    /// Keyed by `top`, `middle`, `bottom`.
    pub reports: BTreeMap<String, SimilarityReport>,
}

impl StrategyComparison {
    pub fn spearman(&self, kind: PruneKind) -> f64 {
        self.reports[kind.as_str()].spearman
    }

    /// Strategies in descending Spearman order; ties keep top, middle, bottom order.
    pub fn ranking(&self) -> Vec<PruneKind> {
        let mut kinds = PruneKind::ALL.to_vec();
        kinds.sort_by(|a, b| self.spearman(*b).total_cmp(&self.spearman(*a)));
        kinds
    }
}

/// Prunes `k` layers from `base` with each strategy, fine-tunes every pruned
/// model with the same schedule and seeds, and scores it on `data.sts_eval`.
pub fn compare_strategies(
    base: &EncoderModel<f32>,
    k: usize,
    data: &ExperimentData,
    cfg: &ExperimentConfig,
) -> Result<StrategyComparison> {
    let mut reports = BTreeMap::new();
    for kind in PruneKind::ALL {
        let plan = plan_prune(base.num_layers(), PruneStrategy::new(kind, k))?;
        let pruned = prune_model(base, &plan)?;
        reports.insert(kind.as_str().to_string(), fine_tune_and_score(pruned, data, cfg)?);
    }
    Ok(StrategyComparison {
        k,
        original_layers: base.num_layers(),
        reports,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Pruned,
    Scratch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScratchComparison {
    pub target_layers: usize,
    pub pruned: SimilarityReport,
    pub scratch: SimilarityReport,
    /// The pruned arm wins ties.
    pub winner: Arm,
}

/// Arm A keeps the bottom `target_layers` layers of `base` (top pruning); arm
/// B is a fresh model of that depth with the base's width and seed. Both then
/// get the identical two-phase fine-tune.
pub fn pruned_vs_scratch(
    base: &EncoderModel<f32>,
    target_layers: usize,
    data: &ExperimentData,
    cfg: &ExperimentConfig,
) -> Result<ScratchComparison> {
    let layers = base.num_layers();
    if target_layers == 0 || target_layers >= layers {
        return Err(Error::Plan(format!(
            "target_layers must be in 1..{layers}, got {target_layers}"
        )));
    }
    let plan = plan_prune(layers, PruneStrategy::new(PruneKind::Top, layers - target_layers))?;
    let pruned = prune_model(base, &plan)?;
    let scratch = EncoderModel::init(EncoderConfig {
        num_layers: target_layers,
        ..base.config.clone()
    })?;
    let pruned = fine_tune_and_score(pruned, data, cfg)?;
    let scratch = fine_tune_and_score(scratch, data, cfg)?;
    let winner = if pruned.spearman >= scratch.spearman {
        Arm::Pruned
    } else {
        Arm::Scratch
    };
    Ok(ScratchComparison {
        target_layers,
        pruned,
        scratch,
        winner,
    })
}
