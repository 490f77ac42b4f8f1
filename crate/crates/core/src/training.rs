//! Siamese fine-tuning: a 3-way NLI classifier over `(u, v, |u - v|)` followed
//! by cosine regression onto scaled STS gold scores.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NliExample, StsExample, Tokens, Vocab};
use crate::encoder::{EncoderModel, EncoderVars, INIT_STD};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Scalar, Tape, Tensor, Var};

pub const NLI_CLASSES: usize = 3;

/// Linear classifier over `concat(u, v, |u - v|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NliHead<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Scalar> NliHead<T> {
    pub fn init(hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let data = (0..NLI_CLASSES * 3 * hidden_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(z * INIT_STD)
            })
            .collect();
        Self {
            weight: Tensor::new(vec![NLI_CLASSES, 3 * hidden_dim], data)
                .expect("valid shape")
                .with_grad(),
            bias: Tensor::zeros(&[NLI_CLASSES]).with_grad(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> HeadVars {
        let mut put = |t: &Tensor<T>| if trainable { tape.leaf(t) } else { tape.constant(t) };
        HeadVars {
            weight: put(&self.weight),
            bias: put(&self.bias),
        }
    }

    fn check_width(&self, hidden_dim: usize) -> Result<()> {
        if self.weight.shape() != [NLI_CLASSES, 3 * hidden_dim] || self.bias.shape() != [NLI_CLASSES] {
            return Err(Error::dim(
                "nli_head",
                self.weight.shape(),
                &[NLI_CLASSES, 3 * hidden_dim],
            ));
        }
        Ok(())
    }
}

/// Mean-pooled embedding `[d]` of one tokenized sentence, on the tape.
pub fn embed_on<T: Scalar>(
    tape: &mut Tape<T>,
    model: &EncoderModel<T>,
    vars: &EncoderVars,
    tokens: &Tokens,
) -> Result<Var> {
    let (ids, mask) = tokens.trimmed();
    let hidden = model.encode_on(tape, vars, ids, mask, None)?;
    tape.mean_rows_masked(hidden, mask)
}

/// NLI logits `[1 × 3]` for a sentence pair.
pub fn nli_logits_on<T: Scalar>(
    tape: &mut Tape<T>,
    model: &EncoderModel<T>,
    vars: &EncoderVars,
    head: HeadVars,
    premise: &Tokens,
    hypothesis: &Tokens,
) -> Result<Var> {
    let u = embed_on(tape, model, vars, premise)?;
    let v = embed_on(tape, model, vars, hypothesis)?;
    let diff = tape.sub(u, v)?;
    let diff = tape.abs(diff)?;
    let features = tape.concat_cols(&[u, v, diff])?;
    let width = tape.shape(features)[0];
    let row = tape.reshape(features, &[1, width])?;
    let wt = tape.transpose(head.weight)?;
    let logits = tape.matmul(row, wt)?;
    tape.add_row_bias(logits, head.bias)
}

pub fn nli_loss_on<T: Scalar>(
    tape: &mut Tape<T>,
    model: &EncoderModel<T>,
    vars: &EncoderVars,
    head: HeadVars,
    premise: &Tokens,
    hypothesis: &Tokens,
    label: usize,
) -> Result<Var> {
    if label >= NLI_CLASSES {
        return Err(Error::input(format!("NLI label {label} out of range")));
    }
    let logits = nli_logits_on(tape, model, vars, head, premise, hypothesis)?;
    tape.cross_entropy(logits, label)
}

pub fn sts_loss_on<T: Scalar>(
    tape: &mut Tape<T>,
    model: &EncoderModel<T>,
    vars: &EncoderVars,
    s1: &Tokens,
    s2: &Tokens,
    gold: f64,
) -> Result<Var> {
    if !(0.0..=5.0).contains(&gold) {
        return Err(Error::input(format!("STS gold score {gold} outside [0, 5]")));
    }
    let u = embed_on(tape, model, vars, s1)?;
    let v = embed_on(tape, model, vars, s2)?;
    let cos = tape.cosine(u, v)?;
    let target = tape.constant(&Tensor::scalar(T::of(gold / 5.0)));
    tape.mse(cos, target)
}

/// Cross-entropy of the NLI head on one pair, without gradients.
pub fn nli_loss<T: Scalar>(
    model: &EncoderModel<T>,
    head: &NliHead<T>,
    premise: &Tokens,
    hypothesis: &Tokens,
    label: usize,
) -> Result<Tensor<T>> {
    head.check_width(model.config.hidden_dim)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let hv = head.bind(&mut tape, false);
    let l = nli_loss_on(&mut tape, model, &vars, hv, premise, hypothesis, label)?;
    Ok(tape.to_tensor(l))
}

/// `(cos(u, v) - gold / 5)²`, without gradients.
pub fn sts_loss<T: Scalar>(model: &EncoderModel<T>, s1: &Tokens, s2: &Tokens, gold: f64) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let l = sts_loss_on(&mut tape, model, &vars, s1, s2, gold)?;
    Ok(tape.to_tensor(l))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Nli,
    Sts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_seq_len: Option<usize>,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn nli_default() -> Self {
        Self {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            max_seq_len: None,
            shuffle: true,
        }
    }

    pub fn sts_default() -> Self {
        Self {
            epochs: 5,
            ..Self::nli_default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if self.max_seq_len == Some(0) {
            return Err(Error::Config("max_seq_len must be positive".into()));
        }
        Ok(())
    }
}

/// Loss trajectory of one training phase. Wall-clock timings are kept out of
/// equality and serialization so that histories are reproducible.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

impl PartialEq for TrainHistory {
    fn eq(&self, other: &Self) -> bool {
        self.step_losses == other.step_losses && self.epoch_losses == other.epoch_losses
    }
}

pub struct PhaseOutput<T = f32> {
    pub model: EncoderModel<T>,
    pub head: Option<NliHead<T>>,
    pub history: TrainHistory,
}

enum Prepared {
    Nli(Vec<(Tokens, Tokens, usize)>),
    Sts(Vec<(Tokens, Tokens, f64)>),
}

impl Prepared {
    fn len(&self) -> usize {
        match self {
            Prepared::Nli(v) => v.len(),
            Prepared::Sts(v) => v.len(),
        }
    }
}

fn prepare(dataset: &Dataset, objective: Objective, vocab: &Vocab, max_len: usize) -> Result<Prepared> {
    match (objective, dataset) {
        (Objective::Nli, Dataset::Nli(v)) => Ok(Prepared::Nli(prepare_nli(v, vocab, max_len))),
        (Objective::Sts, Dataset::Sts(v)) => Ok(Prepared::Sts(prepare_sts(v, vocab, max_len))),
        (obj, ds) => Err(Error::input(format!(
            "objective {obj:?} cannot train on a {} dataset",
            ds.kind()
        ))),
    }
}

fn prepare_nli(v: &[NliExample], vocab: &Vocab, max_len: usize) -> Vec<(Tokens, Tokens, usize)> {
    v.iter()
        .map(|e| {
            (
                vocab.tokenize(&e.premise, max_len),
                vocab.tokenize(&e.hypothesis, max_len),
                e.label.index(),
            )
        })
        .collect()
}

fn prepare_sts(v: &[StsExample], vocab: &Vocab, max_len: usize) -> Vec<(Tokens, Tokens, f64)> {
    v.iter()
        .map(|e| {
            (
                vocab.tokenize(&e.sentence1, max_len),
                vocab.tokenize(&e.sentence2, max_len),
                e.score,
            )
        })
        .collect()
}

/// Trains `model` (and, for NLI, the head) on `dataset` with Adam over
/// mini-batch mean losses. Deterministic for a given `(seed, data, cfg)`.
/// For the NLI objective a missing head is initialized from `cfg.seed`.
pub fn train_phase<T: Scalar>(
    mut model: EncoderModel<T>,
    head: Option<NliHead<T>>,
    dataset: &Dataset,
    objective: Objective,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<PhaseOutput<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::input("cannot train on an empty dataset"));
    }
    if vocab.len() > model.config.vocab_size {
        return Err(Error::input(format!(
            "vocabulary of {} tokens exceeds the model's embedding table ({})",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let max_len = cfg
        .max_seq_len
        .unwrap_or(model.config.max_seq_len)
        .min(model.config.max_seq_len);
    let data = prepare(dataset, objective, vocab, max_len)?;

    let mut head = match objective {
        Objective::Nli => {
            let h = head.unwrap_or_else(|| NliHead::init(model.config.hidden_dim, cfg.seed));
            h.check_width(model.config.hidden_dim)?;
            Some(h)
        }
        Objective::Sts => None,
    };

    let mut opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();

    for _ in 0..cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let loss = train_step(&mut model, head.as_mut(), &data, batch, &mut opt)?;
            history.step_losses.push(loss);
            epoch_total += loss;
            batches += 1;
        }
        history.epoch_losses.push(epoch_total / batches as f64);
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(PhaseOutput { model, head, history })
}

fn train_step<T: Scalar>(
    model: &mut EncoderModel<T>,
    head: Option<&mut NliHead<T>>,
    data: &Prepared,
    batch: &[usize],
    opt: &mut Adam<T>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let head_vars = head.as_ref().map(|h| h.bind(&mut tape, true));

    let mut losses = Vec::with_capacity(batch.len());
    for &i in batch {
        let l = match (data, head_vars) {
            (Prepared::Nli(v), Some(hv)) => {
                let (p, h, label) = &v[i];
                nli_loss_on(&mut tape, model, &vars, hv, p, h, *label)?
            }
            (Prepared::Sts(v), _) => {
                let (a, b, gold) = &v[i];
                sts_loss_on(&mut tape, model, &vars, a, b, *gold)?
            }
            (Prepared::Nli(_), None) => return Err(Error::usage("NLI training requires a head")),
        };
        losses.push(l);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    let mean = tape.scale(total, T::one() / T::of(batch.len() as f64))?;
    let grads = tape.backward(mean)?;

    let mut params = model.params_mut();
    for (p, v) in params.iter_mut().zip(vars.all()) {
        grads.accumulate_into(v, p)?;
    }
    if let (Some(h), Some(hv)) = (head, head_vars) {
        grads.accumulate_into(hv.weight, &mut h.weight)?;
        grads.accumulate_into(hv.bias, &mut h.bias)?;
        params.push(&mut h.weight);
        params.push(&mut h.bias);
    }
    for p in params.iter_mut() {
        if p.grad().is_none() {
            p.accumulate_grad(&vec![T::zero(); p.len()])?;
        }
    }
    opt.step(&mut params)?;
    Ok(tape.value(mean)[0].to_f64().expect("finite loss"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub nli: TrainHistory,
    pub sts: TrainHistory,
}

/// NLI training with a fresh head, then STS training of the resulting encoder.
/// The head is discarded after the first phase.
pub fn two_phase_pipeline<T: Scalar>(
    model: EncoderModel<T>,
    vocab: &Vocab,
    nli: &[NliExample],
    sts: &[StsExample],
    cfg_nli: &TrainConfig,
    cfg_sts: &TrainConfig,
) -> Result<(EncoderModel<T>, PipelineReport)> {
    if nli.is_empty() || sts.is_empty() {
        return Err(Error::input("both pipeline datasets must be non-empty"));
    }
    let phase1 = train_phase(model, None, &Dataset::Nli(nli.to_vec()), Objective::Nli, vocab, cfg_nli)?;
    let phase2 = train_phase(
        phase1.model,
        None,
        &Dataset::Sts(sts.to_vec()),
        Objective::Sts,
        vocab,
        cfg_sts,
    )?;
    Ok((
        phase2.model,
        PipelineReport {
            nli: phase1.history,
            sts: phase2.history,
        },
    ))
}
