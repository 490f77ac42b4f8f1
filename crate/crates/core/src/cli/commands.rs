use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::args::*;
use crate::data::{
    build_vocab, checkpoint_bytes, gen_synthetic, load_dataset, read_checkpoint, Checkpoint, CorpusSpec, Dataset,
    DatasetKind, NliExample, StsExample, SyntheticCorpus, SyntheticSpec, Vocab,
};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::evaluation::{eval_knn, eval_sts, SimilarityReport};
use crate::experiments::{compare_strategies, pruned_vs_scratch, ExperimentConfig, ExperimentData};
use crate::pruning::{plan_prune, prune_model, verify_prune, PruneStrategy};
use crate::training::{train_phase, two_phase_pipeline, Objective, TrainConfig, TrainHistory};

/// What a successful command produced. Files are written only after the
/// whole command has succeeded.
pub struct Outcome {
    pub report: Value,
    pub writes: Vec<(PathBuf, Vec<u8>)>,
    pub summary: String,
}

impl Outcome {
    fn new(report: Value, summary: impl Into<String>) -> Self {
        Self {
            report,
            writes: Vec::new(),
            summary: summary.into(),
        }
    }

    fn write(mut self, path: &Path, bytes: Vec<u8>) -> Self {
        self.writes.push((path.to_path_buf(), bytes));
        self
    }
}

pub fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Init(a) => init(a),
        Command::GenData(a) => gen_data(a),
        Command::TrainNli(a) => train(a, Objective::Nli),
        Command::TrainSts(a) => train(a, Objective::Sts),
        Command::Pipeline(a) => pipeline(a),
        Command::Prune(a) => prune(a),
        Command::VerifyPrune(a) => verify(a),
        Command::EvalSts(a) => eval_sts_cmd(a),
        Command::EvalKnn(a) => eval_knn_cmd(a),
        Command::CompareStrategies(a) => compare(a),
        Command::PrunedVsScratch(a) => scratch(a),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn require_vocab(ckpt: &Checkpoint, path: &Path) -> Result<Vocab> {
    ckpt.vocab.clone().ok_or_else(|| {
        Error::input(format!(
            "{} has no vocabulary; train it first so one is recorded",
            path.display()
        ))
    })
}

/// The checkpoint's vocabulary, or one built from `texts` to fill the model's
/// embedding table.
fn vocab_or_build(vocab: Option<Vocab>, model: &EncoderModel, texts: Vec<&str>) -> Result<Vocab> {
    match vocab {
        Some(v) => Ok(v),
        None => build_vocab(texts, model.config.vocab_size),
    }
}

fn init(a: InitArgs) -> Result<Outcome> {
    let model = EncoderModel::<f32>::init(a.model.config(a.seed))?;
    let report = json!({
        "command": "init",
        "config": model.config,
        "parameter_count": model.parameter_count(),
        "out": path_str(&a.out),
    });
    let summary = format!(
        "initialized {} layers, d = {}, {} parameters",
        model.num_layers(),
        model.config.hidden_dim,
        model.parameter_count()
    );
    Ok(Outcome::new(report, summary).write(&a.out, checkpoint_bytes(&model, None)))
}

const CORPUS_FILES: [&str; 6] = [
    "nli_train.jsonl",
    "sts_train.tsv",
    "sts_dev.tsv",
    "sts_test.tsv",
    "cls_train.jsonl",
    "cls_test.jsonl",
];

fn gen_data(a: GenDataArgs) -> Result<Outcome> {
    let mut files = Vec::new();
    let mut writes = Vec::new();
    match a.kind.dataset_kind() {
        Some(kind) => {
            let ds = gen_synthetic(&SyntheticSpec {
                kind,
                n: a.n,
                seed: a.seed,
                vocab_size: a.vocab_size,
                num_topics: a.num_topics,
            })?;
            files.push(json!({ "path": path_str(&a.out), "kind": kind, "examples": ds.len() }));
            writes.push((a.out.clone(), ds.to_file_string().into_bytes()));
        }
        None => {
            let c = SyntheticCorpus::generate(&CorpusSpec {
                seed: a.seed,
                vocab_size: a.vocab_size,
                num_topics: a.num_topics,
                ..CorpusSpec::default()
            })?;
            let splits = [
                Dataset::Nli(c.nli_train),
                Dataset::Sts(c.sts_train),
                Dataset::Sts(c.sts_dev),
                Dataset::Sts(c.sts_test),
                Dataset::Cls(c.cls_train),
                Dataset::Cls(c.cls_test),
            ];
            for (name, ds) in CORPUS_FILES.iter().zip(splits) {
                let path = a.out.join(name);
                files.push(json!({ "path": path_str(&path), "kind": ds.kind(), "examples": ds.len() }));
                writes.push((path, ds.to_file_string().into_bytes()));
            }
        }
    }
    let summary = format!("generated {} file(s) with seed {}", writes.len(), a.seed);
    Ok(Outcome {
        report: json!({ "command": "gen-data", "seed": a.seed, "files": files }),
        writes,
        summary,
    })
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(path)
}

fn history_summary(name: &str, h: &TrainHistory) -> String {
    let losses: Vec<String> = h.epoch_losses.iter().map(|l| format!("{l:.4}")).collect();
    let secs: f64 = h.epoch_seconds.iter().sum();
    format!("{name}: epoch losses [{}] in {secs:.1}s", losses.join(", "))
}

fn train(a: TrainArgs, objective: Objective) -> Result<Outcome> {
    let ckpt = load_ckpt(&a.input)?;
    let kind = match objective {
        Objective::Nli => DatasetKind::Nli,
        Objective::Sts => DatasetKind::Sts,
    };
    let data = load_dataset(&a.data, kind)?;
    let default_epochs = match objective {
        Objective::Nli => TrainConfig::nli_default().epochs,
        Objective::Sts => TrainConfig::sts_default().epochs,
    };
    let cfg = a.optim.train_config(a.epochs.unwrap_or(default_epochs), a.seed);
    let vocab = vocab_or_build(ckpt.vocab, &ckpt.model, data.texts())?;
    let out = train_phase(ckpt.model, None, &data, objective, &vocab, &cfg)?;
    let name = match objective {
        Objective::Nli => "train-nli",
        Objective::Sts => "train-sts",
    };
    let report = json!({
        "command": name,
        "examples": data.len(),
        "train_config": cfg,
        "history": out.history,
        "out": path_str(&a.out),
    });
    let summary = history_summary(name, &out.history);
    Ok(Outcome::new(report, summary).write(&a.out, checkpoint_bytes(&out.model, Some(&vocab))))
}

/// Datasets for the multi-phase commands, synthesizing whatever is missing.
struct PhaseData {
    nli: Vec<NliExample>,
    sts: Vec<StsExample>,
    sts_eval: Option<Vec<StsExample>>,
}

fn phase_data(d: &DataArgs, seed: u64, vocab_size: usize) -> Result<PhaseData> {
    let needs_corpus = d.nli.is_none() || d.sts.is_none() || d.sts_eval.is_none();
    let corpus = if needs_corpus {
        Some(SyntheticCorpus::generate(&CorpusSpec {
            seed,
            vocab_size,
            num_topics: d.num_topics,
            ..CorpusSpec::default()
        })?)
    } else {
        None
    };
    let nli = match &d.nli {
        Some(p) => load_dataset(p, DatasetKind::Nli)?.into_nli()?,
        None => corpus.as_ref().expect("generated").nli_train.clone(),
    };
    let sts = match &d.sts {
        Some(p) => load_dataset(p, DatasetKind::Sts)?.into_sts()?,
        None => corpus.as_ref().expect("generated").sts_train.clone(),
    };
    let sts_eval = match &d.sts_eval {
        Some(p) => Some(load_dataset(p, DatasetKind::Sts)?.into_sts()?),
        // synthetic held-out pairs only make sense next to synthetic training data
        None if d.sts.is_none() => Some(corpus.as_ref().expect("generated").sts_test.clone()),
        None => None,
    };
    Ok(PhaseData { nli, sts, sts_eval })
}

fn nli_texts(nli: &[NliExample]) -> Vec<&str> {
    nli.iter()
        .flat_map(|e| [e.premise.as_str(), e.hypothesis.as_str()])
        .collect()
}

/// NLI phase seeded with `seed`, STS phase with `seed + 1`.
fn phase_configs(d: &DataArgs, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        nli: d.optim.train_config(d.nli_epochs, seed),
        sts: d.optim.train_config(d.sts_epochs, seed.wrapping_add(1)),
    }
}

fn pipeline(a: PipelineArgs) -> Result<Outcome> {
    let (model, vocab) = match &a.input {
        Some(p) => {
            let c = load_ckpt(p)?;
            (c.model, c.vocab)
        }
        None => (EncoderModel::init(a.model.config(a.seed))?, None),
    };
    let data = phase_data(&a.data, a.seed, model.config.vocab_size)?;
    // same vocabulary rule as train-nli, so the two routes agree bitwise
    let vocab = vocab_or_build(vocab, &model, nli_texts(&data.nli))?;
    let cfg = phase_configs(&a.data, a.seed);
    let (trained, hist) = two_phase_pipeline(model, &vocab, &data.nli, &data.sts, &cfg.nli, &cfg.sts)?;
    let eval = data
        .sts_eval
        .as_ref()
        .map(|pairs| eval_sts(&trained, &vocab, pairs))
        .transpose()?;
    let mut summary = format!(
        "{}\n{}",
        history_summary("nli", &hist.nli),
        history_summary("sts", &hist.sts)
    );
    if let Some(e) = &eval {
        summary.push_str(&format!(
            "\nheld-out spearman {:.4}, pearson {:.4}",
            e.spearman, e.pearson
        ));
    }
    let report = json!({
        "command": "pipeline",
        "seed": a.seed,
        "config": trained.config,
        "nli_config": cfg.nli,
        "sts_config": cfg.sts,
        "nli": hist.nli,
        "sts": hist.sts,
        "eval": eval,
        "out": a.out.as_deref().map(path_str),
    });
    let mut outcome = Outcome::new(report, summary);
    if let Some(out) = &a.out {
        outcome = outcome.write(out, checkpoint_bytes(&trained, Some(&vocab)));
    }
    Ok(outcome)
}

fn prune(a: PruneArgs) -> Result<Outcome> {
    let ckpt = load_ckpt(&a.input)?;
    let strategy = PruneStrategy::from_signed(a.strategy, a.k)?;
    let plan = plan_prune(ckpt.model.num_layers(), strategy)?;
    let pruned = prune_model(&ckpt.model, &plan)?;
    let summary = format!(
        "{} pruning: kept layers {:?}, removed {:?}",
        a.strategy, plan.retained, plan.removed
    );
    let report = json!({
        "command": "prune",
        "strategy": a.strategy,
        "k": strategy.k,
        "plan": plan,
        "out": path_str(&a.out),
    });
    Ok(Outcome::new(report, summary).write(&a.out, checkpoint_bytes(&pruned, ckpt.vocab.as_ref())))
}

fn verify(a: VerifyArgs) -> Result<Outcome> {
    let original = load_ckpt(&a.original)?.model;
    let pruned = load_ckpt(&a.pruned)?.model;
    let strategy = PruneStrategy::from_signed(a.strategy, a.k)?;
    let plan = plan_prune(original.num_layers(), strategy)?;
    let report = verify_prune(&original, &pruned, &plan);
    if !report.ok {
        return Err(Error::Input(format!(
            "pruned model does not match the plan: {}",
            report.issues.join("; ")
        )));
    }
    let summary = format!(
        "ok: {} of {} layers match the source bitwise",
        report.pruned_layers, report.original_layers
    );
    let mut value = serde_json::to_value(&report).expect("serializable");
    value["command"] = json!("verify-prune");
    value["plan"] = serde_json::to_value(&plan).expect("serializable");
    Ok(Outcome::new(value, summary))
}

fn similarity_json(r: &SimilarityReport) -> Value {
    serde_json::to_value(r).expect("serializable")
}

fn eval_sts_cmd(a: EvalStsArgs) -> Result<Outcome> {
    let ckpt = load_ckpt(&a.model)?;
    let vocab = require_vocab(&ckpt, &a.model)?;
    let pairs = load_dataset(&a.data, DatasetKind::Sts)?.into_sts()?;
    let r = eval_sts(&ckpt.model, &vocab, &pairs)?;
    let summary = format!(
        "spearman {:.4}, pearson {:.4} over {} pairs",
        r.spearman, r.pearson, r.n_pairs
    );
    let mut value = similarity_json(&r);
    value["command"] = json!("eval-sts");
    Ok(Outcome::new(value, summary))
}

fn eval_knn_cmd(a: EvalKnnArgs) -> Result<Outcome> {
    let ckpt = load_ckpt(&a.model)?;
    let vocab = require_vocab(&ckpt, &a.model)?;
    let train = load_dataset(&a.train, DatasetKind::Cls)?.into_cls()?;
    let test = load_dataset(&a.test, DatasetKind::Cls)?.into_cls()?;
    let r = eval_knn(&ckpt.model, &vocab, &train, &test, a.k)?;
    let summary = format!("accuracy {:.4} over {} examples, k = {}", r.accuracy, r.n_test, r.k);
    let mut value = serde_json::to_value(&r).expect("serializable");
    value["command"] = json!("eval-knn");
    Ok(Outcome::new(value, summary))
}

struct Experiment {
    base: EncoderModel,
    vocab: Vocab,
    data: PhaseData,
    cfg: ExperimentConfig,
    base_eval: SimilarityReport,
}

/// Loads `--base` or trains one with the pipeline; both routes share the data
/// and phase seeds used for the arms.
fn experiment(e: &ExperimentArgs) -> Result<Experiment> {
    let (model, vocab, pretrained) = match &e.base {
        Some(p) => {
            let c = load_ckpt(p)?;
            let v = require_vocab(&c, p)?;
            (c.model, Some(v), true)
        }
        None => (EncoderModel::init(e.model().config(e.seed))?, None, false),
    };
    let data = phase_data(&e.data, e.seed, model.config.vocab_size)?;
    let eval_pairs = data
        .sts_eval
        .as_ref()
        .ok_or_else(|| Error::input("experiments need --sts-eval when --sts is given"))?;
    let vocab = vocab_or_build(vocab, &model, nli_texts(&data.nli))?;
    let cfg = phase_configs(&e.data, e.seed);
    let base = if pretrained {
        model
    } else {
        two_phase_pipeline(model, &vocab, &data.nli, &data.sts, &cfg.nli, &cfg.sts)?.0
    };
    let base_eval = eval_sts(&base, &vocab, eval_pairs)?;
    Ok(Experiment {
        base,
        vocab,
        data,
        cfg,
        base_eval,
    })
}

impl Experiment {
    fn data(&self) -> ExperimentData<'_> {
        ExperimentData {
            vocab: &self.vocab,
            nli_train: &self.data.nli,
            sts_train: &self.data.sts,
            sts_eval: self.data.sts_eval.as_deref().expect("checked in experiment()"),
        }
    }
}

fn compare(a: CompareArgs) -> Result<Outcome> {
    let x = experiment(&a.exp)?;
    let k = PruneStrategy::from_signed(crate::pruning::PruneKind::Top, a.k)?.k;
    let r = compare_strategies(&x.base, k, &x.data(), &x.cfg)?;
    let ranking = r.ranking();
    let top_wins = ranking[0] == crate::pruning::PruneKind::Top;
    let scores: Vec<String> = crate::pruning::PruneKind::ALL
        .iter()
        .map(|s| format!("{s} {:.4}", r.spearman(*s)))
        .collect();
    let mut summary = format!(
        "spearman after removing {k} of {} layers: {}",
        r.original_layers,
        scores.join(", ")
    );
    if !top_wins {
        summary.push_str("\nnote: top pruning did not score best on this run");
    }
    let report = json!({
        "command": "compare-strategies",
        "seed": a.exp.seed,
        "k": k,
        "original_layers": r.original_layers,
        "base_eval": similarity_json(&x.base_eval),
        "reports": r.reports,
        "ranking": ranking,
        "top_wins": top_wins,
    });
    Ok(Outcome::new(report, summary))
}

fn scratch(a: ScratchArgs) -> Result<Outcome> {
    let x = experiment(&a.exp)?;
    let target = a.target_layers.unwrap_or(x.base.num_layers() / 2);
    let r = pruned_vs_scratch(&x.base, target, &x.data(), &x.cfg)?;
    let summary = format!(
        "{target} layers: pruned {:.4} vs scratch {:.4} spearman ({} wins)",
        r.pruned.spearman,
        r.scratch.spearman,
        serde_json::to_value(r.winner)
            .expect("serializable")
            .as_str()
            .unwrap_or("?")
    );
    let mut value = serde_json::to_value(&r).expect("serializable");
    value["command"] = json!("pruned-vs-scratch");
    value["seed"] = json!(a.exp.seed);
    value["original_layers"] = json!(x.base.num_layers());
    value["base_eval"] = similarity_json(&x.base_eval);
    Ok(Outcome::new(value, summary))
}
