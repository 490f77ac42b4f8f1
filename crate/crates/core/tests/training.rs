use sbprune::data::{build_vocab, CorpusSpec, Dataset, NliExample, NliLabel, StsExample, SyntheticCorpus};
use sbprune::encoder::{EncoderConfig, EncoderModel};
use sbprune::training::{nli_loss, train_phase, two_phase_pipeline, NliHead, Objective, TrainConfig};

fn config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        vocab_size: 16,
        hidden_dim: 8,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 16,
        max_seq_len: 8,
        layer_norm_eps: 1e-12,
        seed,
    }
}

fn nli_set() -> Vec<NliExample> {
    vec![NliExample {
        premise: "the cat sat on a mat".into(),
        hypothesis: "a cat sat".into(),
        label: NliLabel::Entailment,
    }]
}

fn sts_set() -> Vec<StsExample> {
    vec![
        StsExample {
            sentence1: "the cat sat".into(),
            sentence2: "a cat sat".into(),
            score: 4.0,
        },
        StsExample {
            sentence1: "on a mat".into(),
            sentence2: "the cat".into(),
            score: 1.0,
        },
    ]
}

fn single(lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 1,
        learning_rate: lr,
        seed,
        max_seq_len: None,
        shuffle: true,
    }
}

#[test]
fn one_step_descends_on_a_single_example() {
    let data = nli_set();
    let vocab = build_vocab(
        data.iter().flat_map(|e| [e.premise.as_str(), e.hypothesis.as_str()]),
        16,
    )
    .unwrap();
    let (p, h) = (
        vocab.tokenize(&data[0].premise, 8),
        vocab.tokenize(&data[0].hypothesis, 8),
    );
    let mut descended = 0;
    for seed in 0..100 {
        let model = EncoderModel::<f32>::init(config(seed)).unwrap();
        let head = NliHead::init(8, seed);
        let before = nli_loss(&model, &head, &p, &h, 0).unwrap().data()[0];
        let out = train_phase(
            model,
            Some(head),
            &Dataset::Nli(data.clone()),
            Objective::Nli,
            &vocab,
            &single(0.01, seed),
        )
        .unwrap();
        let after = nli_loss(&out.model, out.head.as_ref().unwrap(), &p, &h, 0)
            .unwrap()
            .data()[0];
        descended += (after < before) as usize;
    }
    assert!(descended >= 95, "descended in {descended}/100 seeds");
}

#[test]
fn zero_learning_rate_is_identity() {
    let vocab = build_vocab(["the cat sat on a mat"], 16).unwrap();
    let model = EncoderModel::<f32>::init(config(1)).unwrap();
    let zero = |epochs| TrainConfig {
        epochs,
        learning_rate: 0.0,
        ..single(0.0, 1)
    };
    let out = train_phase(
        model.clone(),
        None,
        &Dataset::Sts(sts_set()),
        Objective::Sts,
        &vocab,
        &zero(2),
    )
    .unwrap();
    assert!(out.model.bit_eq(&model));
    let (piped, _) = two_phase_pipeline(model.clone(), &vocab, &nli_set(), &sts_set(), &zero(1), &zero(1)).unwrap();
    assert!(piped.bit_eq(&model));
}

#[test]
fn pipeline_is_the_composition_of_its_phases_and_deterministic() {
    let vocab = build_vocab(["the cat sat on a mat"], 16).unwrap();
    let model = EncoderModel::<f32>::init(config(2)).unwrap();
    let (cn, cs) = (
        single(1e-2, 5),
        TrainConfig {
            epochs: 2,
            ..single(1e-2, 6)
        },
    );
    let (piped, report) = two_phase_pipeline(model.clone(), &vocab, &nli_set(), &sts_set(), &cn, &cs).unwrap();
    let p1 = train_phase(
        model.clone(),
        None,
        &Dataset::Nli(nli_set()),
        Objective::Nli,
        &vocab,
        &cn,
    )
    .unwrap();
    let p2 = train_phase(p1.model, None, &Dataset::Sts(sts_set()), Objective::Sts, &vocab, &cs).unwrap();
    assert!(piped.bit_eq(&p2.model));
    assert_eq!(report.nli, p1.history);
    assert_eq!(report.sts, p2.history);
    assert_eq!(report.sts.step_losses.len(), 4);
    assert_eq!(report.sts.epoch_losses.len(), 2);

    let (again, report2) = two_phase_pipeline(model, &vocab, &nli_set(), &sts_set(), &cn, &cs).unwrap();
    assert!(again.bit_eq(&piped));
    assert_eq!(report, report2);
    assert!(report
        .nli
        .step_losses
        .iter()
        .chain(&report.sts.step_losses)
        .all(|l| *l >= 0.0));
}

#[test]
fn sts_loss_falls_on_the_synthetic_corpus() {
    let corpus = SyntheticCorpus::generate(&CorpusSpec {
        seed: 3,
        nli_train: 300,
        sts_train: 300,
        ..CorpusSpec::default()
    })
    .unwrap();
    let vocab = build_vocab(corpus.training_texts(), 256).unwrap();
    let model = EncoderModel::<f32>::init(EncoderConfig {
        num_layers: 2,
        ..EncoderConfig::default()
    })
    .unwrap();
    let cfg = |seed| TrainConfig {
        epochs: 3,
        ..TrainConfig::sts_default().with_seed(seed)
    };
    let (_, report) =
        two_phase_pipeline(model, &vocab, &corpus.nli_train, &corpus.sts_train, &cfg(3), &cfg(4)).unwrap();
    let losses = &report.sts.epoch_losses;
    assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
}
