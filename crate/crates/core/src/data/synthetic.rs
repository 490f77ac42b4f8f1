//! Topic-based synthetic corpora.
//!
//! Each topic owns a disjoint pool of content words (`t<topic>w<index>`); a
//! small shared pool of function words (`f<j>`) carries no meaning. A sentence
//! is 4-8 distinct content words of one topic plus 6-10 function words drawn
//! with replacement, shuffled together. The function words make raw token
//! overlap a noisy similarity cue, so an encoder has to learn to ignore them.
//!
//! * NLI: an entailment hypothesis is an order-preserving subsample of the
//!   premise's tokens, so its words are always a subset of the premise's;
//!   a contradiction is a sentence of a different topic; a neutral hypothesis
//!   shares half of its content words with the premise and draws the rest from
//!   unused words of the same topic. Labels cycle through the three classes
//!   before shuffling, so class counts differ by at most one.
//! * STS: the second sentence keeps `m` of the first sentence's `c` content
//!   words and fills the other `c - m` from a different topic. Gold is
//!   `round(5 * J)` with `J = m / (2c - m)` the content-word Jaccard overlap.
//!   Half of the `m == c` draws are verbatim copies.
//! * CLS: label is `topic<t>`, classes balanced.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`, a portable stream cipher generator that produces the same
//! sequence on every platform.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{ClsExample, Dataset, DatasetKind, NliExample, NliLabel, StsExample};
use crate::error::{Error, Result};

const MIN_CONTENT: usize = 4;
const MAX_CONTENT: usize = 8;
const MIN_FUNCTION: usize = 6;
const MAX_FUNCTION: usize = 10;
pub const FUNCTION_WORDS: usize = 8;
const MIN_TOPIC_WORDS: usize = 2 * MAX_CONTENT;

/// Longest sentence the generator emits, in tokens.
pub const MAX_SENTENCE_LEN: usize = MAX_CONTENT + MAX_FUNCTION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub seed: u64,
    /// Target vocabulary size including the two reserved ids.
    pub vocab_size: usize,
    pub num_topics: usize,
}

/// The word pools implied by `(vocab_size, num_topics)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordUniverse {
    pub function_words: Vec<String>,
    pub topics: Vec<Vec<String>>,
}

impl WordUniverse {
    pub fn new(vocab_size: usize, num_topics: usize) -> Result<Self> {
        if num_topics < 2 {
            return Err(Error::input(format!("need at least 2 topics, got {num_topics}")));
        }
        let per_topic = vocab_size.saturating_sub(2 + FUNCTION_WORDS) / num_topics;
        if per_topic < MIN_TOPIC_WORDS {
            return Err(Error::input(format!(
                "vocab_size {vocab_size} is too small for {num_topics} topics \
                 (each topic needs {MIN_TOPIC_WORDS} words)"
            )));
        }
        Ok(Self {
            function_words: (0..FUNCTION_WORDS).map(|j| format!("f{j}")).collect(),
            topics: (0..num_topics)
                .map(|t| (0..per_topic).map(|w| format!("t{t}w{w}")).collect())
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.function_words.len() + self.topics.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Topic of a content word, or `None` for function and unknown words.
    pub fn topic_of(&self, word: &str) -> Option<usize> {
        let (t, w) = word.strip_prefix('t')?.split_once('w')?;
        let (t, w): (usize, usize) = (t.parse().ok()?, w.parse().ok()?);
        (t < self.topics.len() && w < self.topics[t].len()).then_some(t)
    }
}

struct Generator<'a> {
    rng: ChaCha8Rng,
    universe: &'a WordUniverse,
}

impl Generator<'_> {
    /// `count` distinct word indices of `topic`, avoiding `exclude`.
    fn words(&mut self, topic: usize, count: usize, exclude: &[usize]) -> Vec<(usize, usize)> {
        let candidates: Vec<usize> = (0..self.universe.topics[topic].len())
            .filter(|w| !exclude.contains(w))
            .collect();
        index::sample(&mut self.rng, candidates.len(), count.min(candidates.len()))
            .into_iter()
            .map(|i| (topic, candidates[i]))
            .collect()
    }

    fn subset<T: Copy>(&mut self, items: &[T], count: usize) -> Vec<T> {
        index::sample(&mut self.rng, items.len(), count.min(items.len()))
            .into_iter()
            .map(|i| items[i])
            .collect()
    }

    fn content_len(&mut self) -> usize {
        self.rng.random_range(MIN_CONTENT..=MAX_CONTENT)
    }

    /// Content words plus function words, shuffled.
    fn sentence(&mut self, content: &[(usize, usize)]) -> String {
        let u = self.universe;
        let mut words: Vec<&str> = content.iter().map(|&(t, w)| u.topics[t][w].as_str()).collect();
        let n = self.rng.random_range(MIN_FUNCTION..=MAX_FUNCTION);
        for _ in 0..n {
            words.push(&u.function_words[self.rng.random_range(0..FUNCTION_WORDS)]);
        }
        words.shuffle(&mut self.rng);
        words.join(" ")
    }

    fn other_topic(&mut self, topic: usize) -> usize {
        let n = self.universe.topics.len();
        (topic + self.rng.random_range(1..n)) % n
    }

    fn nli(&mut self, label: NliLabel) -> NliExample {
        let topic = self.rng.random_range(0..self.universe.topics.len());
        let c = self.content_len();
        let content = self.words(topic, c, &[]);
        let premise = self.sentence(&content);
        let hypothesis = match label {
            NliLabel::Entailment => {
                let tokens: Vec<&str> = premise.split(' ').collect();
                let keep = self.rng.random_range((tokens.len() / 2).max(2)..tokens.len());
                let mut idx = index::sample(&mut self.rng, tokens.len(), keep).into_vec();
                idx.sort_unstable();
                idx.iter().map(|&i| tokens[i]).collect::<Vec<_>>().join(" ")
            }
            NliLabel::Contradiction => {
                let other = self.other_topic(topic);
                let c = self.content_len();
                let words = self.words(other, c, &[]);
                self.sentence(&words)
            }
            NliLabel::Neutral => {
                let c = self.content_len();
                let shared = c.div_ceil(2).min(content.len());
                let mut words = self.subset(&content, shared);
                let used: Vec<usize> = content.iter().map(|w| w.1).collect();
                words.extend(self.words(topic, c - shared, &used));
                self.sentence(&words)
            }
        };
        NliExample {
            premise,
            hypothesis,
            label,
        }
    }

    fn sts(&mut self) -> StsExample {
        let topic = self.rng.random_range(0..self.universe.topics.len());
        let c = self.content_len();
        let a = self.words(topic, c, &[]);
        let sentence1 = self.sentence(&a);
        let m = self.rng.random_range(0..=c);
        if m == c && self.rng.random_bool(0.5) {
            return StsExample {
                sentence2: sentence1.clone(),
                sentence1,
                score: 5.0,
            };
        }
        let mut b = self.subset(&a, m);
        let other = self.other_topic(topic);
        b.extend(self.words(other, c - m, &[]));
        let sentence2 = self.sentence(&b);
        // both sides have c content words, m of them shared
        let jaccard = m as f64 / (2 * c - m) as f64;
        StsExample {
            sentence1,
            sentence2,
            score: (5.0 * jaccard).round(),
        }
    }

    fn cls(&mut self, topic: usize) -> ClsExample {
        let c = self.content_len();
        let words = self.words(topic, c, &[]);
        ClsExample {
            text: self.sentence(&words),
            label: format!("topic{topic}"),
        }
    }

    /// `0, 1, .., classes-1, 0, 1, ..` truncated to `n`, then shuffled.
    fn balanced(&mut self, n: usize, classes: usize) -> Vec<usize> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        labels.shuffle(&mut self.rng);
        labels
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::input("synthetic dataset size must be positive"));
    }
    let universe = WordUniverse::new(spec.vocab_size, spec.num_topics)?;
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        universe: &universe,
    };
    Ok(match spec.kind {
        DatasetKind::Nli => {
            let labels = g.balanced(spec.n, 3);
            Dataset::Nli(
                labels
                    .into_iter()
                    .map(|l| g.nli(NliLabel::from_index(l).expect("< 3")))
                    .collect(),
            )
        }
        DatasetKind::Sts => Dataset::Sts((0..spec.n).map(|_| g.sts()).collect()),
        DatasetKind::Cls => {
            let topics = g.balanced(spec.n, spec.num_topics);
            Dataset::Cls(topics.into_iter().map(|t| g.cls(t)).collect())
        }
    })
}

/// Split sizes and shape parameters for a full synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub vocab_size: usize,
    pub num_topics: usize,
    pub nli_train: usize,
    pub sts_train: usize,
    pub sts_dev: usize,
    pub sts_test: usize,
    pub cls_train: usize,
    pub cls_test: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: 256,
            num_topics: 3,
            nli_train: 2000,
            sts_train: 2000,
            sts_dev: 200,
            sts_test: 200,
            cls_train: 300,
            cls_test: 150,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub nli_train: Vec<NliExample>,
    pub sts_train: Vec<StsExample>,
    pub sts_dev: Vec<StsExample>,
    pub sts_test: Vec<StsExample>,
    pub cls_train: Vec<ClsExample>,
    pub cls_test: Vec<ClsExample>,
}

impl SyntheticCorpus {
    /// Splits use seeds `seed`, `seed + 1`, ... in field order.
    pub fn generate(spec: &CorpusSpec) -> Result<Self> {
        let make = |kind, n, offset: u64| {
            gen_synthetic(&SyntheticSpec {
                kind,
                n,
                seed: spec.seed.wrapping_add(offset),
                vocab_size: spec.vocab_size,
                num_topics: spec.num_topics,
            })
        };
        Ok(Self {
            nli_train: make(DatasetKind::Nli, spec.nli_train, 0)?.into_nli()?,
            sts_train: make(DatasetKind::Sts, spec.sts_train, 1)?.into_sts()?,
            sts_dev: make(DatasetKind::Sts, spec.sts_dev, 2)?.into_sts()?,
            sts_test: make(DatasetKind::Sts, spec.sts_test, 3)?.into_sts()?,
            cls_train: make(DatasetKind::Cls, spec.cls_train, 4)?.into_cls()?,
            cls_test: make(DatasetKind::Cls, spec.cls_test, 5)?.into_cls()?,
        })
    }

    /// Texts of the training splits, for vocabulary construction.
    pub fn training_texts(&self) -> Vec<&str> {
        let mut out = Dataset::texts_of_nli(&self.nli_train);
        out.extend(
            self.sts_train
                .iter()
                .flat_map(|e| [e.sentence1.as_str(), e.sentence2.as_str()]),
        );
        out.extend(self.cls_train.iter().map(|e| e.text.as_str()));
        out
    }
}

impl Dataset {
    fn texts_of_nli(v: &[NliExample]) -> Vec<&str> {
        v.iter()
            .flat_map(|e| [e.premise.as_str(), e.hypothesis.as_str()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(kind: DatasetKind, n: usize) -> SyntheticSpec {
        SyntheticSpec {
            kind,
            n,
            seed: 5,
            vocab_size: 256,
            num_topics: 3,
        }
    }

    fn words(s: &str) -> HashSet<&str> {
        s.split(' ').collect()
    }

    fn content<'a>(u: &WordUniverse, s: &'a str) -> HashSet<&'a str> {
        s.split(' ').filter(|w| u.topic_of(w).is_some()).collect()
    }

    fn topics(u: &WordUniverse, s: &str) -> HashSet<usize> {
        s.split(' ').filter_map(|w| u.topic_of(w)).collect()
    }

    #[test]
    fn nli_labels_follow_word_laws() {
        let u = WordUniverse::new(256, 3).unwrap();
        let ds = gen_synthetic(&spec(DatasetKind::Nli, 300)).unwrap().into_nli().unwrap();
        for e in &ds {
            let (p, h) = (content(&u, &e.premise), content(&u, &e.hypothesis));
            match e.label {
                NliLabel::Entailment => assert!(words(&e.hypothesis).is_subset(&words(&e.premise)), "{e:?}"),
                NliLabel::Contradiction => {
                    assert!(topics(&u, &e.premise).is_disjoint(&topics(&u, &e.hypothesis)), "{e:?}")
                }
                NliLabel::Neutral => {
                    assert_eq!(topics(&u, &e.premise), topics(&u, &e.hypothesis));
                    assert!(!h.is_subset(&p) && !h.is_disjoint(&p), "{e:?}");
                }
            }
        }
    }

    #[test]
    fn sts_gold_is_quantized_content_jaccard() {
        let u = WordUniverse::new(256, 3).unwrap();
        let ds = gen_synthetic(&spec(DatasetKind::Sts, 500)).unwrap().into_sts().unwrap();
        for e in &ds {
            let (a, b) = (content(&u, &e.sentence1), content(&u, &e.sentence2));
            let j = a.intersection(&b).count() as f64 / a.union(&b).count() as f64;
            assert_eq!(e.score, (5.0 * j).round(), "{e:?}");
        }
        for s in 0..=5 {
            assert!(ds.iter().any(|e| e.score == s as f64), "no gold {s}");
        }
    }

    #[test]
    fn sentences_fit_the_length_bound() {
        let ds = gen_synthetic(&spec(DatasetKind::Sts, 300)).unwrap();
        assert!(ds.texts().iter().all(|t| t.split(' ').count() <= MAX_SENTENCE_LEN));
    }

    #[test]
    fn nli_labels_balanced() {
        for n in [299, 300, 301] {
            let ds = gen_synthetic(&spec(DatasetKind::Nli, n)).unwrap().into_nli().unwrap();
            let counts: Vec<usize> = NliLabel::ALL
                .iter()
                .map(|l| ds.iter().filter(|e| e.label == *l).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic(&spec(DatasetKind::Cls, 50)).unwrap();
        let b = gen_synthetic(&spec(DatasetKind::Cls, 50)).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&SyntheticSpec {
            seed: 6,
            ..spec(DatasetKind::Cls, 50)
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cls_labels_match_word_topics() {
        let u = WordUniverse::new(256, 3).unwrap();
        let ds = gen_synthetic(&spec(DatasetKind::Cls, 60)).unwrap().into_cls().unwrap();
        for e in ds {
            let t = topics(&u, &e.text);
            assert_eq!(t.len(), 1);
            assert_eq!(e.label, format!("topic{}", t.into_iter().next().unwrap()));
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_synthetic(&spec(DatasetKind::Nli, 0)).is_err());
        assert!(gen_synthetic(&SyntheticSpec {
            num_topics: 1,
            ..spec(DatasetKind::Nli, 5)
        })
        .is_err());
        assert!(gen_synthetic(&SyntheticSpec {
            vocab_size: 40,
            ..spec(DatasetKind::Nli, 5)
        })
        .is_err());
    }
}
