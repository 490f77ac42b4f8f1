//! Embedding similarity (rank correlation against gold STS scores) and KNN
//! classification over sentence embeddings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ClsExample, StsExample, Vocab};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::tensor::cosine_similarity;
use crate::tensor::Scalar;

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "correlation inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::input("correlation needs at least two points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::input("correlation inputs must be finite"));
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("correlation of a constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson_unchecked(x, y)
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson_unchecked(&average_ranks(x), &average_ranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub spearman: f64,
    pub pearson: f64,
    pub n_pairs: usize,
    pub cosines: Vec<f64>,
}

/// Mean-pooled embeddings of `texts`, in order.
pub fn embed_texts<T: Scalar>(model: &EncoderModel<T>, vocab: &Vocab, texts: &[&str]) -> Result<Vec<Vec<T>>> {
    let max_len = model.config.max_seq_len;
    texts
        .iter()
        .map(|t| {
            let tokens = vocab.tokenize(t, max_len);
            let (ids, mask) = tokens.trimmed();
            Ok(model.embed(ids, mask)?.vector.into_data())
        })
        .collect()
}

/// Cosine similarity per pair; only the cosine list is computed.
pub fn sts_cosines<T: Scalar>(model: &EncoderModel<T>, vocab: &Vocab, pairs: &[StsExample]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| {
            let e = embed_texts(model, vocab, &[&p.sentence1, &p.sentence2])?;
            Ok(cosine_similarity(&e[0], &e[1]).to_f64().expect("finite"))
        })
        .collect()
}

pub fn eval_sts<T: Scalar>(model: &EncoderModel<T>, vocab: &Vocab, pairs: &[StsExample]) -> Result<SimilarityReport> {
    if pairs.is_empty() {
        return Err(Error::input("STS test set is empty"));
    }
    let cosines = sts_cosines(model, vocab, pairs)?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    Ok(SimilarityReport {
        spearman: spearman(&cosines, &gold)?,
        pearson: pearson(&cosines, &gold)?,
        n_pairs: pairs.len(),
        cosines,
    })
}

/// Majority label among the `k` nearest training vectors by cosine distance.
///
/// Distance ties go to the lower training index. Vote ties go to the tied
/// label whose nearest member ranks first.
pub fn knn_classify<T: Scalar>(
    train: &[Vec<T>],
    train_labels: &[usize],
    test: &[Vec<T>],
    k: usize,
) -> Result<Vec<usize>> {
    if train.len() != train_labels.len() {
        return Err(Error::input("training vectors and labels differ in count"));
    }
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    if k > train.len() {
        return Err(Error::input(format!(
            "k = {k} exceeds the {} training examples",
            train.len()
        )));
    }
    let n_labels = train_labels.iter().max().map_or(0, |&m| m + 1);
    test.iter()
        .map(|q| {
            let mut dist: Vec<(f64, usize)> = train
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let d = 1.0 - cosine_similarity(q, t).to_f64().expect("finite");
                    (d, i)
                })
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![0usize; n_labels];
            let mut first_rank = vec![usize::MAX; n_labels];
            for (rank, &(_, i)) in dist[..k].iter().enumerate() {
                let l = train_labels[i];
                votes[l] += 1;
                first_rank[l] = first_rank[l].min(rank);
            }
            let best = (0..n_labels)
                .filter(|&l| votes[l] > 0)
                .max_by(|&a, &b| votes[a].cmp(&votes[b]).then(first_rank[b].cmp(&first_rank[a])))
                .expect("k >= 1");
            Ok(best)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnReport {
    pub k: usize,
    pub accuracy: f64,
    pub n_test: usize,
    /// `confusion[gold][predicted]` counts.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

pub fn eval_knn<T: Scalar>(
    model: &EncoderModel<T>,
    vocab: &Vocab,
    train: &[ClsExample],
    test: &[ClsExample],
    k: usize,
) -> Result<KnnReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::input("KNN evaluation needs non-empty train and test sets"));
    }
    let labels: Vec<String> = {
        let mut l: Vec<String> = train.iter().map(|e| e.label.clone()).collect();
        l.sort();
        l.dedup();
        l
    };
    let id_of = |s: &str| labels.binary_search_by(|l| l.as_str().cmp(s)).ok();
    let train_ids: Vec<usize> = train.iter().map(|e| id_of(&e.label).expect("from train")).collect();
    let test_ids = test
        .iter()
        .map(|e| id_of(&e.label).ok_or_else(|| Error::input(format!("test label {:?} not seen in training", e.label))))
        .collect::<Result<Vec<_>>>()?;

    let train_texts: Vec<&str> = train.iter().map(|e| e.text.as_str()).collect();
    let test_texts: Vec<&str> = test.iter().map(|e| e.text.as_str()).collect();
    let train_emb = embed_texts(model, vocab, &train_texts)?;
    let test_emb = embed_texts(model, vocab, &test_texts)?;
    let predicted = knn_classify(&train_emb, &train_ids, &test_emb, k)?;

    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = labels
        .iter()
        .map(|g| (g.clone(), labels.iter().map(|p| (p.clone(), 0)).collect()))
        .collect();
    let mut correct = 0;
    for (&g, &p) in test_ids.iter().zip(&predicted) {
        correct += usize::from(g == p);
        *confusion
            .get_mut(&labels[g])
            .and_then(|row| row.get_mut(&labels[p]))
            .expect("known labels") += 1;
    }
    Ok(KnnReport {
        k,
        accuracy: correct as f64 / test.len() as f64,
        n_test: test.len(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_monotone_and_reversed() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[3.0, 3.0, 3.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_errors() {
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0]), Err(Error::Input(_))));
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(Error::Input(_))));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn knn_exact_match_and_limits() {
        let train = vec![vec![1.0f32, 0.0], vec![0.0, 1.0], vec![0.9, 0.1], vec![0.8, 0.3]];
        let labels = vec![0, 1, 0, 0];
        assert_eq!(knn_classify(&train, &labels, &[vec![0.0, 1.0]], 1).unwrap(), vec![1]);
        // k == |train|: global majority
        assert_eq!(
            knn_classify(&train, &labels, &[vec![0.0, 1.0], vec![-1.0, 0.2]], 4).unwrap(),
            vec![0, 0]
        );
        assert!(knn_classify(&train, &labels, &[vec![0.0, 1.0]], 5).is_err());
        assert!(knn_classify(&train, &labels, &[vec![0.0, 1.0]], 0).is_err());
    }

    #[test]
    fn knn_vote_tie_goes_to_nearest_label() {
        let train = vec![vec![1.0f32, 0.0], vec![0.0, 1.0]];
        // equidistant-ish: nearest is label 1
        assert_eq!(knn_classify(&train, &[0, 1], &[vec![0.4, 0.6]], 2).unwrap(), vec![1]);
        assert_eq!(knn_classify(&train, &[0, 1], &[vec![0.6, 0.4]], 2).unwrap(), vec![0]);
    }

    #[test]
    fn knn_distance_tie_prefers_lower_index() {
        let train = vec![vec![1.0f32, 0.0], vec![2.0, 0.0]];
        assert_eq!(knn_classify(&train, &[1, 0], &[vec![3.0, 0.0]], 1).unwrap(), vec![1]);
    }
}
