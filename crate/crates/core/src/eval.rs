//! Held-out precision/recall, sentence-level F1 and attention inspection.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::attention::superbag_feature;
use crate::corpus::{LabeledSentence, PairKey, RelationSchema, SuperBag, Vocab, NA};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::{softmax_unchecked, Vector};
use crate::training::{logits, Objective, Phase};

/// Cut-offs reported as P@N.
pub const P_AT: [usize; 3] = [100, 200, 300];

/// Relation distribution `softmax(W·(x·p))` for one sentence.
pub fn sentence_probs(sentence: &LabeledSentence, params: &ModelParams) -> Result<Vector> {
    let x = encode(sentence, &params.encoder)?.into_vector();
    let o = logits(&x, &params.output, params.keep_prob, Phase::Eval)?;
    Ok(softmax_unchecked(&o))
}

/// Sentence distributions in input order, computed on the current rayon pool.
pub fn corpus_probs(sentences: &[LabeledSentence], params: &ModelParams) -> Result<Vec<Vector>> {
    sentences.par_iter().map(|s| sentence_probs(s, params)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub pair: PairKey,
    pub relation: usize,
    pub score: f64,
}

/// One prediction per (pair, non-NA relation): the maximum probability of that
/// relation over the pair's sentences. Output is ordered by pair, then relation.
pub fn score_corpus(sentences: &[LabeledSentence], params: &ModelParams) -> Result<Vec<Prediction>> {
    let probs = corpus_probs(sentences, params)?;
    Ok(max_by_pair(sentences.iter().map(|s| &s.pair).zip(&probs)))
}

fn max_by_pair<'a, I>(rows: I) -> Vec<Prediction>
where
    I: Iterator<Item = (&'a PairKey, &'a Vector)>,
{
    let mut best: BTreeMap<&PairKey, Vector> = BTreeMap::new();
    for (pair, p) in rows {
        match best.get_mut(pair) {
            Some(m) => m.iter_mut().zip(p).for_each(|(a, &b)| *a = a.max(b)),
            None => {
                best.insert(pair, p.clone());
            }
        }
    }
    best.into_iter()
        .flat_map(|(pair, m)| {
            m.into_iter()
                .enumerate()
                .filter(|&(r, _)| r != NA)
                .map(move |(relation, score)| Prediction {
                    pair: pair.clone(),
                    relation,
                    score,
                })
        })
        .collect()
}

pub type GoldFacts = BTreeSet<(PairKey, usize)>;

/// Non-NA (pair, relation) labels of a corpus.
pub fn gold_facts(sentences: &[LabeledSentence]) -> GoldFacts {
    sentences
        .iter()
        .filter(|s| s.relation != NA)
        .map(|s| (s.pair.clone(), s.relation))
        .collect()
}

/// Drops predictions and gold facts whose pair also occurs in `train`.
pub fn exclude_pairs(
    predictions: Vec<Prediction>,
    gold: GoldFacts,
    train: &[LabeledSentence],
) -> (Vec<Prediction>, GoldFacts) {
    let seen: HashSet<&PairKey> = train.iter().map(|s| &s.pair).collect();
    let preds = predictions
        .into_iter()
        .filter(|p| !seen.contains(&p.pair))
        .collect();
    let gold = gold.into_iter().filter(|(p, _)| !seen.contains(p)).collect();
    (preds, gold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    /// 1-based prefix length.
    pub rank: usize,
    pub precision: f64,
    pub recall: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub positives: usize,
}

impl PrCurve {
    /// Precision of the top `n` predictions; `None` if fewer than `n` exist.
    pub fn precision_at(&self, n: usize) -> Option<f64> {
        n.checked_sub(1)
            .and_then(|i| self.points.get(i))
            .map(|p| p.precision)
    }

    /// Trapezoidal area under the (recall, precision) points.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0)
            .sum()
    }

    /// Largest F1 over all prefixes.
    pub fn max_f1(&self) -> f64 {
        self.points
            .iter()
            .map(|p| f1(p.precision, p.recall))
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(File::create(path)?);
        writeln!(f, "rank,precision,recall,score")?;
        for p in &self.points {
            writeln!(f, "{},{},{},{}", p.rank, p.precision, p.recall, p.score)?;
        }
        f.flush()?;
        Ok(())
    }

    /// `n,precision` rows for [`P_AT`]; precision is empty when the curve is shorter.
    pub fn write_p_at_n_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(File::create(path)?);
        writeln!(f, "n,precision")?;
        for n in P_AT {
            match self.precision_at(n) {
                Some(p) => writeln!(f, "{n},{p}")?,
                None => writeln!(f, "{n},")?,
            }
        }
        f.flush()?;
        Ok(())
    }
}

/// Ranks predictions by score (descending; ties by pair, then relation) and
/// records precision and recall after every prefix.
pub fn pr_curve(predictions: &[Prediction], gold: &GoldFacts) -> Result<PrCurve> {
    if gold.is_empty() {
        return Err(Error::invalid("gold fact set is empty"));
    }
    if let Some(p) = predictions.iter().find(|p| p.score.is_nan()) {
        return Err(Error::invalid(format!(
            "NaN score for {} / {}",
            p.pair, p.relation
        )));
    }
    let mut order: Vec<&Prediction> = predictions.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.pair.cmp(&b.pair))
            .then_with(|| a.relation.cmp(&b.relation))
    });
    let positives = gold.len();
    let mut tp = 0usize;
    let points = order
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            if gold.contains(&(p.pair.clone(), p.relation)) {
                tp += 1;
            }
            PrPoint {
                rank: i + 1,
                precision: tp as f64 / (i + 1) as f64,
                recall: tp as f64 / positives as f64,
                score: p.score,
            }
        })
        .collect();
    Ok(PrCurve { points, positives })
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfScores {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl fmt::Display for PrfScores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P={:.4} R={:.4} F1={:.4} (tp={} fp={} fn={})",
            self.precision, self.recall, self.f1, self.tp, self.fp, self.fn_
        )
    }
}

/// Micro precision/recall/F1 over non-NA labels. A non-NA prediction counts as a
/// true positive only when it equals a non-NA gold label.
pub fn micro_prf(predicted: &[usize], gold: &[usize]) -> Result<PrfScores> {
    if predicted.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in predicted.iter().zip(gold) {
        if p != NA {
            if p == g {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        if g != NA && p != g {
            fn_ += 1;
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Ok(PrfScores {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1: f1(precision, recall),
    })
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) },
        )
        .0
}

pub fn predict(sentences: &[LabeledSentence], params: &ModelParams) -> Result<Vec<usize>> {
    Ok(corpus_probs(sentences, params)?
        .iter()
        .map(|p| argmax(p))
        .collect())
}

pub fn sentence_f1(sentences: &[LabeledSentence], params: &ModelParams) -> Result<PrfScores> {
    let predicted = predict(sentences, params)?;
    let gold: Vec<usize> = sentences.iter().map(|s| s.relation).collect();
    micro_prf(&predicted, &gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Low,
    Medium,
    High,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
        })
    }
}

/// Buckets a weight against a uniform share `1/n`: below `1/(2n)` is low, above
/// `3/(2n)` is high.
pub fn level(weight: f64, n: usize) -> Level {
    let n = n.max(1) as f64;
    if weight < 1.0 / (2.0 * n) {
        Level::Low
    } else if weight > 3.0 / (2.0 * n) {
        Level::High
    } else {
        Level::Medium
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceInspection {
    pub tokens: Vec<u32>,
    pub beta: f64,
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagInspection {
    pub pair: PairKey,
    pub gamma: f64,
    pub level: Level,
    pub sentences: Vec<SentenceInspection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inspection {
    pub relation: usize,
    pub bags: Vec<BagInspection>,
}

impl Inspection {
    /// Index of the bag with the smallest γ (first on ties).
    pub fn min_gamma_bag(&self) -> usize {
        let g: Vec<f64> = self.bags.iter().map(|b| -b.gamma).collect();
        argmax(&g)
    }

    pub fn render(&self, vocab: Option<&Vocab>, schema: Option<&RelationSchema>) -> String {
        let mut out = String::new();
        let relation = schema.map_or_else(|| self.relation.to_string(), |s| s.name(self.relation).to_owned());
        let _ = writeln!(out, "superbag relation={relation} bags={}", self.bags.len());
        for (i, bag) in self.bags.iter().enumerate() {
            let _ = writeln!(
                out,
                "  bag {i} pair={} gamma={:.6} ({})",
                bag.pair, bag.gamma, bag.level
            );
            for s in &bag.sentences {
                let text = match vocab {
                    Some(v) => s
                        .tokens
                        .iter()
                        .map(|&t| v.token(t).unwrap_or("?"))
                        .collect::<Vec<_>>()
                        .join(" "),
                    None => s.tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
                };
                let _ = writeln!(out, "    beta={:.6} {:<6} {text}", s.beta, s.level.to_string());
            }
        }
        out
    }
}

impl fmt::Display for Inspection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(None, None))
    }
}

/// Attention weights of a superbag for its label relation.
pub fn inspect_attention(
    superbag: &SuperBag<'_>,
    params: &ModelParams,
    objective: Objective,
) -> Result<Inspection> {
    let mut xs = Vec::with_capacity(superbag.len());
    for bag in &superbag.bags {
        let feats: Result<Vec<Vector>> = bag
            .sentences
            .iter()
            .map(|s| Ok(encode(s, &params.encoder)?.into_vector()))
            .collect();
        xs.push(feats?);
    }
    let trace = superbag_feature(
        &xs,
        &params.relations,
        superbag.relation,
        objective.mode,
        objective.scoring,
    )?;
    let n_bags = superbag.len();
    let bags = superbag
        .bags
        .iter()
        .zip(&trace.bags)
        .zip(&trace.gamma)
        .map(|((bag, t), &g)| BagInspection {
            pair: bag.pair.clone(),
            gamma: g,
            level: level(g, n_bags),
            sentences: bag
                .sentences
                .iter()
                .zip(&t.beta)
                .map(|(s, &b)| SentenceInspection {
                    tokens: s.tokens.clone(),
                    beta: b,
                    level: level(b, bag.len()),
                })
                .collect(),
        })
        .collect();
    Ok(Inspection {
        relation: superbag.relation,
        bags,
    })
}
