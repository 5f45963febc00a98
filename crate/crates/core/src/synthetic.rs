//! Synthetic noisy-label benchmark.
//!
//! Every relation (NA included) owns a disjoint set of trigger tokens. A clean
//! sentence for a pair labelled `k` places one `k`-trigger between the two entity
//! mentions, surrounded by filler words. A noisy sentence carries a trigger of some
//! other relation instead; a fully-noisy bag contains only noisy sentences. Entity
//! mentions are unique per pair and fall outside the vocabulary.

use std::collections::BTreeSet;

use crate::corpus::{LabeledSentence, PairKey, RelationSchema, SourceLine, Vocab, NA_NAME};
use crate::error::{Error, Result};
use crate::eval::{gold_facts, GoldFacts};
use crate::numeric::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Relation count including NA.
    pub relations: usize,
    /// Word types, triggers and fillers together (PAD/UNK excluded).
    pub vocab_size: usize,
    pub triggers_per_relation: usize,
    pub sentences_per_bag: usize,
    pub bags_per_relation: usize,
    pub test_bags_per_relation: usize,
    /// Chance that a sentence of an ordinary bag carries a wrong trigger.
    pub sentence_noise: f64,
    /// Share of training bags whose sentences all carry wrong triggers.
    pub noisy_bag_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub clip: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            relations: 10,
            vocab_size: 60,
            triggers_per_relation: 5,
            sentences_per_bag: 4,
            bags_per_relation: 50,
            test_bags_per_relation: 20,
            sentence_noise: 0.3,
            noisy_bag_rate: 0.31,
            min_len: 6,
            max_len: 14,
            clip: 30,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.relations < 2 {
            return bad(format!("need at least 2 relations, got {}", self.relations));
        }
        if self.triggers_per_relation == 0 {
            return bad("triggers_per_relation must be positive".into());
        }
        let triggers = self.relations * self.triggers_per_relation;
        if triggers >= self.vocab_size {
            return bad(format!(
                "vocab_size {} leaves no filler words after {triggers} triggers",
                self.vocab_size
            ));
        }
        for (name, r) in [
            ("sentence_noise", self.sentence_noise),
            ("noisy_bag_rate", self.noisy_bag_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1]"));
            }
        }
        if self.sentences_per_bag == 0 || self.bags_per_relation == 0 {
            return bad("sentences_per_bag and bags_per_relation must be positive".into());
        }
        if self.min_len < 3 || self.min_len > self.max_len {
            return bad(format!(
                "sentence lengths [{}, {}] must satisfy 3 <= min <= max",
                self.min_len, self.max_len
            ));
        }
        Ok(())
    }

    pub fn train_bags(&self) -> usize {
        self.relations * self.bags_per_relation
    }

    /// Number of fully-noisy training bags.
    pub fn noisy_bags(&self) -> usize {
        (self.noisy_bag_rate * self.train_bags() as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub vocab: Vocab,
    pub schema: RelationSchema,
    pub train: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
    /// Non-NA facts of the test split.
    pub gold: GoldFacts,
    /// Pairs of the fully-noisy training bags.
    pub noisy_pairs: BTreeSet<PairKey>,
    /// Per training sentence: does it carry a trigger of its own label?
    pub train_clean: Vec<bool>,
}

impl SyntheticCorpus {
    pub fn trigger_relation(&self, token: u32, spec: &SyntheticSpec) -> Option<usize> {
        let first = 2u32;
        let end = first + (spec.relations * spec.triggers_per_relation) as u32;
        (first..end)
            .contains(&token)
            .then(|| (token - first) as usize / spec.triggers_per_relation)
    }
}

pub fn relation_name(k: usize) -> String {
    if k == 0 {
        NA_NAME.to_owned()
    } else {
        format!("rel{k}")
    }
}

struct Builder<'a> {
    spec: &'a SyntheticSpec,
    vocab: &'a Vocab,
    fillers: Vec<u32>,
    rng: SeededRng,
    next_pair: usize,
}

impl Builder<'_> {
    fn trigger(&mut self, relation: usize) -> u32 {
        let t = self.spec.triggers_per_relation;
        self.vocab.id(&format!("trg{relation}_{}", self.rng.below(t)))
    }

    fn other_relation(&mut self, k: usize) -> usize {
        let r = self.rng.below(self.spec.relations - 1);
        if r >= k {
            r + 1
        } else {
            r
        }
    }

    fn sentence(&mut self, pair: &PairKey, relation: usize, trigger: u32) -> LabeledSentence {
        let spec = self.spec;
        let len = spec.min_len + self.rng.below(spec.max_len - spec.min_len + 1);
        let slots = self.rng.sample_indices(len, 3);
        let (lo, mid, hi) = (slots[0], slots[1], slots[2]);
        let (e1_pos, e2_pos) = if self.rng.bernoulli(0.5) {
            (lo, hi)
        } else {
            (hi, lo)
        };
        let mut words: Vec<String> = Vec::with_capacity(len);
        let mut tokens = Vec::with_capacity(len);
        for i in 0..len {
            let (word, id) = if i == e1_pos {
                (pair.e1.to_lowercase(), None)
            } else if i == e2_pos {
                (pair.e2.to_lowercase(), None)
            } else if i == mid {
                (self.vocab.token(trigger).unwrap().to_owned(), Some(trigger))
            } else {
                let f = self.fillers[self.rng.below(self.fillers.len())];
                (self.vocab.token(f).unwrap().to_owned(), Some(f))
            };
            tokens.push(id.unwrap_or_else(|| self.vocab.id(&word)));
            words.push(word);
        }
        let mut s = LabeledSentence::new(
            pair.clone(),
            relation,
            tokens,
            e1_pos,
            e2_pos,
            spec.max_len,
            spec.clip,
        )
        .expect("generated positions are valid");
        s.source = Some(SourceLine {
            e1_surface: words[e1_pos].clone(),
            e2_surface: words[e2_pos].clone(),
            relation_name: relation_name(relation),
            text: words.join(" "),
            offsets: Some((e1_pos, e2_pos)),
        });
        s
    }

    fn pair(&mut self) -> PairKey {
        let n = self.next_pair;
        self.next_pair += 1;
        PairKey::new(format!("E{n}a"), format!("E{n}b"))
    }

    /// Returns the bag's sentences and their cleanliness flags.
    fn bag(&mut self, relation: usize, fully_noisy: bool, noise: f64) -> (Vec<LabeledSentence>, Vec<bool>) {
        let pair = self.pair();
        let n = self.spec.sentences_per_bag;
        let mut clean: Vec<bool> = (0..n)
            .map(|_| !fully_noisy && !self.rng.bernoulli(noise))
            .collect();
        if !fully_noisy && clean.iter().all(|c| !c) {
            clean[self.rng.below(n)] = true;
        }
        let sentences = clean
            .iter()
            .map(|&c| {
                let source = if c {
                    relation
                } else {
                    self.other_relation(relation)
                };
                let trigger = self.trigger(source);
                self.sentence(&pair, relation, trigger)
            })
            .collect();
        (sentences, clean)
    }
}

/// Builds the training and test splits. The test split is noise-free.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let names: Vec<String> = (0..spec.relations).map(relation_name).collect();
    let schema = RelationSchema::new(&names)?;

    let mut vocab = Vocab::new();
    for k in 0..spec.relations {
        for i in 0..spec.triggers_per_relation {
            vocab.insert(&format!("trg{k}_{i}"));
        }
    }
    let filler_count = spec.vocab_size - spec.relations * spec.triggers_per_relation;
    let fillers = (0..filler_count)
        .map(|i| vocab.insert(&format!("w{i}")))
        .collect();

    let mut b = Builder {
        spec,
        vocab: &vocab,
        fillers,
        rng: SeededRng::new(spec.seed),
        next_pair: 0,
    };
    let noisy: BTreeSet<usize> = b
        .rng
        .sample_indices(spec.train_bags(), spec.noisy_bags())
        .into_iter()
        .collect();

    let mut train = Vec::new();
    let mut train_clean = Vec::new();
    let mut noisy_pairs = BTreeSet::new();
    for k in 0..spec.relations {
        for j in 0..spec.bags_per_relation {
            let fully_noisy = noisy.contains(&(k * spec.bags_per_relation + j));
            let (sentences, clean) = b.bag(k, fully_noisy, spec.sentence_noise);
            if fully_noisy {
                noisy_pairs.insert(sentences[0].pair.clone());
            }
            train.extend(sentences);
            train_clean.extend(clean);
        }
    }
    let mut test = Vec::new();
    for k in 0..spec.relations {
        for _ in 0..spec.test_bags_per_relation {
            test.extend(b.bag(k, false, 0.0).0);
        }
    }
    let gold = gold_facts(&test);
    Ok(SyntheticCorpus {
        vocab,
        schema,
        train,
        test,
        gold,
        noisy_pairs,
        train_clean,
    })
}
