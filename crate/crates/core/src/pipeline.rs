//! End-to-end helpers shared by the binary and the bindings.

use std::path::Path;

use crate::attention::{Mode, Scoring};
use crate::config::Config;
use crate::corpus::{build_bags, LabeledSentence, PairKey, SentenceBag, SuperBag};
use crate::encoder::EncoderDims;
use crate::error::Result;
use crate::eval::{pr_curve, score_corpus, sentence_f1, PrCurve, PrfScores};
use crate::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::model::{ModelDims, ModelParams};
use crate::numeric::{Matrix, SeededRng};
use crate::synthetic::{generate_synthetic, SyntheticCorpus};
use crate::training::{nll, nll_with_masks, streams, train, EpochMetrics, Objective, TrainOutcome};

/// Groups training sentences into bags using the config's cap and seed.
pub fn bags_for(config: &Config, sentences: Vec<LabeledSentence>) -> Vec<SentenceBag> {
    let mut rng = SeededRng::new(config.seed).fork(streams::INGEST);
    build_bags(sentences, config.max_bag_size, &mut rng)
}

pub fn init_params(
    config: &Config,
    vocab: usize,
    relations: usize,
    word_vectors: Option<Matrix>,
) -> Result<ModelParams> {
    let mut rng = SeededRng::new(config.seed).fork(streams::INIT);
    ModelParams::init(
        config.model_dims(vocab, relations),
        word_vectors,
        config.keep_prob,
        &mut rng,
    )
}

/// Initializes and trains a model; `on_epoch` as in [`train`].
pub fn fit<F>(
    config: &Config,
    bags: &[SentenceBag],
    vocab: usize,
    relations: usize,
    word_vectors: Option<Matrix>,
    on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &ModelParams) -> Option<f64>,
{
    let params = init_params(config, vocab, relations, word_vectors)?;
    train(&config.train_config(), bags, params, on_epoch)
}

#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub corpus: SyntheticCorpus,
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
    pub sentence: PrfScores,
    pub curve: PrCurve,
}

/// Generates the config's synthetic benchmark, trains on it and scores the test split.
pub fn run_synthetic(config: &Config) -> Result<SyntheticRun> {
    config.validate()?;
    let corpus = generate_synthetic(&config.synthetic_spec())?;
    let bags = bags_for(config, corpus.train.clone());
    let outcome = fit(
        config,
        &bags,
        corpus.vocab.len(),
        corpus.schema.len(),
        None,
        |_, _| None,
    )?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?;
    let (sentence, curve) = pool.install(|| -> Result<_> {
        let sentence = sentence_f1(&corpus.test, &outcome.params)?;
        let curve = pr_curve(&score_corpus(&corpus.test, &outcome.params)?, &corpus.gold)?;
        Ok((sentence, curve))
    })?;
    Ok(SyntheticRun {
        corpus,
        params: outcome.params,
        metrics: outcome.metrics,
        sentence,
        curve,
    })
}

/// Per-epoch metrics as CSV, preceded by a `# config <json>` line. Wall times go to
/// [`write_timing_csv`] so this file is reproducible byte for byte.
pub fn write_metrics_csv(path: &Path, config: &Config, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = format!(
        "# config {}\nepoch,superbags,mean_loss,dev_f1\n",
        config.to_json()
    );
    for m in metrics {
        let dev = m.dev_f1.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{dev}\n", m.epoch, m.superbags, m.mean_loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_timing_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = String::from("epoch,wall_secs\n");
    for m in metrics {
        out.push_str(&format!("{},{:.6}\n", m.epoch, m.wall_secs));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Shape of the small end-to-end gradient-check instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradCheckInstance {
    pub filters: usize,
    pub sentence_len: usize,
    pub relations: usize,
    pub sentences_per_bag: usize,
    pub bags_per_superbag: usize,
}

impl Default for GradCheckInstance {
    fn default() -> Self {
        GradCheckInstance {
            filters: 4,
            sentence_len: 12,
            relations: 3,
            sentences_per_bag: 2,
            bags_per_superbag: 2,
        }
    }
}

/// Finite-difference check of the full training loss (dropout masks frozen) on a
/// random two-superbag batch. Non-C2SA modes use single-bag superbags.
pub fn check_full_loss(
    instance: GradCheckInstance,
    mode: Mode,
    scoring: Scoring,
    seed: u64,
) -> Result<GradCheckReport> {
    const VOCAB: usize = 15;
    let mut rng = SeededRng::new(seed);
    let dims = ModelDims {
        encoder: EncoderDims {
            vocab: VOCAB,
            word_dim: 6,
            pos_dim: 2,
            window: 3,
            filters: instance.filters,
            clip: 30,
        },
        relations: instance.relations,
    };
    let words = Matrix::random_normal(VOCAB, dims.encoder.word_dim, 0.1, &mut rng);
    let params = ModelParams::init(dims, Some(words), 0.5, &mut rng)?;
    let n_s = if mode.uses_superbags() {
        instance.bags_per_superbag
    } else {
        1
    };
    let len = instance.sentence_len;
    let mut bags = Vec::with_capacity(2 * n_s);
    for i in 0..2 * n_s {
        let pair = PairKey::new(format!("p{i}"), format!("q{i}"));
        let relation = 1 + (i / n_s) % (instance.relations - 1);
        let sentences = (0..instance.sentences_per_bag)
            .map(|_| {
                let tokens = (0..len).map(|_| 2 + rng.below(VOCAB - 2) as u32).collect();
                let e1 = rng.below(len);
                let e2 = (e1 + 1 + rng.below(len - 1)) % len;
                LabeledSentence::new(pair.clone(), relation, tokens, e1, e2, len, 30)
            })
            .collect::<Result<Vec<_>>>()?;
        bags.push(SentenceBag {
            pair,
            relation,
            sentences,
        });
    }
    let batch: Vec<SuperBag> = bags
        .chunks(n_s)
        .map(|c| SuperBag {
            relation: c[0].relation,
            bags: c.iter().collect(),
        })
        .collect();
    let objective = Objective { mode, scoring };
    let out = nll(&batch, &params, objective, &mut rng)?;
    let masks = out.masks.clone();
    let loss = |q: &ModelParams| nll_with_masks(&batch, q, &masks, objective, 1).map_or(f64::NAN, |r| r.0);
    grad_check(
        loss,
        &params,
        &out.grads.to_params(&params),
        &GradCheckConfig {
            eps: 1e-4,
            seed,
            group_eps: vec![("relations", 2e-5)],
            ..Default::default()
        },
    )
}
