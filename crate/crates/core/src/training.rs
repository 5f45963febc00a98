//! Output layer, superbag-level negative log-likelihood, SGD and the epoch loop.

use std::time::Instant;

use rayon::prelude::*;

use crate::attention::{attention_backward, superbag_feature, Mode, Scoring};
use crate::corpus::{assemble_superbags, downsample_na, SentenceBag, SuperBag};
use crate::encoder::{encode, encode_backward, SentenceFeature};
use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::numeric::{axpy, log_softmax_at, softmax_unchecked, Matrix, SeededRng, Vector};

/// Dropout handling for the output layer.
#[derive(Debug, Clone, Copy)]
pub enum Phase<'a> {
    /// Multiply the feature by a fixed 0/1 mask.
    Train(&'a [f64]),
    /// Scale the feature by the keep probability.
    Eval,
}

/// `o = W·(f ⊙ h)` in training, `o = W·(f·p)` at evaluation.
pub fn logits(f: &[f64], output: &Matrix, keep_prob: f64, phase: Phase<'_>) -> Result<Vector> {
    match phase {
        Phase::Train(mask) => {
            if mask.len() != f.len() {
                return Err(Error::invalid(format!(
                    "dropout mask has length {}, feature has {}",
                    mask.len(),
                    f.len()
                )));
            }
            let dropped: Vec<f64> = f.iter().zip(mask).map(|(a, b)| a * b).collect();
            output.matvec(&dropped)
        }
        Phase::Eval => {
            let scaled: Vec<f64> = f.iter().map(|a| a * keep_prob).collect();
            output.matvec(&scaled)
        }
    }
}

/// Bernoulli(`keep_prob`) 0/1 mask.
pub fn draw_mask(rng: &mut SeededRng, dim: usize, keep_prob: f64) -> Vector {
    (0..dim)
        .map(|_| if rng.bernoulli(keep_prob) { 1.0 } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Objective {
    pub mode: Mode,
    pub scoring: Scoring,
}

/// Loss and gradient for one superbag.
pub fn superbag_loss(
    superbag: &SuperBag<'_>,
    params: &ModelParams,
    mask: &[f64],
    objective: Objective,
) -> Result<(f64, Gradients)> {
    let mut encoded: Vec<Vec<SentenceFeature>> = Vec::with_capacity(superbag.len());
    for bag in &superbag.bags {
        let mut feats = Vec::with_capacity(bag.len());
        for s in &bag.sentences {
            feats.push(encode(s, &params.encoder)?);
        }
        encoded.push(feats);
    }
    let xs: Vec<Vec<Vector>> = encoded
        .iter()
        .map(|b| b.iter().map(|f| f.x.clone()).collect())
        .collect();
    let label = superbag.relation;
    let trace = superbag_feature(&xs, &params.relations, label, objective.mode, objective.scoring)?;
    let f = &trace.superbag_feature;
    let o = logits(f, &params.output, params.keep_prob, Phase::Train(mask))?;
    let loss = -log_softmax_at(&o, label);

    let mut grads = Gradients::zeros(&params.dims());
    let mut d_o = softmax_unchecked(&o);
    d_o[label] -= 1.0;
    let dropped: Vec<f64> = f.iter().zip(mask).map(|(a, b)| a * b).collect();
    for (r, &g) in d_o.iter().enumerate() {
        axpy(g, &dropped, grads.output.row_mut(r));
    }
    let mut df = params.output.matvec_t(&d_o)?;
    for (d, m) in df.iter_mut().zip(mask) {
        *d *= m;
    }

    let att = attention_backward(&trace, &xs, &params.relations, &df)?;
    grads.relations = att.relations;
    for (i, bag) in superbag.bags.iter().enumerate() {
        for (j, s) in bag.sentences.iter().enumerate() {
            encode_backward(
                s,
                &params.encoder,
                &encoded[i][j],
                &att.features[i][j],
                &mut grads.encoder,
            )?;
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct NllOutput {
    /// Summed over the batch.
    pub loss: f64,
    pub grads: Gradients,
    pub masks: Vec<Vector>,
}

/// Draws one dropout mask per superbag from `rng`, then evaluates the batch.
pub fn nll(
    batch: &[SuperBag<'_>],
    params: &ModelParams,
    objective: Objective,
    rng: &mut SeededRng,
) -> Result<NllOutput> {
    let dim = params.dims().feature_dim();
    let masks: Vec<Vector> = batch
        .iter()
        .map(|_| draw_mask(rng, dim, params.keep_prob))
        .collect();
    let (loss, grads) = nll_with_masks(batch, params, &masks, objective, 1)?;
    Ok(NllOutput { loss, grads, masks })
}

/// Batch loss `-Σ_i log p(l_i | superbag_i)` and its gradient, with fixed masks.
///
/// Superbags are evaluated on up to `threads` workers; per-superbag gradients are
/// summed in batch order, so the result does not depend on `threads`.
pub fn nll_with_masks(
    batch: &[SuperBag<'_>],
    params: &ModelParams,
    masks: &[Vector],
    objective: Objective,
    threads: usize,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if masks.len() != batch.len() {
        return Err(Error::invalid("one dropout mask per superbag is required"));
    }
    let run = |i: usize| superbag_loss(&batch[i], params, &masks[i], objective);
    let parts: Vec<Result<(f64, Gradients)>> = if threads > 1 {
        (0..batch.len()).into_par_iter().map(run).collect()
    } else {
        (0..batch.len()).map(run).collect()
    };

    let mut total = 0.0;
    let mut grads = Gradients::zeros(&params.dims());
    for (i, part) in parts.into_iter().enumerate() {
        let (loss, g) = part?;
        if !loss.is_finite() {
            let sb = &batch[i];
            let pairs: Vec<String> = sb.bags.iter().map(|b| b.pair.to_string()).collect();
            return Err(Error::NonFinite(format!(
                "loss {loss} on superbag {i} of the batch (relation {}, pairs {})",
                sb.relation,
                pairs.join(", ")
            )));
        }
        total += loss;
        grads.add(&g);
    }
    Ok((total, grads))
}

/// `p ← p − lr·g`. Fails without touching `params` if any gradient is non-finite.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, lr: f64, freeze_word_emb: bool) -> Result<()> {
    if let Some(group) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {group} is not finite")));
    }
    if lr == 0.0 {
        return Ok(());
    }
    let enc = &mut params.encoder;
    if !freeze_word_emb {
        for (&row, g) in &grads.encoder.word_emb.rows {
            axpy(-lr, g, enc.word_emb.row_mut(row as usize));
        }
    }
    axpy(
        -lr,
        grads.encoder.pos_emb1.as_slice(),
        enc.pos_emb1.as_mut_slice(),
    );
    axpy(
        -lr,
        grads.encoder.pos_emb2.as_slice(),
        enc.pos_emb2.as_mut_slice(),
    );
    axpy(-lr, grads.encoder.filters.as_slice(), enc.filters.as_mut_slice());
    axpy(-lr, &grads.encoder.bias, &mut enc.bias);
    axpy(-lr, grads.relations.as_slice(), params.relations.as_mut_slice());
    axpy(-lr, grads.output.as_slice(), params.output.as_mut_slice());
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub scoring: Scoring,
    /// Bags per superbag under `C2SA`; the baselines always use 1.
    pub superbag_size: usize,
    /// Superbags per SGD step.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied after every epoch (1 = off).
    pub lr_decay: f64,
    pub seed: u64,
    /// NA superbags kept per non-NA superbag each epoch; negative keeps all.
    pub na_ratio: f64,
    pub freeze_word_emb: bool,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::C2sa,
            scoring: Scoring::Cosine,
            superbag_size: 3,
            batch_size: 32,
            epochs: 15,
            lr: 0.01,
            lr_decay: 1.0,
            seed: 1,
            na_ratio: 1.0,
            freeze_word_emb: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn effective_superbag_size(&self) -> usize {
        if self.mode.uses_superbags() {
            self.superbag_size
        } else {
            1
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            mode: self.mode,
            scoring: self.scoring,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.superbag_size == 0 {
            return Err(Error::Config("superbag_size must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "lr {} must be finite and nonnegative",
                self.lr
            )));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::Config("lr_decay must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub superbags: usize,
    pub mean_loss: f64,
    pub wall_secs: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
}

/// Seed-derived random streams used by training.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SUPERBAGS: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const INGEST: u64 = 4;
}

/// Runs `config.epochs` epochs of SGD starting from `params`.
///
/// `on_epoch` is called after every epoch with the current parameters; its return
/// value is recorded as the epoch's dev F1.
pub fn train<F>(
    config: &TrainConfig,
    bags: &[SentenceBag],
    mut params: ModelParams,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &ModelParams) -> Option<f64>,
{
    config.validate()?;
    if bags.is_empty() {
        return Err(Error::invalid("no training bags"));
    }
    let root = SeededRng::new(config.seed);
    let mut order_rng = root.fork(streams::SUPERBAGS);
    let mut dropout_rng = root.fork(streams::DROPOUT);
    let objective = config.objective();
    let dim = params.dims().feature_dim();
    let n_s = config.effective_superbag_size();
    let mut lr = config.lr;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let superbags = assemble_superbags(bags, n_s, &mut order_rng)?;
        let mut superbags = downsample_na(superbags, config.na_ratio, &mut order_rng);
        order_rng.shuffle(&mut superbags);

        let mut total = 0.0;
        for (b, batch) in superbags.chunks(config.batch_size).enumerate() {
            let masks: Vec<Vector> = batch
                .iter()
                .map(|_| draw_mask(&mut dropout_rng, dim, params.keep_prob))
                .collect();
            let (loss, grads) = pool
                .install(|| nll_with_masks(batch, &params, &masks, objective, config.threads))
                .map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {m}")),
                    e => e,
                })?;
            total += loss;
            sgd_step(&mut params, &grads, lr, config.freeze_word_emb)?;
        }
        lr *= config.lr_decay;

        let dev_f1 = on_epoch(epoch, &params);
        metrics.push(EpochMetrics {
            epoch,
            superbags: superbags.len(),
            mean_loss: total / superbags.len().max(1) as f64,
            wall_secs: start.elapsed().as_secs_f64(),
            dev_f1,
        });
    }
    Ok(TrainOutcome { params, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_bags, LabeledSentence, PairKey};
    use crate::encoder::EncoderDims;
    use crate::model::ModelDims;

    fn tiny_dims(vocab: usize, relations: usize) -> ModelDims {
        ModelDims {
            encoder: EncoderDims {
                vocab,
                word_dim: 6,
                pos_dim: 2,
                window: 3,
                filters: 4,
                clip: 30,
            },
            relations,
        }
    }

    fn random_bag(rng: &mut SeededRng, id: usize, relation: usize, n: usize, vocab: usize) -> SentenceBag {
        let pair = PairKey::new(format!("p{id}"), format!("q{id}"));
        let sentences = (0..n)
            .map(|_| {
                let len = 4 + rng.below(9);
                let tokens = (0..len).map(|_| 2 + rng.below(vocab - 2) as u32).collect();
                let e1 = rng.below(len);
                let e2 = (e1 + 1 + rng.below(len - 1)) % len;
                LabeledSentence::new(pair.clone(), relation, tokens, e1, e2, 12, 30).unwrap()
            })
            .collect();
        SentenceBag {
            pair,
            relation,
            sentences,
        }
    }

    #[test]
    fn logits_examples() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let f = [0.3, -0.4];
        assert_eq!(
            logits(&f, &w, 0.5, Phase::Train(&[1.0, 1.0])).unwrap(),
            w.matvec(&f).unwrap()
        );
        assert_eq!(
            logits(&f, &w, 0.5, Phase::Train(&[0.0, 0.0])).unwrap(),
            vec![0.0, 0.0]
        );
        let id = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(
            logits(&[2.0, 2.0], &id, 0.5, Phase::Eval).unwrap(),
            vec![1.0, 1.0]
        );
        assert!(logits(&f, &w, 0.5, Phase::Train(&[1.0])).is_err());
    }

    #[test]
    fn uniform_logits_give_log_nr() {
        let o = vec![0.0; 53];
        assert!((-log_softmax_at(&o, 7) - 53f64.ln()).abs() < 1e-12);
        assert!((53f64.ln() - 3.9703).abs() < 1e-4);
        let mut o = vec![0.0; 53];
        o[7] = 800.0;
        assert!(-log_softmax_at(&o, 7) < 1e-300);
    }

    #[test]
    fn zero_output_weights_give_log_nr_loss() {
        let mut rng = SeededRng::new(0);
        let dims = tiny_dims(20, 53);
        let mut p = ModelParams::init(dims, None, 0.5, &mut rng).unwrap();
        p.output = Matrix::zeros(53, 12);
        let bag = random_bag(&mut rng, 0, 3, 2, 20);
        let sb = SuperBag {
            relation: 3,
            bags: vec![&bag],
        };
        let obj = Objective {
            mode: Mode::Crsa,
            scoring: Scoring::Cosine,
        };
        let (loss, _) = superbag_loss(&sb, &p, &[1.0; 12], obj).unwrap();
        assert!((loss - 53f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut rng = SeededRng::new(0);
        let p = ModelParams::init(tiny_dims(20, 3), None, 0.5, &mut rng).unwrap();
        let obj = Objective {
            mode: Mode::C2sa,
            scoring: Scoring::Cosine,
        };
        assert!(matches!(
            nll(&[], &p, obj, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn parallel_reduction_matches_sequential() {
        let mut rng = SeededRng::new(5);
        let dims = tiny_dims(15, 3);
        let p = ModelParams::init(dims, None, 0.5, &mut rng).unwrap();
        let bags: Vec<SentenceBag> = (0..12)
            .map(|i| random_bag(&mut rng, i, 1 + i % 2, 3, 15))
            .collect();
        let batch: Vec<SuperBag> = bags
            .iter()
            .map(|b| SuperBag {
                relation: b.relation,
                bags: vec![b],
            })
            .collect();
        let masks: Vec<Vector> = batch.iter().map(|_| draw_mask(&mut rng, 12, 0.5)).collect();
        let obj = Objective {
            mode: Mode::Crsa,
            scoring: Scoring::Cosine,
        };
        let seq = nll_with_masks(&batch, &p, &masks, obj, 1).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let par = pool
            .install(|| nll_with_masks(&batch, &p, &masks, obj, 4))
            .unwrap();
        assert_eq!(seq.0.to_bits(), par.0.to_bits());
        assert_eq!(seq.1, par.1);
    }

    #[test]
    fn sgd_step_examples() {
        let mut rng = SeededRng::new(0);
        let dims = tiny_dims(10, 2);
        let p = ModelParams::init(dims, None, 0.5, &mut rng).unwrap();
        let zero = Gradients::zeros(&dims);

        let mut q = p.clone();
        sgd_step(&mut q, &zero, 0.1, false).unwrap();
        assert_eq!(q, p);

        let mut g = zero.clone();
        g.output.set(1, 3, 2.0);
        let mut q = p.clone();
        sgd_step(&mut q, &g, 0.0, false).unwrap();
        assert_eq!(q, p);
        sgd_step(&mut q, &g, 0.1, false).unwrap();
        assert!((p.output.get(1, 3) - q.output.get(1, 3) - 0.2).abs() < 1e-15);

        let mut bad = zero.clone();
        bad.relations.set(0, 0, f64::NAN);
        let mut q = p.clone();
        assert!(matches!(
            sgd_step(&mut q, &bad, 0.1, false),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(q, p);
    }

    #[test]
    fn frozen_word_embeddings_stay_fixed() {
        let mut rng = SeededRng::new(0);
        let dims = tiny_dims(10, 2);
        let p = ModelParams::init(dims, None, 0.5, &mut rng).unwrap();
        let mut g = Gradients::zeros(&dims);
        g.encoder.word_emb.add(4, &[1.0; 6]);
        let mut q = p.clone();
        sgd_step(&mut q, &g, 0.1, true).unwrap();
        assert_eq!(q.encoder.word_emb, p.encoder.word_emb);
        sgd_step(&mut q, &g, 0.1, false).unwrap();
        assert_ne!(q.encoder.word_emb, p.encoder.word_emb);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = SeededRng::new(3);
        let dims = tiny_dims(20, 3);
        let sentences: Vec<LabeledSentence> = (0..18)
            .flat_map(|i| random_bag(&mut rng, i, i % 3, 2, 20).sentences)
            .collect();
        let bags = build_bags(sentences, 20, &mut SeededRng::new(0));
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let run = |threads: usize| {
            let cfg = TrainConfig {
                threads,
                ..config.clone()
            };
            let init = ModelParams::init(dims, None, 0.5, &mut SeededRng::new(9)).unwrap();
            train(&cfg, &bags, init, |_, _| None).unwrap()
        };
        let a = run(1);
        let b = run(1);
        let c = run(3);
        assert_eq!(a.params, b.params);
        assert_eq!(a.params, c.params);
        let losses = |o: &TrainOutcome| {
            o.metrics
                .iter()
                .map(|m| m.mean_loss.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(losses(&a), losses(&b));
        assert_eq!(losses(&a), losses(&c));
    }

    #[test]
    fn baselines_ignore_superbag_size() {
        let cfg = TrainConfig {
            mode: Mode::Att,
            superbag_size: 3,
            ..Default::default()
        };
        assert_eq!(cfg.effective_superbag_size(), 1);
        let cfg = TrainConfig {
            mode: Mode::Crsa,
            ..cfg
        };
        assert_eq!(cfg.effective_superbag_size(), 1);
        let cfg = TrainConfig {
            mode: Mode::C2sa,
            ..cfg
        };
        assert_eq!(cfg.effective_superbag_size(), 3);
    }
}
