//! Piecewise CNN sentence encoder: word + position embeddings, a single-width
//! convolution, max-pooling over the three entity-delimited pieces, then tanh.

use std::collections::BTreeMap;

use crate::corpus::{pad_bucket, position_table_size, LabeledSentence, PAD};
use crate::error::{Error, Result};
use crate::numeric::{axpy, dot, Matrix, SeededRng, Vector};

/// Std of the random position-embedding initialization.
pub const POS_INIT_STD: f64 = 0.1;

/// Std of word embeddings when no pre-trained vectors are supplied.
pub const WORD_INIT_STD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub vocab: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub window: usize,
    pub filters: usize,
    pub clip: usize,
}

impl EncoderDims {
    /// Width of one embedded token row (`d_w + 2·d_p`).
    pub fn token_width(&self) -> usize {
        self.word_dim + 2 * self.pos_dim
    }

    pub fn filter_len(&self) -> usize {
        self.window * self.token_width()
    }

    /// Length of the pooled sentence feature (`3·n`).
    pub fn feature_dim(&self) -> usize {
        3 * self.filters
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub word_emb: Matrix,
    pub pos_emb1: Matrix,
    pub pos_emb2: Matrix,
    /// One row per filter: `window` consecutive token rows, flattened.
    pub filters: Matrix,
    pub bias: Vector,
}

impl EncoderParams {
    /// Random initialization. `word_vectors`, when given, must be `vocab × word_dim`
    /// and is used as the word table; otherwise words are drawn from N(0, WORD_INIT_STD²).
    pub fn init(dims: EncoderDims, word_vectors: Option<Matrix>, rng: &mut SeededRng) -> Result<Self> {
        if dims.filters == 0 || dims.window == 0 || dims.word_dim == 0 {
            return Err(Error::invalid("filters, window and word_dim must be positive"));
        }
        let mut word_emb = match word_vectors {
            Some(m) => {
                if m.shape() != (dims.vocab, dims.word_dim) {
                    return Err(Error::invalid(format!(
                        "word table shape {:?} does not match vocab {} x dim {}",
                        m.shape(),
                        dims.vocab,
                        dims.word_dim
                    )));
                }
                m
            }
            None => Matrix::random_normal(dims.vocab, dims.word_dim, WORD_INIT_STD, rng),
        };
        word_emb.row_mut(PAD as usize).fill(0.0);

        let rows = position_table_size(dims.clip);
        let mut pos_emb1 = Matrix::random_normal(rows, dims.pos_dim, POS_INIT_STD, rng);
        let mut pos_emb2 = Matrix::random_normal(rows, dims.pos_dim, POS_INIT_STD, rng);
        pos_emb1.row_mut(pad_bucket(dims.clip)).fill(0.0);
        pos_emb2.row_mut(pad_bucket(dims.clip)).fill(0.0);

        let std = (1.0 / dims.filter_len() as f64).sqrt();
        let filters = Matrix::random_normal(dims.filters, dims.filter_len(), std, rng);
        Ok(EncoderParams {
            dims,
            word_emb,
            pos_emb1,
            pos_emb2,
            filters,
            bias: vec![0.0; dims.filters],
        })
    }

    fn check_sentence(&self, s: &LabeledSentence) -> Result<()> {
        let rows = self.pos_emb1.rows();
        if let Some(&t) = s.tokens.iter().find(|&&t| t as usize >= self.word_emb.rows()) {
            return Err(Error::Contract(format!("token id {t} outside word table")));
        }
        if s.pos1.iter().chain(&s.pos2).any(|&b| b as usize >= rows) {
            return Err(Error::Contract("position bucket outside table".into()));
        }
        if s.pos1.len() != s.len() || s.pos2.len() != s.len() {
            return Err(Error::Contract(
                "position buckets do not cover the sentence".into(),
            ));
        }
        Ok(())
    }
}

/// Embeds the full `max_len × (d_w + 2·d_p)` input matrix; padding rows are zero.
pub fn embed(sentence: &LabeledSentence, params: &EncoderParams) -> Result<Matrix> {
    params.check_sentence(sentence)?;
    let rows = sentence.max_len.max(sentence.len());
    Ok(embed_rows(sentence, params, rows))
}

/// Embeds the real tokens into a zeroed buffer with `rows` rows.
fn embed_rows(s: &LabeledSentence, p: &EncoderParams, rows: usize) -> Matrix {
    let d = p.dims;
    let width = d.token_width();
    let mut c = Matrix::zeros(rows, width);
    for i in 0..s.len() {
        let row = c.row_mut(i);
        row[..d.word_dim].copy_from_slice(p.word_emb.row(s.tokens[i] as usize));
        row[d.word_dim..d.word_dim + d.pos_dim].copy_from_slice(p.pos_emb1.row(s.pos1[i] as usize));
        row[d.word_dim + d.pos_dim..].copy_from_slice(p.pos_emb2.row(s.pos2[i] as usize));
    }
    c
}

/// Convolution over every window start `0..c.rows()`, with `c` zero-padded on the
/// right. Output is `filters × c.rows()`.
pub fn conv(c: &Matrix, filters: &Matrix, bias: &[f64], window: usize) -> Result<Matrix> {
    if filters.cols() != window * c.cols() {
        return Err(Error::invalid(format!(
            "filter length {} does not match window {window} x width {}",
            filters.cols(),
            c.cols()
        )));
    }
    if bias.len() != filters.rows() {
        return Err(Error::invalid("bias length does not match filter count"));
    }
    let mut padded = Matrix::zeros(c.rows() + window - 1, c.cols());
    padded.as_mut_slice()[..c.as_slice().len()].copy_from_slice(c.as_slice());
    Ok(conv_padded(&padded, c.rows(), filters, bias, window))
}

/// `padded` must have at least `starts + window - 1` rows.
fn conv_padded(padded: &Matrix, starts: usize, filters: &Matrix, bias: &[f64], window: usize) -> Matrix {
    let width = padded.cols();
    let flen = window * width;
    let data = padded.as_slice();
    let mut out = Matrix::zeros(filters.rows(), starts);
    for j in 0..starts {
        let win = &data[j * width..j * width + flen];
        for (i, f) in filters.row_iter().enumerate() {
            out.set(i, j, dot(f, win) + bias[i]);
        }
    }
    out
}

/// Result of piecewise max-pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    /// Max per (filter, piece), filter-major, before tanh.
    pub pre: Vector,
    /// `tanh(pre)`.
    pub x: Vector,
    /// Window start that produced each max; `None` for an empty piece.
    pub argmax: Vec<Option<usize>>,
}

/// Piece bounds as half-open window-start ranges: `[0, p]`, `(p, q]`, `(q, len)`.
pub fn piece_ranges(e1_pos: usize, e2_pos: usize, true_len: usize) -> [std::ops::Range<usize>; 3] {
    let p = e1_pos.min(e2_pos);
    let q = e1_pos.max(e2_pos);
    [0..p + 1, p + 1..q + 1, (q + 1).min(true_len)..true_len]
}

pub fn piecewise_pool(c: &Matrix, e1_pos: usize, e2_pos: usize, true_len: usize) -> Result<Pooled> {
    if e1_pos >= true_len || e2_pos >= true_len || true_len > c.cols() {
        return Err(Error::invalid(format!(
            "entities ({e1_pos}, {e2_pos}) / length {true_len} out of range for {} windows",
            c.cols()
        )));
    }
    let pieces = piece_ranges(e1_pos, e2_pos, true_len);
    let n = c.rows();
    let mut pre = Vec::with_capacity(3 * n);
    let mut argmax = Vec::with_capacity(3 * n);
    for i in 0..n {
        let row = c.row(i);
        for piece in &pieces {
            let best = piece.clone().fold(None, |best: Option<usize>, j| match best {
                Some(b) if row[b] >= row[j] => Some(b),
                _ => Some(j),
            });
            pre.push(best.map_or(0.0, |j| row[j]));
            argmax.push(best);
        }
    }
    let x = pre.iter().map(|v| v.tanh()).collect();
    Ok(Pooled { pre, x, argmax })
}

/// Activations kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Embedded sentence plus `window - 1` zero rows.
    padded: Matrix,
    argmax: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct SentenceFeature {
    pub x: Vector,
    cache: Option<EncoderCache>,
}

impl SentenceFeature {
    pub fn argmax(&self) -> Option<&[Option<usize>]> {
        self.cache.as_ref().map(|c| c.argmax.as_slice())
    }

    /// Drops the backward cache.
    pub fn into_vector(self) -> Vector {
        self.x
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

/// Forward pass, keeping the activations needed by [`encode_backward`].
pub fn encode(sentence: &LabeledSentence, params: &EncoderParams) -> Result<SentenceFeature> {
    params.check_sentence(sentence)?;
    let len = sentence.len();
    let window = params.dims.window;
    let padded = embed_rows(sentence, params, len + window - 1);
    let c = conv_padded(&padded, len, &params.filters, &params.bias, window);
    let pooled = piecewise_pool(&c, sentence.e1_pos, sentence.e2_pos, len)?;
    Ok(SentenceFeature {
        x: pooled.x,
        cache: Some(EncoderCache {
            padded,
            argmax: pooled.argmax,
        }),
    })
}

/// Row-sparse gradient for an embedding table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    pub rows: BTreeMap<u32, Vector>,
}

impl SparseRows {
    pub fn add(&mut self, row: u32, g: &[f64]) {
        let entry = self.rows.entry(row).or_insert_with(|| vec![0.0; g.len()]);
        axpy(1.0, g, entry);
    }

    pub fn merge(&mut self, other: &SparseRows) {
        for (&r, g) in &other.rows {
            self.add(r, g);
        }
    }

    pub fn to_dense(&self, rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for (&r, g) in &self.rows {
            m.row_mut(r as usize).copy_from_slice(g);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub word_emb: SparseRows,
    pub pos_emb1: Matrix,
    pub pos_emb2: Matrix,
    pub filters: Matrix,
    pub bias: Vector,
}

impl EncoderGrads {
    pub fn zeros(dims: &EncoderDims) -> Self {
        let rows = position_table_size(dims.clip);
        EncoderGrads {
            word_emb: SparseRows::default(),
            pos_emb1: Matrix::zeros(rows, dims.pos_dim),
            pos_emb2: Matrix::zeros(rows, dims.pos_dim),
            filters: Matrix::zeros(dims.filters, dims.filter_len()),
            bias: vec![0.0; dims.filters],
        }
    }

    pub fn add(&mut self, other: &EncoderGrads) {
        self.word_emb.merge(&other.word_emb);
        axpy(1.0, other.pos_emb1.as_slice(), self.pos_emb1.as_mut_slice());
        axpy(1.0, other.pos_emb2.as_slice(), self.pos_emb2.as_mut_slice());
        axpy(1.0, other.filters.as_slice(), self.filters.as_mut_slice());
        axpy(1.0, &other.bias, &mut self.bias);
    }
}

/// Accumulates `∂L/∂params` into `grads` given `dx = ∂L/∂x`.
pub fn encode_backward(
    sentence: &LabeledSentence,
    params: &EncoderParams,
    feature: &SentenceFeature,
    dx: &[f64],
    grads: &mut EncoderGrads,
) -> Result<()> {
    let cache = feature
        .cache
        .as_ref()
        .ok_or_else(|| Error::Contract("encode_backward called without a forward cache".into()))?;
    let d = params.dims;
    if dx.len() != d.feature_dim() {
        return Err(Error::invalid(format!(
            "upstream gradient has length {}, expected {}",
            dx.len(),
            d.feature_dim()
        )));
    }
    let width = d.token_width();
    let flen = d.filter_len();
    let len = sentence.len();
    let data = cache.padded.as_slice();
    let mut dc = vec![0.0; cache.padded.rows() * width];
    let mut touched = false;

    for (k, (&g_out, &x)) in dx.iter().zip(&feature.x).enumerate() {
        let Some(j) = cache.argmax[k] else { continue };
        let g = g_out * (1.0 - x * x);
        if g == 0.0 {
            continue;
        }
        touched = true;
        let i = k / 3;
        let win = &data[j * width..j * width + flen];
        axpy(g, win, grads.filters.row_mut(i));
        grads.bias[i] += g;
        axpy(g, params.filters.row(i), &mut dc[j * width..j * width + flen]);
    }
    if !touched {
        return Ok(());
    }

    for r in 0..len {
        let row = &dc[r * width..(r + 1) * width];
        let tok = sentence.tokens[r];
        if tok != PAD && row[..d.word_dim].iter().any(|&v| v != 0.0) {
            grads.word_emb.add(tok, &row[..d.word_dim]);
        }
        axpy(
            1.0,
            &row[d.word_dim..d.word_dim + d.pos_dim],
            grads.pos_emb1.row_mut(sentence.pos1[r] as usize),
        );
        axpy(
            1.0,
            &row[d.word_dim + d.pos_dim..],
            grads.pos_emb2.row_mut(sentence.pos2[r] as usize),
        );
    }
    Ok(())
}
