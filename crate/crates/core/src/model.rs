//! The full trainable parameter set and its gradient.

use crate::encoder::{EncoderDims, EncoderGrads, EncoderParams};
use crate::error::{Error, Result};
use crate::gradcheck::ParamGroups;
use crate::numeric::{axpy, Matrix, SeededRng};

/// Std of the relation-vector initialization.
pub const RELATION_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub encoder: EncoderDims,
    pub relations: usize,
}

impl ModelDims {
    pub fn feature_dim(&self) -> usize {
        self.encoder.feature_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    /// Relation attention vectors, `n_r × 3n`; shared by both attention levels.
    pub relations: Matrix,
    /// Output projection `W`, `n_r × 3n`.
    pub output: Matrix,
    /// Dropout keep probability on the output layer.
    pub keep_prob: f64,
}

impl ModelParams {
    pub fn init(
        dims: ModelDims,
        word_vectors: Option<Matrix>,
        keep_prob: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::invalid(format!(
                "keep probability {keep_prob} not in (0, 1]"
            )));
        }
        if dims.relations == 0 {
            return Err(Error::invalid("at least one relation is required"));
        }
        let encoder = EncoderParams::init(dims.encoder, word_vectors, rng)?;
        let d = dims.feature_dim();
        let mut relations = Matrix::random_normal(dims.relations, d, RELATION_INIT_STD, rng);
        // a zero row would leave cosine scoring without a direction
        for k in 0..dims.relations {
            if relations.row(k).iter().all(|&v| v == 0.0) {
                relations.row_mut(k)[0] = RELATION_INIT_STD;
            }
        }
        let output = Matrix::random_normal(dims.relations, d, (1.0 / d as f64).sqrt(), rng);
        Ok(ModelParams {
            encoder,
            relations,
            output,
            keep_prob,
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            encoder: self.encoder.dims,
            relations: self.relations.rows(),
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..GROUPS.len()).all(|i| self.group(i).iter().all(|v| v.is_finite()))
    }
}

pub const GROUPS: [&str; 7] = [
    "word_emb",
    "pos_emb1",
    "pos_emb2",
    "filters",
    "filter_bias",
    "relations",
    "output",
];

impl ParamGroups for ModelParams {
    fn group_names(&self) -> Vec<&'static str> {
        GROUPS.to_vec()
    }

    fn group(&self, index: usize) -> &[f64] {
        match index {
            0 => self.encoder.word_emb.as_slice(),
            1 => self.encoder.pos_emb1.as_slice(),
            2 => self.encoder.pos_emb2.as_slice(),
            3 => self.encoder.filters.as_slice(),
            4 => &self.encoder.bias,
            5 => self.relations.as_slice(),
            6 => self.output.as_slice(),
            _ => panic!("no parameter group {index}"),
        }
    }

    fn group_mut(&mut self, index: usize) -> &mut [f64] {
        match index {
            0 => self.encoder.word_emb.as_mut_slice(),
            1 => self.encoder.pos_emb1.as_mut_slice(),
            2 => self.encoder.pos_emb2.as_mut_slice(),
            3 => self.encoder.filters.as_mut_slice(),
            4 => &mut self.encoder.bias,
            5 => self.relations.as_mut_slice(),
            6 => self.output.as_mut_slice(),
            _ => panic!("no parameter group {index}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: EncoderGrads,
    pub relations: Matrix,
    pub output: Matrix,
}

impl Gradients {
    pub fn zeros(dims: &ModelDims) -> Self {
        let d = dims.feature_dim();
        Gradients {
            encoder: EncoderGrads::zeros(&dims.encoder),
            relations: Matrix::zeros(dims.relations, d),
            output: Matrix::zeros(dims.relations, d),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        self.encoder.add(&other.encoder);
        axpy(1.0, other.relations.as_slice(), self.relations.as_mut_slice());
        axpy(1.0, other.output.as_slice(), self.output.as_mut_slice());
    }

    /// Dense copy shaped like `params` (for finite-difference comparison).
    pub fn to_params(&self, params: &ModelParams) -> ModelParams {
        let d = params.encoder.dims;
        let mut out = params.clone();
        out.encoder.word_emb = self.encoder.word_emb.to_dense(d.vocab, d.word_dim);
        out.encoder.pos_emb1 = self.encoder.pos_emb1.clone();
        out.encoder.pos_emb2 = self.encoder.pos_emb2.clone();
        out.encoder.filters = self.encoder.filters.clone();
        out.encoder.bias = self.encoder.bias.clone();
        out.relations = self.relations.clone();
        out.output = self.output.clone();
        out
    }

    /// Name of the first group holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        let bad = |s: &[f64]| s.iter().any(|v| !v.is_finite());
        if self.encoder.word_emb.rows.values().any(|r| bad(r)) {
            return Some("word_emb");
        }
        [
            ("pos_emb1", self.encoder.pos_emb1.as_slice()),
            ("pos_emb2", self.encoder.pos_emb2.as_slice()),
            ("filters", self.encoder.filters.as_slice()),
            ("filter_bias", &self.encoder.bias[..]),
            ("relations", self.relations.as_slice()),
            ("output", self.output.as_slice()),
        ]
        .into_iter()
        .find(|(_, s)| bad(s))
        .map(|(n, _)| n)
    }
}
