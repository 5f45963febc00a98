//! Selective attention over sentence bags and superbags.
//!
//! Three aggregation modes share the relation vectors `R` (one row per relation):
//!
//! * `Att`: per-bag weights `softmax_j(⟨x_j, r_k⟩)` for the label relation only.
//! * `Crsa`: cross-relation weights. `S[j][k'] = score(x_j, r_k')`, `α = softmax` over
//!   relations per sentence, `β_j = α[j][k] / Σ_j' α[j'][k]` (Bayes' rule under a uniform
//!   sentence prior), bag feature `b = Σ_j β_j x_j`.
//! * `C2sa`: `Crsa` per bag, then cross-bag weights `γ = softmax_i(score(r_k, b_i))` and
//!   superbag feature `f = Σ_i γ_i b_i`.
//!
//! `score` is cosine similarity or the plain dot product.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{axpy, cosine, cosine_backward, dot, softmax_unchecked, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "ATT")]
    Att,
    #[serde(rename = "CRSA")]
    Crsa,
    #[serde(rename = "C2SA")]
    C2sa,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Att, Mode::Crsa, Mode::C2sa];

    /// Only `C2sa` combines several bags.
    pub fn uses_superbags(self) -> bool {
        self == Mode::C2sa
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Att => "ATT",
            Mode::Crsa => "CRSA",
            Mode::C2sa => "C2SA",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ATT" => Ok(Mode::Att),
            "CRSA" => Ok(Mode::Crsa),
            "C2SA" => Ok(Mode::C2sa),
            _ => Err(Error::invalid(format!("unknown mode {s:?} (ATT, CRSA, C2SA)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    Cosine,
    Dot,
}

impl fmt::Display for Scoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scoring::Cosine => "cosine",
            Scoring::Dot => "dot",
        })
    }
}

impl FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Scoring::Cosine),
            "dot" => Ok(Scoring::Dot),
            _ => Err(Error::invalid(format!("unknown scoring {s:?} (cosine, dot)"))),
        }
    }
}

#[inline]
pub fn score(a: &[f64], b: &[f64], scoring: Scoring) -> f64 {
    match scoring {
        Scoring::Cosine => cosine(a, b),
        Scoring::Dot => dot(a, b),
    }
}

fn score_backward(a: &[f64], b: &[f64], scoring: Scoring, g: f64, ga: &mut [f64], gb: &mut [f64]) {
    match scoring {
        Scoring::Cosine => cosine_backward(a, b, g, ga, gb),
        Scoring::Dot => {
            axpy(g, b, ga);
            axpy(g, a, gb);
        }
    }
}

/// Softmax backward: given `p = softmax(z)` and `∂L/∂p`, returns `∂L/∂z`.
fn softmax_backward(p: &[f64], dp: &[f64]) -> Vector {
    let s = dot(p, dp);
    p.iter().zip(dp).map(|(pi, di)| pi * (di - s)).collect()
}

/// `S[j][k] = score(x_j, r_k)`.
pub fn similarity(features: &[Vector], relations: &Matrix, scoring: Scoring) -> Result<Matrix> {
    let mut s = Matrix::zeros(features.len(), relations.rows());
    for (j, x) in features.iter().enumerate() {
        if x.len() != relations.cols() {
            return Err(Error::invalid(format!(
                "sentence feature {j} has length {}, relation vectors have {}",
                x.len(),
                relations.cols()
            )));
        }
        for (k, r) in relations.row_iter().enumerate() {
            s.set(j, k, score(x, r, scoring));
        }
    }
    Ok(s)
}

/// Row-wise softmax over relations: `α[j][k] = P(relation k | sentence j)`.
pub fn alpha(s: &Matrix) -> Matrix {
    let mut a = Matrix::zeros(s.rows(), s.cols());
    for j in 0..s.rows() {
        a.row_mut(j).copy_from_slice(&softmax_unchecked(s.row(j)));
    }
    a
}

/// `β[j] = α[j][k] / Σ_j' α[j'][k]`.
pub fn beta(alpha: &Matrix, k: usize) -> Vector {
    let col: Vec<f64> = (0..alpha.rows()).map(|j| alpha.get(j, k)).collect();
    let total: f64 = col.iter().sum();
    col.into_iter().map(|a| a / total).collect()
}

/// `Σ_j w[j] · x_j`.
pub fn bag_feature(features: &[Vector], weights: &[f64]) -> Result<Vector> {
    if features.len() != weights.len() || features.is_empty() {
        return Err(Error::invalid(format!(
            "{} features vs {} weights",
            features.len(),
            weights.len()
        )));
    }
    let mut b = vec![0.0; features[0].len()];
    for (x, &w) in features.iter().zip(weights) {
        axpy(w, x, &mut b);
    }
    Ok(b)
}

/// `γ = softmax_i(score(r_k, b_i))`.
pub fn gamma(bag_features: &[Vector], r_k: &[f64], scoring: Scoring) -> Result<Vector> {
    if bag_features.is_empty() {
        return Err(Error::invalid("gamma over zero bags"));
    }
    let scores: Vec<f64> = bag_features.iter().map(|b| score(r_k, b, scoring)).collect();
    Ok(softmax_unchecked(&scores))
}

/// Per-bag intermediate values.
#[derive(Debug, Clone, PartialEq)]
pub struct BagTrace {
    /// `n_b × n_r` similarities (`Crsa`/`C2sa`), or `n_b × 1` label-relation dot
    /// scores (`Att`).
    pub s: Matrix,
    /// `n_b × n_r`; `None` under `Att`.
    pub alpha: Option<Matrix>,
    /// Sentence weights for the label relation.
    pub beta: Vector,
    pub feature: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub mode: Mode,
    pub scoring: Scoring,
    pub relation: usize,
    pub bags: Vec<BagTrace>,
    pub gamma: Vector,
    pub superbag_feature: Vector,
}

impl AttentionTrace {
    pub fn bag_features(&self) -> Vec<&Vector> {
        self.bags.iter().map(|b| &b.feature).collect()
    }
}

/// Aggregates the sentence features of a superbag (`features[i][j]` is sentence `j`
/// of bag `i`) into the superbag feature for `relation`.
pub fn superbag_feature(
    features: &[Vec<Vector>],
    relations: &Matrix,
    relation: usize,
    mode: Mode,
    scoring: Scoring,
) -> Result<AttentionTrace> {
    if features.is_empty() {
        return Err(Error::invalid("empty superbag"));
    }
    if let Some(i) = features.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("bag {i} of the superbag is empty")));
    }
    if relation >= relations.rows() {
        return Err(Error::invalid(format!(
            "relation {relation} outside {} relation vectors",
            relations.rows()
        )));
    }
    if !mode.uses_superbags() && features.len() != 1 {
        return Err(Error::invalid(format!(
            "{mode} aggregates single bags, got a superbag of {}",
            features.len()
        )));
    }
    let r_k = relations.row(relation);

    let mut bags = Vec::with_capacity(features.len());
    for xs in features {
        let bag = match mode {
            Mode::Att => {
                for x in xs {
                    if x.len() != r_k.len() {
                        return Err(Error::invalid("sentence feature length mismatch"));
                    }
                }
                let scores: Vec<f64> = xs.iter().map(|x| dot(x, r_k)).collect();
                let beta = softmax_unchecked(&scores);
                let feature = bag_feature(xs, &beta)?;
                BagTrace {
                    s: Matrix::from_vec(xs.len(), 1, scores)?,
                    alpha: None,
                    beta,
                    feature,
                }
            }
            Mode::Crsa | Mode::C2sa => {
                let s = similarity(xs, relations, scoring)?;
                let a = alpha(&s);
                let beta = beta(&a, relation);
                let feature = bag_feature(xs, &beta)?;
                BagTrace {
                    s,
                    alpha: Some(a),
                    beta,
                    feature,
                }
            }
        };
        bags.push(bag);
    }

    let (gamma, superbag_feature) = if bags.len() == 1 {
        (vec![1.0], bags[0].feature.clone())
    } else {
        let bfs: Vec<Vector> = bags.iter().map(|b| b.feature.clone()).collect();
        let g = gamma(&bfs, r_k, scoring)?;
        let f = bag_feature(&bfs, &g)?;
        (g, f)
    };

    Ok(AttentionTrace {
        mode,
        scoring,
        relation,
        bags,
        gamma,
        superbag_feature,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    /// Same layout as the `features` argument of [`superbag_feature`].
    pub features: Vec<Vec<Vector>>,
    pub relations: Matrix,
}

/// Backpropagates `∂L/∂f` through γ, β, α and the scoring function.
pub fn attention_backward(
    trace: &AttentionTrace,
    features: &[Vec<Vector>],
    relations: &Matrix,
    df: &[f64],
) -> Result<AttentionGrads> {
    if features.len() != trace.bags.len()
        || features
            .iter()
            .zip(&trace.bags)
            .any(|(xs, b)| xs.len() != b.beta.len())
    {
        return Err(Error::Contract(
            "features do not match the attention trace".into(),
        ));
    }
    let dim = relations.cols();
    if df.len() != dim {
        return Err(Error::invalid(format!(
            "upstream gradient has length {}, expected {dim}",
            df.len()
        )));
    }
    let k = trace.relation;
    let r_k = relations.row(k).to_vec();
    let mut dr = Matrix::zeros(relations.rows(), dim);
    let mut dx: Vec<Vec<Vector>> = features.iter().map(|xs| vec![vec![0.0; dim]; xs.len()]).collect();

    // f = Σ γ_i b_i, γ = softmax(score(r_k, b_i))
    let mut db: Vec<Vector> = trace
        .gamma
        .iter()
        .map(|&g| df.iter().map(|d| g * d).collect())
        .collect();
    if trace.bags.len() > 1 {
        let dgamma: Vec<f64> = trace.bags.iter().map(|b| dot(df, &b.feature)).collect();
        let dt = softmax_backward(&trace.gamma, &dgamma);
        for (i, bag) in trace.bags.iter().enumerate() {
            let mut grk = vec![0.0; dim];
            score_backward(&r_k, &bag.feature, trace.scoring, dt[i], &mut grk, &mut db[i]);
            axpy(1.0, &grk, dr.row_mut(k));
        }
    }

    for (i, bag) in trace.bags.iter().enumerate() {
        let xs = &features[i];
        // b = Σ β_j x_j
        let dbeta: Vec<f64> = xs.iter().map(|x| dot(&db[i], x)).collect();
        for (j, &w) in bag.beta.iter().enumerate() {
            axpy(w, &db[i], &mut dx[i][j]);
        }
        match &bag.alpha {
            None => {
                // β = softmax_j(⟨x_j, r_k⟩)
                let ds = softmax_backward(&bag.beta, &dbeta);
                for (j, &g) in ds.iter().enumerate() {
                    axpy(g, &r_k, &mut dx[i][j]);
                    axpy(g, &xs[j], dr.row_mut(k));
                }
            }
            Some(alpha) => {
                // β_j = α_jk / A
                let col_sum: f64 = (0..alpha.rows()).map(|j| alpha.get(j, k)).sum();
                let mean = dot(&bag.beta, &dbeta);
                for (j, x) in xs.iter().enumerate() {
                    let dalpha_k = (dbeta[j] - mean) / col_sum;
                    if dalpha_k == 0.0 {
                        continue;
                    }
                    let a_jk = alpha.get(j, k);
                    // α_j = softmax(S_j); only column k carries upstream gradient
                    for kk in 0..alpha.cols() {
                        let indicator = if kk == k { 1.0 } else { 0.0 };
                        let ds = dalpha_k * alpha.get(j, kk) * (indicator - a_jk);
                        if ds != 0.0 {
                            let mut gr = vec![0.0; dim];
                            score_backward(x, relations.row(kk), trace.scoring, ds, &mut dx[i][j], &mut gr);
                            axpy(1.0, &gr, dr.row_mut(kk));
                        }
                    }
                }
            }
        }
    }

    Ok(AttentionGrads {
        features: dx,
        relations: dr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, FlatParams, GradCheckConfig};
    use crate::numeric::SeededRng;
    use proptest::prelude::*;

    fn rand_vec(rng: &mut SeededRng, n: usize) -> Vector {
        (0..n).map(|_| rng.normal()).collect()
    }

    /// P(sentence j | relation k) from Bayes' rule with an explicit uniform prior.
    fn bayes_oracle(s: &Matrix, k: usize) -> Vector {
        let prior = 1.0 / s.rows() as f64;
        let likelihood: Vec<f64> = (0..s.rows())
            .map(|j| {
                let z: f64 = s.row(j).iter().map(|v| v.exp()).sum();
                s.get(j, k).exp() / z
            })
            .collect();
        let evidence: f64 = likelihood.iter().map(|l| l * prior).sum();
        likelihood.iter().map(|l| l * prior / evidence).collect()
    }

    #[test]
    fn similarity_examples() {
        let r = Matrix::from_rows(&[vec![1.0, 2.0, 0.5], vec![-1.0, 0.0, 3.0]]).unwrap();
        let s = similarity(&[r.row(1).to_vec()], &r, Scoring::Cosine).unwrap();
        assert!((s.get(0, 1) - 1.0).abs() < 1e-15);

        let x = vec![0.3, -0.2, 0.9];
        let x5: Vector = x.iter().map(|v| v * 5.0).collect();
        let sc = similarity(&[x.clone(), x5.clone()], &r, Scoring::Cosine).unwrap();
        let sd = similarity(&[x.clone(), x5], &r, Scoring::Dot).unwrap();
        for k in 0..2 {
            assert!((sc.get(0, k) - sc.get(1, k)).abs() < 1e-15);
            assert!((sd.get(1, k) - 5.0 * sd.get(0, k)).abs() < 1e-12);
        }

        // hand vectors against the cosine oracle
        let xs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]];
        let s = similarity(&xs, &r, Scoring::Cosine).unwrap();
        for (j, x) in xs.iter().enumerate() {
            for k in 0..2 {
                assert_eq!(s.get(j, k), cosine(x, r.row(k)));
            }
        }
        assert!((s.get(0, 0) - 1.0 / 5.25f64.sqrt()).abs() < 1e-15);

        assert!(similarity(&[vec![1.0]], &r, Scoring::Cosine).is_err());
    }

    #[test]
    fn alpha_examples() {
        let s = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.4, 0.4]]).unwrap();
        let a = alpha(&s);
        assert!((a.get(0, 0) - 0.68997).abs() < 1e-4);
        assert!((a.get(0, 1) - 0.31003).abs() < 1e-4);
        assert_eq!(a.row(1), &[0.5, 0.5]);
        let single = alpha(&Matrix::from_rows(&[vec![0.7], vec![-0.2]]).unwrap());
        assert_eq!(single.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn beta_examples() {
        let a = Matrix::from_rows(&[vec![0.68997, 0.31003], vec![0.42556, 0.57444]]).unwrap();
        let b = beta(&a, 0);
        assert!((b[0] - 0.61852).abs() < 1e-4);
        assert!((b[1] - 0.38148).abs() < 1e-4);

        // same numbers through the explicit Bayes oracle: α row 1 = softmax([0.0, 0.3])
        let s = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.0, 0.3]]).unwrap();
        let via_alpha = beta(&alpha(&s), 0);
        let oracle = bayes_oracle(&s, 0);
        assert!((alpha(&s).get(1, 0) - 0.42556).abs() < 1e-4);
        for (x, y) in via_alpha.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }

        assert_eq!(beta(&Matrix::from_rows(&[vec![0.3, 0.7]]).unwrap(), 1), vec![1.0]);

        let r = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.2, 1.0]]).unwrap();
        let xs = vec![vec![0.4, 0.1], vec![0.4, 0.1]];
        let b = beta(&alpha(&similarity(&xs, &r, Scoring::Cosine).unwrap()), 1);
        assert_eq!(b, vec![0.5, 0.5]);
    }

    #[test]
    fn bag_feature_examples() {
        let xs = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        assert_eq!(bag_feature(&xs, &[0.0, 1.0]).unwrap(), xs[1]);
        let same = vec![vec![0.2, -0.7]; 3];
        let b = bag_feature(&same, &[0.2, 0.3, 0.5]).unwrap();
        for (x, y) in b.iter().zip(&same[0]) {
            assert!((x - y).abs() < 1e-15);
        }
        let b = bag_feature(&xs, &[0.61852, 0.38148]).unwrap();
        assert!((b[0] - (0.61852 - 3.0 * 0.38148)).abs() < 1e-12);
        assert!((b[1] - (2.0 * 0.61852 + 0.5 * 0.38148)).abs() < 1e-12);
    }

    #[test]
    fn gamma_examples() {
        // dot scoring with r = e_0 reproduces arbitrary scores
        let r = vec![1.0, 0.0];
        let g = gamma(&[vec![0.8, 0.0], vec![0.2, 0.0]], &r, Scoring::Dot).unwrap();
        assert!((g[0] - 0.64566).abs() < 1e-4);
        assert!((g[1] - 0.35434).abs() < 1e-4);
        assert_eq!(gamma(&[vec![0.3, 0.1]], &r, Scoring::Cosine).unwrap(), vec![1.0]);
        let g = gamma(&[vec![0.3, 0.1], vec![0.3, 0.1]], &r, Scoring::Cosine).unwrap();
        assert_eq!(g, vec![0.5, 0.5]);
    }

    #[test]
    fn single_sentence_superbag_returns_the_sentence() {
        let mut rng = SeededRng::new(1);
        let r = Matrix::random_normal(4, 6, 0.5, &mut rng);
        let x = rand_vec(&mut rng, 6);
        for mode in Mode::ALL {
            for scoring in [Scoring::Cosine, Scoring::Dot] {
                let t = superbag_feature(&[vec![x.clone()]], &r, 2, mode, scoring).unwrap();
                assert_eq!(t.superbag_feature, x);
                assert_eq!(t.gamma, vec![1.0]);
                assert_eq!(t.bags[0].beta, vec![1.0]);
            }
        }
    }

    #[test]
    fn rejects_empty_and_multi_bag_baselines() {
        let r = Matrix::zeros(2, 3);
        assert!(superbag_feature(&[], &r, 0, Mode::C2sa, Scoring::Cosine).is_err());
        assert!(superbag_feature(&[vec![]], &r, 0, Mode::C2sa, Scoring::Cosine).is_err());
        let two = vec![vec![vec![1.0, 0.0, 0.0]], vec![vec![0.0, 1.0, 0.0]]];
        assert!(superbag_feature(&two, &r, 0, Mode::Crsa, Scoring::Cosine).is_err());
        assert!(superbag_feature(&two, &r, 0, Mode::Att, Scoring::Cosine).is_err());
    }

    #[test]
    fn off_relation_bag_gets_below_uniform_gamma() {
        // relation vectors: r_0 = e0, r_1 = e1, r_2 = e2
        let mut r = Matrix::zeros(3, 3);
        for k in 0..3 {
            r.set(k, k, 1.0);
        }
        let good = vec![vec![0.9, 0.1, 0.0], vec![0.8, 0.2, 0.1]];
        let good2 = vec![vec![0.7, 0.0, 0.2], vec![0.9, 0.1, 0.1]];
        let off = vec![vec![0.1, 0.9, 0.0], vec![0.0, 0.8, 0.1]];
        let t = superbag_feature(&[good, off, good2], &r, 0, Mode::C2sa, Scoring::Cosine).unwrap();
        assert!(t.gamma[1] < 1.0 / 3.0);
        assert!(t.gamma[1] < t.gamma[0] && t.gamma[1] < t.gamma[2]);
        // the off bag's own feature is still the β-weighted average
        assert_eq!(t.bags[1].beta.len(), 2);
    }

    #[test]
    fn att_and_crsa_differ_when_a_sentence_prefers_another_relation() {
        // x_1 and x_2 score equally against r_0, but x_2 scores much higher on r_1.
        let r = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let x1 = vec![0.6, -0.8, 0.0];
        let x2 = vec![0.6, 0.8, 0.0];
        let xs = vec![vec![x1, x2]];
        let att = superbag_feature(&xs, &r, 0, Mode::Att, Scoring::Cosine).unwrap();
        let crsa = superbag_feature(&xs, &r, 0, Mode::Crsa, Scoring::Cosine).unwrap();
        assert!((att.bags[0].beta[0] - 0.5).abs() < 1e-15);
        assert!(crsa.bags[0].beta[0] > 0.6, "{:?}", crsa.bags[0].beta);
    }

    /// Attention output reduced to a scalar with a fixed random projection.
    fn scalar_loss(
        features: &[Vec<Vector>],
        r: &Matrix,
        k: usize,
        mode: Mode,
        scoring: Scoring,
        proj: &[f64],
    ) -> f64 {
        dot(
            &superbag_feature(features, r, k, mode, scoring)
                .unwrap()
                .superbag_feature,
            proj,
        )
    }

    fn flatten(xs: &[Vec<Vector>]) -> Vec<f64> {
        xs.iter().flatten().flatten().copied().collect()
    }

    fn unflatten(flat: &[f64], shape: &[usize], dim: usize) -> Vec<Vec<Vector>> {
        let mut it = flat.chunks(dim);
        shape
            .iter()
            .map(|&n| (0..n).map(|_| it.next().unwrap().to_vec()).collect())
            .collect()
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            for mode in Mode::ALL {
                for scoring in [Scoring::Cosine, Scoring::Dot] {
                    let mut rng = SeededRng::new(seed * 31 + 7);
                    let dim = 6;
                    let n_r = 4;
                    let shape: Vec<usize> = if mode == Mode::C2sa {
                        vec![2, 3, 1]
                    } else {
                        vec![3]
                    };
                    let features: Vec<Vec<Vector>> = shape
                        .iter()
                        .map(|&n| (0..n).map(|_| rand_vec(&mut rng, dim)).collect())
                        .collect();
                    let r = Matrix::random_normal(n_r, dim, 0.5, &mut rng);
                    let k = 1 + rng.below(n_r - 1);
                    let proj = rand_vec(&mut rng, dim);

                    let trace = superbag_feature(&features, &r, k, mode, scoring).unwrap();
                    let grads = attention_backward(&trace, &features, &r, &proj).unwrap();

                    // frozen R, perturb X
                    let cfg = GradCheckConfig {
                        seed,
                        ..Default::default()
                    };
                    let rep = grad_check(
                        |p: &FlatParams| {
                            scalar_loss(&unflatten(&p.0, &shape, dim), &r, k, mode, scoring, &proj)
                        },
                        &FlatParams(flatten(&features)),
                        &FlatParams(flatten(&grads.features)),
                        &cfg,
                    )
                    .unwrap();
                    assert!(rep.passed(), "X {mode} {scoring} seed {seed}\n{rep}");

                    // frozen X, perturb R
                    let rep = grad_check(
                        |p: &FlatParams| {
                            let rm = Matrix::from_vec(n_r, dim, p.0.clone()).unwrap();
                            scalar_loss(&features, &rm, k, mode, scoring, &proj)
                        },
                        &FlatParams(r.as_slice().to_vec()),
                        &FlatParams(grads.relations.as_slice().to_vec()),
                        &cfg,
                    )
                    .unwrap();
                    assert!(rep.passed(), "R {mode} {scoring} seed {seed}\n{rep}");
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = SeededRng::new(3);
        let features = vec![vec![rand_vec(&mut rng, 4); 2], vec![rand_vec(&mut rng, 4)]];
        let r = Matrix::random_normal(3, 4, 1.0, &mut rng);
        let t = superbag_feature(&features, &r, 1, Mode::C2sa, Scoring::Cosine).unwrap();
        let g = attention_backward(&t, &features, &r, &[0.0; 4]).unwrap();
        assert!(g.relations.as_slice().iter().all(|&v| v == 0.0));
        assert!(flatten(&g.features).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_trace() {
        let mut rng = SeededRng::new(3);
        let features = vec![vec![rand_vec(&mut rng, 4); 2]];
        let r = Matrix::random_normal(3, 4, 1.0, &mut rng);
        let t = superbag_feature(&features, &r, 1, Mode::Crsa, Scoring::Cosine).unwrap();
        let other = vec![vec![rand_vec(&mut rng, 4); 3]];
        assert!(matches!(
            attention_backward(&t, &other, &r, &[1.0; 4]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn raising_competing_similarity_lowers_beta() {
        let mut rng = SeededRng::new(17);
        for _ in 0..200 {
            let nb = 2 + rng.below(4);
            let nr = 2 + rng.below(5);
            let mut s = Matrix::zeros(nb, nr);
            for v in s.as_mut_slice() {
                *v = rng.normal();
            }
            let k = rng.below(nr);
            let j = rng.below(nb);
            let mut kk = rng.below(nr);
            while kk == k {
                kk = rng.below(nr);
            }
            let before_a = alpha(&s);
            let before_b = beta(&before_a, k);
            s.set(j, kk, s.get(j, kk) + 0.5);
            let after_a = alpha(&s);
            let after_b = beta(&after_a, k);
            assert!(after_a.get(j, k) < before_a.get(j, k));
            assert!(after_b[j] < before_b[j]);
        }
    }

    /// Random superbag: `n_s` bags of 1..=8 sentences, plus relation vectors.
    fn random_instance(seed: u64, n_s: usize, n_r: usize, dim: usize) -> (Vec<Vec<Vector>>, Matrix) {
        let mut rng = SeededRng::new(seed);
        let xs = (0..n_s)
            .map(|_| (0..1 + rng.below(8)).map(|_| rand_vec(&mut rng, dim)).collect())
            .collect();
        let r = Matrix::random_normal(n_r, dim, 1.0, &mut rng);
        (xs, r)
    }

    fn scoring_of(dot: bool) -> Scoring {
        if dot {
            Scoring::Dot
        } else {
            Scoring::Cosine
        }
    }

    proptest! {
        #[test]
        fn weights_are_normalized(seed in any::<u64>(), n_s in 1usize..4, n_r in 2usize..11, dot in any::<bool>()) {
            let (xs, r) = random_instance(seed, n_s, n_r, 6);
            let t = superbag_feature(&xs, &r, seed as usize % n_r, Mode::C2sa, scoring_of(dot)).unwrap();
            for b in &t.bags {
                let a = b.alpha.as_ref().unwrap();
                for j in 0..a.rows() {
                    prop_assert!((a.row(j).iter().sum::<f64>() - 1.0).abs() <= 1e-10);
                }
                prop_assert!((b.beta.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            }
            prop_assert!((t.gamma.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }

        #[test]
        fn beta_matches_bayes_rule(seed in any::<u64>(), n in 1usize..9, n_r in 2usize..11) {
            let mut rng = SeededRng::new(seed);
            let s = Matrix::random_normal(n, n_r, 2.0, &mut rng);
            let k = rng.below(n_r);
            for (got, want) in beta(&alpha(&s), k).iter().zip(bayes_oracle(&s, k)) {
                prop_assert!((got - want).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_weights_ignore_feature_scale(seed in any::<u64>(), n_s in 1usize..4, c in 0.05f64..20.0) {
            let (xs, r) = random_instance(seed, n_s, 5, 6);
            let k = seed as usize % 5;
            let base = superbag_feature(&xs, &r, k, Mode::C2sa, Scoring::Cosine).unwrap();
            let i = seed as usize % n_s;
            let j = (seed >> 8) as usize % xs[i].len();
            let mut one = xs.clone();
            one[i][j].iter_mut().for_each(|v| *v *= c);
            let one = superbag_feature(&one, &r, k, Mode::C2sa, Scoring::Cosine).unwrap();
            let mut bag = xs.clone();
            bag[i].iter_mut().flatten().for_each(|v| *v *= c);
            let bag = superbag_feature(&bag, &r, k, Mode::C2sa, Scoring::Cosine).unwrap();
            for (b0, b1) in base.bags.iter().zip(&one.bags) {
                for (x, y) in b0.alpha.as_ref().unwrap().as_slice().iter().zip(b1.alpha.as_ref().unwrap().as_slice()) {
                    prop_assert!((x - y).abs() <= 1e-10);
                }
                for (x, y) in b0.beta.iter().zip(&b1.beta) {
                    prop_assert!((x - y).abs() <= 1e-10);
                }
            }
            for (x, y) in base.gamma.iter().zip(&bag.gamma) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }

        #[test]
        fn feature_is_the_weighted_combination(seed in any::<u64>(), n_s in 1usize..4, dot in any::<bool>()) {
            let (xs, r) = random_instance(seed, n_s, 4, 5);
            let t = superbag_feature(&xs, &r, 1, Mode::C2sa, scoring_of(dot)).unwrap();
            let mut expect = vec![0.0; 5];
            for ((bag, trace), g) in xs.iter().zip(&t.bags).zip(&t.gamma) {
                for (x, b) in bag.iter().zip(&trace.beta) {
                    prop_assert!(*b >= 0.0 && *g >= 0.0);
                    axpy(g * b, x, &mut expect);
                }
            }
            for (d, (f, e)) in t.superbag_feature.iter().zip(&expect).enumerate() {
                prop_assert!((f - e).abs() <= 1e-12);
                let lo = xs.iter().flatten().map(|x| x[d]).fold(f64::INFINITY, f64::min);
                let hi = xs.iter().flatten().map(|x| x[d]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*f >= lo - 1e-12 && *f <= hi + 1e-12);
            }
        }
    }
}
