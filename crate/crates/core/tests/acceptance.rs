//! Acceptance suite. Every criterion prints one `criterion N PASS|FAIL` line.
//!
//! Criteria 5 and 6 are measured results on the synthetic benchmark. They print
//! FAIL without failing the test run unless `BAGATTN_STRICT_ACCEPTANCE=1`.
//! Criterion 7 needs the external corpus and is ignored by default.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use bagattn_core::attention::{alpha, beta, superbag_feature, AttentionTrace, Mode, Scoring};
use bagattn_core::checkpoint::Checkpoint;
use bagattn_core::config::Config;
use bagattn_core::corpus::{
    assemble_superbags, load_word_vectors, parse_corpus, CorpusStats, PairKey, ParseOptions, RelationSchema,
};
use bagattn_core::eval::{pr_curve, sentence_f1, GoldFacts, Prediction};
use bagattn_core::numeric::{Matrix, SeededRng, Vector};
use bagattn_core::pipeline::{
    bags_for, check_full_loss, fit, run_synthetic, write_metrics_csv, GradCheckInstance,
};
use bagattn_core::synthetic::generate_synthetic;
use bagattn_core::training::Objective;

const BENCH_CONFIG: &str = include_str!("../../../configs/synthetic_bench.json");
const BENCH_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn report(id: u32, pass: bool, detail: &str) -> bool {
    println!("criterion {id} {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn strict() -> bool {
    std::env::var("BAGATTN_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1")
}

fn random_vec(rng: &mut SeededRng, n: usize) -> Vector {
    (0..n).map(|_| rng.normal()).collect()
}

/// Random superbag features: `n_s` bags of 1..=8 sentences.
fn random_superbag(rng: &mut SeededRng, n_s: usize, dim: usize) -> Vec<Vec<Vector>> {
    (0..n_s)
        .map(|_| {
            let n_b = 1 + rng.below(8);
            (0..n_b).map(|_| random_vec(rng, dim)).collect()
        })
        .collect()
}

fn naive_score(a: &[f64], b: &[f64], scoring: Scoring) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    match scoring {
        Scoring::Dot => d,
        Scoring::Cosine => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (na * nb)
        }
    }
}

/// P(sentence j | relation k) by Bayes' rule with a uniform sentence prior.
fn bayes_beta(xs: &[Vector], relations: &Matrix, k: usize, scoring: Scoring) -> Vector {
    let prior = 1.0 / xs.len() as f64;
    let posterior_k: Vec<f64> = xs
        .iter()
        .map(|x| {
            let s: Vec<f64> = relations.row_iter().map(|r| naive_score(x, r, scoring)).collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            (s[k] - m).exp() / z
        })
        .collect();
    let evidence: f64 = posterior_k.iter().map(|p| p * prior).sum();
    posterior_k.iter().map(|p| p * prior / evidence).collect()
}

#[test]
fn criterion_1_attention_normalization() {
    let start = Instant::now();
    let mut rng = SeededRng::new(101);
    let (mut worst_sum, mut worst_bayes) = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let n_r = 2 + rng.below(9);
        let dim = 3 + rng.below(10);
        let n_s = 1 + rng.below(3);
        let scoring = if i % 2 == 0 { Scoring::Cosine } else { Scoring::Dot };
        let features = random_superbag(&mut rng, n_s, dim);
        let relations =
            Matrix::from_rows(&(0..n_r).map(|_| random_vec(&mut rng, dim)).collect::<Vec<_>>()).unwrap();
        let k = rng.below(n_r);
        let trace = superbag_feature(&features, &relations, k, Mode::C2sa, scoring).unwrap();
        for (xs, bag) in features.iter().zip(&trace.bags) {
            let a = bag.alpha.as_ref().unwrap();
            for j in 0..a.rows() {
                worst_sum = worst_sum.max((a.row(j).iter().sum::<f64>() - 1.0).abs());
            }
            worst_sum = worst_sum.max((bag.beta.iter().sum::<f64>() - 1.0).abs());
            let oracle = bayes_beta(xs, &relations, k, scoring);
            let direct = beta(&alpha(&bag.s), k);
            for ((o, t), d) in oracle.iter().zip(&bag.beta).zip(&direct) {
                worst_bayes = worst_bayes.max((o - t).abs()).max((o - d).abs());
            }
        }
        worst_sum = worst_sum.max((trace.gamma.iter().sum::<f64>() - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_sum <= 1e-10 && worst_bayes <= 1e-12 && secs < 5.0;
    report(
        1,
        pass,
        &format!("max |sum-1|={worst_sum:.2e} (tol 1e-10), max |beta-bayes|={worst_bayes:.2e} (tol 1e-12), {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        for mode in Mode::ALL {
            for scoring in [Scoring::Cosine, Scoring::Dot] {
                let r = check_full_loss(GradCheckInstance::default(), mode, scoring, seed).unwrap();
                worst = worst.max(r.max_rel_error());
                if !r.passed() {
                    failures.push(format!("{mode}/{scoring} seed {seed}\n{r}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    report(
        2,
        pass,
        &format!("60 full-loss checks, max rel err {worst:.2e} (tol 1e-4), {secs:.1}s"),
    );
    assert!(pass, "{}", failures.join("\n"));
}

fn sentence_weights(t: &AttentionTrace) -> Vec<f64> {
    let mut w = Vec::new();
    for b in &t.bags {
        w.extend_from_slice(b.alpha.as_ref().unwrap().as_slice());
        w.extend_from_slice(&b.beta);
    }
    w
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Under cosine, α and β see only the direction of each sentence feature. γ scores
/// the bag feature, a β-weighted sum: rescaling one sentence of a multi-sentence
/// bag turns that sum, so γ is checked by rescaling a whole bag.
#[test]
fn criterion_3_scoring_function_laws() {
    let mut rng = SeededRng::new(303);
    let (mut cosine_drift, mut cosine_gamma_single) = (0.0f64, 0.0f64);
    let mut dot_min_change = f64::INFINITY;
    for _ in 0..200 {
        let n_r = 2 + rng.below(9);
        let dim = 3 + rng.below(10);
        let n_s = 1 + rng.below(3);
        let features = random_superbag(&mut rng, n_s, dim);
        let relations =
            Matrix::from_rows(&(0..n_r).map(|_| random_vec(&mut rng, dim)).collect::<Vec<_>>()).unwrap();
        let k = rng.below(n_r);
        let i = rng.below(features.len());
        let j = rng.below(features[i].len());
        for scoring in [Scoring::Cosine, Scoring::Dot] {
            let trace = |f: &[Vec<Vector>]| superbag_feature(f, &relations, k, Mode::C2sa, scoring).unwrap();
            let base = trace(&features);
            let mut largest = 0.0f64;
            for c in [0.1, 10.0] {
                let mut one = features.clone();
                one[i][j].iter_mut().for_each(|v| *v *= c);
                let one = trace(&one);
                let mut bag = features.clone();
                bag[i].iter_mut().flatten().for_each(|v| *v *= c);
                let bag = trace(&bag);

                let sentence_change = max_abs_diff(&sentence_weights(&base), &sentence_weights(&one));
                let gamma_change = max_abs_diff(&base.gamma, &bag.gamma);
                let all_change = sentence_change
                    .max(max_abs_diff(&sentence_weights(&base), &sentence_weights(&bag)))
                    .max(gamma_change);
                match scoring {
                    Scoring::Cosine => {
                        cosine_drift = cosine_drift.max(all_change);
                        cosine_gamma_single = cosine_gamma_single.max(max_abs_diff(&base.gamma, &one.gamma));
                    }
                    Scoring::Dot => largest = largest.max(sentence_change).max(gamma_change),
                }
            }
            if scoring == Scoring::Dot {
                dot_min_change = dot_min_change.min(largest);
            }
        }
    }
    let pass = cosine_drift <= 1e-10 && dot_min_change > 1e-3;
    report(
        3,
        pass,
        &format!(
            "cosine: alpha/beta under sentence scaling and gamma under bag scaling drift {cosine_drift:.2e} \
             (tol 1e-10; gamma under single-sentence scaling moves up to {cosine_gamma_single:.3}); \
             dot: smallest per-instance max change {dot_min_change:.3} (> 1e-3)"
        ),
    );
    assert!(pass);
}

/// Prefix counts by repeatedly selecting the best remaining prediction.
fn brute_force_curve(preds: &[Prediction], gold: &GoldFacts) -> Vec<(f64, f64)> {
    let mut remaining: Vec<&Prediction> = preds.iter().collect();
    let mut out = Vec::new();
    let mut tp = 0usize;
    while !remaining.is_empty() {
        let mut best = 0;
        for (i, p) in remaining.iter().enumerate() {
            let b = remaining[best];
            let better =
                p.score > b.score || (p.score == b.score && (&p.pair, p.relation) < (&b.pair, b.relation));
            if better {
                best = i;
            }
        }
        let p = remaining.remove(best);
        if gold.contains(&(p.pair.clone(), p.relation)) {
            tp += 1;
        }
        let t = out.len() + 1;
        out.push((tp as f64 / t as f64, tp as f64 / gold.len() as f64));
    }
    out
}

#[test]
fn criterion_4_pr_curve_oracle() {
    let mut rng = SeededRng::new(404);
    let mut mismatches = 0;
    for _ in 0..100 {
        let pairs = 1 + rng.below(40);
        let relations = 2 + rng.below(5);
        let mut preds = Vec::new();
        let mut gold = GoldFacts::new();
        for p in 0..pairs {
            let pair = PairKey::new(format!("a{p}"), format!("b{p}"));
            for r in 1..relations {
                // Coarse scores so that ties occur.
                let score = rng.below(11) as f64 / 10.0;
                preds.push(Prediction {
                    pair: pair.clone(),
                    relation: r,
                    score,
                });
                if rng.bernoulli(0.3) {
                    gold.insert((pair.clone(), r));
                }
            }
        }
        if gold.is_empty() {
            gold.insert((PairKey::new("a0", "b0"), 1));
        }
        rng.shuffle(&mut preds);
        let curve = pr_curve(&preds, &gold).unwrap();
        let got: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.precision, p.recall)).collect();
        if got != brute_force_curve(&preds, &gold) || curve.positives != gold.len() {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(
        4,
        pass,
        &format!("{mismatches} of 100 instances differ from the prefix-counting oracle"),
    );
    assert!(pass);
}

struct BenchResult {
    f1: f64,
    auc: f64,
    /// (noisy bag had the minimum gamma, cases) for C2SA runs.
    localization: (usize, usize),
}

fn gamma_localization(config: &Config, run: &bagattn_core::pipeline::SyntheticRun) -> (usize, usize) {
    let bags = bags_for(config, run.corpus.train.clone());
    let mut rng = SeededRng::new(config.seed).fork(77);
    let superbags = assemble_superbags(&bags, 3, &mut rng).unwrap();
    let objective = Objective {
        mode: Mode::C2sa,
        scoring: config.scoring,
    };
    let (mut hits, mut cases) = (0, 0);
    for sb in superbags.iter().filter(|sb| sb.len() == 3) {
        let noisy: Vec<bool> = sb
            .bags
            .iter()
            .map(|b| run.corpus.noisy_pairs.contains(&b.pair))
            .collect();
        if noisy.iter().filter(|&&n| n).count() != 1 {
            continue;
        }
        let inspection = bagattn_core::eval::inspect_attention(sb, &run.params, objective).unwrap();
        cases += 1;
        if noisy[inspection.min_gamma_bag()] {
            hits += 1;
        }
    }
    (hits, cases)
}

fn run_bench(mode: Mode, seed: u64) -> BenchResult {
    let mut config = Config::from_json(BENCH_CONFIG).unwrap();
    config.mode = mode;
    config.seed = seed;
    let run = run_synthetic(&config).unwrap();
    let localization = if mode == Mode::C2sa {
        gamma_localization(&config, &run)
    } else {
        (0, 0)
    };
    BenchResult {
        f1: run.sentence.f1,
        auc: run.curve.auc(),
        localization,
    }
}

#[test]
fn criteria_5_and_6_synthetic_benchmark() {
    let start = Instant::now();
    let mut f1 = [0.0; 3];
    let mut auc = [0.0; 3];
    let (mut hits, mut cases) = (0, 0);
    for (m, mode) in Mode::ALL.into_iter().enumerate() {
        for seed in BENCH_SEEDS {
            let r = run_bench(mode, seed);
            println!("  {mode} seed {seed}: test F1 {:.4} AUC {:.4}", r.f1, r.auc);
            f1[m] += r.f1 / BENCH_SEEDS.len() as f64;
            auc[m] += r.auc / BENCH_SEEDS.len() as f64;
            hits += r.localization.0;
            cases += r.localization.1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let [att, crsa, c2sa] = f1;
    let pass5 = c2sa >= crsa && crsa >= att && c2sa - att >= 0.02 && secs <= 600.0;
    let ok5 = report(
        5,
        pass5,
        &format!(
            "mean test F1 ATT {att:.4} CRSA {crsa:.4} C2SA {c2sa:.4} (need C2SA >= CRSA >= ATT, C2SA-ATT >= 0.02); \
             mean AUC ATT {:.4} CRSA {:.4} C2SA {:.4}; {secs:.0}s",
            auc[0], auc[1], auc[2]
        ),
    );
    let rate = hits as f64 / cases.max(1) as f64;
    let ok6 = report(
        6,
        cases > 0 && rate >= 0.7,
        &format!("noisy bag has minimum gamma in {hits}/{cases} = {rate:.3} of superbags (need >= 0.70)"),
    );
    if strict() {
        assert!(ok5 && ok6);
    }
}

fn check_stats(id: &str, stats: &CorpusStats, expected: (usize, usize, usize)) -> bool {
    let got = (stats.sentences, stats.entity_pairs, stats.kb_facts);
    println!("  {id}: sentences/pairs/facts {got:?}, expected {expected:?}");
    got == expected
}

/// Expects `train.txt`, `test.txt`, `relations.txt`, `vectors.txt` (word2vec text)
/// and a sentence-annotated `sentence_test.txt` under `BAGATTN_NYT_DIR`.
#[test]
#[ignore = "needs the external corpus in BAGATTN_NYT_DIR; long-running"]
fn criterion_7_nyt_reproduction() {
    let Ok(dir) = std::env::var("BAGATTN_NYT_DIR") else {
        println!("criterion 7 SKIP BAGATTN_NYT_DIR is not set");
        return;
    };
    let dir = Path::new(&dir);
    let config = Config::default();
    let opts = ParseOptions {
        max_len: config.max_len,
        clip: config.clip,
    };
    let schema = RelationSchema::load(&dir.join("relations.txt")).unwrap();
    let mut rng = SeededRng::new(config.seed).fork(bagattn_core::training::streams::INIT);
    let (vocab, vectors) = load_word_vectors(&dir.join("vectors.txt"), config.word_dim, &mut rng).unwrap();
    let train = parse_corpus(&dir.join("train.txt"), &vocab, &schema, opts).unwrap();
    let test = parse_corpus(&dir.join("test.txt"), &vocab, &schema, opts).unwrap();
    let stats_ok = check_stats(
        "train",
        &CorpusStats::of(&train.sentences),
        (522611, 281270, 18252),
    ) & check_stats("test", &CorpusStats::of(&test.sentences), (172448, 96678, 1950));
    let sentence_test = parse_corpus(&dir.join("sentence_test.txt"), &vocab, &schema, opts).unwrap();

    let bags = bags_for(&config, train.sentences);
    let mut f1_ok = true;
    for (mode, scoring, target) in [
        (Mode::Att, Scoring::Cosine, 0.377),
        (Mode::Crsa, Scoring::Cosine, 0.411),
        (Mode::C2sa, Scoring::Cosine, 0.421),
        (Mode::C2sa, Scoring::Dot, 0.400),
    ] {
        let c = Config {
            mode,
            scoring,
            ..config.clone()
        };
        let out = fit(
            &c,
            &bags,
            vocab.len(),
            schema.len(),
            Some(vectors.clone()),
            |_, _| None,
        )
        .unwrap();
        let f1 = sentence_f1(&sentence_test.sentences, &out.params).unwrap().f1;
        println!("  {mode}/{scoring}: sentence F1 {f1:.4}, target {target} +/- 0.03");
        f1_ok &= (f1 - target).abs() <= 0.03;
    }
    let pass = report(
        7,
        stats_ok && f1_ok,
        &format!("statistics match: {stats_ok}, F1 within 0.03: {f1_ok}"),
    );
    assert!(pass);
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn train_to(config: &Config, dir: &Path) {
    let corpus = generate_synthetic(&config.synthetic_spec()).unwrap();
    let bags = bags_for(config, corpus.train.clone());
    let out = fit(
        config,
        &bags,
        corpus.vocab.len(),
        corpus.schema.len(),
        None,
        |_, p| sentence_f1(&corpus.test, p).ok().map(|s| s.f1),
    )
    .unwrap();
    let ck = Checkpoint::new(
        out.params,
        corpus.vocab,
        corpus.schema,
        config.max_len,
        config.mode,
        config.scoring,
        config.seed,
        config.epochs,
    )
    .unwrap();
    ck.save(&dir.join("checkpoint")).unwrap();
    write_metrics_csv(&dir.join("metrics.csv"), config, &out.metrics).unwrap();
}

#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let config = Config {
        filters: 16,
        epochs: 2,
        seed: 7,
        ..Config::default()
    };
    let mut identical = true;
    for mode in Mode::ALL {
        let config = Config {
            mode,
            ..config.clone()
        };
        let (a, b) = (
            tmp.path().join(format!("{mode}-a")),
            tmp.path().join(format!("{mode}-b")),
        );
        train_to(&config, &a);
        train_to(&config, &b);
        identical &= read_dir_bytes(&a.join("checkpoint")) == read_dir_bytes(&b.join("checkpoint"));
        identical &= fs::read(a.join("metrics.csv")).unwrap() == fs::read(b.join("metrics.csv")).unwrap();
    }
    // Worker count must not change the result either.
    let threaded = tmp.path().join("threads");
    train_to(
        &Config {
            threads: 3,
            ..config.clone()
        },
        &threaded,
    );
    let single = tmp.path().join("C2SA-a");
    let same_params =
        read_dir_bytes(&threaded.join("checkpoint")) == read_dir_bytes(&single.join("checkpoint"));
    let pass = identical && same_params;
    report(
        8,
        pass,
        &format!("repeat runs byte-identical: {identical}, 3 workers match 1 worker: {same_params}"),
    );
    assert!(pass);
}

#[test]
fn benchmark_noisy_pairs_are_recorded() {
    let config = Config::from_json(BENCH_CONFIG).unwrap();
    let corpus = generate_synthetic(&config.synthetic_spec()).unwrap();
    let pairs: BTreeSet<_> = corpus.train.iter().map(|s| s.pair.clone()).collect();
    assert_eq!(corpus.noisy_pairs.len(), config.synthetic_spec().noisy_bags());
    assert!(corpus.noisy_pairs.is_subset(&pairs));
}
