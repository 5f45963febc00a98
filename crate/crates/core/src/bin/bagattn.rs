use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use bagattn_core::attention::{Mode, Scoring};
use bagattn_core::checkpoint::Checkpoint;
use bagattn_core::config::Config;
use bagattn_core::corpus::{
    assemble_superbags, downsample_na, load_word_vectors, parse_corpus, write_corpus, CorpusStats,
    ParseOptions, ParsedCorpus, RelationSchema, Vocab,
};
use bagattn_core::eval::{
    exclude_pairs, gold_facts, inspect_attention, pr_curve, score_corpus, sentence_f1, P_AT,
};
use bagattn_core::numeric::SeededRng;
use bagattn_core::pipeline::{
    bags_for, check_full_loss, fit, write_metrics_csv, write_timing_csv, GradCheckInstance,
};
use bagattn_core::synthetic::generate_synthetic;
use bagattn_core::training::{streams, Objective};
use bagattn_core::Error;

#[derive(Parser)]
#[command(
    name = "bagattn",
    version,
    about = "Bag-level selective attention for distantly supervised relation extraction"
)]
struct Cli {
    /// JSON config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// ATT, CRSA or C2SA.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// cosine or dot.
    #[arg(long, global = true)]
    scoring: Option<Scoring>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a corpus and report bag and superbag statistics.
    Ingest {
        corpus: PathBuf,
        #[command(flatten)]
        lexicon: Lexicon,
    },
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        lexicon: Lexicon,
        /// Corpus scored for sentence-level F1 after every epoch.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Output directory: `checkpoint/`, `metrics.csv`, `timing.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Held-out corpus-level evaluation: PR curve and P@N CSVs.
    EvalCorpus {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Training corpus, needed when `exclude_train_pairs` is set.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sentence-level precision, recall and F1.
    EvalSentence {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Generate the synthetic noisy-label benchmark.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print attention weights for superbags of a corpus.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Only superbags of this relation.
        #[arg(long)]
        relation: Option<String>,
        #[arg(long, default_value_t = 5)]
        limit: usize,
    },
    /// Finite-difference check of the full training loss on a small random instance.
    Gradcheck {
        /// Number of seeds, starting at the configured seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

/// Vocabulary source for commands that read raw corpora.
#[derive(Args)]
struct Lexicon {
    #[arg(long)]
    relations: PathBuf,
    /// One token per line.
    #[arg(
        long,
        conflicts_with = "word_vectors",
        required_unless_present = "word_vectors"
    )]
    vocab: Option<PathBuf>,
    /// word2vec text file; defines the vocabulary and initial word embeddings.
    #[arg(long)]
    word_vectors: Option<PathBuf>,
}

/// Errors that map to exit status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let usage = e.is::<UsageError>() || matches!(e.downcast_ref::<Error>(), Some(Error::Config(_)));
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("bagattn: {}", chain.join(": "));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| with_path(e, path))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(mode) = cli.mode {
        config.mode = mode;
    }
    if let Some(scoring) = cli.scoring {
        config.scoring = scoring;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Ingest { corpus, lexicon } => ingest(&config, &corpus, &lexicon),
        Command::Train {
            train,
            lexicon,
            dev,
            out,
        } => train_cmd(&config, &train, &lexicon, dev.as_deref(), &out),
        Command::EvalCorpus {
            checkpoint,
            test,
            train,
            out,
        } => eval_corpus(&config, &checkpoint, &test, train.as_deref(), &out),
        Command::EvalSentence { checkpoint, test } => {
            let ck = load_checkpoint(&checkpoint)?;
            let parsed = parse_with(&ck, &test)?;
            let scores = in_pool(&config, || sentence_f1(&parsed.sentences, &ck.params))?;
            println!("{scores}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { out } => synth(&config, &out),
        Command::Inspect {
            checkpoint,
            corpus,
            relation,
            limit,
        } => inspect(&config, &checkpoint, &corpus, relation.as_deref(), limit),
        Command::Gradcheck { seeds } => gradcheck(&config, seeds),
    }
}

fn in_pool<T: Send>(
    config: &Config,
    f: impl FnOnce() -> bagattn_core::Result<T> + Send,
) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()?;
    Ok(pool.install(f)?)
}

fn parse_options(config: &Config) -> ParseOptions {
    ParseOptions {
        max_len: config.max_len,
        clip: config.clip,
    }
}

/// Reads the schema and vocabulary, plus word vectors when given.
fn read_lexicon(
    config: &Config,
    lexicon: &Lexicon,
) -> anyhow::Result<(RelationSchema, Vocab, Option<bagattn_core::numeric::Matrix>)> {
    let schema = RelationSchema::load(&lexicon.relations).map_err(|e| with_path(e, &lexicon.relations))?;
    match (&lexicon.vocab, &lexicon.word_vectors) {
        (Some(path), _) => Ok((schema, Vocab::read(path).map_err(|e| with_path(e, path))?, None)),
        (None, Some(path)) => {
            let mut rng = SeededRng::new(config.seed).fork(streams::INIT);
            let (vocab, table) =
                load_word_vectors(path, config.word_dim, &mut rng).map_err(|e| with_path(e, path))?;
            Ok((schema, vocab, Some(table)))
        }
        (None, None) => Err(UsageError("one of --vocab or --word-vectors is required".into()).into()),
    }
}

fn parse_with(ck: &Checkpoint, path: &Path) -> anyhow::Result<ParsedCorpus> {
    let opts = ParseOptions {
        max_len: ck.manifest.max_len,
        clip: ck.manifest.clip,
    };
    read_corpus(path, &ck.vocab, &ck.schema, opts)
}

/// Names the file in bare I/O errors; other errors already carry their location.
fn with_path(e: Error, path: &Path) -> anyhow::Error {
    match e {
        Error::Io(io) => anyhow::Error::new(io).context(path.display().to_string()),
        e => e.into(),
    }
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(dir).map_err(|e| with_path(e, dir))
}

fn read_corpus(
    path: &Path,
    vocab: &Vocab,
    schema: &RelationSchema,
    opts: ParseOptions,
) -> anyhow::Result<ParsedCorpus> {
    parse_corpus(path, vocab, schema, opts).map_err(|e| with_path(e, path))
}

/// Writes to stdout; returns false once the reader has gone away.
fn emit(text: &str) -> anyhow::Result<bool> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(false),
        Err(e) => Err(e.into()),
    }
}

fn ingest(config: &Config, corpus: &Path, lexicon: &Lexicon) -> anyhow::Result<ExitCode> {
    let (schema, vocab, _) = read_lexicon(config, lexicon)?;
    let parsed = read_corpus(corpus, &vocab, &schema, parse_options(config))?;
    print!("{}", parsed.drops);
    print!("{}", CorpusStats::of(&parsed.sentences));
    let bags = bags_for(config, parsed.sentences);
    let sizes: Vec<usize> = bags.iter().map(|b| b.len()).collect();
    let singletons = sizes.iter().filter(|&&n| n == 1).count();
    let mean = sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64;
    println!("bags:         {}", bags.len());
    println!("  singleton:  {singletons}");
    println!("  mean size:  {mean:.3}");
    println!("  max size:   {}", sizes.iter().max().copied().unwrap_or(0));
    let train = config.train_config();
    let mut rng = SeededRng::new(config.seed).fork(streams::SUPERBAGS);
    let superbags = assemble_superbags(&bags, train.effective_superbag_size(), &mut rng)?;
    let total = superbags.len();
    let kept = downsample_na(superbags, config.na_ratio, &mut rng);
    println!("superbags:    {total} (n_s={})", train.effective_superbag_size());
    println!("  per epoch:  {} after NA downsampling", kept.len());
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(
    config: &Config,
    train_path: &Path,
    lexicon: &Lexicon,
    dev: Option<&Path>,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let (schema, vocab, word_vectors) = read_lexicon(config, lexicon)?;
    let parsed = read_corpus(train_path, &vocab, &schema, parse_options(config))?;
    let dev = dev
        .map(|p| read_corpus(p, &vocab, &schema, parse_options(config)))
        .transpose()?;
    let bags = bags_for(config, parsed.sentences);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()?;
    let outcome = fit(
        config,
        &bags,
        vocab.len(),
        schema.len(),
        word_vectors,
        |epoch, params| {
            let f1 = dev
                .as_ref()
                .map(|d| pool.install(|| sentence_f1(&d.sentences, params)).map(|s| s.f1));
            match &f1 {
                Some(Ok(v)) => eprintln!("epoch {epoch}: dev F1 {v:.4}"),
                Some(Err(e)) => eprintln!("epoch {epoch}: dev evaluation failed: {e}"),
                None => eprintln!("epoch {epoch} done"),
            }
            f1.and_then(Result::ok)
        },
    )?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ck = Checkpoint::new(
        outcome.params,
        vocab,
        schema,
        config.max_len,
        config.mode,
        config.scoring,
        config.seed,
        config.epochs,
    )?;
    ck.save(&out.join("checkpoint"))?;
    write_metrics_csv(&out.join("metrics.csv"), config, &outcome.metrics)?;
    write_timing_csv(&out.join("timing.csv"), &outcome.metrics)?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "final mean loss {:.6} after {} epochs",
            last.mean_loss, last.epoch
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn eval_corpus(
    config: &Config,
    checkpoint: &Path,
    test: &Path,
    train: Option<&Path>,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let ck = load_checkpoint(checkpoint)?;
    let parsed = parse_with(&ck, test)?;
    let mut predictions = in_pool(config, || score_corpus(&parsed.sentences, &ck.params))?;
    let mut gold = gold_facts(&parsed.sentences);
    if config.exclude_train_pairs {
        let Some(train) = train else {
            bail!(UsageError("exclude_train_pairs needs --train".into()));
        };
        let train = parse_with(&ck, train)?;
        (predictions, gold) = exclude_pairs(predictions, gold, &train.sentences);
    }
    let curve = pr_curve(&predictions, &gold)?;
    fs::create_dir_all(out)?;
    curve.write_csv(&out.join("pr_curve.csv"))?;
    curve.write_p_at_n_csv(&out.join("p_at_n.csv"))?;
    println!(
        "predictions {} gold facts {}",
        curve.points.len(),
        curve.positives
    );
    println!("AUC {:.4} max F1 {:.4}", curve.auc(), curve.max_f1());
    for n in P_AT {
        match curve.precision_at(n) {
            Some(p) => println!("P@{n} {p:.4}"),
            None => println!("P@{n} n/a"),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(config: &Config, out: &Path) -> anyhow::Result<ExitCode> {
    let corpus = generate_synthetic(&config.synthetic_spec())?;
    fs::create_dir_all(out)?;
    write_corpus(
        &out.join("train.txt"),
        &corpus.train,
        &corpus.vocab,
        &corpus.schema,
    )?;
    write_corpus(&out.join("test.txt"), &corpus.test, &corpus.vocab, &corpus.schema)?;
    corpus.schema.write(&out.join("relations.txt"))?;
    corpus.vocab.write(&out.join("vocab.txt"))?;
    let noisy: String = corpus
        .noisy_pairs
        .iter()
        .map(|p| format!("{}\t{}\n", p.e1, p.e2))
        .collect();
    fs::write(out.join("noisy_pairs.txt"), noisy)?;
    println!(
        "train sentences {} test sentences {} fully-noisy bags {}",
        corpus.train.len(),
        corpus.test.len(),
        corpus.noisy_pairs.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn inspect(
    config: &Config,
    checkpoint: &Path,
    corpus: &Path,
    relation: Option<&str>,
    limit: usize,
) -> anyhow::Result<ExitCode> {
    let ck = load_checkpoint(checkpoint)?;
    let wanted = relation
        .map(|name| {
            ck.schema
                .id(name)
                .ok_or_else(|| UsageError(format!("unknown relation {name:?}")))
        })
        .transpose()?;
    let parsed = parse_with(&ck, corpus)?;
    let bags = bags_for(config, parsed.sentences);
    let objective = Objective {
        mode: ck.manifest.mode,
        scoring: ck.manifest.scoring,
    };
    let n_s = if objective.mode.uses_superbags() {
        config.superbag_size
    } else {
        1
    };
    let mut rng = SeededRng::new(config.seed).fork(streams::SUPERBAGS);
    let superbags = assemble_superbags(&bags, n_s, &mut rng)?;
    for sb in superbags
        .iter()
        .filter(|sb| wanted.is_none_or(|k| sb.relation == k))
        .take(limit)
    {
        let report = inspect_attention(sb, &ck.params, objective)?;
        if !emit(&format!("{}\n", report.render(Some(&ck.vocab), Some(&ck.schema))))? {
            break;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(config: &Config, seeds: u64) -> anyhow::Result<ExitCode> {
    let instance = GradCheckInstance::default();
    let mut failed = false;
    let mut worst = 0.0f64;
    let mut tol = 0.0;
    for seed in config.seed..config.seed + seeds.max(1) {
        let report = check_full_loss(instance, config.mode, config.scoring, seed)?;
        tol = report.tol;
        worst = worst.max(report.max_rel_error());
        if !report.passed() {
            failed = true;
            eprintln!("{}/{} seed {seed}:\n{report}", config.mode, config.scoring);
        }
    }
    if failed {
        println!("FAIL tol={tol:e} max_rel_err={worst:.3e}");
        Ok(ExitCode::FAILURE)
    } else {
        println!("PASS tol={tol:e} max_rel_err={worst:.3e}");
        Ok(ExitCode::SUCCESS)
    }
}
