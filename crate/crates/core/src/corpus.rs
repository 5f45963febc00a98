//! Word vectors, relation schemas, the TSV corpus format, and the MIL grouping
//! structures (sentence bags and superbags).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, SeededRng};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const NA: usize = 0;
pub const NA_NAME: &str = "NA";

/// Standard deviation of the random UNK embedding row.
pub const UNK_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// Vocabulary holding only PAD and UNK.
    pub fn new() -> Self {
        let mut v = Vocab {
            ids: HashMap::new(),
            tokens: Vec::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    /// Returns the id of `token`, adding it if new.
    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.ids.insert(token.to_owned(), id);
        self.tokens.push(token.to_owned());
        id
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// One token per line, in id order.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(File::create(path)?);
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut tokens = Vec::new();
        for line in reader.lines() {
            tokens.push(line?);
        }
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Checkpoint(format!(
                "{}: vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}",
                path.display()
            )));
        }
        let mut v = Vocab::new();
        for t in &tokens[2..] {
            v.insert(t);
        }
        if v.len() != tokens.len() {
            return Err(Error::Checkpoint(format!(
                "{}: duplicate tokens in vocabulary",
                path.display()
            )));
        }
        Ok(v)
    }
}

/// Loads a word2vec text file (`count dim` header, then `token v1 .. v_dim`).
///
/// The returned table has PAD (all zero) and UNK (random) rows prepended. Tokens
/// repeated in the file keep their first vector.
pub fn load_word_vectors(path: &Path, expected_dim: usize, rng: &mut SeededRng) -> Result<(Vocab, Matrix)> {
    let reader = BufReader::new(File::open(path)?);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };

    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => return Err(parse_err(1, "empty word-vector file".into())),
    };
    let mut parts = header.split_whitespace();
    let (count, dim) = match (parts.next(), parts.next(), parts.next()) {
        (Some(c), Some(d), None) => {
            let c: usize = c
                .parse()
                .map_err(|_| parse_err(1, format!("bad vector count {c:?}")))?;
            let d: usize = d
                .parse()
                .map_err(|_| parse_err(1, format!("bad dimension {d:?}")))?;
            (c, d)
        }
        _ => return Err(parse_err(1, "header must be \"count dim\"".into())),
    };
    if dim != expected_dim {
        return Err(Error::Config(format!(
            "word vectors in {} have dimension {dim}, configured word_dim is {expected_dim}",
            path.display()
        )));
    }

    let mut vocab = Vocab::new();
    let mut data = vec![0.0; 2 * dim];
    for x in &mut data[dim..] {
        *x = rng.normal() * UNK_INIT_STD;
    }

    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("nonempty line has a field");
        let mut values = Vec::with_capacity(dim);
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad float {f:?} for token {token:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value for token {token:?}")));
            }
            values.push(v);
        }
        if values.len() != dim {
            return Err(parse_err(
                lineno,
                format!("token {token:?} has {} values, expected {dim}", values.len()),
            ));
        }
        if token == PAD_TOKEN || token == UNK_TOKEN || vocab.get(token).is_some() {
            continue;
        }
        vocab.insert(token);
        data.extend_from_slice(&values);
    }
    if seen != count {
        return Err(parse_err(
            seen + 1,
            format!("header announces {count} vectors, file holds {seen}"),
        ));
    }
    let rows = vocab.len();
    Ok((vocab, Matrix::from_vec(rows, dim, data)?))
}

/// Writes a table in word2vec text format, skipping the PAD and UNK rows.
pub fn write_word_vectors(path: &Path, vocab: &Vocab, table: &Matrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    writeln!(f, "{} {}", vocab.len() - 2, table.cols())?;
    for (id, tok) in vocab.tokens().iter().enumerate().skip(2) {
        write!(f, "{tok}")?;
        for v in table.row(id) {
            write!(f, " {v}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationSchema {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl RelationSchema {
    /// `names[0]` must be `NA`.
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.first().map(String::as_str) != Some(NA_NAME) {
            return Err(Error::Schema(format!("relation 0 must be {NA_NAME}")));
        }
        let mut ids = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if ids.insert(n.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate relation {n:?}")));
            }
        }
        Ok(RelationSchema { names, ids })
    }

    /// Reads either one name per line (id = line order) or `name id` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut by_id: BTreeMap<usize, String> = BTreeMap::new();
        let mut next = 0usize;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let (name, id) = match fields.as_slice() {
                [] => continue,
                [name] => (*name, next),
                [name, id] => {
                    let id = id.parse().map_err(|_| Error::Parse {
                        path: path.to_owned(),
                        line: i + 1,
                        message: format!("bad relation id {id:?}"),
                    })?;
                    (*name, id)
                }
                _ => {
                    return Err(Error::Parse {
                        path: path.to_owned(),
                        line: i + 1,
                        message: "expected `name` or `name id`".into(),
                    })
                }
            };
            if by_id.insert(id, name.to_owned()).is_some() {
                return Err(Error::Schema(format!("relation id {id} assigned twice")));
            }
            next = id + 1;
        }
        if by_id.keys().enumerate().any(|(i, &id)| i != id) {
            return Err(Error::Schema("relation ids must be dense from 0".into()));
        }
        RelationSchema::new(by_id.into_values())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(File::create(path)?);
        for (i, n) in self.names.iter().enumerate() {
            writeln!(f, "{n} {i}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey {
    pub e1: String,
    pub e2: String,
}

impl PairKey {
    pub fn new(e1: impl Into<String>, e2: impl Into<String>) -> Self {
        PairKey {
            e1: e1.into(),
            e2: e2.into(),
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.e1, self.e2)
    }
}

/// Clamped signed distances `i - e_pos` for the first `len` tokens.
pub fn relative_distances(len: usize, e_pos: usize, clip: usize) -> Vec<i64> {
    let clip = clip as i64;
    (0..len)
        .map(|i| (i as i64 - e_pos as i64).clamp(-clip, clip))
        .collect()
}

/// Table row for a clamped distance: `d + clip`, in [0, 2·clip].
pub fn distance_bucket(distance: i64, clip: usize) -> usize {
    (distance.clamp(-(clip as i64), clip as i64) + clip as i64) as usize
}

/// Bucket reserved for padding positions.
pub fn pad_bucket(clip: usize) -> usize {
    2 * clip + 1
}

/// Number of rows in a position-embedding table.
pub fn position_table_size(clip: usize) -> usize {
    2 * clip + 2
}

/// Position bucket ids over `max_len` slots: real tokens get their shifted
/// clamped distance, slots at or beyond `len` get the pad bucket.
pub fn relative_positions(len: usize, e_pos: usize, clip: usize, max_len: usize) -> Vec<u16> {
    let mut out: Vec<u16> = relative_distances(len.min(max_len), e_pos, clip)
        .into_iter()
        .map(|d| distance_bucket(d, clip) as u16)
        .collect();
    out.resize(max_len.max(out.len()), pad_bucket(clip) as u16);
    out
}

/// The original corpus fields, kept so a parsed line can be written back unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceLine {
    pub e1_surface: String,
    pub e2_surface: String,
    pub relation_name: String,
    pub text: String,
    pub offsets: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSentence {
    pub pair: PairKey,
    pub relation: usize,
    /// Token ids of the real (possibly truncated) tokens; positions from `len()` up to
    /// `max_len` are implicitly PAD.
    pub tokens: Vec<u32>,
    pub e1_pos: usize,
    pub e2_pos: usize,
    /// Position buckets relative to e1 / e2, one per real token.
    pub pos1: Vec<u16>,
    pub pos2: Vec<u16>,
    pub max_len: usize,
    pub clip: usize,
    pub source: Option<SourceLine>,
}

impl LabeledSentence {
    /// Builds a sentence from token ids and entity positions.
    pub fn new(
        pair: PairKey,
        relation: usize,
        mut tokens: Vec<u32>,
        e1_pos: usize,
        e2_pos: usize,
        max_len: usize,
        clip: usize,
    ) -> Result<Self> {
        tokens.truncate(max_len);
        let len = tokens.len();
        if e1_pos == e2_pos || e1_pos >= len || e2_pos >= len {
            return Err(Error::invalid(format!(
                "entity positions ({e1_pos}, {e2_pos}) invalid for sentence of length {len}"
            )));
        }
        let pos1 = relative_positions(len, e1_pos, clip, len);
        let pos2 = relative_positions(len, e2_pos, clip, len);
        Ok(LabeledSentence {
            pair,
            relation,
            tokens,
            e1_pos,
            e2_pos,
            pos1,
            pos2,
            max_len,
            clip,
            source: None,
        })
    }

    /// Number of real tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn padded_tokens(&self) -> Vec<u32> {
        let mut t = self.tokens.clone();
        t.resize(self.max_len, PAD);
        t
    }

    pub fn padded_pos1(&self) -> Vec<u16> {
        relative_positions(self.len(), self.e1_pos, self.clip, self.max_len)
    }

    pub fn padded_pos2(&self) -> Vec<u16> {
        relative_positions(self.len(), self.e2_pos, self.clip, self.max_len)
    }

    /// Serializes back to a corpus line. Requires the sentence to have been parsed.
    pub fn to_tsv_line(&self) -> Option<String> {
        let s = self.source.as_ref()?;
        let mut line = format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.pair.e1, self.pair.e2, s.e1_surface, s.e2_surface, s.relation_name, s.text
        );
        if let Some((a, b)) = s.offsets {
            line.push_str(&format!("\t{a}\t{b}"));
        }
        Some(line)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DropStats {
    pub lines: usize,
    pub kept: usize,
    pub empty: usize,
    /// An entity surface form does not occur in the sentence at all.
    pub entity_missing: usize,
    /// An entity occurs only beyond `max_len`.
    pub entity_truncated: usize,
    pub bad_offsets: usize,
}

impl DropStats {
    pub fn dropped(&self) -> usize {
        self.lines - self.kept
    }
}

impl fmt::Display for DropStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lines read:            {}", self.lines)?;
        writeln!(f, "sentences kept:        {}", self.kept)?;
        writeln!(f, "sentences dropped:     {}", self.dropped())?;
        writeln!(f, "  empty sentence:      {}", self.empty)?;
        writeln!(f, "  entity not found:    {}", self.entity_missing)?;
        writeln!(f, "  entity truncated:    {}", self.entity_truncated)?;
        writeln!(f, "  bad explicit offset: {}", self.bad_offsets)
    }
}

#[derive(Debug, Clone)]
pub struct ParsedCorpus {
    pub sentences: Vec<LabeledSentence>,
    pub drops: DropStats,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub max_len: usize,
    pub clip: usize,
}

pub fn parse_corpus(
    path: &Path,
    vocab: &Vocab,
    schema: &RelationSchema,
    opts: ParseOptions,
) -> Result<ParsedCorpus> {
    let reader = BufReader::new(File::open(path)?);
    let mut sentences = Vec::new();
    let mut drops = DropStats::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        drops.lines += 1;
        match parse_line(&line, vocab, schema, opts).map_err(|e| match e {
            LineError::Parse(message) => Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message,
            },
            LineError::Schema(message) => Error::Schema(format!("{}:{}: {message}", path.display(), i + 1)),
        })? {
            Ok(s) => {
                drops.kept += 1;
                sentences.push(s);
            }
            Err(reason) => match reason {
                Drop::Empty => drops.empty += 1,
                Drop::Missing => drops.entity_missing += 1,
                Drop::Truncated => drops.entity_truncated += 1,
                Drop::BadOffsets => drops.bad_offsets += 1,
            },
        }
    }
    Ok(ParsedCorpus { sentences, drops })
}

enum LineError {
    Parse(String),
    Schema(String),
}

enum Drop {
    Empty,
    Missing,
    Truncated,
    BadOffsets,
}

fn parse_line(
    line: &str,
    vocab: &Vocab,
    schema: &RelationSchema,
    opts: ParseOptions,
) -> std::result::Result<std::result::Result<LabeledSentence, Drop>, LineError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 6 {
        return Err(LineError::Parse(format!(
            "expected at least 6 tab-separated fields, found {}",
            fields.len()
        )));
    }
    if fields.len() != 6 && fields.len() != 8 {
        return Err(LineError::Parse(format!(
            "expected 6 or 8 fields, found {}",
            fields.len()
        )));
    }
    let relation = schema
        .id(fields[4])
        .ok_or_else(|| LineError::Schema(format!("unknown relation {:?}", fields[4])))?;
    let offsets = if fields.len() == 8 {
        let a = fields[6]
            .trim()
            .parse::<usize>()
            .map_err(|_| LineError::Parse(format!("bad e1 offset {:?}", fields[6])))?;
        let b = fields[7]
            .trim()
            .parse::<usize>()
            .map_err(|_| LineError::Parse(format!("bad e2 offset {:?}", fields[7])))?;
        Some((a, b))
    } else {
        None
    };

    let words: Vec<&str> = fields[5].split_whitespace().collect();
    if words.is_empty() {
        return Ok(Err(Drop::Empty));
    }
    let (e1_surface, e2_surface) = (fields[2], fields[3]);

    let (e1_pos, e2_pos) = match offsets {
        Some((a, b)) => {
            if a == b || a >= words.len() || b >= words.len() {
                return Ok(Err(Drop::BadOffsets));
            }
            if a >= opts.max_len || b >= opts.max_len {
                return Ok(Err(Drop::Truncated));
            }
            (a, b)
        }
        None => {
            let Some(a) = words.iter().position(|w| *w == e1_surface) else {
                return Ok(Err(Drop::Missing));
            };
            let Some(b) = words
                .iter()
                .enumerate()
                .position(|(i, w)| i != a && *w == e2_surface)
            else {
                return Ok(Err(Drop::Missing));
            };
            if a >= opts.max_len || b >= opts.max_len {
                return Ok(Err(Drop::Truncated));
            }
            (a, b)
        }
    };

    let tokens: Vec<u32> = words.iter().map(|w| vocab.id(w)).collect();
    let mut sentence = LabeledSentence::new(
        PairKey::new(fields[0], fields[1]),
        relation,
        tokens,
        e1_pos,
        e2_pos,
        opts.max_len,
        opts.clip,
    )
    .expect("positions validated above");
    sentence.source = Some(SourceLine {
        e1_surface: e1_surface.to_owned(),
        e2_surface: e2_surface.to_owned(),
        relation_name: fields[4].to_owned(),
        text: fields[5].to_owned(),
        offsets,
    });
    Ok(Ok(sentence))
}

/// Writes sentences back in the corpus format. Sentences without source fields are
/// rendered from the vocabulary.
pub fn write_corpus(
    path: &Path,
    sentences: &[LabeledSentence],
    vocab: &Vocab,
    schema: &RelationSchema,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for s in sentences {
        let line = match s.to_tsv_line() {
            Some(l) => l,
            None => {
                let words: Vec<&str> = s
                    .tokens
                    .iter()
                    .map(|&t| vocab.token(t).unwrap_or(UNK_TOKEN))
                    .collect();
                format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    s.pair.e1,
                    s.pair.e2,
                    words[s.e1_pos],
                    words[s.e2_pos],
                    schema.name(s.relation),
                    words.join(" "),
                    s.e1_pos,
                    s.e2_pos
                )
            }
        };
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceBag {
    pub pair: PairKey,
    pub relation: usize,
    pub sentences: Vec<LabeledSentence>,
}

impl SentenceBag {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Groups sentences into one bag per (pair, relation), in order of first appearance.
/// Bags larger than `max_bag_size` keep a uniformly sampled subset (input order kept).
pub fn build_bags(
    sentences: Vec<LabeledSentence>,
    max_bag_size: usize,
    rng: &mut SeededRng,
) -> Vec<SentenceBag> {
    let mut index: HashMap<(PairKey, usize), usize> = HashMap::new();
    let mut bags: Vec<SentenceBag> = Vec::new();
    for s in sentences {
        let key = (s.pair.clone(), s.relation);
        let i = *index.entry(key).or_insert_with(|| {
            bags.push(SentenceBag {
                pair: s.pair.clone(),
                relation: s.relation,
                sentences: Vec::new(),
            });
            bags.len() - 1
        });
        bags[i].sentences.push(s);
    }
    if max_bag_size > 0 {
        for bag in &mut bags {
            if bag.sentences.len() > max_bag_size {
                let keep = rng.sample_indices(bag.sentences.len(), max_bag_size);
                let mut all = std::mem::take(&mut bag.sentences)
                    .into_iter()
                    .map(Some)
                    .collect::<Vec<_>>();
                bag.sentences = keep.into_iter().map(|i| all[i].take().unwrap()).collect();
            }
        }
    }
    bags
}

#[derive(Debug, Clone)]
pub struct SuperBag<'a> {
    pub relation: usize,
    pub bags: Vec<&'a SentenceBag>,
}

impl SuperBag<'_> {
    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn sentence_count(&self) -> usize {
        self.bags.iter().map(|b| b.len()).sum()
    }
}

/// Per relation (ascending id), shuffles that relation's bags and chunks them into
/// groups of `n_s`; a trailing short group is kept.
pub fn assemble_superbags<'a>(
    bags: &'a [SentenceBag],
    n_s: usize,
    rng: &mut SeededRng,
) -> Result<Vec<SuperBag<'a>>> {
    if n_s == 0 {
        return Err(Error::invalid("superbag size must be at least 1"));
    }
    let mut by_relation: BTreeMap<usize, Vec<&'a SentenceBag>> = BTreeMap::new();
    for b in bags {
        by_relation.entry(b.relation).or_default().push(b);
    }
    let mut out = Vec::new();
    for (relation, mut group) in by_relation {
        rng.shuffle(&mut group);
        for chunk in group.chunks(n_s) {
            out.push(SuperBag {
                relation,
                bags: chunk.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Keeps at most `ratio × (#non-NA superbags)` NA superbags, chosen at random.
/// A negative ratio disables downsampling.
pub fn downsample_na<'a>(superbags: Vec<SuperBag<'a>>, ratio: f64, rng: &mut SeededRng) -> Vec<SuperBag<'a>> {
    if ratio < 0.0 {
        return superbags;
    }
    let (na, mut rest): (Vec<_>, Vec<_>) = superbags.into_iter().partition(|s| s.relation == NA);
    let keep = ((rest.len() as f64) * ratio).round() as usize;
    if na.len() <= keep {
        rest.extend(na);
        return rest;
    }
    let picks = rng.sample_indices(na.len(), keep);
    let mut na: Vec<Option<SuperBag<'a>>> = na.into_iter().map(Some).collect();
    rest.extend(picks.into_iter().map(|i| na[i].take().unwrap()));
    rest
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub entity_pairs: usize,
    /// Distinct (pair, relation) facts with a non-NA relation.
    pub kb_facts: usize,
}

impl CorpusStats {
    pub fn of(sentences: &[LabeledSentence]) -> Self {
        let mut pairs = HashSet::new();
        let mut facts = HashSet::new();
        for s in sentences {
            pairs.insert(&s.pair);
            if s.relation != NA {
                facts.insert((&s.pair, s.relation));
            }
        }
        CorpusStats {
            sentences: sentences.len(),
            entity_pairs: pairs.len(),
            kb_facts: facts.len(),
        }
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sentences:    {}", self.sentences)?;
        writeln!(f, "entity pairs: {}", self.entity_pairs)?;
        writeln!(f, "KB facts:     {}", self.kb_facts)
    }
}
