//! Parallel corpora: synthetic cipher tasks, plain-text ingestion,
//! vocabularies and the supervised / bandit / dev / test split.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::SeededRng;
use crate::error::{ensure, Error, Result};
use crate::seq2seq::{BOS, EOS, MAX_SOURCE_LEN, UNK};

pub const MAX_SENTENCE_LEN: usize = MAX_SOURCE_LEN;
pub const RESERVED_TOKENS: [&str; 3] = ["<eos>", "<bos>", "<unk>"];
pub const DEFAULT_FRACTIONS: [f64; 4] = [0.6, 0.25, 0.075, 0.075];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Supervised,
    Bandit,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Supervised, Split::Bandit, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Supervised => "supervised",
            Split::Bandit => "bandit",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub src: Vec<u32>,
    /// Target ids, always terminated by EOS.
    pub tgt: Vec<u32>,
    pub split: Split,
}

impl SentencePair {
    /// Target without its EOS terminator.
    pub fn reference(&self) -> &[u32] {
        &self.tgt[..self.tgt.len() - 1]
    }
}

/// Token string to id bijection with ids 0, 1, 2 reserved for EOS, BOS, UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens<I, S>(content: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(content.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::contract(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(RESERVED_TOKENS[UNK as usize], String::as_str)
    }

    pub fn encode<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Vec<u32> {
        words.into_iter().map(|w| self.id(w)).collect()
    }

    /// Space-joined tokens; EOS and BOS are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i != EOS && i != BOS)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, line number = id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        ensure!(
            lines.len() >= 3 && lines[..3] == RESERVED_TOKENS,
            "vocabulary file must start with the reserved tokens {RESERVED_TOKENS:?}"
        );
        Vocab::from_tokens(lines[3..].iter().map(|s| s.to_string()))
    }
}

/// Frequency-ranked vocabulary of at most `cap` content tokens; ties go to
/// the lexicographically smaller token.
pub fn build_vocab<S: AsRef<str>>(sentences: &[Vec<S>], cap: usize) -> Vocab {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for t in s {
            let t = t.as_ref();
            if !RESERVED_TOKENS.contains(&t) {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
        .expect("frequency table keys are unique")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub pairs: Vec<SentencePair>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&SentencePair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    pub fn split_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for p in &self.pairs {
            c[p.split as usize] += 1;
        }
        c
    }

    /// Writes `<split>.src` / `<split>.tgt` text files plus both vocabularies.
    pub fn save_text(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for split in Split::ALL {
            let pairs = self.split(split);
            let src: String = pairs.iter().map(|p| self.src_vocab.decode(&p.src) + "\n").collect();
            let tgt: String = pairs.iter().map(|p| self.tgt_vocab.decode(&p.tgt) + "\n").collect();
            fs::write(dir.join(format!("{}.src", split.name())), src)?;
            fs::write(dir.join(format!("{}.tgt", split.name())), tgt)?;
        }
        self.src_vocab.save(dir.join("vocab.src"))?;
        self.tgt_vocab.save(dir.join("vocab.tgt"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CipherSpec {
    /// Number of content symbols on each side (reserved ids excluded).
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub pairs: usize,
    pub reorder_window: usize,
    pub seed: u64,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 4],
}

fn default_fractions() -> [f64; 4] {
    DEFAULT_FRACTIONS
}

impl CipherSpec {
    pub fn desk(pairs: usize, seed: u64) -> Self {
        CipherSpec {
            vocab_size: 20,
            min_len: 3,
            max_len: 8,
            pairs,
            reorder_window: 2,
            seed,
            fractions: DEFAULT_FRACTIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.vocab_size >= 4, "cipher vocab_size must be >= 4, got {}", self.vocab_size);
        ensure!(
            1 <= self.min_len && self.min_len <= self.max_len && self.max_len <= MAX_SENTENCE_LEN,
            "cipher lengths must satisfy 1 <= min_len <= max_len <= {MAX_SENTENCE_LEN}"
        );
        ensure!(self.pairs >= 1, "cipher corpus needs at least one pair");
        ensure!(self.reorder_window >= 1, "reorder_window must be >= 1");
        check_fractions(&self.fractions)
    }
}

/// Everything needed to reproduce a generated corpus exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherMeta {
    pub spec: CipherSpec,
    /// `cipher_map[k]` is the target symbol for source symbol `k`.
    pub cipher_map: Vec<usize>,
    pub splits: Vec<Split>,
}

/// Reverses every consecutive chunk of `window` tokens; with `window = 2`
/// this swaps adjacent pairs. Self-inverse.
pub fn reorder(tokens: &[u32], window: usize) -> Vec<u32> {
    tokens
        .chunks(window)
        .flat_map(|c| c.iter().rev().copied())
        .collect()
}

pub fn cipher_vocabs(vocab_size: usize) -> (Vocab, Vocab) {
    let src = Vocab::from_tokens((0..vocab_size).map(|k| format!("s{k}"))).expect("unique");
    let tgt = Vocab::from_tokens((0..vocab_size).map(|k| format!("t{k}"))).expect("unique");
    (src, tgt)
}

const CONTENT_OFFSET: u32 = RESERVED_TOKENS.len() as u32;

pub fn gen_cipher_corpus(spec: &CipherSpec) -> Result<(Corpus, CipherMeta)> {
    spec.validate()?;
    let root = SeededRng::new(spec.seed);
    let mut map_rng = root.fork("cipher-map");
    let mut cipher_map: Vec<usize> = (0..spec.vocab_size).collect();
    map_rng.shuffle(&mut cipher_map);

    let mut sent_rng = root.fork("sentences");
    let mut pairs = Vec::with_capacity(spec.pairs);
    for _ in 0..spec.pairs {
        let len = spec.min_len + sent_rng.below(spec.max_len - spec.min_len + 1);
        let src_sym: Vec<usize> = (0..len).map(|_| sent_rng.below(spec.vocab_size)).collect();
        let src: Vec<u32> = src_sym.iter().map(|&k| k as u32 + CONTENT_OFFSET).collect();
        let substituted: Vec<u32> = src_sym
            .iter()
            .map(|&k| cipher_map[k] as u32 + CONTENT_OFFSET)
            .collect();
        let mut tgt = reorder(&substituted, spec.reorder_window);
        tgt.push(EOS);
        pairs.push(SentencePair {
            src,
            tgt,
            split: Split::Supervised,
        });
    }
    let (src_vocab, tgt_vocab) = cipher_vocabs(spec.vocab_size);
    let corpus = Corpus {
        src_vocab,
        tgt_vocab,
        pairs,
    };
    let corpus = split_corpus(corpus, spec.fractions, root.fork("split").seed())?;
    let splits = corpus.pairs.iter().map(|p| p.split).collect();
    Ok((
        corpus,
        CipherMeta {
            spec: spec.clone(),
            cipher_map,
            splits,
        },
    ))
}

fn check_fractions(f: &[f64; 4]) -> Result<()> {
    ensure!(f.iter().all(|&x| x >= 0.0), "split fractions must be non-negative: {f:?}");
    let total: f64 = f.iter().sum();
    ensure!((total - 1.0).abs() <= 1e-9, "split fractions must sum to 1, got {total}");
    Ok(())
}

/// Split sizes by largest remainder; each is within one of `fraction · n`.
pub fn split_sizes(n: usize, fractions: &[f64; 4]) -> [usize; 4] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 4];
    for i in 0..4 {
        sizes[i] = exact[i].floor() as usize;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Relabels pairs by a seeded shuffle so split sizes follow `fractions`.
pub fn split_corpus(mut corpus: Corpus, fractions: [f64; 4], seed: u64) -> Result<Corpus> {
    check_fractions(&fractions)?;
    let n = corpus.pairs.len();
    let sizes = split_sizes(n, &fractions);
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let mut pos = 0;
    for (split, &size) in Split::ALL.iter().zip(&sizes) {
        for &i in &order[pos..pos + size] {
            corpus.pairs[i].split = *split;
        }
        pos += size;
    }
    Ok(corpus)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub lines: usize,
    pub kept: usize,
    pub dropped_too_long: usize,
    pub dropped_empty: usize,
}

/// Reads line-aligned, whitespace-tokenized files. Every kept pair is
/// labelled `Supervised`; use [`split_corpus`] to assign splits.
pub fn load_parallel_text(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    vocab_cap: usize,
) -> Result<(Corpus, IngestReport)> {
    let src_text = fs::read_to_string(src_path)?;
    let tgt_text = fs::read_to_string(tgt_path)?;
    let src_lines: Vec<&str> = src_text.lines().collect();
    let tgt_lines: Vec<&str> = tgt_text.lines().collect();
    ensure!(
        src_lines.len() == tgt_lines.len(),
        "line count mismatch: source has {} lines, target has {}",
        src_lines.len(),
        tgt_lines.len()
    );

    let mut report = IngestReport {
        lines: src_lines.len(),
        ..Default::default()
    };
    let mut kept: Vec<(Vec<&str>, Vec<&str>)> = Vec::new();
    for (s, t) in src_lines.iter().zip(&tgt_lines) {
        let s: Vec<&str> = s.split_whitespace().collect();
        let t: Vec<&str> = t.split_whitespace().collect();
        if s.is_empty() || t.is_empty() {
            report.dropped_empty += 1;
        } else if s.len() > MAX_SENTENCE_LEN || t.len() > MAX_SENTENCE_LEN {
            report.dropped_too_long += 1;
        } else {
            kept.push((s, t));
        }
    }
    report.kept = kept.len();

    let srcs: Vec<Vec<&str>> = kept.iter().map(|(s, _)| s.clone()).collect();
    let tgts: Vec<Vec<&str>> = kept.iter().map(|(_, t)| t.clone()).collect();
    let src_vocab = build_vocab(&srcs, vocab_cap);
    let tgt_vocab = build_vocab(&tgts, vocab_cap);
    let pairs = kept
        .iter()
        .map(|(s, t)| {
            let mut tgt = tgt_vocab.encode(t.iter().copied());
            tgt.push(EOS);
            SentencePair {
                src: src_vocab.encode(s.iter().copied()),
                tgt,
                split: Split::Supervised,
            }
        })
        .collect();
    Ok((
        Corpus {
            src_vocab,
            tgt_vocab,
            pairs,
        },
        report,
    ))
}
