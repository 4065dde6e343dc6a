//! Dataset loading, vocabularies, and padded batches.
//!
//! The on-disk format is the plain-text block format used by the public
//! multi-intent SLU releases: each utterance is a block of
//! `token<SPACE>slot` lines followed by a single line with the intent
//! labels joined by `#`; blocks are separated by one blank line and the
//! final block may omit the trailing blank line.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Errors produced while reading or batching a dataset.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("empty dataset: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One utterance with gold BIO slots and a gold intent set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    pub intents: BTreeSet<String>,
}

impl LabeledExample {
    /// Validates the structural invariants: equal token/slot counts, at
    /// least one token, at least one intent, BIO-shaped slot tags.
    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.is_empty() {
            return Err("no tokens".into());
        }
        if self.tokens.len() != self.slots.len() {
            return Err(format!(
                "{} tokens but {} slots",
                self.tokens.len(),
                self.slots.len()
            ));
        }
        if self.intents.is_empty() {
            return Err("no intents".into());
        }
        for s in &self.slots {
            let ok = s == "O" || s.starts_with("B-") || s.starts_with("I-");
            if !ok {
                return Err(format!("slot tag `{s}` is not O/B-*/I-*"));
            }
        }
        Ok(())
    }
}

/// Options controlling dataset loading.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Lowercase tokens at load time (slot and intent labels untouched).
    pub lowercase: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { lowercase: true }
    }
}

/// Load a dataset file with default options (tokens lowercased).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>, CorpusError> {
    load_dataset_with(path, &LoadOptions::default())
}

pub fn load_dataset_with(
    path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<Vec<LabeledExample>, CorpusError> {
    let p = path.as_ref();
    let text = std::fs::read_to_string(p).map_err(|source| CorpusError::Io {
        path: p.display().to_string(),
        source,
    })?;
    parse_dataset(&text, &p.display().to_string(), opts)
}

/// Parse dataset text. `path` is used only in error messages.
pub fn parse_dataset(
    text: &str,
    path: &str,
    opts: &LoadOptions,
) -> Result<Vec<LabeledExample>, CorpusError> {
    let err = |line: usize, msg: String| CorpusError::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut examples = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut slots: Vec<String> = Vec::new();
    let mut block_start = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            if !tokens.is_empty() {
                return Err(err(
                    lineno,
                    "block ended without an intent line".to_string(),
                ));
            }
            continue;
        }
        if tokens.is_empty() {
            block_start = lineno;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        match fields.len() {
            2 => {
                if fields[0].is_empty() || fields[1].is_empty() {
                    return Err(err(lineno, format!("malformed token/slot line `{line}`")));
                }
                let tok = if opts.lowercase {
                    fields[0].to_lowercase()
                } else {
                    fields[0].to_string()
                };
                tokens.push(tok);
                slots.push(fields[1].to_string());
            }
            1 => {
                // intent line terminates the block
                if tokens.is_empty() {
                    return Err(err(
                        lineno,
                        "intent line with no preceding token/slot lines".to_string(),
                    ));
                }
                let intents: BTreeSet<String> = line
                    .split('#')
                    .map(|s| s.to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if intents.is_empty() {
                    return Err(err(lineno, "empty intent line".to_string()));
                }
                let ex = LabeledExample {
                    tokens: std::mem::take(&mut tokens),
                    slots: std::mem::take(&mut slots),
                    intents,
                };
                ex.validate()
                    .map_err(|m| err(block_start, format!("invalid block: {m}")))?;
                examples.push(ex);
            }
            _ => {
                return Err(err(
                    lineno,
                    format!("expected `token slot` or an intent line, got `{line}`"),
                ));
            }
        }
    }
    if !tokens.is_empty() {
        return Err(err(
            text.lines().count(),
            "file ended mid-block without an intent line".to_string(),
        ));
    }
    if examples.is_empty() {
        return Err(CorpusError::Empty(path.to_string()));
    }
    Ok(examples)
}

/// Serialize examples back to the block format. Output is normalized:
/// single-space separators, one blank line between blocks, trailing
/// newline after the last intent line.
pub fn write_dataset(examples: &[LabeledExample]) -> String {
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (t, s) in ex.tokens.iter().zip(&ex.slots) {
            let _ = writeln!(out, "{t} {s}");
        }
        let intents: Vec<&str> = ex.intents.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(out, "{}", intents.join("#"));
    }
    out
}

/// Reserved token/slot id for padding.
pub const PAD_ID: usize = 0;
/// Reserved token id for out-of-vocabulary tokens.
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";

/// A bijection between label strings and contiguous ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelMap {
    fn new(labels: Vec<String>) -> Self {
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        LabelMap { labels, index }
    }

    /// Rebuild the string→id index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Token, slot, and intent maps built from the training split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub tokens: LabelMap,
    pub slots: LabelMap,
    pub intents: LabelMap,
}

impl Vocabularies {
    /// Number of intent labels (`N_I`).
    pub fn n_intents(&self) -> usize {
        self.intents.len()
    }

    /// Number of slot labels excluding padding (`N_S` counts real tags);
    /// the classifier still scores the PAD row so widths use
    /// [`Vocabularies::slot_rows`].
    pub fn n_slot_labels(&self) -> usize {
        self.slots.len() - 1
    }

    /// Width of the slot classifier output (includes the PAD row at id 0).
    pub fn slot_rows(&self) -> usize {
        self.slots.len()
    }

    pub fn token_id(&self, tok: &str) -> usize {
        self.tokens.id(tok).unwrap_or(UNK_ID)
    }

    pub fn rebuild_indices(&mut self) {
        self.tokens.rebuild_index();
        self.slots.rebuild_index();
        self.intents.rebuild_index();
    }
}

/// Build vocabularies from the training split. Ids follow first-occurrence
/// order with PAD (and UNK for tokens) reserved up front; the intent map
/// has no reserved ids.
pub fn build_vocabularies(train: &[LabeledExample]) -> Result<Vocabularies, CorpusError> {
    if train.is_empty() {
        return Err(CorpusError::Empty("training set".into()));
    }
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    let mut slots = vec![PAD_TOKEN.to_string()];
    let mut intents: Vec<String> = Vec::new();
    let mut seen_tok: HashMap<&str, ()> = HashMap::new();
    let mut seen_slot: HashMap<&str, ()> = HashMap::new();
    let mut seen_int: HashMap<&str, ()> = HashMap::new();
    for ex in train {
        for t in &ex.tokens {
            if seen_tok.insert(t, ()).is_none() {
                tokens.push(t.clone());
            }
        }
        for s in &ex.slots {
            if seen_slot.insert(s, ()).is_none() {
                slots.push(s.clone());
            }
        }
        for i in &ex.intents {
            if seen_int.insert(i, ()).is_none() {
                intents.push(i.clone());
            }
        }
    }
    Ok(Vocabularies {
        tokens: LabelMap::new(tokens),
        slots: LabelMap::new(slots),
        intents: LabelMap::new(intents),
    })
}

/// Padded id matrices for a batch of examples.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B × n_max]`, PAD-filled past each true length.
    pub token_ids: Array2<usize>,
    /// True token counts per example.
    pub lengths: Vec<usize>,
    /// `[B × n_max]`; `mask[b][i]` iff `i < lengths[b]`.
    pub token_mask: Array2<bool>,
    /// `[B × n_max]` gold slot ids, PAD past length.
    pub slot_ids: Array2<usize>,
    /// `[B × N_I]` multi-hot gold intent targets.
    pub intent_targets: Array2<f64>,
    /// Gold intent id sets (set semantics of `intent_targets`).
    pub gold_intents: Vec<BTreeSet<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.token_ids.shape()[1]
    }
}

/// Encode one example set into padded batches. Shuffling is reproducible
/// under `seed` and applies once to the whole epoch's order.
pub fn make_batches(
    data: &[LabeledExample],
    vocab: &Vocabularies,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<Vec<Batch>, CorpusError> {
    if data.is_empty() {
        return Err(CorpusError::Empty("batch input".into()));
    }
    if batch_size < 1 {
        return Err(CorpusError::InvalidArgument(
            "batch_size must be >= 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    let mut batches = Vec::with_capacity(data.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let exs: Vec<&LabeledExample> = chunk.iter().map(|&i| &data[i]).collect();
        batches.push(encode_batch(&exs, vocab)?);
    }
    Ok(batches)
}

/// Encode a slice of examples into one padded batch.
pub fn encode_batch(
    examples: &[&LabeledExample],
    vocab: &Vocabularies,
) -> Result<Batch, CorpusError> {
    if examples.is_empty() {
        return Err(CorpusError::Empty("batch".into()));
    }
    let bsz = examples.len();
    let n_max = examples.iter().map(|e| e.tokens.len()).max().unwrap();
    let mut token_ids = Array2::from_elem((bsz, n_max), PAD_ID);
    let mut slot_ids = Array2::from_elem((bsz, n_max), PAD_ID);
    let mut token_mask = Array2::from_elem((bsz, n_max), false);
    let mut intent_targets = Array2::zeros((bsz, vocab.n_intents()));
    let mut lengths = Vec::with_capacity(bsz);
    let mut gold_intents = Vec::with_capacity(bsz);
    for (b, ex) in examples.iter().enumerate() {
        lengths.push(ex.tokens.len());
        for (i, tok) in ex.tokens.iter().enumerate() {
            token_ids[(b, i)] = vocab.token_id(tok);
            token_mask[(b, i)] = true;
        }
        for (i, slot) in ex.slots.iter().enumerate() {
            slot_ids[(b, i)] = vocab.slots.id(slot).unwrap_or(PAD_ID);
        }
        let mut gold = BTreeSet::new();
        for intent in &ex.intents {
            if let Some(id) = vocab.intents.id(intent) {
                intent_targets[(b, id)] = 1.0;
                gold.insert(id);
            }
        }
        gold_intents.push(gold);
    }
    Ok(Batch {
        token_ids,
        lengths,
        token_mask,
        slot_ids,
        intent_targets,
        gold_intents,
    })
}
