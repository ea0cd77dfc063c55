//! Document data model, line-delimited on-disk format, vocabularies,
//! candidate-pair generation and batching.
//!
//! On disk a corpus is one JSON document per line with exactly these fields:
//!
//! ```json
//! {"doc_id": "d0",
//!  "tokens": ["aspirin", "improves", "headache"],
//!  "mentions": [{"mention_id": "m0", "entity_id": "E0", "entity_type": "drug",
//!                "start": 0, "end": 1}],
//!  "relations": [{"head_entity_id": "E0", "tail_entity_id": "E1",
//!                 "relation_type": "improves"}]}
//! ```
//!
//! Mention spans are token-index ranges (`start` inclusive, `end` exclusive).

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved token id for padding.
pub const PAD_ID: usize = 0;
/// Reserved token id for unknown / word-dropped tokens.
pub const UNK_ID: usize = 1;
/// Reserved names for the two special token ids.
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub mention_id: String,
    pub entity_id: String,
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub head_entity_id: String,
    pub tail_entity_id: String,
    pub relation_type: String,
}

/// One annotated document: the unit of training and scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
    pub relations: Vec<Relation>,
}

impl Document {
    /// Structural invariants: spans in range, relation endpoints mentioned.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for m in &self.mentions {
            if m.start >= m.end || m.end > n {
                return Err(Error::validation(format!(
                    "doc {}: mention {} has span [{}, {}) outside tokens of length {}",
                    self.doc_id, m.mention_id, m.start, m.end, n
                )));
            }
        }
        let ids: BTreeSet<&str> = self.mentions.iter().map(|m| m.entity_id.as_str()).collect();
        for r in &self.relations {
            for id in [&r.head_entity_id, &r.tail_entity_id] {
                if !ids.contains(id.as_str()) {
                    return Err(Error::validation(format!(
                        "doc {}: relation references entity {id} with no mention",
                        self.doc_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Load a line-delimited corpus, validating every record. Failures name the
/// offending line.
pub fn load_documents(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        doc.validate().map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Write a corpus in the line-delimited format read by [`load_documents`].
pub fn save_documents(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        serde_json::to_writer(&mut w, doc)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Ordered relation-type names with a designated negative ("no relation")
/// type that is scored like any other class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationVocab {
    names: Vec<String>,
    negative: usize,
}

impl RelationVocab {
    pub fn new(names: Vec<String>, negative_name: &str) -> Result<Self> {
        let hits: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.as_str() == negative_name)
            .map(|(i, _)| i)
            .collect();
        if hits.len() != 1 {
            return Err(Error::config(format!(
                "negative relation type {negative_name:?} must appear exactly once, found {}",
                hits.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::config(format!("duplicate relation type {n:?}")));
            }
        }
        Ok(RelationVocab { names, negative: hits[0] })
    }

    /// Build from a corpus: the negative type first, then gold types in
    /// first-seen order.
    pub fn from_documents(docs: &[Document], negative_name: &str) -> Result<Self> {
        let mut names = vec![negative_name.to_string()];
        for doc in docs {
            for r in &doc.relations {
                if !names.contains(&r.relation_type) {
                    names.push(r.relation_type.clone());
                }
            }
        }
        RelationVocab::new(names, negative_name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn negative_index(&self) -> usize {
        self.negative
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Token-string vocabulary with reserved PAD and UNK entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocab {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TokenVocab {
    pub fn from_documents(docs: &[Document]) -> Self {
        let mut vocab = TokenVocab {
            names: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for doc in docs {
            for tok in &doc.tokens {
                if !vocab.index.contains_key(tok) && tok != PAD_TOKEN && tok != UNK_TOKEN {
                    vocab.index.insert(tok.clone(), vocab.names.len());
                    vocab.names.push(tok.clone());
                }
            }
        }
        vocab.rebuild_index();
        vocab
    }

    /// Restore the lookup map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK_ID)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// BIO tag vocabulary over entity types; tag 0 is the outside tag `O`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagVocab {
    names: Vec<String>,
}

pub const OUTSIDE_TAG: usize = 0;

impl TagVocab {
    pub fn from_documents(docs: &[Document]) -> Self {
        let mut types: Vec<String> = Vec::new();
        for doc in docs {
            for m in &doc.mentions {
                if !types.contains(&m.entity_type) {
                    types.push(m.entity_type.clone());
                }
            }
        }
        let mut names = vec!["O".to_string()];
        for t in &types {
            names.push(format!("B-{t}"));
            names.push(format!("I-{t}"));
        }
        TagVocab { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn begin_inside(&self, entity_type: &str) -> Option<(usize, usize)> {
        let b = self.names.iter().position(|n| n == &format!("B-{entity_type}"))?;
        Some((b, b + 1))
    }

    /// Gold BIO tags per token; mentions are applied in listed order, later
    /// mentions overwrite earlier ones on overlap.
    pub fn bio_tags(&self, doc: &Document) -> Vec<usize> {
        let mut tags = vec![OUTSIDE_TAG; doc.tokens.len()];
        for m in &doc.mentions {
            if let Some((b, i)) = self.begin_inside(&m.entity_type) {
                for (k, t) in (m.start..m.end.min(doc.tokens.len())).enumerate() {
                    tags[t] = if k == 0 { b } else { i };
                }
            }
        }
        tags
    }
}

/// The three vocabularies a trained model depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabs {
    pub tokens: TokenVocab,
    pub relations: RelationVocab,
    pub tags: TagVocab,
}

impl Vocabs {
    pub fn from_documents(docs: &[Document], negative_name: &str) -> Result<Self> {
        Ok(Vocabs {
            tokens: TokenVocab::from_documents(docs),
            relations: RelationVocab::from_documents(docs, negative_name)?,
            tags: TagVocab::from_documents(docs),
        })
    }
}

/// Head/tail mention index sets and the derived context set for one ordered
/// entity pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePair {
    pub head_entity_id: String,
    pub tail_entity_id: String,
    /// Token indices of every mention of the head entity (sorted, deduped).
    pub head: Vec<usize>,
    pub tail: Vec<usize>,
    /// Real-token indices outside both mention sets; may be empty.
    pub context: Vec<usize>,
    /// Gold relation id in the [`RelationVocab`].
    pub gold: usize,
}

/// Enumerate all ordered entity pairs of a document. Pairs absent from the
/// gold relations get the negative label. Documents longer than `max_len`
/// are truncated (with a warning); mentions falling entirely beyond the cut
/// are dropped and pairs losing all mentions are skipped.
pub fn make_candidates(
    doc: &Document,
    vocab: &RelationVocab,
    max_len: usize,
) -> Result<Vec<CandidatePair>> {
    doc.validate()?;
    let effective_len = doc.tokens.len().min(max_len);
    if effective_len < doc.tokens.len() {
        log::warn!(
            "doc {}: truncating {} tokens to max_len {}",
            doc.doc_id,
            doc.tokens.len(),
            max_len
        );
    }

    // Entity order: first appearance in the mention list.
    let mut entity_order: Vec<&str> = Vec::new();
    let mut entity_tokens: HashMap<&str, BTreeSet<usize>> = HashMap::new();
    for m in &doc.mentions {
        if !entity_order.contains(&m.entity_id.as_str()) {
            entity_order.push(&m.entity_id);
        }
        let set = entity_tokens.entry(&m.entity_id).or_default();
        for t in m.start..m.end.min(effective_len) {
            set.insert(t);
        }
    }

    let mut gold: HashMap<(&str, &str), usize> = HashMap::new();
    for r in &doc.relations {
        let rid = vocab.index_of(&r.relation_type).ok_or_else(|| {
            Error::validation(format!(
                "doc {}: relation type {:?} not in vocabulary",
                doc.doc_id, r.relation_type
            ))
        })?;
        let key = (r.head_entity_id.as_str(), r.tail_entity_id.as_str());
        if let Some(prev) = gold.insert(key, rid) {
            if prev != rid {
                log::warn!(
                    "doc {}: conflicting gold relations for ({}, {}); keeping the last",
                    doc.doc_id,
                    key.0,
                    key.1
                );
            }
        }
    }

    let mut pairs = Vec::new();
    for &head_id in &entity_order {
        for &tail_id in &entity_order {
            if head_id == tail_id {
                continue;
            }
            let head: Vec<usize> = entity_tokens[head_id].iter().copied().collect();
            let tail: Vec<usize> = entity_tokens[tail_id].iter().copied().collect();
            if head.is_empty() || tail.is_empty() {
                continue;
            }
            let mention_union: BTreeSet<usize> =
                head.iter().chain(tail.iter()).copied().collect();
            let context: Vec<usize> =
                (0..effective_len).filter(|t| !mention_union.contains(t)).collect();
            debug_assert!(context.iter().all(|t| !mention_union.contains(t)));
            let label = gold
                .get(&(head_id, tail_id))
                .copied()
                .unwrap_or_else(|| vocab.negative_index());
            pairs.push(CandidatePair {
                head_entity_id: head_id.to_string(),
                tail_entity_id: tail_id.to_string(),
                head,
                tail,
                context,
                gold: label,
            });
        }
    }
    Ok(pairs)
}

/// Token ids and padding mask for a batch of documents.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    /// `[batch × N]`, padded with [`PAD_ID`].
    pub ids: Array2<usize>,
    /// `[batch × N]`, `true` at real tokens.
    pub mask: Array2<bool>,
}

impl TokenBatch {
    pub fn batch_size(&self) -> usize {
        self.ids.nrows()
    }

    pub fn seq_len(&self) -> usize {
        self.ids.ncols()
    }

    /// Number of real tokens in row `b`.
    pub fn len_of(&self, b: usize) -> usize {
        self.mask.row(b).iter().filter(|&&m| m).count()
    }
}

/// A candidate pair bound to its row in a [`TokenBatch`].
#[derive(Debug, Clone)]
pub struct BatchPair {
    pub doc_index: usize,
    pub pair: CandidatePair,
}

/// A fully indexed minibatch: token ids, per-pair index structures, and gold
/// BIO tags.
#[derive(Debug, Clone)]
pub struct Batch {
    pub tokens: TokenBatch,
    pub pairs: Vec<BatchPair>,
    /// `[batch × N]` gold tag ids, `O` at padding.
    pub tags: Array2<usize>,
    pub doc_ids: Vec<String>,
}

/// Assemble a batch from documents. Documents are padded to the longest
/// (truncated) document in the batch; since padding is appended, mention and
/// context indices from [`make_candidates`] remain valid unchanged.
pub fn make_batch(
    docs: &[&Document],
    token_vocab: &TokenVocab,
    relation_vocab: &RelationVocab,
    tag_vocab: &TagVocab,
    max_len: usize,
) -> Result<Batch> {
    if docs.is_empty() {
        return Err(Error::input("cannot batch zero documents"));
    }
    let n = docs
        .iter()
        .map(|d| d.tokens.len().min(max_len))
        .max()
        .unwrap();
    let b = docs.len();
    let mut ids = Array2::from_elem((b, n), PAD_ID);
    let mut mask = Array2::from_elem((b, n), false);
    let mut tags = Array2::from_elem((b, n), OUTSIDE_TAG);
    let mut pairs = Vec::new();
    let mut doc_ids = Vec::with_capacity(b);
    for (row, doc) in docs.iter().enumerate() {
        let len = doc.tokens.len().min(max_len);
        for t in 0..len {
            ids[[row, t]] = token_vocab.id_or_unk(&doc.tokens[t]);
            mask[[row, t]] = true;
        }
        let gold_tags = tag_vocab.bio_tags(doc);
        for t in 0..len {
            tags[[row, t]] = gold_tags[t];
        }
        for pair in make_candidates(doc, relation_vocab, max_len)? {
            debug_assert!(pair.context.iter().all(|&t| t < len));
            pairs.push(BatchPair { doc_index: row, pair });
        }
        doc_ids.push(doc.doc_id.clone());
    }
    Ok(Batch {
        tokens: TokenBatch { ids, mask },
        pairs,
        tags,
        doc_ids,
    })
}
