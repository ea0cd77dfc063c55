//! Synthetic bridge-token corpus generator.
//!
//! Each document contains one head entity and one tail entity. Positive
//! documents additionally contain exactly one *bridge* token drawn from a
//! vocabulary specific to the gold relation type; negative documents contain
//! no bridge token. The label is therefore decidable only by inspecting a
//! context token, which is exactly the structure second-order scoring is
//! built to capture: a first-order scorer over the entity tokens alone
//! carries no label information.
//!
//! Token vocabulary layout (all pools disjoint):
//!   * `ha{i}`: head-entity surface tokens (entity type `alpha`)
//!   * `tb{i}`: tail-entity surface tokens (entity type `beta`)
//!   * `rel{r}_b{i}`: bridge tokens of relation type `rel{r}`
//!   * `w{i}`: filler tokens

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::{Document, Mention, Relation};
use crate::error::{Error, Result};
use crate::util::RunRng;

pub const NEGATIVE_RELATION: &str = "none";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_docs: usize,
    /// Tokens per document.
    pub doc_len: usize,
    /// Total word types across the filler, entity and bridge pools.
    pub vocab_size: usize,
    /// Relation types including the negative type; must be at least 2.
    pub num_relation_types: usize,
    pub positive_fraction: f64,
    pub seed: u64,
    /// Head/tail entity pool sizes.
    pub head_entity_tokens: usize,
    pub tail_entity_tokens: usize,
    /// Bridge pool size per positive relation type.
    pub bridge_tokens_per_type: usize,
    /// Probability that an entity gets a second mention elsewhere in the
    /// document.
    pub second_mention_p: f64,
    /// Probability that a mention spans two tokens.
    pub two_token_mention_p: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 1000,
            doc_len: 24,
            vocab_size: 96,
            num_relation_types: 4,
            positive_fraction: 0.5,
            seed: 0,
            head_entity_tokens: 8,
            tail_entity_tokens: 8,
            bridge_tokens_per_type: 4,
            second_mention_p: 0.25,
            two_token_mention_p: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_relation_types < 2 {
            return Err(Error::config(
                "num_relation_types must be at least 2 (one positive + negative)",
            ));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::config("positive_fraction must be in [0, 1]"));
        }
        for (name, p) in [
            ("second_mention_p", self.second_mention_p),
            ("two_token_mention_p", self.two_token_mention_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0, 1]")));
            }
        }
        let positives = self.num_relation_types - 1;
        let reserved = self.head_entity_tokens
            + self.tail_entity_tokens
            + positives * self.bridge_tokens_per_type;
        if self.head_entity_tokens == 0
            || self.tail_entity_tokens == 0
            || self.bridge_tokens_per_type == 0
        {
            return Err(Error::config("entity and bridge pools must be non-empty"));
        }
        if self.vocab_size < reserved + 4 {
            return Err(Error::config(format!(
                "vocab_size {} too small: needs {} entity/bridge tokens plus at least 4 fillers",
                self.vocab_size,
                reserved
            )));
        }
        // Worst case per document: 2 two-token mentions per entity plus the
        // bridge token = 9 special positions.
        if self.doc_len < 12 {
            return Err(Error::config("doc_len must be at least 12"));
        }
        Ok(())
    }

    pub fn relation_names(&self) -> Vec<String> {
        let mut names = vec![NEGATIVE_RELATION.to_string()];
        for r in 1..self.num_relation_types {
            names.push(format!("rel{r}"));
        }
        names
    }

    fn filler_count(&self) -> usize {
        self.vocab_size
            - self.head_entity_tokens
            - self.tail_entity_tokens
            - (self.num_relation_types - 1) * self.bridge_tokens_per_type
    }

    fn bridge_token(&self, relation: usize, i: usize) -> String {
        format!("rel{relation}_b{i}")
    }

    /// All bridge tokens, used by tests to scan generated corpora.
    pub fn bridge_pool(&self) -> Vec<String> {
        let mut pool = Vec::new();
        for r in 1..self.num_relation_types {
            for i in 0..self.bridge_tokens_per_type {
                pool.push(self.bridge_token(r, i));
            }
        }
        pool
    }
}

/// Place a span of `len` tokens into `slots`, returning the start index.
/// Tries random starts first, then scans; `slots` is sized so a free run
/// always exists.
fn place_span(rng: &mut RunRng, slots: &mut [bool], len: usize) -> usize {
    let n = slots.len();
    let fits = |slots: &[bool], s: usize| (s..s + len).all(|i| !slots[i]);
    let mut start = None;
    for _ in 0..4 * n {
        let s = rng.gen_range(0..=n - len);
        if fits(slots, s) {
            start = Some(s);
            break;
        }
    }
    let s = start.unwrap_or_else(|| {
        (0..=n - len)
            .find(|&s| fits(slots, s))
            .expect("document too dense to place span")
    });
    slots[s..s + len].fill(true);
    s
}

/// Generate a corpus. Deterministic for a fixed config (the seed lives in
/// the config).
pub fn gen_synthetic(config: &SynthConfig) -> Result<Vec<Document>> {
    config.validate()?;
    let mut rng = RunRng::seed_from_u64(config.seed);
    let mut docs = Vec::with_capacity(config.num_docs);
    for d in 0..config.num_docs {
        docs.push(gen_document(config, &mut rng, d));
    }
    Ok(docs)
}

fn gen_document(config: &SynthConfig, rng: &mut RunRng, index: usize) -> Document {
    let positive = rng.gen::<f64>() < config.positive_fraction;
    let relation = if positive {
        Some(rng.gen_range(1..config.num_relation_types))
    } else {
        None
    };

    let mut slots = vec![false; config.doc_len];
    let mut tokens: Vec<Option<String>> = vec![None; config.doc_len];
    let mut mentions = Vec::new();
    let mut mention_seq = 0usize;

    // spans: (entity_id, entity_type, token_prefix, pool_size)
    for (entity_id, entity_type, prefix, pool) in [
        ("E0", "alpha", "ha", config.head_entity_tokens),
        ("E1", "beta", "tb", config.tail_entity_tokens),
    ] {
        let mention_count = if rng.gen::<f64>() < config.second_mention_p { 2 } else { 1 };
        for _ in 0..mention_count {
            let len = if rng.gen::<f64>() < config.two_token_mention_p { 2 } else { 1 };
            let start = place_span(rng, &mut slots, len);
            for tok in &mut tokens[start..start + len] {
                *tok = Some(format!("{prefix}{}", rng.gen_range(0..pool)));
            }
            mentions.push(Mention {
                mention_id: format!("m{mention_seq}"),
                entity_id: entity_id.to_string(),
                entity_type: entity_type.to_string(),
                start,
                end: start + len,
            });
            mention_seq += 1;
        }
    }

    if let Some(r) = relation {
        let pos = place_span(rng, &mut slots, 1);
        tokens[pos] = Some(config.bridge_token(r, rng.gen_range(0..config.bridge_tokens_per_type)));
    }

    let fillers = config.filler_count();
    for slot in tokens.iter_mut() {
        if slot.is_none() {
            *slot = Some(format!("w{}", rng.gen_range(0..fillers)));
        }
    }

    // Mentions sorted by start keeps the record readable; order carries no
    // meaning.
    mentions.sort_by_key(|m| m.start);
    let relations = match relation {
        Some(r) => vec![Relation {
            head_entity_id: "E0".to_string(),
            tail_entity_id: "E1".to_string(),
            relation_type: format!("rel{r}"),
        }],
        None => Vec::new(),
    };

    Document {
        doc_id: format!("synth-{index:05}"),
        tokens: tokens.into_iter().map(Option::unwrap).collect(),
        mentions,
        relations,
    }
}

/// Deterministic train/dev/test split by document order.
pub fn split_documents(
    docs: Vec<Document>,
    train_frac: f64,
    dev_frac: f64,
    test_frac: f64,
) -> Result<(Vec<Document>, Vec<Document>, Vec<Document>)> {
    let sum = train_frac + dev_frac + test_frac;
    if train_frac < 0.0 || dev_frac < 0.0 || test_frac < 0.0 || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions must be non-negative and sum to 1, got {train_frac}/{dev_frac}/{test_frac}"
        )));
    }
    let n = docs.len();
    let n_train = (n as f64 * train_frac).floor() as usize;
    let n_dev = (n as f64 * dev_frac).floor() as usize;
    let mut docs = docs;
    let test = docs.split_off((n_train + n_dev).min(n));
    let dev = docs.split_off(n_train.min(docs.len()));
    Ok((docs, dev, test))
}

/// Shuffle documents in place with the given seed (used before splitting so
/// splits are label-balanced).
pub fn shuffle_documents(docs: &mut [Document], seed: u64) {
    let mut rng = RunRng::seed_from_u64(seed);
    docs.shuffle(&mut rng);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            num_docs: 50,
            doc_len: 16,
            vocab_size: 64,
            num_relation_types: 3,
            positive_fraction: 0.5,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn fixed_seed_gives_identical_corpora() {
        let cfg = small_config();
        assert_eq!(gen_synthetic(&cfg).unwrap(), gen_synthetic(&cfg).unwrap());
    }

    #[test]
    fn zero_positive_fraction_yields_all_negative() {
        let cfg = SynthConfig { positive_fraction: 0.0, ..small_config() };
        let docs = gen_synthetic(&cfg).unwrap();
        assert!(docs.iter().all(|d| d.relations.is_empty()));
        let bridges = cfg.bridge_pool();
        for d in &docs {
            assert!(d.tokens.iter().all(|t| !bridges.contains(t)));
        }
    }

    #[test]
    fn all_positive_docs_contain_a_bridge_token() {
        let cfg = SynthConfig {
            num_docs: 100,
            positive_fraction: 1.0,
            ..small_config()
        };
        let docs = gen_synthetic(&cfg).unwrap();
        assert_eq!(docs.len(), 100);
        let bridges = cfg.bridge_pool();
        for d in &docs {
            assert_eq!(d.relations.len(), 1);
            let count = d.tokens.iter().filter(|t| bridges.contains(t)).count();
            assert!(count >= 1, "doc {} lacks a bridge token", d.doc_id);
        }
    }

    #[test]
    fn positive_count_is_near_half_at_fraction_half() {
        let cfg = SynthConfig { num_docs: 1000, ..small_config() };
        let docs = gen_synthetic(&cfg).unwrap();
        let positives = docs.iter().filter(|d| !d.relations.is_empty()).count();
        assert!((400..=600).contains(&positives), "positives = {positives}");
    }

    #[test]
    fn generated_docs_validate() {
        for doc in gen_synthetic(&small_config()).unwrap() {
            doc.validate().unwrap();
        }
    }

    #[test]
    fn insufficient_vocab_is_config_error() {
        let cfg = SynthConfig { vocab_size: 10, ..small_config() };
        assert!(gen_synthetic(&cfg).is_err());
    }

    #[test]
    fn split_80_10_10_on_100_docs() {
        let docs = gen_synthetic(&SynthConfig { num_docs: 100, ..small_config() }).unwrap();
        let (train, dev, test) = split_documents(docs, 0.8, 0.1, 0.1).unwrap();
        assert_eq!((train.len(), dev.len(), test.len()), (80, 10, 10));
    }

    #[test]
    fn bad_split_fractions_rejected() {
        let docs = gen_synthetic(&small_config()).unwrap();
        assert!(split_documents(docs, 0.8, 0.3, 0.1).is_err());
    }
}
