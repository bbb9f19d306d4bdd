//! Corpus loading, vocabulary, tokenized sentences, and padded batches.
//!
//! Input corpora are plain text, one pre-tokenized sentence per line, with
//! whitespace token boundaries. The vocabulary reserves four ids: PAD=0,
//! BOS=1, EOS=2, UNK=3; everything else is assigned by descending frequency
//! with ties broken by first occurrence, so construction is deterministic.

use crate::{Error, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Surface forms of the reserved ids, in id order.
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Which of the two corpora a sentence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn opposite(self) -> DomainTag {
        match self {
            DomainTag::Source => DomainTag::Target,
            DomainTag::Target => DomainTag::Source,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Source => "src",
            DomainTag::Target => "tgt",
        }
    }
}

/// Token/id mapping with the four reserved ids fixed at 0..4.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Build from in-memory lines; `max_vocab` caps the total size including
    /// the four reserved ids.
    pub fn from_lines<'a, I>(lines: I, max_vocab: usize) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_vocab < 4 {
            return Err(Error::Corpus(format!(
                "max_vocab must be at least 4 (got {max_vocab})"
            )));
        }
        // (count, first-occurrence rank) per surface token.
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        let mut any_token = false;
        for line in lines {
            for tok in line.split_whitespace() {
                any_token = true;
                if RESERVED_TOKENS.contains(&tok) {
                    continue;
                }
                let entry = counts.entry(tok).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        if !any_token {
            return Err(Error::Corpus("empty corpus: no tokens found".into()));
        }
        let mut ranked: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        ranked.truncate(max_vocab - 4);

        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.iter().map(|(tok, _)| tok.to_string()));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary { token_to_id, id_to_token })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id of a surface token; unknown tokens map to [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Render ids back to surface text (used after decoding).
    pub fn decode_ids(&self, ids: &[usize]) -> String {
        let toks: Vec<&str> = ids.iter().map(|&i| self.token(i)).collect();
        toks.join(" ")
    }

    /// One non-reserved token per line, line number = id - 4.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        for tok in &self.id_to_token[4..] {
            writeln!(out, "{tok}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let file = fs::File::open(path)
            .map_err(|e| Error::Corpus(format!("cannot open vocabulary {}: {e}", path.display())))?;
        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        for line in BufReader::new(file).lines() {
            let tok = line?;
            if tok.is_empty() {
                continue;
            }
            id_to_token.push(tok);
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary { token_to_id, id_to_token })
    }
}

/// Count token frequencies over corpus files and build the vocabulary.
pub fn build_vocabulary(corpus_files: &[&Path], max_vocab: usize) -> Result<Vocabulary> {
    let mut all = String::new();
    for path in corpus_files {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Corpus(format!("cannot read corpus {}: {e}", path.display())))?;
        all.push_str(&text);
        all.push('\n');
    }
    Vocabulary::from_lines(all.lines(), max_vocab)
}

/// One tokenized sentence; no padding inside.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub domain_tag: DomainTag,
    pub raw_text: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Surface words of the (possibly truncated) token span.
    pub fn words(&self) -> Vec<&str> {
        self.raw_text.split_whitespace().take(self.tokens.len()).collect()
    }
}

/// Tokenize one raw line. Empty lines are rejected; callers doing bulk loads
/// skip them with a warning.
pub fn encode_sentence(
    raw: &str,
    vocab: &Vocabulary,
    max_len: usize,
    tag: DomainTag,
) -> Result<TokenSequence> {
    let tokens: Vec<usize> = raw
        .split_whitespace()
        .take(max_len)
        .map(|t| vocab.id(t))
        .collect();
    if tokens.is_empty() {
        return Err(Error::Corpus("empty sentence".into()));
    }
    Ok(TokenSequence {
        tokens,
        domain_tag: tag,
        raw_text: raw.to_string(),
    })
}

/// Load a one-sentence-per-line corpus file; empty lines are skipped with a
/// warning on stderr.
pub fn load_corpus(
    path: &Path,
    vocab: &Vocabulary,
    max_len: usize,
    tag: DomainTag,
) -> Result<Vec<TokenSequence>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Corpus(format!("cannot open corpus {}: {e}", path.display())))?;
    let mut seqs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        match encode_sentence(&line, vocab, max_len, tag) {
            Ok(seq) => seqs.push(seq),
            Err(_) => {
                eprintln!(
                    "warning: {}:{}: empty sentence skipped",
                    path.display(),
                    lineno + 1
                );
            }
        }
    }
    if seqs.is_empty() {
        return Err(Error::Corpus(format!("empty corpus: {}", path.display())));
    }
    Ok(seqs)
}

/// A batch padded to its own max length. `seq_indices` maps rows back to
/// positions in the sequence list the batch was drawn from.
#[derive(Debug, Clone)]
pub struct PaddedBatch {
    pub ids: Array2<usize>,
    pub lengths: Vec<usize>,
    pub tags: Vec<DomainTag>,
    pub seq_indices: Vec<usize>,
}

impl PaddedBatch {
    pub fn rows(&self) -> usize {
        self.ids.nrows()
    }

    pub fn max_len(&self) -> usize {
        self.ids.ncols()
    }
}

/// Pad a set of rows (referenced by index into `seqs`) into one batch.
pub fn pad_batch(seqs: &[TokenSequence], indices: &[usize]) -> PaddedBatch {
    assert!(!indices.is_empty(), "pad_batch: empty batch");
    let max_len = indices.iter().map(|&i| seqs[i].len()).max().unwrap();
    let mut ids = Array2::from_elem((indices.len(), max_len), PAD);
    let mut lengths = Vec::with_capacity(indices.len());
    let mut tags = Vec::with_capacity(indices.len());
    for (r, &i) in indices.iter().enumerate() {
        let seq = &seqs[i];
        for (c, &tok) in seq.tokens.iter().enumerate() {
            ids[[r, c]] = tok;
        }
        lengths.push(seq.len());
        tags.push(seq.domain_tag);
    }
    PaddedBatch {
        ids,
        lengths,
        tags,
        seq_indices: indices.to_vec(),
    }
}

/// Deterministically shuffled batches; the final partial batch is emitted.
pub fn make_batches(seqs: &[TokenSequence], batch_size: usize, seed: u64) -> Vec<PaddedBatch> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .map(|chunk| pad_batch(seqs, chunk))
        .collect()
}

/// Batches in corpus order (used at inference so outputs stay line-aligned).
pub fn make_batches_in_order(seqs: &[TokenSequence], batch_size: usize) -> Vec<PaddedBatch> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let order: Vec<usize> = (0..seqs.len()).collect();
    order
        .chunks(batch_size)
        .map(|chunk| pad_batch(seqs, chunk))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab_abc() -> Vocabulary {
        Vocabulary::from_lines(["a b", "a c"], 10).unwrap()
    }

    #[test]
    fn vocabulary_counts_and_reserved_ids() {
        let v = vocab_abc();
        assert_eq!(v.size(), 7);
        assert_eq!(v.id("a"), 4); // most frequent first
        assert_eq!(v.token(PAD), "<pad>");
        assert_eq!(v.token(BOS), "<bos>");
        assert_eq!(v.token(EOS), "<eos>");
        assert_eq!(v.token(UNK), "<unk>");
        // b before c by first occurrence (both count 1)
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("c"), 6);
    }

    #[test]
    fn vocabulary_frequency_cutoff() {
        let v = Vocabulary::from_lines(["a b", "a c"], 5).unwrap();
        assert_eq!(v.size(), 5);
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert!(!v.contains("c"));
    }

    #[test]
    fn vocabulary_rejects_empty_corpus() {
        assert!(Vocabulary::from_lines(["", "   "], 10).is_err());
    }

    #[test]
    fn encode_known_unknown_and_truncation() {
        let v = vocab_abc();
        let s = encode_sentence("a b c", &v, 30, DomainTag::Source).unwrap();
        assert_eq!(s.tokens, vec![4, 5, 6]);
        assert_eq!(s.raw_text, "a b c");

        let u = encode_sentence("zzzz", &v, 30, DomainTag::Source).unwrap();
        assert_eq!(u.tokens, vec![UNK]);

        let long = vec!["a"; 40].join(" ");
        let t = encode_sentence(&long, &v, 30, DomainTag::Source).unwrap();
        assert_eq!(t.len(), 30);

        assert!(encode_sentence("   ", &v, 30, DomainTag::Source).is_err());
    }

    #[test]
    fn roundtrip_up_to_unk() {
        let v = vocab_abc();
        let s = encode_sentence("a b zz c", &v, 30, DomainTag::Source).unwrap();
        assert_eq!(v.decode_ids(&s.tokens), "a b <unk> c");
    }

    #[test]
    fn vocabulary_save_load_roundtrip() {
        let v = vocab_abc();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let v2 = Vocabulary::load(&path).unwrap();
        assert_eq!(v2.size(), v.size());
        for id in 0..v.size() {
            assert_eq!(v.token(id), v2.token(id));
        }
    }

    fn toy_seqs(lens: &[usize]) -> Vec<TokenSequence> {
        let v = vocab_abc();
        lens.iter()
            .map(|&n| encode_sentence(&vec!["a"; n].join(" "), &v, 30, DomainTag::Source).unwrap())
            .collect()
    }

    #[test]
    fn batch_sizes_and_padding() {
        let seqs = toy_seqs(&[3, 5, 2, 2, 4, 1, 1, 1, 1, 1]);
        let batches = make_batches(&seqs, 4, 0);
        let sizes: Vec<usize> = batches.iter().map(|b| b.rows()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);

        let b = pad_batch(&seqs, &[0, 1]);
        assert_eq!(b.max_len(), 5);
        assert_eq!(b.ids[[0, 3]], PAD);
        assert_eq!(b.ids[[0, 4]], PAD);
        assert_eq!(b.lengths, vec![3, 5]);
    }

    #[test]
    fn batch_determinism() {
        let seqs = toy_seqs(&[1, 2, 3, 4, 5, 6, 7]);
        let a = make_batches(&seqs, 3, 42);
        let b = make_batches(&seqs, 3, 42);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.seq_indices, y.seq_indices);
            assert_eq!(x.ids, y.ids);
        }
        let c = make_batches(&seqs, 3, 43);
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x.seq_indices != y.seq_indices));
    }

    proptest! {
        #[test]
        fn no_pad_before_length(lens in proptest::collection::vec(1usize..12, 1..20),
                                batch in 1usize..6, seed in 0u64..100) {
            let seqs = toy_seqs(&lens);
            for b in make_batches(&seqs, batch, seed) {
                for r in 0..b.rows() {
                    for c in 0..b.lengths[r] {
                        prop_assert_ne!(b.ids[[r, c]], PAD);
                    }
                    for c in b.lengths[r]..b.max_len() {
                        prop_assert_eq!(b.ids[[r, c]], PAD);
                    }
                }
            }
        }
    }
}
