//! Six-constraint sentence profiles and constraint-preservation scoring.
//!
//! Every sentence gets one label per family:
//!
//! | family          | labels            | rule                                   |
//! |-----------------|-------------------|----------------------------------------|
//! | length          | SHORT, LONG       | LONG iff 10 or more tokens             |
//! | personal pron.  | NO, YES           | closed pronoun list                    |
//! | adjectives      | 0..5, OVER        | tag count, catch-all above 5           |
//! | proper nouns    | 0..3, OVER        | tag count, catch-all above 3           |
//! | tree height     | 1..10, OVER       | parse height, catch-all above 10       |
//! | domain attrs    | 0..5, OVER        | salient-marker occurrences, over 5     |
//!
//! The flattened one-hot encoding is 2+2+7+5+11+7 = 34 wide with exactly six
//! ones. Annotations come either from the builtin lexicon heuristic or from
//! a precomputed TSV produced by an external tagger/parser.

use crate::corpus::{DomainTag, TokenSequence};
use crate::{Error, Result};
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Sizes of the six one-hot blocks, in profile order.
pub const FAMILY_SIZES: [usize; 6] = [2, 2, 7, 5, 11, 7];
pub const FAMILY_NAMES: [&str; 6] = [
    "length",
    "pronoun",
    "adjective",
    "proper_noun",
    "tree_height",
    "domain_attr",
];
/// Total width of the flattened profile encoding.
pub const PROFILE_DIM: usize = 34;

/// Closed list of personal pronouns used by the builtin annotator.
pub const PERSONAL_PRONOUNS: [&str; 22] = [
    "i", "you", "he", "she", "we", "they", "me", "him", "her", "us", "them", "my", "your", "his",
    "its", "our", "their", "mine", "yours", "hers", "ours", "theirs",
];

/// One label per constraint family, stored as the class index within the
/// family (the last index of a counted family is its catch-all).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConstraintProfile {
    /// 0 = SHORT, 1 = LONG.
    pub length_class: u8,
    /// 0 = NO, 1 = YES.
    pub has_personal_pronoun: u8,
    /// 0..=5 count, 6 = OVER.
    pub adjective_class: u8,
    /// 0..=3 count, 4 = OVER.
    pub proper_noun_class: u8,
    /// Height h maps to h-1 for h in 1..=10, 10 = OVER.
    pub tree_height_class: u8,
    /// 0..=5 count, 6 = OVER.
    pub domain_attr_class: u8,
}

impl ConstraintProfile {
    pub fn classes(&self) -> [u8; 6] {
        [
            self.length_class,
            self.has_personal_pronoun,
            self.adjective_class,
            self.proper_noun_class,
            self.tree_height_class,
            self.domain_attr_class,
        ]
    }

    /// Flattened 34-dimensional one-hot encoding (six ones).
    pub fn one_hot(&self) -> [f64; PROFILE_DIM] {
        let mut v = [0.0; PROFILE_DIM];
        let mut offset = 0;
        for (family, &class) in self.classes().iter().enumerate() {
            debug_assert!((class as usize) < FAMILY_SIZES[family]);
            v[offset + class as usize] = 1.0;
            offset += FAMILY_SIZES[family];
        }
        v
    }

    /// Human-readable label per family, as written to profile TSVs.
    pub fn labels(&self) -> [String; 6] {
        let c = self.classes();
        [
            if c[0] == 0 { "SHORT".into() } else { "LONG".into() },
            if c[1] == 0 { "NO".into() } else { "YES".into() },
            counted_label(c[2], 6),
            counted_label(c[3], 4),
            if c[4] == 10 { "OVER".into() } else { format!("{}", c[4] + 1) },
            counted_label(c[5], 6),
        ]
    }

    pub fn from_labels(labels: &[&str]) -> Result<ConstraintProfile> {
        if labels.len() != 6 {
            return Err(Error::Constraints(format!(
                "expected 6 profile labels, got {}",
                labels.len()
            )));
        }
        let length_class = match labels[0] {
            "SHORT" => 0,
            "LONG" => 1,
            other => return Err(Error::Constraints(format!("bad length label {other:?}"))),
        };
        let has_personal_pronoun = match labels[1] {
            "NO" => 0,
            "YES" => 1,
            other => return Err(Error::Constraints(format!("bad pronoun label {other:?}"))),
        };
        let adjective_class = parse_counted(labels[2], 6)?;
        let proper_noun_class = parse_counted(labels[3], 4)?;
        let tree_height_class = if labels[4] == "OVER" {
            10
        } else {
            let h: u8 = labels[4]
                .parse()
                .map_err(|_| Error::Constraints(format!("bad height label {:?}", labels[4])))?;
            if !(1..=10).contains(&h) {
                return Err(Error::Constraints(format!("height label out of range: {h}")));
            }
            h - 1
        };
        let domain_attr_class = parse_counted(labels[5], 6)?;
        Ok(ConstraintProfile {
            length_class,
            has_personal_pronoun,
            adjective_class,
            proper_noun_class,
            tree_height_class,
            domain_attr_class,
        })
    }
}

fn counted_label(class: u8, over: u8) -> String {
    if class == over {
        "OVER".into()
    } else {
        format!("{class}")
    }
}

fn parse_counted(label: &str, over: u8) -> Result<u8> {
    if label == "OVER" {
        return Ok(over);
    }
    let n: u8 = label
        .parse()
        .map_err(|_| Error::Constraints(format!("bad count label {label:?}")))?;
    if n >= over {
        return Err(Error::Constraints(format!(
            "count label {n} must use the catch-all above {}",
            over - 1
        )));
    }
    Ok(n)
}

/// Coarse per-token tags the profile rules consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosTag {
    Adj,
    Propn,
    PronPers,
    Other,
}

impl PosTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Adj => "ADJ",
            PosTag::Propn => "PROPN",
            PosTag::PronPers => "PRON_PERS",
            PosTag::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Result<PosTag> {
        match s {
            "ADJ" => Ok(PosTag::Adj),
            "PROPN" => Ok(PosTag::Propn),
            "PRON_PERS" => Ok(PosTag::PronPers),
            "OTHER" => Ok(PosTag::Other),
            other => Err(Error::Constraints(format!("unknown POS tag {other:?}"))),
        }
    }
}

/// Tags plus parse-tree height for one sentence.
#[derive(Debug, Clone)]
pub struct LinguisticAnnotation {
    pub pos_tags: Vec<PosTag>,
    pub tree_height: usize,
}

/// Wordlists backing the builtin annotator.
#[derive(Debug, Clone)]
pub struct Lexicons {
    pub adjectives: BTreeSet<String>,
    pub proper_nouns: BTreeSet<String>,
}

impl Lexicons {
    /// Small default English wordlists; bring real ones for real corpora.
    pub fn builtin() -> Lexicons {
        let adjectives = [
            "good", "bad", "great", "terrible", "nice", "amazing", "awful", "boring", "decent",
            "wonderful", "horrible", "fantastic", "poor", "excellent", "lovely", "dull", "fresh",
            "stale", "tasty", "bland", "slow", "fast", "friendly", "rude", "clean", "dirty",
            "cheap", "expensive", "new", "old", "big", "small", "happy", "sad", "funny", "scary",
            "weird", "strange", "perfect", "solid", "weak", "strong", "cold", "warm", "delicious",
        ];
        let proper_nouns = [
            "john", "mary", "london", "paris", "chicago", "amazon", "google", "netflix",
            "spielberg", "hitchcock", "monday", "december", "america", "europe", "texas",
        ];
        Lexicons {
            adjectives: adjectives.iter().map(|s| s.to_string()).collect(),
            proper_nouns: proper_nouns.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// One word per line.
    pub fn from_files(adjectives: &Path, proper_nouns: &Path) -> Result<Lexicons> {
        let read = |p: &Path| -> Result<BTreeSet<String>> {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Constraints(format!("cannot read lexicon {}: {e}", p.display())))?;
            Ok(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
        };
        Ok(Lexicons {
            adjectives: read(adjectives)?,
            proper_nouns: read(proper_nouns)?,
        })
    }
}

/// Lexicon-based tagging plus the `ceil(log2 n) + 1` tree-height proxy.
/// Pronoun membership wins over adjective, adjective over proper noun.
pub fn builtin_annotate(seq: &TokenSequence, lexicons: &Lexicons) -> LinguisticAnnotation {
    let words = seq.words();
    let pos_tags = words
        .iter()
        .map(|w| {
            if PERSONAL_PRONOUNS.contains(w) {
                PosTag::PronPers
            } else if lexicons.adjectives.contains(*w) {
                PosTag::Adj
            } else if lexicons.proper_nouns.contains(*w) {
                PosTag::Propn
            } else {
                PosTag::Other
            }
        })
        .collect();
    let n = seq.len() as f64;
    let tree_height = (n.log2().ceil() as usize) + 1;
    LinguisticAnnotation { pos_tags, tree_height }
}

/// Load precomputed annotations: TSV columns `index`, space-separated tags,
/// `tree_height`; indices must be contiguous from 0.
pub fn load_annotations(path: &Path) -> Result<Vec<LinguisticAnnotation>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Constraints(format!("cannot read annotations {}: {e}", path.display())))?;
    let mut anns = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (idx_s, tags_s, height_s) = match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Constraints(format!(
                    "{}:{}: expected 3 tab-separated columns",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        let idx: usize = idx_s.parse().map_err(|_| {
            Error::Constraints(format!("{}:{}: bad index {idx_s:?}", path.display(), lineno + 1))
        })?;
        if idx != anns.len() {
            return Err(Error::Constraints(format!(
                "{}:{}: index gap: expected {}, found {}",
                path.display(),
                lineno + 1,
                anns.len(),
                idx
            )));
        }
        let pos_tags = tags_s
            .split_whitespace()
            .map(PosTag::parse)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Constraints(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        let tree_height: usize = height_s.parse().map_err(|_| {
            Error::Constraints(format!("{}:{}: bad height {height_s:?}", path.display(), lineno + 1))
        })?;
        if tree_height < 1 {
            return Err(Error::Constraints(format!(
                "{}:{}: tree height must be >= 1",
                path.display(),
                lineno + 1
            )));
        }
        anns.push(LinguisticAnnotation { pos_tags, tree_height });
    }
    Ok(anns)
}

/// Domain-specific attribute markers: n-grams whose smoothed count ratio
/// between the corpora reaches the salience threshold.
#[derive(Debug, Clone)]
pub struct AttributeMarkerSet {
    src_markers: BTreeSet<Vec<String>>,
    tgt_markers: BTreeSet<Vec<String>>,
    pub gamma: f64,
    pub lambda_s: f64,
    pub max_n: usize,
}

impl AttributeMarkerSet {
    /// Empty set (every domain-attribute count is zero).
    pub fn empty() -> AttributeMarkerSet {
        AttributeMarkerSet {
            src_markers: BTreeSet::new(),
            tgt_markers: BTreeSet::new(),
            gamma: 15.0,
            lambda_s: 1.0,
            max_n: 4,
        }
    }

    pub fn markers(&self, direction: DomainTag) -> &BTreeSet<Vec<String>> {
        match direction {
            DomainTag::Source => &self.src_markers,
            DomainTag::Target => &self.tgt_markers,
        }
    }

    /// Count marker occurrences in a sentence (all n-gram windows, overlaps
    /// counted) toward the given domain direction.
    pub fn count_occurrences(&self, words: &[&str], direction: DomainTag) -> usize {
        let set = self.markers(direction);
        if set.is_empty() {
            return 0;
        }
        let mut count = 0;
        for n in 1..=self.max_n.min(words.len()) {
            for window in words.windows(n) {
                let key: Vec<String> = window.iter().map(|w| w.to_string()).collect();
                if set.contains(&key) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Text format: one n-gram per line under `[src]` / `[tgt]` headers.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        writeln!(out, "# gamma={} lambda_s={} max_n={}", self.gamma, self.lambda_s, self.max_n)?;
        writeln!(out, "[src]")?;
        for m in &self.src_markers {
            writeln!(out, "{}", m.join(" "))?;
        }
        writeln!(out, "[tgt]")?;
        for m in &self.tgt_markers {
            writeln!(out, "{}", m.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AttributeMarkerSet> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Constraints(format!("cannot read markers {}: {e}", path.display())))?;
        let mut set = AttributeMarkerSet::empty();
        let mut section: Option<DomainTag> = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    if let Some((k, v)) = kv.split_once('=') {
                        match k {
                            "gamma" => set.gamma = v.parse().unwrap_or(set.gamma),
                            "lambda_s" => set.lambda_s = v.parse().unwrap_or(set.lambda_s),
                            "max_n" => set.max_n = v.parse().unwrap_or(set.max_n),
                            _ => {}
                        }
                    }
                }
                continue;
            }
            match line {
                "[src]" => section = Some(DomainTag::Source),
                "[tgt]" => section = Some(DomainTag::Target),
                ngram => {
                    let key: Vec<String> = ngram.split_whitespace().map(|s| s.to_string()).collect();
                    match section {
                        Some(DomainTag::Source) => {
                            set.src_markers.insert(key);
                        }
                        Some(DomainTag::Target) => {
                            set.tgt_markers.insert(key);
                        }
                        None => {
                            return Err(Error::Constraints(format!(
                                "marker file {}: n-gram before any section header",
                                path.display()
                            )))
                        }
                    }
                }
            }
        }
        if set.max_n == 0 {
            return Err(Error::Constraints("marker file: max_n must be >= 1".into()));
        }
        Ok(set)
    }
}

fn ngram_counts(corpus: &[Vec<String>], max_n: usize) -> HashMap<Vec<String>, usize> {
    let mut counts: HashMap<Vec<String>, usize> = HashMap::new();
    for words in corpus {
        for n in 1..=max_n.min(words.len()) {
            for window in words.windows(n) {
                *counts.entry(window.to_vec()).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Smoothed-ratio salience mining: an n-gram `u` is a source marker iff
/// `(count(u, src) + lambda_s) / (count(u, tgt) + lambda_s) >= gamma`, and
/// symmetrically for the target side.
pub fn mine_attribute_markers(
    src_corpus: &[Vec<String>],
    tgt_corpus: &[Vec<String>],
    gamma: f64,
    lambda_s: f64,
    max_n: usize,
) -> Result<AttributeMarkerSet> {
    if src_corpus.is_empty() || tgt_corpus.is_empty() {
        return Err(Error::Constraints("marker mining needs two non-empty corpora".into()));
    }
    if gamma <= 1.0 {
        return Err(Error::Constraints(format!("gamma must be > 1 (got {gamma})")));
    }
    if lambda_s <= 0.0 {
        return Err(Error::Constraints(format!("lambda_s must be > 0 (got {lambda_s})")));
    }
    if max_n < 1 {
        return Err(Error::Constraints("max_n must be >= 1".into()));
    }
    let src_counts = ngram_counts(src_corpus, max_n);
    let tgt_counts = ngram_counts(tgt_corpus, max_n);
    let mut set = AttributeMarkerSet::empty();
    set.gamma = gamma;
    set.lambda_s = lambda_s;
    set.max_n = max_n;
    for (ngram, &cs) in &src_counts {
        let ct = tgt_counts.get(ngram).copied().unwrap_or(0);
        if (cs as f64 + lambda_s) / (ct as f64 + lambda_s) >= gamma {
            set.src_markers.insert(ngram.clone());
        }
    }
    for (ngram, &ct) in &tgt_counts {
        let cs = src_counts.get(ngram).copied().unwrap_or(0);
        if (ct as f64 + lambda_s) / (cs as f64 + lambda_s) >= gamma {
            set.tgt_markers.insert(ngram.clone());
        }
    }
    Ok(set)
}

/// Split token sequences into surface word lists for mining.
pub fn corpus_words(seqs: &[TokenSequence]) -> Vec<Vec<String>> {
    seqs.iter()
        .map(|s| s.words().iter().map(|w| w.to_string()).collect())
        .collect()
}

/// Apply the six constraint rules to one annotated sentence.
pub fn extract_profile(
    seq: &TokenSequence,
    ann: &LinguisticAnnotation,
    markers: &AttributeMarkerSet,
) -> Result<ConstraintProfile> {
    if ann.pos_tags.len() != seq.len() {
        return Err(Error::Constraints(format!(
            "annotation misaligned: {} tags for {} tokens",
            ann.pos_tags.len(),
            seq.len()
        )));
    }
    let length_class = u8::from(seq.len() >= 10);
    let has_personal_pronoun = u8::from(ann.pos_tags.iter().any(|t| *t == PosTag::PronPers));
    let adj = ann.pos_tags.iter().filter(|t| **t == PosTag::Adj).count();
    let propn = ann.pos_tags.iter().filter(|t| **t == PosTag::Propn).count();
    let words = seq.words();
    let attrs = markers.count_occurrences(&words, seq.domain_tag);
    Ok(ConstraintProfile {
        length_class,
        has_personal_pronoun,
        adjective_class: adj.min(6) as u8,
        proper_noun_class: propn.min(4) as u8,
        tree_height_class: ann.tree_height.clamp(1, 11) as u8 - 1,
        domain_attr_class: attrs.min(6) as u8,
    })
}

/// Profile every sentence; errors name the failing sentence index.
pub fn extract_profiles(
    seqs: &[TokenSequence],
    anns: &[LinguisticAnnotation],
    markers: &AttributeMarkerSet,
) -> Result<Vec<ConstraintProfile>> {
    if seqs.len() != anns.len() {
        return Err(Error::Constraints(format!(
            "{} sentences but {} annotations",
            seqs.len(),
            anns.len()
        )));
    }
    seqs.iter()
        .zip(anns.iter())
        .enumerate()
        .map(|(i, (s, a))| {
            extract_profile(s, a, markers)
                .map_err(|e| Error::Constraints(format!("sentence {i}: {e}")))
        })
        .collect()
}

/// Per-family macro F1 between aligned profile lists (source as gold,
/// transferred as predictions). Macro averages run over the labels observed
/// in either list; a label absent from both does not dilute the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyF1 {
    pub length: f64,
    pub pronoun: f64,
    pub adjective: f64,
    pub proper_noun: f64,
    pub tree_height: f64,
    pub domain_attr: f64,
}

impl FamilyF1 {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.length,
            self.pronoun,
            self.adjective,
            self.proper_noun,
            self.tree_height,
            self.domain_attr,
        ]
    }
}

pub fn constraint_f1(
    source_profiles: &[ConstraintProfile],
    transferred_profiles: &[ConstraintProfile],
) -> Result<FamilyF1> {
    if source_profiles.len() != transferred_profiles.len() {
        return Err(Error::Constraints(format!(
            "profile lists differ in length: {} vs {}",
            source_profiles.len(),
            transferred_profiles.len()
        )));
    }
    if source_profiles.is_empty() {
        return Err(Error::Constraints("profile lists are empty".into()));
    }
    let mut scores = [0.0; 6];
    for family in 0..6 {
        let gold: Vec<u8> = source_profiles.iter().map(|p| p.classes()[family]).collect();
        let pred: Vec<u8> = transferred_profiles.iter().map(|p| p.classes()[family]).collect();
        scores[family] = macro_f1(&gold, &pred, FAMILY_SIZES[family]);
    }
    Ok(FamilyF1 {
        length: scores[0],
        pronoun: scores[1],
        adjective: scores[2],
        proper_noun: scores[3],
        tree_height: scores[4],
        domain_attr: scores[5],
    })
}

fn macro_f1(gold: &[u8], pred: &[u8], num_classes: usize) -> f64 {
    let mut total = 0.0;
    let mut observed = 0usize;
    for class in 0..num_classes as u8 {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == class && **p == class).count();
        let fp = gold.iter().zip(pred).filter(|(g, p)| **g != class && **p == class).count();
        let fn_ = gold.iter().zip(pred).filter(|(g, p)| **g == class && **p != class).count();
        if tp + fp + fn_ == 0 {
            continue; // label absent from both lists
        }
        observed += 1;
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            total += 2.0 * tp as f64 / denom as f64;
        }
    }
    if observed == 0 {
        0.0
    } else {
        total / observed as f64
    }
}

/// Profile dump: one row per sentence, six tab-separated label columns.
pub fn save_profiles(profiles: &[ConstraintProfile], path: &Path) -> Result<()> {
    let mut text = String::new();
    for p in profiles {
        let _ = writeln!(text, "{}", p.labels().join("\t"));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn load_profiles(path: &Path) -> Result<Vec<ConstraintProfile>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Constraints(format!("cannot read profiles {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let p = ConstraintProfile::from_labels(&cols)
            .map_err(|e| Error::Constraints(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(p);
    }
    Ok(out)
}
