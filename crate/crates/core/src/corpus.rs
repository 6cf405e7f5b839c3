//! khPOS corpus reading, tag-set revision and per-character encoding.
//!
//! A corpus line is a sequence of `word/TAG` tokens separated by ASCII
//! spaces. Words are re-joined without separators for the model input; the
//! first code point of each word carries the word's tag and every other code
//! point carries the no-space label [`LabelClass::NoSpace`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: token {token:?} has no slash separating word and tag")]
    MalformedToken { line: usize, token: String },
    #[error("line {line}: token {token:?} has an empty word")]
    EmptyWord { line: usize, token: String },
    #[error("line {line}: unknown POS tag {tag:?}")]
    UnknownTag { line: usize, tag: String },
    #[error("line {line}: empty sentence")]
    EmptyLine { line: usize },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode: {chars} characters but {labels} labels")]
    LengthMismatch { chars: usize, labels: usize },
    #[error("cannot decode an empty sequence")]
    EmptySequence,
}

/// The revised 15-tag set. Discriminants are the stable class codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PosTag {
    AB = 0,
    AUX = 1,
    CC = 2,
    CD = 3,
    DT = 4,
    IN = 5,
    JJ = 6,
    VB = 7,
    NN = 8,
    PN = 9,
    PA = 10,
    PRO = 11,
    QT = 12,
    RB = 13,
    SYM = 14,
}

impl PosTag {
    pub const COUNT: usize = 15;

    pub const ALL: [PosTag; 15] = [
        PosTag::AB,
        PosTag::AUX,
        PosTag::CC,
        PosTag::CD,
        PosTag::DT,
        PosTag::IN,
        PosTag::JJ,
        PosTag::VB,
        PosTag::NN,
        PosTag::PN,
        PosTag::PA,
        PosTag::PRO,
        PosTag::QT,
        PosTag::RB,
        PosTag::SYM,
    ];

    /// Tag order of the training-set frequency table, used for reports.
    pub const FREQUENCY_ORDER: [PosTag; 15] = [
        PosTag::NN,
        PosTag::PN,
        PosTag::VB,
        PosTag::PRO,
        PosTag::IN,
        PosTag::RB,
        PosTag::SYM,
        PosTag::JJ,
        PosTag::DT,
        PosTag::CD,
        PosTag::CC,
        PosTag::AUX,
        PosTag::PA,
        PosTag::QT,
        PosTag::AB,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<PosTag> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PosTag::AB => "AB",
            PosTag::AUX => "AUX",
            PosTag::CC => "CC",
            PosTag::CD => "CD",
            PosTag::DT => "DT",
            PosTag::IN => "IN",
            PosTag::JJ => "JJ",
            PosTag::VB => "VB",
            PosTag::NN => "NN",
            PosTag::PN => "PN",
            PosTag::PA => "PA",
            PosTag::PRO => "PRO",
            PosTag::QT => "QT",
            PosTag::RB => "RB",
            PosTag::SYM => "SYM",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The original 24-tag khPOS inventory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RawTag {
    AB,
    AUX,
    CC,
    CD,
    CUR,
    DBL,
    DT,
    ETC,
    IN,
    JJ,
    KAN,
    M,
    NN,
    PN,
    PA,
    PRO,
    QT,
    RB,
    RPN,
    SYM,
    UH,
    VB,
    VbJj,
    VCom,
}

impl RawTag {
    pub const ALL: [RawTag; 24] = [
        RawTag::AB,
        RawTag::AUX,
        RawTag::CC,
        RawTag::CD,
        RawTag::CUR,
        RawTag::DBL,
        RawTag::DT,
        RawTag::ETC,
        RawTag::IN,
        RawTag::JJ,
        RawTag::KAN,
        RawTag::M,
        RawTag::NN,
        RawTag::PN,
        RawTag::PA,
        RawTag::PRO,
        RawTag::QT,
        RawTag::RB,
        RawTag::RPN,
        RawTag::SYM,
        RawTag::UH,
        RawTag::VB,
        RawTag::VbJj,
        RawTag::VCom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RawTag::AB => "AB",
            RawTag::AUX => "AUX",
            RawTag::CC => "CC",
            RawTag::CD => "CD",
            RawTag::CUR => "CUR",
            RawTag::DBL => "DBL",
            RawTag::DT => "DT",
            RawTag::ETC => "ETC",
            RawTag::IN => "IN",
            RawTag::JJ => "JJ",
            RawTag::KAN => "KAN",
            RawTag::M => "M",
            RawTag::NN => "NN",
            RawTag::PN => "PN",
            RawTag::PA => "PA",
            RawTag::PRO => "PRO",
            RawTag::QT => "QT",
            RawTag::RB => "RB",
            RawTag::RPN => "RPN",
            RawTag::SYM => "SYM",
            RawTag::UH => "UH",
            RawTag::VB => "VB",
            RawTag::VbJj => "VB_JJ",
            RawTag::VCom => "V_COM",
        }
    }

    /// Collapse onto the revised tag set.
    pub fn revised(self) -> PosTag {
        match self {
            RawTag::AB => PosTag::AB,
            RawTag::AUX => PosTag::AUX,
            RawTag::CC => PosTag::CC,
            RawTag::CD => PosTag::CD,
            RawTag::DT => PosTag::DT,
            RawTag::IN => PosTag::IN,
            RawTag::JJ => PosTag::JJ,
            RawTag::NN | RawTag::M => PosTag::NN,
            RawTag::PN => PosTag::PN,
            RawTag::PA | RawTag::UH => PosTag::PA,
            RawTag::PRO | RawTag::RPN => PosTag::PRO,
            RawTag::QT => PosTag::QT,
            RawTag::RB => PosTag::RB,
            RawTag::SYM | RawTag::CUR | RawTag::DBL | RawTag::ETC | RawTag::KAN => PosTag::SYM,
            RawTag::VB | RawTag::VbJj | RawTag::VCom => PosTag::VB,
        }
    }
}

impl FromStr for RawTag {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        RawTag::ALL.iter().copied().find(|t| t.name() == s).ok_or(())
    }
}

/// Map an original (or already revised) tag name onto the revised tag set.
pub fn remap_tag(raw: &str) -> Result<PosTag, CorpusError> {
    raw.parse::<RawTag>()
        .map(RawTag::revised)
        .map_err(|_| CorpusError::UnknownTag { line: 0, tag: raw.to_string() })
}

/// A label class: a revised tag on word-initial characters, or no-space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelClass {
    Tag(PosTag),
    NoSpace,
}

impl LabelClass {
    pub const COUNT: usize = PosTag::COUNT + 1;
    pub const NS_CODE: usize = PosTag::COUNT;

    pub fn code(self) -> usize {
        match self {
            LabelClass::Tag(t) => t.code(),
            LabelClass::NoSpace => Self::NS_CODE,
        }
    }

    pub fn from_code(code: usize) -> Option<LabelClass> {
        if code == Self::NS_CODE {
            Some(LabelClass::NoSpace)
        } else {
            PosTag::from_code(code).map(LabelClass::Tag)
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelClass::Tag(t) => t.name(),
            LabelClass::NoSpace => "NS",
        }
    }

    /// Class names in code order, as embedded in model files.
    pub fn names() -> Vec<&'static str> {
        (0..Self::COUNT).map(|c| Self::from_code(c).unwrap().name()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    pub tag: PosTag,
}

impl Word {
    pub fn new(text: impl Into<String>, tag: PosTag) -> Self {
        Self { text: text.into(), tag }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub words: Vec<Word>,
}

impl TaggedSentence {
    pub fn new(words: Vec<Word>) -> Self {
        Self { words }
    }

    /// All code points of the sentence with no separators.
    pub fn chars(&self) -> Vec<char> {
        self.words.iter().flat_map(|w| w.text.chars()).collect()
    }

    pub fn char_len(&self) -> usize {
        self.words.iter().map(|w| w.text.chars().count()).sum()
    }

    /// khPOS line form: `word/TAG` tokens joined by single spaces.
    pub fn to_line(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&w.text);
            out.push('/');
            out.push_str(w.tag.name());
        }
        out
    }
}

/// A sentence as it appears on disk, before tag revision.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSentence {
    pub words: Vec<(String, RawTag)>,
}

impl RawSentence {
    pub fn remapped(&self) -> TaggedSentence {
        TaggedSentence {
            words: self.words.iter().map(|(w, t)| Word::new(w.clone(), t.revised())).collect(),
        }
    }
}

/// Parse one corpus line. `line_no` is 1-based and only used in errors.
pub fn parse_khpos_line(line: &str, line_no: usize) -> Result<RawSentence, CorpusError> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Err(CorpusError::EmptyLine { line: line_no });
    }
    let mut words = Vec::new();
    for token in trimmed.split(' ').filter(|t| !t.is_empty()) {
        let Some(slash) = token.rfind('/') else {
            return Err(CorpusError::MalformedToken { line: line_no, token: token.to_string() });
        };
        let (word, tag) = (&token[..slash], &token[slash + 1..]);
        if word.is_empty() {
            return Err(CorpusError::EmptyWord { line: line_no, token: token.to_string() });
        }
        let tag = tag
            .parse::<RawTag>()
            .map_err(|_| CorpusError::UnknownTag { line: line_no, tag: tag.to_string() })?;
        words.push((word.to_string(), tag));
    }
    Ok(RawSentence { words })
}

/// Parse one line and apply the tag revision.
pub fn parse_tagged_line(line: &str, line_no: usize) -> Result<TaggedSentence, CorpusError> {
    parse_khpos_line(line, line_no).map(|s| s.remapped())
}

/// Bijection between code points and dense indices, plus one unknown slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    /// Build from an explicit character list. Duplicates are dropped,
    /// keeping the first occurrence.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut list = Vec::new();
        let mut index = HashMap::new();
        for c in chars {
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(c) {
                e.insert(list.len());
                list.push(c);
            }
        }
        Self { chars: list, index }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.chars.len()
    }

    pub fn one_hot_dim(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn lookup(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(self.unk_index())
    }

    pub fn encode_chars(&self, chars: &[char]) -> Vec<usize> {
        chars.iter().map(|&c| self.lookup(c)).collect()
    }
}

/// Distinct code points over all word texts, sorted by scalar value.
pub fn build_vocab(corpus: &[TaggedSentence]) -> CharVocab {
    let set: BTreeSet<char> = corpus.iter().flat_map(|s| s.words.iter()).flat_map(|w| w.text.chars()).collect();
    CharVocab::from_chars(set)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub char_ids: Vec<usize>,
    pub label_ids: Vec<LabelClass>,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.char_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.char_ids.is_empty()
    }
}

/// Word-initial labels for a sentence, one per code point.
pub fn sentence_labels(s: &TaggedSentence) -> Vec<LabelClass> {
    let mut labels = Vec::with_capacity(s.char_len());
    for w in &s.words {
        for (i, _) in w.text.chars().enumerate() {
            labels.push(if i == 0 { LabelClass::Tag(w.tag) } else { LabelClass::NoSpace });
        }
    }
    labels
}

pub fn encode_sentence(s: &TaggedSentence, vocab: &CharVocab) -> EncodedExample {
    EncodedExample { char_ids: vocab.encode_chars(&s.chars()), label_ids: sentence_labels(s) }
}

/// Result of decoding a label sequence back into words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub sentence: TaggedSentence,
    /// The first label was NS and position 0 was forced open as NN.
    pub repaired: bool,
}

pub fn decode_labels(chars: &[char], labels: &[LabelClass]) -> Result<Decoded, CorpusError> {
    if chars.len() != labels.len() {
        return Err(CorpusError::LengthMismatch { chars: chars.len(), labels: labels.len() });
    }
    if chars.is_empty() {
        return Err(CorpusError::EmptySequence);
    }
    let mut words: Vec<Word> = Vec::new();
    let mut repaired = false;
    for (pos, (&c, &label)) in chars.iter().zip(labels).enumerate() {
        match label {
            LabelClass::Tag(tag) => words.push(Word::new(c.to_string(), tag)),
            LabelClass::NoSpace if pos == 0 => {
                repaired = true;
                words.push(Word::new(c.to_string(), PosTag::NN));
            }
            LabelClass::NoSpace => words.last_mut().expect("word opened at position 0").text.push(c),
        }
    }
    Ok(Decoded { sentence: TaggedSentence { words }, repaired })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TagCount {
    pub tag: PosTag,
    pub count: usize,
    pub percent: f64,
}

/// Counts of revised tags, descending by count. Tags that never occur are
/// omitted.
pub fn tag_histogram(corpus: &[TaggedSentence]) -> Vec<TagCount> {
    let mut counts = [0usize; PosTag::COUNT];
    for w in corpus.iter().flat_map(|s| &s.words) {
        counts[w.tag.code()] += 1;
    }
    let total: usize = counts.iter().sum();
    let mut out: Vec<TagCount> = PosTag::ALL
        .iter()
        .filter(|t| counts[t.code()] > 0)
        .map(|&tag| TagCount {
            tag,
            count: counts[tag.code()],
            percent: 100.0 * counts[tag.code()] as f64 / total as f64,
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then(a.tag.cmp(&b.tag)));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub types: usize,
    pub vocab_size: usize,
    pub words_per_sentence: f64,
}

pub fn corpus_stats(corpus: &[TaggedSentence]) -> CorpusStats {
    let tokens: usize = corpus.iter().map(|s| s.words.len()).sum();
    let types: HashSet<&str> = corpus.iter().flat_map(|s| &s.words).map(|w| w.text.as_str()).collect();
    CorpusStats {
        sentences: corpus.len(),
        tokens,
        types: types.len(),
        vocab_size: build_vocab(corpus).len(),
        words_per_sentence: if corpus.is_empty() { 0.0 } else { tokens as f64 / corpus.len() as f64 },
    }
}

/// Parse a whole corpus text. Blank lines are skipped; line numbers in errors
/// refer to the original text.
pub fn parse_corpus(text: &str) -> Result<Vec<TaggedSentence>, CorpusError> {
    let lines: Vec<(usize, &str)> =
        text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l)).collect();
    lines.par_iter().map(|&(no, line)| parse_tagged_line(line, no)).collect()
}

pub fn load_corpus(path: &Path) -> Result<Vec<TaggedSentence>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    let corpus = parse_corpus(&text)
        .map_err(|e| CorpusError::InFile { path: path.to_path_buf(), source: Box::new(e) })?;
    if corpus.is_empty() {
        log::warn!("{}: no sentences", path.display());
    } else {
        log::info!("{}: {} sentences", path.display(), corpus.len());
    }
    Ok(corpus)
}

pub fn train_test_split_load(
    train_path: &Path,
    test_path: &Path,
) -> Result<(Vec<TaggedSentence>, Vec<TaggedSentence>), CorpusError> {
    Ok((load_corpus(train_path)?, load_corpus(test_path)?))
}
