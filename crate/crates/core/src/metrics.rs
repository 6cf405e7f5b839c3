//! Segmentation and tagging accuracy, and the additive error split.
//!
//! A reference word is correctly segmented when the hypothesis contains a
//! word with the same character span. It is tag-correct when, in addition,
//! that hypothesis word carries the same tag. Accuracies are recall-style:
//! the denominator is always the reference word count.

use crate::corpus::{decode_labels, CharVocab, PosTag, TaggedSentence};
use crate::network::{predict_tags, ModelParams, NetworkError};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sentence {index}: reference and hypothesis character streams differ")]
    Alignment { index: usize },
    #[error("{reference} reference sentences but {hypothesis} hypothesis sentences")]
    SentenceCount { reference: usize, hypothesis: usize },
    #[error("sentence {index}: {source}")]
    Network {
        index: usize,
        #[source]
        source: NetworkError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
    pub tag: PosTag,
}

/// Code-point offsets of each word.
pub fn spans_of(s: &TaggedSentence) -> Vec<WordSpan> {
    let mut start = 0;
    s.words
        .iter()
        .map(|w| {
            let end = start + w.text.chars().count();
            let span = WordSpan { start, end, tag: w.tag };
            start = end;
            span
        })
        .collect()
}

fn check_aligned(reference: &[TaggedSentence], hypothesis: &[TaggedSentence]) -> Result<(), MetricsError> {
    if reference.len() != hypothesis.len() {
        return Err(MetricsError::SentenceCount { reference: reference.len(), hypothesis: hypothesis.len() });
    }
    for (index, (r, h)) in reference.iter().zip(hypothesis).enumerate() {
        let same = r.words.iter().flat_map(|w| w.text.chars()).eq(h.words.iter().flat_map(|w| w.text.chars()));
        if !same {
            return Err(MetricsError::Alignment { index });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    ref_words: usize,
    hyp_words: usize,
    seg_correct: usize,
    tag_total: [usize; PosTag::COUNT],
    tag_correct: [usize; PosTag::COUNT],
    start_correct: [usize; PosTag::COUNT],
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.ref_words += o.ref_words;
        self.hyp_words += o.hyp_words;
        self.seg_correct += o.seg_correct;
        for k in 0..PosTag::COUNT {
            self.tag_total[k] += o.tag_total[k];
            self.tag_correct[k] += o.tag_correct[k];
            self.start_correct[k] += o.start_correct[k];
        }
    }
}

fn sentence_counts(r: &TaggedSentence, h: &TaggedSentence) -> Counts {
    let hyp: HashMap<(usize, usize), PosTag> = spans_of(h).into_iter().map(|s| ((s.start, s.end), s.tag)).collect();
    let hyp_starts: HashMap<usize, PosTag> = spans_of(h).into_iter().map(|s| (s.start, s.tag)).collect();
    let mut c = Counts { ref_words: r.words.len(), hyp_words: h.words.len(), ..Counts::default() };
    for span in spans_of(r) {
        let k = span.tag.code();
        c.tag_total[k] += 1;
        if let Some(&tag) = hyp.get(&(span.start, span.end)) {
            c.seg_correct += 1;
            if tag == span.tag {
                c.tag_correct[k] += 1;
            }
        }
        if hyp_starts.get(&span.start) == Some(&span.tag) {
            c.start_correct[k] += 1;
        }
    }
    c
}

fn corpus_counts(reference: &[TaggedSentence], hypothesis: &[TaggedSentence]) -> Result<Counts, MetricsError> {
    check_aligned(reference, hypothesis)?;
    let mut total = Counts::default();
    for (r, h) in reference.iter().zip(hypothesis) {
        total.add(&sentence_counts(r, h));
    }
    Ok(total)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Correctly segmented reference words over all reference words.
pub fn segmentation_accuracy(reference: &[TaggedSentence], hypothesis: &[TaggedSentence]) -> Result<f64, MetricsError> {
    let c = corpus_counts(reference, hypothesis)?;
    Ok(ratio(c.seg_correct, c.ref_words))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TagScore {
    pub tag: PosTag,
    pub correct: usize,
    pub total: usize,
    /// `None` when the tag never occurs in the reference.
    pub accuracy: Option<f64>,
    /// Diagnostic: the hypothesis opens a word with this tag at the reference
    /// word's first character, whatever its extent.
    pub word_start_correct: usize,
    pub word_start_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TagAccuracy {
    /// One row per tag, in training-set frequency order.
    pub per_tag: Vec<TagScore>,
    pub overall: f64,
    pub word_start_overall: f64,
}

fn tag_accuracy_from(c: &Counts) -> TagAccuracy {
    let per_tag = PosTag::FREQUENCY_ORDER
        .iter()
        .map(|&tag| {
            let k = tag.code();
            let total = c.tag_total[k];
            TagScore {
                tag,
                correct: c.tag_correct[k],
                total,
                accuracy: (total > 0).then(|| ratio(c.tag_correct[k], total)),
                word_start_correct: c.start_correct[k],
                word_start_accuracy: (total > 0).then(|| ratio(c.start_correct[k], total)),
            }
        })
        .collect();
    let total: usize = c.tag_total.iter().sum();
    TagAccuracy {
        per_tag,
        overall: ratio(c.tag_correct.iter().sum(), total),
        word_start_overall: ratio(c.start_correct.iter().sum(), total),
    }
}

pub fn tag_accuracy(reference: &[TaggedSentence], hypothesis: &[TaggedSentence]) -> Result<TagAccuracy, MetricsError> {
    Ok(tag_accuracy_from(&corpus_counts(reference, hypothesis)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorDecomposition {
    pub eps_s: f64,
    pub eps_p: f64,
    pub eps_t: f64,
}

/// Two-stage pipeline estimate: segmentation error plus tagging error.
pub fn error_decomposition(seg_acc: f64, pos_acc: f64) -> ErrorDecomposition {
    let eps_s = 1.0 - seg_acc;
    let eps_p = 1.0 - pos_acc;
    ErrorDecomposition { eps_s, eps_p, eps_t: eps_s + eps_p }
}

/// Split of a joint model's total error. Its tagging accuracy already counts
/// missegmented words as wrong, so the total is `1 - pos_acc` and the tagging
/// share is what remains after the segmentation share.
pub fn joint_error_decomposition(seg_acc: f64, pos_acc: f64) -> ErrorDecomposition {
    let eps_s = 1.0 - seg_acc;
    let eps_p = (1.0 - pos_acc) - eps_s;
    ErrorDecomposition { eps_s, eps_p, eps_t: eps_s + eps_p }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SegmentationScores {
    pub correct: usize,
    pub reference_words: usize,
    pub hypothesis_words: usize,
    /// Recall over reference words; the headline number.
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub segmentation: SegmentationScores,
    pub per_tag: Vec<TagScore>,
    pub overall_accuracy: f64,
    pub word_start_accuracy: f64,
    pub repaired_first_label_count: usize,
    pub errors: ErrorDecomposition,
}

impl EvalReport {
    pub fn seg_accuracy(&self) -> f64 {
        self.segmentation.accuracy
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let pct = |x: f64| format!("{:.2}%", 100.0 * x);
        let _ = writeln!(s, "Word segmentation ({} sentences)", self.sentences);
        let seg = &self.segmentation;
        let _ = writeln!(s, "  accuracy   {:>8}  ({}/{})", pct(seg.accuracy), seg.correct, seg.reference_words);
        let _ = writeln!(s, "  precision  {:>8}  ({}/{})", pct(seg.precision), seg.correct, seg.hypothesis_words);
        let _ = writeln!(s, "  F1         {:>8}", pct(seg.f1));
        let _ = writeln!(s);
        let _ = writeln!(s, "POS tag accuracy (span and tag)        word-start diagnostic");
        let _ = writeln!(s, "  {:<5} {:>8} {:>13}        {:>8}", "tag", "acc", "correct/total", "acc");
        for t in &self.per_tag {
            let acc = t.accuracy.map_or_else(|| "-".to_string(), pct);
            let start = t.word_start_accuracy.map_or_else(|| "-".to_string(), pct);
            let frac = format!("{}/{}", t.correct, t.total);
            let _ = writeln!(s, "  {:<5} {:>8} {:>13}        {:>8}", t.tag.name(), acc, frac, start);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Overall POS accuracy {:>8}", pct(self.overall_accuracy));
        let _ = writeln!(s, "  word-start diagnostic {:>8}", pct(self.word_start_accuracy));
        let _ = writeln!(s);
        let e = &self.errors;
        let _ = writeln!(
            s,
            "Error split: segmentation {} + tagging {} = total {}",
            pct(e.eps_s),
            pct(e.eps_p),
            pct(e.eps_t)
        );
        if self.repaired_first_label_count > 0 {
            let _ = writeln!(s, "Sentences repaired (leading NS label): {}", self.repaired_first_label_count);
        }
        s
    }

    /// Line-delimited JSON records: one summary line, then one per tag.
    pub fn to_records(&self) -> Vec<String> {
        let summary = serde_json::json!({
            "record": "summary",
            "sentences": self.sentences,
            "segmentation": self.segmentation,
            "overall_accuracy": self.overall_accuracy,
            "word_start_accuracy": self.word_start_accuracy,
            "repaired_first_label_count": self.repaired_first_label_count,
            "errors": self.errors,
        });
        let mut out = vec![summary.to_string()];
        for t in &self.per_tag {
            let mut v = serde_json::to_value(t).expect("tag score serializes");
            v["record"] = serde_json::Value::from("tag");
            out.push(v.to_string());
        }
        out
    }
}

/// Score hypotheses against references. `repairs` is the number of decoded
/// sentences whose first label had to be forced open.
pub fn evaluate_predictions(
    reference: &[TaggedSentence],
    hypothesis: &[TaggedSentence],
    repairs: usize,
) -> Result<EvalReport, MetricsError> {
    let c = corpus_counts(reference, hypothesis)?;
    let accuracy = ratio(c.seg_correct, c.ref_words);
    let precision = ratio(c.seg_correct, c.hyp_words);
    let f1 = if accuracy + precision > 0.0 { 2.0 * accuracy * precision / (accuracy + precision) } else { 0.0 };
    let tags = tag_accuracy_from(&c);
    Ok(EvalReport {
        sentences: reference.len(),
        segmentation: SegmentationScores {
            correct: c.seg_correct,
            reference_words: c.ref_words,
            hypothesis_words: c.hyp_words,
            accuracy,
            precision,
            f1,
        },
        errors: joint_error_decomposition(accuracy, tags.overall),
        per_tag: tags.per_tag,
        overall_accuracy: tags.overall,
        word_start_accuracy: tags.word_start_overall,
        repaired_first_label_count: repairs,
    })
}

/// Segment and tag the character stream of every reference sentence.
/// Returns the hypotheses and the number of repaired sentences.
pub fn predict_corpus(
    m: &ModelParams,
    corpus: &[TaggedSentence],
    vocab: &CharVocab,
) -> Result<(Vec<TaggedSentence>, usize), MetricsError> {
    let decoded: Vec<(TaggedSentence, bool)> = corpus
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let chars = s.chars();
            let labels =
                predict_tags(m, &vocab.encode_chars(&chars)).map_err(|source| MetricsError::Network { index, source })?;
            let d = decode_labels(&chars, &labels).expect("labels match characters");
            Ok((d.sentence, d.repaired))
        })
        .collect::<Result<_, MetricsError>>()?;
    let repairs = decoded.iter().filter(|(_, r)| *r).count();
    Ok((decoded.into_iter().map(|(s, _)| s).collect(), repairs))
}

pub fn evaluate(m: &ModelParams, corpus: &[TaggedSentence], vocab: &CharVocab) -> Result<EvalReport, MetricsError> {
    let (hyp, repairs) = predict_corpus(m, corpus, vocab)?;
    evaluate_predictions(corpus, &hyp, repairs)
}
