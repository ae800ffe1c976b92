//! Corpus-level TER and BLEU.
//!
//! TER here is word-level Levenshtein distance over reference length, with
//! no block-shift moves ("TER-noshift"); that keeps the metric cheap and is
//! enough for the relative comparisons this project makes. BLEU is corpus
//! BLEU-4 with add-one smoothing on orders 2–4 and the standard brevity
//! penalty. Both are micro-averaged over the corpus.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("hypothesis/reference counts differ: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("reference {index} is empty")]
    EmptyReference { index: usize },
    #[error("empty corpus")]
    EmptyCorpus,
}

/// Word-level Levenshtein distance (substitution, insertion, deletion all
/// cost 1).
pub fn edit_distance(a: &[String], b: &[String]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut row = vec![0usize; b.len() + 1];
    for (i, ta) in a.iter().enumerate() {
        row[0] = i + 1;
        for (j, tb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ta != tb);
            row[j + 1] = sub.min(prev[j + 1] + 1).min(row[j] + 1);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

fn check_corpus(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<(), MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    if refs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    for (i, r) in refs.iter().enumerate() {
        if r.is_empty() {
            return Err(MetricError::EmptyReference { index: i });
        }
    }
    Ok(())
}

/// Translation edit rate: `100 · Σ edit_distance(hyp, ref) / Σ |ref|`.
pub fn ter(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, MetricError> {
    check_corpus(hyps, refs)?;
    let edits: usize = hyps.iter().zip(refs).map(|(h, r)| edit_distance(h, r)).sum();
    let ref_len: usize = refs.iter().map(Vec::len).sum();
    Ok(100.0 * edits as f64 / ref_len as f64)
}

const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], order: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= order {
        for window in tokens.windows(order) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 in percent, with add-one smoothing on orders 2–4 and the
/// brevity penalty `exp(1 - r/c)` for short hypotheses.
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, MetricError> {
    check_corpus(hyps, refs)?;
    let mut correct = [0u64; MAX_ORDER];
    let mut total = [0u64; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, reference) in hyps.iter().zip(refs) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for order in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, order);
            for (gram, count) in ngram_counts(hyp, order) {
                total[order - 1] += count;
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                correct[order - 1] += count.min(clip);
            }
        }
    }

    if total[0] == 0 || correct[0] == 0 {
        return Ok(0.0);
    }
    let mut log_precision_sum = 0.0;
    for order in 0..MAX_ORDER {
        let (c, t) = if order == 0 {
            (correct[0] as f64, total[0] as f64)
        } else {
            (correct[order] as f64 + 1.0, total[order] as f64 + 1.0)
        };
        log_precision_sum += (c / t).ln();
    }
    let brevity = if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        return Ok(0.0);
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * (log_precision_sum / MAX_ORDER as f64).exp())
}

/// TER/BLEU summary for one decoded corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ter: f64,
    pub bleu: f64,
    pub n_examples: usize,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        format!(
            "metric,value\nter,{:.4}\nbleu,{:.4}\nn_examples,{}\n",
            self.ter, self.bleu, self.n_examples
        )
    }

    pub fn table(&self) -> String {
        format!(
            "examples : {}\nTER      : {:.2}\nBLEU     : {:.2}\n",
            self.n_examples, self.ter, self.bleu
        )
    }
}

pub fn evaluate(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<EvalReport, MetricError> {
    Ok(EvalReport {
        ter: ter(hyps, refs)?,
        bleu: bleu(hyps, refs)?,
        n_examples: refs.len(),
    })
}
