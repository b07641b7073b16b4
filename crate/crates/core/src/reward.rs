//! BLEU on token-id sequences.
//!
//! [`sentence_bleu`] is the smoothed per-sentence score used as the gold
//! rating: unigram precision is left as is, higher orders get add-one
//! smoothing on both counts ("smoothing 2" of Chen & Cherry, 2014), and the
//! brevity penalty adds one to both lengths. [`corpus_bleu`] is plain
//! BLEU-4 over pooled counts.

use std::collections::HashMap;

use crate::error::{ensure, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BleuBreakdown {
    /// Modified precisions for orders 1..=4.
    pub precisions: [f64; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
    pub brevity_penalty: f64,
    pub score: f64,
}

fn ngram_counts(tokens: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the number of candidate n-grams.
fn clipped_matches(hyp: &[u32], reference: &[u32], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, hyp.len().saturating_sub(n - 1))
}

fn geometric_mean_score(precisions: &[f64; MAX_ORDER], bp: f64) -> f64 {
    if precisions.iter().any(|&p| p <= 0.0) {
        return 0.0;
    }
    let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
    (bp * log_mean.exp()).clamp(0.0, 1.0)
}

pub fn sentence_bleu(hyp: &[u32], reference: &[u32]) -> Result<BleuBreakdown> {
    ensure!(!reference.is_empty(), "reference is empty");
    let c = hyp.len();
    let r = reference.len();
    let brevity_penalty = if c + 1 >= r + 1 {
        1.0
    } else {
        (1.0 - (r + 1) as f64 / (c + 1) as f64).exp()
    };

    let mut precisions = [0.0; MAX_ORDER];
    if c > 0 {
        for n in 1..=MAX_ORDER {
            let (m, total) = clipped_matches(hyp, reference, n);
            precisions[n - 1] = if n == 1 {
                m as f64 / total as f64
            } else {
                (m + 1) as f64 / (total + 1) as f64
            };
        }
    }
    let score = if c == 0 {
        0.0
    } else {
        geometric_mean_score(&precisions, brevity_penalty)
    };
    Ok(BleuBreakdown {
        precisions,
        hyp_len: c,
        ref_len: r,
        brevity_penalty,
        score,
    })
}

/// Unsmoothed BLEU-4 with counts pooled over the whole corpus.
pub fn corpus_bleu<H, R>(hyps: &[H], refs: &[R]) -> Result<f64>
where
    H: AsRef<[u32]>,
    R: AsRef<[u32]>,
{
    ensure!(
        hyps.len() == refs.len(),
        "corpus BLEU needs equal counts, got {} hypotheses and {} references",
        hyps.len(),
        refs.len()
    );
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        let (h, rf) = (h.as_ref(), rf.as_ref());
        ensure!(!rf.is_empty(), "empty reference in corpus");
        c += h.len();
        r += rf.len();
        for n in 1..=MAX_ORDER {
            let (m, t) = clipped_matches(h, rf, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    if c == 0 {
        return Ok(0.0);
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(geometric_mean_score(&precisions, bp))
}
