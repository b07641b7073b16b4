//! Naive sentence and corpus BLEU: n-grams are compared as slices by linear
//! scan and counts are recomputed from scratch for every candidate n-gram.

use banditseq::diffcore::SeededRng;

fn occurrences(seq: &[u32], gram: &[u32]) -> usize {
    if seq.len() < gram.len() {
        return 0;
    }
    (0..=seq.len() - gram.len()).filter(|&i| &seq[i..i + gram.len()] == gram).count()
}

/// (clipped matches, candidate n-grams)
fn oracle_counts(hyp: &[u32], reference: &[u32], n: usize) -> (u64, u64) {
    if hyp.len() < n {
        return (0, 0);
    }
    let mut seen: Vec<&[u32]> = Vec::new();
    let mut matches = 0;
    for i in 0..=hyp.len() - n {
        let g = &hyp[i..i + n];
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        matches += occurrences(hyp, g).min(occurrences(reference, g)) as u64;
    }
    (matches, (hyp.len() - n + 1) as u64)
}

pub fn oracle_sentence(hyp: &[u32], reference: &[u32]) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, c) = oracle_counts(hyp, reference, n);
        let p = if n == 1 {
            m as f64 / c as f64
        } else {
            (m as f64 + 1.0) / (c as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let (c, r) = (hyp.len() as f64 + 1.0, reference.len() as f64 + 1.0);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / 4.0).exp()
}

pub fn oracle_corpus(hyps: &[Vec<u32>], refs: &[Vec<u32>]) -> f64 {
    let mut m = [0u64; 4];
    let mut t = [0u64; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let (a, b) = oracle_counts(h, rf, n);
            m[n - 1] += a;
            t[n - 1] += b;
        }
    }
    if c == 0 || (0..4).any(|i| m[i] == 0) {
        return 0.0;
    }
    let log_sum: f64 = (0..4).map(|i| (m[i] as f64 / t[i] as f64).ln()).sum();
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / 4.0).exp()
}

pub fn random_seq(rng: &mut SeededRng, vocab: usize, min: usize, max: usize) -> Vec<u32> {
    let len = min + rng.below(max - min + 1);
    (0..len).map(|_| rng.below(vocab) as u32).collect()
}

