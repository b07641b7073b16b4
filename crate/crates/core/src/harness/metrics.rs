use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::SentencePair;
use crate::diffcore::SeededRng;
use crate::error::{ensure, Result};
use crate::exec::map_indexed;
use crate::reward::{corpus_bleu, sentence_bleu};
use crate::seq2seq::{strip_eos, Seq2Seq};

/// Un-perturbed sentence BLEU of the sampled `hyp` (EOS ignored).
pub fn sample_bleu(hyp: &[u32], pair: &SentencePair) -> Result<f64> {
    Ok(sentence_bleu(strip_eos(hyp), pair.reference())?.score)
}

/// Mean sentence BLEU of one sampled translation per pair, pair `i`
/// drawing from `root.fork_index(rounds[i])`.
pub fn sampled_bleu_at(model: &Seq2Seq, pairs: &[&SentencePair], rounds: &[u64], root: &SeededRng) -> Result<f64> {
    ensure!(!pairs.is_empty(), "cannot score an empty split");
    ensure!(pairs.len() == rounds.len(), "one round per pair required");
    let scores = map_indexed(pairs.len(), |i| {
        let p = pairs[i];
        let mut rng = root.fork_index(rounds[i]);
        let y = model.sample(&p.src, &mut rng, model.config.decode_limit(p.src.len()))?;
        sample_bleu(&y.tokens, p)
    });
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / pairs.len() as f64)
}

/// Per-Sentence BLEU: mean smoothed BLEU of sampled (not greedy)
/// translations, one per pair.
pub fn per_sentence_bleu_metric(model: &Seq2Seq, pairs: &[&SentencePair], rng: &SeededRng) -> Result<f64> {
    let rounds: Vec<u64> = (0..pairs.len() as u64).collect();
    sampled_bleu_at(model, pairs, &rounds, rng)
}

pub fn greedy_translations(model: &Seq2Seq, pairs: &[&SentencePair]) -> Result<Vec<Vec<u32>>> {
    map_indexed(pairs.len(), |i| {
        let src = &pairs[i].src;
        let y = model.greedy_decode(src, model.config.decode_limit(src.len()))?;
        Ok(strip_eos(&y).to_vec())
    })
    .into_iter()
    .collect()
}

/// Heldout BLEU: corpus BLEU of greedy decodes.
pub fn heldout_bleu_metric(model: &Seq2Seq, pairs: &[&SentencePair]) -> Result<f64> {
    ensure!(!pairs.is_empty(), "cannot score an empty split");
    let hyps = greedy_translations(model, pairs)?;
    let refs: Vec<&[u32]> = pairs.iter().map(|p| p.reference()).collect();
    corpus_bleu(&hyps, &refs)
}

pub fn delta_metric(after: f64, reference: f64) -> f64 {
    after - reference
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Two-sided 95% Student-t interval: `(mean, half_width)`.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    ensure!(values.len() >= 2, "confidence interval needs at least 2 values, got {}", values.len());
    let n = values.len() as f64;
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Ok((m, t * var.sqrt() / n.sqrt()))
}
