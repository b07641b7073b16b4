use crate::diffcore::Gradients;
use crate::error::{ensure, Result};
use crate::exec::map_indexed;
use crate::seq2seq::{Seq2Seq, EOS};

/// Largest `V^max_len` the enumerator accepts.
pub const MAX_ENUMERATION: usize = 100_000;

/// Every sequence the sampler can return with `max_len` steps: those that
/// end at their first EOS, plus EOS-free sequences of exactly `max_len`.
pub fn enumerate_sequences(vocab: usize, max_len: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut stack: Vec<Vec<u32>> = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        for tok in 0..vocab as u32 {
            let mut next = prefix.clone();
            next.push(tok);
            if tok == EOS || next.len() == max_len {
                out.push(next);
            } else {
                stack.push(next);
            }
        }
    }
    out.sort();
    out
}

/// `∇_θ Σ_ŷ P_θ(ŷ | x) R(ŷ)` by summing over every reachable sequence.
pub fn exact_policy_gradient(
    model: &Seq2Seq,
    src: &[u32],
    reward: &(dyn Fn(&[u32]) -> Result<f64> + Sync),
    max_len: usize,
) -> Result<Gradients> {
    ensure!(max_len >= 1, "max_len must be at least 1");
    let v = model.config.tgt_vocab_size;
    let size = (v as f64).powi(max_len as i32);
    ensure!(
        size <= MAX_ENUMERATION as f64,
        "enumeration of {v}^{max_len} sequences exceeds the limit of {MAX_ENUMERATION}"
    );
    let seqs = enumerate_sequences(v, max_len);
    let parts = map_indexed(seqs.len(), |i| -> Result<Gradients> {
        let y = &seqs[i];
        let mut g = model.graph();
        let steps = g.step_log_probs(src, y)?;
        let all = g.tape.concat(&steps);
        let lp = g.tape.sum(all);
        let p = g.tape.scalar(lp).exp();
        let mut grads = g.tape.gradients(lp)?;
        grads.scale(p * reward(y)?);
        Ok(grads)
    });
    let mut total = Gradients::empty(model.params.len());
    for p in parts {
        total.add(&p?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::SeededRng;
    use crate::seq2seq::Seq2SeqConfig;

    fn tiny(v: usize) -> Seq2Seq {
        Seq2Seq::new(Seq2SeqConfig::new(5, v, 3, 3), &mut SeededRng::new(17)).unwrap()
    }

    #[test]
    fn enumeration_covers_all_mass() {
        assert_eq!(enumerate_sequences(3, 2).len(), 1 + 2 * 3);
        let m = tiny(3);
        let total: f64 = enumerate_sequences(3, 3)
            .iter()
            .map(|y| {
                let mut g = m.graph();
                let s = g.step_log_probs(&[3, 4], y).unwrap();
                s.iter().map(|&n| g.tape.scalar(n)).sum::<f64>().exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_reward_has_zero_gradient() {
        let m = tiny(3);
        let g = exact_policy_gradient(&m, &[3, 4], &|_| Ok(0.7), 2).unwrap();
        assert!(g.flatten(&m.params).iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn two_outcome_case_by_hand() {
        // vocab 2, one step: outcomes [0] and [1]; J = R0 p0 + R1 p1 and
        // ∇J = (R1 − R0) ∇p1 = (R1 − R0) p0 p1 ∇(z1 − z0) at the logits.
        let m = tiny(2);
        let (r0, r1) = (0.2, 0.9);
        let g = exact_policy_gradient(&m, &[3], &|y| Ok(if y[0] == 0 { r0 } else { r1 }), 1).unwrap();
        let probs = m.step_distribution(&[3], &[]).unwrap();
        let w_s = m.params.id("out.w_s").unwrap();
        let h = m.output_vectors(&[3], &[crate::seq2seq::BOS]).unwrap().remove(0);
        let grad = g.get(w_s).unwrap();
        let k = (r1 - r0) * probs[0] * probs[1];
        for j in 0..h.len() {
            assert!((grad.data()[j] - (-k * h[j])).abs() < 1e-14);
            assert!((grad.data()[h.len() + j] - k * h[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn too_large_rejected() {
        let m = tiny(20);
        assert!(exact_policy_gradient(&m, &[3], &|_| Ok(0.0), 4).is_err());
    }
}
