//! Desk-scale training runs on the cipher task. Slow-ish (a few minutes in
//! the optimized test profile); the pretraining cache is shared across the
//! tests in this binary.

use banditseq::bandit::{pretrain_supervised, PretrainConfig};
use banditseq::data::Split;
use banditseq::diffcore::SeededRng;
use banditseq::harness::{self, per_sentence_bleu_metric, presets, ExperimentResult};
use banditseq::seq2seq::Seq2Seq;
use statrs::distribution::{Binomial, DiscreteCDF};
use std::sync::OnceLock;

fn weak_run() -> &'static ExperimentResult {
    static RUN: OnceLock<ExperimentResult> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = presets::expand("table2-desk-weak").unwrap().remove(0);
        harness::run_experiment(&cfg).unwrap()
    })
}

#[test]
fn cipher_task_is_learnable() {
    let mut cfg = presets::expand("table2-desk").unwrap().remove(0);
    cfg.pretrain.epochs = 30;
    let corpus = harness::load_task(&cfg.task).unwrap();
    let pre = harness::pretrain_seed(&cfg, &corpus, 1).unwrap();
    let model_cfg = cfg.seq2seq_config(corpus.src_vocab.len(), corpus.tgt_vocab.len());
    assert_eq!(model_cfg.hidden_dim, 32);
    let model = Seq2Seq::from_params(model_cfg, pre.actor.clone()).unwrap();
    let dev = corpus.split(Split::Dev);
    let bleu = per_sentence_bleu_metric(&model, &dev, &SeededRng::new(5)).unwrap();
    assert!(bleu >= 0.5, "dev per-sentence BLEU {bleu}");
}

#[test]
fn default_pretraining_loss_does_not_jump() {
    let cfg = presets::expand("table2-desk").unwrap().remove(0);
    let corpus = harness::load_task(&cfg.task).unwrap();
    let train = corpus.split(Split::Supervised);
    let dev = corpus.split(Split::Dev);
    let model_cfg = cfg.seq2seq_config(corpus.src_vocab.len(), corpus.tgt_vocab.len());
    let pcfg = PretrainConfig::default();
    for seed in 1..=5 {
        let root = SeededRng::new(seed);
        let mut m = Seq2Seq::new(model_cfg, &mut root.fork("init")).unwrap();
        let log = pretrain_supervised(&mut m, &train, &dev, &pcfg, &root.fork("train")).unwrap();
        assert_eq!(log.len(), pcfg.epochs);
        for w in log.windows(2) {
            assert!(
                w[1].train_loss <= 1.05 * w[0].train_loss,
                "seed {seed}: loss rose from {} to {} at epoch {}",
                w[0].train_loss,
                w[1].train_loss,
                w[1].epoch
            );
        }
        assert!(log.last().unwrap().train_loss < log[0].train_loss);
    }
}

#[test]
fn critic_pretraining_halves_its_loss() {
    for s in weak_run().succeeded() {
        let pre = s.records.iter().filter(|r| r.phase == "critic_pretrain").collect::<Vec<_>>();
        let (first, last) = (pre[0].loss.unwrap(), pre.last().unwrap().loss.unwrap());
        assert!(last <= 0.5 * first, "seed {}: critic loss {first} -> {last}", s.seed);
    }
}

#[test]
fn online_reward_rises_within_a_pass() {
    let run = weak_run();
    let mut wins = 0;
    let seeds = run.succeeded();
    assert_eq!(seeds.len(), 5);
    for s in &seeds {
        let steps: Vec<f64> = s.records.iter().filter(|r| r.phase == "bandit").map(|r| r.rated_reward.unwrap()).collect();
        let k = steps.len() / 10;
        let head = steps[..k].iter().sum::<f64>() / k as f64;
        let tail = steps[steps.len() - k..].iter().sum::<f64>() / k as f64;
        if tail > head {
            wins += 1;
        }
    }
    // one-sided sign test
    let p = if wins == 0 { 1.0 } else { Binomial::new(0.5, 5).unwrap().sf(wins - 1) };
    assert!(p < 0.05, "{wins}/5 seeds improved, p = {p}");
}

#[test]
fn online_bleu_matches_rated_rewards_when_unperturbed() {
    let run = weak_run();
    let batch = run.config.bandit.batch_size;
    let n_items = harness::load_task(&run.config.task).unwrap().split(Split::Bandit).len();
    for s in run.succeeded() {
        let bandit: Vec<_> = s.records.iter().filter(|r| r.phase == "bandit").collect();
        // every batch is full except possibly the last
        let mut sum = 0.0;
        for (i, r) in bandit.iter().enumerate() {
            let k = if i + 1 == bandit.len() { n_items - batch * i } else { batch };
            sum += r.rated_reward.unwrap() * k as f64;
        }
        let from_outcomes = sum / n_items as f64;
        assert!(
            (from_outcomes - s.online_by_epoch[0]).abs() < 1e-12,
            "seed {}: {from_outcomes} vs {}",
            s.seed,
            s.online_by_epoch[0]
        );
        assert_eq!(s.per_sentence_after, s.online_by_epoch[0]);
    }
}

#[test]
fn weak_pass_improves_per_sentence_bleu() {
    let d = weak_run().per_sentence_deltas();
    let (m, h) = harness::confidence_interval(&d).unwrap();
    assert!(m - h > 0.0, "delta {m} ± {h}");
}
