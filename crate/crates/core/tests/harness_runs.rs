use banditseq::harness::{self, presets, report, PER_SENTENCE_BLEU};

fn smoke() -> harness::ExperimentConfig {
    presets::expand("smoke").unwrap().remove(0)
}

#[test]
fn zero_bandit_epochs_give_zero_delta() {
    let mut cfg = smoke();
    cfg.bandit_epochs = 0;
    let r = harness::run_experiment(&cfg).unwrap();
    assert_eq!(r.succeeded().len(), cfg.seeds.len());
    assert!(r.per_sentence_deltas().iter().all(|&d| d == 0.0));
    assert!(r.heldout_deltas().iter().all(|&d| d == 0.0));
}

#[test]
fn rerun_gives_byte_identical_summary() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        harness::clear_pretrain_cache();
        let mut cfg = smoke();
        cfg.output_dir = Some(dir.path().to_path_buf());
        harness::run_experiment(&cfg).unwrap();
    }
    let sa = std::fs::read(a.path().join("summary.csv")).unwrap();
    let sb = std::fs::read(b.path().join("summary.csv")).unwrap();
    assert!(!sa.is_empty());
    assert_eq!(sa, sb);
    for f in ["records.csv", "online_reward.svg", "config.json"] {
        assert!(a.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn summary_has_per_seed_and_aggregate_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke();
    cfg.output_dir = Some(dir.path().to_path_buf());
    let r = harness::run_experiment(&cfg).unwrap();
    let rows = report::read_summary_csv(dir.path().join("summary.csv")).unwrap();
    assert_eq!(rows, r.summary_rows());
    let deltas: Vec<_> = rows
        .iter()
        .filter(|row| row.metric == PER_SENTENCE_BLEU && row.phase == "delta")
        .collect();
    assert_eq!(deltas.len(), cfg.seeds.len() + 1);
    let agg = deltas.iter().find(|row| row.seed == "mean").unwrap();
    let (m, h) = harness::confidence_interval(&r.per_sentence_deltas()).unwrap();
    assert_eq!(agg.value, m);
    assert_eq!(agg.ci_low, Some(m - h));
    assert_eq!(agg.ci_high, Some(m + h));
    for row in &rows {
        assert_eq!(row.experiment_id, "smoke");
        assert_eq!(row.preset, "smoke");
    }
}

#[test]
fn config_written_alongside_results_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke();
    cfg.output_dir = Some(dir.path().to_path_buf());
    harness::run_experiment(&cfg).unwrap();
    let back = harness::ExperimentConfig::load(dir.path().join("config.json")).unwrap();
    assert_eq!(back.seeds, cfg.seeds);
    assert_eq!(back.task, cfg.task);
}
