use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use banditseq::data::{gen_cipher_corpus, Split};
use banditseq::diffcore::{load_params, save_params, SeededRng};
use banditseq::harness::{
    self, confidence_interval, heldout_bleu_metric, per_sentence_bleu_metric, presets, report, ExperimentConfig,
    ExperimentResult, SweepPoint, PER_SENTENCE_BLEU,
};
use banditseq::reward::{corpus_bleu, sentence_bleu};
use banditseq::seq2seq::Seq2Seq;
use banditseq::Error;

#[derive(Parser)]
#[command(name = "banditseq", version, about = "Bandit training of attention encoder-decoders from simulated ratings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or ingest) the task corpus and write it as text.
    GenData(ConfigArgs),
    /// Pretrain actor and critic for every seed and save checkpoints.
    Pretrain(ConfigArgs),
    /// Run the full protocol and write summary, records and charts.
    BanditTrain(ConfigArgs),
    /// Score a saved actor checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print per-line sentence BLEU and corpus BLEU as CSV.
    Rate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref", value_name = "REF")]
        reference: PathBuf,
    },
    /// Render charts from records.csv and/or sweep summary files.
    Report {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        summary: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn load_configs(args: &ConfigArgs) -> anyhow::Result<Vec<ExperimentConfig>> {
    let mut configs = match (&args.config, &args.preset) {
        (Some(path), None) => vec![ExperimentConfig::load(path)?],
        (None, Some(name)) => presets::expand(name)?,
        _ => return Err(Error::Config("pass exactly one of --config or --preset".into()).into()),
    };
    let many = configs.len() > 1;
    for c in &mut configs {
        if let Some(seed) = args.seed {
            c.seeds = vec![seed];
        }
        if let Some(dir) = &args.out_dir {
            c.output_dir = Some(if many { dir.join(&c.experiment_id) } else { dir.clone() });
        }
        c.validate()?;
    }
    Ok(configs)
}

fn out_dir(c: &ExperimentConfig) -> PathBuf {
    c.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&c.experiment_id))
}

fn gen_data(args: &ConfigArgs) -> anyhow::Result<()> {
    for c in load_configs(args)? {
        let dir = out_dir(&c);
        let corpus = harness::load_task(&c.task)?;
        corpus.save_text(&dir)?;
        if let Some(spec) = c.task.cipher_spec() {
            let (_, meta) = gen_cipher_corpus(&spec)?;
            fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        }
        let counts = corpus.split_counts();
        println!("split,pairs");
        for (s, n) in Split::ALL.iter().zip(counts) {
            println!("{},{n}", s.name());
        }
    }
    Ok(())
}

fn pretrain(args: &ConfigArgs) -> anyhow::Result<()> {
    for c in load_configs(args)? {
        let dir = out_dir(&c);
        fs::create_dir_all(&dir)?;
        let corpus = harness::load_task(&c.task)?;
        corpus.src_vocab.save(dir.join("vocab.src"))?;
        corpus.tgt_vocab.save(dir.join("vocab.tgt"))?;
        println!("seed,epoch,train_loss,dev_perplexity,lr");
        for &seed in &c.seeds {
            let p = harness::pretrain_seed(&c, &corpus, seed)?;
            save_params(&p.actor, dir.join(format!("actor_seed{seed}.bsq")))?;
            save_params(&p.critic, dir.join(format!("critic_seed{seed}.bsq")))?;
            for l in &p.pretrain_log {
                println!("{seed},{},{},{},{}", l.epoch, l.train_loss, l.dev_perplexity, l.lr);
            }
        }
    }
    Ok(())
}

fn sweep_points(results: &[ExperimentResult]) -> Option<(&'static str, Vec<SweepPoint>)> {
    let mut name = None;
    let mut points = Vec::new();
    for r in results {
        let (n, x) = presets::sweep_parameter(&r.config)?;
        name = Some(n);
        let d = r.per_sentence_deltas();
        let (mean, half_width) = confidence_interval(&d).unwrap_or((d.first().copied().unwrap_or(f64::NAN), 0.0));
        points.push(SweepPoint { x, mean, half_width });
    }
    Some((name?, points))
}

fn bandit_train(args: &ConfigArgs) -> anyhow::Result<()> {
    let configs = load_configs(args)?;
    let mut results = Vec::new();
    println!("experiment_id,seeds_ok,delta_per_sentence_bleu,ci_low,ci_high");
    for mut c in configs {
        c.output_dir = Some(out_dir(&c));
        let r = harness::run_experiment(&c)?;
        for (seed, res) in &r.seeds {
            if let Err(e) = res {
                eprintln!("{}: seed {seed} failed: {e}", c.experiment_id);
            }
        }
        let d = r.per_sentence_deltas();
        match confidence_interval(&d) {
            Ok((m, h)) => println!("{},{},{m},{},{}", c.experiment_id, d.len(), m - h, m + h),
            Err(_) => println!("{},{},{},,", c.experiment_id, d.len(), d.first().copied().unwrap_or(f64::NAN)),
        }
        if r.succeeded().is_empty() {
            bail!("every seed of {} failed", c.experiment_id);
        }
        results.push(r);
    }
    if results.len() > 1 {
        if let Some((param, points)) = sweep_points(&results) {
            let base = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
            fs::create_dir_all(&base)?;
            let preset = results[0].config.preset.clone();
            fs::write(
                base.join(format!("{preset}.svg")),
                report::sweep_svg(&format!("{preset}: delta {PER_SENTENCE_BLEU}"), param, &points),
            )?;
        }
    }
    Ok(())
}

fn evaluate(args: &ConfigArgs, checkpoint: &Path) -> anyhow::Result<()> {
    let c = load_configs(args)?.remove(0);
    let corpus = harness::load_task(&c.task)?;
    let params = load_params(checkpoint)?;
    let model = Seq2Seq::from_params(c.seq2seq_config(corpus.src_vocab.len(), corpus.tgt_vocab.len()), params)?;
    let test = corpus.split(Split::Test);
    let seed = args.seed.unwrap_or(c.seeds[0]);
    println!("metric,value");
    println!("heldout_bleu,{}", heldout_bleu_metric(&model, &test)?);
    println!("per_sentence_bleu,{}", per_sentence_bleu_metric(&model, &test, &SeededRng::new(seed))?);
    Ok(())
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn rate(hyp: &Path, reference: &Path) -> anyhow::Result<()> {
    let hyps = read_lines(hyp)?;
    let refs = read_lines(reference)?;
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "line count mismatch: {} hypotheses, {} references",
            hyps.len(),
            refs.len()
        ))
        .into());
    }
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut encode = |line: &str| -> Vec<u32> {
        line.split_whitespace()
            .map(|w| {
                let next = ids.len() as u32;
                *ids.entry(w.to_string()).or_insert(next)
            })
            .collect()
    };
    let h: Vec<Vec<u32>> = hyps.iter().map(|l| encode(l)).collect();
    let r: Vec<Vec<u32>> = refs.iter().map(|l| encode(l)).collect();
    println!("line,sentence_bleu");
    for (i, (h, r)) in h.iter().zip(&r).enumerate() {
        let s = sentence_bleu(h, r).with_context(|| format!("line {}", i + 1))?;
        println!("{},{}", i + 1, s.score);
    }
    println!("corpus,{}", corpus_bleu(&h, &r)?);
    Ok(())
}

fn render(records: Option<&Path>, summaries: &[PathBuf], dir: &Path) -> anyhow::Result<()> {
    if records.is_none() && summaries.is_empty() {
        return Err(Error::Config("pass --records and/or --summary".into()).into());
    }
    fs::create_dir_all(dir)?;
    if let Some(path) = records {
        let recs = report::read_records_csv(path)?;
        harness::emit_report(&recs, harness::ReportFormat::Svg, dir.join("online_reward.svg"))?;
    }
    if !summaries.is_empty() {
        let mut points = Vec::new();
        for path in summaries {
            let rows = report::read_summary_csv(path)?;
            let row = rows
                .iter()
                .find(|r| r.seed == "mean" && r.metric == PER_SENTENCE_BLEU && r.phase == "delta")
                .ok_or_else(|| anyhow!("{} has no aggregate delta row", path.display()))?;
            let cfg_path = path.with_file_name("config.json");
            let cfg = ExperimentConfig::load(&cfg_path)?;
            let (_, x) = presets::sweep_parameter(&cfg)
                .ok_or_else(|| anyhow!("{} is not a single-perturbation run", cfg_path.display()))?;
            let half = row.ci_high.map_or(0.0, |hi| hi - row.value);
            points.push(SweepPoint { x, mean: row.value, half_width: half });
        }
        points.sort_by(|a, b| a.x.total_cmp(&b.x));
        fs::write(dir.join("sweep.svg"), report::sweep_svg("delta per-sentence BLEU", "parameter", &points))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Pretrain(a) => pretrain(&a),
        Command::BanditTrain(a) => bandit_train(&a),
        Command::Evaluate { cfg, checkpoint } => evaluate(&cfg, &checkpoint),
        Command::Rate { hyp, reference } => rate(&hyp, &reference),
        Command::Report { records, summary, out_dir } => render(records.as_deref(), &summary, &out_dir),
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    matches!(e.downcast_ref::<Error>(), Some(Error::Config(_)))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 1 } else { 2 })
        }
    }
}
