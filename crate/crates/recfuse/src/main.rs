use clap::{Args, Parser, Subcommand};
use recfuse::dataset::{
    read_samples_jsonl, split_temporal, synth_generate, write_samples_jsonl, ItemProfile, Sample,
    SynthConfig,
};
use recfuse::gat::{train_gat, GatAblation, GatConfig, GatModel, GatTrainConfig, GatVocabs};
use recfuse::harness::{
    run_experiment, summary_line, sweep, write_reports, ExperimentConfig,
};
use recfuse::kb::KnowledgeBase;
use recfuse::lm::{finetune, score_prompts, LmConfig, LmTrainConfig, LoraConfig, SurrogateLM, Tokenizer};
use recfuse::numerics::Tensor;
use recfuse::rap::{
    build_prompt, read_prompts_jsonl, write_prompts_jsonl, PromptConfig, PromptMode,
    PromptTemplates,
};
use serde::{Deserialize, Serialize};
use std::error::Error;
use std::io::{BufRead, Write as _};
use std::path::PathBuf;

type Anywhere<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "recfuse", about = "Graph-expert + prompt-LM recommendation pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the planted-signal synthetic dataset and temporal splits.
    Synth(SynthArgs),
    /// Build the item knowledge base from an items JSONL file.
    BuildKb(BuildKbArgs),
    /// Render prompts for a samples file against a knowledge base.
    BuildPrompts(BuildPromptsArgs),
    /// Train the graph-attention expert.
    TrainGat(TrainGatArgs),
    /// Finetune the surrogate LM adapters on rendered prompts.
    TrainLlm(TrainLlmArgs),
    /// Score prompts with a trained LM (optionally injecting expert embeddings).
    Infer(InferArgs),
    /// Compute AUC / logloss / accuracy from a scores JSONL file.
    Eval(EvalArgs),
    /// Run the full pipeline end to end and write metrics + timings.
    Run(RunArgs),
    /// Time a small end-to-end run and print per-step / per-sample costs.
    Bench(RunArgs),
    /// Data-efficiency sweep over LM training budgets.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    n_users: usize,
    #[arg(long, default_value_t = 120)]
    n_items: usize,
    #[arg(long, default_value_t = 40)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for train/valid/test/items JSONL files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildKbArgs {
    /// JSONL of item profiles.
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = recfuse::kb::DEFAULT_KB_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct BuildPromptsArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// rap | plain
    #[arg(long, default_value = "rap")]
    mode: String,
    #[arg(long, default_value_t = 15)]
    k_ret: usize,
    #[arg(long, default_value_t = 15)]
    k_rec: usize,
    /// Leave ratings out of prompt text.
    #[arg(long)]
    no_ratings: bool,
    /// Optional template JSON overriding the shipped wording.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct TrainGatArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 15)]
    k: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero out the rating feature channel.
    #[arg(long)]
    drop_rating: bool,
    /// Zero out the timestamp feature channel.
    #[arg(long)]
    drop_timestamp: bool,
}

#[derive(Args)]
struct TrainLlmArgs {
    /// Prompts JSONL (aligned with --samples line by line).
    #[arg(long)]
    prompts: PathBuf,
    /// Samples JSONL used to compute expert embeddings.
    #[arg(long)]
    samples: PathBuf,
    /// Trained expert checkpoint; omit to train without injection.
    #[arg(long)]
    gat: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 1024)]
    max_len: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_vocab: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    lm: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    gat: Option<PathBuf>,
    /// Output JSONL of {score, label}.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL of {score, label}.
    #[arg(long)]
    scores: PathBuf,
    /// Optional metrics JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for metrics.json / timings.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// LM training budgets, e.g. --budgets 64 256 1024
    #[arg(long, num_args = 1.., required = true)]
    budgets: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    score: f64,
    label: u8,
}

fn read_items_jsonl(path: &PathBuf) -> Anywhere<Vec<ItemProfile>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn load_config(path: &Option<PathBuf>) -> Anywhere<ExperimentConfig> {
    Ok(match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    })
}

fn expert_embeddings(
    gat: &Option<PathBuf>,
    samples: &[Sample],
) -> Anywhere<Vec<Option<Tensor>>> {
    match gat {
        Some(path) => {
            let model = GatModel::load(path)?;
            let mut out = Vec::with_capacity(samples.len());
            for s in samples {
                out.push(Some(model.expert_embedding(s)?));
            }
            Ok(out)
        }
        None => Ok(vec![None; samples.len()]),
    }
}

fn main() -> Anywhere<()> {
    match Cli::parse().cmd {
        Cmd::Synth(a) => {
            let ds = synth_generate(&SynthConfig {
                n_users: a.n_users,
                n_items: a.n_items,
                horizon: a.horizon,
                seed: a.seed,
                ..Default::default()
            })?;
            let samples = ds.build_samples(3)?;
            let split = split_temporal(samples, (0.8, 0.1, 0.1))?;
            std::fs::create_dir_all(&a.out)?;
            write_samples_jsonl(a.out.join("train.jsonl"), &split.train)?;
            write_samples_jsonl(a.out.join("valid.jsonl"), &split.valid)?;
            write_samples_jsonl(a.out.join("test.jsonl"), &split.test)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(a.out.join("items.jsonl"))?);
            for item in ds.items.values() {
                serde_json::to_writer(&mut f, item)?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
            println!(
                "wrote {} train / {} valid / {} test samples, {} items",
                split.train.len(),
                split.valid.len(),
                split.test.len(),
                ds.items.len()
            );
        }
        Cmd::BuildKb(a) => {
            let items = read_items_jsonl(&a.items)?;
            let kb = KnowledgeBase::build(&items, a.dim, a.seed)?;
            kb.save(&a.out)?;
            println!("knowledge base: {} items, dim {}", kb.len(), kb.dim());
        }
        Cmd::BuildPrompts(a) => {
            let samples = read_samples_jsonl(&a.samples)?;
            let kb = KnowledgeBase::load(&a.kb)?;
            let templates = match &a.templates {
                Some(p) => PromptTemplates::from_file(p)?,
                None => PromptTemplates::shipped(),
            };
            let cfg = PromptConfig {
                mode: match a.mode.as_str() {
                    "plain" => PromptMode::Plain,
                    _ => PromptMode::Rap,
                },
                k_ret: a.k_ret,
                k_rec: a.k_rec,
                include_ratings: !a.no_ratings,
            };
            let prompts: Result<Vec<_>, _> = samples
                .iter()
                .map(|s| build_prompt(s, &kb, &cfg, &templates))
                .collect();
            let prompts = prompts?;
            write_prompts_jsonl(&a.out, &prompts)?;
            println!("wrote {} prompts", prompts.len());
        }
        Cmd::TrainGat(a) => {
            let train = read_samples_jsonl(&a.train)?;
            let valid = read_samples_jsonl(&a.valid)?;
            let cfg = GatConfig {
                d: a.d,
                layers: a.layers,
                heads: a.heads,
                k: a.k,
                ablation: GatAblation {
                    drop_rating: a.drop_rating,
                    drop_timestamp: a.drop_timestamp,
                },
                ..Default::default()
            };
            let model = GatModel::new(cfg, GatVocabs::build(&train), a.seed)?;
            let tc = GatTrainConfig {
                lr: a.lr,
                batch_size: a.batch_size,
                max_epochs: a.max_epochs,
                patience: a.patience,
                seed: a.seed,
                ..Default::default()
            };
            let trained = train_gat(model, &train, &valid, &tc)?;
            trained.model.save(&a.out)?;
            println!(
                "trained {} epochs, best valid auc {:.4}",
                trained.epochs_run, trained.best_valid_auc
            );
        }
        Cmd::TrainLlm(a) => {
            let prompts = read_prompts_jsonl(&a.prompts)?;
            let samples = read_samples_jsonl(&a.samples)?;
            if prompts.len() != samples.len() {
                return Err("prompts and samples files must align line by line".into());
            }
            let experts = expert_embeddings(&a.gat, &samples)?;
            let d_gat = experts
                .iter()
                .flatten()
                .next()
                .map(|t| t.numel())
                .unwrap_or(GatConfig::default().d);
            let corpus: Vec<&str> = prompts.iter().map(|p| p.text.as_str()).collect();
            let tokenizer = Tokenizer::build(&corpus, a.max_vocab);
            let cfg = LmConfig {
                d: a.d,
                blocks: a.blocks,
                heads: a.heads,
                max_len: a.max_len,
                d_gat,
            };
            let mut lm = SurrogateLM::new(cfg, tokenizer, a.seed)?;
            lm.lora_wrap(LoraConfig::default(), a.seed.wrapping_add(1))?;
            let tc = LmTrainConfig {
                lr: a.lr,
                batch_size: a.batch_size,
                epochs: a.epochs,
                seed: a.seed,
                ..Default::default()
            };
            let report = finetune(&mut lm, &prompts, &experts, &tc)?;
            lm.save(&a.out)?;
            println!(
                "finetuned {} steps, last epoch mean loss {:.4}",
                report.steps,
                report.epoch_mean_loss.last().copied().unwrap_or(f64::NAN)
            );
        }
        Cmd::Infer(a) => {
            let lm = SurrogateLM::load(&a.lm)?;
            let prompts = read_prompts_jsonl(&a.prompts)?;
            let samples = read_samples_jsonl(&a.samples)?;
            if prompts.len() != samples.len() {
                return Err("prompts and samples files must align line by line".into());
            }
            let experts = expert_embeddings(&a.gat, &samples)?;
            let scores = score_prompts(&lm, &prompts, &experts)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
            for (score, prompt) in scores.iter().zip(&prompts) {
                serde_json::to_writer(
                    &mut f,
                    &ScoreRow {
                        score: *score,
                        label: prompt.label,
                    },
                )?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
            println!("scored {} prompts", scores.len());
        }
        Cmd::Eval(a) => {
            let f = std::io::BufReader::new(std::fs::File::open(&a.scores)?);
            let mut labels = Vec::new();
            let mut scores = Vec::new();
            for line in f.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: ScoreRow = serde_json::from_str(&line)?;
                labels.push(row.label);
                scores.push(row.score);
            }
            let auc = recfuse::harness::auc(&labels, &scores)?;
            let logloss = recfuse::harness::logloss(&labels, &scores)?;
            let acc = recfuse::harness::accuracy(&labels, &scores, 0.5)?;
            println!("auc {auc:.4}  logloss {logloss:.4}  acc {acc:.4}  n {}", labels.len());
            if let Some(out) = a.out {
                std::fs::write(
                    out,
                    serde_json::to_string_pretty(&serde_json::json!({
                        "auc": auc, "logloss": logloss, "acc": acc, "n": labels.len(),
                    }))?,
                )?;
            }
        }
        Cmd::Run(a) => {
            let cfg = load_config(&a.config)?;
            let report = run_experiment(&cfg)?;
            println!("{}", summary_line(&report));
            if let Some(dir) = a.out {
                write_reports(&dir, &report)?;
            }
        }
        Cmd::Bench(a) => {
            let cfg = load_config(&a.config)?;
            let report = run_experiment(&cfg)?;
            println!("{}", summary_line(&report));
            println!(
                "gat {:.4} s/step  lm {:.4} s/step  infer {:.4} s/sample  total {:.1} s",
                report.timing.gat_train_seconds_per_step,
                report.timing.lm_train_seconds_per_step,
                report.timing.inference_seconds_per_sample,
                report.timing.total_seconds
            );
            if let Some(dir) = a.out {
                write_reports(&dir, &report)?;
            }
        }
        Cmd::Sweep(a) => {
            let cfg = load_config(&a.config)?;
            let results = sweep(&cfg, &a.budgets, a.out.as_ref())?;
            for (n, r) in &results {
                println!("n_train {n}: auc {:.4}  logloss {:.4}", r.auc, r.logloss);
            }
        }
    }
    Ok(())
}
