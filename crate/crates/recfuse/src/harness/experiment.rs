//! End-to-end orchestration: synthesize or load data, build the knowledge
//! base and prompts, train the expert and the LM, score the test split, and
//! emit reports.

use crate::dataset::{split_temporal, synth_generate, Sample, SynthConfig};
use crate::gat::{train_gat, GatConfig, GatModel, GatTrainConfig, GatVocabs};
use crate::harness::metrics::{accuracy, auc, logloss};
use crate::kb::KnowledgeBase;
use crate::lm::{finetune, score_prompts, LmConfig, LmTrainConfig, LoraConfig, SurrogateLM, Tokenizer};
use crate::numerics::Tensor;
use crate::rap::{build_prompt, PromptConfig, PromptTemplates, RapPrompt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn stage<E: std::error::Error + Send + Sync + 'static>(
    name: &'static str,
) -> impl FnOnce(E) -> HarnessError {
    move |e| HarnessError::Stage {
        stage: name,
        source: Box::new(e),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub split: (f64, f64, f64),
    pub prompt: PromptConfig,
    pub gat: GatConfig,
    pub gat_train: GatTrainConfig,
    pub lm: LmConfig,
    pub lora: LoraConfig,
    pub lm_train: LmTrainConfig,
    /// Run the language model at all; off = expert-only scoring.
    pub use_lm: bool,
    /// Inject the expert embedding into the prompt placeholder.
    pub inject: bool,
    pub kb_dim: usize,
    pub kb_seed: u64,
    /// LM training prompt budget (subset of the train split).
    pub lm_train_budget: Option<usize>,
    /// Test-set cap for the expensive LM arms.
    pub eval_budget: Option<usize>,
    pub max_vocab: Option<usize>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            split: (0.8, 0.1, 0.1),
            prompt: PromptConfig::default(),
            gat: GatConfig::default(),
            gat_train: GatTrainConfig::default(),
            lm: LmConfig::default(),
            lora: LoraConfig::default(),
            lm_train: LmTrainConfig::default(),
            use_lm: true,
            inject: true,
            kb_dim: crate::kb::DEFAULT_KB_DIM,
            kb_seed: 7,
            lm_train_budget: Some(512),
            eval_budget: Some(512),
            max_vocab: None,
            seed: 0,
        }
    }
}

/// Wall-clock numbers, reported separately from metrics.json so identical
/// runs produce identical metric files.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub gat_train_seconds_per_step: f64,
    pub lm_train_seconds_per_step: f64,
    pub inference_seconds_per_sample: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub logloss: f64,
    pub acc: f64,
    pub n_test: usize,
    pub gat_valid_auc: f64,
    pub mean_prompt_tokens: f64,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub timing: TimingReport,
}

fn cap<T: Clone>(xs: &[T], budget: Option<usize>) -> Vec<T> {
    match budget {
        Some(b) => xs.iter().take(b.max(1)).cloned().collect(),
        None => xs.to_vec(),
    }
}

fn build_prompts(
    samples: &[Sample],
    kb: &KnowledgeBase,
    prompt_cfg: &PromptConfig,
    templates: &PromptTemplates,
) -> Result<Vec<RapPrompt>, crate::rap::RapError> {
    samples
        .iter()
        .map(|s| build_prompt(s, kb, prompt_cfg, templates))
        .collect()
}

fn expert_embeddings(
    model: &GatModel,
    samples: &[Sample],
) -> Result<Vec<Option<Tensor>>, crate::gat::GatError> {
    samples
        .par_iter()
        .map(|s| model.expert_embedding(s).map(Some))
        .collect()
}

/// build-kb → build-prompts → train-gat → train-llm → infer → metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport, HarnessError> {
    let t_total = Instant::now();
    let ds = synth_generate(&cfg.synth).map_err(stage("synth"))?;
    let samples = ds.build_samples(3).map_err(stage("samples"))?;
    let split = split_temporal(samples, cfg.split).map_err(stage("split"))?;

    let items: Vec<_> = ds.items.values().cloned().collect();
    let kb = KnowledgeBase::build(&items, cfg.kb_dim, cfg.kb_seed).map_err(stage("build-kb"))?;

    // expert
    let vocabs = GatVocabs::build(&split.train);
    let model = GatModel::new(cfg.gat.clone(), vocabs, cfg.seed).map_err(stage("train-gat"))?;
    let t_gat = Instant::now();
    let trained = train_gat(model, &split.train, &split.valid, &cfg.gat_train)
        .map_err(stage("train-gat"))?;
    let gat_steps = trained
        .history
        .len()
        .max(1)
        .saturating_mul(split.train.len() / cfg.gat_train.batch_size.max(1) + 1);
    let gat_train_seconds_per_step = t_gat.elapsed().as_secs_f64() / gat_steps as f64;

    let train_lm_samples = cap(&split.train, cfg.lm_train_budget);
    let test_samples = cap(&split.test, cfg.eval_budget);
    let test_labels: Vec<u8> = test_samples.iter().map(|s| s.label).collect();

    let templates = PromptTemplates::shipped();
    let (scores, mean_prompt_tokens, lm_spp, inf_sps);
    if cfg.use_lm {
        let train_prompts = build_prompts(&train_lm_samples, &kb, &cfg.prompt, &templates)
            .map_err(stage("build-prompts"))?;
        let test_prompts = build_prompts(&test_samples, &kb, &cfg.prompt, &templates)
            .map_err(stage("build-prompts"))?;
        mean_prompt_tokens = test_prompts
            .iter()
            .map(|p| crate::rap::prompt_token_length(&p.text) as f64)
            .sum::<f64>()
            / test_prompts.len().max(1) as f64;

        let corpus: Vec<String> = train_prompts.iter().map(|p| p.text.clone()).collect();
        let tokenizer = Tokenizer::build(&corpus, cfg.max_vocab);
        let mut lm = SurrogateLM::new(cfg.lm.clone(), tokenizer, cfg.seed.wrapping_add(1))
            .map_err(stage("train-llm"))?;
        lm.lora_wrap(cfg.lora, cfg.seed.wrapping_add(2))
            .map_err(stage("train-llm"))?;

        let (train_experts, test_experts) = if cfg.inject {
            (
                expert_embeddings(&trained.model, &train_lm_samples).map_err(stage("train-llm"))?,
                expert_embeddings(&trained.model, &test_samples).map_err(stage("infer"))?,
            )
        } else {
            (
                vec![None; train_lm_samples.len()],
                vec![None; test_samples.len()],
            )
        };
        // without injection the placeholder stays an ordinary learned token
        let t_lm = Instant::now();
        let report = finetune(&mut lm, &train_prompts, &train_experts, &cfg.lm_train)
            .map_err(stage("train-llm"))?;
        lm_spp = t_lm.elapsed().as_secs_f64() / report.steps.max(1) as f64;

        let t_inf = Instant::now();
        scores = score_prompts(&lm, &test_prompts, &test_experts).map_err(stage("infer"))?;
        inf_sps = t_inf.elapsed().as_secs_f64() / test_samples.len().max(1) as f64;
    } else {
        mean_prompt_tokens = 0.0;
        lm_spp = 0.0;
        let t_inf = Instant::now();
        scores = test_samples
            .par_iter()
            .map(|s| trained.model.predict_ctr(s))
            .collect::<Result<_, _>>()
            .map_err(stage("infer"))?;
        inf_sps = t_inf.elapsed().as_secs_f64() / test_samples.len().max(1) as f64;
    }

    let auc_v = auc(&test_labels, &scores).map_err(stage("metrics"))?;
    let logloss_v = logloss(&test_labels, &scores).map_err(stage("metrics"))?;
    let acc_v = accuracy(&test_labels, &scores, 0.5).map_err(stage("metrics"))?;

    Ok(MetricsReport {
        auc: auc_v,
        logloss: logloss_v,
        acc: acc_v,
        n_test: test_samples.len(),
        gat_valid_auc: trained.best_valid_auc,
        mean_prompt_tokens,
        config: cfg.clone(),
        timing: TimingReport {
            gat_train_seconds_per_step,
            lm_train_seconds_per_step: lm_spp,
            inference_seconds_per_sample: inf_sps,
            total_seconds: t_total.elapsed().as_secs_f64(),
        },
    })
}

/// Serialize metrics.json (deterministic) and timings.json (wall clock).
pub fn write_reports(dir: &Path, report: &MetricsReport) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    std::fs::write(
        dir.join("timings.json"),
        serde_json::to_string_pretty(&report.timing)?,
    )?;
    Ok(())
}

/// Plain-text one-line summary.
pub fn summary_line(report: &MetricsReport) -> String {
    format!(
        "auc {:.4}  logloss {:.4}  acc {:.4}  n {}  gat_valid_auc {:.4}  mean_prompt_tokens {:.1}",
        report.auc, report.logloss, report.acc, report.n_test, report.gat_valid_auc,
        report.mean_prompt_tokens
    )
}

/// Data-efficiency sweep over LM training budgets; returns (budget, report)
/// pairs and writes sweep.csv when a directory is given.
pub fn sweep(
    base: &ExperimentConfig,
    budgets: &[usize],
    out_dir: Option<&PathBuf>,
) -> Result<Vec<(usize, MetricsReport)>, HarnessError> {
    let mut out = Vec::with_capacity(budgets.len());
    for &n in budgets {
        let mut cfg = base.clone();
        cfg.lm_train_budget = Some(n);
        let report = run_experiment(&cfg)?;
        out.push((n, report));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = String::from("n_train,auc,logloss,acc\n");
        for (n, r) in &out {
            csv.push_str(&format!("{n},{:.6},{:.6},{:.6}\n", r.auc, r.logloss, r.acc));
        }
        std::fs::write(dir.join("sweep.csv"), csv)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            synth: SynthConfig {
                n_users: 30,
                n_items: 30,
                horizon: 10,
                seed: 13,
                ..Default::default()
            },
            prompt: PromptConfig {
                k_ret: 3,
                k_rec: 3,
                ..Default::default()
            },
            gat: GatConfig {
                d: 8,
                layers: 1,
                heads: 2,
                k: 4,
                ..Default::default()
            },
            gat_train: GatTrainConfig {
                max_epochs: 2,
                patience: 5,
                batch_size: 32,
                ..Default::default()
            },
            lm: LmConfig {
                d: 16,
                blocks: 1,
                heads: 2,
                max_len: 128,
                d_gat: 8,
            },
            lm_train: LmTrainConfig {
                batch_size: 16,
                ..Default::default()
            },
            lm_train_budget: Some(32),
            eval_budget: Some(32),
            seed: 1,
            ..Default::default()
        }
    }

    #[test]
    fn gat_only_pipeline_produces_valid_metrics() {
        let mut cfg = tiny_config();
        cfg.use_lm = false;
        let r = run_experiment(&cfg).unwrap();
        assert!((0.0..=1.0).contains(&r.auc));
        assert!(r.logloss >= 0.0);
        assert!((0.0..=1.0).contains(&r.acc));
        assert_eq!(r.n_test, 32.min(r.n_test));
    }

    #[test]
    fn full_pipeline_runs_and_reports_are_written() {
        let cfg = tiny_config();
        let r = run_experiment(&cfg).unwrap();
        assert!(r.mean_prompt_tokens > 0.0);
        let dir = tempfile::tempdir().unwrap();
        write_reports(dir.path(), &r).unwrap();
        let text = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(parsed["auc"].is_number());
        assert!(dir.path().join("timings.json").exists());
    }

    #[test]
    fn identical_config_and_seed_reproduce_metrics_json_exactly() {
        let mut cfg = tiny_config();
        cfg.use_lm = false;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
