//! Instruction tuning of the adapters and the injection map. The loss is
//! cross entropy at the answer position only; base weights stay frozen.

use super::model::{EncodedPrompt, SurrogateLM};
use super::LmError;
use crate::numerics::{sigmoid_scalar, AdamWConfig, Tensor};
use crate::rap::RapPrompt;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub steps: usize,
    pub epoch_mean_loss: Vec<f64>,
}

/// Two-way softmax over {Yes, No} collapses to a sigmoid of the difference.
pub fn score_yes_no(logit_yes: f64, logit_no: f64) -> f64 {
    sigmoid_scalar(logit_yes - logit_no)
}

fn answer_loss(
    lm: &SurrogateLM,
    enc: &EncodedPrompt,
    expert: Option<&Tensor>,
    answer_id: usize,
    dropout_seed: u64,
) -> Result<(f64, BTreeMap<String, Tensor>), LmError> {
    let injection = match (enc.placeholder_pos, expert) {
        (Some(p), Some(e)) => Some((p, e)),
        (None, Some(_)) => return Err(LmError::MissingPlaceholder),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let (mut tape, hidden) =
        lm.forward_hidden(&lm.store, &enc.ids, injection, Some(&mut rng))?;
    let logits = lm.logits_at(&mut tape, &lm.store, hidden, enc.ids.len() - 1)?;
    let loss = tape.cross_entropy_row(logits, answer_id)?;
    let value = tape.value(loss).item();
    let grads = tape.param_grads(loss)?;
    Ok((value, grads))
}

/// Loss and gradients restricted to the trainable (adapter + map) set; used
/// by the gradient-fidelity check as well as training proper.
pub fn finetune_loss(
    lm: &SurrogateLM,
    enc: &EncodedPrompt,
    expert: Option<&Tensor>,
    answer_id: usize,
    dropout_seed: u64,
) -> Result<(f64, BTreeMap<String, Tensor>), LmError> {
    let trainable: BTreeSet<String> = lm.trainable_names().into_iter().collect();
    let (loss, mut grads) = answer_loss(lm, enc, expert, answer_id, dropout_seed)?;
    grads.retain(|n, _| trainable.contains(n));
    Ok((loss, grads))
}

fn answer_id(lm: &SurrogateLM, prompt: &RapPrompt) -> usize {
    lm.tokenizer
        .id(&prompt.answer)
        .unwrap_or_else(|| lm.tokenizer.unk_id())
}

/// Train adapters and the map in place. Batches run in parallel with
/// per-sample dropout streams derived from the config seed, so results do
/// not depend on thread scheduling.
pub fn finetune(
    lm: &mut SurrogateLM,
    prompts: &[RapPrompt],
    experts: &[Option<Tensor>],
    tc: &LmTrainConfig,
) -> Result<FinetuneReport, LmError> {
    if prompts.is_empty() {
        return Err(LmError::EmptyPrompts("finetune"));
    }
    assert_eq!(prompts.len(), experts.len());
    let trainable: BTreeSet<String> = lm.trainable_names().into_iter().collect();
    let encoded: Vec<(EncodedPrompt, usize)> = prompts
        .iter()
        .map(|p| Ok((lm.embed_prompt(p)?, answer_id(lm, p))))
        .collect::<Result<_, LmError>>()?;

    let adamw = AdamWConfig {
        lr: tc.lr,
        weight_decay: tc.weight_decay,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut idx: Vec<usize> = (0..encoded.len()).collect();
    let mut steps = 0usize;
    let mut epoch_mean_loss = Vec::with_capacity(tc.epochs);

    for epoch in 0..tc.epochs {
        idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in idx.chunks(tc.batch_size.max(1)) {
            // last-good values in case this batch diverges
            let last_good: Vec<(String, Tensor)> = trainable
                .iter()
                .map(|n| (n.clone(), lm.store.get(n).unwrap().clone()))
                .collect();
            let lm_ref: &SurrogateLM = lm;
            let results: Vec<Result<(f64, BTreeMap<String, Tensor>), LmError>> = batch
                .par_iter()
                .map(|&i| {
                    let (enc, ans) = &encoded[i];
                    let seed = tc
                        .seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add((epoch * encoded.len() + i) as u64);
                    let (loss, mut grads) =
                        answer_loss(lm_ref, enc, experts[i].as_ref(), *ans, seed)?;
                    grads.retain(|n, _| trainable.contains(n));
                    Ok((loss, grads))
                })
                .collect();
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    for (n, t) in &last_good {
                        lm.store.set(n, t.clone())?;
                    }
                    return Err(LmError::Diverged(steps));
                }
                batch_loss += loss;
                for (name, g) in grads {
                    match acc.get_mut(&name) {
                        Some(t) => {
                            for (a, v) in t.data_mut().iter_mut().zip(g.data()) {
                                *a += v;
                            }
                        }
                        None => {
                            acc.insert(name, g);
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for t in acc.values_mut() {
                for x in t.data_mut() {
                    *x *= inv;
                }
            }
            lm.store.adamw_step(&acc, &adamw)?;
            steps += 1;
            epoch_loss += batch_loss;
        }
        epoch_mean_loss.push(epoch_loss / encoded.len() as f64);
    }
    Ok(FinetuneReport {
        steps,
        epoch_mean_loss,
    })
}

/// Batch scoring, order-preserving and parallel.
pub fn score_prompts(
    lm: &SurrogateLM,
    prompts: &[RapPrompt],
    experts: &[Option<Tensor>],
) -> Result<Vec<f64>, LmError> {
    assert_eq!(prompts.len(), experts.len());
    prompts
        .par_iter()
        .zip(experts.par_iter())
        .map(|(p, e)| {
            let enc = lm.embed_prompt(p)?;
            lm.score_prompt(&enc, e.as_ref())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::{LmConfig, LoraConfig};
    use crate::lm::tokenizer::Tokenizer;
    use crate::numerics::softmax_slice;
    use crate::text::PLACEHOLDER_TOKEN;

    fn prompt(text: &str, answer: &str) -> RapPrompt {
        let toks = crate::text::split_tokens(text);
        RapPrompt {
            text: text.to_string(),
            placeholder_index: toks.iter().position(|t| t == PLACEHOLDER_TOKEN),
            question_start: toks.len().saturating_sub(3),
            answer: answer.to_string(),
            retrieved_ids: vec![],
            recent_ids: vec![],
            meta: "m".into(),
            label: u8::from(answer == "Yes"),
        }
    }

    fn training_setup() -> (SurrogateLM, Vec<RapPrompt>, Vec<Option<Tensor>>) {
        let texts: Vec<RapPrompt> = (0..32)
            .map(|k| {
                let yes = k % 2 == 0;
                prompt(
                    &format!("item {k} signal <ExpertEmb> . will it click ? Answer :"),
                    if yes { "Yes" } else { "No" },
                )
            })
            .collect();
        let corpus: Vec<String> = texts.iter().map(|p| p.text.clone()).collect();
        let tk = Tokenizer::build(&corpus, None);
        let cfg = LmConfig {
            d: 16,
            blocks: 1,
            heads: 2,
            max_len: 64,
            d_gat: 4,
        };
        let mut lm = SurrogateLM::new(cfg, tk, 21).unwrap();
        lm.lora_wrap(
            LoraConfig {
                dropout: 0.0,
                ..Default::default()
            },
            22,
        )
        .unwrap();
        // expert embedding carries the label directly; the map must learn
        // to surface it
        let experts: Vec<Option<Tensor>> = texts
            .iter()
            .map(|p| {
                let s = if p.label == 1 { 1.0 } else { -1.0 };
                Some(Tensor::vector(vec![s; 4]))
            })
            .collect();
        (lm, texts, experts)
    }

    #[test]
    fn two_way_softmax_is_sigmoid_of_difference() {
        for (y, n) in [(0.0, 0.0), (1.0, 0.0), (-2.5, 1.5), (10.0, -3.0)] {
            let soft = softmax_slice(&[y, n]);
            assert!((score_yes_no(y, n) - soft[0]).abs() < 1e-12);
        }
        assert_eq!(score_yes_no(1.0, 1.0), 0.5);
        assert!((score_yes_no(1.0, 0.0) - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn overfit_small_set_reaches_high_answer_accuracy() {
        let (mut lm, prompts, experts) = training_setup();
        let tc = LmTrainConfig {
            lr: 3e-2,
            batch_size: 8,
            epochs: 10,
            seed: 5,
            ..Default::default()
        };
        let report = finetune(&mut lm, &prompts, &experts, &tc).unwrap();
        assert!(report.steps <= 50);
        let scores = score_prompts(&lm, &prompts, &experts).unwrap();
        let correct = prompts
            .iter()
            .zip(&scores)
            .filter(|(p, &s)| (s >= 0.5) == (p.label == 1))
            .count();
        let acc = correct as f64 / prompts.len() as f64;
        assert!(acc >= 0.95, "answer accuracy {acc}");
    }

    #[test]
    fn base_weights_are_bit_identical_after_finetune() {
        let (mut lm, prompts, experts) = training_setup();
        let trainable: BTreeSet<String> = lm.trainable_names().into_iter().collect();
        let frozen: Vec<(String, Tensor)> = lm
            .store
            .iter()
            .filter(|(n, _)| !trainable.contains(*n))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect();
        let tc = LmTrainConfig {
            lr: 1e-2,
            batch_size: 8,
            epochs: 2,
            seed: 6,
            ..Default::default()
        };
        finetune(&mut lm, &prompts, &experts, &tc).unwrap();
        for (n, before) in frozen {
            assert_eq!(lm.store.get(&n).unwrap(), &before, "{n} moved");
        }
        // and something trainable did move
        assert!(trainable
            .iter()
            .any(|n| lm.store.get(n).unwrap().data().iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn map_gradients_match_finite_differences() {
        let (lm, prompts, experts) = training_setup();
        let enc = lm.embed_prompt(&prompts[0]).unwrap();
        let ans = answer_id(&lm, &prompts[0]);
        let expert = experts[0].clone().unwrap();
        let eps = 1e-5;
        let (_, grads) = finetune_loss(&lm, &enc, Some(&expert), ans, 0).unwrap();
        let g = &grads["map.w"];
        let mut worst = 0.0f64;
        // probe a handful of coordinates
        for &i in &[0usize, 3, 17, 40, 63] {
            let mut plus = SurrogateLM {
                config: lm.config.clone(),
                tokenizer: lm.tokenizer.clone(),
                store: clone_store(&lm),
                lora: lm.lora,
            };
            plus.store.nudge("map.w", i, eps).unwrap();
            let (lp, _) = finetune_loss(&plus, &enc, Some(&expert), ans, 0).unwrap();
            plus.store.nudge("map.w", i, -2.0 * eps).unwrap();
            let (lmn, _) = finetune_loss(&plus, &enc, Some(&expert), ans, 0).unwrap();
            let num = (lp - lmn) / (2.0 * eps);
            let ana = g.data()[i];
            let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1.0);
            worst = worst.max(err);
        }
        assert!(worst <= 1e-4, "worst rel err {worst}");
    }

    fn clone_store(lm: &SurrogateLM) -> crate::numerics::ParamStore {
        let mut s = crate::numerics::ParamStore::new();
        for (n, t) in lm.store.iter() {
            s.insert(n, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn missing_placeholder_with_expert_is_error() {
        let (lm, _, _) = training_setup();
        let p = prompt("no slot here ? Answer :", "Yes");
        let enc = lm.embed_prompt(&p).unwrap();
        let e = Tensor::vector(vec![1.0; 4]);
        assert!(matches!(
            lm.score_prompt(&enc, Some(&e)),
            Err(LmError::MissingPlaceholder)
        ));
    }

    #[test]
    fn empty_prompt_set_is_error() {
        let (mut lm, _, _) = training_setup();
        assert!(matches!(
            finetune(&mut lm, &[], &[], &LmTrainConfig::default()),
            Err(LmError::EmptyPrompts(_))
        ));
    }
}
