//! Mini-batch BCE training of the expert with AdamW and early stopping on
//! validation AUC.

use super::graph::HeteroGraph;
use super::model::GatModel;
use super::GatError;
use crate::dataset::Sample;
use crate::harness::metrics::auc;
use crate::numerics::{AdamWConfig, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GatTrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Epochs without validation-AUC improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Optional cap on training samples (deterministic prefix after shuffle).
    pub max_train: Option<usize>,
}

impl Default for GatTrainConfig {
    fn default() -> Self {
        GatTrainConfig {
            lr: 5e-3,
            weight_decay: 0.0,
            batch_size: 64,
            patience: 10,
            max_epochs: 100,
            seed: 0,
            max_train: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_auc: f64,
}

pub struct TrainedGat {
    /// Model holding the best-validation parameters.
    pub model: GatModel,
    pub best_valid_auc: f64,
    pub epochs_run: usize,
    pub history: Vec<EpochStats>,
}

fn snapshot(model: &GatModel) -> BTreeMap<String, Tensor> {
    model
        .store
        .iter()
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect()
}

fn restore(model: &mut GatModel, snap: &BTreeMap<String, Tensor>) -> Result<(), GatError> {
    for (n, t) in snap {
        model.store.set(n, t.clone())?;
    }
    Ok(())
}

fn sample_loss_and_grads(
    model: &GatModel,
    graph: &HeteroGraph,
    label: u8,
) -> Result<(f64, BTreeMap<String, Tensor>), GatError> {
    let mut fwd = model.forward(graph)?;
    let p = fwd.predict_var()?;
    let loss = fwd.tape.bce(p, label as f64)?;
    let value = fwd.tape.value(loss).item();
    let grads = fwd.tape.param_grads(loss)?;
    Ok((value, grads))
}

/// Scores over prebuilt graphs, preserving order.
fn score_graphs(model: &GatModel, graphs: &[HeteroGraph]) -> Result<Vec<f64>, GatError> {
    graphs
        .iter()
        .map(|g| {
            let mut fwd = model.forward(g)?;
            let p = fwd.predict_var()?;
            Ok(fwd.tape.value(p).item())
        })
        .collect()
}

pub fn predict_scores(model: &GatModel, samples: &[Sample]) -> Result<Vec<f64>, GatError> {
    samples
        .iter()
        .map(|s| model.predict_ctr(s))
        .collect()
}

pub fn train_gat(
    mut model: GatModel,
    train: &[Sample],
    valid: &[Sample],
    tc: &GatTrainConfig,
) -> Result<TrainedGat, GatError> {
    if train.is_empty() {
        return Err(GatError::EmptySplit("train"));
    }
    if valid.is_empty() {
        return Err(GatError::EmptySplit("valid"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    if let Some(cap) = tc.max_train {
        order.truncate(cap.max(1));
    }

    // graphs are parameter-independent; build once
    let train_graphs: Vec<(HeteroGraph, u8)> = order
        .iter()
        .map(|&i| Ok((model.build_graph(&train[i])?, train[i].label)))
        .collect::<Result<_, GatError>>()?;
    let valid_graphs: Vec<HeteroGraph> = valid
        .iter()
        .map(|s| model.build_graph(s))
        .collect::<Result<_, GatError>>()?;
    let valid_labels: Vec<u8> = valid.iter().map(|s| s.label).collect();

    let adamw = AdamWConfig {
        lr: tc.lr,
        weight_decay: tc.weight_decay,
        ..Default::default()
    };

    let mut best = snapshot(&model);
    let mut best_auc = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut history = Vec::new();
    let mut idx: Vec<usize> = (0..train_graphs.len()).collect();
    let mut epochs_run = 0;

    for epoch in 0..tc.max_epochs {
        epochs_run = epoch + 1;
        idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in idx.chunks(tc.batch_size.max(1)).enumerate() {
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (g, label) = &train_graphs[i];
                let (loss, grads) = sample_loss_and_grads(&model, g, *label)?;
                if !loss.is_finite() {
                    return Err(GatError::Diverged { epoch, batch: b });
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
            model.store.adamw_step(&acc, &adamw)?;
            epoch_loss += batch_loss;
        }
        epoch_loss /= train_graphs.len() as f64;

        let scores = score_graphs(&model, &valid_graphs)?;
        let valid_auc = auc(&valid_labels, &scores)?;
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss,
            valid_auc,
        });
        if valid_auc > best_auc {
            best_auc = valid_auc;
            best = snapshot(&model);
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }
    restore(&mut model, &best)?;
    Ok(TrainedGat {
        model,
        best_valid_auc: best_auc,
        epochs_run,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};
    use crate::gat::{GatConfig, GatVocabs};

    fn tiny_data() -> (Vec<Sample>, Vec<Sample>) {
        let ds = synth_generate(&SynthConfig {
            n_users: 24,
            n_items: 30,
            horizon: 12,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let samples = ds.build_samples(3).unwrap();
        let split = crate::dataset::split_temporal(samples, (0.8, 0.1, 0.1)).unwrap();
        (split.train, split.valid)
    }

    #[test]
    fn overfit_loss_decreases_over_first_epochs() {
        let (train, valid) = tiny_data();
        let subset = &train[..64.min(train.len())];
        let cfg = GatConfig {
            d: 8,
            layers: 1,
            heads: 2,
            k: 5,
            ..Default::default()
        };
        let model = GatModel::new(cfg, GatVocabs::build(subset), 3).unwrap();
        let tc = GatTrainConfig {
            lr: 1e-2,
            batch_size: 16,
            max_epochs: 5,
            patience: 50,
            seed: 3,
            ..Default::default()
        };
        let trained = train_gat(model, subset, &valid, &tc).unwrap();
        let losses: Vec<f64> = trained.history.iter().map(|e| e.train_loss).collect();
        assert_eq!(losses.len(), 5);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "losses not decreasing: {losses:?}");
        }
    }

    #[test]
    fn early_stop_respects_patience() {
        let (train, valid) = tiny_data();
        let cfg = GatConfig {
            d: 8,
            layers: 1,
            heads: 2,
            k: 3,
            ..Default::default()
        };
        let model = GatModel::new(cfg, GatVocabs::build(&train), 4).unwrap();
        let tc = GatTrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 40,
            patience: 2,
            seed: 4,
            max_train: Some(48),
            ..Default::default()
        };
        let trained = train_gat(model, &train, &valid, &tc).unwrap();
        assert!(trained.epochs_run <= 40);
        // best-epoch AUC is what the returned model reproduces
        let valid_scores = predict_scores(&trained.model, &valid).unwrap();
        let labels: Vec<u8> = valid.iter().map(|s| s.label).collect();
        let auc_now = auc(&labels, &valid_scores).unwrap();
        assert!((auc_now - trained.best_valid_auc).abs() < 1e-12);
    }

    #[test]
    fn empty_splits_are_errors() {
        let (train, valid) = tiny_data();
        let cfg = GatConfig {
            d: 8,
            layers: 1,
            heads: 1,
            ..Default::default()
        };
        let model = GatModel::new(cfg.clone(), GatVocabs::build(&train), 1).unwrap();
        assert!(matches!(
            train_gat(model, &[], &valid, &GatTrainConfig::default()),
            Err(GatError::EmptySplit("train"))
        ));
        let model = GatModel::new(cfg, GatVocabs::build(&train), 1).unwrap();
        assert!(matches!(
            train_gat(model, &train, &[], &GatTrainConfig::default()),
            Err(GatError::EmptySplit("valid"))
        ));
    }
}
