//! Straight-line dense reference for one attention layer, written with raw
//! loops and no tape machinery. Tests hold the tape implementation to this
//! within 1e-9.

use super::graph::{HeteroGraph, EDGE_TYPES};
use super::model::GatConfig;
use super::GatError;
use crate::numerics::{softmax_slice, ParamStore};

fn matvec(w: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|i| w[i * cols..(i + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Reference layer: for each destination and edge type, score every
/// in-neighbor with a_dst·Wh_dst + a_src·Wh_src, LeakyReLU, softmax,
/// aggregate, ELU per head, concatenate heads, project, sum edge types plus
/// the projected self state.
pub fn oracle_layer(
    config: &GatConfig,
    store: &ParamStore,
    graph: &HeteroGraph,
    h: &[Vec<f64>],
    layer: usize,
) -> Result<Vec<Vec<f64>>, GatError> {
    let d = config.d;
    let dh = config.head_dim();
    let n = h.len();
    let self_w = store.get(&format!("layer{layer}.self.w"))?;
    let mut out: Vec<Vec<f64>> = h
        .iter()
        .map(|hi| matvec(self_w.data(), hi, d, d))
        .collect();

    for et in EDGE_TYPES {
        let edges = graph.edges_of(et);
        if edges.is_empty() {
            continue;
        }
        let out_w = store.get(&format!("layer{layer}.{}.out.w", et.name()))?;
        for dst in 0..n {
            let srcs: Vec<usize> = edges
                .iter()
                .filter(|&&(_, d2)| d2 == dst)
                .map(|&(s, _)| s)
                .collect();
            if srcs.is_empty() {
                continue;
            }
            let mut concat = Vec::with_capacity(d);
            for head in 0..config.heads {
                let base = format!("layer{layer}.{}.head{head}", et.name());
                let w = store.get(&format!("{base}.w"))?;
                let a_dst = store.get(&format!("{base}.a_dst"))?;
                let a_src = store.get(&format!("{base}.a_src"))?;
                let wh_dst = matvec(w.data(), &h[dst], dh, d);
                let score_dst: f64 = a_dst.data().iter().zip(&wh_dst).map(|(a, b)| a * b).sum();
                let wh_srcs: Vec<Vec<f64>> =
                    srcs.iter().map(|&j| matvec(w.data(), &h[j], dh, d)).collect();
                let scores: Vec<f64> = wh_srcs
                    .iter()
                    .map(|whj| {
                        let score_src: f64 =
                            a_src.data().iter().zip(whj).map(|(a, b)| a * b).sum();
                        let e = score_dst + score_src;
                        if e >= 0.0 {
                            e
                        } else {
                            config.leaky_slope * e
                        }
                    })
                    .collect();
                let alphas = softmax_slice(&scores);
                let mut agg = vec![0.0; dh];
                for (alpha, whj) in alphas.iter().zip(&wh_srcs) {
                    for (o, &v) in agg.iter_mut().zip(whj) {
                        *o += alpha * v;
                    }
                }
                concat.extend(agg.into_iter().map(elu));
            }
            let projected = matvec(out_w.data(), &concat, d, d);
            for (o, v) in out[dst].iter_mut().zip(projected) {
                *o += v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{HistoryEvent, ItemProfile, Sample, UserProfile};
    use crate::gat::model::GatModel;
    use crate::gat::vocab::GatVocabs;
    use crate::numerics::Tape;
    use rand::{Rng, SeedableRng};

    fn random_sample(rng: &mut impl Rng, n_hist: usize) -> Sample {
        let genres = ["action", "drama", "comedy"];
        let item = |id: &str, g: &str| ItemProfile {
            item_id: id.to_string(),
            title: format!("T {id}"),
            features: vec![("genre".to_string(), g.to_string())],
        };
        Sample {
            user: UserProfile {
                user_id: "u".into(),
                features: vec![("age".into(), "25-34".into())],
            },
            target: item("t", genres[rng.gen_range(0..3)]),
            target_ts: 1_000_000,
            history: (0..n_hist)
                .map(|k| HistoryEvent {
                    item: item(&format!("h{k}"), genres[rng.gen_range(0..3)]),
                    rating: rng.gen_range(1..=5),
                    ts: 1000 + k as i64 * 7200,
                })
                .collect(),
            label: 1,
        }
    }

    #[test]
    fn tape_layer_matches_dense_oracle_on_small_graphs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for trial in 0..50 {
            let hist_len = rng.gen_range(1..=2);
            let s = random_sample(&mut rng, hist_len);
            let cfg = crate::gat::GatConfig {
                d: 8,
                layers: 1,
                heads: if trial % 2 == 0 { 1 } else { 2 },
                ..Default::default()
            };
            let m = GatModel::new(cfg, GatVocabs::build(std::slice::from_ref(&s)), trial).unwrap();
            let g = m.build_graph(&s).unwrap();
            assert!(g.nodes.len() <= 8, "oracle scope is small graphs");

            let mut tape = Tape::new();
            let h0 = m.init_nodes(&m.store, &mut tape, &g).unwrap();
            let h0_vals: Vec<Vec<f64>> =
                h0.iter().map(|&v| tape.value(v).data().to_vec()).collect();
            let (h1, _) = m.gat_layer(&m.store, &mut tape, &g, &h0, 0).unwrap();

            let expect = oracle_layer(&m.config, &m.store, &g, &h0_vals, 0).unwrap();
            for (node, (&v, e)) in h1.iter().zip(&expect).enumerate() {
                let got = tape.value(v).data();
                for (a, b) in got.iter().zip(e) {
                    assert!(
                        (a - b).abs() < 1e-9,
                        "trial {trial} node {node}: {a} vs {b}"
                    );
                }
            }
        }
    }
}
