//! Per-sample heterogeneous graph construction and the sinusoidal time-gap
//! encoding.

use super::vocab::{feat_key, GatVocabs};
use super::GatError;
use crate::dataset::Sample;
use std::collections::BTreeMap;

/// Rating embedding rows: 0 reserved (OOV alignment), 1..=5 ratings, 6 the
/// no-rating row carried by the target item.
pub const RATING_TABLE_ROWS: usize = 7;
pub const NO_RATING_ROW: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeType {
    /// User -> Item
    Interacted,
    /// Item -> User
    ClickBy,
    /// Item -> Feature
    BelongTo,
    /// Feature -> Item
    HasInstance,
}

pub const EDGE_TYPES: [EdgeType; 4] = [
    EdgeType::Interacted,
    EdgeType::ClickBy,
    EdgeType::BelongTo,
    EdgeType::HasInstance,
];

impl EdgeType {
    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Interacted => "interacted",
            EdgeType::ClickBy => "clickby",
            EdgeType::BelongTo => "belongto",
            EdgeType::HasInstance => "hasinstance",
        }
    }

    pub fn index(self) -> usize {
        EDGE_TYPES.iter().position(|&e| e == self).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    User {
        id_row: usize,
        /// Padded to the vocab's fixed field count with OOV rows.
        feat_rows: Vec<usize>,
    },
    Item {
        id_row: usize,
        rating_row: usize,
        /// Seconds between this interaction and the target; 0 for the target.
        delta_seconds: f64,
        is_target: bool,
    },
    Feature {
        row: usize,
    },
}

/// One sample's graph: node 0 is the user, node 1 the target item, then the
/// history items (oldest first), then deduplicated feature nodes.
#[derive(Clone, Debug)]
pub struct HeteroGraph {
    pub nodes: Vec<NodeKind>,
    /// Directed (src, dst) lists indexed by `EdgeType::index`.
    pub edges: [Vec<(usize, usize)>; 4],
    /// Vocabulary misses encountered while building this graph.
    pub oov_count: usize,
}

impl HeteroGraph {
    pub const USER: usize = 0;
    pub const TARGET: usize = 1;

    pub fn edges_of(&self, ty: EdgeType) -> &[(usize, usize)] {
        &self.edges[ty.index()]
    }

    /// In-neighbors of `dst` under one edge type, in edge order.
    pub fn in_neighbors(&self, ty: EdgeType, dst: usize) -> Vec<usize> {
        self.edges_of(ty)
            .iter()
            .filter(|&&(_, d)| d == dst)
            .map(|&(s, _)| s)
            .collect()
    }
}

/// Sinusoidal encoding of a nonnegative gap: position 2i carries
/// sin(Δt / 10000^(2i/d)), position 2i+1 carries cos(Δt / 10000^((2i+1)/d)).
pub fn time_encode(delta_t: f64, d: usize) -> Result<Vec<f64>, GatError> {
    if delta_t < 0.0 {
        return Err(GatError::NegativeDelta(delta_t as i64));
    }
    debug_assert!(d % 2 == 0, "time encoding dim must be even");
    let mut out = vec![0.0; d];
    for p in 0..d {
        let freq = 10000f64.powf(p as f64 / d as f64);
        let arg = delta_t / freq;
        out[p] = if p % 2 == 0 { arg.sin() } else { arg.cos() };
    }
    Ok(out)
}

/// Build the graph over the K most recent history items. Unseen vocabulary
/// values map to the reserved OOV rows and are counted.
pub fn build_graph(sample: &Sample, vocabs: &GatVocabs, k: usize) -> Result<HeteroGraph, GatError> {
    if sample.history.is_empty() {
        return Err(GatError::EmptyHistory);
    }
    let mut oov = 0;
    let mut look = |pair: (usize, bool)| {
        if pair.1 {
            oov += 1;
        }
        pair.0
    };

    let mut feat_rows: Vec<usize> = sample
        .user
        .features
        .iter()
        .take(vocabs.n_user_fields)
        .map(|(f, v)| look(vocabs.user_feats.lookup(&feat_key(f, v))))
        .collect();
    feat_rows.resize(vocabs.n_user_fields, super::vocab::OOV_INDEX);
    let mut nodes = vec![NodeKind::User {
        id_row: look(vocabs.user_ids.lookup(&sample.user.user_id)),
        feat_rows,
    }];

    let mut edges: [Vec<(usize, usize)>; 4] = Default::default();
    let mut feature_nodes: BTreeMap<String, usize> = BTreeMap::new();
    let mut item_features: Vec<(usize, Vec<String>)> = Vec::new();

    let push_item = |nodes: &mut Vec<NodeKind>,
                         item: &crate::dataset::ItemProfile,
                         rating_row: usize,
                         delta_seconds: f64,
                         is_target: bool,
                         oov: &mut usize| {
        let (id_row, miss) = vocabs.item_ids.lookup(&item.item_id);
        if miss {
            *oov += 1;
        }
        nodes.push(NodeKind::Item {
            id_row,
            rating_row,
            delta_seconds,
            is_target,
        });
        let idx = nodes.len() - 1;
        let keys = item
            .features
            .iter()
            .map(|(f, v)| feat_key(f, v))
            .collect::<Vec<_>>();
        (idx, keys)
    };

    item_features.push(push_item(
        &mut nodes,
        &sample.target,
        NO_RATING_ROW,
        0.0,
        true,
        &mut oov,
    ));
    for h in sample.recent_history(k) {
        let delta = sample.target_ts - h.ts;
        if delta < 0 {
            return Err(GatError::NegativeDelta(delta));
        }
        debug_assert!((1..=5).contains(&h.rating));
        item_features.push(push_item(
            &mut nodes,
            &h.item,
            h.rating as usize,
            delta as f64,
            false,
            &mut oov,
        ));
    }

    for (item_idx, keys) in &item_features {
        edges[EdgeType::Interacted.index()].push((HeteroGraph::USER, *item_idx));
        edges[EdgeType::ClickBy.index()].push((*item_idx, HeteroGraph::USER));
        for key in keys {
            let feat_idx = *feature_nodes.entry(key.clone()).or_insert_with(|| {
                let (row, miss) = vocabs.item_feats.lookup(key);
                if miss {
                    oov += 1;
                }
                nodes.push(NodeKind::Feature { row });
                nodes.len() - 1
            });
            edges[EdgeType::BelongTo.index()].push((*item_idx, feat_idx));
            edges[EdgeType::HasInstance.index()].push((feat_idx, *item_idx));
        }
    }

    Ok(HeteroGraph {
        nodes,
        edges,
        oov_count: oov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{HistoryEvent, ItemProfile, UserProfile};

    fn item(id: &str, genre: &str) -> ItemProfile {
        ItemProfile {
            item_id: id.to_string(),
            title: format!("Title {id}"),
            features: vec![("genre".to_string(), genre.to_string())],
        }
    }

    fn sample(history: Vec<(&str, &str, u8, i64)>, target_genre: &str) -> Sample {
        Sample {
            user: UserProfile {
                user_id: "u".into(),
                features: vec![("age".into(), "25-34".into())],
            },
            target: item("t", target_genre),
            target_ts: 1_000_000,
            history: history
                .into_iter()
                .map(|(id, g, r, ts)| HistoryEvent {
                    item: item(id, g),
                    rating: r,
                    ts,
                })
                .collect(),
            label: 1,
        }
    }

    #[test]
    fn time_encode_zero_alternates_zero_one() {
        let v = time_encode(0.0, 8).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn time_encode_unit_gap_d2() {
        let v = time_encode(1.0, 2).unwrap();
        assert!((v[0] - 1f64.sin()).abs() < 1e-12);
        assert!((v[1] - (1.0 / 100.0f64).cos()).abs() < 1e-12);
        assert!((v[0] - 0.841471).abs() < 1e-6);
        assert!((v[1] - 0.99995).abs() < 1e-5);
    }

    #[test]
    fn time_encode_bounded_and_negative_rejected() {
        for &dt in &[0.0, 0.5, 17.0, 4000.0, 1e7] {
            let v = time_encode(dt, 16).unwrap();
            assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
        assert!(matches!(
            time_encode(-1.0, 16),
            Err(GatError::NegativeDelta(_))
        ));
    }

    #[test]
    fn counted_example_seven_nodes_twelve_edges() {
        // K=2 history items with one distinct feature each, target with one
        let s = sample(vec![("a", "drama", 4, 10), ("b", "comedy", 2, 20)], "action");
        let vocabs = GatVocabs::build(std::slice::from_ref(&s));
        let g = build_graph(&s, &vocabs, 2).unwrap();
        assert_eq!(g.nodes.len(), 7);
        let total_edges: usize = g.edges.iter().map(|e| e.len()).sum();
        assert_eq!(total_edges, 12);
        assert_eq!(g.edges_of(EdgeType::Interacted).len(), 3);
        assert_eq!(g.edges_of(EdgeType::ClickBy).len(), 3);
        assert_eq!(g.edges_of(EdgeType::BelongTo).len(), 3);
        assert_eq!(g.edges_of(EdgeType::HasInstance).len(), 3);
    }

    #[test]
    fn shared_genre_shares_feature_node() {
        let s = sample(vec![("a", "action", 4, 10), ("b", "action", 2, 20)], "action");
        let vocabs = GatVocabs::build(std::slice::from_ref(&s));
        let g = build_graph(&s, &vocabs, 2).unwrap();
        // 1 user + 3 items + 1 shared feature
        assert_eq!(g.nodes.len(), 5);
        assert_eq!(g.edges_of(EdgeType::BelongTo).len(), 3);
    }

    #[test]
    fn truncation_floor_keeps_short_histories() {
        let s = sample(vec![("a", "drama", 4, 10)], "action");
        let vocabs = GatVocabs::build(std::slice::from_ref(&s));
        let g = build_graph(&s, &vocabs, 15).unwrap();
        let items = g
            .nodes
            .iter()
            .filter(|n| matches!(n, NodeKind::Item { is_target: false, .. }))
            .count();
        assert_eq!(items, 1);
    }

    #[test]
    fn target_has_no_rating_and_zero_delta() {
        let s = sample(vec![("a", "drama", 4, 10)], "action");
        let vocabs = GatVocabs::build(std::slice::from_ref(&s));
        let g = build_graph(&s, &vocabs, 15).unwrap();
        match &g.nodes[HeteroGraph::TARGET] {
            NodeKind::Item {
                rating_row,
                delta_seconds,
                is_target,
                ..
            } => {
                assert_eq!(*rating_row, NO_RATING_ROW);
                assert_eq!(*delta_seconds, 0.0);
                assert!(is_target);
            }
            other => panic!("target node is {other:?}"),
        }
    }

    #[test]
    fn unseen_values_land_on_oov_and_are_counted() {
        let train = sample(vec![("a", "drama", 4, 10)], "action");
        let vocabs = GatVocabs::build(std::slice::from_ref(&train));
        let unseen = sample(vec![("zzz", "western", 3, 10)], "noir");
        let g = build_graph(&unseen, &vocabs, 15).unwrap();
        assert!(g.oov_count >= 3, "oov_count = {}", g.oov_count);
        match &g.nodes[2] {
            NodeKind::Item { id_row, .. } => assert_eq!(*id_row, super::super::vocab::OOV_INDEX),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_history_is_error() {
        let mut s = sample(vec![("a", "drama", 4, 10)], "action");
        let vocabs = GatVocabs::build(std::slice::from_ref(&s));
        s.history.clear();
        assert!(matches!(
            build_graph(&s, &vocabs, 5),
            Err(GatError::EmptyHistory)
        ));
    }

    #[test]
    fn every_item_connects_to_user_both_ways() {
        let s = sample(
            vec![("a", "drama", 4, 10), ("b", "comedy", 2, 20), ("c", "drama", 5, 30)],
            "action",
        );
        let vocabs = GatVocabs::build(std::slice::from_ref(&s));
        let g = build_graph(&s, &vocabs, 15).unwrap();
        for (i, n) in g.nodes.iter().enumerate() {
            if matches!(n, NodeKind::Item { .. }) {
                assert!(g.edges_of(EdgeType::Interacted).contains(&(0, i)));
                assert!(g.edges_of(EdgeType::ClickBy).contains(&(i, 0)));
            }
        }
    }
}
