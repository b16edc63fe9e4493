//! The expert network: embedding tables, per-node-type input projections,
//! and edge-typed multi-head graph attention layers on the autodiff tape.

use super::graph::{
    build_graph, time_encode, EdgeType, HeteroGraph, NodeKind, EDGE_TYPES, NO_RATING_ROW,
    RATING_TABLE_ROWS,
};
use super::vocab::GatVocabs;
use super::GatError;
use crate::dataset::Sample;
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Input-field ablation switches; both default off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatAblation {
    /// History items all use the reserved no-rating row.
    #[serde(default)]
    pub drop_rating: bool,
    /// All time gaps treated as zero.
    #[serde(default)]
    pub drop_timestamp: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GatConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    /// History items included in each graph.
    pub k: usize,
    /// Divisor applied to raw second gaps before the sinusoidal encoding;
    /// the default folds seconds into days.
    pub time_scale: f64,
    #[serde(default)]
    pub ablation: GatAblation,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            d: 32,
            layers: 2,
            heads: 4,
            leaky_slope: 0.2,
            k: 15,
            time_scale: 86_400.0,
            ablation: GatAblation::default(),
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<(), GatError> {
        if self.layers == 0 {
            return Err(GatError::NoLayers);
        }
        if self.d == 0 || self.d % 2 != 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(GatError::BadDims {
                d: self.d,
                heads: self.heads,
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// One attention distribution: destination node, edge type, head.
#[derive(Clone, Debug)]
pub struct AttnRecord {
    pub node: usize,
    pub edge: EdgeType,
    pub head: usize,
    pub alphas: Vec<f64>,
}

/// A full forward pass over one graph. The tape stays open so callers can
/// append the prediction head and loss.
pub struct Forward {
    pub tape: Tape,
    pub node_vars: Vec<Var>,
    pub user: Var,
    pub target: Var,
    pub attn: Vec<AttnRecord>,
}

impl Forward {
    /// σ(cos(e_u, e_it)); range (σ(−1), σ(1)).
    pub fn predict_var(&mut self) -> Result<Var, GatError> {
        let c = self.tape.cosine(self.user, self.target)?;
        Ok(self.tape.sigmoid(c))
    }
}

pub struct GatModel {
    pub config: GatConfig,
    pub vocabs: GatVocabs,
    pub store: ParamStore,
}

fn pvar(
    tape: &mut Tape,
    store: &ParamStore,
    cache: &mut BTreeMap<String, Var>,
    name: String,
) -> Result<Var, GatError> {
    if let Some(&v) = cache.get(&name) {
        return Ok(v);
    }
    let v = tape.param(store, &name)?;
    cache.insert(name, v);
    Ok(v)
}

impl GatModel {
    pub fn new(config: GatConfig, vocabs: GatVocabs, seed: u64) -> Result<Self, GatError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let dh = config.head_dim();
        let mut store = ParamStore::new();
        let mut emb = |store: &mut ParamStore, name: &str, rows: usize| {
            store
                .insert(name, Tensor::uniform_init(&[rows, d], d, &mut rng))
                .unwrap();
        };
        emb(&mut store, "emb.user_id", vocabs.user_ids.len());
        emb(&mut store, "emb.user_feat", vocabs.user_feats.len());
        emb(&mut store, "emb.item_id", vocabs.item_ids.len());
        emb(&mut store, "emb.rating", RATING_TABLE_ROWS);
        emb(&mut store, "emb.feat", vocabs.item_feats.len());

        let user_in = d * (1 + vocabs.n_user_fields);
        store.insert(
            "init.user.w",
            Tensor::uniform_init(&[d, user_in], user_in, &mut rng),
        )?;
        store.insert("init.user.b", Tensor::zeros(&[d]))?;
        store.insert(
            "init.item.w",
            Tensor::uniform_init(&[d, 3 * d], 3 * d, &mut rng),
        )?;
        store.insert("init.item.b", Tensor::zeros(&[d]))?;
        store.insert("init.feat.w", Tensor::uniform_init(&[d, d], d, &mut rng))?;
        store.insert("init.feat.b", Tensor::zeros(&[d]))?;

        for l in 0..config.layers {
            for et in EDGE_TYPES {
                for h in 0..config.heads {
                    let base = format!("layer{l}.{}.head{h}", et.name());
                    store.insert(
                        &format!("{base}.w"),
                        Tensor::uniform_init(&[dh, d], d, &mut rng),
                    )?;
                    store.insert(
                        &format!("{base}.a_dst"),
                        Tensor::uniform_init(&[dh], dh, &mut rng),
                    )?;
                    store.insert(
                        &format!("{base}.a_src"),
                        Tensor::uniform_init(&[dh], dh, &mut rng),
                    )?;
                }
                store.insert(
                    &format!("layer{l}.{}.out.w", et.name()),
                    Tensor::uniform_init(&[d, d], d, &mut rng),
                )?;
            }
            store.insert(
                &format!("layer{l}.self.w"),
                Tensor::uniform_init(&[d, d], d, &mut rng),
            )?;
        }
        Ok(GatModel {
            config,
            vocabs,
            store,
        })
    }

    pub fn build_graph(&self, sample: &Sample) -> Result<HeteroGraph, GatError> {
        build_graph(sample, &self.vocabs, self.config.k)
    }

    /// Initial node embeddings: user = project(id ∥ features), item =
    /// project(id ∥ time encoding ∥ rating), feature = project(lookup).
    pub fn init_nodes(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        graph: &HeteroGraph,
    ) -> Result<Vec<Var>, GatError> {
        let d = self.config.d;
        let mut cache = BTreeMap::new();
        let mut out = Vec::with_capacity(graph.nodes.len());
        for node in &graph.nodes {
            let h = match node {
                NodeKind::User { id_row, feat_rows } => {
                    let table = pvar(tape, store, &mut cache, "emb.user_id".into())?;
                    let ftable = pvar(tape, store, &mut cache, "emb.user_feat".into())?;
                    let mut parts = vec![tape.row(table, *id_row)?];
                    for &r in feat_rows {
                        parts.push(tape.row(ftable, r)?);
                    }
                    let cat = tape.concat(&parts)?;
                    let w = pvar(tape, store, &mut cache, "init.user.w".into())?;
                    let b = pvar(tape, store, &mut cache, "init.user.b".into())?;
                    let proj = tape.matvec(w, cat)?;
                    tape.add(proj, b)?
                }
                NodeKind::Item {
                    id_row,
                    rating_row,
                    delta_seconds,
                    is_target,
                } => {
                    let rating_row = if self.config.ablation.drop_rating && !is_target {
                        NO_RATING_ROW
                    } else {
                        *rating_row
                    };
                    let dt = if self.config.ablation.drop_timestamp {
                        0.0
                    } else {
                        delta_seconds / self.config.time_scale
                    };
                    let te = tape.constant(Tensor::vector(time_encode(dt, d)?));
                    let itable = pvar(tape, store, &mut cache, "emb.item_id".into())?;
                    let rtable = pvar(tape, store, &mut cache, "emb.rating".into())?;
                    let id = tape.row(itable, *id_row)?;
                    let rt = tape.row(rtable, rating_row)?;
                    let cat = tape.concat(&[id, te, rt])?;
                    let w = pvar(tape, store, &mut cache, "init.item.w".into())?;
                    let b = pvar(tape, store, &mut cache, "init.item.b".into())?;
                    let proj = tape.matvec(w, cat)?;
                    tape.add(proj, b)?
                }
                NodeKind::Feature { row } => {
                    let table = pvar(tape, store, &mut cache, "emb.feat".into())?;
                    let e = tape.row(table, *row)?;
                    let w = pvar(tape, store, &mut cache, "init.feat.w".into())?;
                    let b = pvar(tape, store, &mut cache, "init.feat.b".into())?;
                    let proj = tape.matvec(w, e)?;
                    tape.add(proj, b)?
                }
            };
            out.push(h);
        }
        Ok(out)
    }

    /// One attention layer. Per destination node and edge type:
    /// e_ij = a_dst·Wh_i + a_src·Wh_j, α = softmax(LeakyReLU(e)), head
    /// message = σ(Σ_j α_j Wh_j); heads concatenate, project, and edge-type
    /// messages sum with the projected self state.
    pub fn gat_layer(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        graph: &HeteroGraph,
        h: &[Var],
        layer: usize,
    ) -> Result<(Vec<Var>, Vec<AttnRecord>), GatError> {
        let mut cache = BTreeMap::new();
        let mut attn = Vec::new();
        let hmat = tape.stack_rows(h)?;
        let self_w = pvar(tape, store, &mut cache, format!("layer{layer}.self.w"))?;
        let self_h = tape.matmul_nt(hmat, self_w)?;
        let mut msgs: Vec<Vec<Var>> = (0..h.len())
            .map(|i| Ok(vec![tape.slice_row(self_h, i)?]))
            .collect::<Result<_, GatError>>()?;

        for et in EDGE_TYPES {
            let edges = graph.edges_of(et);
            if edges.is_empty() {
                continue;
            }
            let mut by_dst: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &(s, dst) in edges {
                by_dst.entry(dst).or_default().push(s);
            }
            // per-head transformed nodes and score projections, shared
            // across destinations
            let mut head_msgs: BTreeMap<usize, Vec<Var>> = BTreeMap::new();
            for head in 0..self.config.heads {
                let base = format!("layer{layer}.{}.head{head}", et.name());
                let w = pvar(tape, store, &mut cache, format!("{base}.w"))?;
                let a_dst = pvar(tape, store, &mut cache, format!("{base}.a_dst"))?;
                let a_src = pvar(tape, store, &mut cache, format!("{base}.a_src"))?;
                let wh = tape.matmul_nt(hmat, w)?;
                let s_dst = tape.matvec(wh, a_dst)?;
                let s_src = tape.matvec(wh, a_src)?;
                for (&dst, srcs) in &by_dst {
                    let di = tape.index(s_dst, dst)?;
                    let scores: Vec<Var> = srcs
                        .iter()
                        .map(|&j| {
                            let sj = tape.index(s_src, j)?;
                            tape.add(di, sj)
                        })
                        .collect::<Result<_, _>>()?;
                    let stacked = tape.stack_scalars(&scores)?;
                    let act = tape.leaky_relu(stacked, self.config.leaky_slope);
                    let alpha = tape.softmax(act)?;
                    attn.push(AttnRecord {
                        node: dst,
                        edge: et,
                        head,
                        alphas: tape.value(alpha).data().to_vec(),
                    });
                    let weighted: Vec<Var> = srcs
                        .iter()
                        .enumerate()
                        .map(|(k, &j)| {
                            let whj = tape.slice_row(wh, j)?;
                            let ak = tape.index(alpha, k)?;
                            tape.scale_by(whj, ak)
                        })
                        .collect::<Result<_, _>>()?;
                    let agg = tape.add_many(&weighted)?;
                    let msg = tape.elu(agg);
                    head_msgs.entry(dst).or_default().push(msg);
                }
            }
            let out_w = pvar(
                tape,
                store,
                &mut cache,
                format!("layer{layer}.{}.out.w", et.name()),
            )?;
            for (dst, heads) in head_msgs {
                let cat = tape.concat(&heads)?;
                let projected = tape.matvec(out_w, cat)?;
                msgs[dst].push(projected);
            }
        }

        let new_h = msgs
            .into_iter()
            .map(|m| tape.add_many(&m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((new_h, attn))
    }

    pub fn forward_with(
        &self,
        store: &ParamStore,
        graph: &HeteroGraph,
    ) -> Result<Forward, GatError> {
        let mut tape = Tape::new();
        let mut h = self.init_nodes(store, &mut tape, graph)?;
        let mut attn = Vec::new();
        for l in 0..self.config.layers {
            let (nh, a) = self.gat_layer(store, &mut tape, graph, &h, l)?;
            h = nh;
            attn.extend(a);
        }
        let user = h[HeteroGraph::USER];
        let target = h[HeteroGraph::TARGET];
        Ok(Forward {
            tape,
            node_vars: h,
            user,
            target,
            attn,
        })
    }

    pub fn forward(&self, graph: &HeteroGraph) -> Result<Forward, GatError> {
        self.forward_with(&self.store, graph)
    }

    pub fn predict_ctr(&self, sample: &Sample) -> Result<f64, GatError> {
        let graph = self.build_graph(sample)?;
        let mut fwd = self.forward(&graph)?;
        let p = fwd.predict_var()?;
        Ok(fwd.tape.value(p).item())
    }

    /// Final-layer target-item embedding with parameters frozen.
    pub fn expert_embedding(&self, sample: &Sample) -> Result<Tensor, GatError> {
        let graph = self.build_graph(sample)?;
        let fwd = self.forward(&graph)?;
        Ok(fwd.tape.value(fwd.target).clone())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), GatError> {
        let meta = serde_json::json!({
            "kind": "gat",
            "config": self.config,
            "vocabs": self.vocabs,
        });
        crate::numerics::save_params(path, &self.store, &meta)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, GatError> {
        let (meta, store) = crate::numerics::load_params(path)?;
        if meta["kind"] != "gat" {
            return Err(GatError::Checkpoint(format!(
                "expected a gat checkpoint, found kind {:?}",
                meta["kind"]
            )));
        }
        let config: GatConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| GatError::Checkpoint(format!("config: {e}")))?;
        let vocabs: GatVocabs = serde_json::from_value(meta["vocabs"].clone())
            .map_err(|e| GatError::Checkpoint(format!("vocabs: {e}")))?;
        config.validate()?;
        Ok(GatModel {
            config,
            vocabs,
            store,
        })
    }
}
