//! Decoder-only transformer with tied input/output embeddings, learned
//! positions, pre-layer-norm blocks, and optional low-rank adapters on the
//! attention Q and V projections.

use super::tokenizer::Tokenizer;
use super::LmError;
use crate::numerics::{sigmoid_scalar, ParamStore, Tape, Tensor, Var};
use crate::rap::RapPrompt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LmConfig {
    pub d: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_len: usize,
    /// Input dim of the injection map (the expert embedding size).
    pub d_gat: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            d: 128,
            blocks: 4,
            heads: 4,
            max_len: 1024,
            d_gat: 32,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(LmError::BadDims {
                d: self.d,
                heads: self.heads,
            });
        }
        Ok(())
    }

    fn ff_dim(&self) -> usize {
        2 * self.d
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LoraConfig {
    pub r: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            r: 8,
            alpha: 16.0,
            dropout: 0.05,
        }
    }
}

/// Tokenized prompt ready for the model: `<bos>` plus the prompt tokens,
/// truncated from the front of the history section when over budget.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPrompt {
    pub ids: Vec<usize>,
    pub placeholder_pos: Option<usize>,
    pub truncated: bool,
}

pub struct SurrogateLM {
    pub config: LmConfig,
    pub tokenizer: Tokenizer,
    pub store: ParamStore,
    pub lora: Option<LoraConfig>,
}

impl SurrogateLM {
    pub fn new(config: LmConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self, LmError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let ff = config.ff_dim();
        let v = tokenizer.len();
        let mut store = ParamStore::new();
        store.insert("tok_emb", Tensor::uniform_init(&[v, d], d, &mut rng))?;
        store.insert(
            "pos_emb",
            Tensor::uniform_init(&[config.max_len, d], d, &mut rng),
        )?;
        for b in 0..config.blocks {
            for side in ["q", "k", "v", "o"] {
                store.insert(
                    &format!("b{b}.attn.{side}.w"),
                    Tensor::uniform_init(&[d, d], d, &mut rng),
                )?;
            }
            for ln in ["ln1", "ln2"] {
                store.insert(&format!("b{b}.{ln}.g"), Tensor::filled(&[d], 1.0))?;
                store.insert(&format!("b{b}.{ln}.b"), Tensor::zeros(&[d]))?;
            }
            store.insert(
                &format!("b{b}.ff.w1"),
                Tensor::uniform_init(&[ff, d], d, &mut rng),
            )?;
            store.insert(&format!("b{b}.ff.b1"), Tensor::zeros(&[ff]))?;
            store.insert(
                &format!("b{b}.ff.w2"),
                Tensor::uniform_init(&[d, ff], ff, &mut rng),
            )?;
            store.insert(&format!("b{b}.ff.b2"), Tensor::zeros(&[d]))?;
        }
        store.insert("ln_f.g", Tensor::filled(&[d], 1.0))?;
        store.insert("ln_f.b", Tensor::zeros(&[d]))?;
        store.insert(
            "map.w",
            Tensor::uniform_init(&[d, config.d_gat], config.d_gat, &mut rng),
        )?;
        store.insert("map.b", Tensor::zeros(&[d]))?;
        Ok(SurrogateLM {
            config,
            tokenizer,
            store,
            lora: None,
        })
    }

    /// Attach adapters to every block's Q and V. B starts at zero, so the
    /// wrapped model initially equals the base exactly.
    pub fn lora_wrap(&mut self, cfg: LoraConfig, seed: u64) -> Result<(), LmError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.config.d;
        for b in 0..self.config.blocks {
            for side in ["q", "v"] {
                self.store.insert(
                    &format!("b{b}.attn.{side}.lora_a"),
                    Tensor::uniform_init(&[cfg.r, d], d, &mut rng),
                )?;
                self.store.insert(
                    &format!("b{b}.attn.{side}.lora_b"),
                    Tensor::zeros(&[d, cfg.r]),
                )?;
            }
        }
        self.lora = Some(cfg);
        Ok(())
    }

    /// Names updated during finetuning: adapters plus the injection map.
    pub fn trainable_names(&self) -> Vec<String> {
        self.store
            .names()
            .filter(|n| n.contains(".lora_") || n.starts_with("map."))
            .cloned()
            .collect()
    }

    pub fn trainable_numel(&self) -> usize {
        self.trainable_names()
            .iter()
            .map(|n| self.store.get(n).unwrap().numel())
            .sum()
    }

    /// Tokenize with a leading `<bos>`, reserving one slot for the answer
    /// token. Over-long prompts lose history tokens from the front; the
    /// placeholder and the question are never dropped.
    pub fn embed_prompt(&self, prompt: &RapPrompt) -> Result<EncodedPrompt, LmError> {
        let mut ids = vec![self.tokenizer.bos_id()];
        ids.extend(self.tokenizer.encode(&prompt.text));
        let mut placeholder_pos = prompt.placeholder_index.map(|i| i + 1);
        if let Some(p) = placeholder_pos {
            debug_assert_eq!(ids[p], self.tokenizer.placeholder_id());
        }
        let budget = self.config.max_len.saturating_sub(1);
        let mut truncated = false;
        if ids.len() > budget {
            let need = ids.len() - budget;
            // tokens strictly before the protected region, excluding <bos>
            let protect_from = 1 + placeholder_pos
                .map(|p| p - 1)
                .unwrap_or(prompt.question_start);
            let removable = protect_from.saturating_sub(1);
            if need > removable {
                return Err(LmError::PromptTooLong {
                    len: ids.len(),
                    max: budget,
                });
            }
            ids.drain(1..1 + need);
            placeholder_pos = placeholder_pos.map(|p| p - need);
            truncated = true;
        }
        Ok(EncodedPrompt {
            ids,
            placeholder_pos,
            truncated,
        })
    }

    /// Map the expert embedding into model space and overwrite one row of
    /// the embedded sequence.
    pub fn inject(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        embedded: Var,
        pos: usize,
        expert: &Tensor,
    ) -> Result<Var, LmError> {
        if expert.shape() != [self.config.d_gat] {
            return Err(LmError::ExpertDim {
                got: expert.numel(),
                expected: self.config.d_gat,
            });
        }
        let w = tape.param(store, "map.w")?;
        let b = tape.param(store, "map.b")?;
        let x = tape.constant(expert.clone());
        let m = tape.matvec(w, x)?;
        let m = tape.add(m, b)?;
        Ok(tape.set_row(embedded, pos, m)?)
    }

    fn dropout(&self, tape: &mut Tape, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
        if p <= 0.0 {
            return x;
        }
        let shape = tape.shape(x).to_vec();
        let numel: usize = shape.iter().product();
        let keep = 1.0 - p;
        let data: Vec<f64> = (0..numel)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = tape.constant(Tensor::new(shape, data).unwrap());
        tape.mul(x, mask).unwrap()
    }

    /// Q/K/V-style projection with the optional adapter path:
    /// base + (alpha/r)·(drop(x)·Aᵀ)·Bᵀ.
    fn proj_with_lora(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        cache: &mut BTreeMap<String, Var>,
        x: Var,
        base_name: &str,
        adapted: bool,
        dropout_rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var, LmError> {
        let w = cached_param(tape, store, cache, format!("{base_name}.w"))?;
        let base = tape.matmul_nt(x, w)?;
        let (Some(cfg), true) = (self.lora, adapted) else {
            return Ok(base);
        };
        let a = cached_param(tape, store, cache, format!("{base_name}.lora_a"))?;
        let b = cached_param(tape, store, cache, format!("{base_name}.lora_b"))?;
        let xin = match dropout_rng {
            Some(rng) => self.dropout(tape, x, cfg.dropout, rng),
            None => x,
        };
        let low = tape.matmul_nt(xin, a)?;
        let up = tape.matmul_nt(low, b)?;
        let scaled = tape.scale(up, cfg.alpha / cfg.r as f64);
        Ok(tape.add(base, scaled)?)
    }

    /// Run the transformer, returning the open tape and the final hidden
    /// state matrix [len, d]. `dropout_rng: Some` selects training mode.
    pub fn forward_hidden(
        &self,
        store: &ParamStore,
        ids: &[usize],
        injection: Option<(usize, &Tensor)>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tape, Var), LmError> {
        if ids.is_empty() {
            return Err(LmError::EmptyPrompts("forward"));
        }
        if ids.len() > self.config.max_len {
            return Err(LmError::PromptTooLong {
                len: ids.len(),
                max: self.config.max_len,
            });
        }
        let n = ids.len();
        let d = self.config.d;
        let dh = d / self.config.heads;
        let mut tape = Tape::new();
        let mut cache = BTreeMap::new();

        let tok = cached_param(&mut tape, store, &mut cache, "tok_emb".into())?;
        let mut x = tape.gather_rows(tok, ids)?;
        if let Some((pos, expert)) = injection {
            x = self.inject(&mut tape, store, x, pos, expert)?;
        }
        let pos_tab = cached_param(&mut tape, store, &mut cache, "pos_emb".into())?;
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(pos_tab, &positions)?;
        x = tape.add(x, pos)?;

        for blk in 0..self.config.blocks {
            let g1 = cached_param(&mut tape, store, &mut cache, format!("b{blk}.ln1.g"))?;
            let b1 = cached_param(&mut tape, store, &mut cache, format!("b{blk}.ln1.b"))?;
            let xn = tape.layer_norm_rows(x, g1, b1, 1e-5)?;
            let q = self.proj_with_lora(
                &mut tape,
                store,
                &mut cache,
                xn,
                &format!("b{blk}.attn.q"),
                true,
                &mut dropout_rng,
            )?;
            let k = self.proj_with_lora(
                &mut tape,
                store,
                &mut cache,
                xn,
                &format!("b{blk}.attn.k"),
                false,
                &mut dropout_rng,
            )?;
            let v = self.proj_with_lora(
                &mut tape,
                store,
                &mut cache,
                xn,
                &format!("b{blk}.attn.v"),
                true,
                &mut dropout_rng,
            )?;
            let mut heads = Vec::with_capacity(self.config.heads);
            for h in 0..self.config.heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi)?;
                let kh = tape.slice_cols(k, lo, hi)?;
                let vh = tape.slice_cols(v, lo, hi)?;
                let scores = tape.matmul_nt(qh, kh)?;
                let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
                let probs = tape.causal_row_softmax(scaled)?;
                heads.push(tape.matmul(probs, vh)?);
            }
            let cat = tape.concat_cols(&heads)?;
            let ow = cached_param(&mut tape, store, &mut cache, format!("b{blk}.attn.o.w"))?;
            let attn_out = tape.matmul_nt(cat, ow)?;
            x = tape.add(x, attn_out)?;

            let g2 = cached_param(&mut tape, store, &mut cache, format!("b{blk}.ln2.g"))?;
            let b2 = cached_param(&mut tape, store, &mut cache, format!("b{blk}.ln2.b"))?;
            let xn2 = tape.layer_norm_rows(x, g2, b2, 1e-5)?;
            let w1 = cached_param(&mut tape, store, &mut cache, format!("b{blk}.ff.w1"))?;
            let fb1 = cached_param(&mut tape, store, &mut cache, format!("b{blk}.ff.b1"))?;
            let w2 = cached_param(&mut tape, store, &mut cache, format!("b{blk}.ff.w2"))?;
            let fb2 = cached_param(&mut tape, store, &mut cache, format!("b{blk}.ff.b2"))?;
            let h1 = tape.matmul_nt(xn2, w1)?;
            let h1 = tape.add_bias(h1, fb1)?;
            let h1 = tape.relu(h1);
            let h2 = tape.matmul_nt(h1, w2)?;
            let h2 = tape.add_bias(h2, fb2)?;
            x = tape.add(x, h2)?;
        }
        let gf = cached_param(&mut tape, store, &mut cache, "ln_f.g".into())?;
        let bf = cached_param(&mut tape, store, &mut cache, "ln_f.b".into())?;
        let out = tape.layer_norm_rows(x, gf, bf, 1e-5)?;
        Ok((tape, out))
    }

    /// Next-token logits at one position, tied to the token table.
    pub fn logits_at(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        hidden: Var,
        pos: usize,
    ) -> Result<Var, LmError> {
        let row = tape.slice_row(hidden, pos)?;
        let tok = tape.param(store, "tok_emb")?;
        Ok(tape.matvec(tok, row)?)
    }

    /// Full [len, vocab] logit matrix.
    pub fn logits_all(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        hidden: Var,
    ) -> Result<Var, LmError> {
        let tok = tape.param(store, "tok_emb")?;
        Ok(tape.matmul_nt(hidden, tok)?)
    }

    /// Probability of a positive answer from the final prompt position.
    pub fn score_prompt(
        &self,
        encoded: &EncodedPrompt,
        expert: Option<&Tensor>,
    ) -> Result<f64, LmError> {
        let injection = match (encoded.placeholder_pos, expert) {
            (Some(p), Some(e)) => Some((p, e)),
            (None, Some(_)) => return Err(LmError::MissingPlaceholder),
            _ => None,
        };
        let (mut tape, hidden) = self.forward_hidden(&self.store, &encoded.ids, injection, None)?;
        let logits = self.logits_at(&mut tape, &self.store, hidden, encoded.ids.len() - 1)?;
        let lv = tape.value(logits).data();
        Ok(sigmoid_scalar(
            lv[self.tokenizer.yes_id()] - lv[self.tokenizer.no_id()],
        ))
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), LmError> {
        let meta = serde_json::json!({
            "kind": "lm",
            "config": self.config,
            "lora": self.lora,
            "tokenizer": self.tokenizer,
        });
        crate::numerics::save_params(path, &self.store, &meta)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, LmError> {
        let (meta, store) = crate::numerics::load_params(path)?;
        if meta["kind"] != "lm" {
            return Err(LmError::Checkpoint(format!(
                "expected an lm checkpoint, found kind {:?}",
                meta["kind"]
            )));
        }
        let config: LmConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| LmError::Checkpoint(format!("config: {e}")))?;
        let lora: Option<LoraConfig> = serde_json::from_value(meta["lora"].clone())
            .map_err(|e| LmError::Checkpoint(format!("lora: {e}")))?;
        let tokenizer: Tokenizer = serde_json::from_value(meta["tokenizer"].clone())
            .map_err(|e| LmError::Checkpoint(format!("tokenizer: {e}")))?;
        config.validate()?;
        Ok(SurrogateLM {
            config,
            tokenizer,
            store,
            lora,
        })
    }
}

fn cached_param(
    tape: &mut Tape,
    store: &ParamStore,
    cache: &mut BTreeMap<String, Var>,
    name: String,
) -> Result<Var, LmError> {
    if let Some(&v) = cache.get(&name) {
        return Ok(v);
    }
    let v = tape.param(store, &name)?;
    cache.insert(name, v);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::PLACEHOLDER_TOKEN;

    fn tiny_lm(corpus: &[&str]) -> SurrogateLM {
        let tk = Tokenizer::build(corpus, None);
        let cfg = LmConfig {
            d: 16,
            blocks: 2,
            heads: 2,
            max_len: 64,
            d_gat: 4,
        };
        SurrogateLM::new(cfg, tk, 9).unwrap()
    }

    fn prompt(text: &str) -> RapPrompt {
        let toks = crate::text::split_tokens(text);
        RapPrompt {
            text: text.to_string(),
            placeholder_index: toks.iter().position(|t| t == PLACEHOLDER_TOKEN),
            question_start: toks.len().saturating_sub(2),
            answer: "Yes".into(),
            retrieved_ids: vec![],
            recent_ids: vec![],
            meta: "m".into(),
            label: 1,
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let lm = tiny_lm(&["the movie was good Answer"]);
        let enc = lm.embed_prompt(&prompt("the movie was good ? Answer :")).unwrap();
        let (tape, hidden) = lm.forward_hidden(&lm.store, &enc.ids, None, None).unwrap();
        assert_eq!(tape.value(hidden).shape(), &[enc.ids.len(), 16]);
        let (tape2, hidden2) = lm.forward_hidden(&lm.store, &enc.ids, None, None).unwrap();
        assert_eq!(tape.value(hidden), tape2.value(hidden2));
    }

    #[test]
    fn causality_future_tokens_do_not_change_past_logits() {
        let lm = tiny_lm(&["a b c d e f g"]);
        let ids_a = vec![lm.tokenizer.bos_id(), 7, 8, 9, 10];
        let mut ids_b = ids_a.clone();
        let last = ids_b.len() - 1;
        ids_b[last] = 11;
        for j in 0..last {
            let (mut ta, ha) = lm.forward_hidden(&lm.store, &ids_a, None, None).unwrap();
            let (mut tb, hb) = lm.forward_hidden(&lm.store, &ids_b, None, None).unwrap();
            let la = lm.logits_at(&mut ta, &lm.store, ha, j).unwrap();
            let lb = lm.logits_at(&mut tb, &lm.store, hb, j).unwrap();
            assert_eq!(ta.value(la), tb.value(lb), "position {j} saw the future");
        }
    }

    #[test]
    fn injection_changes_only_placeholder_row() {
        let lm = tiny_lm(&["signal here Answer"]);
        let p = prompt("signal <ExpertEmb> here ? Answer :");
        let enc = lm.embed_prompt(&p).unwrap();
        let pos = enc.placeholder_pos.unwrap();
        let expert = Tensor::vector(vec![0.3, -0.4, 0.5, 1.0]);
        let mut tape = Tape::new();
        let tok = tape.param(&lm.store, "tok_emb").unwrap();
        let e = tape.gather_rows(tok, &enc.ids).unwrap();
        let e_hid = lm.inject(&mut tape, &lm.store, e, pos, &expert).unwrap();
        let before = tape.value(e).clone();
        let after = tape.value(e_hid).clone();
        assert_eq!(before.shape(), after.shape());
        for r in 0..before.rows() {
            let same = (0..before.cols()).all(|c| before.at2(r, c) == after.at2(r, c));
            assert_eq!(same, r != pos, "row {r}");
        }
    }

    #[test]
    fn injection_with_zero_map_gives_zero_row() {
        let lm = tiny_lm(&["x Answer"]);
        let mut zeroed = tiny_lm(&["x Answer"]);
        zeroed
            .store
            .set("map.w", Tensor::zeros(&[16, 4]))
            .unwrap();
        let p = prompt("x <ExpertEmb> ? Answer :");
        let enc = lm.embed_prompt(&p).unwrap();
        let pos = enc.placeholder_pos.unwrap();
        let expert = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        let mut tape = Tape::new();
        let tok = tape.param(&zeroed.store, "tok_emb").unwrap();
        let e = tape.gather_rows(tok, &enc.ids).unwrap();
        let e_hid = zeroed.inject(&mut tape, &zeroed.store, e, pos, &expert).unwrap();
        let row = tape.value(e_hid);
        for c in 0..row.cols() {
            assert_eq!(row.at2(pos, c), 0.0);
        }
    }

    #[test]
    fn wrong_expert_dim_is_error() {
        let lm = tiny_lm(&["x"]);
        let mut tape = Tape::new();
        let tok = tape.param(&lm.store, "tok_emb").unwrap();
        let e = tape.gather_rows(tok, &[1, 2]).unwrap();
        let bad = Tensor::vector(vec![1.0; 7]);
        assert!(matches!(
            lm.inject(&mut tape, &lm.store, e, 0, &bad),
            Err(LmError::ExpertDim { .. })
        ));
    }

    #[test]
    fn lora_at_init_is_exactly_the_base_model() {
        let base = tiny_lm(&["alpha beta gamma delta Answer"]);
        let mut wrapped = tiny_lm(&["alpha beta gamma delta Answer"]);
        wrapped.lora_wrap(LoraConfig::default(), 77).unwrap();
        let ids = vec![wrapped.tokenizer.bos_id(), 7, 8, 9];
        let (mut tb, hb) = base.forward_hidden(&base.store, &ids, None, None).unwrap();
        let (mut tw, hw) = wrapped
            .forward_hidden(&wrapped.store, &ids, None, None)
            .unwrap();
        let lb = base.logits_all(&mut tb, &base.store, hb).unwrap();
        let lw = wrapped.logits_all(&mut tw, &wrapped.store, hw).unwrap();
        let (a, b) = (tb.value(lb).data(), tw.value(lw).data());
        let max_dev = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert_eq!(max_dev, 0.0);
    }

    #[test]
    fn lora_trainable_count_matches_formula() {
        let mut lm = tiny_lm(&["a b"]);
        let cfg = LoraConfig::default();
        lm.lora_wrap(cfg, 1).unwrap();
        let d = lm.config.d;
        let per_matrix = cfg.r * (d + d);
        let expected = lm.config.blocks * 2 * per_matrix // q and v per block
            + d * lm.config.d_gat + d; // map layer
        assert_eq!(lm.trainable_numel(), expected);
    }

    #[test]
    fn truncation_drops_history_front_only() {
        let corpus = ["h will it work ? Answer"];
        let tk = Tokenizer::build(&corpus, None);
        let cfg = LmConfig {
            d: 16,
            blocks: 1,
            heads: 2,
            max_len: 12,
            d_gat: 4,
        };
        let lm = SurrogateLM::new(cfg, tk, 1).unwrap();
        // 16 text tokens, placeholder near the end
        let p = prompt("h h h h h h h h h h <ExpertEmb> will it work ? Answer");
        let enc = lm.embed_prompt(&p).unwrap();
        assert!(enc.truncated);
        assert_eq!(enc.ids.len(), 11); // max_len - 1 answer slot
        let pos = enc.placeholder_pos.unwrap();
        assert_eq!(enc.ids[pos], lm.tokenizer.placeholder_id());
        // tail (question) intact
        assert_eq!(
            lm.tokenizer.decode(&enc.ids[pos + 1..]),
            "will it work ? Answer"
        );
    }

    #[test]
    fn unremovable_overflow_is_an_error() {
        let tk = Tokenizer::build(&["w"], None);
        let cfg = LmConfig {
            d: 16,
            blocks: 1,
            heads: 2,
            max_len: 4,
            d_gat: 4,
        };
        let lm = SurrogateLM::new(cfg, tk, 1).unwrap();
        let p = prompt("<ExpertEmb> a b c d e f");
        assert!(matches!(
            lm.embed_prompt(&p),
            Err(LmError::PromptTooLong { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut lm = tiny_lm(&["persist me Answer"]);
        lm.lora_wrap(LoraConfig::default(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.ckpt");
        lm.save(&path).unwrap();
        let lm2 = SurrogateLM::load(&path).unwrap();
        assert_eq!(lm2.config.d, 16);
        assert!(lm2.lora.is_some());
        let enc = lm.embed_prompt(&prompt("persist me ? Answer :")).unwrap();
        assert_eq!(
            lm.score_prompt(&enc, None).unwrap(),
            lm2.score_prompt(&enc, None).unwrap()
        );
    }
}
