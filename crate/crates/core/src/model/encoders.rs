//! The four scene encoders and the fusion transformer.
//!
//! Agent, map, and navigation inputs go through per-element two-layer MLPs
//! with ReLU and a masked max-pool over their step/point axis. The ego state
//! is split into six variable tokens with learned slot encodings; during
//! training every token except positions and heading is independently zeroed
//! with probability `dropout_p_state`. Fusion runs `K_T` self-attention
//! blocks over the active tokens.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::features::{
    ego_groups, normalize_agent_rows, normalize_lane_rows, normalize_route_rows, SceneTensors,
    DROPPABLE_EGO_TOKENS, N_EGO_TOKENS,
};
use super::ModelConfig;
use crate::nn::{
    key_mask_bias, normal_init, Arr, Linear, Mlp2, ParamStore, Tape, TransformerBlock, Tx,
};

pub struct EgoEncoder {
    groups: [Linear; N_EGO_TOKENS],
    pe: usize,
    out: Mlp2,
}

impl EgoEncoder {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, d: usize) -> Self {
        let widths = [1, 1, 1, 2, 2, 1];
        let names = ["x", "y", "heading", "vel", "acc", "steer"];
        let groups = std::array::from_fn(|i| {
            Linear::new(store, rng, &format!("enc.ego.g_{}", names[i]), widths[i], d)
        });
        let pe = store.add("enc.ego.pe", normal_init(rng, N_EGO_TOKENS, d, 0.02));
        let out = Mlp2::new(store, rng, "enc.ego.out", d, d, d);
        EgoEncoder { groups, pe, out }
    }
}

/// Sample a state-dropout mask: `true` means the token is zeroed. Position
/// and heading tokens are never dropped, on any stream.
pub fn sample_state_dropout(rng: &mut ChaCha8Rng, p: f64) -> [bool; N_EGO_TOKENS] {
    let mut mask = [false; N_EGO_TOKENS];
    for &i in DROPPABLE_EGO_TOKENS.iter() {
        mask[i] = rng.gen_bool(p);
    }
    mask
}

/// Row bookkeeping for the fused token sequence.
#[derive(Debug, Clone)]
pub struct FusedRows {
    pub ego: usize,
    /// Active row per agent slot; `None` for fully padded slots.
    pub agents: Vec<Option<usize>>,
    pub lanes: Vec<Option<usize>>,
    pub nav: usize,
    pub n_rows: usize,
}

/// Fusion output: the token matrix on the tape plus the row map.
pub struct Fused {
    pub tokens: Tx,
    pub rows: FusedRows,
}

pub struct Encoders {
    pub agent_proj: Mlp2,
    pub map_proj: Mlp2,
    pub nav_proj: Mlp2,
    pub ego: EgoEncoder,
    pub fusion: Vec<TransformerBlock>,
}

impl Encoders {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let agent_proj = Mlp2::new(store, rng, "enc.agent.proj", 13, d, d);
        let map_proj = Mlp2::new(store, rng, "enc.map.proj", 8, d, d);
        let nav_proj = Mlp2::new(store, rng, "enc.nav.proj", 3, d, d);
        let ego = EgoEncoder::new(store, rng, d);
        let fusion = (0..cfg.k_t)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    rng,
                    &format!("enc.fusion.block{i}"),
                    d,
                    cfg.n_heads,
                    cfg.ffn_mult,
                )
            })
            .collect();
        Encoders {
            agent_proj,
            map_proj,
            nav_proj,
            ego,
            fusion,
        }
    }

    /// Encode agent tracks into per-agent embeddings. Rows of `raw` follow
    /// the `[N * (T_h+1), 13]` layout; only agents with at least one valid
    /// frame are projected, the rest yield `None` (zero, invalid token).
    pub fn encode_agents(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        raw: &Arr,
        valid: &[Vec<bool>],
    ) -> Vec<Option<Tx>> {
        let n = valid.len();
        let t1 = if n == 0 { 0 } else { raw.nrows() / n };
        let active: Vec<usize> = (0..n).filter(|&a| valid[a].iter().any(|v| *v)).collect();
        if active.is_empty() {
            return vec![None; n];
        }
        // One compact matrix for all active agents keeps the matmuls large.
        let mut compact = Arr::zeros((active.len() * t1, raw.ncols()));
        for (k, &a) in active.iter().enumerate() {
            compact
                .slice_mut(ndarray::s![k * t1..(k + 1) * t1, ..])
                .assign(&raw.slice(ndarray::s![a * t1..(a + 1) * t1, ..]));
        }
        let x = t.constant(normalize_agent_rows(&compact));
        let proj = self.agent_proj.fwd(t, store, x);
        let mut out = vec![None; n];
        for (k, &a) in active.iter().enumerate() {
            let block = t.slice_rows(proj, k * t1, (k + 1) * t1);
            out[a] = Some(t.max_rows_masked(block, &valid[a]));
        }
        out
    }

    /// Shared-architecture map encoder (per-lane pooled embeddings).
    pub fn encode_map(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        raw: &Arr,
        valid: &[Vec<bool>],
    ) -> Vec<Option<Tx>> {
        let m = valid.len();
        let pm = if m == 0 { 0 } else { raw.nrows() / m };
        let active: Vec<usize> = (0..m).filter(|&l| valid[l].iter().any(|v| *v)).collect();
        if active.is_empty() {
            return vec![None; m];
        }
        let mut compact = Arr::zeros((active.len() * pm, raw.ncols()));
        for (k, &l) in active.iter().enumerate() {
            compact
                .slice_mut(ndarray::s![k * pm..(k + 1) * pm, ..])
                .assign(&raw.slice(ndarray::s![l * pm..(l + 1) * pm, ..]));
        }
        let x = t.constant(normalize_lane_rows(&compact));
        let proj = self.map_proj.fwd(t, store, x);
        let mut out = vec![None; m];
        for (k, &l) in active.iter().enumerate() {
            let block = t.slice_rows(proj, k * pm, (k + 1) * pm);
            out[l] = Some(t.max_rows_masked(block, &valid[l]));
        }
        out
    }

    /// Navigation encoder over the valid route prefix (or any point window).
    pub fn encode_navigation(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        raw: &Arr,
        valid: &[bool],
    ) -> Tx {
        let n_valid = valid.iter().filter(|v| **v).count();
        if n_valid == 0 {
            return t.zeros_const(1, self.nav_out_dim(store));
        }
        let rows: Vec<usize> = (0..valid.len()).filter(|&p| valid[p]).collect();
        let mut compact = Arr::zeros((rows.len(), raw.ncols()));
        for (k, &p) in rows.iter().enumerate() {
            compact.row_mut(k).assign(&raw.row(p));
        }
        let x = t.constant(normalize_route_rows(&compact));
        let proj = self.nav_proj.fwd(t, store, x);
        let all = vec![true; rows.len()];
        t.max_rows_masked(proj, &all)
    }

    fn nav_out_dim(&self, store: &ParamStore) -> usize {
        store.value(self.nav_proj.l2.w).ncols()
    }

    /// Encode the six ego-state tokens with optional dropout mask, then sum
    /// and project to `[1, D]`.
    pub fn encode_ego_state(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        ego: &[f64; 11],
        drop: Option<&[bool; N_EGO_TOKENS]>,
    ) -> Tx {
        let groups = ego_groups(ego);
        let pe = t.param(self.ego.pe, store.value(self.ego.pe).clone());
        let mut sum: Option<Tx> = None;
        for (i, g) in groups.iter().enumerate() {
            let x = t.constant(Arr::from_shape_vec((1, g.len()), g.clone()).unwrap());
            let tok = self.ego.groups[i].fwd(t, store, x);
            let slot = t.slice_rows(pe, i, i + 1);
            let mut tok = t.add(tok, slot);
            if drop.map(|d| d[i]).unwrap_or(false) {
                tok = t.scale(tok, 0.0);
            }
            sum = Some(match sum {
                Some(s) => t.add(s, tok),
                None => tok,
            });
        }
        self.ego.out.fwd(t, store, sum.unwrap())
    }

    /// Concatenate active tokens in `[ego | agents | lanes | nav | extra]`
    /// order and run the fusion blocks. Fully padded entities contribute no
    /// token; their context rows are zero by construction.
    pub fn fuse(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        ego_tok: Tx,
        agent_toks: &[Option<Tx>],
        lane_toks: &[Option<Tx>],
        nav_tok: Tx,
        extra: Option<Tx>,
    ) -> Fused {
        let mut parts = vec![ego_tok];
        let mut rows = FusedRows {
            ego: 0,
            agents: vec![None; agent_toks.len()],
            lanes: vec![None; lane_toks.len()],
            nav: 0,
            n_rows: 0,
        };
        for (a, tok) in agent_toks.iter().enumerate() {
            if let Some(tok) = tok {
                rows.agents[a] = Some(parts.len());
                parts.push(*tok);
            }
        }
        for (l, tok) in lane_toks.iter().enumerate() {
            if let Some(tok) = tok {
                rows.lanes[l] = Some(parts.len());
                parts.push(*tok);
            }
        }
        rows.nav = parts.len();
        parts.push(nav_tok);
        if let Some(extra) = extra {
            parts.push(extra);
        }
        let mut x = t.concat_rows(&parts);
        let n_rows = t.value(x).nrows();
        rows.n_rows = n_rows;
        let bias = key_mask_bias(n_rows, &vec![true; n_rows]);
        for block in &self.fusion {
            x = block.fwd(t, store, x, &bias);
        }
        Fused { tokens: x, rows }
    }

    /// Full finetune-path context from scene tensors.
    pub fn encode_scene(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        tensors: &SceneTensors,
        drop: Option<&[bool; N_EGO_TOKENS]>,
    ) -> Fused {
        let agent_toks = self.encode_agents(t, store, &tensors.agents, &tensors.agent_valid);
        let lane_toks = self.encode_map(t, store, &tensors.lanes, &tensors.lane_valid);
        let nav_tok = self.encode_navigation(t, store, &tensors.route, &tensors.route_valid);
        let ego_tok = self.encode_ego_state(t, store, &tensors.ego, drop);
        self.fuse(t, store, ego_tok, &agent_toks, &lane_toks, nav_tok, None)
    }
}

/// Scatter fused rows into the public `[1 + N + M + 1, D]` context with
/// zeros at invalid slots.
pub fn scene_context_full(t: &Tape, fused: &Fused, n: usize, m: usize, d: usize) -> (Arr, Vec<bool>) {
    let tokens = t.value(fused.tokens);
    let mut out = Arr::zeros((1 + n + m + 1, d));
    let mut valid = vec![false; 1 + n + m + 1];
    out.row_mut(0).assign(&tokens.row(fused.rows.ego));
    valid[0] = true;
    for (a, row) in fused.rows.agents.iter().enumerate() {
        if let Some(r) = row {
            out.row_mut(1 + a).assign(&tokens.row(*r));
            valid[1 + a] = true;
        }
    }
    for (l, row) in fused.rows.lanes.iter().enumerate() {
        if let Some(r) = row {
            out.row_mut(1 + n + l).assign(&tokens.row(*r));
            valid[1 + n + l] = true;
        }
    }
    out.row_mut(1 + n + m).assign(&tokens.row(fused.rows.nav));
    valid[1 + n + m] = true;
    (out, valid)
}

/// Arc wrapper so constants can be reused across blocks.
pub fn all_valid_bias(n_queries: usize, n_keys: usize) -> Arc<Arr> {
    key_mask_bias(n_queries, &vec![true; n_keys])
}
