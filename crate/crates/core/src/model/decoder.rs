//! Multimodal trajectory decoder: learnable mode queries, cross-attention
//! over the fused scene context, autoregressive point decoding, score heads,
//! optional level-wise refinement, and the single-trajectory variant.

use rand_chacha::ChaCha8Rng;

use super::encoders::{all_valid_bias, Fused};
use super::features::POS_SCALE;
use super::ModelConfig;
use crate::nn::{normal_init, Arr, CrossBlock, Linear, Mlp2, ParamStore, Tape, Tx};

/// How the rollout obtains the sequence decoded "thus far".
pub enum RolloutMode<'a> {
    /// Step `t` consumes the given position at `t - 1` (teacher forcing when
    /// these are ground truth; also used for causality probes).
    Forced(&'a [Arr]),
    /// Step `t` consumes the model's own previous output.
    Feedback,
}

/// Recurrent point emitter: a tanh cell over the prefix plus a two-layer
/// head emitting `ar_chunk` displacement(s) per step.
pub struct RolloutHead {
    p_emb: Linear,
    h_init: Linear,
    h_h: Linear,
    out: Mlp2,
}

impl RolloutHead {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, chunk: usize) -> Self {
        RolloutHead {
            p_emb: Linear::new(store, rng, &format!("{name}.p_emb"), 2, d),
            h_init: Linear::new(store, rng, &format!("{name}.h_init"), d, d),
            h_h: Linear::new(store, rng, &format!("{name}.h_h"), d, d),
            out: Mlp2::new(store, rng, &format!("{name}.out"), 2 * d, d, 2 * chunk),
        }
    }

    /// Emit `t_f` positions for every query row. `anchors` holds the current
    /// position each trajectory starts from.
    pub fn rollout(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        contents: Tx,
        anchors: &Arr,
        mode: &RolloutMode,
        t_f: usize,
        chunk: usize,
    ) -> Vec<Tx> {
        let init = self.h_init.fwd(t, store, contents);
        let mut h = t.tanh(init);
        let mut prev = t.constant(anchors.clone());
        let mut positions: Vec<Tx> = Vec::with_capacity(t_f);
        while positions.len() < t_f {
            let prev_scaled = t.scale(prev, 1.0 / POS_SCALE);
            let a = self.h_h.fwd(t, store, h);
            let b = self.p_emb.fwd(t, store, prev_scaled);
            let s = t.add(a, b);
            h = t.tanh(s);
            let cat = t.concat_cols(&[contents, h]);
            let deltas = self.out.fwd(t, store, cat);
            let mut running = prev;
            for c in 0..chunk {
                if positions.len() >= t_f {
                    break;
                }
                let d = t.slice_cols(deltas, 2 * c, 2 * c + 2);
                let pos = t.add(d, running);
                positions.push(pos);
                running = pos;
            }
            prev = match mode {
                RolloutMode::Forced(pts) => t.constant(pts[positions.len() - 1].clone()),
                RolloutMode::Feedback => running,
            };
        }
        positions
    }
}

/// Decode targets: the ego plus every valid agent slot, in decode order.
#[derive(Debug, Clone)]
pub struct DecodeTargets {
    pub agent_slots: Vec<usize>,
    /// `[1 + n_agents, 2]`: ego anchor first.
    pub anchors: Arr,
}

impl DecodeTargets {
    pub fn n_targets(&self) -> usize {
        1 + self.agent_slots.len()
    }
}

/// One decode level's graph handles.
pub struct DecodedLevel {
    /// Per step `[Q, 2]` with `Q = n_targets * m`, target-major rows.
    pub positions: Vec<Tx>,
    /// `[1, m]` score logits for the ego.
    pub plan_logits: Tx,
    /// `[1, m]` score logits per agent target.
    pub pred_logits: Vec<Tx>,
}

pub struct Decoded {
    pub levels: Vec<DecodedLevel>,
    pub n_queries: usize,
}

struct RefineLevel {
    traj_proj: Mlp2,
    cross: Vec<CrossBlock>,
    plan_delta: Mlp2,
    pred_delta: Mlp2,
    plan_score_delta: Mlp2,
    pred_score_delta: Mlp2,
}

pub struct Decoder {
    queries: usize,
    cross: Vec<CrossBlock>,
    plan_rollout: RolloutHead,
    pred_rollout: RolloutHead,
    plan_score: Mlp2,
    pred_score: Mlp2,
    refine: Vec<RefineLevel>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let queries = store.add("dec.queries", normal_init(rng, cfg.m_modes, d, 0.02));
        let cross = (0..cfg.k_c)
            .map(|i| CrossBlock::new(store, rng, &format!("dec.cross{i}"), d, cfg.n_heads, cfg.ffn_mult))
            .collect();
        let plan_rollout = RolloutHead::new(store, rng, "dec.plan.rollout", d, cfg.ar_chunk);
        let pred_rollout = RolloutHead::new(store, rng, "dec.pred.rollout", d, cfg.ar_chunk);
        let plan_score = Mlp2::new(store, rng, "dec.plan.score", d, d, 1);
        let pred_score = Mlp2::new(store, rng, "dec.pred.score", d, d, 1);
        let refine = (1..cfg.levels)
            .map(|l| {
                let name = format!("dec.refine{l}");
                RefineLevel {
                    traj_proj: Mlp2::new(store, rng, &format!("{name}.traj_proj"), 2, d, d),
                    cross: (0..cfg.k_c)
                        .map(|i| {
                            CrossBlock::new(
                                store,
                                rng,
                                &format!("{name}.cross{i}"),
                                d,
                                cfg.n_heads,
                                cfg.ffn_mult,
                            )
                        })
                        .collect(),
                    plan_delta: Mlp2::new_zero_out(store, rng, &format!("{name}.plan_delta"), d, d, 2 * cfg.t_f),
                    pred_delta: Mlp2::new_zero_out(store, rng, &format!("{name}.pred_delta"), d, d, 2 * cfg.t_f),
                    plan_score_delta: Mlp2::new_zero_out(store, rng, &format!("{name}.plan_sdelta"), d, d, 1),
                    pred_score_delta: Mlp2::new_zero_out(store, rng, &format!("{name}.pred_sdelta"), d, d, 1),
                }
            })
            .collect();
        Decoder {
            queries,
            cross,
            plan_rollout,
            pred_rollout,
            plan_score,
            pred_score,
            refine,
        }
    }

    /// Initial query contents: mode query + the target's fused token.
    fn initial_queries(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        fused: &Fused,
        targets: &DecodeTargets,
        m: usize,
    ) -> Tx {
        let n_t = targets.n_targets();
        let mode_q = t.param(self.queries, store.value(self.queries).clone());
        let tile: Vec<usize> = (0..n_t * m).map(|q| q % m).collect();
        let tiled = t.gather_rows(mode_q, &tile);
        let mut ctx_rows = Vec::with_capacity(n_t * m);
        let ego_row = fused.rows.ego;
        for _ in 0..m {
            ctx_rows.push(ego_row);
        }
        for &slot in &targets.agent_slots {
            let row = fused.rows.agents[slot].expect("decode target must have a fused token");
            for _ in 0..m {
                ctx_rows.push(row);
            }
        }
        let target_tok = t.gather_rows(fused.tokens, &ctx_rows);
        t.add(tiled, target_tok)
    }

    fn score_logits(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        contents: Tx,
        n_agents: usize,
        m: usize,
    ) -> (Tx, Vec<Tx>) {
        let plan_c = t.slice_rows(contents, 0, m);
        let plan_raw = self.plan_score.fwd(t, store, plan_c);
        let plan_logits = t.transpose(plan_raw);
        let mut pred_logits = Vec::with_capacity(n_agents);
        if n_agents > 0 {
            let pred_c = t.slice_rows(contents, m, (1 + n_agents) * m);
            let pred_raw = self.pred_score.fwd(t, store, pred_c);
            for a in 0..n_agents {
                let rows = t.slice_rows(pred_raw, a * m, (a + 1) * m);
                pred_logits.push(t.transpose(rows));
            }
        }
        (plan_logits, pred_logits)
    }

    fn rollout_all(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        contents: Tx,
        targets: &DecodeTargets,
        mode: &RolloutMode,
        cfg: &ModelConfig,
    ) -> Vec<Tx> {
        let m = cfg.m_modes;
        let n_agents = targets.agent_slots.len();
        let mut anchors = Arr::zeros((targets.n_targets() * m, 2));
        for (i, row) in targets.anchors.rows().into_iter().enumerate() {
            for j in 0..m {
                anchors.row_mut(i * m + j).assign(&row);
            }
        }
        let plan_c = t.slice_rows(contents, 0, m);
        let plan_anchor = anchors.slice(ndarray::s![0..m, ..]).to_owned();
        // Forced arrays cover all query rows; split them per head.
        let split = |arrs: &[Arr], r0: usize, r1: usize| -> Vec<Arr> {
            arrs.iter()
                .map(|a| a.slice(ndarray::s![r0..r1, ..]).to_owned())
                .collect()
        };
        let plan_mode_arrays;
        let plan_mode = match mode {
            RolloutMode::Forced(pts) => {
                plan_mode_arrays = split(pts, 0, m);
                RolloutMode::Forced(&plan_mode_arrays)
            }
            RolloutMode::Feedback => RolloutMode::Feedback,
        };
        let plan_pos =
            self.plan_rollout
                .rollout(t, store, plan_c, &plan_anchor, &plan_mode, cfg.t_f, cfg.ar_chunk);
        if n_agents == 0 {
            return plan_pos;
        }
        let q = targets.n_targets() * m;
        let pred_c = t.slice_rows(contents, m, q);
        let pred_anchor = anchors.slice(ndarray::s![m..q, ..]).to_owned();
        let pred_mode_arrays;
        let pred_mode = match mode {
            RolloutMode::Forced(pts) => {
                pred_mode_arrays = split(pts, m, q);
                RolloutMode::Forced(&pred_mode_arrays)
            }
            RolloutMode::Feedback => RolloutMode::Feedback,
        };
        let pred_pos =
            self.pred_rollout
                .rollout(t, store, pred_c, &pred_anchor, &pred_mode, cfg.t_f, cfg.ar_chunk);
        plan_pos
            .into_iter()
            .zip(pred_pos)
            .map(|(p, a)| t.concat_rows(&[p, a]))
            .collect()
    }

    /// Run every decode level. Level 1 decodes autoregressively; levels above
    /// fuse the previous level's trajectories back into the context and emit
    /// residual corrections through zero-initialized heads.
    pub fn decode(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        fused: &Fused,
        targets: &DecodeTargets,
        mode: &RolloutMode,
        cfg: &ModelConfig,
    ) -> Decoded {
        let m = cfg.m_modes;
        let n_agents = targets.agent_slots.len();
        let n_queries = targets.n_targets() * m;
        let ctx_bias = all_valid_bias(n_queries, fused.rows.n_rows);

        let mut x = self.initial_queries(t, store, fused, targets, m);
        for block in &self.cross {
            x = block.fwd(t, store, x, fused.tokens, &ctx_bias);
        }
        let positions = self.rollout_all(t, store, x, targets, mode, cfg);
        let (plan_logits, pred_logits) = self.score_logits(t, store, x, n_agents, m);
        let mut levels = vec![DecodedLevel {
            positions,
            plan_logits,
            pred_logits,
        }];

        for level in &self.refine {
            let prev = levels.last().unwrap();
            // Encode previous-level trajectories with the same style of
            // point projection used for agent tracks.
            let step_major = t.concat_rows(&prev.positions);
            let qmajor: Vec<usize> = (0..n_queries)
                .flat_map(|q| (0..cfg.t_f).map(move |s| s * n_queries + q))
                .collect();
            let per_query = t.gather_rows(step_major, &qmajor);
            let scaled = t.scale(per_query, 1.0 / POS_SCALE);
            let proj = level.traj_proj.fwd(t, store, scaled);
            let all_steps = vec![true; cfg.t_f];
            let mut traj_toks = Vec::with_capacity(n_queries);
            for q in 0..n_queries {
                let block = t.slice_rows(proj, q * cfg.t_f, (q + 1) * cfg.t_f);
                traj_toks.push(t.max_rows_masked(block, &all_steps));
            }
            let traj_tokens = t.concat_rows(&traj_toks);
            let ctx2 = t.concat_rows(&[fused.tokens, traj_tokens]);
            let bias2 = all_valid_bias(n_queries, fused.rows.n_rows + n_queries);

            let mut x2 = self.initial_queries(t, store, fused, targets, m);
            for block in &level.cross {
                x2 = block.fwd(t, store, x2, ctx2, &bias2);
            }

            let plan_c2 = t.slice_rows(x2, 0, m);
            let plan_d = level.plan_delta.fwd(t, store, plan_c2);
            let delta_flat = if n_agents > 0 {
                let pred_c2 = t.slice_rows(x2, m, n_queries);
                let pred_d = level.pred_delta.fwd(t, store, pred_c2);
                t.concat_rows(&[plan_d, pred_d])
            } else {
                plan_d
            };
            let positions = prev
                .positions
                .iter()
                .enumerate()
                .map(|(s, &p)| {
                    let d = t.slice_cols(delta_flat, 2 * s, 2 * s + 2);
                    t.add(p, d)
                })
                .collect();

            let plan_sd = level.plan_score_delta.fwd(t, store, plan_c2);
            let plan_sd = t.transpose(plan_sd);
            let plan_logits = t.add(prev.plan_logits, plan_sd);
            let mut pred_logits = Vec::with_capacity(n_agents);
            if n_agents > 0 {
                let pred_c2 = t.slice_rows(x2, m, n_queries);
                let pred_sd = level.pred_score_delta.fwd(t, store, pred_c2);
                for a in 0..n_agents {
                    let rows = t.slice_rows(pred_sd, a * m, (a + 1) * m);
                    let rows = t.transpose(rows);
                    pred_logits.push(t.add(prev.pred_logits[a], rows));
                }
            }
            levels.push(DecodedLevel {
                positions,
                plan_logits,
                pred_logits,
            });
        }

        Decoded { levels, n_queries }
    }
}

/// The Vanilla-IL decoder: one query, one cross-attention layer, one head,
/// emitting a single planned trajectory.
pub struct VanillaDecoder {
    query: usize,
    cross: CrossBlock,
    rollout: RolloutHead,
}

impl VanillaDecoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        VanillaDecoder {
            query: store.add("dec.queries", normal_init(rng, 1, d, 0.02)),
            cross: CrossBlock::new(store, rng, "dec.cross0", d, cfg.n_heads, cfg.ffn_mult),
            rollout: RolloutHead::new(store, rng, "dec.plan.rollout", d, cfg.ar_chunk),
        }
    }

    pub fn decode(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        fused: &Fused,
        mode: &RolloutMode,
        cfg: &ModelConfig,
    ) -> Vec<Tx> {
        let bias = all_valid_bias(1, fused.rows.n_rows);
        let q = t.param(self.query, store.value(self.query).clone());
        let ego_tok = t.gather_rows(fused.tokens, &[fused.rows.ego]);
        let q = t.add(q, ego_tok);
        let x = self.cross.fwd(t, store, q, fused.tokens, &bias);
        self.rollout
            .rollout(t, store, x, &Arr::zeros((1, 2)), mode, cfg.t_f, cfg.ar_chunk)
    }
}
