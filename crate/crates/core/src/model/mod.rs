//! The integrated prediction-and-planning transformer.

pub mod decoder;
pub mod encoders;
pub mod features;

use ndarray::{Array1, Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::mix_seed;
use crate::nn::{Arr, ParamStore, Tape};
use decoder::{DecodeTargets, Decoded, Decoder, RolloutMode, VanillaDecoder};
use encoders::{sample_state_dropout, scene_context_full, Encoders, Fused};
use features::SceneTensors;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    VanillaIl,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Fusion self-attention blocks.
    pub k_t: usize,
    /// Decoder cross-attention layers.
    pub k_c: usize,
    pub ffn_mult: usize,
    /// Output modes `m`.
    pub m_modes: usize,
    pub t_f: usize,
    /// Decode levels; > 1 enables trajectory refinement.
    pub levels: usize,
    /// Points emitted per autoregressive step.
    pub ar_chunk: usize,
    pub dropout_p_state: f64,
    pub variant: Variant,
}

impl ModelConfig {
    /// Full-scale profile from the headline experiments.
    pub fn paper() -> Self {
        ModelConfig {
            d_model: 256,
            n_heads: 8,
            k_t: 6,
            k_c: 6,
            ffn_mult: 4,
            m_modes: 12,
            t_f: 50,
            levels: 1,
            ar_chunk: 1,
            dropout_p_state: 0.75,
            variant: Variant::Full,
        }
    }

    /// Reduced profile sized for single-machine runs.
    pub fn desk() -> Self {
        ModelConfig {
            d_model: 128,
            k_t: 4,
            k_c: 4,
            ..Self::paper()
        }
    }

    /// Tiny profile for tests.
    pub fn toy(d_model: usize, t_f: usize) -> Self {
        ModelConfig {
            d_model,
            n_heads: 2,
            k_t: 1,
            k_c: 1,
            ffn_mult: 2,
            m_modes: 3,
            t_f,
            levels: 1,
            ar_chunk: 1,
            dropout_p_state: 0.75,
            variant: Variant::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config("d_model must be divisible by n_heads".into()));
        }
        if self.m_modes < 1 || self.levels < 1 || self.ar_chunk < 1 || self.t_f < 1 {
            return Err(Error::Config("m, levels, ar_chunk, t_f must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p_state) {
            return Err(Error::Config("dropout_p_state must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Multimodal model output in plain arrays.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `[m, T_f, 2]` planned ego trajectories, meters.
    pub ego_trajs: Array3<f64>,
    /// `[m]` ego mode scores on the probability simplex.
    pub ego_scores: Array1<f64>,
    /// `[N, m, T_f, 2]` agent predictions; padded slots are zero.
    pub agent_trajs: Array4<f64>,
    /// `[N, m]`; padded slots carry the uniform distribution.
    pub agent_scores: Array2<f64>,
    /// Earlier levels when refinement is enabled (oldest first).
    pub prior_levels: Vec<ModelOutput>,
}

impl ModelOutput {
    pub fn validate(&self) -> Result<()> {
        let simplex = |s: &[f64]| -> bool {
            s.iter().all(|v| *v >= 0.0) && (s.iter().sum::<f64>() - 1.0).abs() < 1e-5
        };
        if !simplex(self.ego_scores.as_slice().unwrap()) {
            return Err(Error::InvalidInput("ego scores off the simplex".into()));
        }
        for row in self.agent_scores.rows() {
            if !simplex(row.as_slice().unwrap()) {
                return Err(Error::InvalidInput("agent scores off the simplex".into()));
            }
        }
        if self.ego_trajs.iter().any(|v| !v.is_finite())
            || self.agent_trajs.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("non-finite trajectory output".into()));
        }
        for lvl in &self.prior_levels {
            lvl.validate()?;
        }
        Ok(())
    }
}

fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / s).collect()
}

pub enum DecoderVariant {
    Full(Decoder),
    Vanilla(VanillaDecoder),
}

pub struct PlanModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub decoder: DecoderVariant,
}

impl PlanModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1217, 0));
        let encoders = Encoders::new(&mut store, &mut rng, &config);
        let decoder = match config.variant {
            Variant::Full => DecoderVariant::Full(Decoder::new(&mut store, &mut rng, &config)),
            Variant::VanillaIl => {
                DecoderVariant::Vanilla(VanillaDecoder::new(&mut store, &mut rng, &config))
            }
        };
        Ok(PlanModel {
            config,
            store,
            encoders,
            decoder,
        })
    }

    /// Decode targets: the ego plus every agent slot with any valid frame.
    pub fn decode_targets(&self, tensors: &SceneTensors) -> DecodeTargets {
        let slots: Vec<usize> = (0..tensors.agent_valid.len())
            .filter(|&a| tensors.agent_any_valid(a))
            .collect();
        let mut anchors = Arr::zeros((1 + slots.len(), 2));
        for (k, &slot) in slots.iter().enumerate() {
            let (x, y) = tensors.agent_anchor(slot).unwrap_or((0.0, 0.0));
            anchors[[1 + k, 0]] = x;
            anchors[[1 + k, 1]] = y;
        }
        DecodeTargets {
            agent_slots: slots,
            anchors,
        }
    }

    /// Encode the finetune-path context (optionally with state dropout).
    pub fn encode(
        &self,
        t: &mut Tape,
        tensors: &SceneTensors,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Fused {
        let drop = dropout_rng.map(|rng| sample_state_dropout(rng, self.config.dropout_p_state));
        self.encoders
            .encode_scene(t, &self.store, tensors, drop.as_ref())
    }

    /// Public scene-context view: `[1 + N + M + 1, D]` with zero rows for
    /// fully padded entities.
    pub fn scene_context(&self, tensors: &SceneTensors) -> (Arr, Vec<bool>) {
        let mut t = Tape::new();
        let fused = self.encode(&mut t, tensors, None);
        scene_context_full(
            &t,
            &fused,
            tensors.agent_valid.len(),
            tensors.lane_valid.len(),
            self.config.d_model,
        )
    }

    /// Graph-building forward shared by training and evaluation.
    pub fn forward_graph(
        &self,
        t: &mut Tape,
        tensors: &SceneTensors,
        targets: &DecodeTargets,
        mode: &RolloutMode,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Decoded {
        assert_eq!(self.config.t_f, tensors.dims.t_f, "t_f mismatch with dims");
        let fused = self.encode(t, tensors, dropout_rng);
        match &self.decoder {
            DecoderVariant::Full(d) => d.decode(t, &self.store, &fused, targets, mode, &self.config),
            DecoderVariant::Vanilla(d) => {
                let positions = d.decode(t, &self.store, &fused, mode, &self.config);
                let plan_logits = t.zeros_const(1, 1);
                Decoded {
                    levels: vec![decoder::DecodedLevel {
                        positions,
                        plan_logits,
                        pred_logits: Vec::new(),
                    }],
                    n_queries: 1,
                }
            }
        }
    }

    /// Deterministic inference: feedback rollout, no dropout.
    pub fn forward_eval(&self, tensors: &SceneTensors) -> ModelOutput {
        let mut t = Tape::new();
        let targets = self.decode_targets(tensors);
        let decoded = self.forward_graph(&mut t, tensors, &targets, &RolloutMode::Feedback, None);
        self.assemble_output(&t, &decoded, &targets, tensors)
    }

    /// Convert a decode graph into plain output arrays.
    pub fn assemble_output(
        &self,
        t: &Tape,
        decoded: &Decoded,
        targets: &DecodeTargets,
        tensors: &SceneTensors,
    ) -> ModelOutput {
        let m = match self.config.variant {
            Variant::Full => self.config.m_modes,
            Variant::VanillaIl => 1,
        };
        let t_f = self.config.t_f;
        let n = tensors.agent_valid.len();
        let mut outputs: Vec<ModelOutput> = decoded
            .levels
            .iter()
            .map(|lvl| {
                let mut ego_trajs = Array3::zeros((m, t_f, 2));
                let mut agent_trajs = Array4::zeros((n, m, t_f, 2));
                let has_agent_rows = matches!(self.config.variant, Variant::Full);
                for (s, pos) in lvl.positions.iter().enumerate() {
                    let v = t.value(*pos);
                    for j in 0..m {
                        ego_trajs[[j, s, 0]] = v[[j, 0]];
                        ego_trajs[[j, s, 1]] = v[[j, 1]];
                    }
                    if !has_agent_rows {
                        continue;
                    }
                    for (k, &slot) in targets.agent_slots.iter().enumerate() {
                        for j in 0..m {
                            let row = (1 + k) * m + j;
                            agent_trajs[[slot, j, s, 0]] = v[[row, 0]];
                            agent_trajs[[slot, j, s, 1]] = v[[row, 1]];
                        }
                    }
                }
                let ego_scores = match self.config.variant {
                    Variant::Full => Array1::from_vec(softmax_slice(
                        t.value(lvl.plan_logits).row(0).as_slice().unwrap(),
                    )),
                    Variant::VanillaIl => Array1::ones(1),
                };
                let mut agent_scores = Array2::from_elem((n, m), 1.0 / m as f64);
                for (k, &slot) in targets.agent_slots.iter().enumerate() {
                    if let Some(logits) = lvl.pred_logits.get(k) {
                        let sm = softmax_slice(t.value(*logits).row(0).as_slice().unwrap());
                        for j in 0..m {
                            agent_scores[[slot, j]] = sm[j];
                        }
                    }
                }
                ModelOutput {
                    ego_trajs,
                    ego_scores,
                    agent_trajs,
                    agent_scores,
                    prior_levels: Vec::new(),
                }
            })
            .collect();
        let mut top = outputs.pop().expect("at least one level");
        top.prior_levels = outputs;
        top
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneDims;
    use rand::Rng;

    fn tiny_dims() -> SceneDims {
        SceneDims {
            n_agents: 4,
            n_lanes: 3,
            t_h: 6,
            t_f: 5,
            p_m: 8,
            p_r: 10,
            dt: 0.1,
            route_spacing: 3.0,
        }
    }

    fn random_tensors(dims: &SceneDims, seed: u64, n_valid_agents: usize) -> SceneTensors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t1 = dims.history_len();
        let mut agents = Arr::zeros((dims.n_agents * t1, 13));
        let mut agent_valid = vec![vec![false; t1]; dims.n_agents];
        for a in 0..n_valid_agents {
            for t in 0..t1 {
                agent_valid[a][t] = true;
                for j in 0..13 {
                    agents[[a * t1 + t, j]] = rng.gen_range(-5.0..5.0);
                }
            }
        }
        let mut lanes = Arr::zeros((dims.n_lanes * dims.p_m, 8));
        let mut lane_valid = vec![vec![false; dims.p_m]; dims.n_lanes];
        for l in 0..2 {
            for p in 0..dims.p_m {
                lane_valid[l][p] = true;
                for j in 0..8 {
                    lanes[[l * dims.p_m + p, j]] = rng.gen_range(-5.0..5.0);
                }
            }
        }
        let mut route = Arr::zeros((dims.p_r, 3));
        let mut route_valid = vec![false; dims.p_r];
        for p in 0..6 {
            route_valid[p] = true;
            for j in 0..3 {
                route[[p, j]] = rng.gen_range(-5.0..5.0);
            }
        }
        SceneTensors {
            agents,
            agent_valid,
            lanes,
            lane_valid,
            route,
            route_valid,
            ego: [0.0, 0.0, 0.0, 5.0, 0.1, 0.4, 0.0, 0.02, 4.8, 2.0, 1.6],
            dims: *dims,
        }
    }

    #[test]
    fn output_shapes_and_simplex() {
        let dims = tiny_dims();
        let cfg = ModelConfig {
            t_f: dims.t_f,
            ..ModelConfig::toy(16, dims.t_f)
        };
        let model = PlanModel::new(cfg, 0).unwrap();
        let tensors = random_tensors(&dims, 1, 2);
        let out = model.forward_eval(&tensors);
        assert_eq!(out.ego_trajs.dim(), (3, 5, 2));
        assert_eq!(out.ego_scores.len(), 3);
        assert_eq!(out.agent_trajs.dim(), (4, 3, 5, 2));
        assert_eq!(out.agent_scores.dim(), (4, 3));
        out.validate().unwrap();
        // Padded agent slots emit zeros and uniform scores.
        for s in 2..4 {
            assert!(out
                .agent_trajs
                .slice(ndarray::s![s, .., .., ..])
                .iter()
                .all(|v| *v == 0.0));
            assert!((out.agent_scores[[s, 0]] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_deterministic() {
        let dims = tiny_dims();
        let model = PlanModel::new(ModelConfig::toy(16, dims.t_f), 3).unwrap();
        let tensors = random_tensors(&dims, 2, 3);
        let a = model.forward_eval(&tensors);
        let b = model.forward_eval(&tensors);
        assert_eq!(a.ego_trajs, b.ego_trajs);
        assert_eq!(a.ego_scores, b.ego_scores);
        assert_eq!(a.agent_trajs, b.agent_trajs);
    }

    #[test]
    fn padding_invariance_exact() {
        let dims = tiny_dims();
        let model = PlanModel::new(ModelConfig::toy(16, dims.t_f), 4).unwrap();
        let tensors = random_tensors(&dims, 5, 2);
        let a = model.forward_eval(&tensors);

        let mut poisoned = tensors.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let t1 = dims.history_len();
        for agent in 2..dims.n_agents {
            for t in 0..t1 {
                for j in 0..13 {
                    poisoned.agents[[agent * t1 + t, j]] = rng.gen_range(-100.0..100.0);
                }
            }
        }
        for lane in 2..dims.n_lanes {
            for p in 0..dims.p_m {
                for j in 0..8 {
                    poisoned.lanes[[lane * dims.p_m + p, j]] = rng.gen_range(-100.0..100.0);
                }
            }
        }
        // Also poison invalid frames of a *valid* agent.
        poisoned.agent_valid[1][0] = false;
        let mut base2 = tensors.clone();
        base2.agent_valid[1][0] = false;
        let a2 = model.forward_eval(&base2);
        for j in 0..13 {
            poisoned.agents[[t1 + 0, j]] = rng.gen_range(-100.0..100.0);
        }
        let b = model.forward_eval(&poisoned);
        assert_eq!(a2.ego_trajs, b.ego_trajs);
        assert_eq!(a2.agent_scores, b.agent_scores);
        let _ = a;
    }

    #[test]
    fn mode_symmetry_with_identical_queries() {
        let dims = tiny_dims();
        let mut model = PlanModel::new(ModelConfig::toy(16, dims.t_f), 6).unwrap();
        // Force all mode queries identical.
        let qid = model.store.id_of("dec.queries").unwrap();
        let q = model.store.value(qid).as_ref().clone();
        let first = q.row(0).to_owned();
        let mut qeq = q.clone();
        for mut row in qeq.rows_mut() {
            row.assign(&first);
        }
        model.store.set(qid, qeq);
        let tensors = random_tensors(&dims, 7, 2);
        let out = model.forward_eval(&tensors);
        for j in 1..3 {
            assert_eq!(
                out.ego_trajs.slice(ndarray::s![0, .., ..]),
                out.ego_trajs.slice(ndarray::s![j, .., ..])
            );
        }
    }

    #[test]
    fn causality_probe() {
        let dims = tiny_dims();
        let model = PlanModel::new(ModelConfig::toy(16, dims.t_f), 8).unwrap();
        let tensors = random_tensors(&dims, 9, 1);
        let targets = model.decode_targets(&tensors);

        let mut t = Tape::new();
        let decoded =
            model.forward_graph(&mut t, &tensors, &targets, &RolloutMode::Feedback, None);
        let base: Vec<Arr> = decoded.levels[0]
            .positions
            .iter()
            .map(|p| t.value(*p).clone())
            .collect();

        // Perturb the emitted point at step 2 and force the prefix.
        let probe_step = 2;
        let mut forced = base.clone();
        forced[probe_step][[0, 0]] += 1.0;
        let mut t2 = Tape::new();
        let decoded2 =
            model.forward_graph(&mut t2, &tensors, &targets, &RolloutMode::Forced(&forced), None);
        let redo: Vec<Arr> = decoded2.levels[0]
            .positions
            .iter()
            .map(|p| t2.value(*p).clone())
            .collect();
        for s in 0..=probe_step {
            assert_eq!(base[s], redo[s], "step {s} must not change");
        }
        let diverged: f64 = (&redo[probe_step + 1] - &base[probe_step + 1])
            .iter()
            .map(|v| v.abs())
            .sum();
        assert!(diverged > 0.0, "later steps must consume the perturbed point");
    }

    #[test]
    fn refinement_zero_init_matches_level_one() {
        let dims = tiny_dims();
        let cfg = ModelConfig {
            levels: 2,
            ..ModelConfig::toy(16, dims.t_f)
        };
        let model = PlanModel::new(cfg, 10).unwrap();
        let tensors = random_tensors(&dims, 11, 2);
        let out = model.forward_eval(&tensors);
        assert_eq!(out.prior_levels.len(), 1);
        let l1 = &out.prior_levels[0];
        let diff = (&out.ego_trajs - &l1.ego_trajs)
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "zero-init refinement must be the identity: {diff}");
        out.validate().unwrap();
        l1.validate().unwrap();
    }

    #[test]
    fn vanilla_il_single_trajectory() {
        let dims = tiny_dims();
        let cfg = ModelConfig {
            variant: Variant::VanillaIl,
            ..ModelConfig::toy(16, dims.t_f)
        };
        let model = PlanModel::new(cfg, 12).unwrap();
        let tensors = random_tensors(&dims, 13, 2);
        let out = model.forward_eval(&tensors);
        assert_eq!(out.ego_trajs.dim(), (1, 5, 2));
        assert_eq!(out.ego_scores.len(), 1);
        assert_eq!(out.ego_scores[0], 1.0);
        let again = model.forward_eval(&tensors);
        assert_eq!(out.ego_trajs, again.ego_trajs);
    }

    #[test]
    fn fusion_identity_with_zero_blocks() {
        let dims = tiny_dims();
        let cfg = ModelConfig {
            k_t: 0,
            ..ModelConfig::toy(16, dims.t_f)
        };
        let model = PlanModel::new(cfg, 14).unwrap();
        let tensors = random_tensors(&dims, 15, 1);
        let mut t = Tape::new();
        let agent_toks =
            model
                .encoders
                .encode_agents(&mut t, &model.store, &tensors.agents, &tensors.agent_valid);
        let lane_toks =
            model
                .encoders
                .encode_map(&mut t, &model.store, &tensors.lanes, &tensors.lane_valid);
        let nav_tok = model.encoders.encode_navigation(
            &mut t,
            &model.store,
            &tensors.route,
            &tensors.route_valid,
        );
        let ego_tok = model
            .encoders
            .encode_ego_state(&mut t, &model.store, &tensors.ego, None);
        let manual: Vec<Arr> = [ego_tok]
            .into_iter()
            .chain(agent_toks.iter().flatten().copied())
            .chain(lane_toks.iter().flatten().copied())
            .chain([nav_tok])
            .map(|tok| t.value(tok).clone())
            .collect();
        let fused = model.encoders.fuse(
            &mut t,
            &model.store,
            ego_tok,
            &agent_toks,
            &lane_toks,
            nav_tok,
            None,
        );
        let tokens = t.value(fused.tokens);
        for (i, row) in manual.iter().enumerate() {
            assert_eq!(tokens.row(i), row.row(0), "row {i}");
        }
    }

    #[test]
    fn ego_dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut drops = [0usize; 6];
        let n = 10_000;
        for _ in 0..n {
            let mask = sample_state_dropout(&mut rng, 0.75);
            for (i, d) in mask.iter().enumerate() {
                drops[i] += *d as usize;
            }
        }
        for i in 0..3 {
            assert_eq!(drops[i], 0, "protected token {i} must never drop");
        }
        for i in 3..6 {
            let rate = drops[i] as f64 / n as f64;
            assert!((rate - 0.75).abs() < 0.02, "token {i} rate {rate}");
        }
    }

    #[test]
    fn forced_all_drops_depends_only_on_pose_tokens() {
        let dims = tiny_dims();
        let model = PlanModel::new(ModelConfig::toy(16, dims.t_f), 20).unwrap();
        let mut a = random_tensors(&dims, 21, 1);
        let mut b = a.clone();
        // Same pose, different velocity/acceleration/steer.
        b.ego[3] = -3.0;
        b.ego[5] = 1.5;
        b.ego[7] = -0.3;
        a.ego[0] = 0.0;
        b.ego[0] = 0.0;
        let drop_all = [false, false, false, true, true, true];
        let mut t1 = Tape::new();
        let ta = model
            .encoders
            .encode_ego_state(&mut t1, &model.store, &a.ego, Some(&drop_all));
        let mut t2 = Tape::new();
        let tb = model
            .encoders
            .encode_ego_state(&mut t2, &model.store, &b.ego, Some(&drop_all));
        assert_eq!(t1.value(ta), t2.value(tb));
    }
}
