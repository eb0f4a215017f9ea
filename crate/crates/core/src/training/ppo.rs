use std::rc::Rc;
use std::sync::Arc;

use super::{parallel_map, worker_threads, TrainError};
use crate::agent::{BatchBuilder, PolicyModel, TaskContext};
use crate::encoder::StateGraph;
use crate::neural::{Adam, Gradients, Tape};

/// One state-action pair for the PPO objective.
#[derive(Debug, Clone)]
pub struct PpoSample {
    pub ctx: Arc<TaskContext>,
    pub graph: StateGraph,
    pub actions: Vec<usize>,
    pub chosen: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    /// Discounted return target, in reward units.
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub lr: f32,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Epoch loop stops once the approximate KL to the rollout policy exceeds this.
    pub kl_cutoff: f64,
    pub epochs: usize,
    pub episodes_per_iter: usize,
    /// Samples per forward pass; gradients accumulate across chunks.
    pub chunk_size: usize,
    /// Global gradient-norm clip (0 disables).
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lr: 1e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            kl_cutoff: 0.01,
            epochs: 20,
            episodes_per_iter: 100,
            chunk_size: 16,
            max_grad_norm: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// `mean((r − 1) − ln r)` against the rollout policy.
    pub approx_kl: f64,
    /// Mean probability ratio of the chosen actions.
    pub mean_ratio: f64,
    /// Adam steps taken.
    pub epochs_ran: usize,
}

impl PpoStats {
    pub fn total_loss(&self, cfg: &PpoConfig) -> f64 {
        self.policy_loss + cfg.value_coef * self.value_loss - cfg.entropy_coef * self.entropy
    }
}

#[derive(Default)]
struct ChunkStats {
    policy: f64,
    value: f64,
    entropy: f64,
    kl: f64,
    ratio: f64,
}

fn chunk_loss(
    model: &PolicyModel,
    chunk: &[PpoSample],
    n: usize,
    cfg: &PpoConfig,
) -> Result<(ChunkStats, Gradients), TrainError> {
    let inv_n = 1.0 / n as f32;
    let scale = f64::from(model.spec.value_scale);
    let mut bb = BatchBuilder::new();
    let mut chosen_rows = Vec::with_capacity(chunk.len());
    let mut offset = 0u32;
    for s in chunk {
        bb.push(&model.spec, &s.graph, s.actions.iter().map(|&a| &s.ctx.features[a]));
        chosen_rows.push(offset + s.chosen as u32);
        offset += s.actions.len() as u32;
    }
    let batch = bb.build(&model.spec);
    let old: Rc<[f32]> = chunk.iter().map(|s| -(s.old_log_prob as f32)).collect();
    let adv: Rc<[f32]> = chunk.iter().map(|s| s.advantage as f32).collect();
    let target: Rc<[f32]> = chunk.iter().map(|s| -((s.ret / scale) as f32)).collect();

    let mut tape = Tape::new(&model.store);
    let out = model.forward(&mut tape, &batch)?;
    let lp = tape.gather(out.log_probs, chosen_rows.into());
    let log_ratio = tape.add_const(lp, old);
    let ratio = tape.exp(log_ratio);
    let s1 = tape.mul_const(ratio, adv.clone());
    let clipped = tape.clamp(ratio, (1.0 - cfg.clip) as f32, (1.0 + cfg.clip) as f32);
    let s2 = tape.mul_const(clipped, adv);
    let surr = tape.min(s1, s2);
    let surr_sum = tape.sum(surr);
    let policy = tape.scale(surr_sum, -inv_n);

    let diff = tape.add_const(out.values, target);
    let sq = tape.square(diff);
    let sq_sum = tape.sum(sq);
    let value = tape.scale(sq_sum, inv_n);

    let p = tape.exp(out.log_probs);
    let plogp = tape.mul(p, out.log_probs);
    let plogp_sum = tape.sum(plogp);
    let ent = tape.scale(plogp_sum, -inv_n);

    let v_term = tape.scale(value, cfg.value_coef as f32);
    let e_term = tape.scale(ent, cfg.entropy_coef as f32);
    let pv = tape.add(policy, v_term);
    let loss = tape.sub(pv, e_term);

    let get = |v| f64::from(tape.value(v).data[0]);
    let mut st = ChunkStats {
        policy: get(policy),
        value: get(value),
        entropy: get(ent),
        ..Default::default()
    };
    for &lr in &tape.value(log_ratio).data {
        let lr = f64::from(lr);
        st.kl += (lr.exp() - 1.0 - lr) / n as f64;
        st.ratio += lr.exp() / n as f64;
    }
    if !(st.policy.is_finite() && st.value.is_finite() && st.entropy.is_finite()) {
        return Err(TrainError::NonFiniteLoss {
            epoch: 0,
            policy_loss: st.policy,
            value_loss: st.value,
            entropy: st.entropy,
        });
    }
    let grads = tape.backward(loss)?;
    Ok((st, grads))
}

/// Full-batch clipped PPO loss at the current parameters. Gradients of the
/// mean loss are left in `model.store`.
pub fn ppo_loss(model: &mut PolicyModel, samples: &[PpoSample], cfg: &PpoConfig) -> Result<PpoStats, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    model.store.zero_grad();
    let chunks: Vec<&[PpoSample]> = samples.chunks(cfg.chunk_size.max(1)).collect();
    let shared: &PolicyModel = model;
    let results = parallel_map(chunks.len(), worker_threads(), |i| {
        chunk_loss(shared, chunks[i], samples.len(), cfg)
    });
    let mut stats = PpoStats::default();
    for r in results {
        let (st, grads) = r?;
        stats.policy_loss += st.policy;
        stats.value_loss += st.value;
        stats.entropy += st.entropy;
        stats.approx_kl += st.kl;
        stats.mean_ratio += st.ratio;
        model.store.accumulate(&grads);
    }
    Ok(stats)
}

/// Up to `cfg.epochs` Adam steps on the full batch, stopping early when the
/// policy drifts past `kl_cutoff`. Returns the stats of the last evaluation.
pub fn ppo_update(
    model: &mut PolicyModel,
    adam: &mut Adam,
    samples: &[PpoSample],
    cfg: &PpoConfig,
) -> Result<PpoStats, TrainError> {
    let mut last = PpoStats::default();
    for epoch in 0..cfg.epochs {
        let mut stats = match ppo_loss(model, samples, cfg) {
            Err(TrainError::NonFiniteLoss {
                policy_loss,
                value_loss,
                entropy,
                ..
            }) => {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    policy_loss,
                    value_loss,
                    entropy,
                })
            }
            r => r?,
        };
        stats.epochs_ran = last.epochs_ran;
        if stats.approx_kl > cfg.kl_cutoff {
            return Ok(stats);
        }
        if cfg.max_grad_norm > 0.0 {
            let norm = model.store.grad_norm();
            if norm > cfg.max_grad_norm {
                model.store.scale_grads((cfg.max_grad_norm / norm) as f32);
            }
        }
        adam.step(&mut model.store);
        stats.epochs_ran += 1;
        last = stats;
    }
    Ok(last)
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)` for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}
