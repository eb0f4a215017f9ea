//! Episode rollouts, rewards, GAE, PPO and the grid-size curriculum.

mod ppo;
mod rollout;
mod trainer;

pub use ppo::{clipped_surrogate, ppo_loss, ppo_update, PpoConfig, PpoSample, PpoStats};
pub use rollout::{evaluate_policy, rollout, Episode, EvalSummary, Step};
pub use trainer::{IterationStats, TrainConfig, TrainMode, Trainer, METRICS_HEADER};

use thiserror::Error;

use crate::agent::AgentError;
use crate::encoder::GraphEncoder;
use crate::grounding::{GroundTask, State};
use crate::neural::NeuralError;
use crate::worlds::{Cell, WorldError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite PPO loss at epoch {epoch}: policy {policy_loss}, value {value_loss}, entropy {entropy}")]
    NonFiniteLoss {
        epoch: usize,
        policy_loss: f64,
        value_loss: f64,
        entropy: f64,
    },
    #[error("empty PPO batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    /// Movement penalty coefficient.
    pub alpha: f64,
    /// Reward per newly scanned target.
    pub scan_bonus: f64,
    /// Terminal reward on reaching the goal.
    pub goal_reward: f64,
    /// Episode step limit as a multiple of the grid width.
    pub step_limit_factor: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.1,
            scan_bonus: 10.0,
            goal_reward: 100.0,
            step_limit_factor: 4,
        }
    }
}

impl RewardConfig {
    pub fn step_limit(&self, width: usize) -> usize {
        self.step_limit_factor * width
    }
}

/// Reward from its parts: `−α·d/W + scan_bonus·new_scans (+ goal_reward)`.
pub fn reward_terms(displacement: f64, new_scans: usize, goal_reached: bool, cfg: &RewardConfig, width: usize) -> f64 {
    let mut r = -cfg.alpha * displacement / width as f64 + cfg.scan_bonus * new_scans as f64;
    if goal_reached {
        r += cfg.goal_reward;
    }
    r
}

fn displacement(a: Option<Cell>, b: Option<Cell>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => {
            let dx = a.0 as f64 - b.0 as f64;
            let dy = a.1 as f64 - b.1 as f64;
            (dx * dx + dy * dy).sqrt()
        }
        _ => 0.0,
    }
}

fn scanned_count(task: &GroundTask, state: &State) -> usize {
    match task.domain.predicate_id("scanned") {
        Some(p) => state
            .atoms()
            .iter()
            .filter(|&&id| task.atoms.atom(id).predicate == p)
            .count(),
        None => 0,
    }
}

/// Reward for the transition `prev → next`.
pub fn step_reward(task: &GroundTask, encoder: &GraphEncoder, prev: &State, next: &State, cfg: &RewardConfig) -> f64 {
    let d = displacement(encoder.agent_location(task, prev), encoder.agent_location(task, next));
    let new_scans = scanned_count(task, next).saturating_sub(scanned_count(task, prev));
    reward_terms(d, new_scans, task.goal_satisfied(next), cfg, encoder.width)
}

/// Generalized advantage estimates and returns for one trajectory.
/// `values[t]` is V(s_t); `bootstrap` is V of the state after the last step
/// (0 when the episode terminated).
pub fn compute_advantages(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shift and scale to zero mean and unit variance (no-op for < 2 values).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurriculumState {
    pub base_size: usize,
    pub curriculum_step: usize,
    pub success_in_row: usize,
    pub threshold: usize,
    pub max_size: usize,
}

impl CurriculumState {
    pub fn new(base_size: usize, max_size: usize, threshold: usize) -> Self {
        CurriculumState {
            base_size,
            curriculum_step: 0,
            success_in_row: 0,
            threshold: threshold.max(1),
            max_size: max_size.max(base_size),
        }
    }

    pub fn current_size(&self) -> usize {
        (self.base_size + self.curriculum_step).min(self.max_size)
    }

    /// Success extends the streak and grows the grid once the streak hits
    /// the threshold; failure resets the streak.
    pub fn update(self, success: bool) -> Self {
        let mut c = self;
        if !success {
            c.success_in_row = 0;
            return c;
        }
        c.success_in_row += 1;
        if c.success_in_row >= c.threshold {
            c.success_in_row = 0;
            if c.current_size() < c.max_size {
                c.curriculum_step += 1;
            }
        }
        c
    }
}

pub fn curriculum_update(c: CurriculumState, success: bool) -> CurriculumState {
    c.update(success)
}

/// Worker count from `GPLAN_THREADS`, defaulting to the machine's cores.
pub fn worker_threads() -> usize {
    std::env::var("GPLAN_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// `f(0..n)` on up to `threads` scoped workers; results in index order.
pub fn parallel_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t..n).step_by(threads).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("worker panicked") {
                slots[i] = Some(v);
            }
        }
    });
    slots.into_iter().map(|v| v.expect("every index computed")).collect()
}

/// Stateless 64-bit mixer for deriving per-episode seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        // splitmix64 finalizer
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}
