use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::{step_reward, RewardConfig};
use crate::agent::{greedy_index, sample_index, AgentError, PolicyModel, TaskContext};
use crate::encoder::StateGraph;
use crate::grounding::GroundTask;

/// One recorded transition.
#[derive(Debug, Clone)]
pub struct Step {
    pub graph: StateGraph,
    /// Applicable action uids in the state, ascending.
    pub actions: Vec<usize>,
    /// Index into `actions` of the action taken.
    pub chosen: usize,
    pub reward: f64,
    pub log_prob: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub steps: Vec<Step>,
    pub plan: Vec<usize>,
    pub rewards: Vec<f64>,
    pub success: bool,
    pub total_reward: f64,
    /// V of the last state when the episode was cut by the step limit.
    pub bootstrap: f64,
    pub width: usize,
    pub ctx: Arc<TaskContext>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.plan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plan.is_empty()
    }
}

/// Runs one episode: sampling from π when `rng` is given, greedy otherwise.
/// Step records (graphs included) are kept only when `record` is set.
pub fn rollout(
    model: &PolicyModel,
    task: &GroundTask,
    ctx: Arc<TaskContext>,
    reward: &RewardConfig,
    mut rng: Option<&mut ChaCha8Rng>,
    record: bool,
) -> Result<Episode, AgentError> {
    let width = ctx.encoder.width;
    let limit = reward.step_limit(width);
    let mut state = task.init.clone();
    let mut ep = Episode {
        steps: Vec::new(),
        plan: Vec::new(),
        rewards: Vec::new(),
        success: false,
        total_reward: 0.0,
        bootstrap: 0.0,
        width,
        ctx: ctx.clone(),
    };
    if task.goal_satisfied(&state) {
        ep.success = true;
        ep.total_reward = reward.goal_reward;
        return Ok(ep);
    }
    for _ in 0..limit {
        let actions = task.applicable_actions(&state);
        if actions.is_empty() {
            return Ok(ep);
        }
        let g = ctx.encoder.encode(task, &state);
        let out = model.evaluate_graph(&g, &ctx, &actions)?;
        let chosen = match rng.as_deref_mut() {
            Some(r) => sample_index(&out.probs, r),
            None => greedy_index(&out.probs, &actions),
        };
        let uid = actions[chosen];
        let next = task.apply(&state, task.action(uid)).expect("applicable action");
        let r = step_reward(task, &ctx.encoder, &state, &next, reward);
        let done = task.goal_satisfied(&next);
        ep.plan.push(uid);
        ep.rewards.push(r);
        ep.total_reward += r;
        if record {
            // Log-probability straight from the scores avoids ln(0) on tiny probs.
            let max = out.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + out.scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            ep.steps.push(Step {
                graph: g,
                actions,
                chosen,
                reward: r,
                log_prob: out.scores[chosen] - lse,
                value: out.value,
                done,
            });
        }
        state = next;
        if done {
            ep.success = true;
            return Ok(ep);
        }
    }
    if record && !task.applicable_actions(&state).is_empty() {
        ep.bootstrap = model.value(task, &ctx, &state)?;
    }
    Ok(ep)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalSummary {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    /// Mean plan length over successful episodes (0 if none).
    pub mean_plan_len: f64,
}

impl EvalSummary {
    pub fn from_episodes<'a>(eps: impl IntoIterator<Item = &'a Episode>) -> Self {
        let mut s = EvalSummary::default();
        let mut len_sum = 0usize;
        let mut reward_sum = 0.0;
        for e in eps {
            s.episodes += 1;
            reward_sum += e.total_reward;
            if e.success {
                s.successes += 1;
                len_sum += e.len();
            }
        }
        if s.episodes > 0 {
            s.success_rate = s.successes as f64 / s.episodes as f64;
            s.mean_reward = reward_sum / s.episodes as f64;
        }
        if s.successes > 0 {
            s.mean_plan_len = len_sum as f64 / s.successes as f64;
        }
        s
    }
}

/// Greedy episodes on the given tasks, fanned out over `threads` workers.
pub fn evaluate_policy(
    model: &PolicyModel,
    tasks: &[GroundTask],
    reward: &RewardConfig,
    threads: usize,
) -> Result<EvalSummary, AgentError> {
    let eps = super::parallel_map(tasks.len(), threads, |i| {
        let ctx = Arc::new(TaskContext::for_model(&tasks[i], &model.spec)?);
        rollout(model, &tasks[i], ctx, reward, None, false)
    });
    let eps: Vec<Episode> = eps.into_iter().collect::<Result<_, _>>()?;
    Ok(EvalSummary::from_episodes(&eps))
}
