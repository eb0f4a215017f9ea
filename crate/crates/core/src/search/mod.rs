//! Inference-time planning: policy-guided greedy best-first search, a
//! goal-count baseline, a breadth-first optimal-length oracle and plan
//! validation.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::grounding::{apply_unchecked, GroundTask, State};

/// Lower bound applied to V(s) inside the priority.
pub const MIN_VALUE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("oracle explored {0} states without exhausting the space")]
    OracleBudgetExceeded(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBudget {
    pub max_expansions: usize,
    pub max_seconds: f64,
}

impl SearchBudget {
    pub fn expansions(max_expansions: usize) -> Self {
        SearchBudget {
            max_expansions,
            max_seconds: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub plan: Option<Vec<usize>>,
    pub expanded: usize,
    pub generated: usize,
    pub elapsed: Duration,
    pub success: bool,
}

impl SearchResult {
    pub fn plan_len(&self) -> Option<usize> {
        self.plan.as_ref().map(Vec::len)
    }
}

/// Policy and value at one state, as consumed by [`gbfs_gnn`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEval {
    /// One probability per queried action, same order.
    pub probs: Vec<f64>,
    pub value: f64,
}

impl PolicyEval {
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

pub trait PolicyEvaluator {
    /// `actions` is non-empty and sorted by uid.
    fn evaluate(&self, task: &GroundTask, state: &State, actions: &[usize]) -> PolicyEval;
}

/// g(s, a) = π(a|s) · V(s) / (1 + H(π(·|s))), with V clamped to
/// [`MIN_VALUE`] so negative values cannot invert sibling order.
pub fn gbfs_priority(prob: f64, value: f64, entropy: f64) -> f64 {
    prob * value.max(MIN_VALUE) / (1.0 + entropy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Priority(f64);

impl Eq for Priority {}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Node {
    state: State,
    parent: Option<(usize, usize)>,
}

fn extract_plan(nodes: &[Node], mut idx: usize) -> Vec<usize> {
    let mut plan = Vec::new();
    while let Some((parent, action)) = nodes[idx].parent {
        plan.push(action);
        idx = parent;
    }
    plan.reverse();
    plan
}

/// Best-first skeleton shared by both engines. `score` returns one priority
/// per applicable action of the expanded state; larger pops first, ties in
/// insertion order. Goal test on pop; visited states are never re-enqueued.
fn best_first<F>(task: &GroundTask, budget: SearchBudget, mut score: F) -> SearchResult
where
    F: FnMut(&State, &[usize], &[State]) -> Vec<f64>,
{
    let start = Instant::now();
    let mut nodes = vec![Node {
        state: task.init.clone(),
        parent: None,
    }];
    let mut visited: HashSet<State> = HashSet::from([task.init.clone()]);
    let mut open: BinaryHeap<(Priority, Reverse<u64>, usize)> = BinaryHeap::new();
    let mut seq = 0u64;
    open.push((Priority(0.0), Reverse(seq), 0));
    let mut expanded = 0;
    let mut generated = 1;

    let finish = |plan: Option<Vec<usize>>, expanded, generated| SearchResult {
        success: plan.is_some(),
        plan,
        expanded,
        generated,
        elapsed: start.elapsed(),
    };

    while let Some((_, _, idx)) = open.pop() {
        if task.goal_satisfied(&nodes[idx].state) {
            return finish(Some(extract_plan(&nodes, idx)), expanded, generated);
        }
        if expanded >= budget.max_expansions || start.elapsed().as_secs_f64() > budget.max_seconds {
            return finish(None, expanded, generated);
        }
        expanded += 1;
        let state = nodes[idx].state.clone();
        let actions = task.applicable_actions(&state);
        if actions.is_empty() {
            continue;
        }
        let children: Vec<State> = actions
            .iter()
            .map(|&u| apply_unchecked(&state, task.action(u)))
            .collect();
        let priorities = score(&state, &actions, &children);
        for ((child, &uid), prio) in children.into_iter().zip(&actions).zip(priorities) {
            if visited.contains(&child) {
                continue;
            }
            visited.insert(child.clone());
            nodes.push(Node {
                state: child,
                parent: Some((idx, uid)),
            });
            seq += 1;
            generated += 1;
            open.push((Priority(prio), Reverse(seq), nodes.len() - 1));
        }
    }
    finish(None, expanded, generated)
}

/// Greedy best-first search ordered by [`gbfs_priority`] with π, V and H
/// evaluated at the expanded state.
pub fn gbfs_gnn<E: PolicyEvaluator + ?Sized>(task: &GroundTask, evaluator: &E, budget: SearchBudget) -> SearchResult {
    best_first(task, budget, |state, actions, _| {
        let eval = evaluator.evaluate(task, state, actions);
        let h = eval.entropy();
        eval.probs.iter().map(|&p| gbfs_priority(p, eval.value, h)).collect()
    })
}

/// Greedy best-first search on the goal-count heuristic (fewer unsatisfied
/// goal atoms first, FIFO among ties).
pub fn baseline_gbfs(task: &GroundTask, budget: SearchBudget) -> SearchResult {
    best_first(task, budget, |_, _, children| {
        children.iter().map(|c| -(task.unsatisfied_goals(c) as f64)).collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleOutcome {
    Length(usize),
    Unreachable,
}

/// Breadth-first shortest plan length, exploring at most `max_states`.
pub fn optimal_plan_length(task: &GroundTask, max_states: usize) -> Result<OracleOutcome, SearchError> {
    if task.goal_satisfied(&task.init) {
        return Ok(OracleOutcome::Length(0));
    }
    let mut depth: HashMap<State, usize> = HashMap::from([(task.init.clone(), 0)]);
    let mut queue = VecDeque::from([task.init.clone()]);
    while let Some(s) = queue.pop_front() {
        let d = depth[&s];
        for (_, next) in task.successors(&s) {
            if depth.contains_key(&next) {
                continue;
            }
            if task.goal_satisfied(&next) {
                return Ok(OracleOutcome::Length(d + 1));
            }
            if depth.len() >= max_states {
                return Err(SearchError::OracleBudgetExceeded(max_states));
            }
            depth.insert(next.clone(), d + 1);
            queue.push_back(next);
        }
    }
    Ok(OracleOutcome::Unreachable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanValidation {
    Valid,
    /// Step `index` (0-based) is not applicable.
    NotApplicable {
        index: usize,
    },
    /// All steps apply but the final state misses the goal; `index` is the
    /// plan length.
    GoalNotReached {
        index: usize,
    },
}

impl PlanValidation {
    pub fn is_valid(self) -> bool {
        self == PlanValidation::Valid
    }

    pub fn failed_step(self) -> Option<usize> {
        match self {
            PlanValidation::Valid => None,
            PlanValidation::NotApplicable { index } | PlanValidation::GoalNotReached { index } => Some(index),
        }
    }
}

/// Replays `plan` from the initial state, checking each precondition
/// directly against the state's atom set.
pub fn validate_plan(task: &GroundTask, plan: &[usize]) -> PlanValidation {
    let mut state = task.init.clone();
    for (i, &uid) in plan.iter().enumerate() {
        let Some(a) = task.actions.get(uid) else {
            return PlanValidation::NotApplicable { index: i };
        };
        if !a.pre.iter().all(|p| state.atoms().contains(p)) {
            return PlanValidation::NotApplicable { index: i };
        }
        state = apply_unchecked(&state, a);
    }
    if task.goal.iter().all(|g| state.atoms().contains(g)) {
        PlanValidation::Valid
    } else {
        PlanValidation::GoalNotReached { index: plan.len() }
    }
}
