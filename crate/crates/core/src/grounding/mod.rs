//! Full upfront grounding, state transitions and goal tests.
//!
//! Atoms are interned to dense [`AtomId`]s; a [`State`] is the sorted set of
//! atom ids that hold, static atoms included.

mod plan;

pub use plan::{format_plan, parse_plan, PlanParseError};

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::pddl::{DomainDef, GroundAtom, LiftedAtom, ObjId, ProblemDef, Term};

pub type AtomId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroundingError {
    #[error("action `{action}` is not applicable")]
    NotApplicable { action: String },
}

#[derive(Debug, Clone, Default)]
pub struct AtomTable {
    atoms: Vec<GroundAtom>,
    index: HashMap<GroundAtom, AtomId>,
}

impl AtomTable {
    pub fn intern(&mut self, atom: GroundAtom) -> AtomId {
        if let Some(&id) = self.index.get(&atom) {
            return id;
        }
        let id = self.atoms.len() as AtomId;
        self.index.insert(atom.clone(), id);
        self.atoms.push(atom);
        id
    }

    pub fn get(&self, atom: &GroundAtom) -> Option<AtomId> {
        self.index.get(atom).copied()
    }

    pub fn atom(&self, id: AtomId) -> &GroundAtom {
        &self.atoms[id as usize]
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Set of ground atoms in canonical (sorted, deduplicated) form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    atoms: Box<[AtomId]>,
}

impl State {
    pub fn new(mut atoms: Vec<AtomId>) -> Self {
        atoms.sort_unstable();
        atoms.dedup();
        State {
            atoms: atoms.into_boxed_slice(),
        }
    }

    pub fn atoms(&self) -> &[AtomId] {
        &self.atoms
    }

    pub fn contains(&self, atom: AtomId) -> bool {
        self.atoms.binary_search(&atom).is_ok()
    }

    pub fn contains_all(&self, atoms: &[AtomId]) -> bool {
        atoms.iter().all(|&a| self.contains(a))
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundAction {
    pub uid: usize,
    pub schema: usize,
    pub binding: Vec<ObjId>,
    /// Sorted atom ids.
    pub pre: Vec<AtomId>,
    pub add: Vec<AtomId>,
    pub del: Vec<AtomId>,
}

/// A grounded planning task: the immutable action table plus the initial
/// state and goal of one problem.
#[derive(Debug, Clone)]
pub struct GroundTask {
    pub domain: DomainDef,
    pub problem: ProblemDef,
    pub atoms: AtomTable,
    pub actions: Vec<GroundAction>,
    pub init: State,
    pub goal: Vec<AtomId>,
    pub static_predicates: Vec<bool>,
    /// Candidate actions keyed by one fluent precondition atom.
    trigger: HashMap<AtomId, Vec<usize>>,
    /// Actions without fluent preconditions; checked in every state.
    untriggered: Vec<usize>,
    by_name: HashMap<(usize, Vec<ObjId>), usize>,
}

fn instantiate(terms: &[Term], binding: &[ObjId], num_constants: usize) -> Vec<ObjId> {
    // Constants occupy the first `num_constants` object ids of the problem.
    terms
        .iter()
        .map(|t| match *t {
            Term::Var(i) => binding[i],
            Term::Const(c) => {
                debug_assert!(c < num_constants);
                c
            }
        })
        .collect()
}

/// Grounds every type-consistent binding of every schema, dropping bindings
/// whose static preconditions are absent from the initial state.
pub fn ground_all(domain: &DomainDef, problem: &ProblemDef) -> GroundTask {
    let static_predicates = domain.static_predicates();
    let static_init: HashSet<&GroundAtom> = problem.init.iter().filter(|a| static_predicates[a.predicate]).collect();

    let mut atoms = AtomTable::default();
    let init_ids: Vec<AtomId> = problem.init.iter().map(|a| atoms.intern(a.clone())).collect();
    let goal: Vec<AtomId> = problem.goal.iter().map(|a| atoms.intern(a.clone())).collect();

    let mut actions = Vec::new();
    for (sid, schema) in domain.actions.iter().enumerate() {
        let candidates: Vec<Vec<ObjId>> = schema
            .params
            .iter()
            .map(|p| {
                (0..problem.objects.len())
                    .filter(|&o| domain.is_subtype(problem.objects[o].ty, p.ty))
                    .collect()
            })
            .collect();
        // Static preconditions grouped by the highest parameter they mention,
        // so each is checked as soon as it is fully bound.
        let mut checks: Vec<Vec<&LiftedAtom>> = vec![Vec::new(); schema.params.len() + 1];
        for atom in &schema.precondition {
            if static_predicates[atom.predicate] {
                let last = atom
                    .args
                    .iter()
                    .filter_map(|t| match t {
                        Term::Var(i) => Some(i + 1),
                        Term::Const(_) => None,
                    })
                    .max()
                    .unwrap_or(0);
                checks[last].push(atom);
            }
        }
        let holds = |atom: &LiftedAtom, binding: &[ObjId]| {
            let ga = GroundAtom {
                predicate: atom.predicate,
                args: instantiate(&atom.args, binding, problem.num_constants),
            };
            static_init.contains(&ga)
        };
        if !checks[0].iter().all(|a| holds(a, &[])) {
            continue;
        }
        let mut binding: Vec<ObjId> = Vec::with_capacity(schema.params.len());
        let mut bindings = Vec::new();
        enumerate(&candidates, &checks, &holds, &mut binding, &mut bindings);

        for binding in bindings {
            let ground = |list: &[LiftedAtom], atoms: &mut AtomTable| {
                let mut ids: Vec<AtomId> = list
                    .iter()
                    .map(|a| {
                        atoms.intern(GroundAtom {
                            predicate: a.predicate,
                            args: instantiate(&a.args, &binding, problem.num_constants),
                        })
                    })
                    .collect();
                ids.sort_unstable();
                ids.dedup();
                ids
            };
            let pre = ground(&schema.precondition, &mut atoms);
            let add = ground(&schema.add_effects, &mut atoms);
            let mut del = ground(&schema.del_effects, &mut atoms);
            // Delete-then-add: an atom both deleted and added stays true.
            del.retain(|d| add.binary_search(d).is_err());
            actions.push(GroundAction {
                uid: actions.len(),
                schema: sid,
                binding,
                pre,
                add,
                del,
            });
        }
    }

    let is_static = |id: AtomId| static_predicates[atoms.atom(id).predicate];
    let mut trigger: HashMap<AtomId, Vec<usize>> = HashMap::new();
    let mut untriggered = Vec::new();
    for a in &actions {
        match a.pre.iter().copied().find(|&p| !is_static(p)) {
            Some(p) => trigger.entry(p).or_default().push(a.uid),
            None => untriggered.push(a.uid),
        }
    }
    let by_name = actions.iter().map(|a| ((a.schema, a.binding.clone()), a.uid)).collect();

    GroundTask {
        domain: domain.clone(),
        problem: problem.clone(),
        atoms,
        actions,
        init: State::new(init_ids),
        goal,
        static_predicates,
        trigger,
        untriggered,
        by_name,
    }
}

fn enumerate<F>(
    candidates: &[Vec<ObjId>],
    checks: &[Vec<&LiftedAtom>],
    holds: &F,
    binding: &mut Vec<ObjId>,
    out: &mut Vec<Vec<ObjId>>,
) where
    F: Fn(&LiftedAtom, &[ObjId]) -> bool,
{
    let depth = binding.len();
    if depth == candidates.len() {
        out.push(binding.clone());
        return;
    }
    for &o in &candidates[depth] {
        binding.push(o);
        if checks[depth + 1].iter().all(|a| holds(a, binding)) {
            enumerate(candidates, checks, holds, binding, out);
        }
        binding.pop();
    }
}

/// True iff every precondition atom of `a` holds in `state`.
pub fn applicable(state: &State, a: &GroundAction) -> bool {
    state.contains_all(&a.pre)
}

/// `(state \ del) ∪ add`, without checking applicability.
pub fn apply_unchecked(state: &State, a: &GroundAction) -> State {
    let mut out = Vec::with_capacity(state.len() + a.add.len());
    let (mut i, mut j) = (0, 0);
    let s = state.atoms();
    while i < s.len() || j < a.add.len() {
        let next = match (s.get(i), a.add.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                if a.del.binary_search(&x).is_ok() {
                    continue;
                }
                x
            }
            (Some(&x), None) => {
                i += 1;
                if a.del.binary_search(&x).is_ok() {
                    continue;
                }
                x
            }
            (_, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    State {
        atoms: out.into_boxed_slice(),
    }
}

impl GroundTask {
    pub fn action(&self, uid: usize) -> &GroundAction {
        &self.actions[uid]
    }

    pub fn action_name(&self, a: &GroundAction) -> String {
        let mut s = format!("({}", self.domain.actions[a.schema].name);
        for &o in &a.binding {
            s.push(' ');
            s.push_str(&self.problem.objects[o].name);
        }
        s.push(')');
        s
    }

    pub fn atom_name(&self, id: AtomId) -> String {
        self.problem.atom_to_string(&self.domain, self.atoms.atom(id))
    }

    pub fn find_action(&self, schema: usize, binding: &[ObjId]) -> Option<usize> {
        self.by_name.get(&(schema, binding.to_vec())).copied()
    }

    /// Checked transition; the input state is left untouched.
    pub fn apply(&self, state: &State, a: &GroundAction) -> Result<State, GroundingError> {
        if !applicable(state, a) {
            return Err(GroundingError::NotApplicable {
                action: self.action_name(a),
            });
        }
        Ok(apply_unchecked(state, a))
    }

    /// Uids of applicable actions in ascending order.
    pub fn applicable_actions(&self, state: &State) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .untriggered
            .iter()
            .copied()
            .filter(|&u| applicable(state, &self.actions[u]))
            .collect();
        for atom in state.atoms() {
            if let Some(list) = self.trigger.get(atom) {
                out.extend(list.iter().copied().filter(|&u| applicable(state, &self.actions[u])));
            }
        }
        out.sort_unstable();
        out
    }

    /// One `(action, successor)` pair per applicable action, in uid order.
    pub fn successors(&self, state: &State) -> Vec<(&GroundAction, State)> {
        self.applicable_actions(state)
            .into_iter()
            .map(|u| {
                let a = &self.actions[u];
                (a, apply_unchecked(state, a))
            })
            .collect()
    }

    pub fn goal_satisfied(&self, state: &State) -> bool {
        state.contains_all(&self.goal)
    }

    /// Number of goal atoms not yet true in `state`.
    pub fn unsatisfied_goals(&self, state: &State) -> usize {
        self.goal.iter().filter(|&&g| !state.contains(g)).count()
    }
}

/// Goal test against the problem definition directly.
pub fn goal_satisfied(task: &GroundTask, state: &State) -> bool {
    task.goal_satisfied(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::{parse_domain, parse_problem};
    use crate::worlds::{self, InstanceSpec};

    fn bw() -> GroundTask {
        let d = parse_domain(worlds::BLOCKSWORLD_DOMAIN).unwrap();
        let p = parse_problem(worlds::BW_PROB_1, &d).unwrap();
        ground_all(&d, &p)
    }

    fn act(task: &GroundTask, name: &str, args: &[&str]) -> usize {
        let schema = task.domain.action_id(name).unwrap();
        let binding: Vec<_> = args.iter().map(|a| task.problem.object_id(a).unwrap()).collect();
        task.find_action(schema, &binding).unwrap()
    }

    fn atom(task: &GroundTask, pred: &str, args: &[&str]) -> AtomId {
        let ga = GroundAtom {
            predicate: task.domain.predicate_id(pred).unwrap(),
            args: args.iter().map(|a| task.problem.object_id(a).unwrap()).collect(),
        };
        task.atoms.get(&ga).unwrap()
    }

    #[test]
    fn blocksworld_stack_bindings() {
        let t = bw();
        let stack = t.domain.action_id("stack").unwrap();
        let all: Vec<_> = t.actions.iter().filter(|a| a.schema == stack).collect();
        // No static predicates, so self-bindings survive grounding.
        assert_eq!(all.len(), 9);
        assert_eq!(all.iter().filter(|a| a.binding[0] != a.binding[1]).count(), 6);
    }

    #[test]
    fn bw_applicability_and_apply() {
        let t = bw();
        let unstack = &t.actions[act(&t, "unstack", &["A", "C"])];
        assert!(applicable(&t.init, unstack));
        let stack = &t.actions[act(&t, "stack", &["A", "B"])];
        assert!(!applicable(&t.init, stack));
        assert!(t.apply(&t.init, stack).is_err());

        let next = t.apply(&t.init, unstack).unwrap();
        assert!(next.contains(atom(&t, "holding", &["A"])));
        assert!(next.contains(atom(&t, "clear", &["C"])));
        for (p, args) in [("on", vec!["A", "C"]), ("clear", vec!["A"])] {
            assert!(!next.contains(atom(&t, p, &args)));
        }
        let handempty = GroundAtom {
            predicate: t.domain.predicate_id("handempty").unwrap(),
            args: vec![],
        };
        assert!(!next.contains(t.atoms.get(&handempty).unwrap()));
        // Input untouched.
        assert!(t.init.contains(atom(&t, "on", &["A", "C"])));
        assert!(!t.goal_satisfied(&t.init));
    }

    #[test]
    fn empty_precondition_is_vacuous() {
        let a = GroundAction {
            uid: 0,
            schema: 0,
            binding: vec![],
            pre: vec![],
            add: vec![],
            del: vec![],
        };
        assert!(applicable(&State::new(vec![]), &a));
        assert!(applicable(&State::new(vec![3, 1]), &a));
    }

    #[test]
    fn noop_effect_leaves_state() {
        let s = State::new(vec![1, 4, 7]);
        let a = GroundAction {
            uid: 0,
            schema: 0,
            binding: vec![],
            pre: vec![1],
            add: vec![4],
            del: vec![9],
        };
        assert_eq!(apply_unchecked(&s, &a), s);
    }

    fn simple(w: usize) -> GroundTask {
        let spec = InstanceSpec::simple(w, 0.0, 7);
        let inst = worlds::gen_simple(&spec).unwrap();
        inst.task
    }

    #[test]
    fn droneworld_ground_move_count() {
        let t = simple(3);
        assert_eq!(t.actions.len(), 24);
    }

    #[test]
    fn zero_objects_of_type_gives_no_actions() {
        let d = parse_domain(worlds::DRONEWORLD_SIMPLE_DOMAIN).unwrap();
        let p = parse_problem(
            "(define (problem empty) (:domain droneworld_simple_dir) (:objects p - position) (:init) (:goal (and)))",
            &d,
        )
        .unwrap();
        let t = ground_all(&d, &p);
        assert!(t.actions.is_empty());
        assert!(t.successors(&t.init).is_empty());
        assert!(t.goal_satisfied(&t.init));
    }

    #[test]
    fn corner_and_center_successors() {
        let d = parse_domain(worlds::DRONEWORLD_SIMPLE_DOMAIN).unwrap();
        let text = worlds::simple_problem_text("t", 3, (0, 0), (2, 2), &[]);
        let p = parse_problem(&text, &d).unwrap();
        let t = ground_all(&d, &p);
        let succ = t.successors(&t.init);
        let names: Vec<String> = succ.iter().map(|(a, _)| t.action_name(a)).collect();
        assert_eq!(names.len(), 2, "{names:?}");
        assert!(names.contains(&"(move-north drone pos-0-0 pos-0-1)".to_string()));
        assert!(names.contains(&"(move-east drone pos-0-0 pos-1-0)".to_string()));

        let north = act(&t, "move-north", &["drone", "pos-0-0", "pos-0-1"]);
        let next = t.apply(&t.init, &t.actions[north]).unwrap();
        assert!(next.contains(atom(&t, "at", &["drone", "pos-0-1"])));
        assert!(t
            .atoms
            .get(&GroundAtom {
                predicate: t.domain.predicate_id("at").unwrap(),
                args: vec![0, p.object_id("pos-0-0").unwrap()],
            })
            .is_some_and(|a| !next.contains(a)));

        let text = worlds::simple_problem_text("t", 3, (1, 1), (2, 2), &[]);
        let p = parse_problem(&text, &d).unwrap();
        let t = ground_all(&d, &p);
        assert_eq!(t.successors(&t.init).len(), 4);
    }

    #[test]
    fn successors_are_in_uid_order() {
        let t = simple(4);
        let succ = t.successors(&t.init);
        assert!(succ.windows(2).all(|w| w[0].0.uid < w[1].0.uid));
    }
}
