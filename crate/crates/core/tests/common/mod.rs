#![allow(dead_code)]

pub mod oracle;
pub mod refmodel;

use std::collections::{BTreeSet, HashSet, VecDeque};

use gplan::grounding::{GroundTask, State};

/// Every state reachable from the initial state, rendered as atom strings.
pub fn reachable_atom_sets(task: &GroundTask) -> BTreeSet<BTreeSet<String>> {
    let mut seen: HashSet<State> = HashSet::from([task.init.clone()]);
    let mut queue = VecDeque::from([task.init.clone()]);
    while let Some(s) = queue.pop_front() {
        for (_, n) in task.successors(&s) {
            if seen.insert(n.clone()) {
                queue.push_back(n);
            }
        }
    }
    seen.iter()
        .map(|s| s.atoms().iter().map(|&a| task.atom_name(a).to_lowercase()).collect())
        .collect()
}
