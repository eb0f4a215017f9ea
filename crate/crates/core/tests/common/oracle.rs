//! Blocksworld reachability by direct simulation of towers, independent
//! of the PDDL front end.

use std::collections::{BTreeSet, VecDeque};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct World {
    /// Towers bottom to top, kept sorted.
    pub towers: Vec<Vec<String>>,
    pub held: Option<String>,
}

impl World {
    pub fn new(mut towers: Vec<Vec<String>>, held: Option<String>) -> Self {
        towers.retain(|t| !t.is_empty());
        towers.sort();
        World { towers, held }
    }

    pub fn atoms(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        for t in &self.towers {
            s.insert(format!("(on-table {})", t[0]));
            for w in t.windows(2) {
                s.insert(format!("(on {} {})", w[1], w[0]));
            }
            s.insert(format!("(clear {})", t[t.len() - 1]));
        }
        match &self.held {
            Some(b) => {
                s.insert(format!("(holding {b})"));
            }
            None => {
                s.insert("(handempty)".to_string());
            }
        }
        s
    }

    pub fn successors(&self) -> Vec<World> {
        let mut out = Vec::new();
        match &self.held {
            None => {
                // Lift the top block of any tower.
                for i in 0..self.towers.len() {
                    let mut towers = self.towers.clone();
                    let b = towers[i].pop().unwrap();
                    out.push(World::new(towers, Some(b)));
                }
            }
            Some(b) => {
                let mut towers = self.towers.clone();
                towers.push(vec![b.clone()]);
                out.push(World::new(towers, None));
                for i in 0..self.towers.len() {
                    let mut towers = self.towers.clone();
                    towers[i].push(b.clone());
                    out.push(World::new(towers, None));
                }
            }
        }
        out
    }
}

/// Atom sets of every world reachable from `start`.
pub fn reachable(start: World) -> BTreeSet<BTreeSet<String>> {
    let mut seen = BTreeSet::from([start.clone()]);
    let mut queue = VecDeque::from([start]);
    while let Some(w) = queue.pop_front() {
        for n in w.successors() {
            if seen.insert(n.clone()) {
                queue.push_back(n);
            }
        }
    }
    seen.iter().map(World::atoms).collect()
}
