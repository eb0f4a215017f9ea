//! Seeded instance generators for the drone grid worlds, plus the bundled
//! domain files and the Blocksworld test corpus.
//!
//! Grid convention: `pos-x-y` with x the column (east is +x) and y the row
//! (north is +y), origin in the south-west corner. `(north-of p1 p2)` holds
//! when p1 is directly north of p2; `(adjacent-north from to)` when `to` is
//! directly north of `from`.

use std::collections::VecDeque;
use std::fmt::Write;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grounding::{ground_all, GroundTask};
use crate::pddl::{parse_domain, parse_problem, DomainDef, PddlError};
use crate::search::{optimal_plan_length, OracleOutcome};

pub const BLOCKSWORLD_DOMAIN: &str = include_str!("pddl/blocksworld.pddl");
/// The introductory fragment: predicates plus `stack`, not a playable domain.
pub const BLOCKSWORLD_LISTING: &str = include_str!("pddl/blocksworld_listing.pddl");
pub const BW_PROB_1: &str = include_str!("pddl/bw-prob-1.pddl");
pub const DRONEWORLD_SIMPLE_DOMAIN: &str = include_str!("pddl/droneworld_simple_dir.pddl");
pub const DRONEWORLD_SCAN_DOMAIN: &str = include_str!("pddl/droneworld_scan.pddl");

const MAX_RETRIES: u64 = 100;
const MAX_DENSITY: f64 = 0.3;

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("invalid instance spec: {0}")]
    InvalidSpec(String),
    #[error("no solvable instance after {0} attempts")]
    GenerationFailed(u64),
    #[error("generated problem failed to parse: {0}")]
    Parse(#[from] PddlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    Simple,
    Scan,
}

impl DomainKind {
    pub fn text(self) -> &'static str {
        match self {
            DomainKind::Simple => DRONEWORLD_SIMPLE_DOMAIN,
            DomainKind::Scan => DRONEWORLD_SCAN_DOMAIN,
        }
    }

    /// Parsed once per process.
    pub fn domain(self) -> &'static DomainDef {
        static SIMPLE: OnceLock<DomainDef> = OnceLock::new();
        static SCAN: OnceLock<DomainDef> = OnceLock::new();
        let cell = match self {
            DomainKind::Simple => &SIMPLE,
            DomainKind::Scan => &SCAN,
        };
        cell.get_or_init(|| parse_domain(self.text()).expect("bundled domain parses"))
    }

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Simple => "simple",
            DomainKind::Scan => "scan",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "simple" => Some(DomainKind::Simple),
            "scan" => Some(DomainKind::Scan),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub width: usize,
    pub obstacle_density: f64,
    pub num_targets: usize,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn simple(width: usize, obstacle_density: f64, seed: u64) -> Self {
        InstanceSpec {
            width,
            obstacle_density,
            num_targets: 0,
            seed,
        }
    }

    pub fn scan(width: usize, obstacle_density: f64, num_targets: usize, seed: u64) -> Self {
        InstanceSpec {
            width,
            obstacle_density,
            num_targets,
            seed,
        }
    }

    fn validate(&self, kind: DomainKind) -> Result<(), WorldError> {
        if self.width < 3 {
            return Err(WorldError::InvalidSpec(format!("grid width {} < 3", self.width)));
        }
        if !(0.0..=MAX_DENSITY).contains(&self.obstacle_density) {
            return Err(WorldError::InvalidSpec(format!(
                "obstacle density {} outside [0, {MAX_DENSITY}]",
                self.obstacle_density
            )));
        }
        if kind == DomainKind::Scan && self.num_targets == 0 {
            return Err(WorldError::InvalidSpec("scan instances need >= 1 target".into()));
        }
        let cells = self.width * self.width;
        let blocked = self.num_blocked();
        if cells - blocked < 2 + self.num_targets {
            return Err(WorldError::InvalidSpec("too few free cells".into()));
        }
        Ok(())
    }

    fn num_blocked(&self) -> usize {
        (self.obstacle_density * (self.width * self.width) as f64).round() as usize
    }
}

/// A generated, parsed and grounded problem with its grid layout.
#[derive(Debug, Clone)]
pub struct Instance {
    pub kind: DomainKind,
    pub width: usize,
    pub text: String,
    pub task: GroundTask,
    pub start: Cell,
    pub goal: Cell,
    pub targets: Vec<Cell>,
    pub blocked: Vec<Cell>,
}

pub fn pos_name((x, y): Cell) -> String {
    format!("pos-{x}-{y}")
}

/// Inverse of [`pos_name`].
pub fn parse_pos_name(name: &str) -> Option<Cell> {
    let rest = name.strip_prefix("pos-")?;
    let (x, y) = rest.split_once('-')?;
    Some((x.parse().ok()?, y.parse().ok()?))
}

fn cells(w: usize) -> impl Iterator<Item = Cell> {
    (0..w).flat_map(move |x| (0..w).map(move |y| (x, y)))
}

/// Neighbour of `c` one step in direction `d` (0 north, 1 south, 2 east, 3 west).
fn step(c: Cell, d: usize, w: usize) -> Option<Cell> {
    let (x, y) = c;
    match d {
        0 if y + 1 < w => Some((x, y + 1)),
        1 if y > 0 => Some((x, y - 1)),
        2 if x + 1 < w => Some((x + 1, y)),
        3 if x > 0 => Some((x - 1, y)),
        _ => None,
    }
}

const DIRS: [&str; 4] = ["north", "south", "east", "west"];

/// Problem text for droneworld_simple_dir. Directional atoms leading into a
/// blocked cell are omitted.
pub fn simple_problem_text(name: &str, w: usize, start: Cell, goal: Cell, blocked: &[Cell]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "(define (problem {name})");
    let _ = writeln!(s, "  (:domain droneworld_simple_dir)");
    s.push_str("  (:objects drone - unit");
    for c in cells(w) {
        let _ = write!(s, " {}", pos_name(c));
    }
    s.push_str(" - position)\n  (:init\n");
    let _ = writeln!(s, "    (at drone {})", pos_name(start));
    for (d, dir) in DIRS.iter().enumerate() {
        for from in cells(w) {
            if let Some(to) = step(from, d, w) {
                if !blocked.contains(&to) {
                    let _ = writeln!(s, "    ({dir}-of {} {})", pos_name(to), pos_name(from));
                }
            }
        }
    }
    let _ = writeln!(s, "  )\n  (:goal (and (at drone {})))\n)", pos_name(goal));
    s
}

/// Problem text for droneworld_scan. Blocked cells keep their adjacency
/// atoms but lack `safe-at`.
pub fn scan_problem_text(
    name: &str,
    w: usize,
    start: Cell,
    heading: &str,
    goal: Cell,
    targets: &[Cell],
    blocked: &[Cell],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "(define (problem {name})");
    let _ = writeln!(s, "  (:domain droneworld_scan)");
    s.push_str("  (:objects");
    for k in 0..targets.len() {
        let _ = write!(s, " target-{}", k + 1);
    }
    if !targets.is_empty() {
        s.push_str(" - unit");
    }
    for c in cells(w) {
        let _ = write!(s, " {}", pos_name(c));
    }
    s.push_str(" - position)\n  (:init\n");
    let _ = writeln!(s, "    (at drone {})", pos_name(start));
    let _ = writeln!(s, "    (drone-to {heading})");
    for (k, t) in targets.iter().enumerate() {
        let _ = writeln!(s, "    (at target-{} {})", k + 1, pos_name(*t));
    }
    for c in cells(w) {
        if !blocked.contains(&c) {
            let _ = writeln!(s, "    (safe-at {})", pos_name(c));
        }
    }
    for (d, dir) in DIRS.iter().enumerate() {
        for from in cells(w) {
            if let Some(to) = step(from, d, w) {
                let _ = writeln!(s, "    (adjacent-{dir} {} {})", pos_name(from), pos_name(to));
            }
        }
    }
    for (h, l, r) in [
        ("north", "west", "east"),
        ("east", "north", "south"),
        ("south", "east", "west"),
        ("west", "south", "north"),
    ] {
        let _ = writeln!(s, "    (left-of {h} {l})");
        let _ = writeln!(s, "    (right-of {h} {r})");
    }
    s.push_str("  )\n  (:goal (and");
    for k in 0..targets.len() {
        let _ = write!(s, " (scanned target-{})", k + 1);
    }
    let _ = writeln!(s, " (at drone {})))\n)", pos_name(goal));
    s
}

/// 4-connected reachability over free cells.
pub fn grid_reachable(w: usize, blocked: &[Cell], from: Cell, to: Cell) -> bool {
    let mut seen = vec![false; w * w];
    let idx = |(x, y): Cell| x * w + y;
    let mut queue = VecDeque::from([from]);
    seen[idx(from)] = true;
    while let Some(c) = queue.pop_front() {
        if c == to {
            return true;
        }
        for d in 0..4 {
            if let Some(n) = step(c, d, w) {
                if !seen[idx(n)] && !blocked.contains(&n) {
                    seen[idx(n)] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    false
}

fn attempt_rng(seed: u64, attempt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Picks blocked cells plus `extra` distinct free cells.
fn layout(spec: &InstanceSpec, rng: &mut ChaCha8Rng, extra: usize) -> (Vec<Cell>, Vec<Cell>) {
    let mut all: Vec<Cell> = cells(spec.width).collect();
    all.shuffle(rng);
    let nb = spec.num_blocked();
    let mut blocked = all[..nb].to_vec();
    blocked.sort_unstable();
    let free = all[nb..nb + extra].to_vec();
    (blocked, free)
}

/// droneworld_simple instance: one drone, one goal cell, optional obstacles.
pub fn gen_simple(spec: &InstanceSpec) -> Result<Instance, WorldError> {
    spec.validate(DomainKind::Simple)?;
    let domain = DomainKind::Simple.domain();
    let w = spec.width;
    for attempt in 0..MAX_RETRIES {
        let mut rng = attempt_rng(spec.seed, attempt);
        let (blocked, free) = layout(spec, &mut rng, 2);
        let (start, goal) = (free[0], free[1]);
        if !grid_reachable(w, &blocked, start, goal) {
            continue;
        }
        let name = format!("simple-w{w}-s{}", spec.seed);
        let text = simple_problem_text(&name, w, start, goal, &blocked);
        let problem = parse_problem(&text, domain)?;
        let task = ground_all(domain, &problem);
        return Ok(Instance {
            kind: DomainKind::Simple,
            width: w,
            text,
            task,
            start,
            goal,
            targets: Vec::new(),
            blocked,
        });
    }
    Err(WorldError::GenerationFailed(MAX_RETRIES))
}

/// droneworld_scan instance: drone with heading, `num_targets` targets to
/// scan, then a final goal cell.
pub fn gen_scan(spec: &InstanceSpec) -> Result<Instance, WorldError> {
    spec.validate(DomainKind::Scan)?;
    let domain = DomainKind::Scan.domain();
    let w = spec.width;
    for attempt in 0..MAX_RETRIES {
        let mut rng = attempt_rng(spec.seed, attempt);
        let (blocked, free) = layout(spec, &mut rng, 2 + spec.num_targets);
        let (start, goal) = (free[0], free[1]);
        let targets = free[2..].to_vec();
        let heading = DIRS[rng.gen_range(0..4)];
        if !grid_reachable(w, &blocked, start, goal) {
            continue;
        }
        let name = format!("scan-w{w}-t{}-s{}", spec.num_targets, spec.seed);
        let text = scan_problem_text(&name, w, start, heading, goal, &targets, &blocked);
        let problem = parse_problem(&text, domain)?;
        let task = ground_all(domain, &problem);
        // Targets must be scannable from some reachable cell: check the full
        // task with the breadth-first oracle.
        match optimal_plan_length(&task, 2_000_000) {
            Ok(OracleOutcome::Length(_)) => {}
            _ => continue,
        }
        return Ok(Instance {
            kind: DomainKind::Scan,
            width: w,
            text,
            task,
            start,
            goal,
            targets,
            blocked,
        });
    }
    Err(WorldError::GenerationFailed(MAX_RETRIES))
}

pub fn generate(kind: DomainKind, spec: &InstanceSpec) -> Result<Instance, WorldError> {
    match kind {
        DomainKind::Simple => gen_simple(spec),
        DomainKind::Scan => gen_scan(spec),
    }
}
