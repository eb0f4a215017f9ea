//! State → graph encoding, dense (all ordered object pairs) or sparse
//! (declared adjacency plus current `at` relations), with optional
//! goal-aware node features.
//!
//! Node feature layout:
//! `unary multi-hot | x/W, y/W | type one-hot | blocked | goal (4) | targets (5 each)`.
//! Edge features: one-hot/multi-hot over binary predicates, plus a flag for
//! the reverse direction of a dynamic relation. Globals: nullary predicates
//! followed by one slot per object of each flag type (e.g. `drone-to north`).

use std::f64::consts::SQRT_2;

use thiserror::Error;

use crate::grounding::{AtomId, GroundTask, State};
use crate::pddl::{DomainDef, ObjId, PredId, TypeId};
use crate::worlds::{parse_pos_name, Cell};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("problem has {found} targets but the encoder allows {max}")]
    DimensionOverflow { found: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphMode {
    Dense,
    Sparse,
}

impl GraphMode {
    pub fn name(self) -> &'static str {
        match self {
            GraphMode::Dense => "dense",
            GraphMode::Sparse => "sparse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncoderConfig {
    pub mode: GraphMode,
    pub goal_aware: bool,
    pub max_targets: usize,
}

impl EncoderConfig {
    pub fn sparse(goal_aware: bool, max_targets: usize) -> Self {
        EncoderConfig {
            mode: GraphMode::Sparse,
            goal_aware,
            max_targets,
        }
    }

    pub fn dense(goal_aware: bool, max_targets: usize) -> Self {
        EncoderConfig {
            mode: GraphMode::Dense,
            goal_aware,
            max_targets,
        }
    }
}

/// Where a predicate lives in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Global,
    Node,
    Edge,
}

impl Scope {
    pub fn index(self) -> usize {
        match self {
            Scope::Global => 0,
            Scope::Node => 1,
            Scope::Edge => 2,
        }
    }
}

/// Feature layout for one domain family and encoder configuration; equal
/// for every problem of the family.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    pub cfg: EncoderConfig,
    pub unary: Vec<PredId>,
    pub binary: Vec<PredId>,
    pub nullary: Vec<PredId>,
    pub flag_types: Vec<TypeId>,
    /// (predicate, constant) per flag slot in the global vector.
    pub flag_slots: Vec<(PredId, ObjId)>,
    pub num_types: usize,
    pub scopes: Vec<Scope>,
    pub num_predicates: usize,
}

pub const BASE_SPATIAL_DIMS: usize = 3; // x/W, y/W, blocked
pub const GOAL_DIMS: usize = 4;
pub const TARGET_DIMS: usize = 5;

impl FeatureLayout {
    pub fn new(domain: &DomainDef, cfg: EncoderConfig) -> Self {
        let by_arity = |n: usize| -> Vec<PredId> {
            (0..domain.predicates.len())
                .filter(|&p| domain.predicates[p].arity() == n)
                .collect()
        };
        // A flag type has only domain constants as objects and never shares
        // a predicate with another type.
        let mut flag_types: Vec<TypeId> = domain.constants.iter().map(|c| c.ty).collect();
        flag_types.sort_unstable();
        flag_types.dedup();
        flag_types.retain(|&t| {
            domain.predicates.iter().all(|p| {
                let mentions = p.params.iter().any(|v| v.ty == t);
                !mentions || p.params.iter().all(|v| v.ty == t)
            })
        });
        let unary = by_arity(1);
        let mut flag_slots = Vec::new();
        for &p in &unary {
            let ty = domain.predicates[p].params[0].ty;
            if flag_types.contains(&ty) {
                for (c, obj) in domain.constants.iter().enumerate() {
                    if obj.ty == ty {
                        flag_slots.push((p, c));
                    }
                }
            }
        }
        let scopes = domain
            .predicates
            .iter()
            .map(|p| match p.arity() {
                0 => Scope::Global,
                1 if flag_types.contains(&p.params[0].ty) => Scope::Global,
                1 => Scope::Node,
                _ => Scope::Edge,
            })
            .collect();
        FeatureLayout {
            cfg,
            unary,
            binary: by_arity(2),
            nullary: by_arity(0),
            flag_types,
            flag_slots,
            num_types: domain.types.len(),
            scopes,
            num_predicates: domain.predicates.len(),
        }
    }

    pub fn node_dim(&self) -> usize {
        self.unary.len()
            + BASE_SPATIAL_DIMS
            + self.num_types
            + if self.cfg.goal_aware { GOAL_DIMS } else { 0 }
            + self.cfg.max_targets * TARGET_DIMS
    }

    pub fn edge_dim(&self) -> usize {
        self.binary.len() + 1
    }

    pub fn global_dim(&self) -> usize {
        (self.nullary.len() + self.flag_slots.len()).max(1)
    }

    fn coords_offset(&self) -> usize {
        self.unary.len()
    }

    fn type_offset(&self) -> usize {
        self.unary.len() + 2
    }

    fn blocked_offset(&self) -> usize {
        self.type_offset() + self.num_types
    }

    fn goal_offset(&self) -> usize {
        self.blocked_offset() + 1
    }

    fn target_offset(&self) -> usize {
        self.goal_offset() + if self.cfg.goal_aware { GOAL_DIMS } else { 0 }
    }
}

/// GNN input: node features, directed edges with features, global vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGraph {
    pub num_nodes: usize,
    pub node_dim: usize,
    /// Row-major `num_nodes × node_dim`.
    pub node_features: Vec<f32>,
    pub edges: Vec<(u32, u32)>,
    pub edge_dim: usize,
    /// Row-major `edges.len() × edge_dim`.
    pub edge_features: Vec<f32>,
    pub global_features: Vec<f32>,
    /// Object id of each node row.
    pub node_objects: Vec<ObjId>,
}

impl StateGraph {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_row(&self, i: usize) -> &[f32] {
        &self.node_features[i * self.node_dim..(i + 1) * self.node_dim]
    }

    pub fn edge_row(&self, i: usize) -> &[f32] {
        &self.edge_features[i * self.edge_dim..(i + 1) * self.edge_dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub feature_bytes: usize,
}

pub fn graph_stats(g: &StateGraph) -> GraphStats {
    GraphStats {
        num_nodes: g.num_nodes,
        num_edges: g.num_edges(),
        feature_bytes: 4 * (g.num_nodes * g.node_dim + g.num_edges() * g.edge_dim + g.global_features.len()),
    }
}

/// `[Δx, Δy, d, θ]` from `node` to `goal` on a `w × w` grid: offsets divided
/// by W, distance divided by the grid diagonal W√2, bearing from atan2 with
/// east = 0 and counterclockwise positive (0 when coincident).
pub fn goal_features(node: Cell, goal: Cell, w: usize) -> [f64; 4] {
    let dx = goal.0 as f64 - node.0 as f64;
    let dy = goal.1 as f64 - node.1 as f64;
    let wf = w as f64;
    let dist = (dx * dx + dy * dy).sqrt() / (wf * SQRT_2);
    let theta = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
    [dx / wf, dy / wf, dist, theta]
}

/// `[scanned, Δx, Δy, d, θ]` relative to one target.
pub fn target_features(node: Cell, target: Cell, scanned: bool, w: usize) -> [f64; 5] {
    let g = goal_features(node, target, w);
    [f64::from(u8::from(scanned)), g[0], g[1], g[2], g[3]]
}

/// Everything about one problem that does not change between states.
#[derive(Debug, Clone)]
pub struct GraphEncoder {
    pub layout: FeatureLayout,
    pub width: usize,
    /// Object → node row (None when the object is not a node).
    pub node_index: Vec<Option<usize>>,
    node_objects: Vec<ObjId>,
    coords: Vec<Option<Cell>>,
    static_nodes: Vec<f32>,
    static_edges: Vec<(u32, u32)>,
    static_edge_features: Vec<f32>,
    static_globals: Vec<f32>,
    atom_is_static: Vec<bool>,
    at_pred: Option<PredId>,
    scanned_pred: Option<PredId>,
    agent: Option<ObjId>,
    goal_cell: Option<Cell>,
    targets: Vec<ObjId>,
}

impl GraphEncoder {
    pub fn new(task: &GroundTask, cfg: EncoderConfig) -> Result<Self, EncodeError> {
        let domain = &task.domain;
        let problem = &task.problem;
        let layout = FeatureLayout::new(domain, cfg);
        let n_obj = problem.objects.len();

        let coords: Vec<Option<Cell>> = problem.objects.iter().map(|o| parse_pos_name(&o.name)).collect();
        let width = coords.iter().flatten().map(|&(x, y)| x.max(y) + 1).max().unwrap_or(1);

        let mut node_index = vec![None; n_obj];
        let mut node_objects = Vec::new();
        for (o, obj) in problem.objects.iter().enumerate() {
            let drop = cfg.mode == GraphMode::Sparse && layout.flag_types.contains(&obj.ty);
            if !drop {
                node_index[o] = Some(node_objects.len());
                node_objects.push(o);
            }
        }

        let at_pred = domain.predicate_id("at");
        let scanned_pred = domain.predicate_id("scanned");
        let agent = problem.object_id("drone");
        let goal_cell = at_pred.and_then(|at| {
            problem
                .goal
                .iter()
                .find(|g| g.predicate == at && Some(g.args[0]) == agent)
                .and_then(|g| coords[g.args[1]])
        });
        let targets: Vec<ObjId> = match scanned_pred {
            Some(sp) => problem
                .goal
                .iter()
                .filter(|g| g.predicate == sp)
                .map(|g| g.args[0])
                .collect(),
            None => Vec::new(),
        };
        if targets.len() > cfg.max_targets {
            return Err(EncodeError::DimensionOverflow {
                found: targets.len(),
                max: cfg.max_targets,
            });
        }

        let atom_is_static: Vec<bool> = (0..task.atoms.len())
            .map(|i| task.static_predicates[task.atoms.atom(i as AtomId).predicate])
            .collect();

        let nd = layout.node_dim();
        let ed = layout.edge_dim();
        let n = node_objects.len();
        let mut static_nodes = vec![0f32; n * nd];
        let mut static_globals = vec![0f32; layout.global_dim()];

        // Type one-hot and position coordinates.
        for (row, &o) in node_objects.iter().enumerate() {
            let base = row * nd;
            static_nodes[base + layout.type_offset() + problem.objects[o].ty] = 1.0;
            if let Some((x, y)) = coords[o] {
                static_nodes[base + layout.coords_offset()] = x as f32 / width as f32;
                static_nodes[base + layout.coords_offset() + 1] = y as f32 / width as f32;
            }
        }

        let static_atoms: Vec<&crate::pddl::GroundAtom> = problem
            .init
            .iter()
            .filter(|a| task.static_predicates[a.predicate])
            .collect();
        let safe_pred = domain.predicate_id("safe-at");
        for (o, c) in coords.iter().enumerate() {
            let (Some(_), Some(row)) = (c, node_index[o]) else {
                continue;
            };
            let blocked = match safe_pred {
                Some(sp) => !static_atoms.iter().any(|a| a.predicate == sp && a.args[0] == o),
                None => {
                    width > 1
                        && !static_atoms
                            .iter()
                            .any(|a| a.args.len() == 2 && a.args[0] == o && coords[a.args[1]].is_some())
                }
            };
            if blocked {
                static_nodes[row * nd + layout.blocked_offset()] = 1.0;
            }
        }
        for a in &static_atoms {
            match a.args.len() {
                0 => set_global(&layout, &mut static_globals, a.predicate, None),
                1 => {
                    if let Some(row) = node_index[a.args[0]] {
                        if let Some(k) = layout.unary.iter().position(|&p| p == a.predicate) {
                            static_nodes[row * nd + k] = 1.0;
                        }
                    }
                    set_global(&layout, &mut static_globals, a.predicate, Some(a.args[0]));
                }
                _ => {}
            }
        }

        let mut static_edges = Vec::new();
        let mut static_edge_features = Vec::new();
        match cfg.mode {
            GraphMode::Sparse => {
                for a in &static_atoms {
                    if a.args.len() != 2 {
                        continue;
                    }
                    let (Some(s), Some(d)) = (node_index[a.args[0]], node_index[a.args[1]]) else {
                        continue;
                    };
                    let k = layout.binary.iter().position(|&p| p == a.predicate).unwrap_or(0);
                    static_edges.push((s as u32, d as u32));
                    let mut f = vec![0f32; ed];
                    f[k] = 1.0;
                    static_edge_features.extend(f);
                }
            }
            GraphMode::Dense => {
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            static_edges.push((i as u32, j as u32));
                        }
                    }
                }
                static_edge_features = vec![0f32; static_edges.len() * ed];
                for a in &static_atoms {
                    if a.args.len() != 2 {
                        continue;
                    }
                    if let Some(e) = dense_edge(&node_index, n, a.args[0], a.args[1]) {
                        let k = layout.binary.iter().position(|&p| p == a.predicate).unwrap_or(0);
                        static_edge_features[e * ed + k] = 1.0;
                    }
                }
            }
        }

        Ok(GraphEncoder {
            layout,
            width,
            node_index,
            node_objects,
            coords,
            static_nodes,
            static_edges,
            static_edge_features,
            static_globals,
            atom_is_static,
            at_pred,
            scanned_pred,
            agent,
            goal_cell,
            targets,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_objects.len()
    }

    pub fn goal_cell(&self) -> Option<Cell> {
        self.goal_cell
    }

    /// Cell of `obj` in `state`: its own coordinates for positions, the cell
    /// it is `at` for units.
    pub fn location(&self, task: &GroundTask, state: &State, obj: ObjId) -> Option<Cell> {
        if let Some(c) = self.coords[obj] {
            return Some(c);
        }
        let at = self.at_pred?;
        state.atoms().iter().find_map(|&id| {
            let a = task.atoms.atom(id);
            (a.predicate == at && a.args[0] == obj)
                .then(|| self.coords[a.args[1]])
                .flatten()
        })
    }

    pub fn agent_location(&self, task: &GroundTask, state: &State) -> Option<Cell> {
        self.location(task, state, self.agent?)
    }

    pub fn encode(&self, task: &GroundTask, state: &State) -> StateGraph {
        let layout = &self.layout;
        let nd = layout.node_dim();
        let ed = layout.edge_dim();
        let mut nodes = self.static_nodes.clone();
        let mut globals = self.static_globals.clone();
        let mut edges = self.static_edges.clone();
        let mut edge_features = self.static_edge_features.clone();
        let n = self.num_nodes();

        let mut unit_cells: Vec<(ObjId, Cell)> = Vec::new();
        let mut scanned: Vec<ObjId> = Vec::new();
        for &id in state.atoms() {
            if self.atom_is_static.get(id as usize).copied().unwrap_or(true) {
                continue;
            }
            let a = task.atoms.atom(id);
            match a.args.len() {
                0 => set_global(layout, &mut globals, a.predicate, None),
                1 => {
                    if let Some(row) = self.node_index[a.args[0]] {
                        if let Some(k) = layout.unary.iter().position(|&p| p == a.predicate) {
                            nodes[row * nd + k] = 1.0;
                        }
                    }
                    set_global(layout, &mut globals, a.predicate, Some(a.args[0]));
                    if Some(a.predicate) == self.scanned_pred {
                        scanned.push(a.args[0]);
                    }
                }
                _ => {
                    let (s, d) = (a.args[0], a.args[1]);
                    if Some(a.predicate) == self.at_pred {
                        if let Some(c) = self.coords[d] {
                            unit_cells.push((s, c));
                        }
                    }
                    let k = layout.binary.iter().position(|&p| p == a.predicate).unwrap_or(0);
                    match layout.cfg.mode {
                        GraphMode::Sparse => {
                            let (Some(rs), Some(rd)) = (self.node_index[s], self.node_index[d]) else {
                                continue;
                            };
                            edges.push((rs as u32, rd as u32));
                            let mut f = vec![0f32; ed];
                            f[k] = 1.0;
                            edge_features.extend_from_slice(&f);
                            edges.push((rd as u32, rs as u32));
                            f[ed - 1] = 1.0;
                            edge_features.extend_from_slice(&f);
                        }
                        GraphMode::Dense => {
                            if let Some(e) = dense_edge(&self.node_index, n, s, d) {
                                edge_features[e * ed + k] = 1.0;
                            }
                        }
                    }
                }
            }
        }

        // Units take the coordinates of the cell they occupy.
        for &(u, (x, y)) in &unit_cells {
            if let Some(row) = self.node_index[u] {
                nodes[row * nd + layout.coords_offset()] = x as f32 / self.width as f32;
                nodes[row * nd + layout.coords_offset() + 1] = y as f32 / self.width as f32;
            }
        }
        let cell_of = |o: ObjId| -> Option<Cell> {
            self.coords[o].or_else(|| unit_cells.iter().find(|(u, _)| *u == o).map(|&(_, c)| c))
        };

        if layout.cfg.goal_aware {
            if let Some(goal) = self.goal_cell {
                for (row, &o) in self.node_objects.iter().enumerate() {
                    if let Some(c) = cell_of(o) {
                        let g = goal_features(c, goal, self.width);
                        let off = row * nd + layout.goal_offset();
                        for (k, v) in g.iter().enumerate() {
                            nodes[off + k] = *v as f32;
                        }
                    }
                }
            }
        }
        for (t_idx, &t) in self.targets.iter().enumerate() {
            let is_scanned = scanned.contains(&t);
            let Some(tc) = cell_of(t) else { continue };
            for (row, &o) in self.node_objects.iter().enumerate() {
                let off = row * nd + layout.target_offset() + t_idx * TARGET_DIMS;
                match cell_of(o) {
                    Some(c) => {
                        let f = target_features(c, tc, is_scanned, self.width);
                        for (k, v) in f.iter().enumerate() {
                            nodes[off + k] = *v as f32;
                        }
                    }
                    None => nodes[off] = f32::from(u8::from(is_scanned)),
                }
            }
        }

        StateGraph {
            num_nodes: n,
            node_dim: nd,
            node_features: nodes,
            edges,
            edge_dim: ed,
            edge_features,
            global_features: globals,
            node_objects: self.node_objects.clone(),
        }
    }
}

fn set_global(layout: &FeatureLayout, globals: &mut [f32], pred: PredId, arg: Option<ObjId>) {
    match arg {
        None => {
            if let Some(k) = layout.nullary.iter().position(|&p| p == pred) {
                globals[k] = 1.0;
            }
        }
        Some(o) => {
            if let Some(k) = layout.flag_slots.iter().position(|&s| s == (pred, o)) {
                globals[layout.nullary.len() + k] = 1.0;
            }
        }
    }
}

/// Index of the dense edge `src → dst` (ordered pairs, self-pairs skipped).
fn dense_edge(node_index: &[Option<usize>], n: usize, src: ObjId, dst: ObjId) -> Option<usize> {
    let (i, j) = (node_index[src]?, node_index[dst]?);
    if i == j {
        return None;
    }
    Some(i * (n - 1) + if j > i { j - 1 } else { j })
}

/// One-shot encoding; prefer [`GraphEncoder`] when encoding many states of
/// the same problem.
pub fn encode(task: &GroundTask, state: &State, cfg: EncoderConfig) -> Result<StateGraph, EncodeError> {
    Ok(GraphEncoder::new(task, cfg)?.encode(task, state))
}
