//! Policy/value model over encoded state graphs.
//!
//! A shared trunk of GN blocks produces node, edge and global embeddings.
//! Each applicable action is embedded as
//! `[add_hot | del_hot | mean(affected node embeddings) | schema one-hot]`,
//! concatenated with the state summary `[global | mean node]` and scored by
//! an MLP; a second MLP on the state summary gives V(s).

use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{EncodeError, EncoderConfig, FeatureLayout, GraphEncoder, GraphMode, StateGraph};
use crate::grounding::{GroundAction, GroundTask, State};
use crate::neural::{
    read_checkpoint, write_checkpoint, GnNetwork, GraphVars, Mlp, NeuralError, ParamStore, Tape, Tensor, Topology, Var,
};
use crate::search::{PolicyEval, PolicyEvaluator};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no applicable actions to score")]
    EmptyActionSet,
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("model does not fit this task: {0}")]
    Incompatible(String),
}

/// Network widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Hidden layer widths inside every GN update function.
    pub hidden: Vec<usize>,
    /// Output width of each GN update function.
    pub latent: usize,
    /// Hidden width of the score and value heads.
    pub head_hidden: usize,
    pub num_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![512, 512],
            latent: 512,
            head_hidden: 512,
            num_blocks: 2,
        }
    }
}

/// Everything needed to rebuild a model; its text form is hashed into
/// checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub domain: String,
    pub encoder: EncoderConfig,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub global_dim: usize,
    pub num_predicates: usize,
    pub num_schemas: usize,
    pub model: ModelConfig,
    /// V(s) = value_scale · head output.
    pub value_scale: f32,
}

impl ModelSpec {
    pub fn for_domain(
        domain: &crate::pddl::DomainDef,
        encoder: EncoderConfig,
        model: ModelConfig,
        value_scale: f32,
    ) -> Self {
        let layout = FeatureLayout::new(domain, encoder);
        ModelSpec {
            domain: domain.name.clone(),
            encoder,
            node_dim: layout.node_dim(),
            edge_dim: layout.edge_dim(),
            global_dim: layout.global_dim(),
            num_predicates: domain.predicates.len(),
            num_schemas: domain.actions.len(),
            model,
            value_scale,
        }
    }

    pub fn hot_width(&self) -> usize {
        self.num_predicates * 3
    }

    pub fn action_dim(&self) -> usize {
        2 * self.hot_width() + self.model.latent + self.num_schemas
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "format=gplan-model-1\ndomain={}\nmode={}\ngoal_aware={}\nmax_targets={}\nnode_dim={}\nedge_dim={}\n\
             global_dim={}\nnum_predicates={}\nnum_schemas={}\nhidden={}\nlatent={}\nhead_hidden={}\nblocks={}\n\
             value_scale={}\n",
            self.domain,
            self.encoder.mode.name(),
            self.encoder.goal_aware,
            self.encoder.max_targets,
            self.node_dim,
            self.edge_dim,
            self.global_dim,
            self.num_predicates,
            self.num_schemas,
            join(&self.model.hidden),
            self.model.latent,
            self.model.head_hidden,
            self.model.num_blocks,
            self.value_scale,
        )
    }

    pub fn from_text(text: &str) -> Result<Self, AgentError> {
        let mut kv = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AgentError::InvalidSpec(format!("line without `=`: {line}")))?;
            kv.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| AgentError::InvalidSpec(format!("missing {k}")))
        };
        let num = |k: &str| -> Result<usize, AgentError> {
            get(k)?.parse().map_err(|_| AgentError::InvalidSpec(format!("bad {k}")))
        };
        if get("format")? != "gplan-model-1" {
            return Err(AgentError::InvalidSpec("unknown format".into()));
        }
        let mode = match get("mode")? {
            "dense" => GraphMode::Dense,
            "sparse" => GraphMode::Sparse,
            m => return Err(AgentError::InvalidSpec(format!("mode {m}"))),
        };
        let hidden = get("hidden")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| AgentError::InvalidSpec("bad hidden".into())))
            .collect::<Result<Vec<usize>, _>>()?;
        Ok(ModelSpec {
            domain: get("domain")?.to_string(),
            encoder: EncoderConfig {
                mode,
                goal_aware: get("goal_aware")? == "true",
                max_targets: num("max_targets")?,
            },
            node_dim: num("node_dim")?,
            edge_dim: num("edge_dim")?,
            global_dim: num("global_dim")?,
            num_predicates: num("num_predicates")?,
            num_schemas: num("num_schemas")?,
            model: ModelConfig {
                hidden,
                latent: num("latent")?,
                head_hidden: num("head_hidden")?,
                num_blocks: num("blocks")?,
            },
            value_scale: get("value_scale")?
                .parse()
                .map_err(|_| AgentError::InvalidSpec("bad value_scale".into()))?,
        })
    }
}

/// Symbolic part of an action embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionFeature {
    /// Indices into the `predicate × scope` hot vector.
    pub add_hot: Vec<usize>,
    pub del_hot: Vec<usize>,
    /// Node rows touched by the action's effects.
    pub affected_nodes: Vec<u32>,
    pub schema: usize,
}

impl ActionFeature {
    pub fn new(task: &GroundTask, encoder: &GraphEncoder, a: &GroundAction) -> Self {
        let scopes = &encoder.layout.scopes;
        let hot = |atoms: &[u32]| {
            let mut v: Vec<usize> = atoms
                .iter()
                .map(|&id| {
                    let p = task.atoms.atom(id).predicate;
                    p * 3 + scopes[p].index()
                })
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut affected: Vec<u32> = a
            .add
            .iter()
            .chain(&a.del)
            .flat_map(|&id| task.atoms.atom(id).args.iter())
            .filter_map(|&o| encoder.node_index[o].map(|r| r as u32))
            .collect();
        affected.sort_unstable();
        affected.dedup();
        ActionFeature {
            add_hot: hot(&a.add),
            del_hot: hot(&a.del),
            affected_nodes: affected,
            schema: a.schema,
        }
    }
}

/// `e_a` given node embeddings `nodes` (rows = graph nodes).
pub fn embed_action(f: &ActionFeature, nodes: &Tensor, num_predicates: usize, num_schemas: usize) -> Vec<f32> {
    let hw = num_predicates * 3;
    let mut e = vec![0f32; 2 * hw + nodes.cols + num_schemas];
    for &i in &f.add_hot {
        e[i] = 1.0;
    }
    for &i in &f.del_hot {
        e[hw + i] = 1.0;
    }
    if !f.affected_nodes.is_empty() {
        let w = 1.0 / f.affected_nodes.len() as f32;
        for &r in &f.affected_nodes {
            for (d, s) in e[2 * hw..2 * hw + nodes.cols].iter_mut().zip(nodes.row(r as usize)) {
                *d += w * s;
            }
        }
    }
    e[2 * hw + nodes.cols + f.schema] = 1.0;
    e
}

/// Softmax with max subtraction.
pub fn policy_distribution(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// −Σ p ln p.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Index of the largest probability; ties go to the lowest uid.
pub fn greedy_index(probs: &[f64], uids: &[usize]) -> usize {
    let mut best = 0;
    for i in 1..probs.len() {
        if probs[i] > probs[best] || (probs[i] == probs[best] && uids[i] < uids[best]) {
            best = i;
        }
    }
    best
}

pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Per-task precomputation: the encoder and every ground action's feature.
#[derive(Debug, Clone)]
pub struct TaskContext {
    pub encoder: GraphEncoder,
    pub features: Vec<ActionFeature>,
}

impl TaskContext {
    pub fn new(task: &GroundTask, cfg: EncoderConfig) -> Result<Self, EncodeError> {
        let encoder = GraphEncoder::new(task, cfg)?;
        let features = task
            .actions
            .iter()
            .map(|a| ActionFeature::new(task, &encoder, a))
            .collect();
        Ok(TaskContext { encoder, features })
    }

    pub fn for_model(task: &GroundTask, spec: &ModelSpec) -> Result<Self, AgentError> {
        if !task.domain.name.eq_ignore_ascii_case(&spec.domain) {
            return Err(AgentError::Incompatible(format!(
                "model built for domain {}, task uses {}",
                spec.domain, task.domain.name
            )));
        }
        let ctx = TaskContext::new(task, spec.encoder)?;
        let l = &ctx.encoder.layout;
        let dims = (l.node_dim(), l.edge_dim(), l.global_dim());
        if dims != (spec.node_dim, spec.edge_dim, spec.global_dim)
            || task.domain.predicates.len() != spec.num_predicates
            || task.domain.actions.len() != spec.num_schemas
        {
            return Err(AgentError::Incompatible(format!(
                "model built for domain {} with dims {:?}, task has {:?}",
                spec.domain,
                (spec.node_dim, spec.edge_dim, spec.global_dim),
                dims
            )));
        }
        Ok(ctx)
    }
}

/// Several (graph, candidate actions) samples packed as one disjoint union.
#[derive(Debug, Clone)]
pub struct Batch {
    pub nodes: Tensor,
    pub edges: Tensor,
    pub globals: Tensor,
    pub topo: Topology,
    /// `[add_hot | del_hot]` per action row.
    pub hot: Tensor,
    pub schema: Tensor,
    aff_nodes: Rc<[u32]>,
    aff_action: Rc<[u32]>,
    aff_weight: Rc<[f32]>,
    pub action_graph: Rc<[u32]>,
    pub num_actions: usize,
}

#[derive(Debug, Default)]
pub struct BatchBuilder {
    nodes: Vec<f32>,
    edges: Vec<f32>,
    globals: Vec<f32>,
    node_graph: Vec<u32>,
    src: Vec<u32>,
    dst: Vec<u32>,
    hot: Vec<f32>,
    schema: Vec<f32>,
    aff_nodes: Vec<u32>,
    aff_action: Vec<u32>,
    aff_weight: Vec<f32>,
    action_graph: Vec<u32>,
    dims: Option<(usize, usize, usize)>,
    num_graphs: usize,
    num_actions: usize,
}

impl BatchBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_graphs(&self) -> usize {
        self.num_graphs
    }

    pub fn push<'f>(&mut self, spec: &ModelSpec, g: &StateGraph, actions: impl IntoIterator<Item = &'f ActionFeature>) {
        let dims = (g.node_dim, g.edge_dim, g.global_features.len());
        assert_eq!(*self.dims.get_or_insert(dims), dims, "graph dims within a batch");
        let offset = self.node_graph.len() as u32;
        let gi = self.num_graphs as u32;
        self.nodes.extend_from_slice(&g.node_features);
        self.edges.extend_from_slice(&g.edge_features);
        self.globals.extend_from_slice(&g.global_features);
        self.node_graph.extend(std::iter::repeat_n(gi, g.num_nodes));
        for &(s, d) in &g.edges {
            self.src.push(s + offset);
            self.dst.push(d + offset);
        }
        let hw = spec.hot_width();
        for f in actions {
            let row = self.num_actions as u32;
            let base = self.hot.len();
            self.hot.resize(base + 2 * hw, 0.0);
            for &i in &f.add_hot {
                self.hot[base + i] = 1.0;
            }
            for &i in &f.del_hot {
                self.hot[base + hw + i] = 1.0;
            }
            let sbase = self.schema.len();
            self.schema.resize(sbase + spec.num_schemas, 0.0);
            self.schema[sbase + f.schema] = 1.0;
            let w = 1.0 / f.affected_nodes.len().max(1) as f32;
            for &r in &f.affected_nodes {
                self.aff_nodes.push(r + offset);
                self.aff_action.push(row);
                self.aff_weight.push(w);
            }
            self.action_graph.push(gi);
            self.num_actions += 1;
        }
        self.num_graphs += 1;
    }

    pub fn build(self, spec: &ModelSpec) -> Batch {
        let (nd, ed, gd) = self.dims.unwrap_or((spec.node_dim, spec.edge_dim, spec.global_dim));
        let n = self.node_graph.len();
        let e = self.src.len();
        let a = self.num_actions;
        Batch {
            nodes: Tensor::from_vec(n, nd, self.nodes),
            edges: Tensor::from_vec(e, ed, self.edges),
            globals: Tensor::from_vec(self.num_graphs, gd, self.globals),
            topo: Topology::new(self.node_graph, self.src, self.dst, self.num_graphs),
            hot: Tensor::from_vec(a, 2 * spec.hot_width(), self.hot),
            schema: Tensor::from_vec(a, spec.num_schemas, self.schema),
            aff_nodes: self.aff_nodes.into(),
            aff_action: self.aff_action.into(),
            aff_weight: self.aff_weight.into(),
            action_graph: self.action_graph.into(),
            num_actions: a,
        }
    }
}

/// Tape handles for one batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BatchOutput {
    /// Column, one score per action row.
    pub scores: Var,
    /// Column, log π per action row (softmax within each graph).
    pub log_probs: Var,
    /// Column, raw value-head output per graph (before `value_scale`).
    pub values: Var,
}

pub struct PolicyModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub trunk: GnNetwork,
    pub score_head: Mlp,
    pub value_head: Mlp,
}

impl PolicyModel {
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let m = &spec.model;
        let trunk = GnNetwork::new(
            &mut store,
            "trunk",
            (spec.edge_dim, spec.node_dim, spec.global_dim),
            &m.hidden,
            m.latent,
            m.num_blocks,
            &mut rng,
        );
        let summary = 2 * m.latent;
        let score_head = Mlp::new(
            &mut store,
            "score",
            &[spec.action_dim() + summary, m.head_hidden, 1],
            &mut rng,
        );
        let value_head = Mlp::new(&mut store, "value", &[summary, m.head_hidden, 1], &mut rng);
        // Small output layers start the policy near uniform.
        for head in [&score_head, &value_head] {
            let last = head.layers.last().expect("head layers");
            store.value_mut(last.w).data.iter_mut().for_each(|v| *v *= 0.1);
        }
        PolicyModel {
            spec,
            store,
            trunk,
            score_head,
            value_head,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        Ok(write_checkpoint(path, &self.store, &self.spec.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let ck = read_checkpoint(path)?;
        let spec = ModelSpec::from_text(&ck.spec_text)?;
        let mut model = PolicyModel::new(spec, ck.seed);
        ck.load_into(&mut model.store, &ck.spec_text)?;
        Ok(model)
    }

    pub fn forward(&self, tape: &mut Tape, b: &Batch) -> Result<BatchOutput, AgentError> {
        let g = GraphVars {
            edges: tape.input(b.edges.clone()),
            nodes: tape.input(b.nodes.clone()),
            globals: tape.input(b.globals.clone()),
        };
        let g = self.trunk.forward(tape, g, &b.topo)?;
        let node_mean = b.topo.node_mean(tape, g.nodes);
        let summary = tape.concat(&[g.globals, node_mean]);
        let values = self.value_head.forward(tape, summary)?;

        let aff = tape.gather(g.nodes, b.aff_nodes.clone());
        let aff_mean = tape.scatter(aff, b.aff_action.clone(), Some(b.aff_weight.clone()), b.num_actions);
        let hot = tape.input(b.hot.clone());
        let schema = tape.input(b.schema.clone());
        let summary_a = tape.gather(summary, b.action_graph.clone());
        let x = tape.concat(&[hot, aff_mean, schema, summary_a]);
        let scores = self.score_head.forward(tape, x)?;
        let log_probs = tape.seg_log_softmax(scores, b.action_graph.clone());
        Ok(BatchOutput {
            scores,
            log_probs,
            values,
        })
    }

    /// Scores, probabilities, value and entropy for one state.
    pub fn evaluate(
        &self,
        task: &GroundTask,
        ctx: &TaskContext,
        state: &State,
        actions: &[usize],
    ) -> Result<PolicyOutput, AgentError> {
        let g = ctx.encoder.encode(task, state);
        self.evaluate_graph(&g, ctx, actions)
    }

    /// As [`PolicyModel::evaluate`] for an already encoded state.
    pub fn evaluate_graph(
        &self,
        g: &StateGraph,
        ctx: &TaskContext,
        actions: &[usize],
    ) -> Result<PolicyOutput, AgentError> {
        if actions.is_empty() {
            return Err(AgentError::EmptyActionSet);
        }
        let mut bb = BatchBuilder::new();
        bb.push(&self.spec, g, actions.iter().map(|&a| &ctx.features[a]));
        let batch = bb.build(&self.spec);
        let mut tape = Tape::new(&self.store);
        let out = self.forward(&mut tape, &batch)?;
        tape.check_finite()?;
        let scores: Vec<f64> = tape.value(out.scores).data.iter().map(|&v| f64::from(v)).collect();
        let probs = policy_distribution(&scores);
        let value = f64::from(tape.value(out.values).data[0]) * f64::from(self.spec.value_scale);
        let entropy = entropy(&probs);
        Ok(PolicyOutput {
            scores,
            probs,
            value,
            entropy,
        })
    }

    /// State value alone.
    pub fn value(&self, task: &GroundTask, ctx: &TaskContext, state: &State) -> Result<f64, AgentError> {
        let g = ctx.encoder.encode(task, state);
        let mut bb = BatchBuilder::new();
        bb.push(&self.spec, &g, std::iter::empty());
        let batch = bb.build(&self.spec);
        let mut tape = Tape::new(&self.store);
        let out = self.forward(&mut tape, &batch)?;
        tape.check_finite()?;
        Ok(f64::from(tape.value(out.values).data[0]) * f64::from(self.spec.value_scale))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
    pub entropy: f64,
}

/// A model bound to one task, usable as a search heuristic.
pub struct Agent<'m> {
    pub model: &'m PolicyModel,
    pub ctx: TaskContext,
}

impl<'m> Agent<'m> {
    pub fn new(model: &'m PolicyModel, task: &GroundTask) -> Result<Self, AgentError> {
        Ok(Agent {
            ctx: TaskContext::for_model(task, &model.spec)?,
            model,
        })
    }
}

impl PolicyEvaluator for Agent<'_> {
    fn evaluate(&self, task: &GroundTask, state: &State, actions: &[usize]) -> PolicyEval {
        match self.model.evaluate(task, &self.ctx, state, actions) {
            Ok(out) => PolicyEval {
                probs: out.probs,
                value: out.value,
            },
            // A non-finite forward pass carries no ordering information.
            Err(_) => PolicyEval {
                probs: vec![1.0 / actions.len() as f64; actions.len()],
                value: 0.0,
            },
        }
    }
}

#[cfg(test)]
mod tests;
