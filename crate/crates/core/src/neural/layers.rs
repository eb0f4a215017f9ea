use std::rc::Rc;

use rand::Rng;

use super::{NeuralError, ParamId, ParamStore, Tape, Tensor, Var};

fn mismatch(op: &'static str, expected: usize, found: usize) -> NeuralError {
    NeuralError::ShapeMismatch {
        op,
        expected: format!("width {expected}"),
        found: format!("width {found}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_he_uniform(format!("{name}.w"), fan_in, fan_out, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Linear { w, b, fan_in, fan_out }
    }
}

/// Affine + ReLU per hidden layer, affine output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [input, hidden.., output]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "mlp widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NeuralError> {
        let cols = tape.shape(x)[1];
        if cols != self.input_dim() {
            return Err(mismatch("mlp_forward", self.input_dim(), cols));
        }
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = tape.affine(h, l.w, l.b);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Sum,
    Mean,
}

/// Connectivity of a batch of graphs stored as one disjoint union.
#[derive(Debug, Clone)]
pub struct Topology {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_graphs: usize,
    pub src: Rc<[u32]>,
    pub dst: Rc<[u32]>,
    pub node_graph: Rc<[u32]>,
    pub edge_graph: Rc<[u32]>,
    in_mean: Rc<[f32]>,
    node_mean: Rc<[f32]>,
    edge_mean: Rc<[f32]>,
}

fn inverse_counts(ids: &[u32], n: usize) -> Rc<[f32]> {
    let mut count = vec![0u32; n];
    for &i in ids {
        count[i as usize] += 1;
    }
    ids.iter().map(|&i| 1.0 / count[i as usize] as f32).collect()
}

impl Topology {
    pub fn new(node_graph: Vec<u32>, src: Vec<u32>, dst: Vec<u32>, num_graphs: usize) -> Self {
        let edge_graph: Vec<u32> = src.iter().map(|&s| node_graph[s as usize]).collect();
        let num_nodes = node_graph.len();
        Topology {
            num_nodes,
            num_edges: src.len(),
            num_graphs,
            in_mean: inverse_counts(&dst, num_nodes),
            node_mean: inverse_counts(&node_graph, num_graphs),
            edge_mean: inverse_counts(&edge_graph, num_graphs),
            src: src.into(),
            dst: dst.into(),
            node_graph: node_graph.into(),
            edge_graph: edge_graph.into(),
        }
    }

    /// Single graph.
    pub fn single(num_nodes: usize, edges: &[(u32, u32)]) -> Self {
        Topology::new(
            vec![0; num_nodes],
            edges.iter().map(|e| e.0).collect(),
            edges.iter().map(|e| e.1).collect(),
            1,
        )
    }

    /// Per-graph mean of node rows.
    pub fn node_mean(&self, tape: &mut Tape, v: Var) -> Var {
        tape.scatter(
            v,
            self.node_graph.clone(),
            Some(self.node_mean.clone()),
            self.num_graphs,
        )
    }

    pub fn edge_mean(&self, tape: &mut Tape, e: Var) -> Var {
        tape.scatter(
            e,
            self.edge_graph.clone(),
            Some(self.edge_mean.clone()),
            self.num_graphs,
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GraphVars {
    pub edges: Var,
    pub nodes: Var,
    pub globals: Var,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GnBlockSpec {
    pub edge_hidden: Vec<usize>,
    pub node_hidden: Vec<usize>,
    pub global_hidden: Vec<usize>,
    pub edge_out: usize,
    pub node_out: usize,
    pub global_out: usize,
    pub node_aggregation: Aggregation,
    pub global_aggregation: Aggregation,
}

impl GnBlockSpec {
    pub fn uniform(hidden: &[usize], latent: usize) -> Self {
        GnBlockSpec {
            edge_hidden: hidden.to_vec(),
            node_hidden: hidden.to_vec(),
            global_hidden: hidden.to_vec(),
            edge_out: latent,
            node_out: latent,
            global_out: latent,
            node_aggregation: Aggregation::Sum,
            global_aggregation: Aggregation::Mean,
        }
    }
}

fn dims(input: usize, hidden: &[usize], out: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(out);
    d
}

/// Edge, node, then global update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GnBlock {
    pub spec: GnBlockSpec,
    pub in_dims: (usize, usize, usize),
    pub phi_e: Mlp,
    pub phi_v: Mlp,
    pub phi_u: Mlp,
}

impl GnBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        spec: GnBlockSpec,
        (e, v, u): (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let phi_e = Mlp::new(
            store,
            &format!("{name}.edge"),
            &dims(e + 2 * v + u, &spec.edge_hidden, spec.edge_out),
            rng,
        );
        let phi_v = Mlp::new(
            store,
            &format!("{name}.node"),
            &dims(v + spec.edge_out + u, &spec.node_hidden, spec.node_out),
            rng,
        );
        let phi_u = Mlp::new(
            store,
            &format!("{name}.global"),
            &dims(u + spec.node_out + spec.edge_out, &spec.global_hidden, spec.global_out),
            rng,
        );
        GnBlock {
            spec,
            in_dims: (e, v, u),
            phi_e,
            phi_v,
            phi_u,
        }
    }

    pub fn out_dims(&self) -> (usize, usize, usize) {
        (self.spec.edge_out, self.spec.node_out, self.spec.global_out)
    }

    pub fn forward(&self, tape: &mut Tape, g: GraphVars, topo: &Topology) -> Result<GraphVars, NeuralError> {
        let expect = [
            (g.edges, self.in_dims.0, topo.num_edges),
            (g.nodes, self.in_dims.1, topo.num_nodes),
            (g.globals, self.in_dims.2, topo.num_graphs),
        ];
        for (var, width, rows) in expect {
            let [r, c] = tape.shape(var);
            if c != width || r != rows {
                return Err(NeuralError::ShapeMismatch {
                    op: "gn_block_forward",
                    expected: format!("{rows}×{width}"),
                    found: format!("{r}×{c}"),
                });
            }
        }
        let vs = tape.gather(g.nodes, topo.src.clone());
        let vd = tape.gather(g.nodes, topo.dst.clone());
        let ue = tape.gather(g.globals, topo.edge_graph.clone());
        let e_in = tape.concat(&[g.edges, vs, vd, ue]);
        let e_new = self.phi_e.forward(tape, e_in)?;

        let w = match self.spec.node_aggregation {
            Aggregation::Sum => None,
            Aggregation::Mean => Some(topo.in_mean.clone()),
        };
        let agg_e = tape.scatter(e_new, topo.dst.clone(), w, topo.num_nodes);
        let un = tape.gather(g.globals, topo.node_graph.clone());
        let v_in = tape.concat(&[g.nodes, agg_e, un]);
        let v_new = self.phi_v.forward(tape, v_in)?;

        let (nw, ew) = match self.spec.global_aggregation {
            Aggregation::Sum => (None, None),
            Aggregation::Mean => (Some(topo.node_mean.clone()), Some(topo.edge_mean.clone())),
        };
        let agg_v = tape.scatter(v_new, topo.node_graph.clone(), nw, topo.num_graphs);
        let agg_ev = tape.scatter(e_new, topo.edge_graph.clone(), ew, topo.num_graphs);
        let u_in = tape.concat(&[g.globals, agg_v, agg_ev]);
        let u_new = self.phi_u.forward(tape, u_in)?;
        Ok(GraphVars {
            edges: e_new,
            nodes: v_new,
            globals: u_new,
        })
    }
}

/// Stack of GN blocks sharing one hidden/latent configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GnNetwork {
    pub blocks: Vec<GnBlock>,
}

impl GnNetwork {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dims: (usize, usize, usize),
        hidden: &[usize],
        latent: usize,
        num_blocks: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut blocks = Vec::with_capacity(num_blocks);
        let mut d = in_dims;
        for i in 0..num_blocks {
            let b = GnBlock::new(
                store,
                &format!("{name}.{i}"),
                GnBlockSpec::uniform(hidden, latent),
                d,
                rng,
            );
            d = b.out_dims();
            blocks.push(b);
        }
        GnNetwork { blocks }
    }

    pub fn out_dims(&self) -> (usize, usize, usize) {
        self.blocks.last().map_or((0, 0, 0), GnBlock::out_dims)
    }

    pub fn forward(&self, tape: &mut Tape, mut g: GraphVars, topo: &Topology) -> Result<GraphVars, NeuralError> {
        for b in &self.blocks {
            g = b.forward(tape, g, topo)?;
        }
        Ok(g)
    }
}
