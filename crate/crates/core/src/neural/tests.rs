use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn set(store: &mut ParamStore, id: ParamId, vals: &[f32]) {
    store.value_mut(id).data.copy_from_slice(vals);
}

fn fill(store: &mut ParamStore, mlp: &Mlp, w: f32, b: f32) {
    for l in &mlp.layers {
        store.value_mut(l.w).data.iter_mut().for_each(|v| *v = w);
        store.value_mut(l.b).data.iter_mut().for_each(|v| *v = b);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Naive f64 MLP with parameters read through `p`.
fn mlp_ref(p: &dyn Fn(ParamId) -> Vec<f64>, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (li, l) in mlp.layers.iter().enumerate() {
        let (w, b) = (p(l.w), p(l.b));
        let mut out = b.clone();
        for (o, ov) in out.iter_mut().enumerate() {
            for (i, hv) in h.iter().enumerate() {
                *ov += hv * w[i * l.fan_out + o];
            }
        }
        if li + 1 < mlp.layers.len() {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = out;
    }
    h
}

fn run_mlp(store: &ParamStore, mlp: &Mlp, x: Tensor) -> Tensor {
    let mut tape = Tape::new(store);
    let xv = tape.input(x);
    let y = mlp.forward(&mut tape, xv).unwrap();
    tape.value(y).clone()
}

#[test]
fn mlp_zero_weights_give_zero() {
    let mut store = ParamStore::new(0);
    let mlp = Mlp::new(&mut store, "m", &[3, 4, 2], &mut rng(0));
    fill(&mut store, &mlp, 0.0, 0.0);
    let y = run_mlp(
        &store,
        &mlp,
        Tensor::from_vec(2, 3, vec![1.0, -5.0, 3.0, 0.5, 7.0, -2.0]),
    );
    assert_eq!(y.data, vec![0.0; 4]);
}

#[test]
fn mlp_single_affine_layer_passes_negatives_through() {
    let mut store = ParamStore::new(0);
    let mlp = Mlp::new(&mut store, "m", &[2, 2], &mut rng(0));
    set(&mut store, mlp.layers[0].w, &[1.0, 0.0, 0.0, 1.0]);
    set(&mut store, mlp.layers[0].b, &[0.0, 0.0]);
    let y = run_mlp(&store, &mlp, Tensor::from_vec(1, 2, vec![1.0, -2.0]));
    assert_eq!(y.data, vec![1.0, -2.0]);
}

#[test]
fn mlp_hidden_layer_of_ones() {
    let mut store = ParamStore::new(0);
    let mlp = Mlp::new(&mut store, "m", &[2, 3, 1], &mut rng(0));
    fill(&mut store, &mlp, 1.0, 0.0);
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::from_vec(1, 2, vec![1.0, 1.0]));
    let h = tape.affine(x, mlp.layers[0].w, mlp.layers[0].b);
    let h = tape.relu(h);
    assert_eq!(tape.value(h).data, vec![2.0, 2.0, 2.0]);
    let y = mlp.forward(&mut tape, x).unwrap();
    assert_eq!(tape.value(y).data, vec![6.0]);
}

#[test]
fn mlp_width_mismatch_is_an_error() {
    let mut store = ParamStore::new(0);
    let mlp = Mlp::new(&mut store, "m", &[3, 2], &mut rng(0));
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::zeros(1, 4));
    assert!(matches!(
        mlp.forward(&mut tape, x),
        Err(NeuralError::ShapeMismatch { .. })
    ));
}

#[test]
fn zero_input_gives_bias_propagated_constant() {
    let mut store = ParamStore::new(0);
    let mlp = Mlp::new(&mut store, "m", &[3, 5, 2], &mut rng(4));
    for l in &mlp.layers {
        let n = store.value(l.b).len();
        set(
            &mut store,
            l.b,
            &(0..n).map(|i| 0.1 * i as f32 - 0.2).collect::<Vec<_>>(),
        );
    }
    let a = run_mlp(&store, &mlp, Tensor::zeros(1, 3));
    let p = |id: ParamId| store.value(id).data.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
    let expect = mlp_ref(&p, &mlp, &[0.0; 3]);
    for (x, y) in a.data.iter().zip(&expect) {
        assert!((f64::from(*x) - y).abs() < 1e-6);
    }
}

fn tiny_block(store: &mut ParamStore, dims: (usize, usize, usize), agg: Aggregation) -> GnBlock {
    let spec = GnBlockSpec {
        node_aggregation: agg,
        ..GnBlockSpec::uniform(&[3], 2)
    };
    GnBlock::new(store, "gn", spec, dims, &mut rng(9))
}

#[test]
fn single_node_without_edges() {
    let mut store = ParamStore::new(0);
    let block = tiny_block(&mut store, (1, 2, 2), Aggregation::Sum);
    let topo = Topology::single(1, &[]);
    let mut tape = Tape::new(&store);
    let v = [0.3f32, -0.7];
    let u = [0.5f32, 0.25];
    let g = GraphVars {
        edges: tape.input(Tensor::zeros(0, 1)),
        nodes: tape.input(Tensor::from_vec(1, 2, v.to_vec())),
        globals: tape.input(Tensor::from_vec(1, 2, u.to_vec())),
    };
    let out = block.forward(&mut tape, g, &topo).unwrap();
    assert_eq!(tape.shape(out.edges), [0, 2]);
    let p = |id: ParamId| store.value(id).data.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
    let f = |xs: &[f32]| xs.iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
    let vin = [f(&v), vec![0.0, 0.0], f(&u)].concat();
    let v_new = mlp_ref(&p, &block.phi_v, &vin);
    let u_new = mlp_ref(&p, &block.phi_u, &[f(&u), v_new.clone(), vec![0.0, 0.0]].concat());
    for (a, b) in tape.value(out.nodes).data.iter().zip(&v_new) {
        assert!((f64::from(*a) - b).abs() < 1e-6);
    }
    for (a, b) in tape.value(out.globals).data.iter().zip(&u_new) {
        assert!((f64::from(*a) - b).abs() < 1e-6);
    }
}

#[test]
fn node_without_incoming_edges_aggregates_zero() {
    let mut store = ParamStore::new(0);
    let block = tiny_block(&mut store, (1, 2, 1), Aggregation::Sum);
    let topo = Topology::single(2, &[(0, 1)]);
    let mut tape = Tape::new(&store);
    let e = tape.input(Tensor::from_vec(1, 1, vec![1.0]));
    let v = tape.input(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let e_new = {
        let vs = tape.gather(v, topo.src.clone());
        let vd = tape.gather(v, topo.dst.clone());
        let u = tape.input(Tensor::zeros(1, 1));
        let ue = tape.gather(u, topo.edge_graph.clone());
        let x = tape.concat(&[e, vs, vd, ue]);
        block.phi_e.forward(&mut tape, x).unwrap()
    };
    let agg = tape.scatter(e_new, topo.dst.clone(), None, 2);
    assert_eq!(tape.value(agg).row(0), &[0.0, 0.0]);
    assert_eq!(tape.value(agg).row(1), tape.value(e_new).row(0));
}

/// Hand-set weights on 2-dim features: every φ is a single affine layer
/// so the trace can be written out directly.
#[test]
fn two_node_one_edge_hand_trace() {
    let mut store = ParamStore::new(0);
    let spec = GnBlockSpec {
        edge_hidden: vec![],
        node_hidden: vec![],
        global_hidden: vec![],
        edge_out: 1,
        node_out: 1,
        global_out: 1,
        node_aggregation: Aggregation::Sum,
        global_aggregation: Aggregation::Mean,
    };
    let block = GnBlock::new(&mut store, "gn", spec, (1, 2, 1), &mut rng(0));
    // φe: [e, vs(2), vd(2), u] → 1
    set(
        &mut store,
        block.phi_e.layers[0].w,
        &[0.1, 0.01, 0.02, 0.03, 0.04, 0.05],
    );
    set(&mut store, block.phi_e.layers[0].b, &[0.001]);
    // φv: [v(2), agg, u] → 1
    set(&mut store, block.phi_v.layers[0].w, &[0.2, -0.1, 0.5, 0.3]);
    set(&mut store, block.phi_v.layers[0].b, &[0.002]);
    // φu: [u, mean v', mean e'] → 1
    set(&mut store, block.phi_u.layers[0].w, &[0.7, 0.6, -0.4]);
    set(&mut store, block.phi_u.layers[0].b, &[0.003]);

    let topo = Topology::single(2, &[(0, 1)]);
    let mut tape = Tape::new(&store);
    let g = GraphVars {
        edges: tape.input(Tensor::from_vec(1, 1, vec![0.5])),
        nodes: tape.input(Tensor::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4])),
        globals: tape.input(Tensor::from_vec(1, 1, vec![0.9])),
    };
    let out = block.forward(&mut tape, g, &topo).unwrap();
    // e' = 0.1·0.5 + 0.01·0.1 + 0.02·0.2 + 0.03·0.3 + 0.04·0.4 + 0.05·0.9 + 0.001
    let e1 = 0.05 + 0.001 + 0.004 + 0.009 + 0.016 + 0.045 + 0.001;
    // v0' = 0.2·0.1 − 0.1·0.2 + 0.5·0 + 0.3·0.9 + 0.002
    let v0 = 0.02 - 0.02 + 0.27 + 0.002;
    // v1' = 0.2·0.3 − 0.1·0.4 + 0.5·e' + 0.3·0.9 + 0.002
    let v1 = 0.06 - 0.04 + 0.5 * e1 + 0.27 + 0.002;
    let u1 = 0.7 * 0.9 + 0.6 * (v0 + v1) / 2.0 - 0.4 * e1 + 0.003;
    let got = |v: Var, i: usize| f64::from(tape.value(v).data[i]);
    assert!((got(out.edges, 0) - e1).abs() < 1e-6);
    assert!((got(out.nodes, 0) - v0).abs() < 1e-6);
    assert!((got(out.nodes, 1) - v1).abs() < 1e-6);
    assert!((got(out.globals, 0) - u1).abs() < 1e-6);
}

#[test]
fn gn_block_rejects_wrong_widths() {
    let mut store = ParamStore::new(0);
    let block = tiny_block(&mut store, (1, 2, 2), Aggregation::Sum);
    let topo = Topology::single(1, &[]);
    let mut tape = Tape::new(&store);
    let g = GraphVars {
        edges: tape.input(Tensor::zeros(0, 1)),
        nodes: tape.input(Tensor::zeros(1, 3)),
        globals: tape.input(Tensor::zeros(1, 2)),
    };
    assert!(matches!(
        block.forward(&mut tape, g, &topo),
        Err(NeuralError::ShapeMismatch { .. })
    ));
}

#[test]
fn node_permutation_equivariance() {
    let mut store = ParamStore::new(0);
    let block = GnBlock::new(&mut store, "gn", GnBlockSpec::uniform(&[8], 4), (2, 3, 2), &mut rng(5));
    let mut r = rng(6);
    let n = 5;
    let edges: Vec<(u32, u32)> = vec![(0, 1), (1, 2), (2, 0), (3, 4), (4, 3), (1, 4)];
    let vf: Vec<f32> = (0..n * 3).map(|_| r.gen_range(-1.0..1.0)).collect();
    let ef: Vec<f32> = (0..edges.len() * 2).map(|_| r.gen_range(-1.0..1.0)).collect();
    let uf = vec![0.3, -0.2];
    let perm = [3usize, 0, 4, 1, 2]; // old → new
    let mut vp = vec![0f32; n * 3];
    for (old, &new) in perm.iter().enumerate() {
        vp[new * 3..new * 3 + 3].copy_from_slice(&vf[old * 3..old * 3 + 3]);
    }
    let ep: Vec<(u32, u32)> = edges
        .iter()
        .map(|&(s, d)| (perm[s as usize] as u32, perm[d as usize] as u32))
        .collect();
    let run = |v: &[f32], e: &[(u32, u32)]| {
        let topo = Topology::single(n, e);
        let mut tape = Tape::new(&store);
        let g = GraphVars {
            edges: tape.input(Tensor::from_vec(e.len(), 2, ef.clone())),
            nodes: tape.input(Tensor::from_vec(n, 3, v.to_vec())),
            globals: tape.input(Tensor::from_vec(1, 2, uf.clone())),
        };
        let o = block.forward(&mut tape, g, &topo).unwrap();
        (tape.value(o.nodes).clone(), tape.value(o.globals).clone())
    };
    let (n1, u1) = run(&vf, &edges);
    let (n2, u2) = run(&vp, &ep);
    for (old, &new) in perm.iter().enumerate() {
        for (a, b) in n1.row(old).iter().zip(n2.row(new)) {
            assert!((a - b).abs() < 1e-5);
        }
    }
    for (a, b) in u1.data.iter().zip(&u2.data) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn sum_of_parameters_has_unit_gradient() {
    let mut store = ParamStore::new(0);
    let a = store.add("a", Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let b = store.add("b", Tensor::from_vec(1, 3, vec![5.0, 6.0, 7.0]));
    let unused = store.add("c", Tensor::zeros(1, 1));
    let mut tape = Tape::new(&store);
    let (va, vb) = (tape.param(a), tape.param(b));
    let (sa, sb) = (tape.sum(va), tape.sum(vb));
    let loss = tape.add(sa, sb);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(a).unwrap().data, vec![1.0; 4]);
    assert_eq!(g.get(b).unwrap().data, vec![1.0; 3]);
    assert!(g.get(unused).is_none());
    store.accumulate(&g);
    assert_eq!(store.grad(unused).data, vec![0.0]);
}

#[test]
fn relu_blocks_gradient_at_negative_preactivation() {
    let mut store = ParamStore::new(0);
    let lin = Linear::new(&mut store, "l", 1, 2, &mut rng(0));
    set(&mut store, lin.w, &[1.0, -1.0]);
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::from_vec(1, 1, vec![2.0]));
    let h = tape.affine(x, lin.w, lin.b);
    let h = tape.relu(h);
    let loss = tape.sum(h);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(lin.w).unwrap().data, vec![2.0, 0.0]);
    assert_eq!(g.get(lin.b).unwrap().data, vec![1.0, 0.0]);
}

#[test]
fn backward_requires_recorded_scalar() {
    let store = ParamStore::new(0);
    let mut other = Tape::new(&store);
    let x = other.input(Tensor::zeros(1, 1));
    let y = other.sum(x);
    let tape = Tape::new(&store);
    assert!(matches!(tape.backward(y), Err(NeuralError::NoGraphRecorded)));
    let mut t2 = Tape::new(&store);
    let v = t2.input(Tensor::zeros(2, 2));
    assert!(matches!(t2.backward(v), Err(NeuralError::NoGraphRecorded)));
}

#[test]
fn non_finite_values_are_trapped() {
    let store = ParamStore::new(0);
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::from_vec(1, 1, vec![100.0]));
    let y = tape.exp(x);
    let loss = tape.sum(y);
    assert!(matches!(tape.backward(loss), Err(NeuralError::NonFinite { op: "exp" })));
}

#[test]
fn seg_log_softmax_values_and_gradient() {
    let store = ParamStore::new(0);
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::column(vec![2f32.ln(), 0.0, 5.0]));
    let seg: Rc<[u32]> = vec![0, 0, 1].into();
    let ls = tape.seg_log_softmax(x, seg);
    let p: Vec<f32> = tape.value(ls).data.iter().map(|v| v.exp()).collect();
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-6 && (p[1] - 1.0 / 3.0).abs() < 1e-6);
    assert!((p[2] - 1.0).abs() < 1e-7);
}

/// Central differences in f64 on the reference MLP versus tape gradients.
#[test]
fn small_network_matches_finite_differences() {
    let mut store = ParamStore::new(0);
    let mut r = rng(21);
    let mlp = Mlp::new(&mut store, "m", &[4, 6, 5, 2], &mut r);
    // Nonzero biases keep pre-activations off the ReLU kink.
    for l in &mlp.layers {
        let n = store.value(l.b).len();
        let b: Vec<f32> = (0..n).map(|_| r.gen_range(-0.5..0.5)).collect();
        set(&mut store, l.b, &b);
    }
    let x: Vec<f32> = (0..3 * 4).map(|_| r.gen_range(-1.0..1.0)).collect();
    let target = [0.3f64, -0.4];
    let loss_ref = |p: &dyn Fn(ParamId) -> Vec<f64>| -> f64 {
        (0..3)
            .map(|row| {
                let xi: Vec<f64> = x[row * 4..row * 4 + 4].iter().map(|&v| f64::from(v)).collect();
                let y = mlp_ref(p, &mlp, &xi);
                y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum()
    };
    let mut tape = Tape::new(&store);
    let xv = tape.input(Tensor::from_vec(3, 4, x.clone()));
    let y = mlp.forward(&mut tape, xv).unwrap();
    let t = tape.input(Tensor::from_vec(
        3,
        2,
        [target; 3].concat().iter().map(|&v| v as f32).collect(),
    ));
    let d = tape.sub(y, t);
    let sq = tape.square(d);
    let loss = tape.sum(sq);
    let grads = tape.backward(loss).unwrap();

    let h = 1e-3;
    let mut worst = 0f64;
    let st = &store;
    for id in store.ids() {
        for k in 0..store.value(id).len() {
            let perturbed = |delta: f64| {
                move |q: ParamId| -> Vec<f64> {
                    let mut v: Vec<f64> = st.value(q).data.iter().map(|&x| f64::from(x)).collect();
                    if q == id {
                        v[k] += delta;
                    }
                    v
                }
            };
            let fd = (loss_ref(&perturbed(h)) - loss_ref(&perturbed(-h))) / (2.0 * h);
            let an = f64::from(grads.get(id).unwrap().data[k]);
            worst = worst.max((an - fd).abs() / (an.abs() + 1e-8));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut store = ParamStore::new(0);
    let a = store.add("a", Tensor::from_vec(1, 2, vec![1.0, -1.0]));
    let mut opt = Adam::new(&store, 0.1);
    let mut tape = Tape::new(&store);
    let va = tape.param(a);
    let loss = tape.sum(va);
    let g = tape.backward(loss).unwrap();
    drop(tape);
    store.accumulate(&g);
    opt.step(&mut store);
    assert!((store.value(a).data[0] - 0.9).abs() < 1e-6);
    assert!((store.value(a).data[1] + 1.1).abs() < 1e-6);
}

#[test]
fn initialization_is_deterministic() {
    let build = |seed| {
        let mut s = ParamStore::new(seed);
        GnNetwork::new(&mut s, "net", (2, 3, 1), &[16, 16], 8, 2, &mut rng(seed));
        s
    };
    let (a, b, c) = (build(3), build(3), build(4));
    for id in a.ids() {
        assert_eq!(a.value(id), b.value(id));
    }
    assert!(a.ids().any(|id| a.value(id) != c.value(id)));
}

#[test]
fn checkpoint_round_trip_and_spec_check() {
    let mut store = ParamStore::new(17);
    GnNetwork::new(&mut store, "net", (2, 3, 1), &[4], 3, 2, &mut rng(17));
    let bytes = encode_checkpoint(&store, "spec-a");
    let ck = decode_checkpoint(&bytes).unwrap();
    assert_eq!(ck.seed, 17);
    assert_eq!(ck.spec_text, "spec-a");
    let mut fresh = ParamStore::new(0);
    GnNetwork::new(&mut fresh, "net", (2, 3, 1), &[4], 3, 2, &mut rng(99));
    assert!(ck.load_into(&mut fresh, "spec-b").is_err());
    ck.load_into(&mut fresh, "spec-a").unwrap();
    for id in store.ids() {
        assert_eq!(store.value(id), fresh.value(id));
    }
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_checkpoint(&bad).is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&path, &store, "spec-a").unwrap();
    assert_eq!(read_checkpoint(&path).unwrap(), ck);
}
