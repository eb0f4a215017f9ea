//! Plain f64 re-implementation of the policy/value forward pass, reading
//! parameters by id from a flat copy of the store.

use gplan::agent::{ActionFeature, PolicyModel};
use gplan::encoder::StateGraph;
use gplan::neural::{GnBlock, Mlp};

pub type Params = Vec<Vec<f64>>;

pub fn params_of(model: &PolicyModel) -> Params {
    model
        .store
        .ids()
        .map(|id| model.store.value(id).data.iter().map(|&v| f64::from(v)).collect())
        .collect()
}

type Mat = Vec<Vec<f64>>;

fn mlp(p: &Params, m: &Mlp, x: &Mat) -> Mat {
    let mut h = x.clone();
    for (li, l) in m.layers.iter().enumerate() {
        let (w, b) = (&p[l.w.0], &p[l.b.0]);
        h = h
            .iter()
            .map(|row| {
                assert_eq!(row.len(), l.fan_in);
                (0..l.fan_out)
                    .map(|j| {
                        let s = b[j] + (0..l.fan_in).map(|i| row[i] * w[i * l.fan_out + j]).sum::<f64>();
                        if li + 1 < m.layers.len() {
                            s.max(0.0)
                        } else {
                            s
                        }
                    })
                    .collect()
            })
            .collect();
    }
    h
}

fn rows(data: &[f32], n: usize, d: usize) -> Mat {
    (0..n)
        .map(|r| data[r * d..(r + 1) * d].iter().map(|&v| f64::from(v)).collect())
        .collect()
}

fn mean_rows(m: &Mat, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for r in m {
        out.iter_mut().zip(r).for_each(|(o, v)| *o += v);
    }
    if !m.is_empty() {
        out.iter_mut().for_each(|o| *o /= m.len() as f64);
    }
    out
}

fn block(p: &Params, b: &GnBlock, g: &StateGraph, e: &Mat, v: &Mat, u: &[f64]) -> (Mat, Mat, Vec<f64>) {
    let e_in: Mat = g
        .edges
        .iter()
        .zip(e)
        .map(|(&(s, d), er)| [er.as_slice(), &v[s as usize], &v[d as usize], u].concat())
        .collect();
    let e2 = mlp(p, &b.phi_e, &e_in);
    let eo = b.spec.edge_out;
    let mut agg = vec![vec![0.0; eo]; v.len()];
    for (&(_, d), er) in g.edges.iter().zip(&e2) {
        agg[d as usize].iter_mut().zip(er).for_each(|(a, x)| *a += x);
    }
    let v_in: Mat = v
        .iter()
        .zip(&agg)
        .map(|(vr, ar)| [vr.as_slice(), ar, u].concat())
        .collect();
    let v2 = mlp(p, &b.phi_v, &v_in);
    let u_in = [u, &mean_rows(&v2, b.spec.node_out), &mean_rows(&e2, eo)].concat();
    let u2 = mlp(p, &b.phi_u, &vec![u_in]).remove(0);
    (e2, v2, u2)
}

/// Log-probabilities of `actions` and the raw value-head output.
pub fn forward(model: &PolicyModel, p: &Params, g: &StateGraph, actions: &[&ActionFeature]) -> (Vec<f64>, f64) {
    let spec = &model.spec;
    let mut e = rows(&g.edge_features, g.num_edges(), g.edge_dim);
    let mut v = rows(&g.node_features, g.num_nodes, g.node_dim);
    let mut u: Vec<f64> = g.global_features.iter().map(|&x| f64::from(x)).collect();
    for b in &model.trunk.blocks {
        (e, v, u) = block(p, b, g, &e, &v, &u);
    }
    let latent = spec.model.latent;
    let summary = [u.as_slice(), &mean_rows(&v, latent)].concat();
    let value = mlp(p, &model.value_head, &vec![summary.clone()])[0][0];

    let hw = spec.hot_width();
    let xs: Mat = actions
        .iter()
        .map(|f| {
            let mut hot = vec![0.0; 2 * hw];
            f.add_hot.iter().for_each(|&i| hot[i] = 1.0);
            f.del_hot.iter().for_each(|&i| hot[hw + i] = 1.0);
            let aff: Mat = f.affected_nodes.iter().map(|&n| v[n as usize].clone()).collect();
            let mut schema = vec![0.0; spec.num_schemas];
            schema[f.schema] = 1.0;
            [hot, mean_rows(&aff, latent), schema, summary.clone()].concat()
        })
        .collect();
    let scores: Vec<f64> = mlp(p, &model.score_head, &xs).into_iter().map(|r| r[0]).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    (scores.iter().map(|s| s - lse).collect(), value)
}
