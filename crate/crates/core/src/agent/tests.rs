use proptest::prelude::*;

use super::*;
use crate::grounding::ground_all;
use crate::pddl::{parse_domain, parse_problem};
use crate::search::{gbfs_gnn, validate_plan, SearchBudget};
use crate::worlds::{generate, DomainKind, InstanceSpec};

fn small_config() -> ModelConfig {
    ModelConfig {
        hidden: vec![16],
        latent: 8,
        head_hidden: 8,
        num_blocks: 2,
    }
}

fn simple_setup(w: usize, seed: u64) -> (GroundTask, PolicyModel, TaskContext) {
    let task = generate(DomainKind::Simple, &InstanceSpec::simple(w, 0.0, seed))
        .unwrap()
        .task;
    let cfg = EncoderConfig::sparse(true, 0);
    let spec = ModelSpec::for_domain(&task.domain, cfg, small_config(), 100.0);
    let model = PolicyModel::new(spec, seed);
    let ctx = TaskContext::for_model(&task, &model.spec).unwrap();
    (task, model, ctx)
}

fn zero_head(model: &mut PolicyModel, score: bool) {
    let head = if score { &model.score_head } else { &model.value_head };
    for l in &head.layers {
        model.store.value_mut(l.w).data.iter_mut().for_each(|v| *v = 0.0);
        model.store.value_mut(l.b).data.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn move_action_feature() {
    let (task, _, ctx) = simple_setup(5, 1);
    let d = &task.domain;
    let at = d.predicate_id("at").unwrap();
    let a = task.applicable_actions(&task.init)[0];
    let action = task.action(a);
    let f = &ctx.features[a];
    assert_eq!(f.add_hot, vec![at * 3 + 2]);
    assert_eq!(f.del_hot, vec![at * 3 + 2]);
    let mut objs: Vec<u32> = action
        .binding
        .iter()
        .map(|&o| ctx.encoder.node_index[o].unwrap() as u32)
        .collect();
    objs.sort_unstable();
    assert_eq!(f.affected_nodes, objs);
    assert_eq!(f.affected_nodes.len(), 3);
}

#[test]
fn scan_action_feature_has_single_add_bit() {
    let inst = generate(DomainKind::Scan, &InstanceSpec::scan(5, 0.0, 1, 4)).unwrap();
    let task = &inst.task;
    let ctx = TaskContext::new(task, EncoderConfig::sparse(true, 1)).unwrap();
    let scanned = task.domain.predicate_id("scanned").unwrap();
    let scan = task
        .actions
        .iter()
        .find(|a| task.domain.actions[a.schema].name.starts_with("scan-"))
        .unwrap();
    let f = &ctx.features[scan.uid];
    assert_eq!(f.add_hot, vec![scanned * 3 + 1]);
    assert!(f.del_hot.is_empty());
}

#[test]
fn action_without_effects_embeds_schema_only() {
    let d = parse_domain(
        "(define (domain d) (:requirements :strips) (:predicates (p ?x)) \
         (:action noop :parameters (?x) :precondition (and) :effect (and)) \
         (:action set :parameters (?x) :precondition (and) :effect (and (p ?x))))",
    )
    .unwrap();
    let p = parse_problem(
        "(define (problem q) (:domain d) (:objects a b) (:init) (:goal (and (p a))))",
        &d,
    )
    .unwrap();
    let task = ground_all(&d, &p);
    let ctx = TaskContext::new(&task, EncoderConfig::dense(false, 0)).unwrap();
    let noop = task.actions.iter().find(|a| a.schema == 0).unwrap();
    let f = &ctx.features[noop.uid];
    let nodes = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let e = embed_action(f, &nodes, 1, 2);
    assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let set = task.actions.iter().find(|a| a.schema == 1 && a.binding == [1]).unwrap();
    let e = embed_action(&ctx.features[set.uid], &nodes, 1, 2);
    assert_eq!(e, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 4.0, 5.0, 6.0, 0.0, 1.0]);
}

#[test]
fn softmax_examples() {
    for c in [-50.0, 0.0, 3.7, 1e3] {
        let p = policy_distribution(&[c, c]);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }
    let p = policy_distribution(&[2f64.ln(), 0.0]);
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(policy_distribution(&[-7.0]), vec![1.0]);
}

#[test]
fn zero_heads_give_zero_scores_and_value() {
    let (task, mut model, ctx) = simple_setup(5, 2);
    zero_head(&mut model, true);
    zero_head(&mut model, false);
    let acts = task.applicable_actions(&task.init);
    let out = model.evaluate(&task, &ctx, &task.init, &acts).unwrap();
    assert!(out.scores.iter().all(|&s| s == 0.0));
    assert_eq!(out.value, 0.0);
    assert!((out.entropy - (acts.len() as f64).ln()).abs() < 1e-9);
}

#[test]
fn identical_actions_score_identically() {
    let (task, model, ctx) = simple_setup(4, 3);
    let acts = task.applicable_actions(&task.init);
    let a = acts[0];
    let out = model.evaluate(&task, &ctx, &task.init, &[a, a]).unwrap();
    assert_eq!(out.scores[0], out.scores[1]);
}

#[test]
fn empty_action_set_is_an_error() {
    let (task, model, ctx) = simple_setup(4, 3);
    assert!(matches!(
        model.evaluate(&task, &ctx, &task.init, &[]),
        Err(AgentError::EmptyActionSet)
    ));
}

#[test]
fn score_matches_reference_from_embeddings() {
    let (task, model, ctx) = simple_setup(4, 5);
    let acts = task.applicable_actions(&task.init);
    let g = ctx.encoder.encode(&task, &task.init);
    let mut bb = BatchBuilder::new();
    bb.push(&model.spec, &g, acts.iter().map(|&a| &ctx.features[a]));
    let batch = bb.build(&model.spec);
    let mut tape = Tape::new(&model.store);
    let gv = GraphVars {
        edges: tape.input(batch.edges.clone()),
        nodes: tape.input(batch.nodes.clone()),
        globals: tape.input(batch.globals.clone()),
    };
    let emb = model.trunk.forward(&mut tape, gv, &batch.topo).unwrap();
    let nodes = tape.value(emb.nodes).clone();
    let glob = tape.value(emb.globals).clone();
    let out = model.evaluate(&task, &ctx, &task.init, &acts).unwrap();
    let mean: Vec<f32> = (0..nodes.cols)
        .map(|c| (0..nodes.rows).map(|r| nodes.row(r)[c]).sum::<f32>() / nodes.rows as f32)
        .collect();
    let p =
        |id: crate::neural::ParamId| -> Vec<f64> { model.store.value(id).data.iter().map(|&v| f64::from(v)).collect() };
    for (i, &a) in acts.iter().enumerate() {
        let e = embed_action(
            &ctx.features[a],
            &nodes,
            model.spec.num_predicates,
            model.spec.num_schemas,
        );
        let x: Vec<f64> = e.iter().chain(&glob.data).chain(&mean).map(|&v| f64::from(v)).collect();
        let mut h = x;
        for (li, l) in model.score_head.layers.iter().enumerate() {
            let (w, b) = (p(l.w), p(l.b));
            let mut o = b.clone();
            for (j, oj) in o.iter_mut().enumerate() {
                for (k, hk) in h.iter().enumerate() {
                    *oj += hk * w[k * l.fan_out + j];
                }
            }
            if li + 1 < model.score_head.layers.len() {
                o.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = o;
        }
        assert!((h[0] - out.scores[i]).abs() < 1e-5, "{} vs {}", h[0], out.scores[i]);
    }
}

#[test]
fn value_is_deterministic_and_scaled() {
    let (task, model, ctx) = simple_setup(5, 6);
    let v1 = model.value(&task, &ctx, &task.init).unwrap();
    let v2 = model.value(&task, &ctx, &task.init).unwrap();
    assert_eq!(v1, v2);
    let (_, model2, _) = simple_setup(5, 6);
    assert_eq!(model2.value(&task, &ctx, &task.init).unwrap(), v1);
    let acts = task.applicable_actions(&task.init);
    assert_eq!(model.evaluate(&task, &ctx, &task.init, &acts).unwrap().value, v1);
}

#[test]
fn value_loss_reaches_trunk() {
    let (task, model, ctx) = simple_setup(4, 7);
    let g = ctx.encoder.encode(&task, &task.init);
    let mut bb = BatchBuilder::new();
    bb.push(&model.spec, &g, std::iter::empty());
    let batch = bb.build(&model.spec);
    let mut tape = Tape::new(&model.store);
    let out = model.forward(&mut tape, &batch).unwrap();
    let sq = tape.square(out.values);
    let loss = tape.sum(sq);
    let grads = tape.backward(loss).unwrap();
    let first = model.trunk.blocks[0].phi_e.layers[0].w;
    let g0 = grads.get(first).expect("trunk gradient");
    assert!(g0.data.iter().any(|&v| v != 0.0));
    assert!(grads.get(model.score_head.layers[0].w).is_none());
}

#[test]
fn spec_text_round_trip_and_checkpoint() {
    let (task, model, ctx) = simple_setup(5, 8);
    let text = model.spec.to_text();
    assert_eq!(ModelSpec::from_text(&text).unwrap(), model.spec);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = PolicyModel::load(&path).unwrap();
    let acts = task.applicable_actions(&task.init);
    assert_eq!(
        model.evaluate(&task, &ctx, &task.init, &acts).unwrap(),
        back.evaluate(&task, &ctx, &task.init, &acts).unwrap()
    );
}

#[test]
fn incompatible_task_is_rejected() {
    let (_, model, _) = simple_setup(5, 9);
    let inst = generate(DomainKind::Scan, &InstanceSpec::scan(5, 0.0, 1, 1)).unwrap();
    assert!(matches!(
        TaskContext::for_model(&inst.task, &model.spec),
        Err(AgentError::Incompatible(_))
    ));
}

#[test]
fn untrained_agent_drives_sound_search() {
    let (task, model, _) = simple_setup(5, 10);
    let agent = Agent::new(&model, &task).unwrap();
    let r = gbfs_gnn(&task, &agent, SearchBudget::expansions(10_000));
    assert!(r.success);
    assert!(validate_plan(&task, r.plan.as_ref().unwrap()).is_valid());
}

#[test]
fn greedy_ties_go_to_lowest_uid() {
    assert_eq!(greedy_index(&[0.4, 0.4, 0.2], &[7, 3, 1]), 1);
    assert_eq!(greedy_index(&[0.1, 0.5, 0.4], &[0, 1, 2]), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_shift_invariant(scores in prop::collection::vec(-20.0f64..20.0, 1..8), c in -100.0f64..100.0) {
        let a = policy_distribution(&scores);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let b = policy_distribution(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let uids: Vec<usize> = (0..scores.len()).collect();
        prop_assert_eq!(greedy_index(&a, &uids), greedy_index(&b, &uids));
        let h = entropy(&a);
        let oracle: f64 = a.iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum();
        prop_assert!((h - oracle).abs() < 1e-6);
        prop_assert!(h >= -1e-12 && h <= (scores.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn action_order_equivariance(seed in 0u64..50, rot in 0usize..4) {
        let (task, model, ctx) = simple_setup(4, seed);
        let acts = task.applicable_actions(&task.init);
        let mut perm = acts.clone();
        let k = rot % perm.len();
        perm.rotate_left(k);
        let a = model.evaluate(&task, &ctx, &task.init, &acts).unwrap();
        let b = model.evaluate(&task, &ctx, &task.init, &perm).unwrap();
        for (i, &uid) in perm.iter().enumerate() {
            let j = acts.iter().position(|&u| u == uid).unwrap();
            prop_assert!((a.probs[j] - b.probs[i]).abs() < 1e-6);
        }
    }
}
