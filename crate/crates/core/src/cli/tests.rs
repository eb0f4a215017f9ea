use super::*;

fn args(s: &str) -> Vec<String> {
    std::iter::once("gplan".to_string())
        .chain(s.split_whitespace().map(String::from))
        .collect()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(args("")), 2);
    assert_eq!(run(args("train --domain nowhere --out x")), 2);
    assert_eq!(run(args("bench-graph --min 9 --max 4")), 2);
    assert_eq!(run(args("eval --W 5 --engine gnn")), 2);
}

#[test]
fn bench_graph_rows() {
    let csv = bench_graph_csv(DomainKind::Simple, 5, 6).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "W,mode,nodes,edges,feature_bytes");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("5,dense,26,650,"));
    assert!(lines[2].starts_with("5,sparse,26,82,"));
}

#[test]
fn gen_then_plan_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        run(args(&format!(
            "gen --domain simple --W 5 --count 2 --seed 3 --out {out}"
        ))),
        0
    );
    assert!(dir.path().join("domain.pddl").exists());
    let prob = dir.path().join("problem-1.pddl");
    let plan = dir.path().join("plan.txt");
    let code = run(args(&format!(
        "plan --problem {} --engine baseline --out {}",
        prob.display(),
        plan.display()
    )));
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&plan).unwrap();
    assert!(text.lines().all(|l| l.starts_with('(') && l.ends_with(')')));
    assert!(text.ends_with('\n'));
}

#[test]
fn plan_infers_domain_from_problem() {
    let text = "(define (problem p)\n  (:domain droneworld_scan)\n";
    assert_eq!(problem_domain_name(text).as_deref(), Some("droneworld_scan"));
    assert_eq!(problem_domain_name("(define (problem p))"), None);
}

#[test]
fn train_config_overrides() {
    let cli = Cli::try_parse_from(args(
        "train --domain scan --mode random --min-size 5 --max-size 7 --iters 3 --seed 9 --out r --set lr=0.002 --set hidden=8,8",
    ))
    .unwrap();
    let Command::Train(a) = cli.command else { panic!() };
    let c = build_train_config(&a).unwrap();
    assert_eq!(
        (c.domain, c.mode, c.min_size, c.max_size, c.iters, c.seed),
        (DomainKind::Scan, TrainMode::Random, 5, 7, 3, 9)
    );
    assert_eq!(c.ppo.lr, 0.002);
    assert_eq!(c.model.hidden, vec![8, 8]);
    assert_eq!(c.num_targets, 2);
}

#[test]
fn baseline_suite_solves_small_grids() {
    let spec = SuiteSpec {
        domain: DomainKind::Simple,
        width: 5,
        count: 4,
        density: 0.1,
        targets: 0,
        seed: 7,
        engine: Engine::Baseline,
        max_expansions: 10_000,
        budget_factor: None,
        max_seconds: f64::INFINITY,
    };
    let rs = evaluate_suite(&spec, None).unwrap();
    let s = SuiteSummary::from_results(&rs);
    assert_eq!(s.solved, 4);
    assert!(s.plan_len_ratio >= 1.0);
}
