use std::ffi::{CStr, CString};
use std::ptr;

use gplan_ffi::*;

const BW_DOMAIN: &str = "(define (domain bw) (:requirements :strips)
  (:predicates (on ?x ?y) (clear ?x) (ontable ?x) (handempty) (holding ?x))
  (:action pick :parameters (?x) :precondition (and (clear ?x) (ontable ?x) (handempty))
    :effect (and (holding ?x) (not (clear ?x)) (not (ontable ?x)) (not (handempty))))
  (:action put :parameters (?x) :precondition (holding ?x)
    :effect (and (ontable ?x) (clear ?x) (handempty) (not (holding ?x)))))";

const BW_PROBLEM: &str = "(define (problem p) (:domain bw) (:objects a)
  (:init (ontable a) (clear a) (handempty)) (:goal (holding a)))";

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(gplan_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(gplan_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn pddl_task_baseline_solve_and_validate() {
    unsafe {
        let mut task = ptr::null_mut();
        let st = gplan_task_from_pddl(cstr(BW_DOMAIN).as_ptr(), cstr(BW_PROBLEM).as_ptr(), &mut task);
        assert_eq!(st, GplanStatus::Ok, "{}", last_error());
        assert_eq!(gplan_task_num_actions(task), 2);

        let mut res = ptr::null_mut();
        let st = gplan_solve(task, ptr::null(), GplanEngine::Baseline, 100, 0.0, &mut res);
        assert_eq!(st, GplanStatus::Ok);
        assert!(gplan_result_success(res));
        assert_eq!(gplan_result_plan_len(res), 1);
        let text = CStr::from_ptr(gplan_result_plan_text(res))
            .to_str()
            .unwrap()
            .to_string();
        assert_eq!(text, "(pick a)\n");

        let (mut valid, mut step) = (false, 0i64);
        assert_eq!(
            gplan_validate_plan(task, cstr(&text).as_ptr(), &mut valid, &mut step),
            GplanStatus::Ok
        );
        assert!(valid);
        assert_eq!(step, -1);
        assert_eq!(
            gplan_validate_plan(task, cstr("").as_ptr(), &mut valid, &mut step),
            GplanStatus::Ok
        );
        assert!(!valid);
        assert_eq!(step, 0);
        let st = gplan_validate_plan(task, cstr("(fly a)").as_ptr(), &mut valid, &mut step);
        assert_eq!(st, GplanStatus::Parse);
        assert!(!last_error().is_empty());

        let mut len = 0i64;
        assert_eq!(gplan_optimal_plan_length(task, 1000, &mut len), GplanStatus::Ok);
        assert_eq!(len, 1);

        gplan_result_free(res);
        gplan_task_free(task);
    }
}

#[test]
fn generated_task_and_error_codes() {
    unsafe {
        let mut task = ptr::null_mut();
        assert_eq!(
            gplan_task_generate(GplanDomain::Simple, 5, 0.0, 0, 3, &mut task),
            GplanStatus::Ok
        );
        assert_eq!(gplan_task_num_actions(task), 80);
        let mut res = ptr::null_mut();
        // The learned engines need a model.
        let st = gplan_solve(task, ptr::null(), GplanEngine::Gnn, 100, 0.0, &mut res);
        assert_eq!(st, GplanStatus::NullPointer);
        assert!(res.is_null());
        gplan_task_free(task);

        let st = gplan_task_generate(GplanDomain::Scan, 2, 0.0, 1, 0, &mut task);
        assert_eq!(st, GplanStatus::InvalidArgument);
        assert!(last_error().contains("width"));

        let st = gplan_task_from_pddl(ptr::null(), cstr(BW_PROBLEM).as_ptr(), &mut task);
        assert_eq!(st, GplanStatus::NullPointer);
        let st = gplan_task_from_pddl(cstr("(define").as_ptr(), cstr(BW_PROBLEM).as_ptr(), &mut task);
        assert_eq!(st, GplanStatus::Parse);

        let mut model = ptr::null_mut();
        let st = gplan_model_load(cstr("/nonexistent/model.ckpt").as_ptr(), &mut model);
        assert_eq!(st, GplanStatus::Io);
        assert!(model.is_null());

        // Null handles are tolerated by accessors and destructors.
        assert_eq!(gplan_task_num_actions(ptr::null()), 0);
        assert!(!gplan_result_success(ptr::null()));
        gplan_task_free(ptr::null_mut());
        gplan_model_free(ptr::null_mut());
        gplan_result_free(ptr::null_mut());
    }
}

#[test]
fn untrained_checkpoint_round_trip() {
    use gplan::agent::{ModelConfig, ModelSpec, PolicyModel};
    use gplan::encoder::EncoderConfig;
    use gplan::worlds::DomainKind;

    let dir = std::env::temp_dir().join(format!("gplan-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.ckpt");
    let cfg = ModelConfig {
        hidden: vec![8],
        latent: 8,
        head_hidden: 8,
        num_blocks: 1,
    };
    let spec = ModelSpec::for_domain(DomainKind::Simple.domain(), EncoderConfig::sparse(true, 0), cfg, 100.0);
    PolicyModel::new(spec, 5).save(&path).unwrap();

    unsafe {
        let mut model = ptr::null_mut();
        let st = gplan_model_load(cstr(path.to_str().unwrap()).as_ptr(), &mut model);
        assert_eq!(st, GplanStatus::Ok, "{}", last_error());
        let mut task = ptr::null_mut();
        assert_eq!(
            gplan_task_generate(GplanDomain::Simple, 4, 0.0, 0, 1, &mut task),
            GplanStatus::Ok
        );
        let mut res = ptr::null_mut();
        assert_eq!(
            gplan_solve(task, model, GplanEngine::Gnn, 10_000, 0.0, &mut res),
            GplanStatus::Ok
        );
        // An untrained policy still drives a complete search on a small grid.
        assert!(gplan_result_success(res));
        assert!(gplan_result_expanded(res) >= 1);
        gplan_result_free(res);
        gplan_task_free(task);
        gplan_model_free(model);

        std::fs::write(&path, b"garbage").unwrap();
        let st = gplan_model_load(cstr(path.to_str().unwrap()).as_ptr(), &mut model);
        assert_eq!(st, GplanStatus::Model);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/gplan.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from gplan.h");
    }
    for ty in [
        "GplanStatus",
        "GplanTask",
        "GplanModel",
        "GplanResult",
        "GPLAN_STATUS_OK",
    ] {
        assert!(header.contains(ty), "{ty}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"gplan.h\"\n\
         int main(void) {\n\
           GplanTask *t = NULL;\n\
           GplanStatus s = gplan_task_generate(GPLAN_DOMAIN_SIMPLE, 5, 0.0, 0, 1, &t);\n\
           gplan_task_free(t);\n\
           return s == GPLAN_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
