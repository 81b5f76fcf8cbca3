mod common;

use std::process::Command;

use rovtl::config::ExperimentConfig;
use rovtl::data::{read_dataset, read_importance};
use rovtl::pipeline::{fresh_dir, read_sweeps, FINETUNE_HEADER, PRETRAIN_HEADER};
use rovtl::{ablate, run_recipe, Recipe};
use rovtl_core::evaluation::MetricKind;
use rovtl_core::tabular::ProtocolKind;

#[test]
fn recipe_names_round_trip() {
    for r in Recipe::ALL {
        assert_eq!(Recipe::parse(r.name()).unwrap(), r);
    }
    assert!(Recipe::parse("no_such_recipe").is_err());
}

#[test]
fn no_tabmofe_logs_a_zero_hinge_term() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_recipe(Recipe::NoTabmofe, &common::tiny(tmp.path()), tmp.path()).unwrap();
    let path = out.dir.join("finetune_metrics.csv");
    let term = common::column(&path, "tabmofe_term");
    assert!(!term.is_empty());
    assert!(term.iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
    // the hinge itself is still computed
    assert!(common::column(&path, "tabmofe").iter().any(|v| v.parse::<f64>().unwrap() > 0.0));
    assert_eq!(out.config.finetune.lambda, Some(0.0));
}

#[test]
fn no_gate_logs_unit_gates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_recipe(Recipe::NoGate, &common::tiny(tmp.path()), tmp.path()).unwrap();
    let gates = common::column(&out.dir.join("finetune_metrics.csv"), "mean_gate");
    assert!(gates.iter().all(|g| g == "1"));
    let per_sample = common::column(&out.dir.join("traces.csv"), "gate");
    assert!(!per_sample.is_empty() && per_sample.iter().all(|g| g == "1"));
}

#[test]
fn dgl_and_joint_training_give_different_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let base = common::tiny(tmp.path());
    let a = run_recipe(Recipe::Rovtl, &base, tmp.path()).unwrap();
    let b = run_recipe(Recipe::NoDgl, &base, tmp.path()).unwrap();
    // same pretrained start
    assert_eq!(
        std::fs::read(a.dir.join("pretrain.ckpt")).unwrap(),
        std::fs::read(b.dir.join("pretrain.ckpt")).unwrap()
    );
    assert_ne!(
        std::fs::read(a.dir.join("model.ckpt")).unwrap(),
        std::fs::read(b.dir.join("model.ckpt")).unwrap()
    );
}

#[test]
fn reruns_are_byte_identical_and_never_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let base = common::tiny(tmp.path());
    let a = run_recipe(Recipe::Rovtl, &base, tmp.path()).unwrap();
    let b = run_recipe(Recipe::Rovtl, &base, tmp.path()).unwrap();
    assert_ne!(a.dir, b.dir);
    for f in [
        "pretrain_metrics.csv",
        "finetune_metrics.csv",
        "sweep_random.csv",
        "sweep_li.csv",
        "sweep_mi.csv",
        "summary.csv",
        "attention.csv",
        "model.ckpt",
        "resolved_config.toml",
    ] {
        assert_eq!(std::fs::read(a.dir.join(f)).unwrap(), std::fs::read(b.dir.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn fresh_dir_appends_a_suffix() {
    let tmp = tempfile::tempdir().unwrap();
    let a = fresh_dir(tmp.path(), "run").unwrap();
    std::fs::write(a.join("keep.txt"), "x").unwrap();
    let b = fresh_dir(tmp.path(), "run").unwrap();
    assert_eq!(b.file_name().unwrap(), "run-2");
    assert_eq!(std::fs::read_to_string(a.join("keep.txt")).unwrap(), "x");
}

#[test]
fn emitted_files_parse_back() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_recipe(Recipe::Rovtl, &common::tiny(tmp.path()), tmp.path()).unwrap();
    let metric = out.config.eval.metric.unwrap();
    assert_eq!(metric, MetricKind::Auc);
    for kind in ProtocolKind::ALL {
        let back = read_sweeps(&out.dir.join(format!("sweep_{}.csv", kind.short_name())), kind, metric).unwrap();
        assert_eq!(back, out.sweeps_for(kind).unwrap());
    }
    read_importance(&out.dir.join("importance.csv"), &out.test.schema).unwrap();
    let text = std::fs::read_to_string(out.dir.join("resolved_config.toml")).unwrap();
    let resolved: ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(resolved, out.config);
    let header = |f: &str| std::fs::read_to_string(out.dir.join(f)).unwrap().lines().next().unwrap().to_owned();
    assert_eq!(header("pretrain_metrics.csv"), PRETRAIN_HEADER);
    assert_eq!(header("finetune_metrics.csv"), FINETUNE_HEADER);
}

#[test]
fn ablation_covers_every_recipe() {
    let tmp = tempfile::tempdir().unwrap();
    let mut base = common::tiny(tmp.path());
    base.eval.protocols = vec![ProtocolKind::Random];
    let root = ablate(&Recipe::ALL, &base).unwrap();
    let recipes = common::column(&root.join("ablation.csv"), "recipe");
    assert_eq!(recipes, Recipe::ALL.iter().map(|r| r.name().to_owned()).collect::<Vec<_>>());
    // fusion baselines have no attention to report
    let concat = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().contains("concat_fuse"))
        .unwrap();
    assert!(!concat.join("attention.csv").exists());
}

fn rovtl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rovtl"))
}

#[test]
fn command_line_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = dir.join("tiny.toml");
    let mut c = common::tiny(dir);
    c.data.dir = Some(dir.join("data"));
    std::fs::write(&config, toml::to_string(&c).unwrap()).unwrap();

    let ok = |args: &[&str]| {
        let out = rovtl().args(args).current_dir(dir).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    // the config names a data directory that does not exist yet
    let missing = rovtl().args(["evaluate", "--config", "tiny.toml", "--checkpoint", "x"]).current_dir(dir).output().unwrap();
    assert!(!missing.status.success());
    assert_eq!(String::from_utf8_lossy(&missing.stderr).lines().count(), 1);

    let mut gen = c.clone();
    gen.data.dir = None;
    std::fs::write(dir.join("gen.toml"), toml::to_string(&gen).unwrap()).unwrap();
    ok(&["gen-data", "--config", "gen.toml", "--out", "data"]);
    let (data, ranking) = read_dataset(&dir.join("data")).unwrap();
    assert_eq!(data.len(), 80);
    assert!(ranking.is_some());

    ok(&["pretrain", "--config", "tiny.toml", "--mode", "missing", "--out", "pre.ckpt"]);
    assert_eq!(common::column(&dir.join("pre_metrics.csv"), "loss").len(), 2 * 4);
    ok(&["finetune", "--config", "tiny.toml", "--checkpoint", "pre.ckpt", "--trainable", "--out", "ft.ckpt"]);
    let eval = ok(&["evaluate", "--config", "tiny.toml", "--checkpoint", "ft.ckpt"]);
    assert!(eval.starts_with("auc,"));
    ok(&["sweep", "--config", "tiny.toml", "--checkpoint", "ft.ckpt", "--protocol", "li", "--metric", "accuracy", "--out", "li.csv"]);
    let li = read_sweeps(&dir.join("li.csv"), ProtocolKind::LeastImportant, MetricKind::Accuracy).unwrap();
    assert_eq!(li[0].1.fractions.len(), 11);

    ok(&["run", "--config", "tiny.toml", "--recipe", "no_pretrain", "--out", "runs"]);
    let listing = ok(&["report", "--results-dir", "runs", "--plots"]);
    assert!(listing.contains("report_random.svg"));
    let svg = std::fs::read_to_string(dir.join("runs/report_random.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let bad = rovtl().args(["run", "--config", "tiny.toml", "--recipe", "bogus"]).current_dir(dir).output().unwrap();
    assert!(!bad.status.success());
    let wrong = rovtl().args(["evaluate", "--config", "tiny.toml", "--checkpoint", "pre.ckpt"]).current_dir(dir).output().unwrap();
    assert_eq!(wrong.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&wrong.stderr).starts_with("error: "));
}
