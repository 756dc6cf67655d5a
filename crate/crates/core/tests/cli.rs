use std::fs;
use std::path::Path;
use std::process::Command;

use mcclt::cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

const TINY: &str = "env = \"lq_chain\"\nepochs = 2\nsteps_per_epoch = 300\nn_quantiles = 8\nquantile_hidden = [16, 16]\ntrain_v_iters = 5\ntrain_pi_iters = 5\n";

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("mcclt").chain(args.iter().copied()))
}

fn config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    assert_eq!(cli(&["train", "--config", &cfg, "--seed", "3", "--quiet", "--out", p(&out)]), EXIT_OK);
    for f in ["config.snapshot", "manifest.json", "metrics.csv", "checkpoints/policy.ckpt", "checkpoints/quantile_value.ckpt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with(mcclt::algo::METRICS_HEADER));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["mode"], "mcclt_full");
    assert_eq!(manifest["env_steps"], 600);

    // The snapshot alone reproduces the run.
    let again = tmp.path().join("again");
    assert_eq!(cli(&["train", "--config", p(&out.join("config.snapshot")), "--quiet", "--out", p(&again)]), EXIT_OK);
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(out.join("checkpoints/policy.ckpt")).unwrap(),
        fs::read(again.join("checkpoints/policy.ckpt")).unwrap()
    );

    // Never overwrite.
    assert_eq!(cli(&["train", "--config", &cfg, "--quiet", "--out", p(&out)]), EXIT_USAGE);
}

#[test]
fn baseline_runs_save_a_scalar_critic_and_refuse_quantile_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    assert_eq!(
        cli(&["train", "--config", &cfg, "--mode", "baseline_scalar", "--quiet", "--out", p(&out)]),
        EXIT_OK
    );
    assert!(out.join("checkpoints/scalar_value.ckpt").is_file());
    assert!(!out.join("checkpoints/quantile_value.ckpt").exists());
    assert_eq!(cli(&["diag", "--run", p(&out), "--which", "std_curve", "--episodes", "3"]), EXIT_RUNTIME);
    assert_eq!(cli(&["diag", "--run", p(&out), "--which", "return_std", "--episodes", "5"]), EXIT_OK);
    assert!(out.join("diag/return_std.csv").is_file());
}

#[test]
fn eval_and_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    assert_eq!(cli(&["train", "--config", &cfg, "--quiet", "--out", p(&out)]), EXIT_OK);

    let json = tmp.path().join("eval.json");
    assert_eq!(cli(&["eval", "--checkpoint", p(&out), "--episodes", "6", "--seed", "2", "--out", p(&json)]), EXIT_OK);
    let summary: mcclt::algo::EvalSummary = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(summary.episodes, 6);
    assert_eq!(summary.env, "lq_chain");
    let direct = mcclt::algo::evaluate(
        &mcclt::checkpoint::load_policy(&out.join("checkpoints/policy.ckpt")).unwrap(),
        "lq_chain",
        Default::default(),
        6,
        2,
        false,
    )
    .unwrap();
    assert_eq!(summary, direct);

    // A bare checkpoint file needs an explicit env, and it must match.
    let file = out.join("checkpoints/policy.ckpt");
    assert_eq!(cli(&["eval", "--checkpoint", p(&file), "--episodes", "2"]), EXIT_USAGE);
    assert_eq!(cli(&["eval", "--checkpoint", p(&file), "--env", "point_mass_reach", "--episodes", "2"]), EXIT_RUNTIME);
    assert_eq!(cli(&["eval", "--checkpoint", p(&file), "--env", "lq_chain", "--episodes", "2"]), EXIT_OK);

    for (which, files) in [
        ("std_curve", ["std_curve.csv", "std_curve.json"]),
        ("return_std", ["return_std.csv", "return_std.json"]),
        ("normality", ["normality.csv", "normality.json"]),
    ] {
        let d = tmp.path().join(which);
        assert_eq!(cli(&["diag", "--run", p(&out), "--which", which, "--episodes", "4", "--out", p(&d)]), EXIT_OK);
        for f in files {
            assert!(d.join(f).is_file(), "{which}: missing {f}");
        }
    }
    let table = fs::read_to_string(tmp.path().join("return_std/return_std.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
    let curve = fs::read_to_string(tmp.path().join("std_curve/std_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("t,std"));
    assert_eq!(cli(&["diag", "--run", p(&out), "--which", "return_std", "--episodes", "1"]), EXIT_USAGE);
}

#[test]
fn configuration_errors_exit_with_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let cases = [
        "epochs = 2\n",                              // no env
        "env = \"cartpole\"\n",                      // unknown env
        "env = \"lq_chain\"\nlearnin_rate = 1\n",    // typo'd key
        "env = \"lq_chain\"\nn_quantiles = 1\n",     // too few bars
        "env = \"lq_chain\"\ngamma = 1.5\n",         // out of range
        "env = \"lq_chain\"\nmode = \"full\"\n",     // unknown mode
        "env = [1]\n",                               // wrong type
        "not toml at all",
    ];
    for body in cases {
        let cfg = config(tmp.path(), body);
        assert_eq!(cli(&["train", "--config", &cfg, "--quiet", "--out", p(&out)]), EXIT_USAGE, "{body}");
        assert!(!out.exists(), "{body}: wrote output despite bad config");
    }
    let cfg = config(tmp.path(), TINY);
    assert_eq!(cli(&["train", "--config", &cfg, "--set", "nope=1", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--config", &cfg, "--set", "gamma", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--config", &cfg, "--algo", "sac", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--config", p(&tmp.path().join("missing.toml")), "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(cli(&["--help"]), EXIT_OK);
    assert_eq!(cli(&["eval", "--checkpoint", p(&tmp.path().join("nothing"))]), EXIT_USAGE);
    assert!(!out.exists());
}

#[test]
fn overrides_reach_the_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let code = cli(&[
        "train", "--config", &cfg, "--algo", "trpo", "--mode", "dvf_bellman", "--epochs", "1", "--set", "gamma=0.95",
        "--set", "noise_scale=0.5", "--quiet", "--out", p(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let snap = mcclt::algo::TrainConfig::from_file(&out.join("config.snapshot")).unwrap();
    assert_eq!(snap.algorithm, mcclt::algo::Algorithm::Trpo);
    assert_eq!(snap.mode, mcclt::algo::AblationMode::DvfBellman);
    assert_eq!(snap.epochs, 1);
    assert_eq!(snap.gamma, 0.95);
    assert_eq!(snap.noise_scale, Some(0.5));
    assert_eq!(snap.effective_temperature(), 0.01);
}

#[test]
fn ablate_tabulates_every_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let out = tmp.path().join("abl");
    let code = cli(&["ablate", "--config", &cfg, "--epochs", "1", "--seeds", "4,5", "--eval-episodes", "3", "--out", p(&out)]);
    assert_eq!(code, EXIT_OK);
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "algorithm,env,mode,seeds,mean_return,std_error");
    assert_eq!(lines.len(), 5);
    for (line, mode) in lines[1..].iter().zip(["baseline_scalar", "dvf_bellman", "mcclt_no_w", "mcclt_full"]) {
        assert!(line.starts_with(&format!("ppo,lq_chain,{mode},2,")), "{line}");
    }
    assert_eq!(cli(&["ablate", "--config", &cfg, "--seeds", "1", "--out", p(&out)]), EXIT_USAGE);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_mcclt");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["--version"]), Some(0));
    assert_eq!(status(&["train"]), Some(1));
    assert_eq!(status(&["diag", "--run", "/nonexistent", "--which", "normality"]), Some(2));
}

#[test]
fn dump_trajectories_writes_jsonl() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &format!("{TINY}dump_trajectories = true\n"));
    let out = tmp.path().join("run");
    assert_eq!(cli(&["train", "--config", &cfg, "--epochs", "1", "--quiet", "--out", p(&out)]), EXIT_OK);
    let files: Vec<_> = fs::read_dir(out.join("trajectories")).unwrap().collect();
    assert_eq!(files.len(), 1);
    let text = fs::read_to_string(files[0].as_ref().unwrap().path()).unwrap();
    assert_eq!(text.lines().count(), 300);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["quantiles"].as_array().is_some_and(|q| q.len() == 8));
}
