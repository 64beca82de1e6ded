//! End-to-end tests of the `prolab` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prolab_cli::RunConfig;
use tempfile::TempDir;

fn prolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prolab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn train(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", s(cfg), "--out", s(out)];
    args.extend_from_slice(extra);
    prolab(&args)
}

#[test]
fn gen_writes_world_dataset_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g");
    let o = prolab(&["gen", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(listing(&out), ["dataset.txt", "manifest.txt", "world.txt"]);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("seed 0\n"));
    assert!(manifest.contains("total_count 40\n"));
}

#[test]
fn gen_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&prolab(&["gen", "--out", s(&a), "--seed", "9"])), 0);
    assert_eq!(code(&prolab(&["gen", "--out", s(&b), "--seed", "9"])), 0);
    for f in ["world.txt", "dataset.txt", "manifest.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = tmp.path().join("c");
    assert_eq!(code(&prolab(&["gen", "--out", s(&c), "--seed", "10"])), 0);
    assert_ne!(fs::read(a.join("dataset.txt")).unwrap(), fs::read(c.join("dataset.txt")).unwrap());
}

#[test]
fn gen_manifest_records_imbalanced_class_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.cfg",
        "[data]\nkind = binary\nrecords = 2000\nimbalance = desired:0.01\n",
    );
    let out = tmp.path().join("g");
    assert_eq!(code(&prolab(&["gen", "--config", s(&cfg), "--out", s(&out)])), 0);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    let get = |k: &str| -> u64 {
        manifest
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{k} ")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(get("desired_count"), 20);
    assert_eq!(get("undesired_count"), 2000);
}

#[test]
fn verify_default_suite_passes() {
    let o = prolab(&["verify"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn verify_only_runs_one_check() {
    let o = prolab(&["verify", "--only", "t43"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let checks: Vec<&str> = out.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|l| l.contains("check=t43 ")));
}

#[test]
fn verify_injected_bug_fails_t31() {
    let o = prolab(&["verify", "--only", "t31", "--inject-bug"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL check=t31"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&prolab(&["verify", "--only", "t99"])), 2);
    assert_eq!(code(&prolab(&["frobnicate"])), 2);
    assert_eq!(code(&prolab(&["train"])), 2);
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "[loss]\ntemperature = 1\n");
    let o = train(&cfg, &tmp.path().join("r"), &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("temperature"));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn paired_runs_share_the_world_and_write_every_file() {
    let tmp = TempDir::new().unwrap();
    let dpo = write_config(tmp.path(), "dpo.cfg", "[loss]\nkind = dpo\nbeta = 1\n[train]\nsteps = 50\n");
    let pro = write_config(tmp.path(), "pro.cfg", "[loss]\nkind = pro-p\nbeta = 1\n[train]\nsteps = 50\n");
    let (a, b) = (tmp.path().join("dpo"), tmp.path().join("pro"));
    assert_eq!(code(&train(&dpo, &a, &["--seed", "3"])), 0);
    assert_eq!(code(&train(&pro, &b, &["--seed", "3"])), 0);
    let files = [
        "config.txt",
        "dataset.txt",
        "diagnostics.txt",
        "rewards.csv",
        "trajectory.csv",
        "world.txt",
    ];
    assert_eq!(listing(&a), files);
    assert_eq!(listing(&b), files);
    assert_eq!(fs::read(a.join("world.txt")).unwrap(), fs::read(b.join("world.txt")).unwrap());
    assert_eq!(fs::read(a.join("dataset.txt")).unwrap(), fs::read(b.join("dataset.txt")).unwrap());

    // The snapshot is the effective configuration, seed override included.
    let snap = RunConfig::parse(&fs::read_to_string(a.join("config.txt")).unwrap()).unwrap();
    assert_eq!(snap.seed, 3);
    assert_eq!(snap.train.steps, 50);
    let traj = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 51);
}

#[test]
fn training_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.cfg", "[loss]\nkind = pro-b\n[train]\nsteps = 30\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&train(&cfg, &a, &[])), 0);
    assert_eq!(code(&train(&cfg, &b, &[])), 0);
    for f in ["trajectory.csv", "rewards.csv", "diagnostics.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.cfg", "[train]\nsteps = 5\n");
    let run = tmp.path().join("r");
    assert_eq!(code(&train(&cfg, &run, &[])), 0);
    let before = fs::read(run.join("trajectory.csv")).unwrap();
    let o = train(&cfg, &run, &["--seed", "1"]);
    assert_eq!(code(&o), 2);
    assert_eq!(fs::read(run.join("trajectory.csv")).unwrap(), before);
}

#[test]
fn train_from_generated_dataset_and_missing_dataset() {
    let tmp = TempDir::new().unwrap();
    let g = tmp.path().join("g");
    assert_eq!(code(&prolab(&["gen", "--out", s(&g), "--seed", "4"])), 0);
    let cfg = write_config(
        tmp.path(),
        "c.cfg",
        &format!("[data]\ndir = {}\n[train]\nsteps = 5\n", g.display()),
    );
    let run = tmp.path().join("r");
    assert_eq!(code(&train(&cfg, &run, &[])), 0);
    assert_eq!(fs::read(run.join("dataset.txt")).unwrap(), fs::read(g.join("dataset.txt")).unwrap());

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let cfg = write_config(tmp.path(), "m.cfg", &format!("[data]\ndir = {}\n", empty.display()));
    let o = train(&cfg, &tmp.path().join("r2"), &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing dataset"));
    assert!(!tmp.path().join("r2").exists());
}

#[test]
fn divergence_exits_3_and_keeps_the_truncated_run() {
    let tmp = TempDir::new().unwrap();
    let g = tmp.path().join("g");
    let gcfg = write_config(tmp.path(), "g.cfg", "[world]\nshape = tabular:4\n[data]\nrecords = 1\n");
    assert_eq!(code(&prolab(&["gen", "--config", s(&gcfg), "--out", s(&g)])), 0);
    let cfg = write_config(
        tmp.path(),
        "t.cfg",
        &format!(
            "[world]\nshape = tabular:4\n[data]\ndir = {}\n[loss]\nkind = pro-p\nbeta = 1\npin = false\n[train]\nlr = 1e6\nsteps = 5\n",
            g.display()
        ),
    );
    let run = tmp.path().join("r");
    let o = train(&cfg, &run, &[]);
    assert_eq!(code(&o), 3);
    let diag = fs::read_to_string(run.join("diagnostics.txt")).unwrap();
    assert!(diag.contains("diverged true"));
}

#[test]
fn outputs_stay_inside_the_run_directory() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.cfg", "[train]\nsteps = 5\n");
    assert_eq!(code(&train(&cfg, &tmp.path().join("r"), &[])), 0);
    assert_eq!(listing(tmp.path()), ["c.cfg", "r"]);
}

fn train_runs(tmp: &Path, kinds: &[&str], seeds: &[u64]) -> Vec<PathBuf> {
    let mut runs = Vec::new();
    for kind in kinds {
        let cfg = write_config(
            tmp,
            &format!("{kind}.cfg"),
            &format!("[loss]\nkind = {kind}\nbeta = 1\n[train]\nsteps = 8\n"),
        );
        for seed in seeds {
            let run = tmp.join(format!("{kind}-{seed}"));
            assert_eq!(code(&train(&cfg, &run, &["--seed", &seed.to_string()])), 0);
            runs.push(run);
        }
    }
    runs
}

fn report(runs: &[PathBuf], out: &Path) -> Output {
    let mut args = vec!["report".to_string()];
    args.extend(runs.iter().map(|r| s(r).to_string()));
    args.extend(["--out".to_string(), s(out).to_string()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    prolab(&refs)
}

#[test]
fn report_single_run_is_pass_through() {
    let tmp = TempDir::new().unwrap();
    let runs = train_runs(tmp.path(), &["dpo"], &[0]);
    let out = tmp.path().join("rep");
    assert_eq!(code(&report(&runs, &out)), 0);
    let traj = fs::read_to_string(runs[0].join("trajectory.csv")).unwrap();
    let merged = fs::read_to_string(out.join("merged.csv")).unwrap();
    let stripped: Vec<String> = merged
        .lines()
        .map(|l| l.splitn(4, ',').nth(3).unwrap().to_string())
        .collect();
    assert_eq!(stripped, traj.lines().collect::<Vec<_>>());
    assert!(merged.lines().skip(1).all(|l| l.starts_with("dpo,0,dpo-0,")));
}

#[test]
fn report_ten_runs_has_stable_ordering() {
    let tmp = TempDir::new().unwrap();
    let runs = train_runs(tmp.path(), &["pro-p", "dpo"], &[4, 0, 3, 1, 2]);
    let (o1, o2) = (tmp.path().join("rep1"), tmp.path().join("rep2"));
    assert_eq!(code(&report(&runs, &o1)), 0);
    let mut reversed = runs.clone();
    reversed.reverse();
    assert_eq!(code(&report(&reversed, &o2)), 0);
    let merged = fs::read_to_string(o1.join("merged.csv")).unwrap();
    assert_eq!(merged, fs::read_to_string(o2.join("merged.csv")).unwrap());
    assert_eq!(merged.lines().count(), 1 + 10 * 9);

    let keys: Vec<(String, u64, u64)> = merged
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    let summary = fs::read_to_string(o1.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 11);
}

#[test]
fn paired_report_has_last_quartile_sign_summary() {
    let tmp = TempDir::new().unwrap();
    let runs = train_runs(tmp.path(), &["dpo", "pro-p"], &[0]);
    let o = report(&runs, &tmp.path().join("rep"));
    assert_eq!(code(&o), 0);
    let summary = stdout(&o);
    let header: Vec<&str> = summary.lines().next().unwrap().split(',').collect();
    let neg = header.iter().position(|c| *c == "last_quartile_negative").unwrap();
    let pos = header.iter().position(|c| *c == "last_quartile_positive").unwrap();
    for row in summary.lines().skip(1).take(2) {
        let f: Vec<&str> = row.split(',').collect();
        let (n, p): (f64, f64) = (f[neg].parse().unwrap(), f[pos].parse().unwrap());
        assert!((0.0..=1.0).contains(&n) && (0.0..=1.0).contains(&p) && n + p <= 1.0 + 1e-12);
    }
}

#[test]
fn report_rejects_schema_mismatch() {
    let tmp = TempDir::new().unwrap();
    let runs = train_runs(tmp.path(), &["dpo"], &[0, 1]);
    let p = runs[1].join("trajectory.csv");
    let text = fs::read_to_string(&p).unwrap().replacen("grad_norm", "gradient", 1);
    fs::write(&p, text).unwrap();
    let o = report(&runs, &tmp.path().join("rep"));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema mismatch"));
}
