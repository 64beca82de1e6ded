//! The `gen`, `verify`, `train` and `report` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use prolab_core::experiments::{
    diagnostics, gen_world, sample_feedback, sub_seed, train as run_training, build_spec, Diagnostics, Trajectory,
    WorldSpec, TRAJECTORY_COLUMNS,
};
use prolab_core::verify::{run_suite, VerifyOptions, CHECK_IDS};
use prolab_core::{FeedbackDataset, Policy, TheoremReport};

use crate::config::RunConfig;
use crate::CliError;

pub const WORLD_FILE: &str = "world.txt";
pub const DATASET_FILE: &str = "dataset.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const REWARDS_FILE: &str = "rewards.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";
pub const MERGED_FILE: &str = "merged.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Samples the world and dataset a configuration describes.
pub fn generate(cfg: &RunConfig) -> Result<(WorldSpec, FeedbackDataset), CliError> {
    let world = gen_world(sub_seed(cfg.seed, "world"), cfg.world.shape, cfg.world.reward_scale)?;
    let data = sample_feedback(&world, &cfg.data.sample_config(), sub_seed(cfg.seed, "data"))?;
    Ok((world, data))
}

/// Loads a world and dataset written by `gen`.
pub fn load_generated(dir: &Path) -> Result<(WorldSpec, FeedbackDataset), CliError> {
    let (wp, dp) = (dir.join(WORLD_FILE), dir.join(DATASET_FILE));
    if !wp.is_file() || !dp.is_file() {
        return Err(CliError::Usage(format!(
            "missing dataset: {} must contain {WORLD_FILE} and {DATASET_FILE}",
            dir.display()
        )));
    }
    let world = WorldSpec::parse(&read(&wp)?).map_err(|e| CliError::Usage(format!("{}: {e}", wp.display())))?;
    let data = FeedbackDataset::parse(&read(&dp)?, world.space.clone())
        .map_err(|e| CliError::Usage(format!("{}: {e}", dp.display())))?;
    Ok((world, data))
}

fn inputs(cfg: &RunConfig) -> Result<(WorldSpec, FeedbackDataset), CliError> {
    match &cfg.data.dir {
        None => generate(cfg),
        Some(dir) => {
            let (world, data) = load_generated(dir)?;
            if world.shape != cfg.world.shape {
                return Err(CliError::Usage(format!(
                    "world in {} has shape {}, config says {}",
                    dir.display(),
                    world.shape,
                    cfg.world.shape
                )));
            }
            Ok((world, data))
        }
    }
}

fn manifest(cfg: &RunConfig, data: &FeedbackDataset) -> String {
    let mut out = format!(
        "seed {}\nworld_seed {}\ndata_seed {}\nshape {}\nfeedback {}\nrecords {}\nlabeled {}\n",
        cfg.seed,
        sub_seed(cfg.seed, "world"),
        sub_seed(cfg.seed, "data"),
        cfg.world.shape,
        data.kind_name(),
        data.num_records(),
        data.labeled_mask().iter().filter(|&&m| m).count(),
    );
    let total = match data {
        FeedbackDataset::Pairwise(d) => d.total_count(),
        FeedbackDataset::Binary(d) => {
            let (desired, undesired) = d.class_counts();
            let _ = writeln!(out, "desired_count {desired}\nundesired_count {undesired}");
            d.total_count()
        }
        FeedbackDataset::Scalar(d) => d.total_count(),
    };
    let _ = writeln!(out, "total_count {total}");
    out
}

/// Writes `world.txt`, `dataset.txt` and `manifest.txt` into `out`.
pub fn gen(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (world, data) = generate(cfg)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let files = [
        (WORLD_FILE, world.to_text()),
        (DATASET_FILE, data.to_text(WORLD_FILE)),
        (MANIFEST_FILE, manifest(cfg, &data)),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| io_err(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// Runs the verification suite. Unknown check ids are usage errors.
pub fn verify(only: Option<&str>, seed: u64, inject_bug: bool) -> Result<Vec<TheoremReport>, CliError> {
    if let Some(id) = only {
        if !CHECK_IDS.contains(&id) {
            return Err(CliError::Usage(format!(
                "unknown check `{id}`; expected one of {}",
                CHECK_IDS.join(", ")
            )));
        }
    }
    let opts = VerifyOptions {
        only: only.map(str::to_string),
        inject_bug,
        seed,
    };
    Ok(run_suite(&opts)?)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub trajectory: Trajectory,
    pub diagnostics: Diagnostics,
    pub files: Vec<PathBuf>,
}

/// Trains one run and writes its directory. The directory must not already
/// hold files: runs are computed in full before anything is written and are
/// never resumed.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome, CliError> {
    if out.exists() {
        let busy = fs::read_dir(out).map_err(|e| io_err(out, e))?.next().is_some();
        if busy {
            return Err(CliError::Usage(format!(
                "run directory {} is not empty; runs are not resumed",
                out.display()
            )));
        }
    }
    let (world, data) = inputs(cfg)?;
    let init = world.uniform_policy()?;
    let reference = init.distribution()?;
    let spec = build_spec(&cfg.loss, &world, reference, &data)?;
    // Descent is deterministic, so the trajectory carries the run seed as its key.
    let trajectory = run_training(&init, &spec, cfg.train.steps, cfg.train.lr, cfg.seed)?;
    let diag = diagnostics(&trajectory, &world)?;

    let files = [
        (CONFIG_FILE, cfg.to_text()),
        (WORLD_FILE, world.to_text()),
        (DATASET_FILE, data.to_text(WORLD_FILE)),
        (TRAJECTORY_FILE, trajectory.to_csv()),
        (REWARDS_FILE, trajectory.rewards_csv(&world.space)),
        (DIAGNOSTICS_FILE, diag.to_text()),
    ];
    let created = !out.exists();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut written = Vec::new();
    for (name, text) in files {
        let p = out.join(name);
        if let Err(e) = fs::write(&p, text) {
            // All or nothing.
            if created {
                let _ = fs::remove_dir_all(out);
            } else {
                written.iter().for_each(|w: &PathBuf| {
                    let _ = fs::remove_file(w);
                });
            }
            return Err(io_err(&p, e));
        }
        written.push(p);
    }
    Ok(TrainOutcome {
        trajectory,
        diagnostics: diag,
        files: written,
    })
}

/// Merged trajectory CSV and final-diagnostics summary over several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub merged: String,
    pub summary: String,
}

struct RunData {
    name: String,
    diag: Diagnostics,
    header: String,
    rows: Vec<String>,
}

fn load_run(dir: &Path) -> Result<RunData, CliError> {
    let dp = dir.join(DIAGNOSTICS_FILE);
    let diag = Diagnostics::parse(&read(&dp)?).map_err(|e| CliError::Usage(format!("{}: {e}", dp.display())))?;
    let tp = dir.join(TRAJECTORY_FILE);
    let text = read(&tp)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().to_string();
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        if line.split(',').count() != width {
            return Err(CliError::Usage(format!(
                "schema mismatch: {} row {} has {} fields, header has {width}",
                tp.display(),
                k + 2,
                line.split(',').count()
            )));
        }
        rows.push(line.to_string());
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(RunData { name, diag, header, rows })
}

pub const SUMMARY_COLUMNS: [&str; 13] = [
    "kind",
    "seed",
    "run",
    "steps",
    "diverged",
    "logp_preferred_initial",
    "logp_preferred_final",
    "reward_preferred_final",
    "reward_dispreferred_final",
    "expected_reward_initial",
    "expected_reward_final",
    "last_quartile_negative",
    "last_quartile_positive",
];

/// Merges run directories keyed by (loss kind, seed, step). Runs are ordered
/// by kind name, then seed, then their position in `runs`.
pub fn report(runs: &[PathBuf]) -> Result<Report, CliError> {
    if runs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let expected = TRAJECTORY_COLUMNS.join(",");
    let mut loaded = Vec::new();
    for dir in runs {
        let run = load_run(dir)?;
        if run.header != expected {
            return Err(CliError::Usage(format!(
                "schema mismatch: {} has columns `{}`, expected `{expected}`",
                dir.join(TRAJECTORY_FILE).display(),
                run.header
            )));
        }
        loaded.push(run);
    }
    loaded.sort_by(|a, b| (a.diag.kind.name(), a.diag.seed).cmp(&(b.diag.kind.name(), b.diag.seed)));

    let mut merged = format!("kind,seed,run,{expected}\n");
    let mut summary = SUMMARY_COLUMNS.join(",");
    summary.push('\n');
    for run in &loaded {
        let d = &run.diag;
        for row in &run.rows {
            let _ = writeln!(merged, "{},{},{},{row}", d.kind, d.seed, run.name);
        }
        let s = |name: &str| d.get(name).cloned().unwrap_or(prolab_core::experiments::SeriesSummary {
            initial: f64::NAN,
            last: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
        });
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            d.kind,
            d.seed,
            run.name,
            d.steps,
            d.diverged,
            s("logp_preferred").initial,
            s("logp_preferred").last,
            s("reward_preferred").last,
            s("reward_dispreferred").last,
            s("expected_reward").initial,
            s("expected_reward").last,
            d.last_quartile_negative,
            d.last_quartile_positive,
        );
    }
    Ok(Report { merged, summary })
}

/// Writes a report's two CSV files into `out`.
pub fn write_report(report: &Report, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut written = Vec::new();
    for (name, text) in [(MERGED_FILE, &report.merged), (SUMMARY_FILE, &report.summary)] {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| io_err(&p, e))?;
        written.push(p);
    }
    Ok(written)
}
