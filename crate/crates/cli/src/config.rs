//! Run configuration and its text form.
//!
//! The file is a list of `[section]` headers followed by `key = value`
//! lines. Blank lines and lines starting with `#` are ignored. Every key
//! is optional and falls back to its default, but unknown sections, unknown
//! keys and repeated keys are rejected. `to_text` writes every key, and
//! `parse(to_text(c)) == c` for every valid configuration.
//!
//! ```text
//! [run]
//! seed = 0
//!
//! [world]
//! shape = sequence:3x3        # or tabular:N
//! reward_scale = 1
//!
//! [data]
//! kind = pairwise             # pairwise | binary | scalar
//! records = 40                # pairs, or groups for scalar feedback
//! group_size = 4              # scalar feedback only
//! imbalance = none            # none | desired:KEEP | undesired:KEEP
//! noise = auto                # auto (0.1 x reward_scale) or a value
//! dir = path/to/gen/output    # optional: load world and data from here
//!
//! [loss]
//! kind = pro-p                # dpo dpo-pop edpo pro pro-p pro-b pro-s kto
//! beta = 0.1
//! alpha = 2.5
//! eta = per-record            # per-record, or a mixture weight in (0, 1)
//! pin = true
//! reweight = false
//! kto_z0 = 0
//! kto_lambda_d = 1
//! kto_lambda_u = 1
//! kto_sign = utility          # utility | as-printed
//!
//! [train]
//! steps = 500
//! lr = 1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use prolab_core::experiments::{FeedbackKind, ImbalanceSpec, LabelClass, LossConfig, SampleConfig};
use prolab_core::{KtoSign, LossKind, WorldShape};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn cerr(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub shape: WorldShape,
    pub reward_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: FeedbackKind,
    pub records: usize,
    pub imbalance: Option<ImbalanceSpec>,
    pub noise: Option<f64>,
    /// A `gen` output directory to load the world and dataset from instead
    /// of sampling them.
    pub dir: Option<PathBuf>,
}

impl DataConfig {
    pub fn sample_config(&self) -> SampleConfig {
        let mut sc = SampleConfig::new(self.kind, self.records);
        sc.imbalance = self.imbalance;
        sc.noise = self.noise;
        sc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig {
                shape: WorldShape::Sequence { vocab: 3, length: 3 },
                reward_scale: 1.0,
            },
            data: DataConfig {
                kind: FeedbackKind::Pairwise,
                records: 40,
                imbalance: None,
                noise: None,
                dir: None,
            },
            loss: LossConfig::new(LossKind::ProP),
            train: TrainConfig { steps: 500, lr: 1.0 },
        }
    }
}

const SECTIONS: [(&str, &[&str]); 5] = [
    ("run", &["seed"]),
    ("world", &["shape", "reward_scale"]),
    ("data", &["kind", "records", "group_size", "imbalance", "noise", "dir"]),
    (
        "loss",
        &[
            "kind",
            "beta",
            "alpha",
            "eta",
            "pin",
            "reweight",
            "kto_z0",
            "kto_lambda_d",
            "kto_lambda_u",
            "kto_sign",
        ],
    ),
    ("train", &["steps", "lr"]),
];

fn class_name(c: LabelClass) -> &'static str {
    match c {
        LabelClass::Desired => "desired",
        LabelClass::Undesired => "undesired",
    }
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[run]\nseed = {}\n", self.seed);
        let _ = writeln!(
            out,
            "[world]\nshape = {}\nreward_scale = {}\n",
            self.world.shape, self.world.reward_scale
        );

        let d = &self.data;
        let kind = match d.kind {
            FeedbackKind::Pairwise => "pairwise",
            FeedbackKind::Binary => "binary",
            FeedbackKind::Scalar { .. } => "scalar",
        };
        let _ = writeln!(out, "[data]\nkind = {kind}\nrecords = {}", d.records);
        if let FeedbackKind::Scalar { group_size } = d.kind {
            let _ = writeln!(out, "group_size = {group_size}");
        }
        match d.imbalance {
            None => out.push_str("imbalance = none\n"),
            Some(im) => {
                let _ = writeln!(out, "imbalance = {}:{}", class_name(im.class), im.keep);
            }
        }
        match d.noise {
            None => out.push_str("noise = auto\n"),
            Some(v) => {
                let _ = writeln!(out, "noise = {v}");
            }
        }
        if let Some(dir) = &d.dir {
            let _ = writeln!(out, "dir = {}", dir.display());
        }
        out.push('\n');

        let l = &self.loss;
        let eta = l.eta.map_or("per-record".to_string(), |e| e.to_string());
        let _ = writeln!(
            out,
            "[loss]\nkind = {}\nbeta = {}\nalpha = {}\neta = {eta}\npin = {}\nreweight = {}",
            l.kind, l.beta, l.alpha, l.pin, l.reweight
        );
        let _ = writeln!(
            out,
            "kto_z0 = {}\nkto_lambda_d = {}\nkto_lambda_u = {}\nkto_sign = {}\n",
            l.kto.z0,
            l.kto.lambda_d,
            l.kto.lambda_u,
            l.kto.sign_mode.name()
        );
        let _ = writeln!(out, "[train]\nsteps = {}\nlr = {}", self.train.steps, self.train.lr);
        out
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        // (section, key) -> (line, value)
        let mut entries: BTreeMap<(String, String), (usize, String)> = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (k, raw) in text.lines().enumerate() {
            let no = k + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                let name = name.trim();
                section = Some(
                    SECTIONS
                        .iter()
                        .map(|s| s.0)
                        .find(|s| *s == name)
                        .ok_or_else(|| cerr(no, format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cerr(no, "expected `key = value` or `[section]`"))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.ok_or_else(|| cerr(no, format!("key `{key}` outside any section")))?;
            let known = SECTIONS.iter().find(|s| s.0 == sec).map(|s| s.1).unwrap_or(&[]);
            if !known.contains(&key) {
                return Err(cerr(no, format!("unknown key `{key}` in [{sec}]")));
            }
            if value.is_empty() {
                return Err(cerr(no, format!("empty value for `{key}`")));
            }
            if entries
                .insert((sec.to_string(), key.to_string()), (no, value.to_string()))
                .is_some()
            {
                return Err(cerr(no, format!("duplicate key `{key}` in [{sec}]")));
            }
        }
        Fields(entries).build()
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| crate::CliError::Usage(format!("{}: {e}", path.display())))
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

struct Fields(BTreeMap<(String, String), (usize, String)>);

impl Fields {
    fn raw(&self, sec: &str, key: &str) -> Option<&(usize, String)> {
        self.0.get(&(sec.to_string(), key.to_string()))
    }

    fn get<T: FromStr>(&self, sec: &str, key: &str, default: T) -> Result<T, ConfigError> {
        match self.raw(sec, key) {
            None => Ok(default),
            Some((no, v)) => v.parse().map_err(|_| cerr(*no, format!("bad value `{v}` for {sec}.{key}"))),
        }
    }

    fn check(&self, sec: &str, key: &str, ok: bool, what: &str) -> Result<(), ConfigError> {
        if ok {
            return Ok(());
        }
        let no = self.raw(sec, key).map_or(0, |r| r.0);
        Err(cerr(no, format!("{sec}.{key} {what}")))
    }

    fn build(self) -> Result<RunConfig, ConfigError> {
        let def = RunConfig::default();
        let seed = self.get("run", "seed", def.seed)?;

        let shape = self.get("world", "shape", def.world.shape)?;
        let reward_scale: f64 = self.get("world", "reward_scale", def.world.reward_scale)?;
        self.check("world", "reward_scale", reward_scale.is_finite() && reward_scale >= 0.0, "must be finite and >= 0")?;

        let records: usize = self.get("data", "records", def.data.records)?;
        self.check("data", "records", records >= 1, "must be at least 1")?;
        let kind_name: String = self.get("data", "kind", "pairwise".to_string())?;
        let group = self.raw("data", "group_size").is_some();
        let kind = match kind_name.as_str() {
            "pairwise" => FeedbackKind::Pairwise,
            "binary" => FeedbackKind::Binary,
            "scalar" => {
                let group_size: usize = self.get("data", "group_size", 4)?;
                self.check("data", "group_size", group_size >= 2, "must be at least 2")?;
                FeedbackKind::Scalar { group_size }
            }
            other => {
                let no = self.raw("data", "kind").map_or(0, |r| r.0);
                return Err(cerr(no, format!("unknown feedback kind `{other}`")));
            }
        };
        self.check("data", "group_size", !group || matches!(kind, FeedbackKind::Scalar { .. }), "only applies to scalar feedback")?;
        let imbalance = match self.raw("data", "imbalance") {
            None => None,
            Some((_, v)) if v == "none" => None,
            Some((no, v)) => {
                let bad = || cerr(*no, format!("bad imbalance `{v}`; expected none, desired:KEEP or undesired:KEEP"));
                let (class, keep) = v.split_once(':').ok_or_else(bad)?;
                let class = match class {
                    "desired" => LabelClass::Desired,
                    "undesired" => LabelClass::Undesired,
                    _ => return Err(bad()),
                };
                let keep: f64 = keep.parse().map_err(|_| bad())?;
                Some(ImbalanceSpec::new(class, keep).map_err(|e| cerr(*no, e.to_string()))?)
            }
        };
        self.check("data", "imbalance", imbalance.is_none() || kind == FeedbackKind::Binary, "only applies to binary feedback")?;
        let noise = match self.raw("data", "noise") {
            None => None,
            Some((_, v)) if v == "auto" => None,
            Some((no, v)) => {
                let x: f64 = v.parse().map_err(|_| cerr(*no, format!("bad noise `{v}`")))?;
                if !(x.is_finite() && x >= 0.0) {
                    return Err(cerr(*no, "data.noise must be finite and >= 0"));
                }
                Some(x)
            }
        };
        let dir = self.raw("data", "dir").map(|(_, v)| PathBuf::from(v));

        let mut loss = LossConfig::new(self.get("loss", "kind", def.loss.kind)?);
        loss.beta = self.get("loss", "beta", def.loss.beta)?;
        self.check("loss", "beta", loss.beta.is_finite() && loss.beta > 0.0, "must be finite and > 0")?;
        loss.alpha = self.get("loss", "alpha", def.loss.alpha)?;
        self.check("loss", "alpha", loss.alpha.is_finite() && loss.alpha > 0.0, "must be finite and > 0")?;
        loss.eta = match self.raw("loss", "eta") {
            None => None,
            Some((_, v)) if v == "per-record" => None,
            Some((no, v)) => {
                let e: f64 = v.parse().map_err(|_| cerr(*no, format!("bad eta `{v}`")))?;
                if !(e > 0.0 && e < 1.0) {
                    return Err(cerr(*no, "loss.eta must lie in (0, 1)"));
                }
                Some(e)
            }
        };
        loss.pin = self.get("loss", "pin", def.loss.pin)?;
        loss.reweight = self.get("loss", "reweight", def.loss.reweight)?;
        loss.kto.z0 = self.get("loss", "kto_z0", def.loss.kto.z0)?;
        self.check("loss", "kto_z0", loss.kto.z0.is_finite() && loss.kto.z0 >= 0.0, "must be finite and >= 0")?;
        loss.kto.lambda_d = self.get("loss", "kto_lambda_d", def.loss.kto.lambda_d)?;
        self.check("loss", "kto_lambda_d", loss.kto.lambda_d.is_finite() && loss.kto.lambda_d > 0.0, "must be finite and > 0")?;
        loss.kto.lambda_u = self.get("loss", "kto_lambda_u", def.loss.kto.lambda_u)?;
        self.check("loss", "kto_lambda_u", loss.kto.lambda_u.is_finite() && loss.kto.lambda_u > 0.0, "must be finite and > 0")?;
        loss.kto.sign_mode = self.get::<KtoSign>("loss", "kto_sign", def.loss.kto.sign_mode)?;

        let steps: usize = self.get("train", "steps", def.train.steps)?;
        self.check("train", "steps", steps >= 1, "must be at least 1")?;
        let lr: f64 = self.get("train", "lr", def.train.lr)?;
        self.check("train", "lr", lr.is_finite() && lr >= 0.0, "must be finite and >= 0")?;

        Ok(RunConfig {
            seed,
            world: WorldConfig { shape, reward_scale },
            data: DataConfig {
                kind,
                records,
                imbalance,
                noise,
                dir,
            },
            loss,
            train: TrainConfig { steps, lr },
        })
    }
}
