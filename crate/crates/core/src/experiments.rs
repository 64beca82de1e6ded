//! Synthetic worlds, feedback sampling, fixed-step training and trajectory
//! diagnostics.
//!
//! A world is a small enumerable response space with latent rewards. Feedback
//! is sampled from it under a Bradley–Terry link, a policy is trained on the
//! feedback with full-batch gradient descent, and every step is recorded.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::feedback::{
    BinaryDataset, BinaryRecord, FeedbackDataset, PairRecord, PairwiseDataset, PreferenceMatrix, ScalarDataset,
    ScalarRecord,
};
use crate::hyper::{hyper_mass, HyperConfig, HyperSpace};
use crate::losses::{KtoParams, LossBody, LossKind, LossSpec, ProPForm, Proximal, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::policy::{AutoregressivePolicy, Policy, TabularPolicy};
use crate::space::{Distribution, ResponseSpace};

/// Derives a named sub-seed so that world, data, solver and trainer draws
/// stay independent while sharing one configuration seed.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldShape {
    /// `size` unstructured responses `y0, y1, …`.
    Tabular(usize),
    /// All token sequences of a fixed length over a small vocabulary.
    Sequence { vocab: usize, length: usize },
}

impl fmt::Display for WorldShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorldShape::Tabular(n) => write!(f, "tabular:{n}"),
            WorldShape::Sequence { vocab, length } => write!(f, "sequence:{vocab}x{length}"),
        }
    }
}

impl FromStr for WorldShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("bad world shape '{s}' (expected tabular:N or sequence:VxL)"));
        match s.split_once(':') {
            Some(("tabular", n)) => Ok(WorldShape::Tabular(n.parse().map_err(|_| bad())?)),
            Some(("sequence", vl)) => {
                let (v, l) = vl.split_once('x').ok_or_else(bad)?;
                Ok(WorldShape::Sequence {
                    vocab: v.parse().map_err(|_| bad())?,
                    length: l.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Ground truth for synthetic runs.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub shape: WorldShape,
    pub space: Arc<ResponseSpace>,
    pub rewards: Vec<f64>,
    /// Distribution responses are sampled from when building feedback.
    pub mu: Distribution,
    pub reward_scale: f64,
    pub seed: u64,
}

impl WorldSpec {
    pub fn new(shape: WorldShape, rewards: Vec<f64>, mu: Distribution, reward_scale: f64, seed: u64) -> Result<Self> {
        let space = mu.space().clone();
        if shape_space(shape)?.ids() != space.ids() {
            return Err(invalid("μ does not live on the world's response space"));
        }
        if rewards.len() != space.len() || rewards.iter().any(|r| !r.is_finite()) {
            return Err(invalid("need one finite latent reward per response"));
        }
        if !mu.is_strictly_positive() {
            return Err(invalid("μ must be strictly positive"));
        }
        if !(reward_scale >= 0.0) || !reward_scale.is_finite() {
            return Err(invalid("reward scale must be finite and non-negative"));
        }
        Ok(Self {
            shape,
            space,
            rewards,
            mu,
            reward_scale,
            seed,
        })
    }

    /// The uniform policy matching the world's shape.
    pub fn uniform_policy(&self) -> Result<WorldPolicy> {
        Ok(match self.shape {
            WorldShape::Tabular(_) => WorldPolicy::Tabular(TabularPolicy::uniform(self.space.clone())),
            WorldShape::Sequence { vocab, length } => WorldPolicy::Sequence(AutoregressivePolicy::with_space(
                vocab,
                length,
                self.space.clone(),
                vec![0.0; AutoregressivePolicy::param_count(vocab, length)],
            )?),
        })
    }

    /// `E_{y∼π}[latent reward]`.
    pub fn expected_reward(&self, log_probs: &[f64]) -> f64 {
        log_probs.iter().zip(&self.rewards).map(|(l, r)| l.exp() * r).sum()
    }

    /// Text record: shape, scale, seed, then one `reward id value mu` line per response.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "shape {}\nreward_scale {}\nseed {}\n",
            self.shape, self.reward_scale, self.seed
        );
        for (i, id) in self.space.ids().iter().enumerate() {
            out.push_str(&format!("reward {id} {} {}\n", self.rewards[i], self.mu.prob(i)));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let perr = |line: usize, m: &str| Error::Parse {
            line,
            message: m.to_string(),
        };
        let mut shape = None;
        let mut scale = None;
        let mut seed = None;
        let mut rows = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let no = k + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["shape", s] => shape = Some(s.parse::<WorldShape>().map_err(|e| perr(no, &e.to_string()))?),
                ["reward_scale", v] => scale = Some(v.parse::<f64>().map_err(|_| perr(no, "bad reward scale"))?),
                ["seed", v] => seed = Some(v.parse::<u64>().map_err(|_| perr(no, "bad seed"))?),
                ["reward", id, r, m] => {
                    let r = r.parse::<f64>().map_err(|_| perr(no, "bad reward"))?;
                    let m = m.parse::<f64>().map_err(|_| perr(no, "bad μ entry"))?;
                    rows.push((id.to_string(), r, m));
                }
                _ => return Err(perr(no, "unrecognised world line")),
            }
        }
        let shape = shape.ok_or_else(|| perr(0, "missing shape"))?;
        let space = Arc::new(shape_space(shape)?);
        if rows.len() != space.len() || rows.iter().zip(space.ids()).any(|(row, id)| &row.0 != id) {
            return Err(perr(0, "reward lines do not enumerate the world's responses in order"));
        }
        let mu = Distribution::new(space, rows.iter().map(|r| r.2).collect())?;
        Self::new(
            shape,
            rows.iter().map(|r| r.1).collect(),
            mu,
            scale.ok_or_else(|| perr(0, "missing reward_scale"))?,
            seed.ok_or_else(|| perr(0, "missing seed"))?,
        )
    }
}

fn shape_space(shape: WorldShape) -> Result<ResponseSpace> {
    match shape {
        WorldShape::Tabular(n) => ResponseSpace::indexed(n),
        WorldShape::Sequence { vocab, length } => AutoregressivePolicy::sequence_space(vocab, length),
    }
}

/// A policy of either world shape.
#[derive(Debug, Clone, PartialEq)]
pub enum WorldPolicy {
    Tabular(TabularPolicy),
    Sequence(AutoregressivePolicy),
}

impl Policy for WorldPolicy {
    fn space(&self) -> &Arc<ResponseSpace> {
        match self {
            WorldPolicy::Tabular(p) => p.space(),
            WorldPolicy::Sequence(p) => p.space(),
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            WorldPolicy::Tabular(p) => p.params(),
            WorldPolicy::Sequence(p) => p.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            WorldPolicy::Tabular(p) => p.params_mut(),
            WorldPolicy::Sequence(p) => p.params_mut(),
        }
    }

    fn log_probs(&self) -> Vec<f64> {
        match self {
            WorldPolicy::Tabular(p) => p.log_probs(),
            WorldPolicy::Sequence(p) => p.log_probs(),
        }
    }

    fn backward(&self, logp_grad: &[f64]) -> Vec<f64> {
        match self {
            WorldPolicy::Tabular(p) => p.backward(logp_grad),
            WorldPolicy::Sequence(p) => p.backward(logp_grad),
        }
    }
}

/// A world with i.i.d. `reward_scale · N(0, 1)` latent rewards and uniform μ.
pub fn gen_world(seed: u64, shape: WorldShape, reward_scale: f64) -> Result<WorldSpec> {
    let space = Arc::new(shape_space(shape)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rewards = (0..space.len())
        .map(|_| reward_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    WorldSpec::new(shape, rewards, Distribution::uniform(space), reward_scale, seed)
}

/// Bradley–Terry preferences from the world's latent rewards.
pub fn true_preferences(world: &WorldSpec) -> Result<PreferenceMatrix> {
    PreferenceMatrix::bradley_terry(world.space.clone(), &world.rewards)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackKind {
    Pairwise,
    /// Pairs split into desired (winner) and undesired (loser) labels.
    Binary,
    /// Groups of distinct responses scored with latent reward plus noise.
    Scalar { group_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelClass {
    Desired,
    Undesired,
}

/// Keeps only a fraction of one binary class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImbalanceSpec {
    pub class: LabelClass,
    pub keep: f64,
}

impl ImbalanceSpec {
    pub fn new(class: LabelClass, keep: f64) -> Result<Self> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(invalid(format!("keep fraction {keep} outside (0, 1]")));
        }
        Ok(Self { class, keep })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub kind: FeedbackKind,
    /// Pairs for pairwise and binary feedback (a binary split yields two
    /// labels per pair); groups for scalar feedback.
    pub n_records: usize,
    pub imbalance: Option<ImbalanceSpec>,
    /// Standard deviation of the scalar score noise; `None` means
    /// `0.1 · reward_scale`.
    pub noise: Option<f64>,
}

impl SampleConfig {
    pub fn new(kind: FeedbackKind, n_records: usize) -> Self {
        Self {
            kind,
            n_records,
            imbalance: None,
            noise: None,
        }
    }
}

fn draw(rng: &mut impl Rng, mu: &Distribution) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in mu.probs().iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    mu.len() - 1
}

/// Draws `y₁ ≠ y₂` from μ and labels the pair with the Bradley–Terry link.
fn sample_pairs(world: &WorldSpec, pref: &PreferenceMatrix, n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    (0..n)
        .map(|_| {
            let a = draw(rng, &world.mu);
            let b = loop {
                let b = draw(rng, &world.mu);
                if b != a {
                    break b;
                }
            };
            if rng.random_bool(pref.get(a, b)) {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect()
}

/// Samples a feedback dataset. Identical pairwise or binary records are
/// merged into counts in first-seen order.
pub fn sample_feedback(world: &WorldSpec, cfg: &SampleConfig, seed: u64) -> Result<FeedbackDataset> {
    if cfg.n_records == 0 {
        return Err(invalid("n_records must be at least 1"));
    }
    if cfg.imbalance.is_some() && cfg.kind != FeedbackKind::Binary {
        return Err(invalid("class imbalance applies to binary feedback only"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pref = true_preferences(world)?;
    match cfg.kind {
        FeedbackKind::Pairwise => {
            let pairs = sample_pairs(world, &pref, cfg.n_records, &mut rng);
            let records = merge(pairs.into_iter())
                .into_iter()
                .map(|((winner, loser), count)| PairRecord { winner, loser, count })
                .collect();
            Ok(PairwiseDataset::new(world.space.clone(), records)?.into())
        }
        FeedbackKind::Binary => {
            let pairs = sample_pairs(world, &pref, cfg.n_records, &mut rng);
            let mut units: Vec<(usize, bool)> = pairs.iter().flat_map(|&(w, l)| [(w, true), (l, false)]).collect();
            if let Some(imb) = cfg.imbalance {
                let target = imb.class == LabelClass::Desired;
                let (mut class, rest): (Vec<_>, Vec<_>) = units.into_iter().partition(|u| u.1 == target);
                let keep = (imb.keep * class.len() as f64).round() as usize;
                if keep == 0 {
                    return Err(Error::EmptyClass(format!(
                        "keeping {} of {} {} labels leaves none",
                        imb.keep,
                        class.len(),
                        if target { "desired" } else { "undesired" }
                    )));
                }
                // Partial Fisher–Yates: the first `keep` entries are a uniform subset.
                for i in 0..keep {
                    let j = rng.random_range(i..class.len());
                    class.swap(i, j);
                }
                class.truncate(keep);
                units = rest;
                units.extend(class);
            }
            let records = merge(units.into_iter())
                .into_iter()
                .map(|((response, desired), count)| BinaryRecord {
                    response,
                    desired,
                    count,
                })
                .collect();
            Ok(BinaryDataset::new(world.space.clone(), records)?.into())
        }
        FeedbackKind::Scalar { group_size } => {
            if group_size < 2 || group_size > world.space.len() {
                return Err(invalid(format!(
                    "group size {group_size} must be in 2..={}",
                    world.space.len()
                )));
            }
            let noise = cfg.noise.unwrap_or(0.1 * world.reward_scale);
            if !(noise >= 0.0) || !noise.is_finite() {
                return Err(invalid("scalar noise must be finite and non-negative"));
            }
            let mut records = Vec::with_capacity(cfg.n_records * group_size);
            for _ in 0..cfg.n_records {
                let mut seen = Vec::with_capacity(group_size);
                while seen.len() < group_size {
                    let y = draw(&mut rng, &world.mu);
                    if !seen.contains(&y) {
                        seen.push(y);
                    }
                }
                for y in seen {
                    let eps: f64 = rng.sample(StandardNormal);
                    records.push(ScalarRecord {
                        response: y,
                        score: world.rewards[y] + noise * eps,
                        count: 1,
                    });
                }
            }
            Ok(ScalarDataset::new(world.space.clone(), records, group_size)?.into())
        }
    }
}

fn merge<K: Ord + Copy>(items: impl Iterator<Item = K>) -> Vec<(K, u64)> {
    let mut order = Vec::new();
    let mut counts: BTreeMap<K, u64> = BTreeMap::new();
    for k in items {
        let c = counts.entry(k).or_insert(0);
        if *c == 0 {
            order.push(k);
        }
        *c += 1;
    }
    order.into_iter().map(|k| (k, counts[&k])).collect()
}

/// Hyperparameters for building a loss from a world and a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub beta: f64,
    pub alpha: f64,
    /// Pin the hyper reward to zero (PRO family).
    pub pin: bool,
    /// Class reweighting for PRO-B.
    pub reweight: bool,
    /// Mixture weight of the global PRO-P form; `None` selects the
    /// per-record form.
    pub eta: Option<f64>,
    pub kto: KtoParams,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            beta: DEFAULT_BETA,
            alpha: DEFAULT_ALPHA,
            pin: true,
            reweight: false,
            eta: None,
            kto: KtoParams::default(),
        }
    }
}

/// Builds a loss of `cfg.kind` on the world's space. Pairwise data is
/// binarized for PRO-B; eDPO and PRO use the world's μ (collapsed for PRO);
/// population DPO ignores the dataset and uses the world's true preferences.
pub fn build_spec(
    cfg: &LossConfig,
    world: &WorldSpec,
    reference: Distribution,
    data: &FeedbackDataset,
) -> Result<LossSpec> {
    let pairwise = || match data {
        FeedbackDataset::Pairwise(d) => Ok(d.clone()),
        other => Err(invalid(format!("{} needs pairwise feedback, got {}", cfg.kind, other.kind_name()))),
    };
    let body = match cfg.kind {
        LossKind::DpoSample => LossBody::DpoSample { data: pairwise()? },
        LossKind::DpoPopulation => LossBody::DpoPopulation {
            pref: true_preferences(world)?,
            mu: world.mu.clone(),
        },
        LossKind::Edpo => LossBody::Edpo(Proximal::from_dataset(cfg.alpha, data, world.mu.clone())?),
        LossKind::Pro => {
            let hyper = HyperSpace::unobserved(world.space.clone(), &data.labeled_mask())?;
            let mu = hyper_mass(&world.mu, &hyper)?;
            LossBody::Pro {
                prox: Proximal::from_dataset_collapsed(cfg.alpha, data, &hyper, mu)?,
                hyper,
                pin: cfg.pin,
            }
        }
        LossKind::ProP => {
            let data = pairwise()?;
            let form = match cfg.eta {
                None => ProPForm::PerRecord,
                Some(eta) => {
                    let labeled = FeedbackDataset::Pairwise(data.clone()).labeled_mask();
                    let hyper = HyperSpace::unobserved(world.space.clone(), &labeled)?;
                    let config = HyperConfig::on_hyper(eta, &hyper)?;
                    ProPForm::Global { hyper, config }
                }
            };
            LossBody::ProP {
                data,
                pin: cfg.pin,
                form,
            }
        }
        LossKind::ProB => LossBody::ProB {
            data: match data {
                FeedbackDataset::Binary(d) => d.clone(),
                FeedbackDataset::Pairwise(d) => d.binarize(),
                FeedbackDataset::Scalar(_) => return Err(invalid("PRO-B needs binary or pairwise feedback")),
            },
            alpha: cfg.alpha,
            pin: cfg.pin,
            reweight: cfg.reweight,
        },
        LossKind::ProS => match data {
            FeedbackDataset::Scalar(d) => LossBody::ProS {
                data: d.clone(),
                alpha: cfg.alpha,
                pin: cfg.pin,
            },
            other => return Err(invalid(format!("PRO-S needs scalar feedback, got {}", other.kind_name()))),
        },
        LossKind::Kto => LossBody::Kto {
            data: data.clone(),
            params: cfg.kto,
        },
    };
    LossSpec::new(cfg.beta, reference, body)
}

/// Count weights of the response groups a trajectory follows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedSets {
    pub preferred: Vec<f64>,
    pub dispreferred: Vec<f64>,
    pub desired: Vec<f64>,
    pub undesired: Vec<f64>,
    /// Responses that appear in the data, in index order.
    pub labeled: Vec<usize>,
}

impl TrackedSets {
    /// Pairwise: winners are preferred and desired, losers dispreferred and
    /// undesired. Binary: labels fill both roles. Scalar: the top and bottom
    /// score of each group are preferred and dispreferred; scores above the
    /// group mean are desired, the rest undesired.
    pub fn from_dataset(data: &FeedbackDataset) -> Self {
        let n = data.space().len();
        let mut t = TrackedSets {
            preferred: vec![0.0; n],
            dispreferred: vec![0.0; n],
            desired: vec![0.0; n],
            undesired: vec![0.0; n],
            labeled: Vec::new(),
        };
        match data {
            FeedbackDataset::Pairwise(d) => {
                for r in d.records() {
                    t.preferred[r.winner] += r.count as f64;
                    t.dispreferred[r.loser] += r.count as f64;
                }
                t.desired = t.preferred.clone();
                t.undesired = t.dispreferred.clone();
            }
            FeedbackDataset::Binary(d) => {
                for r in d.records() {
                    let slot = if r.desired { &mut t.desired } else { &mut t.undesired };
                    slot[r.response] += r.count as f64;
                }
                t.preferred = t.desired.clone();
                t.dispreferred = t.undesired.clone();
            }
            FeedbackDataset::Scalar(d) => {
                for g in d.groups() {
                    let mean = g.iter().map(|r| r.score).sum::<f64>() / g.len() as f64;
                    let top = g.iter().max_by(|a, b| a.score.total_cmp(&b.score)).expect("non-empty group");
                    let bottom = g.iter().min_by(|a, b| a.score.total_cmp(&b.score)).expect("non-empty group");
                    t.preferred[top.response] += top.count as f64;
                    t.dispreferred[bottom.response] += bottom.count as f64;
                    for r in g {
                        let slot = if r.score > mean { &mut t.desired } else { &mut t.undesired };
                        slot[r.response] += r.count as f64;
                    }
                }
            }
        }
        t.labeled = data
            .labeled_mask()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(i, _)| i)
            .collect();
        t
    }

    /// Sets from the dataset a loss closes over; empty when it has none.
    pub fn from_spec(spec: &LossSpec) -> Self {
        let data: Option<FeedbackDataset> = match spec.body() {
            LossBody::DpoSample { data } | LossBody::ProP { data, .. } => Some(data.clone().into()),
            LossBody::ProB { data, .. } => Some(data.clone().into()),
            LossBody::ProS { data, .. } => Some(data.clone().into()),
            LossBody::Kto { data, .. } => Some(data.clone()),
            _ => None,
        };
        match data {
            Some(d) if same_len(&d, spec) => Self::from_dataset(&d),
            _ => {
                let n = spec.reference().len();
                TrackedSets {
                    preferred: vec![0.0; n],
                    dispreferred: vec![0.0; n],
                    desired: vec![0.0; n],
                    undesired: vec![0.0; n],
                    labeled: Vec::new(),
                }
            }
        }
    }
}

fn same_len(d: &FeedbackDataset, spec: &LossSpec) -> bool {
    d.space().len() == spec.reference().len()
}

/// Weighted mean of `values`; 0 for an empty set.
fn weighted_mean(weights: &[f64], values: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    weights.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / total
}

/// One trajectory row.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub logp_preferred: f64,
    pub logp_dispreferred: f64,
    pub logp_desired: f64,
    pub logp_undesired: f64,
    /// Mean implicit reward `β log(π/π_ref)` of preferred responses.
    pub reward_preferred: f64,
    pub reward_dispreferred: f64,
    /// `π(H)` for H = responses absent from the data.
    pub hyper_mass: f64,
    /// Implicit reward of each tracked (labeled) response.
    pub rewards: Vec<f64>,
}

/// Fixed column order of the trajectory CSV.
pub const TRAJECTORY_COLUMNS: [&str; 11] = [
    "step",
    "loss",
    "grad_norm",
    "logp_preferred",
    "logp_dispreferred",
    "logp_desired",
    "logp_undesired",
    "reward_preferred",
    "reward_dispreferred",
    "margin",
    "hyper_mass",
];

impl StepRecord {
    pub fn margin(&self) -> f64 {
        self.reward_preferred - self.reward_dispreferred
    }

    fn row(&self) -> [f64; 11] {
        [
            self.step as f64,
            self.loss,
            self.grad_norm,
            self.logp_preferred,
            self.logp_dispreferred,
            self.logp_desired,
            self.logp_undesired,
            self.reward_preferred,
            self.reward_dispreferred,
            self.margin(),
            self.hyper_mass,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kind: LossKind,
    pub seed: u64,
    pub lr: f64,
    /// Labeled responses whose implicit rewards are recorded, in index order.
    pub tracked: Vec<usize>,
    pub records: Vec<StepRecord>,
    /// Full `log π` at every recorded step.
    pub log_probs: Vec<Vec<f64>>,
    /// Set when a non-finite loss or gradient cut the run short.
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> &StepRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("trajectories hold at least step 0")
    }

    /// CSV with [`TRAJECTORY_COLUMNS`], one row per step.
    pub fn to_csv(&self) -> String {
        let mut out = TRAJECTORY_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let row = r.row();
            out.push_str(&r.step.to_string());
            for v in &row[1..] {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Long-format CSV `step,response,reward` of per-response implicit rewards.
    pub fn rewards_csv(&self, space: &ResponseSpace) -> String {
        let mut out = String::from("step,response,reward\n");
        for r in &self.records {
            for (k, &y) in self.tracked.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", r.step, space.id(y), r.rewards[k]));
            }
        }
        out
    }
}

/// Full-batch gradient descent with a fixed learning rate.
///
/// Records `steps + 1` rows (step 0 is the initial policy). A non-finite loss
/// or gradient ends the run early with `diverged` set. The descent itself is
/// deterministic; `seed` is carried into the trajectory for bookkeeping.
pub fn train<P: Policy + Clone>(policy_init: &P, spec: &LossSpec, steps: usize, lr: f64, seed: u64) -> Result<Trajectory> {
    if steps == 0 {
        return Err(invalid("steps must be at least 1"));
    }
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(invalid("learning rate must be finite and non-negative"));
    }
    if policy_init.space().ids() != spec.reference().space().ids() {
        return Err(invalid("policy and loss live on different spaces"));
    }
    let sets = TrackedSets::from_spec(spec);
    let ref_lp = spec.reference().log_probs();
    let beta = spec.beta();
    let labeled_mask: Vec<bool> = (0..ref_lp.len()).map(|y| sets.labeled.contains(&y)).collect();
    let mut policy = policy_init.clone();
    let mut traj = Trajectory {
        kind: spec.kind(),
        seed,
        lr,
        tracked: sets.labeled.clone(),
        records: Vec::with_capacity(steps + 1),
        log_probs: Vec::with_capacity(steps + 1),
        diverged: false,
    };
    for step in 0..=steps {
        let lv = match spec.evaluate(&policy) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) | Err(Error::NumericalDomain(_)) => {
                traj.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let grad_norm = lv.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        let lp = policy.log_probs();
        if !grad_norm.is_finite() || lp.iter().any(|l| !l.is_finite()) {
            traj.diverged = true;
            break;
        }
        let reward: Vec<f64> = lp.iter().zip(&ref_lp).map(|(a, b)| beta * (a - b)).collect();
        let h_mass: f64 = lp
            .iter()
            .zip(&labeled_mask)
            .filter(|(_, &l)| !l)
            .map(|(l, _)| l.exp())
            .sum();
        traj.records.push(StepRecord {
            step,
            loss: lv.value,
            grad_norm,
            logp_preferred: weighted_mean(&sets.preferred, &lp),
            logp_dispreferred: weighted_mean(&sets.dispreferred, &lp),
            logp_desired: weighted_mean(&sets.desired, &lp),
            logp_undesired: weighted_mean(&sets.undesired, &lp),
            reward_preferred: weighted_mean(&sets.preferred, &reward),
            reward_dispreferred: weighted_mean(&sets.dispreferred, &reward),
            hyper_mass: h_mass,
            rewards: sets.labeled.iter().map(|&y| reward[y]).collect(),
        });
        traj.log_probs.push(lp);
        if step < steps {
            for (p, g) in policy.params_mut().iter_mut().zip(&lv.gradient) {
                *p -= lr * g;
            }
        }
    }
    if traj.records.is_empty() {
        return Err(crate::error::non_finite("train", "the initial loss is not finite"));
    }
    Ok(traj)
}

/// Initial, final and extremal values of one tracked series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSummary {
    pub initial: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
}

impl SeriesSummary {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        SeriesSummary {
            initial: v[0],
            last: v[v.len() - 1],
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn delta(&self) -> f64 {
        self.last - self.initial
    }
}

/// Names of the summarised series, in report order.
pub const SERIES: [&str; 9] = [
    "loss",
    "logp_preferred",
    "logp_dispreferred",
    "logp_desired",
    "logp_undesired",
    "reward_preferred",
    "reward_dispreferred",
    "hyper_mass",
    "expected_reward",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub kind: LossKind,
    pub seed: u64,
    pub steps: usize,
    pub diverged: bool,
    /// One summary per entry of [`SERIES`].
    pub series: Vec<(String, SeriesSummary)>,
    /// Fraction of last-quartile steps with mean preferred reward below 0.
    pub last_quartile_negative: f64,
    /// Fraction of last-quartile steps with mean preferred reward above 0.
    pub last_quartile_positive: f64,
}

impl Diagnostics {
    pub fn get(&self, name: &str) -> Option<&SeriesSummary> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// `key value` lines; series appear as `<name>.<initial|final|min|max|delta>`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "kind {}\nseed {}\nsteps {}\ndiverged {}\nlast_quartile_negative {}\nlast_quartile_positive {}\n",
            self.kind, self.seed, self.steps, self.diverged, self.last_quartile_negative, self.last_quartile_positive
        );
        for (name, s) in &self.series {
            out.push_str(&format!(
                "{name}.initial {}\n{name}.final {}\n{name}.min {}\n{name}.max {}\n{name}.delta {}\n",
                s.initial,
                s.last,
                s.min,
                s.max,
                s.delta()
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(' ').ok_or(Error::Parse {
                line: k + 1,
                message: "expected 'key value'".into(),
            })?;
            map.insert(key.to_string(), value.trim().to_string());
        }
        let get = |key: &str| {
            map.get(key).ok_or(Error::Parse {
                line: 0,
                message: format!("missing key {key}"),
            })
        };
        let num = |key: &str| -> Result<f64> {
            get(key)?.parse::<f64>().map_err(|_| Error::Parse {
                line: 0,
                message: format!("bad number for {key}"),
            })
        };
        let bad = |key: &str| Error::Parse {
            line: 0,
            message: format!("bad value for {key}"),
        };
        let mut series = Vec::new();
        for name in SERIES {
            series.push((
                name.to_string(),
                SeriesSummary {
                    initial: num(&format!("{name}.initial"))?,
                    last: num(&format!("{name}.final"))?,
                    min: num(&format!("{name}.min"))?,
                    max: num(&format!("{name}.max"))?,
                },
            ));
        }
        Ok(Diagnostics {
            kind: get("kind")?.parse().map_err(|_| bad("kind"))?,
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            steps: get("steps")?.parse().map_err(|_| bad("steps"))?,
            diverged: get("diverged")?.parse().map_err(|_| bad("diverged"))?,
            series,
            last_quartile_negative: num("last_quartile_negative")?,
            last_quartile_positive: num("last_quartile_positive")?,
        })
    }
}

/// Summarises a trajectory against the world it was trained in.
pub fn diagnostics(traj: &Trajectory, world: &WorldSpec) -> Result<Diagnostics> {
    if traj.is_empty() {
        return Err(Error::EmptyInput("empty trajectory".into()));
    }
    if traj.log_probs.iter().any(|lp| lp.len() != world.rewards.len()) {
        return Err(invalid("trajectory does not match the world"));
    }
    let r = &traj.records;
    let pick: [fn(&StepRecord) -> f64; 8] = [
        |s| s.loss,
        |s| s.logp_preferred,
        |s| s.logp_dispreferred,
        |s| s.logp_desired,
        |s| s.logp_undesired,
        |s| s.reward_preferred,
        |s| s.reward_dispreferred,
        |s| s.hyper_mass,
    ];
    let mut series: Vec<(String, SeriesSummary)> = SERIES[..8]
        .iter()
        .zip(pick)
        .map(|(name, f)| (name.to_string(), SeriesSummary::of(r.iter().map(f))))
        .collect();
    series.push((
        "expected_reward".into(),
        SeriesSummary::of(traj.log_probs.iter().map(|lp| world.expected_reward(lp))),
    ));
    let start = r.len() - (r.len() / 4).max(1);
    let tail = &r[start..];
    let frac = |f: fn(f64) -> bool| tail.iter().filter(|s| f(s.reward_preferred)).count() as f64 / tail.len() as f64;
    Ok(Diagnostics {
        kind: traj.kind,
        seed: traj.seed,
        steps: r.len() - 1,
        diverged: traj.diverged,
        series,
        last_quartile_negative: frac(|x| x < 0.0),
        last_quartile_positive: frac(|x| x > 0.0),
    })
}

/// Settings of the paired DPO / PRO-P likelihood-dynamics runs.
///
/// β defaults to 1 rather than the demo 0.1: at 0.1 the implicit rewards
/// reached in 500 steps stay where the PRO-P regularizer is nearly flat.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    pub vocab: usize,
    pub length: usize,
    pub pairs: usize,
    pub steps: usize,
    pub lr: f64,
    pub beta: f64,
    pub reward_scale: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            vocab: 3,
            length: 3,
            pairs: 40,
            steps: 500,
            lr: 1.0,
            beta: 1.0,
            reward_scale: 1.0,
        }
    }
}

/// Seeds of the standard autoregressive world suite.
pub const DYNAMICS_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Sample DPO and PRO-P trained from the same uniform autoregressive policy
/// on the same world and data.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRun {
    pub world: WorldSpec,
    pub data: FeedbackDataset,
    pub dpo: Trajectory,
    pub pro_p: Trajectory,
}

pub fn paired_dynamics(seed: u64, cfg: &DynamicsConfig) -> Result<PairedRun> {
    let world = gen_world(
        sub_seed(seed, "world"),
        WorldShape::Sequence {
            vocab: cfg.vocab,
            length: cfg.length,
        },
        cfg.reward_scale,
    )?;
    let data = sample_feedback(
        &world,
        &SampleConfig::new(FeedbackKind::Pairwise, cfg.pairs),
        sub_seed(seed, "data"),
    )?;
    let init = world.uniform_policy()?;
    let reference = init.distribution()?;
    let run = |kind| -> Result<Trajectory> {
        let mut lc = LossConfig::new(kind);
        lc.beta = cfg.beta;
        let spec = build_spec(&lc, &world, reference.clone(), &data)?;
        train(&init, &spec, cfg.steps, cfg.lr, sub_seed(seed, "train"))
    };
    Ok(PairedRun {
        dpo: run(LossKind::DpoSample)?,
        pro_p: run(LossKind::ProP)?,
        world,
        data,
    })
}

/// Settings of the PRO-B class-imbalance sweep. The learning rate is small
/// because class reweighting scales the desired records by about 100.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceConfig {
    pub shape: WorldShape,
    pub pairs: usize,
    pub keep: f64,
    pub alphas: Vec<f64>,
    pub steps: usize,
    pub lr: f64,
    pub beta: f64,
    /// Scale each class to equal total weight.
    pub reweight: bool,
    pub reward_scale: f64,
}

impl Default for ImbalanceConfig {
    fn default() -> Self {
        Self {
            shape: WorldShape::Sequence { vocab: 3, length: 3 },
            pairs: 2000,
            keep: 0.01,
            alphas: vec![2.5, 10.0, 17.5, 25.0],
            steps: 500,
            lr: 0.1,
            beta: 1.0,
            reweight: true,
            reward_scale: 1.0,
        }
    }
}

/// Final expected latent reward of PRO-B for each α, on one world and one
/// desired-starved dataset.
pub fn imbalance_sweep(seed: u64, cfg: &ImbalanceConfig) -> Result<Vec<(f64, f64)>> {
    let world = gen_world(sub_seed(seed, "world"), cfg.shape, cfg.reward_scale)?;
    let mut sc = SampleConfig::new(FeedbackKind::Binary, cfg.pairs);
    sc.imbalance = Some(ImbalanceSpec::new(LabelClass::Desired, cfg.keep)?);
    let data = sample_feedback(&world, &sc, sub_seed(seed, "data"))?;
    let init = world.uniform_policy()?;
    let reference = init.distribution()?;
    cfg.alphas
        .iter()
        .map(|&alpha| {
            let mut lc = LossConfig::new(LossKind::ProB);
            lc.alpha = alpha;
            lc.beta = cfg.beta;
            lc.reweight = cfg.reweight;
            let spec = build_spec(&lc, &world, reference.clone(), &data)?;
            let traj = train(&init, &spec, cfg.steps, cfg.lr, sub_seed(seed, "train"))?;
            Ok((alpha, world.expected_reward(traj.log_probs.last().expect("non-empty"))))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world6() -> WorldSpec {
        gen_world(7, WorldShape::Tabular(6), 1.0).unwrap()
    }

    #[test]
    fn gen_world_examples() {
        let w = gen_world(3, WorldShape::Tabular(6), 0.0).unwrap();
        assert!(w.rewards.iter().all(|&r| r == 0.0));
        assert_eq!(world6(), world6());
        assert_ne!(world6().rewards, gen_world(8, WorldShape::Tabular(6), 1.0).unwrap().rewards);
        assert!(gen_world(0, WorldShape::Tabular(1), 1.0).is_err());
        let seq = gen_world(1, WorldShape::Sequence { vocab: 3, length: 3 }, 1.0).unwrap();
        assert_eq!(seq.space.len(), 27);
    }

    #[test]
    fn world_text_round_trip() {
        let w = gen_world(5, WorldShape::Sequence { vocab: 2, length: 2 }, 0.7).unwrap();
        assert_eq!(WorldSpec::parse(&w.to_text()).unwrap(), w);
        let t = world6();
        assert_eq!(WorldSpec::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn true_preference_examples() {
        let space = Arc::new(ResponseSpace::indexed(2).unwrap());
        let w = WorldSpec::new(WorldShape::Tabular(2), vec![4f64.ln(), 0.0], Distribution::uniform(space), 1.0, 0)
            .unwrap();
        let p = true_preferences(&w).unwrap();
        assert!((p.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(p.get(0, 0), 0.5);
    }

    #[test]
    fn sample_feedback_examples() {
        let w = world6();
        let one = sample_feedback(&w, &SampleConfig::new(FeedbackKind::Pairwise, 1), 0).unwrap();
        assert_eq!(one.num_records(), 1);
        let cfg = SampleConfig::new(FeedbackKind::Scalar { group_size: 4 }, 3);
        let FeedbackDataset::Scalar(s) = sample_feedback(&w, &cfg, 1).unwrap() else {
            panic!("scalar kind")
        };
        assert_eq!(s.records().len(), 12);
        assert_eq!(s.groups().count(), 3);
        assert!(s.records().iter().any(|r| r.score != w.rewards[r.response]));
        let a = sample_feedback(&w, &cfg, 9).unwrap();
        assert_eq!(a, sample_feedback(&w, &cfg, 9).unwrap());
        assert!(sample_feedback(&w, &SampleConfig::new(FeedbackKind::Pairwise, 0), 0).is_err());
    }

    #[test]
    fn imbalance_keeps_the_requested_fraction() {
        let w = world6();
        let mut cfg = SampleConfig::new(FeedbackKind::Binary, 1000);
        cfg.imbalance = Some(ImbalanceSpec::new(LabelClass::Desired, 0.01).unwrap());
        let FeedbackDataset::Binary(b) = sample_feedback(&w, &cfg, 2).unwrap() else {
            panic!("binary kind")
        };
        assert_eq!(b.class_counts(), (10, 1000));
        cfg.n_records = 10;
        assert!(matches!(sample_feedback(&w, &cfg, 2), Err(Error::EmptyClass(_))));
        assert!(ImbalanceSpec::new(LabelClass::Undesired, 0.0).is_err());
        assert!(ImbalanceSpec::new(LabelClass::Undesired, 1.0).is_ok());
    }

    fn small_run(lr: f64, steps: usize) -> Trajectory {
        let w = world6();
        let data = sample_feedback(&w, &SampleConfig::new(FeedbackKind::Pairwise, 8), 3).unwrap();
        let init = w.uniform_policy().unwrap();
        let spec = build_spec(&LossConfig::new(LossKind::DpoSample), &w, init.distribution().unwrap(), &data).unwrap();
        train(&init, &spec, steps, lr, 0).unwrap()
    }

    #[test]
    fn train_examples() {
        assert_eq!(small_run(0.5, 1).len(), 2);
        let flat = small_run(0.0, 5);
        assert!(flat.records.windows(2).all(|w| {
            let (a, b) = (&w[0], &w[1]);
            a.loss == b.loss && a.logp_preferred == b.logp_preferred && a.rewards == b.rewards
        }));
        let d = diagnostics(&flat, &world6()).unwrap();
        assert!(d.series.iter().all(|(_, s)| s.delta() == 0.0));
        assert_eq!(small_run(0.5, 20), small_run(0.5, 20));
        let w = world6();
        let init = w.uniform_policy().unwrap();
        let data = sample_feedback(&w, &SampleConfig::new(FeedbackKind::Pairwise, 8), 3).unwrap();
        let spec = build_spec(&LossConfig::new(LossKind::DpoSample), &w, init.distribution().unwrap(), &data).unwrap();
        assert!(train(&init, &spec, 0, 0.1, 0).is_err());
    }

    #[test]
    fn divergence_truncates() {
        // The exact hyper reward leaves its domain once the compared pair
        // absorbs all the mass.
        let w = world6();
        let data = sample_feedback(&w, &SampleConfig::new(FeedbackKind::Pairwise, 1), 3).unwrap();
        let init = w.uniform_policy().unwrap();
        let mut lc = LossConfig::new(LossKind::ProP);
        lc.pin = false;
        let spec = build_spec(&lc, &w, init.distribution().unwrap(), &data).unwrap();
        let t = train(&init, &spec, 5, 1e6, 0).unwrap();
        assert!(t.diverged);
        assert!(t.len() < 6);
        assert!(t.records.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn csv_has_fixed_columns() {
        let t = small_run(0.5, 3);
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRAJECTORY_COLUMNS.join(","));
        assert_eq!(lines.count(), 4);
        let rows = t.rewards_csv(&world6().space);
        assert_eq!(rows.lines().count(), 1 + 4 * t.tracked.len());
    }

    #[test]
    fn diagnostics_text_round_trip() {
        let t = small_run(0.5, 7);
        let d = diagnostics(&t, &world6()).unwrap();
        let back = Diagnostics::parse(&d.to_text()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn sub_seeds_differ_by_label() {
        assert_ne!(sub_seed(1, "world"), sub_seed(1, "data"));
        assert_eq!(sub_seed(1, "world"), sub_seed(1, "world"));
    }

    #[test]
    fn shape_parsing() {
        assert_eq!("tabular:6".parse::<WorldShape>().unwrap(), WorldShape::Tabular(6));
        let s: WorldShape = "sequence:3x2".parse().unwrap();
        assert_eq!(s, WorldShape::Sequence { vocab: 3, length: 2 });
        assert_eq!(s.to_string().parse::<WorldShape>().unwrap(), s);
        assert!("grid:3".parse::<WorldShape>().is_err());
    }
}
