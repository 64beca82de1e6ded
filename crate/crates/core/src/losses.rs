//! Preference-alignment losses and their analytic gradients.
//!
//! Every loss is a function of the policy's log-probability vector. Each one
//! computes `∂L/∂log π` and hands it to [`Policy::backward`], so tabular and
//! autoregressive policies share one implementation. All losses are
//! quantities to minimize.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, non_finite, Error, Result};
use crate::feedback::{
    BinaryDataset, FeedbackDataset, PairwiseDataset, PreferenceMatrix, ScalarDataset, ScoreMap,
};
use crate::hyper::{augmented_preference, mu_bar, HyperConfig, HyperSpace};
use crate::numeric::{kl_bernoulli_half_grad, kl_bernoulli_half_unchecked, log_sigmoid_unchecked, sigmoid};
use crate::policy::Policy;
use crate::space::{same_space, Distribution};

/// Default regularization strength for the binary and scalar PRO losses.
pub const DEFAULT_ALPHA: f64 = 2.5;
/// Default demo inverse temperature.
pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    DpoSample,
    DpoPopulation,
    Edpo,
    Pro,
    ProP,
    ProB,
    ProS,
    Kto,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::DpoSample,
        LossKind::DpoPopulation,
        LossKind::Edpo,
        LossKind::Pro,
        LossKind::ProP,
        LossKind::ProB,
        LossKind::ProS,
        LossKind::Kto,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::DpoSample => "dpo",
            LossKind::DpoPopulation => "dpo-pop",
            LossKind::Edpo => "edpo",
            LossKind::Pro => "pro",
            LossKind::ProP => "pro-p",
            LossKind::ProB => "pro-b",
            LossKind::ProS => "pro-s",
            LossKind::Kto => "kto",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown loss kind `{s}`")))
    }
}

/// Which form of the KTO sigmoid is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KtoSign {
    /// `λ_D σ(β(r_w − z₀)) + λ_U σ(β(z₀ − r_l))`, taken literally.
    AsPrinted,
    /// `λ_D (1 − σ(β(r_w − z₀))) + λ_U (1 − σ(β(z₀ − r_l)))`, the
    /// utility-maximizing reading.
    Utility,
}

impl KtoSign {
    pub fn name(self) -> &'static str {
        match self {
            KtoSign::AsPrinted => "as-printed",
            KtoSign::Utility => "utility",
        }
    }
}

impl FromStr for KtoSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-printed" => Ok(KtoSign::AsPrinted),
            "utility" => Ok(KtoSign::Utility),
            _ => Err(invalid(format!("unknown KTO sign mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KtoParams {
    pub z0: f64,
    pub lambda_d: f64,
    pub lambda_u: f64,
    pub sign_mode: KtoSign,
}

impl Default for KtoParams {
    fn default() -> Self {
        Self {
            z0: 0.0,
            lambda_d: 1.0,
            lambda_u: 1.0,
            sign_mode: KtoSign::Utility,
        }
    }
}

/// Data of the optimizer/regularizer decomposition: `α`, `ŝ`, `μ̂`, and the
/// regularization distribution `μ`, all on one space.
#[derive(Debug, Clone, PartialEq)]
pub struct Proximal {
    pub alpha: f64,
    pub score: ScoreMap,
    pub mu_hat: Distribution,
    pub mu: Distribution,
}

impl Proximal {
    pub fn new(alpha: f64, score: ScoreMap, mu_hat: Distribution, mu: Distribution) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(invalid("α must be positive and finite"));
        }
        if !same_space(score.space(), mu.space()) || !same_space(mu_hat.space(), mu.space()) {
            return Err(invalid("ŝ, μ̂ and μ must share one space"));
        }
        if !mu.is_strictly_positive() {
            return Err(invalid("μ must be strictly positive"));
        }
        Ok(Self {
            alpha,
            score,
            mu_hat,
            mu,
        })
    }

    /// ŝ and μ̂ taken from a dataset on the same space as `mu`.
    pub fn from_dataset(alpha: f64, data: &FeedbackDataset, mu: Distribution) -> Result<Self> {
        Self::new(alpha, data.empirical_score()?, data.empirical_response_dist()?, mu)
    }

    /// ŝ and μ̂ from a base-space dataset collapsed onto `Y_H`; `mu` lives on `Y_H`.
    pub fn from_dataset_collapsed(
        alpha: f64,
        data: &FeedbackDataset,
        hs: &HyperSpace,
        mu: Distribution,
    ) -> Result<Self> {
        let score = hs.collapse_score(&data.empirical_score()?)?;
        let mu_hat = crate::hyper::hyper_mass(&data.empirical_response_dist()?, hs)?;
        Self::new(alpha, score, mu_hat, mu)
    }
}

/// How PRO-P is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum ProPForm {
    /// Count-weighted mean over records, each with its own hyper response
    /// (every response other than the compared pair).
    PerRecord,
    /// `−(1/η²) E_{μ̄×μ̄}[p̄ log σ(r₁ − r₂)]` over a dataset-level `Y_H`.
    Global { hyper: HyperSpace, config: HyperConfig },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossBody {
    DpoSample {
        data: PairwiseDataset,
    },
    DpoPopulation {
        pref: PreferenceMatrix,
        mu: Distribution,
    },
    Edpo(Proximal),
    /// eDPO over `Y_H`. The policy may live on the base space (log-probabilities
    /// are collapsed) or directly on `hyper.collapsed()`.
    Pro {
        prox: Proximal,
        hyper: HyperSpace,
        pin: bool,
    },
    ProP {
        data: PairwiseDataset,
        pin: bool,
        form: ProPForm,
    },
    ProB {
        data: BinaryDataset,
        alpha: f64,
        pin: bool,
        reweight: bool,
    },
    ProS {
        data: ScalarDataset,
        alpha: f64,
        pin: bool,
    },
    /// Pairwise data, or binary data with desired/undesired records.
    Kto {
        data: FeedbackDataset,
        params: KtoParams,
    },
}

/// A loss identifier with its hyperparameters and the data it closes over.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    beta: f64,
    reference: Distribution,
    body: LossBody,
    /// Pair weights `W[i][j]` for losses of the form `−Σ W log σ(r_i − r_j)`.
    pair_weights: Option<Vec<f64>>,
}

/// A loss value with its gradient with respect to the policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl LossSpec {
    /// `reference` must live on the space the policy will live on.
    pub fn new(beta: f64, reference: Distribution, body: LossBody) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(invalid("β must be positive and finite"));
        }
        if !reference.is_strictly_positive() {
            return Err(invalid("the reference policy must be strictly positive"));
        }
        let rs = reference.space();
        let pair_weights = match &body {
            LossBody::DpoSample { data } => {
                check_space(data.space(), rs, "dataset")?;
                None
            }
            LossBody::DpoPopulation { pref, mu } => {
                check_space(pref.space(), rs, "preference matrix")?;
                check_space(mu.space(), rs, "μ")?;
                if !mu.is_strictly_positive() {
                    return Err(invalid("μ must be strictly positive"));
                }
                let n = mu.len();
                let mut w = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        w[i * n + j] = mu.prob(i) * mu.prob(j) * pref.get(i, j);
                    }
                }
                Some(w)
            }
            LossBody::Edpo(prox) => {
                check_space(prox.mu.space(), rs, "μ")?;
                None
            }
            LossBody::Pro { prox, hyper, .. } => {
                check_space(prox.mu.space(), hyper.collapsed(), "μ")?;
                if !same_space(rs, hyper.base()) && !same_space(rs, hyper.collapsed()) {
                    return Err(invalid("reference lives on neither Y nor Y_H"));
                }
                None
            }
            LossBody::ProP { data, form, .. } => {
                check_space(data.space(), rs, "dataset")?;
                match form {
                    ProPForm::PerRecord => None,
                    ProPForm::Global { hyper, config } => {
                        check_space(hyper.base(), rs, "hyper space")?;
                        Some(global_pro_p_weights(data, hyper, config)?)
                    }
                }
            }
            LossBody::ProB { data, alpha, .. } => {
                check_space(data.space(), rs, "dataset")?;
                check_alpha(*alpha)?;
                None
            }
            LossBody::ProS { data, alpha, .. } => {
                check_space(data.space(), rs, "dataset")?;
                check_alpha(*alpha)?;
                if data.group_size() < 2 {
                    return Err(invalid("PRO-S needs groups of at least 2 responses"));
                }
                for group in data.groups() {
                    let mut ids: Vec<usize> = group.iter().map(|r| r.response).collect();
                    ids.sort_unstable();
                    ids.dedup();
                    if ids.len() != group.len() {
                        return Err(invalid("a PRO-S group repeats a response"));
                    }
                }
                None
            }
            LossBody::Kto { data, params } => {
                check_space(data.space(), rs, "dataset")?;
                if matches!(data, FeedbackDataset::Scalar(_)) {
                    return Err(invalid("KTO takes pairwise or binary feedback"));
                }
                if !(params.z0 >= 0.0) || !(params.lambda_d > 0.0) || !(params.lambda_u > 0.0) {
                    return Err(invalid("KTO needs z₀ ≥ 0 and positive λ_D, λ_U"));
                }
                None
            }
        };
        Ok(Self {
            beta,
            reference,
            body,
            pair_weights,
        })
    }

    pub fn dpo_sample(beta: f64, reference: Distribution, data: PairwiseDataset) -> Result<Self> {
        Self::new(beta, reference, LossBody::DpoSample { data })
    }

    pub fn dpo_population(
        beta: f64,
        reference: Distribution,
        pref: PreferenceMatrix,
        mu: Distribution,
    ) -> Result<Self> {
        Self::new(beta, reference, LossBody::DpoPopulation { pref, mu })
    }

    pub fn edpo(beta: f64, reference: Distribution, prox: Proximal) -> Result<Self> {
        Self::new(beta, reference, LossBody::Edpo(prox))
    }

    pub fn pro(beta: f64, reference: Distribution, prox: Proximal, hyper: HyperSpace, pin: bool) -> Result<Self> {
        Self::new(beta, reference, LossBody::Pro { prox, hyper, pin })
    }

    pub fn kind(&self) -> LossKind {
        match self.body {
            LossBody::DpoSample { .. } => LossKind::DpoSample,
            LossBody::DpoPopulation { .. } => LossKind::DpoPopulation,
            LossBody::Edpo(_) => LossKind::Edpo,
            LossBody::Pro { .. } => LossKind::Pro,
            LossBody::ProP { .. } => LossKind::ProP,
            LossBody::ProB { .. } => LossKind::ProB,
            LossBody::ProS { .. } => LossKind::ProS,
            LossBody::Kto { .. } => LossKind::Kto,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reference(&self) -> &Distribution {
        &self.reference
    }

    pub fn body(&self) -> &LossBody {
        &self.body
    }

    /// Value and `∂L/∂log π` at the given log-probabilities.
    pub fn eval_log_probs(&self, logp: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ref_lp = self.reference.log_probs();
        if logp.len() != ref_lp.len() {
            return Err(invalid("log-probabilities do not match the reference space"));
        }
        let (value, grad) = match &self.body {
            LossBody::DpoSample { data } => self.dpo_sample_terms(data, logp, &ref_lp)?,
            LossBody::DpoPopulation { .. } => {
                let w = self.pair_weights.as_deref().expect("built in new");
                self.weighted_pairs(w, None, false, logp, &ref_lp)?
            }
            LossBody::Edpo(prox) => self.proximal_terms(prox, None, false, logp, &ref_lp)?,
            LossBody::Pro { prox, hyper, pin } => {
                self.proximal_terms(prox, Some(hyper), *pin, logp, &ref_lp)?
            }
            LossBody::ProP { data, pin, form } => match form {
                ProPForm::PerRecord => self.pro_p_terms(data, *pin, logp, &ref_lp)?,
                ProPForm::Global { hyper, .. } => {
                    let w = self.pair_weights.as_deref().expect("built in new");
                    self.weighted_pairs(w, Some(hyper), *pin, logp, &ref_lp)?
                }
            },
            LossBody::ProB {
                data,
                alpha,
                pin,
                reweight,
            } => self.pro_b_terms(data, *alpha, *pin, *reweight, logp, &ref_lp)?,
            LossBody::ProS { data, alpha, pin } => self.pro_s_terms(data, *alpha, *pin, logp, &ref_lp)?,
            LossBody::Kto { data, params } => self.kto_terms(data, params, logp, &ref_lp)?,
        };
        if !value.is_finite() {
            return Err(non_finite(self.kind().name(), format!("loss value {value}")));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(non_finite(self.kind().name(), format!("gradient entry {i} is {}", grad[i])));
        }
        Ok((value, grad))
    }

    /// Loss value only.
    pub fn value(&self, policy: &dyn Policy) -> Result<f64> {
        self.check_policy(policy)?;
        Ok(self.eval_log_probs(&policy.log_probs())?.0)
    }

    /// Value and analytic parameter gradient.
    pub fn evaluate(&self, policy: &dyn Policy) -> Result<LossValue> {
        self.check_policy(policy)?;
        let (value, g) = self.eval_log_probs(&policy.log_probs())?;
        Ok(LossValue {
            value,
            gradient: policy.backward(&g),
        })
    }

    fn check_policy(&self, policy: &dyn Policy) -> Result<()> {
        if !same_space(policy.space(), self.reference.space()) {
            return Err(invalid("policy and reference live on different spaces"));
        }
        Ok(())
    }

    fn rewards(&self, logp: &[f64], ref_lp: &[f64]) -> Vec<f64> {
        logp.iter().zip(ref_lp).map(|(p, r)| self.beta * (p - r)).collect()
    }

    /// Moves to the space the objective is defined on: `Y_H` when a hyper
    /// space is attached and the policy lives on its base, otherwise as is.
    /// Returns the log-probabilities, the reference log-probabilities, and
    /// the index of H if known.
    fn lift(
        &self,
        hyper: Option<&HyperSpace>,
        logp: &[f64],
        ref_lp: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Option<usize>)> {
        match hyper {
            Some(hs) if same_space(self.reference.space(), hs.base()) => Ok((
                hs.collapse_log_probs(logp)?,
                hs.collapse_log_probs(ref_lp)?,
                Some(hs.h_index()),
            )),
            Some(hs) => Ok((logp.to_vec(), ref_lp.to_vec(), Some(hs.h_index()))),
            None => Ok((logp.to_vec(), ref_lp.to_vec(), None)),
        }
    }

    fn lower(&self, hyper: Option<&HyperSpace>, logp: &[f64], grad_z: Vec<f64>) -> Result<Vec<f64>> {
        match hyper {
            Some(hs) if same_space(self.reference.space(), hs.base()) => {
                hs.expand_log_prob_grad(logp, &grad_z)
            }
            _ => Ok(grad_z),
        }
    }

    fn dpo_sample_terms(&self, data: &PairwiseDataset, logp: &[f64], ref_lp: &[f64]) -> Result<(f64, Vec<f64>)> {
        let total = data.total_count();
        if total == 0 {
            return Err(Error::EmptyInput("DPO needs at least one pair".into()));
        }
        let r = self.rewards(logp, ref_lp);
        let mut value = 0.0;
        let mut grad = vec![0.0; logp.len()];
        for rec in data.records() {
            let w = rec.count as f64 / total as f64;
            let margin = r[rec.winner] - r[rec.loser];
            value -= w * log_sigmoid_unchecked(margin);
            // Importance weight σ(r_l − r_w).
            let iw = sigmoid(-margin);
            grad[rec.winner] -= w * self.beta * iw;
            grad[rec.loser] += w * self.beta * iw;
        }
        Ok((value, grad))
    }

    /// `−Σ_{ij} W_ij log σ(r_i − r_j)` over the objective space.
    fn weighted_pairs(
        &self,
        w: &[f64],
        hyper: Option<&HyperSpace>,
        pin: bool,
        logp: &[f64],
        ref_lp: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        let (lz, rz, h) = self.lift(hyper, logp, ref_lp)?;
        let mut r = self.rewards(&lz, &rz);
        if pin {
            if let Some(h) = h {
                r[h] = 0.0;
            }
        }
        let n = lz.len();
        let mut value = 0.0;
        let mut dr = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let wij = w[i * n + j];
                if wij == 0.0 {
                    continue;
                }
                let d = r[i] - r[j];
                value -= wij * log_sigmoid_unchecked(d);
                let s = wij * sigmoid(-d);
                dr[i] -= s;
                dr[j] += s;
            }
        }
        let grad_z = self.reward_grad_to_logp(dr, h, pin);
        Ok((value, self.lower(hyper, logp, grad_z)?))
    }

    fn reward_grad_to_logp(&self, dr: Vec<f64>, h: Option<usize>, pin: bool) -> Vec<f64> {
        let mut g: Vec<f64> = dr.into_iter().map(|d| self.beta * d).collect();
        if pin {
            if let Some(h) = h {
                g[h] = 0.0;
            }
        }
        g
    }

    /// `−β E_μ̂[ŝ log π] + (α/2) E_{μ×μ}[KL(B(½) ‖ B(σ(r₁ − r₂)))]`.
    fn proximal_terms(
        &self,
        prox: &Proximal,
        hyper: Option<&HyperSpace>,
        pin: bool,
        logp: &[f64],
        ref_lp: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        let (lz, rz, h) = self.lift(hyper, logp, ref_lp)?;
        if lz.len() != prox.mu.len() {
            return Err(invalid("objective space does not match μ"));
        }
        let mut r = self.rewards(&lz, &rz);
        if pin {
            if let Some(h) = h {
                r[h] = 0.0;
            }
        }
        let n = lz.len();
        let mut value = 0.0;
        let mut g_opt = vec![0.0; n];
        for y in 0..n {
            let c = prox.mu_hat.prob(y) * prox.score.value(y);
            if c != 0.0 {
                value -= self.beta * c * lz[y];
                g_opt[y] = -self.beta * c;
            }
        }
        let mu = prox.mu.probs();
        let mut dr = vec![0.0; n];
        let mut reg = 0.0;
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                let d = r[i] - r[j];
                reg += mu[i] * mu[j] * kl_bernoulli_half_unchecked(d);
                acc += mu[j] * kl_bernoulli_half_grad(d);
            }
            // The (i, j) and (j, i) terms contribute equally.
            dr[i] = prox.alpha * mu[i] * acc;
        }
        value += 0.5 * prox.alpha * reg;
        let g_reg = self.reward_grad_to_logp(dr, h, pin);
        let grad_z: Vec<f64> = g_opt.iter().zip(&g_reg).map(|(a, b)| a + b).collect();
        Ok((value, self.lower(hyper, logp, grad_z)?))
    }

    /// Reward of the per-record hyper response made of every response not in
    /// `members`, and `∂r_H/∂log π(y)` for each listed member.
    fn local_hyper(&self, members: &[usize], logp: &[f64], ref_lp: &[f64], pin: bool) -> Result<(f64, Vec<f64>)> {
        if pin {
            return Ok((0.0, vec![0.0; members.len()]));
        }
        let outside = |lp: &[f64]| -> Result<f64> {
            let s: f64 = members.iter().map(|&y| lp[y].exp()).sum();
            if s >= 1.0 {
                return Err(Error::NumericalDomain(format!(
                    "labeled responses hold mass {s}; the hyper response is empty"
                )));
            }
            Ok(s)
        };
        let (sp, sr) = (outside(logp)?, outside(ref_lp)?);
        let log_h = (-sp).ln_1p();
        let r_h = self.beta * (log_h - (-sr).ln_1p());
        let d = members
            .iter()
            .map(|&y| -self.beta * (logp[y] - log_h).exp())
            .collect();
        Ok((r_h, d))
    }

    fn pro_p_terms(&self, data: &PairwiseDataset, pin: bool, logp: &[f64], ref_lp: &[f64]) -> Result<(f64, Vec<f64>)> {
        let total = data.total_count();
        if total == 0 {
            return Err(Error::EmptyInput("PRO-P needs at least one pair".into()));
        }
        let r = self.rewards(logp, ref_lp);
        let mut value = 0.0;
        let mut grad = vec![0.0; logp.len()];
        for rec in data.records() {
            let w = rec.count as f64 / total as f64;
            let members = [rec.winner, rec.loser];
            let (r_h, dh) = self.local_hyper(&members, logp, ref_lp, pin)?;
            let margin = r[rec.winner] - r[rec.loser];
            value -= w * log_sigmoid_unchecked(margin);
            let iw = sigmoid(-margin);
            grad[rec.winner] -= w * self.beta * iw;
            grad[rec.loser] += w * self.beta * iw;
            for &y in &members {
                let (v, dy, d_h) = half_pair(r[y] - r_h);
                value -= w * v;
                grad[y] -= w * (self.beta * dy);
                // r_H depends on both members through the aggregated mass.
                for (m, &z) in members.iter().enumerate() {
                    grad[z] -= w * d_h * dh[m];
                }
            }
        }
        Ok((value, grad))
    }

    fn pro_b_terms(
        &self,
        data: &BinaryDataset,
        alpha: f64,
        pin: bool,
        reweight: bool,
        logp: &[f64],
        ref_lp: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        let total = data.total_count();
        if total == 0 {
            return Err(Error::EmptyInput("PRO-B needs at least one record".into()));
        }
        let (desired, undesired) = data.class_counts();
        let r = self.rewards(logp, ref_lp);
        let mut value = 0.0;
        let mut grad = vec![0.0; logp.len()];
        for rec in data.records() {
            let class = if rec.desired { desired } else { undesired };
            let multiplier = if reweight { total as f64 / class as f64 } else { 1.0 };
            let w = multiplier * rec.count as f64 / total as f64;
            let y = rec.response;
            let (r_h, dh) = self.local_hyper(&[y], logp, ref_lp, pin)?;
            let (v, dy, d_h) = half_pair(r[y] - r_h);
            value -= w * self.beta * (rec.label() * logp[y] + alpha * v);
            grad[y] -= w * self.beta * (rec.label() + alpha * (self.beta * dy + d_h * dh[0]));
        }
        Ok((value, grad))
    }

    fn pro_s_terms(
        &self,
        data: &ScalarDataset,
        alpha: f64,
        pin: bool,
        logp: &[f64],
        ref_lp: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if data.records().is_empty() {
            return Err(Error::EmptyInput("PRO-S needs at least one group".into()));
        }
        let n = data.group_size();
        let nf = n as f64;
        let coef = 2.0 * alpha / (nf * (nf + 1.0));
        let r = self.rewards(logp, ref_lp);
        let weights: Vec<f64> = data
            .groups()
            .map(|g| g.iter().map(|rec| rec.count as f64).sum::<f64>() / nf)
            .collect();
        let total: f64 = weights.iter().sum();
        let mut value = 0.0;
        let mut grad = vec![0.0; logp.len()];
        for (group, gw) in data.groups().zip(&weights) {
            let w = gw / total;
            let ys: Vec<usize> = group.iter().map(|rec| rec.response).collect();
            let mean = group.iter().map(|rec| rec.score).sum::<f64>() / nf;
            let (r_h, dh) = self.local_hyper(&ys, logp, ref_lp, pin)?;
            let mut inner = 0.0;
            // ∂inner/∂log π(y), without the leading −β.
            let mut d_inner = vec![0.0; ys.len()];
            for (k, rec) in group.iter().enumerate() {
                let s = rec.score - mean;
                inner += s * logp[ys[k]] / nf;
                d_inner[k] += s / nf;
            }
            for a in 0..n {
                for b in (a + 1)..n {
                    let (v, da, _) = half_pair(r[ys[a]] - r[ys[b]]);
                    inner += coef * v;
                    d_inner[a] += coef * self.beta * da;
                    d_inner[b] -= coef * self.beta * da;
                }
            }
            for a in 0..n {
                let (v, da, d_h) = half_pair(r[ys[a]] - r_h);
                inner += coef * v;
                d_inner[a] += coef * self.beta * da;
                for (m, d) in d_inner.iter_mut().enumerate() {
                    *d += coef * d_h * dh[m];
                }
            }
            value -= w * self.beta * inner;
            for (k, &y) in ys.iter().enumerate() {
                grad[y] -= w * self.beta * d_inner[k];
            }
        }
        Ok((value, grad))
    }

    fn kto_terms(
        &self,
        data: &FeedbackDataset,
        params: &KtoParams,
        logp: &[f64],
        ref_lp: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        let r = self.rewards(logp, ref_lp);
        let mut terms: Vec<(usize, bool, f64)> = Vec::new();
        match data {
            FeedbackDataset::Pairwise(d) => {
                for rec in d.records() {
                    terms.push((rec.winner, true, rec.count as f64));
                    terms.push((rec.loser, false, rec.count as f64));
                }
            }
            FeedbackDataset::Binary(d) => {
                for rec in d.records() {
                    terms.push((rec.response, rec.desired, rec.count as f64));
                }
            }
            FeedbackDataset::Scalar(_) => return Err(invalid("KTO takes pairwise or binary feedback")),
        }
        // Pairwise expectations are per pair, binary ones per record.
        let total = match data {
            FeedbackDataset::Pairwise(d) => d.total_count() as f64,
            _ => terms.iter().map(|t| t.2).sum(),
        };
        if total == 0.0 {
            return Err(Error::EmptyInput("KTO needs at least one record".into()));
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; logp.len()];
        for (y, desired, count) in terms {
            let w = count / total;
            let (lambda, x, dx) = if desired {
                (params.lambda_d, self.beta * (r[y] - params.z0), self.beta * self.beta)
            } else {
                (params.lambda_u, self.beta * (params.z0 - r[y]), -self.beta * self.beta)
            };
            let s = sigmoid(x);
            let ds = s * sigmoid(-x);
            match params.sign_mode {
                KtoSign::AsPrinted => {
                    value += w * lambda * s;
                    grad[y] += w * lambda * ds * dx;
                }
                KtoSign::Utility => {
                    value += w * lambda * (1.0 - s);
                    grad[y] -= w * lambda * ds * dx;
                }
            }
        }
        Ok((value, grad))
    }
}

fn check_space(
    a: &std::sync::Arc<crate::space::ResponseSpace>,
    b: &std::sync::Arc<crate::space::ResponseSpace>,
    what: &str,
) -> Result<()> {
    if !same_space(a, b) {
        return Err(invalid(format!("{what} does not live on the expected space")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(invalid("α must be positive and finite"));
    }
    Ok(())
}

/// `½ log σ(δ) + ½ log σ(−δ)` with its derivative in δ. The third entry is
/// the derivative with respect to the subtracted reward, i.e. the negation.
fn half_pair(delta: f64) -> (f64, f64, f64) {
    let v = 0.5 * log_sigmoid_unchecked(delta) + 0.5 * log_sigmoid_unchecked(-delta);
    let d = 0.5 * sigmoid(-delta) - 0.5 * sigmoid(delta);
    (v, d, -d)
}

fn global_pro_p_weights(data: &PairwiseDataset, hs: &HyperSpace, cfg: &HyperConfig) -> Result<Vec<f64>> {
    let collapsed = hs.collapse_pairwise(data)?;
    let as_feedback = FeedbackDataset::Pairwise(collapsed.clone());
    let mu_hat = as_feedback.empirical_response_dist()?;
    let labeled = as_feedback.labeled_mask();
    let p_hat = collapsed.empirical_preference()?;
    let mbar = mu_bar(&mu_hat, cfg)?;
    let eta2 = cfg.eta() * cfg.eta();
    let n = mbar.len();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] = mbar.prob(i) * mbar.prob(j) * augmented_preference(&p_hat, i, j, &labeled) / eta2;
        }
    }
    Ok(w)
}

/// Derivative of the KL regularizer's pair term in δ, scaled by α/2:
/// `(α/2)(σ(βδ) − ½)`.
pub fn regularizer_grad_profile(alpha: f64, beta: f64, delta: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(invalid("α and β must be positive"));
    }
    Ok(0.5 * alpha * (sigmoid(beta * delta) - 0.5))
}

/// Analytic parameter gradient of `spec` at `policy`.
pub fn loss_gradient(spec: &LossSpec, policy: &dyn Policy) -> Result<Vec<f64>> {
    Ok(spec.evaluate(policy)?.gradient)
}

fn expect_kind(spec: &LossSpec, kinds: &[LossKind]) -> Result<()> {
    if kinds.contains(&spec.kind()) {
        Ok(())
    } else {
        Err(invalid(format!("spec is a {} loss", spec.kind())))
    }
}

pub fn dpo_sample(policy: &dyn Policy, spec: &LossSpec) -> Result<LossValue> {
    expect_kind(spec, &[LossKind::DpoSample])?;
    spec.evaluate(policy)
}

pub fn dpo_population(policy: &dyn Policy, spec: &LossSpec) -> Result<LossValue> {
    expect_kind(spec, &[LossKind::DpoPopulation])?;
    spec.evaluate(policy)
}

pub fn edpo(policy: &dyn Policy, spec: &LossSpec) -> Result<LossValue> {
    expect_kind(spec, &[LossKind::Edpo])?;
    spec.evaluate(policy)
}

pub fn pro(policy: &dyn Policy, spec: &LossSpec) -> Result<LossValue> {
    expect_kind(spec, &[LossKind::Pro])?;
    spec.evaluate(policy)
}

pub fn pro_p(policy: &dyn Policy, spec: &LossSpec) -> Result<LossValue> {
    expect_kind(spec, &[LossKind::ProP])?;
    spec.evaluate(policy)
}

pub fn pro_b(policy: &dyn Policy, spec: &LossSpec) -> Result<LossValue> {
    expect_kind(spec, &[LossKind::ProB])?;
    spec.evaluate(policy)
}

pub fn pro_s(policy: &dyn Policy, spec: &LossSpec) -> Result<LossValue> {
    expect_kind(spec, &[LossKind::ProS])?;
    spec.evaluate(policy)
}

pub fn kto(policy: &dyn Policy, spec: &LossSpec) -> Result<LossValue> {
    expect_kind(spec, &[LossKind::Kto])?;
    spec.evaluate(policy)
}
