//! The hyper response: a single pseudo-response standing for a set of
//! (usually unobserved) responses, whose probability is their total mass.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::feedback::{PairRecord, PairwiseDataset, PreferenceMatrix, ScoreMap};
use crate::numeric::log_sum_exp;
use crate::space::{same_space, Distribution, ResponseSpace, Support};

/// Identifier of the hyper response in the collapsed space.
pub const HYPER_ID: &str = "<H>";

/// How `log p(H)` is computed from individual log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassMode {
    /// log-sum-exp over the members of H.
    Members,
    /// `log(1 − Σ_{y∉H} p(y))`.
    Complement,
}

/// A base space together with the collapsed space `Y_H`.
///
/// The collapsed enumeration lists the responses outside H in base order,
/// followed by H itself as the last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSpace {
    base: Arc<ResponseSpace>,
    members: Vec<usize>,
    is_member: Vec<bool>,
    collapsed: Arc<ResponseSpace>,
    to_collapsed: Vec<usize>,
}

impl HyperSpace {
    /// H = `members`, which must avoid every `labeled` response.
    pub fn new(base: Arc<ResponseSpace>, members: &[usize], labeled: &[bool]) -> Result<Self> {
        if labeled.len() != base.len() {
            return Err(invalid("labeled mask length does not match the space"));
        }
        if let Some(&y) = members.iter().find(|&&y| y < base.len() && labeled[y]) {
            return Err(invalid(format!(
                "labeled response {} cannot belong to the hyper response",
                base.id(y)
            )));
        }
        Self::new_unchecked_labels(base, members)
    }

    /// H = `members` without the disjointness check against labeled data.
    pub fn new_unchecked_labels(base: Arc<ResponseSpace>, members: &[usize]) -> Result<Self> {
        let n = base.len();
        let mut is_member = vec![false; n];
        for &y in members {
            if y >= n {
                return Err(invalid(format!("hyper member {y} out of range")));
            }
            if is_member[y] {
                return Err(invalid(format!("hyper member {} listed twice", base.id(y))));
            }
            is_member[y] = true;
        }
        if members.is_empty() {
            return Err(invalid("the hyper response needs at least one member"));
        }
        if members.len() == n {
            return Err(invalid(
                "the hyper response covers the whole space; Y_H needs an individual response",
            ));
        }
        if base.position(HYPER_ID).is_some() {
            return Err(invalid(format!("base space already uses the reserved id {HYPER_ID}")));
        }
        let mut ids = Vec::with_capacity(n - members.len() + 1);
        let mut to_collapsed = vec![0; n];
        let h_index = n - members.len();
        for y in 0..n {
            if is_member[y] {
                to_collapsed[y] = h_index;
            } else {
                to_collapsed[y] = ids.len();
                ids.push(base.id(y).to_string());
            }
        }
        ids.push(HYPER_ID.to_string());
        let mut members = members.to_vec();
        members.sort_unstable();
        Ok(Self {
            base,
            members,
            is_member,
            collapsed: Arc::new(ResponseSpace::new(ids)?),
            to_collapsed,
        })
    }

    /// Default construction: H = every response absent from the data.
    pub fn unobserved(base: Arc<ResponseSpace>, labeled: &[bool]) -> Result<Self> {
        let members: Vec<usize> = (0..base.len()).filter(|&y| !labeled[y]).collect();
        Self::new(base, &members, labeled)
    }

    pub fn base(&self) -> &Arc<ResponseSpace> {
        &self.base
    }

    pub fn collapsed(&self) -> &Arc<ResponseSpace> {
        &self.collapsed
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn is_member(&self, y: usize) -> bool {
        self.is_member[y]
    }

    /// Index of H in the collapsed space.
    pub fn h_index(&self) -> usize {
        self.collapsed.len() - 1
    }

    /// Collapsed index of a base response (H for members).
    pub fn collapse_index(&self, y: usize) -> usize {
        self.to_collapsed[y]
    }

    /// Base index of an individual collapsed response; `None` for H.
    pub fn expand_index(&self, z: usize) -> Option<usize> {
        if z == self.h_index() {
            None
        } else {
            self.base.position(self.collapsed.id(z))
        }
    }

    /// Mode chosen for log-space aggregation: member summation for small H.
    pub fn default_mode(&self) -> MassMode {
        if self.members.len() * 2 <= self.base.len() {
            MassMode::Members
        } else {
            MassMode::Complement
        }
    }

    /// Collapsed log-probabilities using the default mode.
    pub fn collapse_log_probs(&self, logp: &[f64]) -> Result<Vec<f64>> {
        self.collapse_log_probs_with(logp, self.default_mode())
    }

    pub fn collapse_log_probs_with(&self, logp: &[f64], mode: MassMode) -> Result<Vec<f64>> {
        if logp.len() != self.base.len() {
            return Err(invalid("log-probability vector does not match the base space"));
        }
        let mut out: Vec<f64> = (0..self.base.len())
            .filter(|&y| !self.is_member[y])
            .map(|y| logp[y])
            .collect();
        let log_h = match mode {
            MassMode::Members => {
                let m: Vec<f64> = self.members.iter().map(|&y| logp[y]).collect();
                log_sum_exp(&m)
            }
            MassMode::Complement => {
                let outside: f64 = out.iter().map(|l| l.exp()).sum();
                if outside >= 1.0 {
                    return Err(Error::NumericalDomain(format!(
                        "mass outside H is {outside}, leaving nothing for H"
                    )));
                }
                (-outside).ln_1p()
            }
        };
        out.push(log_h);
        Ok(out)
    }

    /// Chain rule from `∂L/∂log p` on the collapsed space back to the base
    /// space. The individual entries pass straight through; the H entry is
    /// spread according to `mode`. Both modes induce the same parameter
    /// gradient for any policy on the simplex.
    pub fn expand_log_prob_grad(&self, logp: &[f64], collapsed_grad: &[f64]) -> Result<Vec<f64>> {
        let mode = self.default_mode();
        let log_h = self.collapse_log_probs_with(logp, mode)?[self.h_index()];
        let g_h = collapsed_grad[self.h_index()];
        let mut out = vec![0.0; self.base.len()];
        for y in 0..self.base.len() {
            if self.is_member[y] {
                if mode == MassMode::Members {
                    out[y] = g_h * (logp[y] - log_h).exp();
                }
            } else {
                out[y] = collapsed_grad[self.to_collapsed[y]];
                if mode == MassMode::Complement {
                    out[y] -= g_h * (logp[y] - log_h).exp();
                }
            }
        }
        Ok(out)
    }

    /// Collapses a score map; entries on H must be undefined.
    pub fn collapse_score(&self, score: &ScoreMap) -> Result<ScoreMap> {
        self.check_base(score.space())?;
        if self.members.iter().any(|&y| score.is_defined(y)) {
            return Err(invalid("a response scored by the data lies inside H"));
        }
        let mut values = Vec::with_capacity(self.collapsed.len());
        let mut defined = Vec::with_capacity(self.collapsed.len());
        for y in (0..self.base.len()).filter(|&y| !self.is_member[y]) {
            values.push(score.value(y));
            defined.push(score.is_defined(y));
        }
        values.push(0.0);
        defined.push(false);
        ScoreMap::new(self.collapsed.clone(), values, defined)
    }

    /// Re-indexes a pairwise dataset onto `Y_H`. No record may touch H.
    pub fn collapse_pairwise(&self, data: &PairwiseDataset) -> Result<PairwiseDataset> {
        self.check_base(data.space())?;
        let mut records = Vec::with_capacity(data.records().len());
        for r in data.records() {
            if self.is_member[r.winner] || self.is_member[r.loser] {
                return Err(invalid("a compared response lies inside H"));
            }
            records.push(PairRecord {
                winner: self.to_collapsed[r.winner],
                loser: self.to_collapsed[r.loser],
                count: r.count,
            });
        }
        PairwiseDataset::new(self.collapsed.clone(), records)
    }

    fn check_base(&self, space: &Arc<ResponseSpace>) -> Result<()> {
        if !same_space(space, &self.base) {
            return Err(invalid("input does not live on the hyper space's base"));
        }
        Ok(())
    }
}

/// Collapses a distribution onto `Y_H`: `p(H) = Σ_{y∈H} p(y)`.
pub fn hyper_mass(dist: &Distribution, hs: &HyperSpace) -> Result<Distribution> {
    hs.check_base(dist.space())?;
    let mut probs: Vec<f64> = (0..dist.len())
        .filter(|&y| !hs.is_member(y))
        .map(|y| dist.prob(y))
        .collect();
    probs.push(hs.members().iter().map(|&y| dist.prob(y)).sum());
    match dist.support_kind() {
        Support::Full => Distribution::new(hs.collapsed().clone(), probs),
        Support::Empirical => Distribution::empirical(hs.collapsed().clone(), probs),
    }
}

/// `β log(π(H)/π_ref(H))`, or exactly 0 in pin mode.
pub fn hyper_reward(
    policy: &Distribution,
    reference: &Distribution,
    beta: f64,
    hs: &HyperSpace,
    pin_to_zero: bool,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(invalid("β must be positive"));
    }
    hs.check_base(policy.space())?;
    hs.check_base(reference.space())?;
    if pin_to_zero {
        return Ok(0.0);
    }
    let outside = |d: &Distribution| -> Result<f64> {
        let s: f64 = (0..d.len()).filter(|&y| !hs.is_member(y)).map(|y| d.prob(y)).sum();
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::NumericalDomain(format!(
                "aggregated mass {} outside (0, 1)",
                1.0 - s
            )));
        }
        Ok(s)
    };
    let (sp, sr) = (outside(policy)?, outside(reference)?);
    Ok(beta * ((-sp).ln_1p() - (-sr).ln_1p()))
}

/// Mixing weight η and the distribution ρ over the unobserved part of `Y_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperConfig {
    eta: f64,
    rho: Distribution,
}

impl HyperConfig {
    /// `rho` lives on `Y_H`; it may be zero on observed responses.
    pub fn new(eta: f64, rho: Distribution) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(invalid(format!("η must lie in (0, 1), got {eta}")));
        }
        Ok(Self { eta, rho })
    }

    /// ρ puts all its mass on H.
    pub fn on_hyper(eta: f64, hs: &HyperSpace) -> Result<Self> {
        let mut probs = vec![0.0; hs.collapsed().len()];
        probs[hs.h_index()] = 1.0;
        Self::new(eta, Distribution::empirical(hs.collapsed().clone(), probs)?)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn rho(&self) -> &Distribution {
        &self.rho
    }
}

/// μ̄ = η·μ̂ on the support of μ̂ and (1−η)·ρ elsewhere. `mu_hat` lives on `Y_H`.
pub fn mu_bar(mu_hat: &Distribution, cfg: &HyperConfig) -> Result<Distribution> {
    if !same_space(mu_hat.space(), cfg.rho.space()) {
        return Err(invalid("μ̂ and ρ live on different spaces"));
    }
    let n = mu_hat.len();
    let outside: Vec<usize> = (0..n).filter(|&y| mu_hat.prob(y) == 0.0).collect();
    if outside.is_empty() {
        return Err(invalid("μ̂ covers all of Y_H, leaving no room for ρ"));
    }
    let rho_out: f64 = outside.iter().map(|&y| cfg.rho.prob(y)).sum();
    if outside.iter().any(|&y| cfg.rho.prob(y) <= 0.0) || (rho_out - 1.0).abs() > 1e-12 {
        return Err(invalid("ρ must be strictly positive on, and sum to 1 over, Y_H outside supp(μ̂)"));
    }
    let probs = (0..n)
        .map(|y| {
            let m = mu_hat.prob(y);
            if m > 0.0 {
                cfg.eta * m
            } else {
                (1.0 - cfg.eta) * cfg.rho.prob(y)
            }
        })
        .collect();
    Distribution::new(mu_hat.space().clone(), probs)
}

/// p̄: the empirical preference when both responses are labeled, ½ otherwise.
pub fn augmented_preference(p_hat: &PreferenceMatrix, y1: usize, y2: usize, labeled: &[bool]) -> f64 {
    if labeled[y1] && labeled[y2] {
        p_hat.get(y1, y2)
    } else {
        0.5
    }
}

/// Constructive sufficient threshold α₀ on `Y_H`:
/// `max_{ŝ(y)<0} 4 μ̂(y)(−ŝ(y)) / (μ(y) min μ)`, or 0 if no score is negative.
pub fn alpha_threshold(mu_hat: &Distribution, s_hat: &ScoreMap, mu: &Distribution) -> Result<f64> {
    if !same_space(mu_hat.space(), mu.space()) || !same_space(s_hat.space(), mu.space()) {
        return Err(invalid("μ̂, ŝ and μ must share one space"));
    }
    if !mu.is_strictly_positive() {
        return Err(invalid("μ must be strictly positive"));
    }
    let min_mu = mu.min_prob();
    Ok((0..mu.len())
        .filter(|&y| s_hat.value(y) < 0.0)
        .map(|y| 4.0 * mu_hat.prob(y) * (-s_hat.value(y)) / (mu.prob(y) * min_mu))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn space(n: usize) -> Arc<ResponseSpace> {
        Arc::new(ResponseSpace::indexed(n).unwrap())
    }

    #[test]
    fn collapsed_layout() {
        let hs = HyperSpace::new(space(4), &[1, 3], &[true, false, true, false]).unwrap();
        assert_eq!(hs.collapsed().ids(), ["y0", "y2", HYPER_ID]);
        assert_eq!(hs.collapse_index(2), 1);
        assert_eq!(hs.collapse_index(3), 2);
        assert_eq!(hs.expand_index(1), Some(2));
        assert_eq!(hs.expand_index(2), None);
    }

    #[test]
    fn hyper_mass_examples() {
        let sp = space(4);
        let hs = HyperSpace::new(sp.clone(), &[2, 3], &[true, true, false, false]).unwrap();
        let m = hyper_mass(&Distribution::uniform(sp.clone()), &hs).unwrap();
        assert_eq!(m.probs(), &[0.25, 0.25, 0.5]);

        let d = Distribution::new(sp.clone(), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let single = HyperSpace::new_unchecked_labels(sp, &[1]).unwrap();
        assert_eq!(hyper_mass(&d, &single).unwrap().probs(), &[0.1, 0.3, 0.4, 0.2]);
    }

    #[test]
    fn rejects_bad_members() {
        let sp = space(3);
        assert!(HyperSpace::new(sp.clone(), &[0], &[true, false, false]).is_err());
        assert!(HyperSpace::new_unchecked_labels(sp.clone(), &[0, 1, 2]).is_err());
        assert!(HyperSpace::new_unchecked_labels(sp.clone(), &[]).is_err());
        assert!(HyperSpace::new_unchecked_labels(sp, &[1, 1]).is_err());
    }

    #[test]
    fn hyper_reward_examples() {
        let sp = space(3);
        let hs = HyperSpace::new(sp.clone(), &[2], &[true, true, false]).unwrap();
        let pi = Distribution::new(sp.clone(), vec![0.1, 0.1, 0.8]).unwrap();
        let rf = Distribution::new(sp.clone(), vec![0.05, 0.05, 0.9]).unwrap();
        let r = hyper_reward(&pi, &rf, 1.0, &hs, false).unwrap();
        assert_abs_diff_eq!(r, (0.8f64 / 0.9).ln(), epsilon = 1e-12);
        assert_eq!(hyper_reward(&pi, &rf, 1.0, &hs, true).unwrap(), 0.0);
        assert_eq!(hyper_reward(&pi, &pi, 0.3, &hs, false).unwrap(), 0.0);
    }

    #[test]
    fn mu_bar_examples() {
        let sp = Arc::new(ResponseSpace::new(["a", "b", "H"]).unwrap());
        let mu_hat = Distribution::empirical(sp.clone(), vec![0.5, 0.5, 0.0]).unwrap();
        let rho = Distribution::empirical(sp.clone(), vec![0.0, 0.0, 1.0]).unwrap();
        let m = mu_bar(&mu_hat, &HyperConfig::new(2.0 / 3.0, rho).unwrap()).unwrap();
        for p in m.probs() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
        }

        let mu_hat = Distribution::empirical(sp.clone(), vec![1.0, 0.0, 0.0]).unwrap();
        let rho = Distribution::empirical(sp.clone(), vec![0.0, 0.5, 0.5]).unwrap();
        let m = mu_bar(&mu_hat, &HyperConfig::new(0.5, rho.clone()).unwrap()).unwrap();
        assert_eq!(m.probs(), &[0.5, 0.25, 0.25]);

        assert!(HyperConfig::new(0.0, rho.clone()).is_err());
        assert!(HyperConfig::new(1.0, rho).is_err());
    }

    #[test]
    fn augmented_preference_examples() {
        let sp = space(3);
        let p = PreferenceMatrix::new(sp, vec![0.5, 1.0, 0.5, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let labeled = [true, true, false];
        assert_eq!(augmented_preference(&p, 0, 1, &labeled), 1.0);
        assert_eq!(augmented_preference(&p, 0, 2, &labeled), 0.5);
        assert_eq!(augmented_preference(&p, 2, 1, &labeled), 0.5);
    }

    #[test]
    fn alpha_threshold_examples() {
        let sp = space(3);
        let mu = Distribution::uniform(sp.clone());
        let mu_hat = Distribution::empirical(sp.clone(), vec![0.5, 0.5, 0.0]).unwrap();
        let s = ScoreMap::new(sp.clone(), vec![0.25, -0.25, 0.0], vec![true, true, false]).unwrap();
        assert_abs_diff_eq!(alpha_threshold(&mu_hat, &s, &mu).unwrap(), 4.5, epsilon = 1e-12);
        let s = ScoreMap::new(sp, vec![0.25, 0.0, 0.0], vec![true, true, false]).unwrap();
        assert_eq!(alpha_threshold(&mu_hat, &s, &mu).unwrap(), 0.0);
    }
}
