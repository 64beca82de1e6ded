//! Brute-force optimal policies on the simplex and numerical checks of the
//! optimality conditions the losses are supposed to satisfy.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::feedback::{FeedbackDataset, PairRecord, PairwiseDataset, ScoreMap};
use crate::hyper::{alpha_threshold, hyper_mass, mu_bar, HyperConfig, HyperSpace};
use crate::losses::{LossBody, LossSpec, Proximal};
use crate::numeric::sigmoid;
use crate::policy::{Policy, TabularPolicy};
use crate::space::{same_space, Distribution, ResponseSpace};

/// Length of the escape probe taken when the gradient is below tolerance.
const PROBE_LENGTH: f64 = 1.0;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 80;

/// Central finite differences of `spec` with respect to the policy parameters.
pub fn finite_diff_grad<P: Policy + Clone>(spec: &LossSpec, policy: &P, h: f64) -> Result<Vec<f64>> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(invalid(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let mut probe = policy.clone();
    let mut out = Vec::with_capacity(policy.num_params());
    for i in 0..policy.num_params() {
        let x = policy.params()[i];
        probe.params_mut()[i] = x + h;
        let up = spec.value(&probe)?;
        probe.params_mut()[i] = x - h;
        let down = spec.value(&probe)?;
        probe.params_mut()[i] = x;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Seeded restarts; the first starts at the reference policy.
    pub restarts: usize,
    pub max_iters: usize,
    /// Gradient-norm tolerance for convergence.
    pub tol: f64,
    pub seed: u64,
    /// Standard deviation of the logit perturbation for restarts after the first.
    pub init_noise: f64,
    /// Probability floor watched by the degeneracy detector.
    pub floor: f64,
    /// Consecutive decreasing steps below the floor that flag degeneracy.
    pub window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_iters: 50_000,
            tol: 1e-8,
            seed: 0,
            init_noise: 1.0,
            floor: 1e-10,
            window: 100,
        }
    }
}

/// Outcome of one descent run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub policy: TabularPolicy,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Smallest probability seen along the run.
    pub min_prob: f64,
    pub converged: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// The restart selected by (loss, gradient norm, seed).
    pub best: RunOutcome,
    pub runs: Vec<RunOutcome>,
    /// Number of distinct converged solutions among the restarts
    /// (distributions differing by more than 1e-6 in some entry).
    pub distinct_solutions: usize,
}

impl SolveReport {
    pub fn policy(&self) -> &TabularPolicy {
        &self.best.policy
    }

    pub fn distribution(&self) -> Result<Distribution> {
        self.best.policy.distribution()
    }

    pub fn converged(&self) -> bool {
        self.best.converged
    }

    pub fn degenerate(&self) -> bool {
        self.best.degenerate
    }

    /// Smallest probability of the final policy.
    pub fn final_min_prob(&self) -> f64 {
        self.best
            .policy
            .log_probs()
            .iter()
            .fold(f64::INFINITY, |m, l| m.min(l.exp()))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn min_prob_of(p: &TabularPolicy) -> f64 {
    p.log_probs().iter().fold(f64::INFINITY, |m, l| m.min(l.exp()))
}

/// Loss and its gradient projected off the all-ones (gauge) direction.
fn eval(spec: &LossSpec, pol: &TabularPolicy) -> Result<(f64, Vec<f64>)> {
    let v = spec.evaluate(pol)?;
    let mean = v.gradient.iter().sum::<f64>() / v.gradient.len() as f64;
    Ok((v.value, v.gradient.into_iter().map(|g| g - mean).collect()))
}

/// Try-evaluate; domain failures count as "no improvement".
fn try_eval(spec: &LossSpec, pol: &TabularPolicy) -> Result<Option<(f64, Vec<f64>)>> {
    match eval(spec, pol) {
        Ok(v) => Ok(Some(v)),
        Err(Error::NumericalDomain(_)) | Err(Error::NonFinite { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_descent(spec: &LossSpec, x0: Vec<f64>, seed: u64, cfg: &SolverConfig) -> Result<RunOutcome> {
    let space = spec.reference().space().clone();
    let mut pol = TabularPolicy::new(space, x0)?;
    let (mut f, mut g) = eval(spec, &pol)?;
    let mut min_prob = min_prob_of(&pol);
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut streak = 0usize;
    let mut converged = false;
    let mut degenerate = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let gn = norm(&g);
        let mut accepted: Option<(TabularPolicy, f64, Vec<f64>)> = None;
        if gn >= cfg.tol {
            if let Some((xp, gp)) = &prev {
                let s: Vec<f64> = pol.params().iter().zip(xp).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g.iter().zip(gp).map(|(a, b)| a - b).collect();
                let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
                let ss: f64 = s.iter().map(|a| a * a).sum();
                step = if sy > 0.0 { ss / sy } else { step * 2.0 };
            }
            step = step.clamp(1e-12, 1e12);
            for _ in 0..MAX_BACKTRACKS {
                let x: Vec<f64> = pol.params().iter().zip(&g).map(|(a, b)| a - step * b).collect();
                let cand = TabularPolicy::new(pol.space().clone(), x)?;
                if let Some((fc, gc)) = try_eval(spec, &cand)? {
                    if fc <= f - ARMIJO_C * step * gn * gn {
                        accepted = Some((cand, fc, gc));
                        break;
                    }
                }
                step *= 0.5;
            }
        }
        if accepted.is_none() {
            // Gradient below tolerance or no Armijo step: probe a unit step
            // downhill before declaring the point stationary. This separates
            // a true minimum from a loss whose gradient vanishes at infinity.
            if gn > 0.0 {
                let x: Vec<f64> = pol
                    .params()
                    .iter()
                    .zip(&g)
                    .map(|(a, b)| a - PROBE_LENGTH * b / gn)
                    .collect();
                let cand = TabularPolicy::new(pol.space().clone(), x)?;
                if let Some((fc, gc)) = try_eval(spec, &cand)? {
                    if fc < f {
                        accepted = Some((cand, fc, gc));
                    }
                }
            }
        }
        let Some((cand, fc, gc)) = accepted else {
            converged = gn < cfg.tol;
            break;
        };
        prev = Some((pol.params().to_vec(), g));
        pol = cand;
        f = fc;
        g = gc;
        let mp = min_prob_of(&pol);
        min_prob = min_prob.min(mp);
        if mp < cfg.floor {
            streak += 1;
            if streak >= cfg.window {
                degenerate = true;
                break;
            }
        } else {
            streak = 0;
        }
    }
    Ok(RunOutcome {
        seed,
        grad_norm: norm(&g),
        policy: pol,
        loss: f,
        iterations,
        min_prob,
        converged,
        degenerate,
    })
}

/// Minimizes `spec` over tabular policies on the reference's space.
pub fn solve_optimal(spec: &LossSpec, cfg: &SolverConfig) -> Result<SolveReport> {
    if cfg.restarts < 1 {
        return Err(invalid("at least one restart is required"));
    }
    let base = spec.reference().log_probs();
    let mut runs = Vec::with_capacity(cfg.restarts);
    for k in 0..cfg.restarts {
        let seed = cfg.seed.wrapping_add(k as u64);
        let x0 = if k == 0 {
            base.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            base.iter()
                .map(|b| b + cfg.init_noise * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        runs.push(run_descent(spec, x0, seed, cfg)?);
    }
    let best = runs
        .iter()
        .min_by(|a, b| {
            a.loss
                .total_cmp(&b.loss)
                .then(a.grad_norm.total_cmp(&b.grad_norm))
                .then(a.seed.cmp(&b.seed))
        })
        .expect("at least one run")
        .clone();
    let mut reps: Vec<Vec<f64>> = Vec::new();
    for r in runs.iter().filter(|r| r.converged) {
        let p: Vec<f64> = r.policy.log_probs().iter().map(|l| l.exp()).collect();
        if !reps
            .iter()
            .any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() <= 1e-6))
        {
            reps.push(p);
        }
    }
    Ok(SolveReport {
        best,
        runs,
        distinct_solutions: reps.len(),
    })
}

/// One numerical check with its largest residual.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub id: String,
    pub instance: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Extra named quantities (margins, constants, counts).
    pub details: Vec<(String, f64)>,
}

impl TheoremReport {
    pub fn new(id: &str, instance: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            id: id.to_string(),
            instance: instance.into(),
            residual,
            tolerance,
            pass: residual <= tolerance,
            details: Vec::new(),
        }
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.push((key.to_string(), value));
        self
    }

    /// Forces a failure regardless of the residual (used when a qualitative
    /// condition such as a strict ordering does not hold).
    pub fn fail(mut self) -> Self {
        self.pass = false;
        self
    }
}

impl fmt::Display for TheoremReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "check={} instance={} residual={:e} tolerance={:e} pass={}",
            self.id, self.instance, self.residual, self.tolerance, self.pass
        )?;
        for (k, v) in &self.details {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// The optimizer/regularizer data of an eDPO or PRO spec and the policy's
/// log-probabilities and reference log-probabilities on the same space.
fn proximal_view(spec: &LossSpec, policy: &dyn Policy) -> Result<(Proximal, Vec<f64>, Vec<f64>)> {
    let lp = policy.log_probs();
    let rf = spec.reference().log_probs();
    match spec.body() {
        LossBody::Edpo(p) => Ok((p.clone(), lp, rf)),
        LossBody::Pro { prox, hyper, pin } => {
            if *pin {
                return Err(Error::NotApplicable("pinned hyper reward".into()));
            }
            if same_space(spec.reference().space(), hyper.base()) {
                Ok((prox.clone(), hyper.collapse_log_probs(&lp)?, hyper.collapse_log_probs(&rf)?))
            } else {
                Ok((prox.clone(), lp, rf))
            }
        }
        _ => Err(Error::NotApplicable(format!("{} has no optimizer/regularizer form", spec.kind()))),
    }
}

/// Residual of `α E_{y'∼μ}[σ(r(y) − r(y')) − ½] = (μ̂(y)/μ(y)) ŝ(y)` at every
/// response of the objective space.
pub fn stationarity_residuals(spec: &LossSpec, policy: &dyn Policy) -> Result<Vec<f64>> {
    let (prox, lp, rf) = proximal_view(spec, policy)?;
    let beta = spec.beta();
    let r: Vec<f64> = lp.iter().zip(&rf).map(|(a, b)| beta * (a - b)).collect();
    let mu = prox.mu.probs();
    Ok((0..r.len())
        .map(|y| {
            let lhs: f64 = prox.alpha
                * (0..r.len())
                    .map(|z| mu[z] * (sigmoid(r[y] - r[z]) - 0.5))
                    .sum::<f64>();
            let rhs = prox.mu_hat.prob(y) / mu[y] * prox.score.value(y);
            lhs - rhs
        })
        .collect())
}

pub fn check_stationarity(report: &SolveReport, spec: &LossSpec, instance: &str) -> Result<TheoremReport> {
    if !report.converged() {
        return Err(invalid("stationarity needs a converged solution"));
    }
    let res = stationarity_residuals(spec, report.policy())?;
    let max = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(TheoremReport::new("t32", instance, max, 1e-5))
}

/// Checks the likelihood-ratio ordering around the constant C.
///
/// All inputs live on the solved space. C is the geometric mean of
/// `π*/π_ref` over responses with `μ̂ = 0` or `ŝ = 0`.
pub fn check_ordering(
    report: &SolveReport,
    reference: &Distribution,
    s_hat: &ScoreMap,
    mu_hat: &Distribution,
    instance: &str,
) -> Result<TheoremReport> {
    if !report.converged() {
        return Err(invalid("ordering needs a converged solution"));
    }
    let pi = report.distribution()?;
    if !same_space(pi.space(), reference.space()) || !same_space(s_hat.space(), reference.space()) {
        return Err(invalid("solution, reference and scores must share one space"));
    }
    let ratio: Vec<f64> = (0..pi.len()).map(|y| pi.prob(y) / reference.prob(y)).collect();
    let constant: Vec<usize> = (0..pi.len())
        .filter(|&y| mu_hat.prob(y) == 0.0 || s_hat.value(y) == 0.0)
        .collect();
    if constant.is_empty() {
        return Err(Error::NotApplicable("no zero-score response to anchor C".into()));
    }
    let log_c = constant.iter().map(|&y| ratio[y].ln()).sum::<f64>() / constant.len() as f64;
    let c = log_c.exp();
    let spread = constant
        .iter()
        .flat_map(|&a| constant.iter().map(move |&b| (a, b)))
        .fold(0.0f64, |m, (a, b)| m.max((ratio[a] - ratio[b]).abs()));
    let mut margin = f64::INFINITY;
    let mut sign_ok = true;
    for y in 0..pi.len() {
        let s = s_hat.value(y);
        if mu_hat.prob(y) == 0.0 || s == 0.0 {
            continue;
        }
        let gap = if s > 0.0 { ratio[y] - c } else { c - ratio[y] };
        margin = margin.min(gap);
        if s.signum() != (ratio[y].ln() - log_c).signum() {
            sign_ok = false;
        }
    }
    let rep = TheoremReport::new("c33", instance, spread, 1e-5)
        .with_detail("C", c)
        .with_detail("margin", margin);
    Ok(if margin >= 1e-6 && sign_ok { rep } else { rep.fail() })
}

/// Compares an eDPO solve on Y with a PRO solve on `Y_H`.
///
/// Both specs must carry a tabular-ready reference: `spec_full` on the base
/// space and `spec_h` on `hs.collapsed()`.
pub fn check_hyper_correspondence(
    spec_full: &LossSpec,
    spec_h: &LossSpec,
    hs: &HyperSpace,
    cfg: &SolverConfig,
    instance: &str,
) -> Result<TheoremReport> {
    let full = solve_optimal(spec_full, cfg)?;
    let coll = solve_optimal(spec_h, cfg)?;
    if !full.converged() || !coll.converged() {
        return Err(Error::NotApplicable("a solve did not converge".into()));
    }
    let pf = full.distribution()?;
    let ph = coll.distribution()?;
    if !same_space(pf.space(), hs.base()) || !same_space(ph.space(), hs.collapsed()) {
        return Err(invalid("specs do not match the hyper space"));
    }
    let rf = spec_full.reference();
    let mut pointwise = 0.0f64;
    for z in 0..ph.len() {
        if let Some(y) = hs.expand_index(z) {
            pointwise = pointwise.max((ph.prob(z) - pf.prob(y)).abs());
        }
    }
    let log_c = hs
        .members()
        .iter()
        .map(|&y| (pf.prob(y) / rf.prob(y)).ln())
        .sum::<f64>()
        / hs.members().len() as f64;
    let c = log_c.exp();
    let ref_h: f64 = hs.members().iter().map(|&y| rf.prob(y)).sum();
    let mass = (ph.prob(hs.h_index()) - c * ref_h).abs();
    Ok(TheoremReport::new("t41", instance, pointwise.max(mass), 1e-5)
        .with_detail("pointwise", pointwise)
        .with_detail("h_mass", mass)
        .with_detail("C", c))
}

/// One grid point of an existence-boundary sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPoint {
    pub alpha: f64,
    pub converged: bool,
    pub degenerate: bool,
    pub min_prob: f64,
}

/// Solves the family `make(α)` over `grid`.
///
/// Passes when every α ≥ `alpha0` converges with minimum probability above
/// 1e-8. The residual is the number of failing points at or above α₀.
pub fn check_existence_boundary(
    make: &dyn Fn(f64) -> Result<LossSpec>,
    alpha0: f64,
    grid: &[f64],
    cfg: &SolverConfig,
    instance: &str,
) -> Result<(TheoremReport, Vec<BoundaryPoint>)> {
    let mut points = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let rep = solve_optimal(&make(alpha)?, cfg)?;
        points.push(BoundaryPoint {
            alpha,
            converged: rep.converged(),
            degenerate: rep.degenerate(),
            min_prob: rep.final_min_prob(),
        });
    }
    let failures = points
        .iter()
        .filter(|p| p.alpha >= alpha0 && !(p.converged && p.min_prob > 1e-8))
        .count();
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    // Monotone transition: once converged, every larger α converges too.
    let monotone = sorted
        .windows(2)
        .all(|w| !(w[0].converged && !w[1].converged));
    let report = TheoremReport::new("t42", instance, failures as f64, 0.0)
        .with_detail("alpha0", alpha0)
        .with_detail("monotone", if monotone { 1.0 } else { 0.0 });
    Ok((report, points))
}

/// Bisects for the smallest α at which `make(α)` stops being degenerate,
/// assuming degeneracy at `lo` and convergence at `hi`.
pub fn bisect_degeneracy_boundary(
    make: &dyn Fn(f64) -> Result<LossSpec>,
    mut lo: f64,
    mut hi: f64,
    steps: usize,
    cfg: &SolverConfig,
) -> Result<(f64, f64)> {
    for _ in 0..steps {
        let mid = (lo * hi).sqrt();
        let rep = solve_optimal(&make(mid)?, cfg)?;
        if rep.converged() && rep.final_min_prob() > 1e-8 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

/// Largest absolute difference between the two specs' gradients over the
/// given policies.
pub fn check_gradient_equivalence(
    id: &str,
    instance: &str,
    a: &LossSpec,
    b: &LossSpec,
    policies: &[&dyn Policy],
    tol: f64,
) -> Result<TheoremReport> {
    let mut worst = 0.0f64;
    for p in policies {
        let ga = a.evaluate(*p)?.gradient;
        let gb = b.evaluate(*p)?.gradient;
        if ga.len() != gb.len() {
            return Err(invalid("gradient shapes differ"));
        }
        for (x, y) in ga.iter().zip(&gb) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(TheoremReport::new(id, instance, worst, tol))
}

/// Shifts `log π` by `c` on `labeled` and rescales the remaining mass
/// uniformly so the result still sums to 1.
pub fn shift_labeled(policy: &Distribution, labeled: &[usize], c: f64) -> Result<Distribution> {
    let mut is_labeled = vec![false; policy.len()];
    for &y in labeled {
        if y >= policy.len() {
            return Err(invalid("labeled index out of range"));
        }
        is_labeled[y] = true;
    }
    let s: f64 = labeled.iter().map(|&y| policy.prob(y)).sum();
    let s_new = s * c.exp();
    if !(s_new < 1.0) || is_labeled.iter().all(|&l| l) {
        return Err(invalid(format!("shift by {c} leaves no mass outside the labeled set")));
    }
    let scale = (1.0 - s_new) / (1.0 - s);
    let logp: Vec<f64> = policy
        .log_probs()
        .iter()
        .enumerate()
        .map(|(y, l)| if is_labeled[y] { l + c } else { l + scale.ln() })
        .collect();
    Distribution::from_log_weights(policy.space().clone(), &logp)
}

/// Loss changes of sample DPO and of PRO under a labeled-set shift by `c`.
pub fn probe_underdetermination(
    policy: &Distribution,
    labeled: &[usize],
    c: f64,
    dpo: &LossSpec,
    pro: &LossSpec,
) -> Result<(f64, f64)> {
    let before = TabularPolicy::from_distribution(policy)?;
    let after = TabularPolicy::from_distribution(&shift_labeled(policy, labeled, c)?)?;
    Ok((
        dpo.value(&after)? - dpo.value(&before)?,
        pro.value(&after)? - pro.value(&before)?,
    ))
}

/// A pairwise instance with the default hyper response (all unobserved).
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseInstance {
    pub name: String,
    pub reference: Distribution,
    pub data: PairwiseDataset,
    pub hyper: HyperSpace,
}

impl PairwiseInstance {
    pub fn new(name: impl Into<String>, reference: Distribution, data: PairwiseDataset) -> Result<Self> {
        let labeled = FeedbackDataset::Pairwise(data.clone()).labeled_mask();
        let hyper = HyperSpace::unobserved(reference.space().clone(), &labeled)?;
        Self::with_hyper(name, reference, data, hyper)
    }

    /// An instance whose hyper response is a chosen subset of the unobserved
    /// responses.
    pub fn with_hyper(
        name: impl Into<String>,
        reference: Distribution,
        data: PairwiseDataset,
        hyper: HyperSpace,
    ) -> Result<Self> {
        let labeled = FeedbackDataset::Pairwise(data.clone()).labeled_mask();
        if hyper.members().iter().any(|&y| labeled[y]) {
            return Err(invalid("the hyper response must avoid labeled responses"));
        }
        Ok(Self {
            name: name.into(),
            reference,
            data,
            hyper,
        })
    }

    pub fn feedback(&self) -> FeedbackDataset {
        FeedbackDataset::Pairwise(self.data.clone())
    }

    pub fn labeled(&self) -> Vec<usize> {
        self.feedback()
            .labeled_mask()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn collapsed_reference(&self) -> Result<Distribution> {
        hyper_mass(&self.reference, &self.hyper)
    }

    /// μ̂ on `Y_H`.
    pub fn mu_hat_h(&self) -> Result<Distribution> {
        hyper_mass(&self.feedback().empirical_response_dist()?, &self.hyper)
    }

    pub fn score_h(&self) -> Result<ScoreMap> {
        self.hyper.collapse_score(&self.feedback().empirical_score()?)
    }

    /// μ̄ with ρ uniform over the unobserved part of `Y_H` (a point mass on
    /// H under the default construction).
    pub fn mu_bar(&self, eta: f64) -> Result<Distribution> {
        let mu_hat = self.mu_hat_h()?;
        let outside: Vec<f64> = mu_hat.probs().iter().map(|&p| if p == 0.0 { 1.0 } else { 0.0 }).collect();
        let rho = Distribution::from_weights(mu_hat.space().clone(), &outside, crate::space::Support::Empirical)?;
        mu_bar(&mu_hat, &HyperConfig::new(eta, rho)?)
    }

    /// α₀ for regularization distribution `mu` on `Y_H`.
    pub fn alpha0(&self, mu: &Distribution) -> Result<f64> {
        alpha_threshold(&self.mu_hat_h()?, &self.score_h()?, mu)
    }

    /// PRO with the policy living directly on `Y_H`.
    pub fn pro_on_collapsed(&self, alpha: f64, beta: f64, mu: Distribution) -> Result<LossSpec> {
        let prox = Proximal::new(alpha, self.score_h()?, self.mu_hat_h()?, mu)?;
        LossSpec::pro(beta, self.collapsed_reference()?, prox, self.hyper.clone(), false)
    }

    /// PRO with the policy on the base space (exact hyper reward).
    pub fn pro_on_base(&self, alpha: f64, beta: f64, mu: Distribution) -> Result<LossSpec> {
        let prox = Proximal::new(alpha, self.score_h()?, self.mu_hat_h()?, mu)?;
        LossSpec::pro(beta, self.reference.clone(), prox, self.hyper.clone(), false)
    }

    pub fn dpo(&self, beta: f64) -> Result<LossSpec> {
        LossSpec::dpo_sample(beta, self.reference.clone(), self.data.clone())
    }
}

/// A strictly positive random distribution with log-weights `scale · N(0,1)`.
pub fn random_distribution(rng: &mut impl Rng, space: Arc<ResponseSpace>, scale: f64) -> Result<Distribution> {
    let logw: Vec<f64> = (0..space.len())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Distribution::from_log_weights(space, &logw)
}

/// A random tabular policy with logits `scale · N(0,1)`.
pub fn random_tabular(rng: &mut impl Rng, space: Arc<ResponseSpace>, scale: f64) -> Result<TabularPolicy> {
    let logits = (0..space.len())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    TabularPolicy::new(space, logits)
}

/// A random pairwise instance. `n` responses, of which `labeled` appear in
/// the data; labels follow a latent total order, so they are noise free.
pub fn random_pairwise_instance(
    rng: &mut impl Rng,
    name: impl Into<String>,
    n: usize,
    labeled: usize,
    extra_pairs: usize,
) -> Result<PairwiseInstance> {
    if labeled < 2 || labeled >= n {
        return Err(invalid("need 2 ≤ labeled < n"));
    }
    let space = Arc::new(ResponseSpace::indexed(n)?);
    let reference = random_distribution(rng, space.clone(), 0.5)?;
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    ids.truncate(labeled);
    let latent: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let order = |a: usize, b: usize| if latent[a] >= latent[b] { (a, b) } else { (b, a) };
    let mut records = Vec::new();
    // A chain through the labeled responses guarantees each one appears.
    for w in ids.windows(2) {
        let (winner, loser) = order(w[0], w[1]);
        records.push(PairRecord {
            winner,
            loser,
            count: rng.random_range(1..=3),
        });
    }
    for _ in 0..extra_pairs {
        let a = ids[rng.random_range(0..labeled)];
        let mut b = ids[rng.random_range(0..labeled)];
        while b == a {
            b = ids[rng.random_range(0..labeled)];
        }
        let (winner, loser) = order(a, b);
        records.push(PairRecord {
            winner,
            loser,
            count: rng.random_range(1..=3),
        });
    }
    PairwiseInstance::new(name, reference, PairwiseDataset::new(space, records)?)
}

/// The fixed instance suite used by the existence, stationarity and ordering
/// checks: ten noise-free pairwise instances with `|Y|` from 4 to 7 and
/// `|Y_H|` at most 6. On odd-numbered instances with at least two unobserved
/// responses, one of them stays outside H.
pub fn standard_suite() -> Result<Vec<PairwiseInstance>> {
    (0..10)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
            let n = 4 + k % 4;
            let labeled = (2 + k % 3).min(n - 1);
            let inst = random_pairwise_instance(&mut rng, format!("std{k}"), n, labeled, k % 3)?;
            let members = inst.hyper.members();
            if k % 2 == 1 && members.len() >= 2 {
                let hyper = HyperSpace::new_unchecked_labels(inst.reference.space().clone(), &members[1..])?;
                PairwiseInstance::with_hyper(inst.name, inst.reference, inst.data, hyper)
            } else {
                Ok(inst)
            }
        })
        .collect()
}

/// One eDPO-versus-PRO comparison: the same data solved on Y with `mu` and on
/// `Y_H` with `mu` collapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceCase {
    pub instance: PairwiseInstance,
    pub mu: Distribution,
    pub alpha: f64,
    pub beta: f64,
}

impl CorrespondenceCase {
    /// eDPO over the base space.
    pub fn full_spec(&self) -> Result<LossSpec> {
        let prox = Proximal::from_dataset(self.alpha, &self.instance.feedback(), self.mu.clone())?;
        LossSpec::edpo(self.beta, self.instance.reference.clone(), prox)
    }

    /// PRO with a tabular policy on `Y_H`.
    pub fn collapsed_spec(&self) -> Result<LossSpec> {
        self.instance
            .pro_on_collapsed(self.alpha, self.beta, hyper_mass(&self.mu, &self.instance.hyper)?)
    }
}

/// Five instances with `|Y|` from 5 to 8 and `|H|` of 2 or 3, each with a
/// random strictly positive μ and α = max(10, 2·α₀) over both spaces.
pub fn correspondence_suite() -> Result<Vec<CorrespondenceCase>> {
    (0..5)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + k as u64);
            let n = 5 + k % 4;
            let h = 2 + k % 2;
            let labeled = (2 + k % 2).min(n - h);
            let inst = random_pairwise_instance(&mut rng, format!("corr{k}"), n, labeled, k % 3)?;
            let members = &inst.hyper.members()[..h];
            let hyper = HyperSpace::new_unchecked_labels(inst.reference.space().clone(), members)?;
            let inst = PairwiseInstance::with_hyper(inst.name, inst.reference, inst.data, hyper)?;
            let mu = random_distribution(&mut rng, inst.reference.space().clone(), 0.5)?;
            let fb = inst.feedback();
            let a_full = alpha_threshold(&fb.empirical_response_dist()?, &fb.empirical_score()?, &mu)?;
            let a_h = inst.alpha0(&hyper_mass(&mu, &inst.hyper)?)?;
            Ok(CorrespondenceCase {
                instance: inst,
                mu,
                alpha: (2.0 * a_full.max(a_h)).max(10.0),
                beta: 1.0,
            })
        })
        .collect()
}

/// Random pairwise records over `labeled` (at least one record each).
fn random_pairs(rng: &mut impl Rng, space: &Arc<ResponseSpace>, labeled: &[usize], extra: usize) -> Result<PairwiseDataset> {
    let mut records = Vec::new();
    let pick_other = |rng: &mut dyn rand::RngCore, a: usize| loop {
        let b = labeled[rng.random_range(0..labeled.len())];
        if b != a {
            break b;
        }
    };
    for &a in labeled {
        let b = pick_other(rng, a);
        let (winner, loser) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        records.push(PairRecord {
            winner,
            loser,
            count: rng.random_range(1..=3),
        });
    }
    for _ in 0..extra {
        let a = labeled[rng.random_range(0..labeled.len())];
        let b = pick_other(rng, a);
        records.push(PairRecord {
            winner: a,
            loser: b,
            count: rng.random_range(1..=3),
        });
    }
    PairwiseDataset::new(space.clone(), records)
}

/// A random subset of `k` distinct indices below `n`.
fn random_subset(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    ids.truncate(k);
    ids
}

/// A random, valid spec of the given kind on `space` (size ≥ 4). The
/// reference is random and strictly positive; the hyper response, when the
/// kind uses one, has an exact (unpinned) reward on about half the draws.
pub fn random_spec(kind: crate::losses::LossKind, rng: &mut impl Rng, space: Arc<ResponseSpace>) -> Result<LossSpec> {
    use crate::feedback::{BinaryDataset, BinaryRecord, PreferenceMatrix, ScalarDataset, ScalarRecord};
    use crate::losses::{KtoParams, KtoSign, LossKind, ProPForm};

    let n = space.len();
    if n < 4 {
        return Err(invalid("random specs need at least 4 responses"));
    }
    let beta = rng.random_range(0.2..2.0);
    let alpha = rng.random_range(0.5..5.0);
    let reference = random_distribution(rng, space.clone(), 0.5)?;
    let pin = rng.random_bool(0.3);
    let max_labeled = (n - 1).min(5);
    let k = rng.random_range(2..=max_labeled);
    let labeled = random_subset(rng, n, k);
    match kind {
        LossKind::DpoSample => {
            let data = random_pairs(rng, &space, &labeled, 2)?;
            LossSpec::dpo_sample(beta, reference, data)
        }
        LossKind::DpoPopulation => {
            let mu = random_distribution(rng, space.clone(), 0.7)?;
            let rewards: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let pref = PreferenceMatrix::bradley_terry(space.clone(), &rewards)?;
            LossSpec::dpo_population(beta, reference, pref, mu)
        }
        LossKind::Edpo => {
            let data = FeedbackDataset::Pairwise(random_pairs(rng, &space, &labeled, 2)?);
            let mu = random_distribution(rng, space.clone(), 0.7)?;
            LossSpec::edpo(beta, reference, Proximal::from_dataset(alpha, &data, mu)?)
        }
        LossKind::Pro => {
            let data = FeedbackDataset::Pairwise(random_pairs(rng, &space, &labeled, 2)?);
            let hs = HyperSpace::unobserved(space.clone(), &data.labeled_mask())?;
            let mu = random_distribution(rng, hs.collapsed().clone(), 0.7)?;
            let prox = Proximal::from_dataset_collapsed(alpha, &data, &hs, mu)?;
            LossSpec::pro(beta, reference, prox, hs, pin)
        }
        LossKind::ProP => {
            let data = random_pairs(rng, &space, &labeled, 2)?;
            let form = if rng.random_bool(0.5) {
                ProPForm::PerRecord
            } else {
                let labeled_mask = FeedbackDataset::Pairwise(data.clone()).labeled_mask();
                let hyper = HyperSpace::unobserved(space.clone(), &labeled_mask)?;
                let eta = if rng.random_bool(0.5) { 0.5 } else { 2.0 / 3.0 };
                let config = HyperConfig::on_hyper(eta, &hyper)?;
                ProPForm::Global { hyper, config }
            };
            LossSpec::new(beta, reference, LossBody::ProP { data, pin, form })
        }
        LossKind::ProB => {
            let records = labeled
                .iter()
                .map(|&response| BinaryRecord {
                    response,
                    desired: rng.random_bool(0.5),
                    count: rng.random_range(1..=4),
                })
                .collect();
            let data = BinaryDataset::new(space.clone(), records)?;
            let reweight = rng.random_bool(0.5);
            LossSpec::new(
                beta,
                reference,
                LossBody::ProB {
                    data,
                    alpha,
                    pin,
                    reweight,
                },
            )
        }
        LossKind::ProS => {
            let group = rng.random_range(2..=(n - 1).min(4));
            let groups = rng.random_range(1..=3);
            let mut records = Vec::new();
            for _ in 0..groups {
                for response in random_subset(rng, n, group) {
                    records.push(ScalarRecord {
                        response,
                        score: rng.random_range(-1.0..1.0),
                        count: rng.random_range(1..=3),
                    });
                }
            }
            let data = ScalarDataset::new(space.clone(), records, group)?;
            LossSpec::new(beta, reference, LossBody::ProS { data, alpha, pin })
        }
        LossKind::Kto => {
            let pairs = random_pairs(rng, &space, &labeled, 2)?;
            let data = if rng.random_bool(0.5) {
                FeedbackDataset::Pairwise(pairs)
            } else {
                FeedbackDataset::Binary(pairs.binarize())
            };
            let params = KtoParams {
                z0: rng.random_range(0.0..0.5),
                lambda_d: rng.random_range(0.5..2.0),
                lambda_u: rng.random_range(0.5..2.0),
                sign_mode: if rng.random_bool(0.5) {
                    KtoSign::AsPrinted
                } else {
                    KtoSign::Utility
                },
            };
            LossSpec::new(beta, reference, LossBody::Kto { data, params })
        }
    }
}
