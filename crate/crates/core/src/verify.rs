//! The full numerical verification suite: every optimality and identity check over its
//! instance family, as a flat list of [`TheoremReport`]s.

use std::f64::consts::LN_2;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::feedback::{true_score, PreferenceMatrix};
use crate::hyper::HyperConfig;
use crate::losses::{LossBody, LossKind, LossSpec, ProPForm, Proximal};
use crate::oracle::{
    check_existence_boundary, check_gradient_equivalence, check_hyper_correspondence, check_ordering,
    check_stationarity, correspondence_suite, finite_diff_grad, probe_underdetermination, random_distribution,
    random_pairwise_instance, random_spec, random_tabular, solve_optimal, standard_suite, SolverConfig,
    TheoremReport,
};
use crate::policy::{AutoregressivePolicy, Policy};
use crate::space::ResponseSpace;

/// Check identifiers in run order.
pub const CHECK_IDS: [&str; 8] = ["t31", "t32", "c33", "t41", "t42", "t43", "probe", "fd"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyOptions {
    /// Run a single check.
    pub only: Option<String>,
    /// Flip the sign of the eDPO regularizer in the t31 check. A sanity
    /// test for the harness: t31 must then fail.
    pub inject_bug: bool,
    /// Seed for the randomly drawn instance families.
    pub seed: u64,
}

/// Runs the selected checks. An unknown `only` id is an invalid argument.
pub fn run_suite(opts: &VerifyOptions) -> Result<Vec<TheoremReport>> {
    if let Some(id) = &opts.only {
        if !CHECK_IDS.contains(&id.as_str()) {
            return Err(invalid(format!("unknown check '{id}' (known: {})", CHECK_IDS.join(", "))));
        }
    }
    let wanted = |id: &str| opts.only.as_deref().map_or(true, |o| o == id);
    let mut out = Vec::new();
    if wanted("t31") {
        out.extend(check_t31(opts.seed, opts.inject_bug)?);
    }
    if wanted("t32") || wanted("c33") {
        let (t32, c33) = check_t32_c33()?;
        if wanted("t32") {
            out.extend(t32);
        }
        if wanted("c33") {
            out.extend(c33);
        }
    }
    if wanted("t41") {
        out.extend(check_t41()?);
    }
    if wanted("t42") {
        out.extend(check_t42()?);
    }
    if wanted("t43") {
        out.extend(check_t43(opts.seed)?);
    }
    if wanted("probe") {
        out.extend(check_probe(opts.seed)?);
    }
    if wanted("fd") {
        out.extend(check_fd(opts.seed)?);
    }
    Ok(out)
}

/// Population DPO against eDPO with the true score and α = 1.
pub fn check_t31(seed: u64, inject_bug: bool) -> Result<Vec<TheoremReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x31);
    (0..20)
        .map(|k| {
            let n = rng.random_range(2..=8);
            let space = Arc::new(ResponseSpace::indexed(n)?);
            let mu = random_distribution(&mut rng, space.clone(), 1.0)?;
            let reference = random_distribution(&mut rng, space.clone(), 1.0)?;
            let pref = random_antisymmetric(&mut rng, space.clone())?;
            let beta = rng.random_range(0.1..2.0);
            let score = true_score(&pref, &mu)?;
            let dpo = LossSpec::dpo_population(beta, reference.clone(), pref, mu.clone())?;
            let prox = if inject_bug {
                Proximal {
                    alpha: -1.0,
                    score,
                    mu_hat: mu.clone(),
                    mu,
                }
            } else {
                Proximal::new(1.0, score, mu.clone(), mu)?
            };
            let edpo = LossSpec::edpo(beta, reference, prox)?;
            let policies: Vec<_> = (0..3)
                .map(|_| random_tabular(&mut rng, space.clone(), 1.5))
                .collect::<Result<_>>()?;
            let refs: Vec<&dyn Policy> = policies.iter().map(|p| p as &dyn Policy).collect();
            check_gradient_equivalence("t31", &format!("rand{k}(n={n})"), &dpo, &edpo, &refs, 1e-9)
        })
        .collect()
}

/// A random complementary preference matrix (not necessarily Bradley–Terry).
pub fn random_antisymmetric(rng: &mut impl Rng, space: Arc<ResponseSpace>) -> Result<PreferenceMatrix> {
    let n = space.len();
    let mut p = vec![0.5; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.random_range(0.0..=1.0);
            p[i * n + j] = v;
            p[j * n + i] = 1.0 - v;
        }
    }
    PreferenceMatrix::new(space, p)
}

/// Stationarity and ordering of PRO solves at α = 2α₀ on the standard suite.
pub fn check_t32_c33() -> Result<(Vec<TheoremReport>, Vec<TheoremReport>)> {
    let cfg = SolverConfig::default();
    let mut t32 = Vec::new();
    let mut c33 = Vec::new();
    for inst in standard_suite()? {
        let mu = inst.mu_bar(2.0 / 3.0)?;
        let spec = inst.pro_on_collapsed(2.0 * inst.alpha0(&mu)?, 1.0, mu)?;
        let rep = solve_optimal(&spec, &cfg)?;
        if !rep.converged() {
            t32.push(TheoremReport::new("t32", &inst.name, f64::INFINITY, 1e-5).fail());
            c33.push(TheoremReport::new("c33", &inst.name, f64::INFINITY, 1e-5).fail());
            continue;
        }
        t32.push(check_stationarity(&rep, &spec, &inst.name)?);
        c33.push(check_ordering(
            &rep,
            spec.reference(),
            &inst.score_h()?,
            &inst.mu_hat_h()?,
            &inst.name,
        )?);
    }
    Ok((t32, c33))
}

/// eDPO on Y against PRO on `Y_H` over the correspondence suite.
pub fn check_t41() -> Result<Vec<TheoremReport>> {
    let cfg = SolverConfig::default();
    correspondence_suite()?
        .into_iter()
        .map(|case| {
            let name = case.instance.name.clone();
            match check_hyper_correspondence(
                &case.full_spec()?,
                &case.collapsed_spec()?,
                &case.instance.hyper,
                &cfg,
                &name,
            ) {
                Ok(r) => Ok(r),
                Err(crate::Error::NotApplicable(_)) => Ok(TheoremReport::new("t41", name, f64::INFINITY, 1e-5).fail()),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Existence boundary of PRO around α₀, and degeneracy of sample DPO, on the
/// standard suite.
pub fn check_t42() -> Result<Vec<TheoremReport>> {
    let cfg = SolverConfig::default();
    let mut out = Vec::new();
    for inst in standard_suite()? {
        let mu = inst.mu_bar(2.0 / 3.0)?;
        let a0 = inst.alpha0(&mu)?;
        let make = |alpha: f64| inst.pro_on_collapsed(alpha, 1.0, mu.clone());
        let (rep, _) = check_existence_boundary(&make, a0, &[a0, 2.0 * a0, 10.0 * a0], &cfg, &inst.name)?;
        out.push(rep);
        let has_negative = inst.score_h()?.values().iter().any(|&s| s < 0.0);
        if has_negative {
            let dpo = solve_optimal(&inst.dpo(1.0)?, &cfg)?;
            let residual = if dpo.degenerate() { 0.0 } else { 1.0 };
            out.push(
                TheoremReport::new("t42", format!("{}/dpo", inst.name), residual, 0.0)
                    .with_detail("min_prob", dpo.best.min_prob),
            );
        }
    }
    Ok(out)
}

/// PRO with μ̄ and α = 1/η² against the global PRO-P form. The residual
/// covers the gradient gap and the deviation of the value gap from
/// `−log 2/(2η²) − β E_μ̂[ŝ log π_ref]`.
pub fn check_t43(seed: u64) -> Result<Vec<TheoremReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x43);
    let mut out = Vec::new();
    for k in 0..20 {
        let n = rng.random_range(4..=8);
        let labeled = rng.random_range(2..=(n - 1).min(4));
        let inst = random_pairwise_instance(&mut rng, format!("rand{k}"), n, labeled, k % 3)?;
        let eta = if k % 2 == 0 { 0.5 } else { 2.0 / 3.0 };
        let beta = rng.random_range(0.2..1.5);
        let (pro, pro_p) = pro_and_global_pro_p(&inst, eta, beta)?;
        let fb = inst.feedback();
        let mu_hat = fb.empirical_response_dist()?;
        let s = fb.empirical_score()?;
        let e_ref: f64 = (0..n).map(|y| mu_hat.prob(y) * s.value(y) * inst.reference.prob(y).ln()).sum();
        let constant = -LN_2 / (2.0 * eta * eta) - beta * e_ref;
        let mut grad_gap = 0.0f64;
        let mut value_gap = 0.0f64;
        for _ in 0..3 {
            let pol = random_tabular(&mut rng, inst.reference.space().clone(), 1.0)?;
            let a = pro.evaluate(&pol)?;
            let b = pro_p.evaluate(&pol)?;
            value_gap = value_gap.max((a.value - b.value - constant).abs());
            for (x, y) in a.gradient.iter().zip(&b.gradient) {
                grad_gap = grad_gap.max((x - y).abs());
            }
        }
        out.push(
            TheoremReport::new("t43", format!("{}(eta={eta:.4})", inst.name), grad_gap.max(value_gap), 1e-9)
                .with_detail("grad", grad_gap)
                .with_detail("value", value_gap),
        );
    }
    Ok(out)
}

/// `(PRO with μ̄ and α = 1/η², global PRO-P)` for a pairwise instance, both
/// with exact hyper rewards on the base space.
pub fn pro_and_global_pro_p(inst: &crate::oracle::PairwiseInstance, eta: f64, beta: f64) -> Result<(LossSpec, LossSpec)> {
    let pro = inst.pro_on_base(1.0 / (eta * eta), beta, inst.mu_bar(eta)?)?;
    let pro_p = LossSpec::new(
        beta,
        inst.reference.clone(),
        LossBody::ProP {
            data: inst.data.clone(),
            pin: false,
            form: ProPForm::Global {
                hyper: inst.hyper.clone(),
                config: HyperConfig::on_hyper(eta, &inst.hyper)?,
            },
        },
    )?;
    Ok((pro, pro_p))
}

/// Labeled-set shift by −½: sample DPO unchanged, PRO changed.
pub fn check_probe(seed: u64) -> Result<Vec<TheoremReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e);
    (0..10)
        .map(|k| {
            let n = rng.random_range(4..=8);
            let labeled = rng.random_range(2..=(n - 2));
            let inst = random_pairwise_instance(&mut rng, format!("rand{k}"), n, labeled, 2)?;
            let mu = crate::space::Distribution::uniform(inst.hyper.collapsed().clone());
            let pro = inst.pro_on_base(crate::losses::DEFAULT_ALPHA, 1.0, mu)?;
            let (d, p) = probe_underdetermination(&inst.reference, &inst.labeled(), -0.5, &inst.dpo(1.0)?, &pro)?;
            let rep = TheoremReport::new("probe", &inst.name, d.abs(), 1e-12).with_detail("pro_delta", p);
            Ok(if p.abs() > 1e-3 { rep } else { rep.fail() })
        })
        .collect()
}

/// Analytic gradients of every loss kind against central differences, on
/// alternating tabular and autoregressive policies.
pub fn check_fd(seed: u64) -> Result<Vec<TheoremReport>> {
    let mut out = Vec::new();
    for kind in LossKind::ALL {
        let mut worst = 0.0f64;
        for trial in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xfd00 + trial * 16 + kind as u64));
            let err = if trial % 2 == 0 {
                let space = Arc::new(ResponseSpace::indexed(rng.random_range(4..=8))?);
                let spec = random_spec(kind, &mut rng, space.clone())?;
                let pol = random_tabular(&mut rng, space, 1.0)?;
                relative_error(&spec.evaluate(&pol)?.gradient, &finite_diff_grad(&spec, &pol, 1e-5)?)
            } else {
                let (v, l) = if trial % 4 == 1 { (2, 3) } else { (3, 2) };
                let space = Arc::new(AutoregressivePolicy::sequence_space(v, l)?);
                let spec = random_spec(kind, &mut rng, space.clone())?;
                let params = (0..AutoregressivePolicy::param_count(v, l))
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let pol = AutoregressivePolicy::with_space(v, l, space, params)?;
                relative_error(&spec.evaluate(&pol)?.gradient, &finite_diff_grad(&spec, &pol, 1e-5)?)
            };
            worst = worst.max(err);
        }
        out.push(TheoremReport::new("fd", kind.name(), worst, 1e-6));
    }
    Ok(out)
}

/// Max absolute deviation relative to the largest finite-difference entry.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-6);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_check_is_rejected() {
        let opts = VerifyOptions {
            only: Some("t99".into()),
            ..Default::default()
        };
        assert!(run_suite(&opts).is_err());
    }

    #[test]
    fn only_filters_to_one_check() {
        let opts = VerifyOptions {
            only: Some("t43".into()),
            ..Default::default()
        };
        let reps = run_suite(&opts).unwrap();
        assert_eq!(reps.len(), 20);
        assert!(reps.iter().all(|r| r.id == "t43" && r.pass));
    }

    #[test]
    fn injected_bug_breaks_t31() {
        assert!(check_t31(0, false).unwrap().iter().all(|r| r.pass));
        assert!(check_t31(0, true).unwrap().iter().any(|r| !r.pass));
    }
}
