//! Finite response universes and probability vectors over them.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};

/// Tolerance for `Σ p = 1`.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// An ordered, finite set of response identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseSpace {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl ResponseSpace {
    pub fn new<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        if ids.len() < 2 {
            return Err(invalid(format!(
                "a response space needs at least 2 responses, got {}",
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(invalid(format!("response id {id:?} must be non-empty without whitespace")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate response id {id:?}")));
            }
        }
        Ok(Self { ids, index })
    }

    /// Responses named `y0, y1, …`.
    pub fn indexed(size: usize) -> Result<Self> {
        Self::new((0..size).map(|i| format!("y{i}")))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Parses the one-identifier-per-line file form.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for id in &self.ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for ResponseSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.ids.join(", "))
    }
}

/// Whether zero entries are permitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// Every entry strictly positive (policies, references, μ).
    Full,
    /// Exact zeros allowed (empirical distributions).
    Empirical,
}

/// A probability vector over a [`ResponseSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    space: Arc<ResponseSpace>,
    probs: Vec<f64>,
    support: Support,
}

impl Distribution {
    /// A strictly positive distribution.
    pub fn new(space: Arc<ResponseSpace>, probs: Vec<f64>) -> Result<Self> {
        Self::with_support(space, probs, Support::Full)
    }

    /// An empirical distribution; zero entries allowed.
    pub fn empirical(space: Arc<ResponseSpace>, probs: Vec<f64>) -> Result<Self> {
        Self::with_support(space, probs, Support::Empirical)
    }

    fn with_support(space: Arc<ResponseSpace>, probs: Vec<f64>, support: Support) -> Result<Self> {
        if probs.len() != space.len() {
            return Err(invalid(format!(
                "distribution has {} entries for a space of {}",
                probs.len(),
                space.len()
            )));
        }
        for (i, &p) in probs.iter().enumerate() {
            let ok = match support {
                Support::Full => p > 0.0 && p.is_finite(),
                Support::Empirical => p >= 0.0 && p.is_finite(),
            };
            if !ok {
                return Err(invalid(format!(
                    "entry {} ({}) = {p} violates {:?} support",
                    i,
                    space.id(i),
                    support
                )));
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            space,
            probs,
            support,
        })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(space: Arc<ResponseSpace>, weights: &[f64], support: Support) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("weights must have a positive finite sum"));
        }
        let probs = weights.iter().map(|w| w / total).collect();
        Self::with_support(space, probs, support)
    }

    /// Exponential normalization of log-weights.
    pub fn from_log_weights(space: Arc<ResponseSpace>, logw: &[f64]) -> Result<Self> {
        let logp = crate::numeric::log_softmax(logw);
        let probs = logp.iter().map(|l| l.exp()).collect();
        Self::with_support(space, probs, Support::Full)
    }

    pub fn uniform(space: Arc<ResponseSpace>) -> Self {
        let n = space.len();
        Self {
            probs: vec![1.0 / n as f64; n],
            space,
            support: Support::Full,
        }
    }

    pub fn space(&self) -> &Arc<ResponseSpace> {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn support_kind(&self) -> Support {
        self.support
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }

    /// Indices whose probability exceeds `threshold`.
    pub fn support(&self, threshold: f64) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > threshold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

/// Whether two spaces are the same object or carry identical identifiers.
pub fn same_space(a: &Arc<ResponseSpace>, b: &Arc<ResponseSpace>) -> bool {
    Arc::ptr_eq(a, b) || a.ids() == b.ids()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Arc<ResponseSpace> {
        Arc::new(ResponseSpace::new(["a", "b", "c"]).unwrap())
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(ResponseSpace::new(["only"]).is_err());
        assert!(ResponseSpace::new(["a", "a"]).is_err());
        assert!(ResponseSpace::new(["a", "b c"]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let s = ResponseSpace::new(["x1", "x2", "x3"]).unwrap();
        assert_eq!(ResponseSpace::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn strict_vs_empirical() {
        assert!(Distribution::new(abc(), vec![0.5, 0.5, 0.0]).is_err());
        let d = Distribution::empirical(abc(), vec![0.5, 0.5, 0.0]).unwrap();
        assert_eq!(d.support(0.0), vec![0, 1]);
        assert!(Distribution::new(abc(), vec![0.5, 0.4, 0.2]).is_err());
    }

    #[test]
    fn log_weights_normalize() {
        let d = Distribution::from_log_weights(abc(), &[0.0, 2f64.ln(), 0.0]).unwrap();
        let want = [0.25, 0.5, 0.25];
        for (p, w) in d.probs().iter().zip(want) {
            assert!((p - w).abs() < 1e-15);
        }
    }
}
