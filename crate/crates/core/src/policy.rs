//! Differentiable policies over a finite response space.
//!
//! A policy exposes its log-probability vector and the chain rule from
//! `∂L/∂log π` to `∂L/∂θ`. Every loss is written against log-probabilities,
//! so the same backward pass serves both parameterizations.

use std::sync::Arc;

use crate::error::{invalid, non_finite, Result};
use crate::numeric::log_softmax;
use crate::space::{Distribution, ResponseSpace};

pub const MAX_VOCAB: usize = 8;
pub const MAX_LENGTH: usize = 5;

pub trait Policy {
    fn space(&self) -> &Arc<ResponseSpace>;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// `log π(y)` for every response in enumeration order.
    fn log_probs(&self) -> Vec<f64>;
    /// Maps `∂L/∂log π` (one entry per response) to `∂L/∂θ`.
    fn backward(&self, logp_grad: &[f64]) -> Vec<f64>;

    fn num_params(&self) -> usize {
        self.params().len()
    }

    fn distribution(&self) -> Result<Distribution> {
        if let Some(i) = self.params().iter().position(|p| !p.is_finite()) {
            return Err(non_finite("policy parameters", format!("parameter {i} is not finite")));
        }
        let probs: Vec<f64> = self.log_probs().into_iter().map(f64::exp).collect();
        // Renormalize to absorb rounding in the exp of each log-probability.
        let total: f64 = probs.iter().sum();
        Distribution::new(self.space().clone(), probs.iter().map(|p| p / total).collect())
    }
}

/// Softmax over one free logit per response.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    space: Arc<ResponseSpace>,
    logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(space: Arc<ResponseSpace>, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != space.len() {
            return Err(invalid(format!(
                "{} logits for a space of {}",
                logits.len(),
                space.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(invalid("tabular logits must be finite"));
        }
        Ok(Self { space, logits })
    }

    pub fn uniform(space: Arc<ResponseSpace>) -> Self {
        let n = space.len();
        Self {
            space,
            logits: vec![0.0; n],
        }
    }

    /// Logits equal to `log p`, so the policy reproduces `dist` exactly.
    pub fn from_distribution(dist: &Distribution) -> Result<Self> {
        if !dist.is_strictly_positive() {
            return Err(invalid("a tabular policy needs a strictly positive distribution"));
        }
        Self::new(dist.space().clone(), dist.log_probs())
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

impl Policy for TabularPolicy {
    fn space(&self) -> &Arc<ResponseSpace> {
        &self.space
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }

    fn backward(&self, logp_grad: &[f64]) -> Vec<f64> {
        let probs: Vec<f64> = self.log_probs().into_iter().map(f64::exp).collect();
        let total: f64 = logp_grad.iter().sum();
        logp_grad
            .iter()
            .zip(&probs)
            .map(|(g, p)| g - p * total)
            .collect()
    }
}

/// A bigram sequence model over `vocab^length` fixed-length sequences.
///
/// Position 0 draws from a single start row; position `t ≥ 1` draws from the
/// row of table `t` selected by the previous token. Parameters are laid out
/// as `[start row (V)] ++ [table 1 (V×V)] ++ … ++ [table L-1 (V×V)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoregressivePolicy {
    vocab: usize,
    length: usize,
    space: Arc<ResponseSpace>,
    params: Vec<f64>,
}

impl AutoregressivePolicy {
    pub fn new(vocab: usize, length: usize, params: Vec<f64>) -> Result<Self> {
        let space = Arc::new(Self::sequence_space(vocab, length)?);
        Self::with_space(vocab, length, space, params)
    }

    /// Shares an already-built sequence space (it must be the one
    /// [`AutoregressivePolicy::sequence_space`] produces).
    pub fn with_space(
        vocab: usize,
        length: usize,
        space: Arc<ResponseSpace>,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = Self::param_count(vocab, length);
        if params.len() != expected {
            return Err(invalid(format!(
                "autoregressive policy V={vocab} L={length} needs {expected} parameters, got {}",
                params.len()
            )));
        }
        if space.len() != vocab.pow(length as u32) {
            return Err(invalid("space does not match vocab^length"));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("autoregressive parameters must be finite"));
        }
        Ok(Self {
            vocab,
            length,
            space,
            params,
        })
    }

    pub fn uniform(vocab: usize, length: usize) -> Result<Self> {
        Self::new(vocab, length, vec![0.0; Self::param_count(vocab, length)])
    }

    pub fn param_count(vocab: usize, length: usize) -> usize {
        vocab + length.saturating_sub(1) * vocab * vocab
    }

    /// All sequences in lexicographic order, tokens spelled `a, b, c, …`.
    pub fn sequence_space(vocab: usize, length: usize) -> Result<ResponseSpace> {
        if !(2..=MAX_VOCAB).contains(&vocab) {
            return Err(invalid(format!("vocab must be in 2..={MAX_VOCAB}, got {vocab}")));
        }
        if !(1..=MAX_LENGTH).contains(&length) {
            return Err(invalid(format!("length must be in 1..={MAX_LENGTH}, got {length}")));
        }
        let n = vocab.pow(length as u32);
        ResponseSpace::new((0..n).map(|i| {
            decode(i, vocab, length)
                .into_iter()
                .map(|t| (b'a' + t as u8) as char)
                .collect::<String>()
        }))
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn tokens(&self, seq: usize) -> Vec<usize> {
        decode(seq, self.vocab, self.length)
    }

    /// Offset of the logit row used at `position` given the previous token.
    fn row_offset(&self, position: usize, prev: usize) -> usize {
        if position == 0 {
            0
        } else {
            self.vocab + (position - 1) * self.vocab * self.vocab + prev * self.vocab
        }
    }

    fn num_rows(&self) -> usize {
        1 + self.length.saturating_sub(1) * self.vocab
    }

    /// Log-softmax of every row, in parameter layout.
    fn row_log_probs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.params.len());
        for row in self.params.chunks(self.vocab) {
            out.extend(log_softmax(row));
        }
        out
    }
}

impl Policy for AutoregressivePolicy {
    fn space(&self) -> &Arc<ResponseSpace> {
        &self.space
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn log_probs(&self) -> Vec<f64> {
        let table = self.row_log_probs();
        (0..self.space.len())
            .map(|seq| {
                let toks = self.tokens(seq);
                let mut lp = 0.0;
                let mut prev = 0;
                for (t, &tok) in toks.iter().enumerate() {
                    lp += table[self.row_offset(t, prev) + tok];
                    prev = tok;
                }
                lp
            })
            .collect()
    }

    fn backward(&self, logp_grad: &[f64]) -> Vec<f64> {
        let table = self.row_log_probs();
        // chosen[j] accumulates Σ g over sequences picking token j in that row;
        // row_total accumulates Σ g over sequences visiting the row.
        let mut chosen = vec![0.0; self.params.len()];
        let mut row_total = vec![0.0; self.num_rows()];
        for (seq, &g) in logp_grad.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let mut prev = 0;
            for (t, tok) in self.tokens(seq).into_iter().enumerate() {
                let off = self.row_offset(t, prev);
                chosen[off + tok] += g;
                row_total[off / self.vocab] += g;
                prev = tok;
            }
        }
        let mut grad = vec![0.0; self.params.len()];
        for (r, total) in row_total.iter().enumerate() {
            let off = r * self.vocab;
            for j in 0..self.vocab {
                grad[off + j] = chosen[off + j] - table[off + j].exp() * total;
            }
        }
        grad
    }
}

fn decode(mut index: usize, vocab: usize, length: usize) -> Vec<usize> {
    let mut toks = vec![0; length];
    for t in (0..length).rev() {
        toks[t] = index % vocab;
        index /= vocab;
    }
    toks
}
