//! Preference data, empirical response distributions and score functions.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::space::{same_space, Distribution, ResponseSpace, Support, SUM_TOLERANCE};

const COMPLEMENT_TOLERANCE: f64 = 1e-12;

/// `p[i][j]` is the probability that response `i` is preferred over `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceMatrix {
    space: Arc<ResponseSpace>,
    p: Vec<f64>,
}

impl PreferenceMatrix {
    /// Row-major `n × n` entries.
    pub fn new(space: Arc<ResponseSpace>, p: Vec<f64>) -> Result<Self> {
        let n = space.len();
        if p.len() != n * n {
            return Err(invalid(format!("preference matrix needs {} entries, got {}", n * n, p.len())));
        }
        for i in 0..n {
            if p[i * n + i] != 0.5 {
                return Err(invalid(format!("diagonal entry {i} must be 1/2")));
            }
            for j in 0..n {
                let v = p[i * n + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(invalid(format!("entry ({i},{j}) = {v} outside [0,1]")));
                }
                if (v + p[j * n + i] - 1.0).abs() > COMPLEMENT_TOLERANCE {
                    return Err(invalid(format!("entries ({i},{j}) and ({j},{i}) do not sum to 1")));
                }
            }
        }
        Ok(Self { space, p })
    }

    /// Every entry ½.
    pub fn indifferent(space: Arc<ResponseSpace>) -> Self {
        let n = space.len();
        Self {
            space,
            p: vec![0.5; n * n],
        }
    }

    /// Bradley–Terry preferences `σ(r_i − r_j)` from latent rewards.
    pub fn bradley_terry(space: Arc<ResponseSpace>, rewards: &[f64]) -> Result<Self> {
        let n = space.len();
        if rewards.len() != n {
            return Err(invalid("one reward per response required"));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(invalid("rewards must be finite"));
        }
        let mut p = vec![0.5; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = crate::numeric::sigmoid(rewards[i] - rewards[j]);
                p[i * n + j] = v;
                p[j * n + i] = 1.0 - v;
            }
        }
        Ok(Self { space, p })
    }

    pub fn space(&self) -> &Arc<ResponseSpace> {
        &self.space
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.space.len() + j]
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRecord {
    pub winner: usize,
    pub loser: usize,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryRecord {
    pub response: usize,
    pub desired: bool,
    pub count: u64,
}

impl BinaryRecord {
    /// The ±½ label.
    pub fn label(&self) -> f64 {
        if self.desired {
            0.5
        } else {
            -0.5
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarRecord {
    pub response: usize,
    pub score: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDataset {
    space: Arc<ResponseSpace>,
    records: Vec<PairRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    space: Arc<ResponseSpace>,
    records: Vec<BinaryRecord>,
}

/// Scalar annotations. Records are grouped into consecutive prompt groups of
/// `group_size` responses each.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarDataset {
    space: Arc<ResponseSpace>,
    records: Vec<ScalarRecord>,
    group_size: usize,
}

fn check_index(space: &ResponseSpace, i: usize) -> Result<()> {
    if i >= space.len() {
        return Err(invalid(format!("response index {i} out of range for a space of {}", space.len())));
    }
    Ok(())
}

fn check_count(count: u64) -> Result<()> {
    if count == 0 {
        return Err(invalid("record counts must be at least 1"));
    }
    Ok(())
}

impl PairwiseDataset {
    pub fn new(space: Arc<ResponseSpace>, records: Vec<PairRecord>) -> Result<Self> {
        for r in &records {
            check_index(&space, r.winner)?;
            check_index(&space, r.loser)?;
            check_count(r.count)?;
            if r.winner == r.loser {
                return Err(invalid(format!("record compares {} with itself", space.id(r.winner))));
            }
        }
        Ok(Self { space, records })
    }

    pub fn space(&self) -> &Arc<ResponseSpace> {
        &self.space
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn total_count(&self) -> u64 {
        self.records.iter().map(|r| r.count).sum()
    }

    /// Winner labelled desired, loser undesired, same counts.
    pub fn binarize(&self) -> BinaryDataset {
        let records = self
            .records
            .iter()
            .flat_map(|r| {
                [
                    BinaryRecord {
                        response: r.winner,
                        desired: true,
                        count: r.count,
                    },
                    BinaryRecord {
                        response: r.loser,
                        desired: false,
                        count: r.count,
                    },
                ]
            })
            .collect();
        BinaryDataset {
            space: self.space.clone(),
            records,
        }
    }

    /// Win fraction per unordered pair; uncompared pairs and the diagonal get ½.
    pub fn empirical_preference(&self) -> Result<PreferenceMatrix> {
        let n = self.space.len();
        let mut wins = vec![0u64; n * n];
        for r in &self.records {
            wins[r.winner * n + r.loser] += r.count;
        }
        let mut p = vec![0.5; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (wins[i * n + j], wins[j * n + i]);
                if a + b > 0 {
                    let v = a as f64 / (a + b) as f64;
                    p[i * n + j] = v;
                    p[j * n + i] = b as f64 / (a + b) as f64;
                }
            }
        }
        PreferenceMatrix::new(self.space.clone(), p)
    }
}

impl BinaryDataset {
    pub fn new(space: Arc<ResponseSpace>, records: Vec<BinaryRecord>) -> Result<Self> {
        for r in &records {
            check_index(&space, r.response)?;
            check_count(r.count)?;
        }
        Ok(Self { space, records })
    }

    pub fn space(&self) -> &Arc<ResponseSpace> {
        &self.space
    }

    pub fn records(&self) -> &[BinaryRecord] {
        &self.records
    }

    pub fn total_count(&self) -> u64 {
        self.records.iter().map(|r| r.count).sum()
    }

    /// Total count per class as `(desired, undesired)`.
    pub fn class_counts(&self) -> (u64, u64) {
        self.records.iter().fold((0, 0), |(d, u), r| {
            if r.desired {
                (d + r.count, u)
            } else {
                (d, u + r.count)
            }
        })
    }
}

impl ScalarDataset {
    pub fn new(space: Arc<ResponseSpace>, records: Vec<ScalarRecord>, group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(invalid("group size must be at least 1"));
        }
        if records.len() % group_size != 0 {
            return Err(invalid(format!(
                "{} scalar records do not split into groups of {group_size}",
                records.len()
            )));
        }
        for r in &records {
            check_index(&space, r.response)?;
            check_count(r.count)?;
            if !r.score.is_finite() {
                return Err(invalid("scalar scores must be finite"));
            }
        }
        Ok(Self {
            space,
            records,
            group_size,
        })
    }

    pub fn space(&self) -> &Arc<ResponseSpace> {
        &self.space
    }

    pub fn records(&self) -> &[ScalarRecord] {
        &self.records
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups(&self) -> std::slice::Chunks<'_, ScalarRecord> {
        self.records.chunks(self.group_size)
    }

    pub fn total_count(&self) -> u64 {
        self.records.iter().map(|r| r.count).sum()
    }
}

/// Any of the three feedback types.
#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackDataset {
    Pairwise(PairwiseDataset),
    Binary(BinaryDataset),
    Scalar(ScalarDataset),
}

impl From<PairwiseDataset> for FeedbackDataset {
    fn from(d: PairwiseDataset) -> Self {
        Self::Pairwise(d)
    }
}

impl From<BinaryDataset> for FeedbackDataset {
    fn from(d: BinaryDataset) -> Self {
        Self::Binary(d)
    }
}

impl From<ScalarDataset> for FeedbackDataset {
    fn from(d: ScalarDataset) -> Self {
        Self::Scalar(d)
    }
}

impl FeedbackDataset {
    pub fn space(&self) -> &Arc<ResponseSpace> {
        match self {
            Self::Pairwise(d) => d.space(),
            Self::Binary(d) => d.space(),
            Self::Scalar(d) => d.space(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Pairwise(_) => "pairwise",
            Self::Binary(_) => "binary",
            Self::Scalar(_) => "scalar",
        }
    }

    pub fn num_records(&self) -> usize {
        match self {
            Self::Pairwise(d) => d.records.len(),
            Self::Binary(d) => d.records.len(),
            Self::Scalar(d) => d.records.len(),
        }
    }

    /// Appearance counts per response.
    fn appearance_counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.space().len()];
        match self {
            Self::Pairwise(d) => {
                for r in &d.records {
                    counts[r.winner] += r.count as f64;
                    counts[r.loser] += r.count as f64;
                }
            }
            Self::Binary(d) => {
                for r in &d.records {
                    counts[r.response] += r.count as f64;
                }
            }
            Self::Scalar(d) => {
                for r in &d.records {
                    counts[r.response] += r.count as f64;
                }
            }
        }
        counts
    }

    /// Responses that appear at least once, as a mask.
    pub fn labeled_mask(&self) -> Vec<bool> {
        self.appearance_counts().iter().map(|&c| c > 0.0).collect()
    }

    /// μ̂: appearance frequency of each response. Unseen responses get exactly 0.
    pub fn empirical_response_dist(&self) -> Result<Distribution> {
        if self.num_records() == 0 {
            return Err(Error::EmptyInput(format!("{} dataset has no records", self.kind_name())));
        }
        Distribution::from_weights(self.space().clone(), &self.appearance_counts(), Support::Empirical)
    }

    /// ŝ over the responses that appear in the data.
    ///
    /// Pairwise data uses `Σ μ̂(y') p̂(y ≻ y') − ½` with `p̂(y ≻ y) = ½`.
    /// Binary and scalar data use the count-weighted mean label `b̂(y)`
    /// centred by its μ̂-expectation.
    pub fn empirical_score(&self) -> Result<ScoreMap> {
        let mu_hat = self.empirical_response_dist()?;
        let n = self.space().len();
        let defined = self.labeled_mask();
        let values = match self {
            Self::Pairwise(d) => {
                let p = d.empirical_preference()?;
                (0..n)
                    .map(|y| {
                        if !defined[y] {
                            return 0.0;
                        }
                        (0..n).map(|z| mu_hat.prob(z) * p.get(y, z)).sum::<f64>() - 0.5
                    })
                    .collect()
            }
            Self::Binary(d) => {
                let iter = d.records.iter().map(|r| (r.response, r.label(), r.count));
                centred_means(n, iter, &mu_hat, &defined)
            }
            Self::Scalar(d) => {
                let iter = d.records.iter().map(|r| (r.response, r.score, r.count));
                centred_means(n, iter, &mu_hat, &defined)
            }
        };
        Ok(ScoreMap {
            space: self.space().clone(),
            values,
            defined,
        })
    }

    /// Line-oriented text form. `space_path` names the response-space file.
    pub fn to_text(&self, space_path: &str) -> String {
        let sp = self.space();
        let mut out = format!("space {space_path}\n");
        match self {
            Self::Pairwise(d) => {
                for r in &d.records {
                    let _ = writeln!(out, "pair {} {} {}", sp.id(r.winner), sp.id(r.loser), r.count);
                }
            }
            Self::Binary(d) => {
                for r in &d.records {
                    let sign = if r.desired { '+' } else { '-' };
                    let _ = writeln!(out, "bin {} {sign} {}", sp.id(r.response), r.count);
                }
            }
            Self::Scalar(d) => {
                let _ = writeln!(out, "group_size {}", d.group_size);
                for r in &d.records {
                    // Display prints the shortest string that parses back to the same f64.
                    let _ = writeln!(out, "scalar {} {} {}", sp.id(r.response), r.score, r.count);
                }
            }
        }
        out
    }

    /// The space path named in the header of a dataset file.
    pub fn space_path(text: &str) -> Result<String> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return match line.strip_prefix("space ") {
                Some(path) if !path.trim().is_empty() => Ok(path.trim().to_string()),
                _ => Err(parse_err(no, "expected `space <path>` header")),
            };
        }
        Err(parse_err(0, "missing `space <path>` header"))
    }

    /// Parses a dataset file against an already-loaded response space.
    pub fn parse(text: &str, space: Arc<ResponseSpace>) -> Result<Self> {
        let mut seen_header = false;
        let mut group_size = None;
        let mut pairs = Vec::new();
        let mut bins = Vec::new();
        let mut scalars = Vec::new();
        let lookup = |no: usize, id: &str| {
            space
                .position(id)
                .ok_or_else(|| parse_err(no, format!("unknown response id `{id}`")))
        };
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                if !line.starts_with("space ") {
                    return Err(parse_err(no, "expected `space <path>` header"));
                }
                seen_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["group_size", n] => {
                    let n = n.parse().map_err(|_| parse_err(no, "bad group size"))?;
                    group_size = Some(n);
                }
                ["pair", w, l, c] => pairs.push(PairRecord {
                    winner: lookup(no, w)?,
                    loser: lookup(no, l)?,
                    count: parse_count(no, c)?,
                }),
                ["bin", y, sign, c] => {
                    let desired = match *sign {
                        "+" => true,
                        "-" => false,
                        _ => return Err(parse_err(no, "binary label must be + or -")),
                    };
                    bins.push(BinaryRecord {
                        response: lookup(no, y)?,
                        desired,
                        count: parse_count(no, c)?,
                    });
                }
                ["scalar", y, s, c] => scalars.push(ScalarRecord {
                    response: lookup(no, y)?,
                    score: s.parse().map_err(|_| parse_err(no, "bad scalar score"))?,
                    count: parse_count(no, c)?,
                }),
                _ => return Err(parse_err(no, format!("unrecognized record `{line}`"))),
            }
        }
        if !seen_header {
            return Err(parse_err(0, "missing `space <path>` header"));
        }
        let kinds = [!pairs.is_empty(), !bins.is_empty(), !scalars.is_empty()];
        if kinds.iter().filter(|k| **k).count() > 1 {
            return Err(parse_err(0, "a dataset file may hold only one record kind"));
        }
        if !scalars.is_empty() || group_size.is_some() {
            if !pairs.is_empty() || !bins.is_empty() {
                return Err(parse_err(0, "group_size only applies to scalar records"));
            }
            let n = group_size.ok_or_else(|| parse_err(0, "scalar datasets need a group_size line"))?;
            return Ok(Self::Scalar(ScalarDataset::new(space, scalars, n)?));
        }
        if !bins.is_empty() {
            return Ok(Self::Binary(BinaryDataset::new(space, bins)?));
        }
        Ok(Self::Pairwise(PairwiseDataset::new(space, pairs)?))
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line + 1,
        message: message.into(),
    }
}

fn parse_count(no: usize, s: &str) -> Result<u64> {
    s.parse().map_err(|_| parse_err(no, format!("bad count `{s}`")))
}

fn centred_means(
    n: usize,
    records: impl Iterator<Item = (usize, f64, u64)>,
    mu_hat: &Distribution,
    defined: &[bool],
) -> Vec<f64> {
    let mut sum = vec![0.0; n];
    let mut count = vec![0.0; n];
    for (y, v, c) in records {
        sum[y] += v * c as f64;
        count[y] += c as f64;
    }
    let b: Vec<f64> = (0..n)
        .map(|y| if defined[y] { sum[y] / count[y] } else { 0.0 })
        .collect();
    let mean = mu_hat.expectation(&b);
    (0..n)
        .map(|y| if defined[y] { b[y] - mean } else { 0.0 })
        .collect()
}

/// A score value per response; `defined` marks where the score is meaningful.
/// Undefined entries hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    space: Arc<ResponseSpace>,
    values: Vec<f64>,
    defined: Vec<bool>,
}

impl ScoreMap {
    pub fn new(space: Arc<ResponseSpace>, values: Vec<f64>, defined: Vec<bool>) -> Result<Self> {
        if values.len() != space.len() || defined.len() != space.len() {
            return Err(invalid("score map length does not match its space"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("scores must be finite"));
        }
        if values.iter().zip(&defined).any(|(v, d)| !d && *v != 0.0) {
            return Err(invalid("undefined scores must be 0"));
        }
        Ok(Self { space, values, defined })
    }

    /// A score defined everywhere and equal to 0.
    pub fn zero(space: Arc<ResponseSpace>) -> Self {
        let n = space.len();
        Self {
            space,
            values: vec![0.0; n],
            defined: vec![true; n],
        }
    }

    pub fn space(&self) -> &Arc<ResponseSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn is_defined(&self, i: usize) -> bool {
        self.defined[i]
    }

    pub fn defined_mask(&self) -> &[bool] {
        &self.defined
    }

    /// `Σ w(y) s(y)` over the defined entries.
    pub fn weighted_mean(&self, weights: &Distribution) -> f64 {
        weights.expectation(&self.values)
    }
}

/// s(y) = `E_{y'∼μ}[p(y ≻ y')] − ½`.
pub fn true_score(pref: &PreferenceMatrix, mu: &Distribution) -> Result<ScoreMap> {
    if !same_space(pref.space(), mu.space()) {
        return Err(invalid("preference matrix and μ live on different spaces"));
    }
    if !mu.is_strictly_positive() {
        return Err(invalid("μ must be strictly positive"));
    }
    let n = pref.len();
    let values = (0..n)
        .map(|y| (0..n).map(|z| mu.prob(z) * pref.get(y, z)).sum::<f64>() - 0.5)
        .collect();
    Ok(ScoreMap {
        space: pref.space().clone(),
        values,
        defined: vec![true; n],
    })
}

/// Tolerance used for the zero-mean property of score maps.
pub const SCORE_MEAN_TOLERANCE: f64 = SUM_TOLERANCE;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn abc() -> Arc<ResponseSpace> {
        Arc::new(ResponseSpace::new(["a", "b", "c"]).unwrap())
    }

    fn pair(w: usize, l: usize, count: u64) -> PairRecord {
        PairRecord {
            winner: w,
            loser: l,
            count,
        }
    }

    #[test]
    fn empirical_dist_examples() {
        let sp = abc();
        let d: FeedbackDataset = PairwiseDataset::new(sp.clone(), vec![pair(0, 1, 1)]).unwrap().into();
        assert_eq!(d.empirical_response_dist().unwrap().probs(), &[0.5, 0.5, 0.0]);

        let b: FeedbackDataset = BinaryDataset::new(
            sp.clone(),
            vec![
                BinaryRecord {
                    response: 0,
                    desired: true,
                    count: 3,
                },
                BinaryRecord {
                    response: 1,
                    desired: false,
                    count: 1,
                },
            ],
        )
        .unwrap()
        .into();
        assert_eq!(b.empirical_response_dist().unwrap().probs(), &[0.75, 0.25, 0.0]);

        let s = scalar_abc();
        for p in s.empirical_response_dist().unwrap().probs() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    fn scalar_abc() -> FeedbackDataset {
        let recs = [(0, 1.0), (1, 0.5), (2, 0.0)]
            .iter()
            .map(|&(response, score)| ScalarRecord {
                response,
                score,
                count: 1,
            })
            .collect();
        ScalarDataset::new(abc(), recs, 3).unwrap().into()
    }

    #[test]
    fn empirical_score_examples() {
        let d: FeedbackDataset = PairwiseDataset::new(abc(), vec![pair(0, 1, 1)]).unwrap().into();
        let s = d.empirical_score().unwrap();
        assert_abs_diff_eq!(s.value(0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s.value(1), -0.25, epsilon = 1e-15);
        assert!(!s.is_defined(2));

        let b: FeedbackDataset = BinaryDataset::new(
            abc(),
            vec![
                BinaryRecord {
                    response: 0,
                    desired: true,
                    count: 1,
                },
                BinaryRecord {
                    response: 1,
                    desired: false,
                    count: 1,
                },
            ],
        )
        .unwrap()
        .into();
        let s = b.empirical_score().unwrap();
        assert_eq!(&s.values()[..2], &[0.5, -0.5]);

        let s = scalar_abc().empirical_score().unwrap();
        assert_abs_diff_eq!(s.value(0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.value(1), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.value(2), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn empty_dataset_errors() {
        let d: FeedbackDataset = PairwiseDataset::new(abc(), vec![]).unwrap().into();
        assert!(matches!(d.empirical_response_dist(), Err(Error::EmptyInput(_))));
        assert!(matches!(d.empirical_score(), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn win_fraction_for_repeated_pairs() {
        let d = PairwiseDataset::new(abc(), vec![pair(0, 1, 3), pair(1, 0, 1)]).unwrap();
        let p = d.empirical_preference().unwrap();
        assert_eq!(p.get(0, 1), 0.75);
        assert_eq!(p.get(1, 0), 0.25);
        assert_eq!(p.get(0, 2), 0.5);
        assert_eq!(p.get(2, 2), 0.5);
    }

    #[test]
    fn true_score_examples() {
        let sp = Arc::new(ResponseSpace::new(["a", "b"]).unwrap());
        let pref = PreferenceMatrix::new(sp.clone(), vec![0.5, 0.8, 0.2, 0.5]).unwrap();
        let s = true_score(&pref, &Distribution::uniform(sp.clone())).unwrap();
        assert_abs_diff_eq!(s.value(0), 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(s.value(1), -0.15, epsilon = 1e-15);

        let s = true_score(&PreferenceMatrix::indifferent(sp.clone()), &Distribution::uniform(sp)).unwrap();
        assert_eq!(s.values(), &[0.0, 0.0]);
    }

    #[test]
    fn true_score_rejects_mismatched_space() {
        let pref = PreferenceMatrix::indifferent(abc());
        let other = Arc::new(ResponseSpace::new(["x", "y", "z"]).unwrap());
        assert!(true_score(&pref, &Distribution::uniform(other)).is_err());
    }

    #[test]
    fn matrix_validation() {
        let sp = Arc::new(ResponseSpace::new(["a", "b"]).unwrap());
        assert!(PreferenceMatrix::new(sp.clone(), vec![0.5, 0.7, 0.2, 0.5]).is_err());
        assert!(PreferenceMatrix::new(sp.clone(), vec![0.4, 0.6, 0.4, 0.5]).is_err());
        assert!(PreferenceMatrix::new(sp, vec![0.5, 1.2, -0.2, 0.5]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let sp = abc();
        let datasets: Vec<FeedbackDataset> = vec![
            PairwiseDataset::new(sp.clone(), vec![pair(0, 1, 2), pair(2, 0, 1)]).unwrap().into(),
            PairwiseDataset::new(sp.clone(), vec![pair(0, 1, 2)]).unwrap().binarize().into(),
            ScalarDataset::new(
                sp.clone(),
                vec![
                    ScalarRecord {
                        response: 0,
                        score: 0.1 + 0.2,
                        count: 1,
                    },
                    ScalarRecord {
                        response: 1,
                        score: -1e-300,
                        count: 4,
                    },
                ],
                2,
            )
            .unwrap()
            .into(),
        ];
        for d in datasets {
            let text = d.to_text("space.txt");
            assert_eq!(FeedbackDataset::space_path(&text).unwrap(), "space.txt");
            assert_eq!(FeedbackDataset::parse(&text, sp.clone()).unwrap(), d);
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        let sp = abc();
        assert!(FeedbackDataset::parse("pair a b 1\n", sp.clone()).is_err());
        assert!(FeedbackDataset::parse("space s\npair a q 1\n", sp.clone()).is_err());
        assert!(FeedbackDataset::parse("space s\npair a b 0\n", sp.clone()).is_err());
        assert!(FeedbackDataset::parse("space s\npair a b 1\nbin a + 1\n", sp.clone()).is_err());
        assert!(FeedbackDataset::parse("space s\nscalar a 1.0 1\n", sp).is_err());
    }
}
