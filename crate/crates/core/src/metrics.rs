//! Quality assessment: validity rate, precision/recall/F1 and Cohen's kappa
//! over four-level rubric judgments.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::RelationType;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no judgments")]
    Empty,
    #[error("score {0} is not on the 0/1/2/3 rubric")]
    InvalidScore(f64),
    #[error("rating lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("item sets differ: {0}")]
    ItemMismatch(String),
    #[error("kappa undefined: chance agreement is 1 but observed agreement is not")]
    KappaUndefined,
    #[error("rater {rater} judged {item} more than once")]
    DuplicateJudgment { rater: String, item: String },
}

/// A rubric score: 3 fully supported, 2 mostly supported, 1 weakly
/// supported, 0 unsupported. Scores of 2 and above count as valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RubricScore(u8);

impl RubricScore {
    pub fn new(level: u8) -> Result<Self, MetricsError> {
        if level <= 3 {
            Ok(RubricScore(level))
        } else {
            Err(MetricsError::InvalidScore(f64::from(level)))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn is_valid(self) -> bool {
        self.0 >= 2
    }
}

impl TryFrom<f64> for RubricScore {
    type Error = MetricsError;
    fn try_from(v: f64) -> Result<Self, MetricsError> {
        match v {
            0.0 => Ok(RubricScore(0)),
            1.0 => Ok(RubricScore(1)),
            2.0 => Ok(RubricScore(2)),
            3.0 => Ok(RubricScore(3)),
            x => Err(MetricsError::InvalidScore(x)),
        }
    }
}

impl From<RubricScore> for f64 {
    fn from(s: RubricScore) -> f64 {
        f64::from(s.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub triple_key: String,
    pub rater: String,
    pub score: RubricScore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryLabel {
    pub key: String,
    pub valid: bool,
}

/// Fraction of judgments scoring 2 or 3.
pub fn validity_rate(judgments: &[Judgment]) -> Result<f64, MetricsError> {
    if judgments.is_empty() {
        return Err(MetricsError::Empty);
    }
    let valid = judgments.iter().filter(|j| j.score.is_valid()).count();
    Ok(valid as f64 / judgments.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when the value is 0 because its denominator was 0.
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub f1_degenerate: bool,
}

impl Prf1 {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let (precision, precision_degenerate) = ratio(tp, tp + fp);
        let (recall, recall_degenerate) = ratio(tp, tp + fn_);
        let (f1, f1_degenerate) = if precision_degenerate || recall_degenerate || precision + recall == 0.0 {
            (0.0, true)
        } else {
            // 2PR/(P+R) in counts: 2tp / (2tp + fp + fn).
            (2.0 * tp as f64 / (2 * tp + fp + fn_) as f64, false)
        };
        Prf1 { tp, fp, fn_, precision, recall, f1, precision_degenerate, recall_degenerate, f1_degenerate }
    }
}

/// Precision, recall and F1 of `predicted` against `reference`, matched by
/// key, with "valid" as the positive class.
pub fn prf1(predicted: &[BinaryLabel], reference: &[BinaryLabel]) -> Result<Prf1, MetricsError> {
    let pred = label_map(predicted)?;
    let gold = label_map(reference)?;
    if pred.keys().ne(gold.keys()) {
        return Err(MetricsError::ItemMismatch(describe_difference(pred.keys(), gold.keys())));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (k, &p) in &pred {
        match (p, gold[k]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Prf1::from_counts(tp, fp, fn_))
}

fn label_map(labels: &[BinaryLabel]) -> Result<BTreeMap<&str, bool>, MetricsError> {
    let mut out = BTreeMap::new();
    for l in labels {
        if out.insert(l.key.as_str(), l.valid).is_some() {
            return Err(MetricsError::ItemMismatch(format!("duplicate key {}", l.key)));
        }
    }
    Ok(out)
}

fn describe_difference<'a>(a: impl Iterator<Item = &'a &'a str>, b: impl Iterator<Item = &'a &'a str>) -> String {
    let a: BTreeSet<&str> = a.copied().collect();
    let b: BTreeSet<&str> = b.copied().collect();
    match a.symmetric_difference(&b).next() {
        Some(k) => format!("key {k} present on one side only"),
        None => "key sets differ".into(),
    }
}

/// κ = (p₀ − pₑ)/(1 − pₑ).
pub fn kappa_from_agreement(p0: f64, pe: f64) -> Result<f64, MetricsError> {
    if pe == 1.0 {
        return if p0 == 1.0 { Ok(1.0) } else { Err(MetricsError::KappaUndefined) };
    }
    Ok((p0 - pe) / (1.0 - pe))
}

/// Cohen's kappa over paired ratings. Agreement counts are kept as integers,
/// so κ = (n·agree − Σ aₗbₗ) / (n² − Σ aₗbₗ) is rounded once.
pub fn cohens_kappa<L: Eq + Hash + Ord>(a: &[L], b: &[L]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = a.len() as u128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as u128;
    let mut marg_a: BTreeMap<&L, u128> = BTreeMap::new();
    let mut marg_b: BTreeMap<&L, u128> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *marg_a.entry(x).or_default() += 1;
        *marg_b.entry(y).or_default() += 1;
    }
    let chance: u128 = marg_a.iter().map(|(l, ca)| ca * marg_b.get(l).copied().unwrap_or(0)).sum();
    let den = n * n - chance;
    if den == 0 {
        return if agree == n { Ok(1.0) } else { Err(MetricsError::KappaUndefined) };
    }
    Ok(((n * agree) as i128 - chance as i128) as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    /// valid (score ≥ 2) vs invalid.
    #[default]
    Binary,
    FourLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaMatrix {
    pub raters: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl KappaMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.raters.iter().position(|r| r == a)?;
        let j = self.raters.iter().position(|r| r == b)?;
        Some(self.values[i][j])
    }

    /// Off-diagonal entries above the diagonal, one per unordered pair.
    pub fn pairs(&self) -> Vec<(String, String, f64)> {
        let mut out = Vec::new();
        for i in 0..self.raters.len() {
            for j in i + 1..self.raters.len() {
                out.push((self.raters[i].clone(), self.raters[j].clone(), self.values[i][j]));
            }
        }
        out
    }
}

/// κ for every pair of raters over their shared item set; the diagonal is 1.
pub fn pairwise_kappa_matrix<L: Eq + Hash + Ord + Clone>(
    raters: &BTreeMap<String, BTreeMap<String, L>>,
) -> Result<KappaMatrix, MetricsError> {
    let names: Vec<String> = raters.keys().cloned().collect();
    if let Some(first) = raters.values().next() {
        for (name, items) in raters {
            if items.keys().ne(first.keys()) {
                return Err(MetricsError::ItemMismatch(format!("rater {name} covers a different item set")));
            }
        }
    }
    let columns: Vec<Vec<L>> = raters.values().map(|items| items.values().cloned().collect()).collect();
    let k = names.len();
    let mut values = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let v = cohens_kappa(&columns[i], &columns[j])?;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(KappaMatrix { raters: names, values })
}

/// Per-rater item → label maps.
pub fn ratings_by_rater(
    judgments: &[Judgment],
    space: LabelSpace,
) -> Result<BTreeMap<String, BTreeMap<String, u8>>, MetricsError> {
    let mut out: BTreeMap<String, BTreeMap<String, u8>> = BTreeMap::new();
    for j in judgments {
        let label = match space {
            LabelSpace::Binary => u8::from(j.score.is_valid()),
            LabelSpace::FourLevel => j.score.level(),
        };
        if out.entry(j.rater.clone()).or_default().insert(j.triple_key.clone(), label).is_some() {
            return Err(MetricsError::DuplicateJudgment { rater: j.rater.clone(), item: j.triple_key.clone() });
        }
    }
    Ok(out)
}

fn relation_of(triple_key: &str) -> Option<RelationType> {
    let inner = triple_key.trim().strip_prefix('(')?.strip_suffix(')')?;
    let mut parts = inner.split('|').map(str::trim);
    let (_, r) = (parts.next()?, parts.next()?);
    r.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_judgments: usize,
    pub overall_validity: f64,
    pub validity_by_rater: BTreeMap<String, f64>,
    /// Keyed by relation name for triple keys of the form `(h | Relation | t)`.
    pub validity_by_relation: BTreeMap<String, f64>,
    pub label_space: LabelSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Each other rater scored against the reference rater.
    pub prf1: BTreeMap<String, Prf1>,
    pub kappa: KappaMatrix,
}

pub fn evaluate(judgments: &[Judgment], reference: Option<&str>, space: LabelSpace) -> Result<EvalReport, MetricsError> {
    let overall_validity = validity_rate(judgments)?;
    let mut by_rater: BTreeMap<String, Vec<Judgment>> = BTreeMap::new();
    let mut by_relation: BTreeMap<String, Vec<Judgment>> = BTreeMap::new();
    for j in judgments {
        by_rater.entry(j.rater.clone()).or_default().push(j.clone());
        if let Some(r) = relation_of(&j.triple_key) {
            by_relation.entry(r.name().to_string()).or_default().push(j.clone());
        }
    }
    let rate_all = |m: BTreeMap<String, Vec<Judgment>>| -> Result<BTreeMap<String, f64>, MetricsError> {
        m.into_iter().map(|(k, v)| Ok((k, validity_rate(&v)?))).collect()
    };
    let kappa = pairwise_kappa_matrix(&ratings_by_rater(judgments, space)?)?;
    let mut prf = BTreeMap::new();
    if let Some(reference) = reference {
        let binary = ratings_by_rater(judgments, LabelSpace::Binary)?;
        let gold = binary.get(reference).ok_or_else(|| MetricsError::ItemMismatch(format!("no judgments from reference {reference}")))?;
        let gold: Vec<BinaryLabel> = gold.iter().map(|(k, &v)| BinaryLabel { key: k.clone(), valid: v == 1 }).collect();
        for (rater, items) in binary.iter().filter(|(r, _)| r.as_str() != reference) {
            let pred: Vec<BinaryLabel> = items.iter().map(|(k, &v)| BinaryLabel { key: k.clone(), valid: v == 1 }).collect();
            prf.insert(rater.clone(), prf1(&pred, &gold)?);
        }
    }
    Ok(EvalReport {
        n_judgments: judgments.len(),
        overall_validity,
        validity_by_rater: rate_all(by_rater)?,
        validity_by_relation: rate_all(by_relation)?,
        label_space: space,
        reference: reference.map(str::to_string),
        prf1: prf,
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(rater: &str, key: &str, s: u8) -> Judgment {
        Judgment { triple_key: key.into(), rater: rater.into(), score: RubricScore::new(s).unwrap() }
    }

    #[test]
    fn validity_examples() {
        let js = |s: &[u8]| s.iter().enumerate().map(|(i, &v)| j("r", &i.to_string(), v)).collect::<Vec<_>>();
        assert_eq!(validity_rate(&js(&[3, 2, 1, 0])).unwrap(), 0.5);
        assert_eq!(validity_rate(&js(&[3, 3, 3])).unwrap(), 1.0);
        assert_eq!(validity_rate(&js(&[2, 2, 2, 1])).unwrap(), 0.75);
        assert_eq!(validity_rate(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn rubric_scores_parse_strictly() {
        assert!(serde_json::from_str::<Judgment>(r#"{"triple_key":"k","rater":"a","score":2.0}"#).is_ok());
        assert!(serde_json::from_str::<Judgment>(r#"{"triple_key":"k","rater":"a","score":2.5}"#).is_err());
        assert!(serde_json::from_str::<Judgment>(r#"{"triple_key":"k","rater":"a","score":4}"#).is_err());
    }

    #[test]
    fn prf1_examples() {
        let p = Prf1::from_counts(2, 1, 1);
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-12 && (p.recall - 2.0 / 3.0).abs() < 1e-12 && (p.f1 - 2.0 / 3.0).abs() < 1e-12);
        let d = Prf1::from_counts(0, 0, 3);
        assert!(d.precision_degenerate && !d.recall_degenerate && d.f1_degenerate);
        assert_eq!((d.precision, d.recall, d.f1), (0.0, 0.0, 0.0));
        let labels = vec![BinaryLabel { key: "a".into(), valid: true }, BinaryLabel { key: "b".into(), valid: false }];
        let same = prf1(&labels, &labels).unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        assert!(prf1(&labels[..1], &labels).is_err());
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(cohens_kappa(&[1, 1, 0, 0], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.0);
        assert!((kappa_from_agreement(0.8, 0.5).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(cohens_kappa(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&[1, 1], &[0, 0]).unwrap(), 0.0);
        assert_eq!(kappa_from_agreement(0.5, 1.0).unwrap_err(), MetricsError::KappaUndefined);
        assert!(cohens_kappa(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn evaluation_report() {
        let mut js = Vec::new();
        for (i, key) in ["(A | Treat | B)", "(C | Associate | D)", "(E | Treat | F)"].iter().enumerate() {
            js.push(j("ref", key, if i == 1 { 1 } else { 3 }));
            js.push(j("model", key, 2));
        }
        let r = evaluate(&js, Some("ref"), LabelSpace::Binary).unwrap();
        assert_eq!(r.validity_by_rater["ref"], 2.0 / 3.0);
        assert_eq!(r.validity_by_relation["Treat"], 1.0);
        assert_eq!(r.prf1["model"].tp, 2);
        assert_eq!(r.prf1["model"].fp, 1);
        assert_eq!(r.kappa.raters, ["model", "ref"]);
    }
}
