//! AUC, MSE, the rating-pair consistency ratio and Welch's one-tailed
//! t-test.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::nn::keyed_rng;

/// Default cap on evaluated pairs for [`consistency_ratio`].
pub const DEFAULT_MAX_PAIRS: u64 = 1_000_000;

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::UndefinedMetric(format!(
            "{name} contains non-finite values"
        )));
    }
    Ok(())
}

/// Area under the ROC curve from rank statistics; ties count one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::UndefinedMetric(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_finite("auc scores", scores)?;
    if let Some(bad) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::UndefinedMetric(format!(
            "auc label {bad} is not 0 or 1"
        )));
    }
    let positives = labels.iter().filter(|&&l| l == 1.0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "auc needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (twice) the mid-ranks of positives, kept integral.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let twice_mid = (start + 1 + end) as u128;
        let pos_in_group = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == 1.0)
            .count();
        twice_rank_sum += twice_mid * pos_in_group as u128;
        start = end;
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / 2.0 / (positives as f64 * negatives as f64))
}

/// Mean squared difference.
pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::UndefinedMetric(format!(
            "mse: {} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("mse of zero examples".into()));
    }
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    /// Pairs evaluated (all eligible pairs, or the sample).
    pub evaluated: u64,
    /// Both tasks order the pair like the ratings.
    pub consistent: u64,
    /// Both tasks order the pair against the ratings.
    pub reversed: u64,
    /// Pairs with differing ratings in the whole input.
    pub eligible: u64,
}

impl PairCounts {
    pub fn ratio(&self) -> f64 {
        self.consistent as f64 / self.evaluated as f64
    }

    pub fn reversed_ratio(&self) -> f64 {
        self.reversed as f64 / self.evaluated as f64
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Pair tallies behind [`consistency_ratio`].
pub fn consistency_counts(
    ratings: &[u8],
    pred1: &[f64],
    pred2: &[f64],
    max_pairs: u64,
    seed: u64,
) -> Result<PairCounts> {
    let n = ratings.len();
    if pred1.len() != n || pred2.len() != n {
        return Err(Error::UndefinedMetric(format!(
            "consistency: lengths {n}, {}, {} differ",
            pred1.len(),
            pred2.len()
        )));
    }
    check_finite("consistency predictions", pred1)?;
    check_finite("consistency predictions", pred2)?;
    if max_pairs == 0 {
        return Err(Error::Config("max_pairs must be positive".into()));
    }
    let mut histogram = [0u64; 256];
    for &r in ratings {
        histogram[r as usize] += 1;
    }
    let n64 = n as u64;
    let same: u64 = histogram.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    let eligible = n64 * n64.saturating_sub(1) / 2 - same;
    if eligible == 0 {
        return Err(Error::UndefinedMetric(
            "consistency needs at least one pair with differing ratings".into(),
        ));
    }
    let mut counts = PairCounts {
        eligible,
        ..PairCounts::default()
    };
    let mut tally = |i: usize, j: usize| {
        let r = sign(f64::from(ratings[i]) - f64::from(ratings[j]));
        let s1 = sign(pred1[i] - pred1[j]);
        let s2 = sign(pred2[i] - pred2[j]);
        counts.evaluated += 1;
        if s1 == r && s2 == r {
            counts.consistent += 1;
        } else if s1 == -r && s2 == -r {
            counts.reversed += 1;
        }
    };
    if eligible <= max_pairs {
        for i in 0..n {
            for j in i + 1..n {
                if ratings[i] != ratings[j] {
                    tally(i, j);
                }
            }
        }
    } else {
        let mut rng = keyed_rng(seed, "consistency_pairs");
        let mut seen: HashSet<(u32, u32)> = HashSet::with_capacity(max_pairs as usize);
        while (seen.len() as u64) < max_pairs {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b || ratings[a] == ratings[b] {
                continue;
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if seen.insert((i as u32, j as u32)) {
                tally(i, j);
            }
        }
    }
    Ok(counts)
}

/// Fraction of differing-rating pairs that both predictions order the
/// same way as the ratings. Prediction ties count as inconsistent. Above
/// `max_pairs` eligible pairs a uniform sample without replacement is used.
pub fn consistency_ratio(
    ratings: &[u8],
    pred1: &[f64],
    pred2: &[f64],
    max_pairs: u64,
    seed: u64,
) -> Result<f64> {
    Ok(consistency_counts(ratings, pred1, pred2, max_pairs, seed)?.ratio())
}

/// Which side of the test counts as improvement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Treatment mean larger than baseline (AUC, consistency).
    Greater,
    /// Treatment mean smaller than baseline (MSE).
    Less,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Greater => "greater",
            Direction::Less => "less",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greater" => Ok(Direction::Greater),
            "less" => Ok(Direction::Less),
            other => Err(Error::Config(format!("unknown direction `{other}`"))),
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (0 for fewer than two values).
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Welch statistic and Welch-Satterthwaite degrees of freedom for
/// `treat - base`.
pub fn welch_statistic(base: &[f64], treat: &[f64]) -> (f64, f64) {
    let (nb, nt) = (base.len() as f64, treat.len() as f64);
    let (vb, vt) = (sample_variance(base) / nb, sample_variance(treat) / nt);
    let se2 = vb + vt;
    let t = (mean(treat) - mean(base)) / se2.sqrt();
    let df = se2 * se2 / (vb * vb / (nb - 1.0) + vt * vt / (nt - 1.0));
    (t, df)
}

/// Welch's unequal-variance t-test, one-tailed in `direction`.
pub fn one_tailed_t_test(base: &[f64], treat: &[f64], direction: Direction) -> Result<f64> {
    if base.len() < 2 || treat.len() < 2 {
        return Err(Error::UndefinedMetric(
            "t-test needs at least two runs per side".into(),
        ));
    }
    check_finite("t-test baseline", base)?;
    check_finite("t-test treatment", treat)?;
    let delta = mean(treat) - mean(base);
    let (t, df) = welch_statistic(base, treat);
    if !df.is_finite() || df <= 0.0 {
        // Both sides have zero variance.
        let p_greater = match delta.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 0.0,
            Some(std::cmp::Ordering::Less) => 1.0,
            _ => 0.5,
        };
        return Ok(match direction {
            Direction::Greater => p_greater,
            Direction::Less => 1.0 - p_greater,
        });
    }
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::UndefinedMetric(format!("t distribution: {e}")))?;
    Ok(match direction {
        Direction::Greater => dist.sf(t),
        Direction::Less => dist.cdf(t),
    })
}

/// One task's test metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub task: String,
    /// `auc` or `mse`.
    pub metric: String,
    pub value: f64,
}

/// Test-set evaluation of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub model: String,
    pub examples: usize,
    pub tasks: Vec<TaskMetric>,
    pub consistency_ratio: Option<f64>,
    pub reversed_ratio: Option<f64>,
}

impl EvalReport {
    pub fn metric(&self, task: &str) -> Option<f64> {
        self.tasks.iter().find(|m| m.task == task).map(|m| m.value)
    }
}
