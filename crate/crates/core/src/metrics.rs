//! Correlation and accuracy statistics for evaluation reports.
//!
//! SROCC is computed as the Pearson correlation of average ranks, which
//! stays correct when either series contains ties. Zero-variance inputs are
//! errors, never a silent 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::Choice;

/// Predictions paired with ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSamples {
    predictions: Vec<f64>,
    labels: Vec<f64>,
}

impl PairedSamples {
    pub fn new(predictions: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Contract(format!(
                "predictions ({}) and labels ({}) differ in length",
                predictions.len(),
                labels.len()
            )));
        }
        if predictions.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::Contract("paired samples must be finite".into()));
        }
        Ok(Self { predictions, labels })
    }

    pub fn n(&self) -> usize {
        self.predictions.len()
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn require_n(&self, what: &str) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::Input(format!("{what} needs at least 2 samples, got {}", self.n())));
        }
        Ok(())
    }
}

fn pearson(x: &[f64], y: &[f64], what: &str) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(format!("{what}: a series has zero variance")));
    }
    // sqrt of the product keeps perfectly correlated integer-like inputs
    // (ranks) at exactly +-1; fall back to the product of roots on overflow
    let prod = sxx * syy;
    let denom = if prod.is_finite() && prod > f64::MIN_POSITIVE {
        prod.sqrt()
    } else {
        sxx.sqrt() * syy.sqrt()
    };
    Ok((sxy / denom).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Pearson linear correlation coefficient.
pub fn plcc(samples: &PairedSamples) -> Result<f64> {
    samples.require_n("PLCC")?;
    pearson(&samples.predictions, &samples.labels, "PLCC")
}

/// Spearman rank-order correlation coefficient with average ranks for ties.
pub fn srocc(samples: &PairedSamples) -> Result<f64> {
    samples.require_n("SROCC")?;
    pearson(
        &average_ranks(&samples.predictions),
        &average_ranks(&samples.labels),
        "SROCC",
    )
}

/// A model's verdict on one image pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    A,
    B,
    Tie,
}

impl From<crate::scoring::Comparison> for Decision {
    fn from(c: crate::scoring::Comparison) -> Self {
        match (c.tie, c.choice) {
            (true, _) => Decision::Tie,
            (false, Choice::A) => Decision::A,
            (false, Choice::B) => Decision::B,
        }
    }
}

/// Fraction of decisions matching the human majority choice. A tie earns
/// `tie_credit` (0.5 by convention, 0 for strict scoring).
pub fn pairwise_accuracy(decisions: &[Decision], human_choices: &[Choice], tie_credit: f64) -> Result<f64> {
    if decisions.len() != human_choices.len() {
        return Err(Error::Contract(format!(
            "{} decisions vs {} human choices",
            decisions.len(),
            human_choices.len()
        )));
    }
    if decisions.is_empty() {
        return Err(Error::Input("pairwise accuracy over zero pairs".into()));
    }
    let total: f64 = decisions
        .iter()
        .zip(human_choices)
        .map(|(d, h)| match (d, h) {
            (Decision::Tie, _) => tie_credit,
            (Decision::A, Choice::A) | (Decision::B, Choice::B) => 1.0,
            _ => 0.0,
        })
        .sum();
    Ok(total / decisions.len() as f64)
}

/// SROCC between degradation level and the mean score at that level.
pub fn level_correlation(scores_by_level: &[(f64, Vec<f64>)]) -> Result<f64> {
    if scores_by_level.len() < 2 {
        return Err(Error::Input(format!(
            "level correlation needs at least 2 levels, got {}",
            scores_by_level.len()
        )));
    }
    let mut levels = Vec::with_capacity(scores_by_level.len());
    let mut means = Vec::with_capacity(scores_by_level.len());
    for (level, scores) in scores_by_level {
        if scores.is_empty() {
            return Err(Error::Input(format!("level {level} has no scores")));
        }
        levels.push(*level);
        means.push(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    srocc(&PairedSamples::new(means, levels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ps(p: &[f64], l: &[f64]) -> PairedSamples {
        PairedSamples::new(p.to_vec(), l.to_vec()).unwrap()
    }

    #[test]
    fn plcc_examples() {
        let l = [1.0, 3.0, 4.0, 7.5];
        assert_relative_eq!(plcc(&ps(&l, &l)).unwrap(), 1.0, epsilon = 1e-15);
        let affine: Vec<f64> = l.iter().map(|v| 2.0 * v + 3.0).collect();
        assert_relative_eq!(plcc(&ps(&affine, &l)).unwrap(), 1.0, epsilon = 1e-15);
        // sxy = 13/3, sxx = syy = 14/3
        assert_relative_eq!(plcc(&ps(&[1., 2., 4.], &[1., 3., 4.])).unwrap(), 13.0 / 14.0, epsilon = 1e-12);
        // sxy = 3, sxx = 2, syy = 14/3
        assert_relative_eq!(plcc(&ps(&[1., 2., 3.], &[1., 3., 4.])).unwrap(), 0.981_980_506_061_965_7, epsilon = 1e-12);
    }

    #[test]
    fn plcc_zero_variance_is_an_error() {
        assert!(matches!(plcc(&ps(&[1., 1., 1.], &[1., 2., 3.])), Err(Error::Degenerate(_))));
        assert!(matches!(plcc(&ps(&[1.], &[1.])), Err(Error::Input(_))));
        assert!(PairedSamples::new(vec![1.0], vec![]).is_err());
    }

    #[test]
    fn srocc_examples() {
        assert_eq!(srocc(&ps(&[1., 2., 3., 4.], &[10., 20., 30., 40.])).unwrap(), 1.0);
        assert_eq!(srocc(&ps(&[1., 2., 3., 4.], &[4., 3., 2., 1.])).unwrap(), -1.0);
        // ranks: [1, 2.5, 2.5, 4] vs [1, 3, 2, 4]; Pearson on ranks = 4.5 / sqrt(4.5 * 5)
        assert_relative_eq!(
            srocc(&ps(&[1., 2., 2., 3.], &[1., 3., 2., 4.])).unwrap(),
            0.948_683_298_050_513_8,
            epsilon = 1e-12
        );
        assert!(matches!(srocc(&ps(&[2., 2., 2.], &[1., 2., 3.])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn average_rank_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn accuracy_examples() {
        use Choice::*;
        let h = vec![A, B, A, A];
        assert_eq!(pairwise_accuracy(&[Decision::A, Decision::B, Decision::A, Decision::A], &h, 0.5).unwrap(), 1.0);
        assert_eq!(pairwise_accuracy(&[Decision::B, Decision::A, Decision::B, Decision::B], &h, 0.5).unwrap(), 0.0);
        assert_eq!(pairwise_accuracy(&[Decision::Tie, Decision::B, Decision::A, Decision::A], &h, 0.5).unwrap(), 0.875);
        assert_eq!(pairwise_accuracy(&[Decision::Tie, Decision::B, Decision::A, Decision::A], &h, 0.0).unwrap(), 0.75);

        let human = vec![A; 15];
        let mut model = vec![Decision::A; 12];
        model.extend([Decision::B; 3]);
        assert_relative_eq!(pairwise_accuracy(&model, &human, 0.5).unwrap(), 0.8, epsilon = 1e-15);

        assert!(matches!(pairwise_accuracy(&[Decision::A], &h, 0.5), Err(Error::Contract(_))));
        assert!(matches!(pairwise_accuracy(&[], &[], 0.5), Err(Error::Input(_))));
    }

    #[test]
    fn level_correlation_examples() {
        let up: Vec<(f64, Vec<f64>)> = (0..5).map(|i| (i as f64, vec![i as f64 * 0.1, i as f64 * 0.1 + 0.01])).collect();
        assert_eq!(level_correlation(&up).unwrap(), 1.0);

        let flat: Vec<(f64, Vec<f64>)> = (0..5).map(|i| (i as f64, vec![0.4])).collect();
        assert!(matches!(level_correlation(&flat), Err(Error::Degenerate(_))));

        assert!(matches!(level_correlation(&up[..1]), Err(Error::Input(_))));
        assert!(matches!(level_correlation(&[(0.0, vec![]), (1.0, vec![1.0])]), Err(Error::Input(_))));

        // means [0.1, 0.3, 0.2, 0.4, 0.5]: one inversion; rank Pearson = 9/10
        let inv: Vec<(f64, Vec<f64>)> = [0.1, 0.3, 0.2, 0.4, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &m)| (i as f64, vec![m]))
            .collect();
        assert_relative_eq!(level_correlation(&inv).unwrap(), 0.9, epsilon = 1e-12);
    }
}
