//! Critique-utility rewards and regression targets.
//!
//! A critique's utility is the mean preference score of its refinements
//! over the initial response. Per prompt, the partition value is the log of
//! the mean of `exp(cu_i / beta)` over the sampled critiques, evaluated
//! with the usual max-shift so tiny betas stay finite. Each critique's
//! regression target is `cu/beta - log_z`, which makes the exponentials of
//! the targets average to exactly 1 within a group.

use serde::{Deserialize, Serialize};

use crate::judge::{CritiquePairOutcome, PreferenceScore};
use crate::records::Record;

/// Mean preference score of one critique, with the number of judgments
/// that survived parsing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CritiqueUtility {
    pub value: f64,
    pub valid_judgments: u32,
}

/// Per-critique reward row: utility, the group's shared log-partition
/// value, and the regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub prompt_id: String,
    pub critique_index: u32,
    pub cu: CritiqueUtility,
    pub log_z: f64,
    pub target: f64,
}

impl Record for RewardRecord {
    const KIND: &'static str = "reward";

    fn key(&self) -> String {
        format!("{}\u{1f}{}", self.prompt_id, self.critique_index)
    }

    fn sort_key(&self) -> String {
        format!("{}\u{1f}{:010}", self.prompt_id, self.critique_index)
    }

    fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.cu.value) {
            return Err(format!("cu must lie in [0,1], got {}", self.cu.value));
        }
        if self.cu.valid_judgments == 0 {
            return Err("a reward row needs at least one valid judgment".into());
        }
        Ok(())
    }
}

/// One preference pair for critique-preference training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpcoPair {
    pub prompt_id: String,
    pub chosen_index: u32,
    pub rejected_index: u32,
}

impl Record for DpcoPair {
    const KIND: &'static str = "dpco_pair";

    fn key(&self) -> String {
        format!("{}\u{1f}{}\u{1f}{}", self.prompt_id, self.chosen_index, self.rejected_index)
    }

    fn sort_key(&self) -> String {
        format!(
            "{}\u{1f}{:010}\u{1f}{:010}",
            self.prompt_id,
            self.chosen_index.min(self.rejected_index),
            self.chosen_index.max(self.rejected_index)
        )
    }

    fn check(&self) -> Result<(), String> {
        if self.chosen_index == self.rejected_index {
            return Err("chosen and rejected critique must differ".into());
        }
        Ok(())
    }
}

/// Errors from reward computation.
#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("critique has no valid judgments")]
    EmptyJudgments,
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("a reward group needs at least one critique")]
    EmptyGroup,
    #[error("dpco pairing expects exactly 4 critiques, got {0}")]
    WrongGroupSize(usize),
}

/// Mean of the valid preference scores for one critique.
pub fn critique_utility(ps_values: &[PreferenceScore]) -> Result<CritiqueUtility, RewardError> {
    if ps_values.is_empty() {
        return Err(RewardError::EmptyJudgments);
    }
    let sum: f64 = ps_values.iter().sum();
    Ok(CritiqueUtility {
        value: sum / ps_values.len() as f64,
        valid_judgments: ps_values.len() as u32,
    })
}

/// `log((1/N) * sum_i exp(cu_i / beta))`, evaluated as
/// `max + log(mean(exp(x - max)))` so it stays finite for tiny betas.
pub fn log_partition(cus: &[f64], beta: f64) -> Result<f64, RewardError> {
    if beta <= 0.0 || beta.is_nan() {
        return Err(RewardError::NonPositiveBeta(beta));
    }
    if cus.is_empty() {
        return Err(RewardError::EmptyGroup);
    }
    let scaled: Vec<f64> = cus.iter().map(|cu| cu / beta).collect();
    Ok(log_mean_exp(&scaled))
}

/// Stable `log((1/N) * sum_i exp(x_i))` over already-scaled values.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mean: f64 =
        values.iter().map(|x| (x - max).exp()).sum::<f64>() / values.len() as f64;
    max + mean.ln()
}

/// Regression targets `cu_i/beta - log_z`, one per critique in input order.
pub fn rco_targets(cus: &[f64], beta: f64) -> Result<Vec<f64>, RewardError> {
    let log_z = log_partition(cus, beta)?;
    Ok(cus.iter().map(|cu| cu / beta - log_z).collect())
}

/// Build the reward rows for one prompt's critique group. `cus` pairs each
/// critique index with its utility; the shared log-partition value is taken
/// over exactly the critiques present.
pub fn reward_group(
    prompt_id: &str,
    cus: &[(u32, CritiqueUtility)],
    beta: f64,
) -> Result<Vec<RewardRecord>, RewardError> {
    let values: Vec<f64> = cus.iter().map(|(_, cu)| cu.value).collect();
    let log_z = log_partition(&values, beta)?;
    Ok(cus
        .iter()
        .map(|(index, cu)| RewardRecord {
            prompt_id: prompt_id.to_string(),
            critique_index: *index,
            cu: *cu,
            log_z,
            target: cu.value / beta - log_z,
        })
        .collect())
}

/// Fixed critique pairings used for preference-pair construction on a
/// 4-critique group: (1,2) and (3,4).
pub const DPCO_GROUPINGS: [(u32, u32); 2] = [(1, 2), (3, 4)];

/// Turn per-group double-judgment outcomes into preference pairs. Groups
/// that tied, disagreed across orders, or failed to parse emit nothing.
pub fn dpco_pairs(
    prompt_id: &str,
    critique_count: usize,
    outcomes: &[CritiquePairOutcome; 2],
) -> Result<Vec<DpcoPair>, RewardError> {
    if critique_count != 4 {
        return Err(RewardError::WrongGroupSize(critique_count));
    }
    let mut pairs = Vec::new();
    for ((first, second), outcome) in DPCO_GROUPINGS.iter().zip(outcomes) {
        let (chosen, rejected) = match outcome {
            CritiquePairOutcome::FirstWins => (*first, *second),
            CritiquePairOutcome::SecondWins => (*second, *first),
            CritiquePairOutcome::Tie
            | CritiquePairOutcome::Inconsistent
            | CritiquePairOutcome::Invalid => continue,
        };
        pairs.push(DpcoPair {
            prompt_id: prompt_id.to_string(),
            chosen_index: chosen,
            rejected_index: rejected,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unanimous_preference_is_one() {
        let cu = critique_utility(&[1.0; 10]).unwrap();
        assert_eq!(cu.value, 1.0);
        assert_eq!(cu.valid_judgments, 10);
    }

    #[test]
    fn mixed_scores_average() {
        let cu = critique_utility(&[1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0, 0.0, 1.0, 0.5]).unwrap();
        assert!((cu.value - 0.8).abs() < 1e-15);
    }

    #[test]
    fn all_tie_judge_gives_half() {
        assert_eq!(critique_utility(&[0.5; 10]).unwrap().value, 0.5);
    }

    #[test]
    fn empty_judgments_are_an_error() {
        assert!(matches!(critique_utility(&[]), Err(RewardError::EmptyJudgments)));
    }

    #[test]
    fn constant_utilities_give_u_over_beta() {
        let log_z = log_partition(&[0.7; 4], 0.1).unwrap();
        assert!((log_z - 7.0).abs() < 1e-12);
        let single = log_partition(&[0.3], 0.5).unwrap();
        assert!((single - 0.6).abs() < 1e-12);
    }

    #[test]
    fn stock_beta_group_value() {
        // Direct evaluation: ln((e^10 + e^0 + 2 e^5) / 4).
        let expected = ((10f64.exp() + 1.0 + 2.0 * 5f64.exp()) / 4.0).ln();
        let log_z = log_partition(&[1.0, 0.0, 0.5, 0.5], 0.1).unwrap();
        assert!((log_z - expected).abs() < 1e-12);
        assert!((log_z - 8.6271).abs() < 5e-5, "log_z = {log_z}");
    }

    #[test]
    fn tiny_beta_stays_finite() {
        let log_z = log_partition(&[0.0, 0.25, 0.5, 0.75, 1.0], 1e-3).unwrap();
        assert!(log_z.is_finite());
        // Analytic check: dominated by exp(1000); remaining terms shift the
        // mean by exp(-250) steps.
        let by_hand = 1000.0
            + ((0f64 - 1000.0).exp()
                + (250f64 - 1000.0).exp()
                + (500f64 - 1000.0).exp()
                + (750f64 - 1000.0).exp()
                + 1.0)
                .ln()
            - 5f64.ln();
        assert!((log_z - by_hand).abs() / by_hand.abs() < 1e-12);
    }

    #[test]
    fn beta_must_be_positive() {
        assert!(matches!(
            log_partition(&[0.5], 0.0),
            Err(RewardError::NonPositiveBeta(_))
        ));
    }

    #[test]
    fn constant_group_targets_vanish() {
        let targets = rco_targets(&[0.4; 4], 0.1).unwrap();
        for t in targets {
            assert!(t.abs() < 1e-12);
        }
    }

    #[test]
    fn stock_beta_first_target() {
        let targets = rco_targets(&[1.0, 0.0, 0.5, 0.5], 0.1).unwrap();
        let log_z = log_partition(&[1.0, 0.0, 0.5, 0.5], 0.1).unwrap();
        assert!((targets[0] - (10.0 - log_z)).abs() < 1e-12);
        assert!((targets[0] - 1.3729).abs() < 5e-5);
    }

    #[test]
    fn dpco_groupings_follow_verdicts() {
        use CritiquePairOutcome::*;
        let pairs = dpco_pairs("q", 4, &[FirstWins, SecondWins]).unwrap();
        assert_eq!(
            pairs,
            vec![
                DpcoPair { prompt_id: "q".into(), chosen_index: 1, rejected_index: 2 },
                DpcoPair { prompt_id: "q".into(), chosen_index: 4, rejected_index: 3 },
            ]
        );

        let pairs = dpco_pairs("q", 4, &[Tie, FirstWins]).unwrap();
        assert_eq!(
            pairs,
            vec![DpcoPair { prompt_id: "q".into(), chosen_index: 3, rejected_index: 4 }]
        );

        assert!(dpco_pairs("q", 4, &[Inconsistent, Invalid]).unwrap().is_empty());
        assert!(matches!(
            dpco_pairs("q", 3, &[Tie, Tie]),
            Err(RewardError::WrongGroupSize(3))
        ));
    }

    proptest! {
        /// (1/N) sum_i exp(target_i) == 1 up to float noise.
        #[test]
        fn exponential_mean_identity(
            cus in prop::collection::vec(0.0..=1.0f64, 1..8),
            beta in prop::sample::select(vec![1e-2, 0.1, 1.0]),
        ) {
            let targets = rco_targets(&cus, beta).unwrap();
            let mean: f64 = targets.iter().map(|t| t.exp()).sum::<f64>() / targets.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-12, "mean = {mean}");
        }

        /// Bounds: min/beta <= log_z <= max/beta, and Jensen's lower bound.
        #[test]
        fn partition_bounds(
            cus in prop::collection::vec(0.0..=1.0f64, 1..8),
            beta in prop::sample::select(vec![5e-2, 0.1, 1.0]),
        ) {
            let log_z = log_partition(&cus, beta).unwrap();
            let min = cus.iter().cloned().fold(f64::INFINITY, f64::min) / beta;
            let max = cus.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / beta;
            let mean = cus.iter().sum::<f64>() / cus.len() as f64 / beta;
            prop_assert!(log_z <= max + 1e-9);
            prop_assert!(log_z >= min - 1e-9);
            prop_assert!(log_z >= mean - 1e-9);
        }

        /// Permutations leave log_z unchanged and permute targets with them.
        #[test]
        fn permutation_equivariance(
            cus in prop::collection::vec(0.0..=1.0f64, 2..6),
            rotation in 0..5usize,
        ) {
            let beta = 0.1;
            let mut rotated = cus.clone();
            rotated.rotate_left(rotation % cus.len());
            let log_a = log_partition(&cus, beta).unwrap();
            let log_b = log_partition(&rotated, beta).unwrap();
            prop_assert!((log_a - log_b).abs() < 1e-12);

            let mut targets = rco_targets(&cus, beta).unwrap();
            targets.rotate_left(rotation % cus.len());
            let rotated_targets = rco_targets(&rotated, beta).unwrap();
            for (a, b) in targets.iter().zip(&rotated_targets) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
