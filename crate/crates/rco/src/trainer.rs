//! Desk-scale verification of the critique-reward training objective.
//!
//! The critic is modeled as a categorical policy over an enumerable
//! critique set, so every quantity in the objective has an exact
//! counterpart: the KL-regularized optimum is a softmax reweighting of the
//! reference policy, the squared-residual loss vanishes exactly there, and
//! gradients can be checked against finite differences.
//!
//! Training minimizes the mean squared residual
//! `log(p/ref) + log_z - cu/beta` over the chosen index set. With the full
//! set, `log_z` is the exact partition value under the reference; with a
//! sampled subset it is the subset sample mean, matching how rewards are
//! built from N sampled critiques.

use serde::{Deserialize, Serialize};

use crate::reward::{log_mean_exp, DpcoPair};

/// Trainable policy: logits over K critiques.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    pub logits: Vec<f64>,
}

impl CategoricalPolicy {
    pub fn uniform(size: usize) -> Self {
        CategoricalPolicy {
            logits: vec![0.0; size],
        }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Stable softmax probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        let log_probs = self.log_probabilities();
        log_probs.iter().map(|lp| lp.exp()).collect()
    }

    pub fn log_probabilities(&self) -> Vec<f64> {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = max
            + self
                .logits
                .iter()
                .map(|l| (l - max).exp())
                .sum::<f64>()
                .ln();
        self.logits.iter().map(|l| l - log_sum).collect()
    }
}

/// Frozen reference policy with full support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy {
    pub probabilities: Vec<f64>,
}

impl ReferencePolicy {
    pub fn new(probabilities: Vec<f64>) -> Result<Self, TrainerError> {
        if probabilities.is_empty() {
            return Err(TrainerError::Invalid("reference policy is empty".into()));
        }
        if probabilities.iter().any(|p| *p <= 0.0 || p.is_nan()) {
            return Err(TrainerError::Invalid(
                "reference policy must have full support".into(),
            ));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TrainerError::Invalid(format!(
                "reference probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ReferencePolicy { probabilities })
    }

    pub fn uniform(size: usize) -> Self {
        ReferencePolicy {
            probabilities: vec![1.0 / size as f64; size],
        }
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

/// One enumerable training instance: reference policy, exact per-critique
/// utilities, `beta`, and optionally the 1-based indices of the sampled
/// subset the loss runs over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyInstance {
    pub reference: ReferencePolicy,
    pub cus: Vec<f64>,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_indices: Option<Vec<u32>>,
}

impl ToyInstance {
    pub fn new(reference: ReferencePolicy, cus: Vec<f64>, beta: f64) -> Result<Self, TrainerError> {
        let instance = ToyInstance {
            reference,
            cus,
            beta,
            sampled_indices: None,
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn with_sampled_indices(mut self, indices: Vec<u32>) -> Result<Self, TrainerError> {
        self.sampled_indices = Some(indices);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.beta <= 0.0 || self.beta.is_nan() {
            return Err(TrainerError::NonPositiveBeta(self.beta));
        }
        if self.cus.len() != self.reference.len() {
            return Err(TrainerError::Invalid(format!(
                "{} utilities for {} reference entries",
                self.cus.len(),
                self.reference.len()
            )));
        }
        if self.cus.iter().any(|cu| !(0.0..=1.0).contains(cu)) {
            return Err(TrainerError::Invalid("utilities must lie in [0,1]".into()));
        }
        if let Some(indices) = &self.sampled_indices {
            if indices.is_empty() {
                return Err(TrainerError::Invalid("sampled index set is empty".into()));
            }
            let k = self.reference.len() as u32;
            let mut seen = std::collections::BTreeSet::new();
            for &index in indices {
                if index < 1 || index > k {
                    return Err(TrainerError::Invalid(format!(
                        "sampled index {index} outside 1..={k}"
                    )));
                }
                if !seen.insert(index) {
                    return Err(TrainerError::Invalid(format!(
                        "sampled index {index} repeated"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cus.is_empty()
    }

    /// 0-based index set the loss runs over.
    fn index_set(&self) -> Vec<usize> {
        match &self.sampled_indices {
            Some(indices) => indices.iter().map(|i| (*i - 1) as usize).collect(),
            None => (0..self.len()).collect(),
        }
    }

    /// The log-partition value the residuals use: exact under the
    /// reference for the full set, sample mean over a sampled subset.
    pub fn log_z(&self) -> f64 {
        match &self.sampled_indices {
            Some(indices) => {
                let scaled: Vec<f64> = indices
                    .iter()
                    .map(|i| self.cus[(*i - 1) as usize] / self.beta)
                    .collect();
                log_mean_exp(&scaled)
            }
            None => {
                let terms: Vec<f64> = self
                    .reference
                    .probabilities
                    .iter()
                    .zip(&self.cus)
                    .map(|(p, cu)| p.ln() + cu / self.beta)
                    .collect();
                log_sum_exp(&terms)
            }
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Trainer errors.
#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("policy assigns zero probability to critique {index}")]
    ZeroProbability { index: usize },
    #[error("policy has {policy} logits, instance has {instance} critiques")]
    SizeMismatch { policy: usize, instance: usize },
    #[error("no preference pairs to train on")]
    EmptyPairs,
    #[error("preference pair references critique {index} outside 1..={size}")]
    PairOutOfRange { index: u32, size: usize },
    #[error("learning rate must be positive, got {0}")]
    NonPositiveLearningRate(f64),
    #[error("diverged at step {step}: loss {loss:.6e} (best {best:.6e})")]
    Diverged { step: u32, loss: f64, best: f64 },
}

/// The KL-regularized optimum: reference probabilities reweighted by
/// `exp(cu/beta)` and renormalized, computed in log space.
pub fn closed_form_policy(instance: &ToyInstance) -> Result<Vec<f64>, TrainerError> {
    instance.validate()?;
    let terms: Vec<f64> = instance
        .reference
        .probabilities
        .iter()
        .zip(&instance.cus)
        .map(|(p, cu)| p.ln() + cu / instance.beta)
        .collect();
    let log_z = log_sum_exp(&terms);
    Ok(terms.iter().map(|t| (t - log_z).exp()).collect())
}

/// Zero-residual probabilities on a sampled subset: for each sampled index,
/// `ref_i * exp(cu_i/beta) / z_subset` with the subset sample-mean
/// partition. Probability mass outside the subset is unconstrained by the
/// loss.
pub fn subset_target_probabilities(
    instance: &ToyInstance,
) -> Result<Vec<(usize, f64)>, TrainerError> {
    instance.validate()?;
    let log_z = instance.log_z();
    Ok(instance
        .index_set()
        .into_iter()
        .map(|i| {
            let log_p = instance.reference.probabilities[i].ln() + instance.cus[i] / instance.beta
                - log_z;
            (i, log_p.exp())
        })
        .collect())
}

/// (index set, residuals over it, full probability vector).
type ResidualParts = (Vec<usize>, Vec<f64>, Vec<f64>);

fn residuals(
    policy: &CategoricalPolicy,
    instance: &ToyInstance,
) -> Result<ResidualParts, TrainerError> {
    instance.validate()?;
    if policy.len() != instance.len() {
        return Err(TrainerError::SizeMismatch {
            policy: policy.len(),
            instance: instance.len(),
        });
    }
    let probs = policy.probabilities();
    let log_probs = policy.log_probabilities();
    let log_z = instance.log_z();
    let index_set = instance.index_set();
    let mut res = Vec::with_capacity(index_set.len());
    for &i in &index_set {
        if probs[i] == 0.0 {
            return Err(TrainerError::ZeroProbability { index: i });
        }
        res.push(
            log_probs[i] - instance.reference.probabilities[i].ln() + log_z
                - instance.cus[i] / instance.beta,
        );
    }
    Ok((index_set, res, probs))
}

/// Mean squared residual `(1/2N) * sum_i (log(p_i/ref_i) + log_z - cu_i/beta)^2`
/// over the instance's index set.
pub fn rco_loss(policy: &CategoricalPolicy, instance: &ToyInstance) -> Result<f64, TrainerError> {
    let (_, res, _) = residuals(policy, instance)?;
    let n = res.len() as f64;
    Ok(res.iter().map(|r| r * r).sum::<f64>() / (2.0 * n))
}

/// Exact gradient of [`rco_loss`] with respect to the policy logits.
pub fn rco_grad(
    policy: &CategoricalPolicy,
    instance: &ToyInstance,
) -> Result<Vec<f64>, TrainerError> {
    let (index_set, res, probs) = residuals(policy, instance)?;
    let n = index_set.len() as f64;
    let residual_sum: f64 = res.iter().sum();
    let mut grad = vec![0.0; policy.len()];
    for (&i, r) in index_set.iter().zip(&res) {
        grad[i] += r / n;
    }
    for (g, p) in grad.iter_mut().zip(&probs) {
        *g -= p * residual_sum / n;
    }
    Ok(grad)
}

/// Convergence report for one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub steps: u32,
    pub final_loss: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

/// A fitted policy plus its convergence report.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub policy: CategoricalPolicy,
    pub report: FitReport,
}

/// Plain gradient descent with a fixed step. Stops when the gradient norm
/// drops below `tolerance` or after `max_steps`. A loss that keeps rising
/// past its best value for a full patience window is reported as
/// divergence.
pub fn fit(
    instance: &ToyInstance,
    init_logits: Vec<f64>,
    learning_rate: f64,
    max_steps: u32,
    tolerance: f64,
) -> Result<FitOutcome, TrainerError> {
    if learning_rate <= 0.0 || learning_rate.is_nan() {
        return Err(TrainerError::NonPositiveLearningRate(learning_rate));
    }
    let mut policy = CategoricalPolicy { logits: init_logits };
    if policy.len() != instance.len() {
        return Err(TrainerError::SizeMismatch {
            policy: policy.len(),
            instance: instance.len(),
        });
    }
    const PATIENCE: u32 = 50;
    let mut best = f64::INFINITY;
    let mut since_best = 0u32;
    let mut steps = 0;
    let mut grad = rco_grad(&policy, instance)?;
    let mut grad_norm = l2(&grad);
    while grad_norm >= tolerance && steps < max_steps {
        for (logit, g) in policy.logits.iter_mut().zip(&grad) {
            *logit -= learning_rate * g;
        }
        steps += 1;
        // An underflowed or non-finite policy mid-run means the steps blew
        // up, which is divergence rather than a caller error.
        let loss = match rco_loss(&policy, instance) {
            Ok(loss) if loss.is_finite() => loss,
            Ok(_) | Err(TrainerError::ZeroProbability { .. }) => {
                return Err(TrainerError::Diverged {
                    step: steps,
                    loss: f64::INFINITY,
                    best,
                })
            }
            Err(other) => return Err(other),
        };
        if loss < best {
            best = loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > PATIENCE && loss > 4.0 * best + 1e-12 {
                return Err(TrainerError::Diverged { step: steps, loss, best });
            }
        }
        grad = rco_grad(&policy, instance)?;
        grad_norm = l2(&grad);
    }
    let final_loss = rco_loss(&policy, instance)?;
    Ok(FitOutcome {
        report: FitReport {
            steps,
            final_loss,
            grad_norm,
            converged: grad_norm < tolerance,
        },
        policy,
    })
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// KL divergence `sum_i p_i log(p_i/q_i)` between probability vectors.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// Mean `-log sigmoid(beta * margin)` over preference pairs, where the
/// margin is the chosen-minus-rejected difference of policy/reference log
/// ratios. Pair indices are 1-based critique indices.
pub fn dpo_loss(
    policy: &CategoricalPolicy,
    reference: &ReferencePolicy,
    pairs: &[DpcoPair],
    beta: f64,
) -> Result<f64, TrainerError> {
    if beta <= 0.0 || beta.is_nan() {
        return Err(TrainerError::NonPositiveBeta(beta));
    }
    if pairs.is_empty() {
        return Err(TrainerError::EmptyPairs);
    }
    if policy.len() != reference.len() {
        return Err(TrainerError::SizeMismatch {
            policy: policy.len(),
            instance: reference.len(),
        });
    }
    let log_probs = policy.log_probabilities();
    let size = policy.len();
    let log_ratio = |index: u32| -> Result<f64, TrainerError> {
        if index < 1 || index as usize > size {
            return Err(TrainerError::PairOutOfRange { index, size });
        }
        let i = (index - 1) as usize;
        Ok(log_probs[i] - reference.probabilities[i].ln())
    };
    let mut total = 0.0;
    for pair in pairs {
        let margin = beta * (log_ratio(pair.chosen_index)? - log_ratio(pair.rejected_index)?);
        // -log sigmoid(m) == softplus(-m), evaluated stably.
        total += softplus(-margin);
    }
    Ok(total / pairs.len() as f64)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_instance(cus: Vec<f64>, beta: f64) -> ToyInstance {
        let k = cus.len();
        ToyInstance::new(ReferencePolicy::uniform(k), cus, beta).unwrap()
    }

    #[test]
    fn zero_reward_keeps_the_prior() {
        let reference = ReferencePolicy::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let instance = ToyInstance::new(reference.clone(), vec![0.0; 4], 0.1).unwrap();
        let optimal = closed_form_policy(&instance).unwrap();
        for (p, q) in optimal.iter().zip(&reference.probabilities) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn single_rewarded_critique_under_uniform_prior() {
        let instance = uniform_instance(vec![1.0, 0.0, 0.0, 0.0], 1.0);
        let optimal = closed_form_policy(&instance).unwrap();
        let e = 1f64.exp();
        assert!((optimal[0] - e / (e + 3.0)).abs() < 1e-12);
        assert!((optimal[0] - 0.47536).abs() < 1e-5);
        for p in &optimal[1..] {
            assert!((p - 1.0 / (e + 3.0)).abs() < 1e-12);
            assert!((p - 0.17488).abs() < 1e-5);
        }
    }

    #[test]
    fn huge_beta_recovers_the_reference() {
        let reference = ReferencePolicy::new(vec![0.5, 0.25, 0.25]).unwrap();
        let instance = ToyInstance::new(reference.clone(), vec![1.0, 0.3, 0.0], 1e6).unwrap();
        let optimal = closed_form_policy(&instance).unwrap();
        for (p, q) in optimal.iter().zip(&reference.probabilities) {
            assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn loss_vanishes_at_the_closed_form() {
        let instance = uniform_instance(vec![0.9, 0.1, 0.5, 0.3], 0.1);
        let optimal = closed_form_policy(&instance).unwrap();
        let policy = CategoricalPolicy {
            logits: optimal.iter().map(|p| p.ln()).collect(),
        };
        let loss = rco_loss(&policy, &instance).unwrap();
        assert!(loss < 1e-10, "loss = {loss}");
        let grad = rco_grad(&policy, &instance).unwrap();
        assert!(l2(&grad) < 1e-8);
    }

    #[test]
    fn constant_utilities_make_the_reference_optimal() {
        let reference = ReferencePolicy::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let instance = ToyInstance::new(reference.clone(), vec![0.6; 4], 0.1).unwrap();
        let policy = CategoricalPolicy {
            logits: reference.probabilities.iter().map(|p| p.ln()).collect(),
        };
        assert!(rco_loss(&policy, &instance).unwrap() < 1e-20);
    }

    #[test]
    fn loss_matches_a_term_by_term_oracle() {
        let instance = uniform_instance(vec![1.0, 0.0, 0.0, 0.0], 1.0);
        let policy = CategoricalPolicy::uniform(4);
        // Independent summation: p = ref = 1/4, so each residual is
        // log_z - cu_i with log_z = ln(mean of ref-weighted exp) over K.
        let log_z = (0.25f64 * (1f64.exp() + 3.0)).ln();
        let expected: f64 = instance
            .cus
            .iter()
            .map(|cu| {
                let r = log_z - cu;
                r * r
            })
            .sum::<f64>()
            / 8.0;
        let loss = rco_loss(&policy, &instance).unwrap();
        assert!((loss - expected).abs() < 1e-12, "loss {loss} vs {expected}");
    }

    fn finite_difference(policy: &CategoricalPolicy, instance: &ToyInstance, h: f64) -> Vec<f64> {
        let mut fd = vec![0.0; policy.len()];
        for (j, slot) in fd.iter_mut().enumerate() {
            let mut plus = policy.clone();
            plus.logits[j] += h;
            let mut minus = policy.clone();
            minus.logits[j] -= h;
            *slot = (rco_loss(&plus, instance).unwrap() - rco_loss(&minus, instance).unwrap())
                / (2.0 * h);
        }
        fd
    }

    #[test]
    fn gradient_matches_central_differences() {
        let instance = uniform_instance(vec![0.8, 0.2, 0.5, 0.1, 0.9], 0.2);
        let policy = CategoricalPolicy {
            logits: vec![0.3, -0.2, 0.1, 0.0, -0.4],
        };
        let analytic = rco_grad(&policy, &instance).unwrap();
        let numeric = finite_difference(&policy, &instance, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            let scale = a.abs().max(n.abs()).max(1e-8);
            assert!((a - n).abs() / scale < 1e-5, "analytic {a} vs numeric {n}");
        }
        // Softmax shift invariance: components sum to zero.
        assert!(analytic.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_the_closed_form() {
        let instance = uniform_instance(vec![1.0, 0.0, 0.5, 0.5], 0.1);
        let outcome = fit(&instance, vec![0.0; 4], 0.1, 50_000, 1e-10).unwrap();
        assert!(outcome.report.converged);
        let fitted = outcome.policy.probabilities();
        let optimal = closed_form_policy(&instance).unwrap();
        assert!(kl_divergence(&fitted, &optimal) < 1e-6);
    }

    #[test]
    fn fit_on_constant_utilities_returns_the_reference() {
        let reference = ReferencePolicy::new(vec![0.5, 0.3, 0.2]).unwrap();
        let instance = ToyInstance::new(reference.clone(), vec![0.4; 3], 0.1).unwrap();
        let outcome = fit(&instance, vec![0.0; 3], 0.1, 50_000, 1e-12).unwrap();
        let fitted = outcome.policy.probabilities();
        assert!(kl_divergence(&fitted, &reference.probabilities) < 1e-8);
    }

    #[test]
    fn fit_on_a_sampled_subset_matches_the_subset_targets() {
        let instance = uniform_instance(vec![0.9, 0.1, 0.6, 0.3], 0.1)
            .with_sampled_indices(vec![1, 3])
            .unwrap();
        let outcome = fit(&instance, vec![0.0; 4], 0.1, 100_000, 1e-12).unwrap();
        let fitted = outcome.policy.probabilities();
        for (index, target) in subset_target_probabilities(&instance).unwrap() {
            assert!(
                (fitted[index] - target).abs() < 1e-6,
                "index {index}: fitted {} vs target {target}",
                fitted[index]
            );
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let instance = uniform_instance(vec![0.7, 0.2, 0.4], 0.1);
        let a = fit(&instance, vec![0.1, -0.2, 0.0], 0.1, 5_000, 1e-9).unwrap();
        let b = fit(&instance, vec![0.1, -0.2, 0.0], 0.1, 5_000, 1e-9).unwrap();
        assert_eq!(a.policy.logits, b.policy.logits);
        assert_eq!(a.report.steps, b.report.steps);
    }

    #[test]
    fn nonzero_loss_away_from_the_closed_form() {
        // The zero-loss characterization cuts both ways: any policy that
        // differs from the optimum in total variation has positive loss.
        let instance = uniform_instance(vec![0.9, 0.1, 0.5, 0.3], 0.1);
        let optimal = closed_form_policy(&instance).unwrap();
        for (shift_index, magnitude) in [(0usize, 1e-4), (2, 1e-2), (3, 0.5)] {
            let mut logits: Vec<f64> = optimal.iter().map(|p| p.ln()).collect();
            logits[shift_index] += magnitude;
            let perturbed = CategoricalPolicy { logits };
            let tv: f64 = perturbed
                .probabilities()
                .iter()
                .zip(&optimal)
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv > 1e-8);
            let loss = rco_loss(&perturbed, &instance).unwrap();
            assert!(loss > 1e-12, "tv {tv:.3e} but loss {loss:.3e}");
        }
    }

    #[test]
    fn beta_sharpens_the_argmax() {
        let cus = vec![0.9, 0.2, 0.5, 0.1];
        let mut last = 0.0;
        for beta in [1.0, 0.5, 0.2, 0.1, 0.05] {
            let instance = uniform_instance(cus.clone(), beta);
            let optimal = closed_form_policy(&instance).unwrap();
            assert!(optimal[0] > last, "beta {beta}: {} <= {last}", optimal[0]);
            last = optimal[0];
        }
    }

    #[test]
    fn uniform_reference_preserves_the_argmax() {
        let cus = vec![0.3, 0.8, 0.1, 0.5];
        let instance = uniform_instance(cus.clone(), 0.1);
        let optimal = closed_form_policy(&instance).unwrap();
        let argmax_cu = cus
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let argmax_p = optimal
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax_cu, argmax_p);
    }

    #[test]
    fn dpo_loss_values() {
        let reference = ReferencePolicy::uniform(4);
        let policy = CategoricalPolicy::uniform(4);
        let pairs = vec![DpcoPair {
            prompt_id: "q".into(),
            chosen_index: 1,
            rejected_index: 2,
        }];
        // Zero margin: -log sigmoid(0) = ln 2.
        let loss = dpo_loss(&policy, &reference, &pairs, 0.1).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        // Unit log-ratio margin at beta 1: -log sigmoid(1).
        let skewed = CategoricalPolicy {
            logits: vec![1.0, 0.0, 0.0, 0.0],
        };
        let margin_loss = dpo_loss(&skewed, &reference, &pairs, 1.0).unwrap();
        let expected = -(1.0 / (1.0 + (-1f64).exp())).ln();
        assert!((margin_loss - expected).abs() < 1e-12);
        assert!((margin_loss - 0.3133).abs() < 1e-4);

        // Large margins drive the loss to zero.
        let extreme = CategoricalPolicy {
            logits: vec![60.0, 0.0, 0.0, 0.0],
        };
        assert!(dpo_loss(&extreme, &reference, &pairs, 1.0).unwrap() < 1e-12);

        assert!(matches!(
            dpo_loss(&policy, &reference, &[], 0.1),
            Err(TrainerError::EmptyPairs)
        ));
    }

    #[test]
    fn divergent_steps_are_reported() {
        let instance = uniform_instance(vec![1.0, 0.0, 0.0, 0.0], 0.05);
        // An absurd step size oscillates and blows up.
        let result = fit(&instance, vec![0.0; 4], 500.0, 50_000, 1e-12);
        assert!(matches!(result, Err(TrainerError::Diverged { .. })));
    }
}
