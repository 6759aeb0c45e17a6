//! Joint belief over rationality/goal hypotheses, kept in log space.

use serde::{Deserialize, Serialize};

use crate::agent_models::{
    boltzmann_log_policy, logsumexp, recover_control, ControlSet, GoalSet, HumanState, QFunction,
    RationalitySet,
};
use crate::error::BeliefError;

/// Lower bound applied to finite log weights before renormalization.
pub const LOG_WEIGHT_FLOOR: f64 = -745.0;

/// `ℬ × 𝒢`, indexed row-major over β then goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpace {
    pub rationalities: RationalitySet,
    pub goals: GoalSet,
}

impl HypothesisSpace {
    pub fn new(rationalities: RationalitySet, goals: GoalSet) -> Self {
        Self {
            rationalities,
            goals,
        }
    }

    pub fn len(&self) -> usize {
        self.rationalities.len() * self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, beta_idx: usize, goal_idx: usize) -> usize {
        beta_idx * self.goals.len() + goal_idx
    }

    /// `(beta_idx, goal_idx)` of a flat hypothesis index.
    #[inline]
    pub fn split(&self, idx: usize) -> (usize, usize) {
        (idx / self.goals.len(), idx % self.goals.len())
    }

    #[inline]
    pub fn beta(&self, idx: usize) -> f64 {
        self.rationalities.get(idx / self.goals.len())
    }

    #[inline]
    pub fn goal_index(&self, idx: usize) -> usize {
        idx % self.goals.len()
    }
}

/// Normalized log-probability table over a [`HypothesisSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointBelief {
    log_weights: Vec<f64>,
}

impl JointBelief {
    pub fn uniform(len: usize) -> Self {
        Self {
            log_weights: vec![-(len as f64).ln(); len],
        }
    }

    /// Normalizes arbitrary log weights. Fails only if every entry is `−∞`.
    pub fn from_log_weights(mut log_weights: Vec<f64>) -> Option<Self> {
        let lse = logsumexp(&log_weights);
        if !lse.is_finite() {
            return None;
        }
        for w in log_weights.iter_mut() {
            *w -= lse;
        }
        Some(Self { log_weights })
    }

    pub fn from_probabilities(probs: &[f64]) -> Option<Self> {
        Self::from_log_weights(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn log_normalizer(&self) -> f64 {
        logsumexp(&self.log_weights)
    }

    pub fn goal_marginal(&self, h: &HypothesisSpace) -> Vec<f64> {
        let mut m = vec![0.0; h.goals.len()];
        for (i, w) in self.log_weights.iter().enumerate() {
            m[h.goal_index(i)] += w.exp();
        }
        m
    }

    pub fn beta_marginal(&self, h: &HypothesisSpace) -> Vec<f64> {
        let mut m = vec![0.0; h.rationalities.len()];
        for (i, w) in self.log_weights.iter().enumerate() {
            m[h.split(i).0] += w.exp();
        }
        m
    }
}

/// Uniform prior `1 / (|ℬ||𝒢|)`.
pub fn init_belief(h: &HypothesisSpace) -> JointBelief {
    JointBelief::uniform(h.len())
}

pub fn reset_belief(b: &JointBelief) -> JointBelief {
    JointBelief::uniform(b.len())
}

/// Prior dynamics on `(β, g)` applied before each Bayesian update.
pub trait TransitionKernel: Send + Sync {
    fn apply(&self, log_weights: &mut [f64], h: &HypothesisSpace);
}

/// Static hypotheses: the belief changes only through observations.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticHypotheses;

impl TransitionKernel for StaticHypotheses {
    fn apply(&self, _log_weights: &mut [f64], _h: &HypothesisSpace) {}
}

/// Snaps the control implied by two observations onto `controls`.
pub fn snap_observed_control(
    z_t: HumanState,
    z_next: HumanState,
    dt: f64,
    fallback_theta: f64,
    controls: &ControlSet,
) -> Result<usize, BeliefError> {
    let u = recover_control(z_t, z_next, dt, fallback_theta);
    let (idx, distance) = controls.nearest(&u);
    let tolerance = controls.snap_tolerance();
    if distance > tolerance {
        return Err(BeliefError::ModelMismatch {
            distance,
            tolerance,
        });
    }
    Ok(idx)
}

/// Bayesian update for an observed action index, in log space.
pub fn update_with_action(
    b: &JointBelief,
    z_t: HumanState,
    action_idx: usize,
    controls: &ControlSet,
    q: &QFunction,
    h: &HypothesisSpace,
) -> Result<JointBelief, BeliefError> {
    update_with_kernel(b, z_t, action_idx, controls, q, h, &StaticHypotheses)
}

pub fn update_with_kernel(
    b: &JointBelief,
    z_t: HumanState,
    action_idx: usize,
    controls: &ControlSet,
    q: &QFunction,
    h: &HypothesisSpace,
    kernel: &dyn TransitionKernel,
) -> Result<JointBelief, BeliefError> {
    if b.len() != h.len() {
        return Err(BeliefError::SizeMismatch {
            got: b.len(),
            expected: h.len(),
        });
    }
    let mut prior = b.log_weights.clone();
    kernel.apply(&mut prior, h);

    // log π(u | z; β, g) per (β, g); the Q table only depends on the goal.
    let n_goals = h.goals.len();
    let mut q_values = vec![0.0; controls.len()];
    let mut next = vec![f64::NEG_INFINITY; h.len()];
    let mut scaled = vec![0.0; controls.len()];
    for g in 0..n_goals {
        q.fill_values(z_t, g, controls, &mut q_values);
        for bi in 0..h.rationalities.len() {
            let idx = h.index(bi, g);
            if prior[idx] == f64::NEG_INFINITY {
                continue;
            }
            let beta = h.rationalities.get(bi);
            for (s, qv) in scaled.iter_mut().zip(&q_values) {
                *s = beta * qv;
            }
            let lse = logsumexp(&scaled);
            if lse == f64::NEG_INFINITY {
                return Err(crate::error::ModelError::NoUnmaskedAction.into());
            }
            let log_pi = scaled[action_idx] - lse;
            next[idx] = (log_pi + prior[idx]).max(LOG_WEIGHT_FLOOR);
        }
    }
    let lse = logsumexp(&next);
    for w in next.iter_mut() {
        *w -= lse;
    }
    Ok(JointBelief { log_weights: next })
}

/// Full update from an observation pair: recover, snap, then apply Bayes' rule.
#[allow(clippy::too_many_arguments)]
pub fn update_belief(
    b: &JointBelief,
    z_t: HumanState,
    z_next: HumanState,
    dt: f64,
    fallback_theta: f64,
    controls: &ControlSet,
    q: &QFunction,
    h: &HypothesisSpace,
) -> Result<JointBelief, BeliefError> {
    let idx = snap_observed_control(z_t, z_next, dt, fallback_theta, controls)?;
    update_with_action(b, z_t, idx, controls, q, h)
}

/// Masks every action faster than `v_threshold` to `−∞`.
pub fn mask_stationary(
    q: &QFunction,
    controls: &ControlSet,
    v_threshold: f64,
) -> Result<QFunction, BeliefError> {
    let mask: Vec<bool> = controls
        .actions()
        .iter()
        .enumerate()
        .map(|(i, a)| a.v > v_threshold || q.is_masked(i))
        .collect();
    if mask.iter().all(|m| *m) {
        return Err(BeliefError::EmptyMask {
            threshold: v_threshold,
        });
    }
    let any = mask.iter().any(|m| *m);
    Ok(q.clone().with_mask(any.then_some(mask)))
}

/// Log-probabilities of the whole policy for one hypothesis; convenience for
/// diagnostics and tests.
pub fn hypothesis_log_policy(
    z: HumanState,
    hypothesis: usize,
    controls: &ControlSet,
    q: &QFunction,
    h: &HypothesisSpace,
) -> Result<Vec<f64>, BeliefError> {
    Ok(boltzmann_log_policy(
        z,
        h.beta(hypothesis),
        h.goal_index(hypothesis),
        controls,
        q,
    )?)
}

/// One belief stream for one tracked human.
pub struct BeliefTracker {
    belief: JointBelief,
    last: Option<HumanState>,
    heading: f64,
    kernel: Box<dyn TransitionKernel>,
    resets: usize,
    mismatches: usize,
}

/// Outcome of feeding one observation to a [`BeliefTracker`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationUpdate {
    pub action_idx: usize,
    pub speed: f64,
    /// Snap distance exceeded the tolerance and the nearest action was used.
    pub clamped: bool,
}

impl BeliefTracker {
    pub fn new(h: &HypothesisSpace) -> Self {
        Self::with_kernel(h, Box::new(StaticHypotheses))
    }

    pub fn with_kernel(h: &HypothesisSpace, kernel: Box<dyn TransitionKernel>) -> Self {
        Self {
            belief: init_belief(h),
            last: None,
            heading: 0.0,
            kernel,
            resets: 0,
            mismatches: 0,
        }
    }

    pub fn belief(&self) -> &JointBelief {
        &self.belief
    }

    pub fn last_observation(&self) -> Option<HumanState> {
        self.last
    }

    pub fn resets(&self) -> usize {
        self.resets
    }

    pub fn mismatches(&self) -> usize {
        self.mismatches
    }

    pub fn reset(&mut self) {
        self.belief = reset_belief(&self.belief);
        self.resets += 1;
    }

    /// Feeds an observation `dt` seconds after the previous one. Model
    /// mismatches are clamped to the nearest action and retried.
    pub fn observe(
        &mut self,
        z: HumanState,
        dt: f64,
        controls: &ControlSet,
        q: &QFunction,
        h: &HypothesisSpace,
    ) -> Result<Option<ObservationUpdate>, BeliefError> {
        let Some(prev) = self.last.replace(z) else {
            return Ok(None);
        };
        let u = recover_control(prev, z, dt, self.heading);
        let (idx, distance) = controls.nearest(&u);
        let clamped = distance > controls.snap_tolerance();
        if clamped {
            self.mismatches += 1;
        }
        self.belief = update_with_kernel(&self.belief, prev, idx, controls, q, h, &*self.kernel)?;
        if u.v > 0.0 {
            self.heading = u.theta;
        }
        Ok(Some(ObservationUpdate {
            action_idx: idx,
            speed: u.v,
            clamped,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent_models::{boltzmann_policy, ControlAction};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn space(betas: &[f64], goals: &[[f64; 2]]) -> HypothesisSpace {
        HypothesisSpace::new(
            RationalitySet::new(betas.to_vec()).unwrap(),
            GoalSet::new(goals.to_vec()).unwrap(),
        )
    }

    /// Linear-space Bayes' rule, evaluated directly from the policy.
    fn linear_update(
        prior: &[f64],
        z: HumanState,
        action: usize,
        u: &ControlSet,
        q: &QFunction,
        h: &HypothesisSpace,
    ) -> Vec<f64> {
        let mut post: Vec<f64> = (0..h.len())
            .map(|i| {
                let p = boltzmann_policy(z, h.beta(i), h.goal_index(i), u, q).unwrap();
                p[action] * prior[i]
            })
            .collect();
        let s: f64 = post.iter().sum();
        post.iter_mut().for_each(|p| *p /= s);
        post
    }

    #[test]
    fn init_examples() {
        let h = space(&[0.1, 0.3, 1.0, 3.0, 10.0], &[[0.0, 0.0]; 10]);
        for p in init_belief(&h).probabilities() {
            assert_abs_diff_eq!(p, 0.02, epsilon = 1e-15);
        }
        let h = space(&[1.0], &[[0.0, 0.0]]);
        assert_eq!(init_belief(&h).probabilities(), vec![1.0]);
        let h = space(&[1.0, 2.0], &[[0.0, 0.0], [1.0, 1.0]]);
        for p in init_belief(&h).probabilities() {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn uniform_likelihood_leaves_prior_unchanged() {
        let h = space(&[0.5, 2.0], &[[1.0, 0.0], [-1.0, 0.0]]);
        let u = ControlSet::grid(2, 8, 1.0, true).unwrap();
        // Goal-distance utility does not depend on u, so π is identical for both goals.
        let q = QFunction::goal_distance(h.goals.clone());
        let prior = JointBelief::from_probabilities(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let z = HumanState::new(0.0, 0.0);
        let post = update_belief(&prior, z, HumanState::new(0.5, 0.0), 1.0, 0.0, &u, &q, &h).unwrap();
        let beta_marg_prior = prior.beta_marginal(&h);
        // Different β give different likelihoods, but goals within one β are tied.
        let pp = post.probabilities();
        let pr = prior.probabilities();
        for bi in 0..2 {
            let ratio_post = pp[h.index(bi, 0)] / pp[h.index(bi, 1)];
            let ratio_prior = pr[h.index(bi, 0)] / pr[h.index(bi, 1)];
            assert_abs_diff_eq!(ratio_post, ratio_prior, epsilon = 1e-12);
        }
        assert!(beta_marg_prior.iter().all(|m| *m > 0.0));

        // With a single β, the posterior equals the prior exactly.
        let h1 = space(&[1.0], &[[1.0, 0.0], [-1.0, 0.0]]);
        let prior = JointBelief::from_probabilities(&[0.3, 0.7]).unwrap();
        let post = update_belief(&prior, z, HumanState::new(0.5, 0.0), 1.0, 0.0, &u, &q, &h1).unwrap();
        for (a, b) in post.probabilities().iter().zip(prior.probabilities()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn hand_computed_two_thirds_posterior() {
        // Goal 1 is uninformative (uniform over four actions); goal 0 excludes
        // actions 2 and 3. Action 0 is then twice as likely under goal 0 for
        // every β, so the posterior on goal 0 is 2/3.
        let actions = (0..4).map(|i| ControlAction::new(1.0, i as f64)).collect();
        let u = ControlSet::new(actions).unwrap();
        let h = space(&[0.5, 3.0], &[[1.0, 0.0], [-1.0, 0.0]]);
        let q = QFunction::custom(
            h.goals.clone(),
            Arc::new(|_, u, g| {
                if g[0] > 0.0 && u.theta >= 1.5 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }),
        );
        let z = HumanState::new(0.0, 0.0);
        for bi in 0..2 {
            let beta = h.rationalities.get(bi);
            let p0 = boltzmann_policy(z, beta, 0, &u, &q).unwrap();
            let p1 = boltzmann_policy(z, beta, 1, &u, &q).unwrap();
            assert_abs_diff_eq!(p0[0] / p1[0], 2.0, epsilon = 1e-12);
        }
        let post = update_with_action(&init_belief(&h), z, 0, &u, &q, &h).unwrap();
        assert_abs_diff_eq!(post.goal_marginal(&h)[0], 2.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn reset_is_uniform_and_idempotent() {
        let b = JointBelief::from_probabilities(&[0.9, 0.05, 0.05]).unwrap();
        let r = reset_belief(&b);
        assert_eq!(r, JointBelief::uniform(3));
        assert_eq!(reset_belief(&r), r);
    }

    #[test]
    fn mask_noop_when_threshold_above_max_speed() {
        let u = ControlSet::grid(4, 24, 1.5, true).unwrap();
        let q = QFunction::lookahead(GoalSet::new(vec![[3.0, 0.0]]).unwrap(), 0.5);
        let m = mask_stationary(&q, &u, 1.5).unwrap();
        assert!(m.mask().is_none());
        let z = HumanState::new(0.0, 0.0);
        assert_eq!(
            boltzmann_policy(z, 2.0, 0, &u, &q).unwrap(),
            boltzmann_policy(z, 2.0, 0, &u, &m).unwrap()
        );
    }

    #[test]
    fn mask_to_single_stop_action() {
        let u = ControlSet::grid(4, 24, 1.5, true).unwrap();
        let q = QFunction::lookahead(GoalSet::new(vec![[3.0, 0.0]]).unwrap(), 0.5);
        let m = mask_stationary(&q, &u, 0.0).unwrap();
        for beta in [1e-6, 0.1, 1.0, 100.0] {
            let p = boltzmann_policy(HumanState::new(0.0, 0.0), beta, 0, &u, &m).unwrap();
            assert_eq!(p[0], 1.0);
            assert!(p[1..].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn mask_that_empties_the_set_fails() {
        let u = ControlSet::grid(4, 24, 1.5, false).unwrap();
        let q = QFunction::lookahead(GoalSet::new(vec![[3.0, 0.0]]).unwrap(), 0.5);
        assert!(matches!(
            mask_stationary(&q, &u, 0.1),
            Err(BeliefError::EmptyMask { .. })
        ));
    }

    #[test]
    fn masked_policy_matches_restricted_softmax() {
        let u = ControlSet::grid(4, 24, 1.5, true).unwrap();
        let q = QFunction::lookahead(GoalSet::new(vec![[3.0, 1.0]]).unwrap(), 0.5);
        let m = mask_stationary(&q, &u, 0.8).unwrap();
        let z = HumanState::new(0.2, -0.4);
        let beta = 1.7;
        let p = boltzmann_policy(z, beta, 0, &u, &m).unwrap();
        let kept: Vec<usize> = (0..u.len()).filter(|&i| u.get(i).v <= 0.8).collect();
        let denom: f64 = kept
            .iter()
            .map(|&i| (beta * q.raw_value(z, u.get(i), 0)).exp())
            .sum();
        for i in 0..u.len() {
            let want = if u.get(i).v <= 0.8 {
                (beta * q.raw_value(z, u.get(i), 0)).exp() / denom
            } else {
                0.0
            };
            assert_abs_diff_eq!(p[i], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn mismatch_reported_outside_control_bounds() {
        let u = ControlSet::grid(4, 24, 1.5, true).unwrap();
        let err = snap_observed_control(
            HumanState::new(0.0, 0.0),
            HumanState::new(3.0, 0.0),
            1.0,
            0.0,
            &u,
        )
        .unwrap_err();
        assert!(matches!(err, BeliefError::ModelMismatch { .. }));
    }

    #[test]
    fn zero_mass_hypothesis_stays_zero() {
        let h = space(&[0.5, 2.0], &[[2.0, 0.0], [-2.0, 0.0]]);
        let u = ControlSet::grid(4, 24, 1.5, true).unwrap();
        let q = QFunction::lookahead(h.goals.clone(), 0.5);
        let mut b = JointBelief::from_log_weights(vec![f64::NEG_INFINITY, 0.0, 0.0, 0.0]).unwrap();
        let z = HumanState::new(0.0, 0.0);
        for a in [5, 17, 40, 0] {
            b = update_with_action(&b, z, a, &u, &q, &h).unwrap();
            assert_eq!(b.log_weights()[0], f64::NEG_INFINITY);
        }
    }

    #[test]
    fn tracker_skips_first_observation_and_counts_resets() {
        let h = space(&[1.0], &[[2.0, 0.0], [-2.0, 0.0]]);
        let u = ControlSet::grid(4, 24, 1.5, true).unwrap();
        let q = QFunction::lookahead(h.goals.clone(), 0.5);
        let mut t = BeliefTracker::new(&h);
        assert!(t.observe(HumanState::new(0.0, 0.0), 0.1, &u, &q, &h).unwrap().is_none());
        let upd = t
            .observe(HumanState::new(0.15, 0.0), 0.1, &u, &q, &h)
            .unwrap()
            .unwrap();
        assert!(!upd.clamped);
        assert!(t.belief().goal_marginal(&h)[0] > 0.5);
        t.reset();
        assert_eq!(t.resets(), 1);
        assert_eq!(t.belief(), &JointBelief::uniform(2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn log_update_matches_linear_update(
            actions in proptest::collection::vec(0usize..97, 1..6),
            x in -3.0..3.0f64, y in -2.0..2.0f64,
        ) {
            let h = space(&[0.1, 0.3, 1.0], &[[2.0, 1.0], [-2.0, 0.5], [0.0, -2.0]]);
            let u = ControlSet::grid(4, 24, 1.5, true).unwrap();
            let q = QFunction::lookahead(h.goals.clone(), 0.5).with_control_weights([0.1, 0.0]);
            let z = HumanState::new(x, y);
            let mut b = init_belief(&h);
            let mut lin = b.probabilities();
            for a in actions {
                b = update_with_action(&b, z, a, &u, &q, &h).unwrap();
                lin = linear_update(&lin, z, a, &u, &q, &h);
                prop_assert!(b.log_normalizer().abs() < 1e-9);
                for (p, l) in b.probabilities().iter().zip(&lin) {
                    prop_assert!((p - l).abs() <= 1e-6 * l.abs().max(1e-300));
                }
            }
        }

        #[test]
        fn update_invariant_to_q_shift(action in 0usize..97, c in -50.0..50.0f64) {
            let h = space(&[0.5, 4.0], &[[2.0, 1.0], [-2.0, 0.5]]);
            let u = ControlSet::grid(4, 24, 1.5, true).unwrap();
            let base = QFunction::lookahead(h.goals.clone(), 0.5);
            let inner = base.clone();
            let shifted = QFunction::custom(
                h.goals.clone(),
                Arc::new(move |z, a, g| {
                    let gi = if g == [2.0, 1.0] { 0 } else { 1 };
                    inner.raw_value(z, a, gi) + c
                }),
            );
            let z = HumanState::new(0.3, 0.1);
            let b0 = update_with_action(&init_belief(&h), z, action, &u, &base, &h).unwrap();
            let b1 = update_with_action(&init_belief(&h), z, action, &u, &shifted, &h).unwrap();
            for (p, q) in b0.probabilities().iter().zip(b1.probabilities()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
