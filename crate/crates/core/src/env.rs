//! Finite multi-agent MDPs, joint policies, trajectory sampling and
//! private reward splitting.
//!
//! Joint actions are flattened into a single index; no equation downstream
//! needs the per-agent factorization.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::moments::FeatureMap;

/// Uniform mass added to every transition row of a generated MDP before
/// renormalizing, so that every positive policy induces an irreducible,
/// aperiodic chain.
pub const TRANSITION_SMOOTHING: f64 = 1e-3;

const ROW_SUM_TOL: f64 = 1e-12;
const MAX_POWER_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_agents: usize,
    n_joint_actions: usize,
    /// `transition[a]` is the `n_states x n_states` matrix `P^a`.
    transition: Vec<Matrix>,
    /// `local_reward[i]` is the `n_states x n_joint_actions` table of `R_i(s, a)`.
    local_reward: Vec<Matrix>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(transition: Vec<Matrix>, local_reward: Vec<Matrix>, discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Parameter(format!(
                "discount must lie in (0,1), got {discount}"
            )));
        }
        let n_joint_actions = transition.len();
        let n_agents = local_reward.len();
        if n_joint_actions == 0 || n_agents == 0 {
            return Err(Error::Parameter(
                "need at least one joint action and one agent".into(),
            ));
        }
        let n_states = transition[0].nrows();
        if n_states == 0 {
            return Err(Error::Parameter("need at least one state".into()));
        }
        for (a, p) in transition.iter().enumerate() {
            if p.nrows() != n_states || p.ncols() != n_states {
                return Err(Error::Dimension(format!(
                    "P^{a} is {}x{}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            check_stochastic_rows(p).map_err(|e| Error::Parameter(format!("P^{a}: {e}")))?;
        }
        for (i, r) in local_reward.iter().enumerate() {
            if r.nrows() != n_states || r.ncols() != n_joint_actions {
                return Err(Error::Dimension(format!(
                    "R_{i} is {}x{}",
                    r.nrows(),
                    r.ncols()
                )));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parameter(format!("R_{i} has non-finite entries")));
            }
        }
        Ok(Self {
            n_states,
            n_agents,
            n_joint_actions,
            transition,
            local_reward,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_joint_actions(&self) -> usize {
        self.n_joint_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition(&self, action: usize) -> &Matrix {
        &self.transition[action]
    }

    pub fn local_reward(&self, agent: usize) -> &Matrix {
        &self.local_reward[agent]
    }

    /// `R_c(s, a)`: the average of the agents' local rewards.
    pub fn global_reward(&self, state: usize, action: usize) -> f64 {
        self.local_reward
            .iter()
            .map(|r| r[(state, action)])
            .sum::<f64>()
            / self.n_agents as f64
    }

    /// `P^pi`, with `[P^pi]_{s,s'} = sum_a pi(a|s) P^a_{s,s'}`.
    pub fn induced_transition(&self, policy: &Policy) -> Result<Matrix> {
        self.check_policy(policy)?;
        let mut p = Matrix::zeros(self.n_states, self.n_states);
        for s in 0..self.n_states {
            for a in 0..self.n_joint_actions {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for s2 in 0..self.n_states {
                    p[(s, s2)] += pa * self.transition[a][(s, s2)];
                }
            }
        }
        Ok(p)
    }

    /// `R_c^pi(s) = E_{a ~ pi(.|s)} R_c(s, a)`.
    pub fn policy_reward(&self, policy: &Policy) -> Result<Vector> {
        self.check_policy(policy)?;
        Ok(Vector::from_fn(self.n_states, |s, _| {
            (0..self.n_joint_actions)
                .map(|a| policy.prob(s, a) * self.global_reward(s, a))
                .sum()
        }))
    }

    fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_joint_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, MDP has {} states and {} joint actions",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_joint_actions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// `probs[(s, a)] = pi(a | s)`.
    probs: Matrix,
}

impl Policy {
    pub fn new(probs: Matrix) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::Parameter("empty policy table".into()));
        }
        check_stochastic_rows(&probs).map_err(|e| Error::Parameter(format!("policy: {e}")))?;
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Matrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    /// A strictly positive random policy, deterministic in `seed`.
    pub fn random(seed: u64, n_states: usize, n_actions: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probs = Matrix::zeros(n_states, n_actions);
        for s in 0..n_states {
            let row: Vec<f64> = (0..n_actions).map(|_| 0.1 + rng.random::<f64>()).collect();
            let total: f64 = row.iter().sum();
            for (a, v) in row.into_iter().enumerate() {
                probs[(s, a)] = v / total;
            }
        }
        Self { probs }
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[(state, action)]
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn table(&self) -> &Matrix {
        &self.probs
    }
}

/// A simulated trajectory `{s_p, a_p}_{p=1..M}` plus the successor state
/// `s_{M+1}`, the private reward of every agent and the features of every
/// visited state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    /// `M x N`; row `p` holds `R_i(s_p, a_p)` for every agent `i`.
    pub local_rewards: Matrix,
    /// `R_c(s_p, a_p)` recorded before the reward was split.
    pub global_rewards: Vec<f64>,
    /// `(M+1) x d`; row `p` is `phi(s_p)`.
    pub features: Matrix,
}

impl SampleSet {
    /// Builds a sample set directly from feature rows and private rewards,
    /// without an underlying MDP. `features` has `M+1` rows, `local_rewards` `M`.
    pub fn from_parts(features: Matrix, local_rewards: Matrix) -> Result<Self> {
        let m = local_rewards.nrows();
        if m == 0 || features.nrows() != m + 1 {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} samples (need M+1)",
                features.nrows(),
                m
            )));
        }
        let global_rewards = (0..m)
            .map(|p| local_rewards.row(p).sum() / local_rewards.ncols() as f64)
            .collect();
        Ok(Self {
            states: (0..=m).collect(),
            actions: vec![0; m],
            local_rewards,
            global_rewards,
            features,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.actions.len()
    }

    pub fn n_agents(&self) -> usize {
        self.local_rewards.ncols()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.actions.len();
        if m == 0 {
            return Err(Error::Dimension("empty sample set".into()));
        }
        if self.states.len() != m + 1
            || self.local_rewards.nrows() != m
            || self.global_rewards.len() != m
            || self.features.nrows() != m + 1
        {
            return Err(Error::Dimension(format!(
                "inconsistent lengths: {} states, {} actions, {} reward rows, {} feature rows",
                self.states.len(),
                m,
                self.local_rewards.nrows(),
                self.features.nrows()
            )));
        }
        if self.local_rewards.ncols() == 0 || self.features.ncols() == 0 {
            return Err(Error::Dimension(
                "need at least one agent and one feature".into(),
            ));
        }
        Ok(())
    }
}

/// Random MDP with uniform transition rows smoothed by [`TRANSITION_SMOOTHING`]
/// and local rewards drawn from `U[0, 1)`.
pub fn generate_random_mdp(
    seed: u64,
    n_states: usize,
    n_agents: usize,
    n_joint_actions: usize,
    discount: f64,
) -> Result<TabularMdp> {
    if n_states == 0 || n_agents == 0 || n_joint_actions == 0 {
        return Err(Error::Parameter(format!(
            "counts must be positive (states={n_states}, agents={n_agents}, actions={n_joint_actions})"
        )));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::Parameter(format!(
            "discount must lie in (0,1), got {discount}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transition = (0..n_joint_actions)
        .map(|_| {
            let raw = Matrix::from_fn(n_states, n_states, |_, _| rng.random::<f64>());
            smooth_rows(&normalize_rows(&raw), TRANSITION_SMOOTHING)
        })
        .collect();
    let local_reward = (0..n_agents)
        .map(|_| Matrix::from_fn(n_states, n_joint_actions, |_, _| rng.random::<f64>()))
        .collect();
    TabularMdp::new(transition, local_reward, discount)
}

/// Adds `eps` to every entry of each row and renormalizes.
pub fn smooth_rows(p: &Matrix, eps: f64) -> Matrix {
    normalize_rows(&p.map(|x| x + eps))
}

fn normalize_rows(p: &Matrix) -> Matrix {
    let mut out = p.clone();
    for mut row in out.row_iter_mut() {
        let total: f64 = row.sum();
        row /= total;
    }
    out
}

fn check_stochastic_rows(p: &Matrix) -> std::result::Result<(), String> {
    for (r, row) in p.row_iter().enumerate() {
        if row.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(format!("row {r} has negative or non-finite entries"));
        }
        let total: f64 = row.sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(format!("row {r} sums to {total}"));
        }
    }
    Ok(())
}

/// Stationary distribution of the chain induced by `policy`.
pub fn stationary_distribution(mdp: &TabularMdp, policy: &Policy) -> Result<Vector> {
    stationary_of_chain(&mdp.induced_transition(policy)?)
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
///
/// Reducible chains are rejected up front; a periodic chain shows up as a
/// power iteration that fails to settle.
pub fn stationary_of_chain(p: &Matrix) -> Result<Vector> {
    let n = p.nrows();
    if !p.is_square() || n == 0 {
        return Err(Error::Dimension(
            "transition matrix must be square and non-empty".into(),
        ));
    }
    if !is_irreducible(p) {
        return Err(Error::Numerical("induced chain is reducible".into()));
    }
    let period = chain_period(p);
    if period > 1 {
        return Err(Error::Numerical(format!(
            "induced chain is periodic with period {period}"
        )));
    }
    let pt = p.transpose();
    let mut mu = Vector::from_element(n, 1.0 / n as f64);
    for _ in 0..MAX_POWER_ITERS {
        let mut next = &pt * &mu;
        let total = next.sum();
        next /= total;
        let delta = (&next - &mu).lp_norm(1);
        mu = next;
        if delta < 1e-15 {
            let residual = (&pt * &mu - &mu).amax();
            if residual > 1e-10 {
                return Err(Error::Numerical(format!(
                    "stationary residual {residual:e}"
                )));
            }
            return Ok(mu);
        }
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge in {MAX_POWER_ITERS} steps (chain periodic?)"
    )))
}

/// Period of an irreducible chain: gcd of `level(u) + 1 - level(v)` over all
/// arcs, where `level` is the BFS depth from state 0.
fn chain_period(p: &Matrix) -> usize {
    let n = p.nrows();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if p[(u, v)] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    let mut g = 0;
    for u in 0..n {
        for v in 0..n {
            if p[(u, v)] > 0.0 {
                g = gcd(g, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    g
}

fn is_irreducible(p: &Matrix) -> bool {
    let n = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let w = if forward { p[(u, v)] } else { p[(v, u)] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    reach(true) && reach(false)
}

/// Simulates `M` transitions under `policy`, starting from a uniformly drawn
/// state, and splits each global reward into private portions.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    policy: &Policy,
    features: &FeatureMap,
    n_samples: usize,
    seed: u64,
) -> Result<SampleSet> {
    if n_samples == 0 {
        return Err(Error::Parameter("need at least one sample".into()));
    }
    mdp.check_policy(policy)?;
    if features.n_states() != mdp.n_states() {
        return Err(Error::Dimension(format!(
            "feature map covers {} states, MDP has {}",
            features.n_states(),
            mdp.n_states()
        )));
    }
    let action_dists = (0..mdp.n_states())
        .map(|s| WeightedIndex::new(policy.table().row(s).iter().cloned()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parameter(format!("policy row: {e}")))?;
    let next_dists = (0..mdp.n_joint_actions())
        .map(|a| {
            (0..mdp.n_states())
                .map(|s| WeightedIndex::new(mdp.transition(a).row(s).iter().cloned()))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parameter(format!("transition row: {e}")))?;

    let mut traj_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
    split_rng.set_stream(1);

    let n = mdp.n_agents();
    let mut states = Vec::with_capacity(n_samples + 1);
    let mut actions = Vec::with_capacity(n_samples);
    let mut global_rewards = Vec::with_capacity(n_samples);
    let mut local_rewards = Matrix::zeros(n_samples, n);

    let mut s = traj_rng.random_range(0..mdp.n_states());
    states.push(s);
    for p in 0..n_samples {
        let a = action_dists[s].sample(&mut traj_rng);
        let r = mdp.global_reward(s, a);
        for (i, ri) in split_reward_with(r, n, &mut split_rng)
            .into_iter()
            .enumerate()
        {
            local_rewards[(p, i)] = ri;
        }
        global_rewards.push(r);
        actions.push(a);
        s = next_dists[a][s].sample(&mut traj_rng);
        states.push(s);
    }
    let d = features.dim();
    let feature_rows = Matrix::from_fn(n_samples + 1, d, |p, k| features.table()[(states[p], k)]);
    Ok(SampleSet {
        states,
        actions,
        local_rewards,
        global_rewards,
        features: feature_rows,
    })
}

/// Splits `r_global` into `N` private rewards whose average is `r_global`.
///
/// Portions are normalized uniforms scaled by `N * r_global`; the last agent
/// absorbs the floating-point residue.
pub fn split_reward(r_global: f64, n_agents: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    split_reward_with(r_global, n_agents, &mut rng)
}

fn split_reward_with<R: Rng>(r_global: f64, n_agents: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n_agents)
        .map(|_| rng.random::<f64>() + f64::MIN_POSITIVE)
        .collect();
    let total: f64 = raw.iter().sum();
    let fractions: Vec<f64> = raw.iter().map(|u| u / total).collect();
    split_reward_by_fractions(r_global, &fractions)
}

/// Deterministic split with caller-chosen fractions (which should sum to one).
pub fn split_reward_by_fractions(r_global: f64, fractions: &[f64]) -> Vec<f64> {
    let n = fractions.len();
    let target = n as f64 * r_global;
    let mut out: Vec<f64> = fractions.iter().map(|f| target * f).collect();
    if let Some((last, head)) = out.split_last_mut() {
        *last = target - head.iter().sum::<f64>();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_rows_are_stochastic() {
        let mdp = generate_random_mdp(7, 2, 2, 2, 0.9).unwrap();
        for a in 0..2 {
            for row in mdp.transition(a).row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_random_mdp(7, 5, 3, 4, 0.9).unwrap();
        let b = generate_random_mdp(7, 5, 3, 4, 0.9).unwrap();
        assert_eq!(a, b);
        let c = generate_random_mdp(8, 5, 3, 4, 0.9).unwrap();
        assert_ne!(a.transition(0), c.transition(0));
    }

    #[test]
    fn generation_rejects_bad_parameters() {
        assert!(matches!(
            generate_random_mdp(1, 0, 1, 1, 0.9),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            generate_random_mdp(1, 2, 1, 1, 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            generate_random_mdp(1, 2, 1, 1, 0.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn smoothed_flip_chain_is_uniform() {
        // The smoothed flip matrix is symmetric and doubly stochastic, so
        // [1/2, 1/2] is its left fixed point.
        let flip = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p = smooth_rows(&flip, 1e-3);
        let mu = stationary_of_chain(&p).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-6 && (mu[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn uniform_chain_is_uniform() {
        let p = Matrix::from_element(2, 2, 0.5);
        let mu = stationary_of_chain(&p).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-15);
        assert!((mu.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unsmoothed_flip_chain_is_periodic() {
        let flip = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            stationary_of_chain(&flip),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let id = Matrix::identity(3, 3);
        assert!(matches!(stationary_of_chain(&id), Err(Error::Numerical(_))));
    }

    #[test]
    fn stationary_is_fixed_point() {
        let mdp = generate_random_mdp(3, 6, 2, 3, 0.9).unwrap();
        let pol = Policy::random(4, 6, 3);
        let mu = stationary_distribution(&mdp, &pol).unwrap();
        let p = mdp.induced_transition(&pol).unwrap();
        let res = (p.transpose() * &mu - &mu).amax();
        assert!(res < 1e-10);
        assert!((mu.sum() - 1.0).abs() < 1e-12);
        assert!(mu.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn split_single_agent() {
        assert_eq!(split_reward(1.0, 1, 3), vec![1.0]);
    }

    #[test]
    fn split_with_given_fractions() {
        assert_eq!(
            split_reward_by_fractions(1.0, &[0.25, 0.75]),
            vec![0.5, 1.5]
        );
    }

    #[test]
    fn split_zero_reward() {
        let r = split_reward(0.0, 5, 11);
        assert_eq!(r.iter().sum::<f64>() / 5.0, 0.0);
    }

    #[test]
    fn split_keeps_the_mean() {
        for seed in 0..50 {
            let r = split_reward(-0.37 + seed as f64 * 0.1, 7, seed);
            let mean = r.iter().sum::<f64>() / 7.0;
            assert!((mean - (-0.37 + seed as f64 * 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_lengths_and_reward_means() {
        let mdp = generate_random_mdp(1, 4, 3, 2, 0.9).unwrap();
        let pol = Policy::uniform(4, 2);
        let fm = FeatureMap::random(2, 4, 3);
        let set = sample_trajectory(&mdp, &pol, &fm, 5, 9).unwrap();
        set.validate().unwrap();
        assert_eq!(set.states.len(), 6);
        assert_eq!(set.actions.len(), 5);
        for p in 0..5 {
            let mean = set.local_rewards.row(p).sum() / 3.0;
            let rc = mdp.global_reward(set.states[p], set.actions[p]);
            assert!((mean - rc).abs() < 1e-12);
            assert_eq!(set.global_rewards[p], rc);
        }
        assert_eq!(set, sample_trajectory(&mdp, &pol, &fm, 5, 9).unwrap());
    }

    #[test]
    fn trajectory_rejects_zero_samples() {
        let mdp = generate_random_mdp(1, 4, 3, 2, 0.9).unwrap();
        let pol = Policy::uniform(4, 2);
        let fm = FeatureMap::random(2, 4, 3);
        assert!(sample_trajectory(&mdp, &pol, &fm, 0, 9).is_err());
    }

    #[test]
    fn visit_frequencies_match_the_stationary_distribution() {
        let mdp = generate_random_mdp(12, 8, 2, 3, 0.9).unwrap();
        let pol = Policy::random(13, 8, 3);
        let fm = FeatureMap::random(14, 8, 3);
        let mu = stationary_distribution(&mdp, &pol).unwrap();
        let set = sample_trajectory(&mdp, &pol, &fm, 100_000, 15).unwrap();
        let mut freq = [0.0; 8];
        for &st in &set.states[..100_000] {
            freq[st] += 1e-5;
        }
        let tv = 0.5
            * freq
                .iter()
                .zip(mu.iter())
                .map(|(f, m)| (f - m).abs())
                .sum::<f64>();
        assert!(tv < 0.02, "tv = {tv}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_mean_is_exact(r in -50.0f64..50.0, n in 1usize..40, seed in any::<u64>()) {
                let parts = split_reward(r, n, seed);
                prop_assert_eq!(parts.len(), n);
                let mean = parts.iter().sum::<f64>() / n as f64;
                prop_assert!((mean - r).abs() < 1e-12 * (1.0 + r.abs()));
            }

            #[test]
            fn split_is_deterministic(r in -5.0f64..5.0, n in 1usize..10, seed in any::<u64>()) {
                prop_assert_eq!(split_reward(r, n, seed), split_reward(r, n, seed));
            }
        }
    }
}
