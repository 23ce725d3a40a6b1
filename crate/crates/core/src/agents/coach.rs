//! COACH: teacher feedback used as the advantage in a softmax policy-gradient
//! update with an eligibility trace.

use rand::Rng;

use super::linear::LinearWeights;
use super::{check_action, AgentError, Feedback, TileCoder};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_LAMBDA: f64 = 0.9;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CoachAgent {
    coder: TileCoder,
    theta: LinearWeights,
    trace: LinearWeights,
    lambda: f64,
    alpha: f64,
    temperature: f64,
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

impl CoachAgent {
    pub fn new(coder: TileCoder, actions: usize) -> Self {
        Self::with_params(
            coder,
            actions,
            DEFAULT_ALPHA,
            DEFAULT_LAMBDA,
            DEFAULT_TEMPERATURE,
        )
    }

    pub fn with_params(
        coder: TileCoder,
        actions: usize,
        alpha: f64,
        lambda: f64,
        temperature: f64,
    ) -> Self {
        let n = coder.feature_count();
        CoachAgent {
            coder,
            theta: LinearWeights::zeros(actions, n),
            trace: LinearWeights::zeros(actions, n),
            lambda,
            alpha,
            temperature,
        }
    }

    pub(crate) fn from_parts(
        coder: TileCoder,
        theta: LinearWeights,
        alpha: f64,
        lambda: f64,
        temperature: f64,
    ) -> Self {
        let trace = LinearWeights::zeros(theta.actions(), theta.features());
        CoachAgent {
            coder,
            theta,
            trace,
            lambda,
            alpha,
            temperature,
        }
    }

    pub fn coder(&self) -> &TileCoder {
        &self.coder
    }

    pub fn weights(&self) -> &LinearWeights {
        &self.theta
    }

    pub fn weights_mut(&mut self) -> &mut LinearWeights {
        &mut self.theta
    }

    pub fn trace(&self) -> &LinearWeights {
        &self.trace
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn policy(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        let active = self.coder.tile_features(obs)?;
        Ok(softmax(&self.theta.values(&active), self.temperature))
    }

    /// `d log pi(action | obs) / d theta`, dense, same shape as theta.
    pub fn log_policy_gradient(&self, obs: &[f64], action: usize) -> Result<LinearWeights, AgentError> {
        check_action(action, self.theta.actions())?;
        let active = self.coder.tile_features(obs)?;
        let pi = softmax(&self.theta.values(&active), self.temperature);
        let mut grad = LinearWeights::zeros(self.theta.actions(), self.theta.features());
        for (b, p) in pi.iter().enumerate() {
            let indicator = if b == action { 1.0 } else { 0.0 };
            grad.add(b, &active, (indicator - p) / self.temperature);
        }
        Ok(grad)
    }

    /// `e <- lambda * e + grad log pi(a|s)`, then `theta <- theta + alpha/numTilings * f * e`.
    pub fn update(&mut self, obs: &[f64], action: usize, f: Feedback) -> Result<(), AgentError> {
        let grad = self.log_policy_gradient(obs, action)?;
        self.trace.scale(self.lambda);
        for (e, g) in self.trace.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *e += g;
        }
        let step = self.alpha / self.coder.num_tilings() as f64 * f.value();
        for (t, e) in self.theta.as_mut_slice().iter_mut().zip(self.trace.as_slice()) {
            *t += step * e;
        }
        Ok(())
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<usize, AgentError> {
        let pi = self.policy(obs)?;
        Ok(sample(&pi, rng))
    }

    /// Clears the eligibility trace at an episode boundary.
    pub fn end_episode(&mut self) {
        self.trace.fill(0.0);
    }
}

fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvId;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const S: [f64; 2] = [-0.5, 0.01];

    fn agent(lambda: f64) -> CoachAgent {
        CoachAgent::with_params(TileCoder::for_env(EnvId::MountainCar), 3, 0.05, lambda, 1.0)
    }

    #[test]
    fn first_update_trace_and_policy() {
        let mut a = agent(0.9);
        let pi0 = a.policy(&S).unwrap();
        assert!(pi0.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        a.update(&S, 1, Feedback::Good).unwrap();
        let active = a.coder().tile_features(&S).unwrap();
        for &i in &active {
            assert!((a.trace().row(1)[i] - 2.0 / 3.0).abs() < 1e-15);
            assert!((a.trace().row(0)[i] + 1.0 / 3.0).abs() < 1e-15);
            assert!((a.trace().row(2)[i] + 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(a.policy(&S).unwrap()[1] > 1.0 / 3.0);
    }

    #[test]
    fn good_then_bad_without_trace() {
        // With lambda = 0 the trace is just the current gradient, so the
        // round trip leaves step * (g(theta0) - g(theta1)): zero up to the
        // policy change caused by the first step.
        let mut a = agent(0.0);
        let g0 = a.log_policy_gradient(&S, 2).unwrap();
        a.update(&S, 2, Feedback::Good).unwrap();
        let g1 = a.log_policy_gradient(&S, 2).unwrap();
        a.update(&S, 2, Feedback::Bad).unwrap();
        let step = 0.05 / 8.0;
        for ((t, x), y) in a.weights().as_slice().iter().zip(g0.as_slice()).zip(g1.as_slice()) {
            assert!((t - step * (x - y)).abs() < 1e-15);
            assert!(t.abs() < step * 0.02);
        }

        let mut b = agent(0.0);
        let g = b.log_policy_gradient(&S, 1).unwrap();
        b.update(&S, 1, Feedback::Good).unwrap();
        for (t, gi) in b.weights_mut().as_mut_slice().iter_mut().zip(g.as_slice()) {
            *t -= step * gi;
        }
        assert!(b.weights().as_slice().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn trace_recursion_unrolls() {
        let mut a = agent(0.9);
        let g1 = a.log_policy_gradient(&S, 0).unwrap();
        a.update(&S, 0, Feedback::Good).unwrap();
        let s2 = [-0.3, -0.02];
        let g2 = a.log_policy_gradient(&s2, 2).unwrap();
        a.update(&s2, 2, Feedback::Bad).unwrap();
        for ((e, x), y) in a.trace().as_slice().iter().zip(g1.as_slice()).zip(g2.as_slice()) {
            assert!((e - (0.9 * x + y)).abs() < 1e-15);
        }
    }

    #[test]
    fn episode_end_zeroes_trace() {
        let mut a = agent(0.9);
        a.update(&S, 0, Feedback::Good).unwrap();
        a.end_episode();
        assert!(a.trace().as_slice().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn uniform_sampling_chi_square() {
        let a = agent(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[a.act(&S, &mut rng).unwrap()] += 1;
        }
        let expected = n as f64 / 3.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square critical value, 2 dof, p = 0.01
        assert!(chi2 < 9.210, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn dominant_logit_is_chosen() {
        let mut a = agent(0.9);
        let active = a.coder().tile_features(&S).unwrap();
        a.weights_mut().add(0, &active, 10.0 / active.len() as f64);
        let pi = a.policy(&S).unwrap();
        // e^10 / (e^10 + 2)
        assert!((pi[0] - 10f64.exp() / (10f64.exp() + 2.0)).abs() < 1e-12);
        assert!(pi[0] > 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zeros = (0..10_000).filter(|_| a.act(&S, &mut rng).unwrap() == 0).count();
        assert!(zeros > 9_900);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = agent(0.9);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64).map(|_| a.act(&S, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    fn random_agent(seed: u64) -> CoachAgent {
        let mut a = CoachAgent::with_params(TileCoder::for_env(EnvId::MountainCar), 3, 0.05, 0.9, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in a.weights_mut().as_mut_slice() {
            *w = rng.random_range(-2.0..2.0);
        }
        a
    }

    proptest! {
        #[test]
        fn policy_sums_to_one(seed in any::<u64>(), x in -1.2f64..0.6, v in -0.07f64..0.07) {
            let a = random_agent(seed);
            let s: f64 = a.policy(&[x, v]).unwrap().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn gradient_matches_central_differences(
            seed in any::<u64>(), x in -1.2f64..0.6, v in -0.07f64..0.07, action in 0usize..3,
        ) {
            let mut a = random_agent(seed);
            let obs = [x, v];
            let grad = a.log_policy_gradient(&obs, action).unwrap();
            let active = a.coder().tile_features(&obs).unwrap();
            let h = 1e-6;
            for b in 0..3 {
                for &i in &active {
                    let idx = b * a.weights().features() + i;
                    let orig = a.weights().as_slice()[idx];
                    a.weights_mut().as_mut_slice()[idx] = orig + h;
                    let up = a.policy(&obs).unwrap()[action].ln();
                    a.weights_mut().as_mut_slice()[idx] = orig - h;
                    let down = a.policy(&obs).unwrap()[action].ln();
                    a.weights_mut().as_mut_slice()[idx] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = grad.as_slice()[idx];
                    let scale = an.abs().max(fd.abs()).max(1e-3);
                    prop_assert!((an - fd).abs() / scale < 1e-5, "analytic {} fd {}", an, fd);
                }
            }
        }
    }
}
