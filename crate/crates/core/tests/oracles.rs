//! Independent reference implementations checked against the library.

use latent_bandit::agents::{ppo_surrogate_gradient, Agent, AgentConfig, Algorithm, Transition};
use latent_bandit::env::{EnvConfig, Environment};
use latent_bandit::eval::{optimal_value, random_value};
use latent_bandit::nn::{Activation, AdamConfig, AdamState, GradientSet, Layer, Mlp};
use latent_bandit::rng::derive_stream;

/// Plain forward pass written against the raw layer parameters.
fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in net.layers() {
        let w = layer.weights();
        let mut next = Vec::with_capacity(layer.out_dim());
        for o in 0..layer.out_dim() {
            let mut z = layer.bias()[o];
            for i in 0..layer.in_dim() {
                z += w[o * layer.in_dim() + i] * h[i];
            }
            next.push(match layer.activation() {
                Activation::Gaussian => (-z * z).exp(),
                Activation::Tanh => z.tanh(),
                Activation::Relu => z.max(0.0),
                Activation::Linear => z,
            });
        }
        h = next;
    }
    h
}

fn reference_reward(env: &Environment, s: &[f64], j: usize) -> f64 {
    let u: Vec<f64> = reference_forward(env.state_extractor(), s).iter().map(|v| v.tanh()).collect();
    let v: Vec<f64> = reference_forward(env.action_extractor(), env.actions().row(j))
        .iter()
        .map(|v| v.tanh())
        .collect();
    let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

#[test]
fn reward_matches_reference_forward_pass() {
    let mut rng = derive_stream(11, "oracle/reward");
    for seed in 0..6u64 {
        let mut cfg = EnvConfig::new(7, 5, 9, 4, vec![6, 6, 4], seed);
        cfg.gaussian_output = seed % 3 == 0;
        let env = Environment::build(cfg).unwrap();
        for _ in 0..50 {
            let s = env.sample_state(&mut rng);
            let rewards = env.reward_vector(&s).unwrap();
            for (j, r) in rewards.iter().enumerate() {
                assert!((r - reference_reward(&env, &s, j)).abs() < 1e-12);
            }
            let brute_mean = (0..env.n_actions()).map(|j| reference_reward(&env, &s, j)).sum::<f64>() / 9.0;
            assert!((random_value(&env, &s).unwrap() - brute_mean).abs() < 1e-12);
            let (best, idx) = optimal_value(&env, &s).unwrap();
            assert!((0..9).all(|j| reference_reward(&env, &s, j) <= best + 1e-12));
            assert_eq!(best, rewards[idx]);
            assert!(best >= random_value(&env, &s).unwrap());
        }
    }
}

#[test]
fn extractors_use_gaussian_hidden_layers() {
    let env = Environment::build(EnvConfig::new(3, 3, 2, 2, vec![4, 5, 2], 1)).unwrap();
    let acts: Vec<Activation> = env.state_extractor().layers().iter().map(Layer::activation).collect();
    assert_eq!(acts, vec![Activation::Gaussian, Activation::Gaussian, Activation::Linear]);
}

/// Scalar Adam, written out from its update equations.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, theta: f64, g: f64, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(self.t));
        let v_hat = self.v / (1.0 - b2.powi(self.t));
        theta - lr * m_hat / (v_hat.sqrt() + eps)
    }
}

#[test]
fn adam_matches_scalar_reference() {
    let layer = Layer::new(1, 1, vec![0.3], vec![-0.2], Activation::Linear).unwrap();
    let mut net = Mlp::from_layers(vec![layer]).unwrap();
    let mut adam = AdamState::new(&net, AdamConfig::with_learning_rate(0.01));
    let mut w = ScalarAdam { m: 0.0, v: 0.0, t: 0 };
    let mut b = ScalarAdam { m: 0.0, v: 0.0, t: 0 };
    let (mut tw, mut tb) = (0.3, -0.2);
    let mut rng = derive_stream(12, "oracle/adam");
    for _ in 0..200 {
        let (gw, gb) = (rng.normal(0.0, 2.0), rng.normal(0.5, 1.0));
        let mut grads = GradientSet::zeros_like(&net);
        grads.layers[0].weights[0] = gw;
        grads.layers[0].bias[0] = gb;
        adam.step(&mut net, &grads).unwrap();
        tw = w.step(tw, gw, 0.01);
        tb = b.step(tb, gb, 0.01);
        let l = &net.layers()[0];
        assert!((l.weights()[0] - tw).abs() < 1e-14);
        assert!((l.bias()[0] - tb).abs() < 1e-14);
    }
}

#[test]
fn dqn_recovers_tabular_rewards() {
    let mut cfg = AgentConfig::new(Algorithm::Dqn, vec![16], 1, 2, 5);
    cfg.dqn.learning_rate = 1e-3;
    cfg.dqn.total_timesteps = 8_000;
    let mut agent = Agent::new(cfg).unwrap();
    let mut rng = derive_stream(13, "oracle/dqn");
    for _ in 0..8_000 {
        let a = agent.act(&[1.0], &mut rng, true).unwrap();
        let reward = [0.2, 0.8][a];
        agent
            .observe(Transition {
                observation: vec![1.0],
                action: a,
                reward,
            })
            .unwrap();
        agent.update(&mut rng).unwrap();
    }
    let q = agent.action_scores(&[1.0]).unwrap().unwrap();
    assert!((q[0] - 0.2).abs() < 0.02, "{q:?}");
    assert!((q[1] - 0.8).abs() < 0.02, "{q:?}");
    assert_eq!(agent.act(&[1.0], &mut rng, false).unwrap(), 1);
}

#[test]
fn ppo_clip_is_inactive_at_unit_ratio() {
    let cfg = AgentConfig::new(Algorithm::Ppo, vec![8, 8], 3, 4, 6);
    let agent = Agent::new(cfg).unwrap();
    let actor = agent.networks().into_iter().find(|(n, _)| *n == "actor").unwrap().1.clone();
    let mut rng = derive_stream(14, "oracle/ppo");
    let transitions: Vec<Transition> = (0..32)
        .map(|_| Transition {
            observation: (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            action: rng.below(4),
            reward: rng.uniform_in(-1.0, 1.0),
        })
        .collect();
    let batch: Vec<&Transition> = transitions.iter().collect();
    let old: Vec<f64> = transitions
        .iter()
        .map(|t| {
            let logits = actor.predict(&t.observation).unwrap();
            latent_bandit::agents::log_softmax(&logits)[t.action]
        })
        .collect();
    let adv: Vec<f64> = (0..32).map(|_| rng.standard_normal()).collect();
    let clipped = ppo_surrogate_gradient(&actor, &batch, &old, &adv, Some(0.2), 0.0).unwrap();
    let plain = ppo_surrogate_gradient(&actor, &batch, &old, &adv, None, 0.0).unwrap();
    assert_eq!(clipped.gradient.flatten(), plain.gradient.flatten());
    assert_eq!(clipped.objective, plain.objective);
    let mean_adv = adv.iter().sum::<f64>() / 32.0;
    assert!((clipped.objective - mean_adv).abs() < 1e-12);
    assert!(clipped.traces.iter().all(|t| t.ratio == 1.0 && !t.clipped));

    let zero = ppo_surrogate_gradient(&actor, &batch, &old, &[0.0; 32], Some(0.2), 0.0).unwrap();
    assert!(zero.gradient.flatten().iter().all(|g| *g == 0.0));
}

#[test]
fn a2c_leaves_actor_unchanged_at_zero_advantage() {
    let cfg = AgentConfig::new(Algorithm::A2c, vec![8], 2, 3, 7);
    let mut agent = Agent::new(cfg).unwrap();
    // a critic that predicts the (constant) reward exactly
    let critic = agent.critic_mut().unwrap();
    let last = critic.layers_mut().last_mut().unwrap();
    last.weights_mut().iter_mut().for_each(|w| *w = 0.0);
    last.bias_mut()[0] = 0.25;
    let actor_before = agent.networks().into_iter().find(|(n, _)| *n == "actor").unwrap().1.clone();
    let mut rng = derive_stream(15, "oracle/a2c");
    for _ in 0..5 {
        let obs = vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
        let action = agent.act(&obs, &mut rng, true).unwrap();
        agent
            .observe(Transition {
                observation: obs,
                action,
                reward: 0.25,
            })
            .unwrap();
    }
    let stats = agent.update(&mut rng).unwrap();
    assert_eq!(stats.policy_loss, 0.0);
    let actor_after = agent.networks().into_iter().find(|(n, _)| *n == "actor").unwrap().1;
    assert_eq!(actor_after.layers(), actor_before.layers());
}

/// Upper 0.1% point of the chi-squared distribution.
fn chi2_critical(dof: usize) -> f64 {
    match dof {
        9 => 27.877,
        19 => 43.820,
        _ => unreachable!(),
    }
}

#[test]
fn rng_draws_pass_chi_squared() {
    let mut rng = derive_stream(16, "oracle/chi2");
    let n = 100_000;
    let mut counts = [0usize; 10];
    for _ in 0..n {
        counts[rng.below(10)] += 1;
    }
    let e = n as f64 / 10.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(stat < chi2_critical(9), "below(): chi2 = {stat}");

    let mut bins = [0usize; 20];
    for _ in 0..n {
        let u = rng.uniform();
        assert!((0.0..1.0).contains(&u));
        bins[(u * 20.0) as usize] += 1;
    }
    let e = n as f64 / 20.0;
    let stat: f64 = bins.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(stat < chi2_critical(19), "uniform(): chi2 = {stat}");

    let probs = [0.1, 0.2, 0.3, 0.4];
    let mut hits = [0usize; 4];
    for _ in 0..n {
        hits[rng.categorical(&probs)] += 1;
    }
    for (h, p) in hits.iter().zip(probs) {
        assert!((*h as f64 / n as f64 - p).abs() < 0.01);
    }
}
