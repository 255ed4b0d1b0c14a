use proptest::prelude::*;

use latent_bandit::agents::{Agent, AgentConfig, Algorithm, Transition};
use latent_bandit::cluster::{kmeans_fit, KMeansParams, Representation};
use latent_bandit::config::ExperimentConfig;
use latent_bandit::diagnostics::{pearson, DistanceNorm};
use latent_bandit::dump::{read_agent, read_environment, write_agent, write_environment};
use latent_bandit::env::{cosine_similarity, EnvConfig, Environment, MIN_FEATURE_NORM};
use latent_bandit::error::Error;
use latent_bandit::eval::normalized_from_rewards;
use latent_bandit::experiment::Mode;
use latent_bandit::matrix::{squared_distance, Matrix};
use latent_bandit::report::{parse_raw, write_raw, RawRow};
use latent_bandit::rng::derive_stream;

fn small_env() -> impl Strategy<Value = EnvConfig> {
    (
        1usize..8,
        1usize..8,
        1usize..10,
        1usize..6,
        prop::collection::vec(1usize..8, 0..3),
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(d_s, d_a, n, d_l, mut arch, seed, gaussian_output)| {
            arch.push(d_l);
            let mut cfg = EnvConfig::new(d_s, d_a, n, d_l, arch, seed);
            cfg.gaussian_output = gaussian_output;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rewards_are_bounded(cfg in small_env(), draw_seed in any::<u64>()) {
        let env = Environment::build(cfg).unwrap();
        let mut rng = derive_stream(draw_seed, "prop/states");
        for _ in 0..8 {
            let s = env.sample_state(&mut rng);
            match env.reward_vector(&s) {
                Ok(rewards) => {
                    for r in rewards {
                        prop_assert!((-1.0..=1.0).contains(&r));
                    }
                }
                // tiny latents (e.g. d_L = 1 with a gaussian output) must fail loudly, not NaN
                Err(Error::DegenerateFeature { norm }) => prop_assert!(norm < MIN_FEATURE_NORM),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }

    #[test]
    fn cosine_is_scale_invariant(
        x in prop::collection::vec(-1.0f64..1.0, 1..12),
        lambda in 1e-3f64..1e3,
    ) {
        let y: Vec<f64> = x.iter().rev().map(|v| v + 0.5).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * lambda).collect();
        if let (Ok(a), Ok(b)) = (cosine_similarity(&x, &y), cosine_similarity(&scaled, &y)) {
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn normalized_return_is_affine_invariant(
        rewards in prop::collection::vec(-1.0f64..1.0, 2..16),
        shift in -5.0f64..5.0,
        scale in 0.01f64..100.0,
        pick in any::<prop::sample::Index>(),
    ) {
        let j = pick.index(rewards.len());
        let base = normalized_from_rewards(&rewards, j);
        let moved: Vec<f64> = rewards.iter().map(|r| shift + scale * r).collect();
        let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        prop_assume!(max - mean > 1e-6);
        let base = base.unwrap();
        let moved = normalized_from_rewards(&moved, j).unwrap();
        prop_assert!(base <= 1.0 + 1e-12);
        prop_assert!((base - moved).abs() <= 1e-8 * (1.0 + base.abs()));
    }

    #[test]
    fn environment_dump_round_trips(cfg in small_env(), k in 1usize..4, one_hot in any::<bool>()) {
        let env = Environment::build(cfg).unwrap();
        let mut rng = derive_stream(1, "prop/dump");
        let mut points = Matrix::zeros(0, env.state_dim());
        for _ in 0..12 {
            points.push_row(&env.sample_state(&mut rng)).unwrap();
        }
        let model = kmeans_fit(&points, &KMeansParams::new(k), &mut rng).unwrap();
        let mode = if one_hot { Representation::OneHot } else { Representation::Centroid };
        let text = write_environment(&env, Some((&model, mode)));
        let bundle = read_environment(&text).unwrap();
        prop_assert_eq!(&bundle.env, &env);
        let (m, r) = bundle.clusters.as_ref().unwrap();
        prop_assert_eq!(m.centroids(), model.centroids());
        prop_assert_eq!(*r, mode);
        prop_assert_eq!(write_environment(&bundle.env, Some((m, *r))), text);
    }

    #[test]
    fn agent_checkpoint_round_trips(
        algo in prop::sample::select(vec![Algorithm::A2c, Algorithm::Dqn, Algorithm::Ppo, Algorithm::Uniform]),
        hidden in prop::collection::vec(1usize..6, 0..3),
        obs_dim in 1usize..5,
        n_actions in 1usize..5,
        seed in any::<u64>(),
        steps in 0usize..40,
    ) {
        let mut cfg = AgentConfig::new(algo, hidden, obs_dim, n_actions, seed);
        cfg.dqn.learning_starts = 8;
        cfg.dqn.batch_size = 4;
        cfg.ppo.n_steps = 8;
        cfg.ppo.batch_size = 4;
        let mut agent = Agent::new(cfg).unwrap();
        let mut rng = derive_stream(seed, "prop/agent");
        for _ in 0..steps {
            let obs: Vec<f64> = (0..obs_dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let action = agent.act(&obs, &mut rng, true).unwrap();
            agent.observe(Transition { observation: obs, action, reward: rng.uniform_in(-1.0, 1.0) }).unwrap();
            agent.update(&mut rng).unwrap();
        }
        let text = write_agent(&agent);
        let restored = read_agent(&text).unwrap();
        prop_assert_eq!(restored.config(), agent.config());
        prop_assert_eq!(restored.steps(), agent.steps());
        prop_assert_eq!(restored.updates(), agent.updates());
        for ((na, a), (nb, b)) in agent.networks().into_iter().zip(restored.networks()) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(a.layers(), b.layers());
        }
        prop_assert_eq!(write_agent(&restored), text);
    }

    #[test]
    fn config_text_round_trips(
        seed in any::<u64>(),
        budget in 1u64..1_000_000,
        cadence in 1u64..5_000,
        lr in 1e-6f64..1.0,
        width in 1usize..300,
        k in 1usize..50,
        algos in prop::sample::subsequence(vec![Algorithm::A2c, Algorithm::Dqn, Algorithm::Ppo, Algorithm::Uniform], 1..4),
        norm in prop::sample::select(vec![DistanceNorm::L1, DistanceNorm::L2, DistanceNorm::LInf]),
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.master_seed = seed;
        cfg.budget = budget;
        cfg.eval_cadence = cadence;
        cfg.a2c.learning_rate = lr;
        cfg.pi_architecture = vec![width, width / 2 + 1];
        cfg.clustering.k = k;
        cfg.algorithms = algos;
        cfg.diagnostics.norm = norm;
        let parsed = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(parsed.hash(), cfg.hash());
        prop_assert_eq!(parsed, cfg);
    }

    #[test]
    fn raw_csv_round_trips(values in prop::collection::vec((-3.0f64..1.0, 0usize..5, 1u64..100), 1..20)) {
        let rows: Vec<RawRow> = values
            .iter()
            .enumerate()
            .map(|(i, &(v, excl, step))| RawRow {
                repetition: i % 3,
                algorithm: Algorithm::Ppo,
                mode: if i % 2 == 0 { Mode::Full } else { Mode::Clustered },
                agent_seed: i,
                step,
                mean_r: v,
                min_r: v - 0.5,
                max_r: v.max(1.0),
                n_excluded: excl,
            })
            .collect();
        prop_assert_eq!(parse_raw(&write_raw(&rows)).unwrap(), rows);
    }

    #[test]
    fn kmeans_assigns_to_nearest_centroid(
        raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 3..40),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let points = Matrix::from_rows(&raw).unwrap();
        let mut rng = derive_stream(seed, "prop/kmeans");
        let model = match kmeans_fit(&points, &KMeansParams::new(k), &mut rng) {
            Ok(m) => m,
            Err(_) => return Ok(()), // fewer than k distinct points
        };
        let mut cost = 0.0;
        for p in points.iter_rows() {
            let c = model.assign(p).unwrap();
            let d = squared_distance(p, model.centroid(c));
            for other in model.centroids().iter_rows() {
                prop_assert!(d <= squared_distance(p, other));
            }
            cost += d;
        }
        prop_assert!((cost - model.inertia()).abs() <= 1e-9 * (1.0 + cost));
        prop_assert!(model.inertia_history().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn pearson_ignores_pair_order(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
        seed in any::<u64>(),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        derive_stream(seed, "prop/pearson").shuffle(&mut order);
        let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        match (pearson(&x, &y), pearson(&xs, &ys)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "inconsistent results {:?}", other),
        }
    }
}
