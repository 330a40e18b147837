use metaworld::learn::{
    pcgrad_project, pcgrad_surgery, train, Activation, Algorithm, Checkpoint, Mlp, SacConfig,
    TrainConfig,
};
use metaworld::vector::{Strategy as Backend, VectorEnv};
use metaworld::{EnvConfig, TaskId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest relative error between analytic and central-difference
/// gradients of `Σ output ⊙ weights`, over parameters and inputs.
fn gradient_error(net: &Mlp, input: &[f64], heads: &[usize], weights: &[f64]) -> f64 {
    let loss = |net: &Mlp, x: &[f64]| dot(net.forward(x, heads).unwrap().output(), weights);
    let tape = net.forward(input, heads).unwrap();
    let mut grad = vec![0.0; net.num_params()];
    let dx = net.backward(&tape, weights, &mut grad).unwrap();

    let h = 1e-6;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for k in 0..net.num_params() {
        let p = net.params()[k];
        probe.params_mut()[k] = p + h;
        let up = loss(&probe, input);
        probe.params_mut()[k] = p - h;
        let down = loss(&probe, input);
        probe.params_mut()[k] = p;
        worst = worst.max(rel(grad[k], (up - down) / (2.0 * h)));
    }
    let mut x = input.to_vec();
    for k in 0..x.len() {
        let v = x[k];
        x[k] = v + h;
        let up = loss(net, &x);
        x[k] = v - h;
        let down = loss(net, &x);
        x[k] = v;
        worst = worst.max(rel(dx[k], (up - down) / (2.0 * h)));
    }
    worst
}

#[test]
fn backprop_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..50 {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=6)];
        sizes.extend((0..depth).map(|_| rng.random_range(2..=7)));
        sizes.push(rng.random_range(1..=4));
        let heads = rng.random_range(1..=3);
        let hidden = if trial % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let output = if trial % 3 == 0 { Activation::Tanh } else { Activation::Identity };
        let mut net = Mlp::new(&sizes, heads, hidden, output, &mut rng).unwrap();
        // Nonzero biases keep dead ReLU layers off the kink at exactly zero.
        for p in net.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let rows = rng.random_range(1..=5);
        let input: Vec<f64> = (0..rows * sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let routing: Vec<usize> = (0..rows).map(|_| rng.random_range(0..heads)).collect();
        let out_len = rows * sizes[sizes.len() - 1];
        let weights: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = gradient_error(&net, &input, &routing, &weights);
        assert!(err < 1e-6, "trial {trial} sizes {sizes:?}: relative error {err:e}");
    }
}

#[test]
fn unselected_heads_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Mlp::new(&[6, 8, 8, 3], 4, Activation::Relu, Activation::Identity, &mut rng).unwrap();
    let input: Vec<f64> = (0..5 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tape = net.forward(&input, &[2; 5]).unwrap();
    let mut grad = vec![0.0; net.num_params()];
    net.backward(&tape, &[1.0; 15], &mut grad).unwrap();
    for h in [0, 1, 3] {
        assert!(grad[net.head_range(h)].iter().all(|&g| g == 0.0));
    }
    assert!(grad[net.head_range(2)].iter().any(|&g| g != 0.0));
}

#[test]
fn heads_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = Mlp::new(&[4, 8, 2], 2, Activation::Relu, Activation::Identity, &mut rng).unwrap();
    let x = [0.1, 0.2, -0.3, 0.4];
    let a = net.forward(&x, &[0]).unwrap().output().to_vec();
    let b = net.forward(&x, &[1]).unwrap().output().to_vec();
    assert_ne!(a, b);
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn surgered_pairs_do_not_conflict(
        (g1, g2) in (1usize..12).prop_flat_map(|d| (vector(d), vector(d))),
        seed in any::<u64>(),
    ) {
        let out = pcgrad_surgery(&[g1.clone(), g2.clone()], seed).unwrap();
        prop_assert!(dot(&out[0], &g2) >= -1e-12);
        prop_assert!(dot(&out[1], &g1) >= -1e-12);
    }

    #[test]
    fn agreeing_gradients_sum_exactly(
        grads in (1usize..8, 1usize..5).prop_flat_map(|(d, k)| {
            prop::collection::vec(prop::collection::vec(0.0f64..10.0, d), k)
        }),
        seed in any::<u64>(),
    ) {
        let mut plain = vec![0.0; grads[0].len()];
        for g in &grads {
            for (p, x) in plain.iter_mut().zip(g) {
                *p += x;
            }
        }
        prop_assert_eq!(pcgrad_project(&grads, seed).unwrap(), plain);
    }
}

fn tiny_run(seed: u64) -> (Vec<f64>, Vec<metaworld::learn::NamedTensor>) {
    let tasks = [TaskId::Reach, TaskId::DrawerClose];
    let env = EnvConfig {
        horizon: 50,
        variations_per_task: 2,
        ..EnvConfig::default()
    };
    let mut envs = VectorEnv::new(&tasks, env.clone(), Backend::Async).unwrap();
    let mut eval = VectorEnv::new(&tasks, env, Backend::Sync).unwrap();
    let config = TrainConfig {
        algorithm: Algorithm::Pcgrad,
        sac: SacConfig {
            hidden: vec![16, 16],
            ..SacConfig::default()
        },
        total_steps: 400,
        warmup_steps: 100,
        batch_per_task: 8,
        eval_interval: 200,
        seed,
        ..TrainConfig::default()
    };
    let out = train(&config, &mut envs, &mut eval, |_| Ok(())).unwrap();
    let losses = out.diagnostics.iter().map(|r| r.q_loss).collect();
    (losses, out.agent.learner.tensors())
}

#[test]
fn training_is_reproducible_from_seeds() {
    let a = tiny_run(3);
    assert_eq!(a, tiny_run(3));
    assert_ne!(a.1, tiny_run(4).1);
}

#[test]
fn checkpoints_round_trip_through_disk() {
    let tasks = [TaskId::Reach, TaskId::Push];
    let env = EnvConfig {
        horizon: 20,
        variations_per_task: 1,
        ..EnvConfig::default()
    };
    let mut envs = VectorEnv::new(&tasks, env.clone(), Backend::Sync).unwrap();
    let mut eval = VectorEnv::new(&tasks, env, Backend::Sync).unwrap();
    let config = TrainConfig {
        algorithm: Algorithm::Mtmhsac,
        sac: SacConfig {
            hidden: vec![8],
            ..SacConfig::default()
        },
        total_steps: 60,
        warmup_steps: 20,
        batch_per_task: 4,
        eval_interval: 60,
        ..TrainConfig::default()
    };
    let out = train(&config, &mut envs, &mut eval, |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.json");
    Checkpoint::from_agent(&out.agent, out.steps).save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap();
    assert_eq!(restored.steps, 60);
    let agent = restored.into_agent().unwrap();
    assert_eq!(agent.learner.tensors(), out.agent.learner.tensors());
    assert_eq!(agent.tasks, tasks);
}
