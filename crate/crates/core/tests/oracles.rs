//! Independent oracles and invariants checked through the public API.

use std::sync::Arc;

use actembed::dst::{generate_corpus, train_dst, CachedEncoder, CorpusOptions, DstConfig, DstModel};
use actembed::env::sample_goal;
use actembed::nn::linalg::{dot, norm};
use actembed::nn::{cross_entropy, kl_divergence, softmax, Activation, Dense, Lstm, LstmState};
use actembed::policy::{MultiDomainPolicy, PolicyConfig};
use actembed::trpo::{collect_rollouts, compute_advantages, conjugate_gradient, Task};
use actembed::{DialogEnv, DomainSpec, RewardConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let eps = 1e-5;
    let mut p = x.to_vec();
    p[i] += eps;
    let up = f(&p);
    p[i] -= 2.0 * eps;
    (up - f(&p)) / (2.0 * eps)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn dense_softmax_cross_entropy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = Dense::new(4, 5, Activation::Identity);
    let params = uniform(&mut rng, layer.param_count());
    let x = uniform(&mut rng, 4);
    let loss = |p: &[f64]| cross_entropy(&layer.forward(p, &x), 2).0;
    let y = layer.forward(&params, &x);
    let (_, dz) = cross_entropy(&y, 2);
    let mut g = vec![0.0; params.len()];
    layer.backward(&params, &x, &y, &dz, &mut g, None);
    for i in 0..params.len() {
        let fd = central_difference(loss, &params, i);
        assert!(rel(fd, g[i]) <= 1e-5, "{i}: {fd} vs {}", g[i]);
    }
}

#[test]
fn two_step_lstm_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cell = Lstm::new(2, 3);
    let params = uniform(&mut rng, cell.param_count());
    let xs = [uniform(&mut rng, 2), uniform(&mut rng, 2)];
    let w = uniform(&mut rng, 3);
    let loss = |p: &[f64]| {
        let s = cell.step(p, &xs[1], &cell.step(p, &xs[0], &LstmState::zeros(3)));
        dot(&w, &s.h)
    };
    let t0 = cell.step_traced(&params, &xs[0], &LstmState::zeros(3));
    let t1 = cell.step_traced(&params, &xs[1], &t0.state);
    let mut g = vec![0.0; params.len()];
    let (dh, dc) = cell.backward(&params, &t1, &w, &[0.0; 3], &mut g, None);
    cell.backward(&params, &t0, &dh, &dc, &mut g, None);
    for i in 0..params.len() {
        let fd = central_difference(loss, &params, i);
        assert!(rel(fd, g[i]) <= 1e-5, "{i}: {fd} vs {}", g[i]);
    }
}

#[test]
fn untrained_tracker_is_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rest = DomainSpec::rest();
    let model = DstModel::new(std::slice::from_ref(&rest), DstConfig::desk(), &mut rng).unwrap();
    let dialogs = generate_corpus(&rest, 1000, 0.0, &CorpusOptions::default(), &mut rng).unwrap();
    let mut hits = [0usize; 2];
    for d in &dialogs {
        let enc = model.encode_dialog(d).unwrap();
        let obs = model.observations(&enc.turns);
        let belief = model.predict_slots(obs.last().unwrap(), 0).unwrap();
        for (s, h) in hits.iter_mut().enumerate() {
            *h += usize::from(belief.slots[s].value == d.labels[s]);
        }
    }
    for (s, h) in hits.iter().enumerate() {
        let acc = *h as f64 / dialogs.len() as f64;
        let chance = 1.0 / rest.user_slots[s].cardinality as f64;
        assert!((acc - chance).abs() <= 0.05, "slot {s}: {acc} vs {chance}");
    }
}

#[test]
fn observations_depend_on_word_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rest = DomainSpec::rest();
    let corpus = generate_corpus(&rest, 60, 0.0, &CorpusOptions::default(), &mut rng).unwrap();
    let config = DstConfig {
        epochs: 3,
        ..DstConfig::desk()
    };
    let (model, _) = train_dst(&[(rest.clone(), corpus.clone())], &config, &mut rng).unwrap();
    let (mut tried, mut changed) = (0, 0);
    for turn in corpus.iter().flat_map(|d| d.turns.iter()) {
        let mut permuted = turn.clone();
        permuted.reverse();
        if &permuted == turn {
            continue;
        }
        let h = model.initial_hidden();
        let (a, _) = model.encode_turn(turn, &h);
        let (b, _) = model.encode_turn(&permuted, &h);
        tried += 1;
        changed += usize::from(a != b);
        if tried == 100 {
            break;
        }
    }
    assert_eq!(tried, 100);
    assert!(changed >= 90, "{changed}/100");
}

#[test]
fn constant_prediction_matches_the_analytic_chance_rate() {
    let rest = DomainSpec::rest();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 20_000;
    let hits = (0..n).filter(|_| sample_goal(&rest, &mut rng).user_slot_values == [0, 0]).count();
    let rate = hits as f64 / n as f64;
    assert!((rate - 1.0 / 143.0).abs() <= 0.01, "{rate}");
}

#[test]
fn fresh_policy_sometimes_succeeds_on_weather() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let weather = DomainSpec::weather();
    let model = DstModel::new(std::slice::from_ref(&weather), DstConfig::desk(), &mut rng).unwrap();
    let encoder = CachedEncoder::new(Arc::new(model));
    let policy = MultiDomainPolicy::new(
        std::slice::from_ref(&weather),
        encoder.model().observation_width(),
        PolicyConfig::desk(),
        &mut rng,
    )
    .unwrap();
    let env = DialogEnv::new(weather, RewardConfig::default(), 0.0);
    let task = Task::new(&env, &encoder, &policy).unwrap();
    let trajs = collect_rollouts(&policy, &task, 500, 6, "fresh", 0).unwrap();
    let mean = trajs.iter().map(|t| t.episode_return).sum::<f64>() / trajs.len() as f64;
    assert!(mean > -15.0, "{mean}");
    assert!(trajs.iter().any(|t| t.success));
}

#[test]
fn desk_corpus_dialog_lengths_are_moderate() {
    for domain in DomainSpec::all_builtin() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let corpus = generate_corpus(&domain, 300, 0.2, &CorpusOptions::default(), &mut rng).unwrap();
        let mean = corpus.iter().map(|d| d.turns.len()).sum::<usize>() as f64 / corpus.len() as f64;
        assert!((6.0..=14.0).contains(&mean), "{}: {mean}", domain.name);
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_the_diagonal(
        a in prop::collection::vec(-5.0f64..5.0, 2..8),
        shift in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let p = softmax(&a);
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let q = softmax(&b);
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-15);
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn conjugate_gradient_solves_diagonal_systems(
        d in prop::collection::vec(0.1f64..10.0, 1..20),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = uniform(&mut rng, d.len());
        let r = conjugate_gradient(
            |v| Ok(v.iter().zip(&d).map(|(x, di)| x * di).collect()),
            &b,
            // n iterations only suffice in exact arithmetic.
            4 * d.len(),
            1e-14,
        ).unwrap();
        let res: Vec<f64> = r.x.iter().zip(&d).zip(&b).map(|((x, di), bi)| x * di - bi).collect();
        prop_assert!(norm(&res) <= 1e-8 * norm(&b).max(1.0));
    }

    #[test]
    fn normalized_advantages_have_zero_mean_and_unit_spread(
        rewards in prop::collection::vec(prop::collection::vec(-1.0f64..30.0, 1..8), 2..6),
    ) {
        let trajs: Vec<actembed::Trajectory> = rewards
            .iter()
            .map(|r| actembed::Trajectory {
                domain: 0,
                observations: vec![vec![0.0]; r.len()],
                actions: vec![0; r.len()],
                old_log_probs: vec![0.0; r.len()],
                old_probs: vec![vec![1.0]; r.len()],
                episode_return: r.iter().sum(),
                success: false,
                rewards: r.clone(),
            })
            .collect();
        let adv = compute_advantages(&trajs, |_| 0.0, 0.99, 0.97, true).unwrap();
        let flat: Vec<f64> = adv.advantages.iter().flatten().copied().collect();
        let n = flat.len() as f64;
        let mean = flat.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        let var = flat.iter().map(|a| a * a).sum::<f64>() / n;
        prop_assert!(var < 1.0 + 1e-9);
    }
}
