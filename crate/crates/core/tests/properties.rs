use famo2o::analysis::{action_distance, imitation_weight};
use famo2o::base::iql::expectile_loss;
use famo2o::datastore::transition::Action;
use famo2o::datastore::ReplayBuffer;
use famo2o::envs::finite_mdp::random_finite_mdp;
use famo2o::envs::pointmass::PointMassSpec;
use famo2o::family::space::BalanceSpace;
use famo2o::family::updates::imitation_weights;
use famo2o::family::BalanceModel;
use famo2o::numkit::heads::softmax;
use famo2o::numkit::{AdamConfig, AdamState, GaussianHead, Mlp};
use famo2o::oracle::{advantages, kl, solve_pointwise, tilt};
use famo2o::rng::seeded;
use ndarray::Array2;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_full_support_distribution(logits in prop::collection::vec(-30.0f64..30.0, 1..8)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn squashed_samples_stay_inside_the_box(
        raw in prop::collection::vec(-10.0f64..10.0, 4),
        noise in prop::collection::vec(-4.0f64..4.0, 2),
    ) {
        let h = GaussianHead::new(vec![-0.1, 0.0], vec![0.1, 2.0]).unwrap();
        let s = h.sample(&raw, &noise).unwrap();
        prop_assert!(s.log_prob.is_finite());
        // tanh rounds to exactly ±1 far out, so the bounds themselves are reachable
        prop_assert!((-0.1..=0.1).contains(&s.action[0]));
        prop_assert!((0.0..=2.0).contains(&s.action[1]));
    }

    #[test]
    fn mlp_stays_finite_under_adam(seed in 0u64..1000, steps in 1usize..30) {
        let mut rng = seeded(seed);
        let mut net = Mlp::new(&[3, 5, 2], &mut rng).unwrap();
        let mut opt = AdamState::for_mlp(AdamConfig::with_lr(1e-2), &net);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 0.7);
        for k in 0..steps {
            let tape = net.forward_tape(x.clone()).unwrap();
            prop_assert_eq!(tape.output.ncols(), 2);
            let (g, _) = net.backward(&tape, tape.output.view()).unwrap();
            opt.step_mlp(&mut net, &g).unwrap();
            prop_assert_eq!(opt.step_count(), k as u64 + 1);
        }
        prop_assert!(net.all_finite());
        let shapes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        prop_assert_eq!(opt.moment_shapes(), shapes);
    }

    #[test]
    fn balance_model_output_lies_in_space(seed in 0u64..500, s in prop::collection::vec(-50.0f64..50.0, 3)) {
        let space = BalanceSpace::new(0.5, 7.0, 4).unwrap();
        let mut rng = seeded(seed);
        let b = BalanceModel::new(3, space, &[6], None, 1.0, &mut rng).unwrap();
        let obs = Array2::from_shape_vec((1, 3), s).unwrap();
        let modes = b.beta_mode(obs.view()).unwrap();
        prop_assert!(space.contains(modes[0]));
        for e in [-5.0, -1.0, 0.0, 2.0, 5.0] {
            prop_assert!(space.contains(b.beta_sample(obs.view(), &[e]).unwrap()[0]));
        }
    }

    #[test]
    fn pointmass_positions_and_rewards_are_bounded(
        x in -1.0f64..1.0, y in -1.0f64..1.0, ax in -5.0f64..5.0, ay in -5.0f64..5.0,
    ) {
        let st = PointMassSpec::default().step([x, y], [ax, ay]);
        prop_assert!(st.next.iter().all(|p| (-1.0..=1.0).contains(p)));
        prop_assert!(st.reward <= 0.0 && st.reward >= -2.0 * 2f64.sqrt());
    }

    #[test]
    fn buffer_evicts_oldest_first(capacity in 1usize..20, pushes in 0usize..60) {
        let mut buf = ReplayBuffer::new(capacity).unwrap();
        for i in 0..pushes {
            buf.push(i);
            prop_assert!(buf.len() <= capacity);
        }
        let kept: Vec<usize> = buf.iter().copied().collect();
        let expected: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
        prop_assert_eq!(kept, expected);
        if !buf.is_empty() {
            let batch = buf.sample_minibatch(7, &mut seeded(1)).unwrap();
            prop_assert_eq!(batch.len(), 7);
        }
    }

    #[test]
    fn imitation_weight_increases_with_advantage(beta in 0.01f64..5.0, a in -5.0f64..5.0, d in 0.01f64..3.0) {
        let lo = imitation_weight(beta, a, 0.0).unwrap().value;
        let hi = imitation_weight(beta, a + d, 0.0).unwrap().value;
        prop_assert!(hi > lo);
        prop_assert_eq!(imitation_weight(0.0, a, 0.0).unwrap().value, 1.0);
        let capped = imitation_weights(&[a, a + d], &[0.0, 0.0], &[beta, beta], 100.0);
        prop_assert!(capped.weights.iter().all(|&w| w > 0.0 && w <= 100.0));
    }

    #[test]
    fn action_distance_ignores_order(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..12), rot in 0usize..12) {
        let modes: Vec<Action> = pairs.iter().map(|p| Action::Discrete(p.0)).collect();
        let acts: Vec<Action> = pairs.iter().map(|p| Action::Discrete(p.1)).collect();
        let d = action_distance(&modes, &acts).unwrap();
        let k = rot % pairs.len();
        let (mut m2, mut a2) = (modes.clone(), acts.clone());
        m2.rotate_left(k);
        a2.rotate_left(k);
        prop_assert!((action_distance(&m2, &a2).unwrap() - d).abs() < 1e-12);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, pairs.iter().all(|p| p.0 == p.1));
    }

    #[test]
    fn tilt_kl_and_objective_grow_with_temperature(seed in 0u64..300, b in 0.0f64..20.0, db in 0.0f64..5.0) {
        let mut rng = seeded(seed);
        let mdp = random_finite_mdp(3, 4, 0.9, &mut rng).unwrap();
        let adv = advantages(&mdp, &mdp.behavior).unwrap();
        for s in 0..3 {
            let (pb, a) = (mdp.pi_b(s), adv.row(s));
            let (p1, _) = tilt(pb, a, b);
            let (p2, _) = tilt(pb, a, b + db);
            let j = |p: &[f64]| p.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            prop_assert!(kl(&p2, pb) >= kl(&p1, pb) - 1e-12);
            prop_assert!(j(&p2) >= j(&p1) - 1e-12);
        }
    }

    #[test]
    fn active_budgets_are_exhausted(seed in 0u64..300, eps in prop::collection::vec(0.001f64..0.3, 4)) {
        let mut rng = seeded(seed);
        let mdp = random_finite_mdp(4, 3, 0.9, &mut rng).unwrap();
        let adv = advantages(&mdp, &mdp.behavior).unwrap();
        let sol = solve_pointwise(&mdp, &adv, &eps).unwrap();
        for s in 0..4 {
            let greedy_kl = kl(&famo2o::oracle::greedy_limit(mdp.pi_b(s), adv.row(s)), mdp.pi_b(s));
            if greedy_kl > eps[s] {
                prop_assert!((sol.per_state_kl[s] - eps[s]).abs() < 1e-7);
            } else {
                prop_assert!(sol.per_state_kl[s] <= eps[s] + 1e-12);
            }
        }
    }

    #[test]
    fn expectile_minimiser_matches_golden_section(
        xs in prop::collection::vec(-5.0f64..5.0, 2..20),
        tau in 0.05f64..0.95,
    ) {
        let f = |v: f64| xs.iter().map(|x| expectile_loss(x - v, tau)).sum::<f64>();
        // Closed-form fixed point: v = Σ w_i x_i / Σ w_i with w_i = |τ - 1{x_i < v}|.
        let mut v = xs.iter().sum::<f64>() / xs.len() as f64;
        for _ in 0..200 {
            let (num, den) = xs.iter().fold((0.0, 0.0), |(n, d), &x| {
                let w = if x < v { 1.0 - tau } else { tau };
                (n + w * x, d + w)
            });
            v = num / den;
        }
        let (mut a, mut b) = (-5.0f64, 5.0f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) < f(d) { b = d } else { a = c }
        }
        prop_assert!((0.5 * (a + b) - v).abs() < 1e-6);
        // convexity along a chord
        let (p, q) = (-4.0, 4.0);
        prop_assert!(f(0.5 * (p + q)) <= 0.5 * (f(p) + f(q)) + 1e-12);
    }
}

#[test]
fn full_soft_update_copies_online() {
    let mut rng = seeded(4);
    let online = Mlp::new(&[2, 3, 1], &mut rng).unwrap();
    let mut target = Mlp::new(&[2, 3, 1], &mut rng).unwrap();
    target.soft_update_from(&online, 1.0);
    assert_eq!(target.param_slices(), online.param_slices());
}

#[test]
fn soft_updates_follow_the_exponential_trail() {
    let mut rng = seeded(5);
    let online = Mlp::new(&[2, 3, 1], &mut rng).unwrap();
    let mut target = Mlp::new(&[2, 3, 1], &mut rng).unwrap();
    let start: Vec<f64> = target.param_slices().concat();
    let rho = 5e-3;
    for _ in 0..10 {
        target.soft_update_from(&online, rho);
    }
    let keep = (1.0 - rho).powi(10);
    let on: Vec<f64> = online.param_slices().concat();
    for ((t, s), o) in target.param_slices().concat().iter().zip(&start).zip(&on) {
        assert!((t - (keep * s + (1.0 - keep) * o)).abs() < 1e-12);
    }
}
