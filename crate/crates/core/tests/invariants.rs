use proptest::prelude::*;
use splash::reward::{difference_sums, pbirl_from_returns, phi, sigmoid, softplus};
use splash::sim::{global_state_vector, observe, reset, step, FieldConfig, LowAction, Team};
use splash::traj::downsample_indices;

fn action(k: u8) -> LowAction {
    LowAction::ALL[k as usize % LowAction::COUNT]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn play_stays_on_the_field_and_normalized(seed in any::<u64>(), plan in prop::collection::vec(0u8..16, 50..400)) {
        let cfg = FieldConfig::default();
        let mut s = reset(&cfg, seed).unwrap();
        for chunk in plan.chunks(4) {
            let acts: Vec<_> = (0..4).map(|i| action(chunk.get(i).copied().unwrap_or(0))).collect();
            let before = (s.blue_captures, s.red_captures);
            s = step(&s, &acts).unwrap();
            prop_assert!(s.blue_captures >= before.0 && s.red_captures >= before.1);
            prop_assert!(s.blue_captures + s.red_captures <= before.0 + before.1 + 1);
            for a in &s.agents {
                prop_assert!((0.0..=cfg.width_m).contains(&a.position.x));
                prop_assert!((0.0..=cfg.height_m).contains(&a.position.y));
                prop_assert!(a.speed >= 0.0 && a.speed <= cfg.max_speed_mps + 1e-12);
                prop_assert!((-180.0..180.0).contains(&a.heading));
                prop_assert!(a.cooldown_remaining_s >= 0.0);
            }
            // A flag has at most one carrier, and that carrier knows it.
            for (team, carrier) in s.flag_taken_by.iter().enumerate() {
                if let Some(i) = carrier {
                    prop_assert!(s.agents[*i].has_flag);
                    prop_assert_ne!(s.agents[*i].team.index(), team);
                }
            }
            let carriers = s.agents.iter().filter(|a| a.has_flag).count();
            prop_assert_eq!(carriers, s.flag_taken_by.iter().flatten().count());
            for v in [global_state_vector(&s, Team::Blue), global_state_vector(&s, Team::Red)]
                .into_iter()
                .chain((0..4).map(|i| observe(&s, i)))
            {
                prop_assert!(v.iter().all(|x| x.is_finite() && (-1.0..=1.0).contains(x)));
            }
        }
    }

    #[test]
    fn perspectives_mirror_the_score(seed in any::<u64>(), plan in prop::collection::vec(0u8..4, 0..200)) {
        let cfg = FieldConfig::default();
        let mut s = reset(&cfg, seed).unwrap();
        for k in plan {
            s = step(&s, &[action(k), LowAction::ForwardMax, action(k + 1), LowAction::NoOp]).unwrap();
        }
        let b = global_state_vector(&s, Team::Blue);
        let r = global_state_vector(&s, Team::Red);
        let n = b.len();
        prop_assert_eq!(b[n - 1], -r[n - 1]);
        prop_assert_eq!(b[n - 3], r[n - 2]);
        prop_assert_eq!(b[n - 2], r[n - 3]);
    }

    #[test]
    fn downsampling_keeps_the_grid_and_the_end(len in 1usize..5000, rate in 1usize..100) {
        let idx = downsample_indices(len, rate);
        prop_assert_eq!(idx[0], 0);
        prop_assert_eq!(*idx.last().unwrap(), len - 1);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1] && w[1] - w[0] <= rate));
        prop_assert_eq!(idx.len(), (len - 1) / rate + 1 + usize::from((len - 1) % rate != 0));
    }

    #[test]
    fn preference_loss_is_a_proper_logistic_loss(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let l = pbirl_from_returns(a, b);
        prop_assert!(l > 0.0);
        // Probabilities of the two orderings sum to one.
        prop_assert!(((-l).exp() + (-pbirl_from_returns(b, a)).exp() - 1.0).abs() < 1e-12);
        prop_assert!((sigmoid(b - a) - (-l).exp()).abs() < 1e-12);
    }

    #[test]
    fn initial_final_term_signs(ri in -20.0f64..20.0, rf in -20.0f64..20.0) {
        prop_assert_eq!(phi(ri, rf, 0), 0.0);
        prop_assert!(phi(ri, rf, 1) > 0.0);
        prop_assert!(phi(ri, rf, -1) < 0.0);
        prop_assert!((phi(ri, rf, 1) + phi(ri, rf, -1)).abs() < 1e-12);
        prop_assert!((phi(ri, rf, 1) - softplus(ri - rf)).abs() < 1e-12);
    }

    #[test]
    fn difference_sums_ignore_constant_shifts(r in prop::collection::vec(-5.0f64..5.0, 0..60), c in -10.0f64..10.0) {
        let (d1, d2) = difference_sums(&r);
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        let (s1, s2) = difference_sums(&shifted);
        prop_assert!((d1 - s1).abs() < 1e-9 && (d2 - s2).abs() < 1e-9);
        prop_assert!(d1 >= 0.0 && d2 >= 0.0);
        // Second differences are bounded by twice the first.
        prop_assert!(d2 <= 2.0 * d1 + 1e-9);
    }
}
