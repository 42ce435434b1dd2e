use macroplace::canvas::CellRect;
use macroplace::masks::{position_mask_oracle, wire_mask_oracle};
use macroplace::metrics::hpwl_full;
use macroplace::policies::{Policy, RandomValid};
use macroplace::synth::{synth_netlist, SynthConfig};
use macroplace::{ConstraintMode, EnvConfig, EpisodeRng, GridNetlist, GridSpec, PlacementEnv};
use proptest::prelude::*;
use rand::SeedableRng;

fn arb_instance() -> impl Strategy<Value = (SynthConfig, usize, ConstraintMode, u64)> {
    (
        1usize..12,
        0usize..4,
        1usize..12,
        prop_oneof![Just(8usize), Just(16), Just(32)],
        prop_oneof![Just(ConstraintMode::Hard), Just(ConstraintMode::Soft)],
        any::<u64>(),
        any::<u64>(),
    )
        .prop_map(|(macros, ports, nets, n, mode, seed, episode)| {
            let cfg = SynthConfig {
                macros,
                ports,
                nets,
                max_degree: 4,
                canvas: (32.0, 32.0),
                utilization: 0.3,
                repeated_pins: false,
                seed,
            };
            (cfg, n, mode, episode)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_episode_keeps_state_consistent((cfg, n, mode, episode) in arb_instance()) {
        let nl = synth_netlist(&cfg).unwrap();
        let gn = GridNetlist::new(&nl, GridSpec::new(n, 32.0, 32.0, mode).unwrap()).unwrap();
        let Ok(mut env) = PlacementEnv::reset(&gn, &EnvConfig::default()) else {
            return Ok(());
        };
        let hpwl0 = env.initial_hpwl();
        let mut rng = EpisodeRng::seed_from_u64(episode);
        let mut rewards = 0.0;
        let mut aborted = false;
        while let Some(m) = env.current_macro().filter(|_| !env.is_done()) {
            let masks = env.masks().clone();
            let fp = gn.footprint(m);
            prop_assert_eq!(&masks.position, &position_mask_oracle(env.grid().view_mask(), fp));
            prop_assert_eq!(masks.wire.to_grid(), wire_mask_oracle(env.tracker(), gn.grid_pins(m), n));
            let cell = RandomValid.decide(&env, &mut rng).unwrap().cell;
            prop_assert!(*masks.position.at(cell));
            let before = env.hpwl();
            let r = env.step(cell).unwrap();
            // the wire mask predicted this step's increase
            prop_assert_eq!(r.delta_hpwl, masks.wire.at(cell));
            prop_assert_eq!(r.hpwl - before, r.delta_hpwl);
            prop_assert_eq!(r.hpwl, hpwl_full(&gn, env.placement()));
            rewards += r.reward;
            if r.abort_penalty.is_some() {
                aborted = true;
            }
        }
        prop_assert!(env.is_done());
        prop_assert_eq!(aborted, env.aborted());
        if !aborted {
            prop_assert_eq!(env.placement().len(), nl.macros.len());
            prop_assert_eq!(rewards, -((env.hpwl() - hpwl0) as f64));
        }
        let rects: Vec<CellRect> =
            env.placement().iter().map(|(&m, &c)| CellRect::at(c, gn.footprint(m))).collect();
        for (i, a) in rects.iter().enumerate() {
            prop_assert!(a.x + a.w <= n && a.y + a.h <= n);
            for b in &rects[i + 1..] {
                prop_assert_eq!(a.intersection_area(b), 0);
            }
        }
    }
}
