//! Finite-difference check of the full PPO loss gradient on a micro network.

use macroplace::env::{EnvConfig, PlacementEnv};
use macroplace::synth::{synth_netlist, SynthConfig};
use macroplace::{Cell, ConstraintMode, GridNetlist, GridSpec};
use neural::ppo::{minibatch_grads, minibatch_loss, PpoConfig, Transition};
use neural::{Features, Model, NetConfig};

fn micro_batch(model: &Model, params: &nnkit::ParamStore, gn: &GridNetlist<'_>) -> Vec<Transition> {
    let mut env = PlacementEnv::reset(gn, &EnvConfig::default()).unwrap();
    let mut out = Vec::new();
    let mut k = 0;
    while !env.is_done() {
        let features = Features::from_masks(env.masks(), env.t());
        let pass = model.forward(params, &features).unwrap();
        let action = features
            .mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .nth(k)
            .unwrap_or(0);
        // old log-probs chosen so ratios land on both sides of the clip range
        let shift = [0.05, -0.1, 0.5, -0.4][k % 4];
        out.push(Transition {
            log_prob: pass.probs.data()[action].ln() + shift,
            value: pass.value,
            action,
            reward: 0.0,
            ret: [0.7, -0.3][k % 2],
            advantage: [1.3, -0.6, 0.4, -1.1][k % 4],
            features,
        });
        env.step(Cell::from_index(action, gn.spec.n)).unwrap();
        k += 1;
    }
    out
}

#[test]
fn ppo_loss_gradient_matches_finite_differences() {
    let nl = synth_netlist(&SynthConfig {
        macros: 2,
        ports: 1,
        nets: 3,
        canvas: (8.0, 8.0),
        utilization: 0.2,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let gn = GridNetlist::new(&nl, GridSpec::for_canvas(4, &nl.canvas, ConstraintMode::Hard).unwrap()).unwrap();
    for stop in [true, false] {
        let mut cfg = NetConfig::new(4, 2);
        cfg.encoder_channels = vec![2, 2];
        cfg.embed_dim = 6;
        cfg.fusion_channels = vec![3];
        cfg.pos_dim = 4;
        cfg.value_hidden = vec![5];
        cfg.stop_gradient = stop;
        let model = Model::new(cfg).unwrap();
        let params = model.init_params(7);
        let mut batch = micro_batch(&model, &params, &gn);
        assert_eq!(batch.len(), 2);
        // copies pushed outside the clip range, on both sides
        for (k, shift) in [(0, 0.5), (1, -0.4), (0, -0.45), (1, 0.6)] {
            let mut tr = batch[k].clone();
            tr.log_prob += shift;
            tr.advantage = -tr.advantage * (1.0 + k as f64);
            batch.push(tr);
        }
        let refs: Vec<&Transition> = batch.iter().collect();
        let ppo = PpoConfig::default();
        let (loss, _, grads) = minibatch_grads(&model, &params, &refs, &ppo).unwrap();
        let (loss2, _) = minibatch_loss(&model, &params, &refs, &ppo).unwrap();
        assert_eq!(loss.to_bits(), loss2.to_bits());

        // Under stop-gradient the encoder only sees the policy term, so its
        // reference is the loss without the value part.
        let policy_only = PpoConfig {
            value_coef: 0.0,
            ..PpoConfig::default()
        };
        let h = 1e-4;
        let mut worst = 0.0f64;
        let mut checked = 0;
        for name in params.names().map(str::to_string).collect::<Vec<_>>() {
            let reference = if stop && name.starts_with("policy.enc") {
                &policy_only
            } else {
                &ppo
            };
            for i in 0..params.get(&name).unwrap().len() {
                let mut p = params.clone();
                p.get_mut(&name).unwrap().data_mut()[i] += h;
                let up = minibatch_loss(&model, &p, &refs, reference).unwrap().0;
                p.get_mut(&name).unwrap().data_mut()[i] -= 2.0 * h;
                let down = minibatch_loss(&model, &p, &refs, reference).unwrap().0;
                let num = (up - down) / (2.0 * h);
                let ana = grads[&name].data()[i];
                worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-6));
                checked += 1;
            }
        }
        assert!(checked > 50);
        assert!(worst < 1e-4, "stop_gradient={stop}: worst relative error {worst}");
    }
}
