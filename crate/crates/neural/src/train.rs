//! Episode collection, the training loop and the inference-time policy.

use std::fmt::Write as _;
use std::path::PathBuf;

use macroplace::canvas::{Cell, Grid};
use macroplace::env::{run_parallel, EnvConfig, EnvError, EpisodeRng, PlacementEnv};
use macroplace::policies::{Policy, PolicyDecision};
use macroplace::GridNetlist;
use nnkit::{write_checkpoint, ParamStore};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::net::{Features, Model, NetConfig};
use crate::ppo::{compute_returns, ppo_update, PpoConfig, Transition};
use crate::NeuralError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Pretrain on the first third of the place order.
    pub curriculum: bool,
    pub curriculum_epochs: usize,
    /// Multiply rewards by `1 / (2N)` before computing returns.
    pub scale_rewards: bool,
    /// Buffer capacity as a multiple of the macro count.
    pub buffer_factor: usize,
    pub ppo: PpoConfig,
    pub stop_gradient: bool,
    /// Written after every epoch when set.
    pub checkpoint: Option<PathBuf>,
    /// Learning curve CSV, rewritten after every epoch when set.
    pub curve: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            gamma: 0.95,
            seed: 0,
            curriculum: false,
            curriculum_epochs: 30,
            scale_rewards: true,
            buffer_factor: 10,
            ppo: PpoConfig::default(),
            stop_gradient: true,
            checkpoint: None,
            curve: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean final HPWL of the episodes collected this epoch.
    pub mean_hpwl: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub episodes: usize,
    pub macros: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub params: ParamStore,
    pub curve: Vec<EpochStats>,
}

pub fn curve_csv(curve: &[EpochStats]) -> String {
    let mut s = String::from("epoch,mean_hpwl,surrogate_loss,value_loss\n");
    for e in curve {
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.mean_hpwl, e.surrogate, e.value_loss);
    }
    s
}

/// Samples a cell index from `probs` with one uniform draw, walking cells in
/// index order.
pub fn sample_action(probs: &[f64], mask: &[bool], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, (&p, &m)) in probs.iter().zip(mask).enumerate() {
        if !m || p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    last.or_else(|| mask.iter().position(|&m| m)).unwrap_or(0)
}

struct Episode {
    transitions: Vec<Transition>,
    hpwl: i64,
}

fn collect_episode(
    gn: &GridNetlist<'_>,
    env_cfg: &EnvConfig,
    model: &Model,
    params: &ParamStore,
    reward_scale: f64,
    gamma: f64,
    seed: u64,
) -> Result<Episode, NeuralError> {
    let mut rng = EpisodeRng::seed_from_u64(seed);
    let mut env = PlacementEnv::reset(gn, env_cfg)?;
    let mut transitions = Vec::with_capacity(env.order().len());
    while !env.is_done() {
        let features = Features::from_masks(env.masks(), env.t());
        let pass = model.forward(params, &features)?;
        let action = sample_action(pass.probs.data(), &features.mask, &mut rng);
        let log_prob = pass.probs.data()[action].ln();
        let step = env.step(Cell::from_index(action, gn.spec.n))?;
        transitions.push(Transition {
            features,
            action,
            log_prob,
            value: pass.value,
            reward: step.reward * reward_scale,
            ret: 0.0,
            advantage: 0.0,
        });
    }
    compute_returns(&mut transitions, gamma);
    Ok(Episode {
        transitions,
        hpwl: env.hpwl(),
    })
}

/// Trains a fresh model on one netlist. Episodes of an epoch run in
/// parallel with their own seeds; the update is sequential.
pub fn train(gn: &GridNetlist<'_>, cfg: &TrainConfig) -> Result<TrainOutcome, NeuralError> {
    let v = gn.netlist.macros.len();
    let mut net = NetConfig::new(gn.spec.n, v);
    net.stop_gradient = cfg.stop_gradient;
    let model = Model::new(net)?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.init_params(master.next_u64());
    let mut update_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let reward_scale = if cfg.scale_rewards {
        1.0 / (2.0 * gn.spec.n as f64)
    } else {
        1.0
    };
    let capacity = (cfg.buffer_factor * v).max(1);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let limit = (cfg.curriculum && epoch < cfg.curriculum_epochs).then(|| v.div_ceil(3));
        let env_cfg = EnvConfig {
            macro_limit: limit,
            ..EnvConfig::default()
        };
        let len = limit.unwrap_or(v);
        let count = capacity.div_ceil(len);
        let seeds: Vec<u64> = (0..count).map(|_| master.next_u64()).collect();
        let episodes = run_parallel(&seeds, |s| {
            collect_episode(gn, &env_cfg, &model, &params, reward_scale, cfg.gamma, s)
        });
        let episodes = episodes.into_iter().collect::<Result<Vec<_>, _>>()?;
        let mean_hpwl = episodes.iter().map(|e| e.hpwl as f64).sum::<f64>() / episodes.len() as f64;
        let buffer: Vec<Transition> = episodes.into_iter().flat_map(|e| e.transitions).collect();
        let stats = ppo_update(&model, &mut params, &buffer, &cfg.ppo, &mut update_rng)?;
        curve.push(EpochStats {
            epoch,
            mean_hpwl,
            surrogate: stats.surrogate,
            value_loss: stats.value_loss,
            episodes: count,
            macros: len,
        });
        if let Some(path) = &cfg.checkpoint {
            write_checkpoint(&params, path)?;
        }
        if let Some(path) = &cfg.curve {
            std::fs::write(path, curve_csv(&curve))?;
        }
    }
    Ok(TrainOutcome { model, params, curve })
}

/// Inference wrapper: samples from the network's distribution, or takes
/// its mode (lowest index on ties) when `argmax` is set.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    pub model: Model,
    pub params: ParamStore,
    pub argmax: bool,
}

impl NeuralPolicy {
    /// A policy for `gn` with parameters loaded from a checkpoint file.
    pub fn from_checkpoint(gn: &GridNetlist<'_>, path: &std::path::Path) -> Result<Self, NeuralError> {
        let model = Model::new(NetConfig::new(gn.spec.n, gn.netlist.macros.len()))?;
        let mut params = model.init_params(0);
        nnkit::read_checkpoint(&mut params, path)?;
        Ok(NeuralPolicy {
            model,
            params,
            argmax: false,
        })
    }
}

impl Policy for NeuralPolicy {
    fn decide(&mut self, env: &PlacementEnv<'_>, rng: &mut EpisodeRng) -> Result<PolicyDecision, EnvError> {
        let features = Features::from_masks(env.masks(), env.t());
        let pass = self
            .model
            .forward(&self.params, &features)
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        let probs = pass.probs.data();
        let action = if self.argmax {
            let mut best = None;
            for (i, (&p, &m)) in probs.iter().zip(&features.mask).enumerate() {
                if m && best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((i, p));
                }
            }
            best.map(|(i, _)| i).unwrap_or(0)
        } else {
            sample_action(probs, &features.mask, rng)
        };
        let n = env.gridnet().spec.n;
        Ok(PolicyDecision {
            cell: Cell::from_index(action, n),
            probs: Some(Grid::from_vec(n, probs.to_vec())),
            log_prob: Some(probs[action].ln()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use macroplace::policies::run_episode;
    use macroplace::synth::{synth_netlist, SynthConfig};
    use macroplace::{ConstraintMode, GridSpec};

    #[test]
    fn sampling_follows_cumulative_mass() {
        let probs = [0.0, 0.25, 0.0, 0.75];
        let mask = [false, true, false, true];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut hits = [0usize; 4];
        for _ in 0..4000 {
            hits[sample_action(&probs, &mask, &mut rng)] += 1;
        }
        assert_eq!(hits[0] + hits[2], 0);
        assert!((hits[1] as f64 / 4000.0 - 0.25).abs() < 0.03);
    }

    fn tiny_cfg(dir: &std::path::Path) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            checkpoint: Some(dir.join("m.ckpt")),
            curve: Some(dir.join("curve.csv")),
            ppo: PpoConfig {
                epochs: 2,
                ..PpoConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_reproducible_and_writes_artifacts() {
        let nl = synth_netlist(&SynthConfig {
            macros: 4,
            nets: 6,
            canvas: (16.0, 16.0),
            ..SynthConfig::default()
        })
        .unwrap();
        let gn = GridNetlist::new(&nl, GridSpec::for_canvas(8, &nl.canvas, ConstraintMode::Hard).unwrap()).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = train(&gn, &tiny_cfg(a.path())).unwrap();
        let rb = train(&gn, &tiny_cfg(b.path())).unwrap();
        assert_eq!(ra.curve, rb.curve);
        let ca = std::fs::read(a.path().join("m.ckpt")).unwrap();
        assert_eq!(&ca[..4], b"MPKT");
        assert_eq!(ca, std::fs::read(b.path().join("m.ckpt")).unwrap());
        let csv = std::fs::read_to_string(a.path().join("curve.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("epoch,mean_hpwl,surrogate_loss,value_loss\n"));

        // checkpoint reload reproduces the trained network exactly
        let mut policy = NeuralPolicy::from_checkpoint(&gn, &a.path().join("m.ckpt")).unwrap();
        let env = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        let f = Features::from_masks(env.masks(), 0);
        let p1 = ra.model.forward(&ra.params, &f).unwrap();
        let p2 = policy.model.forward(&policy.params, &f).unwrap();
        assert!(p1
            .probs
            .data()
            .iter()
            .zip(p2.probs.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(p1.value.to_bits(), p2.value.to_bits());

        let out = run_episode(&gn, &EnvConfig::default(), &mut policy, None, 3).unwrap();
        assert!(!out.aborted);

        // trained weights still put no mass on infeasible cells
        let mut env = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        while !env.is_done() {
            let f = Features::from_masks(env.masks(), env.t());
            let p = ra.model.forward(&ra.params, &f).unwrap();
            for (q, &ok) in p.probs.data().iter().zip(&f.mask) {
                assert!(ok || *q == 0.0);
            }
            let m = env.current_macro().unwrap();
            env.step(out.placement[&m]).unwrap();
        }
    }

    #[test]
    fn curriculum_places_a_third_first() {
        let nl = synth_netlist(&SynthConfig {
            macros: 7,
            nets: 8,
            canvas: (16.0, 16.0),
            ..SynthConfig::default()
        })
        .unwrap();
        let gn = GridNetlist::new(&nl, GridSpec::for_canvas(8, &nl.canvas, ConstraintMode::Hard).unwrap()).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            curriculum: true,
            curriculum_epochs: 2,
            ppo: PpoConfig {
                epochs: 1,
                ..PpoConfig::default()
            },
            ..TrainConfig::default()
        };
        let r = train(&gn, &cfg).unwrap();
        let macros: Vec<usize> = r.curve.iter().map(|e| e.macros).collect();
        assert_eq!(macros, [3, 3, 7]);
    }
}
