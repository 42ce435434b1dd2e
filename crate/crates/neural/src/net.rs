//! Network definitions and the single-sample forward and backward passes.

use macroplace::env::MaskSet;
use macroplace::masks::normalized;
use nnkit::layers::{conv_out, masked_softmax};
use nnkit::seq::add;
use nnkit::{Grads, Op, ParamStore, Sequential, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::NeuralError;

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub n: usize,
    /// Entries in the step-embedding table, normally the macro count.
    pub steps: usize,
    /// Output channels of the stride-2 encoder convolutions.
    pub encoder_channels: Vec<usize>,
    pub embed_dim: usize,
    /// Hidden widths of the 1x1 local fusion convolutions.
    pub fusion_channels: Vec<usize>,
    pub fusion_kernel: usize,
    pub pos_dim: usize,
    pub value_hidden: Vec<usize>,
    /// Block value-loss gradients from reaching the global encoder.
    pub stop_gradient: bool,
}

impl NetConfig {
    pub fn new(n: usize, steps: usize) -> Self {
        NetConfig {
            n,
            steps,
            encoder_channels: vec![8, 16, 16, 16],
            embed_dim: 128,
            fusion_channels: vec![8, 8],
            fusion_kernel: 1,
            pos_dim: 64,
            value_hidden: vec![512, 64],
            stop_gradient: true,
        }
    }

    /// Number of stride-2 upsampling stages: the largest `L <= 4` with
    /// `n` divisible by `2^L`.
    pub fn decoder_stages(&self) -> usize {
        (0..=4).rev().find(|&l| self.n.is_multiple_of(1 << l)).unwrap_or(0)
    }
}

const LOCAL_IN: usize = 4;
const GLOBAL_IN: usize = 3;
const DECODER_CHANNELS: [usize; 5] = [8, 8, 4, 2, 1];

/// Network inputs for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    /// Position and wire masks of the current and next macro, `[4, N, N]`.
    pub local: Tensor,
    /// Wire masks of the current and next macro plus the view mask, `[3, N, N]`.
    pub global: Tensor,
    pub mask: Vec<bool>,
    pub t: usize,
}

impl Features {
    pub fn from_masks(masks: &MaskSet, t: usize) -> Self {
        let n = masks.position.n();
        let bools =
            |g: &macroplace::Grid<bool>| g.as_slice().iter().map(|&b| f64::from(u8::from(b))).collect::<Vec<_>>();
        let wire = normalized(&masks.wire).as_slice().to_vec();
        let next_wire = normalized(&masks.next_wire).as_slice().to_vec();
        let pos = bools(&masks.position);
        let next_pos = bools(&masks.next_position);
        let view = bools(&masks.view);
        let local = [pos, next_pos, wire.clone(), next_wire.clone()].concat();
        let global = [wire, next_wire, view].concat();
        Features {
            local: Tensor::from_vec(&[LOCAL_IN, n, n], local).expect("4 planes"),
            global: Tensor::from_vec(&[GLOBAL_IN, n, n], global).expect("3 planes"),
            mask: masks.position.as_slice().to_vec(),
            t,
        }
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Action distribution, `[N, N]`, zero on infeasible cells.
    pub probs: Tensor,
    pub value: f64,
    enc: Tape,
    dec: Tape,
    fusion: Tape,
    merge: Tape,
    value_tape: Tape,
}

/// Policy and value networks sharing one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    encoder: Sequential,
    decoder: Sequential,
    fusion: Sequential,
    merge: Sequential,
    value: Sequential,
    shapes: Vec<(String, Vec<usize>, usize)>,
}

const POS_TABLE: &str = "value.pos";

impl Model {
    pub fn new(config: NetConfig) -> Result<Self, NeuralError> {
        if config.n < 2 || config.steps == 0 {
            return Err(NeuralError::Config(format!(
                "grid {} with {} steps",
                config.n, config.steps
            )));
        }
        if config.fusion_kernel.is_multiple_of(2) {
            return Err(NeuralError::Config("fusion kernel must be odd".into()));
        }
        let mut shapes = Vec::new();
        let mut param = |name: String, wshape: Vec<usize>, bias: usize, fan_in: usize| {
            let (w, b) = (format!("{name}.w"), format!("{name}.b"));
            shapes.push((w.clone(), wshape, fan_in));
            shapes.push((b.clone(), vec![bias], fan_in));
            (w, b)
        };
        let conv = |(weight, bias): (String, String), stride: usize, pad: usize| Op::Conv {
            weight,
            bias,
            stride,
            pad,
        };
        let linear = |(weight, bias): (String, String)| Op::Linear { weight, bias };

        let n = config.n;
        let mut encoder = Sequential::new();
        let (mut c, mut side) = (GLOBAL_IN, n);
        for (i, &co) in config.encoder_channels.iter().enumerate() {
            encoder.push(conv(
                param(format!("policy.enc.conv{i}"), vec![co, c, 3, 3], co, c * 9),
                2,
                1,
            ));
            encoder.push(Op::Relu);
            c = co;
            side = conv_out(side, 3, 2, 1)?;
        }
        encoder.push(Op::Reshape(vec![c * side * side]));
        let flat = c * side * side;
        encoder.push(linear(param(
            "policy.enc.fc".into(),
            vec![config.embed_dim, flat],
            config.embed_dim,
            flat,
        )));

        let stages = config.decoder_stages();
        let base = n >> stages;
        let chans = &DECODER_CHANNELS[DECODER_CHANNELS.len() - stages - 1..];
        let mut decoder = Sequential::new();
        let width = chans[0] * base * base;
        decoder.push(linear(param(
            "policy.dec.fc".into(),
            vec![width, config.embed_dim],
            width,
            config.embed_dim,
        )));
        decoder.push(Op::Relu);
        decoder.push(Op::Reshape(vec![chans[0], base, base]));
        for (i, pair) in chans.windows(2).enumerate() {
            if i > 0 {
                decoder.push(Op::Relu);
            }
            let (weight, bias) = param(
                format!("policy.dec.deconv{i}"),
                vec![pair[0], pair[1], 3, 3],
                pair[1],
                pair[0] * 9,
            );
            decoder.push(Op::Deconv {
                weight,
                bias,
                stride: 2,
                pad: 1,
                out_pad: 1,
            });
        }

        let k = config.fusion_kernel;
        let mut fusion = Sequential::new();
        let mut ci = LOCAL_IN;
        let widths: Vec<usize> = config.fusion_channels.iter().copied().chain([1]).collect();
        for (i, &co) in widths.iter().enumerate() {
            if i > 0 {
                fusion.push(Op::Relu);
            }
            fusion.push(conv(
                param(format!("policy.fusion.conv{i}"), vec![co, ci, k, k], co, ci * k * k),
                1,
                k / 2,
            ));
            ci = co;
        }

        let mut merge = Sequential::new();
        merge.push(conv(param("policy.merge".into(), vec![1, 2, 1, 1], 1, 2), 1, 0));

        let mut value = Sequential::new();
        let mut vi = config.pos_dim + config.embed_dim;
        for (i, &h) in config.value_hidden.iter().enumerate() {
            value.push(linear(param(format!("value.fc{i}"), vec![h, vi], h, vi)));
            value.push(Op::Relu);
            vi = h;
        }
        value.push(linear(param("value.out".into(), vec![1, vi], 1, vi)));
        shapes.push((POS_TABLE.into(), vec![config.steps, config.pos_dim], 1));

        Ok(Model {
            config,
            encoder,
            decoder,
            fusion,
            merge,
            value,
            shapes,
        })
    }

    /// Fresh parameters, uniform in `±1/sqrt(fan_in)`.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, fan_in) in &self.shapes {
            let bound = 1.0 / (*fan_in as f64).sqrt();
            store.insert(name.clone(), Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound)));
        }
        store
    }

    pub fn forward(&self, params: &ParamStore, f: &Features) -> Result<ForwardPass, NeuralError> {
        let n = self.config.n;
        if f.t >= self.config.steps {
            return Err(NeuralError::StepOutOfRange {
                t: f.t,
                steps: self.config.steps,
            });
        }
        let (z, enc) = self.encoder.forward(params, f.global.clone())?;
        let (global_map, dec) = self.decoder.forward(params, z.clone())?;
        let (local_map, fusion) = self.fusion.forward(params, f.local.clone())?;
        let merge_in = Tensor::from_vec(&[2, n, n], [local_map.data(), global_map.data()].concat())?;
        let (logits, merge) = self.merge.forward(params, merge_in)?;
        let probs = masked_softmax(&logits.reshape(&[n, n])?, &f.mask)?;

        let d = self.config.pos_dim;
        let table = params.get(POS_TABLE)?;
        let row = &table.data()[f.t * d..(f.t + 1) * d];
        let vin = Tensor::from_vec(&[d + self.config.embed_dim], [row, z.data()].concat())?;
        let (v, value_tape) = self.value.forward(params, vin)?;
        Ok(ForwardPass {
            probs,
            value: v.data()[0],
            enc,
            dec,
            fusion,
            merge,
            value_tape,
        })
    }

    /// Adds parameter gradients for a loss with gradient `g_logp` with
    /// respect to `ln probs[action]` and `g_value` with respect to the value.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &ParamStore,
        f: &Features,
        pass: &ForwardPass,
        action: usize,
        g_logp: f64,
        g_value: f64,
        grads: &mut Grads,
    ) -> Result<(), NeuralError> {
        let n = self.config.n;
        let e = self.config.embed_dim;
        let d = self.config.pos_dim;
        // d ln p_a / d logits = onehot(a) - p
        let mut g_logits = Tensor::from_fn(&[1, n, n], |i| -g_logp * pass.probs.data()[i]);
        g_logits.data_mut()[action] += g_logp;
        let g_merge_in = self.merge.backward(params, &pass.merge, g_logits, grads)?;
        let (g_local, g_global) = g_merge_in.data().split_at(n * n);
        self.fusion.backward(
            params,
            &pass.fusion,
            Tensor::from_vec(&[1, n, n], g_local.to_vec())?,
            grads,
        )?;
        let mut g_z = self.decoder.backward(
            params,
            &pass.dec,
            Tensor::from_vec(&[1, n, n], g_global.to_vec())?,
            grads,
        )?;

        let g_vin = self
            .value
            .backward(params, &pass.value_tape, Tensor::from_vec(&[1], vec![g_value])?, grads)?;
        let mut g_table = Tensor::zeros(&[self.config.steps, d]);
        g_table.data_mut()[f.t * d..(f.t + 1) * d].copy_from_slice(&g_vin.data()[..d]);
        add(grads, POS_TABLE, g_table)?;
        if !self.config.stop_gradient {
            g_z.add_assign(&Tensor::from_vec(&[e], g_vin.data()[d..].to_vec())?)?;
        }
        self.encoder.backward(params, &pass.enc, g_z, grads)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use macroplace::canvas::Grid;
    use macroplace::masks::WireMask;

    fn masks(n: usize, feasible: &[usize]) -> MaskSet {
        let mut position = Grid::filled(n, false);
        for &i in feasible {
            position.as_mut_slice()[i] = true;
        }
        let wire = WireMask {
            x_cost: (0..n as i64).collect(),
            y_cost: (0..n as i64).rev().collect(),
        };
        MaskSet {
            position,
            next_position: Grid::filled(n, true),
            wire: wire.clone(),
            next_wire: wire,
            view: Grid::filled(n, false),
        }
    }

    #[test]
    fn decoder_stage_count() {
        assert_eq!(NetConfig::new(16, 1).decoder_stages(), 4);
        assert_eq!(NetConfig::new(224, 1).decoder_stages(), 4);
        assert_eq!(NetConfig::new(12, 1).decoder_stages(), 2);
        assert_eq!(NetConfig::new(7, 1).decoder_stages(), 0);
    }

    #[test]
    fn probabilities_are_valid_for_several_sizes() {
        for n in [4, 7, 8, 12, 16] {
            let model = Model::new(NetConfig::new(n, 3)).unwrap();
            let params = model.init_params(n as u64);
            let feasible: Vec<usize> = (0..n * n).filter(|i| i % 3 != 1).collect();
            let f = Features::from_masks(&masks(n, &feasible), 2);
            let pass = model.forward(&params, &f).unwrap();
            assert_eq!(pass.probs.shape(), [n, n]);
            let sum: f64 = pass.probs.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (i, &p) in pass.probs.data().iter().enumerate() {
                assert!(f.mask[i] || p == 0.0);
            }
            assert!(pass.value.is_finite());
        }
    }

    #[test]
    fn single_feasible_cell_gets_all_mass() {
        let model = Model::new(NetConfig::new(8, 2)).unwrap();
        for seed in 0..3 {
            let params = model.init_params(seed);
            let f = Features::from_masks(&masks(8, &[37]), 0);
            let pass = model.forward(&params, &f).unwrap();
            assert_eq!(pass.probs.data()[37], 1.0);
        }
    }

    #[test]
    fn merge_bias_shift_leaves_probs() {
        let model = Model::new(NetConfig::new(8, 2)).unwrap();
        let mut params = model.init_params(1);
        let f = Features::from_masks(&masks(8, &(0..40).collect::<Vec<_>>()), 1);
        let a = model.forward(&params, &f).unwrap().probs;
        params.get_mut("policy.merge.b").unwrap().data_mut()[0] += 3.0;
        let b = model.forward(&params, &f).unwrap().probs;
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn step_outside_table_is_an_error() {
        let model = Model::new(NetConfig::new(8, 2)).unwrap();
        let params = model.init_params(0);
        let f = Features::from_masks(&masks(8, &[0]), 2);
        assert!(matches!(
            model.forward(&params, &f),
            Err(NeuralError::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let model = Model::new(NetConfig::new(16, 4)).unwrap();
        let params = model.init_params(9);
        let f = Features::from_masks(&masks(16, &(0..200).collect::<Vec<_>>()), 3);
        let a = model.forward(&params, &f).unwrap();
        let b = model.forward(&params, &f).unwrap();
        assert!(a
            .probs
            .data()
            .iter()
            .zip(b.probs.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn value_gradient_stops_at_encoder() {
        let f = Features::from_masks(&masks(8, &(0..30).collect::<Vec<_>>()), 1);
        for stop in [true, false] {
            let mut cfg = NetConfig::new(8, 2);
            cfg.stop_gradient = stop;
            let model = Model::new(cfg).unwrap();
            let params = model.init_params(4);
            let pass = model.forward(&params, &f).unwrap();
            let mut grads = Grads::new();
            model.backward(&params, &f, &pass, 0, 0.0, 1.0, &mut grads).unwrap();
            let enc_norm: f64 = grads
                .iter()
                .filter(|(k, _)| k.starts_with("policy.enc"))
                .map(|(_, g)| g.sum_sq())
                .sum();
            let value_norm: f64 = grads
                .iter()
                .filter(|(k, _)| k.starts_with("value"))
                .map(|(_, g)| g.sum_sq())
                .sum();
            assert!(value_norm > 0.0);
            if stop {
                assert_eq!(enc_norm, 0.0);
            } else {
                assert!(enc_norm > 0.0);
            }
        }
    }
}
