//! Seeded random netlists for tests and benchmarks.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::netlist::{Canvas, MacroSelection, Module, Net, Netlist, NetlistError, Pin, PinDirection};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub macros: usize,
    pub ports: usize,
    pub nets: usize,
    /// Largest net degree; at least 2.
    pub max_degree: usize,
    pub canvas: (f64, f64),
    /// Total macro area over canvas area.
    pub utilization: f64,
    /// Allow several pins of one net on the same macro.
    pub repeated_pins: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            macros: 10,
            ports: 4,
            nets: 20,
            max_degree: 4,
            canvas: (64.0, 64.0),
            utilization: 0.35,
            repeated_pins: false,
            seed: 0,
        }
    }
}

/// Snaps to a multiple of 1/4 so values survive a text round trip exactly.
fn quarter(v: f64) -> f64 {
    (v * 4.0).round() / 4.0
}

/// Builds a netlist with `macros` movable blocks, `ports` fixed zero-size
/// terminals on the boundary and `nets` random nets. Macros are selected.
pub fn synth_netlist(cfg: &SynthConfig) -> Result<Netlist, NetlistError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (cw, ch) = cfg.canvas;
    let mut modules = Vec::with_capacity(cfg.macros + cfg.ports);
    let base = (cfg.utilization * cw * ch / cfg.macros.max(1) as f64).sqrt();
    for i in 0..cfg.macros {
        let w = quarter(base * rng.gen_range(0.6..1.4)).clamp(0.25, cw);
        let h = quarter(base * rng.gen_range(0.6..1.4)).clamp(0.25, ch);
        modules.push(Module {
            id: i,
            name: format!("m{i}"),
            width: w,
            height: h,
            terminal: false,
            movable: true,
            fixed_position: None,
            pins: Vec::new(),
        });
    }
    for j in 0..cfg.ports {
        let t = quarter(rng.gen_range(0.0..1.0) * cw.min(ch));
        let pos = match j % 4 {
            0 => (t.min(cw), 0.0),
            1 => (cw, t.min(ch)),
            2 => (t.min(cw), ch),
            _ => (0.0, t.min(ch)),
        };
        modules.push(Module {
            id: cfg.macros + j,
            name: format!("p{j}"),
            width: 0.0,
            height: 0.0,
            terminal: true,
            movable: false,
            fixed_position: Some(pos),
            pins: Vec::new(),
        });
    }

    let total = modules.len();
    let mut pins = Vec::new();
    let mut nets = Vec::with_capacity(cfg.nets);
    for n in 0..cfg.nets {
        let hi = cfg
            .max_degree
            .max(2)
            .min(if cfg.repeated_pins { usize::MAX } else { total });
        let degree = rng.gen_range(2..=hi.max(2));
        let members: Vec<usize> = if cfg.repeated_pins {
            (0..degree).map(|_| rng.gen_range(0..total)).collect()
        } else {
            sample(&mut rng, total, degree.min(total)).into_vec()
        };
        for (k, m) in members.into_iter().enumerate() {
            let module = &modules[m];
            let offset = (
                module.width * rng.gen_range(0..=4) as f64 / 4.0,
                module.height * rng.gen_range(0..=4) as f64 / 4.0,
            );
            pins.push(Pin {
                id: pins.len(),
                module: m,
                offset,
                net: n,
                direction: if k == 0 {
                    PinDirection::Output
                } else {
                    PinDirection::Input
                },
            });
        }
        nets.push(Net {
            id: n,
            name: format!("n{n}"),
            pins: Vec::new(),
        });
    }
    Netlist::from_parts(modules, pins, nets, Canvas::new(cw, ch))?.with_macros(&MacroSelection::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_consistent() {
        let cfg = SynthConfig::default();
        let a = synth_netlist(&cfg).unwrap();
        let b = synth_netlist(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.macros.len(), 10);
        assert_eq!(a.num_terminals(), 4);
        assert_eq!(a.nets.len(), 20);
        let area: f64 = a.macros.iter().map(|&m| a.modules[m].area()).sum();
        let util = area / (64.0 * 64.0);
        assert!((0.15..0.6).contains(&util), "{util}");
    }

    #[test]
    fn distinct_modules_per_net_unless_repeated() {
        let nl = synth_netlist(&SynthConfig {
            nets: 50,
            ..SynthConfig::default()
        })
        .unwrap();
        for net in &nl.nets {
            let mut ms: Vec<usize> = net.pins.iter().map(|&p| nl.pins[p].module).collect();
            let len = ms.len();
            ms.sort_unstable();
            ms.dedup();
            assert_eq!(ms.len(), len);
        }
    }
}
