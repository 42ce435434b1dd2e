//! Action-selection strategies over a [`PlacementEnv`], an episode runner and
//! a simulated-annealing baseline.

use rand::Rng;
use rand::SeedableRng;

use crate::canvas::{Cell, Grid};
use crate::env::{
    congestion_filtered_action, EnvConfig, EnvError, EpisodeRng, PlacementEnv, StepRecord, DEFAULT_CONGESTION_SAMPLES,
};
use crate::gridnet::{GridNetlist, Placement};
use crate::metrics::NetBox;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub cell: Cell,
    /// Full action distribution, for policies that have one.
    pub probs: Option<Grid<f64>>,
    pub log_prob: Option<f64>,
}

pub trait Policy {
    fn decide(&mut self, env: &PlacementEnv<'_>, rng: &mut EpisodeRng) -> Result<PolicyDecision, EnvError>;
}

/// Uniform choice among feasible cells.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomValid;

impl Policy for RandomValid {
    fn decide(&mut self, env: &PlacementEnv<'_>, rng: &mut EpisodeRng) -> Result<PolicyDecision, EnvError> {
        let mask = &env.masks().position;
        let k = mask.count_ones();
        if k == 0 {
            return Err(stuck(env));
        }
        let pick = rng.gen_range(0..k);
        let cell = mask.ones().nth(pick).expect("pick < count");
        Ok(PolicyDecision {
            cell,
            probs: None,
            log_prob: Some(-(k as f64).ln()),
        })
    }
}

/// Feasible cell with the smallest wire-mask value, lowest index on ties.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyWireMask;

impl Policy for GreedyWireMask {
    fn decide(&mut self, env: &PlacementEnv<'_>, _rng: &mut EpisodeRng) -> Result<PolicyDecision, EnvError> {
        let masks = env.masks();
        let mut best: Option<(i64, Cell)> = None;
        for c in masks.position.ones() {
            let v = masks.wire.at(c);
            if best.is_none_or(|(b, _)| v < b) {
                best = Some((v, c));
            }
        }
        let (_, cell) = best.ok_or_else(|| stuck(env))?;
        Ok(PolicyDecision {
            cell,
            probs: None,
            log_prob: Some(0.0),
        })
    }
}

fn stuck(env: &PlacementEnv<'_>) -> EnvError {
    let name = env
        .current_macro()
        .map(|m| env.gridnet().netlist.modules[m].name.clone())
        .unwrap_or_default();
    EnvError::Stuck { name, step: env.t() }
}

/// Test-time congestion handling for [`run_episode`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CongestionFilter {
    pub threshold: f64,
    pub samples: usize,
}

impl Default for CongestionFilter {
    fn default() -> Self {
        CongestionFilter {
            threshold: f64::INFINITY,
            samples: DEFAULT_CONGESTION_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub placement: Placement,
    pub hpwl: i64,
    pub initial_hpwl: i64,
    pub total_reward: f64,
    pub aborted: bool,
    /// Steps where the filter could not meet the threshold.
    pub unsatisfied_steps: usize,
    pub trace: Vec<StepRecord>,
}

/// Plays one episode with `policy`, passing every proposal through the
/// congestion filter when one is given.
pub fn run_episode(
    gn: &GridNetlist<'_>,
    config: &EnvConfig,
    policy: &mut dyn Policy,
    filter: Option<CongestionFilter>,
    seed: u64,
) -> Result<EpisodeOutcome, EnvError> {
    let mut rng = EpisodeRng::seed_from_u64(seed);
    let mut env = PlacementEnv::reset(gn, config)?;
    let mut total_reward = 0.0;
    let mut unsatisfied_steps = 0;
    while !env.is_done() {
        let proposal = policy.decide(&env, &mut rng)?;
        let action = match filter {
            Some(f) => {
                let out = congestion_filtered_action(&env, proposal.cell, f.threshold, f.samples, &mut rng)?;
                if !out.satisfied {
                    unsatisfied_steps += 1;
                }
                out.action
            }
            None => proposal.cell,
        };
        total_reward += env.step(action)?.reward;
    }
    Ok(EpisodeOutcome {
        placement: env.placement().clone(),
        hpwl: env.hpwl(),
        initial_hpwl: env.initial_hpwl(),
        total_reward,
        aborted: env.aborted(),
        unsatisfied_steps,
        trace: env.trace().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealConfig {
    pub iterations: usize,
    /// Starting temperature; `None` uses a tenth of the initial HPWL.
    pub initial_temperature: Option<f64>,
    /// Multiplicative cooling per iteration.
    pub cooling: f64,
    pub relocate: bool,
    pub swap: bool,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            iterations: 20_000,
            initial_temperature: None,
            cooling: 0.999,
            relocate: true,
            swap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealResult {
    /// Best placement seen.
    pub placement: Placement,
    pub hpwl: i64,
    pub initial_hpwl: i64,
    /// Current HPWL after every iteration.
    pub trace: Vec<i64>,
}

const FREE: u32 = u32::MAX;
const BLOCKED: u32 = u32::MAX - 1;
const RELOCATE_ATTEMPTS: usize = 32;

struct AnnealState<'g, 'n> {
    gn: &'g GridNetlist<'n>,
    owner: Grid<u32>,
    cells: Placement,
    coords: Vec<Option<(i64, i64)>>,
    net_hpwl: Vec<i64>,
}

impl AnnealState<'_, '_> {
    fn net_hpwl(&self, net: usize) -> i64 {
        let pins = &self.gn.netlist.nets[net].pins;
        NetBox::around(pins.iter().filter_map(|&p| self.coords[p])).map_or(0, |b| b.half_perimeter())
    }

    fn mark(&mut self, m: usize, cell: Cell, who: u32) {
        let fp = self.gn.footprint(m);
        self.owner.fill_rect(crate::canvas::CellRect::at(cell, fp), who);
    }

    fn fits(&self, m: usize, cell: Cell) -> bool {
        let fp = self.gn.footprint(m);
        let n = self.owner.n();
        if cell.x + fp.w > n || cell.y + fp.h > n {
            return false;
        }
        (cell.x..cell.x + fp.w).all(|x| (cell.y..cell.y + fp.h).all(|y| *self.owner.get(x, y) == FREE))
    }

    fn set_pins(&mut self, m: usize, cell: Cell) {
        let module = &self.gn.netlist.modules[m];
        for (&p, gp) in module.pins.iter().zip(self.gn.grid_pins(m)) {
            self.coords[p] = Some((cell.x as i64 + gp.dx, cell.y as i64 + gp.dy));
        }
    }

    /// Moves macros to new cells (occupancy must already be checked) and
    /// returns the HPWL change.
    fn apply(&mut self, moves: &[(usize, Cell)]) -> i64 {
        let mut nets: Vec<usize> = moves.iter().flat_map(|&(m, _)| self.gn.netlist.nets_of(m)).collect();
        nets.sort_unstable();
        nets.dedup();
        for &(m, _) in moves {
            let old = self.cells[&m];
            self.mark(m, old, FREE);
        }
        for &(m, c) in moves {
            self.mark(m, c, m as u32);
            self.cells.insert(m, c);
            self.set_pins(m, c);
        }
        let mut delta = 0;
        for net in nets {
            let h = self.net_hpwl(net);
            delta += h - self.net_hpwl[net];
            self.net_hpwl[net] = h;
        }
        delta
    }
}

/// Simulated annealing over complete placements, started from the greedy
/// wire-mask episode. Returns the best placement seen.
pub fn simulated_annealing(
    gn: &GridNetlist<'_>,
    env_config: &EnvConfig,
    config: &AnnealConfig,
    rng: &mut EpisodeRng,
) -> Result<AnnealResult, EnvError> {
    let start = run_episode(gn, env_config, &mut GreedyWireMask, None, 0)?;
    if start.aborted {
        let env = PlacementEnv::reset(gn, env_config)?;
        return Err(stuck(&env));
    }
    let initial_grid = gn.initial_grid();
    let mut owner = initial_grid.view_mask().map(|&b| if b { BLOCKED } else { FREE });
    for (&m, &c) in &start.placement {
        owner.fill_rect(crate::canvas::CellRect::at(c, gn.footprint(m)), m as u32);
    }
    let coords = gn.pin_coords(&start.placement);
    let mut state = AnnealState {
        gn,
        owner,
        cells: start.placement.clone(),
        coords,
        net_hpwl: Vec::new(),
    };
    state.net_hpwl = (0..gn.netlist.nets.len()).map(|n| state.net_hpwl(n)).collect();
    let mut current: i64 = state.net_hpwl.iter().sum();
    let initial_hpwl = current;
    let mut best = (current, state.cells.clone());
    let mut temperature = config.initial_temperature.unwrap_or(initial_hpwl as f64 / 10.0);
    let macros: Vec<usize> = state.cells.keys().copied().collect();
    let n = gn.spec.n;
    let mut trace = Vec::with_capacity(config.iterations);

    for _ in 0..config.iterations {
        let swap = match (config.relocate, config.swap && macros.len() >= 2) {
            (true, true) => rng.gen_bool(0.5),
            (false, true) => true,
            (_, false) => false,
        };
        let proposal: Option<Vec<(usize, Cell)>> = if swap {
            let a = macros[rng.gen_range(0..macros.len())];
            let mut b = macros[rng.gen_range(0..macros.len() - 1)];
            if b == a {
                b = macros[macros.len() - 1];
            }
            let (ca, cb) = (state.cells[&a], state.cells[&b]);
            state.mark(a, ca, FREE);
            state.mark(b, cb, FREE);
            let ok = state.fits(a, cb) && {
                state.mark(a, cb, a as u32);
                let ok = state.fits(b, ca);
                state.mark(a, cb, FREE);
                ok
            };
            state.mark(a, ca, a as u32);
            state.mark(b, cb, b as u32);
            ok.then(|| vec![(a, cb), (b, ca)])
        } else if config.relocate {
            let m = macros[rng.gen_range(0..macros.len())];
            let from = state.cells[&m];
            state.mark(m, from, FREE);
            let mut target = None;
            for _ in 0..RELOCATE_ATTEMPTS {
                let c = Cell::new(rng.gen_range(0..n), rng.gen_range(0..n));
                if c != from && state.fits(m, c) {
                    target = Some(c);
                    break;
                }
            }
            state.mark(m, from, m as u32);
            target.map(|c| vec![(m, c)])
        } else {
            None
        };

        if let Some(moves) = proposal {
            let undo: Vec<(usize, Cell)> = moves.iter().map(|&(m, _)| (m, state.cells[&m])).collect();
            let delta = state.apply(&moves);
            let accept = delta < 0 || (temperature > 0.0 && rng.gen::<f64>() < (-(delta as f64) / temperature).exp());
            if accept {
                current += delta;
                if current < best.0 {
                    best = (current, state.cells.clone());
                }
            } else {
                state.apply(&undo);
            }
        }
        temperature *= config.cooling;
        trace.push(current);
    }

    Ok(AnnealResult {
        placement: best.1,
        hpwl: best.0,
        initial_hpwl,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::{ConstraintMode, GridSpec};
    use crate::masks::wire_mask_oracle;
    use crate::metrics::hpwl_full;
    use crate::netlist::{parse_bookshelf, BookshelfText, MacroSelection, Netlist};

    fn three_macro() -> Netlist {
        let nodes = "UCLA nodes 1.0\nNumNodes : 4\nNumTerminals : 1\n\
            a 2 2\nb 2 1\nc 1 2\np 0 0 terminal\n";
        let nets = "UCLA nets 1.0\nNumNets : 3\nNumPins : 7\n\
            NetDegree : 3\na I : 1 1\nb O : -1 0\np I : 0 0\n\
            NetDegree : 2\nb I : 1 0\nc O : 0 -1\n\
            NetDegree : 2\nc I : 0 1\na O : -1 -1\n";
        parse_bookshelf(&BookshelfText {
            nodes,
            nets,
            pl: Some("UCLA pl 1.0\np 6 0 : N /FIXED\n"),
            scl: None,
            canvas: Some((6.0, 6.0)),
        })
        .unwrap()
        .with_macros(&MacroSelection::default())
        .unwrap()
    }

    fn spec() -> GridSpec {
        GridSpec::new(6, 6.0, 6.0, ConstraintMode::Hard).unwrap()
    }

    #[test]
    fn random_single_feasible_cell() {
        let nodes = "UCLA nodes 1.0\nNumNodes : 1\nNumTerminals : 0\na 6 6\n";
        let nets = "UCLA nets 1.0\nNumNets : 0\nNumPins : 0\n";
        let nl = parse_bookshelf(&BookshelfText {
            nodes,
            nets,
            pl: None,
            scl: None,
            canvas: Some((6.0, 6.0)),
        })
        .unwrap()
        .with_macros(&MacroSelection::default())
        .unwrap();
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let env = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        let mut rng = EpisodeRng::seed_from_u64(3);
        let d = RandomValid.decide(&env, &mut rng).unwrap();
        assert_eq!(d.cell, Cell::new(0, 0));
        assert_eq!(d.log_prob, Some(0.0));
    }

    #[test]
    fn random_is_reproducible_and_valid() {
        let nl = three_macro();
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let a = run_episode(&gn, &EnvConfig::default(), &mut RandomValid, None, 9).unwrap();
        let b = run_episode(&gn, &EnvConfig::default(), &mut RandomValid, None, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn greedy_all_zero_mask_picks_origin() {
        let nl = three_macro();
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        // first macro in order has no placed neighbour pins except the port
        let env = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        let first = env.current_macro().unwrap();
        let mut rng = EpisodeRng::seed_from_u64(0);
        let d = GreedyWireMask.decide(&env, &mut rng).unwrap();
        let oracle = wire_mask_oracle(env.tracker(), gn.grid_pins(first), 6);
        let best = env
            .masks()
            .position
            .ones()
            .min_by_key(|c| (*oracle.at(*c), c.index(6)))
            .unwrap();
        assert_eq!(d.cell, best);
    }

    #[test]
    fn greedy_zero_mask_tie_breaks_to_lowest_index() {
        let nodes = "UCLA nodes 1.0\nNumNodes : 2\nNumTerminals : 0\na 1 1\nb 1 1\n";
        let nets = "UCLA nets 1.0\nNumNets : 0\nNumPins : 0\n";
        let nl = parse_bookshelf(&BookshelfText {
            nodes,
            nets,
            pl: None,
            scl: None,
            canvas: Some((6.0, 6.0)),
        })
        .unwrap()
        .with_macros(&MacroSelection::default())
        .unwrap();
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let out = run_episode(&gn, &EnvConfig::default(), &mut GreedyWireMask, None, 0).unwrap();
        assert_eq!(out.placement[&0], Cell::new(0, 0));
        assert_eq!(out.placement[&1], Cell::new(0, 1));
    }

    #[test]
    fn zero_iterations_keep_the_start() {
        let nl = three_macro();
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let greedy = run_episode(&gn, &EnvConfig::default(), &mut GreedyWireMask, None, 0).unwrap();
        let cfg = AnnealConfig {
            iterations: 0,
            ..AnnealConfig::default()
        };
        let r = simulated_annealing(&gn, &EnvConfig::default(), &cfg, &mut EpisodeRng::seed_from_u64(1)).unwrap();
        assert_eq!(r.placement, greedy.placement);
        assert_eq!(r.hpwl, hpwl_full(&gn, &greedy.placement));
    }

    #[test]
    fn zero_temperature_never_climbs() {
        let nl = three_macro();
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let cfg = AnnealConfig {
            iterations: 2_000,
            initial_temperature: Some(0.0),
            ..AnnealConfig::default()
        };
        let r = simulated_annealing(&gn, &EnvConfig::default(), &cfg, &mut EpisodeRng::seed_from_u64(5)).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.hpwl <= r.initial_hpwl);
    }

    /// Exhaustive minimum HPWL over every joint non-overlapping placement.
    fn exhaustive_optimum(gn: &GridNetlist<'_>) -> i64 {
        let macros = gn.netlist.macros.clone();
        let n = gn.spec.n;
        let mut best = i64::MAX;
        let mut placement = Placement::new();
        fn rec(gn: &GridNetlist<'_>, macros: &[usize], n: usize, placement: &mut Placement, best: &mut i64) {
            let Some((&m, rest)) = macros.split_first() else {
                *best = (*best).min(hpwl_full(gn, placement));
                return;
            };
            let fp = gn.footprint(m);
            for x in 0..=n - fp.w {
                for y in 0..=n - fp.h {
                    let rect = crate::canvas::CellRect { x, y, w: fp.w, h: fp.h };
                    let clash = placement
                        .iter()
                        .any(|(&o, &c)| crate::canvas::CellRect::at(c, gn.footprint(o)).intersection_area(&rect) > 0);
                    if !clash {
                        placement.insert(m, Cell::new(x, y));
                        rec(gn, rest, n, placement, best);
                        placement.remove(&m);
                    }
                }
            }
        }
        rec(gn, &macros, n, &mut placement, &mut best);
        best
    }

    #[test]
    fn annealing_reaches_near_optimum_on_tiny_instance() {
        let nl = three_macro();
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let optimum = exhaustive_optimum(&gn);
        let cfg = AnnealConfig {
            iterations: 10_000,
            ..AnnealConfig::default()
        };
        let r = simulated_annealing(&gn, &EnvConfig::default(), &cfg, &mut EpisodeRng::seed_from_u64(0)).unwrap();
        assert_eq!(r.hpwl, hpwl_full(&gn, &r.placement));
        assert!(
            r.hpwl as f64 <= optimum as f64 * 1.05,
            "annealing {} vs optimum {optimum}",
            r.hpwl
        );
    }

    #[test]
    fn annealing_best_is_monotone_in_budget() {
        let nl = three_macro();
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let mut last = i64::MAX;
        for iters in [0, 10, 100, 1_000, 5_000] {
            let cfg = AnnealConfig {
                iterations: iters,
                ..AnnealConfig::default()
            };
            let r = simulated_annealing(&gn, &EnvConfig::default(), &cfg, &mut EpisodeRng::seed_from_u64(2)).unwrap();
            assert!(r.hpwl <= last);
            last = r.hpwl;
        }
    }
}
