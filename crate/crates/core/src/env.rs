//! Sequential placement as an MDP: one macro per step, dense reward equal to
//! the negated HPWL increase, and the test-time congestion filter.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canvas::{Cell, Grid, GridError, GridState};
use crate::gridnet::{GridNetlist, Placement};
use crate::masks::{position_mask, wire_mask, WireMask};
use crate::metrics::{rudy_from_boxes, NetBoxTracker};
use crate::netlist::compute_place_order;

pub type EpisodeRng = ChaCha8Rng;

pub const DEFAULT_CONGESTION_SAMPLES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid action ({}, {}): position mask is 0 there", .0.x, .0.y)]
    InvalidAction(Cell),
    #[error("placement stuck: no feasible cell for macro `{name}` at step {step}")]
    Stuck { name: String, step: usize },
    #[error("episode is already finished")]
    Finished,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("policy failed: {0}")]
    Policy(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// Place only the first `k` macros of the order (curriculum pretraining).
    pub macro_limit: Option<usize>,
    /// Cells averaged for the RUDY scalar.
    pub rudy_top_k: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            macro_limit: None,
            rudy_top_k: 1,
        }
    }
}

/// Masks for the current macro, the one after it, and the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub position: Grid<bool>,
    pub next_position: Grid<bool>,
    pub wire: WireMask,
    pub next_wire: WireMask,
    pub view: Grid<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    /// HPWL before the step minus HPWL after it, minus the abort penalty if the episode aborted.
    pub reward: f64,
    pub delta_hpwl: i64,
    pub hpwl: i64,
    pub done: bool,
    /// Set when the next macro has no feasible cell and the episode ends early.
    pub abort_penalty: Option<f64>,
}

/// One line of the JSON-lines episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    #[serde(rename = "macro")]
    pub module: usize,
    pub action: [usize; 2],
    pub reward: f64,
    pub hpwl_t: i64,
}

#[derive(Debug, Clone)]
pub struct PlacementEnv<'a> {
    gn: &'a GridNetlist<'a>,
    config: EnvConfig,
    order: Vec<usize>,
    grid: GridState,
    tracker: NetBoxTracker,
    initial_hpwl: i64,
    placement: Placement,
    t: usize,
    masks: MaskSet,
    aborted: bool,
    trace: Vec<StepRecord>,
}

impl<'a> PlacementEnv<'a> {
    /// Fresh episode: fixed modules rasterized, tracker seeded with fixed
    /// pins, masks generated for the first two macros. Deterministic; any
    /// randomness lives in the caller's [`EpisodeRng`].
    pub fn reset(gn: &'a GridNetlist<'a>, config: &EnvConfig) -> Result<Self, EnvError> {
        let mut order = compute_place_order(gn.netlist);
        if let Some(k) = config.macro_limit {
            order.truncate(k.max(1));
        }
        let grid = gn.initial_grid();
        let tracker = NetBoxTracker::with_fixed_pins(gn);
        let n = gn.spec.n;
        let mut env = PlacementEnv {
            gn,
            config: config.clone(),
            order,
            grid,
            initial_hpwl: tracker.hpwl(),
            tracker,
            placement: Placement::new(),
            t: 0,
            masks: MaskSet {
                position: Grid::filled(n, false),
                next_position: Grid::filled(n, false),
                wire: WireMask::zeros(n),
                next_wire: WireMask::zeros(n),
                view: Grid::filled(n, false),
            },
            aborted: false,
            trace: Vec::new(),
        };
        env.refresh_masks();
        if env.masks.position.count_ones() == 0 {
            return Err(env.stuck());
        }
        Ok(env)
    }

    fn macro_masks(&self, m: usize) -> (Grid<bool>, WireMask) {
        let n = self.gn.spec.n;
        let pos = position_mask(n, self.gn.footprint(m), &self.grid.occupied_rects());
        let wire = wire_mask(&self.tracker, self.gn.grid_pins(m), n);
        (pos, wire)
    }

    fn refresh_masks(&mut self) {
        let n = self.gn.spec.n;
        let (position, wire) = match self.order.get(self.t) {
            Some(&m) => self.macro_masks(m),
            None => (Grid::filled(n, false), WireMask::zeros(n)),
        };
        let (next_position, next_wire) = match self.order.get(self.t + 1) {
            Some(&m) => self.macro_masks(m),
            None => (Grid::filled(n, false), WireMask::zeros(n)),
        };
        self.masks = MaskSet {
            position,
            next_position,
            wire,
            next_wire,
            view: self.grid.view_mask().clone(),
        };
    }

    fn stuck(&self) -> EnvError {
        let name = self
            .current_macro()
            .map(|m| self.gn.netlist.modules[m].name.clone())
            .unwrap_or_default();
        EnvError::Stuck { name, step: self.t }
    }

    /// Places the current macro at `action`.
    pub fn step(&mut self, action: Cell) -> Result<StepResult, EnvError> {
        let Some(m) = self.current_macro() else {
            return Err(EnvError::Finished);
        };
        if self.aborted {
            return Err(EnvError::Finished);
        }
        let n = self.gn.spec.n;
        if action.x >= n || action.y >= n || !*self.masks.position.at(action) {
            return Err(EnvError::InvalidAction(action));
        }
        self.grid.place(m, self.gn.footprint(m), action)?;
        let delta = self.tracker.place(self.gn.grid_pins(m), action);
        self.placement.insert(m, action);
        self.t += 1;
        self.refresh_masks();

        let mut reward = (-delta) as f64;
        let mut abort_penalty = None;
        if self.t < self.order.len() && self.masks.position.count_ones() == 0 {
            // worst-case wire cost of everything that can no longer be placed
            let penalty: i64 = self.order[self.t..]
                .iter()
                .map(|&r| wire_mask(&self.tracker, self.gn.grid_pins(r), n).max())
                .sum();
            let penalty = penalty as f64;
            reward -= penalty;
            abort_penalty = Some(penalty);
            self.aborted = true;
        }
        self.trace.push(StepRecord {
            t: self.t - 1,
            module: m,
            action: [action.x, action.y],
            reward,
            hpwl_t: self.tracker.hpwl(),
        });
        Ok(StepResult {
            reward,
            delta_hpwl: delta,
            hpwl: self.tracker.hpwl(),
            done: self.is_done(),
            abort_penalty,
        })
    }

    /// RUDY scalar of the layout after hypothetically placing the current
    /// macro at `cell`.
    pub fn congestion_after(&self, cell: Cell) -> f64 {
        let mut t = self.tracker.clone();
        if let Some(m) = self.current_macro() {
            t.place(self.gn.grid_pins(m), cell);
        }
        rudy_from_boxes(t.boxes(), self.gn.spec.n, self.config.rudy_top_k).value
    }

    /// RUDY scalar of the current layout.
    pub fn congestion(&self) -> f64 {
        rudy_from_boxes(self.tracker.boxes(), self.gn.spec.n, self.config.rudy_top_k).value
    }

    pub fn is_done(&self) -> bool {
        self.aborted || self.t >= self.order.len()
    }

    pub fn aborted(&self) -> bool {
        self.aborted
    }

    pub fn current_macro(&self) -> Option<usize> {
        self.order.get(self.t).copied()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn masks(&self) -> &MaskSet {
        &self.masks
    }

    pub fn grid(&self) -> &GridState {
        &self.grid
    }

    pub fn tracker(&self) -> &NetBoxTracker {
        &self.tracker
    }

    /// Partial HPWL of the fixed pins alone, before any step.
    pub fn initial_hpwl(&self) -> i64 {
        self.initial_hpwl
    }

    pub fn hpwl(&self) -> i64 {
        self.tracker.hpwl()
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn gridnet(&self) -> &'a GridNetlist<'a> {
        self.gn
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    /// Trace as JSON lines.
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace record serializes") + "\n")
            .collect()
    }
}

/// Outcome of [`congestion_filtered_action`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutcome {
    pub action: Cell,
    /// RUDY after taking `action`; `None` when the filter was disabled.
    pub congestion: Option<f64>,
    /// Whether `congestion` is within the threshold.
    pub satisfied: bool,
    pub replaced: bool,
}

/// Congestion check applied to a proposed action at test time.
///
/// Keeps `proposed` when the post-action RUDY is within `threshold`. Otherwise
/// samples up to `samples` distinct feasible cells uniformly, orders them by
/// (wire-mask value, congestion, cell index) and returns the first within
/// `threshold`, or the lowest-congestion sample if none qualifies.
pub fn congestion_filtered_action(
    env: &PlacementEnv<'_>,
    proposed: Cell,
    threshold: f64,
    samples: usize,
    rng: &mut EpisodeRng,
) -> Result<FilterOutcome, EnvError> {
    let masks = env.masks();
    let feasible: Vec<Cell> = masks.position.ones().collect();
    if feasible.is_empty() {
        return Err(env.stuck());
    }
    if proposed.x >= masks.position.n() || proposed.y >= masks.position.n() || !*masks.position.at(proposed) {
        return Err(EnvError::InvalidAction(proposed));
    }
    if threshold == f64::INFINITY {
        return Ok(FilterOutcome {
            action: proposed,
            congestion: None,
            satisfied: true,
            replaced: false,
        });
    }
    let c = env.congestion_after(proposed);
    if c <= threshold {
        return Ok(FilterOutcome {
            action: proposed,
            congestion: Some(c),
            satisfied: true,
            replaced: false,
        });
    }
    let k = samples.max(1).min(feasible.len());
    let mut picks: Vec<usize> = index::sample(rng, feasible.len(), k).into_vec();
    picks.sort_unstable();
    let n = masks.position.n();
    let mut cands: Vec<(i64, f64, Cell)> = picks
        .into_iter()
        .map(|i| {
            let cell = feasible[i];
            (masks.wire.at(cell), env.congestion_after(cell), cell)
        })
        .collect();
    cands.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.index(n).cmp(&b.2.index(n)))
    });
    if let Some(&(_, cong, cell)) = cands.iter().find(|c| c.1 <= threshold) {
        return Ok(FilterOutcome {
            action: cell,
            congestion: Some(cong),
            satisfied: true,
            replaced: true,
        });
    }
    let &(_, cong, cell) = cands
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one sample");
    Ok(FilterOutcome {
        action: cell,
        congestion: Some(cong),
        satisfied: false,
        replaced: true,
    })
}

/// Runs `f` once per seed on the current rayon pool, returning results in
/// seed order.
pub fn run_parallel<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| f(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::{ConstraintMode, GridSpec};
    use crate::netlist::{parse_bookshelf, BookshelfText, MacroSelection, Netlist};
    use rand::SeedableRng;

    fn netlist(nodes: &str, nets: &str, pl: Option<&str>) -> Netlist {
        parse_bookshelf(&BookshelfText {
            nodes,
            nets,
            pl,
            scl: None,
            canvas: Some((8.0, 8.0)),
        })
        .unwrap()
        .with_macros(&MacroSelection::default())
        .unwrap()
    }

    const NODES: &str = "UCLA nodes 1.0\nNumNodes : 4\nNumTerminals : 2\n\
        a 2 2\nb 2 2\np 0 0 terminal\nq 0 0 terminal\n";
    const NETS: &str = "UCLA nets 1.0\nNumNets : 2\nNumPins : 5\n\
        NetDegree : 3\na I : -1 -1\nb I : -1 -1\np O : 0 0\n\
        NetDegree : 2\np I : 0 0\nq I : 0 0\n";
    const PL: &str = "UCLA pl 1.0\np 0 0 : N /FIXED\nq 7 3 : N /FIXED\n";

    fn spec() -> GridSpec {
        GridSpec::new(8, 8.0, 8.0, ConstraintMode::Hard).unwrap()
    }

    #[test]
    fn fixed_ports_seed_initial_hpwl() {
        let nl = netlist(NODES, NETS, Some(PL));
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let env = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        assert_eq!(env.initial_hpwl(), 7 + 3);
        assert_eq!(env.t(), 0);
        assert_eq!(env.masks().position.count_ones(), 49);
    }

    #[test]
    fn no_fixed_pins_start_at_zero() {
        let nl = netlist(NODES, NETS, None);
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let env = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        assert_eq!(env.hpwl(), 0);
    }

    #[test]
    fn reset_is_deterministic() {
        let nl = netlist(NODES, NETS, Some(PL));
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let a = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        let b = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        assert_eq!(a.masks(), b.masks());
        assert_eq!(a.order(), b.order());
        assert_eq!(a.tracker(), b.tracker());
        assert_eq!(a.grid(), b.grid());
    }

    #[test]
    fn step_rewards_and_rejections() {
        let nl = netlist(NODES, NETS, Some(PL));
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let mut env = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        assert_eq!(env.order(), &[0, 1]);
        // a's pin is at its corner; net 0 box is the port at (0,0)
        let r = env.step(Cell::new(0, 0)).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(!r.done);
        assert_eq!(env.step(Cell::new(1, 1)), Err(EnvError::InvalidAction(Cell::new(1, 1))));
        let r = env.step(Cell::new(2, 0)).unwrap();
        assert_eq!(r.delta_hpwl, 2);
        assert_eq!(r.reward, -2.0);
        assert!(r.done);
        assert_eq!(env.step(Cell::new(4, 4)), Err(EnvError::Finished));
        assert_eq!(env.trace().len(), 2);
        assert!(env
            .trace_jsonl()
            .starts_with(r#"{"t":0,"macro":0,"action":[0,0],"reward":0.0,"hpwl_t":10}"#));
    }

    #[test]
    fn full_canvas_aborts_with_penalty() {
        let nodes = "UCLA nodes 1.0\nNumNodes : 3\nNumTerminals : 0\nbig 8 8\nx 1 1\ny 1 1\n";
        let nets = "UCLA nets 1.0\nNumNets : 1\nNumPins : 2\nNetDegree : 2\nbig I : 0 0\nx I : 0 0\n";
        let nl = netlist(nodes, nets, None);
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let mut env = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        let r = env.step(Cell::new(0, 0)).unwrap();
        assert!(r.done);
        assert!(env.aborted());
        // x's pin vs box {(4,4)}: worst cell is a corner 4+4 (or 3+3) away -> 8
        assert_eq!(r.abort_penalty, Some(8.0));
        assert_eq!(r.reward, -8.0);
    }

    #[test]
    fn infinite_threshold_keeps_proposal() {
        let nl = netlist(NODES, NETS, Some(PL));
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let env = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        let mut rng = EpisodeRng::seed_from_u64(1);
        let out = congestion_filtered_action(&env, Cell::new(3, 3), f64::INFINITY, 64, &mut rng).unwrap();
        assert_eq!(out.action, Cell::new(3, 3));
        assert!(!out.replaced);
    }

    #[test]
    fn unsatisfiable_threshold_falls_back_to_min_congestion() {
        let nl = netlist(NODES, NETS, Some(PL));
        let gn = GridNetlist::new(&nl, spec()).unwrap();
        let env = PlacementEnv::reset(&gn, &EnvConfig::default()).unwrap();
        let mut rng = EpisodeRng::seed_from_u64(1);
        let out = congestion_filtered_action(&env, Cell::new(3, 3), 1e-6, 10_000, &mut rng).unwrap();
        assert!(!out.satisfied);
        let best = env
            .masks()
            .position
            .ones()
            .map(|c| env.congestion_after(c))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.congestion, Some(best));
    }
}
