//! A netlist bound to a grid: per-module footprints, pin cell offsets and the
//! grid coordinates of fixed pins.

use std::collections::BTreeMap;

use crate::canvas::{Cell, Footprint, GridError, GridSpec, GridState};
use crate::netlist::Netlist;

/// Pin offset in cells from its module's bottom-left cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridPin {
    pub dx: i64,
    pub dy: i64,
    pub net: usize,
}

/// Macro id -> bottom-left cell.
pub type Placement = BTreeMap<usize, Cell>;

/// Physical bottom-left corner per module id (canvas-relative); `None` for
/// modules without a position.
pub type PhysicalPlacement = Vec<Option<(f64, f64)>>;

fn pin_cells(offset: f64, pitch_ratio: f64, cells: usize) -> i64 {
    if cells == 0 {
        return 0;
    }
    let d = (offset * pitch_ratio).round_ties_even() as i64;
    d.clamp(0, cells as i64 - 1)
}

#[derive(Debug, Clone)]
pub struct GridNetlist<'a> {
    pub netlist: &'a Netlist,
    pub spec: GridSpec,
    footprints: Vec<Footprint>,
    grid_pins: Vec<Vec<GridPin>>,
    fixed_pins: Vec<Option<(i64, i64)>>,
}

impl<'a> GridNetlist<'a> {
    pub fn new(netlist: &'a Netlist, spec: GridSpec) -> Result<Self, GridError> {
        let rx = spec.n as f64 / spec.width;
        let ry = spec.n as f64 / spec.height;
        let mut footprints = Vec::with_capacity(netlist.modules.len());
        let mut grid_pins = Vec::with_capacity(netlist.modules.len());
        for m in &netlist.modules {
            let fp = if m.movable {
                spec.footprint(m.width, m.height)?
            } else {
                spec.footprint(m.width, m.height).unwrap_or(Footprint { w: 0, h: 0 })
            };
            let pins = m
                .pins
                .iter()
                .map(|&p| {
                    let pin = &netlist.pins[p];
                    GridPin {
                        dx: pin_cells(pin.offset.0, rx, fp.w),
                        dy: pin_cells(pin.offset.1, ry, fp.h),
                        net: pin.net,
                    }
                })
                .collect();
            footprints.push(fp);
            grid_pins.push(pins);
        }
        let fixed_pins = netlist
            .pins
            .iter()
            .map(|p| {
                let m = &netlist.modules[p.module];
                match (m.movable, m.fixed_position) {
                    (false, Some((x, y))) => Some((spec.grid_x(x + p.offset.0), spec.grid_y(y + p.offset.1))),
                    _ => None,
                }
            })
            .collect();
        Ok(GridNetlist {
            netlist,
            spec,
            footprints,
            grid_pins,
            fixed_pins,
        })
    }

    pub fn footprint(&self, module: usize) -> Footprint {
        self.footprints[module]
    }

    /// Cell offsets of a module's pins, in the module's pin order.
    pub fn grid_pins(&self, module: usize) -> &[GridPin] {
        &self.grid_pins[module]
    }

    /// Grid coordinates of a fixed module's pin.
    pub fn fixed_pin(&self, pin: usize) -> Option<(i64, i64)> {
        self.fixed_pins[pin]
    }

    /// Fixed pins as `(net, x, y)`, in pin order.
    pub fn fixed_pin_list(&self) -> impl Iterator<Item = (usize, i64, i64)> + '_ {
        self.fixed_pins
            .iter()
            .enumerate()
            .filter_map(|(p, c)| c.map(|(x, y)| (self.netlist.pins[p].net, x, y)))
    }

    /// Grid location of every pin whose module is fixed or placed.
    pub fn pin_coords(&self, placement: &Placement) -> Vec<Option<(i64, i64)>> {
        let mut out = self.fixed_pins.clone();
        for (&m, &cell) in placement {
            for (&p, gp) in self.netlist.modules[m].pins.iter().zip(&self.grid_pins[m]) {
                out[p] = Some((cell.x as i64 + gp.dx, cell.y as i64 + gp.dy));
            }
        }
        out
    }

    /// Empty grid with fixed modules rasterized as blockages.
    pub fn initial_grid(&self) -> GridState {
        let mut g = GridState::new(self.spec);
        for m in &self.netlist.modules {
            if let (false, Some((x, y))) = (m.movable, m.fixed_position) {
                if m.area() > 0.0 {
                    g.add_blockage(x, y, m.width, m.height);
                }
            }
        }
        g
    }

    /// Physical corners for placed macros and fixed modules.
    pub fn physical(&self, placement: &Placement) -> PhysicalPlacement {
        let mut out: PhysicalPlacement = self
            .netlist
            .modules
            .iter()
            .map(|m| if m.movable { None } else { m.fixed_position })
            .collect();
        for (&m, &cell) in placement {
            out[m] = self.spec.cell_to_physical(cell).ok();
        }
        out
    }

    /// Nearest-cell snap of the selected macros' physical corners, clamped so
    /// each footprint stays on the grid. Cells may overlap.
    pub fn snap(&self, positions: &PhysicalPlacement) -> Placement {
        let n = self.spec.n;
        let snap = |v: f64, pitch: f64, size: usize| ((v / pitch).round().max(0.0) as usize).min(n - size);
        self.netlist
            .macros
            .iter()
            .filter_map(|&m| {
                let fp = self.footprints[m];
                positions[m].map(|(x, y)| {
                    (
                        m,
                        Cell::new(
                            snap(x, self.spec.cell_width(), fp.w),
                            snap(y, self.spec.cell_height(), fp.h),
                        ),
                    )
                })
            })
            .collect()
    }
}
