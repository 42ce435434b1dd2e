//! The N x N discretization of the chip canvas.
//!
//! Cells are addressed by their bottom-left corner `(x, y)`; the flat index is
//! `x * N + y`, so "row-major" order walks x first.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::netlist::Canvas;

/// Tolerance applied before rounding physical/grid ratios, so sizes that are
/// exact multiples of the cell pitch are not bumped up by float noise.
const SNAP_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("grid must have at least 2 cells per side, got {0}")]
    TooSmall(usize),
    #[error("canvas dimensions must be positive")]
    BadCanvas,
    #[error("macro larger than canvas: footprint {w} x {h} cells on a {n} x {n} grid")]
    MacroTooLarge { w: usize, h: usize, n: usize },
    #[error("cell ({x}, {y}) with footprint {w} x {h} is out of bounds")]
    OutOfBounds { x: usize, y: usize, w: usize, h: usize },
    #[error("placing module {module} at ({x}, {y}) overlaps occupied cells")]
    Overlap { module: usize, x: usize, y: usize },
    #[error("module {0} is already placed")]
    AlreadyPlaced(usize),
}

/// How module sizes map to cell counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintMode {
    /// Ceiling: the footprint always covers the whole module, so cell-level
    /// disjointness implies zero physical overlap.
    #[default]
    Hard,
    /// Rounding, at least one cell per axis. Physical overlap is possible.
    Soft,
}

impl std::str::FromStr for ConstraintMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hard" => Ok(ConstraintMode::Hard),
            "soft" => Ok(ConstraintMode::Soft),
            other => Err(format!("unknown constraint mode `{other}` (expected hard or soft)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub width: f64,
    pub height: f64,
    pub mode: ConstraintMode,
}

pub const DEFAULT_GRID: usize = 224;

impl GridSpec {
    pub fn new(n: usize, width: f64, height: f64, mode: ConstraintMode) -> Result<Self, GridError> {
        if n < 2 {
            return Err(GridError::TooSmall(n));
        }
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(GridError::BadCanvas);
        }
        Ok(GridSpec { n, width, height, mode })
    }

    pub fn for_canvas(n: usize, canvas: &Canvas, mode: ConstraintMode) -> Result<Self, GridError> {
        Self::new(n, canvas.width, canvas.height, mode)
    }

    pub fn cell_width(&self) -> f64 {
        self.width / self.n as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.height / self.n as f64
    }

    fn cells(&self, len: f64, extent: f64) -> usize {
        let ratio = len * self.n as f64 / extent;
        match self.mode {
            ConstraintMode::Hard => (ratio - SNAP_EPS).ceil().max(0.0) as usize,
            ConstraintMode::Soft => (ratio.round() as usize).max(1),
        }
    }

    /// Cell footprint of a `width x height` module. Zero-area modules occupy
    /// nothing.
    pub fn footprint(&self, width: f64, height: f64) -> Result<Footprint, GridError> {
        if width * height <= 0.0 {
            return Ok(Footprint { w: 0, h: 0 });
        }
        let fp = Footprint {
            w: self.cells(width, self.width),
            h: self.cells(height, self.height),
        };
        if fp.w > self.n || fp.h > self.n {
            return Err(GridError::MacroTooLarge {
                w: fp.w,
                h: fp.h,
                n: self.n,
            });
        }
        Ok(fp)
    }

    /// Physical bottom-left corner of a cell.
    pub fn cell_to_physical(&self, cell: Cell) -> Result<(f64, f64), GridError> {
        if cell.x >= self.n || cell.y >= self.n {
            return Err(GridError::OutOfBounds {
                x: cell.x,
                y: cell.y,
                w: 0,
                h: 0,
            });
        }
        Ok((
            cell.x as f64 * self.width / self.n as f64,
            cell.y as f64 * self.height / self.n as f64,
        ))
    }

    /// Grid column containing physical x, clamped to the canvas.
    pub fn grid_x(&self, x: f64) -> i64 {
        snap_floor(x * self.n as f64 / self.width).clamp(0, self.n as i64 - 1)
    }

    /// Grid row containing physical y, clamped to the canvas.
    pub fn grid_y(&self, y: f64) -> i64 {
        snap_floor(y * self.n as f64 / self.height).clamp(0, self.n as i64 - 1)
    }

    /// Cells touched by a physical rectangle, clamped to the grid. Used to
    /// rasterize fixed blockages conservatively.
    pub fn covering_rect(&self, x: f64, y: f64, w: f64, h: f64) -> Option<CellRect> {
        let n = self.n as f64;
        let x0 = snap_floor(x * n / self.width).clamp(0, self.n as i64);
        let y0 = snap_floor(y * n / self.height).clamp(0, self.n as i64);
        let x1 = snap_ceil((x + w) * n / self.width).clamp(0, self.n as i64);
        let y1 = snap_ceil((y + h) * n / self.height).clamp(0, self.n as i64);
        (x1 > x0 && y1 > y0).then(|| CellRect {
            x: x0 as usize,
            y: y0 as usize,
            w: (x1 - x0) as usize,
            h: (y1 - y0) as usize,
        })
    }
}

fn snap_floor(v: f64) -> i64 {
    (v + SNAP_EPS).floor() as i64
}

fn snap_ceil(v: f64) -> i64 {
    (v - SNAP_EPS).ceil() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    pub fn index(self, n: usize) -> usize {
        self.x * n + self.y
    }

    pub fn from_index(i: usize, n: usize) -> Self {
        Cell { x: i / n, y: i % n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Footprint {
    pub w: usize,
    pub h: usize,
}

impl Footprint {
    pub fn area(self) -> usize {
        self.w * self.h
    }
}

/// Axis-aligned block of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CellRect {
    pub fn at(cell: Cell, fp: Footprint) -> Self {
        CellRect {
            x: cell.x,
            y: cell.y,
            w: fp.w,
            h: fp.h,
        }
    }

    pub fn intersection_area(&self, other: &CellRect) -> usize {
        let w = (self.x + self.w)
            .min(other.x + other.w)
            .saturating_sub(self.x.max(other.x));
        let h = (self.y + self.h)
            .min(other.y + other.h)
            .saturating_sub(self.y.max(other.y));
        w * h
    }
}

/// Dense N x N grid of values, indexed by [`Cell`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(n: usize, value: T) -> Self {
        Grid {
            n,
            data: vec![value; n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * n, "grid data length");
        Grid { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[x * self.n + y]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[x * self.n + y] = v;
    }

    pub fn at(&self, c: Cell) -> &T {
        self.get(c.x, c.y)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            n: self.n,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Sets every cell of `rect` (clipped to the grid) to `v`.
    pub fn fill_rect(&mut self, rect: CellRect, v: T) {
        let x1 = (rect.x + rect.w).min(self.n);
        let y1 = (rect.y + rect.h).min(self.n);
        for x in rect.x.min(self.n)..x1 {
            let row = &mut self.data[x * self.n..(x + 1) * self.n];
            for c in &mut row[rect.y.min(self.n)..y1] {
                *c = v.clone();
            }
        }
    }
}

impl Grid<bool> {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Feasible cells in ascending index order.
    pub fn ones(&self) -> impl Iterator<Item = Cell> + '_ {
        let n = self.n;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| Cell::from_index(i, n))
    }
}

/// Occupancy of the canvas plus where each placed macro sits.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub spec: GridSpec,
    occupancy: Grid<bool>,
    placements: BTreeMap<usize, (Cell, Footprint)>,
    blockages: Vec<CellRect>,
    step: usize,
}

impl GridState {
    pub fn new(spec: GridSpec) -> Self {
        GridState {
            spec,
            occupancy: Grid::filled(spec.n, false),
            placements: BTreeMap::new(),
            blockages: Vec::new(),
            step: 0,
        }
    }

    /// Marks the cells under a fixed module as occupied.
    pub fn add_blockage(&mut self, x: f64, y: f64, w: f64, h: f64) {
        if let Some(rect) = self.spec.covering_rect(x, y, w, h) {
            self.occupancy.fill_rect(rect, true);
            self.blockages.push(rect);
        }
    }

    pub fn fits(&self, fp: Footprint, cell: Cell) -> bool {
        let n = self.spec.n;
        if cell.x + fp.w > n || cell.y + fp.h > n {
            return false;
        }
        (cell.x..cell.x + fp.w).all(|x| (cell.y..cell.y + fp.h).all(|y| !*self.occupancy.get(x, y)))
    }

    /// Places `module` with footprint `fp` at `cell`. Cell-level double
    /// occupancy is rejected in both constraint modes.
    pub fn place(&mut self, module: usize, fp: Footprint, cell: Cell) -> Result<(), GridError> {
        let n = self.spec.n;
        if cell.x + fp.w > n || cell.y + fp.h > n || cell.x >= n || cell.y >= n {
            return Err(GridError::OutOfBounds {
                x: cell.x,
                y: cell.y,
                w: fp.w,
                h: fp.h,
            });
        }
        if self.placements.contains_key(&module) {
            return Err(GridError::AlreadyPlaced(module));
        }
        if !self.fits(fp, cell) {
            return Err(GridError::Overlap {
                module,
                x: cell.x,
                y: cell.y,
            });
        }
        self.occupancy.fill_rect(CellRect::at(cell, fp), true);
        self.placements.insert(module, (cell, fp));
        self.step += 1;
        Ok(())
    }

    /// Binary occupancy image.
    pub fn view_mask(&self) -> &Grid<bool> {
        &self.occupancy
    }

    pub fn placement(&self, module: usize) -> Option<Cell> {
        self.placements.get(&module).map(|&(c, _)| c)
    }

    pub fn placements(&self) -> impl Iterator<Item = (usize, Cell, Footprint)> + '_ {
        self.placements.iter().map(|(&m, &(c, f))| (m, c, f))
    }

    /// Occupied rectangles: placed macros followed by fixed blockages.
    pub fn occupied_rects(&self) -> Vec<CellRect> {
        self.placements
            .values()
            .map(|&(c, f)| CellRect::at(c, f))
            .chain(self.blockages.iter().copied())
            .collect()
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, mode: ConstraintMode) -> GridSpec {
        GridSpec::new(n, 80.0, 80.0, mode).unwrap()
    }

    #[test]
    fn unit_module_is_one_cell() {
        for mode in [ConstraintMode::Hard, ConstraintMode::Soft] {
            let s = spec(8, mode);
            assert_eq!(s.footprint(10.0, 10.0).unwrap(), Footprint { w: 1, h: 1 });
        }
        // awkward pitch: 7 cells over 1 unit
        let s = GridSpec::new(7, 1.0, 1.0, ConstraintMode::Hard).unwrap();
        assert_eq!(s.footprint(1.0 / 7.0, 3.0 / 7.0).unwrap(), Footprint { w: 1, h: 3 });
    }

    #[test]
    fn ceiling_versus_round() {
        assert_eq!(spec(8, ConstraintMode::Hard).footprint(12.0, 10.0).unwrap().w, 2);
        assert_eq!(spec(8, ConstraintMode::Soft).footprint(12.0, 10.0).unwrap().w, 1);
        // soft keeps at least one cell
        assert_eq!(
            spec(8, ConstraintMode::Soft).footprint(1.0, 1.0).unwrap(),
            Footprint { w: 1, h: 1 }
        );
    }

    #[test]
    fn zero_area_occupies_nothing() {
        assert_eq!(
            spec(8, ConstraintMode::Hard).footprint(0.0, 0.0).unwrap(),
            Footprint { w: 0, h: 0 }
        );
    }

    #[test]
    fn too_large() {
        assert!(matches!(
            spec(8, ConstraintMode::Hard).footprint(81.0, 1.0),
            Err(GridError::MacroTooLarge { .. })
        ));
    }

    #[test]
    fn place_and_view() {
        let mut g = GridState::new(spec(8, ConstraintMode::Hard));
        assert_eq!(g.view_mask().count_ones(), 0);
        let fp = Footprint { w: 2, h: 2 };
        g.place(0, fp, Cell::new(0, 0)).unwrap();
        for (x, y) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!(*g.view_mask().get(x, y));
        }
        assert_eq!(
            g.place(1, fp, Cell::new(1, 1)),
            Err(GridError::Overlap { module: 1, x: 1, y: 1 })
        );
        g.place(1, fp, Cell::new(2, 0)).unwrap();
        assert_eq!(g.view_mask().count_ones(), 8);
        assert_eq!(g.step(), 2);
        assert!(matches!(
            g.place(2, fp, Cell::new(7, 0)),
            Err(GridError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn full_grid_view_is_all_ones() {
        let mut g = GridState::new(spec(8, ConstraintMode::Hard));
        g.place(0, Footprint { w: 8, h: 8 }, Cell::new(0, 0)).unwrap();
        assert_eq!(g.view_mask().count_ones(), 64);
    }

    #[test]
    fn cell_to_physical_is_linear() {
        let s = spec(8, ConstraintMode::Hard);
        assert_eq!(s.cell_to_physical(Cell::new(0, 0)).unwrap(), (0.0, 0.0));
        assert_eq!(s.cell_to_physical(Cell::new(3, 5)).unwrap(), (30.0, 50.0));
        assert_eq!(s.cell_to_physical(Cell::new(7, 7)).unwrap(), (70.0, 70.0));
        assert!(s.cell_to_physical(Cell::new(8, 0)).is_err());
    }

    #[test]
    fn blockage_is_rasterized_conservatively() {
        let mut g = GridState::new(spec(8, ConstraintMode::Hard));
        g.add_blockage(15.0, 0.0, 10.0, 10.0);
        // x in [15, 25) touches columns 1 and 2
        assert_eq!(g.view_mask().count_ones(), 2);
        assert!(*g.view_mask().get(1, 0) && *g.view_mask().get(2, 0));
    }

    #[test]
    fn row_major_index_round_trip() {
        for i in 0..64 {
            assert_eq!(Cell::from_index(i, 8).index(8), i);
        }
        assert_eq!(Cell::new(1, 0).index(8), 8);
    }
}
