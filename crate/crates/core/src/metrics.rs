//! Placement quality metrics: HPWL (full and incremental), RUDY congestion,
//! density, overlap ratio and an MST routing-length estimate.

use serde::{Deserialize, Serialize};

use crate::canvas::Cell;
use crate::canvas::{Grid, GridSpec};
use crate::gridnet::{GridNetlist, GridPin, PhysicalPlacement, Placement};
use crate::netlist::Netlist;

/// Bounding box of a net's placed pins, in grid units (inclusive cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetBox {
    pub min_x: i64,
    pub max_x: i64,
    pub min_y: i64,
    pub max_y: i64,
}

impl NetBox {
    pub fn point(x: i64, y: i64) -> Self {
        NetBox {
            min_x: x,
            max_x: x,
            min_y: y,
            max_y: y,
        }
    }

    pub fn half_perimeter(&self) -> i64 {
        self.max_x - self.min_x + self.max_y - self.min_y
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        (self.min_x..=self.max_x).contains(&x) && (self.min_y..=self.max_y).contains(&y)
    }

    fn expanded(mut self, x: i64, y: i64) -> Self {
        self.min_x = self.min_x.min(x);
        self.max_x = self.max_x.max(x);
        self.min_y = self.min_y.min(y);
        self.max_y = self.max_y.max(y);
        self
    }

    /// Smallest box around a point set; `None` when empty.
    pub fn around(points: impl IntoIterator<Item = (i64, i64)>) -> Option<Self> {
        points.into_iter().fold(None, |acc: Option<NetBox>, (x, y)| {
            Some(acc.map_or(NetBox::point(x, y), |b| b.expanded(x, y)))
        })
    }
}

/// Running per-net bounding boxes and the partial HPWL they imply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetBoxTracker {
    boxes: Vec<Option<NetBox>>,
    hpwl: i64,
}

impl NetBoxTracker {
    pub fn new(num_nets: usize) -> Self {
        NetBoxTracker {
            boxes: vec![None; num_nets],
            hpwl: 0,
        }
    }

    /// Tracker seeded with every fixed pin of the netlist.
    pub fn with_fixed_pins(gn: &GridNetlist<'_>) -> Self {
        let mut t = Self::new(gn.netlist.nets.len());
        for (net, x, y) in gn.fixed_pin_list() {
            t.add_pin(net, x, y);
        }
        t
    }

    /// Adds one pin, returning the HPWL increase. The first pin of a net
    /// opens its box at zero cost.
    pub fn add_pin(&mut self, net: usize, x: i64, y: i64) -> i64 {
        let slot = &mut self.boxes[net];
        let Some(b) = slot else {
            *slot = Some(NetBox::point(x, y));
            return 0;
        };
        let mut delta = 0;
        if x > b.max_x {
            delta += x - b.max_x;
            b.max_x = x;
        } else if x < b.min_x {
            delta += b.min_x - x;
            b.min_x = x;
        }
        if y > b.max_y {
            delta += y - b.max_y;
            b.max_y = y;
        } else if y < b.min_y {
            delta += b.min_y - y;
            b.min_y = y;
        }
        self.hpwl += delta;
        delta
    }

    /// Places a module's pins with its bottom-left at `cell`; returns the HPWL increase.
    pub fn place(&mut self, pins: &[GridPin], cell: Cell) -> i64 {
        pins.iter()
            .map(|p| self.add_pin(p.net, cell.x as i64 + p.dx, cell.y as i64 + p.dy))
            .sum()
    }

    pub fn hpwl(&self) -> i64 {
        self.hpwl
    }

    pub fn net_box(&self, net: usize) -> Option<NetBox> {
        self.boxes[net]
    }

    /// Initialized boxes in net order.
    pub fn boxes(&self) -> impl Iterator<Item = NetBox> + '_ {
        self.boxes.iter().flatten().copied()
    }

    pub fn num_nets(&self) -> usize {
        self.boxes.len()
    }
}

/// Grid-unit HPWL over nets with at least one fixed or placed pin.
pub fn hpwl_full(gn: &GridNetlist<'_>, placement: &Placement) -> i64 {
    let coords = gn.pin_coords(placement);
    gn.netlist
        .nets
        .iter()
        .filter_map(|net| NetBox::around(net.pins.iter().filter_map(|&p| coords[p])))
        .map(|b| b.half_perimeter())
        .sum()
}

/// Physical pin locations for every pin whose module has a position.
pub fn physical_pin_coords(netlist: &Netlist, positions: &PhysicalPlacement) -> Vec<Option<(f64, f64)>> {
    netlist
        .pins
        .iter()
        .map(|p| positions[p.module].map(|(x, y)| (x + p.offset.0, y + p.offset.1)))
        .collect()
}

/// HPWL in physical units.
pub fn hpwl_physical(netlist: &Netlist, positions: &PhysicalPlacement) -> f64 {
    let coords = physical_pin_coords(netlist, positions);
    let mut total = 0.0;
    for net in &netlist.nets {
        let mut it = net.pins.iter().filter_map(|&p| coords[p]);
        let Some((x, y)) = it.next() else { continue };
        let (mut x0, mut x1, mut y0, mut y1) = (x, x, y, y);
        for (x, y) in it {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        total += (x1 - x0) + (y1 - y0);
    }
    total
}

/// Per-cell RUDY map and its scalar summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Rudy {
    pub map: Grid<f64>,
    pub value: f64,
}

/// RUDY contribution of one box: it covers cells `min..=max` on both axes and
/// adds `1/w + 1/h` with `w`, `h` counted in cells (at least one each).
pub fn rudy_weight(b: &NetBox) -> f64 {
    let w = (b.max_x - b.min_x + 1) as f64;
    let h = (b.max_y - b.min_y + 1) as f64;
    1.0 / w + 1.0 / h
}

/// Accumulates RUDY over `boxes` on an `n x n` grid.
pub fn rudy_map(boxes: impl IntoIterator<Item = NetBox>, n: usize) -> Grid<f64> {
    // per-column difference arrays along y
    let mut diff = vec![0.0f64; n * (n + 1)];
    let clamp = |v: i64| v.clamp(0, n as i64 - 1) as usize;
    for b in boxes {
        let v = rudy_weight(&b);
        let (x0, x1) = (clamp(b.min_x), clamp(b.max_x));
        let (y0, y1) = (clamp(b.min_y), clamp(b.max_y));
        for x in x0..=x1 {
            let col = &mut diff[x * (n + 1)..(x + 1) * (n + 1)];
            col[y0] += v;
            col[y1 + 1] -= v;
        }
    }
    let mut map = Grid::filled(n, 0.0);
    for x in 0..n {
        let mut acc = 0.0;
        for y in 0..n {
            acc += diff[x * (n + 1) + y];
            // cancellation can leave -0.0 or tiny negatives on empty cells
            map.set(x, y, if acc.abs() < 1e-12 { 0.0 } else { acc });
        }
    }
    map
}

/// Mean of the `top_k` largest cells (`top_k >= 1`).
pub fn top_k_mean(map: &Grid<f64>, top_k: usize) -> f64 {
    let k = top_k.max(1).min(map.as_slice().len());
    if k == 1 {
        return map.as_slice().iter().copied().fold(0.0, f64::max);
    }
    let mut v = map.as_slice().to_vec();
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    v[..k].iter().sum::<f64>() / k as f64
}

pub fn rudy_from_boxes(boxes: impl IntoIterator<Item = NetBox>, n: usize, top_k: usize) -> Rudy {
    let map = rudy_map(boxes, n);
    let value = top_k_mean(&map, top_k);
    Rudy { map, value }
}

/// RUDY congestion of a (partial) placement.
pub fn rudy_congestion(gn: &GridNetlist<'_>, placement: &Placement, top_k: usize) -> Rudy {
    let coords = gn.pin_coords(placement);
    let boxes = gn
        .netlist
        .nets
        .iter()
        .filter_map(|net| NetBox::around(net.pins.iter().filter_map(|&p| coords[p])));
    rudy_from_boxes(boxes, gn.spec.n, top_k)
}

/// Physical rectangle `(x, y, w, h)`.
pub type Rect = (f64, f64, f64, f64);

/// Largest per-cell sum of fractional coverage by `rects`.
pub fn density_max(rects: &[Rect], spec: &GridSpec) -> f64 {
    let mut cov = Grid::filled(spec.n, 0.0f64);
    let (cw, ch) = (spec.cell_width(), spec.cell_height());
    for &(x, y, w, h) in rects {
        let Some(r) = spec.covering_rect(x, y, w, h) else {
            continue;
        };
        for gx in r.x..r.x + r.w {
            let ox = (x + w).min((gx + 1) as f64 * cw) - x.max(gx as f64 * cw);
            if ox <= 0.0 {
                continue;
            }
            for gy in r.y..r.y + r.h {
                let oy = (y + h).min((gy + 1) as f64 * ch) - y.max(gy as f64 * ch);
                if oy > 0.0 {
                    let c = *cov.get(gx, gy);
                    cov.set(gx, gy, c + ox * oy / (cw * ch));
                }
            }
        }
    }
    cov.as_slice().iter().copied().fold(0.0, f64::max)
}

/// Sum of pairwise intersection areas over the canvas area, in percent.
pub fn overlap_ratio(rects: &[Rect], width: f64, height: f64) -> f64 {
    let mut total = 0.0;
    for (i, a) in rects.iter().enumerate() {
        for b in &rects[i + 1..] {
            let w = (a.0 + a.2).min(b.0 + b.2) - a.0.max(b.0);
            let h = (a.1 + a.3).min(b.1 + b.3) - a.1.max(b.1);
            if w > 0.0 && h > 0.0 {
                total += w * h;
            }
        }
    }
    total / (width * height) * 100.0
}

/// Rectilinear MST weight of a point set (Prim, O(n^2)).
pub fn mst_manhattan(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let dist = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() + (a.1 - b.1).abs();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    best[0] = 0.0;
    let mut total = 0.0;
    for _ in 0..n {
        let (u, _) = best
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_tree[*i])
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("vertex left");
        in_tree[u] = true;
        total += best[u];
        for v in 0..n {
            if !in_tree[v] {
                best[v] = best[v].min(dist(points[u], points[v]));
            }
        }
    }
    total
}

/// Σ over nets of the rectilinear MST of the net's located pins.
pub fn mst_wirelength(netlist: &Netlist, positions: &PhysicalPlacement) -> f64 {
    let coords = physical_pin_coords(netlist, positions);
    netlist
        .nets
        .iter()
        .map(|net| {
            let pts: Vec<_> = net.pins.iter().filter_map(|&p| coords[p]).collect();
            mst_manhattan(&pts)
        })
        .sum()
}

/// Physical rectangles of the placed macros.
pub fn macro_rects(netlist: &Netlist, positions: &PhysicalPlacement) -> Vec<Rect> {
    netlist
        .macros
        .iter()
        .filter_map(|&m| {
            let module = &netlist.modules[m];
            positions[m].map(|(x, y)| (x, y, module.width, module.height))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hpwl_grid: i64,
    pub hpwl_phys: f64,
    pub congestion: f64,
    pub density: f64,
    pub overlap_pct: f64,
    pub mst_wl: f64,
}

/// User-supplied reference values for reporting metrics on a [0, 1] scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub hpwl: f64,
    pub congestion: f64,
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizedMetrics {
    pub hpwl: f64,
    pub congestion: f64,
    pub density: f64,
    pub overlap_pct: f64,
}

impl MetricReport {
    /// Computes every metric. Grid metrics use `cells`; physical metrics use
    /// `positions`, which may be off-grid for externally produced placements.
    pub fn evaluate(gn: &GridNetlist<'_>, cells: &Placement, positions: &PhysicalPlacement, top_k: usize) -> Self {
        let nl = gn.netlist;
        let rects = macro_rects(nl, positions);
        MetricReport {
            hpwl_grid: hpwl_full(gn, cells),
            hpwl_phys: hpwl_physical(nl, positions),
            congestion: rudy_congestion(gn, cells, top_k).value,
            density: density_max(&rects, &gn.spec),
            overlap_pct: overlap_ratio(&rects, nl.canvas.width, nl.canvas.height),
            mst_wl: mst_wirelength(nl, positions),
        }
    }

    pub fn normalized(&self, by: &Normalizer) -> NormalizedMetrics {
        let div = |a: f64, b: f64| if b > 0.0 { a / b } else { a };
        NormalizedMetrics {
            hpwl: div(self.hpwl_phys, by.hpwl),
            congestion: div(self.congestion, by.congestion),
            density: div(self.density, by.density),
            overlap_pct: self.overlap_pct,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metric report serializes")
    }
}
