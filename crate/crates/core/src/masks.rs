//! Position and wire masks for the module about to be placed, each with a
//! brute-force counterpart used as a test oracle.

use crate::canvas::{Cell, CellRect, Footprint, Grid};
use crate::gridnet::GridPin;
use crate::metrics::{NetBox, NetBoxTracker};

/// Feasible bottom-left cells for a `fp` footprint given the occupied
/// rectangles. Starts from all ones, clears cells whose footprint would cross
/// the canvas edge, then clears, for every occupied rectangle, the inclusive
/// block `[x - w + 1, x + rw - 1] x [y - h + 1, y + rh - 1]`.
pub fn position_mask(n: usize, fp: Footprint, occupied: &[CellRect]) -> Grid<bool> {
    debug_assert!(fp.w >= 1 && fp.h >= 1, "position mask needs a non-empty footprint");
    let mut mask = Grid::filled(n, true);
    if fp.w > n || fp.h > n {
        return Grid::filled(n, false);
    }
    let (lx, ly) = (n - fp.w + 1, n - fp.h + 1);
    mask.fill_rect(
        CellRect {
            x: lx,
            y: 0,
            w: n - lx,
            h: n,
        },
        false,
    );
    mask.fill_rect(
        CellRect {
            x: 0,
            y: ly,
            w: n,
            h: n - ly,
        },
        false,
    );
    for r in occupied.iter().filter(|r| r.w > 0 && r.h > 0) {
        let x0 = r.x.saturating_sub(fp.w - 1);
        let y0 = r.y.saturating_sub(fp.h - 1);
        let x1 = r.x + r.w - 1;
        let y1 = r.y + r.h - 1;
        mask.fill_rect(
            CellRect {
                x: x0,
                y: y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            },
            false,
        );
    }
    mask
}

/// Brute-force position mask: tests every candidate cell against the
/// occupancy grid directly.
pub fn position_mask_oracle(occupancy: &Grid<bool>, fp: Footprint) -> Grid<bool> {
    let n = occupancy.n();
    let mut mask = Grid::filled(n, false);
    for x in 0..n {
        for y in 0..n {
            let inside = x + fp.w <= n && y + fp.h <= n;
            let free = inside && (x..x + fp.w).all(|i| (y..y + fp.h).all(|j| !*occupancy.get(i, j)));
            mask.set(x, y, free);
        }
    }
    mask
}

/// Wire mask in separable form: `value(x, y) = x_cost[x] + y_cost[y]`.
///
/// Generation is O(N·P); [`WireMask::to_grid`] materializes the N x N values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMask {
    pub x_cost: Vec<i64>,
    pub y_cost: Vec<i64>,
}

impl WireMask {
    pub fn zeros(n: usize) -> Self {
        WireMask {
            x_cost: vec![0; n],
            y_cost: vec![0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.x_cost.len()
    }

    pub fn get(&self, x: usize, y: usize) -> i64 {
        self.x_cost[x] + self.y_cost[y]
    }

    pub fn at(&self, c: Cell) -> i64 {
        self.get(c.x, c.y)
    }

    pub fn to_grid(&self) -> Grid<i64> {
        let n = self.n();
        let mut data = Vec::with_capacity(n * n);
        for &cx in &self.x_cost {
            data.extend(self.y_cost.iter().map(|&cy| cx + cy));
        }
        Grid::from_vec(n, data)
    }

    pub fn max(&self) -> i64 {
        self.x_cost.iter().max().unwrap_or(&0) + self.y_cost.iter().max().unwrap_or(&0)
    }

    pub fn min(&self) -> i64 {
        self.x_cost.iter().min().unwrap_or(&0) + self.y_cost.iter().min().unwrap_or(&0)
    }
}

/// Adds one axis of one pin's box-expansion cost to `acc`.
fn accumulate_axis(acc: &mut [i64], lo: i64, hi: i64, offset: i64) {
    let n = acc.len() as i64;
    // the pin lands at i + offset, so shift the box by -offset
    let (lo, hi) = (lo - offset, hi - offset);
    // left of the box
    for i in 0..lo.clamp(0, n) {
        acc[i as usize] += lo - i;
    }
    // right of the box
    for i in (hi + 1).clamp(0, n)..n {
        acc[i as usize] += i - hi;
    }
}

/// Per-axis costs contributed by a single pin; `None` if its net has no
/// placed pin yet.
pub fn pin_axis_costs(tracker: &NetBoxTracker, pin: &GridPin, n: usize) -> Option<(Vec<i64>, Vec<i64>)> {
    let b = tracker.net_box(pin.net)?;
    let mut xs = vec![0; n];
    let mut ys = vec![0; n];
    accumulate_axis(&mut xs, b.min_x, b.max_x, pin.dx);
    accumulate_axis(&mut ys, b.min_y, b.max_y, pin.dy);
    Some((xs, ys))
}

/// HPWL increase for every candidate bottom-left cell, summed pin by pin.
pub fn wire_mask(tracker: &NetBoxTracker, pins: &[GridPin], n: usize) -> WireMask {
    let mut mask = WireMask::zeros(n);
    for pin in pins {
        if let Some(b) = tracker.net_box(pin.net) {
            accumulate_axis(&mut mask.x_cost, b.min_x, b.max_x, pin.dx);
            accumulate_axis(&mut mask.y_cost, b.min_y, b.max_y, pin.dy);
        }
    }
    mask
}

/// Brute-force wire mask: at every cell, adds all of the module's pins to
/// copies of their nets' boxes and measures the joint HPWL change.
pub fn wire_mask_oracle(tracker: &NetBoxTracker, pins: &[GridPin], n: usize) -> Grid<i64> {
    let mut nets: Vec<usize> = pins.iter().map(|p| p.net).collect();
    nets.sort_unstable();
    nets.dedup();
    let mut mask = Grid::filled(n, 0i64);
    for x in 0..n {
        for y in 0..n {
            let mut delta = 0;
            for &net in &nets {
                let landed = pins
                    .iter()
                    .filter(|p| p.net == net)
                    .map(|p| (x as i64 + p.dx, y as i64 + p.dy));
                match tracker.net_box(net) {
                    Some(b) => {
                        let corners = [(b.min_x, b.min_y), (b.max_x, b.max_y)];
                        let grown = NetBox::around(corners.into_iter().chain(landed)).expect("non-empty");
                        delta += grown.half_perimeter() - b.half_perimeter();
                    }
                    None => {
                        delta += NetBox::around(landed).map_or(0, |b| b.half_perimeter());
                    }
                }
            }
            mask.set(x, y, delta);
        }
    }
    mask
}

/// Min-max scales a wire mask to [0, 1]; a constant mask maps to zeros.
pub fn normalized(mask: &WireMask) -> Grid<f64> {
    let (lo, hi) = (mask.min(), mask.max());
    let span = (hi - lo) as f64;
    mask.to_grid()
        .map(|&v| if span > 0.0 { (v - lo) as f64 / span } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fp(w: usize, h: usize) -> Footprint {
        Footprint { w, h }
    }

    #[test]
    fn empty_grid_boundary_only() {
        let m = position_mask(8, fp(2, 2), &[]);
        assert_eq!(m.count_ones(), 49);
        for c in m.ones() {
            assert!(c.x <= 6 && c.y <= 6);
        }
    }

    #[test]
    fn one_placed_module_matches_oracle() {
        let rect = CellRect { x: 2, y: 2, w: 2, h: 2 };
        let mut occ = Grid::filled(8, false);
        occ.fill_rect(rect, true);
        let fast = position_mask(8, fp(2, 2), &[rect]);
        assert_eq!(fast, position_mask_oracle(&occ, fp(2, 2)));
        // 3x3 block [1,3]^2 removed from the 49 candidates
        assert_eq!(fast.count_ones(), 40);
    }

    #[test]
    fn full_grid_has_no_positions() {
        let rect = CellRect { x: 0, y: 0, w: 8, h: 8 };
        let mut occ = Grid::filled(8, false);
        occ.fill_rect(rect, true);
        assert_eq!(position_mask(8, fp(1, 1), &[rect]).count_ones(), 0);
        assert_eq!(position_mask_oracle(&occ, fp(1, 1)).count_ones(), 0);
    }

    #[test]
    fn zero_pin_module_has_zero_mask() {
        let mut t = NetBoxTracker::new(2);
        t.add_pin(0, 3, 3);
        assert_eq!(wire_mask(&t, &[], 8).to_grid(), Grid::filled(8, 0));
        assert_eq!(wire_mask_oracle(&t, &[], 8), Grid::filled(8, 0));
    }

    #[test]
    fn boxes_covering_everything_give_zero() {
        let mut t = NetBoxTracker::new(2);
        for net in 0..2 {
            t.add_pin(net, -10, -10);
            t.add_pin(net, 20, 20);
        }
        let pins = [GridPin { dx: 0, dy: 0, net: 0 }, GridPin { dx: 1, dy: 1, net: 1 }];
        assert_eq!(wire_mask(&t, &pins, 8).to_grid(), Grid::filled(8, 0));
    }

    #[test]
    fn two_pins_two_boxes_two_cells_away() {
        // Pin A at offset (0,0) on net 0 whose box is the single cell (2,0):
        // two cells to the right. Pin B at offset (2,1) on net 1 whose box is
        // the single cell (2,3): two cells above B's landing spot (2,1).
        let mut t = NetBoxTracker::new(2);
        t.add_pin(0, 2, 0);
        t.add_pin(1, 2, 3);
        let pins = [GridPin { dx: 0, dy: 0, net: 0 }, GridPin { dx: 2, dy: 1, net: 1 }];
        let fast = wire_mask(&t, &pins, 8);
        assert_eq!(fast.get(0, 0), 4);
        assert_eq!(fast.to_grid(), wire_mask_oracle(&t, &pins, 8));
    }

    #[test]
    fn single_pin_is_manhattan_distance() {
        let mut t = NetBoxTracker::new(1);
        t.add_pin(0, 3, 5);
        let pins = [GridPin { dx: 0, dy: 0, net: 0 }];
        let fast = wire_mask(&t, &pins, 8).to_grid();
        let oracle = wire_mask_oracle(&t, &pins, 8);
        for x in 0..8 {
            for y in 0..8 {
                let d = (x as i64 - 3).abs() + (y as i64 - 5).abs();
                assert_eq!(*fast.get(x, y), d);
                assert_eq!(*oracle.get(x, y), d);
            }
        }
    }

    #[test]
    fn same_net_pins_can_diverge_from_joint_delta() {
        // Two pins of one net: they agree with the joint delta unless both
        // pins fall on the same side of the box.
        let mut t = NetBoxTracker::new(1);
        t.add_pin(0, 4, 0);
        let pins = [GridPin { dx: 0, dy: 0, net: 0 }, GridPin { dx: 3, dy: 0, net: 0 }];
        let fast = wire_mask(&t, &pins, 8);
        let oracle = wire_mask_oracle(&t, &pins, 8);
        // at x = 2 the pins land at 2 and 5: per-pin 2 + 1, jointly 2 + 1
        assert_eq!(fast.get(2, 0), 3);
        assert_eq!(*oracle.get(2, 0), 3);
        // at x = 4 the pins land at 4 and 7: per-pin 0 + 3, jointly 3
        assert_eq!(fast.get(4, 0), 3);
        // both pins left of the box: per-pin counts the stretch twice
        assert_eq!(fast.get(0, 0), 4 + 1);
        assert_eq!(*oracle.get(0, 0), 4);
    }

    fn arb_tracker(n: i64, nets: usize) -> impl Strategy<Value = NetBoxTracker> {
        proptest::collection::vec(proptest::option::of((0..n, 0..n, 0..n, 0..n)), nets).prop_map(move |bs| {
            let mut t = NetBoxTracker::new(bs.len());
            for (net, b) in bs.into_iter().enumerate() {
                if let Some((x0, y0, x1, y1)) = b {
                    t.add_pin(net, x0, y0);
                    t.add_pin(net, x1, y1);
                }
            }
            t
        })
    }

    proptest! {
        #[test]
        fn fast_wire_mask_equals_oracle(
            t in arb_tracker(12, 6),
            offsets in proptest::collection::vec((0i64..3, 0i64..3), 0..5),
        ) {
            // at most one pin per net
            let pins: Vec<GridPin> = offsets
                .iter()
                .enumerate()
                .map(|(i, &(dx, dy))| GridPin { dx, dy, net: i })
                .collect();
            prop_assert_eq!(wire_mask(&t, &pins, 12).to_grid(), wire_mask_oracle(&t, &pins, 12));
        }

        #[test]
        #[allow(clippy::needless_range_loop)]
        fn wire_mask_is_sum_of_per_pin_outer_sums(
            t in arb_tracker(10, 5),
            offsets in proptest::collection::vec((0i64..3, 0i64..3, 0usize..5), 0..6),
        ) {
            let n = 10;
            let pins: Vec<GridPin> = offsets.iter().map(|&(dx, dy, net)| GridPin { dx, dy, net }).collect();
            let mut rebuilt = Grid::filled(n, 0i64);
            for p in &pins {
                if let Some((xs, ys)) = pin_axis_costs(&t, p, n) {
                    for x in 0..n {
                        for y in 0..n {
                            let v = *rebuilt.get(x, y);
                            rebuilt.set(x, y, v + xs[x] + ys[y]);
                        }
                    }
                }
            }
            let fast = wire_mask(&t, &pins, n).to_grid();
            prop_assert_eq!(&fast, &rebuilt);
            prop_assert!(fast.as_slice().iter().all(|&v| v >= 0));
        }

        #[test]
        fn wire_mask_translation_invariant(
            boxes in proptest::collection::vec((0i64..8, 0i64..8, 0i64..8, 0i64..8), 1..4),
            dx in 0i64..2, dy in 0i64..2,
        ) {
            let n = 10;
            let mut t = NetBoxTracker::new(boxes.len());
            let mut shifted = NetBoxTracker::new(boxes.len());
            for (net, &(x0, y0, x1, y1)) in boxes.iter().enumerate() {
                t.add_pin(net, x0, y0);
                t.add_pin(net, x1, y1);
                shifted.add_pin(net, x0 + 1, y0 + 1);
                shifted.add_pin(net, x1 + 1, y1 + 1);
            }
            let pins: Vec<GridPin> = (0..boxes.len()).map(|net| GridPin { dx, dy, net }).collect();
            let a = wire_mask(&t, &pins, n);
            let b = wire_mask(&shifted, &pins, n);
            for x in 0..n - 1 {
                for y in 0..n - 1 {
                    prop_assert_eq!(a.get(x, y), b.get(x + 1, y + 1));
                }
            }
        }

        #[test]
        fn position_mask_equals_oracle_and_is_monotone(
            n in 4usize..14,
            w in 1usize..4, h in 1usize..4,
            rects in proptest::collection::vec((0usize..14, 0usize..14, 1usize..4, 1usize..4), 0..6),
        ) {
            let rects: Vec<CellRect> = rects
                .into_iter()
                .filter(|&(x, y, rw, rh)| x + rw <= n && y + rh <= n)
                .map(|(x, y, w, h)| CellRect { x, y, w, h })
                .collect();
            let mut occ = Grid::filled(n, false);
            let mut prev = position_mask(n, fp(w, h), &[]);
            for k in 0..rects.len() {
                occ.fill_rect(rects[k], true);
                let fast = position_mask(n, fp(w, h), &rects[..=k]);
                prop_assert_eq!(&fast, &position_mask_oracle(&occ, fp(w, h)));
                for (a, b) in prev.as_slice().iter().zip(fast.as_slice()) {
                    prop_assert!(*a || !*b, "a zero turned into a one");
                }
                prev = fast;
            }
        }
    }
}
