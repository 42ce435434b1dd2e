//! Portable graymap/pixmap output. Image rows run from the top of the
//! canvas (largest y) down; columns follow x.

use std::fmt::Write as _;

use macroplace::{Grid, GridNetlist, Placement};

/// Plain P2 graymap of a grid, min-max scaled to 0..=255, with a comment
/// line recording the original range. A constant grid renders white when
/// positive and black otherwise.
pub fn pgm(grid: &Grid<f64>) -> String {
    let n = grid.n();
    let vals = grid.as_slice();
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level = |v: f64| -> u8 {
        if max > min {
            ((v - min) / (max - min) * 255.0).round() as u8
        } else if v > 0.0 {
            255
        } else {
            0
        }
    };
    let mut s = format!("P2\n# min={min} max={max}\n{n} {n}\n255\n");
    for row in 0..n {
        let y = n - 1 - row;
        let line: Vec<String> = (0..n).map(|x| level(*grid.get(x, y)).to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn bool_grid(g: &Grid<bool>) -> Grid<f64> {
    g.map(|&b| if b { 1.0 } else { 0.0 })
}

const EMPTY: u8 = 255;
const BLOCKED: u8 = 40;

/// Binary P6 pixmap of the layout, `scale` pixels per cell. Macros get
/// distinct gray levels by module id; fixed blockages are dark.
pub fn layout_ppm(gn: &GridNetlist<'_>, placement: &Placement, scale: usize) -> Vec<u8> {
    let n = gn.spec.n;
    let scale = scale.max(1);
    let mut shade = Grid::filled(n, EMPTY);
    let grid = gn.initial_grid();
    for (i, &b) in grid.view_mask().as_slice().iter().enumerate() {
        if b {
            shade.as_mut_slice()[i] = BLOCKED;
        }
    }
    let count = placement.len().max(1);
    for (k, (&m, &cell)) in placement.iter().enumerate() {
        let level = (80 + k * 150 / count) as u8;
        let fp = gn.footprint(m);
        for x in cell.x..(cell.x + fp.w).min(n) {
            for y in cell.y..(cell.y + fp.h).min(n) {
                shade.set(x, y, level);
            }
        }
    }
    let side = n * scale;
    let mut out = format!("P6\n# scale={scale} cells={n}\n{side} {side}\n255\n").into_bytes();
    out.reserve(side * side * 3);
    for py in 0..side {
        let y = n - 1 - py / scale;
        for px in 0..side {
            let v = *shade.get(px / scale, y);
            out.extend_from_slice(&[v, v, v]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_is_white() {
        let s = pgm(&Grid::filled(3, 1.0));
        assert!(s.starts_with("P2\n# min=1 max=1\n3 3\n255\n"));
        assert_eq!(s.lines().skip(4).collect::<Vec<_>>(), ["255 255 255"; 3]);
    }

    #[test]
    fn scaled_range_and_orientation() {
        let mut g = Grid::filled(2, 0.0);
        g.set(1, 1, 4.0);
        g.set(0, 1, 2.0);
        let s = pgm(&g);
        let body: Vec<&str> = s.lines().skip(4).collect();
        assert_eq!(s.lines().nth(1), Some("# min=0 max=4"));
        // top row is y = 1
        assert_eq!(body, ["128 255", "0 0"]);
    }
}
