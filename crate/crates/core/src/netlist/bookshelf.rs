//! Reader and writer for the Bookshelf benchmark subset (`.nodes`, `.nets`,
//! `.pl`, `.scl`).
//!
//! `.nets` pin offsets are relative to the module center; the in-memory model
//! keeps them relative to the bottom-left corner.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Canvas, FileKind, Module, Net, Netlist, NetlistError, Pin, PinDirection};

/// Raw benchmark texts handed to [`parse_bookshelf`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BookshelfText<'a> {
    pub nodes: &'a str,
    pub nets: &'a str,
    pub pl: Option<&'a str>,
    pub scl: Option<&'a str>,
    /// Explicit canvas `(W, H)` with origin `(0, 0)`; wins over `.scl`.
    pub canvas: Option<(f64, f64)>,
}

// Slack allowed when checking pin offsets against module bounds.
const OFFSET_EPS: f64 = 1e-9;

struct Lines<'a> {
    file: FileKind,
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

struct Line {
    no: usize,
    tokens: Vec<String>,
}

impl<'a> Lines<'a> {
    fn new(file: FileKind, text: &'a str) -> Self {
        Lines {
            file,
            inner: text.lines().enumerate().peekable(),
        }
    }

    /// Next non-blank, non-comment line, split into tokens with `:` as its
    /// own token.
    fn next_line(&mut self) -> Option<Line> {
        for (i, raw) in self.inner.by_ref() {
            let content = raw.split('#').next().unwrap_or("");
            let tokens: Vec<String> = content
                .replace(':', " : ")
                .split_whitespace()
                .map(str::to_owned)
                .collect();
            if !tokens.is_empty() {
                return Some(Line { no: i + 1, tokens });
            }
        }
        None
    }

    fn syntax(&self, line: usize, msg: impl Into<String>) -> NetlistError {
        NetlistError::Syntax {
            file: self.file,
            line,
            msg: msg.into(),
        }
    }

    fn header(&mut self, kind: &str) -> Result<(), NetlistError> {
        match self.next_line() {
            Some(l) if l.tokens.len() >= 2 && l.tokens[0] == "UCLA" && l.tokens[1] == kind => Ok(()),
            Some(l) => Err(self.syntax(l.no, format!("expected `UCLA {kind} 1.0` header"))),
            None => Err(self.syntax(0, format!("empty file, expected `UCLA {kind} 1.0` header"))),
        }
    }

    fn number<T: std::str::FromStr>(&self, line: usize, tok: &str) -> Result<T, NetlistError> {
        tok.parse()
            .map_err(|_| self.syntax(line, format!("expected a number, found `{tok}`")))
    }

    /// Parses a `Key : value` line, returning `None` if the key differs.
    fn keyed<T: std::str::FromStr>(&self, line: &Line, key: &str) -> Result<Option<T>, NetlistError> {
        if line.tokens[0] != key {
            return Ok(None);
        }
        if line.tokens.len() != 3 || line.tokens[1] != ":" {
            return Err(self.syntax(line.no, format!("expected `{key} : <value>`")));
        }
        self.number(line.no, &line.tokens[2]).map(Some)
    }
}

fn real(lines: &Lines<'_>, line: usize, tok: &str) -> Result<f64, NetlistError> {
    let v: f64 = lines.number(line, tok)?;
    if !v.is_finite() {
        return Err(lines.syntax(line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

struct NodeRow {
    name: String,
    width: f64,
    height: f64,
    terminal: bool,
}

fn parse_nodes(text: &str) -> Result<Vec<NodeRow>, NetlistError> {
    let mut lines = Lines::new(FileKind::Nodes, text);
    lines.header("nodes")?;
    let mut num_nodes = None;
    let mut num_terminals = None;
    let mut rows = Vec::new();
    while let Some(line) = lines.next_line() {
        if let Some(v) = lines.keyed(&line, "NumNodes")? {
            num_nodes = Some(v);
            continue;
        }
        if let Some(v) = lines.keyed(&line, "NumTerminals")? {
            num_terminals = Some(v);
            continue;
        }
        let t = &line.tokens;
        if t.len() < 3 || t.len() > 4 {
            return Err(lines.syntax(line.no, "expected `name width height [terminal]`"));
        }
        let terminal = match t.get(3).map(String::as_str) {
            None => false,
            Some("terminal") | Some("terminal_NI") => true,
            Some(other) => return Err(lines.syntax(line.no, format!("unexpected token `{other}`"))),
        };
        let width = real(&lines, line.no, &t[1])?;
        let height = real(&lines, line.no, &t[2])?;
        if width < 0.0 || height < 0.0 {
            return Err(lines.syntax(line.no, "negative module size"));
        }
        rows.push(NodeRow {
            name: t[0].clone(),
            width,
            height,
            terminal,
        });
    }
    let declared: usize = num_nodes.ok_or_else(|| lines.syntax(0, "missing NumNodes"))?;
    if declared != rows.len() {
        return Err(NetlistError::CountMismatch {
            file: FileKind::Nodes,
            what: "nodes",
            declared,
            found: rows.len(),
        });
    }
    let terminals = rows.iter().filter(|r| r.terminal).count();
    let declared: usize = num_terminals.ok_or_else(|| lines.syntax(0, "missing NumTerminals"))?;
    if declared != terminals {
        return Err(NetlistError::CountMismatch {
            file: FileKind::Nodes,
            what: "terminals",
            declared,
            found: terminals,
        });
    }
    Ok(rows)
}

/// Reads `.scl` core rows and returns the bounding box of all rows.
pub fn parse_scl(text: &str) -> Result<Canvas, NetlistError> {
    let mut lines = Lines::new(FileKind::Scl, text);
    lines.header("scl")?;
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut num_rows = None;
    let mut rows = 0usize;
    let mut row_y = None;
    let mut row_h = None;
    let mut site_w = 1.0;
    while let Some(line) = lines.next_line() {
        let t = &line.tokens;
        match t[0].as_str() {
            "NumRows" => num_rows = lines.keyed::<usize>(&line, "NumRows")?,
            "CoreRow" => {
                row_y = None;
                row_h = None;
                site_w = 1.0;
            }
            "Coordinate" => row_y = lines.keyed::<f64>(&line, "Coordinate")?,
            "Height" => row_h = lines.keyed::<f64>(&line, "Height")?,
            "Sitewidth" => site_w = lines.keyed::<f64>(&line, "Sitewidth")?.unwrap_or(1.0),
            "SubrowOrigin" => {
                // SubrowOrigin : x NumSites : n
                if t.len() != 6 || t[1] != ":" || t[3] != "NumSites" || t[4] != ":" {
                    return Err(lines.syntax(line.no, "expected `SubrowOrigin : x NumSites : n`"));
                }
                let x = real(&lines, line.no, &t[2])?;
                let n = real(&lines, line.no, &t[5])?;
                let (Some(y), Some(h)) = (row_y, row_h) else {
                    return Err(lines.syntax(line.no, "SubrowOrigin before Coordinate/Height"));
                };
                x0 = x0.min(x);
                x1 = x1.max(x + n * site_w);
                y0 = y0.min(y);
                y1 = y1.max(y + h);
            }
            "End" => rows += 1,
            _ => {}
        }
    }
    if let Some(declared) = num_rows {
        if declared != rows {
            return Err(NetlistError::CountMismatch {
                file: FileKind::Scl,
                what: "rows",
                declared,
                found: rows,
            });
        }
    }
    if !(x1 > x0 && y1 > y0) {
        return Err(NetlistError::MissingCanvas);
    }
    Ok(Canvas {
        origin: (x0, y0),
        width: x1 - x0,
        height: y1 - y0,
    })
}

struct PlRow {
    x: f64,
    y: f64,
    fixed: bool,
}

fn parse_pl(text: &str, index: &HashMap<&str, usize>) -> Result<HashMap<usize, PlRow>, NetlistError> {
    let mut lines = Lines::new(FileKind::Pl, text);
    lines.header("pl")?;
    let mut out = HashMap::new();
    while let Some(line) = lines.next_line() {
        let t = &line.tokens;
        // name x y [: orient] [/FIXED | /FIXED_NI]
        if t.len() < 3 {
            return Err(lines.syntax(line.no, "expected `name x y : orient [/FIXED]`"));
        }
        let &id = index.get(t[0].as_str()).ok_or_else(|| NetlistError::UnknownModule {
            file: FileKind::Pl,
            line: line.no,
            name: t[0].clone(),
        })?;
        let x = real(&lines, line.no, &t[1])?;
        let y = real(&lines, line.no, &t[2])?;
        let mut fixed = false;
        let mut rest = t[3..].iter().map(String::as_str).peekable();
        if rest.peek() == Some(&":") {
            rest.next();
            rest.next();
        }
        for tok in rest {
            match tok {
                "/FIXED" | "/FIXED_NI" => fixed = true,
                other => return Err(lines.syntax(line.no, format!("unexpected token `{other}`"))),
            }
        }
        if out.insert(id, PlRow { x, y, fixed }).is_some() {
            return Err(NetlistError::DuplicateModule {
                file: FileKind::Pl,
                line: line.no,
                name: t[0].clone(),
            });
        }
    }
    Ok(out)
}

fn parse_direction(tok: &str) -> Option<PinDirection> {
    match tok {
        "I" => Some(PinDirection::Input),
        "O" => Some(PinDirection::Output),
        "B" => Some(PinDirection::Bidirectional),
        _ => None,
    }
}

fn parse_nets(
    text: &str,
    modules: &[Module],
    index: &HashMap<&str, usize>,
) -> Result<(Vec<Pin>, Vec<Net>), NetlistError> {
    let mut lines = Lines::new(FileKind::Nets, text);
    lines.header("nets")?;
    let mut num_nets = None;
    let mut num_pins = None;
    let mut pins = Vec::new();
    let mut nets = Vec::new();
    while let Some(line) = lines.next_line() {
        if let Some(v) = lines.keyed(&line, "NumNets")? {
            num_nets = Some(v);
            continue;
        }
        if let Some(v) = lines.keyed(&line, "NumPins")? {
            num_pins = Some(v);
            continue;
        }
        let t = &line.tokens;
        if t[0] != "NetDegree" || t.len() < 3 || t[1] != ":" || t.len() > 4 {
            return Err(lines.syntax(line.no, "expected `NetDegree : <d> [name]`"));
        }
        let degree: usize = lines.number(line.no, &t[2])?;
        if degree == 0 {
            return Err(lines.syntax(line.no, "net with zero pins"));
        }
        let net_id = nets.len();
        let name = t.get(3).cloned().unwrap_or_else(|| format!("n{net_id}"));
        let mut net_pins = Vec::with_capacity(degree);
        for _ in 0..degree {
            let pl = lines
                .next_line()
                .ok_or_else(|| lines.syntax(line.no, format!("net `{name}` ends before its {degree} pins")))?;
            let p = &pl.tokens;
            if p[0] == "NetDegree" {
                return Err(lines.syntax(pl.no, format!("net `{name}` declares {degree} pins but lists fewer")));
            }
            let &module = index.get(p[0].as_str()).ok_or_else(|| NetlistError::UnknownModule {
                file: FileKind::Nets,
                line: pl.no,
                name: p[0].clone(),
            })?;
            // name [dir] [: dx dy]
            let mut rest = &p[1..];
            let direction = match rest.first().and_then(|d| parse_direction(d)) {
                Some(d) => {
                    rest = &rest[1..];
                    d
                }
                None => PinDirection::Bidirectional,
            };
            let (cx, cy) = match rest {
                [] => (0.0, 0.0),
                [colon, dx, dy] if colon == ":" => (real(&lines, pl.no, dx)?, real(&lines, pl.no, dy)?),
                _ => return Err(lines.syntax(pl.no, "expected `name I/O : dx dy`")),
            };
            let m = &modules[module];
            let mut dx = cx + m.width / 2.0;
            let mut dy = cy + m.height / 2.0;
            let tol_x = OFFSET_EPS * m.width.max(1.0);
            let tol_y = OFFSET_EPS * m.height.max(1.0);
            if dx < -tol_x || dx > m.width + tol_x || dy < -tol_y || dy > m.height + tol_y {
                return Err(NetlistError::PinOutOfBounds {
                    file: FileKind::Nets,
                    line: pl.no,
                    module: m.name.clone(),
                    dx: cx,
                    dy: cy,
                });
            }
            dx = dx.clamp(0.0, m.width);
            dy = dy.clamp(0.0, m.height);
            let id = pins.len();
            pins.push(Pin {
                id,
                module,
                offset: (dx, dy),
                net: net_id,
                direction,
            });
            net_pins.push(id);
        }
        nets.push(Net {
            id: net_id,
            name,
            pins: net_pins,
        });
    }
    let declared: usize = num_nets.ok_or_else(|| lines.syntax(0, "missing NumNets"))?;
    if declared != nets.len() {
        return Err(NetlistError::CountMismatch {
            file: FileKind::Nets,
            what: "nets",
            declared,
            found: nets.len(),
        });
    }
    let declared: usize = num_pins.ok_or_else(|| lines.syntax(0, "missing NumPins"))?;
    if declared != pins.len() {
        return Err(NetlistError::CountMismatch {
            file: FileKind::Nets,
            what: "pins",
            declared,
            found: pins.len(),
        });
    }
    Ok((pins, nets))
}

/// Parses a benchmark into a validated [`Netlist`] with an empty macro set.
///
/// Terminals are fixed. Nodes marked `/FIXED` in the `.pl` file become fixed
/// at their listed position; other `.pl` positions are ignored.
pub fn parse_bookshelf(text: &BookshelfText<'_>) -> Result<Netlist, NetlistError> {
    let canvas = match (text.canvas, text.scl) {
        (Some((w, h)), _) => Canvas::new(w, h),
        (None, Some(scl)) => parse_scl(scl)?,
        (None, None) => return Err(NetlistError::MissingCanvas),
    };
    let rows = parse_nodes(text.nodes)?;
    let mut index = HashMap::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if index.insert(r.name.as_str(), i).is_some() {
            return Err(NetlistError::DuplicateModule {
                file: FileKind::Nodes,
                line: 0,
                name: r.name.clone(),
            });
        }
    }
    let mut modules: Vec<Module> = rows
        .iter()
        .enumerate()
        .map(|(id, r)| Module {
            id,
            name: r.name.clone(),
            width: r.width,
            height: r.height,
            terminal: r.terminal,
            movable: !r.terminal,
            fixed_position: None,
            pins: Vec::new(),
        })
        .collect();
    if let Some(pl) = text.pl {
        for (id, row) in parse_pl(pl, &index)? {
            let m = &mut modules[id];
            if row.fixed {
                m.movable = false;
            }
            if !m.movable {
                m.fixed_position = Some((row.x - canvas.origin.0, row.y - canvas.origin.1));
            }
        }
    }
    let (pins, nets) = parse_nets(text.nets, &modules, &index)?;
    Netlist::from_parts(modules, pins, nets, canvas)
}

/// Reads macro positions from a `.pl` file: canvas-relative bottom-left
/// corners per module id. Fixed modules keep their netlist position. Every
/// selected macro must be listed and lie inside the canvas.
pub fn read_placement(netlist: &Netlist, pl: &str) -> Result<Vec<Option<(f64, f64)>>, NetlistError> {
    let index: HashMap<&str, usize> = netlist.modules.iter().map(|m| (m.name.as_str(), m.id)).collect();
    let rows = parse_pl(pl, &index)?;
    let (ox, oy) = netlist.canvas.origin;
    let mut out: Vec<Option<(f64, f64)>> = netlist
        .modules
        .iter()
        .map(|m| if m.movable { None } else { m.fixed_position })
        .collect();
    for (id, row) in rows {
        if netlist.modules[id].movable {
            out[id] = Some((row.x - ox, row.y - oy));
        }
    }
    const TOL: f64 = 1e-9;
    for &id in &netlist.macros {
        let m = &netlist.modules[id];
        let (x, y) = out[id].ok_or_else(|| NetlistError::Unplaced(m.name.clone()))?;
        let c = &netlist.canvas;
        if x < -TOL || y < -TOL || x + m.width > c.width + TOL || y + m.height > c.height + TOL {
            return Err(NetlistError::OutsideCanvas {
                name: m.name.clone(),
                x: x + ox,
                y: y + oy,
            });
        }
    }
    Ok(out)
}

pub fn write_nodes(netlist: &Netlist) -> String {
    let mut s = String::from("UCLA nodes 1.0\n\n");
    let _ = writeln!(s, "NumNodes : {}", netlist.modules.len());
    let _ = writeln!(s, "NumTerminals : {}", netlist.num_terminals());
    for m in &netlist.modules {
        let _ = write!(s, "\t{}\t{}\t{}", m.name, m.width, m.height);
        if m.terminal {
            s.push_str("\tterminal");
        }
        s.push('\n');
    }
    s
}

pub fn write_nets(netlist: &Netlist) -> String {
    let mut s = String::from("UCLA nets 1.0\n\n");
    let _ = writeln!(s, "NumNets : {}", netlist.nets.len());
    let _ = writeln!(s, "NumPins : {}", netlist.pins.len());
    for n in &netlist.nets {
        let _ = writeln!(s, "NetDegree : {} {}", n.pins.len(), n.name);
        for &p in &n.pins {
            let pin = &netlist.pins[p];
            let m = &netlist.modules[pin.module];
            let _ = writeln!(
                s,
                "\t{} {} : {} {}",
                m.name,
                pin.direction.as_str(),
                pin.offset.0 - m.width / 2.0,
                pin.offset.1 - m.height / 2.0
            );
        }
    }
    s
}

/// Writes a `.pl` file. Fixed modules come from the netlist and carry
/// `/FIXED`; movable modules are written where `positions[id]` is set
/// (canvas-relative bottom-left corners) and omitted otherwise.
pub fn write_pl(netlist: &Netlist, positions: &[Option<(f64, f64)>]) -> String {
    let (ox, oy) = netlist.canvas.origin;
    let mut s = String::from("UCLA pl 1.0\n\n");
    for m in &netlist.modules {
        let (pos, fixed) = if m.movable {
            (positions.get(m.id).copied().flatten(), false)
        } else {
            (m.fixed_position, true)
        };
        if let Some((x, y)) = pos {
            let _ = write!(s, "{}\t{}\t{}\t: N", m.name, x + ox, y + oy);
            if fixed {
                s.push_str(" /FIXED");
            }
            s.push('\n');
        }
    }
    s
}
