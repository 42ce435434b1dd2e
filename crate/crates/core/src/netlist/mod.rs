//! In-memory circuit model: modules, pins, nets and the canvas they live on.
//!
//! Pin offsets are stored relative to the bottom-left corner of their module.
//! Fixed positions are stored relative to the canvas origin, so every
//! downstream computation can treat the canvas as `[0, W) x [0, H)`.

mod bookshelf;
mod order;

use std::collections::BTreeSet;

use thiserror::Error;

pub use bookshelf::{parse_bookshelf, parse_scl, read_placement, write_nets, write_nodes, write_pl, BookshelfText};
pub use order::compute_place_order;

/// Which Bookshelf file an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Nodes,
    Nets,
    Pl,
    Scl,
}

impl std::fmt::Display for FileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FileKind::Nodes => ".nodes",
            FileKind::Nets => ".nets",
            FileKind::Pl => ".pl",
            FileKind::Scl => ".scl",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetlistError {
    #[error("{file} line {line}: syntax error: {msg}")]
    Syntax { file: FileKind, line: usize, msg: String },
    #[error("{file}: count mismatch: header declares {declared} {what}, body has {found}")]
    CountMismatch {
        file: FileKind,
        what: &'static str,
        declared: usize,
        found: usize,
    },
    #[error("{file} line {line}: reference to unknown module `{name}`")]
    UnknownModule { file: FileKind, line: usize, name: String },
    #[error("{file} line {line}: duplicate module `{name}`")]
    DuplicateModule { file: FileKind, line: usize, name: String },
    #[error("{file} line {line}: pin offset ({dx}, {dy}) lies outside module `{module}`")]
    PinOutOfBounds {
        file: FileKind,
        line: usize,
        module: String,
        dx: f64,
        dy: f64,
    },
    #[error("missing canvas dimensions: supply a .scl file or an explicit canvas size")]
    MissingCanvas,
    #[error("invalid canvas {width} x {height}")]
    InvalidCanvas { width: f64, height: f64 },
    #[error("dangling reference: {0}")]
    Dangling(String),
    #[error("macro selection is empty")]
    EmptySelection,
    #[error("module id {0} not found")]
    ModuleNotFound(usize),
    #[error("module `{0}` is fixed and cannot be selected as a macro")]
    NotMovable(String),
    #[error("module `{0}` has zero area and cannot be placed as a macro")]
    ZeroAreaMacro(String),
    #[error("macro `{name}` ({width} x {height}) is larger than the canvas")]
    MacroTooLarge { name: String, width: f64, height: f64 },
    #[error("macro `{0}` has no position in the placement")]
    Unplaced(String),
    #[error("module `{name}` at ({x}, {y}) extends outside the canvas")]
    OutsideCanvas { name: String, x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PinDirection {
    Input,
    Output,
    Bidirectional,
}

impl PinDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            PinDirection::Input => "I",
            PinDirection::Output => "O",
            PinDirection::Bidirectional => "B",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Module {
    pub id: usize,
    pub name: String,
    pub width: f64,
    pub height: f64,
    /// Declared as a terminal in the `.nodes` file.
    pub terminal: bool,
    /// False for terminals and for nodes marked `/FIXED` in the `.pl` file.
    pub movable: bool,
    /// Bottom-left corner relative to the canvas origin, for fixed modules.
    pub fixed_position: Option<(f64, f64)>,
    pub pins: Vec<usize>,
}

impl Module {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Ports are fixed modules without size.
    pub fn is_port(&self) -> bool {
        !self.movable && self.width == 0.0 && self.height == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pin {
    pub id: usize,
    pub module: usize,
    /// Offset from the module's bottom-left corner, in physical units.
    pub offset: (f64, f64),
    pub net: usize,
    pub direction: PinDirection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub id: usize,
    pub name: String,
    pub pins: Vec<usize>,
}

/// Physical canvas. `origin` is the lower-left corner in file coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canvas {
    pub origin: (f64, f64),
    pub width: f64,
    pub height: f64,
}

impl Canvas {
    pub fn new(width: f64, height: f64) -> Self {
        Canvas {
            origin: (0.0, 0.0),
            width,
            height,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    pub modules: Vec<Module>,
    pub pins: Vec<Pin>,
    pub nets: Vec<Net>,
    pub canvas: Canvas,
    /// Module ids selected for placement, ascending.
    pub macros: Vec<usize>,
}

/// Rule used to pick the macros out of all movable modules.
#[derive(Debug, Clone, PartialEq)]
pub enum MacroSelection {
    /// Exactly these module ids.
    Explicit(Vec<usize>),
    /// Movable modules with area at least this value (and nonzero).
    MinArea(f64),
    /// The `k` largest movable modules by area, ties broken by id.
    TopK(usize),
}

impl Default for MacroSelection {
    fn default() -> Self {
        MacroSelection::MinArea(0.0)
    }
}

impl Netlist {
    /// Assembles a netlist from parts, filling the module and net pin lists
    /// from the pins and validating every cross reference.
    pub fn from_parts(
        modules: Vec<Module>,
        pins: Vec<Pin>,
        nets: Vec<Net>,
        canvas: Canvas,
    ) -> Result<Self, NetlistError> {
        let mut netlist = Netlist {
            modules,
            pins,
            nets,
            canvas,
            macros: Vec::new(),
        };
        for m in &mut netlist.modules {
            m.pins.clear();
        }
        for n in &mut netlist.nets {
            n.pins.clear();
        }
        for p in &netlist.pins {
            let m = netlist
                .modules
                .get_mut(p.module)
                .ok_or_else(|| NetlistError::Dangling(format!("pin {} -> module {}", p.id, p.module)))?;
            m.pins.push(p.id);
            let n = netlist
                .nets
                .get_mut(p.net)
                .ok_or_else(|| NetlistError::Dangling(format!("pin {} -> net {}", p.id, p.net)))?;
            n.pins.push(p.id);
        }
        netlist.validate()?;
        Ok(netlist)
    }

    /// Checks ids, cross references, pin bounds and canvas size.
    pub fn validate(&self) -> Result<(), NetlistError> {
        let c = &self.canvas;
        if !(c.width > 0.0 && c.height > 0.0) || !c.width.is_finite() || !c.height.is_finite() {
            return Err(NetlistError::InvalidCanvas {
                width: c.width,
                height: c.height,
            });
        }
        for (i, m) in self.modules.iter().enumerate() {
            if m.id != i {
                return Err(NetlistError::Dangling(format!(
                    "module `{}` has id {} at index {i}",
                    m.name, m.id
                )));
            }
            if !(m.width >= 0.0 && m.height >= 0.0) {
                return Err(NetlistError::Dangling(format!("module `{}` has negative size", m.name)));
            }
            for &p in &m.pins {
                if self.pins.get(p).map(|pin| pin.module) != Some(i) {
                    return Err(NetlistError::Dangling(format!("module `{}` -> pin {p}", m.name)));
                }
            }
        }
        for (i, p) in self.pins.iter().enumerate() {
            if p.id != i {
                return Err(NetlistError::Dangling(format!("pin id {} at index {i}", p.id)));
            }
            let m = self
                .modules
                .get(p.module)
                .ok_or_else(|| NetlistError::Dangling(format!("pin {i} -> module {}", p.module)))?;
            let net = self
                .nets
                .get(p.net)
                .ok_or_else(|| NetlistError::Dangling(format!("pin {i} -> net {}", p.net)))?;
            if !net.pins.contains(&i) {
                return Err(NetlistError::Dangling(format!(
                    "pin {i} missing from net `{}`",
                    net.name
                )));
            }
            let (dx, dy) = p.offset;
            if !(0.0..=m.width).contains(&dx) || !(0.0..=m.height).contains(&dy) {
                return Err(NetlistError::Dangling(format!(
                    "pin {i} offset ({dx}, {dy}) outside module `{}`",
                    m.name
                )));
            }
        }
        for (i, n) in self.nets.iter().enumerate() {
            if n.id != i {
                return Err(NetlistError::Dangling(format!(
                    "net `{}` has id {} at index {i}",
                    n.name, n.id
                )));
            }
            if n.pins.is_empty() {
                return Err(NetlistError::Dangling(format!("net `{}` has no pins", n.name)));
            }
            let unique: BTreeSet<_> = n.pins.iter().collect();
            if unique.len() != n.pins.len() {
                return Err(NetlistError::Dangling(format!("net `{}` lists a pin twice", n.name)));
            }
            for &p in &n.pins {
                if self.pins.get(p).map(|pin| pin.net) != Some(i) {
                    return Err(NetlistError::Dangling(format!("net `{}` -> pin {p}", n.name)));
                }
            }
        }
        Ok(())
    }

    /// Module ids of everything `select` picks, ascending. Errors when the
    /// result is empty or a chosen macro cannot fit on the canvas.
    pub fn select_macros(&self, select: &MacroSelection) -> Result<Vec<usize>, NetlistError> {
        let movable = |m: &&Module| m.movable && m.area() > 0.0;
        let mut ids: Vec<usize> = match select {
            MacroSelection::Explicit(list) => {
                let mut out = Vec::with_capacity(list.len());
                for &id in list {
                    let m = self.modules.get(id).ok_or(NetlistError::ModuleNotFound(id))?;
                    if !m.movable {
                        return Err(NetlistError::NotMovable(m.name.clone()));
                    }
                    if m.area() <= 0.0 {
                        return Err(NetlistError::ZeroAreaMacro(m.name.clone()));
                    }
                    out.push(id);
                }
                out
            }
            MacroSelection::MinArea(min) => self
                .modules
                .iter()
                .filter(movable)
                .filter(|m| m.area() >= *min)
                .map(|m| m.id)
                .collect(),
            MacroSelection::TopK(k) => {
                let mut c: Vec<&Module> = self.modules.iter().filter(movable).collect();
                c.sort_by(|a, b| b.area().total_cmp(&a.area()).then(a.id.cmp(&b.id)));
                c.into_iter().take(*k).map(|m| m.id).collect()
            }
        };
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(NetlistError::EmptySelection);
        }
        for &id in &ids {
            let m = &self.modules[id];
            if m.width > self.canvas.width || m.height > self.canvas.height {
                return Err(NetlistError::MacroTooLarge {
                    name: m.name.clone(),
                    width: m.width,
                    height: m.height,
                });
            }
        }
        Ok(ids)
    }

    /// Applies a macro selection in place.
    pub fn with_macros(mut self, select: &MacroSelection) -> Result<Self, NetlistError> {
        self.macros = self.select_macros(select)?;
        Ok(self)
    }

    pub fn module_by_name(&self, name: &str) -> Option<&Module> {
        self.modules.iter().find(|m| m.name == name)
    }

    /// Distinct nets touching a module, ascending.
    pub fn nets_of(&self, module: usize) -> Vec<usize> {
        let mut nets: Vec<usize> = self.modules[module].pins.iter().map(|&p| self.pins[p].net).collect();
        nets.sort_unstable();
        nets.dedup();
        nets
    }

    pub fn num_terminals(&self) -> usize {
        self.modules.iter().filter(|m| m.terminal).count()
    }
}
