//! Scenario files: a sectioned key/value text format with unit-suffixed
//! values, documented in the repository README. Loading converts everything
//! to SI; saving writes the canonical SI form, so a load/save/load round
//! trip reproduces the scenario exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::discretize::{BoundaryCondition, BoundaryConditionSet, SourceTerm, State};
use crate::error::{Error, Result};
use crate::grid::{build_grid, Axis, Side};
use crate::precond::{PrecondMethod, PreconditionerSpec};
use crate::rockfluid::{CapillaryKind, CapillaryModel, FluidProps, RelPermModel, RockProps};
use crate::sim::{NewtonParams, Problem};
use crate::spe10;

pub const DAY: f64 = 86400.0;
pub const MILLIDARCY: f64 = 9.869233e-16;
pub const CENTIPOISE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub gravity_axis: Option<Axis>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PermSpec {
    /// Isotropic uniform permeability (m^2).
    Uniform(f64),
    /// Isotropic lognormal field: ln K has mean ln(mean) and std dev sigma.
    Lognormal { mean: f64, sigma: f64, seed: u64 },
    /// Slab of an SPE10-layout dataset.
    Spe10 {
        perm_file: PathBuf,
        poro_file: PathBuf,
        file_dims: (usize, usize, usize),
        origin: (usize, usize, usize),
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RockSpec {
    pub porosity: f64,
    pub perm: PermSpec,
    pub s_wr: f64,
    pub s_nr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BcKindSpec {
    Dirichlet { p_w: f64, s_w: f64 },
    /// Total volumetric rate (m^3/s, positive into the domain) split over
    /// the selected faces by area.
    Neumann { rate: f64, s_w: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcSpec {
    pub tag: String,
    pub axis: Axis,
    pub side: Side,
    /// Inclusive index windows per axis; `None` = the whole range.
    pub window: [Option<(usize, usize)>; 3],
    pub kind: BcKindSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub tag: String,
    pub cell: (usize, usize, usize),
    /// Volumetric rates (m^3/s), converted to mass rates on build.
    pub q_w: f64,
    pub q_n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: GridSpec,
    pub fluid: FluidProps,
    pub rock: RockSpec,
    pub capillary: CapillaryModel,
    pub relperm: RelPermModel,
    pub initial_p_w: f64,
    pub initial_s_n: f64,
    pub bcs: Vec<BcSpec>,
    pub sources: Vec<SourceSpec>,
    pub dt: f64,
    pub t_final: f64,
    pub solver: NewtonParams,
    pub precond: PreconditionerSpec,
    pub output_dir: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// unit handling

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quantity {
    Dimensionless,
    Length,
    Pressure,
    Permeability,
    Viscosity,
    Density,
    Time,
    VolumeRate,
    Acceleration,
}

fn unit_factor(quantity: Quantity, unit: Option<&str>) -> Option<f64> {
    use Quantity::*;
    match (quantity, unit) {
        (Dimensionless, None) => Some(1.0),
        (Length, Some("m")) => Some(1.0),
        (Pressure, Some("Pa")) => Some(1.0),
        (Pressure, Some("kPa")) => Some(1e3),
        (Pressure, Some("MPa")) => Some(1e6),
        (Pressure, Some("bar")) => Some(1e5),
        (Permeability, Some("mD")) => Some(MILLIDARCY),
        (Permeability, Some("D")) => Some(1e3 * MILLIDARCY),
        (Permeability, Some("m2")) => Some(1.0),
        (Viscosity, Some("cP")) => Some(CENTIPOISE),
        (Viscosity, Some("Pa.s")) => Some(1.0),
        (Density, Some("kg/m3")) => Some(1.0),
        (Time, Some("day")) => Some(DAY),
        (Time, Some("hour")) => Some(3600.0),
        (Time, Some("s")) => Some(1.0),
        (VolumeRate, Some("m3/day")) => Some(1.0 / DAY),
        (VolumeRate, Some("m3/s")) => Some(1.0),
        (Acceleration, Some("m/s2")) => Some(1.0),
        _ => None,
    }
}

fn si_unit_name(quantity: Quantity) -> Option<&'static str> {
    use Quantity::*;
    match quantity {
        Dimensionless => None,
        Length => Some("m"),
        Pressure => Some("Pa"),
        Permeability => Some("m2"),
        Viscosity => Some("Pa.s"),
        Density => Some("kg/m3"),
        Time => Some("s"),
        VolumeRate => Some("m3/s"),
        Acceleration => Some("m/s2"),
    }
}

// ---------------------------------------------------------------------------
// raw parse layer

struct RawSection {
    kind: String,
    tag: Option<String>,
    line: usize,
    entries: BTreeMap<String, (String, usize)>,
}

struct RawFile {
    path: String,
    sections: Vec<RawSection>,
}

impl RawFile {
    fn parse(path_label: &str, text: &str) -> Result<RawFile> {
        let mut sections: Vec<RawSection> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let inner = inner.strip_suffix(']').ok_or_else(|| Error::Parse {
                    path: path_label.into(),
                    line: line_no,
                    message: "unterminated section header".into(),
                })?;
                let mut parts = inner.split_whitespace();
                let kind = parts.next().unwrap_or("").to_string();
                if kind.is_empty() {
                    return Err(Error::Parse {
                        path: path_label.into(),
                        line: line_no,
                        message: "empty section header".into(),
                    });
                }
                let tag = parts.next().map(|s| s.to_string());
                if parts.next().is_some() {
                    return Err(Error::Parse {
                        path: path_label.into(),
                        line: line_no,
                        message: "section header has too many fields".into(),
                    });
                }
                sections.push(RawSection {
                    kind,
                    tag,
                    line: line_no,
                    entries: BTreeMap::new(),
                });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path_label.into(),
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let section = sections.last_mut().ok_or_else(|| Error::Parse {
                path: path_label.into(),
                line: line_no,
                message: "key/value pair before any section header".into(),
            })?;
            let key = key.trim().to_string();
            if section
                .entries
                .insert(key.clone(), (value.trim().to_string(), line_no))
                .is_some()
            {
                return Err(Error::Parse {
                    path: path_label.into(),
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(RawFile { path: path_label.into(), sections })
    }
}

struct SectionReader<'a> {
    path: &'a str,
    section: &'a RawSection,
    used: std::cell::RefCell<Vec<String>>,
}

impl<'a> SectionReader<'a> {
    fn new(path: &'a str, section: &'a RawSection) -> Self {
        Self { path, section, used: std::cell::RefCell::new(Vec::new()) }
    }

    fn err(&self, line: usize, message: String) -> Error {
        Error::Parse { path: self.path.into(), line, message }
    }

    fn raw(&self, key: &str) -> Option<(&'a str, usize)> {
        self.used.borrow_mut().push(key.to_string());
        self.section.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn require(&self, key: &str) -> Result<(&'a str, usize)> {
        self.raw(key).ok_or_else(|| {
            self.err(
                self.section.line,
                format!("section [{}] is missing `{key}`", self.section.kind),
            )
        })
    }

    fn quantity(&self, key: &str, q: Quantity) -> Result<f64> {
        let (text, line) = self.require(key)?;
        self.parse_quantity(key, text, line, q)
    }

    fn quantity_or(&self, key: &str, q: Quantity, default: f64) -> Result<f64> {
        match self.raw(key) {
            Some((text, line)) => self.parse_quantity(key, text, line, q),
            None => Ok(default),
        }
    }

    fn parse_quantity(&self, key: &str, text: &str, line: usize, q: Quantity) -> Result<f64> {
        let mut parts = text.split_whitespace();
        let number = parts.next().unwrap_or("");
        let unit = parts.next();
        if parts.next().is_some() {
            return Err(self.err(line, format!("`{key}`: too many fields in `{text}`")));
        }
        let value: f64 = number
            .parse()
            .map_err(|_| self.err(line, format!("`{key}`: `{number}` is not a number")))?;
        match unit_factor(q, unit) {
            Some(f) => Ok(value * f),
            None => Err(self.err(
                line,
                format!(
                    "`{key}`: unit `{}` is not valid for this quantity",
                    unit.unwrap_or("<none>")
                ),
            )),
        }
    }

    fn integer(&self, key: &str) -> Result<usize> {
        let (text, line) = self.require(key)?;
        text.parse()
            .map_err(|_| self.err(line, format!("`{key}`: `{text}` is not a non-negative integer")))
    }

    fn integer_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            Some((text, line)) => text.parse().map_err(|_| {
                self.err(line, format!("`{key}`: `{text}` is not a non-negative integer"))
            }),
            None => Ok(default),
        }
    }

    fn word(&self, key: &str) -> Result<(&'a str, usize)> {
        self.require(key)
    }

    fn word_or(&self, key: &str, default: &'a str) -> (&'a str, usize) {
        self.raw(key).unwrap_or((default, self.section.line))
    }

    fn boolean_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            Some(("true", _)) => Ok(true),
            Some(("false", _)) => Ok(false),
            Some((other, line)) => {
                Err(self.err(line, format!("`{key}`: expected true/false, got `{other}`")))
            }
            None => Ok(default),
        }
    }

    /// Inclusive range `a..b`.
    fn range(&self, key: &str) -> Result<Option<(usize, usize)>> {
        match self.raw(key) {
            None => Ok(None),
            Some((text, line)) => {
                let (a, b) = text.split_once("..").ok_or_else(|| {
                    self.err(line, format!("`{key}`: expected `lo..hi`, got `{text}`"))
                })?;
                let lo = a.trim().parse().map_err(|_| {
                    self.err(line, format!("`{key}`: `{a}` is not an index"))
                })?;
                let hi = b.trim().parse().map_err(|_| {
                    self.err(line, format!("`{key}`: `{b}` is not an index"))
                })?;
                Ok(Some((lo, hi)))
            }
        }
    }

    fn index_triple(&self, key: &str) -> Result<(usize, usize, usize)> {
        let (text, line) = self.require(key)?;
        let parts: Vec<&str> = text.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(self.err(line, format!("`{key}`: expected three indices")));
        }
        let mut vals = [0usize; 3];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .parse()
                .map_err(|_| self.err(line, format!("`{key}`: `{p}` is not an index")))?;
        }
        Ok((vals[0], vals[1], vals[2]))
    }

    fn finish(&self) -> Result<()> {
        for (key, (_, line)) in &self.section.entries {
            if !self.used.borrow().contains(key) {
                return Err(self.err(
                    *line,
                    format!("unknown key `{key}` in section [{}]", self.section.kind),
                ));
            }
        }
        Ok(())
    }
}

fn parse_axis(path: &str, text: &str, line: usize) -> Result<Option<Axis>> {
    match text {
        "none" => Ok(None),
        "x" => Ok(Some(Axis::X)),
        "y" => Ok(Some(Axis::Y)),
        "z" => Ok(Some(Axis::Z)),
        other => Err(Error::Parse {
            path: path.into(),
            line,
            message: format!("`{other}` is not an axis (none|x|y|z)"),
        }),
    }
}

fn parse_side(path: &str, text: &str, line: usize) -> Result<(Axis, Side)> {
    match text {
        "xmin" => Ok((Axis::X, Side::Low)),
        "xmax" => Ok((Axis::X, Side::High)),
        "ymin" => Ok((Axis::Y, Side::Low)),
        "ymax" => Ok((Axis::Y, Side::High)),
        "zmin" => Ok((Axis::Z, Side::Low)),
        "zmax" => Ok((Axis::Z, Side::High)),
        other => Err(Error::Parse {
            path: path.into(),
            line,
            message: format!("`{other}` is not a side (xmin|xmax|ymin|ymax|zmin|zmax)"),
        }),
    }
}

// ---------------------------------------------------------------------------
// loading

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    parse_scenario(&path.display().to_string(), &text, &base)
}

pub fn parse_scenario(path_label: &str, text: &str, base_dir: &Path) -> Result<Scenario> {
    let raw = RawFile::parse(path_label, text)?;
    let path = raw.path.as_str();

    let mut grid = None;
    let mut fluid = None;
    let mut rock: Option<RockSpec> = None;
    let mut rock_line = 0;
    let mut capillary = None;
    let mut relperm = RelPermModel::Quadratic;
    let mut initial = None;
    let mut bcs = Vec::new();
    let mut sources = Vec::new();
    let mut time = None;
    let mut solver = NewtonParams::default();
    let mut precond = PreconditionerSpec::default();
    let mut output_dir = None;

    for section in &raw.sections {
        let r = SectionReader::new(path, section);
        match section.kind.as_str() {
            "grid" => {
                let (axis_text, axis_line) = r.word_or("gravity_axis", "none");
                grid = Some(GridSpec {
                    nx: r.integer("nx")?,
                    ny: r.integer("ny")?,
                    nz: r.integer("nz")?,
                    lx: r.quantity("lx", Quantity::Length)?,
                    ly: r.quantity("ly", Quantity::Length)?,
                    lz: r.quantity("lz", Quantity::Length)?,
                    gravity_axis: parse_axis(path, axis_text, axis_line)?,
                });
                r.finish()?;
            }
            "fluid" => {
                fluid = Some(FluidProps {
                    rho_w: r.quantity("rho_w", Quantity::Density)?,
                    rho_n: r.quantity("rho_n", Quantity::Density)?,
                    mu_w: r.quantity("mu_w", Quantity::Viscosity)?,
                    mu_n: r.quantity("mu_n", Quantity::Viscosity)?,
                    g: r.quantity_or("gravity", Quantity::Acceleration, 9.81)?,
                });
                r.finish()?;
            }
            "rock" => {
                rock_line = section.line;
                rock = Some(RockSpec {
                    porosity: r.quantity("porosity", Quantity::Dimensionless)?,
                    perm: PermSpec::Uniform(
                        r.quantity("permeability", Quantity::Permeability)?,
                    ),
                    s_wr: r.quantity_or("s_wr", Quantity::Dimensionless, 0.0)?,
                    s_nr: r.quantity_or("s_nr", Quantity::Dimensionless, 0.0)?,
                });
                r.finish()?;
            }
            "rock.lognormal" => {
                let spec = rock.as_mut().ok_or_else(|| Error::Parse {
                    path: path.into(),
                    line: section.line,
                    message: "[rock.lognormal] must follow [rock]".into(),
                })?;
                spec.perm = PermSpec::Lognormal {
                    mean: r.quantity("mean", Quantity::Permeability)?,
                    sigma: r.quantity("sigma", Quantity::Dimensionless)?,
                    seed: r.integer_or("seed", 0)? as u64,
                };
                r.finish()?;
            }
            "rock.spe10" => {
                let spec = rock.as_mut().ok_or_else(|| Error::Parse {
                    path: path.into(),
                    line: section.line,
                    message: "[rock.spe10] must follow [rock]".into(),
                })?;
                let (perm_file, _) = r.word("perm_file")?;
                let (poro_file, _) = r.word("poro_file")?;
                spec.perm = PermSpec::Spe10 {
                    perm_file: base_dir.join(perm_file),
                    poro_file: base_dir.join(poro_file),
                    file_dims: r.index_triple("file_dims")?,
                    origin: r.index_triple("origin")?,
                };
                r.finish()?;
            }
            "capillary" => {
                let (model, model_line) = r.word("model")?;
                let kind = match model {
                    "linear" => CapillaryKind::Linear {
                        p0: r.quantity("p0", Quantity::Pressure)?,
                    },
                    "brooks_corey" => CapillaryKind::BrooksCorey {
                        pd: r.quantity("pd", Quantity::Pressure)?,
                        lambda: r.quantity("lambda", Quantity::Dimensionless)?,
                    },
                    other => {
                        return Err(Error::Parse {
                            path: path.into(),
                            line: model_line,
                            message: format!(
                                "`{other}` is not a capillary model (linear|brooks_corey)"
                            ),
                        })
                    }
                };
                capillary = Some(CapillaryModel {
                    kind,
                    epsilon_s: r.quantity_or("epsilon_s", Quantity::Dimensionless, 1e-3)?,
                });
                r.finish()?;
            }
            "relperm" => {
                let (model, model_line) = r.word("model")?;
                relperm = match model {
                    "quadratic" => RelPermModel::Quadratic,
                    "corey" => RelPermModel::Corey {
                        lambda: r.quantity("lambda", Quantity::Dimensionless)?,
                    },
                    other => {
                        return Err(Error::Parse {
                            path: path.into(),
                            line: model_line,
                            message: format!(
                                "`{other}` is not a relperm model (quadratic|corey)"
                            ),
                        })
                    }
                };
                r.finish()?;
            }
            "initial" => {
                initial = Some((
                    r.quantity("p_w", Quantity::Pressure)?,
                    r.quantity("s_n", Quantity::Dimensionless)?,
                ));
                r.finish()?;
            }
            "bc" => {
                let tag = section.tag.clone().ok_or_else(|| Error::Parse {
                    path: path.into(),
                    line: section.line,
                    message: "boundary sections need a tag: [bc <name>]".into(),
                })?;
                let (side_text, side_line) = r.word("side")?;
                let (axis, side) = parse_side(path, side_text, side_line)?;
                let window = [r.range("i")?, r.range("j")?, r.range("k")?];
                let (kind_text, kind_line) = r.word("type")?;
                let kind = match kind_text {
                    "dirichlet" => BcKindSpec::Dirichlet {
                        p_w: r.quantity("p_w", Quantity::Pressure)?,
                        s_w: r.quantity("s_w", Quantity::Dimensionless)?,
                    },
                    "neumann" => BcKindSpec::Neumann {
                        rate: r.quantity("rate", Quantity::VolumeRate)?,
                        s_w: r.quantity("s_w", Quantity::Dimensionless)?,
                    },
                    other => {
                        return Err(Error::Parse {
                            path: path.into(),
                            line: kind_line,
                            message: format!("`{other}` is not a bc type (dirichlet|neumann)"),
                        })
                    }
                };
                bcs.push(BcSpec { tag, axis, side, window, kind });
                r.finish()?;
            }
            "source" => {
                let tag = section.tag.clone().ok_or_else(|| Error::Parse {
                    path: path.into(),
                    line: section.line,
                    message: "source sections need a tag: [source <name>]".into(),
                })?;
                sources.push(SourceSpec {
                    tag,
                    cell: r.index_triple("cell")?,
                    q_w: r.quantity_or("q_w", Quantity::VolumeRate, 0.0)?,
                    q_n: r.quantity_or("q_n", Quantity::VolumeRate, 0.0)?,
                });
                r.finish()?;
            }
            "time" => {
                time = Some((
                    r.quantity("dt", Quantity::Time)?,
                    r.quantity("t_final", Quantity::Time)?,
                ));
                r.finish()?;
            }
            "solver" => {
                solver = NewtonParams {
                    abs_tol: r.quantity_or("newton_tol", Quantity::Dimensionless, 1e-6)?,
                    max_newton: r.integer_or("max_newton", 50)?,
                    linear_rel_tol: r.quantity_or(
                        "linear_tol",
                        Quantity::Dimensionless,
                        1e-12,
                    )?,
                    linear_max_iters: r.integer_or("linear_max_iters", 2000)?,
                    restart: r.integer_or("restart", 200)?,
                    line_search: r.boolean_or("line_search", false)?,
                };
                r.finish()?;
            }
            "precond" => {
                let (method_text, method_line) = r.word_or("method", "bf");
                let method = PrecondMethod::parse(method_text).ok_or_else(|| Error::Parse {
                    path: path.into(),
                    line: method_line,
                    message: format!(
                        "`{method_text}` is not a preconditioner (amg|cpr-amg1|cpr-amg2|bf|exact)"
                    ),
                })?;
                let mut spec = PreconditionerSpec::new(method);
                spec.theta_scalar =
                    r.quantity_or("theta_scalar", Quantity::Dimensionless, 0.25)?;
                spec.theta_coupled =
                    r.quantity_or("theta_coupled", Quantity::Dimensionless, 0.5)?;
                spec.max_levels = r.integer_or("max_levels", 25)?;
                spec.coarse_size = r.integer_or("coarse_size", 64)?;
                spec.cycles = r.integer_or("cycles", 1)?;
                spec.schur_as_printed = r.boolean_or("schur_as_printed", false)?;
                spec.exact_inner = r.boolean_or("exact_inner", false)?;
                precond = spec;
                r.finish()?;
            }
            "output" => {
                if let Some((dir, _)) = r.raw("dir") {
                    output_dir = Some(base_dir.join(dir));
                }
                r.finish()?;
            }
            other => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: section.line,
                    message: format!("unknown section [{other}]"),
                })
            }
        }
    }

    let missing = |what: &str| Error::Parse {
        path: path.into(),
        line: 1,
        message: format!("missing required section [{what}]"),
    };
    let grid = grid.ok_or_else(|| missing("grid"))?;
    let fluid = fluid.ok_or_else(|| missing("fluid"))?;
    let rock = rock.ok_or_else(|| missing("rock"))?;
    let capillary = capillary.ok_or_else(|| missing("capillary"))?;
    let (initial_p_w, initial_s_n) = initial.ok_or_else(|| missing("initial"))?;
    let (dt, t_final) = time.ok_or_else(|| missing("time"))?;
    let _ = rock_line;

    let scenario = Scenario {
        grid,
        fluid,
        rock,
        capillary,
        relperm,
        initial_p_w,
        initial_s_n,
        bcs,
        sources,
        dt,
        t_final,
        solver,
        precond,
        output_dir,
    };
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// Check every documented constraint; the error names the violated one.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let fail = |msg: String| Err(Error::Validation(msg));
        if g.nx == 0 || g.ny == 0 || g.nz == 0 {
            return fail("grid: cell counts must be >= 1".into());
        }
        if !(g.lx > 0.0 && g.ly > 0.0 && g.lz > 0.0) {
            return fail("grid: domain lengths must be positive".into());
        }
        let f = &self.fluid;
        if !(f.rho_w > 0.0 && f.rho_n > 0.0) {
            return fail("fluid: densities must be positive".into());
        }
        if !(f.mu_w > 0.0 && f.mu_n > 0.0) {
            return fail("fluid: viscosities must be positive".into());
        }
        if f.g < 0.0 {
            return fail("fluid: gravity must be non-negative".into());
        }
        if !(self.rock.porosity > 0.0 && self.rock.porosity <= 1.0) {
            return fail("rock: porosity must lie in (0, 1]".into());
        }
        if self.rock.s_wr < 0.0
            || self.rock.s_nr < 0.0
            || self.rock.s_wr + self.rock.s_nr >= 1.0
        {
            return fail("rock: residual saturations must satisfy 0 <= s_wr + s_nr < 1".into());
        }
        match &self.rock.perm {
            PermSpec::Uniform(k) => {
                if *k < 0.0 {
                    return fail("rock: permeability must be non-negative".into());
                }
            }
            PermSpec::Lognormal { mean, sigma, .. } => {
                if !(*mean > 0.0) {
                    return fail("rock.lognormal: mean permeability must be positive".into());
                }
                if *sigma < 0.0 {
                    return fail("rock.lognormal: sigma must be non-negative".into());
                }
            }
            PermSpec::Spe10 { perm_file, poro_file, file_dims, origin } => {
                for path in [perm_file, poro_file] {
                    if !path.exists() {
                        return fail(format!(
                            "rock.spe10: referenced file {} does not exist",
                            path.display()
                        ));
                    }
                }
                let (fx, fy, fz) = *file_dims;
                if fx == 0 || fy == 0 || fz == 0 {
                    return fail("rock.spe10: file_dims must be >= 1".into());
                }
                let (ox, oy, oz) = *origin;
                if ox + g.nx > fx || oy + g.ny > fy || oz + g.nz > fz {
                    return fail(
                        "rock.spe10: origin + grid extent exceeds the file dimensions".into(),
                    );
                }
            }
        }
        match self.capillary.kind {
            CapillaryKind::Linear { p0 } => {
                if !(p0 > 0.0) {
                    return fail("capillary: p0 must be positive".into());
                }
            }
            CapillaryKind::BrooksCorey { pd, lambda } => {
                if !(pd > 0.0) {
                    return fail("capillary: pd must be positive".into());
                }
                if !(lambda > 0.0) {
                    return fail("capillary: lambda must be positive".into());
                }
            }
        }
        if !(self.capillary.epsilon_s > 0.0 && self.capillary.epsilon_s < 0.5) {
            return fail("capillary: epsilon_s must lie in (0, 0.5)".into());
        }
        if let RelPermModel::Corey { lambda } = self.relperm {
            if !(lambda > 0.0) {
                return fail("relperm: lambda must be positive".into());
            }
        }
        if !(0.0..=1.0).contains(&self.initial_s_n) {
            return fail("initial: s_n must lie in [0, 1]".into());
        }
        for bc in &self.bcs {
            let dims = [g.nx, g.ny, g.nz];
            for (axis_idx, window) in bc.window.iter().enumerate() {
                if let Some((lo, hi)) = window {
                    if lo > hi || *hi >= dims[axis_idx] {
                        return fail(format!(
                            "bc {}: window {lo}..{hi} outside the grid",
                            bc.tag
                        ));
                    }
                }
            }
            let (BcKindSpec::Dirichlet { s_w, .. } | BcKindSpec::Neumann { s_w, .. }) = bc.kind;
            if !(0.0..=1.0).contains(&s_w) {
                return fail(format!("bc {}: s_w must lie in [0, 1]", bc.tag));
            }
        }
        for s in &self.sources {
            if s.cell.0 >= g.nx || s.cell.1 >= g.ny || s.cell.2 >= g.nz {
                return fail(format!("source {}: cell outside the grid", s.tag));
            }
        }
        if !(self.dt > 0.0) {
            return fail("time: dt must be positive".into());
        }
        if !(self.t_final >= self.dt) {
            return fail("time: t_final must be at least dt".into());
        }
        if !(self.solver.abs_tol > 0.0 && self.solver.linear_rel_tol > 0.0) {
            return fail("solver: tolerances must be positive".into());
        }
        if self.solver.max_newton == 0 || self.solver.linear_max_iters == 0 {
            return fail("solver: iteration caps must be >= 1".into());
        }
        if self.precond.cycles == 0 {
            return fail("precond: cycles must be >= 1".into());
        }
        Ok(())
    }

    /// Instantiate the runtime problem: build the grid, realize the
    /// permeability field, resolve boundary conditions face by face, and
    /// convert source rates to mass form.
    pub fn build(&self) -> Result<Problem> {
        self.validate()?;
        let g = &self.grid;
        let grid = build_grid(g.nx, g.ny, g.nz, g.lx, g.ly, g.lz, g.gravity_axis)?;
        let n = grid.n_cells();

        let (porosity, perm) = match &self.rock.perm {
            PermSpec::Uniform(k) => (vec![self.rock.porosity; n], vec![[*k; 3]; n]),
            PermSpec::Lognormal { mean, sigma, seed } => {
                let field = spe10::lognormal_field(n, *mean, *sigma, *seed);
                (vec![self.rock.porosity; n], field.iter().map(|&k| [k; 3]).collect())
            }
            PermSpec::Spe10 { perm_file, poro_file, file_dims, origin } => {
                let slab = spe10::load_spe10_slab(
                    perm_file,
                    poro_file,
                    *file_dims,
                    *origin,
                    (g.nx, g.ny, g.nz),
                )?;
                (slab.porosity, slab.perm)
            }
        };
        let rock = RockProps { porosity, perm, s_wr: self.rock.s_wr, s_nr: self.rock.s_nr };

        // resolve boundary conditions; later sections override earlier ones
        let mut bc = BoundaryConditionSet::no_flow(&grid);
        for spec in &self.bcs {
            let mut selected: Vec<usize> = Vec::new();
            for (idx, face) in grid.boundary_faces().iter().enumerate() {
                if face.axis != spec.axis || face.side != spec.side {
                    continue;
                }
                let (ci, cj, ck) = grid.cell_coords(face.cell);
                let coords = [ci, cj, ck];
                let inside = spec.window.iter().enumerate().all(|(a, w)| match w {
                    Some((lo, hi)) => coords[a] >= *lo && coords[a] <= *hi,
                    None => true,
                });
                if inside {
                    selected.push(idx);
                }
            }
            if selected.is_empty() {
                return Err(Error::Validation(format!(
                    "bc {}: selects no boundary faces",
                    spec.tag
                )));
            }
            match spec.kind {
                BcKindSpec::Dirichlet { p_w, s_w } => {
                    for idx in selected {
                        bc.per_face[idx] =
                            BoundaryCondition::DirichletPressureSaturation { p_w, s_w };
                    }
                }
                BcKindSpec::Neumann { rate, s_w } => {
                    let total_area: f64 =
                        selected.iter().map(|&i| grid.boundary_faces()[i].area).sum();
                    for idx in selected {
                        let share = grid.boundary_faces()[idx].area / total_area;
                        bc.per_face[idx] = BoundaryCondition::NeumannTotalFlux {
                            rate: rate * share,
                            s_w_inflow: s_w,
                        };
                    }
                }
            }
        }

        // sources: volumetric (m^3/s) to mass rate per bulk volume
        let mut src = SourceTerm::zero(n);
        let volume = grid.cell_volume();
        for s in &self.sources {
            let cell = grid.cell_index(s.cell.0, s.cell.1, s.cell.2);
            src.q_w[cell] += self.fluid.rho_w * s.q_w / volume;
            src.q_n[cell] += self.fluid.rho_n * s.q_n / volume;
        }

        Ok(Problem {
            grid,
            rock,
            fluid: self.fluid,
            capillary: self.capillary,
            relperm: self.relperm,
            bc,
            src,
            initial: State::uniform(n, self.initial_p_w, self.initial_s_n),
            dt: self.dt,
            t_final: self.t_final,
        })
    }

    /// Serialize in canonical SI form; `load` of the result reproduces the
    /// scenario exactly.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let q = |v: f64, quantity: Quantity| match si_unit_name(quantity) {
            Some(u) => format!("{v:?} {u}"),
            None => format!("{v:?}"),
        };
        let g = &self.grid;
        writeln!(out, "[grid]").unwrap();
        writeln!(out, "nx = {}", g.nx).unwrap();
        writeln!(out, "ny = {}", g.ny).unwrap();
        writeln!(out, "nz = {}", g.nz).unwrap();
        writeln!(out, "lx = {}", q(g.lx, Quantity::Length)).unwrap();
        writeln!(out, "ly = {}", q(g.ly, Quantity::Length)).unwrap();
        writeln!(out, "lz = {}", q(g.lz, Quantity::Length)).unwrap();
        let axis = match g.gravity_axis {
            None => "none",
            Some(Axis::X) => "x",
            Some(Axis::Y) => "y",
            Some(Axis::Z) => "z",
        };
        writeln!(out, "gravity_axis = {axis}").unwrap();

        writeln!(out, "\n[fluid]").unwrap();
        writeln!(out, "rho_w = {}", q(self.fluid.rho_w, Quantity::Density)).unwrap();
        writeln!(out, "rho_n = {}", q(self.fluid.rho_n, Quantity::Density)).unwrap();
        writeln!(out, "mu_w = {}", q(self.fluid.mu_w, Quantity::Viscosity)).unwrap();
        writeln!(out, "mu_n = {}", q(self.fluid.mu_n, Quantity::Viscosity)).unwrap();
        writeln!(out, "gravity = {}", q(self.fluid.g, Quantity::Acceleration)).unwrap();

        writeln!(out, "\n[rock]").unwrap();
        writeln!(out, "porosity = {:?}", self.rock.porosity).unwrap();
        let uniform_perm = match self.rock.perm {
            PermSpec::Uniform(k) => k,
            _ => 0.0,
        };
        writeln!(out, "permeability = {}", q(uniform_perm, Quantity::Permeability)).unwrap();
        writeln!(out, "s_wr = {:?}", self.rock.s_wr).unwrap();
        writeln!(out, "s_nr = {:?}", self.rock.s_nr).unwrap();
        match &self.rock.perm {
            PermSpec::Uniform(_) => {}
            PermSpec::Lognormal { mean, sigma, seed } => {
                writeln!(out, "\n[rock.lognormal]").unwrap();
                writeln!(out, "mean = {}", q(*mean, Quantity::Permeability)).unwrap();
                writeln!(out, "sigma = {sigma:?}").unwrap();
                writeln!(out, "seed = {seed}").unwrap();
            }
            PermSpec::Spe10 { perm_file, poro_file, file_dims, origin } => {
                writeln!(out, "\n[rock.spe10]").unwrap();
                writeln!(out, "perm_file = {}", perm_file.display()).unwrap();
                writeln!(out, "poro_file = {}", poro_file.display()).unwrap();
                writeln!(
                    out,
                    "file_dims = {} {} {}",
                    file_dims.0, file_dims.1, file_dims.2
                )
                .unwrap();
                writeln!(out, "origin = {} {} {}", origin.0, origin.1, origin.2).unwrap();
            }
        }

        writeln!(out, "\n[capillary]").unwrap();
        match self.capillary.kind {
            CapillaryKind::Linear { p0 } => {
                writeln!(out, "model = linear").unwrap();
                writeln!(out, "p0 = {}", q(p0, Quantity::Pressure)).unwrap();
            }
            CapillaryKind::BrooksCorey { pd, lambda } => {
                writeln!(out, "model = brooks_corey").unwrap();
                writeln!(out, "pd = {}", q(pd, Quantity::Pressure)).unwrap();
                writeln!(out, "lambda = {lambda:?}").unwrap();
            }
        }
        writeln!(out, "epsilon_s = {:?}", self.capillary.epsilon_s).unwrap();

        writeln!(out, "\n[relperm]").unwrap();
        match self.relperm {
            RelPermModel::Quadratic => writeln!(out, "model = quadratic").unwrap(),
            RelPermModel::Corey { lambda } => {
                writeln!(out, "model = corey").unwrap();
                writeln!(out, "lambda = {lambda:?}").unwrap();
            }
        }

        writeln!(out, "\n[initial]").unwrap();
        writeln!(out, "p_w = {}", q(self.initial_p_w, Quantity::Pressure)).unwrap();
        writeln!(out, "s_n = {:?}", self.initial_s_n).unwrap();

        for bc in &self.bcs {
            writeln!(out, "\n[bc {}]", bc.tag).unwrap();
            let side = match (bc.axis, bc.side) {
                (Axis::X, Side::Low) => "xmin",
                (Axis::X, Side::High) => "xmax",
                (Axis::Y, Side::Low) => "ymin",
                (Axis::Y, Side::High) => "ymax",
                (Axis::Z, Side::Low) => "zmin",
                (Axis::Z, Side::High) => "zmax",
            };
            writeln!(out, "side = {side}").unwrap();
            for (axis_name, window) in ["i", "j", "k"].iter().zip(&bc.window) {
                if let Some((lo, hi)) = window {
                    writeln!(out, "{axis_name} = {lo}..{hi}").unwrap();
                }
            }
            match bc.kind {
                BcKindSpec::Dirichlet { p_w, s_w } => {
                    writeln!(out, "type = dirichlet").unwrap();
                    writeln!(out, "p_w = {}", q(p_w, Quantity::Pressure)).unwrap();
                    writeln!(out, "s_w = {s_w:?}").unwrap();
                }
                BcKindSpec::Neumann { rate, s_w } => {
                    writeln!(out, "type = neumann").unwrap();
                    writeln!(out, "rate = {}", q(rate, Quantity::VolumeRate)).unwrap();
                    writeln!(out, "s_w = {s_w:?}").unwrap();
                }
            }
        }

        for s in &self.sources {
            writeln!(out, "\n[source {}]", s.tag).unwrap();
            writeln!(out, "cell = {} {} {}", s.cell.0, s.cell.1, s.cell.2).unwrap();
            writeln!(out, "q_w = {}", q(s.q_w, Quantity::VolumeRate)).unwrap();
            writeln!(out, "q_n = {}", q(s.q_n, Quantity::VolumeRate)).unwrap();
        }

        writeln!(out, "\n[time]").unwrap();
        writeln!(out, "dt = {}", q(self.dt, Quantity::Time)).unwrap();
        writeln!(out, "t_final = {}", q(self.t_final, Quantity::Time)).unwrap();

        writeln!(out, "\n[solver]").unwrap();
        writeln!(out, "newton_tol = {:?}", self.solver.abs_tol).unwrap();
        writeln!(out, "max_newton = {}", self.solver.max_newton).unwrap();
        writeln!(out, "linear_tol = {:?}", self.solver.linear_rel_tol).unwrap();
        writeln!(out, "linear_max_iters = {}", self.solver.linear_max_iters).unwrap();
        writeln!(out, "restart = {}", self.solver.restart).unwrap();
        writeln!(out, "line_search = {}", self.solver.line_search).unwrap();

        writeln!(out, "\n[precond]").unwrap();
        writeln!(out, "method = {}", self.precond.method.name()).unwrap();
        writeln!(out, "theta_scalar = {:?}", self.precond.theta_scalar).unwrap();
        writeln!(out, "theta_coupled = {:?}", self.precond.theta_coupled).unwrap();
        writeln!(out, "max_levels = {}", self.precond.max_levels).unwrap();
        writeln!(out, "coarse_size = {}", self.precond.coarse_size).unwrap();
        writeln!(out, "cycles = {}", self.precond.cycles).unwrap();
        writeln!(out, "schur_as_printed = {}", self.precond.schur_as_printed).unwrap();
        writeln!(out, "exact_inner = {}", self.precond.exact_inner).unwrap();

        if let Some(dir) = &self.output_dir {
            writeln!(out, "\n[output]").unwrap();
            writeln!(out, "dir = {}", dir.display()).unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config_string())?;
        Ok(())
    }
}
