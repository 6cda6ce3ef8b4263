use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use super::HarnessError;
use crate::dvd_stepper::{DvdSolverConfig, Preconditioning};
use crate::grid::{BoundaryCondition, UniformGrid};
use crate::model::{DissipationKind, FreeEnergy};
use crate::relaxed_stepper::{default_c0, RelaxedScheme, Stabilizer};
use crate::solver::KrylovConfig;
use crate::tableau::{builtin_tableau, DvdTableau};

/// Gradient-flow model; fixes the dissipation operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    AllenCahn,
    CahnHilliard,
}

impl Model {
    pub fn kind(self) -> DissipationKind {
        match self {
            Model::AllenCahn => DissipationKind::L2,
            Model::CahnHilliard => DissipationKind::Hminus1,
        }
    }
}

#[derive(Debug, Clone)]
pub enum SchemeSpec {
    Dvd(DvdTableau),
    Relaxed(RelaxedScheme),
}

impl SchemeSpec {
    pub fn name(&self) -> String {
        match self {
            SchemeSpec::Dvd(t) => t.name.clone(),
            SchemeSpec::Relaxed(s) => s.name(),
        }
    }

    /// Names accepted by the `scheme` key. `IEQ` takes its exponent from
    /// `fe.m`; the stabilizer is replaced later if `stab.*` keys are set.
    pub fn parse(name: &str, m: Option<u32>, fe: &FreeEnergy) -> Result<Self, HarnessError> {
        let key = name.trim().to_ascii_uppercase().replace(['/', '_'], "-");
        let relaxed = match key.as_str() {
            "R-DVD-1" | "RDVD1" => Some(RelaxedScheme::RDvd1),
            "SAV-CN" | "SAV" => Some(RelaxedScheme::SavCn),
            "IEQ" => Some(RelaxedScheme::Ieq(m.unwrap_or(1))),
            "IEQ-1" => Some(RelaxedScheme::Ieq(1)),
            "IEQ-2" => Some(RelaxedScheme::Ieq(2)),
            "STABILIZED" => Some(RelaxedScheme::Stabilized(Stabilizer::default_for(fe))),
            _ => None,
        };
        if let Some(s) = relaxed {
            if let (Some(want), Some(have)) = (m, s.exponent()) {
                if want != have {
                    return Err(HarnessError::Config(format!(
                        "fe.m = {want} conflicts with scheme {name} (m = {have})"
                    )));
                }
            }
            return Ok(SchemeSpec::Relaxed(s));
        }
        builtin_tableau(name.trim())
            .map(SchemeSpec::Dvd)
            .map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `a·sin x` (in 2D, `a·sin x`).
    Sine {
        amplitude: f64,
    },
    /// `a·sin x₁·sin x₂`.
    Sine2d {
        amplitude: f64,
    },
    /// `+1` strictly inside the circle centred in the domain, `−1` elsewhere.
    Circle {
        radius: f64,
    },
    /// Independent uniform values in `[−a, a]`.
    Random {
        amplitude: f64,
    },
    Constant {
        value: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputConfig {
    /// No files are written when `None`.
    pub dir: Option<PathBuf>,
    pub csv: String,
    /// Write a snapshot every this many steps; 0 disables.
    pub snapshot_every: usize,
    /// Additional snapshot times, matched to the nearest step.
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: Model,
    pub scheme: SchemeSpec,
    pub grid: UniformGrid,
    /// `c0` is already resolved against the scheme's exponent.
    pub fe: FreeEnergy,
    /// Scales the dissipation operator, `G → mobility·G`. Every scheme sees
    /// `h` only through `hG`, so the steppers run with `mobility·h`.
    pub mobility: f64,
    pub h: f64,
    pub t_end: f64,
    pub init: InitialCondition,
    pub seed: u64,
    pub output: OutputConfig,
    pub dvd: DvdSolverConfig,
    /// Linear solves of the relaxed schemes.
    pub linear: KrylovConfig,
    pub linear_precond: Preconditioning,
    /// Radius column factor; `None` omits the column.
    pub radius_scale: Option<f64>,
}

impl ExperimentConfig {
    pub fn kind(&self) -> DissipationKind {
        self.model.kind()
    }

    /// Number of steps; `t_end` must be a whole multiple of `h`.
    pub fn steps(&self) -> Result<usize, HarnessError> {
        steps_for(self.t_end, self.h)
    }

    pub fn parse(src: &str) -> Result<Self, HarnessError> {
        let mut kv = KeyValues::parse(src)?;
        let cfg = Self::from_keys(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    fn from_keys(kv: &mut KeyValues) -> Result<Self, HarnessError> {
        let model = match kv.string("model")?.to_ascii_uppercase().as_str() {
            "AC" | "ALLEN-CAHN" => Model::AllenCahn,
            "CH" | "CAHN-HILLIARD" => Model::CahnHilliard,
            other => return Err(HarnessError::Config(format!("unknown model `{other}`"))),
        };
        let grid = parse_grid(kv)?;

        let gamma = kv.number_or("fe.gamma", 1.0)?;
        let epsilon = kv.number_or("fe.epsilon", 0.1)?;
        let mut fe =
            FreeEnergy::double_well(gamma, epsilon).with_beta(kv.number_or("fe.beta", 0.0)?);
        let m = kv
            .optional("fe.m")
            .map(|s| parse_uint(&s, "fe.m"))
            .transpose()?;
        let mut scheme = SchemeSpec::parse(&kv.string("scheme")?, m.map(|m| m as u32), &fe)?;
        let exponent = match &scheme {
            SchemeSpec::Relaxed(s) => s.exponent(),
            SchemeSpec::Dvd(_) => None,
        };
        let c0 = match kv.optional("fe.c0") {
            Some(s) => parse_number(&s, "fe.c0")?,
            None => exponent.map_or(0.0, default_c0),
        };
        fe = fe.with_c0(c0);
        fe.validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let SchemeSpec::Relaxed(RelaxedScheme::Stabilized(s)) = &mut scheme {
            s.a0 = kv.number_or("stab.a0", s.a0)?;
            s.a1 = kv.number_or("stab.a1", s.a1)?;
            s.a2 = kv.number_or("stab.a2", s.a2)?;
        }

        let mobility = kv.number_or("fe.mobility", 1.0)?;
        if !(mobility > 0.0) {
            return Err(HarnessError::Config(format!(
                "fe.mobility must be positive, got {mobility}"
            )));
        }
        let h = kv.number("time.h")?;
        let t_end = kv.number("time.t_end")?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(HarnessError::Config(format!(
                "time.h must be positive, got {h}"
            )));
        }
        if !(t_end >= h && t_end.is_finite()) {
            return Err(HarnessError::Config(format!(
                "time.t_end = {t_end} must be at least time.h = {h}"
            )));
        }
        steps_for(t_end, h)?;

        let init = match kv.string("init.kind")?.to_ascii_lowercase().as_str() {
            "sine" => InitialCondition::Sine {
                amplitude: kv.number("init.amplitude")?,
            },
            "sine2d" => InitialCondition::Sine2d {
                amplitude: kv.number("init.amplitude")?,
            },
            "circle" => InitialCondition::Circle {
                radius: kv.number("init.radius")?,
            },
            "random" => InitialCondition::Random {
                amplitude: kv.number_or("init.amplitude", 0.02)?,
            },
            "constant" => InitialCondition::Constant {
                value: kv.number("init.value")?,
            },
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown initial condition `{other}`"
                )))
            }
        };
        let seed = kv
            .optional("seed")
            .map(|s| parse_uint(&s, "seed"))
            .transpose()?
            .unwrap_or(0) as u64;

        let output = OutputConfig {
            dir: kv.optional("output.dir").map(PathBuf::from),
            csv: kv
                .optional("output.csv")
                .unwrap_or_else(|| "timeseries.csv".into()),
            snapshot_every: kv
                .optional("output.snapshot_every")
                .map(|s| parse_uint(&s, "output.snapshot_every"))
                .transpose()?
                .unwrap_or(0),
            snapshot_times: match kv.optional("output.snapshot_times") {
                Some(s) => parse_list(&s, "output.snapshot_times")?,
                None => Vec::new(),
            },
        };

        let mut dvd = DvdSolverConfig::default_for(&grid);
        dvd.newton.eps_rel = kv.number_or("newton.eps_rel", dvd.newton.eps_rel)?;
        dvd.newton.eps_abs = kv.number_or("newton.eps_abs", dvd.newton.eps_abs)?;
        dvd.newton.max_iters = kv.uint_or("newton.max_iters", dvd.newton.max_iters)?;
        dvd.krylov.xi_rel = kv.number_or("krylov.xi_rel", dvd.krylov.xi_rel)?;
        dvd.krylov.xi_abs = kv.number_or("krylov.xi_abs", dvd.krylov.xi_abs)?;
        dvd.krylov.restart = kv.uint_or("krylov.restart", dvd.krylov.restart)?;
        dvd.krylov.max_iters = kv.uint_or("krylov.max_iters", dvd.krylov.max_iters)?;
        dvd.fallback_krylov.restart =
            kv.uint_or("krylov.fallback_restart", dvd.fallback_krylov.restart)?;
        let precond = parse_precond(kv, dvd.precond)?;
        dvd.precond = precond;

        let mut linear = KrylovConfig::linear();
        linear.xi_rel = kv.number_or("linear.xi_rel", linear.xi_rel)?;
        linear.xi_abs = kv.number_or("linear.xi_abs", linear.xi_abs)?;

        let radius_scale = match kv.optional("radius.scale") {
            Some(s) => Some(parse_number(&s, "radius.scale")?),
            None if kv.bool_or("radius.enabled", false)? => Some(1.0),
            None => None,
        };
        if radius_scale.is_some() && grid.dim() != 2 {
            return Err(HarnessError::Config("radius needs a 2D grid".into()));
        }

        Ok(Self {
            model,
            scheme,
            grid,
            fe,
            mobility,
            h,
            t_end,
            init,
            seed,
            output,
            dvd,
            linear,
            linear_precond: precond,
            radius_scale,
        })
    }
}

/// `round(t_end/h)`, or an error when `t_end` is not a whole multiple of `h`.
pub(crate) fn steps_for(t_end: f64, h: f64) -> Result<usize, HarnessError> {
    let n = (t_end / h).round();
    if n < 1.0 || (n * h - t_end).abs() > 1e-9 * t_end {
        return Err(HarnessError::Config(format!(
            "t_end = {t_end} is not a whole multiple of h = {h}"
        )));
    }
    Ok(n as usize)
}

fn parse_grid(kv: &mut KeyValues) -> Result<UniformGrid, HarnessError> {
    let dim = kv.uint_or("grid.dim", 1)?;
    let n = kv
        .optional("grid.n")
        .map(|s| parse_uint(&s, "grid.n"))
        .transpose()?;
    let nx = kv
        .optional("grid.nx")
        .map(|s| parse_uint(&s, "grid.nx"))
        .transpose()?
        .or(n);
    let ny = kv
        .optional("grid.ny")
        .map(|s| parse_uint(&s, "grid.ny"))
        .transpose()?
        .or(n);
    let length = kv.number_or("grid.length", 2.0 * PI)?;
    let lx = kv.number_or("grid.lx", length)?;
    let ly = kv.number_or("grid.ly", length)?;
    let origin = kv.number_or("grid.origin", 0.0)?;
    let x0 = kv.number_or("grid.x0", origin)?;
    let y0 = kv.number_or("grid.y0", origin)?;
    let bc = match kv
        .optional("grid.bc")
        .unwrap_or_else(|| "periodic".into())
        .to_ascii_lowercase()
        .as_str()
    {
        "periodic" => BoundaryCondition::Periodic,
        "neumann" => BoundaryCondition::NeumannHomogeneous,
        other => {
            return Err(HarnessError::Config(format!(
                "unknown boundary condition `{other}`"
            )))
        }
    };
    let nx = nx.ok_or_else(|| HarnessError::Config("missing grid.n".into()))?;
    let ny = if dim == 2 {
        ny.ok_or_else(|| HarnessError::Config("missing grid.ny".into()))?
    } else {
        1
    };
    UniformGrid::new(dim, [nx, ny], [lx, ly], bc)
        .map(|g| g.with_origin([x0, y0]))
        .map_err(|e| HarnessError::Config(e.to_string()))
}

fn parse_precond(
    kv: &mut KeyValues,
    default: Preconditioning,
) -> Result<Preconditioning, HarnessError> {
    let (d_block, d_overlap) = match default {
        Preconditioning::Schwarz { block, overlap }
        | Preconditioning::TwoLevel { block, overlap, .. } => (block, overlap),
        Preconditioning::None => (8, 1),
    };
    let kind = kv
        .optional("precond.kind")
        .unwrap_or_else(|| "schwarz".into());
    let block = kv.uint_or("precond.block", d_block)?;
    let overlap = kv.uint_or("precond.overlap", d_overlap)?;
    Ok(match kind.to_ascii_lowercase().as_str() {
        "none" => Preconditioning::None,
        "schwarz" => Preconditioning::Schwarz { block, overlap },
        "two-level" | "twolevel" => Preconditioning::TwoLevel {
            block,
            overlap,
            coarse: kv.uint_or("precond.coarse", 32)?,
        },
        other => {
            return Err(HarnessError::Config(format!(
                "unknown preconditioner `{other}`"
            )))
        }
    })
}

/// Numbers may carry a `pi` factor: `2pi`, `pi`, `0.5*pi`.
pub(crate) fn parse_number(s: &str, key: &str) -> Result<f64, HarnessError> {
    let t = s.trim();
    let bad = || HarnessError::Config(format!("{key}: `{s}` is not a number"));
    let v = if let Some(head) = t.strip_suffix("pi") {
        let head = head.trim().trim_end_matches('*').trim();
        if head.is_empty() {
            PI
        } else {
            head.parse::<f64>().map_err(|_| bad())? * PI
        }
    } else {
        t.parse::<f64>().map_err(|_| bad())?
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

fn parse_uint(s: &str, key: &str) -> Result<usize, HarnessError> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| HarnessError::Config(format!("{key}: `{s}` is not a non-negative integer")))
}

/// Comma-separated numbers.
pub fn parse_list(s: &str, key: &str) -> Result<Vec<f64>, HarnessError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_number(p, key))
        .collect()
}

/// Flat `key = value` lines; `#` starts a comment. Every key must be consumed.
struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    fn parse(src: &str) -> Result<Self, HarnessError> {
        let mut map = BTreeMap::new();
        for (no, raw) in src.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`", no + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(HarnessError::Config(format!("line {}: empty key", no + 1)));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(HarnessError::Config(format!(
                    "line {}: duplicate key `{k}`",
                    no + 1
                )));
            }
        }
        Ok(Self { map })
    }

    fn optional(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn string(&mut self, key: &str) -> Result<String, HarnessError> {
        self.optional(key)
            .ok_or_else(|| HarnessError::Config(format!("missing key `{key}`")))
    }

    fn number(&mut self, key: &str) -> Result<f64, HarnessError> {
        parse_number(&self.string(key)?, key)
    }

    fn number_or(&mut self, key: &str, default: f64) -> Result<f64, HarnessError> {
        self.optional(key)
            .map_or(Ok(default), |s| parse_number(&s, key))
    }

    fn uint_or(&mut self, key: &str, default: usize) -> Result<usize, HarnessError> {
        self.optional(key)
            .map_or(Ok(default), |s| parse_uint(&s, key))
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, HarnessError> {
        match self.optional(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => Err(HarnessError::Config(format!(
                "{key}: `{other}` is not a boolean"
            ))),
        }
    }

    fn finish(self) -> Result<(), HarnessError> {
        match self.map.keys().next() {
            Some(k) => Err(HarnessError::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}
