use super::config::steps_for;
use super::{
    initial_condition, ExperimentConfig, HarnessError, InitialCondition, Simulation, TimeSeriesRow,
};
use crate::grid::{Field, GridError};

/// Discrete L² distance `sqrt(ΔV Σ (f − g)²)`.
pub fn l2_distance(f: &Field, g: &Field) -> Result<f64, GridError> {
    if f.grid() != g.grid() {
        return Err(GridError::Mismatch);
    }
    let s: f64 = f
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((f.grid().cell_volume() * s).sqrt())
}

/// Area-equivalent radius `sqrt(A/π)` of the `φ > 0` phase, with each cell
/// contributing the volume fraction `clamp((φ + 1)/2, 0, 1)`.
pub fn radius(f: &Field) -> Result<f64, HarnessError> {
    let g = f.grid();
    if g.dim() != 2 {
        return Err(HarnessError::Config(format!(
            "radius needs a 2D field, got dim {}",
            g.dim()
        )));
    }
    let fraction: f64 = f
        .values()
        .iter()
        .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
        .sum();
    Ok((fraction * g.cell_volume() / std::f64::consts::PI).sqrt())
}

/// Shrinking-circle check against the sharp-interface law
/// `R² = R₀² − 2kt`, `k = mobility·γ·scale²`, in the reported units.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusVerdict {
    pub r0: f64,
    pub k: f64,
    /// Rows after `5ε²/mobility` must strictly decrease in radius.
    pub relax_time: f64,
    pub monotone: bool,
    /// First row time at which the radius failed to decrease.
    pub first_violation: Option<f64>,
    /// Largest `|R² − (R₀² − 2kt)|/R₀²` over `t ∈ [T/4, 3T/4]`.
    pub max_rel_error: f64,
}

impl RadiusVerdict {
    pub const TOLERANCE: f64 = 0.05;

    pub fn law(&self, t: f64) -> f64 {
        self.r0 * self.r0 - 2.0 * self.k * t
    }

    pub fn pass(&self) -> bool {
        self.monotone && self.max_rel_error < Self::TOLERANCE
    }
}

pub fn radius_benchmark(
    cfg: &ExperimentConfig,
    rows: &[TimeSeriesRow],
) -> Result<RadiusVerdict, HarnessError> {
    let (InitialCondition::Circle { radius: r }, Some(scale)) = (&cfg.init, cfg.radius_scale)
    else {
        return Err(HarnessError::Config(
            "the radius benchmark needs init.kind = circle and radius.scale".into(),
        ));
    };
    let (r0, k) = (r * scale, cfg.mobility * cfg.fe.gamma * scale * scale);
    let relax_time = 5.0 * cfg.fe.epsilon.powi(2) / cfg.mobility;
    let radii: Vec<(f64, f64)> = rows
        .iter()
        .map(|row| {
            row.radius
                .map(|r| (row.time, r))
                .ok_or_else(|| HarnessError::Config("rows carry no radius".into()))
        })
        .collect::<Result<_, _>>()?;
    let first_violation = radii
        .windows(2)
        .find(|w| w[0].0 > relax_time && w[1].1 >= w[0].1)
        .map(|w| w[1].0);
    let t_end = radii.last().map_or(0.0, |p| p.0);
    let max_rel_error = radii
        .iter()
        .filter(|(t, _)| (0.25 * t_end..=0.75 * t_end).contains(t))
        .map(|&(t, r)| (r * r - (r0 * r0 - 2.0 * k * t)).abs() / (r0 * r0))
        .fold(0.0, f64::max);
    Ok(RadiusVerdict {
        r0,
        k,
        relax_time,
        monotone: first_violation.is_none(),
        first_violation,
        max_rel_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub error: f64,
    /// `log(e_prev/e)/log(h_prev/h)`, which is `log₂` of the error ratio for
    /// halved steps; `None` on the first row.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub scheme: String,
    pub reference_h: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn rates(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.rate).collect()
    }
}

fn integrate(cfg: &ExperimentConfig, h: f64, phi0: &Field) -> Result<Field, HarnessError> {
    let steps = steps_for(cfg.t_end, h)?;
    let mut sim = Simulation::with_field(cfg, h, phi0.clone())?;
    for _ in 0..steps {
        sim.advance()?;
    }
    Ok(sim.field().clone())
}

/// Errors at `t_end` for each step size, sorted from coarse to fine, against
/// the same scheme run at `h_min/32`. Every step size must be a whole
/// multiple of `h_min` and divide `t_end`.
pub fn convergence_study(
    cfg: &ExperimentConfig,
    hs: &[f64],
) -> Result<ConvergenceTable, HarnessError> {
    if hs.len() < 3 {
        return Err(HarnessError::Config(format!(
            "a convergence study needs at least 3 step sizes, got {}",
            hs.len()
        )));
    }
    let mut hs = hs.to_vec();
    if hs.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(HarnessError::Config("step sizes must be positive".into()));
    }
    hs.sort_by(|a, b| b.total_cmp(a));
    let h_min = hs[hs.len() - 1];
    for w in hs.windows(2) {
        if w[0] == w[1] {
            return Err(HarnessError::Config(format!(
                "duplicate step size {}",
                w[0]
            )));
        }
    }
    for &h in &hs {
        steps_for(cfg.t_end, h)?;
        let ratio = h / h_min;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(HarnessError::Config(format!(
                "step sizes do not nest: {h} is not a multiple of {h_min}"
            )));
        }
    }
    let phi0 = initial_condition(&cfg.init, &cfg.grid, cfg.seed);
    let reference_h = h_min / 32.0;
    let reference = integrate(cfg, reference_h, &phi0)?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(hs.len());
    for &h in &hs {
        let error = l2_distance(&integrate(cfg, h, &phi0)?, &reference)?;
        let rate = rows.last().map(|p| (p.error / error).ln() / (p.h / h).ln());
        rows.push(ConvergenceRow { h, error, rate });
    }
    Ok(ConvergenceTable {
        scheme: cfg.scheme.name(),
        reference_h,
        rows,
    })
}
