//! Series solutions checked against the finite-difference oracles.

use serde::Serialize;

use crate::compound::CompoundSolution;
use crate::coupling::{fixed_point, require_converged, CouplingOptions};
use crate::error::Result;
use crate::fd_oracle::{
    compare, solve_compound_background, solve_compound_impulse, solve_wire_linearised, solve_wire_nonlinear,
    CompoundGrid, Exchange, FdGrid,
};
use crate::model::{Drive, ModelConfig};
use crate::wire::{CouplingState, WireSolution};

/// One named comparison against a tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub metric: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: &str, metric: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            metric: metric.to_string(),
            value,
            tolerance,
            passed: value.is_finite() && value < tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WireVerification {
    pub state: CouplingState,
    pub checks: Vec<Check>,
}

/// Wire oracle grid used by the checks: 800 intervals, 4000 steps, where a
/// further halving of both spacings moves the linearised gap by < 1e-6.
pub fn wire_grid(drive: &Drive) -> FdGrid {
    FdGrid::for_drive(drive, 800, 4000)
}

/// Series against the linearised oracle (< 0.5% max-norm) and the fully
/// nonlinear oracle (< 2%), both at the converged coupling pair.
pub fn verify_wire(config: &ModelConfig, drive: &Drive, coupling: &CouplingOptions) -> Result<WireVerification> {
    let state = require_converged(fixed_point(config, drive, coupling)?)?.state;
    let series = WireSolution::new(config, drive, &state)?;
    let grid = wire_grid(drive);
    let lin = solve_wire_linearised(config, drive, &state, &grid)?;
    let e_lin = compare(|y, t| series.temperature(y, t), &lin, 0.0)?;
    let non = solve_wire_nonlinear(config, drive, Exchange::Matched(state), &grid)?;
    let e_non = compare(|y, t| series.temperature(y, t), &non, 0.0)?;
    Ok(WireVerification {
        state,
        checks: vec![
            Check::new("series vs linearised oracle", "max-norm / max rise", e_lin.max_relative, 5e-3),
            Check::new("series vs nonlinear oracle", "max-norm / max rise", e_non.max_relative, 2e-2),
        ],
    })
}

/// Relative RMS of `series - field` over the nodes accepted by `keep`.
fn rms_gap(
    field: &crate::fd_oracle::CompoundField,
    series: impl Fn(f64, f64, f64) -> f64,
    keep: impl Fn(usize, usize, usize) -> bool,
) -> f64 {
    let (mut se, mut sn) = (0.0, 0.0);
    for (i, x) in field.x.iter().enumerate() {
        for (j, y) in field.y.iter().enumerate() {
            for (k, z) in field.z.iter().enumerate() {
                if !keep(i, j, k) {
                    continue;
                }
                let v = field.at(i, j, k);
                let d = series(*x, *y, *z) - v;
                se += d * d;
                sn += v * v;
            }
        }
    }
    (se / sn.max(f64::MIN_POSITIVE)).sqrt()
}

/// Background field and heat kernel against the explicit 3-D oracle on the
/// default grid. Both are qualitative checks (relative RMS 2% and 5%); the
/// first three planes next to the chip and die-attach edges are skipped,
/// where the oracle's corner treatment dominates.
pub fn verify_compound(config: &ModelConfig) -> Result<Vec<Check>> {
    let sol = CompoundSolution::new(config)?;
    let grid = CompoundGrid::default();
    let t_bg = 0.5;
    let bg = solve_compound_background(config, &grid, t_bg)?;
    let e_bg = rms_gap(&bg, |x, y, z| sol.background_rise(x, y, z, t_bg), |_, j, k| j >= 3 && k >= 3);
    let t_k = 0.1;
    let (imp, ys) = solve_compound_impulse(config, &grid, 0.5 * config.wire.length, t_k)?;
    let e_k = rms_gap(&imp, |x, y, z| sol.kernel.eval(x, y, z, t_k, ys), |_, _, _| true);
    Ok(vec![
        Check::new("background field vs 3-D oracle", "relative RMS at 0.5 s", e_bg, 0.02),
        Check::new("heat kernel vs 3-D oracle", "relative RMS at 0.1 s", e_k, 0.05),
    ])
}
