//! Fixed point for the effective wire temperature and transfer coefficient.
//!
//! The pair is fixed by requiring the space-time integral of the compound
//! rise along the wire surface to equal that of the wire rise. For a given
//! effective temperature the balance is solved for `chi_w` by a bracketed
//! secant in `ln chi`; the effective temperature is then refreshed from the
//! wire solution, and the two steps alternate until both settle.

use serde::Serialize;
use std::io::Write;

use crate::compound::{interface_point, CompoundSolution, LineSource, LineWeights};
use crate::error::{invalid, Error, Result};
use crate::model::{Drive, ModelConfig};
use crate::spectral::SpectralBasis;
use crate::wire::{CouplingState, WireSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct CouplingOptions {
    /// Relative tolerance on both constants and on the interface balance.
    pub tol: f64,
    pub max_iter: usize,
    /// Bracket for `chi_w`, K^3.
    pub chi_min: f64,
    pub chi_max: f64,
    /// Distance of the interface line from the wire axis in wire radii;
    /// 0 evaluates the compound on the axis itself.
    pub interface_offset: f64,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 50,
            chi_min: 1e3,
            chi_max: 1e15,
            interface_offset: 0.0,
        }
    }
}

impl CouplingOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(invalid("coupling.tol", "must lie in (0, 1)"));
        }
        if self.max_iter == 0 {
            return Err(invalid("coupling.max_iter", "must be >= 1"));
        }
        if !(self.chi_min > 0.0 && self.chi_max > self.chi_min) {
            return Err(invalid("coupling.chi bracket", "need 0 < chi_min < chi_max"));
        }
        if !(self.interface_offset >= 0.0 && self.interface_offset.is_finite()) {
            return Err(invalid("coupling.interface_offset", "must be >= 0"));
        }
        Ok(())
    }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub t_we: f64,
    pub chi_w: f64,
    pub residual: f64,
    /// Relative distance to the effective-temperature bound.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingResult {
    pub state: CouplingState,
    pub iterations: usize,
    /// Interface balance mismatch `|lhs - rhs| / |rhs|` of each new effective
    /// temperature against the previous transfer coefficient.
    pub residual_history: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

impl CouplingResult {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trace {
            w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Both sides of the interface balance for one drive.
#[derive(Debug, Clone)]
pub struct InterfaceProblem {
    pub config: ModelConfig,
    pub drive: Drive,
    pub compound: CompoundSolution,
    weights: LineWeights,
    background: f64,
}

/// Left and right side of the balance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Balance {
    pub compound: f64,
    pub wire: f64,
}

impl Balance {
    pub fn mismatch(&self) -> f64 {
        self.compound - self.wire
    }

    pub fn relative(&self) -> f64 {
        let g = self.mismatch();
        if g == 0.0 {
            0.0
        } else {
            g.abs() / self.wire.abs().max(f64::MIN_POSITIVE)
        }
    }
}

impl InterfaceProblem {
    pub fn new(config: &ModelConfig, drive: &Drive, interface_offset: f64) -> Result<Self> {
        config.validate()?;
        drive.validate()?;
        let basis = SpectralBasis::build(&config.wire, &config.compound, &config.bc, config.truncation)?;
        let compound = CompoundSolution::from_basis(config, &basis);
        let (x, z) = interface_point(config, interface_offset)?;
        let weights = compound.line_weights(x, z);
        let background = compound.background_line_integral(x, z, drive.duration);
        Ok(Self {
            config: config.clone(),
            drive: *drive,
            compound,
            weights,
            background,
        })
    }

    pub fn wire(&self, state: &CouplingState) -> Result<WireSolution> {
        WireSolution::new(&self.config, &self.drive, state)
    }

    pub fn source(&self, wire: &WireSolution) -> LineSource {
        LineSource::from_wire(&self.config, wire, &self.compound.kernel)
    }

    pub fn balance(&self, state: &CouplingState) -> Result<Balance> {
        let wire = self.wire(state)?;
        let src = self.source(&wire);
        let tp = self.drive.duration;
        Ok(Balance {
            compound: self.background + self.compound.convolution_line_integral(&src, &self.weights, tp),
            wire: wire.rise_integral(tp),
        })
    }
}

/// Effective temperature of the bare wire (no transfer, no correction term).
pub fn initial_effective_temperature(config: &ModelConfig, drive: &Drive) -> Result<f64> {
    let wire = WireSolution::new(config, drive, &CouplingState { t_we: 0.0, chi_w: 0.0 })?;
    Ok(wire.effective_rise(drive.duration)?.max(0.0))
}

/// Transfer coefficient that balances the interface integrals for a given
/// effective temperature. Returns the root and its relative residual.
pub fn chi_from_interface(problem: &InterfaceProblem, t_we: f64, options: &CouplingOptions) -> Result<(f64, f64)> {
    if !(t_we >= 0.0) {
        return Err(invalid("t_we", "must be >= 0"));
    }
    let t0 = problem.config.bc.t_ambient;
    let guess = (4.0 * t0 * t0 * t0).clamp(options.chi_min, options.chi_max);
    let eval = |chi: f64| -> Result<Balance> { problem.balance(&CouplingState { t_we, chi_w: chi }) };

    let b0 = eval(guess)?;
    if b0.mismatch() == 0.0 || (b0.compound.abs() + b0.wire.abs()) < 1e-300 {
        return Ok((guess, 0.0));
    }
    let inner_tol = 1e-3 * options.tol;
    if b0.relative() < inner_tol {
        return Ok((guess, b0.relative()));
    }

    // expand geometrically from the guess towards the sign change
    let (lo_lim, hi_lim) = (options.chi_min.ln(), options.chi_max.ln());
    let mut a = guess.ln();
    let mut ga = b0.mismatch();
    let step = 10f64.ln() * if ga < 0.0 { 1.0 } else { -1.0 };
    let mut b = a;
    let mut gb = ga;
    loop {
        let next = (b + step).clamp(lo_lim, hi_lim);
        if next == b {
            return Err(Error::NoRoot {
                lo: options.chi_min,
                hi: options.chi_max,
                g_lo: eval(options.chi_min)?.mismatch(),
                g_hi: eval(options.chi_max)?.mismatch(),
            });
        }
        a = b;
        ga = gb;
        b = next;
        let bal = eval(b.exp())?;
        gb = bal.mismatch();
        if bal.relative() < inner_tol {
            return Ok((b.exp(), bal.relative()));
        }
        if ga.signum() != gb.signum() {
            break;
        }
    }

    // Illinois variant of regula falsi in ln chi
    let (mut lo, mut glo, mut hi, mut ghi) = if ga < 0.0 { (a, ga, b, gb) } else { (b, gb, a, ga) };
    let mut side = 0i32;
    for _ in 0..200 {
        let mut x = hi - ghi * (hi - lo) / (ghi - glo);
        if !(x > lo.min(hi) && x < lo.max(hi)) {
            x = 0.5 * (lo + hi);
        }
        let bal = eval(x.exp())?;
        let g = bal.mismatch();
        if bal.relative() < inner_tol || (hi - lo).abs() < 1e-14 {
            return Ok((x.exp(), bal.relative()));
        }
        if g < 0.0 {
            lo = x;
            glo = g;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            ghi = g;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::ConvergenceFailure {
        lo: lo.exp(),
        hi: hi.exp(),
        iterations: 200,
    })
}

fn rel_change(new: f64, old: f64) -> f64 {
    let d = (new - old).abs();
    if d == 0.0 {
        0.0
    } else {
        d / new.abs().max(old.abs())
    }
}

/// Alternate effective temperature and transfer coefficient updates,
/// starting from the bare-wire effective temperature.
pub fn fixed_point(config: &ModelConfig, drive: &Drive, options: &CouplingOptions) -> Result<CouplingResult> {
    options.validate()?;
    let problem = InterfaceProblem::new(config, drive, options.interface_offset)?;
    let t_start = initial_effective_temperature(config, drive)?;
    run(&problem, None, t_start, options)
}

/// Same iteration started from a known pair.
pub fn fixed_point_from(problem: &InterfaceProblem, start: CouplingState, options: &CouplingOptions) -> Result<CouplingResult> {
    options.validate()?;
    run(problem, Some(start), start.t_we, options)
}

fn run(problem: &InterfaceProblem, start: Option<CouplingState>, t_first: f64, options: &CouplingOptions) -> Result<CouplingResult> {
    let cfg = &problem.config;
    let drive = &problem.drive;
    let tp = drive.duration;
    let margin = |s: &CouplingState| s.bound_margin(&cfg.wire, drive, &cfg.constants);

    // accept a pair only if it satisfies the bound; halve the step otherwise
    let settle = |t_prev: f64, t_new: f64| -> Result<(CouplingState, f64)> {
        let mut t = t_new;
        for _ in 0..60 {
            let (chi, res) = chi_from_interface(problem, t, options)?;
            let s = CouplingState { t_we: t, chi_w: chi };
            if margin(&s) > 0.0 {
                return Ok((s, res));
            }
            t = t_prev + 0.5 * (t - t_prev);
        }
        Err(Error::SolverFailure("effective temperature bound could not be met".into()))
    };

    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut state = match start {
        Some(s) => s,
        None => {
            let (s, _) = settle(0.0, t_first)?;
            s
        }
    };
    for it in 1..=options.max_iter {
        let wire = problem.wire(&state)?;
        let t_new = wire.effective_rise(tp)?.max(0.0);
        let mismatch = problem
            .balance(&CouplingState { t_we: t_new, chi_w: state.chi_w })?
            .relative();
        let (next, _) = settle(state.t_we, t_new)?;
        history.push(mismatch);
        trace.push(TraceRow {
            iteration: it,
            t_we: next.t_we,
            chi_w: next.chi_w,
            residual: mismatch,
            margin: margin(&next),
        });
        let done = rel_change(next.t_we, state.t_we) < options.tol
            && rel_change(next.chi_w, state.chi_w) < options.tol
            && mismatch < options.tol;
        state = next;
        if done {
            return Ok(CouplingResult {
                state,
                iterations: it,
                residual_history: history,
                trace,
                converged: true,
            });
        }
    }
    Ok(CouplingResult {
        state,
        iterations: options.max_iter,
        residual_history: history,
        trace,
        converged: false,
    })
}

/// Fails with `NotConverged` unless the result converged.
pub fn require_converged(result: CouplingResult) -> Result<CouplingResult> {
    if result.converged {
        Ok(result)
    } else {
        Err(Error::NotConverged {
            iterations: result.iterations,
            residual: result.final_residual(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Material, MIL};
    use crate::spectral::Truncation;

    fn config() -> ModelConfig {
        let mut c = ModelConfig::reference(Material::Au, 2.0 * MIL, 2.5e-3);
        c.truncation = Truncation { nx: 8, ny: 10, nz: 8, nk: 20, steady: 100 };
        c
    }

    #[test]
    fn all_ambient_is_a_fixed_point_at_zero() {
        let mut c = config();
        c.bc.t_chip = c.bc.t_ambient;
        c.bc.t_lead = c.bc.t_ambient;
        c.bc.t_die = c.bc.t_ambient;
        let d = Drive::new(0.0, 0.5).unwrap();
        let r = fixed_point(&c, &d, &CouplingOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.state.t_we, 0.0);
    }

    #[test]
    fn bare_wire_effective_temperature() {
        let mut c = config();
        c.wire_initial = crate::model::WireInitial::Steady;
        let d = Drive::new(0.0, 0.5).unwrap();
        let t = initial_effective_temperature(&c, &d).unwrap();
        // mean of a linear profile in theta between the transformed end rises
        let w = &c.wire;
        let mean = 0.5 * (w.kirchhoff_forward(60.0) + w.kirchhoff_forward(20.0));
        assert!((t - w.kirchhoff_inverse(mean).unwrap()).abs() < 1e-10);
        assert!((t - 40.0).abs() < 0.5);
    }

    #[test]
    fn chi_root_balances_interface() {
        let c = config();
        let d = Drive::new(3.7, 0.5).unwrap();
        let opts = CouplingOptions::default();
        let p = InterfaceProblem::new(&c, &d, 1.0).unwrap();
        let (chi, res) = chi_from_interface(&p, 100.0, &opts).unwrap();
        assert!(res < 1e-4);
        let bal = p.balance(&CouplingState { t_we: 100.0, chi_w: chi }).unwrap();
        assert!(bal.relative() < 1e-4);
        assert!(chi > 1e3 && chi < 1e15);
    }

    #[test]
    fn narrow_bracket_reports_no_root() {
        let c = config();
        let d = Drive::new(3.7, 0.5).unwrap();
        let opts = CouplingOptions { chi_min: 1e3, chi_max: 1e5, ..Default::default() };
        let p = InterfaceProblem::new(&c, &d, 1.0).unwrap();
        match chi_from_interface(&p, 100.0, &opts) {
            Err(Error::NoRoot { g_lo, g_hi, .. }) => assert!(g_lo < 0.0 && g_hi < 0.0),
            other => panic!("expected NoRoot, got {other:?}"),
        }
    }

    #[test]
    fn fixed_point_converges_and_is_idempotent() {
        let c = config();
        let d = Drive::new(3.7, 0.5).unwrap();
        let opts = CouplingOptions::default();
        let r = fixed_point(&c, &d, &opts).unwrap();
        assert!(r.converged, "{:?}", r.trace);
        assert!(r.iterations <= 20);
        assert!(r.trace.iter().all(|t| t.margin > 0.0));
        let p = InterfaceProblem::new(&c, &d, opts.interface_offset).unwrap();
        let again = fixed_point_from(&p, r.state, &opts).unwrap();
        assert!(again.converged);
        assert!((again.state.t_we - r.state.t_we).abs() < 1e-3 * r.state.t_we);
        assert!((again.state.chi_w - r.state.chi_w).abs() < 1e-3 * r.state.chi_w);
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("iteration,t_we,chi_w,residual,margin"));
    }

    #[test]
    fn interface_offset_sensitivity_is_bounded() {
        let c = config();
        let d = Drive::new(3.7, 0.5).unwrap();
        let opts = CouplingOptions::default();
        let p1 = InterfaceProblem::new(&c, &d, 0.0).unwrap();
        let p2 = InterfaceProblem::new(&c, &d, 1.0).unwrap();
        let (c1, _) = chi_from_interface(&p1, 100.0, &opts).unwrap();
        let (c2, _) = chi_from_interface(&p2, 100.0, &opts).unwrap();
        // the surface sees a slightly cooler compound than the axis
        let change = (c2 - c1) / c1;
        assert!(change > 0.0 && change < 0.2, "{change}");
    }
}
