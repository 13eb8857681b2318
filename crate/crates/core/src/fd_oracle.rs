//! Finite-difference reference solvers.
//!
//! The wire solvers march a uniform 1-D grid with Crank-Nicolson (started
//! with four backward-Euler half steps) and a Newton inner solve on a
//! tridiagonal Jacobian. Conduction is written through the Kirchhoff
//! potential, so the nonlinear conductivity stays in conservative form.
//!
//! The compound solver is an explicit 3-D scheme on the half block
//! `x >= 0`, meant for qualitative checks of the kernel and the background
//! field.

use serde::Serialize;
use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::model::{CompoundSpec, Drive, ModelConfig, WireInitial, WireSpec};
use crate::wire::{ode_coefficients, CouplingState};

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 20;

/// Uniform space-time grid for the wire oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdGrid {
    /// Number of intervals along the wire.
    pub intervals: usize,
    /// Time step, s.
    pub dt: f64,
    /// Number of stored snapshots after the initial one.
    pub snapshots: usize,
}

impl FdGrid {
    pub fn new(intervals: usize, dt: f64) -> Self {
        Self {
            intervals,
            dt,
            snapshots: 100,
        }
    }

    /// Grid with `steps` time steps per pulse.
    pub fn for_drive(drive: &Drive, intervals: usize, steps: usize) -> Self {
        Self::new(intervals, drive.duration / steps.max(1) as f64)
    }

    /// Both spacings halved.
    pub fn refined(&self) -> Self {
        Self {
            intervals: 2 * self.intervals,
            dt: 0.5 * self.dt,
            snapshots: self.snapshots,
        }
    }

    pub fn validate(&self, drive: &Drive) -> Result<()> {
        if self.intervals < 4 {
            return Err(invalid("intervals", "need at least 4"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be > 0"));
        }
        if self.dt > drive.duration / 200.0 * (1.0 + 1e-12) {
            return Err(invalid("dt", format!("must be <= t_p / 200 = {:e} s", drive.duration / 200.0)));
        }
        if self.snapshots == 0 {
            return Err(invalid("snapshots", "need at least 1"));
        }
        Ok(())
    }

    fn steps(&self, duration: f64) -> (usize, f64) {
        let n = (duration / self.dt - 1e-9).ceil().max(1.0) as usize;
        (n, duration / n as f64)
    }
}

/// Heat exchange of the wire surface in the nonlinear oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exchange {
    /// Radiation `eps sigma (T^4 - T0^4)` only.
    Radiation,
    /// Radiation plus a linear term that makes the total loss equal
    /// `eps sigma chi_w (T - T0)` at the effective rise of `state`.
    Matched(CouplingState),
}

/// Per-step energy balance of the nonlinear oracle, J per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyStep {
    pub t: f64,
    pub stored: f64,
    pub joule: f64,
    pub surface_loss: f64,
    pub end_inflow: f64,
    /// `|stored - joule + loss - inflow| / joule`.
    pub relative_residual: f64,
}

/// Temperature snapshots on the wire grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WireHistory {
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    /// Absolute temperature, K; one row per snapshot.
    pub temperature: Vec<Vec<f64>>,
    pub t_ambient: f64,
    /// Largest Newton iteration count over all steps.
    pub newton_iterations: usize,
    /// Empty for the linearised solver.
    pub energy: Vec<EnergyStep>,
}

impl WireHistory {
    /// Linear interpolation of snapshot `row` at `y`.
    pub fn interpolate(&self, row: usize, y: f64) -> f64 {
        let n = self.y.len() - 1;
        let h = self.y[n] / n as f64;
        let s = (y / h).clamp(0.0, n as f64);
        let j = (s.floor() as usize).min(n - 1);
        let f = s - j as f64;
        let v = &self.temperature[row];
        v[j] * (1.0 - f) + v[j + 1] * f
    }

    pub fn final_profile(&self) -> &[f64] {
        self.temperature.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Temperature at the middle of the wire in the last snapshot.
    pub fn final_midpoint(&self) -> f64 {
        let last = self.temperature.len() - 1;
        self.interpolate(last, 0.5 * self.y[self.y.len() - 1])
    }

    /// Largest rise above ambient over all snapshots.
    pub fn max_rise(&self) -> f64 {
        self.temperature
            .iter()
            .flatten()
            .map(|v| (v - self.t_ambient).abs())
            .fold(0.0, f64::max)
    }

    /// Max change of the final profile relative to a finer run, measured on
    /// this grid's nodes and scaled by the largest rise.
    pub fn relative_change(&self, finer: &WireHistory) -> f64 {
        let last = finer.temperature.len() - 1;
        let scale = self.max_rise().max(f64::MIN_POSITIVE);
        self.y
            .iter()
            .zip(self.final_profile())
            .map(|(&y, &v)| (v - finer.interpolate(last, y)).abs())
            .fold(0.0, f64::max)
            / scale
    }

    /// Largest per-step energy residual.
    pub fn max_energy_residual(&self) -> f64 {
        self.energy.iter().map(|e| e.relative_residual).fold(0.0, f64::max)
    }

    /// Rows `t,y,T`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "y", "T"]).map_err(csv_err)?;
        for (t, row) in self.t.iter().zip(&self.temperature) {
            for (y, v) in self.y.iter().zip(row) {
                w.write_record(&[t.to_string(), y.to_string(), v.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Pointwise physics of one 1-D heat equation
/// `rho c u_t = phi(u)'' + q(u)`.
trait NodalPhysics {
    fn phi(&self, u: f64) -> f64;
    fn dphi(&self, u: f64) -> f64;
    fn source(&self, u: f64) -> f64;
    fn dsource(&self, u: f64) -> f64;
}

/// The transformed linear equation the series solves.
struct Linearised {
    k0: f64,
    f: f64,
    s: f64,
}

impl NodalPhysics for Linearised {
    fn phi(&self, u: f64) -> f64 {
        self.k0 * u
    }
    fn dphi(&self, _: f64) -> f64 {
        self.k0
    }
    fn source(&self, u: f64) -> f64 {
        self.s - self.f * u
    }
    fn dsource(&self, _: f64) -> f64 {
        -self.f
    }
}

/// Temperature-dependent conduction, resistivity and radiation.
struct Nonlinear {
    k0: f64,
    a_kappa: f64,
    /// `I^2 rho_e0 / A^2`.
    g: f64,
    a_rho: f64,
    /// `eps sigma C / A`.
    r: f64,
    t0: f64,
    /// Extra linear transfer coefficient, K^3.
    chi_extra: f64,
}

impl Nonlinear {
    fn joule(&self, u: f64) -> f64 {
        self.g * (1.0 + self.a_rho * u)
    }
    fn loss(&self, u: f64) -> f64 {
        let t = self.t0 + u;
        self.r * (t.powi(4) - self.t0.powi(4) + self.chi_extra * u)
    }
}

impl NodalPhysics for Nonlinear {
    fn phi(&self, u: f64) -> f64 {
        self.k0 * (u + 0.5 * self.a_kappa * u * u)
    }
    fn dphi(&self, u: f64) -> f64 {
        self.k0 * (1.0 + self.a_kappa * u)
    }
    fn source(&self, u: f64) -> f64 {
        self.joule(u) - self.loss(u)
    }
    fn dsource(&self, u: f64) -> f64 {
        let t = self.t0 + u;
        self.g * self.a_rho - self.r * (4.0 * t.powi(3) + self.chi_extra)
    }
}

/// Thomas algorithm for `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i`.
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut x = vec![0.0; n];
    if n == 0 {
        return Ok(x);
    }
    let mut den = b[0];
    for i in 0..n {
        if i > 0 {
            den = b[i] - a[i] * cp[i - 1];
        }
        if den == 0.0 || !den.is_finite() {
            return Err(Error::SolverFailure("zero pivot in tridiagonal solve".into()));
        }
        cp[i] = if i + 1 < n { c[i] / den } else { 0.0 };
        dp[i] = (d[i] - if i > 0 { a[i] * dp[i - 1] } else { 0.0 }) / den;
    }
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    Ok(x)
}

/// Nodal right-hand side `phi(u)'' + q(u)` at interior nodes.
fn operator<P: NodalPhysics>(p: &P, u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    let ph: Vec<f64> = u.iter().map(|&v| p.phi(v)).collect();
    (1..n - 1)
        .map(|j| (ph[j - 1] - 2.0 * ph[j] + ph[j + 1]) / (h * h) + p.source(u[j]))
        .collect()
}

struct Marcher<'a, P: NodalPhysics> {
    physics: &'a P,
    rho_c: f64,
    h: f64,
}

impl<P: NodalPhysics> Marcher<'_, P> {
    /// One theta-scheme step; returns the Newton iteration count.
    fn step(&self, u: &mut [f64], dt: f64, theta: f64) -> Result<usize> {
        let n = u.len();
        let m = n - 2;
        let old_rhs = operator(self.physics, u, self.h);
        let old: Vec<f64> = u[1..n - 1].to_vec();
        let inv_h2 = 1.0 / (self.h * self.h);
        let cap = self.rho_c / dt;
        for it in 1..=NEWTON_MAX_ITER {
            let rhs = operator(self.physics, u, self.h);
            let res: Vec<f64> = (0..m)
                .map(|i| cap * (u[i + 1] - old[i]) - theta * rhs[i] - (1.0 - theta) * old_rhs[i])
                .collect();
            let scale = 1.0 + u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let r_norm = res.iter().fold(0.0f64, |a, v| a.max(v.abs())) / cap;
            if !r_norm.is_finite() {
                return Err(Error::NewtonDivergence { residual: r_norm });
            }
            if r_norm < NEWTON_TOL * scale {
                return Ok(it - 1);
            }
            let mut a = vec![0.0; m];
            let mut b = vec![0.0; m];
            let mut c = vec![0.0; m];
            for i in 0..m {
                let j = i + 1;
                let dj = self.physics.dphi(u[j]);
                if dj <= 0.0 {
                    return Err(Error::NonPhysicalResult(format!(
                        "conductivity non-positive at rise {:.1} K",
                        u[j]
                    )));
                }
                b[i] = cap - theta * (-2.0 * dj * inv_h2 + self.physics.dsource(u[j]));
                if i > 0 {
                    a[i] = -theta * self.physics.dphi(u[j - 1]) * inv_h2;
                }
                if i + 1 < m {
                    c[i] = -theta * self.physics.dphi(u[j + 1]) * inv_h2;
                }
            }
            let du = solve_tridiagonal(&a, &b, &c, &res)?;
            for i in 0..m {
                u[i + 1] -= du[i];
            }
            if it == NEWTON_MAX_ITER {
                let rhs = operator(self.physics, u, self.h);
                let r = (0..m)
                    .map(|i| (cap * (u[i + 1] - old[i]) - theta * rhs[i] - (1.0 - theta) * old_rhs[i]).abs())
                    .fold(0.0, f64::max)
                    / cap;
                if r < NEWTON_TOL * scale {
                    return Ok(it);
                }
                return Err(Error::NewtonDivergence { residual: r });
            }
        }
        unreachable!()
    }

    /// Newton solve of `phi(u)'' + q(u) = 0` with the end values of `u`.
    fn steady(&self, u: &mut [f64]) -> Result<usize> {
        let n = u.len();
        let m = n - 2;
        let inv_h2 = 1.0 / (self.h * self.h);
        let k_ref = self.physics.dphi(0.0).abs().max(f64::MIN_POSITIVE);
        for it in 0..=NEWTON_MAX_ITER {
            let res = operator(self.physics, u, self.h);
            let scale = 1.0 + u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let r_norm = res.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (k_ref * inv_h2);
            if !r_norm.is_finite() {
                return Err(Error::NewtonDivergence { residual: r_norm });
            }
            if r_norm < NEWTON_TOL * scale {
                return Ok(it);
            }
            if it == NEWTON_MAX_ITER {
                return Err(Error::NewtonDivergence { residual: r_norm });
            }
            let mut a = vec![0.0; m];
            let mut b = vec![0.0; m];
            let mut c = vec![0.0; m];
            for i in 0..m {
                let j = i + 1;
                b[i] = -2.0 * self.physics.dphi(u[j]) * inv_h2 + self.physics.dsource(u[j]);
                if i > 0 {
                    a[i] = self.physics.dphi(u[j - 1]) * inv_h2;
                }
                if i + 1 < m {
                    c[i] = self.physics.dphi(u[j + 1]) * inv_h2;
                }
            }
            let du = solve_tridiagonal(&a, &b, &c, &res)?;
            for i in 0..m {
                u[i + 1] -= du[i];
            }
        }
        unreachable!()
    }
}

/// Output of the shared time loop, in the solver's own variable.
struct March {
    t: Vec<f64>,
    u: Vec<Vec<f64>>,
    newton: usize,
    energy: Vec<EnergyStep>,
}

fn march<P: NodalPhysics>(
    physics: &P,
    rho_c: f64,
    length: f64,
    mut u: Vec<f64>,
    grid: &FdGrid,
    duration: f64,
    audit: Option<(&Nonlinear, f64)>,
) -> Result<March> {
    let h = length / (u.len() - 1) as f64;
    let mar = Marcher { physics, rho_c, h };
    let (steps, dt) = grid.steps(duration);
    let stride = (steps / grid.snapshots).max(1);
    let mut out = March {
        t: vec![0.0],
        u: vec![u.clone()],
        newton: 0,
        energy: Vec::new(),
    };
    for k in 0..steps {
        // Rannacher start: the first two steps are pairs of backward-Euler half steps
        let subs: &[(f64, f64)] = if k < 2 { &[(0.5, 1.0), (0.5, 1.0)] } else { &[(1.0, 0.5)] };
        let mut bal: Option<EnergyStep> = None;
        let t = (k + 1) as f64 * dt;
        for &(frac, theta) in subs {
            let prev = u.clone();
            out.newton = out.newton.max(mar.step(&mut u, frac * dt, theta)?);
            if let Some((nl, area)) = audit {
                let e = energy_balance(nl, rho_c, area, h, &prev, &u, frac * dt, theta);
                bal = Some(match bal {
                    None => e,
                    Some(b) => EnergyStep {
                        stored: b.stored + e.stored,
                        joule: b.joule + e.joule,
                        surface_loss: b.surface_loss + e.surface_loss,
                        end_inflow: b.end_inflow + e.end_inflow,
                        ..b
                    },
                });
            }
        }
        if let Some(mut b) = bal {
            b.t = t;
            let miss = b.stored - b.joule + b.surface_loss - b.end_inflow;
            let scale = if b.joule > 0.0 { b.joule } else { b.stored.abs().max(b.surface_loss.abs()).max(f64::MIN_POSITIVE) };
            b.relative_residual = miss.abs() / scale;
            out.energy.push(b);
        }
        if (k + 1) % stride == 0 || k + 1 == steps {
            out.t.push(t);
            out.u.push(u.clone());
        }
    }
    Ok(out)
}

/// Energy terms of one theta-scheme step, J.
#[allow(clippy::too_many_arguments)]
fn energy_balance(
    nl: &Nonlinear,
    rho_c: f64,
    area: f64,
    h: f64,
    prev: &[f64],
    next: &[f64],
    dt: f64,
    theta: f64,
) -> EnergyStep {
    let n = next.len() - 1;
    let vol = area * h;
    let mix = |f: &dyn Fn(&[f64]) -> f64| theta * f(next) + (1.0 - theta) * f(prev);
    let interior = |g: &dyn Fn(f64) -> f64, u: &[f64]| u[1..n].iter().map(|&v| g(v)).sum::<f64>();
    let stored = vol * rho_c * (1..n).map(|j| next[j] - prev[j]).sum::<f64>();
    let joule = dt * vol * mix(&|u| interior(&|v| nl.joule(v), u));
    let surface_loss = dt * vol * mix(&|u| interior(&|v| nl.loss(v), u));
    let inflow = |u: &[f64]| {
        area * ((nl.phi(u[n]) - nl.phi(u[n - 1])) - (nl.phi(u[1]) - nl.phi(u[0]))) / h
    };
    EnergyStep {
        t: 0.0,
        stored,
        joule,
        surface_loss,
        end_inflow: dt * mix(&inflow),
        relative_residual: 0.0,
    }
}

fn wire_nodes(wire: &WireSpec, grid: &FdGrid) -> Vec<f64> {
    let n = grid.intervals;
    (0..=n).map(|j| wire.length * j as f64 / n as f64).collect()
}

fn linear_rise(y: &[f64], length: f64, left: f64, right: f64) -> Vec<f64> {
    y.iter().map(|&v| left + (right - left) * v / length).collect()
}

/// Finite-difference solution of the linearised, transformed wire equation
/// for a fixed coupling state. The initial profile follows
/// `config.wire_initial`.
pub fn solve_wire_linearised(
    config: &ModelConfig,
    drive: &Drive,
    state: &CouplingState,
    grid: &FdGrid,
) -> Result<WireHistory> {
    config.validate()?;
    drive.validate()?;
    grid.validate(drive)?;
    let wire = config.wire;
    let (d_ch, d_ld, _) = config.rises();
    let coeffs = ode_coefficients(&wire, drive, &config.constants, state);
    let physics = Linearised {
        k0: wire.kappa0,
        f: coeffs.f,
        s: coeffs.source(),
    };
    let (th_l, th_r) = (wire.kirchhoff_forward(d_ch), wire.kirchhoff_forward(d_ld));
    let y = wire_nodes(&wire, grid);
    let mut u0: Vec<f64> = match config.wire_initial {
        WireInitial::Linear => linear_rise(&y, wire.length, d_ch, d_ld)
            .into_iter()
            .map(|d| wire.kirchhoff_forward(d))
            .collect(),
        WireInitial::Ambient => vec![0.0; y.len()],
        WireInitial::Steady => linear_rise(&y, wire.length, th_l, th_r),
    };
    if config.wire_initial == WireInitial::Steady {
        let n = y.len() - 1;
        let h = wire.length / n as f64;
        Marcher { physics: &physics, rho_c: wire.heat_capacity(), h }.steady(&mut u0)?;
    }
    solve_wire_linearised_from(config, drive, state, grid, &u0)
}

/// As [`solve_wire_linearised`], starting from transformed rises `theta0`
/// at the `grid.intervals + 1` nodes. The end values are replaced by the
/// boundary rises.
pub fn solve_wire_linearised_from(
    config: &ModelConfig,
    drive: &Drive,
    state: &CouplingState,
    grid: &FdGrid,
    theta0: &[f64],
) -> Result<WireHistory> {
    config.validate()?;
    drive.validate()?;
    grid.validate(drive)?;
    if theta0.len() != grid.intervals + 1 {
        return Err(invalid("theta0", format!("expected {} nodes, got {}", grid.intervals + 1, theta0.len())));
    }
    let wire = config.wire;
    let (d_ch, d_ld, _) = config.rises();
    let coeffs = ode_coefficients(&wire, drive, &config.constants, state);
    let physics = Linearised {
        k0: wire.kappa0,
        f: coeffs.f,
        s: coeffs.source(),
    };
    let y = wire_nodes(&wire, grid);
    let n = y.len() - 1;
    let mut u0 = theta0.to_vec();
    u0[0] = wire.kirchhoff_forward(d_ch);
    u0[n] = wire.kirchhoff_forward(d_ld);
    let m = march(&physics, wire.heat_capacity(), wire.length, u0, grid, drive.duration, None)?;
    let temperature = m
        .u
        .iter()
        .map(|row| {
            row.iter()
                .map(|&th| wire.kirchhoff_inverse(th).map(|d| config.bc.t_ambient + d))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WireHistory {
        y,
        t: m.t,
        temperature,
        t_ambient: config.bc.t_ambient,
        newton_iterations: m.newton,
        energy: Vec::new(),
    })
}

/// Steady solution of the linearised equation on `intervals` cells, as
/// transformed rise at the nodes.
pub fn steady_wire_linearised(
    config: &ModelConfig,
    drive: &Drive,
    state: &CouplingState,
    intervals: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if intervals < 4 {
        return Err(invalid("intervals", "need at least 4"));
    }
    let wire = config.wire;
    let (d_ch, d_ld, _) = config.rises();
    let coeffs = ode_coefficients(&wire, drive, &config.constants, state);
    let physics = Linearised {
        k0: wire.kappa0,
        f: coeffs.f,
        s: coeffs.source(),
    };
    let grid = FdGrid::new(intervals, 1.0);
    let y = wire_nodes(&wire, &grid);
    let mut u = linear_rise(&y, wire.length, wire.kirchhoff_forward(d_ch), wire.kirchhoff_forward(d_ld));
    Marcher {
        physics: &physics,
        rho_c: wire.heat_capacity(),
        h: wire.length / intervals as f64,
    }
    .steady(&mut u)?;
    Ok((y, u))
}

fn nonlinear_physics(config: &ModelConfig, drive: &Drive, exchange: Exchange) -> Nonlinear {
    let wire = config.wire;
    let geo = wire.geometry();
    let t0 = config.bc.t_ambient;
    let chi_extra = match exchange {
        Exchange::Radiation => 0.0,
        Exchange::Matched(s) => {
            let chi_rad = if s.t_we > 0.0 {
                ((t0 + s.t_we).powi(4) - t0.powi(4)) / s.t_we
            } else {
                4.0 * t0.powi(3)
            };
            s.chi_w - chi_rad
        }
    };
    Nonlinear {
        k0: wire.kappa0,
        a_kappa: wire.alpha_kappa,
        g: drive.current * drive.current * wire.rho_e0 / (geo.area * geo.area),
        a_rho: wire.alpha_rho,
        r: wire.emissivity * config.constants.sigma() * geo.perimeter / geo.area,
        t0,
        chi_extra,
    }
}

/// Finite-difference solution of the full nonlinear wire equation:
/// temperature-dependent conductivity and resistivity and true `T^4`
/// radiation, plus the optional matched linear exchange. Records a
/// per-step energy audit.
pub fn solve_wire_nonlinear(
    config: &ModelConfig,
    drive: &Drive,
    exchange: Exchange,
    grid: &FdGrid,
) -> Result<WireHistory> {
    config.validate()?;
    drive.validate()?;
    grid.validate(drive)?;
    let wire = config.wire;
    let (d_ch, d_ld, _) = config.rises();
    let physics = nonlinear_physics(config, drive, exchange);
    let y = wire_nodes(&wire, grid);
    let n = y.len() - 1;
    let mut u0 = match config.wire_initial {
        WireInitial::Linear | WireInitial::Steady => linear_rise(&y, wire.length, d_ch, d_ld),
        WireInitial::Ambient => vec![0.0; y.len()],
    };
    u0[0] = d_ch;
    u0[n] = d_ld;
    let rho_c = wire.heat_capacity();
    if config.wire_initial == WireInitial::Steady {
        Marcher { physics: &physics, rho_c, h: wire.length / n as f64 }.steady(&mut u0)?;
    }
    let area = wire.geometry().area;
    let m = march(&physics, rho_c, wire.length, u0, grid, drive.duration, Some((&physics, area)))?;
    let t0 = config.bc.t_ambient;
    Ok(WireHistory {
        y,
        t: m.t,
        temperature: m.u.iter().map(|row| row.iter().map(|v| t0 + v).collect()).collect(),
        t_ambient: t0,
        newton_iterations: m.newton,
        energy: m.energy,
    })
}

/// Error of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeError {
    pub t: f64,
    pub max_abs: f64,
    pub l2: f64,
}

/// Comparison of a candidate solution with an oracle history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    /// Largest oracle rise above ambient, the scale of the relative errors, K.
    pub scale: f64,
    pub max_abs: f64,
    pub max_relative: f64,
    /// Space-time RMS error over the scale.
    pub l2_relative: f64,
    pub per_time: Vec<TimeError>,
}

/// Compare `candidate(y, t)` (absolute temperature) with `oracle` at every
/// snapshot and node, skipping snapshots earlier than `t_from`.
pub fn compare(
    candidate: impl Fn(f64, f64) -> Result<f64>,
    oracle: &WireHistory,
    t_from: f64,
) -> Result<ErrorReport> {
    let scale = oracle.max_rise().max(f64::MIN_POSITIVE);
    let mut per_time = Vec::new();
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for (t, row) in oracle.t.iter().zip(&oracle.temperature) {
        if *t < t_from {
            continue;
        }
        let mut max_abs = 0.0f64;
        let mut sq = 0.0;
        for (y, v) in oracle.y.iter().zip(row) {
            let d = candidate(*y, *t)? - v;
            max_abs = max_abs.max(d.abs());
            sq += d * d;
        }
        sum_sq += sq;
        count += row.len();
        per_time.push(TimeError {
            t: *t,
            max_abs,
            l2: (sq / row.len() as f64).sqrt(),
        });
    }
    let max_abs = per_time.iter().map(|e| e.max_abs).fold(0.0, f64::max);
    Ok(ErrorReport {
        scale,
        max_abs,
        max_relative: max_abs / scale,
        l2_relative: if count > 0 { (sum_sq / count as f64).sqrt() / scale } else { 0.0 },
        per_time,
    })
}

/// Max difference of the final profiles of `a` and `b` at the nodes of
/// `at`, over the largest rise of `at`.
fn final_gap(at: &WireHistory, a: &WireHistory, b: &WireHistory) -> f64 {
    let (la, lb) = (a.temperature.len() - 1, b.temperature.len() - 1);
    at.y.iter()
        .map(|&y| (a.interpolate(la, y) - b.interpolate(lb, y)).abs())
        .fold(0.0, f64::max)
        / at.max_rise().max(f64::MIN_POSITIVE)
}

/// Observed convergence order from three runs on successively halved grids,
/// using the final profiles at the coarse nodes.
pub fn observed_order(coarse: &WireHistory, medium: &WireHistory, fine: &WireHistory) -> f64 {
    (final_gap(coarse, coarse, medium) / final_gap(coarse, medium, fine)).log2()
}

/// Node counts (intervals) of the explicit compound grid on the half block
/// `0 <= x <= W/2`, `0 <= y <= L`, `-H/2 <= z <= H/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompoundGrid {
    pub nx: usize,
    pub ny: usize,
    /// Must be even so the wire axis `z = 0` is a node.
    pub nz: usize,
}

impl Default for CompoundGrid {
    fn default() -> Self {
        Self { nx: 24, ny: 24, nz: 24 }
    }
}

impl CompoundGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("nx", self.nx), ("ny", self.ny), ("nz", self.nz)] {
            if !(4..=40).contains(&n) {
                return Err(invalid(name, format!("must be in 4..=40, got {n}")));
            }
        }
        if !self.nz.is_multiple_of(2) {
            return Err(invalid("nz", "must be even"));
        }
        Ok(())
    }
}

/// Rise field of the explicit compound solver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompoundField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub t: f64,
    /// Rise above ambient, K, indexed `(i * ny1 + j) * nz1 + k`.
    pub rise: Vec<f64>,
    /// Time step actually used, s.
    pub dt: f64,
}

impl CompoundField {
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.rise[(i * self.y.len() + j) * self.z.len() + k]
    }
}

struct Explicit {
    n: [usize; 3],
    h: [f64; 3],
    /// `h_c / kappa`.
    beta: f64,
    diffusivity: f64,
}

impl Explicit {
    fn new(compound: &CompoundSpec, h_conv: f64, length: f64, grid: &CompoundGrid) -> Self {
        Self {
            n: [grid.nx, grid.ny, grid.nz],
            h: [
                0.5 * compound.width / grid.nx as f64,
                length / grid.ny as f64,
                compound.height / grid.nz as f64,
            ],
            beta: h_conv / compound.kappa,
            diffusivity: compound.diffusivity(),
        }
    }

    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * (self.n[1] + 1) + j) * (self.n[2] + 1) + k
    }

    fn stable_dt(&self) -> f64 {
        let [hx, hy, hz] = self.h;
        let s = 2.0 / (hx * hx) + 2.0 / (hy * hy) + 2.0 / (hz * hz) + 2.0 * self.beta / hx + 2.0 * self.beta / hz;
        0.9 / (self.diffusivity * s)
    }

    fn axes(&self, height: f64) -> [Vec<f64>; 3] {
        let [nx, ny, nz] = self.n;
        let [hx, hy, hz] = self.h;
        [
            (0..=nx).map(|i| i as f64 * hx).collect(),
            (0..=ny).map(|j| j as f64 * hy).collect(),
            (0..=nz).map(|k| -0.5 * height + k as f64 * hz).collect(),
        ]
    }

    /// Explicit steps until `t_end`. Nodes with `j = 0` or `k = 0` keep their
    /// values; `x = 0` is a symmetry plane, `y = L` adiabatic, and the
    /// `x = W/2` and `z = H/2` walls are convective.
    fn run(&self, u: &mut Vec<f64>, t_end: f64) -> f64 {
        let steps = (t_end / self.stable_dt()).ceil().max(1.0) as usize;
        let dt = t_end / steps as f64;
        let [nx, ny, nz] = self.n;
        let [hx, hy, hz] = self.h;
        let c = self.diffusivity * dt;
        let mut next = u.clone();
        for _ in 0..steps {
            for i in 0..=nx {
                for j in 1..=ny {
                    for k in 1..=nz {
                        let uc = u[self.idx(i, j, k)];
                        let xm = if i > 0 { u[self.idx(i - 1, j, k)] } else { u[self.idx(1, j, k)] };
                        let xp = if i < nx {
                            u[self.idx(i + 1, j, k)]
                        } else {
                            xm - 2.0 * hx * self.beta * uc
                        };
                        let ym = u[self.idx(i, j - 1, k)];
                        let yp = if j < ny { u[self.idx(i, j + 1, k)] } else { ym };
                        let zm = u[self.idx(i, j, k - 1)];
                        let zp = if k < nz {
                            u[self.idx(i, j, k + 1)]
                        } else {
                            zm - 2.0 * hz * self.beta * uc
                        };
                        let lap = (xm - 2.0 * uc + xp) / (hx * hx)
                            + (ym - 2.0 * uc + yp) / (hy * hy)
                            + (zm - 2.0 * uc + zp) / (hz * hz);
                        next[self.idx(i, j, k)] = uc + c * lap;
                    }
                }
            }
            std::mem::swap(u, &mut next);
        }
        dt
    }
}

/// Background compound field (no wire source) from an ambient start, with
/// the chip plane at `T_ch` and the die-attach plane at `T_d`. The shared
/// edge takes the mean of the two.
pub fn solve_compound_background(config: &ModelConfig, grid: &CompoundGrid, t_end: f64) -> Result<CompoundField> {
    config.validate()?;
    grid.validate()?;
    if !(t_end > 0.0) {
        return Err(invalid("t_end", "must be > 0"));
    }
    let ex = Explicit::new(&config.compound, config.bc.h_conv, config.wire.length, grid);
    let (d_ch, _, d_die) = config.rises();
    let [nx, ny, nz] = ex.n;
    let mut u = vec![0.0; (nx + 1) * (ny + 1) * (nz + 1)];
    for i in 0..=nx {
        for k in 0..=nz {
            u[ex.idx(i, 0, k)] = d_ch;
        }
        for j in 0..=ny {
            u[ex.idx(i, j, 0)] = d_die;
        }
        u[ex.idx(i, 0, 0)] = 0.5 * (d_ch + d_die);
    }
    let dt = ex.run(&mut u, t_end);
    let [x, y, z] = ex.axes(config.compound.height);
    Ok(CompoundField { x, y, z, t: t_end, rise: u, dt })
}

/// Response to a unit-energy impulse deposited at the wire-axis node nearest
/// to `y_src`, with all fixed planes at ambient. Comparable with the heat
/// kernel.
pub fn solve_compound_impulse(
    config: &ModelConfig,
    grid: &CompoundGrid,
    y_src: f64,
    t_end: f64,
) -> Result<(CompoundField, f64)> {
    config.validate()?;
    grid.validate()?;
    if !(t_end > 0.0) {
        return Err(invalid("t_end", "must be > 0"));
    }
    let ex = Explicit::new(&config.compound, config.bc.h_conv, config.wire.length, grid);
    let [nx, ny, nz] = ex.n;
    let [hx, hy, hz] = ex.h;
    let js = ((y_src / hy).round() as usize).clamp(1, ny);
    let mut u = vec![0.0; (nx + 1) * (ny + 1) * (nz + 1)];
    // full cell around the axis node: the half-block node carries half of it
    u[ex.idx(0, js, nz / 2)] = 1.0 / (config.compound.heat_capacity() * hx * hy * hz);
    let dt = ex.run(&mut u, t_end);
    let [x, y, z] = ex.axes(config.compound.height);
    Ok((CompoundField { x, y, z, t: t_end, rise: u, dt }, js as f64 * hy))
}
