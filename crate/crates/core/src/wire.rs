//! Linearised, Kirchhoff-transformed wire temperature.
//!
//! With the radiation term linearised through `chi_w` and the resistivity
//! frozen at the effective temperature, the transformed rise `theta` obeys
//!
//! ```text
//! rho c theta_t = k0 theta'' - F theta + G + H / 2
//! ```
//!
//! on `0 < y < L` with Dirichlet ends. The solution is a steady profile plus a
//! decaying sine series. The steady profile is kept in the form
//! `theta_l phi_L + theta_r phi_R + (S / k0) psi`, which stays finite for any
//! `mu L` and reduces to the radiationless quadratic when `F = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{Drive, ModelConfig, PhysicalConstants, WireInitial, WireSpec};
use crate::numerics::{exp_integral, phi1, CompositeGauss};

/// The auxiliary pair of the linearisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingState {
    /// Effective wire temperature rise, K.
    pub t_we: f64,
    /// Effective transfer coefficient, K^3.
    pub chi_w: f64,
}

impl CouplingState {
    pub fn new(t_we: f64, chi_w: f64) -> Result<Self> {
        if !(t_we >= 0.0 && t_we.is_finite()) {
            return Err(invalid("t_we", format!("must be >= 0, got {t_we}")));
        }
        if !(chi_w >= 0.0 && chi_w.is_finite()) {
            return Err(invalid("chi_w", format!("must be >= 0, got {chi_w}")));
        }
        Ok(Self { t_we, chi_w })
    }

    /// Upper limit on `t_we` that keeps `H` positive; infinite when it does
    /// not apply (no current, no transfer or constant conductivity).
    pub fn t_we_bound(&self, wire: &WireSpec, drive: &Drive, constants: &PhysicalConstants) -> f64 {
        let g = wire.geometry();
        let den = wire.emissivity * constants.sigma() * self.chi_w * g.area * g.perimeter * wire.alpha_kappa.abs();
        if drive.current <= 0.0 || den <= 0.0 {
            return f64::INFINITY;
        }
        2.0 * drive.current * drive.current * wire.rho_e0 * wire.alpha_rho / den
    }

    /// Relative distance to the bound, positive when admissible.
    pub fn bound_margin(&self, wire: &WireSpec, drive: &Drive, constants: &PhysicalConstants) -> f64 {
        let b = self.t_we_bound(wire, drive, constants);
        if b.is_infinite() {
            return f64::INFINITY;
        }
        if b <= 0.0 {
            return -1.0;
        }
        (b - self.t_we) / b
    }

    pub fn is_admissible(&self, wire: &WireSpec, drive: &Drive, constants: &PhysicalConstants) -> bool {
        self.bound_margin(wire, drive, constants) > 0.0
    }
}

/// Coefficients of the linearised wire equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireOdeCoefficients {
    /// Joule source, W m^-3.
    pub g: f64,
    /// Linearised transfer, W m^-3 K^-1.
    pub f: f64,
    /// Effective-temperature correction, W m^-3.
    pub h: f64,
}

impl WireOdeCoefficients {
    /// Total constant source `G + H / 2`.
    pub fn source(&self) -> f64 {
        self.g + 0.5 * self.h
    }
}

pub fn ode_coefficients(
    wire: &WireSpec,
    drive: &Drive,
    constants: &PhysicalConstants,
    state: &CouplingState,
) -> WireOdeCoefficients {
    let geo = wire.geometry();
    let i2 = drive.current * drive.current;
    let g = i2 * wire.rho_e0 / (geo.area * geo.area);
    let f = wire.emissivity * constants.sigma() * state.chi_w * geo.perimeter / geo.area;
    let h = 2.0 * g * wire.alpha_rho * state.t_we + f * wire.alpha_kappa * state.t_we * state.t_we;
    WireOdeCoefficients { g, f, h }
}

fn tanhc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 3.0
    } else {
        x.tanh() / x
    }
}

fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

/// `(x - tanh x) / x^3`.
fn tanh_defect(x: f64) -> f64 {
    if x < 0.05 {
        let x2 = x * x;
        1.0 / 3.0 + x2 * (-2.0 / 15.0 + x2 * (17.0 / 315.0 + x2 * (-62.0 / 2835.0 + x2 * 1382.0 / 155925.0)))
    } else {
        (x - x.tanh()) / (x * x * x)
    }
}

/// Steady transformed profile `theta_2(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyProfile {
    /// Transformed rise at the chip end, K.
    pub theta_left: f64,
    /// Transformed rise at the lead end, K.
    pub theta_right: f64,
    /// `(G + H/2) / k0`, K m^-2.
    pub source: f64,
    /// `sqrt(F / k0)`, 1/m; zero for the radiationless case.
    pub mu: f64,
    pub length: f64,
}

impl SteadyProfile {
    pub fn new(wire: &WireSpec, theta_left: f64, theta_right: f64, coeffs: &WireOdeCoefficients) -> Self {
        let mu = if coeffs.f > 0.0 { (coeffs.f / wire.kappa0).sqrt() } else { 0.0 };
        Self {
            theta_left,
            theta_right,
            source: coeffs.source() / wire.kappa0,
            mu,
            length: wire.length,
        }
    }

    /// `sinh(mu y) / sinh(mu L)`.
    fn phi_right(&self, y: f64) -> f64 {
        let (mu, l) = (self.mu, self.length);
        (-mu * (l - y)).exp() * y * phi1(-2.0 * mu * y) / (l * phi1(-2.0 * mu * l))
    }

    /// Particular solution of `psi'' - mu^2 psi = -1` with zero ends.
    fn psi(&self, y: f64) -> f64 {
        let (mu, l) = (self.mu, self.length);
        y * (l - y) * phi1(-mu * y) * phi1(-mu * (l - y)) / (1.0 + (-mu * l).exp())
    }

    pub fn eval(&self, y: f64) -> f64 {
        let l = self.length;
        self.theta_left * self.phi_right(l - y) + self.theta_right * self.phi_right(y) + self.source * self.psi(y)
    }

    /// Integral over `[0, L]`.
    pub fn integral(&self) -> f64 {
        let l = self.length;
        let x = 0.5 * self.mu * l;
        let ends = 0.5 * l * tanhc(x);
        let psi = 0.25 * l * l * l * tanh_defect(x);
        (self.theta_left + self.theta_right) * ends + self.source * psi
    }

    /// Integral of `theta_2(y) sin(lambda y)` over `[0, L]`.
    pub fn sine_moment(&self, lambda: f64) -> f64 {
        let (mu, l) = (self.mu, self.length);
        let (s, c) = (lambda * l).sin_cos();
        let den = mu * mu + lambda * lambda;
        let right = (s / (l * tanhc(mu * l)) - lambda * c) / den;
        let left = (lambda - s / (l * sinhc(mu * l))) / den;
        let psi = ((1.0 - c) / lambda - 0.5 * l * tanhc(0.5 * mu * l) * s) / den;
        self.theta_left * left + self.theta_right * right + self.source * psi
    }

    /// The same profile as `C1 cosh(mu y) + C2 sinh(mu y) + S/F`.
    ///
    /// `None` for the radiationless case or when the hyperbolic terms overflow.
    pub fn cosh_sinh_form(&self) -> Option<(f64, f64, f64)> {
        let ml = self.mu * self.length;
        if self.mu <= 0.0 || ml > 700.0 {
            return None;
        }
        let c = self.source / (self.mu * self.mu);
        let c1 = self.theta_left - c;
        let c2 = (self.theta_right - c - c1 * ml.cosh()) / ml.sinh();
        Some((c1, c2, c))
    }
}

/// Series solution of the linearised wire equation for one drive and state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSolution {
    pub coefficients: WireOdeCoefficients,
    pub steady: SteadyProfile,
    /// `k pi / L`, k = 1..nk.
    pub lambdas: Vec<f64>,
    /// Transient amplitudes.
    pub amplitudes: Vec<f64>,
    /// Decay rates `(k0 lambda^2 + F) / (rho c)`, 1/s.
    pub rates: Vec<f64>,
    pub state: CouplingState,
    wire: WireSpec,
    t_ambient: f64,
}

impl WireSolution {
    /// Solution with the configured initial profile.
    pub fn new(config: &ModelConfig, drive: &Drive, state: &CouplingState) -> Result<Self> {
        let (d_ch, d_ld, _) = config.rises();
        let wire = config.wire;
        match config.wire_initial {
            WireInitial::Linear => Self::with_initial(config, drive, state, move |y| {
                wire.kirchhoff_forward(d_ch + (d_ld - d_ch) * y / wire.length)
            }),
            WireInitial::Ambient => Self::with_initial(config, drive, state, |_| 0.0),
            WireInitial::Steady => {
                let mut s = Self::with_initial(config, drive, state, |_| 0.0)?;
                s.amplitudes.iter_mut().for_each(|a| *a = 0.0);
                Ok(s)
            }
        }
    }

    /// Solution starting from the transformed rise `theta0(y)`.
    pub fn with_initial(
        config: &ModelConfig,
        drive: &Drive,
        state: &CouplingState,
        theta0: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        config.validate()?;
        drive.validate()?;
        let wire = config.wire;
        let (d_ch, d_ld, _) = config.rises();
        let coefficients = ode_coefficients(&wire, drive, &config.constants, state);
        let steady = SteadyProfile::new(
            &wire,
            wire.kirchhoff_forward(d_ch),
            wire.kirchhoff_forward(d_ld),
            &coefficients,
        );
        let l = wire.length;
        let nk = config.truncation.nk;
        let lambdas: Vec<f64> = (1..=nk).map(|k| k as f64 * std::f64::consts::PI / l).collect();
        let quad = CompositeGauss::with_points(0.0, l, config.quadrature_points);
        let samples: Vec<f64> = quad.nodes.iter().map(|&y| theta0(y)).collect();
        let amplitudes = lambdas
            .iter()
            .map(|&lam| {
                let init: f64 = quad
                    .nodes
                    .iter()
                    .zip(&quad.weights)
                    .zip(&samples)
                    .map(|((&y, &w), &v)| w * v * (lam * y).sin())
                    .sum();
                2.0 / l * (init - steady.sine_moment(lam))
            })
            .collect();
        let rc = wire.heat_capacity();
        let rates = lambdas
            .iter()
            .map(|lam| (wire.kappa0 * lam * lam + coefficients.f) / rc)
            .collect();
        Ok(Self {
            coefficients,
            steady,
            lambdas,
            amplitudes,
            rates,
            state: *state,
            wire,
            t_ambient: config.bc.t_ambient,
        })
    }

    pub fn wire(&self) -> &WireSpec {
        &self.wire
    }

    /// Transformed rise.
    pub fn theta(&self, y: f64, t: f64) -> f64 {
        let mut v = self.steady.eval(y);
        for ((lam, a), r) in self.lambdas.iter().zip(&self.amplitudes).zip(&self.rates) {
            let decay = (-r * t).exp();
            if decay < 1e-300 {
                break;
            }
            v += a * decay * (lam * y).sin();
        }
        v
    }

    /// Absolute wire temperature, K.
    pub fn temperature(&self, y: f64, t: f64) -> Result<f64> {
        Ok(self.t_ambient + self.wire.kirchhoff_inverse(self.theta(y, t))?)
    }

    /// Integral of `theta` over `[0, L] x [0, t_end]`.
    pub fn theta_integral(&self, t_end: f64) -> f64 {
        let mut v = t_end * self.steady.integral();
        for (k, ((lam, a), r)) in self.lambdas.iter().zip(&self.amplitudes).zip(&self.rates).enumerate() {
            // odd k (1-based) has a nonzero mean
            if k % 2 == 0 {
                v += a * exp_integral(*r, t_end) * 2.0 / lam;
            }
        }
        v
    }

    /// Space-time mean of `theta` over `[0, L] x [0, t_end]`.
    pub fn mean_theta(&self, t_end: f64) -> f64 {
        self.theta_integral(t_end) / (self.wire.length * t_end)
    }

    /// Effective rise: the constant rise whose transform is the mean `theta`.
    pub fn effective_rise(&self, t_end: f64) -> Result<f64> {
        self.wire.kirchhoff_inverse(self.mean_theta(t_end))
    }

    /// Shift between `theta` and the linearised rise, `alpha_kappa t_we^2 / 2`.
    pub fn rise_shift(&self) -> f64 {
        0.5 * self.wire.alpha_kappa * self.state.t_we * self.state.t_we
    }

    /// Integral of the linearised rise `theta - alpha_kappa t_we^2 / 2`.
    pub fn rise_integral(&self, t_end: f64) -> f64 {
        self.theta_integral(t_end) - self.rise_shift() * self.wire.length * t_end
    }

    /// Sine moments of the linearised rise against `sin(lambda_m y)`.
    pub fn source_moments(&self, lambdas: &[f64]) -> SourceMoments {
        let l = self.wire.length;
        let shift = self.rise_shift();
        let constant = lambdas
            .iter()
            .map(|&lm| {
                let c = (lm * l).cos();
                self.steady.sine_moment(lm) - shift * (1.0 - c) / lm
            })
            .collect();
        let modal = lambdas
            .iter()
            .map(|&lm| {
                self.lambdas
                    .iter()
                    .zip(&self.amplitudes)
                    .map(|(&lk, &a)| a * sine_product_integral(lm, lk, l))
                    .collect()
            })
            .collect();
        SourceMoments {
            constant,
            modal,
            rates: self.rates.clone(),
        }
    }

    /// Slowest wire time constant, s.
    pub fn time_constant(&self) -> f64 {
        1.0 / self.rates[0]
    }
}

/// Projection of the wire's linearised rise onto a set of sine modes:
/// `constant[m] + sum_k modal[m][k] exp(-rates[k] t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMoments {
    pub constant: Vec<f64>,
    pub modal: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
}

/// Integral over `[0, L]` of `sin(a y) sin(b y)`.
pub fn sine_product_integral(a: f64, b: f64, l: f64) -> f64 {
    let d = a - b;
    let s = a + b;
    let first = if (d * l).abs() < 1e-8 { l } else { (d * l).sin() / d };
    0.5 * (first - (s * l).sin() / s)
}

/// Wire mid-point temperature at the end of the pulse.
pub fn midpoint_temperature(config: &ModelConfig, drive: &Drive, state: &CouplingState) -> Result<f64> {
    let sol = WireSolution::new(config, drive, state)?;
    sol.temperature(0.5 * config.wire.length, drive.duration)
}

/// Earliest time at which the mid-point reaches `t_fuse`, or `None` when it
/// does not within `t_max`.
pub fn time_to_fuse(
    config: &ModelConfig,
    state: &CouplingState,
    current: f64,
    t_fuse: f64,
    t_max: f64,
) -> Result<Option<f64>> {
    if !(t_fuse > config.bc.t_ambient) {
        return Err(invalid("t_fuse", "must exceed the ambient temperature"));
    }
    let drive = Drive::new(current, t_max)?;
    let sol = WireSolution::new(config, &drive, state)?;
    let ym = 0.5 * config.wire.length;
    let excess = |t: f64| -> Result<f64> {
        match sol.temperature(ym, t) {
            Ok(v) => Ok(v - t_fuse),
            // beyond the transform vertex the wire is certainly past any fusing point
            Err(crate::Error::OutOfRange(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    if excess(0.0)? >= 0.0 {
        return Ok(Some(0.0));
    }
    let n = 96;
    let mut prev = 0.0;
    for i in 0..=n {
        let t = t_max * 10f64.powf(-8.0 * (1.0 - i as f64 / n as f64));
        if excess(t)? >= 0.0 {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if excess(mid)? >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-13 * t_max {
                    break;
                }
            }
            return Ok(Some(0.5 * (lo + hi)));
        }
        prev = t;
    }
    Ok(None)
}
