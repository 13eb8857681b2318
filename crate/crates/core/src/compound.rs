//! Mould-compound temperature: transient and steady separable series plus
//! the heat-kernel convolution with the heat leaving the wire.
//!
//! Coordinates: `x` across the block (symmetric about the wire plane),
//! `y` along the wire from the chip, `z` vertical with the die attach at
//! `z = -H/2` and the convective top at `z = H/2`. The wire runs along
//! `x = z = 0`. All series are in temperature rises above ambient.

use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::model::{CompoundInitial, CompoundSpec, ModelConfig};
use crate::numerics::{exp_convolution, exp_convolution_integral, exp_integral, step_response_integral};
use crate::spectral::SpectralBasis;
use crate::wire::WireSolution;

/// Skip a mode once its factor falls below this.
const NEGLIGIBLE: f64 = 1e-14;
/// `exp(-40)` is below `NEGLIGIBLE`.
const EXP_CUTOFF: f64 = 40.0;

/// Heat kernel of the block for an impulse on the wire axis at `y_src`.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    lx: Vec<f64>,
    /// Norms of `cos(lx x)` over the full width.
    x_norm: Vec<f64>,
    ly: Vec<f64>,
    lz: Vec<f64>,
    z_norm: Vec<f64>,
    /// `Z_p(0)`.
    z_src: Vec<f64>,
    diffusivity: f64,
    heat_capacity: f64,
    length: f64,
    height: f64,
}

/// Norm of `cos(l x)` over `[0, W/2]`.
fn x_half_norm(l: f64, w: f64) -> f64 {
    0.25 * w + (l * w).sin() / (4.0 * l)
}

/// Norm of `sin(l s)` over `[0, H]`.
fn z_mode_norm(l: f64, h: f64) -> f64 {
    0.5 * h - (2.0 * l * h).sin() / (4.0 * l)
}

impl HeatKernel {
    pub fn new(compound: &CompoundSpec, basis: &SpectralBasis, length: f64) -> Self {
        let (w, h) = (compound.width, compound.height);
        let lx = basis.lambda_x.clone();
        let lz = basis.lz().to_vec();
        Self {
            x_norm: lx.iter().map(|&l| 2.0 * x_half_norm(l, w)).collect(),
            z_norm: lz.iter().map(|&l| z_mode_norm(l, h)).collect(),
            z_src: lz.iter().map(|&l| (0.5 * l * h).sin()).collect(),
            lx,
            ly: basis.ly().to_vec(),
            lz,
            diffusivity: compound.diffusivity(),
            heat_capacity: compound.heat_capacity(),
            length,
            height: h,
        }
    }

    fn x_factor(&self, x: f64, t: f64) -> f64 {
        let mut s = 0.0;
        for (l, nrm) in self.lx.iter().zip(&self.x_norm) {
            let d = (-self.diffusivity * l * l * t).exp();
            if d < NEGLIGIBLE {
                break;
            }
            s += (l * x).cos() / nrm * d;
        }
        s
    }

    fn y_factor(&self, y: f64, y_src: f64, t: f64) -> f64 {
        let mut s = 0.0;
        for l in &self.ly {
            let d = (-self.diffusivity * l * l * t).exp();
            if d < NEGLIGIBLE {
                break;
            }
            s += (l * y).sin() * (l * y_src).sin() / (0.5 * self.length) * d;
        }
        s
    }

    fn z_factor(&self, z: f64, t: f64) -> f64 {
        let mut s = 0.0;
        for ((l, nrm), z0) in self.lz.iter().zip(&self.z_norm).zip(&self.z_src) {
            let d = (-self.diffusivity * l * l * t).exp();
            if d < NEGLIGIBLE {
                break;
            }
            s += (l * (z + 0.5 * self.height)).sin() * z0 / nrm * d;
        }
        s
    }

    /// Temperature rise at `(x, y, z)` a time `t` after a unit-energy (1 J)
    /// impulse at `(0, y_src, 0)`.
    pub fn eval(&self, x: f64, y: f64, z: f64, t: f64, y_src: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.x_factor(x, t) * self.y_factor(y, y_src, t) * self.z_factor(z, t) / self.heat_capacity
    }

    /// Eigenvalues `(lx, ly, lz)` used by the kernel series.
    pub fn eigenvalues(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.lx, &self.ly, &self.lz)
    }
}

/// Heat per unit length leaving the wire, `a * (rise(y, t))`, projected on
/// the kernel's y modes: `a (constant[m] + sum_j modal[m][j] exp(-rates[j] t))`.
#[derive(Debug, Clone)]
pub struct LineSource {
    /// `eps sigma chi C`, W m^-1 K^-1.
    pub strength: f64,
    pub constant: Vec<f64>,
    pub modal: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
}

impl LineSource {
    pub fn from_wire(config: &ModelConfig, wire: &WireSolution, kernel: &HeatKernel) -> Self {
        let w = &config.wire;
        let strength = w.emissivity * config.constants.sigma() * wire.state.chi_w * w.geometry().perimeter;
        let m = wire.source_moments(&kernel.ly);
        Self {
            strength,
            constant: m.constant,
            modal: m.modal,
            rates: m.rates,
        }
    }

    /// Time factor of mode `m` convolved with `exp(-beta (t - tau))`.
    fn convolved(&self, m: usize, beta: f64, t: f64) -> f64 {
        let mut v = self.constant[m] * (-(-beta * t).exp_m1()) / beta;
        for (p, r) in self.modal[m].iter().zip(&self.rates) {
            v += p * exp_convolution(beta, *r, t);
        }
        v
    }

    /// Same as [`LineSource::convolved`] integrated over `t in [0, t_end]`.
    fn convolved_integral(&self, m: usize, beta: f64, t_end: f64) -> f64 {
        let mut v = self.constant[m] * step_response_integral(beta, t_end);
        for (p, r) in self.modal[m].iter().zip(&self.rates) {
            v += p * exp_convolution_integral(beta, *r, t_end);
        }
        v
    }
}

/// Transient and steady compound series for one configuration.
#[derive(Debug, Clone)]
pub struct CompoundSolution {
    pub kernel: HeatKernel,
    compound: CompoundSpec,
    length: f64,
    t_ambient: f64,
    ratio: f64,
    lx: Vec<f64>,
    ly_all: Vec<f64>,
    lz_all: Vec<f64>,
    /// Chip component coefficients `[n][p]`, p over the steady count.
    pub cs1: Vec<Vec<f64>>,
    /// Die component coefficients `[n][m]`, m over the steady count.
    pub cs2: Vec<Vec<f64>>,
    /// Transient coefficients, `[n][m][p]` flattened.
    pub ct: Vec<f64>,
    ny: usize,
    nz: usize,
}

impl CompoundSolution {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let basis = SpectralBasis::build(&config.wire, &config.compound, &config.bc, config.truncation)?;
        Ok(Self::from_basis(config, &basis))
    }

    pub fn from_basis(config: &ModelConfig, basis: &SpectralBasis) -> Self {
        let cm = config.compound;
        let (w, h, l) = (cm.width, cm.height, config.wire.length);
        let (_, _, d_die) = config.rises();
        let d_chip = config.bc.t_chip - config.bc.t_ambient;
        let tr = basis.truncation;
        let lx = basis.lambda_x.clone();
        let ly_all = basis.lambda_y_m[..tr.steady.max(tr.ny)].to_vec();
        let lz_all = basis.lambda_z[..tr.steady.max(tr.nz)].to_vec();

        // projections of 1 on each family
        let a: Vec<f64> = lx.iter().map(|&k| (0.5 * k * w).sin() / k / x_half_norm(k, w)).collect();
        let b: Vec<f64> = lz_all.iter().map(|&k| (1.0 - (k * h).cos()) / k / z_mode_norm(k, h)).collect();
        let c: Vec<f64> = ly_all.iter().map(|&k| 2.0 / (l * k)).collect();

        let ns = tr.steady;
        let cs1: Vec<Vec<f64>> = a.iter().map(|an| b[..ns].iter().map(|bp| d_chip * an * bp).collect()).collect();
        let cs2: Vec<Vec<f64>> = a.iter().map(|an| c[..ns].iter().map(|cm_| d_die * an * cm_).collect()).collect();

        let (ny, nz) = (tr.ny, tr.nz);
        let u0 = match config.compound_initial {
            CompoundInitial::Ambient => Some(0.0),
            CompoundInitial::Uniform(v) => Some(v),
            CompoundInitial::Steady => None,
        };
        let mut ct = vec![0.0; lx.len() * ny * nz];
        if let Some(u0) = u0 {
            for (n, &kx) in lx.iter().enumerate() {
                for m in 0..ny {
                    let km = ly_all[m];
                    for p in 0..nz {
                        let kp = lz_all[p];
                        let big = kx * kx + km * km + kp * kp;
                        let chip = cs1[n][p] * km / (big * 0.5 * l);
                        let die = cs2[n][m] * kp / (big * z_mode_norm(kp, h));
                        ct[(n * ny + m) * nz + p] = u0 * a[n] * c[m] * b[p] - chip - die;
                    }
                }
            }
        }
        Self {
            kernel: HeatKernel::new(&cm, basis, l),
            compound: cm,
            length: l,
            t_ambient: config.bc.t_ambient,
            ratio: config.bc.robin_ratio(&cm),
            lx,
            ly_all,
            lz_all,
            cs1,
            cs2,
            ct,
            ny,
            nz,
        }
    }

    pub fn check_domain(&self, x: f64, y: f64, z: f64) -> Result<()> {
        let (w, h) = (self.compound.width, self.compound.height);
        let tol = 1e-12;
        if !(x.abs() <= 0.5 * w * (1.0 + tol) && y >= -tol * self.length && y <= self.length * (1.0 + tol) && z.abs() <= 0.5 * h * (1.0 + tol)) {
            return Err(Error::OutOfDomain(format!(
                "({x:e}, {y:e}, {z:e}) m outside |x| <= {:e}, 0 <= y <= {:e}, |z| <= {:e}",
                0.5 * w,
                self.length,
                0.5 * h
            )));
        }
        Ok(())
    }

    fn z_mode(&self, p: usize, z: f64) -> f64 {
        (self.lz_all[p] * (z + 0.5 * self.compound.height)).sin()
    }

    /// Chip-driven steady rise.
    pub fn steady_chip(&self, x: f64, y: f64, z: f64) -> f64 {
        let l = self.length;
        let mut s = 0.0;
        for (n, &kx) in self.lx.iter().enumerate() {
            let xf = (kx * x).cos();
            let row = &self.cs1[n];
            for (p, coef) in row.iter().enumerate() {
                let kp = self.lz_all[p];
                let mu = (kx * kx + kp * kp).sqrt();
                if mu * y > EXP_CUTOFF {
                    break;
                }
                // cosh(mu (L - y)) / cosh(mu L)
                let yf = ((-mu * y).exp() + (-mu * (2.0 * l - y)).exp()) / (1.0 + (-2.0 * mu * l).exp());
                s += coef * xf * yf * self.z_mode(p, z);
            }
        }
        s
    }

    /// Vertical profile of the die-driven steady component: 1 at the die
    /// attach, Robin at the top. `u` is the depth below the top surface.
    fn die_profile(&self, mu: f64, u: f64) -> f64 {
        let h = self.compound.height;
        let k = self.compound.kappa;
        let hc = self.ratio * k;
        let eu = (-2.0 * mu * u).exp();
        let eh = (-2.0 * mu * h).exp();
        let num = k * mu * (1.0 + eu) + hc * (1.0 - eu);
        let den = k * mu * (1.0 + eh) + hc * (1.0 - eh);
        (mu * (u - h)).exp() * num / den
    }

    /// Die-attach-driven steady rise.
    pub fn steady_die(&self, x: f64, y: f64, z: f64) -> f64 {
        let h = self.compound.height;
        let u = 0.5 * h - z;
        let mut s = 0.0;
        for (n, &kx) in self.lx.iter().enumerate() {
            let xf = (kx * x).cos();
            for (m, coef) in self.cs2[n].iter().enumerate() {
                let km = self.ly_all[m];
                let mu = (kx * kx + km * km).sqrt();
                if mu * (h - u) > EXP_CUTOFF {
                    break;
                }
                s += coef * xf * (km * y).sin() * self.die_profile(mu, u);
            }
        }
        s
    }

    /// Transient rise that takes the initial field to the steady field.
    #[allow(clippy::needless_range_loop)]
    pub fn transient(&self, x: f64, y: f64, z: f64, t: f64) -> f64 {
        let alpha = self.compound.diffusivity();
        let ymodes: Vec<f64> = self.ly_all[..self.ny].iter().map(|k| (k * y).sin()).collect();
        let zmodes: Vec<f64> = (0..self.nz).map(|p| self.z_mode(p, z)).collect();
        let mut s = 0.0;
        for (n, &kx) in self.lx.iter().enumerate() {
            let xf = (kx * x).cos();
            for m in 0..self.ny {
                let km = self.ly_all[m];
                for p in 0..self.nz {
                    let kp = self.lz_all[p];
                    let d = (-alpha * (kx * kx + km * km + kp * kp) * t).exp();
                    if d < NEGLIGIBLE {
                        break;
                    }
                    s += self.ct[(n * self.ny + m) * self.nz + p] * d * xf * ymodes[m] * zmodes[p];
                }
            }
        }
        s
    }

    /// Heat-kernel convolution with the wire source.
    pub fn convolution(&self, source: &LineSource, x: f64, y: f64, z: f64, t: f64) -> f64 {
        if t <= 0.0 || source.strength == 0.0 {
            return 0.0;
        }
        let k = &self.kernel;
        let alpha = k.diffusivity;
        let half_l = 0.5 * self.length;
        let total: f64 = (0..k.lx.len())
            .into_par_iter()
            .map(|n| {
                let kx = k.lx[n];
                let xf = (kx * x).cos() / k.x_norm[n];
                let mut s = 0.0;
                for (m, km) in k.ly.iter().enumerate() {
                    let yf = (km * y).sin() / half_l;
                    for (p, kp) in k.lz.iter().enumerate() {
                        let zf = (kp * (z + 0.5 * k.height)).sin() * k.z_src[p] / k.z_norm[p];
                        let beta = alpha * (kx * kx + km * km + kp * kp);
                        s += xf * yf * zf * source.convolved(m, beta, t);
                    }
                }
                s
            })
            .sum();
        source.strength * total / k.heat_capacity
    }

    /// Rise without the wire contribution.
    pub fn background_rise(&self, x: f64, y: f64, z: f64, t: f64) -> f64 {
        let x = x.abs();
        self.transient(x, y, z, t) + self.steady_chip(x, y, z) + self.steady_die(x, y, z)
    }

    /// Absolute compound temperature, K.
    pub fn temperature(&self, source: Option<&LineSource>, x: f64, y: f64, z: f64, t: f64) -> Result<f64> {
        self.check_domain(x, y, z)?;
        let mut v = self.t_ambient + self.background_rise(x, y, z, t);
        if let Some(src) = source {
            v += self.convolution(src, x.abs(), y, z, t);
        }
        Ok(v)
    }

    /// Integral over `y in [0, L]`, `t in [0, t_end]` of the background rise
    /// along the line `(x, ., z)`.
    pub fn background_line_integral(&self, x: f64, z: f64, t_end: f64) -> f64 {
        let x = x.abs();
        let alpha = self.compound.diffusivity();
        let l = self.length;
        let h = self.compound.height;
        let mut chip = 0.0;
        for (n, &kx) in self.lx.iter().enumerate() {
            let xf = (kx * x).cos();
            for (p, coef) in self.cs1[n].iter().enumerate() {
                let kp = self.lz_all[p];
                let mu = (kx * kx + kp * kp).sqrt();
                chip += coef * xf * self.z_mode(p, z) * (mu * l).tanh() / mu;
            }
        }
        let mut die = 0.0;
        for (n, &kx) in self.lx.iter().enumerate() {
            let xf = (kx * x).cos();
            for (m, coef) in self.cs2[n].iter().enumerate() {
                let km = self.ly_all[m];
                let mu = (kx * kx + km * km).sqrt();
                if mu * (0.5 * h + z) > EXP_CUTOFF {
                    break;
                }
                die += coef * xf * self.die_profile(mu, 0.5 * h - z) / km;
            }
        }
        let mut tr = 0.0;
        for (n, &kx) in self.lx.iter().enumerate() {
            let xf = (kx * x).cos();
            for m in 0..self.ny {
                let km = self.ly_all[m];
                for p in 0..self.nz {
                    let kp = self.lz_all[p];
                    let rate = alpha * (kx * kx + km * km + kp * kp);
                    tr += self.ct[(n * self.ny + m) * self.nz + p] * xf * self.z_mode(p, z) / km * exp_integral(rate, t_end);
                }
            }
        }
        (chip + die) * t_end + tr
    }

    /// Weights for [`CompoundSolution::convolution_line_integral`] at a fixed
    /// observation line.
    pub fn line_weights(&self, x: f64, z: f64) -> LineWeights {
        let k = &self.kernel;
        let alpha = k.diffusivity;
        let half_l = 0.5 * self.length;
        let mut weight = Vec::with_capacity(k.lx.len() * k.ly.len() * k.lz.len());
        let mut beta = Vec::with_capacity(weight.capacity());
        for (n, kx) in k.lx.iter().enumerate() {
            let xf = (kx * x.abs()).cos() / k.x_norm[n];
            for km in &k.ly {
                let yf = 1.0 / (km * half_l);
                for (p, kp) in k.lz.iter().enumerate() {
                    let zf = (kp * (z + 0.5 * k.height)).sin() * k.z_src[p] / k.z_norm[p];
                    weight.push(xf * yf * zf / k.heat_capacity);
                    beta.push(alpha * (kx * kx + km * km + kp * kp));
                }
            }
        }
        LineWeights {
            weight,
            beta,
            ny: k.ly.len(),
            nz: k.lz.len(),
        }
    }

    /// Integral over `y in [0, L]`, `t in [0, t_end]` of the convolution term
    /// along the line described by `weights`.
    pub fn convolution_line_integral(&self, source: &LineSource, weights: &LineWeights, t_end: f64) -> f64 {
        if source.strength == 0.0 {
            return 0.0;
        }
        let per_n = weights.ny * weights.nz;
        let total: f64 = weights
            .weight
            .par_chunks(per_n)
            .zip(weights.beta.par_chunks(per_n))
            .map(|(w, b)| {
                let mut s = 0.0;
                for m in 0..weights.ny {
                    for p in 0..weights.nz {
                        let i = m * weights.nz + p;
                        s += w[i] * source.convolved_integral(m, b[i], t_end);
                    }
                }
                s
            })
            .sum();
        source.strength * total
    }

    pub fn ambient(&self) -> f64 {
        self.t_ambient
    }

    pub fn compound(&self) -> &CompoundSpec {
        &self.compound
    }

    pub fn length(&self) -> f64 {
        self.length
    }
}

/// Precomputed mode weights of a y-integrated observation line.
#[derive(Debug, Clone)]
pub struct LineWeights {
    weight: Vec<f64>,
    beta: Vec<f64>,
    ny: usize,
    nz: usize,
}

/// One sample of an exported field.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FieldSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
    #[serde(rename = "T")]
    pub temperature: f64,
}

/// Evaluate the compound temperature on the tensor grid `xs x ys x zs` at `t`.
pub fn sample_field(
    solution: &CompoundSolution,
    source: Option<&LineSource>,
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    t: f64,
) -> Result<Vec<FieldSample>> {
    let mut points = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &x in xs {
        for &y in ys {
            for &z in zs {
                solution.check_domain(x, y, z)?;
                points.push((x, y, z));
            }
        }
    }
    points
        .into_par_iter()
        .map(|(x, y, z)| {
            Ok(FieldSample {
                x,
                y,
                z,
                t,
                temperature: solution.temperature(source, x, y, z, t)?,
            })
        })
        .collect()
}

/// Write samples as CSV with header `x,y,z,t,T`.
pub fn write_field_csv<W: Write>(out: W, samples: &[FieldSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(s).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Evenly spaced points including both ends.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Observation point of the interface balance, `offset_scale` wire radii
/// from the axis along the diagonal (0 is the axis).
pub fn interface_point(config: &ModelConfig, offset_scale: f64) -> Result<(f64, f64)> {
    if !(offset_scale >= 0.0 && offset_scale.is_finite()) {
        return Err(invalid("interface_offset", "must be >= 0"));
    }
    let r = 0.5 * config.wire.diameter * offset_scale;
    let c = r / std::f64::consts::SQRT_2;
    Ok((c, c))
}
