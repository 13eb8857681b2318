//! Least-squares fit of the wire model to fusing events.
//!
//! The residual is `sum_i (T_f - B(p, I_i, t_i))^2`, where `B` is the wire
//! midpoint temperature after the coupling fixed point. Each Newton step
//! truncates the SVD of the Hessian, picks the well-conditioned parameters
//! by a column-pivoted QR of the retained right singular vectors, solves the
//! reduced system for those, and keeps the rest fixed. All linear algebra
//! runs on parameters divided by their nominal magnitudes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::coupling::{fixed_point, require_converged, CouplingOptions};
use crate::error::{invalid, Error, Result};
use crate::model::{Drive, Material, ModelConfig, MIL};
use crate::spectral::Truncation;
use crate::wire::WireSolution;

/// Order of the fitted wire parameters.
pub const PARAMETER_NAMES: [&str; 11] = [
    "D_w",
    "L_w",
    "rho_e0",
    "alpha_rho",
    "rho_w",
    "kappa0",
    "alpha_kappa",
    "c_w",
    "eps_w",
    "T_ch",
    "T_ld",
];

/// One optimisable entry with its bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    pub nominal: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Parameter {
    pub fn new(name: &str, nominal: f64, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            value: nominal,
            nominal,
            lower,
            upper,
        }
    }

    /// Magnitude used to normalise the parameter.
    pub fn scale(&self) -> f64 {
        if self.nominal != 0.0 {
            self.nominal.abs()
        } else {
            (self.upper - self.lower).abs().max(f64::MIN_POSITIVE)
        }
    }

    /// `(value - nominal) / |nominal|` in percent.
    pub fn variation_percent(&self) -> f64 {
        100.0 * (self.value - self.nominal) / self.scale()
    }
}

/// Ordered parameter set of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub entries: Vec<Parameter>,
}

impl ParameterVector {
    pub fn new(entries: Vec<Parameter>) -> Result<Self> {
        let p = Self { entries };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(invalid("parameters", "empty parameter vector"));
        }
        for e in &self.entries {
            if !(e.lower <= e.upper) {
                return Err(invalid("parameters", format!("{}: lower bound above upper", e.name)));
            }
            if !(e.value >= e.lower && e.value <= e.upper) {
                return Err(invalid(
                    "parameters",
                    format!("{} = {} outside [{}, {}]", e.name, e.value, e.lower, e.upper),
                ));
            }
        }
        Ok(())
    }

    /// Nominal wire parameters of `config` with the fitting bounds: diameter
    /// and length within 30%, chip and lead temperatures up to 50% above
    /// nominal, emissivity in (0, 1], `alpha_rho >= 0`, `alpha_kappa <= 0`,
    /// the remaining positive quantities within a factor of ten.
    pub fn from_config(config: &ModelConfig) -> Self {
        let w = &config.wire;
        let pm = |name: &str, v: f64, f: f64| Parameter::new(name, v, v * (1.0 - f), v * (1.0 + f));
        let dec = |name: &str, v: f64| Parameter::new(name, v, 0.1 * v, 10.0 * v);
        let entries = vec![
            pm("D_w", w.diameter, 0.3),
            pm("L_w", w.length, 0.3),
            dec("rho_e0", w.rho_e0),
            Parameter::new("alpha_rho", w.alpha_rho, 0.0, 10.0 * w.alpha_rho.max(1e-4)),
            dec("rho_w", w.mass_density),
            dec("kappa0", w.kappa0),
            Parameter::new("alpha_kappa", w.alpha_kappa, -10.0 * w.alpha_kappa.abs().max(1e-5), 0.0),
            dec("c_w", w.specific_heat),
            Parameter::new("eps_w", w.emissivity, 1e-4_f64.min(w.emissivity), 1.0),
            Parameter::new("T_ch", config.bc.t_chip, config.bc.t_chip, 1.5 * config.bc.t_chip),
            Parameter::new("T_ld", config.bc.t_lead, config.bc.t_lead, 1.5 * config.bc.t_lead),
        ];
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.entries[i].value)
    }

    /// Set entry `i`, clamped to its bounds.
    pub fn set(&mut self, i: usize, v: f64) {
        let e = &mut self.entries[i];
        e.value = v.clamp(e.lower, e.upper);
    }

    pub fn scales(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.scale()).collect()
    }

    /// Values divided by their scales.
    pub fn scaled(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.entries.iter().map(|e| e.value / e.scale()))
    }

    /// Copy moved by `step` (in scaled units) and projected onto the bounds.
    /// Entries with a zero step keep their exact value.
    pub fn stepped(&self, step: &DVector<f64>) -> Self {
        let mut out = self.clone();
        for (i, e) in out.entries.iter_mut().enumerate() {
            if step[i] != 0.0 {
                e.value = (e.value + step[i] * e.scale()).clamp(e.lower, e.upper);
            }
        }
        out
    }

    pub fn variations(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.variation_percent()).collect()
    }

    /// `base` with the eleven wire parameters substituted.
    pub fn apply(&self, base: &ModelConfig) -> Result<ModelConfig> {
        let mut c = base.clone();
        for e in &self.entries {
            match e.name.as_str() {
                "D_w" => c.wire.diameter = e.value,
                "L_w" => c.wire.length = e.value,
                "rho_e0" => c.wire.rho_e0 = e.value,
                "alpha_rho" => c.wire.alpha_rho = e.value,
                "rho_w" => c.wire.mass_density = e.value,
                "kappa0" => c.wire.kappa0 = e.value,
                "alpha_kappa" => c.wire.alpha_kappa = e.value,
                "c_w" => c.wire.specific_heat = e.value,
                "eps_w" => c.wire.emissivity = e.value,
                "T_ch" => c.bc.t_chip = e.value,
                "T_ld" => c.bc.t_lead = e.value,
                other => return Err(invalid("parameters", format!("unknown wire parameter `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// One measured `(I_0, t_p)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusingEvent {
    /// A
    pub current: f64,
    /// s
    pub duration: f64,
}

/// Which wire a dataset belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireId {
    pub material: Material,
    /// Nominal diameter, m.
    pub diameter: f64,
    pub position: Option<u32>,
}

impl WireId {
    /// Material and nominal diameter, e.g. `Au 1.0 mil`.
    pub fn kind(&self) -> String {
        format!("{} {:.1} mil", self.material.name(), self.diameter / MIL)
    }

    /// [`WireId::kind`] plus the package position, e.g. `Cu 2.0 mil pos 3`.
    pub fn label(&self) -> String {
        let mut s = self.kind();
        if let Some(p) = self.position {
            let _ = write!(s, " pos {p}");
        }
        s
    }
}

/// Fusing events of one wire type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusingDataset {
    pub wire: WireId,
    /// Fusing temperature, K.
    pub fusing_temperature: f64,
    pub events: Vec<FusingEvent>,
}

impl FusingDataset {
    /// Dataset fusing at the material's melting point.
    pub fn new(wire: WireId, events: Vec<FusingEvent>) -> Result<Self> {
        let d = Self {
            fusing_temperature: wire.material.melting_temperature(),
            wire,
            events,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fusing_temperature > 0.0) {
            return Err(invalid("fusing_temperature", "must be > 0"));
        }
        for (i, e) in self.events.iter().enumerate() {
            if !(e.current > 0.0 && e.current.is_finite() && e.duration > 0.0 && e.duration.is_finite()) {
                return Err(invalid("events", format!("event {i}: need I > 0 and t_p > 0")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Model output for one event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    /// Midpoint temperature at `t_p`, K.
    pub midpoint: f64,
    /// Slowest wire time constant, s.
    pub time_constant: f64,
}

/// The map `B(p, I, t_p)`.
pub trait FusingModel: Sync {
    fn evaluate(&self, p: &ParameterVector, event: &FusingEvent) -> Result<Evaluation>;
}

/// Midpoint temperature after the full coupling fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledModel {
    pub base: ModelConfig,
    pub coupling: CouplingOptions,
}

impl CoupledModel {
    pub fn new(base: ModelConfig, coupling: CouplingOptions) -> Self {
        Self { base, coupling }
    }

    /// Coarse series and a tight coupling tolerance: cheap enough for
    /// finite-difference derivatives, smooth to well below their step.
    pub fn reduced(mut base: ModelConfig) -> Self {
        base.truncation = Truncation {
            nx: 4,
            ny: 6,
            nz: 4,
            nk: 20,
            steady: 40,
        };
        base.quadrature_points = 64;
        Self {
            base,
            coupling: CouplingOptions {
                tol: 1e-11,
                max_iter: 200,
                ..CouplingOptions::default()
            },
        }
    }
}

impl FusingModel for CoupledModel {
    fn evaluate(&self, p: &ParameterVector, event: &FusingEvent) -> Result<Evaluation> {
        let config = p.apply(&self.base)?;
        let drive = Drive::new(event.current, event.duration)?;
        let r = require_converged(fixed_point(&config, &drive, &self.coupling)?)?;
        let sol = WireSolution::new(&config, &drive, &r.state)?;
        Ok(Evaluation {
            midpoint: sol.temperature(0.5 * config.wire.length, event.duration)?,
            time_constant: sol.time_constant(),
        })
    }
}

/// Residual of one parameter set over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Sum over the unmasked events.
    pub total: f64,
    /// `(T_f - B_i)^2`, `None` where the model failed.
    pub per_event: Vec<Option<f64>>,
    pub evaluations: Vec<Option<Evaluation>>,
    pub masked: usize,
}

impl ResidualReport {
    pub fn predictions(&self) -> Vec<Option<f64>> {
        self.evaluations.iter().map(|e| e.map(|v| v.midpoint)).collect()
    }

    fn mask(&self) -> Vec<bool> {
        self.per_event.iter().map(|r| r.is_some()).collect()
    }
}

/// Total residual; events whose evaluation fails are masked with a warning.
pub fn residual(p: &ParameterVector, data: &FusingDataset, model: &dyn FusingModel) -> ResidualReport {
    if data.is_empty() {
        log::warn!("empty dataset: residual is 0");
    }
    let evaluations: Vec<Option<Evaluation>> = data
        .events
        .par_iter()
        .enumerate()
        .map(|(i, e)| match model.evaluate(p, e) {
            Ok(v) => Some(v),
            Err(err) => {
                log::warn!("event {i} (I = {} A, t_p = {} s) masked: {err}", e.current, e.duration);
                None
            }
        })
        .collect();
    let per_event: Vec<Option<f64>> = evaluations
        .iter()
        .map(|e| e.map(|v| (data.fusing_temperature - v.midpoint).powi(2)))
        .collect();
    ResidualReport {
        total: per_event.iter().flatten().sum(),
        masked: per_event.iter().filter(|r| r.is_none()).count(),
        per_event,
        evaluations,
    }
}

/// Finite-difference settings for model derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianOptions {
    /// Step relative to the parameter scale.
    pub rel_step: f64,
    pub abs_floor: f64,
    /// Combine steps `h` and `h/2` by Richardson extrapolation.
    pub richardson: bool,
}

impl Default for JacobianOptions {
    fn default() -> Self {
        Self {
            rel_step: 1e-4,
            abs_floor: 1e-10,
            richardson: false,
        }
    }
}

fn shifted(p: &ParameterVector, j: usize, d: f64) -> ParameterVector {
    let mut q = p.clone();
    q.entries[j].value += d;
    q
}

/// One-sided or central difference of `f` in parameter `j` with step `h`,
/// keeping the evaluation points inside the bounds. A side whose evaluation
/// fails (runaway next to the melting limit) is dropped in favour of the
/// one-sided difference from the other.
fn difference(
    p: &ParameterVector,
    j: usize,
    h: f64,
    f: &(dyn Fn(&ParameterVector) -> Result<f64> + Sync),
    f0: f64,
) -> Result<f64> {
    let e = &p.entries[j];
    if e.value + h > e.upper && e.value - h < e.lower {
        return Err(invalid("parameters", format!("{}: bounds narrower than the difference step", e.name)));
    }
    let up = (e.value + h <= e.upper).then(|| f(&shifted(p, j, h)));
    let down = (e.value - h >= e.lower).then(|| f(&shifted(p, j, -h)));
    match (up, down) {
        (Some(Ok(a)), Some(Ok(b))) => Ok((a - b) / (2.0 * h)),
        (Some(Ok(a)), _) => Ok((a - f0) / h),
        (_, Some(Ok(b))) => Ok((f0 - b) / h),
        (Some(Err(e)), _) | (_, Some(Err(e))) => Err(e),
        (None, None) => unreachable!(),
    }
}

fn derivative(
    p: &ParameterVector,
    j: usize,
    opts: &JacobianOptions,
    f: &(dyn Fn(&ParameterVector) -> Result<f64> + Sync),
    f0: f64,
) -> Result<f64> {
    let h = (opts.rel_step * p.entries[j].scale()).max(opts.abs_floor);
    let d1 = difference(p, j, h, f, f0)?;
    if !opts.richardson {
        return Ok(d1);
    }
    let d2 = difference(p, j, 0.5 * h, f, f0)?;
    // second order for central differences; the one-sided case uses the same
    // weights, which removes the leading term only approximately
    Ok((4.0 * d2 - d1) / 3.0)
}

/// `N_d x N_p` Jacobian of the midpoint temperatures in physical units.
/// Rows of events that fail at `p` are zero, as are cells where the model
/// fails on both sides of the difference stencil.
pub fn model_jacobian(
    p: &ParameterVector,
    data: &FusingDataset,
    model: &dyn FusingModel,
    base: &ResidualReport,
    opts: &JacobianOptions,
) -> Result<DMatrix<f64>> {
    let (nd, np) = (data.len(), p.len());
    let cells: Vec<(usize, usize)> = (0..nd).flat_map(|i| (0..np).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let Some(b0) = base.evaluations[i] else {
                return Ok(0.0);
            };
            let ev = data.events[i];
            let f = move |q: &ParameterVector| model.evaluate(q, &ev).map(|v| v.midpoint);
            match derivative(p, j, opts, &f, b0.midpoint) {
                Err(e) if !matches!(e, Error::InvalidParameter { .. }) => {
                    log::warn!("d B_{i} / d {}: {e}; entry set to zero", p.entries[j].name);
                    Ok(0.0)
                }
                r => r,
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DMatrix::from_row_slice(nd, np, &vals))
}

/// Per-event Hessians of the midpoint temperature in physical units.
pub fn model_hessians(
    p: &ParameterVector,
    data: &FusingDataset,
    model: &dyn FusingModel,
    base: &ResidualReport,
    opts: &JacobianOptions,
) -> Result<Vec<DMatrix<f64>>> {
    let np = p.len();
    data.events
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let mut h = DMatrix::zeros(np, np);
            let Some(b0) = base.evaluations[i] else {
                return Ok(h);
            };
            let b = |q: &ParameterVector| model.evaluate(q, ev).map(|v| v.midpoint);
            let steps: Vec<f64> = p
                .entries
                .iter()
                .map(|e| (opts.rel_step.sqrt() * 0.1 * e.scale()).max(opts.abs_floor))
                .collect();
            for j in 0..np {
                let hj = steps[j];
                let (pj, mj) = (shifted(p, j, hj), shifted(p, j, -hj));
                h[(j, j)] = (b(&pj)? - 2.0 * b0.midpoint + b(&mj)?) / (hj * hj);
                for k in 0..j {
                    let hk = steps[k];
                    let v = (b(&shifted(&pj, k, hk))? - b(&shifted(&pj, k, -hk))? - b(&shifted(&mj, k, hk))?
                        + b(&shifted(&mj, k, -hk))?)
                        / (4.0 * hj * hk);
                    h[(j, k)] = v;
                    h[(k, j)] = v;
                }
            }
            Ok(h)
        })
        .collect()
}

/// Which second-order term the residual Hessian keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    /// `2 J^T J`.
    #[default]
    GaussNewton,
    /// Adds `2 sum_i (B_i - T_f) H_B,i`.
    Full,
}

/// Gradient and Hessian of the total residual from the model derivatives:
/// `J_R = 2 (B - T)^T J_B` and `H_R = 2 J_B^T J_B + 2 sum (B_i - T) H_B,i`.
/// Masked events (`None`) drop out.
pub fn residual_derivatives(
    predictions: &[Option<f64>],
    target: f64,
    jb: &DMatrix<f64>,
    hessians: Option<&[DMatrix<f64>]>,
) -> (DVector<f64>, DMatrix<f64>) {
    let np = jb.ncols();
    let mut j_r = DVector::zeros(np);
    let mut h_r = DMatrix::zeros(np, np);
    for (i, b) in predictions.iter().enumerate() {
        let Some(b) = b else { continue };
        let row = jb.row(i).transpose();
        j_r += 2.0 * (b - target) * &row;
        h_r += 2.0 * &row * row.transpose();
        if let Some(hs) = hessians {
            h_r += 2.0 * (b - target) * &hs[i];
        }
    }
    (j_r, h_r)
}

/// Truncated singular value decomposition of the residual Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
    /// Number retained.
    pub rank: usize,
    pub threshold_ratio: f64,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl TruncatedSvd {
    /// Retained right singular vectors as columns, `N_p x r`.
    pub fn v_1u(&self) -> DMatrix<f64> {
        self.v.columns(0, self.rank).into_owned()
    }

    /// Retained singular values as a diagonal matrix.
    pub fn sigma_uu(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&self.singular_values[..self.rank]))
    }

    /// Rank-`r` reconstruction `sum sigma_i u_i v_i^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let r = self.rank;
        self.u.columns(0, r) * self.sigma_uu() * self.v.columns(0, r).transpose()
    }
}

/// SVD of `h` keeping singular values `>= threshold_ratio * sigma_1`.
pub fn svd_truncate(h: &DMatrix<f64>, threshold_ratio: f64) -> Result<TruncatedSvd> {
    if !(0.0..1.0).contains(&threshold_ratio) {
        return Err(invalid("threshold", "must lie in [0, 1)"));
    }
    let n = h.ncols();
    let svd = h.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::SolverFailure("SVD did not produce singular vectors".into())),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let s1 = singular_values.first().copied().unwrap_or(0.0);
    if !(s1 > 0.0) {
        return Err(Error::DegenerateHessian);
    }
    let rank = singular_values.iter().filter(|&&s| s >= threshold_ratio * s1).count().max(1);
    let u = DMatrix::from_fn(n, n, |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(n, n, |r, c| vt[(order[c], r)]);
    Ok(TruncatedSvd {
        singular_values,
        rank,
        threshold_ratio,
        u,
        v,
    })
}

/// Split of the parameters into well-conditioned (first `rank` entries of
/// `permutation`) and frozen ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetSplit {
    pub permutation: Vec<usize>,
    pub rank: usize,
    /// Relative singular-value threshold that produced `rank`.
    pub threshold: f64,
}

impl SubsetSplit {
    pub fn selected(&self) -> &[usize] {
        &self.permutation[..self.rank]
    }

    pub fn frozen(&self) -> &[usize] {
        &self.permutation[self.rank..]
    }
}

/// Column-pivoted QR of the `r x N_p` matrix `V_u1^T`; the first `r` pivots
/// name the well-conditioned parameters.
pub fn qr_subset_select(v_u1t: &DMatrix<f64>, threshold: f64) -> SubsetSplit {
    let (r, n) = v_u1t.shape();
    let qr = v_u1t.clone().col_piv_qr();
    let mut idx = DMatrix::from_fn(1, n, |_, c| c as f64);
    qr.p().permute_columns(&mut idx);
    SubsetSplit {
        permutation: idx.iter().map(|&v| v as usize).collect(),
        rank: r.min(n),
        threshold,
    }
}

/// Reduced Newton direction in scaled units: solves
/// `H~_uu dp_u = -J_u` on the selected parameters, zero elsewhere.
pub fn reduced_direction(
    j_r: &DVector<f64>,
    svd: &TruncatedSvd,
    split: &SubsetSplit,
) -> Result<DVector<f64>> {
    let n = j_r.len();
    let sel = split.selected();
    let h_t = svd.reconstruct();
    let r = sel.len();
    let h_uu = DMatrix::from_fn(r, r, |a, b| h_t[(sel[a], sel[b])]);
    let j_u = DVector::from_iterator(r, sel.iter().map(|&i| -j_r[i]));
    let lu = h_uu.clone().lu();
    let sol = lu.solve(&j_u).ok_or(Error::SingularReducedSystem)?;
    let sv = h_uu.singular_values();
    let (mx, mn) = (sv.max(), sv.min());
    if !(mn > mx * 1e-14) || sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularReducedSystem);
    }
    let mut d = DVector::zeros(n);
    for (a, &i) in sel.iter().enumerate() {
        d[i] = sol[a];
    }
    Ok(d)
}

/// Result of a line search along a Newton direction.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub params: ParameterVector,
    pub report: ResidualReport,
    /// Scaled step actually taken (after projection).
    pub step: DVector<f64>,
    pub halvings: usize,
    pub accepted: bool,
}

/// Backtracking along `direction` (scaled units): the full step, then halved
/// up to `max_halvings` times, each projected onto the bounds. The first
/// candidate that does not increase the residual (over the same unmasked
/// events) is accepted; otherwise the iterate stays put.
pub fn line_search(
    p: &ParameterVector,
    current: &ResidualReport,
    direction: &DVector<f64>,
    data: &FusingDataset,
    model: &dyn FusingModel,
    max_halvings: usize,
) -> StepOutcome {
    let mask = current.mask();
    let mut alpha = 1.0;
    for k in 0..=max_halvings {
        let cand = p.stepped(&(direction * alpha));
        let rep = residual(&cand, data, model);
        if rep.mask() == mask && rep.total <= current.total {
            let step = cand.scaled() - p.scaled();
            return StepOutcome {
                params: cand,
                report: rep,
                step,
                halvings: k,
                accepted: true,
            };
        }
        alpha *= 0.5;
    }
    StepOutcome {
        params: p.clone(),
        report: current.clone(),
        step: DVector::zeros(p.len()),
        halvings: max_halvings,
        accepted: false,
    }
}

/// One reduced Newton step with line search and bound projection.
#[allow(clippy::too_many_arguments)]
pub fn newton_step(
    p: &ParameterVector,
    current: &ResidualReport,
    j_r: &DVector<f64>,
    svd: &TruncatedSvd,
    split: &SubsetSplit,
    data: &FusingDataset,
    model: &dyn FusingModel,
    max_halvings: usize,
) -> Result<StepOutcome> {
    let d = reduced_direction(j_r, svd, split)?;
    Ok(line_search(p, current, &d, data, model, max_halvings))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    /// Stop when the relative scaled step falls below this.
    pub step_tol: f64,
    /// Stop when the relative residual change falls below this.
    pub residual_tol: f64,
    /// Singular values below `threshold * sigma_1` are dropped.
    pub threshold: f64,
    pub hessian: HessianMode,
    pub jacobian: JacobianOptions,
    pub max_halvings: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            step_tol: 1e-5,
            residual_tol: 1e-8,
            threshold: 1e-6,
            hessian: HessianMode::GaussNewton,
            jacobian: JacobianOptions::default(),
            max_halvings: 20,
        }
    }
}

/// Record of one Newton iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual_before: f64,
    pub residual_after: f64,
    /// Singular values of the scaled residual Hessian, descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub selected: Vec<String>,
    pub frozen: Vec<String>,
    /// Smallest eigenvalue of the scaled residual Hessian.
    pub min_hessian_eigenvalue: f64,
    /// Euclidean norm of the scaled step.
    pub step_norm: f64,
    pub halvings: usize,
    pub parameters: Vec<f64>,
}

/// Parameter row of the final summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub nominal: f64,
    pub initial: f64,
    pub fitted: f64,
    /// Percent change of the fitted value against nominal.
    pub variation_percent: f64,
}

/// Model error split into transient and steady events, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSplit {
    /// Mean `|T_f - B| / T_f` over events with `t_p <= tau`, `None` if none.
    pub transient: Option<f64>,
    /// Same over events with `t_p > tau`.
    pub steady: Option<f64>,
    pub transient_events: usize,
    pub steady_events: usize,
}

impl ErrorSplit {
    /// Classify each event by the slowest wire time constant at the
    /// parameters of `report`.
    pub fn from_report(data: &FusingDataset, report: &ResidualReport) -> Self {
        let (mut st, mut nt, mut ss, mut ns) = (0.0, 0, 0.0, 0);
        for (e, ev) in data.events.iter().zip(&report.evaluations) {
            let Some(ev) = ev else { continue };
            let err = 100.0 * (data.fusing_temperature - ev.midpoint).abs() / data.fusing_temperature;
            if e.duration <= ev.time_constant {
                st += err;
                nt += 1;
            } else {
                ss += err;
                ns += 1;
            }
        }
        Self {
            transient: (nt > 0).then(|| st / nt as f64),
            steady: (ns > 0).then(|| ss / ns as f64),
            transient_events: nt,
            steady_events: ns,
        }
    }
}

/// Full optimisation report; serialises to the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationReport {
    pub wire: String,
    pub events: usize,
    pub converged: bool,
    pub stop_reason: String,
    pub options: OptimizeOptions,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub iterations: Vec<IterationRecord>,
    pub parameters: Vec<ParameterSummary>,
    pub error_before: ErrorSplit,
    pub error_after: ErrorSplit,
}

impl OptimizationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Fitted parameters with the report.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationOutcome {
    pub params: ParameterVector,
    pub report: OptimizationReport,
}

impl OptimizationOutcome {
    /// The outcome, or `NotConverged` carrying the best residual.
    pub fn require_converged(self) -> Result<Self> {
        if self.report.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.report.iterations.len(),
                residual: self.report.final_residual,
            })
        }
    }
}

/// Subset-selection Newton fit starting at `p0`. The best iterate is always
/// returned; `report.converged` tells whether a stopping test was met.
pub fn optimize(
    p0: &ParameterVector,
    data: &FusingDataset,
    model: &dyn FusingModel,
    options: &OptimizeOptions,
) -> Result<OptimizationOutcome> {
    p0.validate()?;
    data.validate()?;
    if data.len() < p0.len() {
        log::warn!("{} events for {} parameters", data.len(), p0.len());
    }
    let scales = DVector::from_vec(p0.scales());
    let mut p = p0.clone();
    let mut current = residual(&p, data, model);
    let initial = current.clone();
    if current.masked == data.len() && !data.is_empty() {
        return Err(Error::SolverFailure("model failed for every event at the start point".into()));
    }
    let mut records = Vec::new();
    let mut converged = false;
    let mut reason = format!("iteration limit {}", options.max_iter);
    for it in 1..=options.max_iter {
        let jb = model_jacobian(&p, data, model, &current, &options.jacobian)?;
        // derivatives with respect to the scaled parameters
        let jb_s = DMatrix::from_fn(jb.nrows(), jb.ncols(), |i, j| jb[(i, j)] * scales[j]);
        let hess = match options.hessian {
            HessianMode::GaussNewton => None,
            HessianMode::Full => Some(
                model_hessians(&p, data, model, &current, &options.jacobian)?
                    .into_iter()
                    .map(|h| DMatrix::from_fn(h.nrows(), h.ncols(), |a, b| h[(a, b)] * scales[a] * scales[b]))
                    .collect::<Vec<_>>(),
            ),
        };
        let (j_r, h_r) = residual_derivatives(&current.predictions(), data.fusing_temperature, &jb_s, hess.as_deref());
        let min_eig = SymmetricEigen::new(0.5 * (&h_r + h_r.transpose())).eigenvalues.min();
        let svd = svd_truncate(&h_r, options.threshold)?;
        let v_u1t = svd.v_1u().transpose();
        let split = qr_subset_select(&v_u1t, svd.threshold_ratio);
        let names = p.names();
        let step = newton_step(&p, &current, &j_r, &svd, &split, data, model, options.max_halvings)?;
        let before = current.total;
        let step_norm = step.step.norm();
        records.push(IterationRecord {
            iteration: it,
            residual_before: before,
            residual_after: step.report.total,
            singular_values: svd.singular_values.clone(),
            rank: svd.rank,
            selected: split.selected().iter().map(|&i| names[i].clone()).collect(),
            frozen: split.frozen().iter().map(|&i| names[i].clone()).collect(),
            min_hessian_eigenvalue: min_eig,
            step_norm,
            halvings: step.halvings,
            parameters: step.params.values(),
        });
        log::info!(
            "iteration {it}: residual {:.6e} -> {:.6e}, rank {}, step {:.3e}",
            before,
            step.report.total,
            svd.rank,
            step_norm
        );
        if !step.accepted {
            reason = "line search found no descent along the reduced Newton direction".into();
            break;
        }
        p = step.params;
        current = step.report;
        if step_norm <= options.step_tol * p.scaled().norm() {
            converged = true;
            reason = "relative step below tolerance".into();
            break;
        }
        if (before - current.total).abs() <= options.residual_tol * before {
            converged = true;
            reason = "relative residual change below tolerance".into();
            break;
        }
    }
    let parameters = p
        .entries
        .iter()
        .zip(&p0.entries)
        .map(|(e, e0)| ParameterSummary {
            name: e.name.clone(),
            nominal: e.nominal,
            initial: e0.value,
            fitted: e.value,
            variation_percent: e.variation_percent(),
        })
        .collect();
    let report = OptimizationReport {
        wire: data.wire.label(),
        events: data.len(),
        converged,
        stop_reason: reason,
        options: *options,
        initial_residual: initial.total,
        final_residual: current.total,
        iterations: records,
        parameters,
        error_before: ErrorSplit::from_report(data, &initial),
        error_after: ErrorSplit::from_report(data, &current),
    };
    Ok(OptimizationOutcome { params: p, report })
}

/// Current at which the midpoint reaches the fusing temperature after
/// `duration`, by bisection on `[lo, hi]`. Evaluations that fail (runaway
/// heating) count as hotter than fusing.
pub fn fusing_current(
    model: &dyn FusingModel,
    p: &ParameterVector,
    target: f64,
    duration: f64,
    lo: f64,
    hi: f64,
    rel_tol: f64,
) -> Result<f64> {
    let hot = |i: f64| -> Result<bool> {
        match model.evaluate(p, &FusingEvent { current: i, duration }) {
            Ok(v) => Ok(v.midpoint >= target),
            Err(Error::InvalidParameter { name, reason }) => Err(Error::InvalidParameter { name, reason }),
            Err(_) => Ok(true),
        }
    };
    if hot(lo)? {
        return Err(invalid("current bracket", format!("already at fusing temperature at {lo} A")));
    }
    if !hot(hi)? {
        return Err(invalid("current bracket", format!("fusing temperature not reached at {hi} A")));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > rel_tol * b {
        let m = 0.5 * (a + b);
        if hot(m)? {
            b = m;
        } else {
            a = m;
        }
    }
    // a failure band ending exactly at the crossing is not a fusing event
    let ok = model.evaluate(p, &FusingEvent { current: b, duration }).is_ok();
    if !ok {
        return Err(Error::SolverFailure(format!(
            "model fails just above {a} A before reaching the fusing temperature"
        )));
    }
    Ok(0.5 * (a + b))
}

/// Synthetic dataset: for each pulse length the fusing current under
/// `p_true`, then the pulse lengths scaled by `1 + noise * N(0, 1)`.
pub fn synthesize_dataset(
    model: &dyn FusingModel,
    p_true: &ParameterVector,
    wire: WireId,
    durations: &[f64],
    current_bracket: (f64, f64),
    noise: f64,
    seed: u64,
) -> Result<FusingDataset> {
    let target = wire.material.melting_temperature();
    let currents = durations
        .par_iter()
        .map(|&t| fusing_current(model, p_true, target, t, current_bracket.0, current_bracket.1, 1e-10))
        .collect::<Result<Vec<f64>>>()?;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| invalid("noise", e.to_string()))?;
    let events = currents
        .iter()
        .zip(durations)
        .map(|(&current, &t)| {
            let f: f64 = normal.sample(&mut rng);
            FusingEvent {
                current,
                duration: t * (1.0 + noise * f).max(0.5),
            }
        })
        .collect();
    FusingDataset::new(wire, events)
}

/// Table of percent parameter variations, one column per fitted wire.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationTable {
    pub columns: Vec<String>,
    pub parameters: Vec<String>,
    /// `values[row][column]`, percent.
    pub values: Vec<Vec<f64>>,
    /// Row means over the columns.
    pub totals: Vec<f64>,
}

impl VariationTable {
    /// Fits sharing a column label (the same wire at several package
    /// positions) are averaged into one column.
    pub fn new(fits: &[(String, ParameterVector)]) -> Result<Self> {
        let Some((_, first)) = fits.first() else {
            return Err(invalid("fits", "need at least one fitted wire"));
        };
        let parameters = first.names();
        for (label, p) in fits {
            if p.names() != parameters {
                return Err(invalid("fits", format!("{label}: parameter layout differs")));
            }
        }
        let groups = group_labels(fits.iter().map(|f| f.0.as_str()));
        let values: Vec<Vec<f64>> = (0..parameters.len())
            .map(|r| {
                groups
                    .iter()
                    .map(|(_, idx)| idx.iter().map(|&i| fits[i].1.entries[r].variation_percent()).sum::<f64>() / idx.len() as f64)
                    .collect()
            })
            .collect();
        let totals = values.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
        Ok(Self {
            columns: groups.into_iter().map(|g| g.0).collect(),
            parameters,
            values,
            totals,
        })
    }

    /// Text table grouped into geometric, electric and thermal rows.
    pub fn render(&self) -> String {
        let section = |name: &str| match name {
            "D_w" | "L_w" => "Geom",
            "rho_e0" | "alpha_rho" => "Elec",
            _ => "Therm",
        };
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec![String::new()];
        header.extend(self.columns.iter().cloned());
        header.push("Δ_tot".into());
        let mut last = "";
        for (r, name) in self.parameters.iter().enumerate() {
            let s = section(name);
            if s != last {
                let mut row = vec![s.to_string()];
                row.extend(std::iter::repeat_n(String::new(), self.columns.len() + 1));
                rows.push(row);
                last = s;
            }
            let mut row = vec![format!("Δ{name}")];
            row.extend(self.values[r].iter().map(|v| percent(Some(*v))));
            row.push(percent(Some(self.totals[r])));
            rows.push(row);
        }
        render_grid(&header, &rows)
    }
}

/// Table of the transient/steady error split before and after fitting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorTable {
    pub columns: Vec<String>,
    pub before: Vec<ErrorSplit>,
    pub after: Vec<ErrorSplit>,
}

impl ErrorTable {
    /// Splits sharing a column label are averaged, as in [`VariationTable`].
    pub fn new(fits: &[(String, ErrorSplit, ErrorSplit)]) -> Self {
        let groups = group_labels(fits.iter().map(|f| f.0.as_str()));
        let merge = |idx: &[usize], pick: fn(&(String, ErrorSplit, ErrorSplit)) -> ErrorSplit| {
            let splits: Vec<ErrorSplit> = idx.iter().map(|&i| pick(&fits[i])).collect();
            ErrorSplit {
                transient: Self::mean(&splits.iter().map(|s| s.transient).collect::<Vec<_>>()),
                steady: Self::mean(&splits.iter().map(|s| s.steady).collect::<Vec<_>>()),
                transient_events: splits.iter().map(|s| s.transient_events).sum(),
                steady_events: splits.iter().map(|s| s.steady_events).sum(),
            }
        };
        Self {
            before: groups.iter().map(|(_, idx)| merge(idx, |f| f.1)).collect(),
            after: groups.iter().map(|(_, idx)| merge(idx, |f| f.2)).collect(),
            columns: groups.into_iter().map(|g| g.0).collect(),
        }
    }

    fn mean(v: &[Option<f64>]) -> Option<f64> {
        let vals: Vec<f64> = v.iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn render(&self) -> String {
        let mut header = vec![String::new()];
        header.extend(self.columns.iter().cloned());
        header.push("ε_tot".into());
        let line = |label: &str, v: Vec<Option<f64>>| {
            let mut row = vec![label.to_string()];
            row.extend(v.iter().map(|x| percent(*x)));
            row.push(percent(Self::mean(&v)));
            row
        };
        let blank = {
            let mut r = vec![String::new()];
            r.extend(std::iter::repeat_n(String::new(), self.columns.len() + 1));
            r
        };
        let rows = vec![
            line("ε^t_B", self.before.iter().map(|s| s.transient).collect()),
            line("ε^s_B", self.before.iter().map(|s| s.steady).collect()),
            blank,
            line("ε*^t_B", self.after.iter().map(|s| s.transient).collect()),
            line("ε*^s_B", self.after.iter().map(|s| s.steady).collect()),
        ];
        render_grid(&header, &rows)
    }
}

/// Distinct labels in first-appearance order with the indices carrying them.
fn group_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<(String, Vec<usize>)> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, l) in labels.enumerate() {
        match groups.iter_mut().find(|g| g.0 == l) {
            Some(g) => g.1.push(i),
            None => groups.push((l.to_string(), vec![i])),
        }
    }
    groups
}

fn percent(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}%"),
        None => "n/a".into(),
    }
}

fn render_grid(header: &[String], rows: &[Vec<String>]) -> String {
    let ncol = header.len();
    let width = |c: usize| {
        std::iter::once(&header[c])
            .chain(rows.iter().map(|r| &r[c]))
            .map(|s| s.chars().count())
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..ncol).map(width).collect();
    let fmt_row = |r: &[String]| {
        r.iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}", w = *w))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let mut out = fmt_row(header);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
    out.push('\n');
    for r in rows {
        out.push_str(&fmt_row(r));
        out.push('\n');
    }
    out
}
