//! Run configuration with unit-annotated quantities.
//!
//! Every dimensional value is written as `"<number> <unit>"`, for example
//! `diameter = "2.0 mil"` or `t_chip = "80 °C"`. Quantities keep the unit
//! they were written in, so a parse/serialise cycle reproduces the file.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::path::Path;

use crate::coupling::CouplingOptions;
use crate::error::{invalid, Error, Result};
use crate::model::{
    BoundarySet, CompoundInitial, CompoundSpec, Material, ModelConfig, PhysicalConstants, WireInitial, WireSpec,
    CELSIUS_OFFSET, MIL,
};
use crate::optimizer::{HessianMode, JacobianOptions, OptimizeOptions};
use crate::spectral::Truncation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Temperature,
    TemperatureDifference,
    InverseTemperature,
    Conductivity,
    Resistivity,
    Density,
    SpecificHeat,
    HeatTransfer,
}

/// `(unit, dimension, factor, offset)`: SI value = factor * v + offset.
const UNITS: &[(&str, Dimension, f64, f64)] = &[
    ("m", Dimension::Length, 1.0, 0.0),
    ("mm", Dimension::Length, 1e-3, 0.0),
    ("um", Dimension::Length, 1e-6, 0.0),
    ("µm", Dimension::Length, 1e-6, 0.0),
    ("mil", Dimension::Length, MIL, 0.0),
    ("K", Dimension::Temperature, 1.0, 0.0),
    ("°C", Dimension::Temperature, 1.0, CELSIUS_OFFSET),
    ("degC", Dimension::Temperature, 1.0, CELSIUS_OFFSET),
    ("K", Dimension::TemperatureDifference, 1.0, 0.0),
    ("°C", Dimension::TemperatureDifference, 1.0, 0.0),
    ("degC", Dimension::TemperatureDifference, 1.0, 0.0),
    ("1/K", Dimension::InverseTemperature, 1.0, 0.0),
    ("1/°C", Dimension::InverseTemperature, 1.0, 0.0),
    ("W/(m K)", Dimension::Conductivity, 1.0, 0.0),
    ("Ohm m", Dimension::Resistivity, 1.0, 0.0),
    ("Ω m", Dimension::Resistivity, 1.0, 0.0),
    ("kg/m^3", Dimension::Density, 1.0, 0.0),
    ("g/cm^3", Dimension::Density, 1e3, 0.0),
    ("J/(kg K)", Dimension::SpecificHeat, 1.0, 0.0),
    ("W/(m^2 K)", Dimension::HeatTransfer, 1.0, 0.0),
];

/// A number with the unit it was written in.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

impl Quantity {
    pub fn new(value: f64, unit: &str) -> Self {
        Self {
            value,
            unit: unit.to_string(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let Some((num, unit)) = s.split_once(char::is_whitespace) else {
            return Err(Error::Unit(format!("`{s}` has no unit")));
        };
        let value: f64 = num
            .parse()
            .map_err(|_| Error::Unit(format!("`{num}` is not a number in `{s}`")))?;
        let unit = unit.trim();
        if !UNITS.iter().any(|u| u.0 == unit) {
            return Err(Error::Unit(format!("unknown unit `{unit}` in `{s}`")));
        }
        Ok(Self::new(value, unit))
    }

    /// Value in SI units, checking that the unit measures `dim`.
    pub fn si(&self, field: &str, dim: Dimension) -> Result<f64> {
        UNITS
            .iter()
            .find(|u| u.0 == self.unit && u.1 == dim)
            .map(|&(_, _, f, o)| f * self.value + o)
            .ok_or_else(|| Error::Unit(format!("{field}: `{}` is not a unit of {dim:?}", self.unit)))
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.value.abs();
        if a != 0.0 && !(1e-3..1e6).contains(&a) {
            write!(f, "{:e} {}", self.value, self.unit)
        } else {
            write!(f, "{} {}", self.value, self.unit)
        }
    }
}

impl Serialize for Quantity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Quantity::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireBlock {
    pub material: Material,
    pub diameter: Quantity,
    pub length: Quantity,
    pub kappa0: Quantity,
    pub alpha_kappa: Quantity,
    pub rho_e0: Quantity,
    pub alpha_rho: Quantity,
    pub mass_density: Quantity,
    pub specific_heat: Quantity,
    pub emissivity: f64,
    /// Overrides the material's melting point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub melting_temperature: Option<Quantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompoundBlock {
    pub width: Quantity,
    pub height: Quantity,
    pub kappa: Quantity,
    pub specific_heat: Quantity,
    pub mass_density: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryBlock {
    pub t_chip: Quantity,
    pub t_lead: Quantity,
    pub t_die: Quantity,
    pub t_ambient: Quantity,
    pub h_conv: Quantity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompoundStart {
    Ambient,
    Uniform,
    Steady,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub nk: usize,
    pub steady: usize,
    pub quadrature_points: usize,
    pub wire_initial: WireInitial,
    pub compound_initial: CompoundStart,
    /// Rise of a uniform compound start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compound_initial_rise: Option<Quantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingBlock {
    pub tol: f64,
    pub max_iter: usize,
    pub chi_min: f64,
    pub chi_max: f64,
    /// In wire radii.
    pub interface_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    pub max_iter: usize,
    pub step_tol: f64,
    pub residual_tol: f64,
    pub svd_threshold: f64,
    pub hessian: HessianMode,
    pub fd_rel_step: f64,
    /// Evaluate the model at the coarse fitting truncation.
    pub reduced_model: bool,
}

/// Complete configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub wire: WireBlock,
    pub compound: CompoundBlock,
    pub boundary: BoundaryBlock,
    pub solver: SolverBlock,
    pub coupling: CouplingBlock,
    pub optimizer: OptimizerBlock,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Reference package around a nominal wire, in the customary units.
    pub fn reference(material: Material, diameter_mil: f64, length_mm: f64) -> Self {
        let w = material.wire(length_mm * 1e-3, diameter_mil * MIL);
        let c = CompoundSpec::epoxy_reference();
        let t = Truncation::default();
        let co = CouplingOptions::default();
        let o = OptimizeOptions::default();
        Self {
            wire: WireBlock {
                material,
                diameter: Quantity::new(diameter_mil, "mil"),
                length: Quantity::new(length_mm, "mm"),
                kappa0: Quantity::new(w.kappa0, "W/(m K)"),
                alpha_kappa: Quantity::new(w.alpha_kappa, "1/K"),
                rho_e0: Quantity::new(w.rho_e0, "Ohm m"),
                alpha_rho: Quantity::new(w.alpha_rho, "1/K"),
                mass_density: Quantity::new(w.mass_density, "kg/m^3"),
                specific_heat: Quantity::new(w.specific_heat, "J/(kg K)"),
                emissivity: w.emissivity,
                melting_temperature: None,
            },
            compound: CompoundBlock {
                width: Quantity::new(c.width * 1e3, "mm"),
                height: Quantity::new(c.height * 1e3, "mm"),
                kappa: Quantity::new(c.kappa, "W/(m K)"),
                specific_heat: Quantity::new(c.specific_heat, "J/(kg K)"),
                mass_density: Quantity::new(c.mass_density, "kg/m^3"),
            },
            boundary: BoundaryBlock {
                t_chip: Quantity::new(80.0, "°C"),
                t_lead: Quantity::new(40.0, "°C"),
                t_die: Quantity::new(35.0, "°C"),
                t_ambient: Quantity::new(20.0, "°C"),
                h_conv: Quantity::new(25.0, "W/(m^2 K)"),
            },
            solver: SolverBlock {
                nx: t.nx,
                ny: t.ny,
                nz: t.nz,
                nk: t.nk,
                steady: t.steady,
                quadrature_points: 128,
                wire_initial: WireInitial::Linear,
                compound_initial: CompoundStart::Ambient,
                compound_initial_rise: None,
            },
            coupling: CouplingBlock {
                tol: co.tol,
                max_iter: co.max_iter,
                chi_min: co.chi_min,
                chi_max: co.chi_max,
                interface_offset: co.interface_offset,
            },
            optimizer: OptimizerBlock {
                max_iter: o.max_iter,
                step_tol: o.step_tol,
                residual_tol: o.residual_tol,
                svd_threshold: o.threshold,
                hessian: o.hessian,
                fd_rel_step: o.jacobian.rel_step,
                reduced_model: true,
            },
        }
    }

    /// Parse and validate TOML text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            let msg = e.message().to_string();
            if msg.contains("unit") {
                Error::Unit(format!("line {line}: {msg}"))
            } else {
                Error::Parse { line, message: msg }
            }
        })?;
        cfg.model()?;
        cfg.coupling_options()?;
        cfg.optimize_options()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// Solver configuration in SI units.
    pub fn model(&self) -> Result<ModelConfig> {
        use Dimension::*;
        let w = &self.wire;
        let b = &self.boundary;
        let c = &self.compound;
        let s = &self.solver;
        let compound_initial = match (s.compound_initial, &s.compound_initial_rise) {
            (CompoundStart::Ambient, None) => CompoundInitial::Ambient,
            (CompoundStart::Steady, None) => CompoundInitial::Steady,
            (CompoundStart::Uniform, Some(q)) => {
                CompoundInitial::Uniform(q.si("solver.compound_initial_rise", TemperatureDifference)?)
            }
            (CompoundStart::Uniform, None) => {
                return Err(invalid("compound_initial_rise", "required for a uniform compound start"))
            }
            (_, Some(_)) => return Err(invalid("compound_initial_rise", "only used with a uniform compound start")),
        };
        let config = ModelConfig {
            wire: WireSpec {
                length: w.length.si("wire.length", Length)?,
                diameter: w.diameter.si("wire.diameter", Length)?,
                kappa0: w.kappa0.si("wire.kappa0", Conductivity)?,
                alpha_kappa: w.alpha_kappa.si("wire.alpha_kappa", InverseTemperature)?,
                rho_e0: w.rho_e0.si("wire.rho_e0", Resistivity)?,
                alpha_rho: w.alpha_rho.si("wire.alpha_rho", InverseTemperature)?,
                mass_density: w.mass_density.si("wire.mass_density", Density)?,
                specific_heat: w.specific_heat.si("wire.specific_heat", SpecificHeat)?,
                emissivity: w.emissivity,
            },
            compound: CompoundSpec {
                width: c.width.si("compound.width", Length)?,
                height: c.height.si("compound.height", Length)?,
                kappa: c.kappa.si("compound.kappa", Conductivity)?,
                specific_heat: c.specific_heat.si("compound.specific_heat", SpecificHeat)?,
                mass_density: c.mass_density.si("compound.mass_density", Density)?,
            },
            bc: BoundarySet {
                t_chip: b.t_chip.si("boundary.t_chip", Temperature)?,
                t_lead: b.t_lead.si("boundary.t_lead", Temperature)?,
                t_die: b.t_die.si("boundary.t_die", Temperature)?,
                t_ambient: b.t_ambient.si("boundary.t_ambient", Temperature)?,
                h_conv: b.h_conv.si("boundary.h_conv", HeatTransfer)?,
            },
            constants: PhysicalConstants::default(),
            truncation: Truncation {
                nx: s.nx,
                ny: s.ny,
                nz: s.nz,
                nk: s.nk,
                steady: s.steady,
            },
            wire_initial: s.wire_initial,
            compound_initial,
            quadrature_points: s.quadrature_points,
        };
        config.validate()?;
        self.melting_temperature()?;
        Ok(config)
    }

    /// Fusing temperature in K.
    pub fn melting_temperature(&self) -> Result<f64> {
        match &self.wire.melting_temperature {
            Some(q) => q.si("wire.melting_temperature", Dimension::Temperature),
            None => Ok(self.wire.material.melting_temperature()),
        }
    }

    pub fn coupling_options(&self) -> Result<CouplingOptions> {
        let c = &self.coupling;
        let o = CouplingOptions {
            tol: c.tol,
            max_iter: c.max_iter,
            chi_min: c.chi_min,
            chi_max: c.chi_max,
            interface_offset: c.interface_offset,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn optimize_options(&self) -> Result<OptimizeOptions> {
        let o = &self.optimizer;
        if !(o.svd_threshold >= 0.0 && o.svd_threshold < 1.0) {
            return Err(invalid("svd_threshold", "must lie in [0, 1)"));
        }
        if !(o.fd_rel_step > 0.0 && o.fd_rel_step < 0.1) {
            return Err(invalid("fd_rel_step", "must lie in (0, 0.1)"));
        }
        if o.max_iter == 0 {
            return Err(invalid("optimizer.max_iter", "must be >= 1"));
        }
        Ok(OptimizeOptions {
            max_iter: o.max_iter,
            step_tol: o.step_tol,
            residual_tol: o.residual_tol,
            threshold: o.svd_threshold,
            hessian: o.hessian,
            jacobian: JacobianOptions {
                rel_step: o.fd_rel_step,
                ..JacobianOptions::default()
            },
            ..OptimizeOptions::default()
        })
    }
}
