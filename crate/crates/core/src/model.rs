//! Domain types for a single bondwire embedded in a rectangular mould block,
//! the linear material laws of the wire and the Kirchhoff transform pair.
//!
//! Everything is SI internally: metres, seconds, kelvin, watts. Temperature
//! *rises* are measured from the ambient temperature `T_0`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::spectral::Truncation;

/// One mil (a thousandth of an inch) in metres.
pub const MIL: f64 = 25.4e-6;

/// Offset between degrees Celsius and kelvin.
pub const CELSIUS_OFFSET: f64 = 273.15;

/// Below this magnitude `alpha_kappa` is treated as zero by the inverse transform.
const ALPHA_KAPPA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Stefan-Boltzmann constant, W m^-2 K^-4.
    sigma: f64,
}

impl PhysicalConstants {
    pub const STEFAN_BOLTZMANN: f64 = 5.670374419e-8;

    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", "must be positive"));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            sigma: Self::STEFAN_BOLTZMANN,
        }
    }
}

/// Bondwire metals with shipped nominal properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Au,
    Cu,
    Al,
}

impl Material {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "au" | "gold" => Some(Material::Au),
            "cu" | "copper" => Some(Material::Cu),
            "al" | "aluminium" | "aluminum" => Some(Material::Al),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Material::Au => "au",
            Material::Cu => "cu",
            Material::Al => "al",
        }
    }

    /// Melting temperature in kelvin (Au 1064 °C, Cu 1085 °C, Al 660 °C).
    pub fn melting_temperature(&self) -> f64 {
        CELSIUS_OFFSET
            + match self {
                Material::Au => 1064.0,
                Material::Cu => 1085.0,
                Material::Al => 660.0,
            }
    }

    /// Nominal wire of this metal with the given geometry.
    ///
    /// Au and Cu use the nominal package-characterisation values; Al uses
    /// handbook values for pure aluminium.
    pub fn wire(&self, length: f64, diameter: f64) -> WireSpec {
        let (kappa0, alpha_kappa, rho_e0, alpha_rho, mass_density, specific_heat, emissivity) =
            match self {
                Material::Cu => (398.0, -4.675e-4, 1.678e-8, 3.862e-3, 8960.0, 353.0, 3.750e-2),
                Material::Au => (315.0, -2.744e-4, 2.214e-8, 3.400e-3, 19300.0, 129.0, 2.475e-1),
                Material::Al => (237.0, -1.0e-4, 2.650e-8, 4.290e-3, 2700.0, 897.0, 5.0e-2),
            };
        WireSpec {
            length,
            diameter,
            kappa0,
            alpha_kappa,
            rho_e0,
            alpha_rho,
            mass_density,
            specific_heat,
            emissivity,
        }
    }
}

/// Geometry and linear temperature laws of one bondwire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireSpec {
    /// m
    pub length: f64,
    /// m
    pub diameter: f64,
    /// Thermal conductivity at ambient, W m^-1 K^-1.
    pub kappa0: f64,
    /// Temperature coefficient of the thermal conductivity, 1/K.
    pub alpha_kappa: f64,
    /// Electric resistivity at ambient, Ohm m.
    pub rho_e0: f64,
    /// Temperature coefficient of the resistivity, 1/K.
    pub alpha_rho: f64,
    /// kg m^-3
    pub mass_density: f64,
    /// J kg^-1 K^-1
    pub specific_heat: f64,
    pub emissivity: f64,
}

/// Cross-section area and perimeter of a round wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireGeometryDerived {
    pub area: f64,
    pub perimeter: f64,
}

impl WireSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("diameter", self.diameter),
            ("kappa0", self.kappa0),
            ("rho_e0", self.rho_e0),
            ("mass_density", self.mass_density),
            ("specific_heat", self.specific_heat),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.emissivity > 0.0 && self.emissivity <= 1.0) {
            return Err(invalid("emissivity", format!("must lie in (0, 1], got {}", self.emissivity)));
        }
        if !(self.alpha_rho >= 0.0 && self.alpha_rho.is_finite()) {
            return Err(invalid("alpha_rho", format!("must be >= 0, got {}", self.alpha_rho)));
        }
        if !(self.alpha_kappa <= 0.0 && self.alpha_kappa.is_finite()) {
            return Err(invalid("alpha_kappa", format!("must be <= 0, got {}", self.alpha_kappa)));
        }
        Ok(())
    }

    pub fn geometry(&self) -> WireGeometryDerived {
        WireGeometryDerived {
            area: PI * self.diameter * self.diameter / 4.0,
            perimeter: PI * self.diameter,
        }
    }

    /// Volumetric heat capacity rho_w c_w, J m^-3 K^-1.
    pub fn heat_capacity(&self) -> f64 {
        self.mass_density * self.specific_heat
    }

    /// kappa_w = kappa0 (1 + alpha_kappa dT).
    pub fn conductivity(&self, dt: f64) -> Result<f64> {
        let k = self.kappa0 * (1.0 + self.alpha_kappa * dt);
        if k <= 0.0 {
            return Err(Error::NonPhysicalResult(format!(
                "thermal conductivity {k} W/(m K) at a rise of {dt} K is not positive"
            )));
        }
        Ok(k)
    }

    /// rho_e = rho_e0 (1 + alpha_rho dT).
    pub fn resistivity(&self, dt: f64) -> f64 {
        self.rho_e0 * (1.0 + self.alpha_rho * dt)
    }

    /// Kirchhoff variable of a temperature rise: dT + alpha_kappa/2 dT^2.
    pub fn kirchhoff_forward(&self, dt: f64) -> f64 {
        dt + 0.5 * self.alpha_kappa * dt * dt
    }

    /// Inverse of [`WireSpec::kirchhoff_forward`] on the branch that reduces
    /// to the identity as `alpha_kappa -> 0`.
    pub fn kirchhoff_inverse(&self, theta: f64) -> Result<f64> {
        let a = self.alpha_kappa;
        if a.abs() < ALPHA_KAPPA_EPS {
            return Ok(theta);
        }
        let disc = 1.0 + 2.0 * a * theta;
        if disc < 0.0 || !disc.is_finite() {
            return Err(Error::OutOfRange(format!(
                "Kirchhoff variable {theta} K beyond the parabola vertex (discriminant {disc})"
            )));
        }
        // (-1 + sqrt(disc)) / a, rationalised
        Ok(2.0 * theta / (1.0 + disc.sqrt()))
    }
}

/// Mould block around the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundSpec {
    /// m
    pub width: f64,
    /// m
    pub height: f64,
    /// W m^-1 K^-1
    pub kappa: f64,
    /// J kg^-1 K^-1
    pub specific_heat: f64,
    /// kg m^-3
    pub mass_density: f64,
}

impl CompoundSpec {
    /// Epoxy block used for the reference configuration.
    pub fn epoxy_reference() -> Self {
        Self {
            width: 4.45e-3,
            height: 1.48e-3,
            kappa: 0.870,
            specific_heat: 882.0,
            mass_density: 1860.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("compound.width", self.width),
            ("compound.height", self.height),
            ("compound.kappa", self.kappa),
            ("compound.specific_heat", self.specific_heat),
            ("compound.mass_density", self.mass_density),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn heat_capacity(&self) -> f64 {
        self.mass_density * self.specific_heat
    }

    pub fn diffusivity(&self) -> f64 {
        self.kappa / self.heat_capacity()
    }
}

/// Boundary temperatures (K) and the convective coefficient of the walls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    /// Chip wall temperature.
    pub t_chip: f64,
    /// Lead temperature at the far wire end.
    pub t_lead: f64,
    /// Die-attach (bottom wall) temperature.
    pub t_die: f64,
    /// Ambient temperature.
    pub t_ambient: f64,
    /// Convective coefficient, W m^-2 K^-1.
    pub h_conv: f64,
}

impl BoundarySet {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_chip", self.t_chip),
            ("t_lead", self.t_lead),
            ("t_die", self.t_die),
            ("t_ambient", self.t_ambient),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("absolute temperature must be > 0 K, got {v}")));
            }
        }
        if !(self.h_conv > 0.0 && self.h_conv.is_finite()) {
            return Err(invalid("h_conv", "must be positive"));
        }
        Ok(())
    }

    /// Robin ratio h_c / kappa_m of the convective walls, 1/m.
    pub fn robin_ratio(&self, compound: &CompoundSpec) -> f64 {
        self.h_conv / compound.kappa
    }
}

/// Constant current pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drive {
    /// A
    pub current: f64,
    /// s
    pub duration: f64,
}

impl Drive {
    pub fn new(current: f64, duration: f64) -> Result<Self> {
        let d = Self { current, duration };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.current >= 0.0 && self.current.is_finite()) {
            return Err(invalid("current", "must be >= 0"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", "must be > 0"));
        }
        Ok(())
    }
}

/// Initial wire temperature profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WireInitial {
    /// Linear in temperature between the chip and lead temperatures.
    #[default]
    Linear,
    /// Uniform ambient temperature.
    Ambient,
    /// Already at the steady profile.
    Steady,
}

/// Initial compound temperature field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CompoundInitial {
    /// Uniform ambient temperature.
    #[default]
    Ambient,
    /// Uniform rise above ambient, K.
    Uniform(f64),
    /// The steady chip/die field, so the transient vanishes.
    Steady,
}

/// Everything the solvers need besides the drive and the coupling state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub wire: WireSpec,
    pub compound: CompoundSpec,
    pub bc: BoundarySet,
    pub constants: PhysicalConstants,
    pub truncation: Truncation,
    pub wire_initial: WireInitial,
    pub compound_initial: CompoundInitial,
    /// Gauss-Legendre points for the wire projection integrals.
    pub quadrature_points: usize,
}

impl ModelConfig {
    /// Reference package: epoxy block 4.45 x 1.48 mm, chip 80 °C, lead 40 °C,
    /// die attach 35 °C, ambient 20 °C, h_c = 25 W/(m^2 K).
    pub fn reference(material: Material, diameter: f64, length: f64) -> Self {
        let c = |deg: f64| deg + CELSIUS_OFFSET;
        Self {
            wire: material.wire(length, diameter),
            compound: CompoundSpec::epoxy_reference(),
            bc: BoundarySet {
                t_chip: c(80.0),
                t_lead: c(40.0),
                t_die: c(35.0),
                t_ambient: c(20.0),
                h_conv: 25.0,
            },
            constants: PhysicalConstants::default(),
            truncation: Truncation::default(),
            wire_initial: WireInitial::Linear,
            compound_initial: CompoundInitial::Ambient,
            quadrature_points: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.wire.validate()?;
        self.compound.validate()?;
        self.bc.validate()?;
        self.truncation.validate()?;
        if self.quadrature_points < 16 {
            return Err(invalid("quadrature_points", "need at least 16"));
        }
        Ok(())
    }

    /// Temperature rises of the chip, lead and die attach above ambient.
    pub fn rises(&self) -> (f64, f64, f64) {
        let t0 = self.bc.t_ambient;
        (self.bc.t_chip - t0, self.bc.t_lead - t0, self.bc.t_die - t0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cu() -> WireSpec {
        Material::Cu.wire(2.5e-3, 2.0 * MIL)
    }
    fn au() -> WireSpec {
        Material::Au.wire(2.5e-3, 2.0 * MIL)
    }

    #[test]
    fn conductivity_law() {
        assert_eq!(cu().conductivity(0.0).unwrap(), 398.0);
        assert_relative_eq!(cu().conductivity(100.0).unwrap(), 379.3935, epsilon = 1e-9);
        assert_relative_eq!(au().conductivity(1000.0).unwrap(), 228.564, epsilon = 1e-9);
    }

    #[test]
    fn conductivity_beyond_linear_law_is_an_error() {
        // 1 + alpha dT <= 0 for dT >= 1/|alpha| ~ 2139 K
        assert!(matches!(cu().conductivity(2200.0), Err(Error::NonPhysicalResult(_))));
    }

    #[test]
    fn resistivity_law() {
        assert_eq!(cu().resistivity(0.0), 1.678e-8);
        assert_relative_eq!(cu().resistivity(100.0), 2.326e-8, max_relative = 1e-3);
        assert_relative_eq!(cu().resistivity(100.0), 1.678e-8 * 1.3862, max_relative = 1e-12);
        assert_relative_eq!(au().resistivity(500.0), 5.9778e-8, max_relative = 1e-12);
    }

    #[test]
    fn kirchhoff_examples() {
        let w = au();
        assert_eq!(w.kirchhoff_forward(0.0), 0.0);
        assert_relative_eq!(w.kirchhoff_forward(200.0), 194.512, epsilon = 1e-9);
        assert_relative_eq!(w.kirchhoff_inverse(194.512).unwrap(), 200.0, epsilon = 1e-9);
        assert_eq!(w.kirchhoff_inverse(0.0).unwrap(), 0.0);
        assert!(matches!(w.kirchhoff_inverse(2000.0), Err(Error::OutOfRange(_))));

        let mut flat = w;
        flat.alpha_kappa = 0.0;
        assert_eq!(flat.kirchhoff_forward(123.0), 123.0);
        assert_eq!(flat.kirchhoff_inverse(123.0).unwrap(), 123.0);
    }

    #[test]
    fn mil_geometry() {
        let w = au();
        let g = w.geometry();
        let d = 2.0 * 25.4e-6;
        assert_eq!(g.area, PI * d * d / 4.0);
        assert_relative_eq!(g.area, 2.0268e-9, max_relative = 1e-4);
        assert_relative_eq!(g.perimeter, 1.5959e-4, max_relative = 1e-4);
    }

    #[test]
    fn validation_rejects_unphysical_wires() {
        let mut w = au();
        w.emissivity = 1.2;
        assert!(w.validate().is_err());
        let mut w = au();
        w.alpha_kappa = 1e-4;
        assert!(w.validate().is_err());
        let mut w = au();
        w.alpha_rho = -1e-3;
        assert!(w.validate().is_err());
        assert!(au().validate().is_ok());
        assert!(Drive::new(-1.0, 1.0).is_err());
        assert!(Drive::new(1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn kirchhoff_round_trip(alpha in -5e-4f64..0.0, frac in 0.0f64..0.999) {
            let mut w = au();
            w.alpha_kappa = alpha;
            // pre-image domain [0, -1/alpha)
            let dt = frac * (-1.0 / alpha).min(1e4);
            let back = w.kirchhoff_inverse(w.kirchhoff_forward(dt)).unwrap();
            prop_assert!((back - dt).abs() <= 1e-10 * dt.abs().max(1e-300));
        }

        #[test]
        fn kirchhoff_forward_is_increasing(alpha in -5e-4f64..-1e-8, a in 0.0f64..0.99, b in 0.0f64..0.99) {
            let mut w = au();
            w.alpha_kappa = alpha;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            let top = -1.0 / alpha;
            prop_assert!(w.kirchhoff_forward(lo * top) < w.kirchhoff_forward(hi * top));
        }

        #[test]
        fn material_laws_match_closed_forms(dt in -200.0f64..1500.0) {
            let w = au();
            let k = w.conductivity(dt).unwrap();
            prop_assert!((k - 315.0 * (1.0 - 2.744e-4 * dt)).abs() <= 1e-10 * k);
            let r = w.resistivity(dt);
            prop_assert!((r - 2.214e-8 * (1.0 + 3.4e-3 * dt)).abs() <= 1e-10 * r.abs());
        }
    }
}
