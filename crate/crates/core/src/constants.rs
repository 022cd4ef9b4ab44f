//! Physical constants (CODATA 2018) used throughout the forward model.

/// Vacuum permeability over 4π, T·m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;

/// ħc in eV·m, used for the force-range / boson-mass duality.
pub const HBAR_C_EV_M: f64 = 1.973_269_804e-7;

/// Constants entering the exotic potential, the pseudo-field conversion and the
/// coupling conversions. Immutable for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
    /// Speed of light, m/s.
    pub c: f64,
    /// Electron mass, kg.
    pub m_e: f64,
    /// Neutron mass, kg.
    pub m_n: f64,
    /// Proton mass, kg.
    pub m_p: f64,
    /// Signed magnetic moment of the ¹²⁹Xe nucleus, J/T.
    pub mu_xe: f64,
    /// Bohr magneton, J/T.
    pub mu_b: f64,
}

/// Nuclear magneton, J/T.
pub const NUCLEAR_MAGNETON: f64 = 5.050_783_746_1e-27;

/// ¹²⁹Xe nuclear moment in units of the nuclear magneton.
pub const XE129_MOMENT_NM: f64 = -0.777_976_3;

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            hbar: 1.054_571_817e-34,
            c: 299_792_458.0,
            m_e: 9.109_383_701_5e-31,
            m_n: 1.674_927_498_04e-27,
            m_p: 1.672_621_923_69e-27,
            mu_xe: XE129_MOMENT_NM * NUCLEAR_MAGNETON,
            mu_b: 9.274_010_078_3e-24,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> crate::Result<()> {
        let positive = [
            ("hbar", self.hbar),
            ("c", self.c),
            ("m_e", self.m_e),
            ("m_n", self.m_n),
            ("m_p", self.m_p),
            ("mu_B", self.mu_b),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(crate::PossError::invalid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.mu_xe.is_finite() && self.mu_xe != 0.0) {
            return Err(crate::PossError::invalid(
                "mu_Xe must be finite and non-zero",
            ));
        }
        Ok(())
    }

    /// ħ²/(4π mₑ), the SI prefactor of the V₁₁ potential, J·m².
    pub fn v11_prefactor(&self) -> f64 {
        self.hbar * self.hbar / (4.0 * std::f64::consts::PI * self.m_e)
    }

    /// Gyromagnetic ratio of the ¹²⁹Xe nucleus (spin ½), rad/(s·T).
    pub fn gamma_xe(&self) -> f64 {
        2.0 * self.mu_xe / self.hbar
    }
}
