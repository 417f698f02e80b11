//! Scenario parameters.

use serde::{Deserialize, Serialize};

/// Region of the surface a node lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Transmission region (x < 0).
    T,
    /// Reflection region, facing the base station (x > 0).
    R,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::T, Side::R];

    pub fn index(self) -> usize {
        match self {
            Side::T => 0,
            Side::R => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Side::T => "t",
            Side::R => "r",
        }
    }
}

/// Where receivers and targets are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Placement {
    /// Range of IR distances from the surface center (m).
    pub ir_distance: [f64; 2],
    /// Maximum distance between an ER and its paired IR (m).
    pub er_offset: [f64; 2],
    pub target_radius: f64,
    /// Largest angle between a node direction and the surface normal (rad).
    pub max_angle: f64,
    /// Optional side of every IR, overriding the alternating default.
    pub ir_sides: Option<Vec<Side>>,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            ir_distance: [0.6, 1.4],
            er_offset: [0.2, 0.5],
            target_radius: 3.0,
            max_angle: std::f64::consts::FRAC_PI_3,
            ir_sides: None,
        }
    }
}

/// All scalar parameters of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub bs_antennas: usize,
    pub n_y: usize,
    pub n_z: usize,
    /// Carrier wavelength (m).
    pub wavelength: f64,
    /// RIS element spacing (m).
    pub element_spacing: f64,
    pub bs_position: [f64; 3],
    pub n_paths: usize,
    pub pathloss_c0_db: f64,
    pub pathloss_d0: f64,
    pub pathloss_exponent: f64,
    pub num_ir: usize,
    pub num_er: usize,
    pub num_targets: usize,
    pub p_max: f64,
    pub r_th: f64,
    pub r_eth: f64,
    /// Beampattern level in dB above `lambda_ref_dbm`.
    pub lambda_db: f64,
    pub lambda_ref_dbm: f64,
    pub noise_ir_dbm: f64,
    pub noise_er_dbm: f64,
    pub eh_efficiency: f64,
    /// Relative radius of the cascaded-channel error balls.
    pub rho: f64,
    pub placement: Placement,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SystemConfig {
    /// Small scenario used by the test suites.
    pub fn desk() -> Self {
        Self {
            bs_antennas: 4,
            n_y: 2,
            n_z: 4,
            wavelength: 0.03,
            element_spacing: 0.03,
            bs_position: [50.0, 0.0, 0.0],
            n_paths: 4,
            pathloss_c0_db: -30.0,
            pathloss_d0: 1.0,
            pathloss_exponent: 2.2,
            num_ir: 2,
            num_er: 2,
            num_targets: 2,
            p_max: 10.0,
            r_th: 2.0,
            r_eth: 1.0,
            lambda_db: 1.0,
            lambda_ref_dbm: -90.0,
            noise_ir_dbm: -110.0,
            noise_er_dbm: -110.0,
            eh_efficiency: 1.0,
            rho: 0.02,
            placement: Placement::default(),
        }
    }

    /// Full-size scenario (long running).
    pub fn paper() -> Self {
        Self {
            bs_antennas: 16,
            n_y: 5,
            n_z: 8,
            n_paths: 16,
            p_max: 20.0,
            placement: Placement { ir_distance: [1.0, 4.0], ..Placement::default() },
            ..Self::desk()
        }
    }

    pub fn n(&self) -> usize {
        self.n_y * self.n_z
    }

    pub fn noise_ir(&self) -> f64 {
        dbm_to_watts(self.noise_ir_dbm)
    }

    pub fn noise_er(&self) -> f64 {
        dbm_to_watts(self.noise_er_dbm)
    }

    pub fn lambda_gain(&self) -> f64 {
        dbm_to_watts(self.lambda_ref_dbm + self.lambda_db)
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("wavelength", self.wavelength),
            ("element_spacing", self.element_spacing),
            ("pathloss_d0", self.pathloss_d0),
            ("p_max", self.p_max),
            ("eh_efficiency", self.eh_efficiency),
            ("target_radius", self.placement.target_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.eh_efficiency > 1.0 {
            return Err("eh_efficiency must not exceed 1".into());
        }
        if self.bs_antennas == 0 || self.n_y == 0 || self.n_z == 0 || self.n_paths == 0 {
            return Err("array sizes and path count must be positive".into());
        }
        if self.num_ir == 0 {
            return Err("at least one IR is required".into());
        }
        if self.r_th <= 0.0 || self.r_eth <= 0.0 {
            return Err("rate thresholds must be positive".into());
        }
        if self.rho < 0.0 {
            return Err("rho must be nonnegative".into());
        }
        let [lo, hi] = self.placement.ir_distance;
        if !(0.0 < lo && lo <= hi) {
            return Err("ir_distance must be an increasing positive range".into());
        }
        if let Some(sides) = &self.placement.ir_sides {
            if sides.len() != self.num_ir {
                return Err("ir_sides must list one side per IR".into());
            }
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_conversion() {
        assert!((dbm_to_watts(-110.0) - 1e-14).abs() < 1e-26);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn profiles_validate() {
        SystemConfig::desk().validate().unwrap();
        SystemConfig::paper().validate().unwrap();
        assert_eq!(SystemConfig::paper().n(), 40);
    }
}
