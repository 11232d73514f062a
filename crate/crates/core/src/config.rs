//! Scenario parameters.
//!
//! Every field has a default so a config file only needs the keys it wants
//! to override. [`NetworkConfig::validate`] checks the invariants and returns
//! a [`Validated`] wrapper that the rest of the crate takes by reference.

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Lower and upper bound of the Zipf exponent range accepted without a
/// warning.
pub const ZIPF_EXPONENT_RANGE: (f64, f64) = (0.56, 0.83);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Number of terrestrial base stations.
    pub num_bs: usize,
    /// Number of LEO satellites.
    pub num_sat: usize,
    /// Users nominally served by base stations.
    pub num_bs_users: usize,
    /// Users nominally served by satellites.
    pub num_sat_users: usize,
    /// Maximum users per base station.
    pub bs_capacity: usize,
    /// Maximum users per satellite.
    pub sat_capacity: usize,
    /// Base-station power budget, watts.
    pub p_bs_max: f64,
    /// Satellite power budget, watts.
    pub p_sat_max: f64,
    /// Receiver noise power, watts.
    pub noise_density: f64,
    pub pathloss_exponent: f64,
    /// Hz.
    pub carrier_freq: f64,
    /// m/s.
    pub light_speed: f64,
    /// Satellite boresight gain, linear.
    pub g_max: f64,
    /// Ground-terminal receive gain, linear.
    pub rx_gain: f64,
    /// 3 dB beamwidth of the satellite antenna, radians.
    pub theta_3db: f64,
    /// Doppler phase parameter; rotates satellite link phase only.
    pub doppler: f64,
    /// Side of the square in which base stations and users are placed, metres.
    pub area_side: f64,
    /// Antenna height of a base station; floors the BS-user distance, metres.
    pub bs_height: f64,
    /// Satellite altitude, metres.
    pub sat_altitude: f64,
    /// Number of files in the library.
    pub library_size: usize,
    pub file_size_bits: f64,
    pub zipf_exponent: f64,
    /// Files per base-station cache.
    pub bs_cache_capacity: usize,
    /// Files per satellite cache.
    pub sat_cache_capacity: usize,
    /// Retrieval power on a base-station cache hit, watts.
    pub p_retrieve_bs: f64,
    /// Retrieval power from the core network on a base-station miss, watts.
    pub p_retrieve_core: f64,
    /// Retrieval power on a satellite cache hit, watts.
    pub p_retrieve_sat: f64,
    /// Retrieval power through the gateway on a satellite miss, watts.
    pub p_retrieve_sat_core: f64,
    /// Terrestrial backhaul delay, seconds.
    pub delay_bs_backhaul: f64,
    /// Satellite gateway round-trip delay, seconds.
    pub delay_sat_backhaul: f64,
    /// Local delivery delay on a cache hit, seconds. Reporting only.
    pub delay_cache_hit: f64,
    /// Successive interference cancellation for co-cell base-station users.
    pub sic: bool,
    /// Append the previous reward to each agent's binary observation.
    pub extended_obs: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_bs: 6,
            num_sat: 2,
            num_bs_users: 24,
            num_sat_users: 8,
            bs_capacity: 4,
            sat_capacity: 4,
            p_bs_max: 40.0,
            p_sat_max: 8.0,
            noise_density: 1e-10,
            pathloss_exponent: 3.0,
            carrier_freq: 2e9,
            light_speed: 299_792_458.0,
            g_max: 1000.0,
            rx_gain: 1.0,
            theta_3db: 0.07,
            doppler: 0.0,
            area_side: 500.0,
            bs_height: 10.0,
            sat_altitude: 600e3,
            library_size: 40,
            file_size_bits: 1e6,
            zipf_exponent: 0.8,
            bs_cache_capacity: 3,
            sat_cache_capacity: 3,
            p_retrieve_bs: 0.1,
            p_retrieve_core: 0.5,
            p_retrieve_sat: 0.2,
            p_retrieve_sat_core: 1.0,
            delay_bs_backhaul: 0.05,
            delay_sat_backhaul: 0.25,
            delay_cache_hit: 0.005,
            sic: false,
            extended_obs: false,
            seed: 1,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid network config: {}", .violations.join("; "))]
pub struct ConfigError {
    pub violations: Vec<String>,
}

/// Relaxations used by tests and what-if sweeps.
#[derive(Clone, Copy, Debug, Default)]
pub struct ValidateOptions {
    /// Permit a cache as large as the library.
    pub allow_full_cache: bool,
}

/// A config that passed validation, plus any non-fatal warnings.
#[derive(Clone, Debug)]
pub struct Validated {
    cfg: NetworkConfig,
    pub warnings: Vec<String>,
}

impl Deref for Validated {
    type Target = NetworkConfig;

    fn deref(&self) -> &NetworkConfig {
        &self.cfg
    }
}

impl Validated {
    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn into_inner(self) -> NetworkConfig {
        self.cfg
    }
}

impl NetworkConfig {
    /// Reduced scenario for quick experiments: 3 BSs, 1 satellite,
    /// 12 users.
    pub fn desk() -> Self {
        Self {
            num_bs: 3,
            num_sat: 1,
            num_bs_users: 9,
            num_sat_users: 3,
            ..Self::default()
        }
    }

    /// Smallest cache-learning instance: one small-cell BS with three users,
    /// five files, room for two. The idle satellite only exists because the
    /// topology needs one.
    pub fn tiny_cache() -> Self {
        Self {
            num_bs: 1,
            num_sat: 1,
            num_bs_users: 3,
            num_sat_users: 0,
            library_size: 5,
            bs_cache_capacity: 2,
            sat_cache_capacity: 2,
            zipf_exponent: 1.0,
            p_bs_max: 1.0,
            ..Self::default()
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_bs_users + self.num_sat_users
    }

    pub fn num_facilities(&self) -> usize {
        self.num_bs + self.num_sat
    }

    pub fn validate(&self) -> Result<Validated, ConfigError> {
        self.validate_with(ValidateOptions::default())
    }

    pub fn validate_with(&self, opts: ValidateOptions) -> Result<Validated, ConfigError> {
        let mut v = Vec::new();
        let mut warnings = Vec::new();

        for (name, value) in [
            ("num_bs", self.num_bs),
            ("num_sat", self.num_sat),
            ("bs_capacity", self.bs_capacity),
            ("sat_capacity", self.sat_capacity),
            ("library_size", self.library_size),
            ("bs_cache_capacity", self.bs_cache_capacity),
            ("sat_cache_capacity", self.sat_cache_capacity),
        ] {
            if value == 0 {
                v.push(format!("{name} must be at least 1"));
            }
        }
        if self.num_users() == 0 {
            v.push("num_bs_users + num_sat_users must be at least 1".to_string());
        }

        for (name, value) in [
            ("p_bs_max", self.p_bs_max),
            ("p_sat_max", self.p_sat_max),
            ("noise_density", self.noise_density),
            ("pathloss_exponent", self.pathloss_exponent),
            ("carrier_freq", self.carrier_freq),
            ("light_speed", self.light_speed),
            ("g_max", self.g_max),
            ("rx_gain", self.rx_gain),
            ("theta_3db", self.theta_3db),
            ("bs_height", self.bs_height),
            ("sat_altitude", self.sat_altitude),
            ("file_size_bits", self.file_size_bits),
            ("p_retrieve_bs", self.p_retrieve_bs),
            ("p_retrieve_core", self.p_retrieve_core),
            ("p_retrieve_sat", self.p_retrieve_sat),
            ("p_retrieve_sat_core", self.p_retrieve_sat_core),
            ("delay_bs_backhaul", self.delay_bs_backhaul),
            ("delay_sat_backhaul", self.delay_sat_backhaul),
            ("delay_cache_hit", self.delay_cache_hit),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                v.push(format!("{name} must be positive"));
            }
        }
        if !(self.area_side >= 0.0) || !self.area_side.is_finite() {
            v.push("area_side must be non-negative".to_string());
        }
        if !self.doppler.is_finite() {
            v.push("doppler must be finite".to_string());
        }
        if self.theta_3db >= std::f64::consts::FRAC_PI_2 {
            v.push("theta_3db must be below pi/2".to_string());
        }

        if !(self.zipf_exponent > 0.0) || !self.zipf_exponent.is_finite() {
            v.push("zipf_exponent must be positive".to_string());
        } else if self.zipf_exponent < ZIPF_EXPONENT_RANGE.0
            || self.zipf_exponent > ZIPF_EXPONENT_RANGE.1
        {
            warnings.push(format!(
                "zipf_exponent {} outside the usual range [{}, {}]",
                self.zipf_exponent, ZIPF_EXPONENT_RANGE.0, ZIPF_EXPONENT_RANGE.1
            ));
        }

        let too_big = |c: usize| {
            if opts.allow_full_cache {
                c > self.library_size
            } else {
                c >= self.library_size
            }
        };
        if too_big(self.bs_cache_capacity) {
            v.push("bs_cache_capacity: cache must be strictly smaller than library".to_string());
        }
        if too_big(self.sat_cache_capacity) {
            v.push("sat_cache_capacity: cache must be strictly smaller than library".to_string());
        }

        if v.is_empty() {
            Ok(Validated {
                cfg: self.clone(),
                warnings,
            })
        } else {
            Err(ConfigError { violations: v })
        }
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let v = NetworkConfig::default().validate().unwrap();
        assert_eq!(v.num_bs, 6);
        assert_eq!(v.num_sat, 2);
        assert_eq!(v.library_size, 40);
        assert_eq!(v.bs_cache_capacity, 3);
        assert_eq!(v.sat_cache_capacity, 3);
        assert!(v.warnings.is_empty());
    }

    #[test]
    fn cache_equal_to_library_rejected() {
        let cfg = NetworkConfig {
            bs_cache_capacity: 40,
            ..NetworkConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.violations.len(), 1);
        assert!(err.violations[0].contains("cache must be strictly smaller than library"));
        // the relaxation lets it through
        cfg.validate_with(ValidateOptions {
            allow_full_cache: true,
        })
        .unwrap();
    }

    #[test]
    fn zero_power_rejected() {
        let cfg = NetworkConfig {
            p_bs_max: 0.0,
            ..NetworkConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(
            err.violations,
            vec!["p_bs_max must be positive".to_string()]
        );
    }

    #[test]
    fn every_violation_is_listed() {
        let cfg = NetworkConfig {
            num_bs: 0,
            p_sat_max: -1.0,
            sat_cache_capacity: 41,
            ..NetworkConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.violations.len(), 3, "{err}");
    }

    #[test]
    fn exponent_outside_range_warns() {
        let cfg = NetworkConfig {
            zipf_exponent: 1.0,
            ..NetworkConfig::default()
        };
        let v = cfg.validate().unwrap();
        assert_eq!(v.warnings.len(), 1);
        let bad = NetworkConfig {
            zipf_exponent: 0.0,
            ..NetworkConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn partial_json_takes_defaults() {
        let cfg: NetworkConfig = serde_json::from_str(r#"{"num_bs": 3, "seed": 9}"#).unwrap();
        assert_eq!(cfg.num_bs, 3);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.library_size, 40);
        assert!(serde_json::from_str::<NetworkConfig>(r#"{"nope": 1}"#).is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = NetworkConfig::default();
        let b = NetworkConfig {
            seed: 2,
            ..NetworkConfig::default()
        };
        assert_eq!(a.hash_hex(), NetworkConfig::default().hash_hex());
        assert_ne!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex().len(), 64);
    }
}
