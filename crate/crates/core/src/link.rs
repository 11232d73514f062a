//! SINR, achievable rate and energy efficiency.
//!
//! Interference terms, for a victim `n`:
//!
//! | victim on | term       | sum over                          | gain used                        |
//! |-----------|------------|-----------------------------------|----------------------------------|
//! | BS `m`    | intra-cell | other users of `m`                | interferer → `m` (terrestrial)   |
//! | BS `m`    | cross-cell | users of every other BS `m'`      | interferer → `m'` (terrestrial)  |
//! | BS `m`    | cross-tier | satellite users                   | interferer → `m` (terrestrial)   |
//! | sat `k`   | cross-tier | BS users                          | interferer → `k` (satellite)     |
//! | sat `k`   | intra-beam | other users of `k`                | interferer → `k` (satellite)     |
//! | sat `k`   | cross-sat  | users of every other satellite    | interferer → `k` (satellite)     |
//!
//! With SIC enabled a BS user only sees co-cell users with a stronger gain
//! to the shared BS; weaker ones have been decoded and subtracted. Equal
//! gains count the lower user index as stronger.

use serde::Serialize;
use thiserror::Error;

use crate::caching::total_user_power;
use crate::channel::ChannelRealization;
use crate::config::NetworkConfig;
use crate::exec::ExecMode;
use crate::state::{AssociationMatrix, Facility, NetworkState, Tier};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("degenerate power: total consumed power is {0} W")]
    DegeneratePower(f64),
    #[error("rate must be non-negative, got {0}")]
    NegativeRate(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Interference {
    pub intra: f64,
    pub cross: f64,
    pub cross_tier: f64,
}

impl Interference {
    pub fn total(&self) -> f64 {
        self.intra + self.cross + self.cross_tier
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SinrOutcome {
    pub sinr: f64,
    pub interference: Interference,
    /// False when the user is not served by a facility of the queried tier;
    /// the SINR is then 0.
    pub associated: bool,
}

fn stronger(gains: &[Vec<f64>], other: usize, user: usize, facility: usize) -> bool {
    let (go, gu) = (gains[other][facility], gains[user][facility]);
    go > gu || (go == gu && other < user)
}

pub fn bs_user_sinr(
    user: usize,
    ch: &ChannelRealization,
    assoc: &AssociationMatrix,
    powers: &[f64],
    cfg: &NetworkConfig,
    sic: bool,
) -> SinrOutcome {
    let m = match assoc.facility(user) {
        Some(Facility::Bs(m)) => m,
        _ => return SinrOutcome::default(),
    };
    let g = &ch.bs_gain;
    let mut i = Interference::default();
    for other in 0..assoc.num_users() {
        if other == user {
            continue;
        }
        let p = powers[other];
        match assoc.facility(other) {
            Some(Facility::Bs(m2)) if m2 == m => {
                if !sic || stronger(g, other, user, m) {
                    i.intra += g[other][m] * p;
                }
            }
            Some(Facility::Bs(m2)) => i.cross += g[other][m2] * p,
            Some(Facility::Sat(_)) => i.cross_tier += g[other][m] * p,
            None => {}
        }
    }
    let signal = g[user][m] * powers[user];
    SinrOutcome {
        sinr: signal / (i.intra + i.cross + i.cross_tier + cfg.noise_density),
        interference: i,
        associated: true,
    }
}

pub fn sat_user_sinr(
    user: usize,
    ch: &ChannelRealization,
    assoc: &AssociationMatrix,
    powers: &[f64],
    cfg: &NetworkConfig,
) -> SinrOutcome {
    let k = match assoc.facility(user) {
        Some(Facility::Sat(k)) => k,
        _ => return SinrOutcome::default(),
    };
    let h = &ch.sat_gain;
    let mut i = Interference::default();
    for other in 0..assoc.num_users() {
        if other == user {
            continue;
        }
        let p = powers[other];
        match assoc.facility(other) {
            Some(Facility::Bs(_)) => i.cross_tier += h[other][k] * p,
            Some(Facility::Sat(k2)) if k2 == k => i.intra += h[other][k] * p,
            Some(Facility::Sat(_)) => i.cross += h[other][k] * p,
            None => {}
        }
    }
    let signal = h[user][k] * powers[user];
    SinrOutcome {
        sinr: signal / (i.cross_tier + i.intra + i.cross + cfg.noise_density),
        interference: i,
        associated: true,
    }
}

/// `log2(1 + γ)`, bits/s/Hz.
pub fn rate(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

/// Bits per joule per hertz. A BS user pays transmit plus retrieval power;
/// a satellite user is charged its transmit power only. Zero rate gives zero
/// efficiency regardless of power.
pub fn energy_efficiency(
    tier: Tier,
    rate: f64,
    p_tx: f64,
    hit: bool,
    cfg: &NetworkConfig,
) -> Result<f64, LinkError> {
    if !(rate >= 0.0) {
        return Err(LinkError::NegativeRate(rate));
    }
    if rate == 0.0 {
        return Ok(0.0);
    }
    let denom = match tier {
        Tier::Bs => total_user_power(Tier::Bs, p_tx, hit, cfg),
        Tier::Sat => p_tx,
    };
    if !(denom > 0.0) {
        return Err(LinkError::DegeneratePower(denom));
    }
    Ok(rate / denom)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UserMetrics {
    #[serde(skip)]
    pub facility: Option<Facility>,
    pub power: f64,
    pub hit: bool,
    pub sinr: f64,
    pub rate: f64,
    pub ee: f64,
    pub interference: Interference,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkMetrics {
    pub users: Vec<UserMetrics>,
    /// Sum of per-user efficiency over associated users.
    pub objective: f64,
}

impl LinkMetrics {
    /// Sum of efficiency over the users served by `facility`.
    pub fn facility_ee(&self, facility: Facility) -> f64 {
        self.users
            .iter()
            .filter(|u| u.facility == Some(facility))
            .map(|u| u.ee)
            .sum()
    }

    /// Sum of efficiency over users of one tier.
    pub fn tier_ee(&self, tier: Tier) -> f64 {
        self.users
            .iter()
            .filter(|u| u.facility.map(Facility::tier) == Some(tier))
            .map(|u| u.ee)
            .sum()
    }
}

fn user_metrics(
    user: usize,
    state: &NetworkState,
    powers: &[f64],
    ch: &ChannelRealization,
    cfg: &NetworkConfig,
) -> UserMetrics {
    let facility = state.assoc.facility(user);
    let hit = state.requests.hits.get(user).copied().unwrap_or(false);
    let Some(f) = facility else {
        return UserMetrics {
            hit,
            ..UserMetrics::default()
        };
    };
    let out = match f {
        Facility::Bs(_) => bs_user_sinr(user, ch, &state.assoc, powers, cfg, cfg.sic),
        Facility::Sat(_) => sat_user_sinr(user, ch, &state.assoc, powers, cfg),
    };
    let r = rate(out.sinr);
    // A zero-power user has zero rate, so the efficiency is 0, never an error.
    let ee = energy_efficiency(f.tier(), r, powers[user], hit, cfg).unwrap_or(0.0);
    UserMetrics {
        facility,
        power: powers[user],
        hit,
        sinr: out.sinr,
        rate: r,
        ee,
        interference: out.interference,
    }
}

pub fn system_metrics(
    state: &NetworkState,
    ch: &ChannelRealization,
    cfg: &NetworkConfig,
) -> LinkMetrics {
    system_metrics_with(ExecMode::Sequential, state, ch, cfg)
}

/// [`system_metrics`] with the per-user loop spread according to `mode`.
pub fn system_metrics_with(
    mode: ExecMode,
    state: &NetworkState,
    ch: &ChannelRealization,
    cfg: &NetworkConfig,
) -> LinkMetrics {
    let powers = state.powers(cfg);
    let users = mode.map_range(state.assoc.num_users(), |u| {
        user_metrics(u, state, &powers, ch, cfg)
    });
    let objective = users.iter().map(|u| u.ee).sum();
    LinkMetrics { users, objective }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::PowerControlVector;

    fn cfg_noise(n0: f64) -> NetworkConfig {
        NetworkConfig {
            noise_density: n0,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn lone_bs_user() {
        let ch = ChannelRealization::from_gains(vec![vec![1.0]], vec![vec![0.0]]);
        let mut a = AssociationMatrix::new(1, 1, 1);
        a.set(0, Some(Facility::Bs(0))).unwrap();
        let out = bs_user_sinr(0, &ch, &a, &[2.0], &cfg_noise(1.0), false);
        assert_eq!(out.sinr, 2.0);
        assert!((rate(out.sinr) - 1.584_962_500_721_156).abs() < 1e-12);
    }

    #[test]
    fn two_co_cell_users_with_and_without_sic() {
        let ch =
            ChannelRealization::from_gains(vec![vec![4.0], vec![1.0]], vec![vec![0.0], vec![0.0]]);
        let mut a = AssociationMatrix::new(2, 1, 1);
        a.set(0, Some(Facility::Bs(0))).unwrap();
        a.set(1, Some(Facility::Bs(0))).unwrap();
        let cfg = cfg_noise(1.0);
        let p = [1.0, 1.0];
        assert_eq!(bs_user_sinr(0, &ch, &a, &p, &cfg, false).sinr, 2.0);
        assert_eq!(bs_user_sinr(1, &ch, &a, &p, &cfg, false).sinr, 0.2);
        assert_eq!(bs_user_sinr(0, &ch, &a, &p, &cfg, true).sinr, 4.0);
        assert_eq!(bs_user_sinr(1, &ch, &a, &p, &cfg, true).sinr, 0.2);
    }

    #[test]
    fn satellite_user_cases() {
        // user 0 on the satellite, user 1 on the BS
        let ch =
            ChannelRealization::from_gains(vec![vec![0.0], vec![0.3]], vec![vec![0.5], vec![1.0]]);
        let cfg = cfg_noise(1.0);
        let mut a = AssociationMatrix::new(2, 1, 1);
        a.set(0, Some(Facility::Sat(0))).unwrap();
        assert_eq!(sat_user_sinr(0, &ch, &a, &[2.0, 0.0], &cfg).sinr, 1.0);
        a.set(1, Some(Facility::Bs(0))).unwrap();
        let out = sat_user_sinr(0, &ch, &a, &[2.0, 1.0], &cfg);
        assert_eq!(out.sinr, 0.5);
        assert_eq!(out.interference.cross_tier, 1.0);
        let zero = sat_user_sinr(0, &ch, &a, &[0.0, 0.0], &cfg);
        assert_eq!(zero.sinr, 0.0);
        assert_eq!(rate(zero.sinr), 0.0);
    }

    #[test]
    fn unassociated_is_flagged() {
        let ch = ChannelRealization::from_gains(vec![vec![1.0]], vec![vec![1.0]]);
        let a = AssociationMatrix::new(1, 1, 1);
        let cfg = cfg_noise(1.0);
        let out = bs_user_sinr(0, &ch, &a, &[1.0], &cfg, false);
        assert!(!out.associated);
        assert_eq!(out.sinr, 0.0);
        assert!(!sat_user_sinr(0, &ch, &a, &[1.0], &cfg).associated);
    }

    #[test]
    fn efficiency_cases() {
        let cfg = NetworkConfig {
            p_retrieve_bs: 0.5,
            ..NetworkConfig::default()
        };
        let ee = energy_efficiency(Tier::Bs, 1.585, 2.0, true, &cfg).unwrap();
        assert!((ee - 0.634).abs() < 1e-12);
        let free = NetworkConfig {
            p_retrieve_bs: 0.0,
            p_retrieve_core: 0.0,
            ..NetworkConfig::default()
        };
        assert_eq!(
            energy_efficiency(Tier::Bs, 3.0, 2.0, false, &free).unwrap(),
            1.5
        );
        assert_eq!(
            energy_efficiency(Tier::Sat, 0.0, 0.0, false, &free).unwrap(),
            0.0
        );
        assert_eq!(
            energy_efficiency(Tier::Sat, 1.0, 0.0, false, &cfg),
            Err(LinkError::DegeneratePower(0.0))
        );
        assert_eq!(
            energy_efficiency(Tier::Sat, 3.0, 2.0, true, &cfg).unwrap(),
            1.5
        );
    }

    #[test]
    fn empty_and_single_systems() {
        let cfg = NetworkConfig {
            num_bs: 1,
            num_sat: 1,
            num_bs_users: 1,
            num_sat_users: 0,
            bs_capacity: 1,
            ..NetworkConfig::default()
        };
        let ch = ChannelRealization::from_gains(vec![vec![1e-6]], vec![vec![1e-13]]);
        let mut state = NetworkState::new(&cfg);
        state.beta = PowerControlVector::clipped([0.7]);
        assert_eq!(system_metrics(&state, &ch, &cfg).objective, 0.0);
        state.assoc.set(0, Some(Facility::Bs(0))).unwrap();
        let m = system_metrics(&state, &ch, &cfg);
        assert!(m.objective > 0.0);
        assert_eq!(m.objective, m.users[0].ee);
        assert_eq!(m.facility_ee(Facility::Bs(0)), m.objective);
    }
}
