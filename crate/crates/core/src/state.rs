//! User association, power control and the per-slot constraint audit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caching::{CachePool, RequestBatch};
use crate::config::NetworkConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("power control factor {0} outside [0, 1]")]
    BetaOutOfRange(f64),
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("user {user} is associated with {count} facilities")]
    MultiAssociation { user: usize, count: usize },
    #[error("facility index {0} out of range")]
    BadFacility(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Bs,
    Sat,
}

/// A base station or satellite. Flat indices put the `num_bs` base stations
/// first, then the satellites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Facility {
    Bs(usize),
    Sat(usize),
}

impl Facility {
    pub fn from_index(index: usize, num_bs: usize) -> Self {
        if index < num_bs {
            Facility::Bs(index)
        } else {
            Facility::Sat(index - num_bs)
        }
    }

    pub fn index(self, num_bs: usize) -> usize {
        match self {
            Facility::Bs(m) => m,
            Facility::Sat(k) => num_bs + k,
        }
    }

    pub fn tier(self) -> Tier {
        match self {
            Facility::Bs(_) => Tier::Bs,
            Facility::Sat(_) => Tier::Sat,
        }
    }
}

/// `p = β · p_max / capacity`. Satisfies the per-user power ceiling for any
/// admissible `β`.
pub fn transmit_power(beta: f64, p_max: f64, capacity: usize) -> Result<f64, StateError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(StateError::BetaOutOfRange(beta));
    }
    if capacity == 0 {
        return Err(StateError::ZeroCapacity);
    }
    Ok(beta * (p_max / capacity as f64))
}

/// Per-user ceiling `p_max / capacity` for the given tier.
pub fn power_ceiling(cfg: &NetworkConfig, tier: Tier) -> f64 {
    match tier {
        Tier::Bs => cfg.p_bs_max / cfg.bs_capacity as f64,
        Tier::Sat => cfg.p_sat_max / cfg.sat_capacity as f64,
    }
}

/// Binary user × facility assignment. Stored as one optional facility per
/// user, so a row can never hold more than one 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssociationMatrix {
    num_bs: usize,
    num_sat: usize,
    assign: Vec<Option<usize>>,
}

impl AssociationMatrix {
    pub fn new(num_users: usize, num_bs: usize, num_sat: usize) -> Self {
        Self {
            num_bs,
            num_sat,
            assign: vec![None; num_users],
        }
    }

    pub fn for_config(cfg: &NetworkConfig) -> Self {
        Self::new(cfg.num_users(), cfg.num_bs, cfg.num_sat)
    }

    pub fn num_users(&self) -> usize {
        self.assign.len()
    }

    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    pub fn num_facilities(&self) -> usize {
        self.num_bs + self.num_sat
    }

    pub fn set(&mut self, user: usize, facility: Option<Facility>) -> Result<(), StateError> {
        let idx = match facility {
            Some(f) => {
                let i = f.index(self.num_bs);
                if i >= self.num_facilities() {
                    return Err(StateError::BadFacility(i));
                }
                Some(i)
            }
            None => None,
        };
        self.assign[user] = idx;
        Ok(())
    }

    pub fn facility(&self, user: usize) -> Option<Facility> {
        self.assign[user].map(|i| Facility::from_index(i, self.num_bs))
    }

    pub fn alpha(&self, user: usize, facility: Facility) -> u8 {
        u8::from(self.assign[user] == Some(facility.index(self.num_bs)))
    }

    pub fn column_count(&self, facility: Facility) -> usize {
        let i = facility.index(self.num_bs);
        self.assign.iter().filter(|a| **a == Some(i)).count()
    }

    /// Users served by `facility`, in ascending index order.
    pub fn users_of(&self, facility: Facility) -> impl Iterator<Item = usize> + '_ {
        let i = facility.index(self.num_bs);
        self.assign
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == Some(i))
            .map(|(u, _)| u)
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.assign
            .iter()
            .map(|a| {
                let mut row = vec![0u8; self.num_facilities()];
                if let Some(i) = a {
                    row[*i] = 1;
                }
                row
            })
            .collect()
    }

    pub fn from_dense(rows: &[Vec<u8>], num_bs: usize, num_sat: usize) -> Result<Self, StateError> {
        let mut m = Self::new(rows.len(), num_bs, num_sat);
        for (user, row) in rows.iter().enumerate() {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0)
                .map(|(i, _)| i)
                .collect();
            match ones.len() {
                0 => {}
                1 if ones[0] < num_bs + num_sat => m.assign[user] = Some(ones[0]),
                1 => return Err(StateError::BadFacility(ones[0])),
                count => return Err(StateError::MultiAssociation { user, count }),
            }
        }
        Ok(m)
    }
}

/// Power-control factors, one per user, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerControlVector(Vec<f64>);

impl PowerControlVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Clips every entry into `[0, 1]`; NaN becomes 0.
    pub fn clipped(raw: impl IntoIterator<Item = f64>) -> Self {
        Self(
            raw.into_iter()
                .map(|b| if b.is_nan() { 0.0 } else { b.clamp(0.0, 1.0) })
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Transmit power of every user given its association. Unassociated users
/// transmit nothing.
pub fn user_powers(
    cfg: &NetworkConfig,
    assoc: &AssociationMatrix,
    beta: &PowerControlVector,
) -> Vec<f64> {
    (0..assoc.num_users())
        .map(|u| match assoc.facility(u) {
            Some(f) => beta.0[u] * power_ceiling(cfg, f.tier()),
            None => 0.0,
        })
        .collect()
}

/// Everything that changes between slots: who is served where, at what
/// power factor, what each facility caches and what users asked for.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub assoc: AssociationMatrix,
    pub beta: PowerControlVector,
    /// One pool per facility, in flat facility order.
    pub pools: Vec<CachePool>,
    pub requests: RequestBatch,
}

impl NetworkState {
    /// Nobody associated, zero power factors, empty caches.
    pub fn new(cfg: &NetworkConfig) -> Self {
        let pools = (0..cfg.num_facilities())
            .map(|f| CachePool::empty(f, cache_capacity(cfg, Facility::from_index(f, cfg.num_bs))))
            .collect();
        Self {
            assoc: AssociationMatrix::for_config(cfg),
            beta: PowerControlVector::zeros(cfg.num_users()),
            pools,
            requests: RequestBatch::default(),
        }
    }

    pub fn powers(&self, cfg: &NetworkConfig) -> Vec<f64> {
        user_powers(cfg, &self.assoc, &self.beta)
    }

    pub fn audit(&self, cfg: &NetworkConfig) -> Vec<Violation> {
        audit(cfg, &self.assoc, &self.beta, &self.powers(cfg), &self.pools)
    }

    /// Resolves hit flags of the current requests against the serving
    /// facility's pool. Unassociated users miss.
    pub fn resolve_hits(&mut self) {
        let hits = self
            .requests
            .requests
            .iter()
            .enumerate()
            .map(|(u, &file)| match self.assoc.facility(u) {
                Some(f) => self.pools[f.index(self.assoc.num_bs())].contains(file),
                None => false,
            })
            .collect();
        self.requests.hits = hits;
    }
}

/// Cache size of a facility.
pub fn cache_capacity(cfg: &NetworkConfig, facility: Facility) -> usize {
    match facility {
        Facility::Bs(_) => cfg.bs_cache_capacity,
        Facility::Sat(_) => cfg.sat_cache_capacity,
    }
}

/// User capacity of a facility.
pub fn user_capacity(cfg: &NetworkConfig, facility: Facility) -> usize {
    match facility {
        Facility::Bs(_) => cfg.bs_capacity,
        Facility::Sat(_) => cfg.sat_capacity,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    MultiAssociation { user: usize, count: usize },
    BsPower { user: usize, power: f64, limit: f64 },
    SatPower { user: usize, power: f64, limit: f64 },
    BsOverCapacity { bs: usize, count: usize },
    SatOverCapacity { sat: usize, count: usize },
    BetaOutOfRange { user: usize, beta: f64 },
    CacheOverCapacity { facility: usize, files: usize },
    CacheFileOutOfRange { facility: usize, file: usize },
}

/// Checks single association, per-user power ceilings, facility user
/// capacities, the power-factor range and cache capacities. Returns every
/// violation found.
pub fn audit(
    cfg: &NetworkConfig,
    assoc: &AssociationMatrix,
    beta: &PowerControlVector,
    powers: &[f64],
    pools: &[CachePool],
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (user, row) in assoc.to_dense().iter().enumerate() {
        let count: usize = row.iter().map(|&a| a as usize).sum();
        if count > 1 {
            out.push(Violation::MultiAssociation { user, count });
        }
    }
    for (user, (&b, &p)) in beta.0.iter().zip(powers).enumerate() {
        if !(0.0..=1.0).contains(&b) {
            out.push(Violation::BetaOutOfRange { user, beta: b });
        }
        match assoc.facility(user) {
            Some(Facility::Bs(_)) => {
                let limit = power_ceiling(cfg, Tier::Bs);
                if !(p <= limit) {
                    out.push(Violation::BsPower {
                        user,
                        power: p,
                        limit,
                    });
                }
            }
            Some(Facility::Sat(_)) => {
                let limit = power_ceiling(cfg, Tier::Sat);
                if !(p <= limit) {
                    out.push(Violation::SatPower {
                        user,
                        power: p,
                        limit,
                    });
                }
            }
            None => {}
        }
    }
    for bs in 0..cfg.num_bs {
        let count = assoc.column_count(Facility::Bs(bs));
        if count > cfg.bs_capacity {
            out.push(Violation::BsOverCapacity { bs, count });
        }
    }
    for sat in 0..cfg.num_sat {
        let count = assoc.column_count(Facility::Sat(sat));
        if count > cfg.sat_capacity {
            out.push(Violation::SatOverCapacity { sat, count });
        }
    }
    for (facility, pool) in pools.iter().enumerate() {
        if pool.len() > pool.capacity() {
            out.push(Violation::CacheOverCapacity {
                facility,
                files: pool.len(),
            });
        }
        for &file in pool.files() {
            if file == 0 || file > cfg.library_size {
                out.push(Violation::CacheFileOutOfRange { facility, file });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn transmit_power_examples() {
        assert_eq!(transmit_power(0.5, 10.0, 5).unwrap(), 1.0);
        assert_eq!(transmit_power(0.0, 123.0, 7).unwrap(), 0.0);
        assert_eq!(transmit_power(1.0, 3.25, 1).unwrap(), 3.25);
        assert_eq!(
            transmit_power(1.5, 1.0, 1),
            Err(StateError::BetaOutOfRange(1.5))
        );
        assert_eq!(
            transmit_power(-0.1, 1.0, 1).unwrap_err(),
            StateError::BetaOutOfRange(-0.1)
        );
        assert_eq!(transmit_power(0.5, 1.0, 0), Err(StateError::ZeroCapacity));
    }

    proptest! {
        #[test]
        fn transmit_power_respects_ceiling(beta in 0.0f64..=1.0, p_max in 1e-6f64..1e4, cap in 1usize..64) {
            let p = transmit_power(beta, p_max, cap).unwrap();
            prop_assert!(p <= p_max / cap as f64);
            prop_assert!(p >= 0.0);
        }
    }

    #[test]
    fn facility_indexing_is_flat() {
        assert_eq!(Facility::from_index(2, 3), Facility::Bs(2));
        assert_eq!(Facility::from_index(3, 3), Facility::Sat(0));
        assert_eq!(Facility::Sat(1).index(3), 4);
        assert_eq!(Facility::Sat(1).tier(), Tier::Sat);
    }

    #[test]
    fn dense_round_trip_and_multi_rejection() {
        let mut a = AssociationMatrix::new(3, 2, 1);
        a.set(0, Some(Facility::Bs(1))).unwrap();
        a.set(2, Some(Facility::Sat(0))).unwrap();
        let dense = a.to_dense();
        assert_eq!(dense, vec![vec![0, 1, 0], vec![0, 0, 0], vec![0, 0, 1]]);
        assert_eq!(AssociationMatrix::from_dense(&dense, 2, 1).unwrap(), a);
        assert_eq!(a.column_count(Facility::Bs(1)), 1);
        assert_eq!(a.alpha(2, Facility::Sat(0)), 1);
        assert_eq!(a.users_of(Facility::Sat(0)).collect::<Vec<_>>(), vec![2]);

        let bad = vec![vec![1, 1, 0]];
        assert_eq!(
            AssociationMatrix::from_dense(&bad, 2, 1),
            Err(StateError::MultiAssociation { user: 0, count: 2 })
        );
        assert!(a.set(0, Some(Facility::Sat(3))).is_err());
    }

    #[test]
    fn audit_flags_overload_and_beta() {
        let cfg = NetworkConfig {
            num_bs: 1,
            num_sat: 1,
            num_bs_users: 2,
            num_sat_users: 0,
            bs_capacity: 1,
            ..NetworkConfig::default()
        };
        let mut a = AssociationMatrix::for_config(&cfg);
        a.set(0, Some(Facility::Bs(0))).unwrap();
        a.set(1, Some(Facility::Bs(0))).unwrap();
        let beta = PowerControlVector(vec![0.5, 1.2]);
        let powers = user_powers(&cfg, &a, &beta);
        let v = audit(&cfg, &a, &beta, &powers, &[]);
        assert!(v.contains(&Violation::BsOverCapacity { bs: 0, count: 2 }));
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::BetaOutOfRange { user: 1, .. })));
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::BsPower { user: 1, .. })));
    }

    #[test]
    fn clipping() {
        let b = PowerControlVector::clipped([1.7, -0.2, 0.3, f64::NAN]);
        assert_eq!(b.as_slice(), &[1.0, 0.0, 0.3, 0.0]);
    }
}
