//! Node placement and link geometry.
//!
//! Base stations and users are dropped uniformly in a square of side
//! `area_side`. Each satellite sits at `sat_altitude` above a uniformly drawn
//! nadir point in the same square with its beam pointed straight down, so a
//! user's off-boresight angle follows from its ground offset to the nadir.
//! BS-user distances include the BS antenna height, which keeps them at or
//! above `bs_height`.

use rand::Rng;

use crate::config::NetworkConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub bs_positions: Vec<[f64; 2]>,
    /// Nadir point of each satellite.
    pub sat_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    /// `bs_dist[user][bs]`, metres.
    pub bs_dist: Vec<Vec<f64>>,
    /// `sat_dist[user][sat]`, metres.
    pub sat_dist: Vec<Vec<f64>>,
    /// `sat_angle[user][sat]`, off-boresight angle in radians.
    pub sat_angle: Vec<Vec<f64>>,
}

fn draw_point(rng: &mut impl Rng, side: f64) -> [f64; 2] {
    // Always consume two draws so the stream does not depend on `side`.
    let x: f64 = rng.random();
    let y: f64 = rng.random();
    [x * side, y * side]
}

fn ground_offset(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn generate_topology(cfg: &NetworkConfig, rng: &mut impl Rng) -> Topology {
    let side = cfg.area_side;
    let bs_positions: Vec<_> = (0..cfg.num_bs).map(|_| draw_point(rng, side)).collect();
    let sat_positions: Vec<_> = (0..cfg.num_sat).map(|_| draw_point(rng, side)).collect();
    let user_positions: Vec<_> = (0..cfg.num_users())
        .map(|_| draw_point(rng, side))
        .collect();

    let bs_dist = user_positions
        .iter()
        .map(|&u| {
            bs_positions
                .iter()
                .map(|&b| ground_offset(u, b).hypot(cfg.bs_height))
                .collect()
        })
        .collect();
    let sat_dist = user_positions
        .iter()
        .map(|&u| {
            sat_positions
                .iter()
                .map(|&s| ground_offset(u, s).hypot(cfg.sat_altitude))
                .collect()
        })
        .collect();
    let sat_angle = user_positions
        .iter()
        .map(|&u| {
            sat_positions
                .iter()
                .map(|&s| ground_offset(u, s).atan2(cfg.sat_altitude))
                .collect()
        })
        .collect();

    Topology {
        bs_positions,
        sat_positions,
        user_positions,
        bs_dist,
        sat_dist,
        sat_angle,
    }
}

impl Topology {
    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    /// Index of the closest base station to `user`; lowest index on ties.
    pub fn nearest_bs(&self, user: usize) -> usize {
        let row = &self.bs_dist[user];
        let mut best = 0;
        for (i, &d) in row.iter().enumerate() {
            if d < row[best] {
                best = i;
            }
        }
        best
    }
}
