//! Per-slot channel realizations.
//!
//! Terrestrial links are Rayleigh: `g = sqrt(ĝ · d^-ξ)` with `ĝ ~ Exp(1)`
//! and a uniform phase. Satellite links are deterministic in magnitude,
//! `|h| = sqrt(G_k · G_rx) · c / (4π f_c d)`, where `G_k` follows the
//! Bessel bell pattern of [`sat_beam_gain`]; the Doppler term rotates the
//! phase by `π·ϑ`.
//!
//! Squared magnitudes are cached next to the complex coefficients and are
//! computed from the unrotated magnitude, so the Doppler parameter never
//! perturbs a gain, not even in the last bit.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::NetworkConfig;
use crate::topology::Topology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("Bessel argument {0} outside the supported range |x| < 50")]
    ArgumentOutOfRange(f64),
    #[error("link distance must be positive, got {0}")]
    NonPositiveDistance(f64),
}

/// Largest |x| accepted by [`bessel_j`].
pub const BESSEL_MAX_ARG: f64 = 50.0;

/// Relative size of the last series term at which summation stops.
const SERIES_CUTOFF: f64 = 1e-15;

/// Constant in the beam-pattern argument `Λ = 2.07123 sin θ / sin θ_3dB`.
pub const BEAM_PATTERN_SCALE: f64 = 2.07123;

// Double-double arithmetic for the Bessel series. For large |x| the
// alternating terms grow to ~1e19 before decaying, so plain f64 summation
// loses most of its digits to cancellation.
#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        Self { hi: s, lo: err }
    }

    fn quick_two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        Self {
            hi: s,
            lo: b - (s - a),
        }
    }

    fn two_prod(a: f64, b: f64) -> Self {
        let p = a * b;
        Self {
            hi: p,
            lo: a.mul_add(b, -p),
        }
    }

    fn add(self, o: Self) -> Self {
        let s = Self::two_sum(self.hi, o.hi);
        let t = Self::two_sum(self.lo, o.lo);
        let s = Self::quick_two_sum(s.hi, s.lo + t.hi);
        Self::quick_two_sum(s.hi, s.lo + t.lo)
    }

    fn mul(self, o: Self) -> Self {
        let p = Self::two_prod(self.hi, o.hi);
        let lo = p.lo + (self.hi * o.lo + self.lo * o.hi);
        Self::quick_two_sum(p.hi, lo)
    }

    fn div_f64(self, d: f64) -> Self {
        let q1 = self.hi / d;
        let r = self.add(Self::two_prod(q1, d).neg());
        let q2 = r.hi / d;
        Self::quick_two_sum(q1, q2)
    }

    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Bessel function of the first kind `J_order(x)` by power-series summation
/// `Σ_k (-1)^k (x/2)^(2k+n) / (k! (k+n)!)`, stopping once a term falls below
/// `1e-15` of the running sum.
pub fn bessel_j(order: u32, x: f64) -> Result<f64, ChannelError> {
    if !x.is_finite() || x.abs() >= BESSEL_MAX_ARG {
        return Err(ChannelError::ArgumentOutOfRange(x));
    }
    let half = x / 2.0;
    // (x/2)^n / n!
    let mut term = Dd::new(1.0);
    for k in 1..=order {
        term = term.mul(Dd::new(half)).div_f64(k as f64);
    }
    if term.hi == 0.0 {
        return Ok(0.0);
    }
    let step = Dd::two_prod(half, half).neg();
    let mut sum = term;
    let n = order as f64;
    let mut k = 1.0;
    loop {
        term = term.mul(step).div_f64(k * (k + n));
        sum = sum.add(term);
        if term.hi.abs() <= SERIES_CUTOFF * sum.hi.abs() || term.hi == 0.0 {
            break;
        }
        k += 1.0;
    }
    Ok(sum.to_f64())
}

/// Bell-shaped beam pattern
/// `G_max · [J_1(Λ)/(2Λ) + 36 J_3(Λ)/Λ³]²` with
/// `Λ = 2.07123 sin θ / sin θ_3dB`. Equals `G_max` at boresight.
pub fn sat_beam_gain(theta: f64, theta_3db: f64, g_max: f64) -> f64 {
    let lambda = BEAM_PATTERN_SCALE * theta.sin() / theta_3db.sin();
    let bracket = if lambda.abs() < 1e-3 {
        // Taylor expansion of the bracket: 1 - 5Λ²/64 + 19Λ⁴/7680.
        let l2 = lambda * lambda;
        1.0 - 5.0 * l2 / 64.0 + 19.0 * l2 * l2 / 7680.0
    } else {
        // |Λ| ≤ 2.07123 / sin θ_3dB, inside the series range for any
        // beamwidth above ~2.4 degrees.
        let j1 = bessel_j(1, lambda).expect("beam argument in range");
        let j3 = bessel_j(3, lambda).expect("beam argument in range");
        j1 / (2.0 * lambda) + 36.0 * j3 / (lambda * lambda * lambda)
    };
    g_max * bracket * bracket
}

fn sat_link_magnitude(cfg: &NetworkConfig, d: f64, theta: f64) -> Result<f64, ChannelError> {
    if !(d > 0.0) {
        return Err(ChannelError::NonPositiveDistance(d));
    }
    let g_sat = sat_beam_gain(theta, cfg.theta_3db, cfg.g_max);
    Ok((g_sat * cfg.rx_gain).sqrt() * cfg.light_speed / (4.0 * PI * cfg.carrier_freq * d))
}

/// Complex satellite link coefficient with Doppler phase `e^{jπϑ}`.
pub fn sat_link_coeff(cfg: &NetworkConfig, d: f64, theta: f64) -> Result<Complex64, ChannelError> {
    let mag = sat_link_magnitude(cfg, d, theta)?;
    Ok(Complex64::from_polar(mag, PI * cfg.doppler))
}

fn draw_bs_link(rng: &mut impl Rng, d: f64, xi: f64) -> Result<(Complex64, f64), ChannelError> {
    if !(d > 0.0) {
        return Err(ChannelError::NonPositiveDistance(d));
    }
    // CN(0, 1): each component has variance 1/2, so |z|² ~ Exp(1).
    let re: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
    let im: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
    let fading = re * re + im * im;
    let pathloss = d.powf(-xi);
    Ok((Complex64::new(re, im) * pathloss.sqrt(), fading * pathloss))
}

/// One Rayleigh draw for a terrestrial link at distance `d`.
pub fn bs_link_coeff(rng: &mut impl Rng, d: f64, xi: f64) -> Result<Complex64, ChannelError> {
    draw_bs_link(rng, d, xi).map(|(g, _)| g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    /// `bs[user][bs]`.
    pub bs: Vec<Vec<Complex64>>,
    /// `sat[user][sat]`.
    pub sat: Vec<Vec<Complex64>>,
    /// `|bs[user][bs]|²`.
    pub bs_gain: Vec<Vec<f64>>,
    /// `|sat[user][sat]|²`.
    pub sat_gain: Vec<Vec<f64>>,
}

impl ChannelRealization {
    /// Builds a realization straight from power gains, with zero phases.
    /// Handy for hand-checked scenarios.
    pub fn from_gains(bs_gain: Vec<Vec<f64>>, sat_gain: Vec<Vec<f64>>) -> Self {
        let to_c = |rows: &Vec<Vec<f64>>| {
            rows.iter()
                .map(|r| r.iter().map(|g| Complex64::new(g.sqrt(), 0.0)).collect())
                .collect()
        };
        Self {
            bs: to_c(&bs_gain),
            sat: to_c(&sat_gain),
            bs_gain,
            sat_gain,
        }
    }

    pub fn num_users(&self) -> usize {
        self.bs_gain.len()
    }
}

/// Draws every user × BS Rayleigh link and evaluates every user × satellite
/// link for one slot.
pub fn realize_channels(
    cfg: &NetworkConfig,
    topo: &Topology,
    rng: &mut impl Rng,
) -> Result<ChannelRealization, ChannelError> {
    let n = topo.num_users();
    let mut bs = Vec::with_capacity(n);
    let mut bs_gain = Vec::with_capacity(n);
    for row in &topo.bs_dist {
        let mut c = Vec::with_capacity(row.len());
        let mut g = Vec::with_capacity(row.len());
        for &d in row {
            let (coeff, gain) = draw_bs_link(rng, d, cfg.pathloss_exponent)?;
            c.push(coeff);
            g.push(gain);
        }
        bs.push(c);
        bs_gain.push(g);
    }
    let mut sat = Vec::with_capacity(n);
    let mut sat_gain = Vec::with_capacity(n);
    for (drow, arow) in topo.sat_dist.iter().zip(&topo.sat_angle) {
        let mut c = Vec::with_capacity(drow.len());
        let mut g = Vec::with_capacity(drow.len());
        for (&d, &theta) in drow.iter().zip(arow) {
            let mag = sat_link_magnitude(cfg, d, theta)?;
            c.push(Complex64::from_polar(mag, PI * cfg.doppler));
            g.push(mag * mag);
        }
        sat.push(c);
        sat_gain.push(g);
    }
    Ok(ChannelRealization {
        bs,
        sat,
        bs_gain,
        sat_gain,
    })
}
