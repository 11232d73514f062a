//! Zipf content popularity, cache pools and the retrieval-power model.
//!
//! File indices are 1-based so that file `u` is also its popularity rank.

use std::collections::BTreeSet;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use thiserror::Error;

use crate::config::NetworkConfig;
use crate::state::Tier;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CacheError {
    #[error("library must hold at least one file")]
    EmptyLibrary,
    #[error("zipf exponent must be positive, got {0}")]
    BadExponent(f64),
    #[error("file {file} outside library 1..={library}")]
    FileOutOfRange { file: usize, library: usize },
    #[error("{files} files exceed cache capacity {capacity}")]
    OverCapacity { files: usize, capacity: usize },
    #[error("backhaul delay must be positive, got {0}")]
    NonPositiveDelay(f64),
    #[error("hit rate of an empty request batch")]
    EmptyBatch,
}

/// Request distribution `y_u = u^-ε / Σ_u' u'^-ε` over files `1..=U`.
#[derive(Clone, Debug)]
pub struct ZipfPopularity {
    pmf: Vec<f64>,
    exponent: f64,
    sampler: WeightedIndex<f64>,
}

impl ZipfPopularity {
    pub fn new(library_size: usize, exponent: f64) -> Result<Self, CacheError> {
        zipf_pmf(library_size, exponent)
    }

    /// `pmf()[u - 1]` is the probability of file `u`.
    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn prob(&self, file: usize) -> f64 {
        self.pmf[file - 1]
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn library_size(&self) -> usize {
        self.pmf.len()
    }

    /// Probability that a request lands in `files`.
    pub fn mass(&self, files: &BTreeSet<usize>) -> f64 {
        files.iter().map(|&u| self.pmf[u - 1]).sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.sampler.sample(rng) + 1
    }
}

pub fn zipf_pmf(library_size: usize, exponent: f64) -> Result<ZipfPopularity, CacheError> {
    if library_size == 0 {
        return Err(CacheError::EmptyLibrary);
    }
    if !(exponent > 0.0) || !exponent.is_finite() {
        return Err(CacheError::BadExponent(exponent));
    }
    let weights: Vec<f64> = (1..=library_size)
        .map(|u| (u as f64).powf(-exponent))
        .collect();
    // Smallest terms first keeps the normalizer accurate for long tails.
    let total: f64 = weights.iter().rev().sum();
    let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let sampler = WeightedIndex::new(&pmf).expect("positive finite weights");
    Ok(ZipfPopularity {
        pmf,
        exponent,
        sampler,
    })
}

/// Requested files and, once a serving cache is known, hit flags.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RequestBatch {
    /// 1-based file index per user.
    pub requests: Vec<usize>,
    /// Hit flag per user; empty until resolved against the caches.
    pub hits: Vec<bool>,
}

impl RequestBatch {
    pub fn with_hits(requests: Vec<usize>, hits: Vec<bool>) -> Self {
        Self { requests, hits }
    }
}

/// I.i.d. Zipf requests, one per user. Hits are left unset.
pub fn sample_requests(pop: &ZipfPopularity, num_users: usize, rng: &mut impl Rng) -> RequestBatch {
    RequestBatch {
        requests: (0..num_users).map(|_| pop.sample(rng)).collect(),
        hits: Vec::new(),
    }
}

/// Files held by one facility.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CachePool {
    owner: usize,
    capacity: usize,
    files: BTreeSet<usize>,
}

impl CachePool {
    pub fn empty(owner: usize, capacity: usize) -> Self {
        Self {
            owner,
            capacity,
            files: BTreeSet::new(),
        }
    }

    pub fn new(
        owner: usize,
        capacity: usize,
        files: impl IntoIterator<Item = usize>,
        library_size: usize,
    ) -> Result<Self, CacheError> {
        let files: BTreeSet<usize> = files.into_iter().collect();
        if files.len() > capacity {
            return Err(CacheError::OverCapacity {
                files: files.len(),
                capacity,
            });
        }
        if let Some(&bad) = files.iter().find(|&&f| f == 0 || f > library_size) {
            return Err(CacheError::FileOutOfRange {
                file: bad,
                library: library_size,
            });
        }
        Ok(Self {
            owner,
            capacity,
            files,
        })
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn files(&self) -> &BTreeSet<usize> {
        &self.files
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn contains(&self, file: usize) -> bool {
        self.files.contains(&file)
    }
}

pub fn hit_indicator(file: usize, pool: &CachePool) -> bool {
    pool.contains(file)
}

/// Delay-saving reward `J · s / T`. `T` is the terrestrial backhaul delay for
/// the BS tier and the gateway delay for the satellite tier; the tier only
/// selects which delay the caller passes.
pub fn cache_delay_reward(
    hit: bool,
    size_bits: f64,
    delay: f64,
    _tier: Tier,
) -> Result<f64, CacheError> {
    if !(delay > 0.0) {
        return Err(CacheError::NonPositiveDelay(delay));
    }
    Ok(if hit { size_bits / delay } else { 0.0 })
}

/// Backhaul delay the given tier pays on a miss.
pub fn backhaul_delay(cfg: &NetworkConfig, tier: Tier) -> f64 {
    match tier {
        Tier::Bs => cfg.delay_bs_backhaul,
        Tier::Sat => cfg.delay_sat_backhaul,
    }
}

/// Fraction of requests served locally.
pub fn cache_hit_rate(batch: &RequestBatch) -> Result<f64, CacheError> {
    if batch.hits.is_empty() {
        return Err(CacheError::EmptyBatch);
    }
    let hits = batch.hits.iter().filter(|&&h| h).count();
    Ok(hits as f64 / batch.hits.len() as f64)
}

/// Transmit power plus retrieval power: the local-cache cost on a hit, the
/// core-network cost on a miss.
pub fn total_user_power(tier: Tier, p_tx: f64, hit: bool, cfg: &NetworkConfig) -> f64 {
    let (local, core) = match tier {
        Tier::Bs => (cfg.p_retrieve_bs, cfg.p_retrieve_core),
        Tier::Sat => (cfg.p_retrieve_sat, cfg.p_retrieve_sat_core),
    };
    let j = if hit { 1.0 } else { 0.0 };
    p_tx + (1.0 - j) * core + j * local
}

/// The `capacity` highest-scoring files, ties broken towards the lower file
/// index. `scores[u - 1]` belongs to file `u`.
pub fn top_files(scores: &[f64], capacity: usize) -> BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let (sa, sb) = (nan_low(scores[a]), nan_low(scores[b]));
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    idx.into_iter().take(capacity).map(|i| i + 1).collect()
}

fn nan_low(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}
