//! Clustered geometric wideband channel model for a multi-user mmWave downlink.
//!
//! Each user sees `n_clusters` scattering clusters with `rays_per_cluster` rays each.
//! Cluster `c` of user `u` has a mean angle of departure `φ_{u,c} ~ U(-π/2, π/2)` and a
//! delay `τ_{u,c} ~ Exp(delay_spread)`; its rays deviate in angle by `δ ~ N(0, angle_spread²)`
//! and carry i.i.d. `CN(0, 1)` gains. On subcarrier `f` the user's row channel is
//!
//! ```text
//! h_{u,f} = (n_clusters · rays_per_cluster)^{-1/2} Σ_{c,p} α_{u,c,p} e^{-j2π τ_{u,c} f_off(f)} a(φ_{u,c} + δ_{u,c,p})^H
//! ```
//!
//! with `a` the half-wavelength ULA steering vector and `f_off(f)` the baseband offset of
//! bin `f`, spread uniformly over `[-B/2, B/2]`. Entries then have unit average power, so
//! `E ||h_{u,f}||² = M`.

mod io;

pub use io::{dataset_fingerprint, load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModelParams {
    /// Transmit antennas.
    pub m: usize,
    /// Users.
    pub n: usize,
    /// Subcarriers.
    pub f: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub n_clusters: usize,
    pub rays_per_cluster: usize,
    pub angle_spread_rad: f64,
    pub delay_spread_s: f64,
}

impl Default for ChannelModelParams {
    fn default() -> Self {
        Self {
            m: 12,
            n: 4,
            f: 16,
            carrier_hz: 30e9,
            bandwidth_hz: 100e6,
            n_clusters: 3,
            rays_per_cluster: 5,
            angle_spread_rad: 0.1,
            delay_spread_s: 30e-9,
        }
    }
}

impl ChannelModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.f == 0 {
            return Err(Error::Config("channel dimensions must be positive".into()));
        }
        if self.n_clusters == 0 || self.rays_per_cluster == 0 {
            return Err(Error::Config("need at least one cluster and one ray per cluster".into()));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(Error::Config(format!("carrier must be positive, got {}", self.carrier_hz)));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {}", self.bandwidth_hz)));
        }
        if !(self.angle_spread_rad >= 0.0 && self.angle_spread_rad.is_finite()) {
            return Err(Error::Config(format!("angle spread must be >= 0, got {}", self.angle_spread_rad)));
        }
        if !(self.delay_spread_s >= 0.0 && self.delay_spread_s.is_finite()) {
            return Err(Error::Config(format!("delay spread must be >= 0, got {}", self.delay_spread_s)));
        }
        Ok(())
    }

    /// Baseband frequency offset of subcarrier `f`.
    pub fn subcarrier_offset_hz(&self, f: usize) -> f64 {
        if self.f == 1 {
            0.0
        } else {
            -self.bandwidth_hz / 2.0 + self.bandwidth_hz * f as f64 / (self.f - 1) as f64
        }
    }
}

/// Per-subcarrier `N x M` channel matrices; row `u` is user `u`'s channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<CMat>,
}

impl ChannelRealization {
    pub fn new(h: Vec<CMat>) -> Result<Self> {
        let first = h.first().ok_or_else(|| Error::Shape("channel has no subcarriers".into()))?.shape();
        if h.iter().any(|m| m.shape() != first) {
            return Err(Error::Shape("subcarrier channels differ in shape".into()));
        }
        if !h.iter().all(linalg::all_finite) {
            return Err(Error::NonFinite("channel matrix".into()));
        }
        Ok(Self { h })
    }

    pub fn num_users(&self) -> usize {
        self.h[0].nrows()
    }

    pub fn num_antennas(&self) -> usize {
        self.h[0].ncols()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.h.len()
    }

    /// Stable content hash, used to seed per-channel randomness.
    pub fn content_hash(&self) -> u64 {
        seed::hash_matrices(&self.h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    pub params: ChannelModelParams,
    pub seed: u64,
    pub realizations: Vec<ChannelRealization>,
}

impl ChannelDataset {
    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    /// SHA-256 of the dataset's serialized form.
    pub fn fingerprint(&self) -> String {
        dataset_fingerprint(self)
    }
}

/// Half-wavelength ULA response `a_m = exp(jπ m sin φ)`, unnormalized.
pub fn steering_vector(m: usize, phi: f64) -> Vec<Complex64> {
    let s = phi.sin();
    (0..m).map(|i| Complex64::from_polar(1.0, PI * i as f64 * s)).collect()
}

/// One ray of a cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub gain: Complex64,
    /// Angular offset from the cluster's mean angle (radians).
    pub offset_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub angle_rad: f64,
    pub delay_s: f64,
    pub rays: Vec<Ray>,
}

/// Explicit multipath description of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPaths {
    pub clusters: Vec<Cluster>,
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub(crate) fn complex_gaussian<R: Rng>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Draws the multipath structure of every user.
pub fn draw_paths(params: &ChannelModelParams, rng_seed: u64) -> Vec<UserPaths> {
    let mut rng = seed::rng(rng_seed);
    (0..params.n)
        .map(|_| {
            let clusters = (0..params.n_clusters)
                .map(|_| {
                    let angle_rad = rng.random_range(-PI / 2.0..PI / 2.0);
                    let u: f64 = rng.random();
                    // 1 - u lies in (0, 1], keeping the log finite.
                    let delay_s = -params.delay_spread_s * (1.0 - u).ln();
                    let rays = (0..params.rays_per_cluster)
                        .map(|_| {
                            let gain = complex_gaussian(&mut rng, 1.0);
                            let z: f64 = rng.sample(StandardNormal);
                            Ray { gain, offset_rad: params.angle_spread_rad * z }
                        })
                        .collect();
                    Cluster { angle_rad, delay_s, rays }
                })
                .collect();
            UserPaths { clusters }
        })
        .collect()
}

/// Builds the per-subcarrier channel matrices from explicit paths.
pub fn synthesize(params: &ChannelModelParams, users: &[UserPaths]) -> Result<ChannelRealization> {
    if users.len() != params.n {
        return Err(Error::Shape(format!("{} user path sets for N={}", users.len(), params.n)));
    }
    let mut h = vec![linalg::zeros(params.n, params.m); params.f];
    for (u, paths) in users.iter().enumerate() {
        let n_rays: usize = paths.clusters.iter().map(|c| c.rays.len()).sum();
        if n_rays == 0 {
            return Err(Error::Config(format!("user {u} has no propagation paths")));
        }
        let scale = 1.0 / (n_rays as f64).sqrt();
        for cluster in &paths.clusters {
            for ray in &cluster.rays {
                let a = steering_vector(params.m, cluster.angle_rad + ray.offset_rad);
                for (f, hf) in h.iter_mut().enumerate() {
                    let phase = -2.0 * PI * cluster.delay_s * params.subcarrier_offset_hz(f);
                    let g = ray.gain * Complex64::from_polar(scale, phase);
                    for (m, am) in a.iter().enumerate() {
                        hf[(u, m)] += g * am.conj();
                    }
                }
            }
        }
    }
    ChannelRealization::new(h)
}

pub fn generate_channel(params: &ChannelModelParams, rng_seed: u64) -> Result<ChannelRealization> {
    params.validate()?;
    synthesize(params, &draw_paths(params, rng_seed))
}

/// Generates `count` realizations; realization `i` is seeded by `derive(seed, i)`.
pub fn generate_dataset(params: &ChannelModelParams, count: usize, seed: u64) -> Result<ChannelDataset> {
    params.validate()?;
    if count == 0 {
        return Err(Error::Config("dataset count must be at least 1".into()));
    }
    let realizations = (0..count as u64)
        .into_par_iter()
        .map(|i| generate_channel(params, seed::derive(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelDataset { params: *params, seed, realizations })
}

/// Adds i.i.d. `CN(0, error_var)` estimation noise to every channel entry.
pub fn corrupt_csi(h: &ChannelRealization, error_var: f64, rng_seed: u64) -> Result<ChannelRealization> {
    if !(error_var >= 0.0) || !error_var.is_finite() {
        return Err(Error::Config(format!("CSI error variance must be >= 0, got {error_var}")));
    }
    if error_var == 0.0 {
        return Ok(h.clone());
    }
    let mut rng = seed::rng(rng_seed);
    let out = h
        .h
        .iter()
        .map(|hf| hf.map(|z| z + complex_gaussian(&mut rng, error_var)))
        .collect();
    Ok(ChannelRealization { h: out })
}
