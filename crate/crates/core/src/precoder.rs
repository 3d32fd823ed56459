//! Precoder types, analog hardware constraint sets, and their projections.
//!
//! The analog precoder `A` is an `M x K` matrix shared by every subcarrier. Which
//! values an entry may take depends on the hardware:
//!
//! * ideal phase shifters: the unit circle,
//! * finite-resolution phase shifters: `2^B` equally spaced unit phasors,
//! * vector modulators: an explicit finite codebook of phase/attenuation pairs,
//! * dynamic metasurface antennas: the Lorentzian circle `{(j + e^{jθ})/2}`.
//!
//! A boolean connectivity mask marks which antenna/RF-chain pairs are wired. Masked-out
//! entries are held at exactly zero.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

/// Antenna/RF-chain/user/subcarrier counts together with the power budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemDims {
    /// Transmit antennas.
    pub m: usize,
    /// RF chains.
    pub k: usize,
    /// Single-antenna users.
    pub n: usize,
    /// Subcarriers.
    pub f: usize,
    /// Transmit power per subcarrier (linear).
    pub power: f64,
    /// Per-user noise variance (linear).
    pub noise_var: f64,
}

impl SystemDims {
    pub fn new(m: usize, k: usize, n: usize, f: usize, power: f64, noise_var: f64) -> Result<Self> {
        let dims = Self { m, k, n, f, power, noise_var };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 || self.n == 0 || self.f == 0 {
            return Err(Error::Config(format!("all dimensions must be positive: {self:?}")));
        }
        if self.k > self.m {
            return Err(Error::Config(format!("K={} exceeds M={}", self.k, self.m)));
        }
        if self.n > self.m {
            return Err(Error::Config(format!("N={} exceeds M={}", self.n, self.m)));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!("power must be positive, got {}", self.power)));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::Config(format!("noise variance must be positive, got {}", self.noise_var)));
        }
        Ok(())
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power / self.noise_var).log10()
    }

    /// Same dimensions with the power set so that `P / noise_var` equals `snr_db`.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.power = self.noise_var * 10f64.powf(snr_db / 10.0);
        self
    }

    pub fn with_rf_chains(mut self, k: usize) -> Self {
        self.k = k;
        self
    }
}

/// Per-entry feasible set of the analog network.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    UnitModulus,
    QuantizedPhase { bits: u32 },
    VectorModulatorCodebook(Vec<Complex64>),
    LorentzianDma,
}

/// Largest supported phase resolution. Grids beyond this are indistinguishable from
/// the continuous circle at double precision anyway.
pub const MAX_PHASE_BITS: u32 = 24;

impl ConstraintKind {
    /// Short stable identifier, used in schedule files and reports.
    pub fn label(&self) -> String {
        match self {
            Self::UnitModulus => "unit_modulus".into(),
            Self::QuantizedPhase { bits } => format!("quantized_phase_{bits}"),
            Self::VectorModulatorCodebook(cb) => format!("codebook_{}", cb.len()),
            Self::LorentzianDma => "lorentzian".into(),
        }
    }

    /// Vector-modulator codebook with `phase_bits` phase levels times the given
    /// attenuation (amplitude) levels.
    pub fn vm_codebook(phase_bits: u32, amplitudes: &[f64]) -> Self {
        let n = 1usize << phase_bits;
        let mut cb = Vec::with_capacity(n * amplitudes.len());
        for &amp in amplitudes {
            for b in 0..n {
                cb.push(Complex64::from_polar(amp, 2.0 * PI * b as f64 / n as f64));
            }
        }
        Self::VectorModulatorCodebook(cb)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::QuantizedPhase { bits } if *bits == 0 || *bits > MAX_PHASE_BITS => Err(Error::Config(
                format!("phase resolution must be 1..={MAX_PHASE_BITS} bits, got {bits}"),
            )),
            Self::VectorModulatorCodebook(cb) if cb.is_empty() => {
                Err(Error::Config("vector-modulator codebook is empty".into()))
            }
            Self::VectorModulatorCodebook(cb) if cb.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) => {
                Err(Error::Config("codebook contains non-finite values".into()))
            }
            _ => Ok(()),
        }
    }

    /// Grid point `b` of a `bits`-bit phase shifter.
    pub fn phase_grid_point(bits: u32, b: usize) -> Complex64 {
        let n = 1usize << bits;
        let b = b % n;
        if (4 * b).is_multiple_of(n) {
            return match 4 * b / n {
                0 => Complex64::new(1.0, 0.0),
                1 => Complex64::new(0.0, 1.0),
                2 => Complex64::new(-1.0, 0.0),
                _ => Complex64::new(0.0, -1.0),
            };
        }
        Complex64::from_polar(1.0, 2.0 * PI * b as f64 / n as f64)
    }

    /// Euclidean nearest point of the feasible set to `w`.
    ///
    /// Ties go to the lowest index for the discrete sets; the degenerate points of the
    /// continuous sets (`w = 0` for the unit circle, `w = j/2` for the Lorentzian
    /// circle) map to the `θ = 0` point.
    pub fn project_entry(&self, w: Complex64) -> Complex64 {
        match self {
            Self::UnitModulus => {
                let r = w.norm();
                if r == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else if (r - 1.0).abs() <= SNAP_TOL {
                    // already on the circle up to rounding; keeps projection idempotent
                    w
                } else {
                    w / r
                }
            }
            Self::QuantizedPhase { bits } => {
                let b = nearest_phase_index(*bits, w);
                Self::phase_grid_point(*bits, b)
            }
            Self::VectorModulatorCodebook(cb) => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, c) in cb.iter().enumerate() {
                    let d = (w - c).norm_sqr();
                    if d < best_d {
                        best = i;
                        best_d = d;
                    }
                }
                cb[best]
            }
            Self::LorentzianDma => {
                let u = w - LORENTZ_CENTER;
                let r = u.norm();
                if r == 0.0 {
                    LORENTZ_CENTER + Complex64::new(0.5, 0.0)
                } else if (r - 0.5).abs() <= SNAP_TOL {
                    w
                } else {
                    LORENTZ_CENTER + u * (0.5 / r)
                }
            }
        }
    }

    /// Euclidean distance from `w` to the feasible set.
    pub fn distance(&self, w: Complex64) -> f64 {
        match self {
            Self::UnitModulus => (w.norm() - 1.0).abs(),
            Self::LorentzianDma => ((w - LORENTZ_CENTER).norm() - 0.5).abs(),
            _ => (w - self.project_entry(w)).norm(),
        }
    }
}

/// Points this close to a continuous circle are treated as lying on it.
const SNAP_TOL: f64 = 8.0 * f64::EPSILON;

/// Center of the Lorentzian circle; its radius is 1/2.
pub const LORENTZ_CENTER: Complex64 = Complex64::new(0.0, 0.5);

fn nearest_phase_index(bits: u32, w: Complex64) -> usize {
    let n = 1usize << bits;
    if w.re == 0.0 && w.im == 0.0 {
        return 0;
    }
    let t = w.im.atan2(w.re) * n as f64 / (2.0 * PI);
    let lo = t.floor();
    let frac = t - lo;
    let a = (lo as i64).rem_euclid(n as i64) as usize;
    let b = (lo as i64 + 1).rem_euclid(n as i64) as usize;
    if frac < 0.5 {
        a
    } else if frac > 0.5 {
        b
    } else {
        a.min(b)
    }
}

/// Network topology between RF chains and antennas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Every RF chain reaches every antenna.
    Fully,
    /// Each RF chain drives its own contiguous block of `M / K` antennas.
    Partially,
}

/// Boolean `M x K` connectivity mask.
pub type Mask = DMatrix<bool>;

pub fn connectivity_mask(m: usize, k: usize, topology: Topology) -> Result<Mask> {
    if m == 0 || k == 0 {
        return Err(Error::Config("mask dimensions must be positive".into()));
    }
    match topology {
        Topology::Fully => Ok(Mask::from_element(m, k, true)),
        Topology::Partially => {
            if !m.is_multiple_of(k) {
                return Err(Error::Config(format!(
                    "partially connected network needs K | M, got M={m}, K={k}"
                )));
            }
            let block = m / k;
            Ok(Mask::from_fn(m, k, |i, j| i / block == j))
        }
    }
}

/// Analog hardware description: per-entry feasible set plus connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub kind: ConstraintKind,
    pub mask: Mask,
}

impl ConstraintSet {
    pub fn new(kind: ConstraintKind, mask: Mask) -> Result<Self> {
        kind.validate()?;
        if let Some(row) = (0..mask.nrows()).find(|&i| mask.row(i).iter().all(|&b| !b)) {
            return Err(Error::Config(format!("antenna {row} is not connected to any RF chain")));
        }
        Ok(Self { kind, mask })
    }

    /// Fully connected network of `kind` elements.
    pub fn fully(kind: ConstraintKind, m: usize, k: usize) -> Result<Self> {
        Self::new(kind, connectivity_mask(m, k, Topology::Fully)?)
    }

    pub fn is_fully_connected(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    /// Largest constraint violation of `a`: distance of wired entries to the feasible
    /// set, and magnitude of unwired entries.
    pub fn violation(&self, a: &CMat) -> f64 {
        a.iter()
            .zip(self.mask.iter())
            .map(|(&w, &on)| if on { self.kind.distance(w) } else { w.norm() })
            .fold(0.0, f64::max)
    }
}

/// Hardware-constrained `M x K` analog precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogPrecoder {
    pub a: CMat,
    pub constraint: ConstraintSet,
}

impl AnalogPrecoder {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn k(&self) -> usize {
        self.a.ncols()
    }

    pub fn violation(&self) -> f64 {
        self.constraint.violation(&self.a)
    }
}

/// Per-subcarrier `K x N` digital precoders.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalPrecoder {
    pub d: Vec<CMat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridPrecoder {
    pub analog: AnalogPrecoder,
    pub digital: DigitalPrecoder,
}

impl HybridPrecoder {
    pub fn num_subcarriers(&self) -> usize {
        self.digital.d.len()
    }

    /// Effective precoder `A D_f` of subcarrier `f`.
    pub fn compose(&self, f: usize) -> Result<CMat> {
        let d = self.digital.d.get(f).ok_or(Error::OutOfRange { index: f, len: self.digital.d.len() })?;
        Ok(&self.analog.a * d)
    }

    /// Effective precoders of every subcarrier.
    pub fn effective(&self) -> Vec<CMat> {
        self.digital.d.iter().map(|d| &self.analog.a * d).collect()
    }

    /// Largest relative deviation of `||A D_f||_F^2` from `power` over subcarriers.
    pub fn power_violation(&self, power: f64) -> f64 {
        self.digital
            .d
            .iter()
            .map(|d| (linalg::frob_sq(&(&self.analog.a * d)) - power).abs() / power)
            .fold(0.0, f64::max)
    }
}

/// Entrywise nearest point of `w_raw` in the constraint set; unwired entries become 0.
pub fn project_analog(w_raw: &CMat, c: &ConstraintSet) -> Result<AnalogPrecoder> {
    if w_raw.shape() != c.mask.shape() {
        return Err(Error::Shape(format!(
            "analog matrix is {:?} but connectivity mask is {:?}",
            w_raw.shape(),
            c.mask.shape()
        )));
    }
    if let ConstraintKind::VectorModulatorCodebook(cb) = &c.kind {
        if cb.is_empty() {
            return Err(Error::Config("vector-modulator codebook is empty".into()));
        }
    }
    if !linalg::all_finite(w_raw) {
        return Err(Error::NonFinite("analog pre-projection matrix".into()));
    }
    let a = CMat::from_iterator(
        w_raw.nrows(),
        w_raw.ncols(),
        w_raw
            .iter()
            .zip(c.mask.iter())
            .map(|(&w, &on)| if on { c.kind.project_entry(w) } else { Complex64::new(0.0, 0.0) }),
    );
    Ok(AnalogPrecoder { a, constraint: c.clone() })
}

/// Rescales every `D_f` so that `||A D_f||_F^2 = power`.
pub fn project_power(a: &AnalogPrecoder, d: &DigitalPrecoder, power: f64) -> Result<DigitalPrecoder> {
    let mut out = Vec::with_capacity(d.d.len());
    for (f, df) in d.d.iter().enumerate() {
        let norm = linalg::frob(&(&a.a * df));
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate(format!("effective precoder at subcarrier {f} has norm {norm}")));
        }
        out.push(df * Complex64::new(power.sqrt() / norm, 0.0));
    }
    Ok(DigitalPrecoder { d: out })
}
