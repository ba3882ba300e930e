//! Coincidence statistics: expected and sampled counts, joint spectral
//! intensity, Schmidt bound, background subtraction and fringe visibility.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::lattice::BiphotonState;
use crate::{Error, Result};

/// Detector and source parameters of a coincidence measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub eta_signal: f64,
    pub eta_idler: f64,
    /// Generated pairs per second.
    pub pair_flux_hz: f64,
    pub integration_time_s: f64,
    /// Accidental coincidences per second for every channel pair.
    pub accidental_rate_hz: f64,
    pub rng_seed: u64,
}

impl Default for DetectionConfig {
    /// Unit efficiencies, one pair per second for one second, no accidentals.
    fn default() -> Self {
        Self {
            eta_signal: 1.0,
            eta_idler: 1.0,
            pair_flux_hz: 1.0,
            integration_time_s: 1.0,
            accidental_rate_hz: 0.0,
            rng_seed: 0,
        }
    }
}

impl DetectionConfig {
    /// Lists every violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, eta) in [("eta_signal", self.eta_signal), ("eta_idler", self.eta_idler)] {
            if !(eta > 0.0 && eta <= 1.0) {
                v.push(format!("{name} must lie in (0, 1], got {eta}"));
            }
        }
        for (name, x) in [
            ("pair_flux_hz", self.pair_flux_hz),
            ("integration_time_s", self.integration_time_s),
            ("accidental_rate_hz", self.accidental_rate_hz),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                v.push(format!("{name} must be finite and non-negative, got {x}"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Accidental coincidences per channel pair over the integration window.
    pub fn accidental_floor(&self) -> f64 {
        self.accidental_rate_hz * self.integration_time_s
    }

    /// Detected true coincidences per unit joint probability.
    pub fn pair_scale(&self) -> f64 {
        self.pair_flux_hz * self.integration_time_s * self.eta_signal * self.eta_idler
    }
}

/// `|c(m, n)|²` before detector efficiency.
pub fn coincidence_probability(state: &BiphotonState, signal_bin: i64, idler_bin: i64) -> Result<f64> {
    state.lattice().check(signal_bin)?;
    state.lattice().check(idler_bin)?;
    Ok(state.amplitude(signal_bin, idler_bin).norm_sqr())
}

/// Mean coincidences: true pairs plus the accidental floor.
pub fn expected_counts(state: &BiphotonState, signal_bin: i64, idler_bin: i64, cfg: &DetectionConfig) -> Result<f64> {
    Ok(counts_for_probability(coincidence_probability(state, signal_bin, idler_bin)?, cfg))
}

/// Mean coincidences for a known joint probability.
pub fn counts_for_probability(probability: f64, cfg: &DetectionConfig) -> f64 {
    cfg.pair_scale() * probability + cfg.accidental_floor()
}

/// Seeded Poisson shot-noise source. One sampler per table build; the
/// sequence depends only on the seed and the order of draws.
#[derive(Debug, Clone)]
pub struct CountSampler {
    rng: ChaCha8Rng,
}

impl CountSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_config(cfg: &DetectionConfig) -> Self {
        Self::new(cfg.rng_seed)
    }

    /// Poisson draw with mean `expected`.
    pub fn sample(&mut self, expected: f64) -> Result<u64> {
        if !(expected.is_finite() && expected >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "expected counts must be finite and non-negative, got {expected}"
            )));
        }
        if expected == 0.0 {
            return Ok(0);
        }
        let dist = Poisson::new(expected).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(dist.sample(&mut self.rng) as u64)
    }
}

/// Detector channel: a lattice index or a named projection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Bin(i64),
    Named(String),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Bin(j) => write!(f, "{j}"),
            Channel::Named(s) => f.write_str(s),
        }
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::InvalidInput("empty channel label".into()));
        }
        if let Ok(j) = s.parse::<i64>() {
            return Ok(Channel::Bin(j));
        }
        if s.contains([',', '\n', '"']) {
            return Err(Error::InvalidInput(format!("channel label {s:?} contains a delimiter")));
        }
        Ok(Channel::Named(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceRecord {
    pub signal: Channel,
    pub idler: Channel,
    pub counts: f64,
    pub accidentals: f64,
    /// Set when background subtraction hit the zero floor.
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceTable {
    pub integration_time_s: f64,
    pub records: Vec<CoincidenceRecord>,
}

impl CoincidenceTable {
    pub fn new(integration_time_s: f64) -> Self {
        Self {
            integration_time_s,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, signal: Channel, idler: Channel, counts: f64, accidentals: f64) -> Result<()> {
        if !(counts.is_finite() && counts >= 0.0) {
            return Err(Error::InvalidInput(format!("negative or non-finite count {counts}")));
        }
        if !(accidentals.is_finite() && accidentals >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "negative or non-finite accidentals estimate {accidentals}"
            )));
        }
        self.records.push(CoincidenceRecord {
            signal,
            idler,
            counts,
            accidentals,
            clipped: false,
        });
        Ok(())
    }

    /// Removes the accidental estimate from every record, flooring at zero.
    pub fn subtract_background(&self) -> CoincidenceTable {
        let records = self
            .records
            .iter()
            .map(|r| {
                let diff = r.counts - r.accidentals;
                CoincidenceRecord {
                    counts: diff.max(0.0),
                    clipped: r.clipped || diff < 0.0,
                    ..r.clone()
                }
            })
            .collect();
        CoincidenceTable {
            integration_time_s: self.integration_time_s,
            records,
        }
    }
}

/// Expected coincidence counts over a signal × idler grid of bins.
pub fn compute_jsi(
    state: &BiphotonState,
    signal_bins: &[i64],
    idler_bins: &[i64],
    cfg: &DetectionConfig,
) -> Result<DMatrix<f64>> {
    if signal_bins.is_empty() || idler_bins.is_empty() {
        return Err(Error::InvalidInput("JSI needs at least one signal and one idler bin".into()));
    }
    let mut jsi = DMatrix::zeros(signal_bins.len(), idler_bins.len());
    for (r, &m) in signal_bins.iter().enumerate() {
        for (c, &n) in idler_bins.iter().enumerate() {
            jsi[(r, c)] = expected_counts(state, m, n, cfg)?;
        }
    }
    Ok(jsi)
}

/// Lower bound on the Schmidt number of a joint spectral intensity.
///
/// Treats the entrywise square root of the JSI as a flat-phase joint spectral
/// amplitude and returns `1 / Σσ̃⁴` over its normalized singular values.
pub fn schmidt_bound(jsi: &DMatrix<f64>) -> Result<f64> {
    if jsi.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("JSI entries must be finite and non-negative".into()));
    }
    let total: f64 = jsi.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidInput("JSI is identically zero".into()));
    }
    let amplitude = jsi.map(|v| (v / total).sqrt());
    let sv = amplitude.singular_values();
    let p: Vec<f64> = sv.iter().map(|s| s * s).collect();
    let norm: f64 = p.iter().sum();
    let purity: f64 = p.iter().map(|x| (x / norm) * (x / norm)).sum();
    Ok(purity.recip())
}

/// `(C_max − C_min) / (C_max + C_min)`.
pub fn visibility(c_max: f64, c_min: f64) -> Result<f64> {
    let sum = c_max + c_min;
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::InvalidInput(format!(
            "visibility undefined for C_max = {c_max}, C_min = {c_min}"
        )));
    }
    Ok((c_max - c_min) / sum)
}

/// Expected counts on one channel pair while a phase is swept.
pub fn fringe_scan<F>(
    state_at: F,
    phases: &[f64],
    channels: (i64, i64),
    cfg: &DetectionConfig,
) -> Result<Vec<(f64, f64)>>
where
    F: Fn(f64) -> Result<BiphotonState>,
{
    if phases.is_empty() {
        return Err(Error::InvalidInput("fringe scan needs at least one phase".into()));
    }
    phases
        .iter()
        .map(|&phi| Ok((phi, expected_counts(&state_at(phi)?, channels.0, channels.1, cfg)?)))
        .collect()
}

/// Least-squares fit of `A·(1 + V·cos(φ + φ₀))/2 + B` with `B` held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    pub amplitude: f64,
    pub visibility: f64,
    /// φ₀, reduced to (−π, π].
    pub phase_offset: f64,
    pub floor: f64,
}

/// Fits a sinusoidal fringe.
///
/// The model is linear in `(A/2, A·V·cos φ₀/2, −A·V·sin φ₀/2)` once `B` is
/// fixed, so the nonlinear least-squares optimum is the linear one.
pub fn fit_fringe(points: &[(f64, f64)], floor: f64) -> Result<FringeFit> {
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for &(phi, y) in points {
        let basis = Vector3::new(1.0, phi.cos(), phi.sin());
        normal += basis * basis.transpose();
        rhs += basis * (y - floor);
    }
    let coef = normal
        .lu()
        .solve(&rhs)
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::InvalidInput("fringe fit needs at least three distinct phases".into()))?;
    let amplitude = 2.0 * coef[0];
    if amplitude <= 0.0 {
        return Err(Error::InvalidInput("fringe has no positive mean above the floor".into()));
    }
    let swing = coef[1].hypot(coef[2]);
    Ok(FringeFit {
        amplitude,
        visibility: 2.0 * swing / amplitude,
        phase_offset: reduce_phase((-coef[2]).atan2(coef[1])),
        floor,
    })
}

/// Reduces an angle to (−π, π].
pub fn reduce_phase(phi: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let r = phi.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}
