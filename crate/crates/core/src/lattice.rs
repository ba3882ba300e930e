//! Frequency lattice and two-photon states on it.
//!
//! All frequencies are measured as integer steps of `fsr / subdivision` away
//! from the pump. Comb pair `k` puts its signal photon at `+k·s` and its idler
//! at `-k·s`, where `s` is the subdivision.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pump-symmetric grid of frequency bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyLattice {
    pump_thz: f64,
    fsr_ghz: f64,
    subdivision: u32,
    half_range: i64,
}

impl FrequencyLattice {
    /// Lattice spanning indices `-half_range..=half_range`.
    pub fn new(pump_thz: f64, fsr_ghz: f64, subdivision: u32, half_range: i64) -> Result<Self> {
        if !(fsr_ghz.is_finite() && fsr_ghz > 0.0) {
            return Err(Error::InvalidLattice(format!("fsr must be positive, got {fsr_ghz}")));
        }
        if !(pump_thz.is_finite() && pump_thz > 0.0) {
            return Err(Error::InvalidLattice(format!(
                "pump frequency must be positive, got {pump_thz}"
            )));
        }
        if subdivision == 0 {
            return Err(Error::InvalidLattice("subdivision must be at least 1".into()));
        }
        if half_range < i64::from(subdivision) {
            return Err(Error::InvalidLattice(format!(
                "half range {half_range} cannot hold one comb pair at subdivision {subdivision}"
            )));
        }
        Ok(Self {
            pump_thz,
            fsr_ghz,
            subdivision,
            half_range,
        })
    }

    /// 193.4 THz pump, 49.6 GHz FSR, half-FSR steps, 64 comb pairs.
    pub fn standard() -> Self {
        Self::new(193.4, 49.6, 2, 128).expect("valid default lattice")
    }

    pub fn pump_thz(&self) -> f64 {
        self.pump_thz
    }

    pub fn fsr_ghz(&self) -> f64 {
        self.fsr_ghz
    }

    pub fn subdivision(&self) -> u32 {
        self.subdivision
    }

    pub fn half_range(&self) -> i64 {
        self.half_range
    }

    /// Spacing between adjacent lattice indices.
    pub fn step_ghz(&self) -> f64 {
        self.fsr_ghz / f64::from(self.subdivision)
    }

    /// Frequency offset of index `j` from the pump.
    pub fn offset_ghz(&self, index: i64) -> f64 {
        index as f64 * self.step_ghz()
    }

    pub fn contains(&self, index: i64) -> bool {
        index.abs() <= self.half_range
    }

    pub fn check(&self, index: i64) -> Result<i64> {
        if self.contains(index) {
            Ok(index)
        } else {
            Err(Error::OutOfRange {
                index,
                half_range: self.half_range,
            })
        }
    }

    /// Number of comb pairs whose lines fit on the lattice.
    pub fn max_comb_pairs(&self) -> u32 {
        (self.half_range / i64::from(self.subdivision)) as u32
    }

    pub fn signal_index(&self, pair: u32) -> Result<i64> {
        self.check(i64::from(pair) * i64::from(self.subdivision))
    }

    pub fn idler_index(&self, pair: u32) -> Result<i64> {
        self.check(-i64::from(pair) * i64::from(self.subdivision))
    }

    /// Comb pair whose signal or idler line sits at `index`, if any.
    pub fn comb_pair_of(&self, index: i64) -> Option<u32> {
        let s = i64::from(self.subdivision);
        (index != 0 && self.contains(index) && index % s == 0).then(|| (index.abs() / s) as u32)
    }
}

/// Spectral line profile of a single frequency bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Lineshape {
    Delta,
    Lorentzian { fwhm_mhz: f64 },
}

impl Lineshape {
    pub fn lorentzian(fwhm_mhz: f64) -> Result<Self> {
        if !(fwhm_mhz.is_finite() && fwhm_mhz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lorentzian linewidth must be positive, got {fwhm_mhz}"
            )));
        }
        Ok(Lineshape::Lorentzian { fwhm_mhz })
    }

    /// Resonance linewidth `pump / Q`.
    pub fn from_quality_factor(pump_thz: f64, q: f64) -> Result<Self> {
        Self::lorentzian(pump_thz * 1e6 / q)
    }
}

/// Joint amplitude over (signal index, idler index) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BiphotonState {
    lattice: FrequencyLattice,
    amplitudes: BTreeMap<(i64, i64), Complex64>,
}

impl BiphotonState {
    /// Comb state with `alphas[i]` on pair `i + 1`, normalized to unit norm.
    pub fn comb(lattice: FrequencyLattice, alphas: &[Complex64]) -> Result<Self> {
        let pairs: Vec<(u32, Complex64)> = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| (i as u32 + 1, a))
            .collect();
        Self::comb_pairs(lattice, &pairs)
    }

    /// Comb state with explicit pair numbers, normalized to unit norm.
    pub fn comb_pairs(lattice: FrequencyLattice, pairs: &[(u32, Complex64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidState("no comb amplitudes given".into()));
        }
        let mut amplitudes = BTreeMap::new();
        for &(pair, alpha) in pairs {
            if pair == 0 {
                return Err(Error::InvalidState("comb pairs are numbered from 1".into()));
            }
            if !(alpha.re.is_finite() && alpha.im.is_finite()) {
                return Err(Error::InvalidState(format!("non-finite amplitude on pair {pair}")));
            }
            let key = (lattice.signal_index(pair)?, lattice.idler_index(pair)?);
            if amplitudes.insert(key, alpha).is_some() {
                return Err(Error::InvalidState(format!("pair {pair} listed twice")));
            }
        }
        let norm: f64 = amplitudes.values().map(|c| c.norm_sqr()).sum();
        if norm == 0.0 {
            return Err(Error::InvalidState("all comb amplitudes are zero".into()));
        }
        let scale = norm.sqrt().recip();
        amplitudes.retain(|_, c| *c != Complex64::new(0.0, 0.0));
        for c in amplitudes.values_mut() {
            *c *= scale;
        }
        Ok(Self {
            lattice,
            amplitudes,
        })
    }

    /// State with the given raw amplitudes; no normalization is applied.
    pub fn from_amplitudes(
        lattice: FrequencyLattice,
        entries: impl IntoIterator<Item = ((i64, i64), Complex64)>,
    ) -> Result<Self> {
        let mut amplitudes = BTreeMap::new();
        for ((m, n), c) in entries {
            lattice.check(m)?;
            lattice.check(n)?;
            if c != Complex64::new(0.0, 0.0) {
                *amplitudes.entry((m, n)).or_insert(Complex64::new(0.0, 0.0)) += c;
            }
        }
        Ok(Self {
            lattice,
            amplitudes,
        })
    }

    pub fn lattice(&self) -> &FrequencyLattice {
        &self.lattice
    }

    pub fn amplitude(&self, signal: i64, idler: i64) -> Complex64 {
        self.amplitudes
            .get(&(signal, idler))
            .copied()
            .unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((i64, i64), Complex64)> + '_ {
        self.amplitudes.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Σ|c|²: one for a freshly generated state, the survival probability after
    /// lossy elements.
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|c| c.norm_sqr()).sum()
    }

    /// Amplitude block over the requested bins, rows indexed by signal bins.
    pub fn reduce_to_subspace(&self, signal_bins: &[i64], idler_bins: &[i64]) -> Result<DMatrix<Complex64>> {
        for &j in signal_bins.iter().chain(idler_bins) {
            self.lattice.check(j)?;
        }
        Ok(DMatrix::from_fn(signal_bins.len(), idler_bins.len(), |r, c| {
            self.amplitude(signal_bins[r], idler_bins[c])
        }))
    }

    /// Overwrites the amplitudes on the selected block with `block`.
    pub fn embed_block(
        &self,
        signal_bins: &[i64],
        idler_bins: &[i64],
        block: &DMatrix<Complex64>,
    ) -> Result<Self> {
        if block.nrows() != signal_bins.len() {
            return Err(Error::DimensionMismatch {
                expected: signal_bins.len(),
                actual: block.nrows(),
            });
        }
        if block.ncols() != idler_bins.len() {
            return Err(Error::DimensionMismatch {
                expected: idler_bins.len(),
                actual: block.ncols(),
            });
        }
        let mut out = self.clone();
        for (r, &m) in signal_bins.iter().enumerate() {
            for (c, &n) in idler_bins.iter().enumerate() {
                self.lattice.check(m)?;
                self.lattice.check(n)?;
                let v = block[(r, c)];
                if v == Complex64::new(0.0, 0.0) {
                    out.amplitudes.remove(&(m, n));
                } else {
                    out.amplitudes.insert((m, n), v);
                }
            }
        }
        Ok(out)
    }

    /// Same lattice, new amplitude map. Zero entries are dropped.
    pub(crate) fn with_amplitudes(&self, amplitudes: BTreeMap<(i64, i64), Complex64>) -> Self {
        let mut amplitudes = amplitudes;
        amplitudes.retain(|_, c| *c != Complex64::new(0.0, 0.0));
        Self {
            lattice: self.lattice,
            amplitudes,
        }
    }
}
