//! Spectral masks, the electro-optic phase modulator, dispersion, and the
//! lineshape overlap behind the RF-detuning dip.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bessel;
use crate::lattice::{BiphotonState, FrequencyLattice, Lineshape};
use crate::{Error, Result};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Residual sideband power allowed outside the modulator truncation, per
/// photon. Kept well under 1e-9 so the two-photon norm deficit stays there too.
pub const TRUNCATION_TOLERANCE: f64 = 1e-12;

/// Transmission assumed for indices a mask does not list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Unlisted indices are blocked (`t = 0`).
    Blocking,
    /// Unlisted indices pass unchanged (`t = 1`).
    PhaseOnly,
}

/// Per-index complex transmission of a pulse shaper.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMask {
    mode: MaskMode,
    entries: BTreeMap<i64, Complex64>,
}

impl SpectralMask {
    pub fn new(mode: MaskMode) -> Self {
        Self {
            mode,
            entries: BTreeMap::new(),
        }
    }

    pub fn identity() -> Self {
        Self::new(MaskMode::PhaseOnly)
    }

    /// Sets `t(index)`. Passive element: `|t| <= 1`.
    pub fn set(&mut self, index: i64, transmission: Complex64) -> Result<()> {
        if !(transmission.norm() <= 1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "mask transmission {transmission} at index {index} exceeds unity"
            )));
        }
        self.entries.insert(index, transmission);
        Ok(())
    }

    pub fn with(mut self, index: i64, transmission: Complex64) -> Result<Self> {
        self.set(index, transmission)?;
        Ok(self)
    }

    /// Adds phase `phase` at `index` on top of whatever transmission is there.
    pub fn add_phase(&mut self, index: i64, phase: f64) {
        let t = self.transmission(index) * Complex64::from_polar(1.0, phase);
        self.entries.insert(index, t);
    }

    /// Blocking mask that passes the listed comb pairs (signal and idler lines).
    pub fn select_pairs(lattice: &FrequencyLattice, pairs: &[u32]) -> Result<Self> {
        let mut mask = Self::new(MaskMode::Blocking);
        for &k in pairs {
            mask.set(lattice.signal_index(k)?, Complex64::new(1.0, 0.0))?;
            mask.set(lattice.idler_index(k)?, Complex64::new(1.0, 0.0))?;
        }
        Ok(mask)
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn transmission(&self, index: i64) -> Complex64 {
        self.entries.get(&index).copied().unwrap_or(match self.mode {
            MaskMode::Blocking => Complex64::new(0.0, 0.0),
            MaskMode::PhaseOnly => Complex64::new(1.0, 0.0),
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    /// Mask equal to traversing `self` then `other`.
    pub fn compose(&self, other: &SpectralMask) -> SpectralMask {
        let mode = match (self.mode, other.mode) {
            (MaskMode::PhaseOnly, MaskMode::PhaseOnly) => MaskMode::PhaseOnly,
            _ => MaskMode::Blocking,
        };
        let mut entries = BTreeMap::new();
        for &j in self.entries.keys().chain(other.entries.keys()) {
            entries.insert(j, self.transmission(j) * other.transmission(j));
        }
        SpectralMask { mode, entries }
    }
}

/// Applies one shared shaper to both photons: `c'(m, n) = t(m)·t(n)·c(m, n)`.
pub fn apply_mask(state: &BiphotonState, mask: &SpectralMask) -> BiphotonState {
    let amplitudes = state
        .iter()
        .map(|((m, n), c)| ((m, n), mask.transmission(m) * mask.transmission(n) * c))
        .collect();
    state.with_amplitudes(amplitudes)
}

/// Single-tone drive of the phase modulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulatorDrive {
    rf_steps: u32,
    mod_index: f64,
    rf_phase: f64,
    truncation_order: u32,
}

impl ModulatorDrive {
    /// Drive whose RF frequency equals `rf_steps` lattice steps. The sideband
    /// truncation is chosen so the discarded power is below
    /// [`TRUNCATION_TOLERANCE`].
    pub fn new(rf_steps: u32, mod_index: f64, rf_phase: f64) -> Result<Self> {
        Self::check_index(mod_index)?;
        let order = bessel::truncation_order(mod_index, TRUNCATION_TOLERANCE) as u32;
        Self::with_truncation(rf_steps, mod_index, rf_phase, order)
    }

    pub fn with_truncation(rf_steps: u32, mod_index: f64, rf_phase: f64, truncation_order: u32) -> Result<Self> {
        if rf_steps == 0 {
            return Err(Error::InvalidInput("RF frequency must be at least one lattice step".into()));
        }
        Self::check_index(mod_index)?;
        if !rf_phase.is_finite() {
            return Err(Error::InvalidInput("RF phase must be finite".into()));
        }
        let needed = bessel::truncation_order(mod_index, TRUNCATION_TOLERANCE) as u32;
        if truncation_order < needed {
            return Err(Error::InvalidInput(format!(
                "truncation order {truncation_order} drops more than {TRUNCATION_TOLERANCE:e} of the power at μ={mod_index}; need {needed}"
            )));
        }
        if truncation_order > bessel::MAX_ORDER as u32 {
            return Err(Error::Domain(format!("truncation order {truncation_order} above {}", bessel::MAX_ORDER)));
        }
        Ok(Self {
            rf_steps,
            mod_index,
            rf_phase,
            truncation_order,
        })
    }

    fn check_index(mod_index: f64) -> Result<()> {
        if !(0.0..=bessel::MAX_ARGUMENT).contains(&mod_index) {
            return Err(Error::Domain(format!(
                "modulation index {mod_index} outside [0, {}]",
                bessel::MAX_ARGUMENT
            )));
        }
        Ok(())
    }

    pub fn rf_steps(&self) -> u32 {
        self.rf_steps
    }

    pub fn mod_index(&self) -> f64 {
        self.mod_index
    }

    pub fn rf_phase(&self) -> f64 {
        self.rf_phase
    }

    pub fn truncation_order(&self) -> u32 {
        self.truncation_order
    }

    /// `(n, J_n(μ)·e^{inθ})` for `|n| <= truncation_order`.
    pub fn sideband_weights(&self) -> Vec<(i64, Complex64)> {
        let n_max = self.truncation_order as usize;
        let j = bessel::orders(n_max, self.mod_index);
        (-(n_max as i64)..=n_max as i64)
            .map(|n| {
                let mag = j[n.unsigned_abs() as usize];
                let signed = if n < 0 && n % 2 != 0 { -mag } else { mag };
                (n, Complex64::from_polar(signed, n as f64 * self.rf_phase))
            })
            .collect()
    }
}

/// Both photons pass the same modulator: each index `j` spreads into
/// `Σ_n J_n(μ)·e^{inθ}·|j + n·p⟩`. Amplitude pushed outside the lattice is
/// discarded and shows up as a norm deficit.
pub fn apply_modulator(state: &BiphotonState, drive: &ModulatorDrive) -> BiphotonState {
    let lattice = *state.lattice();
    let weights = drive.sideband_weights();
    let p = i64::from(drive.rf_steps);
    let mut out: BTreeMap<(i64, i64), Complex64> = BTreeMap::new();
    for ((m, n), c) in state.iter() {
        for &(a, wa) in &weights {
            let ms = m + a * p;
            if !lattice.contains(ms) {
                continue;
            }
            let ca = c * wa;
            for &(b, wb) in &weights {
                let ns = n + b * p;
                if !lattice.contains(ns) {
                    continue;
                }
                *out.entry((ms, ns)).or_default() += ca * wb;
            }
        }
    }
    state.with_amplitudes(out)
}

/// Smallest modulation index at which the listed sideband orders carry equal
/// power.
///
/// For two orders this is the first crossing of `|J_a|` and `|J_b|`, located
/// by bisection to 1e-9. For more orders it returns the index in (0, 20] that
/// minimizes the spread of the weights `J_n²` relative to their mean.
pub fn equalize_sidebands(orders: &[u32]) -> Result<f64> {
    if orders.len() < 2 {
        return Err(Error::InvalidInput("need at least two sideband orders".into()));
    }
    if orders.contains(&0) {
        return Err(Error::InvalidInput("sideband orders must be at least 1".into()));
    }
    for (i, a) in orders.iter().enumerate() {
        if orders[i + 1..].contains(a) {
            return Err(Error::NotFound(format!("order {a} repeated: identical orders never cross")));
        }
    }
    if orders.iter().any(|&n| n as i32 > bessel::MAX_ORDER) {
        return Err(Error::Domain(format!("sideband orders above {}", bessel::MAX_ORDER)));
    }

    let top = *orders.iter().max().unwrap() as usize;
    let weights = |mu: f64| -> Vec<f64> {
        let j = bessel::orders(top, mu);
        orders.iter().map(|&n| j[n as usize].abs()).collect()
    };

    const STEP: f64 = 1e-3;
    let scan_points = (bessel::MAX_ARGUMENT / STEP) as usize;

    if let [a, b] = orders {
        let (a, b) = (*a as usize, *b as usize);
        let gap = |mu: f64| {
            let j = bessel::orders(a.max(b), mu);
            j[a].abs() - j[b].abs()
        };
        let mut lo = STEP;
        let mut g_lo = gap(lo);
        for i in 2..=scan_points {
            let hi = i as f64 * STEP;
            let g_hi = gap(hi);
            if g_hi == 0.0 {
                return Ok(hi);
            }
            if g_lo.signum() != g_hi.signum() {
                return Ok(bisect(gap, lo, hi, g_lo));
            }
            lo = hi;
            g_lo = g_hi;
        }
        return Err(Error::NotFound(format!(
            "|J_{a}| and |J_{b}| do not cross below μ = {}",
            bessel::MAX_ARGUMENT
        )));
    }

    let spread = |mu: f64| {
        let w: Vec<f64> = weights(mu).iter().map(|v| v * v).collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let (lo, hi) = w
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if mean > 0.0 {
            (hi - lo) / mean
        } else {
            f64::INFINITY
        }
    };
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..=scan_points {
        let mu = i as f64 * STEP;
        let s = spread(mu);
        if s < best.0 - 1e-12 {
            best = (s, mu);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::NotFound("no modulation index balances the sidebands".into()));
    }
    Ok(golden_min(spread, (best.1 - STEP).max(STEP / 2.0), (best.1 + STEP).min(bessel::MAX_ARGUMENT)))
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut f_lo: f64) -> f64 {
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while b - a > 1e-10 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    0.5 * (a + b)
}

/// Fiber run whose group-velocity dispersion the shaper may compensate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionSpec {
    pub fiber_length_m: f64,
    /// Dispersion parameter D in ps/(nm·km).
    pub dispersion_ps_nm_km: f64,
    pub ref_wavelength_nm: f64,
}

impl DispersionSpec {
    /// Standard single-mode fiber at 1550 nm.
    pub fn smf28(fiber_length_m: f64) -> Self {
        Self {
            fiber_length_m,
            dispersion_ps_nm_km: 17.0,
            ref_wavelength_nm: 1550.0,
        }
    }

    /// β₂ in s²/m.
    pub fn beta2(&self) -> f64 {
        let d = self.dispersion_ps_nm_km * 1e-6; // s/m²
        let lambda = self.ref_wavelength_nm * 1e-9;
        -d * lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT)
    }

    /// Spectral phase at offset `offset_ghz` from the pump.
    pub fn phase_at(&self, offset_ghz: f64) -> f64 {
        let omega = 2.0 * PI * offset_ghz * 1e9;
        0.5 * self.beta2() * self.fiber_length_m * omega * omega
    }
}

/// Phase-only mask carrying the fiber's quadratic spectral phase over the
/// whole lattice, or its negation when `compensate` is set.
pub fn dispersion_mask(lattice: &FrequencyLattice, spec: &DispersionSpec, compensate: bool) -> Result<SpectralMask> {
    if !(spec.fiber_length_m >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "fiber length must be non-negative, got {}",
            spec.fiber_length_m
        )));
    }
    let sign = if compensate { -1.0 } else { 1.0 };
    let mut mask = SpectralMask::new(MaskMode::PhaseOnly);
    let m = lattice.half_range();
    for j in -m..=m {
        let phase = sign * spec.phase_at(lattice.offset_ghz(j));
        mask.set(j, Complex64::from_polar(1.0, phase))?;
    }
    Ok(mask)
}

/// Amplitude overlap of two unit-norm bins detuned by `detune_mhz`.
///
/// Lorentzian amplitudes give `1 / (1 − iε/γ)` with γ the intensity FWHM.
pub fn overlap_kernel(lineshape: &Lineshape, detune_mhz: f64) -> Complex64 {
    match *lineshape {
        Lineshape::Delta => {
            if detune_mhz == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }
        Lineshape::Lorentzian { fwhm_mhz } => Complex64::new(1.0, -detune_mhz / fwhm_mhz).inv(),
    }
}

/// Coincidence probability at the shared midpoint channel of two equal pairs
/// as a function of the sideband offset.
///
/// Each pair is energy-correlated along a single frequency coordinate, so a
/// detuning ε between the overlapped sidebands costs one amplitude overlap
/// `K(ε)` for the pair as a whole. With frequency-integrating detectors the
/// two contributions add as `(1 + Re[e^{iφ}·K(ε)]) / 2`, which is
/// `|1 + e^{iφ}|²/4` at exact overlap and the incoherent level 1/2 once the
/// sidebands no longer overlap.
pub fn dip_scan(
    lattice: &FrequencyLattice,
    pair_a: u32,
    pair_b: u32,
    lineshape: &Lineshape,
    offsets_ghz: &[f64],
    relative_phase: f64,
) -> Result<Vec<(f64, f64)>> {
    if pair_a == pair_b {
        return Err(Error::InvalidInput("dip needs two distinct comb pairs".into()));
    }
    let spacing_ghz = f64::from(pair_a.abs_diff(pair_b)) * lattice.fsr_ghz();
    let phase = Complex64::from_polar(1.0, relative_phase);
    let mut out: Vec<(f64, f64)> = offsets_ghz
        .iter()
        .map(|&f| {
            let eps_mhz = (spacing_ghz - 2.0 * f) * 1e3;
            let k = overlap_kernel(lineshape, eps_mhz);
            (f, 0.5 * (1.0 + (phase * k).re))
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Location and full width at half depth of the deepest dip in a scan.
///
/// Depth is measured from the scan maximum; crossings are linearly
/// interpolated. Returns `(offset of minimum, width)` in the scan's units.
pub fn dip_width(scan: &[(f64, f64)]) -> Result<(f64, f64)> {
    if scan.len() < 3 {
        return Err(Error::InvalidInput("dip scan needs at least three points".into()));
    }
    let (imin, &(xmin, ymin)) = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .unwrap();
    let ymax = scan.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let half = 0.5 * (ymax + ymin);
    let cross = |a: (f64, f64), b: (f64, f64)| a.0 + (half - a.1) * (b.0 - a.0) / (b.1 - a.1);

    let left = (1..=imin)
        .rev()
        .find(|&i| scan[i - 1].1 >= half)
        .map(|i| cross(scan[i - 1], scan[i]))
        .ok_or_else(|| Error::NotFound("dip does not recover on the low side".into()))?;
    let right = (imin..scan.len() - 1)
        .find(|&i| scan[i + 1].1 >= half)
        .map(|i| cross(scan[i], scan[i + 1]))
        .ok_or_else(|| Error::NotFound("dip does not recover on the high side".into()))?;
    Ok((xmin, right - left))
}

/// Two-pair interferometer: the relative phase φ goes on the second pair
/// (φ/2 on each of its lines), an optional extra mask follows, then the
/// modulator mixes both pairs into the channels midway between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFringe {
    pub pair_a: u32,
    pub pair_b: u32,
    pub signal_channel: i64,
    pub idler_channel: i64,
    drive: ModulatorDrive,
}

impl PairFringe {
    pub fn new(lattice: &FrequencyLattice, pair_a: u32, pair_b: u32, mod_index: f64) -> Result<Self> {
        if pair_a == pair_b {
            return Err(Error::InvalidInput("fringe needs two distinct comb pairs".into()));
        }
        let (sa, sb) = (lattice.signal_index(pair_a)?, lattice.signal_index(pair_b)?);
        let (ia, ib) = (lattice.idler_index(pair_a)?, lattice.idler_index(pair_b)?);
        let gap = (sb - sa).abs();
        if gap % 2 != 0 {
            return Err(Error::InvalidLattice(format!(
                "pairs {pair_a} and {pair_b} have no midpoint on a lattice with subdivision {}",
                lattice.subdivision()
            )));
        }
        let drive = ModulatorDrive::new((gap / 2) as u32, mod_index, 0.0)?;
        Ok(Self {
            pair_a,
            pair_b,
            signal_channel: lattice.check((sa + sb) / 2)?,
            idler_channel: lattice.check((ia + ib) / 2)?,
            drive,
        })
    }

    pub fn drive(&self) -> &ModulatorDrive {
        &self.drive
    }

    /// State at the detectors for relative phase `phi`.
    pub fn state_at(&self, source: &BiphotonState, phi: f64, extra: Option<&SpectralMask>) -> Result<BiphotonState> {
        let lattice = source.lattice();
        let mut mask = SpectralMask::new(MaskMode::PhaseOnly);
        mask.add_phase(lattice.signal_index(self.pair_b)?, phi / 2.0);
        mask.add_phase(lattice.idler_index(self.pair_b)?, phi / 2.0);
        let mask = match extra {
            Some(m) => mask.compose(m),
            None => mask,
        };
        Ok(apply_modulator(&apply_mask(source, &mask), &self.drive))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn lattice() -> FrequencyLattice {
        FrequencyLattice::new(193.4, 49.6, 2, 120).unwrap()
    }

    fn pair_state(pairs: &[u32]) -> BiphotonState {
        let entries: Vec<_> = pairs.iter().map(|&k| (k, c(1.0))).collect();
        BiphotonState::comb_pairs(lattice(), &entries).unwrap()
    }

    #[test]
    fn identity_mask_is_identity() {
        let st = pair_state(&[6, 7]);
        assert_eq!(apply_mask(&st, &SpectralMask::identity()), st);
    }

    #[test]
    fn pair_phase_from_line_phases() {
        let st = pair_state(&[6, 7]);
        let i = Complex64::new(0.0, 1.0);
        let mask = SpectralMask::identity().with(14, i).unwrap().with(-14, i).unwrap();
        let out = apply_mask(&st, &mask);
        let rel = out.amplitude(14, -14) / out.amplitude(12, -12);
        assert!((rel - c(-1.0)).norm() < 1e-15);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn blocking_mask_keeps_selected_pairs() {
        let l = lattice();
        let st = BiphotonState::comb(l, &vec![c(1.0); 40]).unwrap();
        let out = apply_mask(&st, &SpectralMask::select_pairs(&l, &[5, 6, 7]).unwrap());
        assert!((out.norm_sqr() - 3.0 / 40.0).abs() < 1e-15);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn active_mask_rejected() {
        assert!(SpectralMask::identity().with(3, c(1.5)).is_err());
    }

    #[test]
    fn zero_modulation_is_identity() {
        let st = pair_state(&[6, 7]);
        let out = apply_modulator(&st, &ModulatorDrive::new(1, 0.0, 0.0).unwrap());
        assert_eq!(out, st);
    }

    #[test]
    fn first_sideband_ratio() {
        let st = pair_state(&[6]);
        for mu in [0.01, 0.05, 0.2] {
            let out = apply_modulator(&st, &ModulatorDrive::new(1, mu, 0.0).unwrap());
            // Signal up one step, idler unshifted.
            let ratio = out.amplitude(13, -12) / out.amplitude(12, -12);
            let oracle = bessel::bessel_j(1, mu).unwrap() / bessel::bessel_j(0, mu).unwrap();
            assert!((ratio.re - oracle).abs() < 1e-14);
            assert!(ratio.im.abs() < 1e-15);
            // small-argument series: J1/J0 ≈ μ/2 + μ³/16
            assert!((ratio.re - (mu / 2.0 + mu.powi(3) / 16.0)).abs() < mu.powi(5));
        }
    }

    #[test]
    fn opposite_phase_pairs_cancel_at_midpoint() {
        let st = pair_state(&[6, 7]);
        let i = Complex64::new(0.0, 1.0);
        let shaped = apply_mask(&st, &SpectralMask::identity().with(14, i).unwrap().with(-14, i).unwrap());
        let out = apply_modulator(&shaped, &ModulatorDrive::new(1, 1.2, 0.0).unwrap());
        assert!(out.amplitude(13, -13).norm() < 1e-15);
        // with no relative phase the same channel lights up
        let bright = apply_modulator(&st, &ModulatorDrive::new(1, 1.2, 0.0).unwrap());
        assert!(bright.amplitude(13, -13).norm() > 0.1);
    }

    #[test]
    fn modulator_preserves_norm() {
        let st = pair_state(&[20, 25, 30]);
        for mu in [0.5, 1.84, 3.05, 7.0, 10.0] {
            for theta in [0.0, 0.4] {
                let out = apply_modulator(&st, &ModulatorDrive::new(1, mu, theta).unwrap());
                assert!((out.norm_sqr() - 1.0).abs() < 1e-9, "mu={mu}");
            }
        }
    }

    #[test]
    fn edge_sidebands_are_clipped() {
        let l = FrequencyLattice::new(193.4, 49.6, 2, 20).unwrap();
        let st = BiphotonState::comb_pairs(l, &[(10, c(1.0))]).unwrap();
        let out = apply_modulator(&st, &ModulatorDrive::new(1, 1.0, 0.0).unwrap());
        assert!(out.norm_sqr() < 1.0 - 1e-3);
        assert!(out.iter().all(|((m, n), _)| l.contains(m) && l.contains(n)));
    }

    #[test]
    fn truncation_invariant_enforced() {
        assert!(ModulatorDrive::with_truncation(1, 3.0, 0.0, 2).is_err());
        assert!(ModulatorDrive::with_truncation(1, 3.0, 0.0, 20).is_ok());
        assert!(ModulatorDrive::new(0, 1.0, 0.0).is_err());
        assert!(ModulatorDrive::new(1, 25.0, 0.0).is_err());
    }

    #[test]
    fn equalize_first_and_third() {
        let mu = equalize_sidebands(&[1, 3]).unwrap();
        assert!(mu > 2.9 && mu < 3.3, "mu = {mu}");
        let gap = bessel::bessel_j(1, mu).unwrap().abs() - bessel::bessel_j(3, mu).unwrap().abs();
        assert!(gap.abs() < 1e-9);
    }

    #[test]
    fn equalize_first_and_second() {
        let mu = equalize_sidebands(&[1, 2]).unwrap();
        let gap = bessel::bessel_j(1, mu).unwrap().abs() - bessel::bessel_j(2, mu).unwrap().abs();
        assert!(gap.abs() < 1e-9);
        // nothing earlier crosses
        for i in 1..1000 {
            let m = mu * f64::from(i) / 1000.0;
            assert!(bessel::bessel_j(1, m).unwrap().abs() > bessel::bessel_j(2, m).unwrap().abs());
        }
    }

    #[test]
    fn equalize_rejects_degenerate_orders() {
        assert!(matches!(equalize_sidebands(&[1, 1]), Err(Error::NotFound(_))));
        assert!(equalize_sidebands(&[1]).is_err());
        assert!(equalize_sidebands(&[0, 2]).is_err());
    }

    #[test]
    fn equalize_three_orders() {
        let mu = equalize_sidebands(&[1, 2, 3]).unwrap();
        let w: Vec<f64> = (1..=3).map(|n| bessel::bessel_j(n, mu).unwrap().powi(2)).collect();
        let mean = w.iter().sum::<f64>() / 3.0;
        let spread = (w.iter().cloned().fold(0.0, f64::max) - w.iter().cloned().fold(1.0, f64::min)) / mean;
        // no grid point does better
        for i in 1..=20_000 {
            let m = f64::from(i) * 1e-3;
            let w: Vec<f64> = (1..=3).map(|n| bessel::bessel_j(n, m).unwrap().powi(2)).collect();
            let mean2 = w.iter().sum::<f64>() / 3.0;
            let s = (w.iter().cloned().fold(0.0, f64::max) - w.iter().cloned().fold(1.0, f64::min)) / mean2;
            assert!(s >= spread - 1e-9);
        }
    }

    #[test]
    fn zero_length_fiber_is_identity() {
        let l = lattice();
        let mask = dispersion_mask(&l, &DispersionSpec::smf28(0.0), false).unwrap();
        for j in -l.half_range()..=l.half_range() {
            assert_eq!(mask.transmission(j), c(1.0));
        }
    }

    #[test]
    fn dispersion_phase_is_even_and_invertible() {
        let l = lattice();
        let spec = DispersionSpec::smf28(35.0);
        let fwd = dispersion_mask(&l, &spec, false).unwrap();
        let back = dispersion_mask(&l, &spec, true).unwrap();
        let both = fwd.compose(&back);
        for j in 0..=l.half_range() {
            assert!((fwd.transmission(j) - fwd.transmission(-j)).norm() < 1e-15);
            assert!((both.transmission(j) - c(1.0)).norm() < 1e-12);
        }
        assert!(dispersion_mask(&l, &DispersionSpec::smf28(-1.0), false).is_err());
    }

    #[test]
    fn dispersion_fringe_shift_near_quarter_pi() {
        // pair phase difference β₂·L·Δω²·(7² − 6²)
        let spec = DispersionSpec::smf28(35.0);
        let dw = 2.0 * PI * 49.6e9;
        let oracle = spec.beta2() * 35.0 * dw * dw * 13.0;
        let l = lattice();
        let out = apply_mask(&pair_state(&[6, 7]), &dispersion_mask(&l, &spec, false).unwrap());
        let shift = (out.amplitude(14, -14) / out.amplitude(12, -12)).arg();
        assert!((shift - oracle).abs() < 1e-9);
        let ratio = shift.abs() / (PI / 4.0);
        assert!(ratio > 1.0 / 1.3 && ratio < 1.3, "shift {shift}");
    }

    #[test]
    fn pair_fringe_channels_and_contrast() {
        let l = lattice();
        let f = PairFringe::new(&l, 6, 7, 1.2).unwrap();
        assert_eq!((f.signal_channel, f.idler_channel), (13, -13));
        let src = pair_state(&[6, 7]);
        let at = |phi: f64| {
            f.state_at(&src, phi, None)
                .unwrap()
                .amplitude(13, -13)
                .norm_sqr()
        };
        let j1 = bessel::bessel_j(1, 1.2).unwrap();
        assert!((at(0.0) - 2.0 * j1.powi(4)).abs() < 1e-12);
        assert!(at(PI) < 1e-20);
        let odd = FrequencyLattice::new(193.4, 49.6, 1, 60).unwrap();
        assert!(PairFringe::new(&odd, 6, 7, 1.2).is_err());
        assert!(PairFringe::new(&l, 6, 6, 1.2).is_err());
    }

    #[test]
    fn overlap_kernel_values() {
        let g = Lineshape::lorentzian(100.0).unwrap();
        assert_eq!(overlap_kernel(&g, 0.0), c(1.0));
        assert!((overlap_kernel(&g, 100.0).norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(overlap_kernel(&g, 1e9).norm() < 1e-6);
        for e in [-300.0, -10.0, 5.0, 77.0] {
            assert!(overlap_kernel(&g, e).norm() <= 1.0);
        }
        assert_eq!(overlap_kernel(&Lineshape::Delta, 0.0), c(1.0));
        assert_eq!(overlap_kernel(&Lineshape::Delta, 1.0), c(0.0));
    }

    #[test]
    fn dip_scan_limits() {
        let l = lattice();
        let g = Lineshape::lorentzian(97.0).unwrap();
        let scan = dip_scan(&l, 6, 7, &g, &[24.8], PI).unwrap();
        assert!(scan[0].1.abs() < 1e-15);
        let scan = dip_scan(&l, 6, 7, &g, &[24.8], 0.0).unwrap();
        assert!((scan[0].1 - 1.0).abs() < 1e-15);
        let delta = dip_scan(&l, 6, 7, &Lineshape::Delta, &[24.7, 24.8, 24.9], 0.3).unwrap();
        let exact = (c(1.0) + Complex64::from_polar(1.0, 0.3)).norm_sqr() / 4.0;
        assert!((delta[1].1 - exact).abs() < 1e-15);
        assert_eq!(delta[0].1, 0.5);
        assert_eq!(delta[2].1, 0.5);
    }

    #[test]
    fn dip_width_matches_closed_form() {
        // (1 − Re K)/2 with K = 1/(1 − ix): half of the incoherent level at
        // x = ±1, i.e. ε = ±γ, i.e. an offset width of γ.
        let l = lattice();
        let g = Lineshape::lorentzian(97.0).unwrap();
        let offsets: Vec<f64> = (0..=4000).map(|i| 23.8 + f64::from(i) * 0.0005).collect();
        let scan = dip_scan(&l, 6, 7, &g, &offsets, PI).unwrap();
        let (at, width) = dip_width(&scan).unwrap();
        assert!((at - 24.8).abs() < 1e-9);
        // scan max is slightly below 1/2 at ±1 GHz, so the width sits a hair under γ
        assert!((width * 1e3 - 97.0).abs() < 0.5, "width {width}");
    }
}
