//! Asynchronous transmit/receive chain: a baseband comb is upconverted,
//! passes a channel, and is downconverted by a free-running receiver LO to an
//! intermediate frequency. The baseband comb is captured alongside and used to
//! recover the sampling offset, after which inter-tone phase differences of
//! the channel follow from the spectrum of the IF capture.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // shadowed by inherent f64 methods whenever std is linked
use num_traits::Float;

use num_complex::Complex64;

use crate::linalg::{wrap_phase, ZERO};
use crate::rng;
use crate::{Error, Result};

/// Carrier and receive LO of the default tone plan, Hz.
pub const DEFAULT_CARRIER_HZ: f64 = 2.489e9;
pub const DEFAULT_LO_HZ: f64 = 2.380e9;
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 500e6;

/// Residual-energy fraction above which tone extraction warns about leakage.
pub const DEFAULT_LEAKAGE_TOL: f64 = 1e-2;

/// Normalized envelope standard deviation below which synchronization is
/// flagged as low-confidence.
pub const FLAT_ENVELOPE_TOL: f64 = 1e-3;

/// Uniformly spaced multi-tone baseband signal `Σ α_k e^{j2πf_k t}`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CombSignal {
    pub frequencies_hz: Vec<f64>,
    pub coefficients: Vec<Complex64>,
    pub spacing_hz: f64,
}

impl CombSignal {
    /// Tones `start + i·spacing`. Every tone must be an integer multiple of
    /// the spacing so that the signal is periodic in `1/spacing`.
    pub fn uniform(start_hz: f64, spacing_hz: f64, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::invalid("comb needs at least one tone"));
        }
        if !(spacing_hz > 0.0) || !spacing_hz.is_finite() || !start_hz.is_finite() {
            return Err(Error::invalid("comb spacing must be positive"));
        }
        if !is_multiple(start_hz, spacing_hz) {
            return Err(Error::invalid("comb tones must be integer multiples of the spacing"));
        }
        if coefficients.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::invalid("comb coefficients must be finite"));
        }
        let frequencies_hz = (0..coefficients.len())
            .map(|i| start_hz + spacing_hz * i as f64)
            .collect();
        Ok(Self {
            frequencies_hz,
            coefficients,
            spacing_hz,
        })
    }

    /// 21 tones from −9 to +11 MHz with unit magnitude and seeded random
    /// phases.
    pub fn default_plan(seed: u64) -> Self {
        Self::uniform(-9e6, 1e6, random_phase_coefficients(21, seed)).expect("valid tone plan")
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn period(&self) -> f64 {
        1.0 / self.spacing_hz
    }

    pub fn evaluate(&self, t: f64) -> Complex64 {
        self.frequencies_hz
            .iter()
            .zip(&self.coefficients)
            .map(|(f, a)| a * Complex64::from_polar(1.0, 2.0 * PI * f * t))
            .sum()
    }

    /// RMS value `√(Σ|α_k|²)`.
    pub fn rms(&self) -> f64 {
        self.coefficients.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Samples per period at `sample_rate`; errors if not an integer.
    pub fn period_samples(&self, sample_rate: f64) -> Result<usize> {
        let p = self.period() * sample_rate;
        let r = p.round();
        if r < 1.0 || (p - r).abs() > 1e-6 * p.max(1.0) {
            return Err(Error::invalid("comb period must span an integer number of samples"));
        }
        Ok(r as usize)
    }

    /// `|a(n/fs)|` over one period starting at `t = 0`.
    pub fn envelope_template(&self, sample_rate: f64) -> Result<Vec<f64>> {
        let p = self.period_samples(sample_rate)?;
        Ok((0..p).map(|n| self.evaluate(n as f64 / sample_rate).norm()).collect())
    }
}

/// Unit-magnitude coefficients with seeded uniform phases.
pub fn random_phase_coefficients(n: usize, seed: u64) -> Vec<Complex64> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| {
            let z = rng::complex_normal(&mut r);
            let m = z.norm();
            if m > 0.0 {
                z / m
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
        .collect()
}

fn is_multiple(x: f64, step: f64) -> bool {
    let q = x / step;
    (q - q.round()).abs() < 1e-9 * q.abs().max(1.0)
}

/// Carrier and receive LO; IF tones sit at `f_k + (carrier − lo)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TonePlan {
    pub carrier_hz: f64,
    pub lo_hz: f64,
}

impl Default for TonePlan {
    fn default() -> Self {
        Self {
            carrier_hz: DEFAULT_CARRIER_HZ,
            lo_hz: DEFAULT_LO_HZ,
        }
    }
}

impl TonePlan {
    pub fn if_shift_hz(&self) -> f64 {
        self.carrier_hz - self.lo_hz
    }

    pub fn if_frequencies(&self, comb: &CombSignal) -> Vec<f64> {
        comb.frequencies_hz.iter().map(|f| f + self.if_shift_hz()).collect()
    }

    pub fn rf_frequencies(&self, comb: &CombSignal) -> Vec<f64> {
        comb.frequencies_hz.iter().map(|f| f + self.carrier_hz).collect()
    }
}

/// Channel transfer values `H(f_k + f_c)`, one per tone.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelModel {
    pub values: Vec<Complex64>,
}

impl ChannelModel {
    pub fn unit(n: usize) -> Self {
        Self {
            values: alloc::vec![Complex64::new(1.0, 0.0); n],
        }
    }

    /// `H = e^{−j2πfτ}` at the RF tone frequencies.
    pub fn delay(comb: &CombSignal, plan: &TonePlan, tau_s: f64) -> Self {
        Self {
            values: plan
                .rf_frequencies(comb)
                .iter()
                .map(|f| Complex64::from_polar(1.0, -2.0 * PI * f * tau_s))
                .collect(),
        }
    }

    /// `wrap(arg H_k − arg H_ref)`.
    pub fn relative_phases(&self, reference: usize) -> Vec<f64> {
        let r = self.values[reference];
        self.values.iter().map(|h| (h * r.conj()).arg()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReceiverImpairments {
    /// Receive LO frequency error, Hz.
    pub lo_offset_hz: f64,
    /// Receive LO phase, rad.
    pub lo_phase: f64,
    /// Offset between the comb time origin and the first sample, s.
    pub delay_s: f64,
    /// Complex white-noise standard deviation relative to the comb RMS.
    pub noise_level: f64,
    pub noise_seed: u64,
}

impl Default for ReceiverImpairments {
    fn default() -> Self {
        Self {
            lo_offset_hz: 0.0,
            lo_phase: 0.0,
            delay_s: 0.0,
            noise_level: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    /// Received IF samples `b_IF(t_n + Δt)`.
    pub if_series: Vec<Complex64>,
    /// Baseband comb captured on the same clock, `a_BB(t_n + Δt)`.
    pub baseband: Vec<Complex64>,
    pub sample_rate: f64,
    pub period_samples: usize,
}

/// Samples `n_periods` comb periods of
/// `b_IF(t+Δt) = Σ α_k H_k e^{j(ω_k+Δω)(t+Δt)} e^{jΔφ}` (IF tone frequencies
/// `ω_k`) plus noise, and the baseband reference `a_BB(t+Δt)`.
pub fn simulate_chain(
    comb: &CombSignal,
    channel: &ChannelModel,
    plan: &TonePlan,
    impairments: &ReceiverImpairments,
    sample_rate: f64,
    n_periods: usize,
) -> Result<Capture> {
    if channel.values.len() != comb.len() {
        return Err(Error::shape("one channel value per tone required"));
    }
    if n_periods == 0 {
        return Err(Error::invalid("capture needs at least one period"));
    }
    let if_freqs = plan.if_frequencies(comb);
    let f_max = if_freqs
        .iter()
        .chain(&comb.frequencies_hz)
        .fold(0.0f64, |m, f| m.max((f + impairments.lo_offset_hz).abs()));
    if !(sample_rate > 2.0 * f_max) {
        return Err(Error::invalid("sample rate below twice the highest tone frequency"));
    }
    let p = comb.period_samples(sample_rate)?;
    let n = p * n_periods;
    let lo = Complex64::from_polar(1.0, impairments.lo_phase);
    let amps: Vec<Complex64> = comb
        .coefficients
        .iter()
        .zip(&channel.values)
        .map(|(a, h)| a * h * lo)
        .collect();
    let sigma = impairments.noise_level * comb.rms();
    let mut noise_rng = rng::seeded(impairments.noise_seed);
    let mut if_series = Vec::with_capacity(n);
    let mut baseband = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sample_rate + impairments.delay_s;
        let mut b = ZERO;
        for (amp, f) in amps.iter().zip(&if_freqs) {
            b += amp * Complex64::from_polar(1.0, 2.0 * PI * (f + impairments.lo_offset_hz) * t);
        }
        if sigma > 0.0 {
            b += rng::complex_normal(&mut noise_rng) * sigma;
        }
        if_series.push(b);
        baseband.push(comb.evaluate(t));
    }
    Ok(Capture {
        if_series,
        baseband,
        sample_rate,
        period_samples: p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyncEstimate {
    /// Estimated offset in samples, in `(−P/2, P/2]` for period `P`.
    pub delay_samples: f64,
    pub delay_s: f64,
    /// Normalized correlation at the peak (1 for a perfect match).
    pub peak_correlation: f64,
    /// The envelope has no usable features.
    pub low_confidence: bool,
}

/// Circular cross-correlation of the first period of the captured envelope
/// (mean removed) against the one-period template, with parabolic
/// interpolation around the peak.
pub fn synchronize(captured: &[Complex64], template: &[f64], sample_rate: f64) -> Result<SyncEstimate> {
    let p = template.len();
    if p < 3 {
        return Err(Error::invalid("template needs at least three samples"));
    }
    if captured.len() < p {
        return Err(Error::invalid("capture shorter than one period"));
    }
    let centered = |v: &mut Vec<f64>| -> f64 {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        let energy = v.iter().map(|x| x * x).sum::<f64>();
        (energy / v.len() as f64).sqrt() / mean.abs().max(f64::MIN_POSITIVE)
    };
    let mut env: Vec<f64> = captured[..p].iter().map(|z| z.norm()).collect();
    let mut tmpl = template.to_vec();
    let spread_env = centered(&mut env);
    let spread_tmpl = centered(&mut tmpl);
    let low_confidence = !(spread_env > FLAT_ENVELOPE_TOL && spread_tmpl > FLAT_ENVELOPE_TOL);

    let corr: Vec<f64> = (0..p)
        .map(|s| env.iter().enumerate().map(|(n, e)| e * tmpl[(n + s) % p]).sum())
        .collect();
    let (peak, &c0) = corr
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty correlation");
    let cm = corr[(peak + p - 1) % p];
    let cp = corr[(peak + 1) % p];
    let den = cm - 2.0 * c0 + cp;
    let frac = if den < 0.0 { 0.5 * (cm - cp) / den } else { 0.0 };
    let mut d = peak as f64 + frac;
    if d > p as f64 / 2.0 {
        d -= p as f64;
    }
    let norm = (env.iter().map(|x| x * x).sum::<f64>() * tmpl.iter().map(|x| x * x).sum::<f64>()).sqrt();
    Ok(SyncEstimate {
        delay_samples: d,
        delay_s: d / sample_rate,
        peak_correlation: if norm > 0.0 { c0 / norm } else { 0.0 },
        low_confidence,
    })
}

/// LO offset from the period-to-period rotation of the IF capture:
/// for IF tones on the comb grid, `b(t+T) = e^{j2πΔf T}·b(t)`. Unambiguous
/// for `|Δf| < 1/(2T)`.
pub fn estimate_if_offset(if_series: &[Complex64], period_samples: usize, sample_rate: f64) -> Result<f64> {
    if period_samples == 0 || if_series.len() < 2 * period_samples {
        return Err(Error::invalid("offset estimation needs at least two periods"));
    }
    let lagged: Complex64 = if_series[period_samples..]
        .iter()
        .zip(if_series)
        .map(|(later, earlier)| later * earlier.conj())
        .sum();
    let t = period_samples as f64 / sample_rate;
    Ok(lagged.arg() / (2.0 * PI * t))
}

/// Fixed parameters of tone extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Analysis {
    pub sample_rate: f64,
    pub plan: TonePlan,
    pub reference_tone: usize,
    pub leakage_tol: f64,
}

impl Analysis {
    pub fn new(sample_rate: f64, plan: TonePlan, reference_tone: usize) -> Self {
        Self {
            sample_rate,
            plan,
            reference_tone,
            leakage_tol: DEFAULT_LEAKAGE_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToneTable {
    /// Baseband tone frequencies, Hz.
    pub frequencies_hz: Vec<f64>,
    /// `|H_k|` after removing the comb coefficients.
    pub magnitudes: Vec<f64>,
    /// Phase of tone `k` relative to the reference tone, rad, wrapped.
    pub relative_phases: Vec<f64>,
    pub reference_tone: usize,
    /// Fraction of capture energy not explained by the tones.
    pub leakage: f64,
    pub leakage_warning: bool,
}

/// Evaluates the spectrum of the IF capture at the (offset-corrected) tone
/// frequencies over a whole number of periods, removes the comb coefficients
/// and the sampling offset, and reports phases relative to the reference
/// tone. The LO phase is common to all tones and cancels.
pub fn extract_relative_phases(
    if_series: &[Complex64],
    comb: &CombSignal,
    analysis: &Analysis,
    if_offset_hz: f64,
    delay_s: f64,
) -> Result<ToneTable> {
    if analysis.reference_tone >= comb.len() {
        return Err(Error::invalid("reference tone out of range"));
    }
    let p = comb.period_samples(analysis.sample_rate)?;
    let n = (if_series.len() / p) * p;
    if n == 0 {
        return Err(Error::invalid("capture shorter than one period"));
    }
    let window = &if_series[..n];
    let fs = analysis.sample_rate;
    let corrected: Vec<Complex64> = analysis
        .plan
        .if_frequencies(comb)
        .iter()
        .zip(&comb.coefficients)
        .map(|(f_if, alpha)| {
            let f = f_if + if_offset_hz;
            let x: Complex64 = window
                .iter()
                .enumerate()
                .map(|(i, s)| s * Complex64::from_polar(1.0, -2.0 * PI * f * i as f64 / fs))
                .sum::<Complex64>()
                / n as f64;
            x * Complex64::from_polar(1.0, -2.0 * PI * f * delay_s) / alpha
        })
        .collect();
    let total = window.iter().map(|s| s.norm_sqr()).sum::<f64>() / n as f64;
    let explained: f64 = corrected
        .iter()
        .zip(&comb.coefficients)
        .map(|(c, a)| (c * a).norm_sqr())
        .sum();
    let leakage = if total > 0.0 {
        ((total - explained) / total).max(0.0)
    } else {
        0.0
    };
    let r = corrected[analysis.reference_tone];
    Ok(ToneTable {
        frequencies_hz: comb.frequencies_hz.clone(),
        magnitudes: corrected.iter().map(|c| c.norm()).collect(),
        relative_phases: corrected.iter().map(|c| (c * r.conj()).arg()).collect(),
        reference_tone: analysis.reference_tone,
        leakage,
        leakage_warning: leakage > analysis.leakage_tol,
    })
}

/// Synchronize on the baseband capture, estimate the LO offset, and extract
/// the tone table.
pub fn recover_tones(capture: &Capture, comb: &CombSignal, analysis: &Analysis) -> Result<(ToneTable, SyncEstimate)> {
    let template = comb.envelope_template(capture.sample_rate)?;
    let sync = synchronize(&capture.baseband, &template, capture.sample_rate)?;
    let offset = estimate_if_offset(&capture.if_series, capture.period_samples, capture.sample_rate)?;
    let table = extract_relative_phases(&capture.if_series, comb, analysis, offset, sync.delay_s)?;
    Ok((table, sync))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    /// Population statistics; `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Consistency {
    /// `wrap(bias_{p,k} − bias_{ref,k})` with `bias = wrap(measured − truth)`,
    /// rad, indexed `[position][tone]`.
    pub residuals: Vec<Vec<f64>>,
    pub per_position: Vec<Stats>,
    pub per_frequency: Vec<Stats>,
}

/// Cross-position phase consistency: per-frequency biases common to all
/// positions cancel.
pub fn multi_position_consistency(
    measured: &[Vec<f64>],
    truth: &[Vec<f64>],
    reference_position: usize,
) -> Result<Consistency> {
    if measured.len() < 2 {
        return Err(Error::invalid("consistency needs at least two positions"));
    }
    if truth.len() != measured.len() || reference_position >= measured.len() {
        return Err(Error::shape("truth/position count mismatch"));
    }
    let n_tones = measured[0].len();
    if measured.iter().chain(truth).any(|v| v.len() != n_tones) || n_tones == 0 {
        return Err(Error::shape("every position needs the same tones"));
    }
    let bias: Vec<Vec<f64>> = measured
        .iter()
        .zip(truth)
        .map(|(m, t)| m.iter().zip(t).map(|(a, b)| wrap_phase(a - b)).collect())
        .collect();
    let residuals: Vec<Vec<f64>> = bias
        .iter()
        .map(|b| {
            b.iter()
                .zip(&bias[reference_position])
                .map(|(x, r)| wrap_phase(x - r))
                .collect()
        })
        .collect();
    let per_position = residuals.iter().map(|r| Stats::of(r).expect("non-empty")).collect();
    let per_frequency = (0..n_tones)
        .map(|k| {
            let col: Vec<f64> = residuals.iter().map(|r| r[k]).collect();
            Stats::of(&col).expect("non-empty")
        })
        .collect();
    Ok(Consistency {
        residuals,
        per_position,
        per_frequency,
    })
}

/// Least-squares line through the origin: returns `(slope, R²)` with
/// `R² = 1 − SS_res / SS_tot` (`SS_tot` about the mean of `y`).
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("fit needs at least two paired points"));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("fit needs a non-zero abscissa"));
    }
    let slope = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok((slope, r2))
}
