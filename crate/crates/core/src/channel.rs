//! Propagation and interference: WSSUS tapped-delay-line fading, DME pulse
//! pairs, AWGN, and a lumped front-end impairment model.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CARRIER_HZ: f64 = 1215e6;
pub const KTAS_TO_MPS: f64 = 0.5144;
pub const SPEED_OF_LIGHT: f64 = 3e8;
pub const MAX_TAPS: usize = 9;

/// Maximum Doppler shift in Hz, rounded to the nearest integer.
pub fn doppler_freq(fc: f64, v_ktas: f64) -> f64 {
    (fc * v_ktas * KTAS_TO_MPS / SPEED_OF_LIGHT).round()
}

/// Stable 64-bit mixer (SplitMix64 finalizer).
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for (master, point, trial): mix64(mix64(mix64(master) ^ point) ^ trial).
pub fn derive_seed(master: u64, point: u64, trial: u64) -> u64 {
    mix64(mix64(mix64(master) ^ point) ^ trial)
}

/// Independent sub-stream of a trial seed for one stochastic stage.
pub fn substream(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_mul(0xd6e8_feb8_6659_fd93)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelProfile {
    pub name: String,
    pub max_delay_us: f64,
    pub acceleration: f64,
    pub harmonics: usize,
    pub velocity_ktas: f64,
    /// Power ratio of a static line-of-sight component on the first tap to
    /// the scattered power; `None` gives pure Rayleigh fading.
    #[serde(default)]
    pub k_factor_db: Option<f64>,
}

pub const DEFAULT_K_FACTOR_DB: f64 = 10.0;

impl ChannelProfile {
    fn preset(name: &str, delay: f64, acc: f64, harmonics: usize, v: f64) -> Self {
        Self {
            name: name.into(),
            max_delay_us: delay,
            acceleration: acc,
            harmonics,
            velocity_ktas: v,
            k_factor_db: Some(DEFAULT_K_FACTOR_DB),
        }
    }

    pub fn apt() -> Self {
        Self::preset("APT", 3.0, 5.0, 8, 200.0)
    }

    pub fn tma() -> Self {
        Self::preset("TMA", 20.0, 50.0, 8, 300.0)
    }

    pub fn enr() -> Self {
        Self::preset("ENR", 15.0, 50.0, 25, 600.0)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "APT" => Ok(Self::apt()),
            "TMA" => Ok(Self::tma()),
            "ENR" => Ok(Self::enr()),
            _ => Err(Error::Config(format!("unknown channel profile `{name}`"))),
        }
    }

    pub fn doppler(&self) -> f64 {
        doppler_freq(CARRIER_HZ, self.velocity_ktas)
    }
}

impl fmt::Display for ChannelProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Delay span in samples, ⌈max_delay·fs⌉.
pub fn delay_span(max_delay_s: f64, fs: f64) -> usize {
    let x = max_delay_s * fs;
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Up to nine tap delays spread evenly over [0, span].
pub fn tap_delays(span: usize) -> Vec<usize> {
    let n = MAX_TAPS.min(span + 1);
    if n == 1 {
        return vec![0];
    }
    (0..n)
        .map(|i| ((i * span) as f64 / (n - 1) as f64).round() as usize)
        .collect()
}

/// Exponential power-delay profile, about 13 dB down at the last tap, unit sum.
pub fn tap_powers(delays: &[usize]) -> Vec<f64> {
    let span = delays.last().copied().unwrap_or(0).max(1) as f64;
    let raw: Vec<f64> = delays.iter().map(|&d| (-3.0 * d as f64 / span).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|p| p / total).collect()
}

/// One sum-of-sinusoids fading process with unit mean power.
#[derive(Debug, Clone)]
struct SosTap {
    freqs: Vec<f64>,
    phases: Vec<f64>,
}

impl SosTap {
    fn new(harmonics: usize, doppler: f64, rng: &mut ChaCha8Rng) -> Self {
        let m = harmonics.max(1);
        let freqs = (0..m)
            .map(|_| doppler * (2.0 * PI * rng.random::<f64>()).cos())
            .collect();
        let phases = (0..m).map(|_| 2.0 * PI * rng.random::<f64>()).collect();
        Self { freqs, phases }
    }

    fn gain(&self, t: f64) -> Complex64 {
        let s: Complex64 = self
            .freqs
            .iter()
            .zip(&self.phases)
            .map(|(f, p)| Complex64::from_polar(1.0, 2.0 * PI * f * t + p))
            .sum();
        s / (self.freqs.len() as f64).sqrt()
    }
}

/// Time-varying tapped delay line; output length equals input length.
pub fn apply_channel(samples: &[Complex64], profile: &ChannelProfile, fs: f64, seed: u64) -> Vec<Complex64> {
    let mut r = rng(seed);
    let delays = tap_delays(delay_span(profile.max_delay_us * 1e-6, fs));
    let powers = tap_powers(&delays);
    let doppler = profile.doppler();
    let k = profile.k_factor_db.map(|db| 10f64.powf(db / 10.0));
    let scatter = k.map_or(1.0, |k| 1.0 / (k + 1.0));
    let taps: Vec<SosTap> = delays
        .iter()
        .map(|_| SosTap::new(profile.harmonics, doppler, &mut r))
        .collect();
    let los = k.map(|k| Complex64::from_polar((k / (k + 1.0)).sqrt(), 2.0 * PI * r.random::<f64>()));
    let amps: Vec<f64> = powers.iter().map(|p| (p * scatter).sqrt()).collect();
    (0..samples.len())
        .map(|n| {
            let t = n as f64 / fs;
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, (&d, tap)) in delays.iter().zip(&taps).enumerate() {
                if let Some(x) = n.checked_sub(d).map(|j| samples[j]) {
                    let mut h = tap.gain(t) * amps[i];
                    if i == 0 {
                        h += los.unwrap_or_default();
                    }
                    acc += h * x;
                }
            }
            acc
        })
        .collect()
}

/// The printed exponent, which yields multi-second pulses; selectable for comparison.
pub const DME_ALPHA_PRINTED: f64 = 4.5e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmeConfig {
    pub pulse_spacing_s: f64,
    pub alpha: f64,
    pub amplitude_scale: f64,
    pub pair_rate_hz: f64,
    /// Offset of the DME channel from the LDACS centre; 0 for plain baseband.
    pub carrier_offset_hz: f64,
    pub oversample: usize,
}

impl Default for DmeConfig {
    fn default() -> Self {
        Self {
            pulse_spacing_s: 12e-6,
            alpha: 4.5e11,
            amplitude_scale: 0.2,
            pair_rate_hz: 2700.0,
            carrier_offset_hz: 500e3,
            oversample: 8,
        }
    }
}

impl DmeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_spacing_s > 0.0 && self.alpha > 0.0 && self.amplitude_scale >= 0.0) {
            return Err(Error::Config("DME needs spacing > 0, alpha > 0, scale >= 0".into()));
        }
        if !(self.pair_rate_hz >= 0.0) || self.oversample == 0 {
            return Err(Error::Config("DME pair rate must be >= 0 and oversample >= 1".into()));
        }
        Ok(())
    }

    /// Duration over which one pulse is above 1e-9 of its peak.
    fn pulse_reach(&self) -> f64 {
        (2.0 * 9.0 * 10f64.ln() / self.alpha).sqrt()
    }
}

/// Unscaled pulse pair e^{-αt²/2} + e^{-α(t-Δt)²/2}.
pub fn dme_pulse_pair(t: f64, cfg: &DmeConfig) -> f64 {
    let a = cfg.alpha;
    let d = t - cfg.pulse_spacing_s;
    (-a * t * t / 2.0).exp() + (-a * d * d / 2.0).exp()
}

/// Pulse-pair interference with Poisson onsets, band-limited to ±fs/2.
pub fn dme_interference(n: usize, fs: f64, cfg: &DmeConfig, seed: u64) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    if !(fs > 0.0) {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    if cfg.amplitude_scale == 0.0 || n == 0 {
        return Ok(vec![Complex64::new(0.0, 0.0); n]);
    }
    let mut r = rng(seed);
    let reach = cfg.pulse_reach().min(n as f64 / fs + cfg.pulse_spacing_s);
    let duration = n as f64 / fs;
    let mut onsets = Vec::new();
    if cfg.pair_rate_hz > 0.0 {
        let gap = Exp::new(cfg.pair_rate_hz).expect("positive rate");
        let mut t = -reach - cfg.pulse_spacing_s + gap.sample(&mut r);
        while t < duration + reach {
            onsets.push(t);
            t += gap.sample(&mut r);
        }
    }
    let os = if cfg.carrier_offset_hz == 0.0 { 1 } else { cfg.oversample };
    let fh = fs * os as f64;
    let m = n * os;
    let mut hi = vec![Complex64::new(0.0, 0.0); m];
    let span = (reach + cfg.pulse_spacing_s) * fh;
    for &t0 in &onsets {
        let first = ((t0 - reach) * fh).floor().max(0.0) as usize;
        let last = (((t0 * fh) + span).ceil().max(0.0) as usize).min(m);
        for (i, v) in hi.iter_mut().enumerate().take(last).skip(first) {
            let t = i as f64 / fh;
            let env = cfg.amplitude_scale * dme_pulse_pair(t - t0, cfg);
            *v += env * (2.0 * PI * cfg.carrier_offset_hz * t).cos();
        }
    }
    if os == 1 {
        return Ok(hi);
    }
    // Ideal low-pass to the simulated band, then decimate.
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut hi);
    for (k, v) in hi.iter_mut().enumerate() {
        let f = if k <= m / 2 { k as f64 } else { k as f64 - m as f64 } * fh / m as f64;
        if f.abs() >= fs / 2.0 {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(m).process(&mut hi);
    let s = 1.0 / m as f64;
    Ok(hi.iter().step_by(os).map(|z| z * s).collect())
}

pub fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64
}

/// Circular Gaussian noise at `snr_db` below the measured signal power.
pub fn awgn(samples: &[Complex64], snr_db: f64, seed: u64) -> Result<Vec<Complex64>> {
    if snr_db == f64::INFINITY {
        return Ok(samples.to_vec());
    }
    let p = mean_power(samples);
    if !(p > 0.0) {
        return Err(Error::Contract("cannot set an SNR against a zero-power signal".into()));
    }
    let noise_power = awgn_power(p, snr_db);
    Ok(add_noise(samples, noise_power, seed))
}

pub fn awgn_power(signal_power: f64, snr_db: f64) -> f64 {
    signal_power / 10f64.powf(snr_db / 10.0)
}

/// Add circular Gaussian noise of the given total power.
pub fn add_noise(samples: &[Complex64], noise_power: f64, seed: u64) -> Vec<Complex64> {
    let mut r = rng(seed);
    let sd = (noise_power / 2.0).sqrt();
    samples
        .iter()
        .map(|&z| {
            let re: f64 = StandardNormal.sample(&mut r);
            let im: f64 = StandardNormal.sample(&mut r);
            z + Complex64::new(re * sd, im * sd)
        })
        .collect()
}

/// Random-walk phase rotation (per-sample step std in radians) and gain.
pub fn afe_impairments(samples: &[Complex64], phase_noise_std: f64, gain: f64, seed: u64) -> Vec<Complex64> {
    let mut r = rng(seed);
    let mut phase = 0.0;
    samples
        .iter()
        .map(|&z| {
            if phase_noise_std > 0.0 {
                let step: f64 = StandardNormal.sample(&mut r);
                phase += step * phase_noise_std;
            }
            z * Complex64::from_polar(gain, phase)
        })
        .collect()
}

pub fn rotate(samples: &[Complex64], phi: f64) -> Vec<Complex64> {
    let r = Complex64::from_polar(1.0, phi);
    samples.iter().map(|z| z * r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doppler_examples() {
        assert_eq!(doppler_freq(CARRIER_HZ, 0.0), 0.0);
        assert_eq!(doppler_freq(CARRIER_HZ, 600.0), 1250.0);
    }

    #[test]
    fn tap_span_and_layout() {
        assert_eq!(delay_span(15e-6, 1.1e6), 17);
        assert_eq!(tap_delays(17).len(), 9);
        assert_eq!(*tap_delays(17).last().unwrap(), 17);
        assert_eq!(tap_delays(3), vec![0, 1, 2, 3]);
        assert_eq!(tap_delays(0), vec![0]);
        let p = tap_powers(&tap_delays(17));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn flat_static_channel_is_a_gain() {
        let prof = ChannelProfile {
            name: "flat".into(),
            max_delay_us: 0.0,
            acceleration: 0.0,
            harmonics: 8,
            velocity_ktas: 0.0,
            k_factor_db: None,
        };
        let x: Vec<Complex64> = (0..50).map(|k| Complex64::new(k as f64, 1.0)).collect();
        let y = apply_channel(&x, &prof, 1e6, 3);
        let g = y[1] / x[1];
        for (a, b) in x.iter().zip(&y) {
            assert!((a * g - b).norm() < 1e-9 * b.norm().max(1.0));
        }
    }

    #[test]
    fn channel_is_linear_and_deterministic() {
        let p = ChannelProfile::tma();
        let a: Vec<Complex64> = (0..300).map(|k| Complex64::new((k as f64).sin(), 0.2)).collect();
        let b: Vec<Complex64> = (0..300).map(|k| Complex64::new(0.1, (k as f64 * 0.3).cos())).collect();
        let mix: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * 2.0 - y * 0.5).collect();
        let (ya, yb, ym) = (apply_channel(&a, &p, 1e6, 9), apply_channel(&b, &p, 1e6, 9), apply_channel(&mix, &p, 1e6, 9));
        for i in 0..300 {
            assert!((ym[i] - (ya[i] * 2.0 - yb[i] * 0.5)).norm() < 1e-12);
        }
        assert_eq!(apply_channel(&a, &p, 1e6, 9), ya);
    }

    #[test]
    fn pulse_pair_shape() {
        let cfg = DmeConfig::default();
        let dt = 1e-9;
        let grid: Vec<f64> = (0..20_000).map(|i| -4e-6 + i as f64 * dt).collect();
        let v: Vec<f64> = grid.iter().map(|&t| dme_pulse_pair(t, &cfg)).collect();
        let maxima: Vec<usize> = (1..v.len() - 1).filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1]).collect();
        assert_eq!(maxima.len(), 2);
        assert!((grid[maxima[0]]).abs() < 2.0 * dt);
        assert!((grid[maxima[1]] - 12e-6).abs() < 2.0 * dt);
        for &i in &maxima {
            assert!((v[i] - 1.0).abs() < 1e-14);
        }
        let hw = 2.0 * (2.0 * 2f64.ln() / cfg.alpha).sqrt();
        // the second pulse adds about 6e-11 at this point
        assert!((dme_pulse_pair(hw / 2.0, &cfg) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn dme_scaling() {
        let base = DmeConfig::default();
        let z = dme_interference(2000, 918e3, &DmeConfig { amplitude_scale: 0.0, ..base }, 1).unwrap();
        assert!(z.iter().all(|v| v.norm() == 0.0));
        let e = |s: f64| mean_power(&dme_interference(4000, 918e3, &DmeConfig { amplitude_scale: s, ..base }, 5).unwrap());
        let (e1, e2) = (e(0.1), e(0.3));
        assert!(e1 > 0.0);
        assert!((e2 / e1 - 9.0).abs() < 1e-9);
    }

    #[test]
    fn awgn_behaviour() {
        let x = vec![Complex64::new(1.0, 0.0); 1000];
        assert_eq!(awgn(&x, f64::INFINITY, 1).unwrap(), x);
        assert_eq!(awgn(&x, 10.0, 4).unwrap(), awgn(&x, 10.0, 4).unwrap());
        assert!(awgn(&[Complex64::new(0.0, 0.0); 10], 10.0, 1).is_err());
    }

    #[test]
    fn afe_identity() {
        let x: Vec<Complex64> = (0..10).map(|k| Complex64::new(k as f64, 1.0)).collect();
        assert_eq!(afe_impairments(&x, 0.0, 1.0, 2), x);
    }

    #[test]
    fn seeds_are_stable() {
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
        assert_eq!(mix64(0), 0xe220_a839_7b1d_cdaf);
    }
}
