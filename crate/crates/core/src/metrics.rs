//! Welch PSD estimation, out-of-band attenuation and BER accounting.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    /// Power density in dB relative to one unit of power per Hz.
    pub power_db: Vec<f64>,
    pub resolution: f64,
    pub segments: usize,
}

impl Spectrum {
    pub fn linear(&self) -> Vec<f64> {
        self.power_db.iter().map(|d| 10f64.powf(d / 10.0)).collect()
    }

    /// Integral of the density: total power.
    pub fn total_power(&self) -> f64 {
        self.linear().iter().sum::<f64>() * self.resolution
    }

    fn select(&self, band: (f64, f64)) -> Result<Vec<f64>> {
        let lin = self.linear();
        let v: Vec<f64> = self
            .freqs
            .iter()
            .zip(lin)
            .filter(|(f, _)| **f >= band.0 && **f <= band.1)
            .map(|(_, p)| p)
            .collect();
        if v.is_empty() {
            return Err(Error::Contract(format!(
                "interval [{}, {}] Hz contains no spectrum bins",
                band.0, band.1
            )));
        }
        Ok(v)
    }

    /// Mean density over a band, in dB.
    pub fn band_mean_db(&self, band: (f64, f64)) -> Result<f64> {
        let v = self.select(band)?;
        Ok(10.0 * (v.iter().sum::<f64>() / v.len() as f64).log10())
    }

    pub fn band_peak_db(&self, bands: &[(f64, f64)]) -> Result<f64> {
        let mut peak = f64::NEG_INFINITY;
        for &b in bands {
            peak = peak.max(self.select(b)?.into_iter().fold(f64::NEG_INFINITY, f64::max));
        }
        Ok(10.0 * peak.log10())
    }

    /// Median density over the bands, in dB.
    pub fn band_median_db(&self, bands: &[(f64, f64)]) -> Result<f64> {
        let mut v = Vec::new();
        for &b in bands {
            v.extend(self.select(b)?);
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let m = if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] };
        Ok(10.0 * m.log10())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,power_db\n");
        for (f, p) in self.freqs.iter().zip(&self.power_db) {
            let _ = writeln!(out, "{f},{p}");
        }
        out
    }
}

/// Averaged Hann-windowed periodograms, two-sided and centred on DC.
pub fn psd_welch(samples: &[Complex64], fs: f64, segment_len: usize, overlap_frac: f64) -> Result<Spectrum> {
    psd_welch_records(&[samples], fs, segment_len, overlap_frac)
}

/// Welch estimate pooled over separate records; no segment spans two records.
pub fn psd_welch_records(
    records: &[&[Complex64]],
    fs: f64,
    segment_len: usize,
    overlap_frac: f64,
) -> Result<Spectrum> {
    let longest = records.iter().map(|r| r.len()).max().unwrap_or(0);
    if segment_len == 0 || segment_len > longest {
        return Err(Error::Contract(format!(
            "{longest} samples are too few for {segment_len}-sample segments"
        )));
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::Contract(format!("overlap {overlap_frac} outside [0, 1)")));
    }
    let l = segment_len;
    let step = ((l as f64 * (1.0 - overlap_frac)).round() as usize).max(1);
    let win: Vec<f64> = (0..l).map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / l as f64).cos())).collect();
    let wpow: f64 = win.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(l);
    let mut acc = vec![0.0; l];
    let mut segments = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    for samples in records {
        let mut start = 0;
        while start + l <= samples.len() {
            for (b, (x, w)) in buf.iter_mut().zip(samples[start..start + l].iter().zip(&win)) {
                *b = x * w;
            }
            fft.process(&mut buf);
            for (a, z) in acc.iter_mut().zip(&buf) {
                *a += z.norm_sqr();
            }
            segments += 1;
            start += step;
        }
    }
    let scale = 1.0 / (fs * wpow * segments as f64);
    let half = l / 2;
    let mut freqs = Vec::with_capacity(l);
    let mut power_db = Vec::with_capacity(l);
    for i in 0..l {
        let k = (i + l - half) % l;
        freqs.push((i as f64 - half as f64) * fs / l as f64);
        power_db.push(10.0 * (acc[k] * scale).max(1e-300).log10());
    }
    Ok(Spectrum {
        freqs,
        power_db,
        resolution: fs / l as f64,
        segments,
    })
}

/// Mean in-band density minus peak out-of-band density, in dB.
pub fn oob_attenuation(spec: &Spectrum, inband: (f64, f64), oob: &[(f64, f64)]) -> Result<f64> {
    if oob.is_empty() {
        return Err(Error::Contract("no out-of-band interval given".into()));
    }
    Ok(spec.band_mean_db(inband)? - spec.band_peak_db(oob)?)
}

/// Measurement bands for a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bands {
    pub inband: (f64, f64),
    pub oob_low: (f64, f64),
    pub oob_high: (f64, f64),
}

impl Bands {
    /// In-band is the centred allocation; out-of-band runs from the later of
    /// (edge + guard) and (`stop_edge_hz` + two bins) to ±fs/2.
    pub fn new(bandwidth: f64, fs: f64, guard: f64, stop_edge_hz: f64, bin: f64) -> Result<Self> {
        let start = (bandwidth / 2.0 + guard).max(stop_edge_hz + 2.0 * bin);
        let nyq = fs / 2.0;
        if start >= nyq {
            return Err(Error::Config(format!(
                "out-of-band interval starts at {start} Hz, beyond fs/2 = {nyq} Hz"
            )));
        }
        Ok(Self {
            inband: (-bandwidth / 2.0, bandwidth / 2.0),
            oob_low: (-nyq, -start),
            oob_high: (start, nyq),
        })
    }

    pub fn oob(&self) -> [(f64, f64); 2] {
        [self.oob_low, self.oob_high]
    }
}

/// Bit errors between two equal-length streams.
pub fn bit_errors(tx: &[u8], rx: &[u8]) -> Result<usize> {
    if tx.len() != rx.len() {
        return Err(Error::Length {
            what: "bit streams",
            expected: tx.len(),
            got: rx.len(),
        });
    }
    Ok(tx.iter().zip(rx).filter(|(a, b)| (*a ^ *b) & 1 == 1).count())
}

pub fn ber(tx: &[u8], rx: &[u8]) -> Result<f64> {
    let e = bit_errors(tx, rx)?;
    Ok(if tx.is_empty() { 0.0 } else { e as f64 / tx.len() as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerRecord {
    pub kind: String,
    pub word_length: String,
    pub channel: String,
    pub dme: bool,
    pub variant: String,
    pub snr_db: f64,
    pub bits_total: u64,
    pub bits_error: u64,
    pub detection_failures: u64,
}

impl BerRecord {
    pub const HEADER: &'static str =
        "kind,word_length,channel,dme,variant,snr_db,bits_total,bits_error,ber,detection_failures";

    pub fn ber(&self) -> f64 {
        if self.bits_total == 0 {
            0.0
        } else {
            self.bits_error as f64 / self.bits_total as f64
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:e},{}",
            self.kind,
            self.word_length,
            self.channel,
            self.dme,
            self.variant,
            self.snr_db,
            self.bits_total,
            self.bits_error,
            self.ber(),
            self.detection_failures
        )
    }

    /// 95% Wilson score interval for the error rate.
    pub fn interval(&self) -> (f64, f64) {
        wilson_interval(self.bits_error, self.bits_total, 1.959_963_984_540_054)
    }
}

pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn tone(f0: f64, fs: f64, n: usize) -> Vec<Complex64> {
        (0..n).map(|i| Complex64::from_polar(1.0, 2.0 * PI * f0 * i as f64 / fs)).collect()
    }

    fn noise(n: usize, seed: u64) -> Vec<Complex64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = 0.5f64.sqrt();
        (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut r);
                let b: f64 = StandardNormal.sample(&mut r);
                Complex64::new(a * s, b * s)
            })
            .collect()
    }

    #[test]
    fn tone_peak_lands_on_its_bin() {
        let fs = 1e6;
        let f0 = 125e3;
        let s = psd_welch(&tone(f0, fs, 4096), fs, 256, 0.5).unwrap();
        let k = (0..s.power_db.len()).max_by(|&a, &b| s.power_db[a].total_cmp(&s.power_db[b])).unwrap();
        assert!((s.freqs[k] - f0).abs() < 1e-6);
        assert!((s.total_power() - 1.0).abs() < 0.01);
    }

    #[test]
    fn white_noise_is_flat() {
        let fs = 1e6;
        let x = noise(1 << 16, 3);
        let s = psd_welch(&x, fs, 256, 0.5).unwrap();
        let expect = 10.0 * (1.0 / fs).log10();
        let mean: f64 = s.power_db.iter().sum::<f64>() / s.power_db.len() as f64;
        assert!((mean - expect).abs() < 0.3, "{mean} vs {expect}");
        let p = x.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64;
        assert!((s.total_power() / p - 1.0).abs() < 0.01);
        // Per-bin spread tightens with more segments.
        let spread = |n: usize| {
            let s = psd_welch(&x[..n], fs, 256, 0.0).unwrap();
            let lin = s.linear();
            let m = lin.iter().sum::<f64>() / lin.len() as f64;
            (lin.iter().map(|v| (v / m - 1.0).powi(2)).sum::<f64>() / lin.len() as f64).sqrt()
        };
        let (few, many) = (spread(256 * 16), spread(256 * 256));
        assert!((few / many / 4.0 - 1.0).abs() < 0.25, "{few} {many}");
    }

    #[test]
    fn scaling_shifts_density() {
        let x = noise(8192, 4);
        let y: Vec<Complex64> = x.iter().map(|z| z * 3.0).collect();
        let (a, b) = (psd_welch(&x, 1.0, 256, 0.5).unwrap(), psd_welch(&y, 1.0, 256, 0.5).unwrap());
        let d = 20.0 * 3f64.log10();
        assert!(a.power_db.iter().zip(&b.power_db).all(|(p, q)| (q - p - d).abs() < 1e-9));
        let bands = [(-0.5, -0.3), (0.3, 0.5)];
        let (oa, ob) = (
            oob_attenuation(&a, (-0.2, 0.2), &bands).unwrap(),
            oob_attenuation(&b, (-0.2, 0.2), &bands).unwrap(),
        );
        assert!((oa - ob).abs() < 1e-9);
    }

    #[test]
    fn attenuation_examples() {
        let freqs: Vec<f64> = (0..100).map(|i| i as f64 - 50.0).collect();
        let flat = Spectrum { freqs: freqs.clone(), power_db: vec![-20.0; 100], resolution: 1.0, segments: 1 };
        assert!(oob_attenuation(&flat, (-10.0, 10.0), &[(30.0, 49.0)]).unwrap().abs() < 1e-12);
        let brick = Spectrum {
            power_db: freqs.iter().map(|f| if f.abs() <= 20.0 { 0.0 } else { -60.0 }).collect(),
            freqs,
            resolution: 1.0,
            segments: 1,
        };
        let a = oob_attenuation(&brick, (-20.0, 20.0), &[(-50.0, -25.0), (25.0, 49.0)]).unwrap();
        assert!((a - 60.0).abs() < 1e-9);
        assert!(oob_attenuation(&brick, (-20.0, 20.0), &[(60.0, 70.0)]).is_err());
        assert!(psd_welch(&noise(100, 1), 1.0, 256, 0.5).is_err());
    }

    #[test]
    fn ber_examples() {
        let a: Vec<u8> = (0..864).map(|i| (i % 3 == 0) as u8).collect();
        assert_eq!(ber(&a, &a).unwrap(), 0.0);
        let inv: Vec<u8> = a.iter().map(|b| b ^ 1).collect();
        assert_eq!(ber(&a, &inv).unwrap(), 1.0);
        let mut one = a.clone();
        one[100] ^= 1;
        assert_eq!(ber(&a, &one).unwrap(), 1.0 / 864.0);
        assert_eq!(ber(&one, &a).unwrap(), ber(&a, &one).unwrap());
        assert!(ber(&a, &a[1..]).is_err());
    }

    #[test]
    fn wilson_brackets_estimate() {
        let (lo, hi) = wilson_interval(10, 1000, 1.96);
        assert!(lo < 0.01 && 0.01 < hi);
        assert_eq!(wilson_interval(0, 1000, 1.96).0, 0.0);
    }
}
