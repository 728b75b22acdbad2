//! Equiripple low-pass design (Parks-McClellan / Remez exchange) for the
//! FOFDM filter, the WOLA edge windows, and coefficient quantization.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::FxFormat;

/// Frequencies are normalized so that 1.0 is the Nyquist frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_norm: f64,
    pub transition_norm: f64,
    pub grid_density: usize,
    pub max_iterations: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            order: 150,
            cutoff_norm: 0.86,
            transition_norm: 0.02,
            grid_density: 16,
            max_iterations: 40,
        }
    }
}

impl FilterSpec {
    pub fn passband_edge(&self) -> f64 {
        self.cutoff_norm - self.transition_norm / 2.0
    }

    pub fn stopband_edge(&self) -> f64 {
        self.cutoff_norm + self.transition_norm / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order % 2 != 0 {
            return Err(Error::Config(format!(
                "filter order {} must be even and positive",
                self.order
            )));
        }
        let (fp, fs) = (self.passband_edge(), self.stopband_edge());
        if !(0.0 < fp && fp < fs && fs < 1.0) {
            return Err(Error::Config(format!(
                "band edges {fp} / {fs} must satisfy 0 < fp < fs < 1"
            )));
        }
        if self.grid_density == 0 || self.max_iterations == 0 {
            return Err(Error::Config("grid density and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirDesign {
    pub coeffs: Vec<f64>,
    /// Final weighted equiripple deviation.
    pub deviation: f64,
    pub passband_ripple_db: f64,
    pub stopband_attenuation_db: f64,
    pub iterations: usize,
    /// Final extremal set, normalized frequency.
    pub extremal_freqs: Vec<f64>,
}

/// Equal-weight type-I low-pass design over [0, fp] and [fs, 1].
pub fn design_lowpass_pm(spec: &FilterSpec) -> Result<FirDesign> {
    spec.validate()?;
    let m = spec.order / 2;
    let nfcns = m + 1;
    let (fp, fs) = (spec.passband_edge(), spec.stopband_edge());

    // Dense grid in normalized frequency, points spread in proportion to band width.
    let total = (spec.grid_density * nfcns) as f64;
    let span = fp + (1.0 - fs);
    let band = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((total * (hi - lo) / span).round() as usize).max(2);
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    let mut grid = band(0.0, fp);
    let n_pass = grid.len();
    grid.extend(band(fs, 1.0));
    let desired: Vec<f64> = (0..grid.len()).map(|i| if i < n_pass { 1.0 } else { 0.0 }).collect();
    let xg: Vec<f64> = grid.iter().map(|f| (PI * f).cos()).collect();

    let r = nfcns + 1;
    let mut ext: Vec<usize> = (0..r)
        .map(|k| k * (grid.len() - 1) / (r - 1))
        .collect();

    let mut last_delta = f64::NAN;
    for iter in 1..=spec.max_iterations {
        let x: Vec<f64> = ext.iter().map(|&i| xg[i]).collect();
        let b = barycentric_weights(&x);
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..r {
            num += b[k] * desired[ext[k]];
            den += b[k] * if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        let delta = num / den;
        let interp_x = &x[..nfcns];
        let interp_c: Vec<f64> = (0..nfcns)
            .map(|k| desired[ext[k]] - if k % 2 == 0 { delta } else { -delta })
            .collect();
        let interp_w = barycentric_weights(interp_x);
        let amp = |xv: f64| barycentric_eval(interp_x, &interp_w, &interp_c, xv);

        let err: Vec<f64> = xg
            .iter()
            .zip(&desired)
            .map(|(&xv, &d)| d - amp(xv))
            .collect();
        let max_err = err.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        let settled = (max_err - delta.abs()) / delta.abs() < 1e-6
            || ((delta.abs() - last_delta.abs()) / delta.abs()).abs() < 1e-6;
        if settled && iter > 1 {
            let coeffs = coefficients_from_amplitude(m, amp);
            return Ok(finish(coeffs, delta.abs(), iter, ext.iter().map(|&i| grid[i]).collect(), fp, fs));
        }
        last_delta = delta;

        let next = select_extrema(&err, n_pass, r, delta.abs());
        match next {
            Some(e) => ext = e,
            None => {
                return Err(Error::Design {
                    iterations: iter,
                    residual: (max_err - delta.abs()) / delta.abs(),
                })
            }
        }
        if iter == spec.max_iterations {
            return Err(Error::Design {
                iterations: iter,
                residual: (max_err - delta.abs()) / delta.abs(),
            });
        }
    }
    unreachable!("loop returns on its final iteration")
}

fn finish(coeffs: Vec<f64>, deviation: f64, iterations: usize, extremal_freqs: Vec<f64>, fp: f64, fs: f64) -> FirDesign {
    let dense = 8192;
    let (mut pass_dev, mut stop_peak) = (0.0f64, 0.0f64);
    for i in 0..=dense {
        let f = i as f64 / dense as f64;
        let a = amplitude_response(&coeffs, f);
        if f <= fp {
            pass_dev = pass_dev.max((a - 1.0).abs());
        } else if f >= fs {
            stop_peak = stop_peak.max(a.abs());
        }
    }
    FirDesign {
        coeffs,
        deviation,
        passband_ripple_db: 20.0 * ((1.0 + pass_dev) / (1.0 - pass_dev)).log10(),
        stopband_attenuation_db: -20.0 * stop_peak.log10(),
        iterations,
        extremal_freqs,
    }
}

/// Barycentric weights 1/prod(x_k - x_j), rescaled to avoid overflow.
fn barycentric_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut logs = vec![0.0; n];
    let mut signs = vec![1.0; n];
    for k in 0..n {
        for j in 0..n {
            if j != k {
                let d = x[k] - x[j];
                logs[k] -= d.abs().ln();
                if d < 0.0 {
                    signs[k] = -signs[k];
                }
            }
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    logs.iter().zip(signs).map(|(l, s)| s * (l - top).exp()).collect()
}

fn barycentric_eval(x: &[f64], w: &[f64], c: &[f64], xv: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..x.len() {
        let d = xv - x[k];
        if d == 0.0 {
            return c[k];
        }
        let t = w[k] / d;
        num += t * c[k];
        den += t;
    }
    num / den
}

/// New extremal set: local extrema of the error with alternating signs,
/// trimmed at the ends to exactly `r` points.
fn select_extrema(err: &[f64], n_pass: usize, r: usize, delta: f64) -> Option<Vec<usize>> {
    let n = err.len();
    let band_of = |i: usize| (i >= n_pass) as u8;
    let mut cand = Vec::new();
    for i in 0..n {
        let e = err[i].abs();
        if e < delta * (1.0 - 1e-9) {
            continue;
        }
        let left = i > 0 && band_of(i - 1) == band_of(i);
        let right = i + 1 < n && band_of(i + 1) == band_of(i);
        let ge_left = !left || e >= err[i - 1].abs() || err[i - 1].signum() != err[i].signum();
        let ge_right = !right || e > err[i + 1].abs() || err[i + 1].signum() != err[i].signum();
        if ge_left && ge_right {
            cand.push(i);
        }
    }
    // Collapse runs of equal sign to their largest member.
    let mut alt: Vec<usize> = Vec::with_capacity(cand.len());
    for i in cand {
        match alt.last_mut() {
            Some(last) if err[*last].signum() == err[i].signum() => {
                if err[i].abs() > err[*last].abs() {
                    *last = i;
                }
            }
            _ => alt.push(i),
        }
    }
    while alt.len() > r {
        if err[alt[0]].abs() < err[alt[alt.len() - 1]].abs() {
            alt.remove(0);
        } else {
            alt.pop();
        }
    }
    (alt.len() == r).then_some(alt)
}

/// Impulse response of length 2m+1 from the zero-phase amplitude A(cos w).
fn coefficients_from_amplitude(m: usize, amp: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = 2 * m + 1;
    let samples: Vec<f64> = (0..n)
        .map(|j| amp((2.0 * PI * j as f64 / n as f64).cos()))
        .collect();
    let mut h = vec![0.0; n];
    for k in 0..=m {
        let v: f64 = samples
            .iter()
            .enumerate()
            .map(|(j, a)| a * (2.0 * PI * (j * k) as f64 / n as f64).cos())
            .sum::<f64>()
            / n as f64;
        h[m - k] = v;
        h[m + k] = v;
    }
    h
}

/// Zero-phase amplitude of a symmetric odd-length filter at normalized `f`.
pub fn amplitude_response(coeffs: &[f64], f: f64) -> f64 {
    let m = coeffs.len() / 2;
    let w = PI * f;
    coeffs[m]
        + 2.0
            * (1..=m)
                .map(|k| coeffs[m - k] * (k as f64 * w).cos())
                .sum::<f64>()
}

/// Complex frequency response H(e^{jw}) at normalized `f`.
pub fn freq_response(coeffs: &[f64], f: f64) -> Complex64 {
    let w = PI * f;
    coeffs
        .iter()
        .enumerate()
        .map(|(n, &c)| c * Complex64::from_polar(1.0, -w * n as f64))
        .sum()
}

pub fn magnitude_db(coeffs: &[f64], f: f64) -> f64 {
    20.0 * freq_response(coeffs, f).norm().max(1e-300).log10()
}

/// Peak stopband magnitude in dB (negative) over [stop_edge, 1].
pub fn stopband_peak_db(coeffs: &[f64], stop_edge: f64) -> f64 {
    let n = 4096;
    (0..=n)
        .map(|i| stop_edge + (1.0 - stop_edge) * i as f64 / n as f64)
        .map(|f| magnitude_db(coeffs, f))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// CSV report of the magnitude response: `freq_norm,magnitude_db`.
pub fn response_csv(coeffs: &[f64], points: usize) -> String {
    let mut out = String::from("freq_norm,magnitude_db\n");
    for i in 0..points {
        let f = i as f64 / (points - 1).max(1) as f64;
        let _ = writeln!(out, "{f},{}", magnitude_db(coeffs, f));
    }
    out
}

/// One coefficient per line at full precision.
pub fn coeffs_to_text(coeffs: &[f64]) -> String {
    coeffs.iter().map(|c| format!("{c:e}\n")).collect()
}

pub fn coeffs_from_text(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                column: 1,
                message: format!("`{}` is not a coefficient", l.trim()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCoeffs {
    pub codes: Vec<i64>,
    pub fmt: FxFormat,
}

impl QuantizedCoeffs {
    pub fn values(&self) -> Vec<f64> {
        self.codes.iter().map(|&c| self.fmt.dequantize(c)).collect()
    }

    /// How many dB the stopband peak rose relative to `reference`.
    pub fn attenuation_loss_db(&self, reference: &[f64], stop_edge: f64) -> f64 {
        stopband_peak_db(&self.values(), stop_edge) - stopband_peak_db(reference, stop_edge)
    }
}

pub fn quantize_coeffs(coeffs: &[f64], fmt: FxFormat) -> QuantizedCoeffs {
    QuantizedCoeffs {
        codes: coeffs.iter().map(|&c| fmt.quantize(c)).collect(),
        fmt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub n: usize,
    pub cp: usize,
    pub w: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { n: 64, cp: 11, w: 8 }
    }
}

impl WindowSpec {
    pub fn tx_length(&self) -> usize {
        self.n + self.cp + 2 * self.w
    }

    /// Receiver overlap (and taper) length, ⌈CP/2⌉.
    pub fn rx_overlap(&self) -> usize {
        self.cp.div_ceil(2)
    }

    pub fn rx_length(&self) -> usize {
        self.n + self.rx_overlap()
    }

    /// Head samples discarded at the receiver, W + ⌊CP/2⌋.
    pub fn rx_discard_head(&self) -> usize {
        self.w + self.cp / 2
    }

    pub fn rx_discard_tail(&self) -> usize {
        self.w
    }
}

/// Raised-cosine rising edge of `len` samples; never reaches 0 or 1.
pub fn taper_rise(len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| 0.5 * (1.0 - (PI * (k + 1) as f64 / (len + 1) as f64).cos()))
        .collect()
}

fn edge_window(len: usize, taper: usize) -> Vec<f64> {
    let rise = taper_rise(taper);
    let mut w = vec![1.0; len];
    for k in 0..taper {
        w[k] = rise[k];
        w[len - 1 - k] = rise[k];
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct WolaWindows {
    pub tx: Vec<f64>,
    pub rx: Vec<f64>,
}

impl WolaWindows {
    /// Head coefficients P1 (W taper then CP ones) used by the stream window.
    pub fn p1(&self, spec: &WindowSpec) -> Vec<f64> {
        self.tx[..spec.w + spec.cp].to_vec()
    }

    /// Tail coefficients P2 (falling taper).
    pub fn p2(&self, spec: &WindowSpec) -> Vec<f64> {
        self.tx[self.tx.len() - spec.w..].to_vec()
    }
}

/// TX window tapers over W samples at both ends; the RX window tapers over
/// the ⌈CP/2⌉ samples that are folded back by overlap-add.
pub fn design_rrc_window(spec: &WindowSpec) -> Result<WolaWindows> {
    if spec.n == 0 || spec.w > spec.cp + spec.n || spec.cp > spec.n {
        return Err(Error::Config(format!("invalid window spec {spec:?}")));
    }
    Ok(WolaWindows {
        tx: edge_window(spec.tx_length(), spec.w),
        rx: edge_window(spec.rx_length(), spec.rx_overlap()),
    })
}
