//! Frame-mode signal chain for CP-OFDM, WOLA-OFDM and filtered OFDM.
//!
//! Samples travel as `Complex64`. In a fixed-point datapath every stage
//! output is snapped to its format grid, so the value is exactly a code of
//! that format and converts losslessly to [`FxComplex`] for the stream engine.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::coding::{
    self, BitFrame, InterleaverTable, ScramblerSequence, Termination, CODED_BITS,
};
use crate::error::{check_len, Error, Result};
use crate::filter_design::{self, FilterSpec, WindowSpec, WolaWindows};
use crate::framing::{self, PatternTable, SubcarrierMap, DC_BIN, FFT_LEN};
use crate::numeric::{mac, FxComplex, FxFormat};

pub const N: usize = FFT_LEN;
pub const CP: usize = 11;
pub const W: usize = 8;
pub const PREAMBLE_LEN: usize = 320;
pub const STS_PERIOD: usize = 16;
/// Frames per stimulus burst and resulting bit count.
pub const STIMULUS_FRAMES: usize = 36;
pub const STIMULUS_BITS: usize = STIMULUS_FRAMES * coding::FRAME_BITS;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WaveformKind {
    #[serde(rename = "OFDM")]
    Ofdm,
    #[serde(rename = "WOLA")]
    Wola,
    #[serde(rename = "FOFDM")]
    Fofdm,
}

impl WaveformKind {
    pub const ALL: [WaveformKind; 3] = [Self::Ofdm, Self::Wola, Self::Fofdm];
}

impl fmt::Display for WaveformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Self::Ofdm => "OFDM",
            Self::Wola => "WOLA",
            Self::Fofdm => "FOFDM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformConfig {
    pub kind: WaveformKind,
    pub cp: usize,
    /// WOLA taper length.
    pub w: usize,
    pub bandwidth_hz: f64,
    /// Double-precision datapath instead of fixed point.
    pub reference: bool,
    pub word_length: u32,
    /// Signal format as `Qm.n/WL`, overriding the default split of `word_length`.
    pub signal_format: Option<FxFormat>,
    /// Word length of the window/filter stages; defaults to `word_length`.
    pub shaping_word_length: Option<u32>,
    /// Pattern used for every data symbol of a burst; needs 48 data carriers.
    pub symbol_index: usize,
    pub pilot_value: [f64; 2],
    pub detect_threshold: f64,
    /// Scalar applied to received samples before quantization.
    pub rx_gain: f64,
    pub filter: FilterSpec,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            kind: WaveformKind::Ofdm,
            cp: CP,
            w: W,
            bandwidth_hz: 732e3,
            reference: false,
            word_length: 16,
            signal_format: None,
            shaping_word_length: None,
            symbol_index: 1,
            pilot_value: [1.0, 0.0],
            detect_threshold: 0.75,
            rx_gain: 1.0,
            filter: FilterSpec::default(),
        }
    }
}

impl WaveformConfig {
    pub fn new(kind: WaveformKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    /// Native sample rate: 64 bins spanning the 51 occupied carriers' bandwidth.
    pub fn sample_rate(&self) -> f64 {
        self.bandwidth_hz * N as f64 / (framing::ACTIVE_CARRIERS + 1) as f64
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            n: N,
            cp: self.cp,
            w: self.w,
        }
    }

    /// Samples per transmitted data symbol.
    pub fn symbol_len(&self) -> usize {
        match self.kind {
            WaveformKind::Wola => N + self.cp + 2 * self.w,
            _ => N + self.cp,
        }
    }

    /// Zero samples ahead of the preamble; room for the filter's leading ramp.
    pub fn lead_len(&self) -> usize {
        self.filter.order / 2
    }

    /// Burst length: lead-in, preamble, data and a zero tail, at least
    /// n + 7 symbol periods.
    pub fn burst_len(&self, n_symbols: usize) -> usize {
        let tail = self.filter.order / 2;
        (self.lead_len() + PREAMBLE_LEN + n_symbols * self.symbol_len() + tail)
            .max((n_symbols + 7) * self.symbol_len())
    }

    /// Sample range of the data symbols within a burst.
    pub fn payload_range(&self, n_symbols: usize) -> std::ops::Range<usize> {
        let start = self.lead_len() + PREAMBLE_LEN;
        start..start + n_symbols * self.symbol_len()
    }

    pub fn validate(&self) -> Result<()> {
        for wl in [Some(self.word_length), self.shaping_word_length].into_iter().flatten() {
            FxFormat::signal(wl)?;
        }
        if let Some(f) = self.signal_format {
            if f.word_length() != self.word_length {
                return Err(Error::Config(format!(
                    "signal_format {f} does not match word_length {}",
                    self.word_length
                )));
            }
        }
        if self.cp == 0 || self.cp >= N {
            return Err(Error::Config(format!("cyclic prefix {} out of range 1..63", self.cp)));
        }
        if self.kind == WaveformKind::Wola && self.w > self.cp + N {
            return Err(Error::Config(format!("taper length {} too long", self.w)));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.detect_threshold) {
            return Err(Error::Config("detect_threshold must lie in [0, 1]".into()));
        }
        if !(self.rx_gain > 0.0) {
            return Err(Error::Config("rx_gain must be positive".into()));
        }
        if self.symbol_index >= framing::SYMBOLS_PER_FRAME {
            return Err(Error::SymbolIndex(self.symbol_index));
        }
        if self.kind == WaveformKind::Fofdm {
            self.filter.validate()?;
        }
        Ok(())
    }
}

/// Formats of the fixed-point datapath; `None` everywhere for the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Datapath {
    pub signal: Option<FxFormat>,
    pub shaping: Option<FxFormat>,
    pub coeff: Option<FxFormat>,
}

impl Datapath {
    pub fn reference() -> Self {
        Self {
            signal: None,
            shaping: None,
            coeff: None,
        }
    }

    pub fn fixed(word_length: u32, shaping_word_length: u32) -> Result<Self> {
        Ok(Self {
            signal: Some(FxFormat::signal(word_length)?),
            shaping: Some(FxFormat::signal(shaping_word_length)?),
            coeff: Some(FxFormat::coeff(shaping_word_length)?),
        })
    }

    pub fn from_config(cfg: &WaveformConfig) -> Result<Self> {
        if cfg.reference {
            Ok(Self::reference())
        } else {
            let mut dp = Self::fixed(cfg.word_length, cfg.shaping_word_length.unwrap_or(cfg.word_length))?;
            if let Some(f) = cfg.signal_format {
                dp.signal = Some(f);
                if cfg.shaping_word_length.is_none() {
                    dp.shaping = Some(f);
                }
            }
            Ok(dp)
        }
    }

    pub fn is_fixed(&self) -> bool {
        self.signal.is_some()
    }

    pub fn q(&self, z: Complex64) -> Complex64 {
        self.signal.map_or(z, |f| f.snap_complex(z))
    }

    pub fn q_all(&self, v: &mut [Complex64]) {
        if let Some(f) = self.signal {
            v.iter_mut().for_each(|z| *z = f.snap_complex(*z));
        }
    }

    pub fn coeff_codes(&self, c: &[f64]) -> Option<Vec<i64>> {
        self.coeff.map(|f| c.iter().map(|&x| f.quantize(x)).collect())
    }

    /// Coefficients as the datapath sees them (snapped in fixed point).
    pub fn coeff_values(&self, c: &[f64]) -> Vec<f64> {
        match self.coeff {
            Some(f) => c.iter().map(|&x| f.snap(x)).collect(),
            None => c.to_vec(),
        }
    }

    /// Window multiply: signal-format input times coefficient, shaping-format output.
    /// Unit coefficients bypass the multiplier (format conversion only).
    pub fn scale(&self, z: Complex64, coeff: f64) -> Complex64 {
        match (self.signal, self.shaping, self.coeff) {
            (Some(sig), Some(out), _) if coeff == 1.0 => {
                FxComplex::from_complex(z, sig).convert(out).to_complex()
            }
            (Some(sig), Some(out), Some(cf)) => FxComplex::from_complex(z, sig)
                .scale(cf.quantize(coeff), cf, out)
                .to_complex(),
            _ => z * coeff,
        }
    }

    /// Format on the stream wire: the finer of the signal and shaping
    /// formats, which holds every value either produces exactly.
    pub fn wire(&self) -> Option<FxFormat> {
        match (self.signal, self.shaping) {
            (Some(a), Some(b)) => Some(if a.frac_bits() >= b.frac_bits() { a } else { b }),
            (a, _) => a,
        }
    }

    /// One FIR output from the delay line `taps` (newest first) and coefficients.
    pub fn fir_point(&self, taps: &[FxComplex], codes: &[i64]) -> FxComplex {
        let (out, cf) = (self.shaping.expect("fixed datapath"), self.coeff.expect("fixed datapath"));
        let frac = taps.first().map_or(0, |t| t.fmt.frac_bits()) + cf.frac_bits();
        let re = mac(taps.iter().map(|t| t.re), codes);
        let im = mac(taps.iter().map(|t| t.im), codes);
        FxComplex {
            re: out.requantize(re, frac),
            im: out.requantize(im, frac),
            fmt: out,
        }
    }
}

fn plan(inverse: bool) -> Arc<dyn Fft<f64>> {
    static FWD: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    static INV: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    let cell = if inverse { &INV } else { &FWD };
    cell.get_or_init(|| {
        let mut p = FftPlanner::new();
        if inverse {
            p.plan_fft_inverse(N)
        } else {
            p.plan_fft_forward(N)
        }
    })
    .clone()
}

/// Inverse DFT with 1/64 scaling, natural bin order.
pub fn ifft64(grid: &[Complex64]) -> Result<Vec<Complex64>> {
    check_len("ifft input", N, grid.len())?;
    let mut buf = grid.to_vec();
    plan(true).process(&mut buf);
    let s = 1.0 / N as f64;
    buf.iter_mut().for_each(|z| *z *= s);
    Ok(buf)
}

/// Forward DFT without scaling, natural bin order.
pub fn fft64(samples: &[Complex64]) -> Result<Vec<Complex64>> {
    check_len("fft input", N, samples.len())?;
    let mut buf = samples.to_vec();
    plan(false).process(&mut buf);
    Ok(buf)
}

/// Shifted (DC in the middle) to natural order.
pub fn ifftshift(grid: &[Complex64]) -> Vec<Complex64> {
    let h = grid.len() / 2;
    grid[h..].iter().chain(&grid[..h]).copied().collect()
}

/// Natural to shifted order.
pub fn fftshift(grid: &[Complex64]) -> Vec<Complex64> {
    let h = grid.len().div_ceil(2);
    grid[h..].iter().chain(&grid[..h]).copied().collect()
}

pub fn add_cp(symbol: &[Complex64], cp: usize) -> Result<Vec<Complex64>> {
    check_len("cp input", N, symbol.len())?;
    Ok(symbol[N - cp..].iter().chain(symbol).copied().collect())
}

pub fn remove_cp(samples: &[Complex64], cp: usize) -> Result<Vec<Complex64>> {
    check_len("cp removal input", N + cp, samples.len())?;
    Ok(samples[cp..].to_vec())
}

/// Prefix of CP+W samples and suffix of W samples.
pub fn wola_extend(symbol: &[Complex64], cp: usize, w: usize) -> Result<Vec<Complex64>> {
    check_len("wola input", N, symbol.len())?;
    let pre = cp + w;
    Ok(symbol[N - pre..]
        .iter()
        .chain(symbol)
        .chain(&symbol[..w])
        .copied()
        .collect())
}

pub fn apply_tx_window(sym: &[Complex64], window: &[f64]) -> Result<Vec<Complex64>> {
    check_len("window input", window.len(), sym.len())?;
    Ok(sym.iter().zip(window).map(|(z, w)| z * w).collect())
}

/// Receive one extended symbol: drop W + ⌊CP/2⌋ head and W tail samples,
/// window the remaining N + ⌈CP/2⌉, and fold the leading ⌈CP/2⌉ onto the end.
pub fn wola_receive_symbol(
    sym: &[Complex64],
    rx_window: &[f64],
    spec: &WindowSpec,
) -> Result<Vec<Complex64>> {
    wola_receive_with(sym, rx_window, spec, |z, c| z * c)
}

fn wola_receive_with(
    sym: &[Complex64],
    rx_window: &[f64],
    spec: &WindowSpec,
    mul: impl Fn(Complex64, f64) -> Complex64,
) -> Result<Vec<Complex64>> {
    check_len("wola receive input", spec.tx_length(), sym.len())?;
    check_len("rx window", spec.rx_length(), rx_window.len())?;
    let head = spec.rx_discard_head();
    let kept = &sym[head..head + spec.rx_length()];
    let ov = spec.rx_overlap();
    let windowed: Vec<Complex64> = kept.iter().zip(rx_window).map(|(&z, &c)| mul(z, c)).collect();
    let mut out = windowed[ov..].to_vec();
    for k in 0..ov {
        out[spec.n - ov + k] += windowed[k];
    }
    Ok(out)
}

/// Receive a run of back-to-back extended symbols.
pub fn wola_receive(
    stream: &[Complex64],
    rx_window: &[f64],
    spec: &WindowSpec,
) -> Result<Vec<Vec<Complex64>>> {
    let l = spec.tx_length();
    if stream.len() < l {
        return Err(Error::Contract(format!(
            "stream of {} samples is shorter than one {l}-sample symbol",
            stream.len()
        )));
    }
    stream
        .chunks_exact(l)
        .map(|s| wola_receive_symbol(s, rx_window, spec))
        .collect()
}

/// Zero-padded linear convolution, advanced by the group delay so that
/// output n lines up with input n. Output length equals input length.
pub fn fofdm_filter(samples: &[Complex64], coeffs: &[f64]) -> Vec<Complex64> {
    let delay = coeffs.len() / 2;
    (0..samples.len())
        .map(|n| {
            let t = n + delay;
            coeffs
                .iter()
                .enumerate()
                .filter_map(|(k, &c)| t.checked_sub(k).and_then(|i| samples.get(i)).map(|x| x * c))
                .sum()
        })
        .collect()
}

/// Fixed-point version of [`fofdm_filter`] sharing the stream FIR kernel.
pub fn fofdm_filter_fixed(samples: &[Complex64], codes: &[i64], dp: &Datapath) -> Vec<Complex64> {
    let sig = dp.signal.expect("fixed datapath");
    let x: Vec<FxComplex> = samples.iter().map(|&z| FxComplex::from_complex(z, sig)).collect();
    let zero = FxComplex::zero(sig);
    let delay = codes.len() / 2;
    let mut taps = vec![zero; codes.len()];
    (0..samples.len())
        .map(|n| {
            let t = n + delay;
            for (k, tap) in taps.iter_mut().enumerate() {
                *tap = t.checked_sub(k).and_then(|i| x.get(i)).copied().unwrap_or(zero);
            }
            dp.fir_point(&taps, codes).to_complex()
        })
        .collect()
}

const STS_FREQ: [(i32, f64, f64); 12] = [
    (-24, 1.0, 1.0),
    (-20, -1.0, -1.0),
    (-16, 1.0, 1.0),
    (-12, -1.0, -1.0),
    (-8, -1.0, -1.0),
    (-4, 1.0, 1.0),
    (4, -1.0, -1.0),
    (8, -1.0, -1.0),
    (12, 1.0, 1.0),
    (16, 1.0, 1.0),
    (20, 1.0, 1.0),
    (24, 1.0, 1.0),
];

fn normalize_power(v: &mut [Complex64], target: f64) {
    let p = v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64;
    let s = (target / p).sqrt();
    v.iter_mut().for_each(|z| *z *= s);
}

/// Ten short training periods and a guarded double long training symbol,
/// 802.11a style, on the active carriers only, at data-symbol power.
pub fn default_preamble() -> Vec<Complex64> {
    let data_power = framing::ACTIVE_CARRIERS as f64 / (N * N) as f64;
    let mut sts_grid = vec![ZERO; N];
    for &(k, re, im) in &STS_FREQ {
        sts_grid[(DC_BIN as i32 + k) as usize] = Complex64::new(re, im);
    }
    let mut sts = ifft64(&ifftshift(&sts_grid)).expect("64 bins");
    normalize_power(&mut sts, data_power);
    let mut lts = ifft64(&ifftshift(&framing::lts_grid())).expect("64 bins");
    normalize_power(&mut lts, data_power);
    let mut out: Vec<Complex64> = (0..160).map(|i| sts[i % STS_PERIOD]).collect();
    out.extend_from_slice(&lts[32..]);
    out.extend_from_slice(&lts);
    out.extend_from_slice(&lts);
    out
}

/// Plain text, one `re im` pair per line (comma also accepted).
pub fn preamble_from_text(text: &str) -> Result<Vec<Complex64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        let bad = |m: String| Error::Parse {
            line: i + 1,
            column: 1,
            message: m,
        };
        if parts.len() != 2 {
            return Err(bad(format!("expected `re im`, found `{line}`")));
        }
        let re = parts[0].parse().map_err(|_| bad(format!("`{}` is not a number", parts[0])))?;
        let im = parts[1].parse().map_err(|_| bad(format!("`{}` is not a number", parts[1])))?;
        out.push(Complex64::new(re, im));
    }
    check_len("preamble file", PREAMBLE_LEN, out.len())?;
    Ok(out)
}

pub fn preamble_to_text(p: &[Complex64]) -> String {
    p.iter().map(|z| format!("{:e} {:e}\n", z.re, z.im)).collect()
}

/// `lead` zeros, the preamble and the symbols, zero-padded to `total` samples.
pub fn add_preamble(
    preamble: &[Complex64],
    symbols: &[Vec<Complex64>],
    lead: usize,
    total: usize,
) -> Vec<Complex64> {
    let mut out = vec![ZERO; lead];
    out.extend_from_slice(preamble);
    for s in symbols {
        out.extend_from_slice(s);
    }
    if out.len() < total {
        out.resize(total, ZERO);
    }
    out
}

/// Normalized lag-16 delay-and-correlate metric at `n` over a 64-sample window.
fn sc_metric(r: &[Complex64], n: usize) -> f64 {
    const WIN: usize = 64;
    let (mut p, mut e1, mut e2) = (ZERO, 0.0, 0.0);
    for m in n..n + WIN {
        let (a, b) = (r[m], r[m + STS_PERIOD]);
        p += a.conj() * b;
        e1 += a.norm_sqr();
        e2 += b.norm_sqr();
    }
    if e1 * e2 > 0.0 {
        p.norm_sqr() / (e1 * e2)
    } else {
        0.0
    }
}

/// Index of the first data sample after the preamble.
///
/// Coarse timing is the first point where the short-training autocorrelation
/// metric reaches `threshold`; fine timing is the peak of the matched filter
/// against the double long training symbol within one preamble length after it.
pub fn detect_preamble(stream: &[Complex64], preamble: &[Complex64], threshold: f64) -> Result<usize> {
    const WIN: usize = 64;
    let lts2 = &preamble[PREAMBLE_LEN - 128..];
    if stream.len() < WIN + STS_PERIOD + 128 {
        return Err(Error::Detection { best_metric: 0.0 });
    }
    let mut best = 0.0f64;
    let mut coarse = None;
    for n in 0..stream.len() - WIN - STS_PERIOD {
        let m = sc_metric(stream, n);
        best = best.max(m);
        if m >= threshold {
            coarse = Some(n);
            break;
        }
    }
    let c = coarse.ok_or(Error::Detection { best_metric: best })?;
    let last = stream.len() - lts2.len();
    let (lo, hi) = (c, (c + PREAMBLE_LEN).min(last));
    if lo > hi {
        return Err(Error::Detection { best_metric: best });
    }
    let mut peak = (lo, -1.0);
    for n in lo..=hi {
        let corr: Complex64 = lts2
            .iter()
            .zip(&stream[n..])
            .map(|(p, r)| p.conj() * r)
            .sum();
        if corr.norm_sqr() > peak.1 {
            peak = (n, corr.norm_sqr());
        }
    }
    Ok(peak.0 + lts2.len())
}

pub fn bpsk_map(bits: &[u8]) -> Vec<Complex64> {
    bits.iter()
        .map(|&b| Complex64::new(if b & 1 == 1 { 1.0 } else { -1.0 }, 0.0))
        .collect()
}

pub fn bpsk_demod(symbols: &[Complex64]) -> Vec<u8> {
    symbols.iter().map(|z| (z.re > 0.0) as u8).collect()
}

/// Common phase estimate from pilots of a shifted-order grid.
pub fn common_phase(grid: &[Complex64], map: &SubcarrierMap) -> f64 {
    map.pilot_pos
        .iter()
        .zip(&map.pilot_vals)
        .map(|(&p, v)| v.conj() * grid[p])
        .sum::<Complex64>()
        .arg()
}

/// Little-endian interleaved I/Q codes at the format's word width.
pub fn export_iq(samples: &[Complex64], fmt: FxFormat) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 2 * fmt.word_length() as usize / 8);
    for z in samples {
        for v in [fmt.quantize(z.re), fmt.quantize(z.im)] {
            match fmt.word_length() {
                8 => out.extend_from_slice(&(v as i8).to_le_bytes()),
                16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
                _ => out.extend_from_slice(&(v as i32).to_le_bytes()),
            }
        }
    }
    out
}

/// Tables and derived coefficients shared by all stages of one configuration.
#[derive(Debug, Clone)]
pub struct Transceiver {
    pub cfg: WaveformConfig,
    pub dp: Datapath,
    pub map: SubcarrierMap,
    pub scrambler: ScramblerSequence,
    pub interleaver: InterleaverTable,
    pub windows: WolaWindows,
    /// FOFDM taps as designed (empty for other kinds).
    pub filter: Vec<f64>,
    pub filter_codes: Option<Vec<i64>>,
    pub preamble: Vec<Complex64>,
}

/// Optional replacements for the bundled tables.
#[derive(Debug, Clone, Default)]
pub struct Tables {
    pub patterns: Option<PatternTable>,
    pub preamble: Option<Vec<Complex64>>,
    pub scrambler: Option<ScramblerSequence>,
    pub interleaver: Option<InterleaverTable>,
    pub filter: Option<Vec<f64>>,
}

impl Transceiver {
    pub fn new(cfg: &WaveformConfig) -> Result<Self> {
        Self::with_tables(cfg, Tables::default())
    }

    pub fn with_tables(cfg: &WaveformConfig, tables: Tables) -> Result<Self> {
        cfg.validate()?;
        let dp = Datapath::from_config(cfg)?;
        let pilot = Complex64::new(cfg.pilot_value[0], cfg.pilot_value[1]);
        let patterns = tables.patterns.unwrap_or_default().with_pilot_value(pilot);
        let map = patterns.get(cfg.symbol_index)?.clone();
        if map.data_len() != CODED_BITS {
            return Err(Error::Config(format!(
                "symbol index {} carries {} data symbols; a coded frame needs {CODED_BITS}",
                cfg.symbol_index,
                map.data_len()
            )));
        }
        let filter = match (cfg.kind, tables.filter) {
            (WaveformKind::Fofdm, Some(f)) => {
                if f.len() % 2 == 0 {
                    return Err(Error::Config("filter needs an odd number of taps".into()));
                }
                f
            }
            (WaveformKind::Fofdm, None) => design_filter_cached(&cfg.filter)?,
            _ => Vec::new(),
        };
        let filter_codes = dp.coeff_codes(&filter);
        let mut preamble = tables.preamble.unwrap_or_else(default_preamble);
        check_len("preamble", PREAMBLE_LEN, preamble.len())?;
        dp.q_all(&mut preamble);
        Ok(Self {
            cfg: cfg.clone(),
            dp,
            map,
            scrambler: tables.scrambler.unwrap_or_default(),
            interleaver: tables.interleaver.unwrap_or_default(),
            windows: filter_design::design_rrc_window(&cfg.window_spec())?,
            filter,
            filter_codes,
            preamble,
        })
    }

    pub fn kind(&self) -> WaveformKind {
        self.cfg.kind
    }

    pub fn symbol_len(&self) -> usize {
        self.cfg.symbol_len()
    }

    // ---- transmitter stages ----

    pub fn scramble(&self, f: &BitFrame) -> BitFrame {
        coding::scramble(f, &self.scrambler)
    }

    pub fn encode(&self, f: &BitFrame) -> Vec<u8> {
        coding::encode_with(f.bits(), Termination::TailBiting).expect("24-bit frame")
    }

    pub fn interleave(&self, coded: &[u8]) -> Vec<u8> {
        coding::interleave(coded, &self.interleaver).expect("48 coded bits")
    }

    pub fn bpsk(&self, bits: &[u8]) -> Vec<Complex64> {
        let mut s = bpsk_map(bits);
        self.dp.q_all(&mut s);
        s
    }

    /// Subcarrier mapping and IFFT: 48 data symbols to 64 time samples.
    pub fn modulate(&self, data: &[Complex64]) -> Vec<Complex64> {
        let grid = framing::map_symbol(data, &self.map).expect("48 data symbols");
        let mut t = ifft64(&ifftshift(&grid)).expect("64 bins");
        self.dp.q_all(&mut t);
        t
    }

    /// Cyclic prefix, or cyclic extension for WOLA (unwindowed).
    pub fn extend(&self, t: &[Complex64]) -> Vec<Complex64> {
        match self.kind() {
            WaveformKind::Wola => wola_extend(t, self.cfg.cp, self.cfg.w).expect("64 samples"),
            _ => add_cp(t, self.cfg.cp).expect("64 samples"),
        }
    }

    pub fn tx_window(&self, ext: &[Complex64]) -> Vec<Complex64> {
        ext.iter()
            .zip(&self.windows.tx)
            .map(|(&z, &c)| self.dp.scale(z, c))
            .collect()
    }

    /// Extended (and for WOLA windowed) time symbol for one frame.
    pub fn tx_symbol(&self, f: &BitFrame) -> Vec<Complex64> {
        let bits = self.interleave(&self.encode(&self.scramble(f)));
        let ext = self.extend(&self.modulate(&self.bpsk(&bits)));
        match self.kind() {
            WaveformKind::Wola => self.tx_window(&ext),
            _ => ext,
        }
    }

    pub fn assemble(&self, symbols: &[Vec<Complex64>]) -> Vec<Complex64> {
        add_preamble(
            &self.preamble,
            symbols,
            self.cfg.lead_len(),
            self.cfg.burst_len(symbols.len()),
        )
    }

    pub fn filter(&self, burst: &[Complex64]) -> Vec<Complex64> {
        match &self.filter_codes {
            Some(codes) => fofdm_filter_fixed(burst, codes, &self.dp),
            None => fofdm_filter(burst, &self.filter),
        }
    }

    pub fn tx_chain(&self, frames: &[BitFrame]) -> Vec<Complex64> {
        let symbols: Vec<Vec<Complex64>> = frames.iter().map(|f| self.tx_symbol(f)).collect();
        let burst = self.assemble(&symbols);
        match self.kind() {
            WaveformKind::Fofdm => self.filter(&burst),
            _ => burst,
        }
    }

    // ---- receiver stages ----

    pub fn rx_front(&self, samples: &[Complex64]) -> Vec<Complex64> {
        let g = self.cfg.rx_gain;
        samples.iter().map(|&z| self.dp.q(z * g)).collect()
    }

    pub fn detect(&self, burst: &[Complex64]) -> Result<usize> {
        detect_preamble(burst, &self.preamble, self.cfg.detect_threshold)
    }

    /// Cut `n` received symbols starting at `start`.
    pub fn split(&self, burst: &[Complex64], start: usize, n: usize) -> Result<Vec<Vec<Complex64>>> {
        let l = self.symbol_len();
        if start + n * l > burst.len() {
            return Err(Error::Detection { best_metric: 0.0 });
        }
        Ok((0..n).map(|i| burst[start + i * l..start + (i + 1) * l].to_vec()).collect())
    }

    /// CP removal, or WOLA discard/window/overlap-add, in the signal format.
    pub fn strip(&self, sym: &[Complex64]) -> Vec<Complex64> {
        let t = match self.kind() {
            WaveformKind::Wola => {
                let spec = self.cfg.window_spec();
                wola_receive_with(sym, &self.windows.rx, &spec, |z, c| self.dp.scale(z, c))
                    .expect("extended symbol")
            }
            _ => remove_cp(sym, self.cfg.cp).expect("cp symbol"),
        };
        t.into_iter().map(|z| self.dp.q(z)).collect()
    }

    /// FFT to a shifted-order grid.
    pub fn demodulate(&self, t: &[Complex64]) -> Vec<Complex64> {
        let mut g = fftshift(&fft64(t).expect("64 samples"));
        self.dp.q_all(&mut g);
        g
    }

    /// Pilot-based common phase correction followed by data extraction.
    pub fn equalize(&self, grid: &[Complex64]) -> Vec<Complex64> {
        let rot = Complex64::from_polar(1.0, -common_phase(grid, &self.map));
        let data = framing::demap_symbol(grid, &self.map).expect("64 bins");
        data.into_iter().map(|z| self.dp.q(z * rot)).collect()
    }

    pub fn demod(&self, data: &[Complex64]) -> Vec<u8> {
        bpsk_demod(data)
    }

    pub fn deinterleave(&self, bits: &[u8]) -> Vec<u8> {
        coding::deinterleave(bits, &self.interleaver).expect("48 bits")
    }

    pub fn decode(&self, coded: &[u8]) -> BitFrame {
        let bits = coding::decode_with(coded, Termination::TailBiting).expect("48 coded bits");
        BitFrame::from_slice(&bits).expect("24 bits")
    }

    pub fn descramble(&self, f: &BitFrame) -> BitFrame {
        coding::descramble(f, &self.scrambler)
    }

    /// Bits of one received, extended symbol.
    pub fn rx_symbol(&self, sym: &[Complex64]) -> BitFrame {
        let data = self.equalize(&self.demodulate(&self.strip(sym)));
        self.descramble(&self.decode(&self.deinterleave(&self.demod(&data))))
    }

    pub fn rx_chain(&self, samples: &[Complex64], n_frames: usize) -> Result<Vec<BitFrame>> {
        let mut burst = self.rx_front(samples);
        if self.kind() == WaveformKind::Fofdm {
            burst = self.filter(&burst);
        }
        let start = self.detect(&burst)?;
        Ok(self
            .split(&burst, start, n_frames)?
            .iter()
            .map(|s| self.rx_symbol(s))
            .collect())
    }
}

fn design_filter_cached(spec: &FilterSpec) -> Result<Vec<f64>> {
    use std::collections::HashMap;
    use std::sync::Mutex;
    static CACHE: OnceLock<Mutex<HashMap<String, Vec<f64>>>> = OnceLock::new();
    let key = format!("{spec:?}");
    let cache = CACHE.get_or_init(Default::default);
    if let Some(c) = cache.lock().expect("filter cache").get(&key) {
        return Ok(c.clone());
    }
    let c = filter_design::design_lowpass_pm(spec)?.coeffs;
    cache.lock().expect("filter cache").insert(key, c.clone());
    Ok(c)
}

/// Deterministic 864-bit stimulus split into 36 frames.
pub fn stimulus(seed: u64) -> Vec<BitFrame> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..STIMULUS_FRAMES)
        .map(|_| {
            let mut b = [0u8; coding::FRAME_BITS];
            b.iter_mut().for_each(|x| *x = rng.random_range(0..2));
            BitFrame(b)
        })
        .collect()
}

/// Complex exponential at `bin` (natural order), used in tests and probes.
pub fn tone(bin: usize, len: usize) -> Vec<Complex64> {
    (0..len)
        .map(|n| Complex64::from_polar(1.0, 2.0 * PI * (bin * n) as f64 / N as f64))
        .collect()
}
