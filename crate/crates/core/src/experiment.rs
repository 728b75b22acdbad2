//! Experiment plans and the sweep runner.
//!
//! A plan is a TOML document with the sections `[experiment]`, `[waveform]`
//! (with `[waveform.filter]`), `[channel]`, `[dme]`, `[psd]` and `[afe]`.
//! Every key is optional; unknown keys are rejected.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelProfile, DmeConfig, DEFAULT_K_FACTOR_DB};
use crate::coding::bits_from_frames;
use crate::metrics::{self, BerRecord, Bands, Spectrum};
use crate::numeric::FxFormat;
use crate::stream::{Partition, Variant, TRACE_HEADER};
use crate::waveforms::{self, Transceiver, WaveformConfig, WaveformKind, STIMULUS_FRAMES};
use crate::{Error, Result};

/// Frames a BER point must cover at least.
pub const MIN_BER_FRAMES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Ber,
    Psd,
}

/// Which stages a swept word length applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordLengthTarget {
    /// The whole datapath.
    Datapath,
    /// Window and filter stages only; the rest keeps `waveform.word_length`.
    Shaping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub name: String,
    pub measure: Vec<Measure>,
    /// Empty: the single kind in `[waveform]`.
    pub kinds: Vec<WaveformKind>,
    /// Empty: the single word length in `[waveform]`.
    pub word_lengths: Vec<u32>,
    pub word_length_target: WordLengthTarget,
    /// `none`, `APT`, `TMA` or `ENR`.
    pub channels: Vec<String>,
    /// `inf` disables thermal noise.
    pub snr_db: Vec<f64>,
    pub dme: bool,
    pub variant: Variant,
    pub frames_per_point: usize,
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            measure: vec![Measure::Ber],
            kinds: Vec::new(),
            word_lengths: Vec::new(),
            word_length_target: WordLengthTarget::Datapath,
            channels: vec!["none".into()],
            snr_db: vec![f64::INFINITY],
            dme: false,
            variant: Variant::V1,
            frames_per_point: 1008,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelOptions {
    pub k_factor_db: f64,
    /// Drop the line-of-sight component.
    pub rayleigh: bool,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        Self {
            k_factor_db: DEFAULT_K_FACTOR_DB,
            rayleigh: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsdOptions {
    pub segment_len: usize,
    pub overlap: f64,
    pub bursts: usize,
    pub guard_hz: f64,
}

impl Default for PsdOptions {
    fn default() -> Self {
        Self {
            segment_len: 256,
            overlap: 0.5,
            bursts: 16,
            guard_hz: 20e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AfeOptions {
    /// Per-sample random-walk phase step, radians.
    pub phase_noise_std: f64,
    pub gain: f64,
}

impl Default for AfeOptions {
    fn default() -> Self {
        Self {
            phase_noise_std: 0.0,
            gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub experiment: ExperimentSection,
    pub waveform: WaveformConfig,
    pub channel: ChannelOptions,
    pub dme: DmeConfig,
    pub psd: PsdOptions,
    pub afe: AfeOptions,
}

/// Where each resolved key came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub key: String,
    pub from_config: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPlan {
    pub plan: ExperimentPlan,
    pub provenance: Vec<Provenance>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

fn toml_error(text: &str, e: toml::de::Error) -> Error {
    let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
    Error::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

fn leaf_keys(prefix: &str, v: &toml::Value, out: &mut BTreeSet<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_keys(&p, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<LoadedPlan> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        let plan: ExperimentPlan = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        plan.validate()?;
        let mut given = BTreeSet::new();
        leaf_keys("", &toml::Value::Table(raw), &mut given);
        let mut resolved = BTreeSet::new();
        let value = toml::Value::try_from(&plan).map_err(|e| Error::Config(e.to_string()))?;
        leaf_keys("", &value, &mut resolved);
        let provenance = resolved
            .into_iter()
            .map(|key| Provenance {
                from_config: given.contains(&key),
                key,
            })
            .collect();
        Ok(LoadedPlan { plan, provenance })
    }

    pub fn load(path: &std::path::Path) -> Result<LoadedPlan> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    pub fn kinds(&self) -> Vec<WaveformKind> {
        if self.experiment.kinds.is_empty() {
            vec![self.waveform.kind]
        } else {
            self.experiment.kinds.clone()
        }
    }

    pub fn word_lengths(&self) -> Vec<u32> {
        if self.experiment.word_lengths.is_empty() {
            match self.experiment.word_length_target {
                WordLengthTarget::Datapath => vec![self.waveform.word_length],
                WordLengthTarget::Shaping => {
                    vec![self.waveform.shaping_word_length.unwrap_or(self.waveform.word_length)]
                }
            }
        } else {
            self.experiment.word_lengths.clone()
        }
    }

    pub fn channels(&self) -> Result<Vec<Option<ChannelProfile>>> {
        self.experiment
            .channels
            .iter()
            .map(|name| {
                if name.eq_ignore_ascii_case("none") {
                    return Ok(None);
                }
                let mut p = ChannelProfile::by_name(name)?;
                p.k_factor_db = (!self.channel.rayleigh).then_some(self.channel.k_factor_db);
                Ok(Some(p))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        for &wl in &self.word_lengths() {
            FxFormat::signal(wl).map_err(|_| Error::Config(format!("word length {wl} not in {{8, 16, 32}}")))?;
        }
        self.waveform.validate()?;
        self.channels()?;
        self.dme.validate()?;
        if e.measure.is_empty() {
            return Err(Error::Config("experiment.measure is empty".into()));
        }
        if e.measure.contains(&Measure::Ber) {
            if e.snr_db.is_empty() || e.channels.is_empty() {
                return Err(Error::Config("BER runs need at least one SNR and one channel".into()));
            }
            if e.frames_per_point < MIN_BER_FRAMES {
                return Err(Error::Config(format!(
                    "frames_per_point {} below the minimum of {MIN_BER_FRAMES} for BER points",
                    e.frames_per_point
                )));
            }
        }
        if e.snr_db.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("SNR values must be numbers".into()));
        }
        if e.measure.contains(&Measure::Psd) {
            let p = &self.psd;
            if p.bursts == 0 || p.segment_len == 0 || !(0.0..1.0).contains(&p.overlap) || p.guard_hz < 0.0 {
                return Err(Error::Config("psd needs bursts > 0, segment_len > 0, overlap in [0, 1)".into()));
            }
        }
        if !(self.afe.gain > 0.0 && self.afe.phase_noise_std >= 0.0) {
            return Err(Error::Config("afe gain must be positive and phase noise non-negative".into()));
        }
        Ok(())
    }

    /// Waveform configuration of one sweep point.
    pub fn point_config(&self, kind: WaveformKind, wl: u32) -> WaveformConfig {
        let mut c = self.waveform.clone();
        c.kind = kind;
        match self.experiment.word_length_target {
            WordLengthTarget::Datapath => {
                c.word_length = wl;
                c.shaping_word_length = None;
            }
            WordLengthTarget::Shaping => c.shaping_word_length = Some(wl),
        }
        c
    }

    pub fn bursts_per_point(&self) -> usize {
        self.experiment.frames_per_point.div_ceil(STIMULUS_FRAMES)
    }
}

/// Label of a point's datapath, e.g. `16`, `32/8` (signal/shaping) or `ref`.
pub fn datapath_label(cfg: &WaveformConfig) -> String {
    if cfg.reference {
        return "ref".into();
    }
    match cfg.shaping_word_length {
        Some(s) if s != cfg.word_length => format!("{}/{}", cfg.word_length, s),
        _ => cfg.word_length.to_string(),
    }
}

// Substream tags.
const STIM: u64 = 1;
const CHAN: u64 = 2;
const NOISE: u64 = 3;
const DME: u64 = 4;
const AFE: u64 = 5;
const PSD_STREAM: u64 = 0x5053_44;

#[derive(Debug, Clone)]
pub struct BerPoint {
    /// Seeding index: counts (word length, channel, SNR) conditions, so every
    /// waveform kind at one condition sees the same bits, fading and noise.
    pub condition: usize,
    pub cfg: WaveformConfig,
    pub channel: Option<ChannelProfile>,
    pub snr_db: f64,
}

#[derive(Debug, Clone)]
pub struct PsdPoint {
    pub condition: usize,
    pub cfg: WaveformConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrialOutcome {
    pub bits: u64,
    pub errors: u64,
    pub detection_failures: u64,
}

/// One measured spectrum with its band figures.
#[derive(Debug, Clone)]
pub struct PsdResult {
    pub kind: WaveformKind,
    pub label: String,
    pub spectrum: Spectrum,
    pub bands: Bands,
    pub inband_db: f64,
    pub oob_peak_db: f64,
    /// Median out-of-band density relative to the in-band mean.
    pub oob_floor_rel_db: f64,
}

impl PsdResult {
    pub fn attenuation_db(&self) -> f64 {
        self.inband_db - self.oob_peak_db
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedPoint {
    pub what: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunResult {
    pub ber: Vec<BerRecord>,
    pub psd: Vec<PsdResult>,
    pub skipped: Vec<SkippedPoint>,
    /// (file name, CSV) pairs of stream traces, when requested.
    pub traces: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 0, trace: false }
    }
}

impl ExperimentPlan {
    pub fn ber_points(&self) -> Result<Vec<BerPoint>> {
        let channels = self.channels()?;
        let mut out = Vec::new();
        let mut condition = 0;
        for &wl in &self.word_lengths() {
            for ch in &channels {
                for &snr in &self.experiment.snr_db {
                    for &kind in &self.kinds() {
                        out.push(BerPoint {
                            condition,
                            cfg: self.point_config(kind, wl),
                            channel: ch.clone(),
                            snr_db: snr,
                        });
                    }
                    condition += 1;
                }
            }
        }
        Ok(out)
    }

    pub fn psd_points(&self) -> Vec<PsdPoint> {
        let mut out = Vec::new();
        for (condition, &wl) in self.word_lengths().iter().enumerate() {
            for &kind in &self.kinds() {
                out.push(PsdPoint {
                    condition,
                    cfg: self.point_config(kind, wl),
                });
            }
        }
        out
    }
}

fn build(cfg: &WaveformConfig, variant: Variant) -> Result<Arc<Transceiver>> {
    let tr = Arc::new(Transceiver::new(cfg)?);
    // Surfaces (variant, kind) and datapath conflicts before any trial runs.
    Partition::new(variant, Arc::clone(&tr), STIMULUS_FRAMES)?;
    Ok(tr)
}

/// Channel, thermal noise, DME and front-end impairments for one burst.
/// The SNR is set against the mean power of the transmitted payload.
pub fn impair(
    plan: &ExperimentPlan,
    profile: Option<&ChannelProfile>,
    snr_db: f64,
    cfg: &WaveformConfig,
    tx: &[Complex64],
    n_frames: usize,
    seed: u64,
) -> Result<Vec<Complex64>> {
    let fs = cfg.sample_rate();
    let signal_power = channel::mean_power(&tx[cfg.payload_range(n_frames)]);
    let mut y = match profile {
        Some(p) => channel::apply_channel(tx, p, fs, channel::substream(seed, CHAN)),
        None => tx.to_vec(),
    };
    if snr_db.is_finite() {
        let np = channel::awgn_power(signal_power, snr_db);
        y = channel::add_noise(&y, np, channel::substream(seed, NOISE));
    }
    if plan.experiment.dme {
        let d = channel::dme_interference(y.len(), fs, &plan.dme, channel::substream(seed, DME))?;
        y.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
    }
    let afe = plan.afe;
    if afe.phase_noise_std > 0.0 || afe.gain != 1.0 {
        y = channel::afe_impairments(&y, afe.phase_noise_std, afe.gain, channel::substream(seed, AFE));
    }
    Ok(y)
}

/// One burst of a BER point. Returns the trace CSV when `trace` is set.
pub fn ber_trial(
    plan: &ExperimentPlan,
    point: &BerPoint,
    tr: &Arc<Transceiver>,
    trial: usize,
    trace: bool,
) -> Result<(TrialOutcome, Option<(String, String)>)> {
    let seed = channel::derive_seed(plan.experiment.seed, point.condition as u64, trial as u64);
    let frames = waveforms::stimulus(channel::substream(seed, STIM));
    let mut part = Partition::new(plan.experiment.variant, Arc::clone(tr), frames.len())?;
    if trace {
        part = part.with_trace();
    }
    let tx = part.transmit(&frames)?;
    let y = impair(plan, point.channel.as_ref(), point.snr_db, &tr.cfg, &tx, frames.len(), seed)?;
    let sent = bits_from_frames(&frames);
    let mut out = TrialOutcome {
        bits: sent.len() as u64,
        ..Default::default()
    };
    match part.receive(&y, frames.len()) {
        Ok(rx) => out.errors = metrics::bit_errors(&sent, &bits_from_frames(&rx))? as u64,
        Err(Error::Detection { .. }) => {
            // A missed burst decodes as all zeros.
            out.errors = sent.iter().filter(|&&b| b == 1).count() as u64;
            out.detection_failures = 1;
        }
        Err(e) => return Err(e),
    }
    let traces = trace.then(|| {
        let csv = format!(
            "{TRACE_HEADER}{}{}",
            part.tx_pipeline().trace_csv("tx"),
            part.rx_pipeline().trace_csv("rx")
        );
        (String::new(), csv)
    });
    Ok((out, traces))
}

/// Transmitted bursts of a PSD point, restricted to their payload regions.
pub fn psd_point(plan: &ExperimentPlan, point: &PsdPoint, tr: &Arc<Transceiver>) -> Result<PsdResult> {
    let base = channel::substream(plan.experiment.seed, PSD_STREAM);
    let mut bursts = Vec::with_capacity(plan.psd.bursts);
    for t in 0..plan.psd.bursts {
        let seed = channel::derive_seed(base, point.condition as u64, t as u64);
        let frames = waveforms::stimulus(channel::substream(seed, STIM));
        let mut part = Partition::new(plan.experiment.variant, Arc::clone(tr), frames.len())?;
        bursts.push(part.transmit(&frames)?);
    }
    let cfg = &tr.cfg;
    let range = cfg.payload_range(STIMULUS_FRAMES);
    let records: Vec<&[Complex64]> = bursts.iter().map(|b| &b[range.clone()]).collect();
    let fs = cfg.sample_rate();
    let p = &plan.psd;
    let spectrum = metrics::psd_welch_records(&records, fs, p.segment_len, p.overlap)?;
    let stop_edge = cfg.filter.stopband_edge() * fs / 2.0;
    let bands = Bands::new(cfg.bandwidth_hz, fs, p.guard_hz, stop_edge, spectrum.resolution)?;
    let inband_db = spectrum.band_mean_db(bands.inband)?;
    let oob_peak_db = spectrum.band_peak_db(&bands.oob())?;
    let oob_floor_rel_db = spectrum.band_median_db(&bands.oob())? - inband_db;
    Ok(PsdResult {
        kind: cfg.kind,
        label: datapath_label(cfg),
        spectrum,
        bands,
        inband_db,
        oob_peak_db,
        oob_floor_rel_db,
    })
}

fn pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers == 0 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn in_pool<T: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> T + Send) -> T {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn point_name(cfg: &WaveformConfig, extra: &str) -> String {
    format!("{} WL {}{extra}", cfg.kind, datapath_label(cfg))
}

pub fn run_experiment(plan: &ExperimentPlan, opts: RunOptions) -> Result<RunResult> {
    plan.validate()?;
    let pool = pool(opts.workers)?;
    let variant = plan.experiment.variant;
    let mut result = RunResult::default();

    if plan.experiment.measure.contains(&Measure::Ber) {
        let mut ready = Vec::new();
        for p in plan.ber_points()? {
            let ch = p.channel.as_ref().map_or("none".to_string(), |c| c.name.clone());
            match build(&p.cfg, variant) {
                Ok(tr) => ready.push((p, tr)),
                Err(e) => result.skipped.push(SkippedPoint {
                    what: point_name(&p.cfg, &format!(" {ch} {} dB", p.snr_db)),
                    reason: e.to_string(),
                }),
            }
        }
        let bursts = plan.bursts_per_point();
        let jobs: Vec<(usize, usize)> = (0..ready.len()).flat_map(|i| (0..bursts).map(move |t| (i, t))).collect();
        let outcomes: Vec<Result<(TrialOutcome, Option<(String, String)>)>> = in_pool(&pool, || {
            jobs.par_iter()
                .map(|&(i, t)| ber_trial(plan, &ready[i].0, &ready[i].1, t, opts.trace && t == 0))
                .collect()
        });
        let mut totals = vec![TrialOutcome::default(); ready.len()];
        for (&(i, _), o) in jobs.iter().zip(outcomes) {
            let (o, trace) = o?;
            totals[i].bits += o.bits;
            totals[i].errors += o.errors;
            totals[i].detection_failures += o.detection_failures;
            if let Some((_, csv)) = trace {
                let p = &ready[i].0;
                let ch = p.channel.as_ref().map_or("none", |c| c.name.as_str());
                let name = format!(
                    "trace_{}_{}_{}_{}_{}.csv",
                    p.cfg.kind,
                    datapath_label(&p.cfg).replace('/', "-"),
                    ch,
                    p.snr_db,
                    variant
                );
                result.traces.push((name, csv));
            }
        }
        for ((p, _), t) in ready.iter().zip(totals) {
            result.ber.push(BerRecord {
                kind: p.cfg.kind.to_string(),
                word_length: datapath_label(&p.cfg),
                channel: p.channel.as_ref().map_or("none".into(), |c| c.name.clone()),
                dme: plan.experiment.dme,
                variant: variant.to_string(),
                snr_db: p.snr_db,
                bits_total: t.bits,
                bits_error: t.errors,
                detection_failures: t.detection_failures,
            });
        }
    }

    if plan.experiment.measure.contains(&Measure::Psd) {
        let mut ready = Vec::new();
        for p in plan.psd_points() {
            match build(&p.cfg, variant) {
                Ok(tr) => ready.push((p, tr)),
                Err(e) => result.skipped.push(SkippedPoint {
                    what: point_name(&p.cfg, " psd"),
                    reason: e.to_string(),
                }),
            }
        }
        let spectra: Vec<Result<PsdResult>> =
            in_pool(&pool, || ready.par_iter().map(|(p, tr)| psd_point(plan, p, tr)).collect());
        for s in spectra {
            result.psd.push(s?);
        }
    }
    Ok(result)
}

/// Frame/stream equivalence of one kind under a partition variant.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub kind: WaveformKind,
    pub outcome: std::result::Result<crate::stream::Equivalence, String>,
    pub trace: Option<String>,
}

/// Check `variant` against the all-frame-mode chain for every kind in the
/// plan, at its first word length, channel and SNR, with the plan's DME
/// and front-end settings.
pub fn run_equivalence(plan: &ExperimentPlan, variant: Variant, trace: bool) -> Result<Vec<EquivalenceReport>> {
    plan.validate()?;
    let wl = plan.word_lengths()[0];
    let profile = plan.channels()?.into_iter().next().flatten();
    let snr = plan.experiment.snr_db.first().copied().unwrap_or(f64::INFINITY);
    let seed = channel::derive_seed(plan.experiment.seed, 0, 0);
    let frames = waveforms::stimulus(channel::substream(seed, STIM));
    let mut out = Vec::new();
    for kind in plan.kinds() {
        let cfg = plan.point_config(kind, wl);
        let tr = Arc::new(Transceiver::new(&cfg)?);
        let impaired = |tx: &[Complex64]| {
            impair(plan, profile.as_ref(), snr, &cfg, tx, frames.len(), seed).expect("validated plan")
        };
        let outcome = crate::stream::check_equivalence(&tr, variant, &frames, impaired).map_err(|e| e.to_string());
        let trace = match (&outcome, trace) {
            (Ok(_), true) => {
                let mut p = Partition::new(variant, Arc::clone(&tr), frames.len())?.with_trace();
                let tx = p.transmit(&frames)?;
                // Detection failures still leave a useful trace.
                let _ = p.receive(&impaired(&tx), frames.len());
                Some(format!(
                    "{TRACE_HEADER}{}{}",
                    p.tx_pipeline().trace_csv("tx"),
                    p.rx_pipeline().trace_csv("rx")
                ))
            }
            _ => None,
        };
        out.push(EquivalenceReport { kind, outcome, trace });
    }
    Ok(out)
}

pub fn ber_csv(records: &[BerRecord]) -> String {
    let mut s = format!("{}\n", BerRecord::HEADER);
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn psd_csv(results: &[PsdResult]) -> String {
    let mut s = String::from("kind,word_length,freq_hz,power_db\n");
    for r in results {
        for (f, p) in r.spectrum.freqs.iter().zip(&r.spectrum.power_db) {
            let _ = writeln!(s, "{},{},{},{:.6}", r.kind, r.label, f, p);
        }
    }
    s
}

pub fn oob_csv(results: &[PsdResult]) -> String {
    let mut s = String::from("kind,word_length,inband_db,oob_peak_db,attenuation_db,oob_floor_rel_db\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{:.4},{:.4},{:.4},{:.4}",
            r.kind,
            r.label,
            r.inband_db,
            r.oob_peak_db,
            r.attenuation_db(),
            r.oob_floor_rel_db
        );
    }
    s
}

/// Run manifest: tool version, resolved configuration, key provenance and
/// skipped points.
pub fn manifest(loaded: &LoadedPlan, result: &RunResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# ldacs-lab {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# key provenance:");
    for p in &loaded.provenance {
        let _ = writeln!(s, "#   {} = {}", p.key, if p.from_config { "config" } else { "default" });
    }
    for k in &result.skipped {
        let _ = writeln!(s, "# skipped: {}: {}", k.what, k.reason);
    }
    s.push('\n');
    s.push_str(&loaded.plan.to_toml());
    s
}

/// Write the result files into `dir`; returns the written file names.
pub fn write_outputs(dir: &std::path::Path, loaded: &LoadedPlan, result: &RunResult) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = vec![("manifest.toml".to_string(), manifest(loaded, result))];
    let m = &loaded.plan.experiment.measure;
    if m.contains(&Measure::Ber) {
        files.push(("ber.csv".into(), ber_csv(&result.ber)));
    }
    if m.contains(&Measure::Psd) {
        files.push(("psd.csv".into(), psd_csv(&result.psd)));
        files.push(("oob.csv".into(), oob_csv(&result.psd)));
    }
    files.extend(result.traces.iter().cloned());
    for (name, body) in &files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let l = ExperimentPlan::from_toml("[waveform]\nkind = \"OFDM\"\n").unwrap();
        assert_eq!(l.plan.kinds(), [WaveformKind::Ofdm]);
        assert_eq!(l.plan.word_lengths(), [16]);
        assert_eq!(l.plan.experiment.frames_per_point, 1008);
        let given: Vec<_> = l.provenance.iter().filter(|p| p.from_config).map(|p| p.key.as_str()).collect();
        assert_eq!(given, ["waveform.kind"]);
        assert!(l.provenance.iter().any(|p| p.key == "psd.segment_len" && !p.from_config));
    }

    #[test]
    fn unknown_key_names_key_and_position() {
        let e = ExperimentPlan::from_toml("[waveform]\nkind = \"WOLA\"\nwndow = 8\n").unwrap_err();
        match e {
            Error::Parse { line, column, message } => {
                assert_eq!((line, column), (3, 1));
                assert!(message.contains("wndow"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn word_length_domain() {
        let e = ExperimentPlan::from_toml("[experiment]\nword_lengths = [16, 24]\n").unwrap_err();
        assert!(e.to_string().contains("24"), "{e}");
        assert!(ExperimentPlan::from_toml("[waveform]\nword_length = 24\n").is_err());
    }

    #[test]
    fn q_format_string_sets_signal_format() {
        let l = ExperimentPlan::from_toml("[waveform]\nsignal_format = \"Q3.12/16\"\n").unwrap();
        let dp = waveforms::Datapath::from_config(&l.plan.waveform).unwrap();
        assert_eq!(dp.signal.unwrap().frac_bits(), 12);
        assert_eq!(ExperimentPlan::from_toml(&l.plan.to_toml()).unwrap().plan, l.plan);
        assert!(ExperimentPlan::from_toml("[waveform]\nsignal_format = \"Q1.6/8\"\n").is_err());
        assert!(ExperimentPlan::from_toml("[waveform]\nsignal_format = \"Q1.14\"\n").is_err());
    }

    #[test]
    fn too_few_frames_rejected() {
        assert!(ExperimentPlan::from_toml("[experiment]\nframes_per_point = 36\n").is_err());
        assert!(ExperimentPlan::from_toml("[experiment]\nframes_per_point = 36\nmeasure = [\"psd\"]\n").is_ok());
    }

    #[test]
    fn plan_round_trips() {
        let l = ExperimentPlan::from_toml("[experiment]\nkinds = [\"FOFDM\"]\nsnr_db = [3.0, inf]\n").unwrap();
        let again = ExperimentPlan::from_toml(&l.plan.to_toml()).unwrap();
        assert_eq!(again.plan, l.plan);
    }

    #[test]
    fn noiseless_loopback_has_no_errors() {
        let text = "[experiment]\nkinds = [\"OFDM\", \"WOLA\", \"FOFDM\"]\n";
        let plan = ExperimentPlan::from_toml(text).unwrap().plan;
        let r = run_experiment(&plan, RunOptions::default()).unwrap();
        assert_eq!(r.ber.len(), 3);
        for b in &r.ber {
            assert_eq!(b.bits_error, 0, "{b:?}");
            assert_eq!(b.bits_total, 28 * 864);
        }
    }

    #[test]
    fn incompatible_points_are_skipped() {
        let text = "[experiment]\nkinds = [\"OFDM\", \"WOLA\"]\nvariant = \"V4\"\n";
        let plan = ExperimentPlan::from_toml(text).unwrap().plan;
        let r = run_experiment(&plan, RunOptions::default()).unwrap();
        assert_eq!(r.ber.len(), 1);
        assert_eq!(r.ber[0].kind, "WOLA");
        assert_eq!(r.skipped.len(), 1);
    }
}
