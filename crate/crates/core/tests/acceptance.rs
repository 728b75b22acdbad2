//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. A FAIL
//! line does not abort the run; only errors from the library do.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ldacs_lab::channel::{doppler_freq, CARRIER_HZ};
use ldacs_lab::coding::{bits_from_frames, conv_encode, viterbi_decode};
use ldacs_lab::experiment::{self, ExperimentPlan, Measure, RunOptions, WordLengthTarget};
use ldacs_lab::filter_design::{amplitude_response, design_lowpass_pm, FilterSpec};
use ldacs_lab::metrics::{self, BerRecord};
use ldacs_lab::stream::Variant;
use ldacs_lab::waveforms::{fofdm_filter, stimulus, Transceiver, WaveformConfig, WaveformKind, PREAMBLE_LEN};
use ldacs_lab::Result;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Result<Outcome>) -> Result<(Outcome, Duration)> {
    let t = Instant::now();
    let mut o = f()?;
    let took = t.elapsed();
    if let Some(l) = limit {
        if took > l {
            o.pass = false;
            o.details.push(format!("runtime {took:.1?} exceeds {l:?}"));
        }
    }
    Ok((o, took))
}

fn plan(kinds: &[WaveformKind]) -> ExperimentPlan {
    let mut p = ExperimentPlan::default();
    p.experiment.kinds = kinds.to_vec();
    p
}

fn c1_loopback() -> Result<Outcome> {
    let frames = stimulus(1);
    let sent = bits_from_frames(&frames);
    let mut o = Outcome::new(true, format!("{} bits, 3 kinds x WL {{16, 32}}", sent.len()));
    for kind in WaveformKind::ALL {
        for wl in [16, 32] {
            let t = Transceiver::new(&WaveformConfig {
                kind,
                word_length: wl,
                ..Default::default()
            })?;
            let rx = t.rx_chain(&t.tx_chain(&frames), frames.len())?;
            let ber = metrics::ber(&sent, &bits_from_frames(&rx))?;
            o.pass &= ber == 0.0;
            o.details.push(format!("{kind} WL {wl}: BER {ber}"));
        }
    }
    Ok(o)
}

/// Expected boundary sizes per variant.
fn table_count(v: Variant) -> Option<usize> {
    match v {
        Variant::V1 => None,
        Variant::V2 => Some(150),
        Variant::V3 => Some(75),
        Variant::V4 => Some(91),
        Variant::V5 | Variant::V6 | Variant::V7 => Some(48),
        Variant::V8 | Variant::V9 | Variant::V10 => Some(24),
    }
}

fn c2_equivalence() -> Result<Outcome> {
    let p = plan(&WaveformKind::ALL);
    let mut o = Outcome::new(true, "");
    let mut checked = 0;
    for v in Variant::ALL {
        for r in experiment::run_equivalence(&p, v, false)? {
            let Ok(e) = r.outcome else { continue };
            checked += 1;
            let ok = e.tx_identical && e.bits_identical && e.observed_count == table_count(v);
            o.pass &= ok;
            o.details.push(format!(
                "{} {v}: bits identical {}, boundary {:?} (expected {:?})",
                r.kind,
                e.bits_identical,
                e.observed_count,
                table_count(v)
            ));
        }
    }
    o.summary = format!("{checked} compatible (variant, kind) pairs");
    Ok(o)
}

fn c3_oob_gap() -> Result<Outcome> {
    let mut p = plan(&WaveformKind::ALL);
    p.experiment.measure = vec![Measure::Psd];
    let r = experiment::run_experiment(&p, RunOptions::default())?;
    let att: BTreeMap<String, f64> = r.psd.iter().map(|s| (s.kind.to_string(), s.attenuation_db())).collect();
    let (ofdm, wola, fofdm) = (att["OFDM"], att["WOLA"], att["FOFDM"]);
    let gap = fofdm - ofdm;
    let mut o = Outcome::new(
        gap >= 30.0 && ofdm < wola && wola < fofdm,
        format!("FOFDM - OFDM = {gap:.1} dB (need >= 30), WOLA strictly between"),
    );
    o.details.push(format!(
        "OOB attenuation: OFDM {ofdm:.1} dB, WOLA {wola:.1} dB, FOFDM {fofdm:.1} dB"
    ));
    Ok(o)
}

fn c4_word_length() -> Result<Outcome> {
    let mut p = plan(&[WaveformKind::Wola, WaveformKind::Fofdm]);
    p.experiment.measure = vec![Measure::Psd];
    p.experiment.word_lengths = vec![8, 16, 32];
    p.experiment.word_length_target = WordLengthTarget::Shaping;
    p.waveform.word_length = 32;
    let r = experiment::run_experiment(&p, RunOptions::default())?;
    let mut o = Outcome::new(true, "shaping WL 16 vs 32 within 3 dB; WL 8 OOB floor >= 10 dB above WL 16");
    for kind in [WaveformKind::Wola, WaveformKind::Fofdm] {
        let get = |wl: u32| {
            let label = if wl == 32 { "32".to_string() } else { format!("32/{wl}") };
            r.psd.iter().find(|s| s.kind == kind && s.label == label).expect("swept point")
        };
        let (s8, s16, s32) = (get(8), get(16), get(32));
        let worst = s16
            .spectrum
            .power_db
            .iter()
            .zip(&s32.spectrum.power_db)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let floor_gap = s8.oob_floor_rel_db - s16.oob_floor_rel_db;
        o.pass &= worst <= 3.0 && floor_gap >= 10.0;
        o.details.push(format!(
            "{kind}: max |PSD16 - PSD32| {worst:.2} dB; OOB floor WL8 {:.1} dB, WL16 {:.1} dB, WL32 {:.1} dB (gap {floor_gap:.1} dB)",
            s8.oob_floor_rel_db, s16.oob_floor_rel_db, s32.oob_floor_rel_db
        ));
    }
    Ok(o)
}

fn c5_ber_ordering() -> Result<Outcome> {
    let mut p = plan(&WaveformKind::ALL);
    p.experiment.channels = vec!["APT".into(), "TMA".into(), "ENR".into()];
    p.experiment.snr_db = (0..=6).map(|i| 2.0 * i as f64).collect();
    p.experiment.dme = true;
    let r = experiment::run_experiment(&p, RunOptions::default())?;
    let mut by: BTreeMap<(String, String), Vec<&BerRecord>> = BTreeMap::new();
    for rec in &r.ber {
        by.entry((rec.channel.clone(), rec.kind.clone())).or_default().push(rec);
    }
    let mut o = Outcome::new(
        true,
        format!(
            "{} frames/point, SNR 0..12 dB, DME on: FOFDM <= WOLA <= OFDM where OFDM BER >= 1e-3, 95% separation, monotone in SNR",
            p.experiment.frames_per_point
        ),
    );
    for ch in &p.experiment.channels {
        let series = |k: &str| &by[&(ch.clone(), k.to_string())];
        let (ofdm, wola, fofdm) = (series("OFDM"), series("WOLA"), series("FOFDM"));
        let mut ordered = true;
        let mut separated = false;
        for i in 0..ofdm.len() {
            let (a, b, c) = (fofdm[i].ber(), wola[i].ber(), ofdm[i].ber());
            o.details.push(format!(
                "{ch} {:>4} dB: FOFDM {a:.4e} WOLA {b:.4e} OFDM {c:.4e} (missed bursts {}/{}/{})",
                ofdm[i].snr_db, fofdm[i].detection_failures, wola[i].detection_failures, ofdm[i].detection_failures
            ));
            if c >= 1e-3 {
                ordered &= a <= b && b <= c;
                separated |= fofdm[i].interval().1 < ofdm[i].interval().0;
            }
        }
        // Non-increasing in SNR up to sampling noise: no step up is
        // significant at 95%. Strict monotonicity is reported alongside.
        let kinds = [ofdm, wola, fofdm];
        let monotone = kinds
            .iter()
            .all(|s| s.windows(2).all(|w| w[1].interval().0 <= w[0].interval().1));
        let strict = kinds.iter().all(|s| s.windows(2).all(|w| w[1].ber() <= w[0].ber()));
        o.details.push(format!(
            "{ch}: ordered {ordered}, separated {separated}, monotone at 95% {monotone} (strictly {strict})"
        ));
        o.pass &= ordered && separated && monotone;
    }
    Ok(o)
}

fn c6_doppler() -> Result<Outcome> {
    let mut o = Outcome::new(true, "200/300/600 KTAS -> 413/624/1250 Hz");
    for (v, want) in [(200.0, 413.0), (300.0, 624.0), (600.0, 1250.0)] {
        let got = doppler_freq(CARRIER_HZ, v);
        o.pass &= got == want;
        o.details.push(format!("{v} KTAS: {got} Hz (expected {want} Hz)"));
    }
    Ok(o)
}

fn alternations(coeffs: &[f64], fp: f64, fs: f64, level: f64) -> usize {
    let grid = 10_000;
    let mut bands: Vec<Vec<f64>> = Vec::new();
    for (lo, hi, want) in [(0.0, fp, 1.0), (fs, 1.0, 0.0)] {
        bands.push(
            (0..=grid)
                .map(|i| amplitude_response(coeffs, lo + (hi - lo) * i as f64 / grid as f64) - want)
                .collect(),
        );
    }
    let mut count = 0;
    let mut last = 0.0;
    for err in &bands {
        for i in 0..err.len() {
            let e = err[i].abs();
            let l = if i == 0 { 0.0 } else { err[i - 1].abs() };
            let r = if i + 1 == err.len() { 0.0 } else { err[i + 1].abs() };
            if e >= l && e >= r && e > 0.9 * level && err[i].signum() != last {
                count += 1;
                last = err[i].signum();
            }
        }
    }
    count
}

fn c7_filter() -> Result<Outcome> {
    let spec = FilterSpec::default();
    let d = design_lowpass_pm(&spec)?;
    let c = &d.coeffs;
    let symmetric = (0..c.len()).all(|k| c[k] == c[c.len() - 1 - k]);
    let alt = alternations(c, spec.passband_edge(), spec.stopband_edge(), d.deviation);
    let need = spec.order / 2 + 2;
    // TX then RX filtering of an impulse; the causal cascade peaks at 150.
    let mut causal = vec![0.0; 2 * c.len() - 1];
    for (i, a) in c.iter().enumerate() {
        for (j, b) in c.iter().enumerate() {
            causal[i + j] += a * b;
        }
    }
    let mid = causal.len() / 2;
    let causal_delay = (0..causal.len()).all(|k| (causal[k] - causal[causal.len() - 1 - k]).abs() < 1e-15);
    let n0 = 400;
    let mut x = vec![Complex64::new(0.0, 0.0); 801];
    x[n0] = Complex64::new(1.0, 0.0);
    let y = fofdm_filter(&fofdm_filter(&x, c), c);
    let peak = (0..y.len()).max_by(|&a, &b| y[a].norm().total_cmp(&y[b].norm())).unwrap();
    let centred = (1..=mid).all(|k| (y[n0 - k] - y[n0 + k]).norm() < 1e-15);
    let mut o = Outcome::new(
        symmetric && alt >= need && mid == 150 && causal_delay && peak == n0 && centred,
        format!("order {}: symmetric, alternations, 150-sample cascade delay compensated", spec.order),
    );
    o.details.push(format!("symmetric {symmetric}; {alt} alternations (need {need}); deviation {:.4e}", d.deviation));
    o.details.push(format!(
        "cascade length {}, group delay {mid}, linear phase {causal_delay}; compensated peak at {} (input {n0}), symmetric {centred}",
        causal.len(),
        peak
    ));
    Ok(o)
}

fn c8_wola() -> Result<Outcome> {
    let t = Transceiver::new(&WaveformConfig {
        kind: WaveformKind::Wola,
        reference: true,
        ..Default::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let symbols: Vec<Vec<Complex64>> = (0..20)
        .map(|_| {
            let data: Vec<Complex64> = (0..48).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            t.modulate(&data)
        })
        .collect();
    let windowed: Vec<Vec<Complex64>> = symbols.iter().map(|s| t.tx_window(&t.extend(s))).collect();
    let burst = t.assemble(&windowed);
    let start = t.cfg.lead_len() + PREAMBLE_LEN;
    let rx = t.split(&burst, start, symbols.len())?;
    let worst = rx
        .iter()
        .zip(&symbols)
        .flat_map(|(r, s)| t.strip(r).into_iter().zip(s.clone()).map(|(a, b)| (a - b).norm()))
        .fold(0.0, f64::max);
    let mut o = Outcome::new(worst <= 1e-10, "91 -> discard 13/8 -> window 70 -> overlap-add, within 1e-10");
    o.details.push(format!("{} symbols, max error {worst:.3e}", symbols.len()));
    Ok(o)
}

fn bits_of(v: u32, len: usize) -> Vec<u8> {
    (0..len).map(|i| ((v >> (len - 1 - i)) & 1) as u8).collect()
}

fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn c9_coding() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut ml_ok, mut flips_ok) = (true, true);
    let mut received_words = 0;
    let mut flips = 0;
    for len in 1..=12usize {
        let book: Vec<(Vec<u8>, Vec<u8>)> = (0..1u32 << len)
            .map(|v| {
                let m = bits_of(v, len);
                let c = conv_encode(&m);
                (m, c)
            })
            .collect();
        for _ in 0..25 {
            let r: Vec<u8> = (0..2 * (len + 6)).map(|_| rng.random_range(0..2)).collect();
            let best = book.iter().map(|(_, c)| hamming(c, &r)).min().unwrap();
            ml_ok &= hamming(&conv_encode(&viterbi_decode(&r)), &r) == best;
            received_words += 1;
        }
        for (m, c) in &book {
            for i in 0..c.len() {
                let mut r = c.clone();
                r[i] ^= 1;
                flips_ok &= viterbi_decode(&r) == *m;
                flips += 1;
            }
        }
    }
    let mut o = Outcome::new(ml_ok && flips_ok, "lengths 1..=12: Viterbi = brute-force ML, all single flips corrected");
    o.details.push(format!("{received_words} random words ML {ml_ok}; {flips} single flips corrected {flips_ok}"));
    Ok(o)
}

fn c10_determinism() -> Result<Outcome> {
    let mut p = plan(&WaveformKind::ALL);
    p.experiment.measure = vec![Measure::Ber, Measure::Psd];
    p.experiment.channels = vec!["TMA".into()];
    p.experiment.snr_db = vec![4.0, 8.0];
    p.experiment.dme = true;
    p.psd.bursts = 4;
    let csvs = |workers| -> Result<[String; 3]> {
        let r = experiment::run_experiment(&p, RunOptions { workers, trace: false })?;
        Ok([experiment::ber_csv(&r.ber), experiment::psd_csv(&r.psd), experiment::oob_csv(&r.psd)])
    };
    let (a, b, c) = (csvs(1)?, csvs(2)?, csvs(1)?);
    let same = a == b && a == c;
    let mut o = Outcome::new(same, "BER/PSD/OOB CSVs byte-identical across re-runs and worker counts 1, 2");
    o.details.push(format!("{} bytes of CSV compared", a.iter().map(String::len).sum::<usize>()));
    Ok(o)
}

type Criterion = (&'static str, Option<u64>, fn() -> Result<Outcome>);

fn main() {
    // libtest-style filters and flags are accepted and ignored, except that
    // `--list` must not run anything.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 10] = [
        ("loopback exactness", Some(10), c1_loopback),
        ("frame/stream equivalence", Some(60), c2_equivalence),
        ("OOB gap", Some(30), c3_oob_gap),
        ("word-length PSD", Some(60), c4_word_length),
        ("BER ordering under DME", Some(600), c5_ber_ordering),
        ("Doppler values", None, c6_doppler),
        ("filter design", None, c7_filter),
        ("WOLA reconstruction", None, c8_wola),
        ("coding oracle", None, c9_coding),
        ("determinism", None, c10_determinism),
    ];
    let mut passed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        match timed(limit.map(Duration::from_secs), f) {
            Ok((o, took)) => {
                println!(
                    "{} criterion {:>2} {name}: {} [{took:.1?}]",
                    if o.pass { "PASS" } else { "FAIL" },
                    i + 1,
                    o.summary
                );
                for d in &o.details {
                    println!("       {d}");
                }
                passed += o.pass as usize;
            }
            Err(e) => panic!("criterion {} {name}: {e}", i + 1),
        }
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
}
