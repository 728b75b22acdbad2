//! Cycle-stepped stream mode.
//!
//! Every block consumes at most one [`StreamSample`] and emits at most one per
//! step. Rate-changing blocks keep an output queue that drains one word per
//! step, including steps whose input is idle. A sample with `reset` set clears
//! the block and is forwarded downstream.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;

use crate::coding::{BitFrame, FRAME_BITS};
use crate::numeric::{FxComplex, FxFormat};
use crate::waveforms::{Datapath, Transceiver, WaveformKind, N};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Word {
    Bit(bool),
    Sample(FxComplex),
}

impl Word {
    pub fn bit(&self) -> u8 {
        match self {
            Word::Bit(b) => *b as u8,
            Word::Sample(_) => panic!("sample on a bit wire"),
        }
    }

    pub fn complex(&self) -> Complex64 {
        match self {
            Word::Sample(z) => z.to_complex(),
            Word::Bit(_) => panic!("bit on a sample wire"),
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Word::Bit(b) => write!(f, "{}", *b as u8),
            Word::Sample(z) => write!(f, "{};{}", z.re, z.im),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSample {
    pub payload: Word,
    pub valid: bool,
    pub reset: bool,
}

impl StreamSample {
    pub const IDLE: StreamSample = StreamSample {
        payload: Word::Bit(false),
        valid: false,
        reset: false,
    };
    pub const RESET: StreamSample = StreamSample {
        payload: Word::Bit(false),
        valid: false,
        reset: true,
    };

    pub fn data(w: Word) -> Self {
        Self {
            payload: w,
            valid: true,
            reset: false,
        }
    }
}

pub trait StreamBlock: Send {
    fn name(&self) -> &str;
    /// Steps from the first input word of a frame to its first output word,
    /// with valid asserted continuously.
    fn latency(&self) -> usize;
    fn step(&mut self, input: StreamSample) -> StreamSample;
    fn reset(&mut self);
    /// True while the block still holds words that will be emitted.
    fn busy(&self) -> bool;
    fn fault(&self) -> Option<Error> {
        None
    }
}

#[derive(Debug, Default, Clone)]
struct OutQueue(VecDeque<Word>);

impl OutQueue {
    fn pop(&mut self) -> StreamSample {
        self.0.pop_front().map_or(StreamSample::IDLE, StreamSample::data)
    }
}

/// Two-register cyclic prefix adder with a mod-N write counter.
pub struct CpAdder {
    n: usize,
    cp: usize,
    reg: Vec<Word>,
    count: usize,
    out: OutQueue,
}

impl CpAdder {
    pub fn new(n: usize, cp: usize) -> Result<Self> {
        if cp == 0 || cp > n {
            return Err(Error::Config(format!("cyclic prefix {cp} invalid for {n}-sample frames")));
        }
        Ok(Self {
            n,
            cp,
            reg: vec![Word::Bit(false); n],
            count: 0,
            out: OutQueue::default(),
        })
    }
}

impl StreamBlock for CpAdder {
    fn name(&self) -> &str {
        "cp_adder"
    }

    fn latency(&self) -> usize {
        self.n - 1
    }

    fn step(&mut self, input: StreamSample) -> StreamSample {
        if input.reset {
            self.reset();
            return StreamSample::RESET;
        }
        if input.valid {
            self.reg[self.count] = input.payload;
            self.count = (self.count + 1) % self.n;
            if self.count == 0 {
                self.out.0.extend(&self.reg[self.n - self.cp..]);
                self.out.0.extend(&self.reg);
            }
        }
        self.out.pop()
    }

    fn reset(&mut self) {
        self.count = 0;
        self.out.0.clear();
    }

    fn busy(&self) -> bool {
        !self.out.0.is_empty()
    }
}

/// Where the window block's input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowInput {
    /// 64-sample IFFT frames; the block forms the cyclic extension itself.
    Symbol,
    /// Already extended, unwindowed symbols of `N + CP + 2W` samples.
    Extended,
}

/// Head/tail WOLA window: P1 covers the first `W + CP` extended samples,
/// P2 the last `W`; the body passes through.
pub struct WindowBlock {
    mode: WindowInput,
    cp: usize,
    w: usize,
    p1: Vec<f64>,
    p2: Vec<f64>,
    dp: Datapath,
    wire: Option<FxFormat>,
    reg: Vec<Complex64>,
    count: usize,
    out: OutQueue,
}

impl WindowBlock {
    pub fn new(mode: WindowInput, cp: usize, w: usize, p1: Vec<f64>, p2: Vec<f64>, dp: Datapath) -> Result<Self> {
        if p1.len() != w + cp || p2.len() != w {
            return Err(Error::Config(format!(
                "window segments of {} and {} taps do not match W={w}, CP={cp}",
                p1.len(),
                p2.len()
            )));
        }
        let len = match mode {
            WindowInput::Symbol => N,
            WindowInput::Extended => N + cp + 2 * w,
        };
        Ok(Self {
            mode,
            cp,
            w,
            p1,
            p2,
            dp,
            wire: dp.wire(),
            reg: vec![Complex64::default(); len],
            count: 0,
            out: OutQueue::default(),
        })
    }

    pub fn from_transceiver(tr: &Transceiver, mode: WindowInput) -> Result<Self> {
        let (cp, w) = (tr.cfg.cp, tr.cfg.w);
        let tx = &tr.windows.tx;
        Self::new(mode, cp, w, tx[..w + cp].to_vec(), tx[tx.len() - w..].to_vec(), tr.dp)
    }

    fn fire(&mut self) {
        let ext: Vec<Complex64> = match self.mode {
            WindowInput::Symbol => {
                let head = N - self.cp - self.w;
                let mut e = self.reg[head..].to_vec();
                e.extend_from_slice(&self.reg);
                e.extend_from_slice(&self.reg[..self.w]);
                e
            }
            WindowInput::Extended => self.reg.clone(),
        };
        let tail = ext.len() - self.w;
        for (k, &z) in ext.iter().enumerate() {
            let c = if k < self.p1.len() {
                self.p1[k]
            } else if k >= tail {
                self.p2[k - tail]
            } else {
                1.0
            };
            self.out.0.push_back(to_word(self.dp.scale(z, c), self.wire));
        }
    }
}

impl StreamBlock for WindowBlock {
    fn name(&self) -> &str {
        "window"
    }

    fn latency(&self) -> usize {
        self.reg.len() - 1
    }

    fn step(&mut self, input: StreamSample) -> StreamSample {
        if input.reset {
            self.reset();
            return StreamSample::RESET;
        }
        if input.valid {
            self.reg[self.count] = input.payload.complex();
            self.count += 1;
            if self.count == self.reg.len() {
                self.count = 0;
                self.fire();
            }
        }
        self.out.pop()
    }

    fn reset(&mut self) {
        self.count = 0;
        self.out.0.clear();
    }

    fn busy(&self) -> bool {
        !self.out.0.is_empty()
    }
}

/// Direct-form FIR over a tapped delay line with a fixed pipeline depth of
/// `taps - 1` steps. Output payloads are the causal convolution; pair with a
/// [`Selector`] to remove the group delay.
pub struct FirBlock {
    codes: Vec<i64>,
    dp: Datapath,
    sig: FxFormat,
    line: VecDeque<FxComplex>,
    pipe: VecDeque<StreamSample>,
}

impl FirBlock {
    pub fn new(codes: Vec<i64>, dp: Datapath) -> Result<Self> {
        let sig = dp
            .signal
            .ok_or_else(|| Error::Config("stream FIR needs a fixed-point datapath".into()))?;
        if codes.is_empty() {
            return Err(Error::Config("stream FIR needs at least one tap".into()));
        }
        let depth = codes.len() - 1;
        Ok(Self {
            line: VecDeque::from(vec![FxComplex::zero(sig); codes.len()]),
            pipe: VecDeque::from(vec![StreamSample::IDLE; depth]),
            codes,
            dp,
            sig,
        })
    }
}

impl StreamBlock for FirBlock {
    fn name(&self) -> &str {
        "fir"
    }

    fn latency(&self) -> usize {
        self.codes.len() - 1
    }

    fn step(&mut self, input: StreamSample) -> StreamSample {
        if input.reset {
            self.reset();
            return StreamSample::RESET;
        }
        let now = if input.valid {
            let x = match input.payload {
                Word::Sample(z) => z.convert(self.sig),
                Word::Bit(_) => panic!("bit on a sample wire"),
            };
            self.line.pop_back();
            self.line.push_front(x);
            let taps = self.line.make_contiguous();
            StreamSample::data(Word::Sample(self.dp.fir_point(taps, &self.codes)))
        } else {
            StreamSample::IDLE
        };
        self.pipe.push_back(now);
        self.pipe.pop_front().expect("pipeline depth")
    }

    fn reset(&mut self) {
        self.line.iter_mut().for_each(|t| *t = FxComplex::zero(self.sig));
        self.pipe.iter_mut().for_each(|s| *s = StreamSample::IDLE);
    }

    fn busy(&self) -> bool {
        self.pipe.iter().any(|s| s.valid)
    }
}

/// Passes valid words `skip..skip + take` (counted since reset), drops the rest.
pub struct Selector {
    skip: usize,
    take: usize,
    seen: usize,
}

impl Selector {
    pub fn new(skip: usize, take: usize) -> Self {
        Self { skip, take, seen: 0 }
    }
}

impl StreamBlock for Selector {
    fn name(&self) -> &str {
        "selector"
    }

    fn latency(&self) -> usize {
        0
    }

    fn step(&mut self, input: StreamSample) -> StreamSample {
        if input.reset {
            self.reset();
            return StreamSample::RESET;
        }
        if !input.valid {
            return StreamSample::IDLE;
        }
        let k = self.seen;
        self.seen += 1;
        if (self.skip..self.skip + self.take).contains(&k) {
            input
        } else {
            StreamSample::IDLE
        }
    }

    fn reset(&mut self) {
        self.seen = 0;
    }

    fn busy(&self) -> bool {
        false
    }
}

/// LUT-driven burst framer: lead-in zeros and the preamble ahead of the
/// first data word, then `data_len` data words, then zeros up to `total`.
pub struct PreambleAdder {
    lut: Vec<Word>,
    data_len: usize,
    total: usize,
    counter: usize,
    started: bool,
    fifo: VecDeque<Word>,
    zero: Word,
}

impl PreambleAdder {
    pub fn new(lead: usize, preamble: &[Complex64], data_len: usize, total: usize, wire: FxFormat) -> Self {
        let zero = Word::Sample(FxComplex::zero(wire));
        let mut lut = vec![zero; lead];
        lut.extend(preamble.iter().map(|&z| Word::Sample(FxComplex::from_complex(z, wire))));
        Self {
            lut,
            data_len,
            total,
            counter: 0,
            started: false,
            fifo: VecDeque::new(),
            zero,
        }
    }

    fn data_end(&self) -> usize {
        self.lut.len() + self.data_len
    }
}

impl StreamBlock for PreambleAdder {
    fn name(&self) -> &str {
        "preamble_adder"
    }

    fn latency(&self) -> usize {
        0
    }

    fn step(&mut self, input: StreamSample) -> StreamSample {
        if input.reset {
            self.reset();
            return StreamSample::RESET;
        }
        if input.valid {
            self.started = true;
            self.fifo.push_back(input.payload);
        }
        if !self.started || self.counter >= self.total.max(self.data_end()) {
            return StreamSample::IDLE;
        }
        let c = self.counter;
        let w = if c < self.lut.len() {
            self.lut[c]
        } else if c < self.data_end() {
            match self.fifo.pop_front() {
                Some(w) => w,
                None => return StreamSample::IDLE,
            }
        } else {
            self.zero
        };
        self.counter += 1;
        StreamSample::data(w)
    }

    fn reset(&mut self) {
        self.counter = 0;
        self.started = false;
        self.fifo.clear();
    }

    fn busy(&self) -> bool {
        self.started && self.counter < self.total.max(self.data_end())
    }
}

/// Bit-serial XOR scrambler (also the descrambler). Output of a frame
/// starts once all 24 of its bits have arrived.
pub struct ScramblerBlock {
    seq: [u8; FRAME_BITS],
    reg: [u8; FRAME_BITS],
    count: usize,
    out: OutQueue,
}

impl ScramblerBlock {
    pub fn new(seq: [u8; FRAME_BITS]) -> Self {
        Self {
            seq,
            reg: [0; FRAME_BITS],
            count: 0,
            out: OutQueue::default(),
        }
    }
}

impl StreamBlock for ScramblerBlock {
    fn name(&self) -> &str {
        "scrambler"
    }

    fn latency(&self) -> usize {
        FRAME_BITS - 1
    }

    fn step(&mut self, input: StreamSample) -> StreamSample {
        if input.reset {
            self.reset();
            return StreamSample::RESET;
        }
        if input.valid {
            self.reg[self.count] = input.payload.bit();
            self.count += 1;
            if self.count == FRAME_BITS {
                self.count = 0;
                for (b, s) in self.reg.iter().zip(&self.seq) {
                    self.out.0.push_back(Word::Bit(b ^ s == 1));
                }
            }
        }
        self.out.pop()
    }

    fn reset(&mut self) {
        self.count = 0;
        self.out.0.clear();
    }

    fn busy(&self) -> bool {
        !self.out.0.is_empty()
    }
}

type Kernel = Box<dyn FnMut(&[Word]) -> Result<Vec<Word>> + Send>;

/// Collects `frame_len` valid words, runs a frame-mode kernel on them and
/// streams the result out.
pub struct Accumulate {
    name: String,
    frame_len: usize,
    kernel: Kernel,
    buf: Vec<Word>,
    out: OutQueue,
    fault: Option<f64>,
}

impl Accumulate {
    pub fn new(name: &str, frame_len: usize, kernel: Kernel) -> Self {
        Self {
            name: name.to_string(),
            frame_len,
            kernel,
            buf: Vec::with_capacity(frame_len),
            out: OutQueue::default(),
            fault: None,
        }
    }
}

impl StreamBlock for Accumulate {
    fn name(&self) -> &str {
        &self.name
    }

    fn latency(&self) -> usize {
        self.frame_len - 1
    }

    fn step(&mut self, input: StreamSample) -> StreamSample {
        if input.reset {
            self.reset();
            return StreamSample::RESET;
        }
        if input.valid && self.fault.is_none() {
            self.buf.push(input.payload);
            if self.buf.len() == self.frame_len {
                match (self.kernel)(&self.buf) {
                    Ok(v) => self.out.0.extend(v),
                    Err(Error::Detection { best_metric }) => self.fault = Some(best_metric),
                    Err(e) => panic!("{}: {e}", self.name),
                }
                self.buf.clear();
            }
        }
        self.out.pop()
    }

    fn reset(&mut self) {
        self.buf.clear();
        self.out.0.clear();
        self.fault = None;
    }

    fn busy(&self) -> bool {
        !self.out.0.is_empty()
    }

    fn fault(&self) -> Option<Error> {
        self.fault.map(|best_metric| Error::Detection { best_metric })
    }
}

pub fn to_word(z: Complex64, wire: Option<FxFormat>) -> Word {
    let fmt = wire.expect("stream mode needs a fixed-point datapath");
    let w = FxComplex::from_complex(z, fmt);
    debug_assert_eq!(w.to_complex(), z, "value off the wire grid");
    Word::Sample(w)
}

pub fn bits_to_words(bits: &[u8]) -> Vec<Word> {
    bits.iter().map(|&b| Word::Bit(b & 1 == 1)).collect()
}

pub fn words_to_bits(words: &[Word]) -> Vec<u8> {
    words.iter().map(Word::bit).collect()
}

pub fn samples_to_words(s: &[Complex64], wire: Option<FxFormat>) -> Vec<Word> {
    s.iter().map(|&z| to_word(z, wire)).collect()
}

pub fn words_to_samples(words: &[Word]) -> Vec<Complex64> {
    words.iter().map(Word::complex).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub step: usize,
    pub block: String,
    pub valid: bool,
    pub payload: Word,
}

/// Blocks advanced together by one driver.
pub struct Pipeline {
    blocks: Vec<Box<dyn StreamBlock>>,
    trace: Option<Vec<TraceRow>>,
    steps: usize,
}

pub const TRACE_HEADER: &str = "side,step,block,valid,payload\n";

const DRAIN_LIMIT: usize = 1 << 22;

impl Pipeline {
    pub fn new(blocks: Vec<Box<dyn StreamBlock>>) -> Self {
        Self {
            blocks,
            trace: None,
            steps: 0,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn block_names(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.name().to_string()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Advance every block by one step.
    pub fn step(&mut self, input: StreamSample) -> StreamSample {
        let mut s = input;
        for b in &mut self.blocks {
            s = b.step(s);
            if let Some(t) = &mut self.trace {
                if s.valid {
                    t.push(TraceRow {
                        step: self.steps,
                        block: b.name().to_string(),
                        valid: s.valid,
                        payload: s.payload,
                    });
                }
            }
        }
        self.steps += 1;
        s
    }

    /// Reset, feed `input`, then idle until every block has drained.
    /// Returns the valid output words in order.
    pub fn run(&mut self, input: impl IntoIterator<Item = StreamSample>) -> Result<Vec<Word>> {
        let mut out = Vec::new();
        self.step(StreamSample::RESET);
        for s in input {
            let o = self.step(s);
            if o.valid {
                out.push(o.payload);
            }
        }
        let mut idle = 0;
        while self.blocks.iter().any(|b| b.busy()) {
            let o = self.step(StreamSample::IDLE);
            if o.valid {
                out.push(o.payload);
            }
            idle += 1;
            if idle > DRAIN_LIMIT {
                return Err(Error::Contract("stream pipeline failed to drain".into()));
            }
        }
        if let Some(e) = self.blocks.iter().find_map(|b| b.fault()) {
            return Err(e);
        }
        Ok(out)
    }

    pub fn trace(&self) -> &[TraceRow] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Trace rows as CSV lines under [`TRACE_HEADER`], tagged with `side`.
    pub fn trace_csv(&self, side: &str) -> String {
        let mut s = String::new();
        for r in self.trace() {
            s.push_str(&format!("{side},{},{},{},{}\n", r.step, r.block, r.valid as u8, r.payload));
        }
        s
    }
}

/// Frames of `words`, each followed by idle steps up to `period`.
pub fn paced(frames: &[Vec<Word>], period: usize) -> Vec<StreamSample> {
    let mut v = Vec::new();
    for f in frames {
        v.extend(f.iter().map(|&w| StreamSample::data(w)));
        v.extend(std::iter::repeat_n(StreamSample::IDLE, period.saturating_sub(f.len())));
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
    V7,
    V8,
    V9,
    V10,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Self::V1,
        Self::V2,
        Self::V3,
        Self::V4,
        Self::V5,
        Self::V6,
        Self::V7,
        Self::V8,
        Self::V9,
        Self::V10,
    ];

    pub fn number(&self) -> usize {
        *self as usize + 1
    }

    pub fn supports(&self, kind: WaveformKind) -> bool {
        match self {
            Variant::V2 => kind == WaveformKind::Fofdm,
            Variant::V3 => kind != WaveformKind::Wola,
            Variant::V4 => kind == WaveformKind::Wola,
            _ => true,
        }
    }

    pub fn compatible(kind: WaveformKind) -> Vec<Variant> {
        Self::ALL.into_iter().filter(|v| v.supports(kind)).collect()
    }

    pub fn boundary(&self) -> Option<Boundary> {
        let (element, count) = match self {
            Variant::V1 => return None,
            Variant::V2 => (Element::FixedPoint, 150),
            Variant::V3 => (Element::FixedPoint, 75),
            Variant::V4 => (Element::FixedPoint, 91),
            Variant::V5 | Variant::V6 => (Element::FixedPoint, 48),
            Variant::V7 => (Element::Boolean, 48),
            Variant::V8 | Variant::V9 | Variant::V10 => (Element::Boolean, 24),
        };
        Some(Boundary { element, count })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.number())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: usize = s
            .trim()
            .strip_prefix(['V', 'v'])
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::Config(format!("unknown partition variant '{s}'")))?;
        Self::ALL
            .get(n.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown partition variant '{s}'")))
    }
}

impl serde::Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Element {
    Boolean,
    FixedPoint,
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Element::Boolean => "boolean",
            Element::FixedPoint => "fixed-point",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Boundary {
    pub element: Element,
    pub count: usize,
}

/// Observed traffic across the boundary of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BoundaryStats {
    pub tx_frames: Vec<usize>,
    pub rx_frames: Vec<usize>,
}

impl BoundaryStats {
    /// The common frame size, if every transfer had the same size.
    pub fn uniform_count(&self) -> Option<usize> {
        let first = *self.tx_frames.first().or(self.rx_frames.first())?;
        self.tx_frames
            .iter()
            .chain(&self.rx_frames)
            .all(|&c| c == first)
            .then_some(first)
    }
}

/// A transceiver split into a frame-mode part and a stream-mode part.
pub struct Partition {
    pub variant: Variant,
    tr: Arc<Transceiver>,
    tx: Pipeline,
    rx: Pipeline,
    pub stats: BoundaryStats,
}

fn filter_chunk(tr: &Transceiver) -> usize {
    tr.filter.len().saturating_sub(1).max(1)
}

/// Stream length for a filter pass: a multiple of the chunk size with room
/// for the group-delay flush.
fn padded_len(tr: &Transceiver, len: usize) -> usize {
    let chunk = filter_chunk(tr);
    (len + tr.filter.len() / 2).div_ceil(chunk) * chunk
}

fn word_kernel<F>(f: F) -> Kernel
where
    F: Fn(&[Word]) -> Vec<Word> + Send + 'static,
{
    Box::new(move |w| Ok(f(w)))
}

fn acc<F>(name: &str, len: usize, f: F) -> Box<dyn StreamBlock>
where
    F: Fn(&[Word]) -> Vec<Word> + Send + 'static,
{
    Box::new(Accumulate::new(name, len, word_kernel(f)))
}

impl Partition {
    pub fn new(variant: Variant, tr: Arc<Transceiver>, n_frames: usize) -> Result<Self> {
        if !variant.supports(tr.kind()) {
            return Err(Error::Config(format!("{variant} is not applicable to {}", tr.kind())));
        }
        if variant != Variant::V1 && !tr.dp.is_fixed() {
            return Err(Error::Config("stream-mode partitions need a fixed-point datapath".into()));
        }
        Ok(Self {
            variant,
            tx: Pipeline::new(tx_blocks(variant, &tr, n_frames)),
            rx: Pipeline::new(rx_blocks(variant, &tr, n_frames)),
            tr,
            stats: BoundaryStats::default(),
        })
    }

    pub fn with_trace(mut self) -> Self {
        self.tx = self.tx.with_trace();
        self.rx = self.rx.with_trace();
        self
    }

    pub fn transceiver(&self) -> &Transceiver {
        &self.tr
    }

    pub fn tx_pipeline(&self) -> &Pipeline {
        &self.tx
    }

    pub fn rx_pipeline(&self) -> &Pipeline {
        &self.rx
    }

    /// Frame-mode prefix up to the boundary, then the stream-mode remainder.
    pub fn transmit(&mut self, frames: &[BitFrame]) -> Result<Vec<Complex64>> {
        let tr = Arc::clone(&self.tr);
        let wire = tr.dp.wire();
        if self.variant == Variant::V1 {
            return Ok(tr.tx_chain(frames));
        }
        let l = tr.symbol_len();
        let bits_of = |b: &[u8]| bits_to_words(b);
        let boundary: Vec<Vec<Word>> = match self.variant {
            Variant::V1 => unreachable!(),
            Variant::V2 => {
                let symbols: Vec<_> = frames.iter().map(|f| tr.tx_symbol(f)).collect();
                let mut burst = tr.assemble(&symbols);
                burst.resize(padded_len(&tr, burst.len()), Complex64::default());
                burst
                    .chunks(filter_chunk(&tr))
                    .map(|c| samples_to_words(c, wire))
                    .collect()
            }
            Variant::V3 => frames.iter().map(|f| samples_to_words(&tr.tx_symbol(f), wire)).collect(),
            Variant::V4 => frames
                .iter()
                .map(|f| {
                    let bits = tr.interleave(&tr.encode(&tr.scramble(f)));
                    samples_to_words(&tr.extend(&tr.modulate(&tr.bpsk(&bits))), wire)
                })
                .collect(),
            Variant::V5 | Variant::V6 => frames
                .iter()
                .map(|f| samples_to_words(&tr.bpsk(&tr.interleave(&tr.encode(&tr.scramble(f)))), wire))
                .collect(),
            Variant::V7 => frames
                .iter()
                .map(|f| bits_of(&tr.interleave(&tr.encode(&tr.scramble(f)))))
                .collect(),
            Variant::V8 => frames.iter().map(|f| bits_of(tr.scramble(f).bits())).collect(),
            Variant::V9 | Variant::V10 => frames.iter().map(|f| bits_of(f.bits())).collect(),
        };
        self.stats.tx_frames = boundary.iter().map(Vec::len).collect();
        let period = if self.variant == Variant::V2 { 0 } else { l };
        let out = words_to_samples(&self.tx.run(paced(&boundary, period))?);
        let total = tr.cfg.burst_len(frames.len());
        if out.len() != total {
            return Err(Error::Contract(format!(
                "stream transmitter produced {} samples, expected {total}",
                out.len()
            )));
        }
        Ok(out)
    }

    /// Stream-mode front end up to the boundary, then the frame-mode remainder.
    pub fn receive(&mut self, samples: &[Complex64], n_frames: usize) -> Result<Vec<BitFrame>> {
        let tr = Arc::clone(&self.tr);
        if self.variant == Variant::V1 {
            return tr.rx_chain(samples, n_frames);
        }
        let wire = tr.dp.wire();
        let mut front = tr.rx_front(samples);
        if tr.kind() == WaveformKind::Fofdm {
            front.resize(padded_len(&tr, front.len()), Complex64::default());
        }
        let input = samples_to_words(&front, wire);
        let words = self.rx.run(input.into_iter().map(StreamSample::data))?;
        let b = self.variant.boundary().expect("partitioned variant").count;
        let l = tr.symbol_len();
        let frames = |chunk: usize| -> Vec<&[Word]> { words.chunks(chunk).collect() };
        let out: Vec<BitFrame> = match self.variant {
            Variant::V1 => unreachable!(),
            Variant::V2 => {
                // Transfers are whole chunks; the last one is zero-padded.
                self.stats.rx_frames = vec![b; words.len().div_ceil(b)];
                let burst = words_to_samples(&words);
                let start = tr.detect(&burst)?;
                tr.split(&burst, start, n_frames)?.iter().map(|s| tr.rx_symbol(s)).collect()
            }
            Variant::V3 | Variant::V4 => {
                debug_assert_eq!(b, l);
                let chunks = frames(l);
                self.stats.rx_frames = chunks.iter().map(|c| c.len()).collect();
                chunks.iter().map(|c| tr.rx_symbol(&words_to_samples(c))).collect()
            }
            Variant::V5 | Variant::V6 => {
                let chunks = frames(b);
                self.stats.rx_frames = chunks.iter().map(|c| c.len()).collect();
                chunks
                    .iter()
                    .map(|c| {
                        let data = words_to_samples(c);
                        tr.descramble(&tr.decode(&tr.deinterleave(&tr.demod(&data))))
                    })
                    .collect()
            }
            Variant::V7 => {
                let chunks = frames(b);
                self.stats.rx_frames = chunks.iter().map(|c| c.len()).collect();
                chunks
                    .iter()
                    .map(|c| tr.descramble(&tr.decode(&tr.deinterleave(&words_to_bits(c)))))
                    .collect()
            }
            Variant::V8 | Variant::V9 => {
                let chunks = frames(b);
                self.stats.rx_frames = chunks.iter().map(|c| c.len()).collect();
                chunks
                    .iter()
                    .map(|c| Ok(tr.descramble(&BitFrame::from_slice(&words_to_bits(c))?)))
                    .collect::<Result<_>>()?
            }
            Variant::V10 => {
                let chunks = frames(b);
                self.stats.rx_frames = chunks.iter().map(|c| c.len()).collect();
                chunks
                    .iter()
                    .map(|c| BitFrame::from_slice(&words_to_bits(c)))
                    .collect::<Result<_>>()?
            }
        };
        if out.len() != n_frames {
            return Err(Error::Contract(format!(
                "stream receiver produced {} frames, expected {n_frames}",
                out.len()
            )));
        }
        Ok(out)
    }
}

fn tx_blocks(variant: Variant, tr: &Arc<Transceiver>, n_frames: usize) -> Vec<Box<dyn StreamBlock>> {
    use Variant::*;
    if variant == V1 {
        return Vec::new();
    }
    let wire = tr.dp.wire();
    let fofdm = tr.kind() == WaveformKind::Fofdm;
    let burst = tr.cfg.burst_len(n_frames);
    let mut v: Vec<Box<dyn StreamBlock>> = Vec::new();
    if matches!(variant, V9 | V10) {
        v.push(Box::new(ScramblerBlock::new(tr.scrambler.0)));
    }
    if matches!(variant, V8 | V9 | V10) {
        let t = Arc::clone(tr);
        v.push(acc("encoder", FRAME_BITS, move |w| {
            let f = BitFrame::from_slice(&words_to_bits(w)).expect("24 bits");
            bits_to_words(&t.encode(&f))
        }));
        let t = Arc::clone(tr);
        v.push(acc("interleaver", 2 * FRAME_BITS, move |w| {
            bits_to_words(&t.interleave(&words_to_bits(w)))
        }));
    }
    if matches!(variant, V7 | V8 | V9 | V10) {
        let t = Arc::clone(tr);
        v.push(acc("bpsk", 2 * FRAME_BITS, move |w| {
            samples_to_words(&t.bpsk(&words_to_bits(w)), wire)
        }));
    }
    if matches!(variant, V5 | V6 | V7 | V8 | V9 | V10) {
        let t = Arc::clone(tr);
        v.push(acc("ifft", 2 * FRAME_BITS, move |w| {
            samples_to_words(&t.modulate(&words_to_samples(w)), wire)
        }));
        match tr.kind() {
            WaveformKind::Wola => {
                v.push(Box::new(
                    WindowBlock::from_transceiver(tr, WindowInput::Symbol).expect("window"),
                ));
            }
            _ => v.push(Box::new(CpAdder::new(N, tr.cfg.cp).expect("cp adder"))),
        }
    }
    if variant == V4 {
        v.push(Box::new(
            WindowBlock::from_transceiver(tr, WindowInput::Extended).expect("window"),
        ));
    }
    if variant != V2 {
        let total = if fofdm { padded_len(tr, burst) } else { burst };
        v.push(Box::new(PreambleAdder::new(
            tr.cfg.lead_len(),
            &tr.preamble,
            n_frames * tr.symbol_len(),
            total,
            wire.expect("fixed datapath"),
        )));
    }
    if fofdm {
        v.extend(filter_blocks(tr, burst));
    }
    v
}

fn filter_blocks(tr: &Transceiver, burst: usize) -> Vec<Box<dyn StreamBlock>> {
    let codes = tr.filter_codes.clone().expect("fixed datapath");
    let delay = codes.len() / 2;
    vec![
        Box::new(FirBlock::new(codes, tr.dp).expect("fir")),
        Box::new(Selector::new(delay, burst)),
    ]
}

fn rx_blocks(variant: Variant, tr: &Arc<Transceiver>, n_frames: usize) -> Vec<Box<dyn StreamBlock>> {
    use Variant::*;
    if variant == V1 {
        return Vec::new();
    }
    let wire = tr.dp.wire();
    let burst = tr.cfg.burst_len(n_frames);
    let l = tr.symbol_len();
    let mut v: Vec<Box<dyn StreamBlock>> = Vec::new();
    if tr.kind() == WaveformKind::Fofdm {
        v.extend(filter_blocks(tr, burst));
    }
    if variant == V2 {
        return v;
    }
    let t = Arc::clone(tr);
    v.push(Box::new(Accumulate::new(
        "detector",
        burst,
        Box::new(move |w| {
            let b = words_to_samples(w);
            let start = t.detect(&b)?;
            Ok(t.split(&b, start, n_frames)?
                .iter()
                .flat_map(|s| samples_to_words(s, wire))
                .collect())
        }),
    )));
    if matches!(variant, V3 | V4) {
        return v;
    }
    let t = Arc::clone(tr);
    v.push(acc(
        if tr.kind() == WaveformKind::Wola { "wola_rx" } else { "cp_remover" },
        l,
        move |w| samples_to_words(&t.strip(&words_to_samples(w)), wire),
    ));
    let t = Arc::clone(tr);
    v.push(acc("fft", N, move |w| samples_to_words(&t.demodulate(&words_to_samples(w)), wire)));
    let t = Arc::clone(tr);
    v.push(acc("equalizer", N, move |w| {
        samples_to_words(&t.equalize(&words_to_samples(w)), wire)
    }));
    if matches!(variant, V5 | V6) {
        return v;
    }
    let t = Arc::clone(tr);
    v.push(acc("bpsk_demod", 2 * FRAME_BITS, move |w| {
        bits_to_words(&t.demod(&words_to_samples(w)))
    }));
    if variant == V7 {
        return v;
    }
    let t = Arc::clone(tr);
    v.push(acc("deinterleaver", 2 * FRAME_BITS, move |w| {
        bits_to_words(&t.deinterleave(&words_to_bits(w)))
    }));
    let t = Arc::clone(tr);
    v.push(acc("viterbi", 2 * FRAME_BITS, move |w| {
        bits_to_words(t.decode(&words_to_bits(w)).bits())
    }));
    if variant == V10 {
        v.push(Box::new(ScramblerBlock::new(tr.scrambler.0)));
    }
    v
}

/// Outcome of running one variant next to the all-frame-mode reference.
#[derive(Debug, Clone)]
pub struct Equivalence {
    pub variant: Variant,
    pub tx_identical: bool,
    pub bits_identical: bool,
    pub boundary: Option<Boundary>,
    pub observed_count: Option<usize>,
}

impl Equivalence {
    pub fn passed(&self) -> bool {
        self.tx_identical
            && self.bits_identical
            && self.boundary.map(|b| b.count) == self.observed_count
    }
}

/// Run `variant` and V1 on the same frames; `channel` maps the transmitted
/// burst to the received one and must be deterministic.
pub fn check_equivalence(
    tr: &Arc<Transceiver>,
    variant: Variant,
    frames: &[BitFrame],
    channel: impl Fn(&[Complex64]) -> Vec<Complex64>,
) -> Result<Equivalence> {
    let mut golden = Partition::new(Variant::V1, Arc::clone(tr), frames.len())?;
    let tx_ref = golden.transmit(frames)?;
    let rx_ref = golden.receive(&channel(&tx_ref), frames.len())?;
    let mut p = Partition::new(variant, Arc::clone(tr), frames.len())?;
    let tx = p.transmit(frames)?;
    let rx = p.receive(&channel(&tx), frames.len())?;
    Ok(Equivalence {
        variant,
        tx_identical: tx == tx_ref,
        bits_identical: rx == rx_ref,
        boundary: variant.boundary(),
        observed_count: p.stats.uniform_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::FxFormat;
    use crate::waveforms::{self, WaveformConfig, PREAMBLE_LEN};

    fn q() -> FxFormat {
        FxFormat::signal(16).unwrap()
    }

    fn sw(v: i64) -> Word {
        Word::Sample(FxComplex { re: v, im: -v, fmt: q() })
    }

    fn codes(words: &[Word]) -> Vec<i64> {
        words
            .iter()
            .map(|w| match w {
                Word::Sample(z) => z.re,
                Word::Bit(b) => *b as i64,
            })
            .collect()
    }

    fn tr(kind: WaveformKind) -> Arc<Transceiver> {
        Arc::new(Transceiver::new(&WaveformConfig::new(kind)).unwrap())
    }

    #[test]
    fn cp_adder_register_scheme() {
        let mut p = Pipeline::new(vec![Box::new(CpAdder::new(4, 1).unwrap())]);
        let a: Vec<Word> = (0..4).map(sw).collect();
        let b: Vec<Word> = (10..14).map(sw).collect();
        let out = p.run(paced(&[a, b], 5)).unwrap();
        assert_eq!(codes(&out), [3, 0, 1, 2, 3, 13, 10, 11, 12, 13]);
    }

    #[test]
    fn cp_adder_stalls_on_gaps() {
        let mut p = Pipeline::new(vec![Box::new(CpAdder::new(4, 1).unwrap())]);
        let mut input = Vec::new();
        for k in 0..4 {
            input.push(StreamSample::data(sw(k)));
            input.push(StreamSample::IDLE);
            input.push(StreamSample::IDLE);
        }
        assert_eq!(codes(&p.run(input).unwrap()), [3, 0, 1, 2, 3]);
    }

    #[test]
    fn window_all_ones_is_cyclic_extension() {
        let dp = Datapath::fixed(16, 16).unwrap();
        let blk = WindowBlock::new(WindowInput::Symbol, 11, 8, vec![1.0; 19], vec![1.0; 8], dp).unwrap();
        let mut p = Pipeline::new(vec![Box::new(blk)]);
        let x: Vec<Word> = (0..64).map(sw).collect();
        let out = p.run(paced(&[x], 0)).unwrap();
        let expect: Vec<i64> = (45..64).chain(0..64).chain(0..8).collect();
        assert_eq!(codes(&out), expect);
    }

    #[test]
    fn window_matches_frame_mode() {
        let t = tr(WaveformKind::Wola);
        let frames = waveforms::stimulus(3);
        let mut p = Pipeline::new(vec![Box::new(WindowBlock::from_transceiver(&t, WindowInput::Symbol).unwrap())]);
        let mut input = Vec::new();
        let mut expect = Vec::new();
        for f in &frames[..4] {
            let bits = t.interleave(&t.encode(&t.scramble(f)));
            let sym = t.modulate(&t.bpsk(&bits));
            input.push(samples_to_words(&sym, t.dp.wire()));
            expect.extend(t.tx_window(&t.extend(&sym)));
        }
        let out = words_to_samples(&p.run(paced(&input, 91)).unwrap());
        assert_eq!(out, expect);
    }

    #[test]
    fn fir_impulse_and_latency() {
        let dp = Datapath::fixed(16, 16).unwrap();
        let c = [100, -200, 300];
        let mut blk = FirBlock::new(c.to_vec(), dp).unwrap();
        let one = Word::Sample(FxComplex { re: 1 << 14, im: 0, fmt: q() });
        let zero = Word::Sample(FxComplex::zero(q()));
        let mut outs = Vec::new();
        for (k, w) in [one, zero, zero, zero, zero].into_iter().enumerate() {
            let o = blk.step(StreamSample::data(w));
            outs.push((k, o));
        }
        for _ in 0..blk.latency() {
            outs.push((outs.len(), blk.step(StreamSample::IDLE)));
        }
        let first = outs.iter().position(|(_, o)| o.valid).unwrap();
        assert_eq!(first, blk.latency());
        let got: Vec<i64> = outs.iter().filter(|(_, o)| o.valid).map(|(_, o)| match o.payload {
            Word::Sample(z) => z.re,
            _ => unreachable!(),
        }).collect();
        // Coefficient format has one more fraction bit than the signal.
        let sig = q();
        let cf = FxFormat::coeff(16).unwrap();
        let expect: Vec<i64> = c
            .iter()
            .map(|&x| sig.quantize(cf.dequantize(x)))
            .chain([0, 0])
            .collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn preamble_adder_lut_then_data() {
        let pre: Vec<Complex64> = (0..PREAMBLE_LEN).map(|k| Complex64::new(k as f64 / 512.0, 0.0)).collect();
        let mut p = Pipeline::new(vec![Box::new(PreambleAdder::new(3, &pre, 4, 330, q()))]);
        let data: Vec<Word> = (1..5).map(sw).collect();
        let out = p.run(paced(&[data], 0)).unwrap();
        assert_eq!(out.len(), 330);
        assert_eq!(words_to_samples(&out[3..323]), pre);
        assert_eq!(codes(&out[323..327]), [1, 2, 3, 4]);
        assert!(codes(&out[327..]).iter().all(|&c| c == 0));
    }

    #[test]
    fn scrambler_gates_on_valid() {
        let seq = crate::coding::ScramblerSequence::default().0;
        let mut p = Pipeline::new(vec![Box::new(ScramblerBlock::new(seq))]);
        let mut input = Vec::new();
        for _ in 0..FRAME_BITS {
            input.push(StreamSample::IDLE);
            input.push(StreamSample::data(Word::Bit(false)));
        }
        assert_eq!(words_to_bits(&p.run(input).unwrap()), seq);
    }

    #[test]
    fn reset_clears_state() {
        let mut blk = CpAdder::new(4, 1).unwrap();
        blk.step(StreamSample::data(sw(7)));
        blk.step(StreamSample::data(sw(8)));
        blk.step(StreamSample::RESET);
        let mut out = Vec::new();
        for k in 0..4 {
            let o = blk.step(StreamSample::data(sw(k)));
            if o.valid {
                out.push(o.payload);
            }
        }
        while blk.busy() {
            out.push(blk.step(StreamSample::IDLE).payload);
        }
        assert_eq!(codes(&out), [3, 0, 1, 2, 3]);
    }

    #[test]
    fn variant_parsing_and_counts() {
        assert_eq!("V10".parse::<Variant>().unwrap(), Variant::V10);
        assert!("V11".parse::<Variant>().is_err());
        assert!("V0".parse::<Variant>().is_err());
        assert_eq!(Variant::V3.boundary().unwrap().count, 75);
        assert_eq!(Variant::V8.boundary().unwrap().element, Element::Boolean);
        assert!(Variant::V1.boundary().is_none());
        assert_eq!(Variant::compatible(WaveformKind::Fofdm).len(), 9);
        assert_eq!(Variant::compatible(WaveformKind::Ofdm).len(), 8);
    }

    #[test]
    fn incompatible_variant_rejected() {
        let t = tr(WaveformKind::Ofdm);
        assert!(matches!(Partition::new(Variant::V4, t, 36), Err(Error::Config(_))));
    }

    #[test]
    fn every_variant_matches_v1() {
        let frames = waveforms::stimulus(11);
        for kind in WaveformKind::ALL {
            let t = tr(kind);
            for v in Variant::compatible(kind) {
                let e = check_equivalence(&t, v, &frames, |x| x.to_vec()).unwrap();
                assert!(e.passed(), "{kind} {v}: {e:?}");
            }
        }
    }
}
