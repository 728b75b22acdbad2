//! Bit-domain blocks: scrambler, rate-1/2 K=7 convolutional code (133, 171)
//! with a hard-decision Viterbi decoder, and the 48-bit block interleaver.
//!
//! Bits are `u8` values restricted to 0 and 1.

use crate::error::{check_len, Error, Result};

/// Information bits carried by one OFDM data symbol.
pub const FRAME_BITS: usize = 24;
/// Coded bits per data symbol (rate 1/2, no tail).
pub const CODED_BITS: usize = 48;

/// First 24 output bits of the x^7 + x^4 + 1 scrambler seeded with all ones.
pub const DEFAULT_SCRAMBLER: [u8; FRAME_BITS] = [
    0, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 0, 0, 1,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitFrame(pub [u8; FRAME_BITS]);

impl BitFrame {
    pub fn from_slice(bits: &[u8]) -> Result<Self> {
        check_len("bit frame", FRAME_BITS, bits.len())?;
        let mut out = [0u8; FRAME_BITS];
        for (o, &b) in out.iter_mut().zip(bits) {
            *o = b & 1;
        }
        Ok(Self(out))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }
}

/// Split a bit stream into 24-bit frames; the length must be a multiple of 24.
pub fn frames_from_bits(bits: &[u8]) -> Result<Vec<BitFrame>> {
    if bits.len() % FRAME_BITS != 0 {
        return Err(Error::Contract(format!(
            "stimulus of {} bits is not a whole number of {FRAME_BITS}-bit frames",
            bits.len()
        )));
    }
    bits.chunks(FRAME_BITS).map(BitFrame::from_slice).collect()
}

pub fn bits_from_frames(frames: &[BitFrame]) -> Vec<u8> {
    frames.iter().flat_map(|f| f.0).collect()
}

/// Scrambling sequence shared by transmitter and receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScramblerSequence(pub [u8; FRAME_BITS]);

impl Default for ScramblerSequence {
    fn default() -> Self {
        Self(DEFAULT_SCRAMBLER)
    }
}

impl ScramblerSequence {
    /// Parse 24 whitespace- or comma-separated bits; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let bits = parse_integers(text)?;
        check_len("scrambler sequence", FRAME_BITS, bits.len())?;
        let mut out = [0u8; FRAME_BITS];
        for (o, &b) in out.iter_mut().zip(&bits) {
            if b > 1 {
                return Err(Error::Config(format!("scrambler entry {b} is not a bit")));
            }
            *o = b as u8;
        }
        Ok(Self(out))
    }
}

/// Output of the 802.11a-style additive scrambler LFSR (x^7 + x^4 + 1).
pub fn lfsr_sequence(seed: u8, len: usize) -> Vec<u8> {
    let mut state = seed & 0x7f;
    (0..len)
        .map(|_| {
            let bit = ((state >> 6) ^ (state >> 3)) & 1;
            state = ((state << 1) | bit) & 0x7f;
            bit
        })
        .collect()
}

pub fn scramble(frame: &BitFrame, seq: &ScramblerSequence) -> BitFrame {
    let mut out = frame.0;
    for (o, s) in out.iter_mut().zip(seq.0) {
        *o ^= s;
    }
    BitFrame(out)
}

/// XOR is an involution, so descrambling is the same operation.
pub fn descramble(frame: &BitFrame, seq: &ScramblerSequence) -> BitFrame {
    scramble(frame, seq)
}

/// Generator polynomials in octal; the MSB taps the current input bit.
pub const G0: u32 = 0o133;
pub const G1: u32 = 0o171;
pub const CONSTRAINT_LENGTH: usize = 7;
const MEMORY: usize = CONSTRAINT_LENGTH - 1;
const STATES: usize = 1 << MEMORY;

/// How an encoded block starts and ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Termination {
    /// Start from the zero state and append six zero tail bits.
    #[default]
    ZeroTail,
    /// Start in the state given by the last six message bits; no rate loss.
    TailBiting,
}

#[inline]
fn parity(x: u32) -> u8 {
    (x.count_ones() & 1) as u8
}

/// Output pair for input `u` leaving `state` (state bit 5 = most recent input).
#[inline]
fn branch(state: usize, u: u8) -> (u8, u8) {
    let reg = ((u as u32) << MEMORY) | state as u32;
    (parity(reg & G0), parity(reg & G1))
}

#[inline]
fn next_state(state: usize, u: u8) -> usize {
    ((u as usize) << (MEMORY - 1)) | (state >> 1)
}

fn tail_biting_start(bits: &[u8]) -> usize {
    let n = bits.len();
    (0..MEMORY).fold(0, |s, i| s | ((bits[n - 1 - i] as usize & 1) << (MEMORY - 1 - i)))
}

/// Rate-1/2 encoding with zero-tail termination: output is 2·(len + 6) bits.
pub fn conv_encode(bits: &[u8]) -> Vec<u8> {
    encode_with(bits, Termination::ZeroTail).expect("zero-tail encoding accepts any length")
}

/// Encode with the given termination. Output pairs are g0 first, then g1.
pub fn encode_with(bits: &[u8], term: Termination) -> Result<Vec<u8>> {
    let (mut state, tail) = match term {
        Termination::ZeroTail => (0, MEMORY),
        Termination::TailBiting => {
            if bits.len() < MEMORY {
                return Err(Error::Contract(format!(
                    "tail-biting needs at least {MEMORY} message bits, got {}",
                    bits.len()
                )));
            }
            (tail_biting_start(bits), 0)
        }
    };
    let mut out = Vec::with_capacity(2 * (bits.len() + tail));
    for &b in bits.iter().chain(std::iter::repeat_n(&0u8, tail)) {
        let (a, c) = branch(state, b & 1);
        out.push(a);
        out.push(c);
        state = next_state(state, b & 1);
    }
    Ok(out)
}

/// Hard-decision maximum-likelihood decoding of a zero-tail codeword.
pub fn viterbi_decode(coded: &[u8]) -> Vec<u8> {
    decode_with(coded, Termination::ZeroTail).expect("even-length codeword")
}

pub fn decode_with(coded: &[u8], term: Termination) -> Result<Vec<u8>> {
    if coded.len() % 2 != 0 {
        return Err(Error::Contract(format!(
            "coded length {} is not even",
            coded.len()
        )));
    }
    let steps = coded.len() / 2;
    match term {
        Termination::ZeroTail => {
            if steps < MEMORY {
                return Err(Error::Contract(format!(
                    "zero-tail codeword of {steps} pairs is shorter than the tail"
                )));
            }
            let (_, path) = viterbi_run(coded, 0, Some(0));
            Ok(path[..steps - MEMORY].to_vec())
        }
        Termination::TailBiting => {
            if steps < MEMORY {
                return Err(Error::Contract(format!(
                    "tail-biting needs at least {MEMORY} pairs, got {steps}"
                )));
            }
            // Exact ML: one constrained trellis search per start state.
            let mut best: Option<(u32, Vec<u8>)> = None;
            for start in 0..STATES {
                let (metric, path) = viterbi_run(coded, start, Some(start));
                if best.as_ref().is_none_or(|(m, _)| metric < *m) {
                    best = Some((metric, path));
                }
            }
            Ok(best.map(|(_, p)| p).unwrap_or_default())
        }
    }
}

/// Full-traceback Viterbi from `start`, ending in `end` (or the best state).
/// Returns the path metric and the decoded input bits for every step.
fn viterbi_run(coded: &[u8], start: usize, end: Option<usize>) -> (u32, Vec<u8>) {
    const INF: u32 = u32::MAX / 2;
    let steps = coded.len() / 2;
    let mut metric = [INF; STATES];
    metric[start] = 0;
    // decisions[t][ns] = low bit of the winning predecessor state
    let mut decisions = vec![[0u8; STATES]; steps];
    for (t, pair) in coded.chunks_exact(2).enumerate() {
        let (r0, r1) = (pair[0] & 1, pair[1] & 1);
        let mut next = [INF; STATES];
        for (ns, slot) in next.iter_mut().enumerate() {
            let u = (ns >> (MEMORY - 1)) as u8;
            let base = (ns << 1) & (STATES - 1);
            let mut best = INF;
            let mut pick = 0u8;
            for x in 0..2usize {
                let ps = base | x;
                if metric[ps] >= INF {
                    continue;
                }
                let (a, c) = branch(ps, u);
                let m = metric[ps] + (a ^ r0) as u32 + (c ^ r1) as u32;
                if m < best {
                    best = m;
                    pick = x as u8;
                }
            }
            *slot = best;
            decisions[t][ns] = pick;
        }
        metric = next;
    }
    let mut state = match end {
        Some(s) => s,
        None => (0..STATES).min_by_key(|&s| metric[s]).unwrap_or(0),
    };
    let final_metric = metric[state];
    let mut bits = vec![0u8; steps];
    for t in (0..steps).rev() {
        bits[t] = (state >> (MEMORY - 1)) as u8;
        state = ((state << 1) & (STATES - 1)) | decisions[t][state] as usize;
    }
    (final_metric, bits)
}

/// Permutation used by the block interleaver: `out[perm[k]] = in[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterleaverTable {
    perm: Vec<usize>,
}

impl Default for InterleaverTable {
    fn default() -> Self {
        Self::ieee80211a_bpsk()
    }
}

impl InterleaverTable {
    pub fn from_perm(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Config(format!(
                    "interleaver table is not a permutation of 0..{}",
                    perm.len()
                )));
            }
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
        }
    }

    /// 802.11a first permutation for 48 coded bits per symbol; the second
    /// permutation is the identity for BPSK.
    pub fn ieee80211a_bpsk() -> Self {
        let n = CODED_BITS;
        Self {
            perm: (0..n).map(|k| (n / 16) * (k % 16) + k / 16).collect(),
        }
    }

    /// Parse a whitespace/comma-separated list of indices.
    pub fn parse(text: &str) -> Result<Self> {
        let perm = parse_integers(text)?;
        check_len("interleaver table", CODED_BITS, perm.len())?;
        Self::from_perm(perm)
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

pub fn interleave<T: Copy + Default>(bits: &[T], table: &InterleaverTable) -> Result<Vec<T>> {
    check_len("interleaver input", table.len(), bits.len())?;
    let mut out = vec![T::default(); bits.len()];
    for (k, &p) in table.perm.iter().enumerate() {
        out[p] = bits[k];
    }
    Ok(out)
}

pub fn deinterleave<T: Copy + Default>(bits: &[T], table: &InterleaverTable) -> Result<Vec<T>> {
    check_len("deinterleaver input", table.len(), bits.len())?;
    Ok(table.perm.iter().map(|&p| bits[p]).collect())
}

fn parse_integers(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let mut column = 1;
        for tok in line.split(|c: char| c.is_whitespace() || c == ',') {
            if !tok.is_empty() {
                let v = tok.parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    column: line.find(tok).map_or(column, |i| i + 1),
                    message: format!("`{tok}` is not a non-negative integer"),
                })?;
                out.push(v);
            }
            column += tok.len() + 1;
        }
    }
    Ok(out)
}
