//! Convolutional code checked against an independent encoder and
//! exhaustive maximum-likelihood search.

use ldacs_lab::coding::{self, conv_encode, decode_with, encode_with, viterbi_decode, Termination};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator taps, current input first.
const TAPS0: [u8; 7] = [1, 0, 1, 1, 0, 1, 1];
const TAPS1: [u8; 7] = [1, 1, 1, 1, 0, 0, 1];

/// GF(2) convolution of the zero-padded message with both generators.
fn oracle_encode(msg: &[u8]) -> Vec<u8> {
    let padded: Vec<u8> = msg.iter().copied().chain([0; 6]).collect();
    let mut out = Vec::new();
    for n in 0..padded.len() {
        let mut a = 0;
        let mut b = 0;
        for k in 0..7 {
            if n >= k {
                a ^= TAPS0[k] & padded[n - k];
                b ^= TAPS1[k] & padded[n - k];
            }
        }
        out.push(a);
        out.push(b);
    }
    out
}

fn bits_of(v: u32, len: usize) -> Vec<u8> {
    (0..len).map(|i| ((v >> (len - 1 - i)) & 1) as u8).collect()
}

fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Minimum distance from `received` over every codeword of length `len`.
fn ml_distance(codebook: &[Vec<u8>], received: &[u8]) -> usize {
    codebook.iter().map(|c| hamming(c, received)).min().unwrap()
}

#[test]
fn encoder_matches_polynomial_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for len in 1..40 {
        let msg: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        assert_eq!(conv_encode(&msg), oracle_encode(&msg), "len {len}");
    }
}

#[test]
fn all_ten_bit_frames_round_trip() {
    for v in 0..1u32 << 10 {
        let m = bits_of(v, 10);
        assert_eq!(viterbi_decode(&conv_encode(&m)), m);
    }
}

#[test]
fn viterbi_is_maximum_likelihood_up_to_twelve_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for len in 1..=12usize {
        let codebook: Vec<Vec<u8>> = (0..1u32 << len).map(|v| oracle_encode(&bits_of(v, len))).collect();
        for _ in 0..40 {
            let received: Vec<u8> = (0..2 * (len + 6)).map(|_| rng.random_range(0..2)).collect();
            let decoded = viterbi_decode(&received);
            let d = hamming(&oracle_encode(&decoded), &received);
            assert_eq!(d, ml_distance(&codebook, &received), "len {len}");
        }
    }
}

#[test]
fn every_single_flip_is_corrected_up_to_twelve_bits() {
    for len in 1..=12usize {
        for v in 0..1u32 << len {
            let m = bits_of(v, len);
            let c = oracle_encode(&m);
            for i in 0..c.len() {
                let mut r = c.clone();
                r[i] ^= 1;
                assert_eq!(viterbi_decode(&r), m, "len {len} msg {v} flip {i}");
            }
        }
    }
}

#[test]
fn tail_biting_frames_correct_single_flips() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let m: Vec<u8> = (0..coding::FRAME_BITS).map(|_| rng.random_range(0..2)).collect();
        let c = encode_with(&m, Termination::TailBiting).unwrap();
        assert_eq!(c.len(), coding::CODED_BITS);
        for i in 0..c.len() {
            let mut r = c.clone();
            r[i] ^= 1;
            assert_eq!(decode_with(&r, Termination::TailBiting).unwrap(), m, "flip {i}");
        }
    }
}
