//! Threshold secret sharing over GF(2^8), applied byte by byte.

use rand::{CryptoRng, RngCore};

/// Reduction polynomial x^8 + x^4 + x^3 + x + 1.
const POLY: u16 = 0x11b;

pub(crate) fn gf_mul(a: u8, b: u8) -> u8 {
    let (mut a, mut b) = (a as u16, b);
    let mut out = 0u16;
    while b != 0 {
        if b & 1 != 0 {
            out ^= a;
        }
        a <<= 1;
        if a & 0x100 != 0 {
            a ^= POLY;
        }
        b >>= 1;
    }
    out as u8
}

pub(crate) fn gf_inv(a: u8) -> u8 {
    // a^254 = a^-1 in the multiplicative group of order 255.
    let mut result = 1u8;
    let mut base = a;
    let mut exp = 254u8;
    while exp != 0 {
        if exp & 1 != 0 {
            result = gf_mul(result, base);
        }
        base = gf_mul(base, base);
        exp >>= 1;
    }
    result
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    pub x: u8,
    pub y: Vec<u8>,
}

impl Share {
    pub fn to_hex(&self) -> String {
        let mut bytes = Vec::with_capacity(self.y.len() + 1);
        bytes.push(self.x);
        bytes.extend_from_slice(&self.y);
        hex::encode(bytes)
    }

    pub fn from_hex(text: &str, secret_len: usize) -> Option<Share> {
        let bytes = hex::decode(text.trim()).ok()?;
        if bytes.len() != secret_len + 1 || bytes[0] == 0 {
            return None;
        }
        Some(Share { x: bytes[0], y: bytes[1..].to_vec() })
    }
}

/// Splits `secret` into `n` shares, any `t` of which recover it.
/// Callers guarantee `1 <= t <= n <= 255`.
pub fn split<R: RngCore + CryptoRng>(secret: &[u8], n: u8, t: u8, rng: &mut R) -> Vec<Share> {
    assert!(t >= 1 && t <= n, "invalid threshold {t} of {n}");
    let mut shares: Vec<Share> = (1..=n).map(|x| Share { x, y: Vec::with_capacity(secret.len()) }).collect();
    let mut coeffs = vec![0u8; t as usize];
    for &byte in secret {
        coeffs[0] = byte;
        rng.fill_bytes(&mut coeffs[1..]);
        for share in &mut shares {
            // Horner evaluation at x.
            let mut acc = 0u8;
            for &c in coeffs.iter().rev() {
                acc = gf_mul(acc, share.x) ^ c;
            }
            share.y.push(acc);
        }
    }
    coeffs.iter_mut().for_each(|c| *c = 0);
    shares
}

/// Lagrange interpolation at zero. Shares must have distinct, nonzero x and
/// equal length; with fewer than the threshold the output is unrelated noise.
pub fn combine(shares: &[Share]) -> Vec<u8> {
    let len = shares.first().map_or(0, |s| s.y.len());
    let mut secret = vec![0u8; len];
    for (i, si) in shares.iter().enumerate() {
        let mut basis = 1u8;
        for (j, sj) in shares.iter().enumerate() {
            if i != j {
                // l_i(0) = prod x_j / (x_j - x_i); subtraction is xor.
                basis = gf_mul(basis, gf_mul(sj.x, gf_inv(sj.x ^ si.x)));
            }
        }
        for (out, &y) in secret.iter_mut().zip(&si.y) {
            *out ^= gf_mul(basis, y);
        }
    }
    secret
}
