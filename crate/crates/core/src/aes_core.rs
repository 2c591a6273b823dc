//! Reference AES-128 (ECB) and the primitive round transformations.
//!
//! This is the oracle path. It is written for clarity, not speed: every
//! transformation works on a 16-byte column-major state where byte `i` sits
//! at row `i % 4`, column `i / 4`. The lookup-table path in
//! [`crate::ttables`] is checked against this module.

use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

pub const BLOCK_LEN: usize = 16;
pub const KEY_LEN: usize = 16;
pub const ROUNDS: usize = 10;

/// x^8 + x^4 + x^3 + x + 1 with the x^8 term dropped.
const REDUCTION: u8 = 0x1b;

const RCON: [u8; ROUNDS] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AesError {
    #[error("key must be exactly {KEY_LEN} bytes, got {0}")]
    KeyLength(usize),
    #[error("block must be exactly {BLOCK_LEN} bytes, got {0}")]
    BlockLength(usize),
    #[error("payload length {0} is not a multiple of {BLOCK_LEN}; padding is not supported")]
    Padding(usize),
    #[error("invalid hex key: {0}")]
    Hex(String),
}

/// A 128-bit AES key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Aes128Key([u8; KEY_LEN]);

impl Aes128Key {
    pub const fn new(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, AesError> {
        let arr: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| AesError::KeyLength(bytes.len()))?;
        Ok(Self(arr))
    }

    /// Parses 32 hex digits. Surrounding whitespace is ignored so key files
    /// with a trailing newline are accepted.
    pub fn from_hex(s: &str) -> Result<Self, AesError> {
        let bytes = hex::decode(s.trim()).map_err(|e| AesError::Hex(e.to_string()))?;
        Self::from_slice(&bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

// Keys never show up in logs or debug output.
impl fmt::Debug for Aes128Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Aes128Key(..)")
    }
}

/// One 16-byte AES state in column-major order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StateBlock(pub [u8; BLOCK_LEN]);

impl StateBlock {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, AesError> {
        let arr: [u8; BLOCK_LEN] = bytes
            .try_into()
            .map_err(|_| AesError::BlockLength(bytes.len()))?;
        Ok(Self(arr))
    }

    pub fn from_hex(s: &str) -> Result<Self, AesError> {
        let bytes = hex::decode(s.trim()).map_err(|e| AesError::Hex(e.to_string()))?;
        Self::from_slice(&bytes)
    }

    pub fn as_bytes(&self) -> &[u8; BLOCK_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for StateBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateBlock({})", self.to_hex())
    }
}

/// The eleven round keys of AES-128. Index 0 is the cipher key itself.
#[derive(Clone, PartialEq, Eq)]
pub struct RoundKeySchedule {
    round_keys: [[u8; BLOCK_LEN]; ROUNDS + 1],
}

impl RoundKeySchedule {
    pub fn round_key(&self, round: usize) -> &[u8; BLOCK_LEN] {
        &self.round_keys[round]
    }

    pub fn round_keys(&self) -> &[[u8; BLOCK_LEN]; ROUNDS + 1] {
        &self.round_keys
    }
}

impl fmt::Debug for RoundKeySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RoundKeySchedule(..)")
    }
}


/// Multiplication in GF(2^8) modulo x^8 + x^4 + x^3 + x + 1.
pub fn gf_mul(a: u8, b: u8) -> u8 {
    #[cfg(test)]
    audit::GF_MUL_CALLS.with(|c| c.set(c.get() + 1));
    gf_mul_raw(a, b)
}

fn gf_mul_raw(mut a: u8, mut b: u8) -> u8 {
    let mut acc = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            acc ^= a;
        }
        let carry = a & 0x80 != 0;
        a <<= 1;
        if carry {
            a ^= REDUCTION;
        }
        b >>= 1;
    }
    acc
}

fn gf_inverse(a: u8) -> u8 {
    if a == 0 {
        return 0;
    }
    // a^254 = a^-1 in the multiplicative group of order 255.
    let mut result = 1u8;
    let mut base = a;
    let mut exp = 254u8;
    while exp != 0 {
        if exp & 1 != 0 {
            result = gf_mul_raw(result, base);
        }
        base = gf_mul_raw(base, base);
        exp >>= 1;
    }
    result
}

fn affine(b: u8) -> u8 {
    b ^ b.rotate_left(1) ^ b.rotate_left(2) ^ b.rotate_left(3) ^ b.rotate_left(4) ^ 0x63
}

/// The AES S-box, synthesized from the field inverse and the affine map.
pub fn sbox() -> &'static [u8; 256] {
    static SBOX: OnceLock<[u8; 256]> = OnceLock::new();
    SBOX.get_or_init(|| {
        let mut table = [0u8; 256];
        for (x, slot) in table.iter_mut().enumerate() {
            *slot = affine(gf_inverse(x as u8));
        }
        table
    })
}

pub fn expand_key(key: &Aes128Key) -> RoundKeySchedule {
    let sbox = sbox();
    let mut words = [[0u8; 4]; 4 * (ROUNDS + 1)];
    for (i, w) in words.iter_mut().take(4).enumerate() {
        w.copy_from_slice(&key.0[4 * i..4 * i + 4]);
    }
    for i in 4..words.len() {
        let mut temp = words[i - 1];
        if i % 4 == 0 {
            temp.rotate_left(1);
            for b in temp.iter_mut() {
                *b = sbox[*b as usize];
            }
            temp[0] ^= RCON[i / 4 - 1];
        }
        for j in 0..4 {
            words[i][j] = words[i - 4][j] ^ temp[j];
        }
    }

    let mut round_keys = [[0u8; BLOCK_LEN]; ROUNDS + 1];
    for (r, rk) in round_keys.iter_mut().enumerate() {
        for c in 0..4 {
            rk[4 * c..4 * c + 4].copy_from_slice(&words[4 * r + c]);
        }
    }
    RoundKeySchedule { round_keys }
}

pub fn sub_bytes(s: StateBlock) -> StateBlock {
    #[cfg(test)]
    audit::SUB_BYTES_CALLS.with(|c| c.set(c.get() + 1));
    let sbox = sbox();
    StateBlock(s.0.map(|b| sbox[b as usize]))
}

/// Row `r` is rotated left by `r` positions.
pub fn shift_rows(s: StateBlock) -> StateBlock {
    let mut out = [0u8; BLOCK_LEN];
    for col in 0..4 {
        for row in 0..4 {
            out[4 * col + row] = s.0[4 * ((col + row) % 4) + row];
        }
    }
    StateBlock(out)
}

pub fn mix_columns(s: StateBlock) -> StateBlock {
    let mut out = [0u8; BLOCK_LEN];
    for col in 0..4 {
        let c = &s.0[4 * col..4 * col + 4];
        for row in 0..4 {
            out[4 * col + row] = gf_mul(c[row], 2)
                ^ gf_mul(c[(row + 1) % 4], 3)
                ^ c[(row + 2) % 4]
                ^ c[(row + 3) % 4];
        }
    }
    StateBlock(out)
}

pub fn add_round_key(s: StateBlock, key: &[u8; BLOCK_LEN]) -> StateBlock {
    let mut out = s.0;
    for (b, k) in out.iter_mut().zip(key) {
        *b ^= k;
    }
    StateBlock(out)
}

fn encrypt_with_schedule(schedule: &RoundKeySchedule, plaintext: StateBlock) -> StateBlock {
    let mut state = add_round_key(plaintext, schedule.round_key(0));
    for round in 1..ROUNDS {
        state = sub_bytes(state);
        state = shift_rows(state);
        state = mix_columns(state);
        state = add_round_key(state, schedule.round_key(round));
    }
    state = sub_bytes(state);
    state = shift_rows(state);
    add_round_key(state, schedule.round_key(ROUNDS))
}

pub fn encrypt_block(key: &Aes128Key, plaintext: StateBlock) -> StateBlock {
    encrypt_with_schedule(&expand_key(key), plaintext)
}

/// Encrypts every 16-byte block independently. The input must already be a
/// whole number of blocks.
pub fn encrypt_ecb(key: &Aes128Key, payload: &[u8]) -> Result<Vec<u8>, AesError> {
    if !payload.len().is_multiple_of(BLOCK_LEN) {
        return Err(AesError::Padding(payload.len()));
    }
    let schedule = expand_key(key);
    let mut out = Vec::with_capacity(payload.len());
    for chunk in payload.chunks_exact(BLOCK_LEN) {
        let block = StateBlock::from_slice(chunk).expect("chunk is a whole block");
        out.extend_from_slice(&encrypt_with_schedule(&schedule, block).0);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Test-only inverse cipher and an instrumented forward cipher.
    use super::*;

    pub fn inv_sub_bytes(s: StateBlock) -> StateBlock {
        let mut inv = [0u8; 256];
        for (x, &y) in sbox().iter().enumerate() {
            inv[y as usize] = x as u8;
        }
        StateBlock(s.0.map(|b| inv[b as usize]))
    }

    pub fn inv_shift_rows(s: StateBlock) -> StateBlock {
        let mut out = [0u8; BLOCK_LEN];
        for col in 0..4 {
            for row in 0..4 {
                out[4 * ((col + row) % 4) + row] = s.0[4 * col + row];
            }
        }
        StateBlock(out)
    }

    pub fn inv_mix_columns(s: StateBlock) -> StateBlock {
        let mut out = [0u8; BLOCK_LEN];
        for col in 0..4 {
            let c = &s.0[4 * col..4 * col + 4];
            for row in 0..4 {
                out[4 * col + row] = gf_mul_raw(c[row], 0x0e)
                    ^ gf_mul_raw(c[(row + 1) % 4], 0x0b)
                    ^ gf_mul_raw(c[(row + 2) % 4], 0x0d)
                    ^ gf_mul_raw(c[(row + 3) % 4], 0x09);
            }
        }
        StateBlock(out)
    }

    pub fn decrypt_block(key: &Aes128Key, ciphertext: StateBlock) -> StateBlock {
        let ks = expand_key(key);
        let mut s = add_round_key(ciphertext, ks.round_key(ROUNDS));
        s = inv_shift_rows(s);
        s = inv_sub_bytes(s);
        for round in (1..ROUNDS).rev() {
            s = add_round_key(s, ks.round_key(round));
            s = inv_mix_columns(s);
            s = inv_shift_rows(s);
            s = inv_sub_bytes(s);
        }
        add_round_key(s, ks.round_key(0))
    }

    /// State after each full round `1..=10`, including that round's key.
    pub fn round_states(key: &Aes128Key, plaintext: StateBlock) -> Vec<StateBlock> {
        let ks = expand_key(key);
        let mut s = add_round_key(plaintext, ks.round_key(0));
        let mut states = Vec::with_capacity(ROUNDS);
        for round in 1..=ROUNDS {
            s = shift_rows(sub_bytes(s));
            if round != ROUNDS {
                s = mix_columns(s);
            }
            s = add_round_key(s, ks.round_key(round));
            states.push(s);
        }
        states
    }
}
