//! Key-dependent substitution tables and the lookup-only round function.
//!
//! Round `r` (1-based) folds round key `r - 1` into the S-box, so its
//! substitution step is a single lookup per byte:
//! `sub[r][i][x] = SBox[x ^ round_keys[r - 1][i]]`. MixColumns is four
//! key-independent 32-bit tables indexed by the substituted byte. The last
//! round skips MixColumns and XORs the round-10 key. Nothing on the round
//! path does field arithmetic.

use std::fmt;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aes_core::{self, Aes128Key, RoundKeySchedule, StateBlock, BLOCK_LEN, ROUNDS};

type SubTable = [[u8; 256]; BLOCK_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoundError {
    #[error("block already has all {ROUNDS} rounds applied")]
    AlreadyComplete,
    #[error("round {0} is out of range 1..={ROUNDS}")]
    NoSuchRound(usize),
}

/// Short public identifier for an installed key: the first 8 hex digits of
/// SHA-256 over the key bytes.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct KeyId(String);

impl KeyId {
    pub fn of(key: &Aes128Key) -> Self {
        let digest = Sha256::digest(key.as_bytes());
        Self(hex::encode(&digest[..4]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The only crypto material the data plane sees.
#[derive(Clone)]
pub struct ScrambledTables {
    per_round_sub: Box<[SubTable; ROUNDS]>,
    final_key: [u8; BLOCK_LEN],
    key_id: KeyId,
}

impl fmt::Debug for ScrambledTables {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScrambledTables")
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

/// A block partway through encryption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundState {
    pub block: StateBlock,
    /// Rounds completed so far, 0..=10.
    pub round_index: u8,
}

impl RoundState {
    pub fn new(block: StateBlock) -> Self {
        Self {
            block,
            round_index: 0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.round_index as usize >= ROUNDS
    }
}

/// MixColumns factored per input row: `MIX[j][b]` is the column contributed
/// by byte `b` sitting in row `j`, packed little-endian (row 0 in bits 0..8).
fn mix_tables() -> &'static [[u32; 256]; 4] {
    static MIX: OnceLock<[[u32; 256]; 4]> = OnceLock::new();
    MIX.get_or_init(|| {
        const COEF: [u8; 4] = [2, 3, 1, 1];
        let mut tables = [[0u32; 256]; 4];
        for (j, table) in tables.iter_mut().enumerate() {
            for (b, entry) in table.iter_mut().enumerate() {
                let mut col = [0u8; 4];
                for (row, out) in col.iter_mut().enumerate() {
                    *out = aes_core::gf_mul(b as u8, COEF[(j + 4 - row) % 4]);
                }
                *entry = u32::from_le_bytes(col);
            }
        }
        tables
    })
}

/// Byte position that ShiftRows moves into position `i`.
const SHIFT_SRC: [usize; BLOCK_LEN] = {
    let mut src = [0usize; BLOCK_LEN];
    let mut i = 0;
    while i < BLOCK_LEN {
        let (col, row) = (i / 4, i % 4);
        src[i] = 4 * ((col + row) % 4) + row;
        i += 1;
    }
    src
};

pub fn build_scrambled_tables(schedule: &RoundKeySchedule) -> ScrambledTables {
    let sbox = aes_core::sbox();
    mix_tables();
    let mut per_round_sub = Box::new([[[0u8; 256]; BLOCK_LEN]; ROUNDS]);
    for (r, round) in per_round_sub.iter_mut().enumerate() {
        let key = schedule.round_key(r);
        for (i, table) in round.iter_mut().enumerate() {
            for (x, entry) in table.iter_mut().enumerate() {
                *entry = sbox[x ^ key[i] as usize];
            }
        }
    }
    let key = Aes128Key::new(*schedule.round_key(0));
    ScrambledTables {
        per_round_sub,
        final_key: *schedule.round_key(ROUNDS),
        key_id: KeyId::of(&key),
    }
}

impl ScrambledTables {
    pub fn from_key(key: &Aes128Key) -> Self {
        build_scrambled_tables(&aes_core::expand_key(key))
    }

    pub fn key_id(&self) -> &KeyId {
        &self.key_id
    }

    /// Substitution tables for round `round` in `1..=10`.
    pub fn sub_tables(&self, round: usize) -> Result<&[[u8; 256]; BLOCK_LEN], RoundError> {
        if !(1..=ROUNDS).contains(&round) {
            return Err(RoundError::NoSuchRound(round));
        }
        Ok(&self.per_round_sub[round - 1])
    }

    /// Canonical bytes for one round: position-major, then index. Round 10
    /// is followed by the 16 bytes of the final key.
    pub fn canonical_round_bytes(&self, round: usize) -> Result<Vec<u8>, RoundError> {
        let tables = self.sub_tables(round)?;
        let mut out = Vec::with_capacity(BLOCK_LEN * 256 + BLOCK_LEN);
        for table in tables {
            out.extend_from_slice(table);
        }
        if round == ROUNDS {
            out.extend_from_slice(&self.final_key);
        }
        Ok(out)
    }

    /// Hex SHA-256 of [`Self::canonical_round_bytes`].
    pub fn round_digest(&self, round: usize) -> Result<String, RoundError> {
        Ok(hex::encode(Sha256::digest(
            self.canonical_round_bytes(round)?,
        )))
    }
}

/// Runs one round using lookups, a fixed byte permutation, and XOR.
pub fn apply_round(state: RoundState, tables: &ScrambledTables) -> Result<RoundState, RoundError> {
    if state.is_complete() {
        return Err(RoundError::AlreadyComplete);
    }
    let round = state.round_index as usize + 1;
    let sub = &tables.per_round_sub[round - 1];

    let mut substituted = [0u8; BLOCK_LEN];
    for (i, out) in substituted.iter_mut().enumerate() {
        *out = sub[i][state.block.0[i] as usize];
    }
    let mut shifted = [0u8; BLOCK_LEN];
    for (i, out) in shifted.iter_mut().enumerate() {
        *out = substituted[SHIFT_SRC[i]];
    }

    let block = if round < ROUNDS {
        let mix = mix_tables();
        let mut mixed = [0u8; BLOCK_LEN];
        for col in 0..4 {
            let c = &shifted[4 * col..4 * col + 4];
            let word = mix[0][c[0] as usize]
                ^ mix[1][c[1] as usize]
                ^ mix[2][c[2] as usize]
                ^ mix[3][c[3] as usize];
            mixed[4 * col..4 * col + 4].copy_from_slice(&word.to_le_bytes());
        }
        mixed
    } else {
        let mut out = shifted;
        for (b, k) in out.iter_mut().zip(&tables.final_key) {
            *b ^= k;
        }
        out
    };

    Ok(RoundState {
        block: StateBlock(block),
        round_index: state.round_index + 1,
    })
}

pub fn encrypt_block_tabular(tables: &ScrambledTables, plaintext: StateBlock) -> StateBlock {
    let mut state = RoundState::new(plaintext);
    while !state.is_complete() {
        state = apply_round(state, tables).expect("round index checked by loop");
    }
    state.block
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aes_core::{add_round_key, encrypt_block, expand_key, oracle};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FIPS_KEY: &str = "000102030405060708090a0b0c0d0e0f";
    const FIPS_PT: &str = "00112233445566778899aabbccddeeff";
    const FIPS_CT: &str = "69c4e0d86a7b0430d8cdb78070b4c55a";

    fn fips() -> (Aes128Key, StateBlock) {
        (
            Aes128Key::from_hex(FIPS_KEY).unwrap(),
            StateBlock::from_hex(FIPS_PT).unwrap(),
        )
    }

    #[test]
    fn zero_key_round_one_is_plain_sbox() {
        let tables = ScrambledTables::from_key(&Aes128Key::new([0; 16]));
        for table in tables.sub_tables(1).unwrap() {
            assert_eq!(table, aes_core::sbox());
        }
    }

    #[test]
    fn round_one_maps_key_byte_to_sbox_of_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let key = Aes128Key::new(rng.gen());
            let ks = expand_key(&key);
            let tables = build_scrambled_tables(&ks);
            let sub = tables.sub_tables(1).unwrap();
            for i in 0..16 {
                assert_eq!(sub[i][ks.round_key(0)[i] as usize], 0x63);
            }
        }
    }

    #[test]
    fn table_entries_follow_folded_key() {
        let (key, _) = fips();
        let ks = expand_key(&key);
        let tables = build_scrambled_tables(&ks);
        let sbox = aes_core::sbox();
        for r in 1..=ROUNDS {
            let sub = tables.sub_tables(r).unwrap();
            for i in 0..16 {
                for x in 0..256 {
                    assert_eq!(sub[i][x], sbox[x ^ ks.round_key(r - 1)[i] as usize]);
                }
            }
        }
        assert_eq!(tables.sub_tables(0), Err(RoundError::NoSuchRound(0)));
        assert_eq!(tables.sub_tables(11), Err(RoundError::NoSuchRound(11)));
    }

    #[test]
    fn every_substitution_table_is_a_permutation() {
        let tables = ScrambledTables::from_key(&Aes128Key::new([0x3c; 16]));
        for r in 1..=ROUNDS {
            for table in tables.sub_tables(r).unwrap() {
                let mut seen = [false; 256];
                for &v in table {
                    assert!(!seen[v as usize]);
                    seen[v as usize] = true;
                }
            }
        }
    }

    #[test]
    fn fips_vector_through_ten_rounds() {
        let (key, pt) = fips();
        let tables = ScrambledTables::from_key(&key);
        let mut state = RoundState::new(pt);
        for expected in 1..=10u8 {
            state = apply_round(state, &tables).unwrap();
            assert_eq!(state.round_index, expected);
        }
        assert_eq!(state.block.to_hex(), FIPS_CT);
        assert_eq!(
            apply_round(state, &tables),
            Err(RoundError::AlreadyComplete)
        );
        assert_eq!(encrypt_block_tabular(&tables, pt).to_hex(), FIPS_CT);
        assert_eq!(
            encrypt_block_tabular(&tables, pt),
            encrypt_block_tabular(&tables, pt)
        );
    }

    #[test]
    fn intermediate_states_match_oracle() {
        // The table path's round-r output is the oracle's post-round state
        // with round key r still to be added (except after the last round).
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        for _ in 0..1000 {
            let key = Aes128Key::new(rng.gen());
            let pt = StateBlock(rng.gen());
            let ks = expand_key(&key);
            let tables = build_scrambled_tables(&ks);
            let expected = oracle::round_states(&key, pt);
            let mut state = RoundState::new(pt);
            for r in 1..=ROUNDS {
                state = apply_round(state, &tables).unwrap();
                let observed = if r < ROUNDS {
                    add_round_key(state.block, ks.round_key(r))
                } else {
                    state.block
                };
                assert_eq!(observed, expected[r - 1], "round {r}");
            }
        }
    }

    #[test]
    fn random_blocks_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000);
        let key = Aes128Key::new(rng.gen());
        let tables = ScrambledTables::from_key(&key);
        for _ in 0..10_000 {
            let pt = StateBlock(rng.gen());
            assert_eq!(encrypt_block_tabular(&tables, pt), encrypt_block(&key, pt));
        }
    }

    #[test]
    fn round_path_never_calls_field_arithmetic() {
        let (key, pt) = fips();
        let tables = ScrambledTables::from_key(&key);
        aes_core::audit::reset();
        let ct = encrypt_block_tabular(&tables, pt);
        assert_eq!(aes_core::audit::counts(), (0, 0));
        assert_eq!(ct.to_hex(), FIPS_CT);
    }

    #[test]
    fn key_id_and_digests_are_deterministic() {
        let (key, _) = fips();
        let a = ScrambledTables::from_key(&key);
        let b = ScrambledTables::from_key(&key);
        assert_eq!(a.key_id(), b.key_id());
        assert_eq!(a.key_id().as_str().len(), 8);
        for r in 1..=ROUNDS {
            assert_eq!(a.round_digest(r).unwrap(), b.round_digest(r).unwrap());
        }
        assert_eq!(a.canonical_round_bytes(1).unwrap().len(), 4096);
        assert_eq!(a.canonical_round_bytes(10).unwrap().len(), 4096 + 16);
        assert!(!format!("{a:?}").contains("final_key"));
    }

    #[test]
    fn zero_key_round_one_digest_is_sbox_digest() {
        let tables = ScrambledTables::from_key(&Aes128Key::new([0; 16]));
        // Independent S-box: field inverse by exhaustive search, then affine.
        let mut sbox = [0u8; 256];
        for (x, out) in sbox.iter_mut().enumerate() {
            let inv = (1..256usize)
                .find(|&y| aes_core::gf_mul(x as u8, y as u8) == 1)
                .unwrap_or(0) as u8;
            let mut s = 0x63u8;
            for shift in 0..5 {
                s ^= inv.rotate_left(shift);
            }
            *out = s;
        }
        let canonical: Vec<u8> = (0..16).flat_map(|_| sbox).collect();
        assert_eq!(
            tables.round_digest(1).unwrap(),
            hex::encode(Sha256::digest(&canonical))
        );
    }

    proptest! {
        #[test]
        fn tabular_equals_reference(key in any::<[u8; 16]>(), block in any::<[u8; 16]>()) {
            let key = Aes128Key::new(key);
            let tables = ScrambledTables::from_key(&key);
            prop_assert_eq!(
                encrypt_block_tabular(&tables, StateBlock(block)),
                encrypt_block(&key, StateBlock(block))
            );
        }
    }
}
