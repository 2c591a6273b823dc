// The FIPS-197 single-block vector through the reference cipher and the
// scrambled-table path used by the switch.

use switchcrypt::aes_core::{encrypt_block, Aes128Key, StateBlock};
use switchcrypt::ttables::{apply_round, RoundState, ScrambledTables};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let key = Aes128Key::from_hex("000102030405060708090a0b0c0d0e0f")?;
    let pt = StateBlock::from_hex("00112233445566778899aabbccddeeff")?;
    let expected = "69c4e0d86a7b0430d8cdb78070b4c55a";

    let reference = encrypt_block(&key, pt);
    println!("reference     {}", reference.to_hex());

    let tables = ScrambledTables::from_key(&key);
    let mut state = RoundState::new(pt);
    while !state.is_complete() {
        state = apply_round(state, &tables)?;
        println!(
            "round {:>2}      {}",
            state.round_index,
            state.block.to_hex()
        );
    }
    println!("key id        {}", tables.key_id());

    if reference.to_hex() != expected || state.block != reference {
        return Err("known answer mismatch".into());
    }
    println!("both paths match {expected}");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
