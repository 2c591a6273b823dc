//! Plain-text hex dumps used for golden packet fixtures.
//!
//! Format: hex byte pairs separated by any whitespace. `#` starts a comment
//! that runs to the end of the line.

use super::PacketError;

pub fn from_hex_dump(text: &str) -> Result<Vec<u8>, PacketError> {
    let mut digits = String::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        digits.extend(line.chars().filter(|c| !c.is_whitespace()));
    }
    hex::decode(&digits).map_err(|e| PacketError::Format(format!("hex dump: {e}")))
}

/// Sixteen bytes per line, offsets as comments.
pub fn to_hex_dump(bytes: &[u8]) -> String {
    let mut out = String::new();
    for (i, chunk) in bytes.chunks(16).enumerate() {
        let line: Vec<String> = chunk.iter().map(|b| format!("{b:02x}")).collect();
        out.push_str(&format!("{}  # {:04x}\n", line.join(" "), i * 16));
    }
    out
}
