use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{flawed_walk, ParserConfig, StackModel, HASH_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ByteRole {
    FlagByte,
    Padding,
    Asn1Type,
    Asn1Length,
    AddedLength,
    CalculatedHash,
    OtherStackData,
    /// Block bytes the walk never looks at.
    Unparsed,
}

impl ByteRole {
    pub fn label(self) -> &'static str {
        match self {
            ByteRole::FlagByte => "Flag Byte",
            ByteRole::Padding => "Padding",
            ByteRole::Asn1Type => "ASN.1 Type",
            ByteRole::Asn1Length => "ASN.1 Length",
            ByteRole::AddedLength => "Added Length",
            ByteRole::CalculatedHash => "Calculated Hash",
            ByteRole::OtherStackData => "Other Stack Data",
            ByteRole::Unparsed => "Unparsed",
        }
    }

    fn tag(self) -> char {
        match self {
            ByteRole::FlagByte => 'F',
            ByteRole::Padding => 'P',
            ByteRole::Asn1Type => 'T',
            ByteRole::Asn1Length => 'L',
            ByteRole::AddedLength => 'A',
            ByteRole::CalculatedHash => 'H',
            ByteRole::OtherStackData => '.',
            ByteRole::Unparsed => '?',
        }
    }
}

/// Labels every byte of the stack model, in address order, as
/// `(offset, byte, role)`.
pub fn annotate(
    block: &[u8],
    calc_hash: &[u8; HASH_LEN],
    stack: &StackModel,
    config: &ParserConfig,
) -> Vec<(i64, u8, ByteRole)> {
    let walk = flawed_walk(block, config).ok();
    let (lo, hi) = stack.extent();
    let view = stack.view(block, calc_hash);
    let hash_range = stack.calc_hash_offset..stack.calc_hash_offset + HASH_LEN as i64;
    (lo..hi)
        .map(|off| {
            let byte = view.read(off, 1).expect("inside extent")[0];
            let role = if hash_range.contains(&off) {
                ByteRole::CalculatedHash
            } else if off < 0 || off >= block.len() as i64 {
                ByteRole::OtherStackData
            } else if off < 2 {
                ByteRole::FlagByte
            } else {
                match walk {
                    None => ByteRole::Unparsed,
                    Some(w) => {
                        let t = w.terminator as i64;
                        let header = w.final_header();
                        if off <= t {
                            ByteRole::Padding
                        } else if off == t + 1 || off == t + 3 || off == header {
                            ByteRole::Asn1Type
                        } else if off == t + 2 || off == t + 4 || off == header + 1 {
                            ByteRole::Asn1Length
                        } else if off < header {
                            ByteRole::AddedLength
                        } else {
                            ByteRole::Unparsed
                        }
                    }
                }
            };
            (off, byte, role)
        })
        .collect()
}

/// Sixteen bytes per line, each followed by its role tag, plus a legend.
pub fn hex_dump(
    block: &[u8],
    calc_hash: &[u8; HASH_LEN],
    stack: &StackModel,
    config: &ParserConfig,
) -> String {
    let cells = annotate(block, calc_hash, stack, config);
    let mut out = String::new();
    for row in cells.chunks(16) {
        let off = row[0].0;
        let sign = if off < 0 { '-' } else { '+' };
        let _ = write!(out, "{sign}{:05x} ", off.unsigned_abs());
        for (_, byte, role) in row {
            let _ = write!(out, " {byte:02x}{}", role.tag());
        }
        out.push('\n');
    }
    out.push('\n');
    for role in [
        ByteRole::FlagByte,
        ByteRole::Padding,
        ByteRole::Asn1Type,
        ByteRole::Asn1Length,
        ByteRole::AddedLength,
        ByteRole::CalculatedHash,
        ByteRole::OtherStackData,
        ByteRole::Unparsed,
    ] {
        let _ = writeln!(out, "{} - {}", role.tag(), role.label());
    }
    out
}
