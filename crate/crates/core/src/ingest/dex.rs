//! DEX `string_ids` table reader.

const HEADER_SIZE: usize = 0x70;
const STRING_IDS_SIZE_OFF: usize = 0x38;
const STRING_IDS_OFF_OFF: usize = 0x3C;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct DexError {
    pub offset: usize,
    pub reason: String,
}

fn fail<T>(offset: usize, reason: impl Into<String>) -> Result<T, DexError> {
    Err(DexError {
        offset,
        reason: reason.into(),
    })
}

fn u32_at(data: &[u8], pos: usize) -> Result<u32, DexError> {
    match data.get(pos..pos + 4) {
        Some(b) => Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        None => fail(pos, "unexpected end of file"),
    }
}

fn check_magic(data: &[u8]) -> Result<(), DexError> {
    let Some(magic) = data.get(0..8) else {
        return fail(0, "file shorter than DEX magic");
    };
    let version_ok = magic[4..7].iter().all(u8::is_ascii_digit);
    if &magic[0..4] != b"dex\n" || !version_ok || magic[7] != 0 {
        return fail(0, "bad DEX magic");
    }
    if data.len() < HEADER_SIZE {
        return fail(data.len(), "truncated DEX header");
    }
    Ok(())
}

/// Skips the ULEB128 utf16-length prefix of a string_data_item.
fn skip_uleb128(data: &[u8], mut pos: usize) -> Result<usize, DexError> {
    for _ in 0..5 {
        let Some(&b) = data.get(pos) else {
            return fail(pos, "truncated string length");
        };
        pos += 1;
        if b & 0x80 == 0 {
            return Ok(pos);
        }
    }
    fail(pos, "string length ULEB128 too long")
}

/// Decodes one NUL-terminated MUTF-8 string starting at `pos`. Invalid
/// sequences become U+FFFD rather than errors.
fn read_mutf8(data: &[u8], pos: usize) -> Result<String, DexError> {
    let Some(len) = data[pos.min(data.len())..].iter().position(|&b| b == 0) else {
        return fail(pos, "unterminated string data");
    };
    Ok(decode_mutf8_lossy(&data[pos..pos + len]))
}

pub fn decode_mutf8_lossy(bytes: &[u8]) -> String {
    let mut units: Vec<u16> = Vec::with_capacity(bytes.len());
    let cont = |b: Option<&u8>| b.filter(|&&b| b & 0xC0 == 0x80).map(|&b| (b & 0x3F) as u16);
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b < 0x80 {
            units.push(b as u16);
            i += 1;
        } else if b & 0xE0 == 0xC0 {
            match cont(bytes.get(i + 1)) {
                Some(c1) => {
                    units.push(((b & 0x1F) as u16) << 6 | c1);
                    i += 2;
                }
                None => {
                    units.push(0xFFFD);
                    i += 1;
                }
            }
        } else if b & 0xF0 == 0xE0 {
            match (cont(bytes.get(i + 1)), cont(bytes.get(i + 2))) {
                (Some(c1), Some(c2)) => {
                    units.push(((b & 0x0F) as u16) << 12 | c1 << 6 | c2);
                    i += 3;
                }
                _ => {
                    units.push(0xFFFD);
                    i += 1;
                }
            }
        } else {
            units.push(0xFFFD);
            i += 1;
        }
    }
    // Unpaired surrogates are replaced here too.
    String::from_utf16_lossy(&units)
}

/// Every string in `string_ids` order.
pub(crate) fn string_pool(data: &[u8]) -> Result<Vec<String>, DexError> {
    check_magic(data)?;
    let count = u32_at(data, STRING_IDS_SIZE_OFF)? as usize;
    let ids_off = u32_at(data, STRING_IDS_OFF_OFF)? as usize;
    if count == 0 {
        return Ok(Vec::new());
    }
    if ids_off
        .checked_add(count.saturating_mul(4))
        .is_none_or(|end| end > data.len())
    {
        return fail(STRING_IDS_OFF_OFF, "string_ids table out of range");
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let id_pos = ids_off + 4 * i;
        let data_off = u32_at(data, id_pos)? as usize;
        if data_off >= data.len() {
            return fail(id_pos, format!("string {i} offset {data_off} out of range"));
        }
        let start = skip_uleb128(data, data_off)?;
        out.push(read_mutf8(data, start)?);
    }
    Ok(out)
}
