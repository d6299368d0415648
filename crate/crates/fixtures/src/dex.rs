const HEADER_SIZE: usize = 0x70;

/// Modified UTF-8 as used by DEX string_data_item.
pub fn encode_mutf8(s: &str) -> Vec<u8> {
    let mut out = Vec::new();
    for unit in s.encode_utf16() {
        let u = unit as u32;
        if u != 0 && u < 0x80 {
            out.push(u as u8);
        } else if u < 0x800 {
            out.push(0xC0 | (u >> 6) as u8);
            out.push(0x80 | (u & 0x3F) as u8);
        } else {
            out.push(0xE0 | (u >> 12) as u8);
            out.push(0x80 | ((u >> 6) & 0x3F) as u8);
            out.push(0x80 | (u & 0x3F) as u8);
        }
    }
    out
}

fn uleb128(mut v: u32, out: &mut Vec<u8>) {
    loop {
        let byte = (v & 0x7F) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            break;
        }
        out.push(byte | 0x80);
    }
}

/// DEX file whose string_ids table lists `strings` in the given order.
pub fn write_dex(strings: &[&str]) -> Vec<u8> {
    let items: Vec<(u32, Vec<u8>)> = strings
        .iter()
        .map(|s| (s.encode_utf16().count() as u32, encode_mutf8(s)))
        .collect();
    write_dex_raw(&items)
}

/// DEX file from pre-encoded `(utf16_len, mutf8_bytes)` pairs, for
/// building pools with malformed string data.
pub fn write_dex_raw(items: &[(u32, Vec<u8>)]) -> Vec<u8> {
    let ids_off = HEADER_SIZE;
    let data_off = ids_off + 4 * items.len();
    let mut data = Vec::new();
    let mut offsets = Vec::new();
    for (len, bytes) in items {
        offsets.push((data_off + data.len()) as u32);
        uleb128(*len, &mut data);
        data.extend_from_slice(bytes);
        data.push(0);
    }

    let file_size = data_off + data.len();
    let mut out = vec![0u8; HEADER_SIZE];
    out[0..8].copy_from_slice(b"dex\n035\0");
    out[0x20..0x24].copy_from_slice(&(file_size as u32).to_le_bytes());
    out[0x24..0x28].copy_from_slice(&(HEADER_SIZE as u32).to_le_bytes());
    out[0x28..0x2C].copy_from_slice(&0x1234_5678u32.to_le_bytes());
    out[0x38..0x3C].copy_from_slice(&(items.len() as u32).to_le_bytes());
    let ids = if items.is_empty() { 0 } else { ids_off as u32 };
    out[0x3C..0x40].copy_from_slice(&ids.to_le_bytes());
    out[0x68..0x6C].copy_from_slice(&(data.len() as u32).to_le_bytes());
    out[0x6C..0x70].copy_from_slice(&(data_off as u32).to_le_bytes());
    for off in offsets {
        out.extend_from_slice(&off.to_le_bytes());
    }
    out.extend_from_slice(&data);
    out
}
