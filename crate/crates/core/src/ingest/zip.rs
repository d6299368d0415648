//! Central-directory ZIP reader covering what APKs use: stored and DEFLATE
//! entries on a single disk, no encryption, no ZIP64.

use std::io::Read;

use flate2::read::DeflateDecoder;
use flate2::Crc;

const EOCD_SIG: u32 = 0x0605_4b50;
const CDH_SIG: u32 = 0x0201_4b50;
const LFH_SIG: u32 = 0x0403_4b50;
const EOCD_LEN: usize = 22;
const MAX_ENTRY_SIZE: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum ZipError {
    /// The buffer is not a readable archive at all.
    Archive(String),
    /// One entry could not be extracted.
    Entry { name: String, reason: String },
}

#[derive(Debug, Clone)]
pub(crate) struct Entry {
    pub name: String,
    method: u16,
    flags: u16,
    crc: u32,
    compressed: u64,
    uncompressed: u64,
    local_offset: u64,
}

pub(crate) struct ZipArchive<'a> {
    data: &'a [u8],
    entries: Vec<Entry>,
}

fn u16_at(data: &[u8], pos: usize) -> Option<u16> {
    data.get(pos..pos + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
}

fn u32_at(data: &[u8], pos: usize) -> Option<u32> {
    data.get(pos..pos + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn find_eocd(data: &[u8]) -> Option<usize> {
    if data.len() < EOCD_LEN {
        return None;
    }
    let last = data.len() - EOCD_LEN;
    let first = last.saturating_sub(u16::MAX as usize);
    (first..=last).rev().find(|&pos| {
        u32_at(data, pos) == Some(EOCD_SIG)
            && u16_at(data, pos + 20).map(|c| pos + EOCD_LEN + c as usize) == Some(data.len())
    })
}

impl<'a> ZipArchive<'a> {
    pub fn parse(data: &'a [u8]) -> Result<Self, ZipError> {
        let archive = |msg: &str| ZipError::Archive(msg.to_string());
        let eocd = find_eocd(data).ok_or_else(|| archive("end of central directory not found"))?;
        let total = u16_at(data, eocd + 10).unwrap_or(0) as usize;
        let cd_size = u32_at(data, eocd + 12).unwrap_or(0);
        let cd_offset = u32_at(data, eocd + 16).unwrap_or(0);
        if cd_size == u32::MAX || cd_offset == u32::MAX || total == u16::MAX as usize {
            return Err(archive("ZIP64 archives are not supported"));
        }
        let (cd_start, cd_end) = (cd_offset as usize, cd_offset as usize + cd_size as usize);
        if cd_end > eocd {
            return Err(archive("central directory overlaps end record"));
        }

        let mut entries = Vec::with_capacity(total);
        let mut pos = cd_start;
        for i in 0..total {
            let truncated = || ZipError::Archive(format!("central directory entry {i} truncated"));
            if u32_at(data, pos) != Some(CDH_SIG) {
                return Err(ZipError::Archive(format!(
                    "bad central directory signature at offset {pos}"
                )));
            }
            let field16 = |o: usize| u16_at(data, pos + o).ok_or_else(truncated);
            let field32 = |o: usize| u32_at(data, pos + o).ok_or_else(truncated);
            let flags = field16(8)?;
            let method = field16(10)?;
            let crc = field32(16)?;
            let compressed = field32(20)? as u64;
            let uncompressed = field32(24)? as u64;
            let name_len = field16(28)? as usize;
            let extra_len = field16(30)? as usize;
            let comment_len = field16(32)? as usize;
            let local_offset = field32(42)? as u64;
            let name_start = pos + 46;
            let name_bytes = data
                .get(name_start..name_start + name_len)
                .filter(|_| name_start + name_len <= cd_end)
                .ok_or_else(truncated)?;
            entries.push(Entry {
                name: String::from_utf8_lossy(name_bytes).into_owned(),
                method,
                flags,
                crc,
                compressed,
                uncompressed,
                local_offset,
            });
            pos = name_start + name_len + extra_len + comment_len;
            if pos > cd_end {
                return Err(truncated());
            }
        }
        Ok(Self { data, entries })
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn read(&self, entry: &Entry) -> Result<Vec<u8>, ZipError> {
        let fail = |reason: String| ZipError::Entry {
            name: entry.name.clone(),
            reason,
        };
        if entry.flags & 1 != 0 {
            return Err(fail("encrypted entry".into()));
        }
        if entry.uncompressed > MAX_ENTRY_SIZE {
            return Err(fail(format!(
                "declared size {} too large",
                entry.uncompressed
            )));
        }
        let lfh = entry.local_offset as usize;
        if u32_at(self.data, lfh) != Some(LFH_SIG) {
            return Err(fail(format!("bad local header signature at offset {lfh}")));
        }
        let name_len = u16_at(self.data, lfh + 26).unwrap_or(0) as usize;
        let extra_len = u16_at(self.data, lfh + 28).unwrap_or(0) as usize;
        let start = lfh + 30 + name_len + extra_len;
        let end = start
            .checked_add(entry.compressed as usize)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| fail("entry data runs past end of archive".into()))?;
        let raw = &self.data[start..end];

        let out = match entry.method {
            0 => {
                if entry.compressed != entry.uncompressed {
                    return Err(fail("stored entry size mismatch".into()));
                }
                raw.to_vec()
            }
            8 => {
                let mut out = Vec::with_capacity(entry.uncompressed as usize);
                DeflateDecoder::new(raw)
                    .take(entry.uncompressed + 1)
                    .read_to_end(&mut out)
                    .map_err(|e| fail(format!("inflate failed: {e}")))?;
                if out.len() as u64 != entry.uncompressed {
                    return Err(fail(format!(
                        "inflated {} bytes, expected {}",
                        out.len(),
                        entry.uncompressed
                    )));
                }
                out
            }
            m => return Err(fail(format!("unsupported compression method {m}"))),
        };
        let mut crc = Crc::new();
        crc.update(&out);
        if crc.sum() != entry.crc {
            return Err(fail("CRC mismatch".into()));
        }
        Ok(out)
    }
}
