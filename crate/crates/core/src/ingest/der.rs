//! Just enough BER/DER to reach certificate serial numbers inside a PKCS#7
//! SignedData block (`META-INF/*.RSA`, `*.DSA`, `*.EC`).

use crate::serial::SerialNumber;

const OID_SIGNED_DATA: &[u8] = &[0x2A, 0x86, 0x48, 0x86, 0xF7, 0x0D, 0x01, 0x07, 0x02];

const TAG_INTEGER: u8 = 0x02;
const TAG_OID: u8 = 0x06;
const TAG_SEQUENCE: u8 = 0x30;
const TAG_CONTEXT_0: u8 = 0xA0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct DerError {
    pub offset: usize,
    pub reason: &'static str,
}

fn err<T>(offset: usize, reason: &'static str) -> Result<T, DerError> {
    Err(DerError { offset, reason })
}

#[derive(Debug, Clone, Copy)]
struct Tlv<'a> {
    tag: u8,
    /// Absolute offset of the content within the outermost buffer.
    offset: usize,
    content: &'a [u8],
}

impl<'a> Tlv<'a> {
    fn children(&self) -> Result<Vec<Tlv<'a>>, DerError> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < self.content.len() {
            let (tlv, next) = read_tlv(self.content, pos, self.offset)?;
            if tlv.tag == 0 && tlv.content.is_empty() {
                break; // end-of-contents inside an indefinite-length parent
            }
            out.push(tlv);
            pos = next;
        }
        Ok(out)
    }
}

/// Reads one TLV at `pos`. `base` is the absolute offset of `data`.
fn read_tlv(data: &[u8], pos: usize, base: usize) -> Result<(Tlv<'_>, usize), DerError> {
    read_tlv_nested(data, pos, base, 0)
}

const MAX_INDEFINITE_DEPTH: usize = 32;

fn read_tlv_nested(
    data: &[u8],
    pos: usize,
    base: usize,
    depth: usize,
) -> Result<(Tlv<'_>, usize), DerError> {
    let at = base + pos;
    if depth > MAX_INDEFINITE_DEPTH {
        return err(at, "indefinite-length nesting too deep");
    }
    let Some(&tag) = data.get(pos) else {
        return err(at, "truncated tag");
    };
    let mut p = pos + 1;
    if tag & 0x1F == 0x1F {
        // high tag number form; the value is irrelevant here
        loop {
            let Some(&b) = data.get(p) else {
                return err(base + p, "truncated tag");
            };
            p += 1;
            if b & 0x80 == 0 {
                break;
            }
        }
    }
    let Some(&first) = data.get(p) else {
        return err(base + p, "truncated length");
    };
    p += 1;
    if first == 0x80 {
        if tag & 0x20 == 0 {
            return err(at, "indefinite length on primitive");
        }
        // Scan children until the end-of-contents marker.
        let start = p;
        loop {
            if data.get(p..p + 2) == Some(&[0, 0]) {
                let tlv = Tlv {
                    tag,
                    offset: base + start,
                    content: &data[start..p],
                };
                return Ok((tlv, p + 2));
            }
            let (_, next) = read_tlv_nested(data, p, base, depth + 1)?;
            p = next;
        }
    }
    let len = if first & 0x80 == 0 {
        first as usize
    } else {
        let n = (first & 0x7F) as usize;
        if n > 4 {
            return err(at, "length field too large");
        }
        let Some(bytes) = data.get(p..p + n) else {
            return err(base + p, "truncated length");
        };
        p += n;
        bytes.iter().fold(0usize, |acc, &b| (acc << 8) | b as usize)
    };
    let end = match p.checked_add(len) {
        Some(e) if e <= data.len() => e,
        _ => return err(at, "content runs past end of buffer"),
    };
    Ok((
        Tlv {
            tag,
            offset: base + p,
            content: &data[p..end],
        },
        end,
    ))
}

/// Serial numbers of every certificate embedded in a PKCS#7 SignedData.
pub(crate) fn pkcs7_serials(data: &[u8]) -> Result<Vec<SerialNumber>, DerError> {
    let (info, _) = read_tlv(data, 0, 0)?;
    if info.tag != TAG_SEQUENCE {
        return err(0, "ContentInfo is not a SEQUENCE");
    }
    let parts = info.children()?;
    match parts.first() {
        Some(oid) if oid.tag == TAG_OID && oid.content == OID_SIGNED_DATA => {}
        _ => return err(info.offset, "content type is not signedData"),
    }
    let Some(explicit) = parts.get(1).filter(|t| t.tag == TAG_CONTEXT_0) else {
        return err(info.offset, "missing SignedData content");
    };
    let signed = match explicit.children()?.first() {
        Some(t) if t.tag == TAG_SEQUENCE => *t,
        _ => return err(explicit.offset, "SignedData is not a SEQUENCE"),
    };

    let mut serials = Vec::new();
    for field in signed.children()? {
        if field.tag != TAG_CONTEXT_0 {
            continue;
        }
        for cert in field.children()? {
            // other CertificateChoices (extended, attribute certs) are skipped
            if cert.tag != TAG_SEQUENCE {
                continue;
            }
            serials.push(certificate_serial(&cert)?);
        }
    }
    Ok(serials)
}

fn certificate_serial(cert: &Tlv<'_>) -> Result<SerialNumber, DerError> {
    let tbs = match cert.children()?.first() {
        Some(t) if t.tag == TAG_SEQUENCE => *t,
        _ => return err(cert.offset, "certificate without tbsCertificate"),
    };
    let fields = tbs.children()?;
    let mut iter = fields.iter();
    let mut next = iter.next();
    if next.is_some_and(|t| t.tag == TAG_CONTEXT_0) {
        next = iter.next();
    }
    match next {
        Some(t) if t.tag == TAG_INTEGER && !t.content.is_empty() => {
            Ok(SerialNumber::from_bytes(t.content))
        }
        _ => err(tbs.offset, "tbsCertificate has no serialNumber INTEGER"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sigtrack_fixtures::{write_certificate, write_pkcs7};

    #[test]
    fn extracts_every_certificate_serial() {
        let certs = vec![
            write_certificate(&[0x93, 0x6e, 0xac, 0xbe, 0x07, 0xf2, 0x01, 0xdf], "a"),
            write_certificate(&[0x00, 0xb3, 0x99], &"long-common-name".repeat(20)),
        ];
        let serials = pkcs7_serials(&write_pkcs7(&certs)).unwrap();
        let shown: Vec<String> = serials.iter().map(|s| s.display()).collect();
        assert_eq!(shown, ["93:6e:ac:be:07:f2:01:df", "b3:99"]);
    }

    #[test]
    fn indefinite_length_outer_sequence() {
        let cert = write_certificate(&[0x0a, 0x1b], "x");
        let der = write_pkcs7(&[cert]);
        // Re-encode the outer SEQUENCE with indefinite length.
        let (outer, _) = read_tlv(&der, 0, 0).unwrap();
        let mut ber = vec![0x30, 0x80];
        ber.extend_from_slice(outer.content);
        ber.extend_from_slice(&[0, 0]);
        let serials = pkcs7_serials(&ber).unwrap();
        assert_eq!(serials[0].display(), "0a:1b");
    }

    #[test]
    fn truncation_is_an_error_not_a_panic() {
        let der = write_pkcs7(&[write_certificate(&[1, 2, 3], "x")]);
        for cut in 0..der.len() {
            assert!(pkcs7_serials(&der[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn rejects_non_signed_data() {
        let e = pkcs7_serials(&[0x30, 0x03, 0x06, 0x01, 0x2A]).unwrap_err();
        assert_eq!(e.reason, "content type is not signedData");
    }
}
