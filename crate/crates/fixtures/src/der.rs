fn tlv(tag: u8, content: &[u8]) -> Vec<u8> {
    let mut out = vec![tag];
    let len = content.len();
    if len < 0x80 {
        out.push(len as u8);
    } else {
        let bytes = (len as u32).to_be_bytes();
        let skip = bytes.iter().take_while(|&&b| b == 0).count();
        out.push(0x80 | (4 - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
    out.extend_from_slice(content);
    out
}

fn seq(parts: &[Vec<u8>]) -> Vec<u8> {
    tlv(0x30, &parts.concat())
}

const OID_SIGNED_DATA: &[u8] = &[0x2A, 0x86, 0x48, 0x86, 0xF7, 0x0D, 0x01, 0x07, 0x02];
const OID_DATA: &[u8] = &[0x2A, 0x86, 0x48, 0x86, 0xF7, 0x0D, 0x01, 0x07, 0x01];
const OID_SHA256_RSA: &[u8] = &[0x2A, 0x86, 0x48, 0x86, 0xF7, 0x0D, 0x01, 0x01, 0x0B];
const OID_RSA: &[u8] = &[0x2A, 0x86, 0x48, 0x86, 0xF7, 0x0D, 0x01, 0x01, 0x01];
const OID_CN: &[u8] = &[0x55, 0x04, 0x03];

fn name(cn: &str) -> Vec<u8> {
    seq(&[tlv(
        0x31,
        &seq(&[tlv(0x06, OID_CN), tlv(0x0C, cn.as_bytes())]),
    )])
}

fn alg(oid: &[u8]) -> Vec<u8> {
    seq(&[tlv(0x06, oid), tlv(0x05, &[])])
}

/// X.509 v3 certificate whose serialNumber INTEGER has content `serial`.
/// Keys and signature are filler bytes.
pub fn write_certificate(serial: &[u8], cn: &str) -> Vec<u8> {
    let mut key = vec![0u8];
    key.extend((0..64u8).map(|i| i.wrapping_mul(7)));
    let tbs = seq(&[
        tlv(0xA0, &tlv(0x02, &[0x02])),
        tlv(0x02, serial),
        alg(OID_SHA256_RSA),
        name(cn),
        seq(&[tlv(0x17, b"200101000000Z"), tlv(0x17, b"300101000000Z")]),
        name(cn),
        seq(&[alg(OID_RSA), tlv(0x03, &key)]),
    ]);
    let mut sig = vec![0u8];
    sig.extend((0..64u8).map(|i| i ^ 0x5A));
    seq(&[tbs, alg(OID_SHA256_RSA), tlv(0x03, &sig)])
}

/// PKCS#7 SignedData ContentInfo carrying `certs` and no signer infos.
pub fn write_pkcs7(certs: &[Vec<u8>]) -> Vec<u8> {
    let signed = seq(&[
        tlv(0x02, &[0x01]),
        tlv(
            0x31,
            &alg(&[0x60, 0x86, 0x48, 0x01, 0x65, 0x03, 0x04, 0x02, 0x01]),
        ),
        seq(&[tlv(0x06, OID_DATA)]),
        tlv(0xA0, &certs.concat()),
        tlv(0x31, &[]),
    ]);
    seq(&[tlv(0x06, OID_SIGNED_DATA), tlv(0xA0, &signed)])
}
