//! Binary `AndroidManifest.xml` reader.
//!
//! Only the chunks needed for permissions, components and intent filters
//! are interpreted: the string pool, the resource map and start/end element
//! nodes. Every other chunk is skipped by its declared size.

use std::collections::BTreeSet;

use super::{Component, ComponentKind, IntentFilter, RawManifest};

const RES_XML_TYPE: u16 = 0x0003;
const RES_STRING_POOL_TYPE: u16 = 0x0001;
const RES_XML_RESOURCE_MAP_TYPE: u16 = 0x0180;
const RES_XML_START_ELEMENT_TYPE: u16 = 0x0102;
const RES_XML_END_ELEMENT_TYPE: u16 = 0x0103;

const UTF8_FLAG: u32 = 0x100;

const ATTR_NAME_ID: u32 = 0x0101_0003;
const ATTR_LABEL_ID: u32 = 0x0101_0001;
const ATTR_PRIORITY_ID: u32 = 0x0101_001c;

const TYPE_STRING: u8 = 0x03;
const TYPE_FIRST_INT: u8 = 0x10;
const TYPE_LAST_INT: u8 = 0x1f;

const NO_INDEX: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct AxmlError {
    pub offset: usize,
    pub reason: String,
}

fn fail<T>(offset: usize, reason: impl Into<String>) -> Result<T, AxmlError> {
    Err(AxmlError {
        offset,
        reason: reason.into(),
    })
}

struct Cursor<'a> {
    data: &'a [u8],
}

impl Cursor<'_> {
    fn u8(&self, pos: usize) -> Result<u8, AxmlError> {
        match self.data.get(pos) {
            Some(&b) => Ok(b),
            None => fail(pos, "unexpected end of data"),
        }
    }

    fn u16(&self, pos: usize) -> Result<u16, AxmlError> {
        match self.data.get(pos..pos + 2) {
            Some(b) => Ok(u16::from_le_bytes([b[0], b[1]])),
            None => fail(pos, "unexpected end of data"),
        }
    }

    fn u32(&self, pos: usize) -> Result<u32, AxmlError> {
        match self.data.get(pos..pos + 4) {
            Some(b) => Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            None => fail(pos, "unexpected end of data"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ChunkHeader {
    kind: u16,
    header_size: usize,
    size: usize,
}

fn chunk_header(c: &Cursor<'_>, pos: usize, limit: usize) -> Result<ChunkHeader, AxmlError> {
    let kind = c.u16(pos)?;
    let header_size = c.u16(pos + 2)? as usize;
    let size = c.u32(pos + 4)? as usize;
    if header_size < 8 || size < header_size {
        return fail(pos, format!("chunk 0x{kind:04x} has invalid header/size"));
    }
    if pos.checked_add(size).is_none_or(|end| end > limit) {
        return fail(pos, format!("chunk 0x{kind:04x} overruns its parent"));
    }
    Ok(ChunkHeader {
        kind,
        header_size,
        size,
    })
}

fn string_pool(c: &Cursor<'_>, pos: usize, h: ChunkHeader) -> Result<Vec<String>, AxmlError> {
    if h.header_size < 0x1C {
        return fail(pos, "string pool header too small");
    }
    let count = c.u32(pos + 8)? as usize;
    let flags = c.u32(pos + 16)?;
    let strings_start = c.u32(pos + 20)? as usize;
    let end = pos + h.size;
    if count > h.size / 4 {
        return fail(pos + 8, "string count exceeds chunk size");
    }
    let utf8 = flags & UTF8_FLAG != 0;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let rel = c.u32(pos + h.header_size + 4 * i)? as usize;
        let Some(at) = pos
            .checked_add(strings_start)
            .and_then(|p| p.checked_add(rel))
            .filter(|&p| p < end)
        else {
            return fail(pos + h.header_size + 4 * i, "string offset out of range");
        };
        let s = if utf8 {
            read_utf8(c, at, end)?
        } else {
            read_utf16(c, at, end)?
        };
        out.push(s);
    }
    Ok(out)
}

fn read_utf8(c: &Cursor<'_>, at: usize, end: usize) -> Result<String, AxmlError> {
    // utf-16 length, then byte length; each one or two bytes
    let skip = if c.u8(at)? & 0x80 != 0 { 2 } else { 1 };
    let mut p = at + skip;
    let b0 = c.u8(p)?;
    let byte_len = if b0 & 0x80 != 0 {
        p += 1;
        (((b0 & 0x7F) as usize) << 8) | c.u8(p)? as usize
    } else {
        b0 as usize
    };
    p += 1;
    match p.checked_add(byte_len).filter(|&e| e <= end) {
        Some(e) => Ok(String::from_utf8_lossy(&c.data[p..e]).into_owned()),
        None => fail(at, "string data overruns pool"),
    }
}

fn read_utf16(c: &Cursor<'_>, at: usize, end: usize) -> Result<String, AxmlError> {
    let mut p = at;
    let mut len = c.u16(p)? as usize;
    p += 2;
    if len & 0x8000 != 0 {
        len = ((len & 0x7FFF) << 16) | c.u16(p)? as usize;
        p += 2;
    }
    if p.checked_add(len * 2).is_none_or(|e| e > end) {
        return fail(at, "string data overruns pool");
    }
    let units: Vec<u16> = (0..len)
        .map(|i| u16::from_le_bytes([c.data[p + 2 * i], c.data[p + 2 * i + 1]]))
        .collect();
    Ok(String::from_utf16_lossy(&units))
}

#[derive(Debug)]
enum AttrValue {
    Str(String),
    Int(i32),
    Other,
}

#[derive(Debug)]
struct Attribute {
    name: String,
    value: AttrValue,
}

struct Document {
    strings: Vec<String>,
    resource_ids: Vec<u32>,
}

impl Document {
    fn string(&self, idx: u32, at: usize) -> Result<&str, AxmlError> {
        match self.strings.get(idx as usize) {
            Some(s) => Ok(s),
            None => fail(at, format!("string index {idx} out of range")),
        }
    }

    /// Attribute names are resolved through the resource map first, since
    /// obfuscated manifests blank the name strings.
    fn attr_name(&self, idx: u32, at: usize) -> Result<String, AxmlError> {
        let known = match self.resource_ids.get(idx as usize) {
            Some(&ATTR_NAME_ID) => Some("name"),
            Some(&ATTR_LABEL_ID) => Some("label"),
            Some(&ATTR_PRIORITY_ID) => Some("priority"),
            _ => None,
        };
        match known {
            Some(n) => Ok(n.to_string()),
            None => self.string(idx, at).map(str::to_string),
        }
    }
}

fn start_element(
    c: &Cursor<'_>,
    doc: &Document,
    pos: usize,
    h: ChunkHeader,
) -> Result<(String, Vec<Attribute>), AxmlError> {
    let ext = pos + h.header_size;
    let name_idx = c.u32(ext + 4)?;
    let name = doc.string(name_idx, ext + 4)?.to_string();
    let attr_start = c.u16(ext + 8)? as usize;
    let attr_size = c.u16(ext + 10)? as usize;
    let attr_count = c.u16(ext + 12)? as usize;
    if attr_count > 0 && attr_size < 20 {
        return fail(ext + 10, "attribute record too small");
    }
    let first = ext + attr_start;
    if first + attr_count * attr_size > pos + h.size {
        return fail(ext + 12, "attributes overrun element chunk");
    }
    let mut attrs = Vec::with_capacity(attr_count);
    for i in 0..attr_count {
        let a = first + i * attr_size;
        let attr_name = doc.attr_name(c.u32(a + 4)?, a + 4)?;
        let raw = c.u32(a + 8)?;
        let data_type = c.u8(a + 15)?;
        let data = c.u32(a + 16)?;
        let value = match data_type {
            TYPE_STRING => AttrValue::Str(doc.string(data, a + 16)?.to_string()),
            TYPE_FIRST_INT..=TYPE_LAST_INT => AttrValue::Int(data as i32),
            _ if raw != NO_INDEX => AttrValue::Str(doc.string(raw, a + 8)?.to_string()),
            _ => AttrValue::Other,
        };
        attrs.push(Attribute {
            name: attr_name,
            value,
        });
    }
    Ok((name, attrs))
}

fn attr_str<'a>(attrs: &'a [Attribute], name: &str) -> Option<&'a str> {
    attrs
        .iter()
        .find(|a| a.name == name)
        .and_then(|a| match &a.value {
            AttrValue::Str(s) => Some(s.as_str()),
            _ => None,
        })
}

fn attr_int(attrs: &[Attribute], name: &str) -> Option<i32> {
    attrs
        .iter()
        .find(|a| a.name == name)
        .and_then(|a| match &a.value {
            AttrValue::Int(v) => Some(*v),
            AttrValue::Str(s) => s.trim().parse().ok(),
            AttrValue::Other => None,
        })
}

/// `android.permission.SEND_SMS` becomes `SEND_SMS`.
pub fn short_permission_name(name: &str) -> &str {
    name.rsplit('.').next().unwrap_or(name)
}

pub(crate) fn parse_manifest(data: &[u8]) -> Result<RawManifest, AxmlError> {
    let c = Cursor { data };
    let root = chunk_header(&c, 0, data.len())?;
    if root.kind != RES_XML_TYPE {
        return fail(0, format!("root chunk type 0x{:04x} is not XML", root.kind));
    }

    let mut doc = Document {
        strings: Vec::new(),
        resource_ids: Vec::new(),
    };
    let mut manifest = RawManifest::default();
    let mut permissions = BTreeSet::new();
    let mut package = None;
    let mut label = None;
    let mut stack: Vec<String> = Vec::new();
    let mut filter_priority: Option<i32> = None;

    let end = root.size;
    let mut pos = root.header_size;
    while pos < end {
        let h = chunk_header(&c, pos, end)?;
        match h.kind {
            RES_STRING_POOL_TYPE => doc.strings = string_pool(&c, pos, h)?,
            RES_XML_RESOURCE_MAP_TYPE => {
                let n = (h.size - h.header_size) / 4;
                doc.resource_ids = (0..n)
                    .map(|i| c.u32(pos + h.header_size + 4 * i))
                    .collect::<Result<_, _>>()?;
            }
            RES_XML_START_ELEMENT_TYPE => {
                let (name, attrs) = start_element(&c, &doc, pos, h)?;
                let parent = stack.last().map(String::as_str);
                match name.as_str() {
                    "manifest" => package = attr_str(&attrs, "package").map(str::to_string),
                    "uses-permission" | "uses-permission-sdk-23" | "uses-permission-sdk-m" => {
                        if let Some(p) = attr_str(&attrs, "name") {
                            permissions.insert(short_permission_name(p).to_string());
                        }
                    }
                    "application" => label = attr_str(&attrs, "label").map(str::to_string),
                    "intent-filter" => filter_priority = attr_int(&attrs, "priority"),
                    "action" if parent == Some("intent-filter") => {
                        if let Some(a) = attr_str(&attrs, "name") {
                            manifest.intent_filters.push(IntentFilter {
                                action: a.to_string(),
                                priority: filter_priority,
                            });
                        }
                    }
                    other => {
                        if let Some(kind) = ComponentKind::from_tag(other) {
                            if let Some(n) = attr_str(&attrs, "name") {
                                manifest.components.push(Component {
                                    kind,
                                    name: n.to_string(),
                                });
                            }
                        }
                    }
                }
                stack.push(name);
            }
            RES_XML_END_ELEMENT_TYPE => {
                if stack.pop().as_deref() == Some("intent-filter") {
                    filter_priority = None;
                }
            }
            _ => {}
        }
        pos += h.size;
    }

    if doc.strings.is_empty() {
        return fail(root.header_size, "no string pool chunk");
    }
    manifest.requested_permissions = permissions;
    manifest.app_name = label.or(package).unwrap_or_default();
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sigtrack_fixtures::{write_axml, FixtureApk, FixtureComponent, FixtureIntentFilter};

    fn fixture() -> FixtureApk {
        FixtureApk {
            permissions: vec![
                "android.permission.SEND_SMS".into(),
                "android.permission.READ_SMS".into(),
                "android.permission.SEND_SMS".into(),
            ],
            components: vec![
                FixtureComponent {
                    kind: "activity".into(),
                    name: ".Main".into(),
                    intent_filters: vec![],
                },
                FixtureComponent {
                    kind: "receiver".into(),
                    name: ".SmsHook".into(),
                    intent_filters: vec![FixtureIntentFilter {
                        action: "android.provider.Telephony.SMS_RECEIVED".into(),
                        priority: Some(2147483647),
                    }],
                },
            ],
            ..FixtureApk::default()
        }
    }

    #[test]
    fn parses_permissions_components_and_filters() {
        let m = parse_manifest(&write_axml(&fixture())).unwrap();
        assert_eq!(m.app_name, "Fixture");
        let perms: Vec<_> = m.requested_permissions.iter().map(String::as_str).collect();
        assert_eq!(perms, ["READ_SMS", "SEND_SMS"]);
        assert_eq!(m.components.len(), 2);
        assert_eq!(m.components[1].kind, ComponentKind::Receiver);
        assert_eq!(
            m.intent_filters,
            vec![IntentFilter {
                action: "android.provider.Telephony.SMS_RECEIVED".into(),
                priority: Some(i32::MAX),
            }]
        );
    }

    #[test]
    fn blank_attribute_names_resolve_through_resource_map() {
        let mut apk = fixture();
        apk.blank_attribute_names = true;
        let m = parse_manifest(&write_axml(&apk)).unwrap();
        assert_eq!(m.requested_permissions.len(), 2);
        assert_eq!(m.intent_filters[0].priority, Some(i32::MAX));
        assert_eq!(m.app_name, "Fixture");
    }

    #[test]
    fn falls_back_to_package_name() {
        let apk = FixtureApk {
            app_label: None,
            ..FixtureApk::default()
        };
        let m = parse_manifest(&write_axml(&apk)).unwrap();
        assert_eq!(m.app_name, "com.example.fixture");
    }

    #[test]
    fn truncations_report_offsets_without_panicking() {
        let bytes = write_axml(&fixture());
        for cut in 0..bytes.len() {
            assert!(parse_manifest(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn wrong_root_type() {
        let mut bytes = write_axml(&fixture());
        bytes[0] = 0x02;
        let e = parse_manifest(&bytes).unwrap_err();
        assert_eq!(e.offset, 0);
    }
}
