use crate::FixtureApk;

const ANDROID_NS: &str = "http://schemas.android.com/apk/res/android";

// Attribute names that also carry a resource id, in resource-map order.
const ATTR_NAME: u32 = 0;
const ATTR_LABEL: u32 = 1;
const ATTR_PRIORITY: u32 = 2;
const RESOURCE_IDS: [u32; 3] = [0x0101_0003, 0x0101_0001, 0x0101_001c];

enum Value {
    Str(u32),
    Int(i32),
}

struct Attr {
    ns: Option<u32>,
    name: u32,
    value: Value,
}

struct Writer {
    strings: Vec<String>,
    body: Vec<u8>,
    ns_uri: u32,
}

impl Writer {
    fn intern(&mut self, s: &str) -> u32 {
        // Skip the reserved attribute slots so blanked names never alias.
        if let Some(i) = self.strings.iter().skip(3).position(|x| x == s) {
            return (i + 3) as u32;
        }
        self.strings.push(s.to_string());
        (self.strings.len() - 1) as u32
    }

    fn node_header(&mut self, ty: u16, size: u32) {
        self.body.extend_from_slice(&ty.to_le_bytes());
        self.body.extend_from_slice(&0x10u16.to_le_bytes());
        self.body.extend_from_slice(&size.to_le_bytes());
        self.body.extend_from_slice(&1u32.to_le_bytes()); // line
        self.body.extend_from_slice(&u32::MAX.to_le_bytes()); // comment
    }

    fn start(&mut self, tag: &str, attrs: &[Attr]) {
        let name = self.intern(tag);
        let size = 0x10 + 0x14 + 0x14 * attrs.len() as u32;
        self.node_header(0x0102, size);
        self.body.extend_from_slice(&u32::MAX.to_le_bytes()); // ns
        self.body.extend_from_slice(&name.to_le_bytes());
        self.body.extend_from_slice(&0x14u16.to_le_bytes());
        self.body.extend_from_slice(&0x14u16.to_le_bytes());
        self.body
            .extend_from_slice(&(attrs.len() as u16).to_le_bytes());
        self.body.extend_from_slice(&[0u8; 6]); // id, class, style
        for a in attrs {
            let ns = a.ns.unwrap_or(u32::MAX);
            self.body.extend_from_slice(&ns.to_le_bytes());
            self.body.extend_from_slice(&a.name.to_le_bytes());
            let (raw, ty, data) = match a.value {
                Value::Str(i) => (i, 0x03u8, i),
                Value::Int(v) => (u32::MAX, 0x10u8, v as u32),
            };
            self.body.extend_from_slice(&raw.to_le_bytes());
            self.body.extend_from_slice(&8u16.to_le_bytes());
            self.body.push(0);
            self.body.push(ty);
            self.body.extend_from_slice(&data.to_le_bytes());
        }
    }

    fn end(&mut self, tag: &str) {
        let name = self.intern(tag);
        self.node_header(0x0103, 0x18);
        self.body.extend_from_slice(&u32::MAX.to_le_bytes());
        self.body.extend_from_slice(&name.to_le_bytes());
    }

    fn android_attr(&self, name: u32, value: Value) -> Attr {
        Attr {
            ns: Some(self.ns_uri),
            name,
            value,
        }
    }

    fn string_pool(&self) -> Vec<u8> {
        let mut data = Vec::new();
        let mut offsets = Vec::new();
        for s in &self.strings {
            offsets.push(data.len() as u32);
            let units: Vec<u16> = s.encode_utf16().collect();
            data.extend_from_slice(&(units.len() as u16).to_le_bytes());
            for u in units {
                data.extend_from_slice(&u.to_le_bytes());
            }
            data.extend_from_slice(&0u16.to_le_bytes());
        }
        while data.len() % 4 != 0 {
            data.push(0);
        }
        let header = 0x1Cu32;
        let strings_start = header + 4 * self.strings.len() as u32;
        let size = strings_start + data.len() as u32;
        let mut out = Vec::new();
        out.extend_from_slice(&0x0001u16.to_le_bytes());
        out.extend_from_slice(&(header as u16).to_le_bytes());
        out.extend_from_slice(&size.to_le_bytes());
        out.extend_from_slice(&(self.strings.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes()); // styles
        out.extend_from_slice(&0u32.to_le_bytes()); // flags: UTF-16
        out.extend_from_slice(&strings_start.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for o in offsets {
            out.extend_from_slice(&o.to_le_bytes());
        }
        out.extend_from_slice(&data);
        out
    }
}

/// Binary XML encoding of the manifest described by `apk`.
pub fn write_axml(apk: &FixtureApk) -> Vec<u8> {
    let reserved = if apk.blank_attribute_names {
        ["", "", ""]
    } else {
        ["name", "label", "priority"]
    };
    let mut w = Writer {
        strings: reserved.iter().map(|s| s.to_string()).collect(),
        body: Vec::new(),
        ns_uri: 0,
    };
    w.ns_uri = w.intern(ANDROID_NS);
    let prefix = w.intern("android");

    w.node_header(0x0100, 0x18);
    w.body.extend_from_slice(&prefix.to_le_bytes());
    w.body.extend_from_slice(&w.ns_uri.to_le_bytes());

    let package_attr = w.intern("package");
    let package_val = w.intern(&apk.package);
    w.start(
        "manifest",
        &[Attr {
            ns: None,
            name: package_attr,
            value: Value::Str(package_val),
        }],
    );
    for p in &apk.permissions {
        let v = w.intern(p);
        let a = w.android_attr(ATTR_NAME, Value::Str(v));
        w.start("uses-permission", &[a]);
        w.end("uses-permission");
    }
    let app_attrs = match &apk.app_label {
        Some(label) => {
            let v = w.intern(label);
            vec![w.android_attr(ATTR_LABEL, Value::Str(v))]
        }
        None => Vec::new(),
    };
    w.start("application", &app_attrs);
    for c in &apk.components {
        let v = w.intern(&c.name);
        let a = w.android_attr(ATTR_NAME, Value::Str(v));
        w.start(&c.kind, &[a]);
        for f in &c.intent_filters {
            let attrs: Vec<Attr> = f
                .priority
                .map(|p| w.android_attr(ATTR_PRIORITY, Value::Int(p)))
                .into_iter()
                .collect();
            w.start("intent-filter", &attrs);
            let v = w.intern(&f.action);
            let a = w.android_attr(ATTR_NAME, Value::Str(v));
            w.start("action", &[a]);
            w.end("action");
            w.end("intent-filter");
        }
        w.end(&c.kind);
    }
    w.end("application");
    w.end("manifest");

    w.node_header(0x0101, 0x18);
    w.body.extend_from_slice(&prefix.to_le_bytes());
    w.body.extend_from_slice(&w.ns_uri.to_le_bytes());

    let pool = w.string_pool();
    let mut resmap = Vec::new();
    resmap.extend_from_slice(&0x0180u16.to_le_bytes());
    resmap.extend_from_slice(&8u16.to_le_bytes());
    resmap.extend_from_slice(&(8 + 4 * RESOURCE_IDS.len() as u32).to_le_bytes());
    for id in RESOURCE_IDS {
        resmap.extend_from_slice(&id.to_le_bytes());
    }

    let total = 8 + pool.len() + resmap.len() + w.body.len();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&0x0003u16.to_le_bytes());
    out.extend_from_slice(&8u16.to_le_bytes());
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(&pool);
    out.extend_from_slice(&resmap);
    out.extend_from_slice(&w.body);
    out
}
