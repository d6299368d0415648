//! Writers for minimal Android package fixtures.
//!
//! Everything here is written from the file-format layouts directly and
//! shares no code with the parsers in `sigtrack`, so the parsers can be
//! checked against what these writers were asked to produce.
//!
//! The output is intentionally small: a stored (or raw-DEFLATE "stored
//! block") ZIP containing a binary `AndroidManifest.xml`, one or more
//! `classes*.dex` files and a PKCS#7 signature block with one or more
//! X.509 certificates.

mod axml;
mod der;
mod dex;
mod zip;

pub use axml::write_axml;
pub use der::{write_certificate, write_pkcs7};
pub use dex::{encode_mutf8, write_dex, write_dex_raw};
pub use zip::{crc32, write_zip, ZipEntry, ZipMethod};

/// One `<intent-filter>` with a single action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureIntentFilter {
    pub action: String,
    pub priority: Option<i32>,
}

/// One application component declared in the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureComponent {
    /// One of `activity`, `service`, `receiver`, `provider`.
    pub kind: String,
    pub name: String,
    pub intent_filters: Vec<FixtureIntentFilter>,
}

/// Description of an APK fixture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureApk {
    pub package: String,
    /// Written as a literal string `android:label` on `<application>`.
    pub app_label: Option<String>,
    /// Fully qualified permission names, written in order.
    pub permissions: Vec<String>,
    pub components: Vec<FixtureComponent>,
    /// Content bytes of each certificate's serialNumber INTEGER.
    pub cert_serials: Vec<Vec<u8>>,
    /// One string pool per `classes*.dex` file.
    pub dex_files: Vec<Vec<String>>,
    /// Store entries with raw DEFLATE (stored blocks) instead of method 0.
    pub deflate: bool,
    /// Blank attribute names in the manifest so only the resource map
    /// identifies them.
    pub blank_attribute_names: bool,
    /// Skip the signature block entirely.
    pub omit_signature: bool,
}

impl Default for FixtureApk {
    fn default() -> Self {
        Self {
            package: "com.example.fixture".into(),
            app_label: Some("Fixture".into()),
            permissions: Vec::new(),
            components: Vec::new(),
            cert_serials: vec![vec![0x01]],
            dex_files: vec![Vec::new()],
            deflate: false,
            blank_attribute_names: false,
            omit_signature: false,
        }
    }
}

/// Builds the APK bytes for `apk`.
pub fn write_apk(apk: &FixtureApk) -> Vec<u8> {
    let method = if apk.deflate {
        ZipMethod::DeflateStoredBlocks
    } else {
        ZipMethod::Stored
    };
    let mut entries = vec![ZipEntry {
        name: "AndroidManifest.xml".into(),
        data: write_axml(apk),
        method,
    }];
    for (i, pool) in apk.dex_files.iter().enumerate() {
        let name = if i == 0 {
            "classes.dex".to_string()
        } else {
            format!("classes{}.dex", i + 1)
        };
        let strings: Vec<&str> = pool.iter().map(String::as_str).collect();
        entries.push(ZipEntry {
            name,
            data: write_dex(&strings),
            method,
        });
    }
    entries.push(ZipEntry {
        name: "META-INF/MANIFEST.MF".into(),
        data: b"Manifest-Version: 1.0\r\nCreated-By: fixture\r\n\r\n".to_vec(),
        method,
    });
    if !apk.omit_signature {
        entries.push(ZipEntry {
            name: "META-INF/CERT.SF".into(),
            data: b"Signature-Version: 1.0\r\n\r\n".to_vec(),
            method,
        });
        let certs: Vec<Vec<u8>> = apk
            .cert_serials
            .iter()
            .map(|s| write_certificate(s, &apk.package))
            .collect();
        entries.push(ZipEntry {
            name: "META-INF/CERT.RSA".into(),
            data: write_pkcs7(&certs),
            method,
        });
    }
    entries.push(ZipEntry {
        name: "res/raw/readme.txt".into(),
        data: b"fixture resource".to_vec(),
        method: ZipMethod::Stored,
    });
    write_zip(&entries)
}
