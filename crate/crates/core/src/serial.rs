//! Certificate serial numbers.
//!
//! A serial is kept as its unsigned big-endian magnitude with leading zero
//! bytes removed (a zero serial is the single byte `00`). DER adds a `00`
//! pad byte to positive integers whose high bit is set; that pad is
//! stripped here so the DER encoding `00 93 6e ..` of a real certificate
//! and the display form `93:6e:..` found in tooling output compare equal.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SerialParseError {
    #[error("empty serial number")]
    Empty,
    #[error("invalid hex group {0:?} in serial number")]
    BadGroup(String),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SerialNumber(Vec<u8>);

impl SerialNumber {
    /// Builds a serial from INTEGER content bytes or any big-endian
    /// magnitude. Empty input is the zero serial.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let start = bytes.iter().position(|&b| b != 0).unwrap_or(bytes.len());
        if start == bytes.len() {
            return Self(vec![0]);
        }
        Self(bytes[start..].to_vec())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Lowercase colon-separated hex, e.g. `93:6e:ac:be:07:f2:01:df`.
    pub fn display(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SerialNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(":")?;
            }
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for SerialNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SerialNumber({self})")
    }
}

impl FromStr for SerialNumber {
    type Err = SerialParseError;

    /// Accepts colon-separated hex groups in either case. A group may hold
    /// one or two digits.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(SerialParseError::Empty);
        }
        let mut bytes = Vec::new();
        for group in s.split(':') {
            if group.is_empty() || group.len() > 2 {
                return Err(SerialParseError::BadGroup(group.to_string()));
            }
            let b = u8::from_str_radix(group, 16)
                .map_err(|_| SerialParseError::BadGroup(group.to_string()))?;
            bytes.push(b);
        }
        Ok(Self::from_bytes(&bytes))
    }
}

impl Serialize for SerialNumber {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SerialNumber {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn der_pad_byte_is_stripped() {
        let padded =
            SerialNumber::from_bytes(&[0x00, 0x93, 0x6e, 0xac, 0xbe, 0x07, 0xf2, 0x01, 0xdf]);
        let bare = SerialNumber::from_bytes(&[0x93, 0x6e, 0xac, 0xbe, 0x07, 0xf2, 0x01, 0xdf]);
        assert_eq!(padded, bare);
        assert_eq!(bare.display(), "93:6e:ac:be:07:f2:01:df");
    }

    #[test]
    fn uppercase_input_normalizes() {
        let s: SerialNumber = "0A:1B".parse().unwrap();
        assert_eq!(s.display(), "0a:1b");
        assert_eq!(s.as_bytes(), &[0x0a, 0x1b]);
    }

    #[test]
    fn zero_serial() {
        assert_eq!(SerialNumber::from_bytes(&[]).display(), "00");
        assert_eq!(SerialNumber::from_bytes(&[0, 0]).display(), "00");
        assert_eq!("00".parse::<SerialNumber>().unwrap().as_bytes(), &[0]);
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!("".parse::<SerialNumber>(), Err(SerialParseError::Empty));
        assert!("0a::1b".parse::<SerialNumber>().is_err());
        assert!("xyz".parse::<SerialNumber>().is_err());
        assert!("abc".parse::<SerialNumber>().is_err());
    }

    proptest! {
        #[test]
        fn display_round_trips(bytes in proptest::collection::vec(any::<u8>(), 1..24)) {
            let serial = SerialNumber::from_bytes(&bytes);
            let shown = serial.display();
            let parsed: SerialNumber = shown.parse().unwrap();
            prop_assert_eq!(&parsed, &serial);
            prop_assert_eq!(parsed.display(), shown);
            prop_assert!(serial.as_bytes().len() == 1 || serial.as_bytes()[0] != 0);
        }
    }
}
