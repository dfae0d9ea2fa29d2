use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

/// Upper bound on payload length accepted anywhere in the crate.
///
/// Protocols are free to use long messages, but the simulator has to store
/// every message of every round, so payloads are capped.
pub const MAX_PAYLOAD_LEN: usize = 4096;

/// Opaque message body.
///
/// Ordering is lexicographic over the bytes; this canonical order is used for
/// every tie-break downstream (choice of the heavy element of a distribution,
/// coin assignment inside a group, schedule ordering).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Payload(SmallVec<[u8; 14]>);

impl Payload {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, PayloadTooLarge> {
        let bytes: Vec<u8> = bytes.into();
        if bytes.len() > MAX_PAYLOAD_LEN {
            return Err(PayloadTooLarge(bytes.len()));
        }
        Ok(Payload(SmallVec::from_vec(bytes)))
    }

    /// Two-byte payload `[tag, bit]` used by the reference protocols.
    pub fn tagged_bit(tag: u8, bit: u8) -> Self {
        Payload(SmallVec::from_slice(&[tag, bit]))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Payload({self})")
    }
}

impl fmt::Display for Payload {
    /// Printable ASCII is shown verbatim, everything else as `\xNN`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            if b.is_ascii_graphic() && b != b'\\' {
                write!(f, "{}", b as char)?;
            } else {
                write!(f, "\\x{b:02x}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("payload of {0} bytes exceeds the {MAX_PAYLOAD_LEN}-byte limit")]
pub struct PayloadTooLarge(pub usize);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_lexicographic() {
        let a = Payload::new(b"ab".to_vec()).unwrap();
        let b = Payload::new(b"b".to_vec()).unwrap();
        let c = Payload::new(b"abc".to_vec()).unwrap();
        assert!(a < b);
        assert!(a < c);
        assert!(c < b);
    }

    #[test]
    fn rejects_oversized() {
        assert_eq!(
            Payload::new(vec![0u8; MAX_PAYLOAD_LEN + 1]),
            Err(PayloadTooLarge(MAX_PAYLOAD_LEN + 1))
        );
        assert!(Payload::new(vec![0u8; MAX_PAYLOAD_LEN]).is_ok());
    }

    #[test]
    fn display_escapes_binary() {
        assert_eq!(Payload::tagged_bit(b'v', 1).to_string(), "v\\x01");
    }
}
