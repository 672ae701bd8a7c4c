use crate::error::{Error, Result};

/// Packs 4-bit codes two per byte: element `2i` in the low nibble of byte
/// `i`, element `2i + 1` in the high nibble. Odd counts pad with a zero nibble.
pub fn pack_nibbles(codes: &[u8]) -> Result<Vec<u8>> {
    if let Some(pos) = codes.iter().position(|&c| c >= 16) {
        return Err(Error::Encoding(format!(
            "code {} at position {pos} does not fit in four bits",
            codes[pos]
        )));
    }
    Ok(codes
        .chunks(2)
        .map(|pair| pair[0] | pair.get(1).map_or(0, |hi| hi << 4))
        .collect())
}

pub fn unpack_nibbles(bytes: &[u8], count: usize) -> Result<Vec<u8>> {
    if bytes.len() < count.div_ceil(2) {
        return Err(Error::Encoding(format!(
            "{} bytes hold fewer than {count} nibbles",
            bytes.len()
        )));
    }
    Ok((0..count)
        .map(|i| {
            let b = bytes[i / 2];
            if i % 2 == 0 {
                b & 0x0F
            } else {
                b >> 4
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        assert_eq!(pack_nibbles(&[1, 2]).unwrap(), vec![0x21]);
        assert_eq!(pack_nibbles(&[15]).unwrap(), vec![0x0F]);
        assert_eq!(pack_nibbles(&[]).unwrap(), Vec::<u8>::new());
        assert!(matches!(pack_nibbles(&[3, 16]), Err(Error::Encoding(_))));
        assert!(unpack_nibbles(&[0x21], 3).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(codes in prop::collection::vec(0u8..16, 0..10_000)) {
            let packed = pack_nibbles(&codes).unwrap();
            prop_assert_eq!(packed.len(), codes.len().div_ceil(2));
            prop_assert_eq!(unpack_nibbles(&packed, codes.len()).unwrap(), codes);
        }

        #[test]
        fn packing_is_injective(a in prop::collection::vec(0u8..16, 1..64),
                                b in prop::collection::vec(0u8..16, 1..64)) {
            if a.len() == b.len() && a != b {
                prop_assert_ne!(pack_nibbles(&a).unwrap(), pack_nibbles(&b).unwrap());
            }
        }
    }
}
