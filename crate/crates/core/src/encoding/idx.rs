//! IDX loading (the MNIST container format): big-endian magic, big-endian
//! dimension extents, then raw unsigned bytes.

use thiserror::Error;

use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad IDX magic 0x{got:08x}, expected 0x{expected:08x}")]
    BadMagic { got: u32, expected: u32 },
    #[error("truncated IDX payload: header promises {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("truncated IDX header: need {0} bytes")]
    ShortHeader(usize),
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(IdxError::ShortHeader(at + 4))
}

/// Decode an image file (magic `0x00000803`) into `[N, rows, cols]` with
/// pixel bytes scaled to `[0, 1]`.
pub fn load_idx_images(bytes: &[u8]) -> Result<Tensor, IdxError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(IdxError::BadMagic {
            got: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let expected = n * rows * cols;
    let payload = &bytes[16.min(bytes.len())..];
    if payload.len() != expected {
        return Err(IdxError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let data: Vec<f32> = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Tensor::from_vec(&[n, rows, cols], data).expect("shape matches payload"))
}

/// Decode a label file (magic `0x00000801`) into raw class bytes.
pub fn load_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(IdxError::BadMagic {
            got: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let payload = &bytes[8.min(bytes.len())..];
    if payload.len() != n {
        return Err(IdxError::Truncated {
            expected: n,
            actual: payload.len(),
        });
    }
    Ok(payload.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_fixture(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        out.extend_from_slice(&n.to_be_bytes());
        out.extend_from_slice(&rows.to_be_bytes());
        out.extend_from_slice(&cols.to_be_bytes());
        out.extend_from_slice(pixels);
        out
    }

    #[test]
    fn minimal_image_fixture_decodes_scaled() {
        let bytes = image_fixture(1, 2, 2, &[0, 51, 102, 255]);
        let t = load_idx_images(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0]);
    }

    #[test]
    fn labels_decode_raw() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 5, 9]);
        assert_eq!(load_idx_labels(&bytes).unwrap(), vec![0, 5, 9]);
    }

    #[test]
    fn wrong_magic_is_an_error() {
        let mut bytes = image_fixture(1, 1, 1, &[7]);
        bytes[3] = 0x01; // labels magic in an image loader
        assert_eq!(
            load_idx_images(&bytes).unwrap_err(),
            IdxError::BadMagic {
                got: IDX_LABELS_MAGIC,
                expected: IDX_IMAGES_MAGIC
            }
        );
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let bytes = image_fixture(2, 2, 2, &[1, 2, 3, 4, 5]);
        assert_eq!(
            load_idx_images(&bytes).unwrap_err(),
            IdxError::Truncated {
                expected: 8,
                actual: 5
            }
        );
    }
}
