//! Binary and CSV matrix exchange.
//!
//! The binary layout is a 4-byte magic tag `DLF1`, the row and column counts
//! as little-endian `u32`, then `rows × cols` little-endian IEEE-754 binary64
//! values in row-major order. A 2×2 matrix therefore occupies 44 bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DLF1";
const HEADER_LEN: usize = 12;

/// Serialize `m` into the binary layout.
pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut buf = Vec::with_capacity(HEADER_LEN + rows * cols * 8);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for i in 0..rows {
        for j in 0..cols {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    buf
}

/// Parse the binary layout. `path` is only used for error messages.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<DMatrix<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            rows: 0,
            cols: 0,
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .unwrap_or(usize::MAX);
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            rows,
            cols,
            expected,
            actual: payload.len(),
        });
    }
    let mut m = DMatrix::zeros(rows, cols);
    for (idx, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        let (i, j) = (idx / cols, idx % cols);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: path.display().to_string(),
                row: i,
                col: j,
            });
        }
        m[(i, j)] = v;
    }
    Ok(m)
}

pub fn save_matrix(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(m);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// Parse comma-separated rows of decimal floats. Blank lines are ignored;
/// every row must have the same number of columns.
pub fn parse_csv_matrix(text: &str, path: &Path) -> Result<DMatrix<f64>> {
    let mut values = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("not a number: {:?}", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: path.display().to_string(),
                    row: rows,
                    col: count,
                });
            }
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected {c} columns, found {count}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &values))
}

pub fn load_csv_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_matrix(&text, path)
}

/// Load either format, choosing CSV for a `.csv` extension.
pub fn load_any(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => load_csv_matrix(path),
        _ => load_matrix(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn identity_layout_is_44_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eye.dlf");
        save_matrix(&DMatrix::identity(2, 2), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 44);
        assert_eq!(&bytes[..4], b"DLF1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[20..28], &0.0f64.to_le_bytes());
        assert_eq!(load_matrix(&path).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.dlf");
        save_matrix(&DMatrix::zeros(0, 0), &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 12);
        let back = load_matrix(&path).unwrap();
        assert_eq!(back.shape(), (0, 0));
    }

    #[test]
    fn identity_three_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i3.dlf");
        save_matrix(&DMatrix::identity(3, 3), &path).unwrap();
        assert_eq!(load_matrix(&path).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn row_major_order() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bytes = encode_matrix(&m);
        let second = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        assert_eq!(second, 2.0);
    }

    #[test]
    fn truncated_payload_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dlf");
        let mut bytes = encode_matrix(&DMatrix::identity(3, 3));
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_matrix(&path),
            Err(Error::SizeMismatch { rows: 3, cols: 3, .. })
        ));
    }

    #[test]
    fn bad_magic_and_non_finite_are_distinct() {
        let p = Path::new("mem");
        let mut bytes = encode_matrix(&DMatrix::identity(1, 1));
        bytes[0] = b'X';
        assert!(matches!(decode_matrix(&bytes, p), Err(Error::BadMagic { .. })));

        let mut nan = DMatrix::identity(2, 2);
        nan[(1, 0)] = f64::NAN;
        let bytes = encode_matrix(&nan);
        assert!(matches!(
            decode_matrix(&bytes, p),
            Err(Error::NonFinite { row: 1, col: 0, .. })
        ));
    }

    #[test]
    fn csv_import() {
        let m = parse_csv_matrix("1,2\n3,4", Path::new("x.csv")).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert!(parse_csv_matrix("1,2\n3", Path::new("x.csv")).is_err());
        assert!(parse_csv_matrix("1,abc", Path::new("x.csv")).is_err());
    }

    #[test]
    fn large_seeded_round_trip_is_bit_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let m = DMatrix::from_fn(204, 5124, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let back = decode_matrix(&encode_matrix(&m), Path::new("mem")).unwrap();
        assert!(m
            .iter()
            .zip(back.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    proptest! {
        #[test]
        fn round_trip_any_shape(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(rows, cols, |_, _| {
                let bits: u64 = rng.random();
                let v = f64::from_bits(bits);
                if v.is_finite() { v } else { 0.5 }
            });
            let back = decode_matrix(&encode_matrix(&m), Path::new("mem")).unwrap();
            prop_assert_eq!(back.shape(), (rows, cols));
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
