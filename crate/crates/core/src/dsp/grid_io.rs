//! Binary grid container: `u32 LE rows`, `u32 LE cols`, then `rows * cols`
//! `f32 LE` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::{DspError, MelSpectrogram};

pub fn write_grid(path: impl AsRef<Path>, grid: &MelSpectrogram) -> Result<(), DspError> {
    let mut buf = Vec::with_capacity(8 + grid.values.len() * 4);
    buf.extend_from_slice(&(grid.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.n_mels as u32).to_le_bytes());
    for &v in &grid.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<MelSpectrogram, DspError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(DspError::Config("grid file shorter than its header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(0), word(4));
    if bytes.len() != 8 + rows * cols * 4 {
        return Err(DspError::Config(format!(
            "grid header says {rows}x{cols} but payload is {} bytes",
            bytes.len() - 8
        )));
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(MelSpectrogram::from_values(rows, cols, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        let g = MelSpectrogram::from_values(3, 2, vec![0.0, 1.5, -2.0, 3.25, 4.0, 5.0]);
        write_grid(&path, &g).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 + 24);
        assert_eq!(read_grid(&path).unwrap().values, g.values);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        std::fs::write(&path, [2, 0, 0, 0, 2, 0, 0, 0, 0, 0]).unwrap();
        assert!(read_grid(&path).is_err());
    }
}
