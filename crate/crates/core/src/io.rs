//! Sample containers: CSV with a header row, and a compact binary format.
//!
//! The binary layout is a 16-byte little-endian header
//! `b"SKWS" | version: u32 | n: u32 | d: u32` followed by `n·d` float64
//! values in column-major order.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const SAMPLE_MAGIC: [u8; 4] = *b"SKWS";
pub const SAMPLE_VERSION: u32 = 1;

/// Writes one row per draw.
pub fn write_samples_csv(path: impl AsRef<Path>, samples: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_samples_csv_to(file, samples, names)
}

pub fn write_samples_csv_to(w: impl Write, samples: &DMatrix<f64>, names: &[String]) -> Result<()> {
    if names.len() != samples.ncols() {
        return Err(Error::invalid("one column name per coordinate is required"));
    }
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(names)?;
    for row in samples.row_iter() {
        wtr.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_samples_csv(r: impl Read) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut values = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec?;
        for field in rec.iter() {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad sample value `{field}`")))?,
            );
        }
        n += 1;
    }
    Ok((DMatrix::from_row_slice(n, names.len(), &values), names))
}

pub fn write_samples_bin(path: impl AsRef<Path>, samples: &DMatrix<f64>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_samples_bin_to(&mut file, samples)?;
    file.flush()?;
    Ok(())
}

pub fn write_samples_bin_to(mut w: impl Write, samples: &DMatrix<f64>) -> Result<()> {
    let (n, d) = samples.shape();
    let n32 = u32::try_from(n).map_err(|_| Error::invalid("too many draws for the binary format"))?;
    let d32 = u32::try_from(d).map_err(|_| Error::invalid("dimension too large"))?;
    w.write_all(&SAMPLE_MAGIC)?;
    w.write_all(&SAMPLE_VERSION.to_le_bytes())?;
    w.write_all(&n32.to_le_bytes())?;
    w.write_all(&d32.to_le_bytes())?;
    // nalgebra storage is column-major already
    for v in samples.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_samples_bin(mut r: impl Read) -> Result<DMatrix<f64>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if header[..4] != SAMPLE_MAGIC {
        return Err(Error::invalid("not a sample file (bad magic)"));
    }
    let word = |k: usize| u32::from_le_bytes(header[k..k + 4].try_into().expect("4 bytes"));
    if word(4) != SAMPLE_VERSION {
        return Err(Error::invalid(format!("unsupported sample file version {}", word(4))));
    }
    let (n, d) = (word(8) as usize, word(12) as usize);
    let mut buf = vec![0u8; n * d * 8];
    r.read_exact(&mut buf)?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DMatrix::from_vec(n, d, values))
}
