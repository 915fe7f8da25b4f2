//! Super-sample persistence.
//!
//! CSV: header `label,f0,...,f{n-1}`, one sample per row, label by name.
//!
//! Binary (little-endian):
//!
//! ```text
//! "SKDS" | version u8 = 1 | count u32 | n_features u16 |
//! count × (label u8 | n_features × f64)
//! ```

use std::io::{Read, Write};

use super::SuperSample;
use crate::{Error, Label, Result};

const MAGIC: &[u8; 4] = b"SKDS";
const VERSION: u8 = 1;

pub fn write_csv(samples: &[SuperSample], writer: impl Write) -> Result<()> {
    let n = samples.first().map_or(crate::N_FEATURES, |s| s.features().len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["label".to_string()];
    header.extend((0..n).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for s in samples {
        if s.features().len() != n {
            return Err(Error::invalid("samples have differing feature counts"));
        }
        let mut row = Vec::with_capacity(n + 1);
        row.push(s.label.to_string());
        row.extend(s.features().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(reader: impl Read) -> Result<Vec<SuperSample>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let n_features = rdr.headers()?.len().saturating_sub(1);
    if rdr.headers()?.get(0) != Some("label") || n_features == 0 {
        return Err(Error::invalid("expected header label,f0,..."));
    }
    rdr.records()
        .enumerate()
        .map(|(row, record)| {
            let record = record?;
            let label: Label = record[0].parse()?;
            let features = record
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid(format!("row {}: {v:?}: {e}", row + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            SuperSample::new(features, label)
        })
        .collect()
}

pub fn write_binary(samples: &[SuperSample], mut writer: impl Write) -> Result<()> {
    let n = samples.first().map_or(crate::N_FEATURES, |s| s.features().len());
    let count = u32::try_from(samples.len()).map_err(|_| Error::invalid("too many samples"))?;
    let width = u16::try_from(n).map_err(|_| Error::invalid("too many features"))?;
    let mut buf = Vec::with_capacity(11 + samples.len() * (1 + 8 * n));
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&width.to_le_bytes());
    for s in samples {
        if s.features().len() != n {
            return Err(Error::invalid("samples have differing feature counts"));
        }
        buf.push(s.label.index() as u8);
        for v in s.features() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    writer.write_all(&buf)?;
    Ok(())
}

pub fn read_binary(mut reader: impl Read) -> Result<Vec<SuperSample>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::invalid(format!("super-sample file: {msg}"));
    if bytes.len() < 11 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let n = usize::from(u16::from_le_bytes(bytes[9..11].try_into().unwrap()));
    let record = 1 + 8 * n;
    let body = &bytes[11..];
    if body.len() != count * record {
        return Err(bad(&format!("expected {} body bytes, found {}", count * record, body.len())));
    }
    body.chunks_exact(record)
        .map(|r| {
            let label = Label::from_index(usize::from(r[0])).ok_or_else(|| bad("bad label"))?;
            let features = r[1..]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            SuperSample::new(features, label)
        })
        .collect()
}
