use std::io::{Read, Write};

use super::{LabeledSegment, PressureFrame, RawTrace};
use crate::{Error, Label, Result};

const HEADER: [&str; 4] = ["t", "hallux", "pinky", "heel"];

/// Reads a `t,hallux,pinky,heel` CSV (time in seconds). The sample rate is
/// taken from the time column unless `sample_rate_hz` is given.
pub fn read_raw_csv(reader: impl Read, sample_rate_hz: Option<f64>) -> Result<RawTrace> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?;
    if headers.iter().map(str::trim).ne(HEADER) {
        return Err(Error::invalid(format!(
            "expected header {}, found {}",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut times = Vec::new();
    let mut channels: [Vec<f64>; 3] = Default::default();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let mut values = [0.0; 4];
        for (slot, field) in values.iter_mut().zip(record.iter()) {
            *slot = field.trim().parse().map_err(|e| {
                Error::invalid(format!("row {}: {field:?}: {e}", row + 2))
            })?;
        }
        times.push(values[0]);
        for (ch, v) in channels.iter_mut().zip(&values[1..]) {
            ch.push(*v);
        }
    }
    let rate = match sample_rate_hz {
        Some(r) => r,
        None => infer_rate(&times)?,
    };
    RawTrace::new(rate, channels)
}

fn infer_rate(times: &[f64]) -> Result<f64> {
    let (Some(first), Some(last)) = (times.first(), times.last()) else {
        return Err(Error::invalid("empty trace"));
    };
    let span = last - first;
    if times.len() < 2 || !(span > 0.0) {
        return Err(Error::invalid("time column must span a positive interval"));
    }
    let rate = (times.len() - 1) as f64 / span;
    // Decimal time stamps lose a few ulps; snap to whole hertz when close.
    let snapped = rate.round();
    Ok(if (rate - snapped).abs() < 1e-6 * rate { snapped } else { rate })
}

pub fn write_raw_csv(trace: &RawTrace, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    let dt = 1.0 / trace.sample_rate_hz();
    let [h, p, heel] = trace.channels();
    for i in 0..trace.len() {
        w.write_record([
            (i as f64 * dt).to_string(),
            h[i].to_string(),
            p[i].to_string(),
            heel[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const FRAME_HEADER: [&str; 4] = ["timestamp_ms", "hallux", "pinky", "heel"];
const SEGMENT_HEADER: [&str; 3] = ["start_index", "end_index", "label"];

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers()?;
    if headers.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::invalid(format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, row: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = record.get(i).unwrap_or("").trim();
    raw.parse()
        .map_err(|e| Error::invalid(format!("row {}, column {}: {raw:?}: {e}", row + 2, i + 1)))
}

/// 100 Hz frames as `timestamp_ms,hallux,pinky,heel`.
pub fn write_frames_csv(frames: &[PressureFrame], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FRAME_HEADER)?;
    for f in frames {
        w.write_record([f.timestamp_ms, f.hallux.into(), f.pinky.into(), f.heel.into()].map(|v: u32| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames_csv(reader: impl Read) -> Result<Vec<PressureFrame>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &FRAME_HEADER)?;
    let mut frames = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let ts = field(&record, 0, row)?;
        let mut ch = [0u16; 3];
        for (c, slot) in ch.iter_mut().enumerate() {
            *slot = field(&record, c + 1, row)?;
            if *slot > crate::ADC_MAX {
                return Err(Error::invalid(format!("row {}: value {} exceeds the ADC range", row + 2, *slot)));
            }
        }
        frames.push(PressureFrame::new(ts, ch));
    }
    Ok(frames)
}

/// Segments as `start_index,end_index,label` (end exclusive).
pub fn write_segments_csv(segments: &[LabeledSegment], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SEGMENT_HEADER)?;
    for s in segments {
        w.write_record([s.start_index.to_string(), s.end_index.to_string(), s.label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_segments_csv(reader: impl Read) -> Result<Vec<LabeledSegment>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &SEGMENT_HEADER)?;
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let seg = LabeledSegment {
            start_index: field(&record, 0, row)?,
            end_index: field(&record, 1, row)?,
            label: field::<Label>(&record, 2, row)?,
        };
        if seg.start_index > seg.end_index {
            return Err(Error::invalid(format!("row {}: start after end", row + 2)));
        }
        out.push(seg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let trace = RawTrace::new(
            400_000.0,
            [vec![1.0, 2.5, 4095.0], vec![0.0, 10.0, 20.0], vec![3.25, 3.5, 3.75]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_raw_csv(&trace, &mut buf).unwrap();
        let back = read_raw_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn frames_and_segments_round_trip() {
        let frames = vec![PressureFrame::new(0, [1, 2, 3]), PressureFrame::new(10, [4095, 0, 7])];
        let mut buf = Vec::new();
        write_frames_csv(&frames, &mut buf).unwrap();
        assert_eq!(read_frames_csv(buf.as_slice()).unwrap(), frames);
        assert!(read_frames_csv("timestamp_ms,hallux,pinky,heel\n0,4096,0,0\n".as_bytes()).is_err());

        let segs = vec![LabeledSegment { start_index: 3, end_index: 120, label: Label::Ventral }];
        let mut buf = Vec::new();
        write_segments_csv(&segs, &mut buf).unwrap();
        assert_eq!(read_segments_csv(buf.as_slice()).unwrap(), segs);
    }

    #[test]
    fn rejects_bad_header() {
        let text = "time,a,b,c\n0,1,2,3\n";
        assert!(read_raw_csv(text.as_bytes(), None).is_err());
    }

    #[test]
    fn explicit_rate_overrides() {
        let text = "t,hallux,pinky,heel\n0,1,2,3\n";
        let trace = read_raw_csv(text.as_bytes(), Some(1000.0)).unwrap();
        assert_eq!(trace.sample_rate_hz(), 1000.0);
        assert!(read_raw_csv(text.as_bytes(), None).is_err());
    }
}
