//! Binary and CSV event files plus pose CSV logs.
//!
//! Binary layout: `EVPR`, version `u16` LE = 1, sensor width and height
//! (`u16` LE), then 14-byte records `{t_us: u64, x: u16, y: u16,
//! polarity: u8, pad: u8}`, all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Event, EventStream, Pose, PoseSample};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EVPR";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 10;
const RECORD_LEN: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventFormat {
    Binary,
    /// CSV files carry no sensor geometry, so it is supplied here.
    Csv { width: u16, height: u16 },
}

fn parse_err(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location,
        message: message.into(),
    }
}

pub fn load_events(path: &Path, format: EventFormat) -> Result<EventStream> {
    let file = BufReader::new(File::open(path)?);
    match format {
        EventFormat::Binary => read_binary(file, path),
        EventFormat::Csv { width, height } => read_csv(file, path, width, height),
    }
}

pub fn write_events(path: &Path, stream: &EventStream, format: EventFormat) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    match format {
        EventFormat::Binary => write_binary(&mut file, stream)?,
        EventFormat::Csv { .. } => write_csv(&mut file, stream)?,
    }
    file.flush()?;
    Ok(())
}

/// `origin` only labels errors.
pub fn read_binary(mut reader: impl Read, origin: &Path) -> Result<EventStream> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(parse_err(origin, "byte 0".into(), "missing EVPR magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(parse_err(origin, "byte 4".into(), format!("unsupported version {version}")));
    }
    let width = u16::from_le_bytes([bytes[6], bytes[7]]);
    let height = u16::from_le_bytes([bytes[8], bytes[9]]);
    let body = &bytes[HEADER_LEN..];
    if body.len() % RECORD_LEN != 0 {
        let at = HEADER_LEN + body.len() / RECORD_LEN * RECORD_LEN;
        return Err(parse_err(origin, format!("byte {at}"), "truncated record"));
    }
    let mut stream = EventStream::new(width, height);
    stream.events.reserve(body.len() / RECORD_LEN);
    let mut prev = 0u64;
    for (i, r) in body.chunks_exact(RECORD_LEN).enumerate() {
        let e = Event {
            t_us: u64::from_le_bytes(r[0..8].try_into().unwrap()),
            x: u16::from_le_bytes([r[8], r[9]]),
            y: u16::from_le_bytes([r[10], r[11]]),
            polarity: r[12],
        };
        let at = format!("byte {}", HEADER_LEN + i * RECORD_LEN);
        if e.t_us < prev {
            return Err(Error::TimestampRegression {
                index: i,
                t_us: e.t_us,
                prev_us: prev,
            });
        }
        if e.x >= width || e.y >= height {
            return Err(parse_err(origin, at, format!("pixel ({}, {}) outside {width}x{height}", e.x, e.y)));
        }
        if e.polarity > 1 {
            return Err(parse_err(origin, at, format!("polarity {} not in {{0, 1}}", e.polarity)));
        }
        prev = e.t_us;
        stream.events.push(e);
    }
    Ok(stream)
}

pub fn write_binary(mut w: impl Write, stream: &EventStream) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + stream.len() * RECORD_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&stream.width.to_le_bytes());
    buf.extend_from_slice(&stream.height.to_le_bytes());
    for e in &stream.events {
        buf.extend_from_slice(&e.t_us.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.polarity);
        buf.push(0);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers()?.clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(
            path,
            "line 1".into(),
            format!("expected columns {}, found {}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(path, format!("line {line}"), format!("bad {name} value {:?}", rec.get(i))))
}

pub fn read_csv(reader: impl Read, origin: &Path, width: u16, height: u16) -> Result<EventStream> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    expect_header(origin, &mut rdr, &["t_us", "x", "y", "p"])?;
    let mut stream = EventStream::new(width, height);
    let mut prev = 0u64;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let e = Event {
            t_us: field(origin, &rec, 0, "t_us")?,
            x: field(origin, &rec, 1, "x")?,
            y: field(origin, &rec, 2, "y")?,
            polarity: field(origin, &rec, 3, "p")?,
        };
        let line = rec.position().map_or(0, |p| p.line());
        if e.t_us < prev {
            return Err(Error::TimestampRegression {
                index: i,
                t_us: e.t_us,
                prev_us: prev,
            });
        }
        if e.x >= width || e.y >= height || e.polarity > 1 {
            return Err(parse_err(
                origin,
                format!("line {line}"),
                format!("event ({}, {}, p={}) outside {width}x{height} sensor", e.x, e.y, e.polarity),
            ));
        }
        prev = e.t_us;
        stream.events.push(e);
    }
    Ok(stream)
}

pub fn write_csv(w: impl Write, stream: &EventStream) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t_us", "x", "y", "p"])?;
    for e in &stream.events {
        wtr.write_record(&[e.t_us.to_string(), e.x.to_string(), e.y.to_string(), e.polarity.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Pose CSV with header `t_us,x_m,y_m,yaw_rad`.
pub fn load_poses(path: &Path) -> Result<Vec<PoseSample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    expect_header(path, &mut rdr, &["t_us", "x_m", "y_m", "yaw_rad"])?;
    let mut out: Vec<PoseSample> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let p = PoseSample {
            t_us: field(path, &rec, 0, "t_us")?,
            pose: Pose {
                x: field(path, &rec, 1, "x_m")?,
                y: field(path, &rec, 2, "y_m")?,
                yaw: field(path, &rec, 3, "yaw_rad")?,
            },
        };
        if let Some(last) = out.last() {
            if p.t_us < last.t_us {
                return Err(Error::TimestampRegression {
                    index: i,
                    t_us: p.t_us,
                    prev_us: last.t_us,
                });
            }
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_poses(path: &Path, poses: &[PoseSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["t_us", "x_m", "y_m", "yaw_rad"])?;
    for p in poses {
        wtr.write_record(&[
            p.t_us.to_string(),
            p.pose.x.to_string(),
            p.pose.y.to_string(),
            p.pose.yaw.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
