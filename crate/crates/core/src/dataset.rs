//! Canonical event-log formats and calendar-day partitioning.
//!
//! Two interconvertible on-disk forms carry the same event sequence:
//! a CSV text form with a header row, and a fixed-width binary form with a
//! 16-byte magic/version header (8-byte magic, u32 version, u32 record size)
//! followed by 32-byte little-endian records. Readers sniff the magic, so one
//! loader handles both.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{DatasetMeta, InteractionEvent, SECONDS_PER_DAY};

pub const LOG_MAGIC: [u8; 8] = *b"DYRKLOG1";
pub const LOG_VERSION: u32 = 1;
pub const LOG_RECORD_SIZE: u32 = 32;

pub const TEXT_HEADER: &str = "user_id,item_id,timestamp,engagement_type,label";

pub fn write_events_text<W: Write>(events: &[InteractionEvent], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TEXT_HEADER.split(','))
        .map_err(|e| Error::config(format!("csv write: {e}")))?;
    for ev in events {
        wtr.write_record(&[
            ev.user_id.to_string(),
            ev.item_id.to_string(),
            ev.timestamp.to_string(),
            ev.engagement_type.to_string(),
            ev.label.to_string(),
        ])
        .map_err(|e| Error::config(format!("csv write: {e}")))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_events_text<R: Read>(r: R) -> Result<Vec<InteractionEvent>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    {
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse { line: 1, msg: format!("header: {e}") })?;
        let expected: Vec<&str> = TEXT_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse { line: 1, msg: format!("unexpected header {headers:?}") });
        }
    }
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or(Error::Parse { line, msg: format!("missing field {i}") })
        };
        let parse_err = |what: &str| Error::Parse { line, msg: format!("bad {what}") };
        let label: u8 = field(4)?.parse().map_err(|_| parse_err("label"))?;
        if label > 1 {
            return Err(Error::Parse { line, msg: format!("label {label} not in {{0,1}}") });
        }
        events.push(InteractionEvent {
            user_id: field(0)?.parse().map_err(|_| parse_err("user_id"))?,
            item_id: field(1)?.parse().map_err(|_| parse_err("item_id"))?,
            timestamp: field(2)?.parse().map_err(|_| parse_err("timestamp"))?,
            engagement_type: field(3)?.parse().map_err(|_| parse_err("engagement_type"))?,
            label,
        });
    }
    Ok(events)
}

pub fn write_events_binary<W: Write>(events: &[InteractionEvent], mut w: W) -> Result<()> {
    w.write_all(&LOG_MAGIC)?;
    w.write_all(&LOG_VERSION.to_le_bytes())?;
    w.write_all(&LOG_RECORD_SIZE.to_le_bytes())?;
    for ev in events {
        let mut rec = [0u8; 32];
        rec[0..8].copy_from_slice(&ev.user_id.to_le_bytes());
        rec[8..16].copy_from_slice(&ev.item_id.to_le_bytes());
        rec[16..24].copy_from_slice(&ev.timestamp.to_le_bytes());
        rec[24..28].copy_from_slice(&(ev.engagement_type as u32).to_le_bytes());
        rec[28..32].copy_from_slice(&(ev.label as u32).to_le_bytes());
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn read_events_binary<R: Read>(mut r: R) -> Result<Vec<InteractionEvent>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| Error::config("binary log shorter than header"))?;
    if header[0..8] != LOG_MAGIC {
        return Err(Error::config("bad magic: not a binary event log"));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let rec_size = u32::from_le_bytes(header[12..16].try_into().unwrap());
    if version != LOG_VERSION {
        return Err(Error::config(format!("unsupported log version {version}")));
    }
    if rec_size != LOG_RECORD_SIZE {
        return Err(Error::config(format!("unsupported record size {rec_size}")));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % LOG_RECORD_SIZE as usize != 0 {
        return Err(Error::config("binary log truncated mid-record"));
    }
    let mut events = Vec::with_capacity(body.len() / 32);
    for rec in body.chunks_exact(32) {
        let etype = u32::from_le_bytes(rec[24..28].try_into().unwrap());
        let label = u32::from_le_bytes(rec[28..32].try_into().unwrap());
        if etype > u16::MAX as u32 || label > 1 {
            return Err(Error::config("binary record out of range"));
        }
        events.push(InteractionEvent {
            user_id: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            item_id: u64::from_le_bytes(rec[8..16].try_into().unwrap()),
            timestamp: i64::from_le_bytes(rec[16..24].try_into().unwrap()),
            engagement_type: etype as u16,
            label: label as u8,
        });
    }
    Ok(events)
}

/// Load either on-disk form, sniffing the binary magic.
pub fn load_events(path: &Path) -> Result<Vec<InteractionEvent>> {
    let mut f = BufReader::new(File::open(path)?);
    let mut probe = [0u8; 8];
    let n = f.read(&mut probe)?;
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    let mut all = probe[..n].to_vec();
    all.extend_from_slice(&rest);
    if n == 8 && probe == LOG_MAGIC {
        read_events_binary(&all[..])
    } else {
        read_events_text(&all[..])
    }
}

pub fn save_events_binary(events: &[InteractionEvent], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_events_binary(events, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_events_text(events: &[InteractionEvent], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_events_text(events, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_meta(meta: &DatasetMeta, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::config(format!("meta serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_meta(path: &Path) -> Result<DatasetMeta> {
    let text = std::fs::read_to_string(path)?;
    let meta: DatasetMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { line: 0, msg: format!("meta: {e}") })?;
    meta.validate()?;
    Ok(meta)
}

/// Calendar-day edges (multiples of 86400 epoch seconds) covering every event.
pub fn calendar_day_edges(events: &[InteractionEvent]) -> Vec<i64> {
    if events.is_empty() {
        return Vec::new();
    }
    let min = events.iter().map(|e| e.timestamp).min().unwrap();
    let max = events.iter().map(|e| e.timestamp).max().unwrap();
    let first = min.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY;
    let last = max.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY + SECONDS_PER_DAY;
    (first..=last).step_by(SECONDS_PER_DAY as usize).collect()
}

/// Partition a time-ordered log into day slices; day i is [edge[i], edge[i+1]).
/// Every event must land inside the edges.
pub fn split_by_days<'a>(
    events: &'a [InteractionEvent],
    edges: &[i64],
) -> Result<Vec<&'a [InteractionEvent]>> {
    if events.is_empty() {
        return Ok(Vec::new());
    }
    if edges.len() < 2 {
        return Err(Error::config("need at least two day boundaries"));
    }
    if !edges.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::config("day boundaries must be strictly increasing"));
    }
    if !events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp) {
        return Err(Error::config("event log must be time-ordered"));
    }
    let (lo, hi) = (edges[0], *edges.last().unwrap());
    for ev in events {
        if ev.timestamp < lo || ev.timestamp >= hi {
            return Err(Error::TimestampOutOfRange { ts: ev.timestamp, lo, hi });
        }
    }
    let mut out = Vec::with_capacity(edges.len() - 1);
    let mut start = 0usize;
    for &edge in &edges[1..] {
        let end = start + events[start..].partition_point(|e| e.timestamp < edge);
        out.push(&events[start..end]);
        start = end;
    }
    Ok(out)
}
