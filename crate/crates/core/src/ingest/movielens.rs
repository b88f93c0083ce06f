//! Rating-log ingestion: `userId,movieId,rating,timestamp` CSV into binary
//! engagement events, with a per-user temporal split.
//!
//! Ratings of 4.0 stars and up are positive responses, everything else
//! negative. All rated pairs are kept; the response, not the exposure, is
//! what the models rank.

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::InteractionEvent;

pub const POSITIVE_RATING: f64 = 4.0;

/// Parses a ratings CSV. Events come back sorted by timestamp (ties by user
/// then item) regardless of the file's row order.
pub fn parse_ratings_csv(path: &Path) -> Result<Vec<InteractionEvent>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::Parse { line: 0, msg: format!("cannot open CSV: {kind:?}") },
        })?;
    {
        let headers = reader.headers().map_err(|e| Error::Parse {
            line: 1,
            msg: format!("unreadable header: {e}"),
        })?;
        let expected = ["userId", "movieId", "rating", "timestamp"];
        if headers.len() < 4 || headers.iter().take(4).ne(expected) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header userId,movieId,rating,timestamp, got {headers:?}"),
            });
        }
    }
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse { line, msg: format!("malformed CSV record: {e}") }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Parse {
                line,
                msg: format!("missing field {name}"),
            })
        };
        let parse_u64 = |i: usize, name: &str| -> Result<u64> {
            field(i, name)?.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad {name} {:?}", record.get(i).unwrap_or("")),
            })
        };
        let user_id = parse_u64(0, "userId")?;
        let item_id = parse_u64(1, "movieId")?;
        let rating: f64 = field(2, "rating")?.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad rating {:?}", record.get(2).unwrap_or("")),
        })?;
        if !(0.0..=5.0).contains(&rating) {
            return Err(Error::Parse { line, msg: format!("rating {rating} outside 0..=5") });
        }
        let timestamp: i64 = field(3, "timestamp")?.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad timestamp {:?}", record.get(3).unwrap_or("")),
        })?;
        events.push(InteractionEvent {
            user_id,
            item_id,
            timestamp,
            engagement_type: 0,
            label: (rating >= POSITIVE_RATING) as u8,
        });
    }
    events.sort_by_key(|e| (e.timestamp, e.user_id, e.item_id));
    Ok(events)
}

#[derive(Debug, Clone)]
pub struct TemporalSplit {
    pub train: Vec<InteractionEvent>,
    pub test: Vec<InteractionEvent>,
}

/// Per-user temporal split: the earliest `floor(n * train_frac)` of a user's
/// events train (at least one), the rest test. Users with a single event
/// train only. Both halves come back globally time-sorted.
pub fn temporal_split(events: &[InteractionEvent], train_frac: f64) -> Result<TemporalSplit> {
    if !(0.0..1.0).contains(&train_frac) || train_frac == 0.0 {
        return Err(Error::config("train_frac must lie in (0, 1)"));
    }
    let mut by_user: std::collections::BTreeMap<u64, Vec<InteractionEvent>> = Default::default();
    for ev in events {
        by_user.entry(ev.user_id).or_default().push(*ev);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut evs) in by_user {
        evs.sort_by_key(|e| (e.timestamp, e.item_id));
        let n = evs.len();
        let n_train = if n < 2 { n } else { ((n as f64 * train_frac).floor() as usize).max(1) };
        test.extend_from_slice(&evs[n_train..]);
        evs.truncate(n_train);
        train.extend_from_slice(&evs);
    }
    train.sort_by_key(|e| (e.timestamp, e.user_id, e.item_id));
    test.sort_by_key(|e| (e.timestamp, e.user_id, e.item_id));
    Ok(TemporalSplit { train, test })
}
