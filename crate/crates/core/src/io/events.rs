//! Event files: `channel,timestamp_ps` CSV, 16-byte little-endian binary
//! records, and a JSON list.

use std::collections::BTreeMap;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{Event, EventStream};
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventFormat {
    Csv,
    Bin,
    Json,
}

impl EventFormat {
    pub fn extension(self) -> &'static str {
        match self {
            EventFormat::Csv => "csv",
            EventFormat::Bin => "bin",
            EventFormat::Json => "json",
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(EventFormat::Csv),
            Some("bin") => Ok(EventFormat::Bin),
            Some("json") => Ok(EventFormat::Json),
            _ => Err(Error::invalid(
                "path",
                format!(
                    "{}: cannot infer event format, use .csv, .bin or .json",
                    path.display()
                ),
            )),
        }
    }
}

impl std::str::FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EventFormat::Csv),
            "bin" => Ok(EventFormat::Bin),
            "json" => Ok(EventFormat::Json),
            _ => Err(Error::invalid(
                "format",
                format!("`{s}` is not one of csv, bin, json"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    channel: u8,
    timestamp_ps: i64,
}

pub fn encode_events(events: &[Event], format: EventFormat) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(events.len() * RECORD_BYTES);
    match format {
        EventFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["channel", "timestamp_ps"])?;
            for e in events {
                w.write_record([e.channel.to_string(), e.timestamp_ps.to_string()])?;
            }
            w.flush().map_err(|e| Error::io("<buffer>", e))?;
        }
        EventFormat::Bin => {
            for e in events {
                out.push(e.channel);
                out.push(0);
                out.extend_from_slice(&[0u8; 6]);
                out.extend_from_slice(&e.timestamp_ps.to_le_bytes());
            }
        }
        EventFormat::Json => {
            let recs: Vec<JsonRecord> = events
                .iter()
                .map(|e| JsonRecord {
                    channel: e.channel,
                    timestamp_ps: e.timestamp_ps,
                })
                .collect();
            serde_json::to_writer(&mut out, &recs)?;
        }
    }
    Ok(out)
}

/// Parses records and checks that each channel's timestamps never decrease.
/// An empty file, or a whitespace-only text file, decodes to no events.
pub fn decode_events(bytes: &[u8], format: EventFormat) -> Result<Vec<Event>> {
    if format != EventFormat::Bin && bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(Vec::new());
    }
    let events = match format {
        EventFormat::Csv => decode_csv(bytes)?,
        EventFormat::Bin => decode_bin(bytes)?,
        EventFormat::Json => {
            let recs: Vec<JsonRecord> = serde_json::from_slice(bytes)?;
            recs.into_iter()
                .map(|r| Event {
                    timestamp_ps: r.timestamp_ps,
                    channel: r.channel,
                    tag: None,
                })
                .collect()
        }
    };
    check_channel_order(&events)?;
    Ok(events)
}

fn decode_csv(bytes: &[u8]) -> Result<Vec<Event>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let headers = r.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "channel" || &headers[1] != "timestamp_ps" {
        return Err(Error::CorruptRecord {
            index: 0,
            reason: "header must be `channel,timestamp_ps`".into(),
        });
    }
    let mut out = Vec::new();
    for (index, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::CorruptRecord {
            index,
            reason: e.to_string(),
        })?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let channel = field(0).parse::<u8>().map_err(|e| Error::CorruptRecord {
            index,
            reason: format!("channel `{}`: {e}", field(0)),
        })?;
        let timestamp_ps = field(1).parse::<i64>().map_err(|e| Error::CorruptRecord {
            index,
            reason: format!("timestamp `{}`: {e}", field(1)),
        })?;
        out.push(Event {
            timestamp_ps,
            channel,
            tag: None,
        });
    }
    Ok(out)
}

fn decode_bin(bytes: &[u8]) -> Result<Vec<Event>> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::CorruptRecord {
            index: bytes.len() / RECORD_BYTES,
            reason: format!(
                "truncated record ({} trailing bytes)",
                bytes.len() % RECORD_BYTES
            ),
        });
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(index, rec)| {
            if rec[2..8].iter().any(|&b| b != 0) {
                return Err(Error::CorruptRecord {
                    index,
                    reason: "reserved bytes are not zero".into(),
                });
            }
            let ts: [u8; 8] = rec[8..16].try_into().expect("8 bytes");
            Ok(Event {
                timestamp_ps: i64::from_le_bytes(ts),
                channel: rec[0],
                tag: None,
            })
        })
        .collect()
}

fn check_channel_order(events: &[Event]) -> Result<()> {
    let mut last: BTreeMap<u8, i64> = BTreeMap::new();
    for (index, e) in events.iter().enumerate() {
        if let Some(&prev) = last.get(&e.channel) {
            if e.timestamp_ps < prev {
                return Err(Error::Unsorted {
                    index,
                    timestamp_ps: e.timestamp_ps,
                });
            }
        }
        last.insert(e.channel, e.timestamp_ps);
    }
    Ok(())
}

pub fn write_events(stream: &EventStream, path: &Path, format: EventFormat) -> Result<String> {
    let bytes = encode_events(stream.events(), format)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Events of a file plus the SHA-256 of its bytes.
pub fn read_events(path: &Path, format: Option<EventFormat>) -> Result<(Vec<Event>, String)> {
    let format = match format {
        Some(f) => f,
        None => EventFormat::from_path(path)?,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok((decode_events(&bytes, format)?, sha256_hex(&bytes)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Per-channel sorted timestamps.
pub fn split_channels(events: &[Event]) -> BTreeMap<u8, Vec<i64>> {
    let mut out: BTreeMap<u8, Vec<i64>> = BTreeMap::new();
    for e in events {
        out.entry(e.channel).or_default().push(e.timestamp_ps);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(channel: u8, timestamp_ps: i64) -> Event {
        Event {
            timestamp_ps,
            channel,
            tag: None,
        }
    }

    #[test]
    fn csv_layout() {
        let bytes = encode_events(&[ev(0, 5), ev(2, 7)], EventFormat::Csv).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "channel,timestamp_ps\n0,5\n2,7\n"
        );
    }

    #[test]
    fn binary_layout() {
        let bytes = encode_events(&[ev(3, -2)], EventFormat::Bin).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(bytes[0], 3);
        assert_eq!(&bytes[1..8], &[0; 7]);
        assert_eq!(&bytes[8..], &(-2i64).to_le_bytes());
    }

    #[test]
    fn corrupt_records_report_index() {
        let e = decode_events(b"channel,timestamp_ps\n0,5\n1,x\n", EventFormat::Csv).unwrap_err();
        assert!(matches!(e, Error::CorruptRecord { index: 1, .. }), "{e}");
        let e =
            decode_events(b"channel,timestamp_ps\n0,5\n1,3\n0,4\n", EventFormat::Csv).unwrap_err();
        assert!(
            matches!(
                e,
                Error::Unsorted {
                    index: 2,
                    timestamp_ps: 4
                }
            ),
            "{e}"
        );
        let e = decode_events(&[0u8; 20], EventFormat::Bin).unwrap_err();
        assert!(matches!(e, Error::CorruptRecord { index: 1, .. }), "{e}");
        let e = decode_events(b"chan,ts\n", EventFormat::Csv).unwrap_err();
        assert!(matches!(e, Error::CorruptRecord { index: 0, .. }));
    }

    #[test]
    fn empty_files_parse() {
        assert!(decode_events(b"channel,timestamp_ps\n", EventFormat::Csv)
            .unwrap()
            .is_empty());
        assert!(decode_events(b"", EventFormat::Bin).unwrap().is_empty());
        assert!(decode_events(b"", EventFormat::Csv).unwrap().is_empty());
        assert!(decode_events(b"\n", EventFormat::Json).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn formats_interconvert(raw in prop::collection::vec((0u8..4, -1_000_000i64..1_000_000_000_000), 0..200)) {
            let mut events: Vec<Event> = raw.into_iter().map(|(c, t)| ev(c, t)).collect();
            events.sort_by_key(|e| (e.timestamp_ps, e.channel));
            let from_csv = decode_events(&encode_events(&events, EventFormat::Csv).unwrap(), EventFormat::Csv).unwrap();
            let bin = encode_events(&from_csv, EventFormat::Bin).unwrap();
            let from_bin = decode_events(&bin, EventFormat::Bin).unwrap();
            let from_json = decode_events(&encode_events(&from_bin, EventFormat::Json).unwrap(), EventFormat::Json).unwrap();
            prop_assert_eq!(&from_csv, &events);
            prop_assert_eq!(&from_bin, &events);
            prop_assert_eq!(&from_json, &events);
            prop_assert_eq!(encode_events(&from_json, EventFormat::Csv).unwrap(), encode_events(&events, EventFormat::Csv).unwrap());
        }
    }
}
