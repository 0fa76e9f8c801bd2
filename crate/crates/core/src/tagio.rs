//! Time-tag files: the `TTG1` binary layout and a `ticks,channel` CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::TimeTag;

pub const MAGIC: &[u8; 4] = b"TTG1";
const HEADER_LEN: u64 = 13;
const RECORD_LEN: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct TagFile {
    pub tick_resolution_ps: f64,
    pub channel_count: u8,
    pub tags: Vec<TimeTag>,
}

impl TagFile {
    /// Tags of one channel, in file order.
    pub fn channel(&self, ch: u8) -> Vec<u64> {
        self.tags
            .iter()
            .filter(|t| t.channel == ch)
            .map(|t| t.ticks)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagFormat {
    Binary,
    Csv,
}

impl TagFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => TagFormat::Csv,
            _ => TagFormat::Binary,
        }
    }
}

pub fn write_binary<W: Write>(mut w: W, file: &TagFile) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&file.tick_resolution_ps.to_le_bytes())?;
    w.write_all(&[file.channel_count])?;
    for t in &file.tags {
        w.write_all(&t.ticks.to_le_bytes())?;
        w.write_all(&[t.channel])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<TagFile> {
    let mut header = [0u8; HEADER_LEN as usize];
    let got = read_full(&mut r, &mut header)?;
    if got < 4 || &header[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing TTG1 magic".into(),
        });
    }
    if got < header.len() {
        return Err(Error::Format {
            offset: got as u64,
            message: "truncated header".into(),
        });
    }
    let tick_resolution_ps = f64::from_le_bytes(header[4..12].try_into().unwrap());
    if !(tick_resolution_ps > 0.0) {
        return Err(Error::Format {
            offset: 4,
            message: format!("tick resolution {tick_resolution_ps} is not positive"),
        });
    }
    let channel_count = header[12];
    let mut tags = Vec::new();
    let mut rec = [0u8; RECORD_LEN];
    let mut offset = HEADER_LEN;
    loop {
        let got = read_full(&mut r, &mut rec)?;
        if got == 0 {
            break;
        }
        if got < RECORD_LEN {
            return Err(Error::Format {
                offset,
                message: format!("truncated record ({got} of {RECORD_LEN} bytes)"),
            });
        }
        let channel = rec[8];
        if channel >= channel_count {
            return Err(Error::Format {
                offset: offset + 8,
                message: format!("channel {channel} outside declared count {channel_count}"),
            });
        }
        tags.push(TimeTag {
            ticks: u64::from_le_bytes(rec[..8].try_into().unwrap()),
            channel,
        });
        offset += RECORD_LEN as u64;
    }
    Ok(TagFile {
        tick_resolution_ps,
        channel_count,
        tags,
    })
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

pub fn write_csv<W: Write>(mut w: W, tags: &[TimeTag]) -> Result<()> {
    writeln!(w, "ticks,channel")?;
    for t in tags {
        writeln!(w, "{},{}", t.ticks, t.channel)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV tag list. The offset in errors is the byte where the bad
/// line starts.
pub fn read_csv<R: BufRead>(r: R, tick_resolution_ps: f64) -> Result<TagFile> {
    let mut tags = Vec::new();
    let mut offset = 0u64;
    let mut max_channel = 0u8;
    for (i, line) in r.split(b'\n').enumerate() {
        let raw = line?;
        let start = offset;
        offset += raw.len() as u64 + 1;
        let text = String::from_utf8_lossy(&raw);
        let text = text.trim();
        if text.is_empty() || (i == 0 && text.starts_with("ticks")) {
            continue;
        }
        let bad = |m: &str| Error::Format {
            offset: start,
            message: format!("{m}: `{text}`"),
        };
        let (a, b) = text.split_once(',').ok_or_else(|| bad("expected `ticks,channel`"))?;
        let ticks = a.trim().parse().map_err(|_| bad("bad tick value"))?;
        let channel: u8 = b.trim().parse().map_err(|_| bad("bad channel"))?;
        max_channel = max_channel.max(channel);
        tags.push(TimeTag { ticks, channel });
    }
    Ok(TagFile {
        tick_resolution_ps,
        channel_count: if tags.is_empty() { 0 } else { max_channel + 1 },
        tags,
    })
}

pub fn save(path: &Path, file: &TagFile) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    match TagFormat::from_path(path) {
        TagFormat::Binary => write_binary(w, file),
        TagFormat::Csv => write_csv(w, &file.tags),
    }
}

/// Loads a tag file; CSV files carry no header so the resolution is supplied.
pub fn load(path: &Path, csv_tick_resolution_ps: f64) -> Result<TagFile> {
    let r = BufReader::new(File::open(path)?);
    match TagFormat::from_path(path) {
        TagFormat::Binary => read_binary(r),
        TagFormat::Csv => read_csv(r, csv_tick_resolution_ps),
    }
}

/// Interleaves per-channel streams into one time-ordered list.
pub fn merge_channels(streams: &[Vec<TimeTag>]) -> Vec<TimeTag> {
    let mut all: Vec<TimeTag> = streams.iter().flatten().copied().collect();
    all.sort_by_key(|t| (t.ticks, t.channel));
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TagFile {
        TagFile {
            tick_resolution_ps: 1.0,
            channel_count: 2,
            tags: vec![
                TimeTag { ticks: 5, channel: 0 },
                TimeTag { ticks: 7, channel: 1 },
                TimeTag { ticks: u64::MAX, channel: 1 },
            ],
        }
    }

    #[test]
    fn binary_round_trip() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &sample()).unwrap();
        assert_eq!(buf.len(), 13 + 3 * 9);
        assert_eq!(&buf[..4], b"TTG1");
        assert_eq!(read_binary(&buf[..]).unwrap(), sample());
    }

    #[test]
    fn truncated_record_reports_offset() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &sample()).unwrap();
        buf.truncate(13 + 9 + 4);
        match read_binary(&buf[..]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 22),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(
            read_binary(&b"TTG2xxxxxxxxx"[..]),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &sample().tags).unwrap();
        assert!(buf.starts_with(b"ticks,channel\n5,0\n"));
        assert_eq!(read_csv(&buf[..], 1.0).unwrap(), sample());
    }

    #[test]
    fn csv_error_offset() {
        let text = b"ticks,channel\n1,0\nfoo,1\n";
        match read_csv(&text[..], 1.0) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 18),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn merge_orders_by_time() {
        let a = vec![TimeTag { ticks: 1, channel: 0 }, TimeTag { ticks: 9, channel: 0 }];
        let b = vec![TimeTag { ticks: 4, channel: 1 }];
        let m = merge_channels(&[a, b]);
        assert_eq!(m.iter().map(|t| t.ticks).collect::<Vec<_>>(), vec![1, 4, 9]);
    }
}
