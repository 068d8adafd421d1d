//! On-disk formats: BTAG channel files and the session manifest.
//!
//! A BTAG file is a 20-byte little-endian header followed by `count` unsigned
//! 64-bit tick values in strictly ascending order:
//!
//! | offset | size | field           |
//! |--------|------|-----------------|
//! | 0      | 4    | magic `"BTAG"`  |
//! | 4      | 2    | version (1)     |
//! | 6      | 1    | station (0 = A, 1 = B) |
//! | 7      | 1    | channel (1, 2, 3) |
//! | 8      | 4    | resolution in ps |
//! | 12     | 8    | count           |

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Channel, CollapseHypothesis, SettingsPair, Station};
use crate::simulator::{RunStreams, StationStreams};
use crate::syncproto::ScheduleParams;

pub const MAGIC: [u8; 4] = *b"BTAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelFileHeader {
    pub version: u16,
    pub station: Station,
    pub channel: Channel,
    pub resolution_ps: u32,
    pub count: u64,
}

impl ChannelFileHeader {
    pub fn new(station: Station, channel: Channel, resolution_ps: u32, count: u64) -> Self {
        ChannelFileHeader {
            version: VERSION,
            station,
            channel,
            resolution_ps,
            count,
        }
    }
}

fn format_err(path: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

/// Serialize a channel; `header.count` is replaced by `tags.len()`.
pub fn encode_channel(header: &ChannelFileHeader, tags: &[u64]) -> Result<Vec<u8>> {
    if let Some(i) = tags.windows(2).position(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument(format!(
            "tags not strictly ascending at index {}",
            i + 1
        )));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * tags.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&header.version.to_le_bytes());
    buf.push(header.station.index() as u8);
    buf.push(header.channel.number());
    buf.extend_from_slice(&header.resolution_ps.to_le_bytes());
    buf.extend_from_slice(&(tags.len() as u64).to_le_bytes());
    for t in tags {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    Ok(buf)
}

/// Parse a channel file image. `path` is only used in error messages.
pub fn decode_channel(bytes: &[u8], path: &Path) -> Result<(ChannelFileHeader, Vec<u64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, bytes.len() as u64, "truncated header"));
    }
    if bytes[0..4] != MAGIC {
        return Err(format_err(path, 0, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format_err(path, 4, format!("unsupported version {version}")));
    }
    let station = match bytes[6] {
        0 => Station::A,
        1 => Station::B,
        s => return Err(format_err(path, 6, format!("bad station {s}"))),
    };
    let channel = Channel::from_number(bytes[7])
        .ok_or_else(|| format_err(path, 7, format!("bad channel {}", bytes[7])))?;
    let resolution_ps = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));

    let payload = &bytes[HEADER_LEN..];
    let expected = count.checked_mul(8).ok_or_else(|| format_err(path, 12, "count overflows"))?;
    if (payload.len() as u64) < expected {
        let complete = payload.len() as u64 / 8;
        return Err(format_err(
            path,
            HEADER_LEN as u64 + complete * 8,
            format!("truncated payload: {count} tags declared, {complete} present"),
        ));
    }
    if payload.len() as u64 > expected {
        return Err(format_err(
            path,
            HEADER_LEN as u64 + expected,
            "trailing bytes after payload",
        ));
    }
    let mut tags = Vec::with_capacity(count as usize);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let t = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if tags.last().is_some_and(|&prev| t <= prev) {
            return Err(format_err(
                path,
                (HEADER_LEN + 8 * i) as u64,
                "tags not strictly ascending",
            ));
        }
        tags.push(t);
    }
    let header = ChannelFileHeader {
        version,
        station,
        channel,
        resolution_ps,
        count,
    };
    Ok((header, tags))
}

pub fn write_channel(path: &Path, header: &ChannelFileHeader, tags: &[u64]) -> Result<()> {
    let bytes = encode_channel(header, tags)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_channel(path: &Path) -> Result<(ChannelFileHeader, Vec<u64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_channel(&bytes, path)
}

/// Paths of the six channel files of a run, relative to the session directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFiles {
    pub t1a: PathBuf,
    pub t2a: PathBuf,
    pub t3a: PathBuf,
    pub t1b: PathBuf,
    pub t2b: PathBuf,
    pub t3b: PathBuf,
}

impl RunFiles {
    pub fn for_run(index: usize) -> Self {
        let name = |ch: &str| PathBuf::from(format!("runs/run{index:04}_{ch}.btag"));
        RunFiles {
            t1a: name("t1a"),
            t2a: name("t2a"),
            t3a: name("t3a"),
            t1b: name("t1b"),
            t2b: name("t2b"),
            t3b: name("t3b"),
        }
    }

    pub fn path(&self, station: Station, channel: Channel) -> &Path {
        match (station, channel) {
            (Station::A, Channel::T1) => &self.t1a,
            (Station::A, Channel::T2) => &self.t2a,
            (Station::A, Channel::T3) => &self.t3a,
            (Station::B, Channel::T1) => &self.t1b,
            (Station::B, Channel::T2) => &self.t2b,
            (Station::B, Channel::T3) => &self.t3b,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Station, Channel, &Path)> {
        Station::BOTH
            .into_iter()
            .flat_map(|s| Channel::ALL.into_iter().map(move |c| (s, c)))
            .map(move |(s, c)| (s, c, self.path(s, c)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub index: usize,
    pub experiment: usize,
    pub settings: SettingsPair,
    pub duration_s: f64,
    pub seed: u64,
    pub files: RunFiles,
}

/// Index of a recorded session: what was simulated and where the files are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub session_id: String,
    pub separation_m: f64,
    pub schedule: ScheduleParams,
    pub hypothesis: CollapseHypothesis,
    pub config_hash: String,
    #[serde(default)]
    pub runs: Vec<RunEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.toml";

impl SessionManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidArgument(format!("manifest: {e}")))
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: e.message().to_string(),
        })
    }
}

pub fn write_manifest(path: &Path, manifest: &SessionManifest) -> Result<()> {
    fs::write(path, manifest.to_toml()?).map_err(|e| Error::io(path, e))
}

/// Load a manifest and check that every referenced channel file exists
/// (relative paths resolve against the manifest's directory).
pub fn read_manifest(path: &Path) -> Result<SessionManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = SessionManifest::from_toml(&text, path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for run in &manifest.runs {
        for (_, _, file) in run.files.iter() {
            let full = dir.join(file);
            if !full.is_file() {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    reason: format!("run {}: missing channel file {}", run.index, full.display()),
                });
            }
        }
    }
    Ok(manifest)
}

/// Hex SHA-256 of a configuration text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Write the six streams of a run under `dir` with the names in `files`.
pub fn write_run(dir: &Path, files: &RunFiles, streams: &RunStreams, resolution_ps: [u32; 2]) -> Result<()> {
    for (station, channel, rel) in files.iter() {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tags = streams.station(station).channel(channel);
        let header = ChannelFileHeader::new(station, channel, resolution_ps[station.index()], tags.len() as u64);
        write_channel(&path, &header, tags)?;
    }
    Ok(())
}

/// Read back the six streams of a run, checking each header names the
/// station and channel it is listed under.
pub fn read_run(dir: &Path, files: &RunFiles) -> Result<RunStreams> {
    let mut streams = RunStreams::default();
    for (station, channel, rel) in files.iter() {
        let path = dir.join(rel);
        let (header, tags) = read_channel(&path)?;
        if header.station != station {
            return Err(format_err(&path, 6, format!("expected station {station}")));
        }
        if header.channel != channel {
            return Err(format_err(&path, 7, format!("expected channel {channel}")));
        }
        let s: &mut StationStreams = streams.station_mut(station);
        *s.channel_mut(channel) = tags;
    }
    Ok(streams)
}
