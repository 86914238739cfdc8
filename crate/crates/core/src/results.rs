//! Tracking results: a line-oriented text stream and an optional binary
//! trajectory of object centers.
//!
//! Text stream:
//!
//! ```text
//! # kptk results v1
//! # stamp <hex> seed <u64>
//! frame <id> <object count>
//! <object> <stereo|mono> <cx> <cy> <cz> <n> (<channel> <x> <y> <z> <s|m>){n}
//! ```
//!
//! Coordinates are base-frame meters with six decimals. The stamp line is
//! optional. Binary trajectory: `KPTR`, `u32` version, `u32` record count,
//! then per object `u32` frame, `u32` object, three `f64` center
//! coordinates, all little endian.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::eval::FramePrediction;
use crate::stereo::{Keypoint3D, Provenance, TrackedObject3D};

pub const RESULTS_HEADER: &str = "# kptk results v1";
pub const TRAJECTORY_MAGIC: [u8; 4] = *b"KPTR";
pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trajectory: {0}")]
    Trajectory(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsFile {
    pub stamp: Option<(String, u64)>,
    pub mode: Provenance,
    pub frames: Vec<FramePrediction>,
}

fn mode_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Stereo => "stereo",
        Provenance::Mono => "mono",
    }
}

impl ResultsFile {
    pub fn to_text(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        if let Some((hash, seed)) = &self.stamp {
            let _ = writeln!(out, "# stamp {hash} seed {seed}");
        }
        for f in &self.frames {
            let _ = writeln!(out, "frame {} {}", f.frame, f.objects.len());
            for (i, o) in f.objects.iter().enumerate() {
                let _ = write!(out, "{i} {} {:.6} {:.6} {:.6} {}", mode_name(self.mode), o.center.x, o.center.y, o.center.z, o.keypoints.len());
                for k in &o.keypoints {
                    let _ = write!(out, " {} {:.6} {:.6} {:.6} {}", k.channel, k.position.x, k.position.y, k.position.z, k.provenance.tag());
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ResultsError> {
        let err = |line: usize, message: &str| ResultsError::Parse { line, message: message.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty()).peekable();
        match lines.next() {
            Some((_, RESULTS_HEADER)) => {}
            _ => return Err(err(1, "missing results header")),
        }
        let mut stamp = None;
        let mut mode = None;
        let mut frames = Vec::new();
        while let Some((n, line)) = lines.next() {
            if let Some(rest) = line.strip_prefix("# stamp ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                match parts.as_slice() {
                    [hash, "seed", seed] => stamp = Some((hash.to_string(), seed.parse().map_err(|_| err(n, "bad seed"))?)),
                    _ => return Err(err(n, "malformed stamp line")),
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (frame, count) = match parts.as_slice() {
                ["frame", id, count] => (
                    id.parse::<usize>().map_err(|_| err(n, "bad frame id"))?,
                    count.parse::<usize>().map_err(|_| err(n, "bad object count"))?,
                ),
                _ => return Err(err(n, "expected 'frame <id> <count>'")),
            };
            let mut objects = Vec::with_capacity(count);
            for _ in 0..count {
                let (n, line) = lines.next().ok_or_else(|| err(n, "missing object line"))?;
                let (m, object) = parse_object(line).map_err(|m| err(n, &m))?;
                if *mode.get_or_insert(m) != m {
                    return Err(err(n, "mixed pipeline modes"));
                }
                objects.push(object);
            }
            frames.push(FramePrediction { frame, objects });
        }
        Ok(Self { stamp, mode: mode.unwrap_or(Provenance::Stereo), frames })
    }

    pub fn write(&self, path: &Path) -> Result<(), ResultsError> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn read(path: &Path) -> Result<Self, ResultsError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn parse_object(line: &str) -> Result<(Provenance, TrackedObject3D), String> {
    let t: Vec<&str> = line.split_whitespace().collect();
    if t.len() < 6 {
        return Err("object line too short".into());
    }
    let f = |s: &str| s.parse::<f64>().map_err(|e| format!("'{s}': {e}"));
    let mode = match t[1] {
        "stereo" => Provenance::Stereo,
        "mono" => Provenance::Mono,
        other => return Err(format!("unknown mode '{other}'")),
    };
    let center = Vector3::new(f(t[2])?, f(t[3])?, f(t[4])?);
    let n: usize = t[5].parse().map_err(|_| "bad keypoint count".to_string())?;
    if t.len() != 6 + 5 * n {
        return Err(format!("expected {} fields, got {}", 6 + 5 * n, t.len()));
    }
    let keypoints = t[6..]
        .chunks(5)
        .map(|k| {
            let provenance = match k[4] {
                "s" => Provenance::Stereo,
                "m" => Provenance::Mono,
                other => return Err(format!("unknown provenance '{other}'")),
            };
            Ok(Keypoint3D {
                channel: k[0].parse().map_err(|_| "bad channel".to_string())?,
                position: Vector3::new(f(k[1])?, f(k[2])?, f(k[3])?),
                provenance,
            })
        })
        .collect::<Result<_, String>>()?;
    Ok((mode, TrackedObject3D { center, keypoints }))
}

/// One object center per record.
pub fn encode_trajectory(frames: &[FramePrediction]) -> Vec<u8> {
    let records: Vec<(u32, u32, Vector3<f64>)> =
        frames.iter().flat_map(|f| f.objects.iter().enumerate().map(move |(i, o)| (f.frame as u32, i as u32, o.center))).collect();
    let mut out = Vec::with_capacity(12 + records.len() * 32);
    out.extend_from_slice(&TRAJECTORY_MAGIC);
    out.extend_from_slice(&TRAJECTORY_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (frame, object, c) in records {
        out.extend_from_slice(&frame.to_le_bytes());
        out.extend_from_slice(&object.to_le_bytes());
        for v in c.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// `(frame, object, center)` records.
pub fn decode_trajectory(bytes: &[u8]) -> Result<Vec<(u32, u32, Vector3<f64>)>, ResultsError> {
    let bad = |m: &str| ResultsError::Trajectory(m.to_string());
    if bytes.len() < 12 || bytes[..4] != TRAJECTORY_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    if u32_at(4) != TRAJECTORY_VERSION {
        return Err(bad("unsupported version"));
    }
    let n = u32_at(8) as usize;
    if bytes.len() != 12 + 32 * n {
        return Err(bad("length does not match record count"));
    }
    Ok((0..n)
        .map(|i| {
            let o = 12 + 32 * i;
            (u32_at(o), u32_at(o + 4), Vector3::new(f64_at(o + 8), f64_at(o + 16), f64_at(o + 24)))
        })
        .collect())
}
