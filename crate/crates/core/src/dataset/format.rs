//! Binary layout (little-endian): magic `RSKD`, `u32` version, `u64` horizon,
//! plan as a JSON string, summary counters, normalisation stats, segment count,
//! per segment `u64` trajectory id, `u64` start, `H×16` states and `H×4`
//! actions, the hex content hash, then a SHA-256 of all preceding bytes.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{CollectPlan, CollectSummary, DatasetError, NormStats, SkillDataset, SkillSegment};
use crate::codec::{sha256, sha256_hex, ByteReader, ByteWriter, Truncated};
use crate::env::{ACT_DIM, OBS_DIM};

const MAGIC: &[u8; 4] = b"RSKD";
pub const DATASET_VERSION: u32 = 1;

impl From<Truncated> for DatasetError {
    fn from(_: Truncated) -> Self {
        DatasetError::Truncated
    }
}

fn write_segments(w: &mut ByteWriter, segments: &[SkillSegment]) {
    w.u64(segments.len() as u64);
    for s in segments {
        w.u64(s.trajectory);
        w.u64(s.start as u64);
        for row in &s.states {
            w.f64s(row);
        }
        for row in &s.actions {
            w.f64s(row);
        }
    }
}

pub(super) fn content_hash(horizon: usize, segments: &[SkillSegment]) -> String {
    let mut w = ByteWriter::new();
    w.u64(horizon as u64);
    write_segments(&mut w, segments);
    sha256_hex(w.as_slice())
}

impl SkillDataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(DATASET_VERSION);
        w.u64(self.horizon as u64);
        w.str(&serde_json::to_string(&self.plan).expect("plan serialises"));
        w.u64(self.summary.trajectories as u64);
        w.u64(self.summary.rejected as u64);
        w.u64(self.summary.successes as u64);
        w.f64s(&self.stats.mean);
        w.f64s(&self.stats.std);
        write_segments(&mut w, &self.segments);
        w.str(&self.hash);
        crate::codec::seal(w)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, DatasetError> {
        let mut r = ByteReader::new(buf);
        if r.take(4)? != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        let found = r.u32()?;
        if found != DATASET_VERSION {
            return Err(DatasetError::Version {
                found,
                expected: DATASET_VERSION,
            });
        }
        let horizon = r.u64()? as usize;
        let plan: CollectPlan =
            serde_json::from_str(&r.str()?).map_err(|e| DatasetError::Meta(format!("plan: {e}")))?;
        let summary = CollectSummary {
            trajectories: r.u64()? as usize,
            rejected: r.u64()? as usize,
            successes: r.u64()? as usize,
        };
        let mut stats = NormStats::identity();
        stats.mean.copy_from_slice(&r.f64s(OBS_DIM)?);
        stats.std.copy_from_slice(&r.f64s(OBS_DIM)?);
        let n = r.u64()? as usize;
        let mut segments = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let trajectory = r.u64()?;
            let start = r.u64()? as usize;
            let mut states = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let mut row = [0.0; OBS_DIM];
                row.copy_from_slice(&r.f64s(OBS_DIM)?);
                states.push(row);
            }
            let mut actions = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let mut row = [0.0; ACT_DIM];
                row.copy_from_slice(&r.f64s(ACT_DIM)?);
                actions.push(row);
            }
            segments.push(SkillSegment {
                states,
                actions,
                trajectory,
                start,
            });
        }
        let hash = r.str()?;
        let body = r.position();
        let digest = r.take(32)?;
        if r.remaining() != 0 || sha256(&buf[..body]) != digest {
            return Err(DatasetError::HashMismatch);
        }
        if content_hash(horizon, &segments) != hash {
            return Err(DatasetError::HashMismatch);
        }
        Ok(Self {
            horizon,
            segments,
            stats,
            plan,
            summary,
            hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Serialize)]
struct Header<'a> {
    version: u32,
    horizon: usize,
    segments: usize,
    content_hash: &'a str,
    stats: &'a NormStats,
    summary: &'a CollectSummary,
}

/// Debug view: one header line, then one JSON object per segment.
pub fn export_jsonl<W: Write>(ds: &SkillDataset, mut out: W) -> Result<(), DatasetError> {
    let header = Header {
        version: DATASET_VERSION,
        horizon: ds.horizon,
        segments: ds.len(),
        content_hash: ds.content_hash(),
        stats: &ds.stats,
        summary: &ds.summary,
    };
    let line = serde_json::to_string(&header).map_err(|e| DatasetError::Meta(e.to_string()))?;
    writeln!(out, "{line}")?;
    for s in &ds.segments {
        let line = serde_json::to_string(s).map_err(|e| DatasetError::Meta(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}
