//! On-disk dataset format.
//!
//! A dataset is a directory holding `manifest.json` plus one binary record
//! file per split (`train.bin`, `val.bin`, `test.bin`). Record files carry a
//! fixed header (magic, schema version, tensor capacities) followed by
//! length-prefixed scene records. All floats are little-endian `f32`; arrays
//! are stored in the documented attribute order with explicit validity, and
//! zero-padded slots are implied rather than stored.
//!
//! Record payload layout:
//! ```text
//! ego                 11 x f32
//! agents              u16 count; per agent: u16 slot, (T_h+1) validity bytes,
//!                     13 x f32 per valid frame
//! lanes               u16 count; per lane: u16 slot, P_m validity bytes,
//!                     8 x f32 per valid point
//! route               u16 valid-prefix length, 3 x f32 per valid point
//! ego_history         (T_h+1) x 13 f32
//! ego_future          T_f x 2 f32
//! agent_futures       per stored agent: T_f validity bytes, 2 x f32 per valid step
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{
    agent_attr, lane_attr, route_attr, AgentFuture, AgentTrack, EgoState, MapLane,
    NavigationRoute, Scene, SceneDims, EGO_DIM,
};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PMSC";
pub const SCHEMA_VERSION: u16 = 1;

const HEADER_LEN: u64 = 4 + 2 + 2 + 6 * 2 + 8 + 8 + 8;
const N_RECORDS_OFFSET: u64 = HEADER_LEN - 8;

/// Text metadata stored alongside the record files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u16,
    pub config_hash: String,
    pub dims: SceneDims,
    pub splits: std::collections::BTreeMap<String, u64>,
    pub layout_counts: std::collections::BTreeMap<String, u64>,
    /// Samples dropped because route derivation failed, per split.
    pub rejected: std::collections::BTreeMap<String, u64>,
    /// Entities silently truncated to capacity, across the whole corpus.
    pub truncated_agents: u64,
    pub truncated_lanes: u64,
}

impl DatasetManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest encode: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("manifest decode: {e}")))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: SCHEMA_VERSION,
                found: m.schema_version,
            });
        }
        Ok(m)
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptRecord(format!(
                "payload overrun: need {n} bytes at {}, have {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(4 * n)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn bools(&mut self, n: usize) -> Result<Vec<bool>> {
        let b = self.take(n)?;
        Ok(b.iter().map(|v| *v != 0).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::CorruptRecord(format!(
                "trailing bytes: {} of {} consumed",
                self.pos,
                self.buf.len()
            )));
        }
        Ok(())
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serialize one scene into its record payload.
pub fn encode_scene(scene: &Scene, _dims: &SceneDims) -> Vec<u8> {
    let mut out = Vec::with_capacity(4096);
    for v in scene.ego.to_array() {
        put_f32(&mut out, v);
    }

    let stored: Vec<usize> = (0..scene.agents.len())
        .filter(|&i| scene.agents[i].any_valid())
        .collect();
    put_u16(&mut out, stored.len() as u16);
    for &i in &stored {
        let a = &scene.agents[i];
        put_u16(&mut out, i as u16);
        out.extend(a.valid.iter().map(|v| *v as u8));
        for (t, &v) in a.valid.iter().enumerate() {
            if v {
                for j in 0..agent_attr::DIM {
                    put_f32(&mut out, a.frames[[t, j]]);
                }
            }
        }
    }

    let stored_lanes: Vec<usize> = (0..scene.lanes.len())
        .filter(|&i| scene.lanes[i].any_valid())
        .collect();
    put_u16(&mut out, stored_lanes.len() as u16);
    for &i in &stored_lanes {
        let l = &scene.lanes[i];
        put_u16(&mut out, i as u16);
        out.extend(l.valid.iter().map(|v| *v as u8));
        for (p, &v) in l.valid.iter().enumerate() {
            if v {
                for j in 0..lane_attr::DIM {
                    put_f32(&mut out, l.points[[p, j]]);
                }
            }
        }
    }

    let n_route = scene.route.valid_count();
    put_u16(&mut out, n_route as u16);
    for p in 0..n_route {
        for j in 0..route_attr::DIM {
            put_f32(&mut out, scene.route.points[[p, j]]);
        }
    }

    for v in scene.ego_history.iter() {
        put_f32(&mut out, *v);
    }
    for v in scene.ego_future.iter() {
        put_f32(&mut out, *v);
    }

    for &i in &stored {
        let f = &scene.agent_futures[i];
        out.extend(f.valid.iter().map(|v| *v as u8));
        for (t, &v) in f.valid.iter().enumerate() {
            if v {
                put_f32(&mut out, f.points[[t, 0]]);
                put_f32(&mut out, f.points[[t, 1]]);
            }
        }
    }
    out
}

/// Decode one record payload back into a scene.
pub fn decode_scene(payload: &[u8], dims: &SceneDims) -> Result<Scene> {
    let mut r = ByteReader::new(payload);
    let t1 = dims.history_len();

    let ego_vals = r.f32s(EGO_DIM)?;
    let ego = EgoState::from_array(&ego_vals.try_into().expect("fixed length"));

    let mut scene = Scene::empty(dims);
    scene.ego = ego;

    let n_agents = r.u16()? as usize;
    if n_agents > dims.n_agents {
        return Err(Error::CorruptRecord(format!(
            "agent count {n_agents} exceeds capacity {}",
            dims.n_agents
        )));
    }
    let mut stored = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let slot = r.u16()? as usize;
        if slot >= dims.n_agents {
            return Err(Error::CorruptRecord(format!("agent slot {slot} out of range")));
        }
        let valid = r.bools(t1)?;
        let mut track = AgentTrack::empty(dims);
        for (t, &v) in valid.iter().enumerate() {
            if v {
                let vals = r.f32s(agent_attr::DIM)?;
                for (j, x) in vals.into_iter().enumerate() {
                    track.frames[[t, j]] = x;
                }
            }
        }
        track.valid = valid;
        scene.agents[slot] = track;
        stored.push(slot);
    }

    let n_lanes = r.u16()? as usize;
    if n_lanes > dims.n_lanes {
        return Err(Error::CorruptRecord(format!(
            "lane count {n_lanes} exceeds capacity {}",
            dims.n_lanes
        )));
    }
    for _ in 0..n_lanes {
        let slot = r.u16()? as usize;
        if slot >= dims.n_lanes {
            return Err(Error::CorruptRecord(format!("lane slot {slot} out of range")));
        }
        let valid = r.bools(dims.p_m)?;
        let mut lane = MapLane::empty(dims);
        for (p, &v) in valid.iter().enumerate() {
            if v {
                let vals = r.f32s(lane_attr::DIM)?;
                for (j, x) in vals.into_iter().enumerate() {
                    lane.points[[p, j]] = x;
                }
            }
        }
        lane.valid = valid;
        scene.lanes[slot] = lane;
    }

    let n_route = r.u16()? as usize;
    if n_route > dims.p_r {
        return Err(Error::CorruptRecord(format!(
            "route length {n_route} exceeds capacity {}",
            dims.p_r
        )));
    }
    let mut route = NavigationRoute::empty(dims);
    for p in 0..n_route {
        let vals = r.f32s(route_attr::DIM)?;
        for (j, x) in vals.into_iter().enumerate() {
            route.points[[p, j]] = x;
        }
        route.valid[p] = true;
    }
    scene.route = route;

    let hist = r.f32s(t1 * agent_attr::DIM)?;
    for t in 0..t1 {
        for j in 0..agent_attr::DIM {
            scene.ego_history[[t, j]] = hist[t * agent_attr::DIM + j];
        }
    }
    let fut = r.f32s(dims.t_f * 2)?;
    for t in 0..dims.t_f {
        scene.ego_future[[t, 0]] = fut[t * 2];
        scene.ego_future[[t, 1]] = fut[t * 2 + 1];
    }

    for &slot in &stored {
        let valid = r.bools(dims.t_f)?;
        let mut f = AgentFuture::empty(dims);
        for (t, &v) in valid.iter().enumerate() {
            if v {
                f.points[[t, 0]] = r.f32()?;
                f.points[[t, 1]] = r.f32()?;
            }
        }
        f.valid = valid;
        scene.agent_futures[slot] = f;
    }

    r.finish()?;
    Ok(scene)
}

fn encode_header(dims: &SceneDims, n_records: u64) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER_LEN as usize);
    h.extend_from_slice(&MAGIC);
    h.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    h.extend_from_slice(&0u16.to_le_bytes());
    for v in [
        dims.n_agents,
        dims.n_lanes,
        dims.t_h,
        dims.t_f,
        dims.p_m,
        dims.p_r,
    ] {
        h.extend_from_slice(&(v as u16).to_le_bytes());
    }
    h.extend_from_slice(&dims.dt.to_le_bytes());
    h.extend_from_slice(&dims.route_spacing.to_le_bytes());
    h.extend_from_slice(&n_records.to_le_bytes());
    h
}

/// Streaming writer for one split file. Scenes are validated before writing.
pub struct DatasetWriter {
    path: PathBuf,
    file: BufWriter<File>,
    dims: SceneDims,
    n_records: u64,
}

impl DatasetWriter {
    pub fn create(path: &Path, dims: SceneDims) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&encode_header(&dims, 0))
            .map_err(|e| Error::io(path, e))?;
        Ok(DatasetWriter {
            path: path.to_path_buf(),
            file: w,
            dims,
            n_records: 0,
        })
    }

    pub fn write_scene(&mut self, scene: &Scene) -> Result<()> {
        scene.validate(&self.dims)?;
        let payload = encode_scene(scene, &self.dims);
        self.file
            .write_all(&(payload.len() as u32).to_le_bytes())
            .and_then(|_| self.file.write_all(&payload))
            .map_err(|e| Error::io(&self.path, e))?;
        self.n_records += 1;
        Ok(())
    }

    pub fn finalize(mut self) -> Result<u64> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        let mut file = self.file.into_inner().map_err(|e| {
            Error::io(&self.path, std::io::Error::new(std::io::ErrorKind::Other, e))
        })?;
        file.seek(SeekFrom::Start(N_RECORDS_OFFSET))
            .and_then(|_| file.write_all(&self.n_records.to_le_bytes()))
            .and_then(|_| file.sync_all())
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(self.n_records)
    }
}

/// Random-access reader over one split file. Decodes records on demand so
/// large corpora never need to fit in memory.
pub struct DatasetReader {
    file: File,
    dims: SceneDims,
    offsets: Vec<(u64, u32)>,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = vec![0u8; HEADER_LEN as usize];
        file.read_exact(&mut header)
            .map_err(|_| Error::CorruptRecord("file shorter than header".into()))?;
        if header[..4] != MAGIC {
            return Err(Error::CorruptRecord("bad magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: SCHEMA_VERSION,
                found: version,
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]) as usize;
        let dims = SceneDims {
            n_agents: u16_at(8),
            n_lanes: u16_at(10),
            t_h: u16_at(12),
            t_f: u16_at(14),
            p_m: u16_at(16),
            p_r: u16_at(18),
            dt: f64::from_le_bytes(header[20..28].try_into().unwrap()),
            route_spacing: f64::from_le_bytes(header[28..36].try_into().unwrap()),
        };
        let n_records = u64::from_le_bytes(header[36..44].try_into().unwrap());

        let file_len = file
            .metadata()
            .map_err(|e| Error::io(path, e))?
            .len();
        let mut offsets = Vec::with_capacity(n_records as usize);
        let mut pos = HEADER_LEN;
        for i in 0..n_records {
            if pos + 4 > file_len {
                return Err(Error::CorruptRecord(format!(
                    "record {i}: length header past end of file"
                )));
            }
            let mut len_buf = [0u8; 4];
            file.read_exact_at(&mut len_buf, pos)
                .map_err(|e| Error::io(path, e))?;
            let len = u32::from_le_bytes(len_buf);
            if pos + 4 + len as u64 > file_len {
                return Err(Error::CorruptRecord(format!(
                    "record {i}: payload of {len} bytes past end of file"
                )));
            }
            offsets.push((pos + 4, len));
            pos += 4 + len as u64;
        }
        Ok(DatasetReader {
            file,
            dims,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn dims(&self) -> &SceneDims {
        &self.dims
    }

    pub fn get(&self, index: usize) -> Result<Scene> {
        let (off, len) = self.offsets[index];
        let mut buf = vec![0u8; len as usize];
        self.file
            .read_exact_at(&mut buf, off)
            .map_err(|e| Error::CorruptRecord(format!("record {index}: {e}")))?;
        decode_scene(&buf, &self.dims)
    }
}
