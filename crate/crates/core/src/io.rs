//! Binary trajectory files and dataset manifests.
//!
//! Trajectory layout (little-endian):
//!
//! ```text
//! "MGNT" | version u32 | D u32 | nodes u32 | edges u32 | T u32 | channels u32 | n_types u32
//! channel names: (u16 length, utf-8 bytes) * channels
//! coords      f64 * nodes * D
//! node types  u32 * nodes
//! edges       (u32 sender, u32 receiver) * edges
//! states      f64 * T * nodes * channels
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{ChannelSchema, Mesh, Trajectory};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"MGNT";
pub const TRAJECTORY_VERSION: u32 = 1;

/// Little-endian byte cursor that reports the offset of every failure.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated while reading {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).unwrap_or(usize::MAX), what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let start = self.offset();
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::format(start, format!("{what} is not valid utf-8")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes after payload", self.remaining()),
            ));
        }
        Ok(())
    }
}

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub(crate) buf: Vec<u8>,
}

impl ByteWriter {
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub(crate) fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
    pub(crate) fn string(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len())
            .map_err(|_| Error::Validation(format!("name too long: {} bytes", s.len())))?;
        self.u16(len);
        self.bytes(s.as_bytes());
        Ok(())
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{what} {v} does not fit in u32")))
}

pub fn encode_trajectory(traj: &Trajectory) -> Result<Vec<u8>> {
    let mesh = traj.mesh();
    let mut w = ByteWriter::default();
    w.bytes(TRAJECTORY_MAGIC);
    w.u32(TRAJECTORY_VERSION);
    w.u32(to_u32(mesh.dim(), "dimension")?);
    w.u32(to_u32(mesh.n_nodes(), "node count")?);
    w.u32(to_u32(mesh.n_edges(), "edge count")?);
    w.u32(to_u32(traj.len(), "step count")?);
    w.u32(to_u32(traj.schema().channel_count(), "channel count")?);
    w.u32(to_u32(mesh.n_types(), "type count")?);
    for name in traj.schema().names() {
        w.string(name)?;
    }
    w.f64s(mesh.coords().iter());
    for &t in mesh.node_types() {
        w.u32(t);
    }
    for &[a, b] in mesh.edges() {
        w.u32(a as u32);
        w.u32(b as u32);
    }
    for s in traj.states() {
        w.f64s(s.iter());
    }
    Ok(w.buf)
}

/// Parses a trajectory. The schema treats every channel as an incrementally
/// predicted input; callers narrow it with [`Trajectory::with_schema`].
pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    let mut r = ByteReader::new(bytes);
    r.magic(TRAJECTORY_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != TRAJECTORY_VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let at = r.offset();
    let dim = r.u32("dimension")? as usize;
    if !(2..=3).contains(&dim) {
        return Err(Error::format(at, format!("dimension {dim} is not 2 or 3")));
    }
    let n = r.u32("node count")? as usize;
    let m = r.u32("edge count")? as usize;
    let at = r.offset();
    let t = r.u32("step count")? as usize;
    if t < 2 {
        return Err(Error::format(at, format!("step count {t} < 2")));
    }
    let at = r.offset();
    let c = r.u32("channel count")? as usize;
    if c == 0 {
        return Err(Error::format(at, "channel count is zero"));
    }
    let n_types = r.u32("type count")? as usize;
    let names = (0..c)
        .map(|_| r.string("channel name"))
        .collect::<Result<Vec<_>>>()?;
    let expected = n * dim * 8 + n * 4 + m * 8 + t * n * c * 8;
    if r.remaining() != expected {
        return Err(Error::format(
            r.offset(),
            format!(
                "payload is {} bytes but header counts imply {expected}",
                r.remaining()
            ),
        ));
    }
    let coords = Array2::from_shape_vec((n, dim), r.f64s(n * dim, "coords")?).unwrap();
    let node_types = (0..n).map(|_| r.u32("node type")).collect::<Result<Vec<_>>>()?;
    let edges = (0..m)
        .map(|_| Ok([r.u32("edge")? as usize, r.u32("edge")? as usize]))
        .collect::<Result<Vec<_>>>()?;
    let states = (0..t)
        .map(|_| Ok(Array2::from_shape_vec((n, c), r.f64s(n * c, "states")?).unwrap()))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let mesh = Mesh::new(coords, node_types, n_types, edges)?;
    let schema = ChannelSchema::all_delta(&names)?;
    Trajectory::new(mesh, schema, states)
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_trajectory(traj)?).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trajectory(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
}

/// JSON list of trajectory files with their split. Relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        Ok(Self {
            entries,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.entries).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn paths(&self, split: Split) -> Vec<PathBuf> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| self.base_dir.join(&e.path))
            .collect()
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Trajectory>> {
        self.paths(split).iter().map(read_trajectory).collect()
    }
}
