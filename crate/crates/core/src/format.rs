//! Little-endian binary containers for states (`GHR1`) and parameters (`GHRP`).
//!
//! State layout:
//!
//! ```text
//! "GHR1"  u32 version
//! u32 C  u32 H  u32 W  i64 valid_time (unix s)  f64 spacing (deg)
//! C × { u32 name_len, name (UTF-8), u8 kind (0 pressure, 1 surface), f32 level hPa }
//! C·H·W × f32, row-major
//! ```
//!
//! Parameter layout:
//!
//! ```text
//! "GHRP"  u32 version  u32 count
//! count × { u32 name_len, name, u32 rank, rank × u32 dim, u64 offset (in values) }
//! Σ numel × f32
//! ```

use std::fs;
use std::path::Path;

use ghr_tensor::Tensor;

use crate::error::{GhrError, Result};
use crate::grid::GridSpec;
use crate::params::ParamStore;
use crate::state::WeatherState;
use crate::time::from_unix;
use crate::variables::{Channel, ChannelKind, VariableSet};

pub const STATE_MAGIC: &[u8; 4] = b"GHR1";
pub const PARAM_MAGIC: &[u8; 4] = b"GHRP";
pub const VERSION: u32 = 1;

pub fn encode_state(state: &WeatherState) -> Vec<u8> {
    let g = &state.grid;
    let mut out = Vec::with_capacity(64 + 4 * state.values.numel());
    out.extend_from_slice(STATE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [state.channels(), g.n_lat, g.n_lon] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&state.valid_time.timestamp().to_le_bytes());
    out.extend_from_slice(&g.resolution_degrees.to_le_bytes());
    for ch in state.variables.channels() {
        out.extend_from_slice(&(ch.name.len() as u32).to_le_bytes());
        out.extend_from_slice(ch.name.as_bytes());
        let (kind, level) = match ch.kind {
            ChannelKind::Pressure(l) => (0u8, l),
            ChannelKind::Surface => (1u8, 0.0),
        };
        out.push(kind);
        out.extend_from_slice(&level.to_le_bytes());
    }
    for v in state.values.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

type Parse<T> = std::result::Result<T, (u64, String)>;

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Parse<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err((
                self.pos as u64,
                format!(
                    "truncated: need {n} bytes for {what}, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Parse<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Parse<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Parse<u32> {
        self.array(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Parse<u64> {
        self.array(what).map(u64::from_le_bytes)
    }

    fn i64(&mut self, what: &str) -> Parse<i64> {
        self.array(what).map(i64::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Parse<f32> {
        self.array(what).map(f32::from_le_bytes)
    }

    fn f64(&mut self, what: &str) -> Parse<f64> {
        self.array(what).map(f64::from_le_bytes)
    }

    fn fail<T>(&self, at: usize, reason: impl Into<String>) -> Parse<T> {
        Err((at as u64, reason.into()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Parse<()> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return self.fail(
                0,
                format!(
                    "bad magic {m:?}, expected {:?}",
                    std::str::from_utf8(magic).unwrap()
                ),
            );
        }
        let at = self.pos;
        let v = self.u32("version")?;
        if v != VERSION {
            return self.fail(at, format!("unsupported version {v}"));
        }
        Ok(())
    }

    fn name(&mut self) -> Parse<String> {
        let at = self.pos;
        let len = self.u32("name length")? as usize;
        let raw = self.take(len, "name")?;
        match std::str::from_utf8(raw) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => self.fail(at, "name is not UTF-8"),
        }
    }

    fn floats(&mut self, n: usize, what: &str) -> Parse<Vec<f32>> {
        let raw = self.take(n.saturating_mul(4), what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_state(bytes: &[u8]) -> Parse<WeatherState> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.header(STATE_MAGIC)?;
    let dims_at = cur.pos;
    let c = cur.u32("C")? as usize;
    let h = cur.u32("H")? as usize;
    let w = cur.u32("W")? as usize;
    if c == 0 || h == 0 || w == 0 {
        return cur.fail(dims_at, format!("zero dimension in ({c},{h},{w})"));
    }
    let t_at = cur.pos;
    let t = cur.i64("valid time")?;
    let valid_time = match from_unix(t) {
        Some(v) => v,
        None => return cur.fail(t_at, format!("valid time {t} out of range")),
    };
    let s_at = cur.pos;
    let spacing = cur.f64("spacing")?;
    let grid = match GridSpec::global(h, w) {
        Ok(g) if (g.resolution_degrees - spacing).abs() < 1e-9 => g,
        _ => {
            return cur.fail(
                s_at,
                format!("spacing {spacing} inconsistent with {h}×{w} global grid"),
            )
        }
    };
    let mut channels = Vec::with_capacity(c);
    for _ in 0..c {
        let name = cur.name()?;
        let k_at = cur.pos;
        let kind = cur.u8("channel kind")?;
        let level = cur.f32("level")?;
        let kind = match kind {
            0 => ChannelKind::Pressure(level),
            1 => ChannelKind::Surface,
            other => return cur.fail(k_at, format!("unknown channel kind {other}")),
        };
        channels.push(Channel { name, kind });
    }
    let variables = VariableSet::new(channels).map_err(|e| (cur.pos as u64, e.to_string()))?;
    let data = cur.floats(c * h * w, "values")?;
    if cur.pos != bytes.len() {
        return cur.fail(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos));
    }
    let values = Tensor::new([c, h, w], data).expect("length checked");
    WeatherState::new(grid, variables, values, valid_time).map_err(|e| (t_at as u64, e.to_string()))
}

pub fn write_state(state: &WeatherState, path: &Path) -> Result<()> {
    write_bytes(path, &encode_state(state))
}

pub fn read_state(path: &Path) -> Result<WeatherState> {
    let bytes = fs::read(path).map_err(|e| GhrError::io(path, e))?;
    decode_state(&bytes).map_err(|(offset, reason)| GhrError::Format {
        path: path.to_path_buf(),
        offset,
        reason,
    })
}

pub fn encode_params(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += t.numel() as u64;
    }
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Parse<ParamStore> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.header(PARAM_MAGIC)?;
    let count = cur.u32("count")? as usize;
    let mut entries = Vec::with_capacity(count);
    let mut expected = 0u64;
    for _ in 0..count {
        let name = cur.name()?;
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("dimension")? as usize);
        }
        let at = cur.pos;
        let offset = cur.u64("offset")?;
        if offset != expected {
            return cur.fail(at, format!("{name}: offset {offset}, expected {expected}"));
        }
        if rank == 0 || shape.contains(&0) {
            return cur.fail(at, format!("{name}: invalid shape {shape:?}"));
        }
        expected += shape.iter().product::<usize>() as u64;
        entries.push((name, shape));
    }
    let mut store = ParamStore::new();
    for (name, shape) in entries {
        let n = shape.iter().product();
        let data = cur.floats(n, &name)?;
        store.insert(name, Tensor::new(shape, data).expect("length checked"));
    }
    if cur.pos != bytes.len() {
        return cur.fail(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos));
    }
    Ok(store)
}

pub fn write_params(params: &ParamStore, path: &Path) -> Result<()> {
    write_bytes(path, &encode_params(params))
}

pub fn read_params(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| GhrError::io(path, e))?;
    decode_params(&bytes).map_err(|(offset, reason)| GhrError::Format {
        path: path.to_path_buf(),
        offset,
        reason,
    })
}

/// Writes via a sibling temp file and rename, so readers never see a partial file.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| GhrError::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| GhrError::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| GhrError::io(path, e))
}
