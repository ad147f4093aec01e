//! Line-oriented dataset manifests: `#` metadata lines, then `timestamp<TAB>path`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{GhrError, Result};
use crate::format::{read_state, write_bytes};
use crate::state::WeatherState;
use crate::time::{self, Timestamp};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub split: String,
    pub n_lat: usize,
    pub n_lon: usize,
    pub variables: Vec<String>,
    /// Absolute (or caller-relative) paths in increasing time order.
    pub entries: Vec<(Timestamp, PathBuf)>,
}

impl DatasetManifest {
    pub fn new(
        split: impl Into<String>,
        n_lat: usize,
        n_lon: usize,
        variables: Vec<String>,
        entries: Vec<(Timestamp, PathBuf)>,
    ) -> Result<Self> {
        let m = Self {
            split: split.into(),
            n_lat,
            n_lon,
            variables,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(GhrError::invalid(format!(
                    "manifest {}: {} does not follow {}",
                    self.split,
                    time::iso(&pair[1].0),
                    time::iso(&pair[0].0)
                )));
            }
        }
        for (t, _) in &self.entries {
            time::check_aligned(t)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Maximal runs of entries spaced exactly six hours apart, as index ranges.
    pub fn trajectories(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.entries.len() {
            if i == self.entries.len() || self.entries[i].0 - self.entries[i - 1].0 != time::step()
            {
                if i > start {
                    out.push(start..i);
                }
                start = i;
            }
        }
        out
    }

    /// Index of every entry that has `steps` successors in the same trajectory.
    pub fn windows(&self, steps: usize) -> Vec<usize> {
        self.trajectories()
            .into_iter()
            .flat_map(|r| {
                let end = r.end.saturating_sub(steps);
                r.start..end.max(r.start)
            })
            .collect()
    }

    pub fn load(&self, index: usize) -> Result<WeatherState> {
        let (t, path) = &self.entries[index];
        let state = read_state(path)?;
        if state.valid_time != *t {
            return Err(GhrError::invalid(format!(
                "{}: valid time {} but manifest says {}",
                path.display(),
                time::iso(&state.valid_time),
                time::iso(t)
            )));
        }
        if state.grid.n_lat != self.n_lat || state.grid.n_lon != self.n_lon {
            return Err(GhrError::Grid(format!(
                "{}: grid {}×{} but manifest {} is {}×{}",
                path.display(),
                state.grid.n_lat,
                state.grid.n_lon,
                self.split,
                self.n_lat,
                self.n_lon
            )));
        }
        Ok(state)
    }

    pub fn find(&self, t: &Timestamp) -> Option<usize> {
        self.entries.binary_search_by(|(e, _)| e.cmp(t)).ok()
    }

    /// Paths are written relative to the manifest's directory.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut text = String::new();
        writeln!(text, "# split {}", self.split).unwrap();
        writeln!(text, "# grid {} {}", self.n_lat, self.n_lon).unwrap();
        writeln!(text, "# variables {}", self.variables.join(",")).unwrap();
        for (t, p) in &self.entries {
            let rel = p.strip_prefix(base).unwrap_or(p);
            writeln!(text, "{}\t{}", time::iso(t), rel.display()).unwrap();
        }
        write_bytes(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GhrError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let bad = |line: usize, reason: String| GhrError::Format {
            path: path.to_path_buf(),
            offset: line as u64,
            reason: format!("line {line}: {reason}"),
        };
        let mut split = String::new();
        let (mut n_lat, mut n_lon) = (0, 0);
        let mut variables = Vec::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let mut parts = meta.split_whitespace();
                match parts.next() {
                    Some("split") => split = parts.next().unwrap_or_default().to_string(),
                    Some("grid") => {
                        let dims: Vec<usize> = parts.filter_map(|p| p.parse().ok()).collect();
                        if dims.len() != 2 {
                            return Err(bad(line_no, "grid needs two dimensions".into()));
                        }
                        (n_lat, n_lon) = (dims[0], dims[1]);
                    }
                    Some("variables") => {
                        variables = parts
                            .next()
                            .unwrap_or_default()
                            .split(',')
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                            .collect()
                    }
                    _ => {}
                }
                continue;
            }
            let (ts, rel) = line
                .split_once('\t')
                .ok_or_else(|| bad(line_no, "expected timestamp<TAB>path".into()))?;
            let t =
                time::parse_iso(ts).ok_or_else(|| bad(line_no, format!("bad timestamp {ts:?}")))?;
            entries.push((t, base.join(rel)));
        }
        Self::new(split, n_lat, n_lon, variables, entries)
    }
}
