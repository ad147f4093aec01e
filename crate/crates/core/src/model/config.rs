use std::fmt;

use crate::error::{GhrError, Result};

/// Window of `rows × cols` tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub rows: usize,
    pub cols: usize,
}

impl Window {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn tiles(&self, grid: (usize, usize)) -> bool {
        self.rows > 0
            && self.cols > 0
            && grid.0.is_multiple_of(self.rows)
            && grid.1.is_multiple_of(self.cols)
    }

    pub fn check_tiles(&self, grid: (usize, usize)) -> Result<()> {
        if self.tiles(grid) {
            Ok(())
        } else {
            Err(GhrError::invalid(format!(
                "window {self} does not tile the {}×{} token grid",
                grid.0, grid.1
            )))
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}", self.rows, self.cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    Global,
    Local(Window),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    /// Training grid (the LR grid).
    pub n_lat: usize,
    pub n_lon: usize,
    pub patch: usize,
    pub dim: usize,
    pub blocks: usize,
    /// Every `period`-th block is global.
    pub period: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub square: Window,
    pub zonal: Window,
    pub meridional: Window,
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self {
            channels: 8,
            n_lat: 16,
            n_lon: 32,
            patch: 4,
            dim: 32,
            blocks: 8,
            period: 4,
            heads: 4,
            mlp_ratio: 4,
            square: Window::new(2, 2),
            zonal: Window::new(2, 4),
            meridional: Window::new(4, 2),
        }
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (self.n_lat / self.patch, self.n_lon / self.patch)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.token_grid();
        h * w
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let positive = [
            ("channels", self.channels),
            ("n_lat", self.n_lat),
            ("n_lon", self.n_lon),
            ("patch", self.patch),
            ("dim", self.dim),
            ("blocks", self.blocks),
            ("period", self.period),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, x) in positive {
            if x == 0 {
                v.push(format!("model.{name} must be positive"));
            }
        }
        if !v.is_empty() {
            return v;
        }
        if !self.n_lat.is_multiple_of(self.patch) || !self.n_lon.is_multiple_of(self.patch) {
            v.push(format!(
                "grid {}×{} is not divisible by patch {}",
                self.n_lat, self.n_lon, self.patch
            ));
        }
        if !self.blocks.is_multiple_of(self.period) {
            v.push(format!(
                "model.blocks = {} is not divisible by model.period = {}",
                self.blocks, self.period
            ));
        }
        if !self.dim.is_multiple_of(self.heads) {
            v.push(format!(
                "model.dim = {} is not divisible by model.heads = {}",
                self.dim, self.heads
            ));
        }
        let grid = self.token_grid();
        if self.square.rows != self.square.cols {
            v.push(format!("square window {} is not square", self.square));
        }
        if self.zonal.cols <= self.zonal.rows {
            v.push(format!(
                "zonal window {} needs more columns than rows",
                self.zonal
            ));
        }
        if self.meridional.rows <= self.meridional.cols {
            v.push(format!(
                "meridional window {} needs more rows than columns",
                self.meridional
            ));
        }
        if self.period > 1
            && self.n_lat.is_multiple_of(self.patch)
            && self.n_lon.is_multiple_of(self.patch)
        {
            for (name, w) in [
                ("square", self.square),
                ("zonal", self.zonal),
                ("meridional", self.meridional),
            ] {
                if !w.tiles(grid) {
                    v.push(format!(
                        "{name} window {w} does not tile the {}×{} token grid",
                        grid.0, grid.1
                    ));
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(GhrError::Config(v))
        }
    }

    /// Attention mode of each block in order: every `period`-th block is
    /// global and the local blocks cycle square → zonal → meridional.
    pub fn schedule(&self) -> Vec<AttentionMode> {
        let cycle = [self.square, self.zonal, self.meridional];
        let mut local = 0;
        (1..=self.blocks)
            .map(|i| {
                if i % self.period == 0 {
                    AttentionMode::Global
                } else {
                    local += 1;
                    AttentionMode::Local(cycle[(local - 1) % 3])
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_schedule() {
        let c = ModelConfig::toy();
        c.validate().unwrap();
        assert_eq!(c.tokens(), 32);
        let s = c.schedule();
        let (sq, zo, me) = (c.square, c.zonal, c.meridional);
        use AttentionMode::*;
        assert_eq!(
            s,
            vec![
                Local(sq),
                Local(zo),
                Local(me),
                Global,
                Local(sq),
                Local(zo),
                Local(me),
                Global
            ]
        );
    }

    #[test]
    fn lists_every_violation() {
        let c = ModelConfig {
            blocks: 6,
            heads: 5,
            zonal: Window::new(4, 2),
            ..ModelConfig::toy()
        };
        let v = c.violations();
        assert_eq!(v.len(), 3, "{v:?}");
    }
}
