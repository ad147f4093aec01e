//! Channel descriptors for the stacked state tensor.

use std::collections::HashSet;

use crate::error::{GhrError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChannelKind {
    /// Level in hPa.
    Pressure(f32),
    Surface,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub kind: ChannelKind,
}

impl Channel {
    pub fn pressure(variable: &str, level: u32) -> Self {
        Self {
            name: format!("{variable}{level}"),
            kind: ChannelKind::Pressure(level as f32),
        }
    }

    pub fn surface(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ChannelKind::Surface,
        }
    }
}

pub const PRESSURE_LEVELS: [u32; 13] = [
    50, 100, 150, 200, 250, 300, 400, 500, 600, 700, 850, 925, 1000,
];

#[derive(Clone, Debug, PartialEq)]
pub struct VariableSet {
    channels: Vec<Channel>,
}

impl VariableSet {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(GhrError::invalid("variable set has no channels"));
        }
        let mut seen = HashSet::new();
        for c in &channels {
            if !seen.insert(c.name.as_str()) {
                return Err(GhrError::invalid(format!("duplicate channel {}", c.name)));
            }
        }
        Ok(Self { channels })
    }

    /// z, q, u, v, t on 13 levels plus t2m, u10, v10, msl.
    pub fn canonical() -> Self {
        let mut channels = Vec::with_capacity(69);
        for v in ["z", "q", "u", "v", "t"] {
            channels.extend(PRESSURE_LEVELS.iter().map(|&l| Channel::pressure(v, l)));
        }
        channels.extend(["t2m", "u10", "v10", "msl"].map(Channel::surface));
        Self { channels }
    }

    /// Geopotential on five levels plus t2m, u10, v10.
    pub fn toy() -> Self {
        let mut channels: Vec<Channel> = [1000, 850, 500, 250, 100]
            .iter()
            .map(|&l| Channel::pressure("z", l))
            .collect();
        channels.extend(["t2m", "u10", "v10"].map(Channel::surface));
        Self { channels }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.name.as_str())
    }
}
