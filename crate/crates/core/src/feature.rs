//! Multi-channel per-vertex fields and their `ICSF` file format.
//!
//! Layout of an `.icsf` file (all integers little-endian):
//!
//! ```text
//! b"ICSF" | u32 version = 1 | u32 order | u32 channels | channels·V f32 (channel-major)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::prefix_count;

const ICSF_MAGIC: &[u8; 4] = b"ICSF";
const ICSF_VERSION: u32 = 1;

/// A `channels × V` field of `f32` values on an icosphere of a given order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    order: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(order: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape(
                "feature map needs at least one channel".into(),
            ));
        }
        let v = prefix_count(order);
        if data.len() != channels * v {
            return Err(Error::Shape(format!(
                "expected {channels}×{v} = {} values, got {}",
                channels * v,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value at channel {}, vertex {}",
                i / v,
                i % v
            )));
        }
        Ok(FeatureMap {
            order,
            channels,
            data,
        })
    }

    pub fn zeros(order: usize, channels: usize) -> Self {
        FeatureMap {
            order,
            channels,
            data: vec![0.0; channels * prefix_count(order)],
        }
    }

    pub fn filled(order: usize, channels: usize, value: f32) -> Self {
        FeatureMap {
            order,
            channels,
            data: vec![value; channels * prefix_count(order)],
        }
    }

    /// Builds a map from a per-channel closure.
    pub fn from_fn(order: usize, channels: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let v = prefix_count(order);
        let mut data = Vec::with_capacity(channels * v);
        for c in 0..channels {
            for i in 0..v {
                data.push(f(c, i));
            }
        }
        FeatureMap {
            order,
            channels,
            data,
        }
    }

    /// Stacks single-channel maps of the same order.
    pub fn stack(maps: &[&FeatureMap]) -> Result<Self> {
        let order = maps
            .first()
            .ok_or_else(|| Error::Shape("nothing to stack".into()))?
            .order;
        let mut data = Vec::new();
        let mut channels = 0;
        for m in maps {
            if m.order != order {
                return Err(Error::Shape(format!("order {} vs {}", m.order, order)));
            }
            data.extend_from_slice(&m.data);
            channels += m.channels;
        }
        Ok(FeatureMap {
            order,
            channels,
            data,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn vertex_count(&self) -> usize {
        prefix_count(self.order)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let v = self.vertex_count();
        &self.data[c * v..(c + 1) * v]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let v = self.vertex_count();
        &mut self.data[c * v..(c + 1) * v]
    }

    /// A single-channel copy of channel `c`.
    pub fn select(&self, c: usize) -> FeatureMap {
        FeatureMap {
            order: self.order,
            channels: 1,
            data: self.channel(c).to_vec(),
        }
    }

    pub fn same_shape(&self, other: &FeatureMap) -> Result<()> {
        if self.order != other.order || self.channels != other.channels {
            return Err(Error::Shape(format!(
                "({} ch, order {}) vs ({} ch, order {})",
                self.channels, self.order, other.channels, other.order
            )));
        }
        Ok(())
    }

    /// Element-wise `a·self + b·other`.
    pub fn axpby(&self, a: f32, other: &FeatureMap, b: f32) -> Result<FeatureMap> {
        self.same_shape(other)?;
        Ok(FeatureMap {
            order: self.order,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> FeatureMap {
        FeatureMap {
            order: self.order,
            channels: self.channels,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(ICSF_MAGIC);
        out.extend_from_slice(&ICSF_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.order as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[..4] != ICSF_MAGIC {
            return Err(bad("missing ICSF magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if word(4) != ICSF_VERSION {
            return Err(bad(&format!("unsupported version {}", word(4))));
        }
        let order = word(8) as usize;
        let channels = word(12) as usize;
        if order > crate::mesh::MAX_ORDER || channels == 0 {
            return Err(bad("invalid order or channel count"));
        }
        let n = channels * prefix_count(order);
        if bytes.len() != 16 + 4 * n {
            return Err(bad(&format!(
                "expected {} payload bytes, found {}",
                4 * n,
                bytes.len() - 16
            )));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureMap::new(order, channels, data).map_err(|e| bad(&e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_wrong_length_and_nan() {
        assert!(FeatureMap::new(0, 1, vec![0.0; 11]).is_err());
        let mut d = vec![0.0; 12];
        d[3] = f32::NAN;
        assert!(matches!(FeatureMap::new(0, 1, d), Err(Error::Numerical(_))));
    }

    #[test]
    fn header_layout() {
        let m = FeatureMap::filled(0, 2, 1.5);
        let b = m.to_bytes();
        assert_eq!(&b[..4], b"ICSF");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(b.len(), 16 + 4 * 24);
    }

    #[test]
    fn truncated_file_rejected() {
        let b = FeatureMap::zeros(1, 1).to_bytes();
        assert!(FeatureMap::from_bytes(&b[..b.len() - 4], Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(order in 0usize..3, channels in 1usize..4, seed in any::<u64>()) {
            let mut rng = crate::rng::stream(seed, 0, 0);
            let v = prefix_count(order);
            let m = FeatureMap::new(order, channels, crate::rng::normal_vec(&mut rng, channels * v)).unwrap();
            let back = FeatureMap::from_bytes(&m.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
