//! Region-of-interest atlases on the icosphere.
//!
//! Real cortical parcellations are not available here, so parcels are
//! spherical Voronoi cells around seeded random points.
//!
//! `.icra` layout (little-endian): `b"ICRA" | u32 version = 1 | u32 order |
//! u32 roi_count | V × u32 label`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mesh::{prefix_count, Icosphere};
use crate::rng;

const ICRA_MAGIC: &[u8; 4] = b"ICRA";
const ICRA_VERSION: u32 = 1;
const MAX_RETRIES: usize = 64;

/// Default number of cortical ROIs.
pub const DEFAULT_ROI_COUNT: usize = 34;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiAtlas {
    order: usize,
    roi_count: usize,
    labels: Vec<u32>,
}

impl RoiAtlas {
    /// Validates that every ROI is used and labels cover the whole mesh.
    pub fn new(order: usize, roi_count: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != prefix_count(order) {
            return Err(Error::Shape(format!(
                "atlas has {} labels, order {order} needs {}",
                labels.len(),
                prefix_count(order)
            )));
        }
        let mut sizes = vec![0usize; roi_count];
        for &l in &labels {
            let slot = sizes
                .get_mut(l as usize)
                .ok_or_else(|| Error::range("ROI label", l, format!("[0, {roi_count})")))?;
            *slot += 1;
        }
        if let Some(empty) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::Invalid(format!("ROI {empty} has no vertices")));
        }
        Ok(RoiAtlas {
            order,
            roi_count,
            labels,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn roi_count(&self) -> usize {
        self.roi_count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> usize {
        self.labels[v] as usize
    }

    pub fn roi_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.roi_count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.labels.len());
        out.extend_from_slice(ICRA_MAGIC);
        for w in [ICRA_VERSION, self.order as u32, self.roi_count as u32] {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 16 || &bytes[..4] != ICRA_MAGIC {
            return Err(bad("missing ICRA magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if word(4) != ICRA_VERSION {
            return Err(bad(format!("unsupported version {}", word(4))));
        }
        let order = word(8) as usize;
        let roi_count = word(12) as usize;
        if order > crate::mesh::MAX_ORDER {
            return Err(bad(format!("order {order} too large")));
        }
        let v = prefix_count(order);
        if bytes.len() != 16 + 4 * v {
            return Err(bad(format!("expected {v} labels")));
        }
        let labels = bytes[16..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        RoiAtlas::new(order, roi_count, labels).map_err(|e| bad(e.to_string()))
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

fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let p: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if n > 1e-9 {
            return [p[0] / n, p[1] / n, p[2] / n];
        }
    }
}

/// Labels each vertex with its geodesically nearest of `roi_count` seeded
/// random points. Seeds are redrawn (bounded) until no parcel is empty.
pub fn voronoi_atlas(mesh: &Icosphere, roi_count: usize, seed: u64) -> Result<RoiAtlas> {
    let n = mesh.vertex_count();
    if roi_count == 0 || roi_count > n {
        return Err(Error::range("roi_count", roi_count, format!("[1, {n}]")));
    }
    for attempt in 0..MAX_RETRIES {
        let mut rng = rng::stream(seed, 0xA71A5, attempt as u64);
        let centers: Vec<[f64; 3]> = (0..roi_count).map(|_| random_unit(&mut rng)).collect();
        let labels: Vec<u32> = mesh
            .vertices()
            .iter()
            .map(|p| {
                let mut best = (f64::INFINITY, 0u32);
                for (k, c) in centers.iter().enumerate() {
                    let d = (p[0] * c[0] + p[1] * c[1] + p[2] * c[2])
                        .clamp(-1.0, 1.0)
                        .acos();
                    if d < best.0 {
                        best = (d, k as u32);
                    }
                }
                best.1
            })
            .collect();
        if let Ok(atlas) = RoiAtlas::new(mesh.order(), roi_count, labels) {
            return Ok(atlas);
        }
    }
    Err(Error::AtlasRetries(MAX_RETRIES))
}
