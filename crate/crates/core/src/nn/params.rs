//! Network configuration, parameter layout and the `ICKP` checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! b"ICKP" | u32 version = 1 | u64 manifest_len | manifest (UTF-8) | f32 blob
//! ```
//!
//! The manifest is line oriented. `meta <key> <value>` lines carry the
//! network configuration and run metadata; `tensor <name> f32 <d0>x<d1>...`
//! lines list every parameter array in blob order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::RING_LEN;
use crate::rng;

use super::tensor::Mat;

const ICKP_MAGIC: &[u8; 4] = b"ICKP";
const ICKP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Finest order, where inputs live.
    pub base_order: usize,
    /// Coarsest order, the bottleneck.
    pub min_order: usize,
    /// Channel width per level, finest first.
    pub widths: Vec<usize>,
    pub blocks_per_level: usize,
    pub attention_orders: Vec<usize>,
    pub embed_dim: usize,
    /// When false the mask channels are replaced by zeros (unconditional
    /// ablation).
    pub use_mask: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            in_channels: 4,
            out_channels: 2,
            base_order: 6,
            min_order: 2,
            widths: vec![16, 32, 64, 96, 128],
            blocks_per_level: 2,
            attention_orders: vec![2, 3],
            embed_dim: 64,
            use_mask: true,
        }
    }
}

impl DenoiserConfig {
    /// Order-3 profile for quick experiments on a laptop CPU.
    pub fn desk() -> Self {
        DenoiserConfig {
            base_order: 3,
            min_order: 1,
            widths: vec![8, 16, 32],
            attention_orders: vec![1],
            embed_dim: 32,
            ..Default::default()
        }
    }

    /// Smallest configuration exercising every layer type.
    pub fn tiny() -> Self {
        DenoiserConfig {
            base_order: 2,
            min_order: 1,
            widths: vec![4, 8],
            blocks_per_level: 1,
            attention_orders: vec![1],
            embed_dim: 8,
            ..Default::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn level_order(&self, level: usize) -> usize {
        self.base_order - level
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_order > self.base_order {
            return Err(Error::Config(format!(
                "min_order {} exceeds base_order {}",
                self.min_order, self.base_order
            )));
        }
        if self.base_order > crate::mesh::MAX_ORDER {
            return Err(Error::Config(format!(
                "base_order {} too large",
                self.base_order
            )));
        }
        if self.widths.len() != self.base_order - self.min_order + 1 {
            return Err(Error::Config(format!(
                "widths has {} entries, orders {}..={} need {}",
                self.widths.len(),
                self.min_order,
                self.base_order,
                self.base_order - self.min_order + 1
            )));
        }
        if self.widths.contains(&0) || self.blocks_per_level == 0 {
            return Err(Error::Config(
                "widths and blocks_per_level must be positive".into(),
            ));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be even and positive",
                self.embed_dim
            )));
        }
        if self.in_channels != self.out_channels + 2 {
            return Err(Error::Config(format!(
                "in_channels {} must equal out_channels {} + 2 mask channels",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }
}

/// Group count for normalizing `channels`: the largest divisor not above 8
/// that leaves at least 4 channels per group (1 for narrow layers). With a
/// single channel per group the norm erases every per-channel offset, and
/// the network could not shift a whole map with age.
pub fn norm_groups(channels: usize) -> usize {
    (1..=8.min(channels / 4))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with variance `1/fan_in`.
    Normal {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter group used in gradient-check reports.
    pub fn group(&self) -> &'static str {
        let n = self.name.as_str();
        if n.contains(".attn.") {
            "attention"
        } else if n.contains("norm") {
            "norm"
        } else if n.starts_with("time.") || n.starts_with("cond.") || n.contains(".emb.") {
            "embedding"
        } else {
            "conv"
        }
    }

    /// Matrix view used at runtime: conv weights flatten to `out × (in·7)`,
    /// vectors become columns.
    fn mat_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            [o, i, k] => (*o, i * k),
            _ => unreachable!("parameter rank"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NormIdx {
    pub gamma: usize,
    pub beta: usize,
    pub groups: usize,
}

#[derive(Debug, Clone)]
pub struct ResBlockIdx {
    pub norm1: NormIdx,
    pub conv1: ConvIdx,
    pub emb_w: usize,
    pub emb_b: usize,
    pub norm2: NormIdx,
    pub conv2: ConvIdx,
    /// 1×1 projection when channel counts differ.
    pub skip: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct AttnIdx {
    pub norm: NormIdx,
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub out_w: usize,
    pub out_b: usize,
}

#[derive(Debug, Clone)]
pub struct LevelIdx {
    pub order: usize,
    pub blocks: Vec<ResBlockIdx>,
    pub attn: Option<AttnIdx>,
    /// Decoder only: conv after up-pooling to the next finer level.
    pub up: Option<ConvIdx>,
}

/// Parameter indices for every layer, derived purely from the config.
#[derive(Debug, Clone)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub time_w1: usize,
    pub time_b1: usize,
    pub time_w2: usize,
    pub time_b2: usize,
    pub gender_table: usize,
    pub age_w: usize,
    pub age_b: usize,
    pub input_conv: ConvIdx,
    pub encoder: Vec<LevelIdx>,
    pub mid: (ResBlockIdx, AttnIdx, ResBlockIdx),
    pub decoder: Vec<LevelIdx>,
    pub out_norm: NormIdx,
    pub out_conv: ConvIdx,
}

struct Registry {
    specs: Vec<ParamSpec>,
}

impl Registry {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, zero: bool) -> ConvIdx {
        let init = if zero {
            Init::Zeros
        } else {
            Init::Normal {
                fan_in: cin * RING_LEN,
            }
        };
        ConvIdx {
            w: self.add(format!("{name}.w"), vec![cout, cin, RING_LEN], init),
            b: self.add(format!("{name}.b"), vec![cout], Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, ch: usize) -> NormIdx {
        NormIdx {
            gamma: self.add(format!("{name}.gamma"), vec![ch], Init::Ones),
            beta: self.add(format!("{name}.beta"), vec![ch], Init::Zeros),
            groups: norm_groups(ch),
        }
    }

    fn dense(&mut self, name: &str, cin: usize, cout: usize) -> (usize, usize) {
        (
            self.add(
                format!("{name}.w"),
                vec![cout, cin],
                Init::Normal { fan_in: cin },
            ),
            self.add(format!("{name}.b"), vec![cout], Init::Zeros),
        )
    }

    fn res_block(&mut self, name: &str, cin: usize, cout: usize, embed: usize) -> ResBlockIdx {
        let norm1 = self.norm(&format!("{name}.norm1"), cin);
        let conv1 = self.conv(&format!("{name}.conv1"), cin, cout, false);
        let (emb_w, emb_b) = self.dense(&format!("{name}.emb"), embed, cout);
        let norm2 = self.norm(&format!("{name}.norm2"), cout);
        let conv2 = self.conv(&format!("{name}.conv2"), cout, cout, false);
        let skip = (cin != cout).then(|| self.dense(&format!("{name}.skip"), cin, cout));
        ResBlockIdx {
            norm1,
            conv1,
            emb_w,
            emb_b,
            norm2,
            conv2,
            skip,
        }
    }

    fn attn(&mut self, name: &str, ch: usize) -> AttnIdx {
        let norm = self.norm(&format!("{name}.attn.norm"), ch);
        let mut proj = |p: &str| {
            self.add(
                format!("{name}.attn.{p}"),
                vec![ch, ch],
                Init::Normal { fan_in: ch },
            )
        };
        let (q, k, v, out_w) = (proj("q"), proj("k"), proj("v"), proj("out.w"));
        let out_b = self.add(format!("{name}.attn.out.b"), vec![ch], Init::Zeros);
        AttnIdx {
            norm,
            q,
            k,
            v,
            out_w,
            out_b,
        }
    }
}

impl Layout {
    pub fn new(cfg: &DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = Registry { specs: Vec::new() };
        let e = cfg.embed_dim;
        let (time_w1, time_b1) = r.dense("time.fc1", e, e);
        let (time_w2, time_b2) = r.dense("time.fc2", e, e);
        let gender_table = r.add("cond.gender".into(), vec![2, e], Init::Normal { fan_in: 1 });
        let age_w = r.add("cond.age.w".into(), vec![e], Init::Normal { fan_in: 1 });
        let age_b = r.add("cond.age.b".into(), vec![e], Init::Zeros);
        let w = &cfg.widths;
        let input_conv = r.conv("input", cfg.in_channels, w[0], false);

        let mut encoder = Vec::new();
        let mut ch = w[0];
        for (l, &width) in w.iter().enumerate() {
            let order = cfg.level_order(l);
            let mut blocks = Vec::new();
            for b in 0..cfg.blocks_per_level {
                blocks.push(r.res_block(&format!("enc.{l}.{b}"), ch, width, e));
                ch = width;
            }
            let attn = cfg
                .attention_orders
                .contains(&order)
                .then(|| r.attn(&format!("enc.{l}"), width));
            encoder.push(LevelIdx {
                order,
                blocks,
                attn,
                up: None,
            });
        }

        let mid = (
            r.res_block("mid.0", ch, ch, e),
            r.attn("mid", ch),
            r.res_block("mid.1", ch, ch, e),
        );

        let mut decoder = Vec::new();
        for l in (0..w.len()).rev() {
            let order = cfg.level_order(l);
            let mut blocks = Vec::new();
            for b in 0..cfg.blocks_per_level {
                let cin = if b == 0 { ch + w[l] } else { w[l] };
                blocks.push(r.res_block(&format!("dec.{l}.{b}"), cin, w[l], e));
            }
            ch = w[l];
            let attn = cfg
                .attention_orders
                .contains(&order)
                .then(|| r.attn(&format!("dec.{l}"), ch));
            let up = (l > 0).then(|| r.conv(&format!("dec.{l}.up"), ch, w[l - 1], false));
            if l > 0 {
                ch = w[l - 1];
            }
            decoder.push(LevelIdx {
                order,
                blocks,
                attn,
                up,
            });
        }

        let out_norm = r.norm("out.norm", ch);
        let out_conv = r.conv("out.conv", ch, cfg.out_channels, true);
        Ok(Layout {
            specs: r.specs,
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            gender_table,
            age_w,
            age_b,
            input_conv,
            encoder,
            mid,
            decoder,
            out_norm,
            out_conv,
        })
    }
}

/// Learnable weights of the spherical UNet together with the config that
/// shaped them.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub layout: Layout,
    pub values: Vec<Mat<f32>>,
    /// Free-form run metadata stored in checkpoints.
    pub meta: BTreeMap<String, String>,
}

impl DenoiserParams {
    /// Seeded initialization: conv and dense weights ~ N(0, 1/fan_in), norm
    /// gains one, biases zero, output projection zero.
    pub fn init(config: &DenoiserConfig, seed: u64) -> Result<Self> {
        let layout = Layout::new(config)?;
        let mut rng = rng::stream(seed, 0x1417, 0);
        let values = layout
            .specs
            .iter()
            .map(|s| {
                let (r, c) = s.mat_dims();
                let data = match s.init {
                    Init::Zeros => vec![0.0; r * c],
                    Init::Ones => vec![1.0; r * c],
                    Init::Normal { fan_in } => {
                        let sd = (1.0 / fan_in as f64).sqrt() as f32;
                        (0..r * c)
                            .map(|_| sd * rng.sample::<f32, _>(StandardNormal))
                            .collect()
                    }
                };
                Mat::from_vec(r, c, data)
            })
            .collect();
        Ok(DenoiserParams {
            config: config.clone(),
            layout,
            values,
            meta: BTreeMap::new(),
        })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout.specs.iter().position(|s| s.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values
            .iter()
            .all(|m| m.data.iter().all(|x| x.is_finite()))
    }

    /// Values promoted to another float type.
    pub fn cast<T: super::tensor::Real>(&self) -> Vec<Mat<T>> {
        self.values.iter().map(|m| m.cast()).collect()
    }

    fn manifest(&self) -> String {
        let c = &self.config;
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut lines = vec![
            format!("meta in_channels {}", c.in_channels),
            format!("meta out_channels {}", c.out_channels),
            format!("meta base_order {}", c.base_order),
            format!("meta min_order {}", c.min_order),
            format!("meta widths {}", list(&c.widths)),
            format!("meta blocks_per_level {}", c.blocks_per_level),
            format!("meta attention_orders {}", list(&c.attention_orders)),
            format!("meta embed_dim {}", c.embed_dim),
            format!("meta use_mask {}", c.use_mask),
        ];
        for (k, v) in &self.meta {
            lines.push(format!("meta {k} {v}"));
        }
        for s in self.specs() {
            let dims = s
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            lines.push(format!("tensor {} f32 {}", s.name, dims));
        }
        lines.join("\n") + "\n"
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest();
        let mut out = Vec::with_capacity(16 + manifest.len() + 4 * self.parameter_count());
        out.extend_from_slice(ICKP_MAGIC);
        out.extend_from_slice(&ICKP_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for m in &self.values {
            for x in &m.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 16 || &bytes[..4] != ICKP_MAGIC {
            return Err(bad("missing ICKP magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != ICKP_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let manifest = bytes
            .get(16..16 + mlen)
            .and_then(|b| std::str::from_utf8(b).ok())
            .ok_or_else(|| bad("truncated or non-UTF-8 manifest".into()))?;

        let mut meta = BTreeMap::new();
        let mut tensors = Vec::new();
        for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), Some(v)) => {
                    meta.insert(k.to_string(), v.to_string());
                }
                (Some("tensor"), Some(name), Some(rest)) => {
                    let (dtype, dims) = rest
                        .split_once(' ')
                        .ok_or_else(|| bad(format!("bad line: {line}")))?;
                    if dtype != "f32" {
                        return Err(bad(format!("unsupported dtype {dtype}")));
                    }
                    let shape = dims
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("bad shape: {dims}")))?;
                    tensors.push((name.to_string(), shape));
                }
                _ => return Err(bad(format!("unrecognized manifest line: {line}"))),
            }
        }

        let mut meta_owned = meta;
        let num = |k: &str, m: &mut BTreeMap<String, String>| -> Result<usize> {
            m.remove(k)
                .ok_or_else(|| bad(format!("manifest lacks {k}")))?
                .parse()
                .map_err(|_| bad(format!("bad value for {k}")))
        };
        let list = |k: &str, m: &mut BTreeMap<String, String>| -> Result<Vec<usize>> {
            let s = m
                .remove(k)
                .ok_or_else(|| bad(format!("manifest lacks {k}")))?;
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|x| x.parse().map_err(|_| bad(format!("bad value for {k}"))))
                .collect()
        };
        let config = DenoiserConfig {
            in_channels: num("in_channels", &mut meta_owned)?,
            out_channels: num("out_channels", &mut meta_owned)?,
            base_order: num("base_order", &mut meta_owned)?,
            min_order: num("min_order", &mut meta_owned)?,
            widths: list("widths", &mut meta_owned)?,
            blocks_per_level: num("blocks_per_level", &mut meta_owned)?,
            attention_orders: list("attention_orders", &mut meta_owned)?,
            embed_dim: num("embed_dim", &mut meta_owned)?,
            use_mask: meta_owned
                .remove("use_mask")
                .ok_or_else(|| bad("manifest lacks use_mask".into()))?
                .parse()
                .map_err(|_| bad("bad value for use_mask".into()))?,
        };
        let layout = Layout::new(&config).map_err(|e| bad(e.to_string()))?;
        if layout.specs.len() != tensors.len() {
            return Err(bad(format!(
                "manifest lists {} tensors, config implies {}",
                tensors.len(),
                layout.specs.len()
            )));
        }
        let mut offset = 16 + mlen;
        let mut values = Vec::with_capacity(tensors.len());
        for (spec, (name, shape)) in layout.specs.iter().zip(&tensors) {
            if &spec.name != name || &spec.shape != shape {
                return Err(bad(format!(
                    "tensor {name} {shape:?} does not match expected {}",
                    spec.name
                )));
            }
            let n = spec.len();
            let chunk = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| bad(format!("blob truncated at {name}")))?;
            let data: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let (r, c) = spec.mat_dims();
            values.push(Mat::from_vec(r, c, data));
            offset += 4 * n;
        }
        if offset != bytes.len() {
            return Err(bad(format!(
                "{} trailing bytes after blob",
                bytes.len() - offset
            )));
        }
        Ok(DenoiserParams {
            config,
            layout,
            values,
            meta: meta_owned,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        DenoiserConfig::default().validate().unwrap();
        DenoiserConfig::desk().validate().unwrap();
        DenoiserConfig::tiny().validate().unwrap();
    }

    #[test]
    fn widths_length_checked() {
        let cfg = DenoiserConfig {
            widths: vec![8, 16],
            ..DenoiserConfig::desk()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn norm_group_choice() {
        assert_eq!(norm_groups(4), 1);
        assert_eq!(norm_groups(8), 2);
        assert_eq!(norm_groups(16), 4);
        assert_eq!(norm_groups(12), 3);
        assert_eq!(norm_groups(32), 8);
        assert_eq!(norm_groups(96), 8);
        assert_eq!(norm_groups(1), 1);
    }

    #[test]
    fn output_projection_starts_at_zero() {
        let p = DenoiserParams::init(&DenoiserConfig::tiny(), 3).unwrap();
        let w = p.index_of("out.conv.w").unwrap();
        assert!(p.values[w].data.iter().all(|&x| x == 0.0));
        let c = p.index_of("input.w").unwrap();
        assert!(p.values[c].data.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn checkpoint_round_trip_keeps_meta() {
        let mut p = DenoiserParams::init(&DenoiserConfig::tiny(), 5).unwrap();
        p.meta.insert("no_mask".into(), "true".into());
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"ICKP");
        let q = DenoiserParams::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(q.config, p.config);
        assert_eq!(q.values, p.values);
        assert_eq!(q.meta.get("no_mask").map(String::as_str), Some("true"));
    }

    #[test]
    fn corrupted_checkpoint_rejected() {
        let p = DenoiserParams::init(&DenoiserConfig::tiny(), 5).unwrap();
        let bytes = p.to_bytes();
        assert!(DenoiserParams::from_bytes(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DenoiserParams::from_bytes(&bad, Path::new("mem")).is_err());
    }
}
