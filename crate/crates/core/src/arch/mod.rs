//! The six segmentation network variants and their parameter store.
//!
//! All variants share a four-level encoder/decoder backbone on 128×128
//! single-channel patches. They differ in the skip pathway: direct skips
//! (standard and compressed), nested dense skips, attention-gated skips, and
//! context-fusion attention gates with an optional fixed-Sobel edge head.

mod net;

pub use net::{
    attention_gate, cfa_gate, conv_block, forward_eval, forward_train, nested_skip_node, BnBind,
    CfaMode, ConvBlockVars, ForwardPass, GateVars, Mode, BN_MOMENTUM, DROPOUT_RATE,
};

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HorizonError, Result};

/// Network variant identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ArchId {
    Unet,
    UnetCompressed,
    Unetpp,
    AttnUnet,
    CfaSUnet,
    CfaUnet,
}

impl ArchId {
    pub const ALL: [ArchId; 6] = [
        ArchId::Unet,
        ArchId::UnetCompressed,
        ArchId::Unetpp,
        ArchId::AttnUnet,
        ArchId::CfaSUnet,
        ArchId::CfaUnet,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchId::Unet => "unet",
            ArchId::UnetCompressed => "unet_compressed",
            ArchId::Unetpp => "unetpp",
            ArchId::AttnUnet => "attn_unet",
            ArchId::CfaSUnet => "cfa_s_unet",
            ArchId::CfaUnet => "cfa_unet",
        }
    }

    pub fn parse(s: &str) -> Result<ArchId> {
        ArchId::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                HorizonError::Argument(format!(
                    "unknown architecture '{s}'; valid: {}",
                    ArchId::ALL
                        .iter()
                        .map(|a| a.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })
    }

    /// Whether skip connections pass through an attention gate.
    pub fn gated(&self) -> bool {
        matches!(self, ArchId::AttnUnet | ArchId::CfaSUnet | ArchId::CfaUnet)
    }

    pub fn cfa_mode(&self) -> Option<CfaMode> {
        match self {
            ArchId::CfaSUnet => Some(CfaMode::SpatialOnly),
            ArchId::CfaUnet => Some(CfaMode::Full),
            _ => None,
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Static description of a network instance.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ModelSpec {
    pub arch: ArchId,
    /// Encoder depth; the backbone is built for 4 levels.
    pub levels: usize,
    pub base_channels: usize,
    /// Input patch extents (rows, cols, channels).
    pub input: (usize, usize, usize),
}

impl ModelSpec {
    /// Channel plan and patch size used throughout: base 64 (16 for the
    /// compressed variant), four levels, 128×128 single-channel input.
    pub fn for_arch(arch: ArchId) -> Self {
        let base = if arch == ArchId::UnetCompressed { 16 } else { 64 };
        ModelSpec {
            arch,
            levels: 4,
            base_channels: base,
            input: (128, 128, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 {
            return Err(HorizonError::Argument(format!(
                "base_channels must be >= 4, got {}",
                self.base_channels
            )));
        }
        if self.levels < 1 {
            return Err(HorizonError::Argument("levels must be >= 1".into()));
        }
        let div = 1usize << self.levels;
        let (h, w, c) = self.input;
        if h % div != 0 || w % div != 0 {
            return Err(HorizonError::Argument(format!(
                "input extents {h}x{w} must be divisible by 2^{}",
                self.levels
            )));
        }
        if c < 1 {
            return Err(HorizonError::Argument("input channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Encoder channels at 1-based level `l` (1..=levels).
    pub fn channels(&self, l: usize) -> usize {
        self.base_channels << (l - 1)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.levels
    }
}

/// One stored parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Running statistics are state, not optimized parameters; they are
/// recognized by path suffix so the weight file stays a plain
/// (path, shape, floats) list.
pub fn is_buffer_path(path: &str) -> bool {
    path.ends_with(".running_mean") || path.ends_with(".running_var")
}

/// Ordered map from layer path to parameter tensor, plus the spec and seed
/// it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub spec: ModelSpec,
    pub seed: u64,
    entries: IndexMap<String, Param>,
}

impl Weights {
    pub fn get(&self, path: &str) -> Result<&Param> {
        self.entries
            .get(path)
            .ok_or_else(|| HorizonError::Invariant(format!("missing parameter '{path}'")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(path)
            .ok_or_else(|| HorizonError::Invariant(format!("missing parameter '{path}'")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    /// Paths of optimized parameters, in creation order.
    pub fn learnable_paths(&self) -> Vec<String> {
        self.entries
            .keys()
            .filter(|p| !is_buffer_path(p))
            .cloned()
            .collect()
    }

    /// Number of optimized scalar parameters.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|(p, _)| !is_buffer_path(p))
            .map(|(_, e)| e.len())
            .sum()
    }

    /// Exponential running-stat update: `running = m·running + (1−m)·batch`.
    pub fn update_running_stats(
        &mut self,
        bn_prefix: &str,
        mean: &[f32],
        var: &[f32],
        momentum: f32,
    ) -> Result<()> {
        for (suffix, batch) in [(".running_mean", mean), (".running_var", var)] {
            let p = self.get_mut(&format!("{bn_prefix}{suffix}"))?;
            if p.data.len() != batch.len() {
                return Err(HorizonError::Invariant(format!(
                    "running stat length mismatch at {bn_prefix}{suffix}"
                )));
            }
            for (r, &b) in p.data.iter_mut().zip(batch) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
        }
        Ok(())
    }
}

// ── Initialization ───────────────────────────────────────────────────

struct Init {
    rng: ChaCha8Rng,
    entries: IndexMap<String, Param>,
}

impl Init {
    fn he_uniform(&mut self, path: &str, dims: Vec<usize>, fan_in: usize) {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let len: usize = dims.iter().product();
        let data = (0..len)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        self.entries.insert(path.to_string(), Param { dims, data });
    }

    fn constant(&mut self, path: &str, dims: Vec<usize>, v: f32) {
        let len: usize = dims.iter().product();
        self.entries.insert(
            path.to_string(),
            Param {
                dims,
                data: vec![v; len],
            },
        );
    }

    /// 3×3 or 1×1 convolution with bias.
    fn conv(&mut self, prefix: &str, out_c: usize, in_c: usize, k: usize) {
        self.he_uniform(
            &format!("{prefix}.kernel"),
            vec![out_c, in_c, k, k],
            in_c * k * k,
        );
        self.constant(&format!("{prefix}.bias"), vec![out_c], 0.0);
    }

    /// 2×2 stride-2 transposed convolution (no bias).
    fn up(&mut self, prefix: &str, in_c: usize, out_c: usize) {
        self.he_uniform(
            &format!("{prefix}.kernel"),
            vec![in_c, out_c, 2, 2],
            in_c * 4,
        );
    }

    fn bn(&mut self, prefix: &str, c: usize) {
        self.constant(&format!("{prefix}.gamma"), vec![c], 1.0);
        self.constant(&format!("{prefix}.beta"), vec![c], 0.0);
        self.constant(&format!("{prefix}.running_mean"), vec![c], 0.0);
        self.constant(&format!("{prefix}.running_var"), vec![c], 1.0);
    }

    fn conv_block(&mut self, prefix: &str, in_c: usize, out_c: usize) {
        self.conv(&format!("{prefix}.conv1"), out_c, in_c, 3);
        self.bn(&format!("{prefix}.bn1"), out_c);
        self.conv(&format!("{prefix}.conv2"), out_c, out_c, 3);
        self.bn(&format!("{prefix}.bn2"), out_c);
    }

    fn gate(&mut self, prefix: &str, x_c: usize, g_c: usize, cfa: Option<CfaMode>) {
        let inter = (x_c / 2).max(1);
        self.conv(&format!("{prefix}.theta_x"), inter, x_c, 1);
        self.conv(&format!("{prefix}.theta_g"), inter, g_c, 1);
        self.conv(&format!("{prefix}.psi"), 1, inter, 1);
        if cfa.is_some() {
            self.conv(&format!("{prefix}.theta_spatial"), inter, x_c, 3);
        }
        if cfa == Some(CfaMode::Full) {
            self.conv(&format!("{prefix}.theta_edge"), inter, 2 * x_c, 1);
        }
    }
}

/// Deterministic parameter construction: He-uniform convolution kernels,
/// zero biases, unit/zero batch-norm affine, zero/one running statistics.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Weights> {
    spec.validate()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        entries: IndexMap::new(),
    };
    let levels = spec.levels;
    let in_c = spec.input.2;

    // Encoder column.
    for l in 1..=levels {
        let c_in = if l == 1 { in_c } else { spec.channels(l - 1) };
        init.conv_block(&format!("enc{l}"), c_in, spec.channels(l));
    }
    init.conv_block(
        "bottleneck",
        spec.channels(levels),
        spec.bottleneck_channels(),
    );

    match spec.arch {
        ArchId::Unetpp => {
            // Dense nodes x^{l,j} (paper indexing: l 0-based from the top,
            // j >= 1, l + j <= levels). Channels at 0-based level l equal
            // the encoder channels at 1-based level l+1.
            for l0 in (0..levels).rev() {
                let c = spec.channels(l0 + 1);
                let c_below = if l0 + 1 == levels {
                    spec.bottleneck_channels()
                } else {
                    spec.channels(l0 + 2)
                };
                for j in 1..=(levels - l0) {
                    let prefix = format!("skip{l0}_{j}");
                    init.up(&format!("{prefix}.up"), c_below, c);
                    init.conv_block(&prefix, (j + 1) * c, c);
                }
            }
        }
        _ => {
            // Plain decoder, optionally with gates on the skips.
            for l in (1..=levels).rev() {
                let c = spec.channels(l);
                let c_deep = if l == levels {
                    spec.bottleneck_channels()
                } else {
                    spec.channels(l + 1)
                };
                if spec.arch.gated() {
                    init.gate(&format!("gate{l}"), c, c_deep, spec.arch.cfa_mode());
                }
                init.up(&format!("dec{l}.up"), c_deep, c);
                init.conv_block(&format!("dec{l}"), 2 * c, c);
            }
        }
    }

    init.conv("head", 1, spec.base_channels, 1);

    Ok(Weights {
        spec: *spec,
        seed,
        entries: init.entries,
    })
}

// ── Weight file ──────────────────────────────────────────────────────
//
// Layout (all integers little-endian):
//   magic "HRZWGT01", arch id (u16 len + utf8), levels u32, base u32,
//   input h/w/c u32, seed u64, entry count u32, then per entry:
//   path (u16 len + utf8), rank u8, dims u32 each, payload f32 LE.

const WEIGHT_MAGIC: &[u8; 8] = b"HRZWGT01";

pub fn save_weights(weights: &Weights, path: &Path) -> Result<()> {
    let err = |e| HorizonError::io(path.display().to_string(), e);
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(WEIGHT_MAGIC);
    let arch = weights.spec.arch.as_str().as_bytes();
    buf.extend_from_slice(&(arch.len() as u16).to_le_bytes());
    buf.extend_from_slice(arch);
    for v in [
        weights.spec.levels as u32,
        weights.spec.base_channels as u32,
        weights.spec.input.0 as u32,
        weights.spec.input.1 as u32,
        weights.spec.input.2 as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&weights.seed.to_le_bytes());
    buf.extend_from_slice(&(weights.entries.len() as u32).to_le_bytes());
    for (p, e) in &weights.entries {
        buf.extend_from_slice(&(p.len() as u16).to_le_bytes());
        buf.extend_from_slice(p.as_bytes());
        buf.push(e.dims.len() as u8);
        for &d in &e.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(err)?;
    f.write_all(&buf).map_err(err)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(HorizonError::corrupt(
                self.path.display().to_string(),
                "truncated weight file",
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| {
            HorizonError::corrupt(self.path.display().to_string(), "invalid utf-8 in path")
        })
    }
}

pub fn load_weights(path: &Path) -> Result<Weights> {
    let err = |e| HorizonError::io(path.display().to_string(), e);
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(err)?
        .read_to_end(&mut buf)
        .map_err(err)?;
    let mut c = Cursor {
        buf: &buf,
        pos: 0,
        path,
    };
    if c.take(8)? != WEIGHT_MAGIC {
        return Err(HorizonError::corrupt(
            path.display().to_string(),
            "bad magic",
        ));
    }
    let arch_len = c.u16()? as usize;
    let arch = ArchId::parse(&c.string(arch_len)?)?;
    let levels = c.u32()? as usize;
    let base = c.u32()? as usize;
    let h = c.u32()? as usize;
    let w = c.u32()? as usize;
    let in_c = c.u32()? as usize;
    let seed = c.u64()?;
    let count = c.u32()? as usize;
    let mut entries = IndexMap::with_capacity(count);
    for _ in 0..count {
        let plen = c.u16()? as usize;
        let p = c.string(plen)?;
        let rank = c.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32()? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = c.take(4 * len)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.insert(p, Param { dims, data });
    }
    if c.pos != buf.len() {
        return Err(HorizonError::corrupt(
            path.display().to_string(),
            "trailing bytes after last entry",
        ));
    }
    Ok(Weights {
        spec: ModelSpec {
            arch,
            levels,
            base_channels: base,
            input: (h, w, in_c),
        },
        seed,
        entries,
    })
}

#[cfg(test)]
mod tests;
