//! Bitstream container. All fields little-endian:
//!
//! ```text
//! "ISCS" | version u16 | flags u16 | width u32 | height u32 | p u8 | C u16
//! | delta f32 | beta f32 | model hash [8] | manifest hash [8] (if permuted)
//! | C x (mu f32, sigma f32) in stream order
//! | scalar section (if flag bit 0): count u16, count x (position u16, value f32)
//! | range-coded payload | CRC32 u32
//! ```
//!
//! The payload visits patches in raster order and, within a patch, channels
//! in stream order, skipping scalar channels.

use std::ops::Range;

use super::entropy::{SymbolTable, SYMBOL_MAX, SYMBOL_MIN};
use super::model::{LatentBlock, Latents, ToyCodecModel};
use super::range_coder::{RangeDecoder, RangeEncoder};
use super::CodecError;
use crate::grouping::{invert_permutation, is_permutation, IscsManifest};
use crate::tensor_io::Image;

pub const MAGIC: &[u8; 4] = b"ISCS";
pub const VERSION: u16 = 1;
pub const FLAG_SCALAR: u16 = 1;
pub const FLAG_PERMUTED: u16 = 1 << 1;
const CRC_LEN: usize = 4;

/// Channel order used in the stream: `permutation[position] = channel`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelOrder {
    pub permutation: Vec<usize>,
    pub hash: [u8; 8],
}

impl ChannelOrder {
    pub fn from_manifest(m: &IscsManifest) -> Self {
        Self {
            permutation: m.plan.permutation.clone(),
            hash: m.hash(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EncodeOptions {
    /// Quantizer step; the model default when `None`.
    pub delta: Option<f64>,
    /// Channels sent as a single scalar instead of per-patch symbols.
    pub scalar_channels: Vec<usize>,
    pub order: Option<ChannelOrder>,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub width: usize,
    pub height: usize,
    pub delta: f64,
    pub flags: u16,
    /// Symbols in model channel order; scalar channels hold zeros.
    pub block: LatentBlock,
    /// `(channel, value)` for every scalar channel.
    pub scalars: Vec<(usize, f64)>,
    pub payload_len: usize,
}

impl Decoded {
    pub fn latents(&self, model: &ToyCodecModel) -> Latents {
        model.dequantize(&self.block, self.delta, &self.scalars)
    }

    pub fn reconstruct(&self, model: &ToyCodecModel) -> Image {
        model
            .synthesize(&self.latents(model))
            .crop(self.width, self.height)
    }
}

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

fn effective_delta(model: &ToyCodecModel, delta: Option<f64>) -> Result<f64, CodecError> {
    let d = f32_exact(delta.unwrap_or(model.delta()));
    if !d.is_finite() || d <= 0.0 {
        return Err(CodecError::InvalidParam(format!(
            "delta must be positive, got {d}"
        )));
    }
    Ok(d)
}

fn table_for(sigma: f64, delta: f64) -> SymbolTable {
    SymbolTable::gaussian(sigma / delta)
}

/// Analysis, quantization and entropy coding of one grayscale image. Sizes
/// that are not a multiple of the patch size are padded by edge
/// replication; the header keeps the original size.
pub fn encode_image(
    model: &ToyCodecModel,
    img: &Image,
    opts: &EncodeOptions,
) -> Result<Vec<u8>, CodecError> {
    let p = model.patch_size();
    let (w, h) = (img.width(), img.height());
    let padded = img.pad_edge(w.div_ceil(p) * p, h.div_ceil(p) * p);
    let delta = effective_delta(model, opts.delta)?;
    let block = model.encode_latents(&padded, delta)?;
    encode_block(model, &block, w, h, opts)
}

/// Entropy codes an already quantized block.
pub fn encode_block(
    model: &ToyCodecModel,
    block: &LatentBlock,
    width: usize,
    height: usize,
    opts: &EncodeOptions,
) -> Result<Vec<u8>, CodecError> {
    let c = model.channels();
    let p = model.patch_size();
    if block.channels != c || block.symbols.len() != block.patch_count() * c {
        return Err(CodecError::Dimension(format!(
            "block has {} channels, model has {c}",
            block.channels
        )));
    }
    if block.patches_x != width.div_ceil(p) || block.patches_y != height.div_ceil(p) {
        return Err(CodecError::Dimension(format!(
            "{}x{} patch grid does not cover a {width}x{height} image",
            block.patches_x, block.patches_y
        )));
    }
    if width > u32::MAX as usize
        || height > u32::MAX as usize
        || p > u8::MAX as usize
        || c > u16::MAX as usize
    {
        return Err(CodecError::InvalidParam(
            "image or model too large for the header".into(),
        ));
    }
    if block
        .symbols
        .iter()
        .any(|q| !(SYMBOL_MIN..=SYMBOL_MAX).contains(q))
    {
        return Err(CodecError::InvalidParam(
            "symbol outside the coder alphabet".into(),
        ));
    }
    let delta = effective_delta(model, opts.delta)?;
    let perm: Vec<usize> = match &opts.order {
        Some(o) => {
            if o.permutation.len() != c || !is_permutation(&o.permutation) {
                return Err(CodecError::InvalidParam(format!(
                    "channel order is not a permutation of {c} channels"
                )));
            }
            o.permutation.clone()
        }
        None => (0..c).collect(),
    };
    let inv = invert_permutation(&perm);
    let mut scalar_channels = opts.scalar_channels.clone();
    scalar_channels.sort_unstable();
    scalar_channels.dedup();
    if let Some(&bad) = scalar_channels.iter().find(|&&ch| ch >= c) {
        return Err(CodecError::InvalidParam(format!(
            "scalar channel {bad} out of range"
        )));
    }
    let mut is_scalar = vec![false; c];
    for &ch in &scalar_channels {
        is_scalar[inv[ch]] = true;
    }

    let mut flags = 0u16;
    if !scalar_channels.is_empty() {
        flags |= FLAG_SCALAR;
    }
    if opts.order.is_some() {
        flags |= FLAG_PERMUTED;
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.push(p as u8);
    out.extend_from_slice(&(c as u16).to_le_bytes());
    out.extend_from_slice(&(delta as f32).to_le_bytes());
    out.extend_from_slice(&(model.beta() as f32).to_le_bytes());
    out.extend_from_slice(&model.hash());
    if let Some(o) = &opts.order {
        out.extend_from_slice(&o.hash);
    }
    let mu: Vec<f64> = perm
        .iter()
        .map(|&ch| f32_exact(model.entropy_mu()[ch]))
        .collect();
    let sigma: Vec<f64> = perm
        .iter()
        .map(|&ch| f32_exact(model.entropy_sigma()[ch]))
        .collect();
    for i in 0..c {
        out.extend_from_slice(&(mu[i] as f32).to_le_bytes());
        out.extend_from_slice(&(sigma[i] as f32).to_le_bytes());
    }
    if flags & FLAG_SCALAR != 0 {
        let positions: Vec<usize> = (0..c).filter(|&i| is_scalar[i]).collect();
        out.extend_from_slice(&(positions.len() as u16).to_le_bytes());
        for i in positions {
            let value = scalar_value(block.channel_symbols(perm[i]), delta, mu[i]);
            out.extend_from_slice(&(i as u16).to_le_bytes());
            out.extend_from_slice(&(value as f32).to_le_bytes());
        }
    }

    let tables: Vec<Option<SymbolTable>> = (0..c)
        .map(|i| (!is_scalar[i]).then(|| table_for(sigma[i], delta)))
        .collect();
    let mut enc = RangeEncoder::new();
    for row in block.symbols.chunks_exact(c) {
        for (i, t) in tables.iter().enumerate() {
            if let Some(t) = t {
                t.encode(&mut enc, row[perm[i]]);
            }
        }
    }
    out.extend_from_slice(&enc.finish());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Common dequantized value of a channel, or its mean when symbols differ.
fn scalar_value(symbols: impl Iterator<Item = i32>, delta: f64, mu: f64) -> f64 {
    let qs: Vec<i32> = symbols.collect();
    if qs.windows(2).all(|w| w[0] == w[1]) {
        qs.first().map_or(mu, |&q| q as f64 * delta + mu)
    } else {
        qs.iter().map(|&q| q as f64 * delta + mu).sum::<f64>() / qs.len() as f64
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(CodecError::Corrupt("header truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64, CodecError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn hash(&mut self) -> Result<[u8; 8], CodecError> {
        Ok(self.take(8)?.try_into().unwrap())
    }
}

struct Header {
    flags: u16,
    width: usize,
    height: usize,
    patch_size: usize,
    channels: usize,
    delta: f64,
    model_hash: [u8; 8],
    manifest_hash: Option<[u8; 8]>,
    sigma: Vec<f64>,
    /// `(stream position, value)`.
    scalars: Vec<(usize, f64)>,
    payload: Range<usize>,
}

fn verify_crc(bytes: &[u8]) -> Result<&[u8], CodecError> {
    if bytes.len() < MAGIC.len() + CRC_LEN {
        return Err(CodecError::Corrupt("stream too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CodecError::ChecksumMismatch { stored, computed });
    }
    Ok(body)
}

fn parse_header(body: &[u8]) -> Result<Header, CodecError> {
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(CodecError::Corrupt("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(CodecError::Corrupt(format!(
            "unsupported version {version}"
        )));
    }
    let flags = r.u16()?;
    if flags & !(FLAG_SCALAR | FLAG_PERMUTED) != 0 {
        return Err(CodecError::Corrupt(format!("unknown flags {flags:#06x}")));
    }
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let patch_size = r.u8()? as usize;
    let channels = r.u16()? as usize;
    let delta = r.f32()?;
    let _beta = r.f32()?;
    if width == 0
        || height == 0
        || patch_size == 0
        || channels == 0
        || delta.is_nan()
        || delta <= 0.0
        || !delta.is_finite()
    {
        return Err(CodecError::Corrupt("invalid header fields".into()));
    }
    let model_hash = r.hash()?;
    let manifest_hash = if flags & FLAG_PERMUTED != 0 {
        Some(r.hash()?)
    } else {
        None
    };
    let mut sigma = Vec::with_capacity(channels);
    for _ in 0..channels {
        // Means are implied by the model hash; only scales drive decoding.
        r.f32()?;
        let s = r.f32()?;
        if !s.is_finite() || s <= 0.0 {
            return Err(CodecError::Corrupt("non-positive entropy scale".into()));
        }
        sigma.push(s);
    }
    let mut scalars = Vec::new();
    if flags & FLAG_SCALAR != 0 {
        let n = r.u16()? as usize;
        for _ in 0..n {
            let pos = r.u16()? as usize;
            let v = r.f32()?;
            if pos >= channels || scalars.iter().any(|&(q, _)| q == pos) || !v.is_finite() {
                return Err(CodecError::Corrupt("invalid scalar entry".into()));
            }
            scalars.push((pos, v));
        }
    }
    Ok(Header {
        flags,
        width,
        height,
        patch_size,
        channels,
        delta,
        model_hash,
        manifest_hash,
        sigma,
        scalars,
        payload: r.pos..body.len(),
    })
}

/// Byte span of the range-coded payload within a stream.
pub fn payload_range(bytes: &[u8]) -> Result<Range<usize>, CodecError> {
    Ok(parse_header(verify_crc(bytes)?)?.payload)
}

/// Verifies checksum and hashes, then decodes symbols back into model
/// channel order. `order` must be supplied for permuted streams.
pub fn decode(
    bytes: &[u8],
    model: &ToyCodecModel,
    order: Option<&ChannelOrder>,
) -> Result<Decoded, CodecError> {
    let body = verify_crc(bytes)?;
    let h = parse_header(body)?;
    if h.model_hash != model.hash() {
        return Err(CodecError::ModelHashMismatch);
    }
    let c = h.channels;
    if c != model.channels() || h.patch_size != model.patch_size() {
        return Err(CodecError::ModelHashMismatch);
    }
    let perm: Vec<usize> = match h.manifest_hash {
        Some(hash) => {
            let o = order.ok_or(CodecError::MissingPermutation)?;
            if o.hash != hash {
                return Err(CodecError::ManifestHashMismatch);
            }
            if o.permutation.len() != c || !is_permutation(&o.permutation) {
                return Err(CodecError::InvalidParam(
                    "supplied channel order is invalid".into(),
                ));
            }
            o.permutation.clone()
        }
        None => (0..c).collect(),
    };
    let mut is_scalar = vec![false; c];
    for &(pos, _) in &h.scalars {
        is_scalar[pos] = true;
    }
    let tables: Vec<Option<SymbolTable>> = (0..c)
        .map(|i| (!is_scalar[i]).then(|| table_for(h.sigma[i], h.delta)))
        .collect();

    let p = h.patch_size;
    let (py, px) = (h.height.div_ceil(p), h.width.div_ceil(p));
    let mut symbols = vec![0i32; py * px * c];
    let payload = &body[h.payload.clone()];
    let mut dec = RangeDecoder::new(payload)?;
    for row in symbols.chunks_exact_mut(c) {
        for (i, t) in tables.iter().enumerate() {
            if let Some(t) = t {
                row[perm[i]] = t.decode(&mut dec)?;
            }
        }
    }
    Ok(Decoded {
        width: h.width,
        height: h.height,
        delta: h.delta,
        flags: h.flags,
        block: LatentBlock {
            patches_y: py,
            patches_x: px,
            channels: c,
            symbols,
        },
        scalars: h.scalars.iter().map(|&(pos, v)| (perm[pos], v)).collect(),
        payload_len: payload.len(),
    })
}

/// Code length of every channel under the factorized model, in bits.
pub fn per_channel_bits(model: &ToyCodecModel, block: &LatentBlock, delta: f64) -> Vec<f64> {
    let delta = f32_exact(delta);
    (0..block.channels)
        .map(|ch| {
            let t = table_for(f32_exact(model.entropy_sigma()[ch]), delta);
            block.channel_symbols(ch).map(|q| t.cost_bits(q)).sum()
        })
        .collect()
}

/// Total code length of the non-scalar channels, in bits.
pub fn analytic_bits(
    model: &ToyCodecModel,
    block: &LatentBlock,
    delta: f64,
    scalar_channels: &[usize],
) -> f64 {
    per_channel_bits(model, block, delta)
        .iter()
        .enumerate()
        .filter(|(ch, _)| !scalar_channels.contains(ch))
        .map(|(_, b)| b)
        .sum()
}
