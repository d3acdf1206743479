//! b-bit quantization codec for guided-perturbation chunks and the adaptive
//! compression-proportion controller.
//!
//! # Codec
//!
//! A block of reals is mapped onto a uniform lattice:
//!
//! ```text
//! s     = (max - min) / (2^b - 1)
//! code  = clamp(round(x / s + delta), 0, 2^b - 1)
//! x'    = s * (code - delta)
//! ```
//!
//! With the default zero-point rule `delta = round(-min / s)`, codes span
//! the whole b-bit range and the round-trip error is at most `s / 2` per
//! element. Constant blocks (max == min) are stored as a single value.
//!
//! # Wire layout (v1, frozen)
//!
//! ```text
//! offset  size  field
//! 0       1     layout version (1)
//! 1       1     bit width b
//! 2       1     kind: 0 = lattice, 1 = constant
//! 3       8     scale s, f64 little-endian (0.0 for constant blocks)
//! 11      8     zero point delta, i64 little-endian (0 for constant blocks)
//! 19      4     original element count, u32 little-endian
//! 23      ...   payload: lattice -> ceil(n*b/8) bytes of codes packed
//!               little-endian bit order (first code in the lowest bits of
//!               byte 0); constant -> the f64 value, little-endian
//! ```

use crate::error::{Error, Result};

/// Wire layout version written into every encoded block.
pub const WIRE_LAYOUT_VERSION: u8 = 1;

const HEADER_BYTES: usize = 23;

/// How the zero point is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPointRule {
    /// `delta = round(-min / s)`: code 0 lands on the block minimum and the
    /// codes span `[0, 2^b - 1]`. Default.
    AlignMin,
    /// `delta = round(-2^b / (max - min))`: an alternative rule kept for
    /// comparison studies. Codes frequently fall outside the b-bit range and
    /// get clamped, degrading accuracy.
    InverseRange,
}

/// Payload of a quantized block.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockPayload {
    Lattice { scale: f64, zero_point: i64, codes: Vec<u8> },
    Constant { value: f64 },
}

/// A b-bit quantized block of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    pub bits: u8,
    pub original_len: usize,
    pub payload: BlockPayload,
}

impl QuantizedBlock {
    /// Scale factor, `None` for a degenerate (constant) block.
    pub fn scale(&self) -> Option<f64> {
        match &self.payload {
            BlockPayload::Lattice { scale, .. } => Some(*scale),
            BlockPayload::Constant { .. } => None,
        }
    }

    /// Encoded size on the wire in bytes.
    pub fn wire_bytes(&self) -> usize {
        match &self.payload {
            BlockPayload::Lattice { codes, .. } => {
                HEADER_BYTES + packed_len(codes.len(), self.bits)
            }
            BlockPayload::Constant { .. } => HEADER_BYTES + 8,
        }
    }
}

fn packed_len(n: usize, bits: u8) -> usize {
    (n * bits as usize + 7) / 8
}

fn check_bits(bits: u8) -> Result<()> {
    if !(2..=8).contains(&bits) {
        return Err(Error::Config(format!("quantization bit width must be in 2..=8 (got {bits})")));
    }
    Ok(())
}

/// Quantizes with the default min-aligned zero point.
pub fn quantize(values: &[f64], bits: u8) -> Result<QuantizedBlock> {
    quantize_with(values, bits, ZeroPointRule::AlignMin)
}

/// Quantizes a block of finite reals into b-bit codes.
pub fn quantize_with(values: &[f64], bits: u8, rule: ZeroPointRule) -> Result<QuantizedBlock> {
    check_bits(bits)?;
    if values.is_empty() {
        return Err(Error::Shape("cannot quantize an empty block".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "quantizer input".into() });
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(QuantizedBlock {
            bits,
            original_len: values.len(),
            payload: BlockPayload::Constant { value: min },
        });
    }
    let levels = (1u32 << bits) - 1; // 2^b - 1
    let scale = (max - min) / levels as f64;
    let zero_point = match rule {
        ZeroPointRule::AlignMin => (-min / scale).round() as i64,
        ZeroPointRule::InverseRange => (-(f64::from(1u32 << bits)) / (max - min)).round() as i64,
    };
    let codes = values
        .iter()
        .map(|&x| {
            let q = (x / scale + zero_point as f64).round();
            q.clamp(0.0, levels as f64) as u8
        })
        .collect();
    Ok(QuantizedBlock {
        bits,
        original_len: values.len(),
        payload: BlockPayload::Lattice { scale, zero_point, codes },
    })
}

/// Reconstructs the block values: `x = s * (code - delta)`.
pub fn dequantize(block: &QuantizedBlock) -> Result<Vec<f64>> {
    check_bits(block.bits)?;
    match &block.payload {
        BlockPayload::Constant { value } => Ok(vec![*value; block.original_len]),
        BlockPayload::Lattice { scale, zero_point, codes } => {
            if codes.len() != block.original_len {
                return Err(Error::Decode(format!(
                    "code count {} != original length {}",
                    codes.len(),
                    block.original_len
                )));
            }
            let max_code = ((1u32 << block.bits) - 1) as u8;
            if let Some(&bad) = codes.iter().find(|&&c| c > max_code) {
                return Err(Error::Decode(format!(
                    "code {bad} outside the {}-bit range 0..={max_code}",
                    block.bits
                )));
            }
            Ok(codes.iter().map(|&c| scale * (f64::from(c) - *zero_point as f64)).collect())
        }
    }
}

/// Serializes a block into the v1 wire layout.
pub fn encode_block(block: &QuantizedBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(block.wire_bytes());
    out.push(WIRE_LAYOUT_VERSION);
    out.push(block.bits);
    match &block.payload {
        BlockPayload::Lattice { scale, zero_point, codes } => {
            out.push(0);
            out.extend_from_slice(&scale.to_le_bytes());
            out.extend_from_slice(&zero_point.to_le_bytes());
            out.extend_from_slice(&(block.original_len as u32).to_le_bytes());
            out.extend_from_slice(&pack_codes(codes, block.bits));
        }
        BlockPayload::Constant { value } => {
            out.push(1);
            out.extend_from_slice(&0.0f64.to_le_bytes());
            out.extend_from_slice(&0i64.to_le_bytes());
            out.extend_from_slice(&(block.original_len as u32).to_le_bytes());
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out
}

/// Parses a v1 wire block.
pub fn decode_block(bytes: &[u8]) -> Result<QuantizedBlock> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Decode(format!("block too short: {} bytes", bytes.len())));
    }
    if bytes[0] != WIRE_LAYOUT_VERSION {
        return Err(Error::Decode(format!("unsupported wire layout version {}", bytes[0])));
    }
    let bits = bytes[1];
    check_bits(bits).map_err(|_| Error::Decode(format!("invalid bit width {bits}")))?;
    let kind = bytes[2];
    let scale = f64::from_le_bytes(bytes[3..11].try_into().unwrap());
    let zero_point = i64::from_le_bytes(bytes[11..19].try_into().unwrap());
    let original_len = u32::from_le_bytes(bytes[19..23].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_BYTES..];
    match kind {
        0 => {
            let expect = packed_len(original_len, bits);
            if payload.len() != expect {
                return Err(Error::Decode(format!(
                    "payload length {} != expected {expect}",
                    payload.len()
                )));
            }
            let codes = unpack_codes(payload, bits, original_len);
            let max_code = ((1u32 << bits) - 1) as u8;
            if codes.iter().any(|&c| c > max_code) {
                return Err(Error::Decode("packed code outside bit range".into()));
            }
            Ok(QuantizedBlock {
                bits,
                original_len,
                payload: BlockPayload::Lattice { scale, zero_point, codes },
            })
        }
        1 => {
            if payload.len() != 8 {
                return Err(Error::Decode("constant block payload must be 8 bytes".into()));
            }
            let value = f64::from_le_bytes(payload.try_into().unwrap());
            Ok(QuantizedBlock { bits, original_len, payload: BlockPayload::Constant { value } })
        }
        other => Err(Error::Decode(format!("unknown block kind {other}"))),
    }
}

/// Packs codes little-endian bit order: code 0 occupies the lowest bits of
/// byte 0.
fn pack_codes(codes: &[u8], bits: u8) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(codes.len(), bits)];
    let mut bit_pos = 0usize;
    for &code in codes {
        let byte = bit_pos / 8;
        let shift = bit_pos % 8;
        out[byte] |= code << shift;
        if shift + bits as usize > 8 {
            out[byte + 1] |= code >> (8 - shift);
        }
        bit_pos += bits as usize;
    }
    out
}

fn unpack_codes(bytes: &[u8], bits: u8, n: usize) -> Vec<u8> {
    let mask = ((1u16 << bits) - 1) as u16;
    let mut out = Vec::with_capacity(n);
    let mut bit_pos = 0usize;
    for _ in 0..n {
        let byte = bit_pos / 8;
        let shift = bit_pos % 8;
        let mut v = u16::from(bytes[byte]) >> shift;
        if shift + bits as usize > 8 {
            v |= u16::from(bytes[byte + 1]) << (8 - shift);
        }
        out.push((v & mask) as u8);
        bit_pos += bits as usize;
    }
    out
}

/// Linear model of decompression time, measured offline and stored in the
/// run configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecompressionModel {
    pub base_s: f64,
    pub per_byte_s: f64,
}

impl DecompressionModel {
    pub fn time_s(&self, bytes: f64) -> f64 {
        self.base_s + self.per_byte_s * bytes.max(0.0)
    }
}

/// Inputs to the compression-proportion controller for one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionPlan {
    /// Uncompressed payload bytes.
    pub payload_bytes: f64,
    /// Link bandwidth, bytes per second.
    pub bandwidth_bytes_per_s: f64,
    /// Currently configured compression proportion.
    pub omega: f64,
    /// Size ratio after compression, in (0, 1).
    pub theta: f64,
    /// Client computation seconds the transmission must hide under.
    pub compute_s: f64,
    /// Measured decompression-time model.
    pub decomp: DecompressionModel,
}

impl TransmissionPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_bytes_per_s > 0.0) {
            return Err(Error::Config("plan: bandwidth must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config(format!("plan: omega must be in [0, 1] (got {})", self.omega)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("plan: theta must be in (0, 1) (got {})", self.theta)));
        }
        if !(self.payload_bytes >= 0.0 && self.compute_s >= 0.0) {
            return Err(Error::Config("plan: payload and compute must be >= 0".into()));
        }
        Ok(())
    }

    /// Bytes actually sent when a fraction `omega` is compressed to ratio
    /// `theta`.
    pub fn effective_bytes(&self, omega: f64) -> f64 {
        self.payload_bytes * (1.0 - omega) + self.payload_bytes * omega * self.theta
    }
}

/// Which transmit-time estimate the hiding constraint uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransmitSizeRule {
    /// Transmit time drops with compression: `D_eff / B0` with
    /// `D_eff = D0 (1 - omega) + D0 omega theta`. Default.
    EffectiveCompressed,
    /// Transmit time counts the full payload regardless of compression; the
    /// constraint then relaxes only through the decompression term.
    FixedPayload,
}

/// Controller verdict: the chosen proportion, flagged infeasible when even
/// full compression cannot hide the transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaChoice {
    pub omega: f64,
    pub feasible: bool,
}

/// Smallest grid proportion satisfying the hiding constraint
/// `transmit_time(omega) <= compute_s + decomp(D0 * omega)`.
pub fn choose_omega(plan: &TransmissionPlan, grid_step: f64) -> Result<OmegaChoice> {
    choose_omega_with(plan, grid_step, TransmitSizeRule::EffectiveCompressed)
}

pub fn choose_omega_with(
    plan: &TransmissionPlan,
    grid_step: f64,
    rule: TransmitSizeRule,
) -> Result<OmegaChoice> {
    plan.validate()?;
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::Config(format!("omega grid step must be in (0, 1] (got {grid_step})")));
    }
    let steps = (1.0 / grid_step).ceil() as usize;
    for k in 0..=steps {
        let omega = (k as f64 * grid_step).min(1.0);
        if hiding_holds(plan, omega, rule) {
            return Ok(OmegaChoice { omega, feasible: true });
        }
    }
    Ok(OmegaChoice { omega: 1.0, feasible: false })
}

fn hiding_holds(plan: &TransmissionPlan, omega: f64, rule: TransmitSizeRule) -> bool {
    let transmit_s = match rule {
        TransmitSizeRule::EffectiveCompressed => plan.effective_bytes(omega) / plan.bandwidth_bytes_per_s,
        TransmitSizeRule::FixedPayload => plan.payload_bytes / plan.bandwidth_bytes_per_s,
    };
    transmit_s <= plan.compute_s + plan.decomp.time_s(plan.payload_bytes * omega)
}

/// Times the codec on synthetic payloads to fit a linear decompression
/// model. Inherently non-deterministic; run offline and freeze the result
/// into the configuration.
pub fn measure_decompression_model(bits: u8, sample_len: usize) -> Result<DecompressionModel> {
    use std::time::Instant;
    check_bits(bits)?;
    let n1 = sample_len.max(1024);
    let n2 = n1 * 4;
    let timed = |n: usize| -> Result<(f64, f64)> {
        let values: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.61803).sin()).collect();
        let block = quantize(&values, bits)?;
        let bytes = block.wire_bytes() as f64;
        let reps = 16;
        let start = Instant::now();
        for _ in 0..reps {
            let out = dequantize(&block)?;
            std::hint::black_box(&out);
        }
        Ok((start.elapsed().as_secs_f64() / reps as f64, bytes))
    };
    let (t1, b1) = timed(n1)?;
    let (t2, b2) = timed(n2)?;
    let per_byte_s = ((t2 - t1) / (b2 - b1)).max(0.0);
    let base_s = (t1 - per_byte_s * b1).max(0.0);
    Ok(DecompressionModel { base_s, per_byte_s })
}
