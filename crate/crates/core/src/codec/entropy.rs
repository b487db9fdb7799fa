//! Discretized-Gaussian symbol model with two-sided escape buckets.
//!
//! Symbols are mean-removed quantization indices, so the model is a
//! zero-centred Gaussian of scale `s = sigma / delta` in symbol units:
//! `P(q) = Phi((q + 1/2) / s) - Phi((q - 1/2) / s)` for `|q| <= T`, with the
//! two tails beyond `T` lumped into escape buckets followed by 16 raw bits.
//! Probabilities are quantized to 16-bit frequencies and every bucket keeps
//! a frequency of at least 1.

use super::range_coder::{RangeDecoder, RangeEncoder};
use super::CodecError;

pub const FREQ_BITS: u32 = 16;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;
/// Number of standard deviations covered by the explicit alphabet.
pub const TAIL_SIGMAS: f64 = 6.0;
pub const MAX_TAIL: i32 = 2048;
pub const ESCAPE_BITS: u32 = 16;
pub const SYMBOL_MIN: i32 = -(1 << 15);
pub const SYMBOL_MAX: i32 = (1 << 15) - 1;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTable {
    tail: i32,
    /// Cumulative frequencies over buckets `[esc_lo, -T..=T, esc_hi]`.
    cum: Vec<u32>,
}

impl SymbolTable {
    pub fn gaussian(scale: f64) -> Self {
        let scale = if scale.is_finite() && scale > 0.0 {
            scale
        } else {
            f64::MIN_POSITIVE
        };
        let tail = ((TAIL_SIGMAS * scale).ceil() as i64).clamp(1, MAX_TAIL as i64) as i32;
        let buckets = (2 * tail + 3) as usize;
        let mut probs = Vec::with_capacity(buckets);
        probs.push(normal_cdf((-tail as f64 - 0.5) / scale));
        for q in -tail..=tail {
            let p = normal_cdf((q as f64 + 0.5) / scale) - normal_cdf((q as f64 - 0.5) / scale);
            probs.push(p.max(0.0));
        }
        probs.push(1.0 - normal_cdf((tail as f64 + 0.5) / scale));

        let spare = (FREQ_TOTAL as usize - buckets) as f64;
        let mut freq: Vec<u32> = probs
            .iter()
            .map(|&p| 1 + (p * spare).floor() as u32)
            .collect();
        let used: u32 = freq.iter().sum();
        let mut best = 0;
        for i in 1..buckets {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        freq[best] += FREQ_TOTAL - used;

        let mut cum = Vec::with_capacity(buckets + 1);
        cum.push(0);
        let mut acc = 0;
        for f in freq {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, FREQ_TOTAL);
        Self { tail, cum }
    }

    pub fn tail(&self) -> i32 {
        self.tail
    }

    fn bucket_of(&self, q: i32) -> usize {
        if q < -self.tail {
            0
        } else if q > self.tail {
            (2 * self.tail + 2) as usize
        } else {
            (q + self.tail + 1) as usize
        }
    }

    fn freq(&self, bucket: usize) -> u32 {
        self.cum[bucket + 1] - self.cum[bucket]
    }

    /// Exact code length of `q` under this table, in bits.
    pub fn cost_bits(&self, q: i32) -> f64 {
        let b = self.bucket_of(q);
        let bits = -(self.freq(b) as f64 / FREQ_TOTAL as f64).log2();
        if b == 0 || b == (2 * self.tail + 2) as usize {
            bits + ESCAPE_BITS as f64
        } else {
            bits
        }
    }

    pub fn encode(&self, enc: &mut RangeEncoder, q: i32) {
        debug_assert!((SYMBOL_MIN..=SYMBOL_MAX).contains(&q));
        let b = self.bucket_of(q);
        enc.encode(self.cum[b], self.freq(b), FREQ_BITS);
        if b == 0 {
            enc.encode_raw((-self.tail - 1 - q) as u32, ESCAPE_BITS);
        } else if b == (2 * self.tail + 2) as usize {
            enc.encode_raw((q - self.tail - 1) as u32, ESCAPE_BITS);
        }
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<i32, CodecError> {
        let target = dec.peek(FREQ_BITS)?;
        // Largest bucket whose start is <= target.
        let b = self.cum.partition_point(|&c| c <= target) - 1;
        dec.consume(self.cum[b], self.freq(b), FREQ_BITS)?;
        let last = (2 * self.tail + 2) as usize;
        let q = if b == 0 {
            -self.tail - 1 - dec.decode_raw(ESCAPE_BITS)? as i32
        } else if b == last {
            self.tail + 1 + dec.decode_raw(ESCAPE_BITS)? as i32
        } else {
            b as i32 - self.tail - 1
        };
        if !(SYMBOL_MIN..=SYMBOL_MAX).contains(&q) {
            return Err(CodecError::Corrupt(format!(
                "decoded symbol {q} out of range"
            )));
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bucket_has_mass() {
        for &s in &[1e-6, 0.01, 0.3, 1.0, 7.5, 100.0, 1e5] {
            let t = SymbolTable::gaussian(s);
            assert_eq!(*t.cum.last().unwrap(), FREQ_TOTAL);
            assert!(t.cum.windows(2).all(|w| w[1] > w[0]), "scale {s}");
        }
    }

    #[test]
    fn tiny_scale_makes_zero_nearly_free() {
        let t = SymbolTable::gaussian(0.002);
        assert_eq!(t.tail(), 1);
        assert!(t.cost_bits(0) < 1e-3);
        assert!(t.cost_bits(1) > 10.0);
    }

    #[test]
    fn unit_scale_zero_cost_matches_gaussian() {
        let t = SymbolTable::gaussian(1.0);
        let p0 = normal_cdf(0.5) - normal_cdf(-0.5);
        assert!((t.cost_bits(0) + p0.log2()).abs() < 1e-3);
    }

    #[test]
    fn escapes_roundtrip_at_extremes() {
        let t = SymbolTable::gaussian(3.0);
        let syms = [
            SYMBOL_MIN,
            SYMBOL_MAX,
            0,
            t.tail(),
            -t.tail(),
            t.tail() + 1,
            -t.tail() - 1,
        ];
        let mut e = RangeEncoder::new();
        for &q in &syms {
            t.encode(&mut e, q);
        }
        let bytes = e.finish();
        let mut d = RangeDecoder::new(&bytes).unwrap();
        for &q in &syms {
            assert_eq!(t.decode(&mut d).unwrap(), q);
        }
    }
}
