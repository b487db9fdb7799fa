//! Byte-oriented range coder: 64-bit `low` (bit 32 holds a pending carry),
//! 32-bit `range`, renormalizing one byte at a time once the range drops
//! below 2^24. Carries resolve through a one-byte cache plus a run count of
//! pending 0xFF bytes, so no output byte is ever revisited.

use super::CodecError;

const TOP: u32 = 1 << 24;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Encodes the interval `[start, start + freq)` of a distribution whose
    /// frequencies sum to `1 << total_bits`.
    pub fn encode(&mut self, start: u32, freq: u32, total_bits: u32) {
        debug_assert!(freq > 0 && start + freq <= 1 << total_bits);
        let r = self.range >> total_bits;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Encodes `bits` (at most 16) raw bits as uniform bytes, high byte first.
    pub fn encode_raw(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= 16 && bits.is_multiple_of(8));
        let mut shift = bits;
        while shift > 0 {
            shift -= 8;
            self.encode((value >> shift) & 0xFF, 1, 8);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self, CodecError> {
        if input.len() < 5 {
            return Err(CodecError::Corrupt(
                "range-coded payload shorter than 5 bytes".into(),
            ));
        }
        let mut d = Self {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Returns the cumulative-frequency target for the next symbol.
    pub fn peek(&self, total_bits: u32) -> Result<u32, CodecError> {
        let r = self.range >> total_bits;
        let v = self.code / r;
        if v >= 1 << total_bits {
            return Err(CodecError::Corrupt(
                "range decoder target out of bounds".into(),
            ));
        }
        Ok(v)
    }

    pub fn consume(&mut self, start: u32, freq: u32, total_bits: u32) -> Result<(), CodecError> {
        let r = self.range >> total_bits;
        self.code -= r * start;
        self.range = r * freq;
        if self.code >= self.range {
            return Err(CodecError::Corrupt("range decoder state invalid".into()));
        }
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u32;
        }
        Ok(())
    }

    pub fn decode_raw(&mut self, bits: u32) -> Result<u32, CodecError> {
        let mut v = 0;
        for _ in 0..bits / 8 {
            let b = self.peek(8)?;
            self.consume(b, 1, 8)?;
            v = (v << 8) | b;
        }
        Ok(v)
    }

    /// Bytes consumed beyond the end of the input (zero-filled).
    pub fn overrun(&self) -> usize {
        self.pos.saturating_sub(self.input.len())
    }
}
