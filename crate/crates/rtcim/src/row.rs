//! 512-bit row values.
//!
//! A row is one bit per nanowire across a domain-block cluster: 512 bits,
//! stored little-endian as eight u64 words (bit i lives in word i/64 at
//! position i%64). Operands are packed into lanes whose width divides 512;
//! lane 0 occupies the least-significant bits.

use std::fmt;

pub const ROW_BITS: usize = 512;
pub const ROW_WORDS: usize = ROW_BITS / 64;

/// Lane widths the packing helpers accept.
pub const LANE_WIDTHS: [usize; 4] = [8, 16, 32, 64];

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Row512(pub [u64; ROW_WORDS]);

impl Row512 {
    pub const ZERO: Row512 = Row512([0; ROW_WORDS]);
    pub const ONES: Row512 = Row512([u64::MAX; ROW_WORDS]);

    /// Replicate one 64-bit pattern into every word (every 64-bit lane).
    pub fn splat64(word: u64) -> Row512 {
        Row512([word; ROW_WORDS])
    }

    /// Replicate a `width`-bit pattern into every lane.
    pub fn splat(width: usize, pattern: u64) -> Row512 {
        assert!(
            LANE_WIDTHS.contains(&width),
            "unsupported lane width {width}"
        );
        let mut word = 0u64;
        let mut off = 0;
        while off < 64 {
            word |= (pattern & lane_mask_value(width)) << off;
            off += width;
        }
        Row512::splat64(word)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    pub fn get_bit(&self, i: usize) -> bool {
        debug_assert!(i < ROW_BITS);
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, v: bool) {
        debug_assert!(i < ROW_BITS);
        if v {
            self.0[i / 64] |= 1 << (i % 64);
        } else {
            self.0[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Logical shift left by any amount (zeros shift in).
    pub fn shl(&self, k: usize) -> Row512 {
        if k == 0 {
            return *self;
        }
        if k >= ROW_BITS {
            return Row512::ZERO;
        }
        let (words, bits) = (k / 64, k % 64);
        let mut out = [0u64; ROW_WORDS];
        for i in (words..ROW_WORDS).rev() {
            let mut w = self.0[i - words] << bits;
            if bits > 0 && i > words {
                w |= self.0[i - words - 1] >> (64 - bits);
            }
            out[i] = w;
        }
        Row512(out)
    }

    /// Logical shift right by any amount (zeros shift in).
    pub fn shr(&self, k: usize) -> Row512 {
        if k == 0 {
            return *self;
        }
        if k >= ROW_BITS {
            return Row512::ZERO;
        }
        let (words, bits) = (k / 64, k % 64);
        let mut out = [0u64; ROW_WORDS];
        for i in 0..ROW_WORDS - words {
            let mut w = self.0[i + words] >> bits;
            if bits > 0 && i + words + 1 < ROW_WORDS {
                w |= self.0[i + words + 1] << (64 - bits);
            }
            out[i] = w;
        }
        Row512(out)
    }

    pub fn and(&self, o: &Row512) -> Row512 {
        let mut out = [0u64; ROW_WORDS];
        for i in 0..ROW_WORDS {
            out[i] = self.0[i] & o.0[i];
        }
        Row512(out)
    }

    pub fn or(&self, o: &Row512) -> Row512 {
        let mut out = [0u64; ROW_WORDS];
        for i in 0..ROW_WORDS {
            out[i] = self.0[i] | o.0[i];
        }
        Row512(out)
    }

    pub fn xor(&self, o: &Row512) -> Row512 {
        let mut out = [0u64; ROW_WORDS];
        for i in 0..ROW_WORDS {
            out[i] = self.0[i] ^ o.0[i];
        }
        Row512(out)
    }

    pub fn not(&self) -> Row512 {
        let mut out = [0u64; ROW_WORDS];
        for i in 0..ROW_WORDS {
            out[i] = !self.0[i];
        }
        Row512(out)
    }

    /// Number of lanes for a given lane width.
    pub fn lanes(width: usize) -> usize {
        assert!(LANE_WIDTHS.contains(&width));
        ROW_BITS / width
    }

    /// Extract lane `idx` (value in the low bits of the returned u64).
    pub fn lane(&self, width: usize, idx: usize) -> u64 {
        let lanes = Self::lanes(width);
        assert!(idx < lanes);
        let start = idx * width;
        let word = start / 64;
        let off = start % 64;
        // Lane widths divide 64, so a lane never straddles a word boundary.
        (self.0[word] >> off) & lane_mask_value(width)
    }

    pub fn set_lane(&mut self, width: usize, idx: usize, value: u64) {
        let lanes = Self::lanes(width);
        assert!(idx < lanes);
        assert!(
            width == 64 || value <= lane_mask_value(width),
            "lane value {value:#x} exceeds {width} bits"
        );
        let start = idx * width;
        let word = start / 64;
        let off = start % 64;
        self.0[word] &= !(lane_mask_value(width) << off);
        self.0[word] |= (value & lane_mask_value(width)) << off;
    }

    pub fn from_lanes(width: usize, values: &[u64]) -> Row512 {
        let mut row = Row512::ZERO;
        assert!(values.len() <= Self::lanes(width));
        for (i, &v) in values.iter().enumerate() {
            row.set_lane(width, i, v);
        }
        row
    }

    pub fn to_lanes(&self, width: usize) -> Vec<u64> {
        (0..Self::lanes(width)).map(|i| self.lane(width, i)).collect()
    }

    /// A row with a single bit set at lane-relative position `bit` of every lane.
    pub fn lane_bit_mask(width: usize, bit: usize) -> Row512 {
        assert!(bit < width);
        Row512::splat(width, 1u64 << bit)
    }

    /// Parse `0x…` hex (up to 128 digits, value right-aligned on bit 0) or
    /// `rep64:0x…` (a 64-bit pattern replicated into every word).
    pub fn parse(text: &str) -> Result<Row512, String> {
        if let Some(rest) = text.strip_prefix("rep64:") {
            let hex = rest
                .strip_prefix("0x")
                .ok_or_else(|| format!("expected rep64:0x…, got `{text}`"))?;
            let w = u64::from_str_radix(hex, 16).map_err(|e| e.to_string())?;
            return Ok(Row512::splat64(w));
        }
        let hex = text
            .strip_prefix("0x")
            .ok_or_else(|| format!("expected 0x… or rep64:0x…, got `{text}`"))?;
        if hex.is_empty() || hex.len() > 128 {
            return Err(format!("hex immediate must be 1..=128 digits, got {}", hex.len()));
        }
        let mut row = Row512::ZERO;
        // Walk nibbles from the least-significant end.
        for (i, ch) in hex.chars().rev().enumerate() {
            let v = ch.to_digit(16).ok_or_else(|| format!("bad hex digit `{ch}`"))? as u64;
            row.0[i / 16] |= v << ((i % 16) * 4);
        }
        Ok(row)
    }
}

impl fmt::Debug for Row512 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Row512({self})")
    }
}

impl fmt::Display for Row512 {
    /// Prints `rep64:0x…` when all words agree, else right-aligned `0x…` hex.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().all(|&w| w == self.0[0]) {
            return write!(f, "rep64:0x{:x}", self.0[0]);
        }
        let top = self
            .0
            .iter()
            .rposition(|&w| w != 0)
            .expect("non-uniform row has a nonzero word");
        write!(f, "0x{:x}", self.0[top])?;
        for i in (0..top).rev() {
            write!(f, "{:016x}", self.0[i])?;
        }
        Ok(())
    }
}

fn lane_mask_value(width: usize) -> u64 {
    if width == 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}
