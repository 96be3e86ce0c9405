use crate::error::{Error, Result};

/// MSB-first bit packer.
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value >> width == 0);
        for i in (0..width).rev() {
            let bit = (value >> i) & 1;
            if self.bits % 8 == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 0x80 >> (self.bits % 8);
            }
            self.bits += 1;
        }
    }

    pub fn bit_len(&self) -> usize {
        self.bits
    }

    /// The packed bytes; the final byte is zero-padded.
    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    /// Bit offset of the next read.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn read_bit(&mut self) -> Result<u64> {
        let byte = self.bytes.get(self.pos / 8).ok_or_else(|| {
            Error::Corrupt(format!("bit stream ended at bit {}", self.pos))
        })?;
        let bit = (byte >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Ok(bit as u64)
    }

    pub fn read(&mut self, width: u32) -> Result<u64> {
        let mut v = 0;
        for _ in 0..width {
            v = (v << 1) | self.read_bit()?;
        }
        Ok(v)
    }

    /// Bytes consumed so far, counting a partly read byte as used.
    pub fn bytes_consumed(&self) -> usize {
        self.pos.div_ceil(8)
    }
}
