use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

const MAX_CODE_LEN: u8 = 60;

/// Canonical prefix code given by one code length per symbol of the
/// alphabet `0..lengths.len()`; length 0 marks an unused symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct HuffmanTable {
    lengths: Vec<u8>,
    codes: Vec<u64>,
    /// Used symbols ordered by (length, symbol).
    order: Vec<u32>,
}

impl HuffmanTable {
    /// Optimal lengths for the given symbol frequencies. Ties are broken by
    /// symbol and creation order, so the table is reproducible.
    pub fn from_frequencies(freqs: &[u64]) -> Result<Self> {
        let used: Vec<usize> = (0..freqs.len()).filter(|&s| freqs[s] > 0).collect();
        let mut lengths = vec![0u8; freqs.len()];
        match used.len() {
            0 => return Err(Error::Input("cannot build a code for an empty stream".into())),
            1 => lengths[used[0]] = 1,
            _ => {
                // parent links over leaves then internal nodes
                let mut parent = vec![usize::MAX; 2 * used.len() - 1];
                let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
                    used.iter().enumerate().map(|(i, &s)| Reverse((freqs[s], i))).collect();
                let mut next = used.len();
                while heap.len() > 1 {
                    let Reverse((wa, a)) = heap.pop().unwrap();
                    let Reverse((wb, b)) = heap.pop().unwrap();
                    parent[a] = next;
                    parent[b] = next;
                    heap.push(Reverse((wa + wb, next)));
                    next += 1;
                }
                for (leaf, &s) in used.iter().enumerate() {
                    let (mut depth, mut node) = (0u32, leaf);
                    while parent[node] != usize::MAX {
                        node = parent[node];
                        depth += 1;
                    }
                    if depth > MAX_CODE_LEN as u32 {
                        return Err(Error::Input(format!("code length {depth} is too long")));
                    }
                    lengths[s] = depth as u8;
                }
            }
        }
        Self::from_lengths(lengths)
    }

    pub fn from_symbols(symbols: &[u32], alphabet: usize) -> Result<Self> {
        let mut freqs = vec![0u64; alphabet];
        for &s in symbols {
            *freqs.get_mut(s as usize).ok_or_else(|| {
                Error::Input(format!("symbol {s} outside alphabet of {alphabet}"))
            })? += 1;
        }
        Self::from_frequencies(&freqs)
    }

    /// Rebuilds the canonical code from stored lengths.
    pub fn from_lengths(lengths: Vec<u8>) -> Result<Self> {
        let mut order: Vec<u32> = (0..lengths.len() as u32).filter(|&s| lengths[s as usize] > 0).collect();
        if order.is_empty() {
            return Err(Error::Corrupt("code table has no symbols".into()));
        }
        if lengths.iter().any(|&l| l > MAX_CODE_LEN) {
            return Err(Error::Corrupt("code length out of range".into()));
        }
        order.sort_by_key(|&s| (lengths[s as usize], s));
        if order.len() > 1 {
            let max = lengths.iter().copied().max().unwrap() as u32;
            let kraft: u128 = order.iter().map(|&s| 1u128 << (max - lengths[s as usize] as u32)).sum();
            if kraft != 1u128 << max {
                return Err(Error::Corrupt("code lengths do not form a complete prefix code".into()));
            }
        } else if lengths[order[0] as usize] != 1 {
            return Err(Error::Corrupt("a single-symbol code must have length 1".into()));
        }
        let mut codes = vec![0u64; lengths.len()];
        let (mut code, mut len) = (0u64, lengths[order[0] as usize]);
        for (i, &s) in order.iter().enumerate() {
            let l = lengths[s as usize];
            if i > 0 {
                code = (code + 1) << (l - len);
            }
            len = l;
            codes[s as usize] = code;
        }
        Ok(HuffmanTable { lengths, codes, order })
    }

    pub fn lengths(&self) -> &[u8] {
        &self.lengths
    }

    pub fn alphabet(&self) -> usize {
        self.lengths.len()
    }

    pub fn code(&self, symbol: u32) -> Option<(u64, u8)> {
        match self.lengths.get(symbol as usize) {
            Some(&l) if l > 0 => Some((self.codes[symbol as usize], l)),
            _ => None,
        }
    }

    pub fn encoded_bits(&self, symbols: &[u32]) -> usize {
        symbols.iter().map(|&s| self.lengths[s as usize] as usize).sum()
    }

    pub fn encode(&self, symbols: &[u32], out: &mut BitWriter) -> Result<()> {
        for &s in symbols {
            let (code, len) = self
                .code(s)
                .ok_or_else(|| Error::Input(format!("symbol {s} has no code")))?;
            out.write(code, len as u32);
        }
        Ok(())
    }

    pub fn decode(&self, reader: &mut BitReader<'_>, count: usize) -> Result<Vec<u32>> {
        let max = self.lengths[*self.order.last().unwrap() as usize];
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let start = reader.position();
            let (mut code, mut len, mut idx, mut first) = (0u64, 0u8, 0usize, 0u64);
            loop {
                code = (code << 1) | reader.read_bit()?;
                len += 1;
                first <<= 1;
                let n = self.order[idx..]
                    .iter()
                    .take_while(|&&s| self.lengths[s as usize] == len)
                    .count() as u64;
                if code < first + n {
                    out.push(self.order[idx + (code - first) as usize]);
                    break;
                }
                if len >= max {
                    return Err(Error::Corrupt(format!("invalid code at bit {start}")));
                }
                idx += n as usize;
                first += n;
            }
        }
        Ok(out)
    }
}

/// Builds a code for `symbols` and packs the stream. Returns the table, the
/// padded bytes and the exact bit length.
pub fn huffman_encode(symbols: &[u32]) -> Result<(HuffmanTable, Vec<u8>, usize)> {
    let alphabet = symbols.iter().max().map_or(0, |&m| m as usize + 1);
    let table = HuffmanTable::from_symbols(symbols, alphabet)?;
    let mut w = BitWriter::new();
    table.encode(symbols, &mut w)?;
    let bits = w.bit_len();
    Ok((table, w.finish(), bits))
}

pub fn huffman_decode(table: &HuffmanTable, bytes: &[u8], count: usize) -> Result<Vec<u32>> {
    table.decode(&mut BitReader::new(bytes), count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(freqs: &[(u32, usize)]) -> Vec<u32> {
        freqs.iter().flat_map(|&(s, n)| std::iter::repeat(s).take(n)).collect()
    }

    /// Cheapest total length over every complete code on a tiny alphabet.
    fn brute_force_optimum(freqs: &[u64]) -> u64 {
        fn search(freqs: &[u64], lens: &mut Vec<u32>, best: &mut u64) {
            if lens.len() == freqs.len() {
                let kraft: f64 = lens.iter().map(|&l| 0.5f64.powi(l as i32)).sum();
                if kraft <= 1.0 + 1e-12 {
                    let cost = lens.iter().zip(freqs).map(|(&l, &f)| l as u64 * f).sum();
                    *best = (*best).min(cost);
                }
                return;
            }
            for l in 1..=freqs.len() as u32 {
                lens.push(l);
                search(freqs, lens, best);
                lens.pop();
            }
        }
        let mut best = u64::MAX;
        search(freqs, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn known_frequencies() {
        let s = stream(&[(0, 5), (1, 2), (2, 1), (3, 1)]);
        let (t, bytes, bits) = huffman_encode(&s).unwrap();
        assert_eq!(t.lengths(), &[1, 2, 3, 3]);
        assert_eq!(bits, 15);
        assert_eq!(brute_force_optimum(&[5, 2, 1, 1]), 15);
        assert_eq!(huffman_decode(&t, &bytes, s.len()).unwrap(), s);
    }

    #[test]
    fn matches_exhaustive_optimum_on_small_alphabets() {
        for freqs in [[1u64, 1, 1, 1], [10, 1, 3, 7], [2, 2, 3, 9], [100, 1, 1, 50]] {
            let t = HuffmanTable::from_frequencies(&freqs).unwrap();
            let cost: u64 = t.lengths().iter().zip(&freqs).map(|(&l, &f)| l as u64 * f).sum();
            assert_eq!(cost, brute_force_optimum(&freqs), "{freqs:?}");
        }
    }

    #[test]
    fn single_symbol_gets_one_bit() {
        let s = vec![4u32; 9];
        let (t, bytes, bits) = huffman_encode(&s).unwrap();
        assert_eq!(t.code(4), Some((0, 1)));
        assert_eq!(bits, 9);
        assert_eq!(huffman_decode(&t, &bytes, 9).unwrap(), s);
    }

    #[test]
    fn canonical_codes_are_consecutive() {
        let t = HuffmanTable::from_lengths(vec![2, 1, 3, 3]).unwrap();
        assert_eq!(t.code(1), Some((0b0, 1)));
        assert_eq!(t.code(0), Some((0b10, 2)));
        assert_eq!(t.code(2), Some((0b110, 3)));
        assert_eq!(t.code(3), Some((0b111, 3)));
    }

    #[test]
    fn corrupt_inputs() {
        assert!(matches!(huffman_encode(&[]), Err(Error::Input(_))));
        assert!(matches!(HuffmanTable::from_lengths(vec![1, 1, 1]), Err(Error::Corrupt(_))));
        assert!(matches!(HuffmanTable::from_lengths(vec![2, 2, 2]), Err(Error::Corrupt(_))));
        let t = HuffmanTable::from_lengths(vec![1, 1]).unwrap();
        let err = huffman_decode(&t, &[0b0100_0000], 9).unwrap_err();
        assert!(err.to_string().contains("bit 8"), "{err}");
        // Incomplete code space cannot occur for a valid table, so a stream
        // that runs past its end is the only decode failure.
        let t = HuffmanTable::from_lengths(vec![1, 2, 2]).unwrap();
        assert!(huffman_decode(&t, &[0xff], 5).is_err());
    }
}
