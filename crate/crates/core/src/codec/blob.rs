use serde::{Deserialize, Serialize};

use super::bits::{BitReader, BitWriter};
use super::codebook::build_codebook;
use super::csr::{naive_rate, to_csr};
use super::huffman::HuffmanTable;
use super::relidx::{rel_decode, rel_encode, RelIndexStream, MAX_INDEX_BITS};
use super::DENSE_BITS;
use crate::error::{Error, Result};
use crate::le::{ByteReader, PutLe};
use crate::network::{Activation, Layer, Network};
use crate::postprocess::QuantizedNetwork;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SWSB";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Fc,
    Conv,
}

impl LayerKind {
    fn tag(self) -> u8 {
        match self {
            LayerKind::Fc => 0,
            LayerKind::Conv => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(LayerKind::Fc),
            1 => Some(LayerKind::Conv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub kind: LayerKind,
    pub rows: usize,
    pub cols: usize,
    pub weights: usize,
    pub nonzero: usize,
    pub pruned_percent: f64,
    /// Stored relative-index entries, fillers included.
    pub entries: usize,
    pub fillers: usize,
    pub p: u8,
    pub p_prun: u8,
    pub codebook_size: usize,
    pub naive_rate: f64,
    pub dense_bits: usize,
    /// A, IR and IC each at the dense width.
    pub csr_bits: usize,
    pub ir_bits: usize,
    /// IC as fixed `p`-bit gaps, then after Huffman coding.
    pub ic_fixed_bits: usize,
    pub ic_bits: usize,
    /// A as fixed-width codebook indices, then after Huffman coding.
    pub a_fixed_bits: usize,
    pub a_bits: usize,
    pub codebook_bits: usize,
    pub table_bits: usize,
    pub bias_bits: usize,
    /// Everything this layer occupies in the blob, padding included.
    pub total_bits: usize,
    pub compression_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub layers: Vec<LayerReport>,
    pub weights: usize,
    pub nonzero: usize,
    pub pruned_percent: f64,
    pub dense_bits: usize,
    /// IR, IC and A payload bits only.
    pub payload_bits: usize,
    /// Byte length of the blob times eight.
    pub total_bits: usize,
    pub compression_rate: f64,
    pub compression_rate_without_overhead: f64,
    pub error_before: Option<f64>,
    pub error_after: Option<f64>,
    /// Mixture components left after merging, the zero component included.
    pub components: Option<usize>,
}

impl CompressionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn width_for(max: usize) -> u8 {
    (usize::BITS - max.leading_zeros()) as u8
}

fn pack_fixed(values: impl Iterator<Item = usize>, width: u8) -> Vec<u8> {
    let mut w = BitWriter::new();
    for v in values {
        w.write(v as u64, width as u32);
    }
    w.finish()
}

/// Writes every layer of `q` in the sparse format and accounts for each bit.
///
/// Per row, column positions become relative gaps of width `p` (fillers
/// bridge longer gaps); each stored value is its codebook position plus one,
/// with 0 reserved for fillers. Gaps and values are Huffman coded. IR counts
/// stored entries, fillers included, at the smallest width that holds them.
pub fn encode_network(q: &QuantizedNetwork, p_fc: u8, p_conv: u8) -> Result<(Vec<u8>, CompressionReport)> {
    for p in [p_fc, p_conv] {
        if !(1..=MAX_INDEX_BITS).contains(&p) {
            return Err(Error::Config(format!(
                "index bit width must be in 1..={MAX_INDEX_BITS}, got {p}"
            )));
        }
    }
    q.validate()?;
    if q.layers.len() > u16::MAX as usize {
        return Err(Error::Input("too many layers".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.put_u16(VERSION);
    out.put_u16(q.layers.len() as u16);

    let mut reports = Vec::with_capacity(q.layers.len());
    for (li, layer) in q.layers.iter().enumerate() {
        let kind = LayerKind::Fc;
        let p = match kind {
            LayerKind::Fc => p_fc,
            LayerKind::Conv => p_conv,
        };
        if layer.rows > u32::MAX as usize || layer.cols > u32::MAX as usize {
            return Err(Error::Input(format!("layer {li} is too large")));
        }
        let start = out.len();
        let dense = layer.weights(&q.means);
        let csr = to_csr(&dense, layer.rows, layer.cols)?;
        let (codebook, indices) = build_codebook(&csr.a)?;
        if codebook.len() >= u16::MAX as usize {
            return Err(Error::Input(format!("layer {li} has too many distinct weights")));
        }

        let mut stream = RelIndexStream { p, gaps: Vec::new(), values: Vec::new() };
        let mut entry_ir = vec![0usize];
        for r in 0..layer.rows {
            let span = csr.ir[r]..csr.ir[r + 1];
            let symbols: Vec<u32> = indices[span.clone()].iter().map(|i| i + 1).collect();
            let row = rel_encode(&csr.ic[span], &symbols, p)?;
            stream.gaps.extend(row.gaps);
            stream.values.extend(row.values);
            entry_ir.push(stream.len());
        }
        let entries = stream.len();
        if entries > u32::MAX as usize {
            return Err(Error::Input(format!("layer {li} has too many entries")));
        }
        let p_prun = width_for(entries);

        out.put_u8(kind.tag());
        out.put_u32(layer.rows as u32);
        out.put_u32(layer.cols as u32);
        out.put_u8(p);
        out.put_u8(p_prun);
        out.put_u16(codebook.len() as u16);
        for &v in &codebook.values {
            out.put_f64(v);
        }
        out.put_u32(entries as u32);

        let (mut ic_bits, mut a_bits, mut table_bits) = (0, 0, 0);
        let mut payloads = Vec::new();
        if entries > 0 {
            let gap_table = HuffmanTable::from_symbols(&stream.gaps, 1 << p)?;
            let value_table = HuffmanTable::from_symbols(&stream.values, codebook.len() + 1)?;
            for t in [&gap_table, &value_table] {
                out.extend_from_slice(t.lengths());
                table_bits += 8 * t.alphabet();
            }
            let mut w = BitWriter::new();
            gap_table.encode(&stream.gaps, &mut w)?;
            ic_bits = w.bit_len();
            payloads.push(w.finish());
            let mut w = BitWriter::new();
            value_table.encode(&stream.values, &mut w)?;
            a_bits = w.bit_len();
            payloads.push(w.finish());
        }
        out.extend_from_slice(&pack_fixed(entry_ir.iter().copied(), p_prun));
        for payload in payloads {
            out.extend_from_slice(&payload);
        }
        for &b in &layer.biases {
            out.put_f64(b);
        }

        let weights = layer.rows * layer.cols;
        let total_bits = 8 * (out.len() - start);
        let nonzero = csr.nonzeros();
        let a_width = width_for(codebook.len()).max(1);
        reports.push(LayerReport {
            kind,
            rows: layer.rows,
            cols: layer.cols,
            weights,
            nonzero,
            pruned_percent: pruned_percent(weights, nonzero),
            entries,
            fillers: entries - nonzero,
            p,
            p_prun,
            codebook_size: codebook.len(),
            naive_rate: naive_rate(&csr),
            dense_bits: DENSE_BITS * weights,
            csr_bits: DENSE_BITS * (2 * nonzero + layer.rows + 1),
            ir_bits: (layer.rows + 1) * p_prun as usize,
            ic_fixed_bits: entries * p as usize,
            ic_bits,
            a_fixed_bits: entries * a_width as usize,
            a_bits,
            codebook_bits: 16 + 64 * codebook.len(),
            table_bits,
            bias_bits: 64 * layer.biases.len(),
            total_bits,
            compression_rate: (DENSE_BITS * weights) as f64 / total_bits as f64,
        });
    }

    let weights: usize = reports.iter().map(|r| r.weights).sum();
    let nonzero: usize = reports.iter().map(|r| r.nonzero).sum();
    let payload_bits: usize = reports.iter().map(|r| r.ir_bits + r.ic_bits + r.a_bits).sum();
    let dense_bits = DENSE_BITS * weights;
    let total_bits = 8 * out.len();
    let report = CompressionReport {
        layers: reports,
        weights,
        nonzero,
        pruned_percent: pruned_percent(weights, nonzero),
        dense_bits,
        payload_bits,
        total_bits,
        compression_rate: dense_bits as f64 / total_bits as f64,
        compression_rate_without_overhead: dense_bits as f64 / payload_bits.max(1) as f64,
        error_before: None,
        error_after: None,
        components: None,
    };
    Ok((out, report))
}

fn pruned_percent(weights: usize, nonzero: usize) -> f64 {
    if weights == 0 {
        0.0
    } else {
        100.0 * (weights - nonzero) as f64 / weights as f64
    }
}

/// Reads a blob back into a dense network. Hidden layers use ReLU and the
/// last layer softmax.
pub fn decode_network(bytes: &[u8]) -> Result<Network> {
    let mut r = ByteReader::new(bytes, "weight blob");
    r.expect_magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Corrupt(format!("unsupported blob version {version}")));
    }
    let count = r.u16()? as usize;
    if count == 0 {
        return Err(Error::Corrupt("blob contains no layers".into()));
    }
    let mut layers = Vec::with_capacity(count);
    for li in 0..count {
        let corrupt = |m: String| Error::Corrupt(format!("layer {li}: {m}"));
        LayerKind::from_tag(r.u8()?).ok_or_else(|| corrupt("unknown layer type".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let p = r.u8()?;
        let p_prun = r.u8()?;
        if !(1..=MAX_INDEX_BITS).contains(&p) || p_prun > 32 {
            return Err(corrupt(format!("bad bit widths {p}/{p_prun}")));
        }
        let cb_len = r.u16()? as usize;
        let codebook = r.f64s(cb_len)?;
        let entries = r.u32()? as usize;

        let tables = if entries > 0 {
            let gaps = HuffmanTable::from_lengths(r.take(1 << p)?.to_vec())?;
            let values = HuffmanTable::from_lengths(r.take(cb_len + 1)?.to_vec())?;
            Some((gaps, values))
        } else {
            None
        };

        let mut bits = BitReader::new(r.rest());
        let entry_ir = (0..=rows)
            .map(|_| bits.read(p_prun as u32).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        r.take(bits.bytes_consumed())?;
        if entry_ir[0] != 0 || entry_ir[rows] != entries || entry_ir.windows(2).any(|w| w[0] > w[1]) {
            return Err(corrupt("inconsistent row offsets".into()));
        }

        let mut dense = vec![0.0; rows * cols];
        if let Some((gap_table, value_table)) = tables {
            let mut bits = BitReader::new(r.rest());
            let gaps = gap_table.decode(&mut bits, entries)?;
            r.take(bits.bytes_consumed())?;
            let mut bits = BitReader::new(r.rest());
            let values = value_table.decode(&mut bits, entries)?;
            r.take(bits.bytes_consumed())?;
            for row in 0..rows {
                let span = entry_ir[row]..entry_ir[row + 1];
                let (cols_in_row, symbols) = rel_decode(&RelIndexStream {
                    p,
                    gaps: gaps[span.clone()].to_vec(),
                    values: values[span].to_vec(),
                })?;
                for (c, s) in cols_in_row.into_iter().zip(symbols) {
                    if c >= cols {
                        return Err(corrupt(format!("column {c} out of {cols}")));
                    }
                    dense[row * cols + c] = codebook[s as usize - 1];
                }
            }
        }
        let bias = r.f64s(rows)?;
        layers.push(Layer {
            weights: Tensor::new(vec![rows, cols], dense)?,
            bias: Tensor::new(vec![rows], bias)?,
            activation: if li + 1 == count { Activation::Softmax } else { Activation::Relu },
        });
    }
    r.finish()?;
    Network::new(layers)
}
