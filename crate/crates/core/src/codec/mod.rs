//! Sparse storage of quantized networks: CSR layout, relative column
//! indexing with filler entries, a value codebook and canonical Huffman
//! coding, plus exact bit accounting.

pub mod bits;
pub mod blob;
pub mod codebook;
pub mod csr;
pub mod huffman;
pub mod relidx;

pub use blob::{decode_network, encode_network, CompressionReport, LayerKind, LayerReport};
pub use codebook::{build_codebook, Codebook};
pub use csr::{from_csr, naive_rate, to_csr, CsrMatrix};
pub use huffman::{huffman_decode, huffman_encode, HuffmanTable};
pub use relidx::{rel_decode, rel_encode, RelIndexStream};

/// Dense storage width the compression rate is measured against.
pub const DENSE_BITS: usize = 32;
pub const DEFAULT_P_FC: u8 = 5;
pub const DEFAULT_P_CONV: u8 = 8;
