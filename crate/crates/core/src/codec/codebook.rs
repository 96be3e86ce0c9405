use crate::error::{Error, Result};

pub const MAX_CODEBOOK: usize = 1 << 16;

/// Sorted table of the distinct values of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub values: Vec<f64>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bits needed for a fixed-width index into the table; at least 1.
    pub fn index_width(&self) -> u32 {
        let n = self.values.len().max(2);
        usize::BITS - (n - 1).leading_zeros()
    }

    pub fn lookup(&self, indices: &[u32]) -> Result<Vec<f64>> {
        indices
            .iter()
            .map(|&i| {
                self.values.get(i as usize).copied().ok_or_else(|| {
                    Error::Corrupt(format!("codebook index {i} out of {}", self.values.len()))
                })
            })
            .collect()
    }
}

/// Replaces each value by its position in a sorted table of distinct values.
/// Values are compared bit-for-bit, so the reconstruction is exact.
pub fn build_codebook(values: &[f64]) -> Result<(Codebook, Vec<u32>)> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Input(format!("cannot build a codebook over {v}")));
    }
    let mut table = values.to_vec();
    table.sort_by(f64::total_cmp);
    table.dedup_by(|a, b| a.to_bits() == b.to_bits());
    if table.len() > MAX_CODEBOOK {
        return Err(Error::Input(format!(
            "{} distinct values exceed the codebook limit of {MAX_CODEBOOK}",
            table.len()
        )));
    }
    let indices = values
        .iter()
        .map(|v| table.binary_search_by(|t| t.total_cmp(v)).unwrap() as u32)
        .collect();
    Ok((Codebook { values: table }, indices))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths() {
        let (cb, idx) = build_codebook(&[0.5; 7]).unwrap();
        assert_eq!((cb.len(), cb.index_width()), (1, 1));
        assert_eq!(idx, vec![0; 7]);
        let six = [0.3, -0.1, 0.2, 0.25, -0.4, 0.05];
        let (cb, _) = build_codebook(&six).unwrap();
        assert_eq!(cb.index_width(), 3);
        let (cb, _) = build_codebook(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(cb.index_width(), 2);
        let (cb, _) = build_codebook(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(cb.index_width(), 3);
    }

    #[test]
    fn reconstruction_is_exact() {
        let vals = [0.1 + 0.2, -0.25, 0.3, 0.1 + 0.2, -0.25, 1e-300];
        let (cb, idx) = build_codebook(&vals).unwrap();
        assert_eq!(cb.len(), 4);
        assert_eq!(cb.lookup(&idx).unwrap(), vals);
        assert!(matches!(cb.lookup(&[9]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn overflow_is_rejected() {
        let vals: Vec<f64> = (0..=MAX_CODEBOOK).map(|i| i as f64).collect();
        assert!(matches!(build_codebook(&vals), Err(Error::Input(_))));
        assert!(build_codebook(&vals[..MAX_CODEBOOK]).is_ok());
    }
}
