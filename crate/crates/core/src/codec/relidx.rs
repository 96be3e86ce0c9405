use crate::error::{Error, Result};

pub const MAX_INDEX_BITS: u8 = 16;

/// Column positions stored as gaps in `p` bits. A gap `g ≥ 1` is stored as
/// `g - 1`. Gaps wider than `2^p` are bridged by filler entries, each
/// advancing the position by `2^p` and carrying the zero value.
#[derive(Debug, Clone, PartialEq)]
pub struct RelIndexStream<T> {
    pub p: u8,
    pub gaps: Vec<u32>,
    pub values: Vec<T>,
}

impl<T> RelIndexStream<T> {
    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }
}

fn check_width(p: u8) -> Result<()> {
    if !(1..=MAX_INDEX_BITS).contains(&p) {
        return Err(Error::Config(format!(
            "index bit width must be in 1..={MAX_INDEX_BITS}, got {p}"
        )));
    }
    Ok(())
}

/// Encodes strictly increasing `indices` with their non-zero `values`.
pub fn rel_encode<T: Copy + Default + PartialEq>(
    indices: &[usize],
    values: &[T],
    p: u8,
) -> Result<RelIndexStream<T>> {
    check_width(p)?;
    if indices.len() != values.len() {
        return Err(Error::Input(format!(
            "{} indices but {} values",
            indices.len(),
            values.len()
        )));
    }
    let span = 1usize << p;
    let mut out = RelIndexStream {
        p,
        gaps: Vec::with_capacity(indices.len()),
        values: Vec::with_capacity(values.len()),
    };
    let mut prev: isize = -1;
    for (&idx, &v) in indices.iter().zip(values) {
        if idx as isize <= prev {
            return Err(Error::Input(format!(
                "indices must be strictly increasing ({idx} after {prev})"
            )));
        }
        if v == T::default() {
            return Err(Error::Input(format!(
                "index {idx} carries the zero value, which is reserved for fillers"
            )));
        }
        let mut gap = (idx as isize - prev) as usize;
        while gap > span {
            out.gaps.push((span - 1) as u32);
            out.values.push(T::default());
            gap -= span;
        }
        out.gaps.push((gap - 1) as u32);
        out.values.push(v);
        prev = idx as isize;
    }
    Ok(out)
}

/// Inverse of [`rel_encode`]; filler entries are dropped.
pub fn rel_decode<T: Copy + Default + PartialEq>(s: &RelIndexStream<T>) -> Result<(Vec<usize>, Vec<T>)> {
    check_width(s.p)?;
    if s.gaps.len() != s.values.len() {
        return Err(Error::Corrupt("gap and value streams differ in length".into()));
    }
    let mut indices = Vec::with_capacity(s.len());
    let mut values = Vec::with_capacity(s.len());
    let mut pos: isize = -1;
    for (&g, &v) in s.gaps.iter().zip(&s.values) {
        if g >> s.p != 0 {
            return Err(Error::Corrupt(format!("stored gap {g} exceeds {} bits", s.p)));
        }
        pos += g as isize + 1;
        if v != T::default() {
            indices.push(pos as usize);
            values.push(v);
        }
    }
    Ok((indices, values))
}
