//! Segmentations of a character sequence, and their boundary-vector and
//! space-separated text forms.

use crate::error::{Error, Result};

/// Segment end offsets: strictly increasing, last one equal to the sequence
/// length. The start of the first segment (0) is implicit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Segmentation {
    len: usize,
    ends: Vec<usize>,
}

impl Segmentation {
    pub fn from_ends(len: usize, ends: Vec<usize>) -> Result<Self> {
        let mut prev = 0;
        for &e in &ends {
            if e <= prev {
                return Err(Error::InvalidArgument(format!("segment ends not strictly increasing: {ends:?}")));
            }
            prev = e;
        }
        if prev != len {
            return Err(Error::InvalidArgument(format!(
                "segment ends {ends:?} do not cover a sequence of length {len}"
            )));
        }
        Ok(Segmentation { len, ends })
    }

    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        let mut ends = Vec::with_capacity(lengths.len());
        let mut at = 0;
        for &l in lengths {
            at += l;
            ends.push(at);
        }
        Self::from_ends(at, ends)
    }

    /// Gap indices `g` in `1..len` meaning "boundary after character g".
    pub fn from_boundaries(len: usize, boundaries: &[usize]) -> Result<Self> {
        if let Some(&b) = boundaries.iter().find(|&&b| b == 0 || b >= len) {
            return Err(Error::InvalidArgument(format!("boundary {b} outside 1..{len}")));
        }
        let mut ends = boundaries.to_vec();
        ends.sort_unstable();
        ends.dedup();
        if len > 0 {
            ends.push(len);
        }
        Self::from_ends(len, ends)
    }

    /// One segment spanning the whole sequence.
    pub fn whole(len: usize) -> Self {
        Segmentation {
            len,
            ends: if len == 0 { Vec::new() } else { vec![len] },
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    pub fn num_segments(&self) -> usize {
        self.ends.len()
    }

    /// Interior boundaries, i.e. every end but the last.
    pub fn boundaries(&self) -> &[usize] {
        &self.ends[..self.ends.len().saturating_sub(1)]
    }

    /// Half-open `(start, end)` character spans.
    pub fn spans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let starts = std::iter::once(0).chain(self.ends.iter().copied());
        starts.zip(self.ends.iter().copied())
    }

    pub fn lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.spans().map(|(s, e)| e - s)
    }

    pub fn max_segment_len(&self) -> usize {
        self.lengths().max().unwrap_or(0)
    }

    pub fn to_boundary_vector(&self) -> BoundaryVector {
        let mut bits = vec![false; self.len.saturating_sub(1)];
        for &b in self.boundaries() {
            bits[b - 1] = true;
        }
        BoundaryVector(bits)
    }

    pub fn from_boundary_vector(bv: &BoundaryVector) -> Self {
        let len = if bv.0.is_empty() { 1 } else { bv.0.len() + 1 };
        let boundaries: Vec<usize> = bv.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i + 1).collect();
        Self::from_boundaries(len, &boundaries).expect("boundary vector is always valid")
    }

    /// Joins the segments of `chars` with single spaces.
    pub fn render(&self, chars: &[char]) -> String {
        assert_eq!(chars.len(), self.len, "segmentation length mismatch");
        let mut out = String::with_capacity(self.len + self.ends.len());
        for (n, (s, e)) in self.spans().enumerate() {
            if n > 0 {
                out.push(' ');
            }
            out.extend(&chars[s..e]);
        }
        out
    }

    /// Splits whitespace-segmented text into its character stream and
    /// segmentation.
    pub fn parse(text: &str) -> (Vec<char>, Segmentation) {
        let mut chars = Vec::new();
        let mut ends = Vec::new();
        for tok in text.split_whitespace() {
            chars.extend(tok.chars());
            ends.push(chars.len());
        }
        let len = chars.len();
        (chars, Segmentation { len, ends })
    }
}

/// Per-gap boundary indicators of a line of `T` characters (`T - 1` bits).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryVector(pub Vec<bool>);

impl BoundaryVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_table_example() {
        let (chars, seg) = Segmentation::parse("k in ch'aw r uk' le nu nan");
        assert_eq!(chars.iter().collect::<String>(), "kinch'awruk'lenunan");
        assert_eq!(seg.boundaries(), &[1, 3, 8, 9, 12, 14, 16]);
        assert_eq!(seg.render(&chars), "k in ch'aw r uk' le nu nan");
    }

    #[test]
    fn rejects_bad_ends() {
        assert!(Segmentation::from_ends(3, vec![2, 2, 3]).is_err());
        assert!(Segmentation::from_ends(3, vec![1, 2]).is_err());
        assert!(Segmentation::from_boundaries(3, &[3]).is_err());
        assert!(Segmentation::from_boundaries(3, &[0]).is_err());
    }

    #[test]
    fn boundary_vector_round_trip() {
        let seg = Segmentation::from_lengths(&[1, 2, 3, 1]).unwrap();
        let bv = seg.to_boundary_vector();
        assert_eq!(bv.0, vec![true, false, true, false, false, true]);
        assert_eq!(Segmentation::from_boundary_vector(&bv), seg);
        let one = Segmentation::whole(1);
        assert!(one.to_boundary_vector().is_empty());
        assert_eq!(Segmentation::from_boundary_vector(&one.to_boundary_vector()), one);
    }

    #[test]
    fn segments_count_is_boundaries_plus_one() {
        let seg = Segmentation::from_boundaries(10, &[2, 5, 9]).unwrap();
        assert_eq!(seg.num_segments(), seg.boundaries().len() + 1);
        assert_eq!(seg.spans().collect::<Vec<_>>(), vec![(0, 2), (2, 5), (5, 9), (9, 10)]);
    }
}
