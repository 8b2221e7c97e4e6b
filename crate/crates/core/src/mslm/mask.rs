/// Segmental attention mask over `len` positions, row-major
/// `[query][key]`, `true` meaning visible. Query `q` sees key `s` iff
/// `s <= q` or `s >= q + k + 1`, so the span `q+1..=q+k` it has to predict
/// is hidden. Shared by every head and layer.
pub fn build_segmental_mask(len: usize, k: usize) -> Vec<bool> {
    let mut mask = vec![false; len * len];
    for q in 0..len {
        for s in 0..len {
            mask[q * len + s] = s <= q || s > q + k;
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn visible(mask: &[bool], len: usize, q: usize) -> Vec<usize> {
        (0..len).filter(|&s| mask[q * len + s]).collect()
    }

    #[test]
    fn hides_the_predicted_span() {
        let m = build_segmental_mask(8, 2);
        assert_eq!(visible(&m, 8, 3), vec![0, 1, 2, 3, 6, 7]);
    }

    #[test]
    fn long_segments_give_a_causal_mask() {
        let len = 6;
        let m = build_segmental_mask(len, len);
        for q in 0..len {
            assert_eq!(visible(&m, len, q), (0..=q).collect::<Vec<_>>());
        }
    }

    #[test]
    fn every_query_sees_itself() {
        let m = build_segmental_mask(5, 1);
        for q in 0..5 {
            assert!(m[q * 5 + q]);
        }
    }
}
