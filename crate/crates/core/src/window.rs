//! Temporal neighbourhoods around a target frame.

/// Indices of the `count` frames nearest to `target` in a sequence of `len`.
///
/// Candidates are ordered by temporal distance, the earlier frame first on
/// ties, so the window is split as evenly as possible before and after the
/// target. Near the ends of the sequence the remaining slots are taken from
/// the other side; the result is shorter than `count` only when the sequence
/// itself is too short. The target is never included.
pub fn neighbor_window(len: usize, target: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut distance = 1;
    while out.len() < count && (distance <= target || target + distance < len) {
        if distance <= target && out.len() < count {
            out.push(target - distance);
        }
        if target + distance < len && out.len() < count {
            out.push(target + distance);
        }
        distance += 1;
    }
    out
}

/// Normalised reciprocal-distance weights, `w_k ∝ 1 / |k - target|`.
pub fn reciprocal_distance_weights(target: usize, neighbors: &[usize]) -> Vec<f64> {
    let raw: Vec<f64> = neighbors
        .iter()
        .map(|&k| 1.0 / (k as f64 - target as f64).abs())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_balanced_in_the_middle() {
        assert_eq!(neighbor_window(20, 10, 4), vec![9, 11, 8, 12]);
        assert_eq!(neighbor_window(20, 10, 5), vec![9, 11, 8, 12, 7]);
    }

    #[test]
    fn window_borrows_from_the_far_side_at_ends() {
        assert_eq!(neighbor_window(10, 0, 4), vec![1, 2, 3, 4]);
        assert_eq!(neighbor_window(10, 9, 3), vec![8, 7, 6]);
        assert_eq!(neighbor_window(10, 1, 4), vec![0, 2, 3, 4]);
    }

    #[test]
    fn window_truncates_on_short_sequences() {
        assert_eq!(neighbor_window(3, 1, 6), vec![0, 2]);
        assert!(neighbor_window(1, 0, 4).is_empty());
        assert!(neighbor_window(5, 2, 0).is_empty());
    }

    #[test]
    fn weights_sum_to_one_and_decay() {
        let w = reciprocal_distance_weights(10, &[9, 11, 8, 12]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[0], w[1]);
        assert!(w[2] < w[0]);
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
    }
}
