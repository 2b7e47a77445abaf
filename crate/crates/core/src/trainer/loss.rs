/// `w_c = min((N − n⁺_c) / max(n⁺_c, 1), cap)` over the rows of `labels`.
pub fn class_weights(labels: &[Vec<u8>], classes: usize, cap: f64) -> Vec<f64> {
    let n = labels.len() as f64;
    (0..classes)
        .map(|c| {
            let pos = labels.iter().filter(|row| row[c] == 1).count() as f64;
            ((n - pos) / pos.max(1.0)).min(cap)
        })
        .collect()
}

/// `y' = (1 − ε)·y + ε/2`, evaluated as `y + ε·(1/2 − y)`.
pub fn smooth_targets(y: &[f64], eps: f64) -> Vec<f64> {
    y.iter().map(|&v| v + eps * (0.5 - v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        let rows = |n: usize, pos: usize| (0..n).map(|i| vec![(i < pos) as u8]).collect::<Vec<_>>();
        assert_eq!(class_weights(&rows(1000, 50), 1, 15.0), vec![15.0]);
        assert_eq!(class_weights(&rows(100, 40), 1, 15.0), vec![1.5]);
        assert_eq!(class_weights(&rows(20, 0), 1, 15.0), vec![15.0]);
    }

    #[test]
    fn smoothing_fixed_points() {
        assert_eq!(smooth_targets(&[1.0, 0.0, 0.5], 0.1), vec![0.95, 0.05, 0.5]);
    }
}
