//! Small statistics helpers.

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either side has zero variance or the
/// lengths differ or are below 2.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Standard error of the mean with the n−1 sample deviation; 0 for n ≤ 1.
pub fn standard_error(x: &[f64]) -> f64 {
    let n = x.len();
    if n <= 1 {
        return 0.0;
    }
    let m = mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    // Coefficients below computed by hand from the rank vectors.
    #[test]
    fn hand_computed_coefficients() {
        // identical order
        assert!(close(spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap(), 1.0));
        // reversed
        assert!(close(spearman(&[1.0, 2.0, 3.0, 4.0], &[9.0, 7.0, 5.0, 1.0]).unwrap(), -1.0));
        // ranks x=[1..5], y=[2,1,4,3,5]: d²=1+1+1+1+0=4, ρ=1−6·4/(5·24)=0.8
        assert!(close(spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[20.0, 10.0, 40.0, 30.0, 50.0]).unwrap(), 0.8));
        // y ranks [1.5,1.5,3,4]: Pearson with [1,2,3,4] = 4.5/sqrt(5·4.5) = 0.9486832980505138
        assert!(close(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[7.0, 7.0, 8.0, 9.0]).unwrap(),
            4.5 / (5.0f64 * 4.5).sqrt()
        ));
        // x ranks [1,2,3,4,5,6], y = [3,3,1,5,5,2] → ranks [3.5,3.5,1,5.5,5.5,2]
        // Σdxdy = 1.5, Σdx² = 17.5, Σdy² = 16.5 → 1.5/sqrt(17.5·16.5)
        assert!(close(
            spearman(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3.0, 3.0, 1.0, 5.0, 5.0, 2.0]).unwrap(),
            1.5 / (17.5f64 * 16.5).sqrt()
        ));
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), None);
    }

    #[test]
    fn standard_error_basics() {
        assert_eq!(standard_error(&[0.7]), 0.0);
        // sd of [1,3] is sqrt(2); se = sqrt(2)/sqrt(2) = 1
        assert!(close(standard_error(&[1.0, 3.0]), 1.0));
    }
}
