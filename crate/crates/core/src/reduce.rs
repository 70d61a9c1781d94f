//! Deterministic summation. Every reduction over nodes goes through
//! [`pairwise_sum`] so results do not depend on the worker count.

const LEAF: usize = 64;

/// Pairwise (tree) summation with a fixed split pattern.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sum of `f(i)` over the indices where `mask` holds, in index order.
pub fn masked_sum(mask: &[bool], f: impl Fn(usize) -> f64) -> f64 {
    let terms: Vec<f64> = (0..mask.len()).filter(|&i| mask[i]).map(f).collect();
    pairwise_sum(&terms)
}

/// Numerically stable `log Σ exp(xᵢ)`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let terms: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    m + pairwise_sum(&terms).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_match_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-10);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn lse_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
