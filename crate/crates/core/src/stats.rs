//! Small numeric kernels shared by the derivation, sampling and reporting code.

use num_traits::Float;

pub fn mean<F: Float>(xs: &[F]) -> Option<F> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(F::zero(), |acc, &x| acc + x);
    Some(sum / F::from(xs.len()).unwrap())
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std<F: Float>(xs: &[F]) -> F {
    if xs.len() < 2 {
        return F::zero();
    }
    let m = mean(xs).unwrap();
    let ss = xs.iter().fold(F::zero(), |acc, &x| acc + (x - m) * (x - m));
    (ss / F::from(xs.len() - 1).unwrap()).sqrt()
}

/// Weighted arithmetic mean over `(weight, value)` pairs. `None` when the
/// weights sum to zero.
pub fn weighted_mean<F: Float>(pairs: impl IntoIterator<Item = (F, F)>) -> Option<F> {
    let (wsum, acc) = pairs
        .into_iter()
        .fold((F::zero(), F::zero()), |(ws, acc), (w, x)| (ws + w, acc + w * x));
    (wsum > F::zero()).then(|| acc / wsum)
}

/// Nearest-rank index for quantile `q` over `n` items: `ceil(q * n)`, 1-based.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    // 0.9 * 10 is 9.000000000000002 in binary; shave the representation noise
    // before taking the ceiling.
    let raw = q * n as f64;
    let k = (raw - 1e-9 * raw.abs().max(1.0)).ceil();
    (k.max(1.0) as usize).min(n.max(1))
}

/// One-sample Kolmogorov-Smirnov statistic `sup |F_n - F|`.
///
/// `cdf` is the reference CDF and `cdf_left` its left limit `F(x-)`; they
/// differ only at atoms (for example a clamped upper bound). Ties in the
/// sample are handled by evaluating at distinct values.
pub fn ks_statistic<F, C, L>(samples: &mut [F], cdf: C, cdf_left: L) -> F
where
    F: Float,
    C: Fn(F) -> F,
    L: Fn(F) -> F,
{
    samples.sort_by(|a, b| a.partial_cmp(b).expect("NaN in KS sample"));
    let n = F::from(samples.len()).unwrap();
    let mut d = F::zero();
    let mut i = 0;
    while i < samples.len() {
        let x = samples[i];
        let mut j = i;
        while j < samples.len() && samples[j] == x {
            j += 1;
        }
        let below = F::from(i).unwrap() / n;
        let at = F::from(j).unwrap() / n;
        d = d.max((below - cdf_left(x)).abs()).max((at - cdf(x)).abs());
        i = j;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_std() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&xs), Some(5.0));
        assert!((sample_std(&xs) - 2.138_089_935).abs() < 1e-8);
        assert_eq!(sample_std(&[3.0f32]), 0.0);
        assert_eq!(mean::<f64>(&[]), None);
    }

    #[test]
    fn weighted_mean_examples() {
        assert_eq!(weighted_mean([(10.0, 100.0), (30.0, 200.0)]), Some(175.0));
        assert_eq!(weighted_mean([(1.0f32, 10.0), (3.0, 30.0)]), Some(25.0));
        assert_eq!(weighted_mean([(0.0, 1.0)]), None);
    }

    #[test]
    fn nearest_rank_examples() {
        assert_eq!(nearest_rank(0.5, 4), 2);
        assert_eq!(nearest_rank(1.0, 4), 4);
        assert_eq!(nearest_rank(0.9, 10), 9);
        assert_eq!(nearest_rank(0.91, 10), 10);
        assert_eq!(nearest_rank(0.001, 10), 1);
    }

    #[test]
    fn ks_against_uniform() {
        let mut xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_statistic(&mut xs, |x| x, |x| x);
        assert!((d - 0.005).abs() < 1e-12);
    }

    #[test]
    fn ks_handles_atoms() {
        // Half the mass sits at 1.0; reference has the same atom.
        let mut xs = vec![0.25, 0.75, 1.0, 1.0];
        let cdf = |x: f64| if x >= 1.0 { 1.0 } else { x * 0.5 };
        let left = |x: f64| if x >= 1.0 { 0.5 } else { x * 0.5 };
        let d = ks_statistic(&mut xs, cdf, left);
        assert!((d - 0.125).abs() < 1e-12, "{d}");
    }
}
