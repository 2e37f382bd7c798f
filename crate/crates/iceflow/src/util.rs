//! Small numeric helpers shared across modules.

/// Kahan (compensated) summation. Keeps large reductions stable enough that
/// permuting the inputs moves the result by well under 1e-10 relative.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Compensated sum of an iterator.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = KahanSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// SplitMix64 step; used to derive independent sub-seeds from a base seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Least-squares slope of y against x.
pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_is_permutation_stable() {
        let mut xs: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1009) as f64 * 1e-3 + 1e6).collect();
        let a = kahan_sum(xs.iter().copied());
        xs.reverse();
        let b = kahan_sum(xs.iter().copied());
        assert!((a - b).abs() / a.abs() < 1e-14);
    }

    #[test]
    fn slope_of_line_is_exact() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert!((linear_slope(&x, &y) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn mixed_seeds_differ_by_stream() {
        assert_ne!(mix_seed(42, 0), mix_seed(42, 1));
        assert_eq!(mix_seed(42, 3), mix_seed(42, 3));
    }
}
