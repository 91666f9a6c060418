use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-8;

/// Divides rewards by a running standard deviation (Welford). No mean is
/// subtracted, so zero stays zero and signs are preserved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RewardNormalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Population standard deviation of everything seen so far.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }

    pub fn observe(&mut self, r: f64) {
        self.count += 1;
        let delta = r - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (r - self.mean);
    }

    /// Folds `r` into the statistics and returns it scaled. The first
    /// sample passes through unchanged.
    pub fn normalize(&mut self, r: f64) -> f64 {
        self.observe(r);
        if self.count == 1 {
            r
        } else {
            r / (self.std() + EPS)
        }
    }

    pub fn normalize_all(&mut self, rs: &mut [f64]) {
        for r in rs {
            *r = self.normalize(*r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ficm_numerics::Rng;

    #[test]
    fn first_sample_passes_through() {
        let mut n = RewardNormalizer::new();
        assert_eq!(n.normalize(3.5), 3.5);
    }

    #[test]
    fn zeros_stay_zero() {
        let mut n = RewardNormalizer::new();
        for _ in 0..100 {
            assert_eq!(n.normalize(0.0), 0.0);
        }
    }

    #[test]
    fn constant_stream_stays_finite() {
        let mut n = RewardNormalizer::new();
        for _ in 0..1000 {
            let v = n.normalize(0.25);
            assert!(v.is_finite() && v > 0.0 && v <= 0.25 / EPS);
        }
    }

    #[test]
    fn iid_stream_gets_unit_scale() {
        let mut rng = Rng::new(42);
        let mut n = RewardNormalizer::new();
        let out: Vec<f64> = (0..10_000)
            .map(|_| n.normalize(3.0 * rng.uniform()))
            .collect();
        let tail = &out[1000..];
        let m = tail.iter().sum::<f64>() / tail.len() as f64;
        let sd = (tail.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / tail.len() as f64).sqrt();
        assert!((sd - 1.0).abs() < 0.1, "std {sd}");
    }
}
