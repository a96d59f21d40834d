//! Counter-based random number streams.
//!
//! Every variate is a pure function of `(seed, stream_id, lane, counter)`, so
//! replicates can be generated in any order, on any number of threads, with
//! bit-identical results. Normal variates come from the inverse CDF applied to
//! a 53-bit uniform, which keeps test vectors reproducible across languages.

use statrs::distribution::{ContinuousCDF, Normal};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random-access uniform stream keyed by (seed, stream_id, lane).
#[derive(Debug, Clone, Copy)]
pub struct CounterStream {
    key: u64,
}

impl CounterStream {
    pub fn new(seed: u64, stream_id: u64, lane: u64) -> Self {
        let key = mix(seed ^ mix(stream_id.wrapping_add(GOLDEN) ^ mix(lane.wrapping_add(1))));
        CounterStream { key }
    }

    /// Uniform draw in the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        let v = mix(self.key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)));
        ((v >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw by inverse CDF.
    #[inline]
    pub fn normal(&self, counter: u64) -> f64 {
        standard_normal_quantile(self.uniform(counter))
    }
}

#[inline]
pub fn standard_normal_quantile(u: f64) -> f64 {
    // Normal::new(0,1) is a zero-cost constructor in statrs.
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(u)
}

/// Brownian increment source for one replicate.
///
/// Lane 0 carries the fine-grid increments; lane 1 carries the independent
/// standard normals consumed by the discrete autoregression.
#[derive(Debug, Clone, Copy)]
pub struct BrownianDriver {
    pub seed: u64,
    pub stream_id: u64,
    pub dt: f64,
    fine: CounterStream,
    aux: CounterStream,
}

impl BrownianDriver {
    pub fn new(seed: u64, stream_id: u64, dt: f64) -> Self {
        assert!(dt > 0.0 && dt.is_finite());
        BrownianDriver {
            seed,
            stream_id,
            dt,
            fine: CounterStream::new(seed, stream_id, 0),
            aux: CounterStream::new(seed, stream_id, 1),
        }
    }

    /// i-th Brownian increment, distributed N(0, dt).
    #[inline]
    pub fn increment(&self, i: u64) -> f64 {
        self.dt.sqrt() * self.fine.normal(i)
    }

    pub fn increments(&self, count: usize) -> Vec<f64> {
        (0..count as u64).map(|i| self.increment(i)).collect()
    }

    /// i-th standard normal on the independent lane.
    #[inline]
    pub fn aux_normal(&self, i: u64) -> f64 {
        self.aux.normal(i)
    }

    /// Same stream re-keyed to a different step size.
    pub fn with_dt(&self, dt: f64) -> Self {
        BrownianDriver::new(self.seed, self.stream_id, dt)
    }

    /// Derived stream, statistically independent of this one.
    pub fn substream(&self, salt: u64) -> Self {
        BrownianDriver::new(mix(self.seed ^ mix(salt.wrapping_add(GOLDEN))), self.stream_id, self.dt)
    }
}

/// Sum groups of `factor` fine increments into coarse increments.
pub fn coarsen(increments: &[f64], factor: usize) -> Vec<f64> {
    assert!(factor >= 1 && increments.len() % factor == 0);
    increments
        .chunks(factor)
        .map(|c| c.iter().sum::<f64>())
        .collect()
}
