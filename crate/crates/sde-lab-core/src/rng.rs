//! Counter-based random number generation.
//!
//! Every Monte Carlo path owns an independent stream derived from
//! `(seed, path_index)` alone, so path `k` produces the same draws whether
//! the ensemble is generated serially, in parallel, or path-by-path on
//! demand. That is what makes reruns and serial/parallel comparisons
//! byte-identical, and it lets large ensembles be regenerated instead of
//! stored.

use crate::math;

/// SplitMix64 step: mixes a 64-bit state into a well-distributed output.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic per-path stream of uniforms and standard normals.
#[derive(Debug, Clone)]
pub struct PathStream {
    state: u64,
    spare_normal: Option<f64>,
}

impl PathStream {
    /// Stream for path `path` of the ensemble seeded with `seed`.
    ///
    /// The two words are mixed through two SplitMix64 rounds before use so
    /// that nearby `(seed, path)` pairs land in unrelated states.
    pub fn new(seed: u64, path: u64) -> Self {
        let mut state = seed;
        let a = splitmix64(&mut state);
        let mut state = a ^ path.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let b = splitmix64(&mut state);
        PathStream { state: b, spare_normal: None }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform draw in `(0, 1]`: the top 53 bits, offset by one ulp so the
    /// logarithm in Box-Muller never sees zero.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        let bits = self.next_u64() >> 11;
        (bits as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw via Box-Muller; the paired draw is cached.
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = 2.0 * math::PI * u2;
        self.spare_normal = Some(r * math::sin(theta));
        r * math::cos(theta)
    }

    /// Fills `out` with independent normal draws.
    #[inline]
    pub fn fill_normals(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_normal();
        }
    }
}
