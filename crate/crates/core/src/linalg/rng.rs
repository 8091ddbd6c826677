//! Deterministic random number generation.
//!
//! All stochastic pieces of the crate (initializers, data shuffling, test
//! probes) draw from this generator so that a `(seed, config)` pair pins a
//! run bit-for-bit. The integer core is xoshiro256++ seeded through
//! SplitMix64; both use only wrapping integer arithmetic, so the raw `u64`
//! stream is identical on every platform. Floating-point derivations
//! (`uniform`, `normal`) use IEEE-754 f64 operations plus `ln`/`cos`/`sqrt`.

/// Label for the generator family, recorded in logs for provenance.
pub const RNG_ALGORITHM: &str = "xoshiro256++ (splitmix64 seeded)";

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLITMIX_MIX1: u64 = 0xBF58_476D_1CE4_E5B9;
const SPLITMIX_MIX2: u64 = 0x94D0_49BB_1331_11EB;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(SPLITMIX_MIX1);
    z = (z ^ (z >> 27)).wrapping_mul(SPLITMIX_MIX2);
    z ^ (z >> 31)
}

/// Seeded xoshiro256++ stream with a cached Box-Muller spare.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    s: [u64; 4],
    spare_normal: Option<f64>,
}

impl Rng {
    /// Expands `seed` into the 256-bit xoshiro state via SplitMix64.
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng {
            seed,
            s,
            spare_normal: None,
        }
    }

    /// The seed this stream was constructed from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next raw 64-bit output (xoshiro256++ step).
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform f64 in [0, 1) with 53 random mantissa bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Rejection-free modulo bias is irrelevant at
    /// the n values used here (shuffles over at most a few million windows),
    /// but we use Lemire-style rejection anyway to keep the stream exact.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u64();
            let (hi, lo) = {
                let wide = (r as u128) * (n as u128);
                ((wide >> 64) as u64, wide as u64)
            };
            if lo >= threshold {
                return hi;
            }
        }
    }

    /// Standard normal via Box-Muller; the second value of each pair is
    /// cached so consecutive calls consume uniforms in a fixed pattern.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] so ln(u1) is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Derives an independent child stream; used to give each run in a sweep
    /// its own generator without coupling their consumption patterns.
    pub fn derive(&self, tag: u64) -> Rng {
        let mut sm = self.seed ^ tag.wrapping_mul(SPLITMIX_GAMMA);
        Rng::new(splitmix64(&mut sm))
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
