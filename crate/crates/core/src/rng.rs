//! Seeded random streams: SplitMix64 seeding feeding xoshiro256**.
//!
//! Every draw used by the simulator goes through [`RngStream`], so a
//! `(seed, stream_id)` pair pins the whole output sequence on any platform.
//! The derived draws are:
//!
//! * `next_f64`: the top 53 bits of one `next_u64`, scaled by 2^-53.
//! * `below(n)`: Lemire's multiply-shift with rejection; usually one
//!   `next_u64`, more only when the low product word falls in the biased zone.
//! * `bernoulli(p)`: one `next_f64`, success when it is `< p`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_MIX: u64 = 0xD1B5_4A32_D192_ED03;

/// SplitMix64, used for seeding and for deriving per-trial seeds.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Seed for trial `index` of a run with master seed `master`:
/// the first SplitMix64 output seeded with `master ^ index`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    SplitMix64::new(master ^ index).next_u64()
}

/// A xoshiro256** generator tagged with the stream it was derived from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: [u64; 4],
    stream_id: u64,
}

impl RngStream {
    /// Seeds the four state words with consecutive SplitMix64 outputs,
    /// starting from `seed ^ (stream_id * 0xD1B54A32D192ED03)`.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut sm = SplitMix64::new(seed ^ stream_id.wrapping_mul(STREAM_MIX));
        let mut state = [0u64; 4];
        for word in &mut state {
            *word = sm.next_u64();
        }
        // The all-zero state is a fixed point; SplitMix64 never emits four
        // zeros in a row, but keep the guard explicit.
        if state == [0; 4] {
            state[0] = GOLDEN_GAMMA;
        }
        Self { state, stream_id }
    }

    /// Builds a generator from raw state words (used for reference vectors).
    pub fn from_state(state: [u64; 4]) -> Self {
        Self { state, stream_id: 0 }
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn state(&self) -> [u64; 4] {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. Panics when `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) has an empty range");
        let mut m = (self.next_u64() as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                m = (self.next_u64() as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Uniform index into a slice of length `n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller (two uniforms per call, second value discarded).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Poisson sample; Knuth's product method for small means, a rounded
    /// normal approximation above 60.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        if mean > 60.0 {
            let x = mean + mean.sqrt() * self.normal();
            return x.round().max(0.0) as u64;
        }
        let limit = (-mean).exp();
        let mut k = 0u64;
        let mut prod = self.next_f64();
        while prod > limit {
            k += 1;
            prod *= self.next_f64();
        }
        k
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
