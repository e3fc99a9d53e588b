use std::f64::consts::PI;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; bijective on u64.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Counter-based splittable RNG.
///
/// The stream is a pure function of (key, counter), so a clone replays the
/// stream and `split` derives statistically independent streams without
/// advancing the parent. All training randomness is keyed through `split`
/// chains (seed, epoch, step, example, purpose), which makes resumed runs
/// bit-identical to uninterrupted ones.
#[derive(Clone, Debug)]
pub struct SplitRng {
    key: u64,
    ctr: u64,
    cached_normal: Option<f64>,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        Self { key: mix(seed ^ GOLDEN), ctr: 0, cached_normal: None }
    }

    /// Derives an independent child stream; does not advance `self`.
    pub fn split(&self, tag: u64) -> Self {
        let key = mix(self.key ^ mix(tag.wrapping_mul(GOLDEN).wrapping_add(GOLDEN)));
        Self { key, ctr: 0, cached_normal: None }
    }

    /// `split` keyed by a string label (FNV-1a hashed).
    pub fn split_str(&self, tag: &str) -> Self {
        self.split(fnv1a(tag.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        let x = self.key.wrapping_add(self.ctr.wrapping_mul(GOLDEN)).wrapping_add(GOLDEN);
        self.ctr += 1;
        mix(x)
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe as a log argument.
    fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). n must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        self.next_u64() % n
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller; the paired draw is cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}
