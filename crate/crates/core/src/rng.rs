//! Seeded splitmix64 PRNG plus portable elementary math.
//!
//! Everything here is built from IEEE-754 add/mul/div and integer ops only,
//! so identical seeds give bit-identical streams on every platform. The
//! libm-backed `f64::ln`/`powf` are avoided on purpose: their results vary
//! between platforms and would break byte-identical simulation output.

/// splitmix64 generator. Cheap, full 64-bit state, passes statistical tests
/// well enough for workload sampling and fault injection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Derive an independent stream for a named purpose.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut base = SplitMix64::new(seed);
        for _ in 0..=(stream & 0xF) {
            base.next_u64();
        }
        SplitMix64::new(base.next_u64() ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    /// Uniform f64 in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). n must be > 0.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    pub fn next_bool(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

const LN2: f64 = std::f64::consts::LN_2;

/// Portable natural logarithm. Max observed error vs a reference is below
/// 1e-14 relative over the range used here (positive finite inputs).
pub fn portable_ln(x: f64) -> f64 {
    assert!(x > 0.0 && x.is_finite(), "portable_ln domain: {x}");
    let bits = x.to_bits();
    let mut exp = ((bits >> 52) & 0x7FF) as i64 - 1023;
    let mut mant = f64::from_bits((bits & 0x000F_FFFF_FFFF_FFFF) | (1023u64 << 52));
    // Pull the mantissa into [sqrt(1/2), sqrt(2)) so the series converges fast.
    if mant > std::f64::consts::SQRT_2 {
        mant *= 0.5;
        exp += 1;
    }
    // ln(m) = 2 atanh((m-1)/(m+1)), atanh via odd power series.
    let u = (mant - 1.0) / (mant + 1.0);
    let u2 = u * u;
    let mut term = u;
    let mut sum = 0.0;
    let mut k = 1u32;
    while k <= 19 {
        sum += term / f64::from(k);
        term *= u2;
        k += 2;
    }
    2.0 * sum + exp as f64 * LN2
}

/// Portable e^x for moderate |x| (enough for Zipf weights and rate math).
pub fn portable_exp(x: f64) -> f64 {
    assert!(x.is_finite(), "portable_exp domain: {x}");
    assert!(x.abs() < 700.0, "portable_exp overflow range: {x}");
    // x = n ln2 + r with |r| <= ln2/2, then e^x = 2^n e^r.
    let n = (x / LN2 + if x >= 0.0 { 0.5 } else { -0.5 }) as i64;
    let r = x - n as f64 * LN2;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=16u32 {
        term *= r / f64::from(k);
        sum += term;
    }
    // Scale by 2^n through the exponent bits.
    let scale = f64::from_bits(((1023 + n) as u64) << 52);
    sum * scale
}

/// Portable x^y for x > 0.
pub fn portable_pow(x: f64, y: f64) -> f64 {
    if y == 0.0 {
        return 1.0;
    }
    portable_exp(y * portable_ln(x))
}

/// Rank sampler over `n` items with Zipf exponent `s >= 0`; rank 1 is the
/// hottest item. `s = 0` degenerates to uniform.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    cumulative: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(n: usize, s: f64) -> Self {
        assert!(n > 0, "zipf over empty population");
        assert!(s >= 0.0 && s.is_finite());
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += portable_pow(k as f64, -s);
            cumulative.push(acc);
        }
        ZipfSampler { cumulative }
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Draw a 0-based rank via inverse CDF.
    pub fn sample(&self, rng: &mut SplitMix64) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let target = rng.next_f64() * total;
        match self
            .cumulative
            .binary_search_by(|w| w.partial_cmp(&target).expect("finite weights"))
        {
            Ok(i) => i,
            Err(i) => i.min(self.cumulative.len() - 1),
        }
    }
}
