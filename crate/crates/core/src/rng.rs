//! Reproducible random numbers and smooth random fields.
//!
//! The generator is SplitMix64 in counter form: the `k`-th output for seed
//! `s` is `mix(s + (k+1)·0x9E3779B97F4A7C15)` with the standard finalizer,
//! so any language can regenerate the same sequence. Doubles take the top
//! 53 bits.

use std::f64::consts::PI;

use crate::dynamics::Fields;
use crate::grid::{Bc, Field, Grid};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    seed: u64,
    counter: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { seed, counter: 0 }
    }

    /// Output number `k` of the stream, independent of the cursor.
    pub fn at(seed: u64, k: u64) -> u64 {
        mix(seed.wrapping_add(k.wrapping_add(1).wrapping_mul(GAMMA)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = Self::at(self.seed, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Random combination of the lowest `modes x modes` eigenfunctions that
/// fit `bc`: sines for no-slip fields, cosines otherwise. Mode `(p, q)`
/// gets an amplitude uniform in `±amp / (1 + p² + q²)`.
pub fn random_smooth<const C: usize>(
    g: Grid,
    bc: Bc,
    rng: &mut SplitMix64,
    modes: usize,
    amp: f64,
) -> Field<C> {
    let dirichlet = bc == Bc::DirichletZero;
    let range: Vec<usize> = if dirichlet {
        (1..=modes).collect()
    } else {
        (0..modes).collect()
    };
    let mut coef = vec![[0.0; C]; range.len() * range.len()];
    for (a, q) in range.iter().enumerate() {
        for (b, p) in range.iter().enumerate() {
            let s = amp / (1.0 + (p * p + q * q) as f64);
            for c in 0..C {
                coef[a * range.len() + b][c] = rng.uniform(-s, s);
            }
        }
    }
    let basis = |k: usize, t: f64| {
        if dirichlet {
            (k as f64 * PI * t).sin()
        } else {
            (k as f64 * PI * t).cos()
        }
    };
    Field::from_fn(g, bc, |x, y| {
        let mut out = [0.0; C];
        for (a, q) in range.iter().enumerate() {
            let by = basis(*q, y / g.ly);
            for (b, p) in range.iter().enumerate() {
                let w = basis(*p, x / g.lx) * by;
                for c in 0..C {
                    out[c] += coef[a * range.len() + b][c] * w;
                }
            }
        }
        out
    })
}

/// Smooth random `(v, F, M)` with the usual boundary tags; `v` is not
/// projected.
pub fn random_fields(g: Grid, rng: &mut SplitMix64, amp: f64) -> Fields {
    Fields {
        v: random_smooth(g, Bc::DirichletZero, rng, 3, amp),
        f: random_smooth(g, Bc::DirichletZero, rng, 3, amp),
        m: random_smooth(g, Bc::NeumannZero, rng, 3, amp),
    }
}
