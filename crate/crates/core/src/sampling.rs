//! Seeded random designs: plain random Latin hypercubes and uniform points.
//!
//! All randomness in the crate flows through [`SeededRng`], a ChaCha8 stream
//! keyed by a 64-bit seed. ChaCha8 output is specified bit-for-bit, so a seed
//! reproduces the same sequence on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::Bounds;
use crate::error::{Error, Result};

/// Deterministic random source owned by a single run.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for replicate `index` of a campaign seeded with `master`.
    pub fn for_replicate(master: u64, index: u64) -> Self {
        SeededRng::new(replicate_seed(master, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw from `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed of replicate `index`: `splitmix64(master ^ splitmix64(index))`.
///
/// Each replicate owns its stream, so results do not depend on which worker
/// runs it or in what order.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// An `n x d` set of points inside `bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub points: Vec<Vec<f64>>,
    pub bounds: Bounds,
}

/// Random Latin hypercube of `n` points.
///
/// Each axis is cut into `n` equal strata; a uniform random permutation
/// assigns strata to points and each coordinate is uniform inside its stratum.
pub fn latin_hypercube(n: usize, bounds: &Bounds, rng: &mut SeededRng) -> Result<Design> {
    if n == 0 {
        return Err(Error::arg("Latin hypercube needs n >= 1"));
    }
    let d = bounds.dim();
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for axis in 0..d {
        perm.shuffle(rng);
        let (lo, hi, width) = (bounds.lower()[axis], bounds.upper()[axis], bounds.width(axis));
        for (p, &stratum) in points.iter_mut().zip(&perm) {
            let u = rng.unit();
            p[axis] = (lo + (stratum as f64 + u) / n as f64 * width).min(hi);
        }
    }
    Ok(Design {
        points,
        bounds: bounds.clone(),
    })
}

/// Point drawn uniformly from the box.
pub fn uniform_point(bounds: &Bounds, rng: &mut SeededRng) -> Vec<f64> {
    (0..bounds.dim())
        .map(|i| (bounds.lower()[i] + rng.unit() * bounds.width(i)).min(bounds.upper()[i]))
        .collect()
}
