//! Unscrambled Sobol sequence in Gray-code order with Joe-Kuo direction numbers.

use crate::error::{FsnnError, Result};

const BITS: usize = 32;

/// `(degree, polynomial coefficients a, initial m values)` for dimensions 2..
const JOE_KUO: [(u32, u32, &[u32]); 15] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
];

/// Largest supported dimension.
pub const MAX_DIMENSION: usize = JOE_KUO.len() + 1;

#[derive(Debug, Clone)]
pub struct SobolSampler {
    dimension: usize,
    index: u64,
    directions: Vec<[u32; BITS]>,
    current: Vec<u32>,
}

fn direction_numbers(dim: usize) -> Vec<[u32; BITS]> {
    let mut out = Vec::with_capacity(dim);
    let mut first = [0u32; BITS];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1 << (BITS - 1 - k);
    }
    out.push(first);
    for &(s, a, m) in JOE_KUO.iter().take(dim.saturating_sub(1)) {
        let s = s as usize;
        let mut v = [0u32; BITS];
        for k in 0..s.min(BITS) {
            v[k] = m[k] << (BITS - 1 - k);
        }
        for k in s..BITS {
            let mut x = v[k - s] ^ (v[k - s] >> s);
            for j in 1..s {
                if (a >> (s - 1 - j)) & 1 == 1 {
                    x ^= v[k - j];
                }
            }
            v[k] = x;
        }
        out.push(v);
    }
    out
}

impl SobolSampler {
    /// A sampler positioned after the all-zero first point.
    pub fn new(dimension: usize) -> Result<Self> {
        let mut s = Self::including_origin(dimension)?;
        s.next_point();
        Ok(s)
    }

    /// A sampler whose first point is the origin.
    pub fn including_origin(dimension: usize) -> Result<Self> {
        if dimension == 0 || dimension > MAX_DIMENSION {
            return Err(FsnnError::config(format!(
                "Sobol dimension must be in 1..={MAX_DIMENSION}, got {dimension}"
            )));
        }
        Ok(SobolSampler {
            dimension,
            index: 0,
            directions: direction_numbers(dimension),
            current: vec![0; dimension],
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of points emitted so far, counting a skipped origin.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Next point of the sequence, in `[0, 1)^dimension`.
    pub fn next_point(&mut self) -> Vec<f64> {
        let point = self.current.iter().map(|&c| c as f64 / (1u64 << BITS) as f64).collect();
        // Gray code: flip the direction number of the lowest zero bit of the index.
        let bit = (!self.index).trailing_zeros() as usize;
        if bit < BITS {
            for (c, v) in self.current.iter_mut().zip(&self.directions) {
                *c ^= v[bit];
            }
        }
        self.index += 1;
        point
    }
}

impl Iterator for SobolSampler {
    type Item = Vec<f64>;
    fn next(&mut self) -> Option<Vec<f64>> {
        Some(self.next_point())
    }
}
