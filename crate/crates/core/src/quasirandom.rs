//! Randomized Sobol points and Gaussian quasi-random grids.
//!
//! Direction numbers are the Joe–Kuo `new-joe-kuo-6.21201` set, first 32
//! dimensions. Randomization is a digital shift: every coordinate is XORed with
//! a seeded 32-bit word. The all-zero first point of the sequence is skipped.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mvn::GaussComponent;
use crate::special::inverse_normal_cdf;

pub const MAX_SOBOL_DIM: usize = 32;

const BITS: usize = 32;

/// `(degree s, coefficient bits a, initial m values)` for dimensions 2..=32.
const DIRECTIONS: [(u32, u32, &[u32]); MAX_SOBOL_DIM - 1] = [
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
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
    (7, 7, &[1, 1, 3, 13, 7, 35, 63]),
    (7, 8, &[1, 3, 5, 9, 1, 25, 53]),
    (7, 14, &[1, 3, 1, 13, 9, 35, 107]),
    (7, 19, &[1, 3, 1, 5, 27, 61, 31]),
    (7, 21, &[1, 1, 5, 11, 19, 41, 61]),
    (7, 28, &[1, 3, 5, 3, 3, 13, 69]),
    (7, 31, &[1, 1, 7, 13, 1, 19, 1]),
    (7, 32, &[1, 3, 7, 5, 13, 19, 59]),
    (7, 37, &[1, 1, 3, 9, 25, 29, 41]),
    (7, 41, &[1, 3, 5, 13, 23, 1, 55]),
    (7, 42, &[1, 3, 7, 3, 13, 59, 17]),
];

fn direction_vectors(d: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if d == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = DIRECTIONS[d - 1];
    let s = s as usize;
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        v[k] = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                v[k] ^= v[k - j];
            }
        }
    }
    v
}

/// A (digitally shifted) Sobol stream in `(0, 1)^dim`.
#[derive(Debug, Clone)]
pub struct SobolGenerator {
    dim: usize,
    seed: Option<u64>,
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
    state: Vec<u32>,
    /// Sequence index of the next point; index 0 (the origin) is never emitted.
    index: u64,
}

impl SobolGenerator {
    /// Digitally shifted generator; the same seed and dimension give the same stream.
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        let mut g = Self::unscrambled(dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.shift = (0..dim).map(|_| rng.random()).collect();
        g.seed = Some(seed);
        Ok(g)
    }

    /// Plain Sobol sequence, starting from its second point.
    pub fn unscrambled(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("Sobol dimension must be positive".into()));
        }
        if dim > MAX_SOBOL_DIM {
            return Err(Error::UnsupportedDimension {
                dim,
                max: MAX_SOBOL_DIM,
            });
        }
        let directions = (0..dim).map(direction_vectors).collect();
        let mut g = Self {
            dim,
            seed: None,
            directions,
            shift: vec![0; dim],
            state: vec![0; dim],
            index: 0,
        };
        g.seek(1);
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Number of points emitted so far.
    pub fn consumed(&self) -> u64 {
        self.index - 1
    }

    /// Positions the stream so the next emitted point has sequence index `index` (≥ 1).
    fn seek(&mut self, index: u64) {
        let gray = index ^ (index >> 1);
        for (d, x) in self.state.iter_mut().enumerate() {
            *x = 0;
            for k in 0..BITS {
                if (gray >> k) & 1 == 1 {
                    *x ^= self.directions[d][k];
                }
            }
        }
        self.index = index;
    }

    /// A copy positioned `offset` points further along the stream.
    pub fn clone_with_offset(&self, offset: u64) -> Self {
        let mut g = self.clone();
        g.seek(self.index + offset);
        g
    }

    pub fn skip(&mut self, n: u64) {
        self.seek(self.index + n);
    }

    /// Writes the next point into `out`.
    pub fn next_point(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        const SCALE: f64 = 1.0 / 4_294_967_296.0;
        for d in 0..self.dim {
            let bits = self.state[d] ^ self.shift[d];
            out[d] = if bits == 0 { 0.5 * SCALE } else { bits as f64 * SCALE };
        }
        // Gray-code update to the point with index + 1.
        let c = self.index.trailing_ones() as usize;
        if c < BITS {
            for d in 0..self.dim {
                self.state[d] ^= self.directions[d][c];
            }
        }
        self.index += 1;
    }

    /// The next `n` points as an `n × dim` matrix.
    pub fn points(&mut self, n: usize) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::InvalidArgument("number of points must be >= 1".into()));
        }
        let mut m = DMatrix::zeros(n, self.dim);
        let mut row = vec![0.0; self.dim];
        for i in 0..n {
            self.next_point(&mut row);
            m.row_mut(i).copy_from_slice(&row);
        }
        Ok(m)
    }
}

/// `μ + L Φ⁻¹(u)` for the next `n` Sobol points `u` of `gen`.
pub fn gaussian_grid(c: &GaussComponent, n: usize, gen: &mut SobolGenerator) -> Result<DMatrix<f64>> {
    if gen.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            got: gen.dim(),
        });
    }
    let u = gen.points(n)?;
    let p = c.dim();
    let l = c.chol();
    let mut out = DMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for i in 0..n {
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = inverse_normal_cdf(u[(i, k)]);
        }
        for r in 0..p {
            let mut s = c.mean()[r];
            for k in 0..=r {
                s += l[(r, k)] * z[k];
            }
            out[(i, r)] = s;
        }
    }
    Ok(out)
}

/// Default points per component, `⌈50 p^1.25⌉`.
pub fn default_grid_size(p: usize) -> Result<usize> {
    if p < 1 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    Ok((50.0 * (p as f64).powf(1.25)).ceil() as usize)
}

/// Writes grid rows as headerless CSV.
pub fn grid_to_csv(points: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for row in points.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}
