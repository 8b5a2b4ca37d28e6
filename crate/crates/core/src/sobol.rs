//! Sobol low-discrepancy sequence (Gray-code ordering) with direction
//! numbers from the Joe–Kuo `new-joe-kuo-6.21201` table.

use crate::error::{Error, Result};

const BITS: usize = 32;

/// `(s, a, m)` rows for dimensions 2.. ; dimension 1 is van der Corput.
const JOE_KUO: &[(u32, u32, &[u32])] = &[
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
];

pub const MAX_DIM: usize = JOE_KUO.len() + 1;

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (31 - k);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (31 - k);
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

/// Iterator over Sobol points as 32-bit integers per coordinate.
#[derive(Clone, Debug)]
pub struct Sobol {
    v: Vec<[u32; BITS]>,
    x: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "Sobol dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        Ok(Sobol {
            v: (0..dim).map(direction_numbers).collect(),
            x: vec![0; dim],
            index: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Next point as integers in `[0, 2^32)`. The first point is the origin.
    pub fn next_raw(&mut self) -> Option<&[u32]> {
        if self.index > u64::from(u32::MAX) {
            return None;
        }
        if self.index > 0 {
            let c = (self.index - 1).trailing_ones() as usize;
            for (x, v) in self.x.iter_mut().zip(&self.v) {
                *x ^= v[c];
            }
        }
        self.index += 1;
        Some(&self.x)
    }

    /// Next point in `[0, 1)^d`.
    pub fn next_point(&mut self) -> Option<Vec<f64>> {
        self.next_raw()
            .map(|x| x.iter().map(|&xi| f64::from(xi) / 4_294_967_296.0).collect())
    }
}
