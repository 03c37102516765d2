//! Multidimensional complex FFT on an `n^dim` periodic lattice, built from
//! one-dimensional rustfft plans. Layout is row-major with the last axis
//! contiguous.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct LatticeFft {
    dim: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for LatticeFft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatticeFft")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .finish()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    /// `Σ_x f(x) e^{-ik·x}` (unnormalized)
    Forward,
    /// `Σ_k f_k e^{+ik·x}`
    Inverse,
}

impl LatticeFft {
    pub fn new(dim: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dim,
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn process(&self, buf: &mut [Complex64], dir: Direction) {
        debug_assert_eq!(buf.len(), self.len());
        let plan = match dir {
            Direction::Forward => &self.forward,
            Direction::Inverse => &self.inverse,
        };
        let n = self.n;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        let mut block = Vec::new();
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                plan.process_with_scratch(buf, &mut scratch);
                continue;
            }
            // each chunk is an n x stride matrix; transform its columns
            block.resize(n * stride, Complex64::default());
            for chunk in buf.chunks_mut(n * stride) {
                for j in 0..n {
                    for i in 0..stride {
                        block[i * n + j] = chunk[j * stride + i];
                    }
                }
                plan.process_with_scratch(&mut block, &mut scratch);
                for j in 0..n {
                    for i in 0..stride {
                        chunk[j * stride + i] = block[i * n + j];
                    }
                }
            }
        }
    }
}
