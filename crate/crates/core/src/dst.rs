//! Type-I discrete sine transform, `y_j = Σ_k x_k sin(π j k / (n + 1))`,
//! applied separably along every axis of a row-major cube.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Lengths up to this use a precomputed sine matrix instead of an FFT.
const DIRECT_MAX: usize = 24;

enum Kernel {
    Direct(Vec<f64>),
    Fft(Arc<dyn Fft<f64>>),
}

/// Unnormalized DST-I of a fixed length.
pub struct SineTransform {
    n: usize,
    kernel: Kernel,
}

/// Scratch space for [`SineTransform`]; one per worker thread.
#[derive(Default)]
pub struct DstScratch {
    line: Vec<f64>,
    out: Vec<f64>,
    buf: Vec<Complex<f64>>,
    fft_scratch: Vec<Complex<f64>>,
}

impl SineTransform {
    pub fn new(n: usize) -> Self {
        let kernel = if n <= DIRECT_MAX {
            let m = (n + 1) as f64;
            let mut table = vec![0.0; n * n];
            for j in 0..n {
                for k in 0..n {
                    let jk = ((j + 1) * (k + 1)) % (2 * (n + 1));
                    table[j * n + k] = (std::f64::consts::PI * jk as f64 / m).sin();
                }
            }
            Kernel::Direct(table)
        } else {
            Kernel::Fft(FftPlanner::new().plan_fft_forward(2 * (n + 1)))
        };
        SineTransform { n, kernel }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Transforms `data` in place (`data.len() == n`).
    pub fn apply(&self, data: &mut [f64], scratch: &mut DstScratch) {
        let n = self.n;
        debug_assert_eq!(data.len(), n);
        match &self.kernel {
            Kernel::Direct(table) => {
                scratch.out.resize(n, 0.0);
                for j in 0..n {
                    let row = &table[j * n..(j + 1) * n];
                    scratch.out[j] = row.iter().zip(data.iter()).map(|(a, b)| a * b).sum();
                }
                data.copy_from_slice(&scratch.out);
            }
            Kernel::Fft(fft) => {
                let m = 2 * (n + 1);
                scratch.buf.clear();
                scratch.buf.resize(m, Complex::new(0.0, 0.0));
                for k in 0..n {
                    scratch.buf[k + 1].re = data[k];
                    scratch.buf[m - k - 1].re = -data[k];
                }
                scratch
                    .fft_scratch
                    .resize(fft.get_inplace_scratch_len(), Complex::new(0.0, 0.0));
                fft.process_with_scratch(&mut scratch.buf, &mut scratch.fft_scratch);
                for (j, slot) in data.iter_mut().enumerate() {
                    *slot = -0.5 * scratch.buf[j + 1].im;
                }
            }
        }
    }

    /// Applies the transform along every axis of a `dim`-dimensional cube of
    /// side `n` stored row-major.
    pub fn apply_all_axes(&self, data: &mut [f64], dim: usize, scratch: &mut DstScratch) {
        let n = self.n;
        debug_assert_eq!(data.len(), n.pow(dim as u32));
        let mut line = std::mem::take(&mut scratch.line);
        line.resize(n, 0.0);
        for axis in 0..dim {
            let stride = n.pow((dim - 1 - axis) as u32);
            if stride == 1 {
                for chunk in data.chunks_exact_mut(n) {
                    self.apply(chunk, scratch);
                }
                continue;
            }
            let block = stride * n;
            for outer in (0..data.len()).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (k, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + k * stride];
                    }
                    self.apply(&mut line, scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
        scratch.line = line;
    }
}
