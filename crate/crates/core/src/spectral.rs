//! Axis-by-axis FFTs on the padded periodic lattice.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

/// In-place unnormalized n-dimensional FFT of a row-major cube with `p` points per axis.
pub fn fft_nd(data: &mut [Complex64], p: usize, dim: usize, direction: FftDirection) {
    debug_assert_eq!(data.len(), p.pow(dim as u32));
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft(p, direction);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut line = vec![Complex64::new(0.0, 0.0); p];
    for axis in 0..dim {
        let stride = p.pow((dim - 1 - axis) as u32);
        if stride == 1 {
            for chunk in data.chunks_exact_mut(p) {
                fft.process_with_scratch(chunk, &mut scratch);
            }
            continue;
        }
        let block = stride * p;
        for outer in (0..data.len()).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}

/// Signed frequency index for FFT bin `j` of a length-`p` transform.
#[inline]
pub fn signed_index(j: usize, p: usize) -> i64 {
    if j < p / 2 {
        j as i64
    } else {
        j as i64 - p as i64
    }
}

/// Multi-index of a flat row-major position.
#[inline]
pub fn unflatten(mut flat: usize, p: usize, dim: usize, out: &mut [usize]) {
    for axis in (0..dim).rev() {
        out[axis] = flat % p;
        flat /= p;
    }
}

/// Angular frequency vector of flat FFT bin `flat` on a box of side `box_len`.
pub fn lattice_frequency(flat: usize, p: usize, dim: usize, box_len: f64, out: &mut [f64]) {
    let mut idx = [0usize; 3];
    unflatten(flat, p, dim, &mut idx[..dim]);
    let step = 2.0 * std::f64::consts::PI / box_len;
    for axis in 0..dim {
        out[axis] = step * signed_index(idx[axis], p) as f64;
    }
}
