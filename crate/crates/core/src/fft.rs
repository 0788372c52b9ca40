//! Two-dimensional DFT helpers on top of `rustfft`.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

/// Unnormalized 2-D DFT in place (`Forward` uses e^{-j...}, `Inverse` e^{+j...}).
pub fn dft2_inplace(data: &mut Array2<Complex64>, direction: FftDirection) {
    let (rows, cols) = data.dim();
    if rows == 0 || cols == 0 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();

    let row_fft = planner.plan_fft(cols, direction);
    let mut buf = vec![Complex64::new(0.0, 0.0); cols];
    for mut row in data.axis_iter_mut(Axis(0)) {
        for (b, v) in buf.iter_mut().zip(row.iter()) {
            *b = *v;
        }
        row_fft.process(&mut buf);
        for (v, b) in row.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }

    let col_fft = planner.plan_fft(rows, direction);
    let mut buf = vec![Complex64::new(0.0, 0.0); rows];
    for mut col in data.axis_iter_mut(Axis(1)) {
        for (b, v) in buf.iter_mut().zip(col.iter()) {
            *b = *v;
        }
        col_fft.process(&mut buf);
        for (v, b) in col.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

/// Moves the zero-index sample to the center (`floor(n/2)`) along both axes.
pub fn fftshift<T: Clone>(data: &Array2<T>) -> Array2<T> {
    let (rows, cols) = data.dim();
    let (hr, hc) = (rows / 2, cols / 2);
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        data[((i + rows - hr) % rows, (j + cols - hc) % cols)].clone()
    })
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Clone>(data: &Array2<T>) -> Array2<T> {
    let (rows, cols) = data.dim();
    let (hr, hc) = (rows / 2, cols / 2);
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        data[((i + hr) % rows, (j + hc) % cols)].clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_pair_is_inverse_for_odd_and_even() {
        for &(r, c) in &[(4usize, 6usize), (5, 3), (1, 7)] {
            let a = Array2::from_shape_fn((r, c), |(i, j)| (i * c + j) as f64);
            assert_eq!(ifftshift(&fftshift(&a)), a);
            assert_eq!(fftshift(&a)[(r / 2, c / 2)], 0.0);
        }
    }

    #[test]
    fn dft_matches_naive_sum() {
        let (m, n) = (3usize, 5usize);
        let x = Array2::from_shape_fn((m, n), |(i, j)| {
            Complex64::new((i as f64 + 0.3 * j as f64).sin(), (j as f64 * 0.7).cos())
        });
        let mut fast = x.clone();
        dft2_inplace(&mut fast, FftDirection::Forward);
        for k in 0..m {
            for l in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..m {
                    for j in 0..n {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * ((i * k) as f64 / m as f64 + (j * l) as f64 / n as f64);
                        acc += x[(i, j)] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((acc - fast[(k, l)]).norm() < 1e-12);
            }
        }
    }
}
