//! Thin 2D FFT layer over rustfft, plus linear correlation/convolution
//! helpers sized to avoid circular wrap-around.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Smallest 5-smooth size >= n (rustfft is fast on products of 2, 3, 5).
pub fn next_fast_size(n: usize) -> usize {
    let mut m = n.max(2);
    loop {
        let mut k = m;
        for p in [2usize, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// Planned 2D complex FFT of fixed shape (px columns, py rows, row-major).
pub struct Fft2 {
    pub px: usize,
    pub py: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(px: usize, py: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            px,
            py,
            fwd_x: planner.plan_fft_forward(px),
            inv_x: planner.plan_fft_inverse(px),
            fwd_y: planner.plan_fft_forward(py),
            inv_y: planner.plan_fft_inverse(py),
        }
    }

    fn transform(&self, data: &mut [Complex<f64>], forward: bool) {
        assert_eq!(data.len(), self.px * self.py);
        let (tx, ty) = if forward {
            (&self.fwd_x, &self.fwd_y)
        } else {
            (&self.inv_x, &self.inv_y)
        };
        for row in data.chunks_exact_mut(self.px) {
            tx.process(row);
        }
        let mut col = vec![Complex::default(); self.py];
        for ix in 0..self.px {
            for iy in 0..self.py {
                col[iy] = data[iy * self.px + ix];
            }
            ty.process(&mut col);
            for iy in 0..self.py {
                data[iy * self.px + ix] = col[iy];
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex<f64>]) {
        self.transform(data, true);
    }

    /// Inverse without the 1/(px*py) normalization.
    pub fn inverse_unnormalized(&self, data: &mut [Complex<f64>]) {
        self.transform(data, false);
    }

    pub fn norm(&self) -> f64 {
        1.0 / (self.px * self.py) as f64
    }
}

/// Embed an nx x ny real field at the origin corner of a px x py complex buffer.
pub fn embed(values: &[f64], nx: usize, ny: usize, px: usize, py: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::default(); px * py];
    for iy in 0..ny {
        for ix in 0..nx {
            out[iy * px + ix] = Complex::new(values[iy * nx + ix], 0.0);
        }
    }
    out
}

/// Full linear cross-correlation corr(d) = sum_p f(p) g(p+d) for
/// d = (dx, dy), dx in [-(nx-1), nx-1], dy likewise. Output is row-major of
/// shape (2nx-1) x (2ny-1) with index ((dy+ny-1)*(2nx-1) + (dx+nx-1)).
pub fn correlate_full(f: &[f64], g: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let px = next_fast_size(2 * nx - 1);
    let py = next_fast_size(2 * ny - 1);
    let fft = Fft2::new(px, py);
    let mut fa = embed(f, nx, ny, px, py);
    let mut fb = embed(g, nx, ny, px, py);
    fft.forward(&mut fa);
    fft.forward(&mut fb);
    for (a, b) in fa.iter_mut().zip(fb.iter()) {
        *a = a.conj() * b;
    }
    fft.inverse_unnormalized(&mut fa);
    let scale = fft.norm();
    let tw = 2 * nx - 1;
    let th = 2 * ny - 1;
    let mut out = vec![0.0; tw * th];
    for dy in -(ny as isize - 1)..=(ny as isize - 1) {
        for dx in -(nx as isize - 1)..=(nx as isize - 1) {
            let sx = dx.rem_euclid(px as isize) as usize;
            let sy = dy.rem_euclid(py as isize) as usize;
            let v = fa[sy * px + sx].re * scale;
            out[(dy + ny as isize - 1) as usize * tw + (dx + nx as isize - 1) as usize] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_sizes_are_smooth() {
        assert_eq!(next_fast_size(17), 18);
        assert_eq!(next_fast_size(128), 128);
        assert_eq!(next_fast_size(641), 648);
    }

    #[test]
    fn correlation_matches_direct_sum() {
        let (nx, ny) = (5usize, 4);
        let f: Vec<f64> = (0..nx * ny).map(|i| (i as f64 * 0.37).sin()).collect();
        let g: Vec<f64> = (0..nx * ny).map(|i| (i as f64 * 0.11).cos()).collect();
        let corr = correlate_full(&f, &g, nx, ny);
        for dy in -(ny as isize - 1)..=(ny as isize - 1) {
            for dx in -(nx as isize - 1)..=(nx as isize - 1) {
                let mut direct = 0.0;
                for iy in 0..ny as isize {
                    for ix in 0..nx as isize {
                        let jx = ix + dx;
                        let jy = iy + dy;
                        if jx >= 0 && jy >= 0 && (jx as usize) < nx && (jy as usize) < ny {
                            direct += f[iy as usize * nx + ix as usize]
                                * g[jy as usize * nx + jx as usize];
                        }
                    }
                }
                let v = corr
                    [(dy + ny as isize - 1) as usize * (2 * nx - 1) + (dx + nx as isize - 1) as usize];
                assert!((v - direct).abs() < 1e-12, "mismatch at ({dx},{dy})");
            }
        }
    }
}
