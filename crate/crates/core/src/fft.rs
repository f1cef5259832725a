//! Minimal 3-D complex FFT on cubic arrays, built from 1-D rustfft plans.
//!
//! Lines along each axis are independent, so the passes parallelize with a
//! deterministic result regardless of thread count.

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

use crate::scalar::Real;

pub struct Fft3<T> {
    len: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

/// Raw pointer wrapper so disjoint strided lines can be processed in parallel.
struct SyncPtr<T>(*mut Complex<T>);
unsafe impl<T> Send for SyncPtr<T> {}
unsafe impl<T> Sync for SyncPtr<T> {}

impl<T: Real> Fft3<T> {
    /// Plans for a cube of side `len`.
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft(len, FftDirection::Forward),
            inverse: planner.plan_fft(len, FftDirection::Inverse),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn forward(&self, data: &mut [Complex<T>]) {
        self.transform(data, &self.forward);
    }

    /// Unnormalized inverse; the caller owns the 1/len^3 factor.
    pub fn inverse(&self, data: &mut [Complex<T>]) {
        self.transform(data, &self.inverse);
    }

    fn transform(&self, data: &mut [Complex<T>], plan: &Arc<dyn Fft<T>>) {
        let p = self.len;
        assert_eq!(data.len(), p * p * p);
        let scratch_len = plan.get_inplace_scratch_len();

        // axis 0: lines are contiguous
        data.par_chunks_exact_mut(p).for_each_init(
            || vec![Complex::new(T::zero(), T::zero()); scratch_len],
            |scratch, line| plan.process_with_scratch(line, scratch),
        );

        // axis 1: per z-slab, columns with stride p
        data.par_chunks_exact_mut(p * p).for_each_init(
            || {
                (
                    vec![Complex::new(T::zero(), T::zero()); p],
                    vec![Complex::new(T::zero(), T::zero()); scratch_len],
                )
            },
            |(line, scratch), slab| {
                for x in 0..p {
                    for y in 0..p {
                        line[y] = slab[x + p * y];
                    }
                    plan.process_with_scratch(line, scratch);
                    for y in 0..p {
                        slab[x + p * y] = line[y];
                    }
                }
            },
        );

        // axis 2: lines with stride p^2, one per (x, y); lines are disjoint
        let base = SyncPtr(data.as_mut_ptr());
        let stride = p * p;
        (0..p * p).into_par_iter().for_each_init(
            || {
                (
                    vec![Complex::new(T::zero(), T::zero()); p],
                    vec![Complex::new(T::zero(), T::zero()); scratch_len],
                )
            },
            |(line, scratch), xy| {
                let ptr = &base;
                unsafe {
                    for z in 0..p {
                        line[z] = *ptr.0.add(xy + stride * z);
                    }
                    plan.process_with_scratch(line, scratch);
                    for z in 0..p {
                        *ptr.0.add(xy + stride * z) = line[z];
                    }
                }
            },
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn forward_inverse_round_trip() {
        let p = 10;
        let fft = Fft3::<f64>::new(p);
        let mut data: Vec<Complex<f64>> = (0..p * p * p)
            .map(|i| Complex::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let orig = data.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        let scale = (p * p * p) as f64;
        for (a, b) in data.iter().zip(&orig) {
            assert_relative_eq!(a.re / scale, b.re, epsilon = 1e-12);
            assert_relative_eq!(a.im / scale, b.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_mode_transforms_to_delta() {
        let p = 8;
        let fft = Fft3::<f64>::new(p);
        // e^{2 pi i (2x/p)} along axis 0 -> spike at k = (2,0,0)
        let mut data = vec![Complex::new(0.0, 0.0); p * p * p];
        for z in 0..p {
            for y in 0..p {
                for x in 0..p {
                    let phase = 2.0 * std::f64::consts::PI * 2.0 * x as f64 / p as f64;
                    data[x + p * (y + p * z)] = Complex::new(phase.cos(), phase.sin());
                }
            }
        }
        fft.forward(&mut data);
        for (i, v) in data.iter().enumerate() {
            let expect = if i == 2 { (p * p * p) as f64 } else { 0.0 };
            assert_relative_eq!(v.re, expect, epsilon = 1e-9);
            assert_relative_eq!(v.im, 0.0, epsilon = 1e-9);
        }
    }
}
