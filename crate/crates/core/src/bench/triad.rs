//! Memory-bandwidth triad `a(i) = b(i) + q * c(i)`.

use std::time::Instant;

use super::BenchError;
use crate::scalar::Scalar;

/// Smallest array length accepted for a timed triad.
pub const MIN_ELEMENTS: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct Triad<T> {
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub q: T,
}

impl<T: Scalar> Triad<T> {
    /// Arrays with `b = 1`, `c = 2`, `q = 3`, so every result is exactly 7.
    pub fn new(n: usize) -> Self {
        Self {
            a: vec![T::zero(); n],
            b: vec![T::one(); n],
            c: vec![T::from_f64_exact(2.0); n],
            q: T::from_f64_exact(3.0),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// One sweep split across `threads` contiguous chunks.
    pub fn sweep(&mut self, threads: usize) {
        let chunk = self.a.len().div_ceil(threads.max(1)).max(1);
        let q = self.q;
        std::thread::scope(|s| {
            for ((a, b), c) in self
                .a
                .chunks_mut(chunk)
                .zip(self.b.chunks(chunk))
                .zip(self.c.chunks(chunk))
            {
                s.spawn(move || {
                    for ((ai, bi), ci) in a.iter_mut().zip(b).zip(c) {
                        *ai = *bi + q * *ci;
                    }
                });
            }
        });
    }

    /// Exact check of every element against `b + q * c`.
    pub fn verify(&self) -> bool {
        self.a
            .iter()
            .zip(&self.b)
            .zip(&self.c)
            .all(|((a, b), c)| *a == *b + self.q * *c)
    }

    /// Bytes moved by one sweep: two loads and one store per element.
    pub fn bytes_per_sweep(&self) -> f64 {
        (3 * T::BYTES * self.len()) as f64
    }
}

/// Five timed sweeps; returns MB/s per sweep.
pub fn measure<T: Scalar>(n: usize, threads: usize, runs: usize) -> Result<Vec<f64>, BenchError> {
    if n < MIN_ELEMENTS {
        return Err(BenchError::InvalidSize(format!("triad needs n >= {MIN_ELEMENTS}, got {n}")));
    }
    if threads == 0 {
        return Err(BenchError::InvalidSize("triad needs at least one thread".into()));
    }
    let mut t = Triad::<T>::new(n);
    let mut out = Vec::with_capacity(runs);
    for run in 0..runs {
        t.a.iter_mut().for_each(|x| *x = T::zero());
        let start = Instant::now();
        t.sweep(threads);
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        if !t.verify() {
            return Err(BenchError::Incorrect(format!("triad result wrong on run {run}")));
        }
        out.push(t.bytes_per_sweep() / secs / 1e6);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_element_is_seven() {
        for threads in [1, 3, 8] {
            let mut t = Triad::<f64>::new(1000);
            t.sweep(threads);
            assert!(t.a.iter().all(|&x| x == 7.0));
            assert!(t.verify());
        }
        let mut t = Triad::<f32>::new(17);
        t.sweep(4);
        assert!(t.a.iter().all(|&x| x == 7.0));
    }

    #[test]
    fn size_and_threads_checked() {
        assert!(matches!(measure::<f64>(10, 1, 5), Err(BenchError::InvalidSize(_))));
        assert!(matches!(measure::<f64>(MIN_ELEMENTS, 0, 5), Err(BenchError::InvalidSize(_))));
    }

    #[test]
    fn bytes_counted_per_element_width() {
        assert_eq!(Triad::<f64>::new(10).bytes_per_sweep(), 240.0);
        assert_eq!(Triad::<f32>::new(10).bytes_per_sweep(), 120.0);
    }
}
