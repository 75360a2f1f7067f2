//! Deterministic parallel GEMM wrappers.
//!
//! Output rows are split into fixed-size blocks and each block is computed by
//! a single `matrixmultiply` call, so the result is bit-identical regardless
//! of how many worker threads rayon schedules.

use rayon::prelude::*;

use super::element::Element;

/// Rows per parallel block. Fixed so that block boundaries (and therefore
/// every summation order) depend only on the problem size.
const ROW_BLOCK: usize = 128;

/// C (m x n) = A (m x k) * B (k x n), all row-major. `accumulate` keeps the
/// existing contents of `c` (beta = 1).
pub fn gemm_nn<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    let b_ptr = PtrWrap(b.as_ptr());
    c.par_chunks_mut(ROW_BLOCK * n)
        .zip(a.par_chunks(ROW_BLOCK * k))
        .for_each(|(c_blk, a_blk)| {
            let rows = c_blk.len() / n;
            unsafe {
                T::gemm_raw(
                    rows,
                    k,
                    n,
                    T::one(),
                    a_blk.as_ptr(),
                    k as isize,
                    1,
                    b_ptr.get(),
                    n as isize,
                    1,
                    beta,
                    c_blk.as_mut_ptr(),
                    n as isize,
                    1,
                )
            }
        });
}

/// C (m x n) = A^T * B where A is stored row-major as (k x m) and B as (k x n).
pub fn gemm_tn<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    let a_ptr = PtrWrap(a.as_ptr());
    let b_ptr = PtrWrap(b.as_ptr());
    c.par_chunks_mut(ROW_BLOCK * n)
        .enumerate()
        .for_each(|(blk, c_blk)| {
            let row0 = blk * ROW_BLOCK;
            let rows = c_blk.len() / n;
            unsafe {
                // A^T row i is A column i: row stride 1, column stride m.
                T::gemm_raw(
                    rows,
                    k,
                    n,
                    T::one(),
                    a_ptr.get().add(row0),
                    1,
                    m as isize,
                    b_ptr.get(),
                    n as isize,
                    1,
                    beta,
                    c_blk.as_mut_ptr(),
                    n as isize,
                    1,
                )
            }
        });
}

/// C (m x n) = A * B^T where A is stored row-major as (m x k) and B as (n x k).
pub fn gemm_nt<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    let b_ptr = PtrWrap(b.as_ptr());
    c.par_chunks_mut(ROW_BLOCK * n)
        .zip(a.par_chunks(ROW_BLOCK * k))
        .for_each(|(c_blk, a_blk)| {
            let rows = c_blk.len() / n;
            unsafe {
                T::gemm_raw(
                    rows,
                    k,
                    n,
                    T::one(),
                    a_blk.as_ptr(),
                    k as isize,
                    1,
                    b_ptr.get(),
                    1,
                    k as isize,
                    beta,
                    c_blk.as_mut_ptr(),
                    n as isize,
                    1,
                )
            }
        });
}

/// Raw pointer that is safe to move into rayon closures. The referenced
/// buffer outlives the parallel scope and is only read.
#[derive(Clone, Copy)]
struct PtrWrap<T>(*const T);

unsafe impl<T> Send for PtrWrap<T> {}
unsafe impl<T> Sync for PtrWrap<T> {}

impl<T> PtrWrap<T> {
    fn get(self) -> *const T {
        self.0
    }
}
