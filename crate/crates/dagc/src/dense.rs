//! Row-major dense matrix kernels used by the tape ops.
//!
//! Kernels parallelize over output rows only: each row is accumulated
//! sequentially by a single worker, so results are bit-identical to the
//! serial loop for any thread count.

use rayon::prelude::*;

/// Work threshold below which the serial loop is always cheaper.
const PAR_FLOPS: usize = 1 << 20;

fn for_each_row<F>(out: &mut [f64], cols: usize, flops_per_row: usize, body: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let rows = out.len() / cols;
    if rows * flops_per_row >= PAR_FLOPS {
        out.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in out.chunks_mut(cols).enumerate() {
            body(i, row);
        }
    }
}

/// C[n×p] = A[n×m] · B[m×p]
pub fn matmul_nn(a: &[f64], b: &[f64], n: usize, m: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for_each_row(&mut out, p, m * p, |i, row| {
        let a_row = &a[i * m..(i + 1) * m];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * p..(kk + 1) * p];
            for (r, &bkj) in row.iter_mut().zip(b_row) {
                *r += aik * bkj;
            }
        }
    });
    out
}

/// C[n×p] = A[n×m] · B[p×m]ᵀ
pub fn matmul_nt(a: &[f64], b: &[f64], n: usize, m: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for_each_row(&mut out, p, m * p, |i, row| {
        let a_row = &a[i * m..(i + 1) * m];
        for (j, r) in row.iter_mut().enumerate() {
            let b_row = &b[j * m..(j + 1) * m];
            let mut acc = 0.0;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *r = acc;
        }
    });
    out
}

/// C[m×p] = A[n×m]ᵀ · B[n×p]
pub fn matmul_tn(a: &[f64], b: &[f64], n: usize, m: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    // Row i of the output gathers column i of A; the scan over samples stays
    // sequential per output row to keep accumulation order fixed.
    for_each_row(&mut out, p, n * p, |i, row| {
        for kk in 0..n {
            let aki = a[kk * m + i];
            if aki == 0.0 {
                continue;
            }
            let b_row = &b[kk * p..(kk + 1) * p];
            for (r, &bkj) in row.iter_mut().zip(b_row) {
                *r += aki * bkj;
            }
        }
    });
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}
