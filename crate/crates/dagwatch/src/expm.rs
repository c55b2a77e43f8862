//! Dense matrix exponential via scaling and squaring.
//!
//! Classic Padé-based evaluation: pick the lowest diagonal Padé order
//! (3/5/7/9/13) whose accuracy bound covers the input's 1-norm; above the
//! order-13 threshold, halve the matrix `s` times first and square the result
//! `s` times afterwards.  Coefficients and norm thresholds follow the standard
//! double-precision tables, which keep the relative error near machine
//! epsilon for the norms this crate encounters (entrywise-squared weight
//! matrices, well under the supported ceiling).
//!
//! The evaluation is a fixed sequence of matrix products and one LU solve, so
//! identical inputs produce bitwise-identical outputs.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Largest dimension the exponential is specified to support.
pub const MAX_DIM: usize = 100;

// Accuracy thresholds on the 1-norm for each Padé order in f64.
const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_23e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068;
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const B9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Maximum absolute column sum.  Zero for an empty matrix.
fn one_norm(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0_f64;
    for col in m.column_iter() {
        let s: f64 = col.iter().map(|v| v.abs()).sum();
        if s > best {
            best = s;
        }
    }
    best
}

/// e^M for a square matrix with finite entries.
///
/// Returns an error for non-square input, non-finite entries, or dimensions
/// beyond [`MAX_DIM`].
pub fn matrix_exponential(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() > MAX_DIM {
        return Err(Error::invalid(format!(
            "matrix exponential supports dimension <= {MAX_DIM}, got {}",
            m.nrows()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix exponential given non-finite entries"));
    }
    let d = m.nrows();
    if d == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    let norm = one_norm(m);
    let (u, v, squarings) = if norm <= THETA_9 {
        let a2 = m * m;
        if norm <= THETA_3 {
            (pade_odd(m, &[&a2], &B3), pade_even(&a2, &[&a2], &B3, d), 0)
        } else if norm <= THETA_5 {
            let a4 = &a2 * &a2;
            (
                pade_odd(m, &[&a2, &a4], &B5),
                pade_even(&a2, &[&a2, &a4], &B5, d),
                0,
            )
        } else if norm <= THETA_7 {
            let a4 = &a2 * &a2;
            let a6 = &a4 * &a2;
            (
                pade_odd(m, &[&a2, &a4, &a6], &B7),
                pade_even(&a2, &[&a2, &a4, &a6], &B7, d),
                0,
            )
        } else {
            let a4 = &a2 * &a2;
            let a6 = &a4 * &a2;
            let a8 = &a4 * &a4;
            (
                pade_odd(m, &[&a2, &a4, &a6, &a8], &B9),
                pade_even(&a2, &[&a2, &a4, &a6, &a8], &B9, d),
                0,
            )
        }
    } else {
        // Halve until the norm fits under the order-13 threshold.
        let s = ((norm / THETA_13).log2().ceil()).max(0.0) as u32;
        let scaled = m / 2f64.powi(s as i32);
        let (u, v) = pade13(&scaled, d);
        (u, v, s)
    };

    // r(A) = (V - U)^{-1} (V + U)
    let p = &v + &u;
    let q = &v - &u;
    let mut r = nalgebra::linalg::LU::new(q)
        .solve(&p)
        .ok_or_else(|| Error::invalid("matrix exponential: Padé denominator is singular"))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Odd part U = A * (b1 I + b3 A^2 + b5 A^4 + ...), shared by orders 3..9.
fn pade_odd(a: &DMatrix<f64>, powers: &[&DMatrix<f64>], b: &[f64]) -> DMatrix<f64> {
    let d = a.nrows();
    let mut acc = DMatrix::<f64>::identity(d, d) * b[1];
    for (k, p) in powers.iter().enumerate() {
        acc += *p * b[2 * k + 3];
    }
    a * acc
}

/// Even part V = b0 I + b2 A^2 + b4 A^4 + ..., shared by orders 3..9.
fn pade_even(_a2: &DMatrix<f64>, powers: &[&DMatrix<f64>], b: &[f64], d: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::<f64>::identity(d, d) * b[0];
    for (k, p) in powers.iter().enumerate() {
        acc += *p * b[2 * k + 2];
    }
    acc
}

/// Order-13 evaluation with the factored scheme that caps the power chain at A^6.
fn pade13(a: &DMatrix<f64>, d: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let ident = DMatrix::<f64>::identity(d, d);

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u_outer = &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1];
    let u = a * (u_inner + u_outer);

    let v_inner = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    (u, v)
}
