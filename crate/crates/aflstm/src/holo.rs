//! Circular convolution and circular correlation, the two holographic
//! binding operators, in both a direct O(d²) form and an FFT form.
//!
//! Zero-indexed definitions over vectors of equal length d:
//!
//!   conv:  out[k] = Σ_i h[i] · s[(k − i) mod d]     (commutative)
//!   corr:  out[k] = Σ_i h[i] · s[(k + i) mod d]     (not commutative)
//!
//! Frequency-domain forms, with F the unnormalized DFT:
//!
//!   h ∗ s = F⁻¹( F(h) ⊙ F(s) )
//!   h ⋆ s = F⁻¹( conj(F(h)) ⊙ F(s) )
//!
//! Power-of-two lengths take a radix-2 FFT; every other length takes the
//! direct O(d²) DFT. Zero-padding is never used: it would break the
//! circular index structure the operators are defined over.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The association operator fusing a hidden state with an aspect vector.
/// Serialized form is exactly "conv" / "corr" / "mul".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionOperator {
    Conv,
    Corr,
    Mul,
}

impl FusionOperator {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionOperator::Conv => "conv",
            FusionOperator::Corr => "corr",
            FusionOperator::Mul => "mul",
        }
    }
}

impl FromStr for FusionOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(FusionOperator::Conv),
            "corr" => Ok(FusionOperator::Corr),
            "mul" => Ok(FusionOperator::Mul),
            other => Err(Error::Config(format!(
                "unknown fusion operator {other:?} (expected conv, corr or mul)"
            ))),
        }
    }
}

impl std::fmt::Display for FusionOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Frequency-domain buffer; one complex bin per input entry.
pub type ComplexVector = Vec<Complex64>;

fn check_equal_len(op: &'static str, h: &[f64], s: &[f64]) -> Result<()> {
    if h.len() != s.len() || h.is_empty() {
        return Err(Error::Dim {
            op,
            left: vec![h.len()],
            right: vec![s.len()],
        });
    }
    Ok(())
}

// ── direct forms ──────────────────────────────────────────────────────

pub fn circ_corr_naive(h: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    check_equal_len("circ_corr", h, s)?;
    let d = h.len();
    let mut out = vec![0.0; d];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &hi) in h.iter().enumerate() {
            acc += hi * s[(k + i) % d];
        }
        *o = acc;
    }
    Ok(out)
}

pub fn circ_conv_naive(h: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    check_equal_len("circ_conv", h, s)?;
    let d = h.len();
    let mut out = vec![0.0; d];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &hi) in h.iter().enumerate() {
            // (k - i) mod d, kept non-negative: i < d so k + d - i > 0
            acc += hi * s[(k + d - i) % d];
        }
        *o = acc;
    }
    Ok(out)
}

// ── DFT ───────────────────────────────────────────────────────────────

fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// Iterative radix-2 FFT, in place. `invert` flips the twiddle sign;
/// the 1/n scale of the inverse is applied by the caller.
fn fft_in_place(buf: &mut [Complex64], invert: bool) {
    let n = buf.len();
    debug_assert!(is_power_of_two(n));
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if invert { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * TAU / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                // fresh twiddle per butterfly: avoids the error growth of
                // the running-product recurrence at large n
                let w = Complex64::from_polar(1.0, ang * k as f64);
                let u = buf[start + k];
                let v = buf[start + k + len / 2] * w;
                buf[start + k] = u + v;
                buf[start + k + len / 2] = u - v;
            }
        }
        len <<= 1;
    }
}

/// Unnormalized forward DFT: X[k] = Σ_n x[n]·e^{−i·2π·kn/d}.
pub fn dft(x: &[f64]) -> ComplexVector {
    let d = x.len();
    if is_power_of_two(d) {
        let mut buf: ComplexVector = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_in_place(&mut buf, false);
        return buf;
    }
    let mut out = vec![Complex64::new(0.0, 0.0); d];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, &v) in x.iter().enumerate() {
            // reduce k·n mod d before the angle: keeps the argument small
            let ang = -TAU * ((k * n) % d) as f64 / d as f64;
            acc += Complex64::from_polar(v, ang);
        }
        *o = acc;
    }
    out
}

/// Inverse DFT with 1/d scaling, full complex result.
pub fn idft_complex(x: &ComplexVector) -> ComplexVector {
    let d = x.len();
    if is_power_of_two(d) {
        let mut buf = x.clone();
        fft_in_place(&mut buf, true);
        let s = 1.0 / d as f64;
        for v in &mut buf {
            *v *= s;
        }
        return buf;
    }
    let mut out = vec![Complex64::new(0.0, 0.0); d];
    for (n, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &v) in x.iter().enumerate() {
            let ang = TAU * ((k * n) % d) as f64 / d as f64;
            acc += v * Complex64::from_polar(1.0, ang);
        }
        *o = acc / d as f64;
    }
    out
}

/// Inverse DFT of a (near-)conjugate-symmetric spectrum; returns the real
/// part, which is the whole answer up to FFT round-off for such inputs.
pub fn idft(x: &ComplexVector) -> Vec<f64> {
    idft_complex(x).iter().map(|c| c.re).collect()
}

// ── FFT-path operators ────────────────────────────────────────────────

pub fn circ_conv_fft(h: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    check_equal_len("circ_conv", h, s)?;
    let fh = dft(h);
    let fs = dft(s);
    let prod: ComplexVector = fh.iter().zip(&fs).map(|(a, b)| a * b).collect();
    Ok(idft(&prod))
}

pub fn circ_corr_fft(h: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    check_equal_len("circ_corr", h, s)?;
    let fh = dft(h);
    let fs = dft(s);
    // conjugate on the first operand only
    let prod: ComplexVector = fh.iter().zip(&fs).map(|(a, b)| a.conj() * b).collect();
    Ok(idft(&prod))
}

/// Fusion forward: h ∘ s under the selected operator, FFT path for the
/// circular cases.
pub fn fuse_forward(op: FusionOperator, h: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    match op {
        FusionOperator::Conv => circ_conv_fft(h, s),
        FusionOperator::Corr => circ_corr_fft(h, s),
        FusionOperator::Mul => {
            check_equal_len("hadamard", h, s)?;
            Ok(h.iter().zip(s).map(|(a, b)| a * b).collect())
        }
    }
}

/// Analytic gradients of `fuse_forward` w.r.t. both operands.
///
/// conv out[k] = Σ_i h[i]·s[(k−i) mod d] gives
///   ∂L/∂h = s ⋆ g   and   ∂L/∂s = h ⋆ g,
/// i.e. the backward pass of convolution is correlation. The corr case
/// follows from the same index substitution in the other direction:
///   ∂L/∂s = h ∗ g   and   ∂L/∂h = g ⋆ s.
pub fn fuse_backward(
    op: FusionOperator,
    grad_out: &[f64],
    h: &[f64],
    s: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_equal_len("fuse_backward", h, s)?;
    check_equal_len("fuse_backward", h, grad_out)?;
    match op {
        FusionOperator::Conv => {
            let grad_h = circ_corr_fft(s, grad_out)?;
            let grad_s = circ_corr_fft(h, grad_out)?;
            Ok((grad_h, grad_s))
        }
        FusionOperator::Corr => {
            let grad_h = circ_corr_fft(grad_out, s)?;
            let grad_s = circ_conv_fft(h, grad_out)?;
            Ok((grad_h, grad_s))
        }
        FusionOperator::Mul => {
            let grad_h: Vec<f64> = s.iter().zip(grad_out).map(|(a, g)| a * g).collect();
            let grad_s: Vec<f64> = h.iter().zip(grad_out).map(|(a, g)| a * g).collect();
            Ok((grad_h, grad_s))
        }
    }
}

// ── norm clipping ─────────────────────────────────────────────────────

/// Projects v onto the unit L2 ball: rescales only when ‖v‖ > 1.
pub fn norm_clip(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// VJP of `norm_clip`. On the rescaling branch, out = v/n with n = ‖v‖:
/// ∂out_i/∂v_j = δ_ij/n − v_i·v_j/n³.
pub fn norm_clip_vjp(v: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n <= 1.0 {
        return grad_out.to_vec();
    }
    let vg: f64 = v.iter().zip(grad_out).map(|(a, b)| a * b).sum();
    let n3 = n * n * n;
    v.iter()
        .zip(grad_out)
        .map(|(vi, gi)| gi / n - vi * vg / n3)
        .collect()
}
