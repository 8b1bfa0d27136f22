//! Strong-shattering certificates from explicit constructions.
//!
//! A certificate lists points `x_1..x_D`, thresholds `t_i` and a scale `δ`,
//! together with a witness rule mapping every sign pattern `ζ ∈ {±1}^D` to a
//! parameter `β(ζ)` of the class. Verification evaluates `f_{β(ζ)}(x_i)` and
//! checks `f = t_i + ζ_i δ` to `1e-10`; it uses only the public evaluation
//! rule, not the construction's algebra.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::rng::substream;

pub const EQUALITY_TOLERANCE: f64 = 1e-10;
pub const EXHAUSTIVE_LIMIT: usize = 16;
pub const RANDOM_PATTERNS: usize = 10_000;

/// Link functions with `φ(0) = 0`, strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Sinh,
    Tanh,
}

impl Link {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Link::Identity => z,
            Link::Sinh => z.sinh(),
            Link::Tanh => z.tanh(),
        }
    }

    pub fn inverse(self, y: f64) -> Result<f64> {
        match self {
            Link::Identity => Ok(y),
            Link::Sinh => Ok(y.asinh()),
            Link::Tanh if y.abs() < 1.0 => Ok(y.atanh()),
            Link::Tanh => Err(OpeError::invalid(format!("tanh⁻¹ undefined at {y}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Witness {
    /// `β(ζ) = (1/p) Σ_j φ⁻¹(ζ_j a R) x_j`, `f_β(x) = φ(⟨β, x⟩)`.
    HadamardGlm { p: usize, amplitude: f64, radius: f64, link: Link },
    /// `β_ζ = Σ_j e(J(ζ_{·,j})) ⊗ e_j`, `f_β(x) = ⟨β, x⟩`.
    SparsePacking { p: usize, s: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShatteringCertificate {
    pub points: Vec<Vec<f64>>,
    pub thresholds: Vec<f64>,
    pub scale: f64,
    pub witness: Witness,
}

impl ShatteringCertificate {
    pub fn dimension(&self) -> usize {
        self.points.len()
    }

    /// Parameter realising the sign pattern `ζ` (entries `±1`).
    pub fn witness_parameter(&self, zeta: &[i8]) -> Result<Vec<f64>> {
        if zeta.len() != self.dimension() || zeta.iter().any(|z| z.abs() != 1) {
            return Err(OpeError::invalid("sign pattern must have one ±1 entry per point"));
        }
        match self.witness {
            Witness::HadamardGlm { p, amplitude, radius, link } => {
                let mut beta = vec![0.0; p];
                for (j, z) in zeta.iter().enumerate() {
                    let c = link.inverse(*z as f64 * amplitude * radius)? / p as f64;
                    for (b, x) in beta.iter_mut().zip(&self.points[j]) {
                        *b += c * x;
                    }
                }
                Ok(beta)
            }
            Witness::SparsePacking { p, s, k } => {
                let blocks = 1usize << k;
                let mut beta = vec![0.0; p];
                for j in 0..s {
                    // bits ζ_{1,j}..ζ_{k,j} read as the binary representation of J − 1
                    let mut col = 0usize;
                    for i in 0..k {
                        let bit = (zeta[i * s + j] + 1) / 2;
                        col = (col << 1) | bit as usize;
                    }
                    debug_assert!(col < blocks);
                    beta[col * s + j] = 1.0;
                }
                Ok(beta)
            }
        }
    }

    /// `f_β(x)` for the certificate's class.
    pub fn evaluate(&self, beta: &[f64], x: &[f64]) -> f64 {
        let inner: f64 = beta.iter().zip(x).map(|(b, v)| b * v).sum();
        match self.witness {
            Witness::HadamardGlm { link, .. } => link.apply(inner),
            Witness::SparsePacking { .. } => inner,
        }
    }
}

fn sylvester_hadamard(p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|j| (0..p).map(|i| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 }).collect())
        .collect()
}

/// Single-index certificate on the unnormalised Hadamard columns.
pub fn hadamard_glm_shatter(p: usize, link: Link, amplitude: f64, radius: f64) -> Result<ShatteringCertificate> {
    if p == 0 || !p.is_power_of_two() {
        return Err(OpeError::invalid(format!("p must be a power of two, got {p}")));
    }
    if !(amplitude > 0.0) || !(radius > 0.0) {
        return Err(OpeError::invalid("amplitude and radius must be positive"));
    }
    link.inverse(amplitude * radius)?;
    let cert = ShatteringCertificate {
        points: sylvester_hadamard(p),
        thresholds: vec![0.0; p],
        scale: amplitude * radius,
        witness: Witness::HadamardGlm { p, amplitude, radius, link },
    };
    verify_certificate(&cert, 0)?;
    Ok(cert)
}

/// Sparse hypercube packing with `p = s·2^k`: `D = k·s` points at
/// thresholds `½` and scale `½`.
pub fn sparse_packing_shatter(p: usize, s: usize) -> Result<ShatteringCertificate> {
    if s == 0 || p == 0 || !p.is_multiple_of(s) || !(p / s).is_power_of_two() {
        return Err(OpeError::invalid(format!("p/s must be a power of two, got p={p}, s={s}")));
    }
    let blocks = p / s;
    let k = blocks.trailing_zeros() as usize;
    if k == 0 {
        return Err(OpeError::invalid("s = p leaves no binary digits: the construction has no points"));
    }
    // A[i][c]: bit i (most significant first) of the column index c
    let bit = |i: usize, c: usize| ((c >> (k - 1 - i)) & 1) as f64;
    let mut points = Vec::with_capacity(k * s);
    for i in 0..k {
        for j in 0..s {
            let mut x = vec![0.0; p];
            for c in 0..blocks {
                x[c * s + j] = bit(i, c);
            }
            points.push(x);
        }
    }
    let cert = ShatteringCertificate {
        thresholds: vec![0.5; points.len()],
        points,
        scale: 0.5,
        witness: Witness::SparsePacking { p, s, k },
    };
    verify_certificate(&cert, 0)?;
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub patterns_checked: usize,
    pub exhaustive: bool,
    pub max_error: f64,
    pub max_l2_norm: f64,
    pub max_abs_coefficient: f64,
    pub max_support: usize,
}

fn pattern_from_bits(bits: u64, d: usize) -> Vec<i8> {
    (0..d).map(|i| if (bits >> i) & 1 == 1 { 1 } else { -1 }).collect()
}

/// Check every sign pattern (all of them when `D ≤ 16`, otherwise `10⁴`
/// seeded random ones).
pub fn verify_certificate(cert: &ShatteringCertificate, seed: u64) -> Result<Verification> {
    let d = cert.dimension();
    if d == 0 || cert.thresholds.len() != d {
        return Err(OpeError::Certificate("certificate has no points or mismatched thresholds".into()));
    }
    let exhaustive = d <= EXHAUSTIVE_LIMIT;
    let patterns: Vec<Vec<i8>> = if exhaustive {
        (0..1u64 << d).map(|b| pattern_from_bits(b, d)).collect()
    } else {
        let mut rng = substream(seed, 0x5A77);
        (0..RANDOM_PATTERNS).map(|_| (0..d).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()).collect()
    };
    let mut report = Verification {
        patterns_checked: patterns.len(),
        exhaustive,
        max_error: 0.0,
        max_l2_norm: 0.0,
        max_abs_coefficient: 0.0,
        max_support: 0,
    };
    for zeta in &patterns {
        let beta = cert.witness_parameter(zeta)?;
        for (i, x) in cert.points.iter().enumerate() {
            let target = cert.thresholds[i] + zeta[i] as f64 * cert.scale;
            let err = (cert.evaluate(&beta, x) - target).abs();
            report.max_error = report.max_error.max(err);
            if !(err <= EQUALITY_TOLERANCE) {
                return Err(OpeError::Certificate(format!("pattern {zeta:?} misses point {i} by {err:e}")));
            }
        }
        report.max_l2_norm = report.max_l2_norm.max(beta.iter().map(|b| b * b).sum::<f64>().sqrt());
        report.max_abs_coefficient = report.max_abs_coefficient.max(beta.iter().fold(0.0, |m, b| m.max(b.abs())));
        report.max_support = report.max_support.max(beta.iter().filter(|b| **b != 0.0).count());
    }
    if let Witness::SparsePacking { s, .. } = cert.witness {
        if report.max_support > s || report.max_abs_coefficient > 1.0 {
            return Err(OpeError::Certificate("witness leaves the s-sparse unit box".into()));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hadamard_columns_orthogonal() {
        let h = sylvester_hadamard(8);
        for j in 0..8 {
            for l in 0..8 {
                let ip: f64 = h[j].iter().zip(&h[l]).map(|(a, b)| a * b).sum();
                assert_eq!(ip, if j == l { 8.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn p2_identity_patterns() {
        let cert = hadamard_glm_shatter(2, Link::Identity, 1.0, 1.0).unwrap();
        let v = verify_certificate(&cert, 0).unwrap();
        assert_eq!(v.patterns_checked, 4);
        assert_eq!(v.max_error, 0.0);
    }

    #[test]
    fn all_plus_pattern() {
        let cert = hadamard_glm_shatter(4, Link::Identity, 0.5, 1.0).unwrap();
        let beta = cert.witness_parameter(&[1, 1, 1, 1]).unwrap();
        for x in &cert.points {
            assert!((cert.evaluate(&beta, x) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_norm_bound() {
        let p = 8;
        let a = 1.0 / (p as f64).sqrt();
        let cert = hadamard_glm_shatter(p, Link::Identity, a, 2.0).unwrap();
        let v = verify_certificate(&cert, 0).unwrap();
        assert!(v.max_l2_norm <= 2.0 + 1e-12);
    }

    #[test]
    fn nonlinear_links() {
        assert!(hadamard_glm_shatter(4, Link::Sinh, 0.5, 3.0).is_ok());
        assert!(hadamard_glm_shatter(4, Link::Tanh, 0.5, 1.0).is_ok());
        assert!(hadamard_glm_shatter(4, Link::Tanh, 1.0, 1.0).is_err());
        assert!(hadamard_glm_shatter(6, Link::Identity, 1.0, 1.0).is_err());
    }

    #[test]
    fn sparse_small_cases() {
        let c = sparse_packing_shatter(4, 2).unwrap();
        assert_eq!(c.dimension(), 2);
        assert_eq!(verify_certificate(&c, 0).unwrap().patterns_checked, 4);
        let c = sparse_packing_shatter(8, 2).unwrap();
        assert_eq!(c.dimension(), 4);
        let v = verify_certificate(&c, 0).unwrap();
        assert_eq!(v.patterns_checked, 16);
        assert!(v.max_support <= 2);
        assert!(sparse_packing_shatter(4, 4).is_err());
        assert!(sparse_packing_shatter(6, 2).is_err());
    }

    #[test]
    fn tampered_certificate_fails() {
        let mut c = sparse_packing_shatter(8, 2).unwrap();
        c.thresholds[1] = 0.4;
        assert!(verify_certificate(&c, 0).is_err());
    }

    #[test]
    fn large_dimension_samples_patterns() {
        let c = hadamard_glm_shatter(32, Link::Identity, 0.1, 1.0).unwrap();
        let v = verify_certificate(&c, 5).unwrap();
        assert!(!v.exhaustive && v.patterns_checked == RANDOM_PATTERNS);
    }
}
