//! Multivariate monomial bases.
//!
//! A [`PolynomialBasis`] of order `Q` in `d` variables holds every multi-index
//! `α` with `0 < |α| ≤ Q`, in graded-lexicographic order: all order-1 indices,
//! then all order-2 indices, and so on, each block sorted lexicographically
//! from the largest leading exponent down. The bases of lower order are
//! therefore prefixes of the higher-order ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent vector of a monomial `θ^α = ∏ θ_i^{α_i}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total order `|α|`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// All monomials of total order `1..=max_order` in `dim` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialBasis {
    dim: usize,
    max_order: u32,
    indices: Vec<MultiIndex>,
}

impl PolynomialBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// Number of basis functions, `J = C(Q+d, d) - 1`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Length of the prefix holding every monomial of order `≤ order`.
    pub fn prefix_len(&self, order: u32) -> usize {
        self.indices
            .iter()
            .take_while(|a| a.order() <= order)
            .count()
    }

    /// Keeps only the columns flagged in `mask`, preserving order.
    pub fn restrict(&self, mask: &[bool]) -> Vec<MultiIndex> {
        self.indices
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(a, _)| a.clone())
            .collect()
    }
}

/// Binomial coefficient with overflow detection.
pub fn binomial(n: u64, k: u64) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step.
        acc = acc
            .checked_mul((n - i) as u128)
            .ok_or(Error::Overflow("binomial coefficient"))?
            / (i + 1) as u128;
    }
    u64::try_from(acc).map_err(|_| Error::Overflow("binomial coefficient"))
}

/// Size of the order-`q` basis in `d` variables, `C(q+d, d) - 1`.
pub fn basis_size(d: usize, q: u32) -> Result<usize> {
    let n = binomial(d as u64 + q as u64, d as u64)?;
    usize::try_from(n - 1).map_err(|_| Error::Overflow("basis size"))
}

/// Number of monomials of total order exactly `q` in `d` variables, `C(d+q-1, q)`.
pub fn count_exact_order(d: usize, q: u32) -> Result<u64> {
    if d == 0 || q == 0 {
        return Err(Error::InvalidArgument(format!(
            "count_exact_order needs d >= 1 and q >= 1 (got d={d}, q={q})"
        )));
    }
    binomial(d as u64 + q as u64 - 1, q as u64)
}

/// Enumerates the order-`max_order` basis in `dim` variables.
pub fn enumerate_basis(dim: usize, max_order: u32) -> Result<PolynomialBasis> {
    if dim == 0 || max_order == 0 {
        return Err(Error::InvalidArgument(format!(
            "basis needs d >= 1 and Q >= 1 (got d={dim}, Q={max_order})"
        )));
    }
    let expected = basis_size(dim, max_order)?;
    let mut indices = Vec::with_capacity(expected);
    let mut scratch = vec![0u32; dim];
    for q in 1..=max_order {
        push_exact_order(&mut scratch, 0, q, &mut indices);
    }
    debug_assert_eq!(indices.len(), expected);
    Ok(PolynomialBasis {
        dim,
        max_order,
        indices,
    })
}

fn push_exact_order(scratch: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == scratch.len() {
        scratch[pos] = remaining;
        out.push(MultiIndex(scratch.to_vec()));
        return;
    }
    for e in (0..=remaining).rev() {
        scratch[pos] = e;
        push_exact_order(scratch, pos + 1, remaining - e, out);
    }
    scratch[pos] = 0;
}

fn check_dims(alpha: &MultiIndex, theta: &[f64]) -> Result<()> {
    if alpha.dim() != theta.len() {
        return Err(Error::DimensionMismatch {
            what: "monomial point",
            expected: alpha.dim(),
            found: theta.len(),
        });
    }
    Ok(())
}

/// `θ^α` with exponent `α_skip` lowered by `lower` (callers guarantee `α_skip ≥ lower`).
fn power_product(alpha: &[u32], theta: &[f64], skip: Option<(usize, u32)>) -> f64 {
    alpha
        .iter()
        .zip(theta)
        .enumerate()
        .map(|(i, (&a, &t))| {
            let a = match skip {
                Some((j, lower)) if j == i => a - lower,
                _ => a,
            };
            // powi(0) is 1 even at t = 0.
            t.powi(a as i32)
        })
        .product()
}

pub(crate) fn eval_unchecked(alpha: &[u32], theta: &[f64]) -> f64 {
    power_product(alpha, theta, None)
}

/// Evaluates `θ^α`, with `0^0 = 1`.
pub fn eval_monomial(alpha: &MultiIndex, theta: &[f64]) -> Result<f64> {
    check_dims(alpha, theta)?;
    Ok(eval_unchecked(&alpha.0, theta))
}

pub(crate) fn grad_component(alpha: &[u32], theta: &[f64], j: usize) -> f64 {
    match alpha[j] {
        0 => 0.0,
        a => a as f64 * power_product(alpha, theta, Some((j, 1))),
    }
}

pub(crate) fn laplacian_unchecked(alpha: &[u32], theta: &[f64]) -> f64 {
    (0..alpha.len())
        .filter(|&j| alpha[j] >= 2)
        .map(|j| {
            let a = alpha[j] as f64;
            a * (a - 1.0) * power_product(alpha, theta, Some((j, 2)))
        })
        .sum()
}

/// Gradient of `θ^α`; component `j` is `α_j θ^{α - e_j}`.
pub fn monomial_grad(alpha: &MultiIndex, theta: &[f64]) -> Result<Vec<f64>> {
    check_dims(alpha, theta)?;
    Ok((0..theta.len())
        .map(|j| grad_component(&alpha.0, theta, j))
        .collect())
}

/// Laplacian of `θ^α`, `Σ_j α_j(α_j - 1) θ^{α - 2e_j}`.
pub fn monomial_laplacian(alpha: &MultiIndex, theta: &[f64]) -> Result<f64> {
    check_dims(alpha, theta)?;
    Ok(laplacian_unchecked(&alpha.0, theta))
}
