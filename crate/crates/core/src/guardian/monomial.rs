use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// All monomials of `input_dim` variables up to total degree `degree`, in
/// graded order; within one degree the exponent of the first variable
/// decreases first (`1, x1, x2, x1^2, x1 x2, x2^2, ...`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialBasis {
    pub input_dim: usize,
    pub degree: u32,
    pub exponents: Vec<Vec<u32>>,
}

fn compositions(total: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, out);
        prefix.pop();
    }
}

/// `C(n + d, d)`.
pub fn term_count(input_dim: usize, degree: u32) -> usize {
    let mut c: u128 = 1;
    for i in 1..=degree as u128 {
        c = c * (input_dim as u128 + i) / i;
    }
    c as usize
}

impl MonomialBasis {
    pub fn new(input_dim: usize, degree: u32) -> Result<Self> {
        if input_dim == 0 || degree == 0 {
            return Err(Error::InvalidInput("monomial basis needs input_dim >= 1 and degree >= 1".into()));
        }
        let mut exponents = Vec::with_capacity(term_count(input_dim, degree));
        for d in 0..=degree {
            compositions(d, input_dim, &mut Vec::with_capacity(input_dim), &mut exponents);
        }
        Ok(MonomialBasis { input_dim, degree, exponents })
    }

    pub fn term_count(&self) -> usize {
        self.exponents.len()
    }

    /// `e(x)`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        let mut out = vec![0.0; self.term_count()];
        self.embed_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn embed_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.degree as usize;
        // powers[j][p] = x_j^p
        let powers: Vec<Vec<f64>> = x
            .iter()
            .map(|&v| {
                let mut p = Vec::with_capacity(d + 1);
                let mut acc = 1.0;
                for _ in 0..=d {
                    p.push(acc);
                    acc *= v;
                }
                p
            })
            .collect();
        for (slot, exps) in out.iter_mut().zip(&self.exponents) {
            *slot = exps.iter().zip(&powers).map(|(&e, p)| p[e as usize]).product();
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let fresh = MonomialBasis::new(self.input_dim, self.degree)?;
        if fresh.exponents != self.exponents {
            return Err(Error::InvalidInput("monomial ordering does not match graded-lex order".into()));
        }
        Ok(())
    }
}
