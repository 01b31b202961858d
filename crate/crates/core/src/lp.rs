//! Dense exact-rational primal simplex for `max c·x  s.t.  A x <= b, x >= 0`
//! with `b >= 0`, so the slack basis is an initial feasible vertex.
//! Bland's rule guarantees termination.

use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::rational::Rational;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LpSolution {
    pub x: Vec<Rational>,
    pub objective: Rational,
    pub pivots: usize,
}

pub fn maximize(a: &[Vec<Rational>], b: &[Rational], c: &[Rational]) -> Result<LpSolution> {
    let m = a.len();
    let n = c.len();
    if b.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(Error::Structural("constraint matrix shape mismatch".into()));
    }
    if b.iter().any(|v| v.is_negative()) {
        return Err(Error::Precondition("right-hand side must be nonnegative".into()));
    }
    let width = n + m;
    // Row i: [A_i | e_i | b_i]; objective row holds reduced costs -c.
    let mut rows: Vec<Vec<Rational>> = (0..m)
        .map(|i| {
            let mut row = Vec::with_capacity(width + 1);
            row.extend(a[i].iter().cloned());
            row.extend((0..m).map(|k| if k == i { Rational::from_integer(1.into()) } else { Rational::zero() }));
            row.push(b[i].clone());
            row
        })
        .collect();
    let mut obj: Vec<Rational> = c.iter().map(|v| -v).chain((0..=m).map(|_| Rational::zero())).collect();
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut pivots = 0usize;

    while let Some(enter) = (0..width).find(|&j| obj[j].is_negative()) {
        let mut leave: Option<(usize, Rational)> = None;
        for (i, row) in rows.iter().enumerate() {
            if !row[enter].is_positive() {
                continue;
            }
            let ratio = &row[width] / &row[enter];
            let better = match &leave {
                None => true,
                Some((li, best)) => ratio < *best || (ratio == *best && basis[i] < basis[*li]),
            };
            if better {
                leave = Some((i, ratio));
            }
        }
        let Some((pr, _)) = leave else {
            return Err(Error::Precondition("linear program is unbounded".into()));
        };
        let pivot = rows[pr][enter].clone();
        for v in rows[pr].iter_mut() {
            if !v.is_zero() {
                *v /= &pivot;
            }
        }
        let pivot_row = rows[pr].clone();
        let nonzero: Vec<usize> = (0..=width).filter(|&j| !pivot_row[j].is_zero()).collect();
        for (i, row) in rows.iter_mut().enumerate() {
            if i == pr || row[enter].is_zero() {
                continue;
            }
            let factor = row[enter].clone();
            for &j in &nonzero {
                row[j] -= &factor * &pivot_row[j];
            }
        }
        if !obj[enter].is_zero() {
            let factor = obj[enter].clone();
            for &j in &nonzero {
                obj[j] -= &factor * &pivot_row[j];
            }
        }
        basis[pr] = enter;
        pivots += 1;
    }

    let mut x = vec![Rational::zero(); n];
    for (i, &var) in basis.iter().enumerate() {
        if var < n {
            x[var] = rows[i][width].clone();
        }
    }
    Ok(LpSolution { objective: obj[width].clone(), x, pivots })
}
