//! Exact rational coefficients for certification of shipped tableaux.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::ResidualReport;

pub type Rational = BigRational;
pub(crate) type RMat = Vec<Vec<Rational>>;

/// Rational copies of a component's coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTableau {
    pub c: Vec<Rational>,
    pub a: RMat,
    pub u: RMat,
    pub b: RMat,
    pub v: RMat,
    pub w: RMat,
}

/// Parses `"num/den"`, `"int"` or a plain decimal such as `"0.25"`.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let t = text.trim();
    if let Some((n, d)) = t.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    if let Ok(n) = t.parse::<BigInt>() {
        return Some(BigRational::from_integer(n));
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int, frac) = body.split_once('.')?;
    if !frac.chars().all(|ch| ch.is_ascii_digit()) || !int.chars().all(|ch| ch.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let den = num_traits::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(digits, den);
    Some(if neg { -r } else { r })
}

pub fn format_rational(x: &Rational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub(crate) fn to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub(crate) fn to_dmatrix(m: &RMat, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), cols, |i, j| to_f64(&m[i][j]))
}

fn factorial(k: usize) -> Rational {
    let mut f = BigInt::one();
    for i in 2..=k {
        f *= BigInt::from(i);
    }
    BigRational::from_integer(f)
}

fn matvec(m: &RMat, x: &[Rational]) -> Vec<Rational> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn column(m: &RMat, k: usize) -> Vec<Rational> {
    m.iter().map(|row| row[k].clone()).collect()
}

fn max_abs(v: &[Rational]) -> f64 {
    v.iter()
        .map(|x| x.abs())
        .max()
        .map(|m| to_f64(&m))
        .unwrap_or(0.0)
}

fn sub(a: &[Rational], b: &[Rational]) -> Vec<Rational> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl ExactTableau {
    /// Residuals evaluated without rounding; an exact zero reports as `0.0`.
    pub fn residuals(&self, q: usize) -> ResidualReport {
        let s = self.c.len();
        let r = self.v.len();
        let p = self.w[0].len() - 1;
        let ones = vec![Rational::one(); s];
        let w0 = column(&self.w, 0);
        let preconsistency_u = max_abs(&sub(&matvec(&self.u, &w0), &ones));
        let preconsistency_v = max_abs(&sub(&matvec(&self.v, &w0), &w0));
        let cpow = |k: usize| -> Vec<Rational> {
            self.c.iter().map(|x| num_traits::pow(x.clone(), k)).collect()
        };
        let mut stage = Vec::new();
        let mut output = Vec::new();
        for k in 1..=p {
            let fk = factorial(k);
            let fk1 = factorial(k - 1);
            let ck: Vec<Rational> = cpow(k).into_iter().map(|x| x / &fk).collect();
            let ck1: Vec<Rational> = cpow(k - 1).into_iter().map(|x| x / &fk1).collect();
            let wk = column(&self.w, k);
            let st = sub(&sub(&ck, &matvec(&self.a, &ck1)), &matvec(&self.u, &wk));
            stage.push(max_abs(&st));
            let mut acc = vec![Rational::zero(); r];
            for l in 0..=k {
                let fl = factorial(l);
                for (dst, x) in acc.iter_mut().zip(column(&self.w, k - l)) {
                    *dst += x / &fl;
                }
            }
            let out = sub(&sub(&acc, &matvec(&self.b, &ck1)), &matvec(&self.v, &wk));
            output.push(max_abs(&out));
        }
        ResidualReport {
            preconsistency_u,
            preconsistency_v,
            stage,
            output,
            q,
        }
    }

    /// `V - B A^{-1} U` in exact arithmetic, `None` when `A` is singular.
    /// `B A^{-1}`, or `None` when `A` is singular.
    pub(crate) fn b_a_inverse(&self) -> Option<RMat> {
        let at = transpose(&self.a);
        let x = solve(&at, &transpose(&self.b))?;
        Some(transpose(&x))
    }

    pub fn stability_at_infinity(&self) -> Option<RMat> {
        let ainv_u = solve(&self.a, &self.u)?;
        let r = self.v.len();
        let s = self.a.len();
        let cols = self.u[0].len();
        let mut out = self.v.clone();
        for i in 0..r {
            for j in 0..cols {
                let mut acc = Rational::zero();
                for k in 0..s {
                    acc += &self.b[i][k] * &ainv_u[k][j];
                }
                out[i][j] -= acc;
            }
        }
        Some(out)
    }
}

/// Solves `A X = R` by Gauss-Jordan elimination over the rationals.
fn transpose(m: &RMat) -> RMat {
    (0..m[0].len()).map(|j| m.iter().map(|row| row[j].clone()).collect()).collect()
}

fn solve(a: &RMat, rhs: &RMat) -> Option<RMat> {
    let n = a.len();
    let m = rhs[0].len();
    let mut aug: RMat = a
        .iter()
        .zip(rhs)
        .map(|(ra, rr)| ra.iter().chain(rr.iter()).cloned().collect())
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&i| !aug[i][col].is_zero())?;
        aug.swap(col, piv);
        let inv = aug[col][col].recip();
        for x in aug[col].iter_mut() {
            *x *= &inv;
        }
        for i in 0..n {
            if i != col && !aug[i][col].is_zero() {
                let f = aug[i][col].clone();
                let pivot_row = aug[col].clone();
                for (dst, src) in aug[i].iter_mut().zip(pivot_row.iter()) {
                    *dst -= &f * src;
                }
            }
        }
    }
    Some(aug.into_iter().map(|row| row[n..n + m].to_vec()).collect())
}
