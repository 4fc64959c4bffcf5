//! Real polynomials stored in ascending order, with a balanced
//! companion-matrix root finder.

use nalgebra::DMatrix;
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    /// `c[j]` multiplies `x^j`.
    pub c: Vec<f64>,
}

impl Poly {
    pub fn new(mut c: Vec<f64>) -> Self {
        while c.len() > 1 && c[c.len() - 1] == 0.0 {
            c.pop();
        }
        if c.is_empty() {
            c.push(0.0);
        }
        Poly { c }
    }

    pub fn constant(a: f64) -> Self {
        Poly::new(vec![a])
    }

    pub fn from_descending(d: &[f64]) -> Self {
        Poly::new(d.iter().rev().copied().collect())
    }

    pub fn descending(&self) -> Vec<f64> {
        self.c.iter().rev().copied().collect()
    }

    pub fn degree(&self) -> usize {
        self.c.len() - 1
    }

    pub fn leading(&self) -> f64 {
        self.c[self.c.len() - 1]
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut c = vec![0.0; self.c.len() + o.c.len() - 1];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in o.c.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Poly::new(c)
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut c = vec![0.0; self.c.len().max(o.c.len())];
        for (i, a) in self.c.iter().enumerate() {
            c[i] += a;
        }
        for (i, b) in o.c.iter().enumerate() {
            c[i] += b;
        }
        Poly::new(c)
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.c.iter().map(|a| a * s).collect())
    }

    pub fn derivative(&self) -> Poly {
        if self.c.len() == 1 {
            return Poly::constant(0.0);
        }
        Poly::new(self.c.iter().enumerate().skip(1).map(|(j, a)| j as f64 * a).collect())
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, a| acc * x + a)
    }

    pub fn eval_c(&self, x: Complex64) -> Complex64 {
        self.c
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, a| acc * x + a)
    }

    /// Sum of |c_j| |x|^j, the natural scale against which |p(x)| is small.
    pub fn magnitude_scale(&self, x: Complex64) -> f64 {
        let r = x.norm();
        self.c.iter().rev().fold(0.0, |acc, a| acc * r + a.abs())
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.c.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
    }

    /// All complex roots, via eigenvalues of the balanced companion matrix
    /// of the monic polynomial followed by a guarded Newton polish.
    pub fn roots(&self) -> Vec<Complex64> {
        let n = self.degree();
        if n == 0 {
            return Vec::new();
        }
        let lead = self.leading();
        if n == 1 {
            return vec![Complex64::new(-self.c[0] / lead, 0.0)];
        }
        let mut m = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            m[(0, j)] = -self.c[n - 1 - j] / lead;
        }
        for i in 1..n {
            m[(i, i - 1)] = 1.0;
        }
        balance(&mut m);
        let eig = m.complex_eigenvalues();
        let dp = self.derivative();
        eig.iter().map(|&r| self.polish(&dp, r)).collect()
    }

    fn polish(&self, dp: &Poly, mut r: Complex64) -> Complex64 {
        let mut fr = self.eval_c(r).norm();
        for _ in 0..8 {
            let d = dp.eval_c(r);
            if d.norm() == 0.0 {
                break;
            }
            let cand = r - self.eval_c(r) / d;
            let fc = self.eval_c(cand).norm();
            if fc.is_finite() && fc < fr {
                r = cand;
                fr = fc;
            } else {
                break;
            }
        }
        r
    }
}

/// Parlett–Reinsch balancing by powers of two; leaves the spectrum unchanged.
pub fn balance(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    let radix = 2.0_f64;
    let sqrdx = radix * radix;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut g = r / radix;
            let mut f = 1.0;
            let s = c + r;
            while c < g {
                f *= radix;
                c *= sqrdx;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for j in 0..n {
                    m[(i, j)] *= g;
                }
                for j in 0..n {
                    m[(j, i)] *= f;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let p = Poly::new(vec![1.0, 1.0]);
        let q = p.mul(&p);
        assert_eq!(q.c, vec![1.0, 2.0, 1.0]);
        assert_eq!(q.add(&Poly::constant(-1.0)).c, vec![0.0, 2.0, 1.0]);
        assert_eq!(q.derivative().c, vec![2.0, 2.0]);
        assert_eq!(q.eval(2.0), 9.0);
        assert_eq!(Poly::from_descending(&[1.0, 0.0, -4.0]).c, vec![-4.0, 0.0, 1.0]);
    }

    #[test]
    fn roots_of_known_polynomials() {
        // (x-1)(x-2)(x^2+1)
        let p = Poly::new(vec![-1.0, 1.0])
            .mul(&Poly::new(vec![-2.0, 1.0]))
            .mul(&Poly::new(vec![1.0, 0.0, 1.0]));
        assert_eq!(p.degree(), 4);
        let mut r = p.roots();
        r.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        let want = [
            Complex64::new(0.0, -1.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
        ];
        for (a, b) in r.iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn widely_scaled_roots() {
        // roots 1e-4 and 1e4
        let p = Poly::new(vec![1.0, -(1e4 + 1e-4), 1.0]);
        let mut r: Vec<f64> = p.roots().iter().map(|z| z.re).collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((r[0] - 1e-4).abs() < 1e-16);
        assert!((r[1] - 1e4).abs() < 1e-9);
    }
}
