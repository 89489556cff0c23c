//! Small dense helpers for the hot paths. Hessians here are r x r with
//! r <= 4, so closed-form determinants and a short Jacobi sweep beat a
//! general factorization; nalgebra is used on the cold paths instead.

/// Determinant of a dense row-major r x r matrix, r <= 4.
pub fn det_small(m: &[f64], r: usize) -> f64 {
    debug_assert_eq!(m.len(), r * r);
    match r {
        0 => 1.0,
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        4 => {
            // Laplace along the first row over 3x3 minors.
            let minor = |c: usize| {
                let mut sub = [0.0; 9];
                let mut k = 0;
                for i in 1..4 {
                    for j in 0..4 {
                        if j != c {
                            sub[k] = m[i * 4 + j];
                            k += 1;
                        }
                    }
                }
                det_small(&sub, 3)
            };
            m[0] * minor(0) - m[1] * minor(1) + m[2] * minor(2) - m[3] * minor(3)
        }
        _ => nalgebra::DMatrix::from_row_slice(r, r, m).determinant(),
    }
}

/// Inverse of a symmetric positive definite r x r matrix (row-major).
/// Returns None when the determinant is not strictly positive.
pub fn inv_spd_small(m: &[f64], r: usize) -> Option<Vec<f64>> {
    let d = det_small(m, r);
    if !(d > 0.0) || !d.is_finite() {
        return None;
    }
    match r {
        1 => Some(vec![1.0 / m[0]]),
        2 => Some(vec![m[3] / d, -m[1] / d, -m[2] / d, m[0] / d]),
        _ => {
            let a = nalgebra::DMatrix::from_row_slice(r, r, m);
            a.try_inverse().map(|inv| inv.as_slice().to_vec())
        }
    }
}

/// Eigenvalues of a symmetric r x r matrix by cyclic Jacobi rotations.
/// Deterministic and adequate for r <= 4.
pub fn sym_eigenvalues(m: &[f64], r: usize) -> Vec<f64> {
    if r == 1 {
        return vec![m[0]];
    }
    if r == 2 {
        let tr = m[0] + m[3];
        let det = m[0] * m[3] - m[1] * m[2];
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        return vec![tr / 2.0 - disc, tr / 2.0 + disc];
    }
    let mut a = m.to_vec();
    for _ in 0..64 {
        let mut off = 0.0;
        for i in 0..r {
            for j in (i + 1)..r {
                off += a[i * r + j] * a[i * r + j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..r {
            for q in (p + 1)..r {
                let apq = a[p * r + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * r + q] - a[p * r + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..r {
                    let akp = a[k * r + p];
                    let akq = a[k * r + q];
                    a[k * r + p] = c * akp - s * akq;
                    a[k * r + q] = s * akp + c * akq;
                }
                for k in 0..r {
                    let apk = a[p * r + k];
                    let aqk = a[q * r + k];
                    a[p * r + k] = c * apk - s * aqk;
                    a[q * r + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..r).map(|i| a[i * r + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Banded matrix in LAPACK-style band storage with room for pivoting fill:
/// entry (i, j) with -ku <= i - j <= kl lives at row kl + ku + i - j. The
/// extra kl rows at the top absorb fill-in from row swaps, so factorization
/// happens in place.
pub struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        Banded {
            n,
            kl,
            ku,
            data: vec![0.0; (2 * kl + ku + 1) * n],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(i + self.ku >= j && j + self.kl >= i);
        (self.kl + self.ku + i - j) * self.n + j
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// LU factorization with partial pivoting, in place. Returns the pivot
    /// rows, or None when a pivot column is exactly zero.
    pub fn factor(&mut self) -> Option<Vec<usize>> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let width = kl + ku;
        let mut piv = vec![0usize; n];
        for j in 0..n {
            // Columns the elimination of column j can touch.
            let ju = (j + width).min(n - 1);
            let km = kl.min(n - 1 - j);
            let mut jp = j;
            let mut best = 0.0f64;
            for i in j..=j + km {
                let v = self.data[(kl + ku + i - j) * n + j].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            if best == 0.0 {
                return None;
            }
            piv[j] = jp;
            if jp != j {
                for c in j..=ju {
                    let a = (kl + ku + jp - c) * n + c;
                    let b = (kl + ku + j - c) * n + c;
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[(kl + ku) * n + j];
            for i in (j + 1)..=(j + km) {
                self.data[(kl + ku + i - j) * n + j] /= pivot;
            }
            for c in (j + 1)..=ju {
                let f = self.data[(kl + ku + j - c) * n + c];
                if f != 0.0 {
                    for i in (j + 1)..=(j + km) {
                        let l = self.data[(kl + ku + i - j) * n + j];
                        self.data[(kl + ku + i - c) * n + c] -= l * f;
                    }
                }
            }
        }
        Some(piv)
    }

    /// Solve with a factorization from `factor`, overwriting b.
    pub fn solve(&self, piv: &[usize], b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let width = kl + ku;
        for j in 0..n {
            b.swap(j, piv[j]);
            let km = kl.min(n - 1 - j);
            for i in (j + 1)..=(j + km) {
                b[i] -= self.data[(kl + ku + i - j) * n + j] * b[j];
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.data[(kl + ku) * n + j];
            let lo = j.saturating_sub(width);
            for i in lo..j {
                b[i] -= self.data[(kl + ku + i - j) * n + j] * b[j];
            }
        }
    }
}
