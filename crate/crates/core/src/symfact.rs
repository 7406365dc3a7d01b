//! Bunch–Kaufman `P·A·Pᵀ = L·D·Lᵀ` for small symmetric blocks.
//!
//! `D` mixes 1×1 and 2×2 pivots, so indefinite blocks factor stably.
//! Only the lower triangle of the input is read.

use nalgebra::SMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pivot {
    One(f64),
    Two { d11: f64, d21: f64, d22: f64 },
}

/// Factor held for repeated solves.
#[derive(Debug, Clone)]
pub struct SymIndefinite<const B: usize> {
    l: SMatrix<f64, B, B>,
    pivots: Vec<Pivot>,
    perm: [usize; B],
}

/// The block is numerically singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular;

const ALPHA: f64 = 0.640_388_203_202_208_4; // (1 + √17) / 8

impl<const B: usize> SymIndefinite<B> {
    pub fn factor(m: &SMatrix<f64, B, B>) -> Result<Self, Singular> {
        let mut a = SMatrix::<f64, B, B>::zeros();
        for j in 0..B {
            for i in j..B {
                a[(i, j)] = m[(i, j)];
                a[(j, i)] = m[(i, j)];
            }
        }
        let scale = a.amax();
        if !scale.is_finite() || scale == 0.0 {
            return Err(Singular);
        }
        let tol = (B as f64) * f64::EPSILON * scale;

        let mut l = SMatrix::<f64, B, B>::identity();
        let mut perm: [usize; B] = std::array::from_fn(|i| i);
        let mut pivots = Vec::with_capacity(B);
        let mut k = 0;
        while k < B {
            let absakk = a[(k, k)].abs();
            let (imax, colmax) = ((k + 1)..B)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if absakk.max(colmax) <= tol {
                return Err(Singular);
            }
            let (two, kp) = if absakk >= ALPHA * colmax {
                (false, k)
            } else {
                let rowmax = (k..B)
                    .filter(|&j| j != imax)
                    .map(|j| a[(imax, j)].abs())
                    .fold(0.0, f64::max);
                if absakk * rowmax >= ALPHA * colmax * colmax {
                    (false, k)
                } else if a[(imax, imax)].abs() >= ALPHA * rowmax {
                    (false, imax)
                } else {
                    (true, imax)
                }
            };
            let kk = if two { k + 1 } else { k };
            if kp != kk {
                a.swap_rows(kk, kp);
                a.swap_columns(kk, kp);
                perm.swap(kk, kp);
                for j in 0..k {
                    let t = l[(kk, j)];
                    l[(kk, j)] = l[(kp, j)];
                    l[(kp, j)] = t;
                }
            }
            if !two {
                let d = a[(k, k)];
                if d.abs() <= tol {
                    return Err(Singular);
                }
                for i in (k + 1)..B {
                    l[(i, k)] = a[(i, k)] / d;
                }
                for j in (k + 1)..B {
                    for i in (k + 1)..B {
                        a[(i, j)] -= l[(i, k)] * a[(j, k)];
                    }
                }
                pivots.push(Pivot::One(d));
                k += 1;
            } else {
                let (d11, d21, d22) = (a[(k, k)], a[(k + 1, k)], a[(k + 1, k + 1)]);
                let det = d11 * d22 - d21 * d21;
                if det.abs() <= tol * (d11.abs() * d22.abs() + d21 * d21).sqrt() {
                    return Err(Singular);
                }
                for i in (k + 2)..B {
                    let (x, y) = (a[(i, k)], a[(i, k + 1)]);
                    l[(i, k)] = (x * d22 - y * d21) / det;
                    l[(i, k + 1)] = (y * d11 - x * d21) / det;
                }
                for j in (k + 2)..B {
                    for i in (k + 2)..B {
                        a[(i, j)] -= l[(i, k)] * a[(j, k)] + l[(i, k + 1)] * a[(j, k + 1)];
                    }
                }
                pivots.push(Pivot::Two { d11, d21, d22 });
                k += 2;
            }
        }
        Ok(Self { l, pivots, perm })
    }

    /// Solve `A·X = rhs` for any number of right-hand columns.
    pub fn solve<const M: usize>(&self, rhs: &SMatrix<f64, B, M>) -> SMatrix<f64, B, M> {
        let mut y = SMatrix::<f64, B, M>::zeros();
        for k in 0..B {
            y.set_row(k, &rhs.row(self.perm[k]));
        }
        // L z = y
        for c in 0..M {
            for i in 0..B {
                let mut s = y[(i, c)];
                for j in 0..i {
                    s -= self.l[(i, j)] * y[(j, c)];
                }
                y[(i, c)] = s;
            }
        }
        // D w = z
        let mut k = 0;
        for p in &self.pivots {
            match *p {
                Pivot::One(d) => {
                    for c in 0..M {
                        y[(k, c)] /= d;
                    }
                    k += 1;
                }
                Pivot::Two { d11, d21, d22 } => {
                    let det = d11 * d22 - d21 * d21;
                    for c in 0..M {
                        let (x0, x1) = (y[(k, c)], y[(k + 1, c)]);
                        y[(k, c)] = (d22 * x0 - d21 * x1) / det;
                        y[(k + 1, c)] = (d11 * x1 - d21 * x0) / det;
                    }
                    k += 2;
                }
            }
        }
        // Lᵀ u = w
        for c in 0..M {
            for i in (0..B).rev() {
                let mut s = y[(i, c)];
                for j in (i + 1)..B {
                    s -= self.l[(j, i)] * y[(j, c)];
                }
                y[(i, c)] = s;
            }
        }
        let mut x = SMatrix::<f64, B, M>::zeros();
        for k in 0..B {
            x.set_row(self.perm[k], &y.row(k));
        }
        x
    }

    /// Number of 2×2 pivots used.
    pub fn two_by_two_pivots(&self) -> usize {
        self.pivots
            .iter()
            .filter(|p| matches!(p, Pivot::Two { .. }))
            .count()
    }
}
