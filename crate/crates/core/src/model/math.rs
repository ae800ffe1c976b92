//! Dense row-major matrices and the handful of numeric kernels the model
//! needs. Everything is f64; parameters are kept on the f32 grid by the
//! optimizer, not here.

/// Row-major matrix. A sequence activation is one row per position.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Mat {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// C = A · B, with A: m×k and B: k×n.
    pub fn matmul(a: &Mat, b: &Mat) -> Mat {
        debug_assert_eq!(a.cols, b.rows);
        let mut c = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            let a_row = a.row(i);
            let c_row = c.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = b.row(k);
                for (c_ij, &b_kj) in c_row.iter_mut().zip(b_row) {
                    *c_ij += a_ik * b_kj;
                }
            }
        }
        c
    }

    /// C = A · Bᵀ, with A: m×k and B: n×k.
    pub fn matmul_bt(a: &Mat, b: &Mat) -> Mat {
        debug_assert_eq!(a.cols, b.cols);
        let mut c = Mat::zeros(a.rows, b.rows);
        for i in 0..a.rows {
            let a_row = a.row(i);
            for j in 0..b.rows {
                let b_row = b.row(j);
                let mut sum = 0.0;
                for (x, y) in a_row.iter().zip(b_row) {
                    sum += x * y;
                }
                *c.at_mut(i, j) = sum;
            }
        }
        c
    }

    /// C = Aᵀ · B, with A: k×m and B: k×n.
    pub fn matmul_at(a: &Mat, b: &Mat) -> Mat {
        debug_assert_eq!(a.rows, b.rows);
        let mut c = Mat::zeros(a.cols, b.cols);
        for k in 0..a.rows {
            let a_row = a.row(k);
            let b_row = b.row(k);
            for (i, &a_ki) in a_row.iter().enumerate() {
                if a_ki == 0.0 {
                    continue;
                }
                let c_row = c.row_mut(i);
                for (c_ij, &b_kj) in c_row.iter_mut().zip(b_row) {
                    *c_ij += a_ki * b_kj;
                }
            }
        }
        c
    }
}

/// In-place softmax over each row.
pub fn softmax_rows(m: &mut Mat) {
    for r in 0..m.rows {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Gradient through a row softmax: ds = p ⊙ (dp − Σ dp⊙p).
pub fn softmax_backward_rows(probs: &Mat, d_probs: &Mat) -> Mat {
    let mut out = Mat::zeros(probs.rows, probs.cols);
    for r in 0..probs.rows {
        let p = probs.row(r);
        let dp = d_probs.row(r);
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for ((o, &pi), &dpi) in out.row_mut(r).iter_mut().zip(p).zip(dp) {
            *o = pi * (dpi - dot);
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044715;

/// GELU, tanh approximation. Smooth everywhere, so finite differences stay
/// honest near zero.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

/// Exact derivative of the tanh-approximated GELU.
pub fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Adds the sinusoidal positional encoding to a sequence of embeddings.
pub fn add_positional_encoding(x: &mut Mat) {
    let d = x.cols;
    for pos in 0..x.rows {
        let row = x.row_mut(pos);
        for i in 0..d / 2 {
            let rate = (pos as f64) / 10_000f64.powf(2.0 * i as f64 / d as f64);
            row[2 * i] += rate.sin();
            row[2 * i + 1] += rate.cos();
        }
        if d % 2 == 1 {
            let i = d / 2;
            let rate = (pos as f64) / 10_000f64.powf(2.0 * i as f64 / d as f64);
            row[d - 1] += rate.sin();
        }
    }
}
