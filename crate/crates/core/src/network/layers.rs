//! Dense-layer primitives with hand-derived backward passes. Everything is
//! shaped so the finite-difference oracle can check each parameter of the
//! assembled network.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray::linalg::general_mat_mul;

use super::params::{GradView, Params};

/// `y = x · W + b` over a batch of rows.
pub fn linear_fwd(x: &ArrayView2<f64>, params: &Params, name: &str) -> Array2<f64> {
    let w = params.weight(name);
    let b = params.bias(name);
    let mut y = x.dot(&w);
    for mut row in y.rows_mut() {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    y
}

/// Backward of [`linear_fwd`]: accumulates dW = xᵀ·dy and db = Σ rows dy
/// into the gradient, returns dx = dy · Wᵀ.
pub fn linear_bwd(
    x: &ArrayView2<f64>,
    dy: &ArrayView2<f64>,
    params: &Params,
    grads: &mut GradView,
    name: &str,
) -> Array2<f64> {
    {
        let mut dw = grads.weight_mut(name);
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut dw);
    }
    {
        let db = grads.bias_mut(name);
        for row in dy.rows() {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    let w = params.weight(name);
    dy.dot(&w.t())
}

pub fn relu_fwd(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Backward through ReLU given the pre-activation.
pub fn relu_bwd(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |g, p| {
        if *p <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

const GELU_K: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

/// Tanh-approximated GELU.
pub fn gelu_fwd(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_K * (v + GELU_C * v * v * v)).tanh()))
}

pub fn gelu_bwd(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |g, &v| {
        let t = (GELU_K * (v + GELU_C * v * v * v)).tanh();
        let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * v * v);
        *g *= d;
    });
    dx
}

pub fn silu_fwd(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v / (1.0 + (-v).exp()))
}

pub fn silu_bwd(pre: &Array1<f64>, dy: &Array1<f64>) -> Array1<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |g, &v| {
        let s = 1.0 / (1.0 + (-v).exp());
        *g *= s * (1.0 + v * (1.0 - s));
    });
    dx
}

pub const LN_EPS: f64 = 1e-6;

/// Row-wise layer normalization without affine parameters.
pub struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm_fwd(x: &ArrayView2<f64>) -> LayerNormCache {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
        inv_std.push(inv);
    }
    LayerNormCache { xhat, inv_std }
}

pub fn layer_norm_bwd(cache: &LayerNormCache, dxhat: &ArrayView2<f64>) -> Array2<f64> {
    let d = cache.xhat.ncols() as f64;
    let mut dx = dxhat.to_owned();
    for ((mut drow, xrow), inv) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(&cache.inv_std)
    {
        let mean_d = drow.sum() / d;
        let mean_dx = drow
            .iter()
            .zip(xrow.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / d;
        for (g, xh) in drow.iter_mut().zip(xrow.iter()) {
            *g = (*g - mean_d - xh * mean_dx) * inv;
        }
    }
    dx
}

/// Row-wise softmax, in place.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
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

/// Backward through a row-wise softmax: `dS = P ⊙ (dP − rowsum(dP ⊙ P))`.
pub fn softmax_rows_bwd(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut ds = dp.clone();
    for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
        let dot = drow
            .iter()
            .zip(prow.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        for (g, pv) in drow.iter_mut().zip(prow.iter()) {
            *g = pv * (*g - dot);
        }
    }
    ds
}

/// Channel-wise max pooling over rows. Ties resolve to the lowest row index
/// so backward routing is deterministic.
pub struct MaxPoolCache {
    pub argmax: Vec<usize>,
}

pub fn max_pool_fwd(x: &Array2<f64>) -> (Array1<f64>, MaxPoolCache) {
    let (n, d) = x.dim();
    assert!(n > 0);
    let mut out = Array1::zeros(d);
    let mut argmax = vec![0usize; d];
    for c in 0..d {
        let mut best = f64::NEG_INFINITY;
        let mut best_i = 0;
        for i in 0..n {
            let v = x[[i, c]];
            if v > best {
                best = v;
                best_i = i;
            }
        }
        out[c] = best;
        argmax[c] = best_i;
    }
    (out, MaxPoolCache { argmax })
}

pub fn max_pool_bwd(cache: &MaxPoolCache, n_rows: usize, dy: &Array1<f64>) -> Array2<f64> {
    let d = dy.len();
    let mut dx = Array2::zeros((n_rows, d));
    for c in 0..d {
        dx[[cache.argmax[c], c]] += dy[c];
    }
    dx
}

/// Sinusoidal step embedding: first half sine, second half cosine, frequency
/// base 10^4. `k = 0` yields zeros in the sine channels and ones in the
/// cosine channels.
pub fn sinusoidal_embedding(k: usize, d: usize) -> Array1<f64> {
    assert!(d % 2 == 0, "sinusoidal embedding needs an even width");
    let half = d / 2;
    let mut out = Array1::zeros(d);
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        let arg = k as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = array![[1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 1.0, 2.0]];
        let cache = layer_norm_fwd(&x.view());
        for row in cache.xhat.rows() {
            let mean: f64 = row.sum() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        softmax_rows(&mut x);
        for row in x.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_ties_take_first_row() {
        let x = array![[1.0, 5.0], [1.0, 7.0]];
        let (out, cache) = max_pool_fwd(&x);
        assert_eq!(out[0], 1.0);
        assert_eq!(cache.argmax, vec![0, 1]);
    }

    #[test]
    fn sinusoidal_embedding_at_zero() {
        let e = sinusoidal_embedding(0, 8);
        for i in 0..4 {
            assert_eq!(e[i], 0.0);
            assert_eq!(e[4 + i], 1.0);
        }
    }
}

/// Least-squares rigid fit: given per-point displacements `b_i` in the body
/// frame at fixed canonical points `p_i`, find the twist `(v, ω)` that
/// minimizes `Σ ‖v + ω×p_i − b_i‖²`. The normal matrix depends only on the
/// points, so it is inverted once per gripper.
pub struct TwistFit {
    points: Vec<[f64; 3]>,
    m_inv: [[f64; 6]; 6],
}

fn row_of_a(p: [f64; 3], r: usize) -> [f64; 6] {
    // A = [I | −[p]×], so A·(v, ω) = v + ω×p.
    let mut row = [0.0; 6];
    row[r] = 1.0;
    let neg_px = [
        [0.0, p[2], -p[1]],
        [-p[2], 0.0, p[0]],
        [p[1], -p[0], 0.0],
    ];
    row[3] = neg_px[r][0];
    row[4] = neg_px[r][1];
    row[5] = neg_px[r][2];
    row
}

fn invert6(mut m: [[f64; 6]; 6]) -> Option<[[f64; 6]; 6]> {
    let mut inv = [[0.0; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..6 {
        let mut pivot = col;
        for r in col + 1..6 {
            if m[r][col].abs() > m[pivot][col].abs() {
                pivot = r;
            }
        }
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let diag = m[col][col];
        for c in 0..6 {
            m[col][c] /= diag;
            inv[col][c] /= diag;
        }
        for r in 0..6 {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..6 {
                        m[r][c] -= f * m[col][c];
                        inv[r][c] -= f * inv[col][c];
                    }
                }
            }
        }
    }
    Some(inv)
}

impl TwistFit {
    /// Fails when the points are collinear (the twist is unobservable).
    pub fn new(points: &[[f64; 3]]) -> Option<TwistFit> {
        let mut m = [[0.0; 6]; 6];
        for p in points {
            for r in 0..3 {
                let a = row_of_a(*p, r);
                for i in 0..6 {
                    for j in 0..6 {
                        m[i][j] += a[i] * a[j];
                    }
                }
            }
        }
        Some(TwistFit {
            points: points.to_vec(),
            m_inv: invert6(m)?,
        })
    }

    /// Solve for the twist given one displacement per point.
    pub fn solve(&self, b: &[[f64; 3]]) -> [f64; 6] {
        debug_assert_eq!(b.len(), self.points.len());
        let mut rhs = [0.0; 6];
        for (p, d) in self.points.iter().zip(b) {
            rhs[0] += d[0];
            rhs[1] += d[1];
            rhs[2] += d[2];
            // p × d
            rhs[3] += p[1] * d[2] - p[2] * d[1];
            rhs[4] += p[2] * d[0] - p[0] * d[2];
            rhs[5] += p[0] * d[1] - p[1] * d[0];
        }
        let mut xi = [0.0; 6];
        for i in 0..6 {
            for j in 0..6 {
                xi[i] += self.m_inv[i][j] * rhs[j];
            }
        }
        xi
    }

    /// Gradient of the displacements given the twist gradient:
    /// `d b_i = A_i · (M⁻¹ · dξ)`.
    pub fn backward(&self, dxi: &[f64; 6]) -> Vec<[f64; 3]> {
        let mut y = [0.0; 6];
        for i in 0..6 {
            for j in 0..6 {
                y[i] += self.m_inv[i][j] * dxi[j];
            }
        }
        self.points
            .iter()
            .map(|p| {
                [
                    y[0] + y[4] * p[2] - y[5] * p[1],
                    y[1] + y[5] * p[0] - y[3] * p[2],
                    y[2] + y[3] * p[1] - y[4] * p[0],
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod twist_fit_tests {
    use super::TwistFit;

    fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    #[test]
    fn recovers_an_exact_twist() {
        let points = [
            [0.0, 0.0, 0.0],
            [0.04, 0.0, 0.066],
            [-0.04, 0.0, 0.066],
            [0.0, 0.0, 0.112],
        ];
        let fit = TwistFit::new(&points).unwrap();
        let v = [0.3, -0.1, 0.2];
        let w = [0.5, 0.7, -0.4];
        let b: Vec<[f64; 3]> = points
            .iter()
            .map(|p| {
                let wp = cross(w, *p);
                [v[0] + wp[0], v[1] + wp[1], v[2] + wp[2]]
            })
            .collect();
        let xi = fit.solve(&b);
        for (got, want) in xi.iter().zip(v.iter().chain(w.iter())) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn normal_equations_hold_for_noisy_displacements() {
        let points = [
            [0.0, 0.0, 0.0],
            [0.04, 0.01, 0.066],
            [-0.04, 0.0, 0.066],
            [0.0, -0.02, 0.112],
            [0.01, 0.03, 0.05],
        ];
        let fit = TwistFit::new(&points).unwrap();
        let b: Vec<[f64; 3]> = (0..points.len())
            .map(|i| [0.1 * i as f64, -0.2 + 0.05 * i as f64, 0.3 * (i as f64).sin()])
            .collect();
        let xi = fit.solve(&b);
        // Residual must be orthogonal to the twist basis: Σ Aᵀ(Aξ − b) = 0.
        let mut lhs = [0.0; 6];
        for (p, d) in points.iter().zip(&b) {
            let w = [xi[3], xi[4], xi[5]];
            let pred = {
                let wp = cross(w, *p);
                [xi[0] + wp[0], xi[1] + wp[1], xi[2] + wp[2]]
            };
            let r = [pred[0] - d[0], pred[1] - d[1], pred[2] - d[2]];
            lhs[0] += r[0];
            lhs[1] += r[1];
            lhs[2] += r[2];
            let pr = cross(*p, r);
            lhs[3] += pr[0];
            lhs[4] += pr[1];
            lhs[5] += pr[2];
        }
        for v in lhs {
            assert!(v.abs() < 1e-9, "normal equation residual {v}");
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let points = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.1], [0.0, 0.0, 0.2]];
        assert!(TwistFit::new(&points).is_none());
    }
}
