//! 3×3 uniform-window SSIM with reflected borders and its exact gradient.

use crate::error::Result;
use crate::imagebase::PlanarImage;

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        0
    } else if i < 0 {
        (-i) as usize
    } else if i >= n {
        (2 * n - 2 - i) as usize
    } else {
        i as usize
    }
}

/// Horizontal 3-tap sum with reflected ends.
#[inline]
fn hsum3(row: &[f64], out: &mut [f64]) {
    let w = row.len();
    for x in 1..w.saturating_sub(1) {
        out[x] = row[x - 1] + row[x] + row[x + 1];
    }
    for x in [0, w - 1] {
        let xi = x as isize;
        out[x] = row[reflect(xi - 1, w)] + row[x] + row[reflect(xi + 1, w)];
    }
}

/// Transpose of [`hsum3`], accumulated into `out`.
#[inline]
fn hsum3_adjoint(g: &[f64], out: &mut [f64]) {
    let w = g.len();
    if w < 3 {
        for x in 0..w {
            let xi = x as isize;
            out[reflect(xi - 1, w)] += g[x];
            out[x] += g[x];
            out[reflect(xi + 1, w)] += g[x];
        }
        return;
    }
    // Interior outputs gather from their three neighbours; the reflected
    // taps of the end samples land on indices 1 and w - 2.
    for x in 0..w {
        let left = if x > 0 { g[x - 1] } else { 0.0 };
        let right = if x + 1 < w { g[x + 1] } else { 0.0 };
        out[x] += left + g[x] + right;
    }
    out[1] += g[0];
    out[w - 2] += g[w - 1];
}

/// 3×3 mean with reflected padding.
pub(crate) fn box3(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for (row, out) in src.chunks_exact(w).zip(tmp.chunks_exact_mut(w)) {
        hsum3(row, out);
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let yi = y as isize;
        let (up, down) = (reflect(yi - 1, h), reflect(yi + 1, h));
        let (a, b, c) = (
            &tmp[up * w..][..w],
            &tmp[y * w..][..w],
            &tmp[down * w..][..w],
        );
        for (x, o) in out[y * w..][..w].iter_mut().enumerate() {
            *o = (a[x] + b[x] + c[x]) * (1.0 / 9.0);
        }
    }
    out
}

/// Transpose of [`box3`].
#[cfg(test)]
pub(crate) fn box3_adjoint(g: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (mut tmp, mut out) = (vec![0.0; w * h], vec![0.0; w * h]);
    box3_adjoint_into(g, w, h, &mut tmp, &mut out);
    out
}

/// Transpose of [`box3`] written into `out`, using `tmp` as scratch.
fn box3_adjoint_into(g: &[f64], w: usize, h: usize, tmp: &mut [f64], out: &mut [f64]) {
    tmp.fill(0.0);
    out.fill(0.0);
    for y in 0..h {
        let yi = y as isize;
        let (up, down) = (reflect(yi - 1, h), reflect(yi + 1, h));
        let src = &g[y * w..][..w];
        for row in [up, y, down] {
            for (t, v) in tmp[row * w..][..w].iter_mut().zip(src) {
                *t += v * (1.0 / 9.0);
            }
        }
    }
    for (row, o) in tmp.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
        hsum3_adjoint(row, o);
    }
}

/// Window statistics kept from the forward pass.
#[derive(Debug, Clone)]
struct Stats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

/// Per-pixel, per-channel SSIM between two images, with enough state to
/// back-propagate into either argument.
#[derive(Debug, Clone)]
pub struct SsimField {
    pub values: PlanarImage,
    a: PlanarImage,
    b: PlanarImage,
    stats: Vec<Stats>,
}

pub fn ssim_map(a: &PlanarImage, b: &PlanarImage) -> Result<SsimField> {
    a.check_same_shape(b, "ssim operands")?;
    let (w, h) = (a.width(), a.height());
    let mut values = a.zeros_like();
    let mut stats = Vec::with_capacity(a.channels());
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = box3(pa, w, h);
        let mu_b = box3(pb, w, h);
        let saa = box3(&sq(pa, pa), w, h);
        let sbb = box3(&sq(pb, pb), w, h);
        let sab = box3(&sq(pa, pb), w, h);
        let n = w * h;
        let mut st = Stats {
            mu_a,
            mu_b,
            var_a: vec![0.0; n],
            var_b: vec![0.0; n],
            cov: vec![0.0; n],
        };
        let out = values.plane_mut(c);
        for i in 0..n {
            let (ma, mb) = (st.mu_a[i], st.mu_b[i]);
            st.var_a[i] = saa[i] - ma * ma;
            st.var_b[i] = sbb[i] - mb * mb;
            st.cov[i] = sab[i] - ma * mb;
            out[i] = ((2.0 * ma * mb + C1) * (2.0 * st.cov[i] + C2))
                / ((ma * ma + mb * mb + C1) * (st.var_a[i] + st.var_b[i] + C2));
        }
        stats.push(st);
    }
    Ok(SsimField {
        values,
        a: a.clone(),
        b: b.clone(),
        stats,
    })
}

impl SsimField {
    /// ∂(Σ upstream·SSIM)/∂a.
    pub fn backward_a(&self, upstream: &PlanarImage) -> PlanarImage {
        self.backward(upstream).0
    }

    /// ∂(Σ upstream·SSIM)/∂b.
    pub fn backward_b(&self, upstream: &PlanarImage) -> PlanarImage {
        self.backward(upstream).1
    }

    /// Gradients with respect to both arguments. The variance and covariance
    /// partials are shared between the two; only the mean terms differ.
    pub fn backward(&self, upstream: &PlanarImage) -> (PlanarImage, PlanarImage) {
        assert!(upstream.same_shape(&self.values), "ssim upstream shape");
        let (w, h) = (self.values.width(), self.values.height());
        let n = w * h;
        let mut grad_a = self.values.zeros_like();
        let mut grad_b = self.values.zeros_like();
        let mut coef = vec![vec![0.0; n]; 4];
        let mut adj = vec![vec![0.0; n]; 4];
        let mut tmp = vec![0.0; n];
        for (c, st) in self.stats.iter().enumerate() {
            let up = upstream.plane(c);
            let s = self.values.plane(c);
            for i in 0..n {
                let (ma, mb) = (st.mu_a[i], st.mu_b[i]);
                let num1 = 2.0 * ma * mb + C1;
                let num2 = 2.0 * st.cov[i] + C2;
                let den1 = ma * ma + mb * mb + C1;
                let den2 = st.var_a[i] + st.var_b[i] + C2;
                let k = 2.0 * num2 / (den1 * den2);
                let d_var = -s[i] / den2;
                let d_cov = 2.0 * num1 / (den1 * den2);
                let d_mu_a = mb * k - s[i] * 2.0 * ma / den1;
                let d_mu_b = ma * k - s[i] * 2.0 * mb / den1;
                coef[0][i] = up[i] * (d_mu_a - 2.0 * ma * d_var - mb * d_cov);
                coef[1][i] = up[i] * (d_mu_b - 2.0 * mb * d_var - ma * d_cov);
                coef[2][i] = up[i] * d_var;
                coef[3][i] = up[i] * d_cov;
            }
            for (src, dst) in coef.iter().zip(adj.iter_mut()) {
                box3_adjoint_into(src, w, h, &mut tmp, dst);
            }
            let (a, b) = (self.a.plane(c), self.b.plane(c));
            let ga = grad_a.plane_mut(c);
            for i in 0..n {
                ga[i] = adj[0][i] + 2.0 * a[i] * adj[2][i] + b[i] * adj[3][i];
            }
            let gb = grad_b.plane_mut(c);
            for i in 0..n {
                gb[i] = adj[1][i] + 2.0 * b[i] * adj[2][i] + a[i] * adj[3][i];
            }
        }
        (grad_a, grad_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, c: usize, seed: u64) -> PlanarImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PlanarImage::new(w, h, c, (0..w * h * c).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn box_adjoint_dot_product() {
        let (w, h) = (7, 5);
        let x = random(w, h, 1, 1);
        let y = random(w, h, 1, 2);
        let bx = box3(x.data(), w, h);
        let by = box3_adjoint(y.data(), w, h);
        let lhs: f64 = bx.iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(&by).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn box_uses_reflection() {
        // Row [1, 2, 3]: reflected left neighbour of x=0 is x=1.
        let src = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let out = box3(&src, 3, 2);
        assert!((out[0] - (2.0 + 1.0 + 2.0) / 3.0).abs() < 1e-15);
        assert!((out[2] - (2.0 + 3.0 + 2.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let a = random(6, 5, 2, 3);
        let b = random(6, 5, 2, 4);
        let up = PlanarImage::field(6, 5, 2, random(6, 5, 2, 5).into_data());
        let f = |a: &PlanarImage, b: &PlanarImage| -> f64 {
            let s = ssim_map(a, b).unwrap();
            s.values
                .data()
                .iter()
                .zip(up.data())
                .map(|(p, q)| p * q)
                .sum()
        };
        let field = ssim_map(&a, &b).unwrap();
        let ga = field.backward_a(&up);
        let gb = field.backward_b(&up);
        let eps = 1e-5;
        for i in 0..a.len() {
            let mut ap = a.clone();
            ap.data_mut()[i] += eps;
            let mut am = a.clone();
            am.data_mut()[i] -= eps;
            let na = (f(&ap, &b) - f(&am, &b)) / (2.0 * eps);
            assert!(
                (na - ga.data()[i]).abs() <= 1e-5 * na.abs().max(1e-3),
                "a[{i}]"
            );
            let mut bp = b.clone();
            bp.data_mut()[i] += eps;
            let mut bm = b.clone();
            bm.data_mut()[i] -= eps;
            let nb = (f(&a, &bp) - f(&a, &bm)) / (2.0 * eps);
            assert!(
                (nb - gb.data()[i]).abs() <= 1e-5 * nb.abs().max(1e-3),
                "b[{i}]"
            );
        }
    }
}
