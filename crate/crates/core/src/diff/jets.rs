//! Packed value/derivative channels for forward derivative propagation.
//!
//! Every scalar carried through the network is a jet: its value, its
//! derivatives along `n_dir` coordinate directions, and optionally the sum of
//! its second derivatives along those directions (the Laplacian restricted to
//! the selected coordinates). Linear maps act identically on every channel,
//! so a dense layer is a single matrix product over `tokens × channels`.

use num_complex::Complex64;

/// Feature streams for all electrons, `width` features each, with derivative
/// channels. Layout is `[row][token][channel]`; channel 0 is the value,
/// channels `1..=n_dir` the gradient, and channel `n_dir + 1` the Laplacian
/// when present.
#[derive(Clone, Debug, PartialEq)]
pub struct Streams {
    width: usize,
    tokens: usize,
    n_dir: usize,
    lap: bool,
    data: Vec<f64>,
}

impl Streams {
    pub fn zeros(width: usize, tokens: usize, n_dir: usize, lap: bool) -> Self {
        let ch = 1 + n_dir + lap as usize;
        Self {
            width,
            tokens,
            n_dir,
            lap,
            data: vec![0.0; width * tokens * ch],
        }
    }

    /// Value-only streams from a `width × tokens` row-major matrix.
    pub fn from_values(width: usize, tokens: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * tokens);
        Self {
            width,
            tokens,
            n_dir: 0,
            lap: false,
            data: values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn n_dir(&self) -> usize {
        self.n_dir
    }

    pub fn has_laplacian(&self) -> bool {
        self.lap
    }

    pub fn channels(&self) -> usize {
        1 + self.n_dir + self.lap as usize
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Complex adjoint streams: one direction channel holds the imaginary part.
    pub(crate) fn from_complex(width: usize, tokens: usize, values: &[Complex64]) -> Self {
        assert_eq!(values.len(), width * tokens);
        let data = values.iter().flat_map(|z| [z.re, z.im]).collect();
        Self {
            width,
            tokens,
            n_dir: 1,
            lap: false,
            data,
        }
    }

    /// Inverse of [`Streams::from_complex`].
    pub(crate) fn to_complex(&self) -> Vec<Complex64> {
        assert!(self.n_dir == 1 && !self.lap);
        self.data
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect()
    }

    pub fn jet(&self, row: usize, token: usize) -> &[f64] {
        let ch = self.channels();
        let o = (row * self.tokens + token) * ch;
        &self.data[o..o + ch]
    }

    pub fn jet_mut(&mut self, row: usize, token: usize) -> &mut [f64] {
        let ch = self.channels();
        let o = (row * self.tokens + token) * ch;
        &mut self.data[o..o + ch]
    }

    pub fn value(&self, row: usize, token: usize) -> f64 {
        self.data[(row * self.tokens + token) * self.channels()]
    }

    /// Values only, `width × tokens` row-major.
    pub fn values(&self) -> Vec<f64> {
        let ch = self.channels();
        self.data.iter().step_by(ch).copied().collect()
    }

    /// The `token`-th stream's feature values.
    pub fn token_values(&self, token: usize) -> Vec<f64> {
        (0..self.width).map(|r| self.value(r, token)).collect()
    }

    /// Same shape, no data.
    pub fn zeros_like(&self, width: usize) -> Self {
        Self::zeros(width, self.tokens, self.n_dir, self.lap)
    }

    /// `W · self` for a row-major `out × width` matrix.
    pub fn linear(&self, w: &[f64], out: usize) -> Self {
        assert_eq!(w.len(), out * self.width);
        let mut res = self.zeros_like(out);
        let n = self.tokens * self.channels();
        gemm(
            out,
            self.width,
            n,
            w,
            self.width,
            1,
            &self.data,
            n,
            1,
            &mut res.data,
            n,
            1,
            0.0,
        );
        res
    }

    /// `Wᵀ · self` for a row-major `width × inner` matrix `w`.
    pub fn linear_transpose(&self, w: &[f64], inner: usize) -> Self {
        assert_eq!(w.len(), inner * self.width);
        let mut res = self.zeros_like(inner);
        let n = self.tokens * self.channels();
        gemm(
            inner,
            self.width,
            n,
            w,
            1,
            inner,
            &self.data,
            n,
            1,
            &mut res.data,
            n,
            1,
            0.0,
        );
        res
    }

    /// Adds a bias to the value channel.
    pub fn add_bias(&mut self, b: &[f64]) {
        assert_eq!(b.len(), self.width);
        let ch = self.channels();
        for (r, bias) in b.iter().enumerate() {
            for t in 0..self.tokens {
                self.data[(r * self.tokens + t) * ch] += bias;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Streams) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Elementwise `tanh` with the chain rule on all channels.
    pub fn tanh(&self) -> Self {
        let mut out = self.clone();
        let nd = self.n_dir;
        let ch = self.channels();
        for jet in out.data.chunks_exact_mut(ch) {
            let t = jet[0].tanh();
            let d1 = 1.0 - t * t;
            let mut sq = 0.0;
            for c in 1..=nd {
                sq += jet[c] * jet[c];
                jet[c] *= d1;
            }
            if self.lap {
                jet[nd + 1] = d1 * jet[nd + 1] - 2.0 * t * d1 * sq;
            }
            jet[0] = t;
        }
        out
    }

    /// Stacks streams with equal token/channel shapes along the feature axis.
    pub fn stack(parts: &[Streams]) -> Self {
        let first = &parts[0];
        let width = parts.iter().map(|p| p.width).sum();
        let mut data = Vec::with_capacity(width * first.tokens * first.channels());
        for p in parts {
            assert_eq!(
                (p.tokens, p.n_dir, p.lap),
                (first.tokens, first.n_dir, first.lap)
            );
            data.extend_from_slice(&p.data);
        }
        Self {
            width,
            tokens: first.tokens,
            n_dir: first.n_dir,
            lap: first.lap,
            data,
        }
    }

    pub fn rows(&self, start: usize, len: usize) -> Self {
        let stride = self.tokens * self.channels();
        Self {
            width: len,
            tokens: self.tokens,
            n_dir: self.n_dir,
            lap: self.lap,
            data: self.data[start * stride..(start + len) * stride].to_vec(),
        }
    }

    /// Reorders tokens: output token `k` is input token `perm[k]`.
    pub fn permute_tokens(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for r in 0..self.width {
            for (k, &src) in perm.iter().enumerate() {
                out.jet_mut(r, k).copy_from_slice(self.jet(r, src));
            }
        }
        out
    }
}

/// Row-major strided `C = A·B + beta·C`, `A` m×k, `B` k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the debug assertions above spell out the extents; callers pass
    // dense row-major buffers sized exactly for these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `out += scale · (a ⊗ b)` for two jets (product rule, Laplacian cross term).
#[inline]
pub(crate) fn jet_mul_acc(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    n_dir: usize,
    lap: bool,
    scale: f64,
) {
    let (av, bv) = (a[0], b[0]);
    out[0] += scale * av * bv;
    let mut cross = 0.0;
    for c in 1..=n_dir {
        out[c] += scale * (a[c] * bv + av * b[c]);
        cross += a[c] * b[c];
    }
    if lap {
        let l = n_dir + 1;
        out[l] += scale * (a[l] * bv + av * b[l] + 2.0 * cross);
    }
}

/// Softmax over a row of score jets, in place. Works in the log domain:
/// `p_j = exp(s_j − log Σ exp s)`.
pub(crate) fn jet_softmax(scores: &mut [f64], count: usize, n_dir: usize, lap: bool) {
    let ch = 1 + n_dir + lap as usize;
    let max = (0..count)
        .map(|j| scores[j * ch])
        .fold(f64::NEG_INFINITY, f64::max);
    // Z jet of Σ_j exp(s_j − max).
    let mut z = vec![0.0; ch];
    let mut e = vec![0.0; ch];
    for j in 0..count {
        let s = &scores[j * ch..(j + 1) * ch];
        exp_jet(s, max, &mut e, n_dir, lap);
        for (zc, ec) in z.iter_mut().zip(&e) {
            *zc += ec;
        }
    }
    // log Z jet.
    let mut logz = vec![0.0; ch];
    logz[0] = z[0].ln() + max;
    let mut sq = 0.0;
    for c in 1..=n_dir {
        logz[c] = z[c] / z[0];
        sq += logz[c] * logz[c];
    }
    if lap {
        logz[n_dir + 1] = z[n_dir + 1] / z[0] - sq;
    }
    for j in 0..count {
        let s = &mut scores[j * ch..(j + 1) * ch];
        for (sc, lc) in s.iter_mut().zip(&logz) {
            *sc -= lc;
        }
        let u = s.to_vec();
        exp_jet(&u, 0.0, s, n_dir, lap);
    }
}

#[inline]
fn exp_jet(s: &[f64], shift: f64, out: &mut [f64], n_dir: usize, lap: bool) {
    let e = (s[0] - shift).exp();
    out[0] = e;
    let mut sq = 0.0;
    for c in 1..=n_dir {
        out[c] = e * s[c];
        sq += s[c] * s[c];
    }
    if lap {
        out[n_dir + 1] = e * (s[n_dir + 1] + sq);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_naive() {
        let mut s = Streams::zeros(3, 2, 1, true);
        for (k, x) in s.data.iter_mut().enumerate() {
            *x = k as f64 * 0.1 - 0.4;
        }
        let w = [1.0, -2.0, 0.5, 0.0, 3.0, 1.0];
        let out = s.linear(&w, 2);
        for o in 0..2 {
            for t in 0..2 {
                for c in 0..3 {
                    let naive: f64 = (0..3).map(|k| w[o * 3 + k] * s.jet(k, t)[c]).sum();
                    assert!((out.jet(o, t)[c] - naive).abs() < 1e-14);
                }
            }
        }
        let back = out.linear_transpose(&w, 3);
        for k in 0..3 {
            for t in 0..2 {
                let naive: f64 = (0..2).map(|o| w[o * 3 + k] * out.jet(o, t)[0]).sum();
                assert!((back.jet(k, t)[0] - naive).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn softmax_values_sum_to_one() {
        let mut s = vec![0.3, 1.0, 0.0, -2.0, 0.0, 0.5, 5.0, 2.0, -1.0];
        jet_softmax(&mut s, 3, 1, true);
        let total: f64 = (0..3).map(|j| s[j * 3]).sum();
        let dtotal: f64 = (0..3).map(|j| s[j * 3 + 1]).sum();
        let ltotal: f64 = (0..3).map(|j| s[j * 3 + 2]).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(dtotal.abs() < 1e-14 && ltotal.abs() < 1e-13);
    }
}
