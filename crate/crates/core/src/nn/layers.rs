//! Layer kernels with hand-written backward passes.
//!
//! Every layer works on one example at a time with row-major `f64` buffers.
//! `forward` returns the output plus whatever the backward pass needs;
//! `backward` accumulates parameter gradients into `grad` (same layout as
//! the parameter slice) and returns the gradient with respect to the input.
//!
//! Tensor conventions: 1-D feature maps are `[channels, length]`, 2-D maps
//! are `[channels, height, width]`, sequences are `[steps, features]`.

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y += W x` for a row-major `[rows, cols]` matrix.
fn matvec_acc(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        *yi += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `x += Wᵀ y`.
fn matvec_t_acc(w: &[f64], y: &[f64], x: &mut [f64]) {
    let cols = x.len();
    for (&yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        for (xj, &wij) in x.iter_mut().zip(row) {
            *xj += wij * yi;
        }
    }
}

/// `W += y xᵀ`.
fn outer_acc(w: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&yi, row) in y.iter().zip(w.chunks_exact_mut(cols)) {
        for (wij, &xj) in row.iter_mut().zip(x) {
            *wij += yi * xj;
        }
    }
}

/// Valid output range `[lo, hi)` for tap `j` of a "same"-padded convolution.
fn tap_range(len: usize, j: usize, pad: usize) -> (usize, usize) {
    // input index = t + j - pad must lie in [0, len)
    let lo = pad.saturating_sub(j);
    let hi = (len + pad).saturating_sub(j).min(len);
    (lo, hi.max(lo))
}

/// 1-D convolution, stride 1, zero "same" padding (`(k-1)/2` on the left).
/// Parameters: weight `[out, in, k]` then bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub length: usize,
}

impl Conv1d {
    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel + self.out_channels
    }

    pub fn fans(&self) -> (usize, usize) {
        (self.in_channels * self.kernel, self.out_channels * self.kernel)
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let (ci, co, k, n) = (self.in_channels, self.out_channels, self.kernel, self.length);
        let pad = (k - 1) / 2;
        let (w, b) = p.split_at(self.weight_len());
        let mut y = vec![0.0; co * n];
        for o in 0..co {
            let yo = &mut y[o * n..(o + 1) * n];
            yo.iter_mut().for_each(|v| *v = b[o]);
            for i in 0..ci {
                let xi = &x[i * n..(i + 1) * n];
                for j in 0..k {
                    let wv = w[(o * ci + i) * k + j];
                    let (lo, hi) = tap_range(n, j, pad);
                    if lo == hi {
                        continue;
                    }
                    let src = &xi[lo + j - pad..hi + j - pad];
                    for (yv, xv) in yo[lo..hi].iter_mut().zip(src) {
                        *yv += wv * xv;
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (ci, co, k, n) = (self.in_channels, self.out_channels, self.kernel, self.length);
        let pad = (k - 1) / 2;
        let wl = self.weight_len();
        let w = &p[..wl];
        let (dw, db) = grad.split_at_mut(wl);
        let mut dx = vec![0.0; ci * n];
        for o in 0..co {
            let dyo = &dy[o * n..(o + 1) * n];
            db[o] += dyo.iter().sum::<f64>();
            for i in 0..ci {
                let xi = &x[i * n..(i + 1) * n];
                let dxi = &mut dx[i * n..(i + 1) * n];
                for j in 0..k {
                    let widx = (o * ci + i) * k + j;
                    let (lo, hi) = tap_range(n, j, pad);
                    if lo == hi {
                        continue;
                    }
                    let src = lo + j - pad..hi + j - pad;
                    dw[widx] += dyo[lo..hi]
                        .iter()
                        .zip(&xi[src.clone()])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                    let wv = w[widx];
                    for (dxv, dyv) in dxi[src].iter_mut().zip(&dyo[lo..hi]) {
                        *dxv += wv * dyv;
                    }
                }
            }
        }
        dx
    }
}

/// 2-D convolution with square kernels, stride 1, zero "same" padding.
/// Parameters: weight `[out, in, k, k]` then bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl Conv2d {
    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    pub fn fans(&self) -> (usize, usize) {
        let kk = self.kernel * self.kernel;
        (self.in_channels * kk, self.out_channels * kk)
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let (ci, co, k, h, wd) = (
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.height,
            self.width,
        );
        let pad = (k - 1) / 2;
        let hw = h * wd;
        let (w, b) = p.split_at(self.weight_len());
        let mut y = vec![0.0; co * hw];
        for o in 0..co {
            let yo = &mut y[o * hw..(o + 1) * hw];
            yo.iter_mut().for_each(|v| *v = b[o]);
            for i in 0..ci {
                let xi = &x[i * hw..(i + 1) * hw];
                for ky in 0..k {
                    let (ylo, yhi) = tap_range(h, ky, pad);
                    if ylo == yhi {
                        continue;
                    }
                    for kx in 0..k {
                        let wv = w[((o * ci + i) * k + ky) * k + kx];
                        let (xlo, xhi) = tap_range(wd, kx, pad);
                        if xlo == xhi {
                            continue;
                        }
                        for r in ylo..yhi {
                            let src_row = (r + ky - pad) * wd;
                            let src = &xi[src_row + xlo + kx - pad..src_row + xhi + kx - pad];
                            for (yv, xv) in yo[r * wd + xlo..r * wd + xhi].iter_mut().zip(src) {
                                *yv += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (ci, co, k, h, wd) = (
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.height,
            self.width,
        );
        let pad = (k - 1) / 2;
        let hw = h * wd;
        let wl = self.weight_len();
        let w = &p[..wl];
        let (dw, db) = grad.split_at_mut(wl);
        let mut dx = vec![0.0; ci * hw];
        for o in 0..co {
            let dyo = &dy[o * hw..(o + 1) * hw];
            db[o] += dyo.iter().sum::<f64>();
            for i in 0..ci {
                let xi = &x[i * hw..(i + 1) * hw];
                let dxi = &mut dx[i * hw..(i + 1) * hw];
                for ky in 0..k {
                    let (ylo, yhi) = tap_range(h, ky, pad);
                    if ylo == yhi {
                        continue;
                    }
                    for kx in 0..k {
                        let widx = ((o * ci + i) * k + ky) * k + kx;
                        let wv = w[widx];
                        let (xlo, xhi) = tap_range(wd, kx, pad);
                        if xlo == xhi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for r in ylo..yhi {
                            let src_row = (r + ky - pad) * wd;
                            let src = src_row + xlo + kx - pad..src_row + xhi + kx - pad;
                            let dyr = &dyo[r * wd + xlo..r * wd + xhi];
                            acc += dyr.iter().zip(&xi[src.clone()]).map(|(a, b)| a * b).sum::<f64>();
                            for (dxv, dyv) in dxi[src].iter_mut().zip(dyr) {
                                *dxv += wv * dyv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
        dx
    }
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Uses the layer input; the subgradient at 0 is taken as 0.
pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter().zip(dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect()
}

/// Max-pool of size 2, stride 2 over `[channels, length]`; a trailing odd
/// sample is dropped. Returns the output and the winning input index of
/// each output (first index on ties).
pub fn maxpool1d_forward(x: &[f64], channels: usize, length: usize) -> (Vec<f64>, Vec<usize>) {
    let out_len = length / 2;
    let mut y = Vec::with_capacity(channels * out_len);
    let mut arg = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        for t in 0..out_len {
            let a = c * length + 2 * t;
            let idx = if x[a + 1] > x[a] { a + 1 } else { a };
            y.push(x[idx]);
            arg.push(idx);
        }
    }
    (y, arg)
}

pub fn maxpool_backward(argmax: &[usize], dy: &[f64], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&i, &d) in argmax.iter().zip(dy) {
        dx[i] += d;
    }
    dx
}

/// 2x2 max-pool, stride 2, over `[channels, height, width]`.
pub fn maxpool2d_forward(x: &[f64], channels: usize, height: usize, width: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (height / 2, width / 2);
    let mut y = Vec::with_capacity(channels * oh * ow);
    let mut arg = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * height * width;
        for r in 0..oh {
            for col in 0..ow {
                let cands = [
                    base + 2 * r * width + 2 * col,
                    base + 2 * r * width + 2 * col + 1,
                    base + (2 * r + 1) * width + 2 * col,
                    base + (2 * r + 1) * width + 2 * col + 1,
                ];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg)
}

/// Mean over the trailing `spatial` axis of `[channels, spatial]`.
pub fn global_avg_forward(x: &[f64], channels: usize, spatial: usize) -> Vec<f64> {
    x.chunks_exact(spatial)
        .take(channels)
        .map(|c| c.iter().sum::<f64>() / spatial as f64)
        .collect()
}

pub fn global_avg_backward(dy: &[f64], spatial: usize) -> Vec<f64> {
    dy.iter()
        .flat_map(|&d| std::iter::repeat_n(d / spatial as f64, spatial))
        .collect()
}

/// `[rows, cols]` -> `[cols, rows]`.
pub fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            y[c * rows + r] = x[r * cols + c];
        }
    }
    y
}

/// Fully connected layer. Parameters: weight `[out, in]` then bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let (w, b) = p.split_at(self.weight_len());
        let mut y = b.to_vec();
        matvec_acc(w, x, &mut y);
        y
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let wl = self.weight_len();
        let (dw, db) = grad.split_at_mut(wl);
        outer_acc(dw, dy, x);
        db.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
        let mut dx = vec![0.0; self.inputs];
        matvec_t_acc(&p[..wl], dy, &mut dx);
        dx
    }
}

/// Gated recurrent unit over a `[steps, inputs]` sequence, zero initial state.
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = z ⊙ h + (1 - z) ⊙ n
/// ```
///
/// Parameters: `W [3H, I]`, `U [3H, H]`, `b [3H]`, gate blocks ordered z, r, n.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub inputs: usize,
    pub units: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GruCache {
    h_prev: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    rh: Vec<Vec<f64>>,
}

impl Gru {
    pub fn param_count(&self) -> usize {
        3 * self.units * (self.inputs + self.units + 1)
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let wl = 3 * self.units * self.inputs;
        let ul = 3 * self.units * self.units;
        (&p[..wl], &p[wl..wl + ul], &p[wl + ul..])
    }

    /// Returns all hidden states `[steps, units]`.
    pub fn forward(&self, p: &[f64], x: &[f64], steps: usize) -> (Vec<f64>, GruCache) {
        let (ni, h) = (self.inputs, self.units);
        let (w, u, b) = self.split(p);
        let ui = h * h;
        let mut cache = GruCache::default();
        let mut hs = vec![0.0; h];
        let mut out = Vec::with_capacity(steps * h);
        for t in 0..steps {
            let xt = &x[t * ni..(t + 1) * ni];
            let mut ax = b.to_vec();
            matvec_acc(w, xt, &mut ax);
            let mut zr = ax[..2 * h].to_vec();
            matvec_acc(&u[..2 * ui], &hs, &mut zr);
            let z: Vec<f64> = zr[..h].iter().map(|&v| sigmoid(v)).collect();
            let r: Vec<f64> = zr[h..].iter().map(|&v| sigmoid(v)).collect();
            let rh: Vec<f64> = r.iter().zip(&hs).map(|(a, b)| a * b).collect();
            let mut an = ax[2 * h..].to_vec();
            matvec_acc(&u[2 * ui..], &rh, &mut an);
            let n: Vec<f64> = an.iter().map(|v| v.tanh()).collect();
            let next: Vec<f64> = (0..h).map(|k| z[k] * hs[k] + (1.0 - z[k]) * n[k]).collect();
            cache.h_prev.push(std::mem::replace(&mut hs, next));
            cache.z.push(z);
            cache.r.push(r);
            cache.n.push(n);
            cache.rh.push(rh);
            out.extend_from_slice(&hs);
        }
        (out, cache)
    }

    /// `dy` is the gradient for every output step `[steps, units]`.
    pub fn backward(&self, p: &[f64], x: &[f64], cache: &GruCache, dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (ni, h) = (self.inputs, self.units);
        let steps = cache.z.len();
        let (w, u, _) = self.split(p);
        let ui = h * h;
        let wl = 3 * h * ni;
        let (dw, rest) = grad.split_at_mut(wl);
        let (du, db) = rest.split_at_mut(3 * ui);
        let mut dx = vec![0.0; steps * ni];
        let mut dh_next = vec![0.0; h];
        for t in (0..steps).rev() {
            let (hp, z, r, n, rh) = (&cache.h_prev[t], &cache.z[t], &cache.r[t], &cache.n[t], &cache.rh[t]);
            let dh: Vec<f64> = (0..h).map(|k| dy[t * h + k] + dh_next[k]).collect();
            let mut dh_prev: Vec<f64> = (0..h).map(|k| dh[k] * z[k]).collect();

            // candidate
            let da_n: Vec<f64> = (0..h).map(|k| dh[k] * (1.0 - z[k]) * (1.0 - n[k] * n[k])).collect();
            let mut drh = vec![0.0; h];
            matvec_t_acc(&u[2 * ui..], &da_n, &mut drh);
            outer_acc(&mut du[2 * ui..], &da_n, rh);
            let da_r: Vec<f64> = (0..h).map(|k| drh[k] * hp[k] * r[k] * (1.0 - r[k])).collect();
            for k in 0..h {
                dh_prev[k] += drh[k] * r[k];
            }
            let da_z: Vec<f64> = (0..h).map(|k| dh[k] * (hp[k] - n[k]) * z[k] * (1.0 - z[k])).collect();

            let mut da = da_z;
            da.extend_from_slice(&da_r);
            matvec_t_acc(&u[..2 * ui], &da, &mut dh_prev);
            outer_acc(&mut du[..2 * ui], &da, hp);
            da.extend_from_slice(&da_n);

            let xt = &x[t * ni..(t + 1) * ni];
            outer_acc(dw, &da, xt);
            db.iter_mut().zip(&da).for_each(|(g, d)| *g += d);
            matvec_t_acc(w, &da, &mut dx[t * ni..(t + 1) * ni]);
            dh_next = dh_prev;
        }
        dx
    }
}

/// Long short-term memory over a `[steps, inputs]` sequence, zero initial
/// hidden and cell state.
///
/// ```text
/// i = σ(·), f = σ(·), g = tanh(·), o = σ(·)   with (·) = W x + U h + b
/// c' = f ⊙ c + i ⊙ g
/// h' = o ⊙ tanh(c')
/// ```
///
/// Parameters: `W [4H, I]`, `U [4H, H]`, `b [4H]`, gate blocks ordered i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub inputs: usize,
    pub units: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LstmCache {
    h_prev: Vec<Vec<f64>>,
    c_prev: Vec<Vec<f64>>,
    gates: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn param_count(&self) -> usize {
        4 * self.units * (self.inputs + self.units + 1)
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let wl = 4 * self.units * self.inputs;
        let ul = 4 * self.units * self.units;
        (&p[..wl], &p[wl..wl + ul], &p[wl + ul..])
    }

    pub fn forward(&self, p: &[f64], x: &[f64], steps: usize) -> (Vec<f64>, LstmCache) {
        let (ni, h) = (self.inputs, self.units);
        let (w, u, b) = self.split(p);
        let mut cache = LstmCache::default();
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut out = Vec::with_capacity(steps * h);
        for t in 0..steps {
            let mut a = b.to_vec();
            matvec_acc(w, &x[t * ni..(t + 1) * ni], &mut a);
            matvec_acc(u, &hs, &mut a);
            let gates: Vec<f64> = a
                .iter()
                .enumerate()
                .map(|(j, &v)| if j / h == 2 { v.tanh() } else { sigmoid(v) })
                .collect();
            let c_next: Vec<f64> = (0..h)
                .map(|k| gates[h + k] * cs[k] + gates[k] * gates[2 * h + k])
                .collect();
            let tc: Vec<f64> = c_next.iter().map(|v| v.tanh()).collect();
            let h_next: Vec<f64> = (0..h).map(|k| gates[3 * h + k] * tc[k]).collect();
            cache.h_prev.push(std::mem::replace(&mut hs, h_next));
            cache.c_prev.push(std::mem::replace(&mut cs, c_next));
            cache.gates.push(gates);
            cache.tanh_c.push(tc);
            out.extend_from_slice(&hs);
        }
        (out, cache)
    }

    pub fn backward(&self, p: &[f64], x: &[f64], cache: &LstmCache, dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (ni, h) = (self.inputs, self.units);
        let steps = cache.gates.len();
        let (w, u, _) = self.split(p);
        let wl = 4 * h * ni;
        let (dw, rest) = grad.split_at_mut(wl);
        let (du, db) = rest.split_at_mut(4 * h * h);
        let mut dx = vec![0.0; steps * ni];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for t in (0..steps).rev() {
            let g = &cache.gates[t];
            let tc = &cache.tanh_c[t];
            let cp = &cache.c_prev[t];
            let mut da = vec![0.0; 4 * h];
            let mut dc_prev = vec![0.0; h];
            for k in 0..h {
                let (ig, fg, gg, og) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let dh = dy[t * h + k] + dh_next[k];
                let dc = dc_next[k] + dh * og * (1.0 - tc[k] * tc[k]);
                da[k] = dc * gg * ig * (1.0 - ig);
                da[h + k] = dc * cp[k] * fg * (1.0 - fg);
                da[2 * h + k] = dc * ig * (1.0 - gg * gg);
                da[3 * h + k] = dh * tc[k] * og * (1.0 - og);
                dc_prev[k] = dc * fg;
            }
            let xt = &x[t * ni..(t + 1) * ni];
            outer_acc(dw, &da, xt);
            outer_acc(du, &da, &cache.h_prev[t]);
            db.iter_mut().zip(&da).for_each(|(gr, d)| *gr += d);
            matvec_t_acc(w, &da, &mut dx[t * ni..(t + 1) * ni]);
            let mut dh_prev = vec![0.0; h];
            matvec_t_acc(u, &da, &mut dh_prev);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dx
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of `softmax(logits)` against class `label`, computed via
/// log-sum-exp, plus its gradient `p - y` with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (loss, grad)
}
