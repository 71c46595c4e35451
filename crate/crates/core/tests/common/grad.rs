//! Layer-by-layer gradient checks and recurrent-cell oracles, shared by the
//! gradient tests and the acceptance report.

use ecg_arrhythmia::nn::layers::*;

use super::*;

/// Max relative error (parameters, inputs) for a layer with scalar loss
/// `c · forward(p, x)`.
pub fn check_layer(
    p: &[f64],
    x: &[f64],
    forward: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    backward: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) -> Vec<f64>,
    seed: u64,
) -> f64 {
    let out_len = forward(p, x).len();
    let c = uniform(out_len, 1.0, &mut rng(seed));
    let mut gp = vec![0.0; p.len()];
    let gx = backward(p, x, &c, &mut gp);
    let np = numeric_grad(p, |pp| dot(&c, &forward(pp, x)));
    let nx = numeric_grad(x, |xx| dot(&c, &forward(p, xx)));
    max_rel_err(&gp, &np).max(max_rel_err(&gx, &nx))
}

pub fn conv1d_error() -> f64 {
    let mut worst = 0.0f64;
    for &(cin, cout, k, len) in &[(2, 3, 8, 11), (3, 2, 5, 7), (1, 4, 3, 4), (2, 2, 8, 3)] {
        let layer = Conv1d {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            length: len,
        };
        let mut r = rng(1);
        let p = uniform(layer.param_count(), 0.5, &mut r);
        let x = uniform(cin * len, 1.0, &mut r);
        worst = worst.max(check_layer(
            &p,
            &x,
            |p, x| layer.forward(p, x),
            |p, x, d, g| layer.backward(p, x, d, g),
            2,
        ));
    }
    worst
}

pub fn conv2d_error() -> f64 {
    let mut worst = 0.0f64;
    for &(cin, cout, k, h, w) in &[(1, 2, 3, 5, 6), (2, 2, 5, 4, 7), (2, 1, 8, 6, 9)] {
        let layer = Conv2d {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            height: h,
            width: w,
        };
        let mut r = rng(3);
        let p = uniform(layer.param_count(), 0.5, &mut r);
        let x = uniform(cin * h * w, 1.0, &mut r);
        worst = worst.max(check_layer(
            &p,
            &x,
            |p, x| layer.forward(p, x),
            |p, x, d, g| layer.backward(p, x, d, g),
            4,
        ));
    }
    worst
}

pub fn dense_error() -> f64 {
    let layer = Dense { inputs: 7, outputs: 5 };
    let mut r = rng(5);
    let p = uniform(layer.param_count(), 0.5, &mut r);
    let x = uniform(7, 1.0, &mut r);
    check_layer(
        &p,
        &x,
        |p, x| layer.forward(p, x),
        |p, x, d, g| layer.backward(p, x, d, g),
        6,
    )
}

pub fn relu_error() -> f64 {
    // keep inputs away from the kink
    let x: Vec<f64> = uniform(20, 1.0, &mut rng(7))
        .iter()
        .map(|v| v + 0.01f64.copysign(*v))
        .collect();
    check_layer(&[], &x, |_, x| relu_forward(x), |_, x, d, _| relu_backward(x, d), 8)
}

pub fn maxpool_error() -> f64 {
    let x = uniform(3 * 9, 1.0, &mut rng(9));
    let e1 = check_layer(
        &[],
        &x,
        |_, x| maxpool1d_forward(x, 3, 9).0,
        |_, x, d, _| maxpool_backward(&maxpool1d_forward(x, 3, 9).1, d, x.len()),
        10,
    );
    let x = uniform(2 * 5 * 6, 1.0, &mut rng(11));
    let e2 = check_layer(
        &[],
        &x,
        |_, x| maxpool2d_forward(x, 2, 5, 6).0,
        |_, x, d, _| maxpool_backward(&maxpool2d_forward(x, 2, 5, 6).1, d, x.len()),
        12,
    );
    e1.max(e2)
}

pub fn global_average_error() -> f64 {
    let x = uniform(4 * 6, 1.0, &mut rng(13));
    check_layer(
        &[],
        &x,
        |_, x| global_avg_forward(x, 4, 6),
        |_, _, d, _| global_avg_backward(d, 6),
        14,
    )
}

pub fn gru_error() -> f64 {
    let mut worst = 0.0f64;
    for &(ni, h, steps) in &[(3, 2, 4), (2, 5, 6), (4, 3, 1)] {
        let cell = Gru { inputs: ni, units: h };
        let mut r = rng(15);
        let p = uniform(cell.param_count(), 0.6, &mut r);
        let x = uniform(ni * steps, 1.0, &mut r);
        worst = worst.max(check_layer(
            &p,
            &x,
            |p, x| cell.forward(p, x, steps).0,
            |p, x, d, g| cell.backward(p, x, &cell.forward(p, x, steps).1, d, g),
            16,
        ));
    }
    worst
}

pub fn lstm_error() -> f64 {
    let mut worst = 0.0f64;
    for &(ni, h, steps) in &[(3, 2, 4), (2, 5, 6), (4, 3, 1)] {
        let cell = Lstm { inputs: ni, units: h };
        let mut r = rng(17);
        let p = uniform(cell.param_count(), 0.6, &mut r);
        let x = uniform(ni * steps, 1.0, &mut r);
        worst = worst.max(check_layer(
            &p,
            &x,
            |p, x| cell.forward(p, x, steps).0,
            |p, x, d, g| cell.backward(p, x, &cell.forward(p, x, steps).1, d, g),
            18,
        ));
    }
    worst
}

pub fn softmax_ce_error() -> f64 {
    let z = uniform(5, 3.0, &mut rng(19));
    (0..5)
        .map(|label| {
            let (_, g) = softmax_cross_entropy(&z, label);
            let n = numeric_grad(&z, |zz| softmax_cross_entropy(zz, label).0);
            max_rel_err(&g, &n)
        })
        .fold(0.0, f64::max)
}

/// Every layer type with its worst relative error.
pub fn layer_errors() -> Vec<(&'static str, f64)> {
    vec![
        ("conv1d", conv1d_error()),
        ("conv2d", conv2d_error()),
        ("dense", dense_error()),
        ("relu", relu_error()),
        ("max-pool", maxpool_error()),
        ("global-avg", global_average_error()),
        ("gru", gru_error()),
        ("lstm", lstm_error()),
        ("softmax-ce", softmax_ce_error()),
    ]
}

// Hand-unrolled oracles, written with scalar loops and the textbook gate
// equations rather than the matrix helpers used by the implementation.

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn affine(p: &[f64], w_off: usize, u_off: usize, b_off: usize, row: usize, x: &[f64], h: &[f64]) -> f64 {
    let mut s = p[b_off + row];
    for j in 0..x.len() {
        s += p[w_off + row * x.len() + j] * x[j];
    }
    for j in 0..h.len() {
        s += p[u_off + row * h.len() + j] * h[j];
    }
    s
}

/// Max abs difference between `Gru::forward` and a 2-step unrolled oracle.
pub fn gru_oracle_error() -> f64 {
    let (ni, nh) = (3, 2);
    let cell = Gru { inputs: ni, units: nh };
    let p = uniform(cell.param_count(), 0.8, &mut rng(23));
    let x = uniform(2 * ni, 1.0, &mut rng(24));
    let (out, _) = cell.forward(&p, &x, 2);

    let (w, u, b) = (0, 3 * nh * ni, 3 * nh * ni + 3 * nh * nh);
    let mut h = vec![0.0; nh];
    let mut expected = vec![];
    for t in 0..2 {
        let xt = &x[t * ni..(t + 1) * ni];
        let zero = vec![0.0; nh];
        let z: Vec<f64> = (0..nh).map(|k| sig(affine(&p, w, u, b, k, xt, &h))).collect();
        let r: Vec<f64> = (0..nh).map(|k| sig(affine(&p, w, u, b, nh + k, xt, &h))).collect();
        let rh: Vec<f64> = (0..nh).map(|k| r[k] * h[k]).collect();
        let n: Vec<f64> = (0..nh)
            .map(|k| {
                let row = 2 * nh + k;
                let wx = affine(&p, w, u, b, row, xt, &zero);
                let mut uh = 0.0;
                for j in 0..nh {
                    uh += p[u + row * nh + j] * rh[j];
                }
                (wx + uh).tanh()
            })
            .collect();
        h = (0..nh).map(|k| z[k] * h[k] + (1.0 - z[k]) * n[k]).collect();
        expected.extend_from_slice(&h);
    }
    out.iter()
        .zip(&expected)
        .map(|(a, e)| (a - e).abs())
        .fold(0.0, f64::max)
}

/// Max abs difference between `Lstm::forward` and a 2-step unrolled oracle.
pub fn lstm_oracle_error() -> f64 {
    let (ni, nh) = (3, 2);
    let cell = Lstm { inputs: ni, units: nh };
    let p = uniform(cell.param_count(), 0.8, &mut rng(25));
    let x = uniform(2 * ni, 1.0, &mut rng(26));
    let (out, _) = cell.forward(&p, &x, 2);

    let (w, u, b) = (0, 4 * nh * ni, 4 * nh * ni + 4 * nh * nh);
    let (mut h, mut c) = (vec![0.0; nh], vec![0.0; nh]);
    let mut expected = vec![];
    for t in 0..2 {
        let xt = &x[t * ni..(t + 1) * ni];
        let gate = |g: usize, k: usize, h: &[f64]| affine(&p, w, u, b, g * nh + k, xt, h);
        let i: Vec<f64> = (0..nh).map(|k| sig(gate(0, k, &h))).collect();
        let f: Vec<f64> = (0..nh).map(|k| sig(gate(1, k, &h))).collect();
        let g: Vec<f64> = (0..nh).map(|k| gate(2, k, &h).tanh()).collect();
        let o: Vec<f64> = (0..nh).map(|k| sig(gate(3, k, &h))).collect();
        c = (0..nh).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        h = (0..nh).map(|k| o[k] * c[k].tanh()).collect();
        expected.extend_from_slice(&h);
    }
    out.iter()
        .zip(&expected)
        .map(|(a, e)| (a - e).abs())
        .fold(0.0, f64::max)
}
