//! Independent reference evaluators shared by integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use heatpose_core::context_mixer::{BatchNorm, CmParams, ConvLayer, FeatureMap};

/// Solves `m x = v` by Gaussian elimination with partial pivoting.
pub fn solve(mut m: Vec<Vec<f64>>, mut v: Vec<f64>) -> Vec<f64> {
    let n = v.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (v[row] - s) / m[row][row];
    }
    x
}

/// Least-squares fit of `a x² + b y² + c xy + d x + e y + f` to a 3×3 patch
/// `z[row][col]` centred at the origin, with per-sample weights
/// `w[row][col]`. Returns `[a, b, c, d, e, f]`.
pub fn quadric_fit(z: &[[f64; 3]; 3], w: &[[f64; 3]; 3]) -> [f64; 6] {
    let mut ata = vec![vec![0.0; 6]; 6];
    let mut atz = vec![0.0; 6];
    for row in 0..3 {
        for col in 0..3 {
            let (x, y) = (col as f64 - 1.0, row as f64 - 1.0);
            let basis = [x * x, y * y, x * y, x, y, 1.0];
            for i in 0..6 {
                atz[i] += w[row][col] * basis[i] * z[row][col];
                for j in 0..6 {
                    ata[i][j] += w[row][col] * basis[i] * basis[j];
                }
            }
        }
    }
    let s = solve(ata, atz);
    [s[0], s[1], s[2], s[3], s[4], s[5]]
}

pub const UNIFORM: [[f64; 3]; 3] = [[1.0; 3]; 3];
pub const BINOMIAL: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];

type Tensor3 = Vec<Vec<Vec<f64>>>;

fn unpack(f: &FeatureMap) -> Tensor3 {
    (0..f.channels())
        .map(|c| {
            (0..f.height())
                .map(|r| (0..f.width()).map(|col| f.get(c, r, col)).collect())
                .collect()
        })
        .collect()
}

fn norm(v: f64, bn: &Option<BatchNorm>, c: usize) -> f64 {
    match bn {
        Some(bn) => (v - bn.mean[c]) / (bn.var[c] + bn.eps).sqrt() * bn.gamma[c] + bn.beta[c],
        None => v,
    }
}

fn conv_ref(x: &Tensor3, l: &ConvLayer, dil: usize) -> Tensor3 {
    let (h, w, k) = (x[0].len() as i64, x[0][0].len() as i64, l.kernel);
    let half = (k / 2) as i64;
    (0..l.out_channels)
        .map(|o| {
            (0..h)
                .map(|r| {
                    (0..w)
                        .map(|c| {
                            let mut acc = l.bias[o];
                            for i in 0..l.in_channels {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let sr = r + (ky as i64 - half) * dil as i64;
                                        let sc = c + (kx as i64 - half) * dil as i64;
                                        if (0..h).contains(&sr) && (0..w).contains(&sc) {
                                            let wt = l.weight[o * l.in_channels * k * k + i * k * k + ky * k + kx];
                                            acc += wt * x[i][sr as usize][sc as usize];
                                        }
                                    }
                                }
                            }
                            norm(acc, &l.bn, o)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Transposed convolution written in gather form: each output pixel sums
/// the inputs whose stride-2 footprint covers it.
fn deconv_ref(x: &Tensor3, l: &ConvLayer) -> Tensor3 {
    let (h, w, k) = (x[0].len() as i64, x[0][0].len() as i64, l.kernel as i64);
    let pad = (k - 2) / 2;
    (0..l.out_channels)
        .map(|o| {
            (0..2 * h)
                .map(|y| {
                    (0..2 * w)
                        .map(|xx| {
                            let mut acc = l.bias[o];
                            for i in 0..l.in_channels {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let (ny, nx) = (y + pad - ky, xx + pad - kx);
                                        if ny % 2 != 0 || nx % 2 != 0 {
                                            continue;
                                        }
                                        let (r, c) = (ny / 2, nx / 2);
                                        if (0..h).contains(&r) && (0..w).contains(&c) {
                                            let idx = ((i * l.out_channels + o) as i64 * k + ky) * k + kx;
                                            acc += l.weight[idx as usize] * x[i][r as usize][c as usize];
                                        }
                                    }
                                }
                            }
                            norm(acc, &l.bn, o)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Straight-line evaluation of one context-mixer stage with nearest
/// upsampling, returned as `[channel][row][col]`.
pub fn cm_reference(f: &FeatureMap, p: &CmParams) -> Tensor3 {
    let x = unpack(f);
    let (h, w) = (f.height(), f.width());

    let up: Tensor3 = x
        .iter()
        .map(|plane| (0..2 * h).map(|r| (0..2 * w).map(|c| plane[r / 2][c / 2]).collect()).collect())
        .collect();
    let res = conv_ref(&up, &p.res, 1);

    let pooled: Tensor3 = x
        .iter()
        .map(|plane| vec![vec![plane.iter().flatten().sum::<f64>() / (h * w) as f64]])
        .collect();
    let squeezed: Tensor3 = conv_ref(&pooled, &p.se[0], 1)
        .into_iter()
        .map(|p| vec![vec![p[0][0].max(0.0)]])
        .collect();
    let alpha: Vec<f64> = conv_ref(&squeezed, &p.se[1], 1)
        .iter()
        .map(|p| 1.0 / (1.0 + (-p[0][0]).exp()))
        .collect();

    let mut concat: Tensor3 = Vec::new();
    for (b, layer) in p.hdc.iter().enumerate() {
        for plane in conv_ref(&x, layer, b + 1) {
            concat.push(plane.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect());
        }
    }
    let hdc = deconv_ref(&concat, &p.deconv);

    (0..res.len())
        .map(|c| {
            (0..2 * h)
                .map(|r| (0..2 * w).map(|col| (hdc[c][r][col] * alpha[c] + res[c][r][col]).max(0.0)).collect())
                .collect()
        })
        .collect()
}
