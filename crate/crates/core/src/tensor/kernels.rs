//! Raw forward/backward kernels used by the tape ops.
//!
//! Layouts are fixed: sequences are `[batch, channels, length]`, conv
//! weights are `[out, in, kernel]`.

/// `c = beta * c + op(a) * op(b)`, with `op(a)` of shape `m x k` and
/// `op(b)` of shape `k x n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices; `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold one `[cin, len]` sample into `[cin * ksize, len]` columns with
/// zero padding of `ksize / 2` on both sides.
fn im2col(x: &[f64], cin: usize, len: usize, ksize: usize, cols: &mut [f64]) {
    let pad = ksize / 2;
    for ci in 0..cin {
        let row = &x[ci * len..(ci + 1) * len];
        for kk in 0..ksize {
            let dst = &mut cols[(ci * ksize + kk) * len..(ci * ksize + kk + 1) * len];
            for (l, d) in dst.iter_mut().enumerate() {
                let src = l as isize + kk as isize - pad as isize;
                *d = if src >= 0 && (src as usize) < len {
                    row[src as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im(cols: &[f64], cin: usize, len: usize, ksize: usize, dx: &mut [f64]) {
    let pad = ksize / 2;
    for ci in 0..cin {
        let row = &mut dx[ci * len..(ci + 1) * len];
        for kk in 0..ksize {
            let src = &cols[(ci * ksize + kk) * len..(ci * ksize + kk + 1) * len];
            for (l, &v) in src.iter().enumerate() {
                let dst = l as isize + kk as isize - pad as isize;
                if dst >= 0 && (dst as usize) < len {
                    row[dst as usize] += v;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub len: usize,
    pub ksize: usize,
}

pub fn conv1d_forward(d: ConvDims, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let ConvDims { batch, cin, cout, len, ksize } = d;
    let mut out = vec![0.0; batch * cout * len];
    let mut cols = vec![0.0; cin * ksize * len];
    for b in 0..batch {
        let xb = &x[b * cin * len..(b + 1) * cin * len];
        let ob = &mut out[b * cout * len..(b + 1) * cout * len];
        for (co, row) in ob.chunks_mut(len).enumerate() {
            row.fill(bias[co]);
        }
        if ksize == 1 {
            gemm(cout, cin, len, w, false, xb, false, 1.0, ob);
        } else {
            im2col(xb, cin, len, ksize, &mut cols);
            gemm(cout, cin * ksize, len, w, false, &cols, false, 1.0, ob);
        }
    }
    out
}

/// Returns `(dx, dw, dbias)`.
pub fn conv1d_backward(
    d: ConvDims,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ConvDims { batch, cin, cout, len, ksize } = d;
    let mut dx = vec![0.0; batch * cin * len];
    let mut dw = vec![0.0; cout * cin * ksize];
    let mut db = vec![0.0; cout];
    let mut cols = vec![0.0; cin * ksize * len];
    let mut dcols = vec![0.0; cin * ksize * len];
    for b in 0..batch {
        let xb = &x[b * cin * len..(b + 1) * cin * len];
        let dyb = &dy[b * cout * len..(b + 1) * cout * len];
        for (co, row) in dyb.chunks(len).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        let dxb = &mut dx[b * cin * len..(b + 1) * cin * len];
        if ksize == 1 {
            gemm(cout, len, cin, dyb, false, xb, true, 1.0, &mut dw);
            gemm(cin, cout, len, w, true, dyb, false, 0.0, dxb);
        } else {
            im2col(xb, cin, len, ksize, &mut cols);
            gemm(cout, len, cin * ksize, dyb, false, &cols, true, 1.0, &mut dw);
            gemm(cin * ksize, cout, len, w, true, dyb, false, 0.0, &mut dcols);
            col2im(&dcols, cin, len, ksize, dxb);
        }
    }
    (dx, dw, db)
}

#[derive(Clone, Copy, Debug)]
pub struct GroupNormDims {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
    pub groups: usize,
    pub eps: f64,
}

/// Returns `(y, xhat, rstd)`; `rstd` is per `(batch, group)`.
pub fn group_norm_forward(
    d: GroupNormDims,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let GroupNormDims { batch, channels, len, groups, eps } = d;
    let cpg = channels / groups;
    let span = cpg * len;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstds = vec![0.0; batch * groups];
    for b in 0..batch {
        for g in 0..groups {
            let start = (b * channels + g * cpg) * len;
            let seg = &x[start..start + span];
            let mean = seg.iter().sum::<f64>() / span as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / span as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            rstds[b * groups + g] = rstd;
            for c in 0..cpg {
                let ch = g * cpg + c;
                for l in 0..len {
                    let i = start + c * len + l;
                    let h = (x[i] - mean) * rstd;
                    xhat[i] = h;
                    y[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
    }
    (y, xhat, rstds)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn group_norm_backward(
    d: GroupNormDims,
    xhat: &[f64],
    rstd: &[f64],
    gamma: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let GroupNormDims { batch, channels, len, groups, .. } = d;
    let cpg = channels / groups;
    let span = cpg * len;
    let n = span as f64;
    let mut dx = vec![0.0; xhat.len()];
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for b in 0..batch {
        for g in 0..groups {
            let start = (b * channels + g * cpg) * len;
            let mut sum_dxh = 0.0;
            let mut sum_dxh_xh = 0.0;
            for c in 0..cpg {
                let ch = g * cpg + c;
                for l in 0..len {
                    let i = start + c * len + l;
                    dgamma[ch] += dy[i] * xhat[i];
                    dbeta[ch] += dy[i];
                    let dxh = dy[i] * gamma[ch];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xhat[i];
                }
            }
            let r = rstd[b * groups + g];
            for c in 0..cpg {
                let ch = g * cpg + c;
                for l in 0..len {
                    let i = start + c * len + l;
                    let dxh = dy[i] * gamma[ch];
                    dx[i] = r / n * (n * dxh - sum_dxh - xhat[i] * sum_dxh_xh);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
