//! Dense kernels over channel-major batch tensors (`C x N x H x W`).

/// `c = op(a) * op(b) + beta * c` for row-major operands.
///
/// `op(a)` is `m x k`; when `trans_a` is set `a` is stored as `k x m`.
/// Likewise `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], trans_a: bool, b: &[f64], trans_b: bool, c: &mut [f64], beta: f64) {
    assert_eq!(a.len(), m * k, "gemm lhs size");
    assert_eq!(b.len(), k * n, "gemm rhs size");
    assert_eq!(c.len(), m * n, "gemm out size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the strides address is in bounds.
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

/// Unfold 3x3 zero-padded neighborhoods: `[C, N, H, W] -> [C * 9, N * H * W]`.
pub fn im2col3(input: &[f64], c: usize, n: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = n * h * w;
    let mut col = vec![0.0; c * 9 * plane];
    for ch in 0..c {
        let src = &input[ch * plane..(ch + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ch * 9 + ky * 3 + kx) * plane..(ch * 9 + ky * 3 + kx + 1) * plane];
                for img in 0..n {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst_base = (img * h + y) * w;
                        let src_base = (img * h + sy as usize) * w;
                        for x in 0..w {
                            let sx = x as isize + kx as isize - 1;
                            if sx >= 0 && sx < w as isize {
                                row[dst_base + x] = src[src_base + sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col3`]: accumulate `[C * 9, N * H * W]` back onto `[C, N, H, W]`.
pub fn col2im3(col: &[f64], c: usize, n: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = n * h * w;
    let mut out = vec![0.0; c * plane];
    for ch in 0..c {
        let dst = &mut out[ch * plane..(ch + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ch * 9 + ky * 3 + kx) * plane..(ch * 9 + ky * 3 + kx + 1) * plane];
                for img in 0..n {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_base = (img * h + y) * w;
                        let dst_base = (img * h + sy as usize) * w;
                        for x in 0..w {
                            let sx = x as isize + kx as isize - 1;
                            if sx >= 0 && sx < w as isize {
                                dst[dst_base + sx as usize] += row[src_base + x];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2x2 stride-2 max pooling; returns the pooled tensor and the flat argmax of each window.
pub fn maxpool2(input: &[f64], c: usize, n: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * n * oh * ow);
    let mut idx = Vec::with_capacity(out.capacity());
    for plane in 0..c * n {
        let base = plane * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + (2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward(d_out: &[f64], idx: &[u32], input_len: usize) -> Vec<f64> {
    let mut d_in = vec![0.0; input_len];
    for (&g, &i) in d_out.iter().zip(idx) {
        d_in[i as usize] += g;
    }
    d_in
}
