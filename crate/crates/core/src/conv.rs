//! Direct 3D cross-correlation and its adjoint, via im2col + matmul.
//!
//! The three kernels here are the forward map, the input-gradient map
//! (which doubles as the transposed-convolution forward), and the
//! kernel-gradient map. All operate on cubic kernels `[.., k, k, k]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// out[m][n] += a[m][kd] * b[kd][n]
///
/// Rows are processed four at a time so each `b` row is streamed once per
/// block instead of once per output row; per-element accumulation order is
/// unchanged, so results are bit-identical to the naive triple loop.
pub(crate) fn mm_acc<F: Scalar>(a: &[F], b: &[F], m: usize, kd: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * kd);
    debug_assert_eq!(b.len(), kd * n);
    debug_assert_eq!(out.len(), m * n);
    let mut i = 0usize;
    while i + 4 <= m {
        let (o01, o23) = out[i * n..(i + 4) * n].split_at_mut(2 * n);
        let (o0, o1) = o01.split_at_mut(n);
        let (o2, o3) = o23.split_at_mut(n);
        for l in 0..kd {
            let av = [
                a[i * kd + l],
                a[(i + 1) * kd + l],
                a[(i + 2) * kd + l],
                a[(i + 3) * kd + l],
            ];
            if av.iter().all(|&v| v == F::zero()) {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (j, &bv) in brow.iter().enumerate() {
                o0[j] += av[0] * bv;
                o1[j] += av[1] * bv;
                o2[j] += av[2] * bv;
                o3[j] += av[3] * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        let arow = &a[i * kd..(i + 1) * kd];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m][n] += aᵀ[m][kd] * b[kd][n], with a stored as [kd][m].
///
/// Blocked four output rows at a time like `mm_acc`; per-element
/// accumulation order matches the naive loop nest with `l` outermost.
pub(crate) fn mm_at_acc<F: Scalar>(a: &[F], b: &[F], m: usize, kd: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), kd * m);
    let mut i = 0usize;
    while i + 4 <= m {
        let (o01, o23) = out[i * n..(i + 4) * n].split_at_mut(2 * n);
        let (o0, o1) = o01.split_at_mut(n);
        let (o2, o3) = o23.split_at_mut(n);
        for l in 0..kd {
            let av = [a[l * m + i], a[l * m + i + 1], a[l * m + i + 2], a[l * m + i + 3]];
            if av.iter().all(|&v| v == F::zero()) {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (j, &bv) in brow.iter().enumerate() {
                o0[j] += av[0] * bv;
                o1[j] += av[1] * bv;
                o2[j] += av[2] * bv;
                o3[j] += av[3] * bv;
            }
        }
        i += 4;
    }
    for l in 0..kd {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for ii in i..m {
            let av = arow[ii];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[ii * n..(ii + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m][n] += a[m][kd] * bᵀ[kd][n], with b stored as [n][kd].
pub(crate) fn mm_bt_acc<F: Scalar>(a: &[F], b: &[F], m: usize, kd: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(b.len(), n * kd);
    for i in 0..m {
        let arow = &a[i * kd..(i + 1) * kd];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * kd..(j + 1) * kd];
            let mut acc = F::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_spatial: [usize; 3],
    pub out_spatial: [usize; 3],
}

fn out_extent(d: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = d + 2 * pad;
    if padded < k {
        return Err(Error::shape(format!(
            "conv3d: input extent {d} (+2*{pad} pad) smaller than kernel {k}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Validates shapes for a forward convolution and derives output extents.
pub fn conv_dims<F: Scalar>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<ConvDims> {
    let xs = x.shape();
    let ks = kernel.shape();
    if xs.len() != 5 || ks.len() != 5 {
        return Err(Error::shape(format!(
            "conv3d expects 5-d input and kernel, got {:?} and {:?}",
            xs, ks
        )));
    }
    if ks[2] != ks[3] || ks[3] != ks[4] {
        return Err(Error::shape(format!("conv3d kernel must be cubic, got {:?}", ks)));
    }
    if xs[1] != ks[1] {
        return Err(Error::shape(format!(
            "conv3d channel mismatch: input {:?} vs kernel {:?}",
            xs, ks
        )));
    }
    if stride == 0 {
        return Err(Error::contract("conv3d stride must be >= 1".to_string()));
    }
    let k = ks[2];
    let out = [
        out_extent(xs[2], k, stride, pad)?,
        out_extent(xs[3], k, stride, pad)?,
        out_extent(xs[4], k, stride, pad)?,
    ];
    Ok(ConvDims {
        batch: xs[0],
        c_in: xs[1],
        c_out: ks[0],
        k,
        stride,
        pad,
        in_spatial: [xs[2], xs[3], xs[4]],
        out_spatial: out,
    })
}

/// Gathers kernel-sized patches: cols is [c_in*k^3][n_positions], row-major.
fn im2col<F: Scalar>(x: &[F], dims: &ConvDims, cols: &mut [F]) {
    let [di, hi, wi] = dims.in_spatial;
    let [do_, ho, wo] = dims.out_spatial;
    let (k, s, p) = (dims.k, dims.stride, dims.pad);
    let positions = do_ * ho * wo;
    let mut row = 0usize;
    for ci in 0..dims.c_in {
        let xc = &x[ci * di * hi * wi..(ci + 1) * di * hi * wi];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    let mut pos = 0usize;
                    for od in 0..do_ {
                        let id = (od * s + kd) as isize - p as isize;
                        if id < 0 || id as usize >= di {
                            for _ in 0..ho * wo {
                                dst[pos] = F::zero();
                                pos += 1;
                            }
                            continue;
                        }
                        let id = id as usize;
                        for oh in 0..ho {
                            let ih = (oh * s + kh) as isize - p as isize;
                            if ih < 0 || ih as usize >= hi {
                                for _ in 0..wo {
                                    dst[pos] = F::zero();
                                    pos += 1;
                                }
                                continue;
                            }
                            let ih = ih as usize;
                            let base = (id * hi + ih) * wi;
                            for ow in 0..wo {
                                let iw = (ow * s + kw) as isize - p as isize;
                                dst[pos] = if iw < 0 || iw as usize >= wi {
                                    F::zero()
                                } else {
                                    xc[base + iw as usize]
                                };
                                pos += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-add of column gradients back to input layout; adjoint of im2col.
fn col2im_acc<F: Scalar>(cols: &[F], dims: &ConvDims, x: &mut [F]) {
    let [di, hi, wi] = dims.in_spatial;
    let [do_, ho, wo] = dims.out_spatial;
    let (k, s, p) = (dims.k, dims.stride, dims.pad);
    let positions = do_ * ho * wo;
    let mut row = 0usize;
    for ci in 0..dims.c_in {
        let xc = &mut x[ci * di * hi * wi..(ci + 1) * di * hi * wi];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let src = &cols[row * positions..(row + 1) * positions];
                    let mut pos = 0usize;
                    for od in 0..do_ {
                        let id = (od * s + kd) as isize - p as isize;
                        if id < 0 || id as usize >= di {
                            pos += ho * wo;
                            continue;
                        }
                        let id = id as usize;
                        for oh in 0..ho {
                            let ih = (oh * s + kh) as isize - p as isize;
                            if ih < 0 || ih as usize >= hi {
                                pos += wo;
                                continue;
                            }
                            let ih = ih as usize;
                            let base = (id * hi + ih) * wi;
                            for ow in 0..wo {
                                let iw = (ow * s + kw) as isize - p as isize;
                                if iw >= 0 && (iw as usize) < wi {
                                    xc[base + iw as usize] += src[pos];
                                }
                                pos += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Forward cross-correlation, no bias. Output is [N, c_out, D', H', W'].
pub fn conv3d_forward<F: Scalar>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let dims = conv_dims(x, kernel, stride, pad)?;
    let [do_, ho, wo] = dims.out_spatial;
    let positions = do_ * ho * wo;
    let krows = dims.c_in * dims.k * dims.k * dims.k;
    let in_stride = dims.c_in * dims.in_spatial.iter().product::<usize>();
    let out_stride = dims.c_out * positions;
    let mut cols = vec![F::zero(); krows * positions];
    let mut out = vec![F::zero(); dims.batch * out_stride];
    for n in 0..dims.batch {
        im2col(&x.data()[n * in_stride..(n + 1) * in_stride], &dims, &mut cols);
        mm_acc(
            kernel.data(),
            &cols,
            dims.c_out,
            krows,
            positions,
            &mut out[n * out_stride..(n + 1) * out_stride],
        );
    }
    Tensor::from_vec(
        vec![dims.batch, dims.c_out, do_, ho, wo],
        out,
    )
}

/// Gradient of `conv3d_forward` w.r.t. its input; also the forward map of
/// the transposed convolution. `in_spatial` names the produced extents.
pub fn conv3d_input_grad<F: Scalar>(
    dy: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    pad: usize,
    in_spatial: [usize; 3],
) -> Result<Tensor<F>> {
    let ys = dy.shape();
    let ks = kernel.shape();
    if ys.len() != 5 || ks.len() != 5 {
        return Err(Error::shape(format!(
            "conv3d_input_grad expects 5-d tensors, got {:?} and {:?}",
            ys, ks
        )));
    }
    if ys[1] != ks[0] {
        return Err(Error::shape(format!(
            "conv3d_input_grad channel mismatch: output-grad {:?} vs kernel {:?}",
            ys, ks
        )));
    }
    let dims = ConvDims {
        batch: ys[0],
        c_in: ks[1],
        c_out: ks[0],
        k: ks[2],
        stride,
        pad,
        in_spatial,
        out_spatial: [ys[2], ys[3], ys[4]],
    };
    // Consistency: the forward map from in_spatial must land on dy's extents.
    for a in 0..3 {
        let expect = out_extent(in_spatial[a], dims.k, stride, pad)?;
        if expect != dims.out_spatial[a] {
            return Err(Error::shape(format!(
                "conv3d_input_grad: target extents {:?} map to {:?}, not {:?}",
                in_spatial,
                [
                    out_extent(in_spatial[0], dims.k, stride, pad)?,
                    out_extent(in_spatial[1], dims.k, stride, pad)?,
                    out_extent(in_spatial[2], dims.k, stride, pad)?
                ],
                &ys[2..]
            )));
        }
    }
    let [do_, ho, wo] = dims.out_spatial;
    let positions = do_ * ho * wo;
    let krows = dims.c_in * dims.k * dims.k * dims.k;
    let in_stride = dims.c_in * in_spatial.iter().product::<usize>();
    let out_stride = dims.c_out * positions;
    let mut cols = vec![F::zero(); krows * positions];
    let mut dx = vec![F::zero(); dims.batch * in_stride];
    for n in 0..dims.batch {
        cols.iter_mut().for_each(|v| *v = F::zero());
        mm_at_acc(
            kernel.data(),
            &dy.data()[n * out_stride..(n + 1) * out_stride],
            krows,
            dims.c_out,
            positions,
            &mut cols,
        );
        col2im_acc(&cols, &dims, &mut dx[n * in_stride..(n + 1) * in_stride]);
    }
    Tensor::from_vec(
        vec![dims.batch, dims.c_in, in_spatial[0], in_spatial[1], in_spatial[2]],
        dx,
    )
}

/// Gradient of `conv3d_forward` w.r.t. the kernel.
pub fn conv3d_kernel_grad<F: Scalar>(
    x: &Tensor<F>,
    dy: &Tensor<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let xs = x.shape();
    let ys = dy.shape();
    let dims = ConvDims {
        batch: xs[0],
        c_in: xs[1],
        c_out: ys[1],
        k,
        stride,
        pad,
        in_spatial: [xs[2], xs[3], xs[4]],
        out_spatial: [ys[2], ys[3], ys[4]],
    };
    let [do_, ho, wo] = dims.out_spatial;
    let positions = do_ * ho * wo;
    let krows = dims.c_in * k * k * k;
    let in_stride = dims.c_in * dims.in_spatial.iter().product::<usize>();
    let out_stride = dims.c_out * positions;
    let mut cols = vec![F::zero(); krows * positions];
    let mut dk = vec![F::zero(); dims.c_out * krows];
    for n in 0..dims.batch {
        im2col(&x.data()[n * in_stride..(n + 1) * in_stride], &dims, &mut cols);
        mm_bt_acc(
            &dy.data()[n * out_stride..(n + 1) * out_stride],
            &cols,
            dims.c_out,
            positions,
            krows,
            &mut dk,
        );
    }
    Tensor::from_vec(vec![dims.c_out, dims.c_in, k, k, k], dk)
}

/// Output spatial extent of a transposed convolution.
pub fn conv_transpose_extent(d: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let grown = (d - 1) * stride + k;
    if grown < 2 * pad + 1 {
        return Err(Error::shape(format!(
            "conv3d_transpose: extent {d} with k={k}, stride={stride}, pad={pad} yields non-positive output"
        )));
    }
    Ok(grown - 2 * pad)
}
