//! Direct-loop NCHW kernels for convolution and 3x3 pooling, forward and backward.
//!
//! Tensors are dense row-major `[batch, channels, height, width]` buffers.

/// Geometry of a 2-D convolution with square kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_size(&self, size: usize) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        (size + 2 * self.padding - span) / self.stride + 1
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel * self.kernel
    }
}

/// Output indices `o` in `[0, out_len)` with `o * stride + offset` inside `[0, in_len)`.
fn valid_range(in_len: usize, out_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let last = in_len as isize - 1 - offset;
    let hi = if last < 0 {
        0
    } else {
        (last as usize / stride + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

#[inline]
fn axpy(dst: &mut [f32], a: f32, src: &[f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Dot product with independent lane accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f32>() + tail
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.kernel == 1 && g.stride == 1 && g.padding == 0 && g.groups == 1
}

struct Dims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    oh: usize,
    ow: usize,
}

fn dims(x_shape: [usize; 4], g: &ConvGeom) -> Dims {
    let [n, cin, h, w] = x_shape;
    debug_assert_eq!(cin, g.in_channels);
    Dims {
        n,
        cin,
        h,
        w,
        cout: g.out_channels,
        oh: g.out_size(h),
        ow: g.out_size(w),
    }
}

/// Visit every (output plane, input plane, kernel tap) triple with the valid
/// output row/column ranges precomputed.
#[inline]
fn for_each_tap(
    d: &Dims,
    g: &ConvGeom,
    mut f: impl FnMut(usize, usize, usize, isize, isize, (usize, usize), (usize, usize)),
) {
    let cin_pg = g.in_channels / g.groups;
    let cout_pg = g.out_channels / g.groups;
    let k = g.kernel;
    for n in 0..d.n {
        for oc in 0..d.cout {
            let grp = oc / cout_pg;
            for icl in 0..cin_pg {
                let ic = grp * cin_pg + icl;
                let out_plane = n * d.cout + oc;
                let in_plane = n * d.cin + ic;
                for kh in 0..k {
                    let off_h = (kh * g.dilation) as isize - g.padding as isize;
                    let rows = valid_range(d.h, d.oh, g.stride, off_h);
                    for kw in 0..k {
                        let off_w = (kw * g.dilation) as isize - g.padding as isize;
                        let cols = valid_range(d.w, d.ow, g.stride, off_w);
                        let widx = ((oc * cin_pg + icl) * k + kh) * k + kw;
                        f(out_plane, in_plane, widx, off_h, off_w, rows, cols);
                    }
                }
            }
        }
    }
}

/// Zero-padded copy of every input plane, `(h + 2p) x (w + 2p)` each.
fn pad_planes(x: &[f32], planes: usize, h: usize, w: usize, p: usize) -> Vec<f32> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0f32; planes * hp * wp];
    for (src, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(hp * wp)) {
        for r in 0..h {
            dst[(r + p) * wp + p..(r + p) * wp + p + w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
    }
    out
}

/// Stride-1 convolution in "padded-width" layout: output row `oh` lives at
/// `oh * wp`, so every kernel tap is one contiguous shifted axpy.
fn conv_stride1_forward(x: &[f32], d: &Dims, w: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let p = g.padding;
    let wp = d.w + 2 * p;
    let xpad = pad_planes(x, d.n * d.cin, d.h, d.w, p);
    let plane = (d.h + 2 * p) * wp;
    let span = (g.kernel - 1) * g.dilation;
    let len = d.oh * wp - span;
    let cin_pg = g.in_channels / g.groups;
    let cout_pg = g.out_channels / g.groups;
    let k = g.kernel;
    let mut full = vec![0.0f32; d.oh * wp];
    for n in 0..d.n {
        for oc in 0..d.cout {
            full.iter_mut().for_each(|v| *v = 0.0);
            let grp = oc / cout_pg;
            for icl in 0..cin_pg {
                let ic = grp * cin_pg + icl;
                let xp = &xpad[(n * d.cin + ic) * plane..(n * d.cin + ic + 1) * plane];
                for kh in 0..k {
                    for kw in 0..k {
                        let off = kh * g.dilation * wp + kw * g.dilation;
                        let wv = w[((oc * cin_pg + icl) * k + kh) * k + kw];
                        axpy(&mut full[..len], wv, &xp[off..off + len]);
                    }
                }
            }
            let o = &mut out[(n * d.cout + oc) * d.oh * d.ow..(n * d.cout + oc + 1) * d.oh * d.ow];
            for r in 0..d.oh {
                o[r * d.ow..(r + 1) * d.ow].copy_from_slice(&full[r * wp..r * wp + d.ow]);
            }
        }
    }
}

fn conv_stride1_backward(
    x: &[f32],
    d: &Dims,
    w: &[f32],
    g: &ConvGeom,
    grad_out: &[f32],
    grad_x: Option<&mut [f32]>,
    grad_w: &mut [f32],
) {
    let p = g.padding;
    let (hp, wp) = (d.h + 2 * p, d.w + 2 * p);
    let xpad = pad_planes(x, d.n * d.cin, d.h, d.w, p);
    let plane = hp * wp;
    let span = (g.kernel - 1) * g.dilation;
    let len = d.oh * wp - span;
    let cin_pg = g.in_channels / g.groups;
    let cout_pg = g.out_channels / g.groups;
    let k = g.kernel;
    let want_x = grad_x.is_some();
    let mut gxpad = if want_x { vec![0.0f32; d.n * d.cin * plane] } else { Vec::new() };
    let mut full = vec![0.0f32; d.oh * wp];
    for n in 0..d.n {
        for oc in 0..d.cout {
            let go = &grad_out[(n * d.cout + oc) * d.oh * d.ow..(n * d.cout + oc + 1) * d.oh * d.ow];
            for r in 0..d.oh {
                full[r * wp..r * wp + d.ow].copy_from_slice(&go[r * d.ow..(r + 1) * d.ow]);
            }
            let grp = oc / cout_pg;
            for icl in 0..cin_pg {
                let ic = grp * cin_pg + icl;
                let base = (n * d.cin + ic) * plane;
                let xp = &xpad[base..base + plane];
                for kh in 0..k {
                    for kw in 0..k {
                        let off = kh * g.dilation * wp + kw * g.dilation;
                        let widx = ((oc * cin_pg + icl) * k + kh) * k + kw;
                        grad_w[widx] += dot(&full[..len], &xp[off..off + len]);
                        if want_x {
                            axpy(&mut gxpad[base + off..base + off + len], w[widx], &full[..len]);
                        }
                    }
                }
            }
        }
    }
    if let Some(gx) = grad_x {
        for (dst, src) in gx.chunks_exact_mut(d.h * d.w).zip(gxpad.chunks_exact(plane)) {
            for r in 0..d.h {
                let srow = &src[(r + p) * wp + p..(r + p) * wp + p + d.w];
                for (a, &b) in dst[r * d.w..(r + 1) * d.w].iter_mut().zip(srow) {
                    *a += b;
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &[f32], x_shape: [usize; 4], w: &[f32], g: &ConvGeom) -> (Vec<f32>, [usize; 4]) {
    let d = dims(x_shape, g);
    let (hw, ohw) = (d.h * d.w, d.oh * d.ow);
    let mut out = vec![0.0f32; d.n * d.cout * ohw];
    if is_pointwise(g) {
        for n in 0..d.n {
            let xs = &x[n * d.cin * hw..(n + 1) * d.cin * hw];
            for oc in 0..d.cout {
                let o = &mut out[(n * d.cout + oc) * ohw..(n * d.cout + oc + 1) * ohw];
                for (ic, xp) in xs.chunks_exact(hw).enumerate() {
                    axpy(o, w[oc * d.cin + ic], xp);
                }
            }
        }
        return (out, [d.n, d.cout, d.oh, d.ow]);
    }
    if g.stride == 1 {
        conv_stride1_forward(x, &d, w, g, &mut out);
        return (out, [d.n, d.cout, d.oh, d.ow]);
    }
    let s = g.stride;
    for_each_tap(&d, g, |op, ip, widx, off_h, off_w, (r0, r1), (c0, c1)| {
        let wv = w[widx];
        let xp = &x[ip * hw..(ip + 1) * hw];
        let o = &mut out[op * ohw..(op + 1) * ohw];
        for oh in r0..r1 {
            let ih = (oh * s) as isize + off_h;
            let xrow = &xp[ih as usize * d.w..(ih as usize + 1) * d.w];
            let orow = &mut o[oh * d.ow..(oh + 1) * d.ow];
            if s == 1 {
                let start = (c0 as isize + off_w) as usize;
                let src = &xrow[start..start + (c1 - c0)];
                axpy(&mut orow[c0..c1], wv, src);
            } else {
                for ow in c0..c1 {
                    orow[ow] += wv * xrow[((ow * s) as isize + off_w) as usize];
                }
            }
        }
    });
    (out, [d.n, d.cout, d.oh, d.ow])
}

/// Accumulate input and weight gradients of a convolution.
pub fn conv2d_backward(
    x: &[f32],
    x_shape: [usize; 4],
    w: &[f32],
    g: &ConvGeom,
    grad_out: &[f32],
    mut grad_x: Option<&mut [f32]>,
    grad_w: &mut [f32],
) {
    let d = dims(x_shape, g);
    let (hw, ohw) = (d.h * d.w, d.oh * d.ow);
    if is_pointwise(g) {
        for n in 0..d.n {
            for oc in 0..d.cout {
                let go = &grad_out[(n * d.cout + oc) * ohw..(n * d.cout + oc + 1) * ohw];
                for ic in 0..d.cin {
                    let ip = (n * d.cin + ic) * hw;
                    grad_w[oc * d.cin + ic] += dot(go, &x[ip..ip + hw]);
                    if let Some(gx) = grad_x.as_deref_mut() {
                        axpy(&mut gx[ip..ip + hw], w[oc * d.cin + ic], go);
                    }
                }
            }
        }
        return;
    }
    if g.stride == 1 {
        conv_stride1_backward(x, &d, w, g, grad_out, grad_x, grad_w);
        return;
    }
    let s = g.stride;
    for_each_tap(&d, g, |op, ip, widx, off_h, off_w, (r0, r1), (c0, c1)| {
        let wv = w[widx];
        let xp = &x[ip * hw..(ip + 1) * hw];
        let go = &grad_out[op * ohw..(op + 1) * ohw];
        let mut acc = 0.0f32;
        for oh in r0..r1 {
            let ih = ((oh * s) as isize + off_h) as usize;
            let xrow = &xp[ih * d.w..(ih + 1) * d.w];
            let grow = &go[oh * d.ow..(oh + 1) * d.ow];
            if s == 1 {
                let start = (c0 as isize + off_w) as usize;
                let src = &xrow[start..start + (c1 - c0)];
                acc += dot(&grow[c0..c1], src);
            } else {
                for ow in c0..c1 {
                    acc += grow[ow] * xrow[((ow * s) as isize + off_w) as usize];
                }
            }
        }
        grad_w[widx] += acc;
        if let Some(gx) = grad_x.as_deref_mut() {
            let gxp = &mut gx[ip * hw..(ip + 1) * hw];
            for oh in r0..r1 {
                let ih = ((oh * s) as isize + off_h) as usize;
                let gxrow = &mut gxp[ih * d.w..(ih + 1) * d.w];
                let grow = &go[oh * d.ow..(oh + 1) * d.ow];
                if s == 1 {
                    let start = (c0 as isize + off_w) as usize;
                    let dst = &mut gxrow[start..start + (c1 - c0)];
                    axpy(dst, wv, &grow[c0..c1]);
                } else {
                    for ow in c0..c1 {
                        gxrow[((ow * s) as isize + off_w) as usize] += wv * grow[ow];
                    }
                }
            }
        }
    });
}

/// 3x3 pooling window geometry (padding 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub stride: usize,
}

impl PoolGeom {
    pub const KERNEL: usize = 3;
    pub const PADDING: usize = 1;

    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * Self::PADDING - Self::KERNEL) / self.stride + 1
    }
}

fn window(pos: usize, stride: usize, len: usize) -> (usize, usize) {
    let start = (pos * stride) as isize - PoolGeom::PADDING as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + PoolGeom::KERNEL as isize) as usize).min(len);
    (lo, hi)
}

/// Max pooling; returns the output and the flat in-plane argmax of each output.
pub fn max_pool_forward(x: &[f32], shape: [usize; 4], g: PoolGeom) -> (Vec<f32>, Vec<u32>, [usize; 4]) {
    let [n, c, h, w] = shape;
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let xp = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let (r0, r1) = window(i, g.stride, h);
            for j in 0..ow {
                let (c0, c1) = window(j, g.stride, w);
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = r0 * w + c0;
                for r in r0..r1 {
                    for cc in c0..c1 {
                        let v = xp[r * w + cc];
                        if v > best {
                            best = v;
                            best_idx = r * w + cc;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    (out, arg, [n, c, oh, ow])
}

pub fn max_pool_backward(argmax: &[u32], in_shape: [usize; 4], out_hw: usize, grad_out: &[f32], grad_x: &mut [f32]) {
    let [n, c, h, w] = in_shape;
    for p in 0..n * c {
        let gx = &mut grad_x[p * h * w..(p + 1) * h * w];
        let go = &grad_out[p * out_hw..(p + 1) * out_hw];
        let am = &argmax[p * out_hw..(p + 1) * out_hw];
        for (&g, &a) in go.iter().zip(am) {
            gx[a as usize] += g;
        }
    }
}

/// Average pooling over in-bounds elements only (padding is not counted).
pub fn avg_pool_forward(x: &[f32], shape: [usize; 4], g: PoolGeom) -> (Vec<f32>, [usize; 4]) {
    let [n, c, h, w] = shape;
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let xp = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let (r0, r1) = window(i, g.stride, h);
            for j in 0..ow {
                let (c0, c1) = window(j, g.stride, w);
                let mut sum = 0.0f32;
                for r in r0..r1 {
                    sum += xp[r * w + c0..r * w + c1].iter().sum::<f32>();
                }
                out.push(sum / ((r1 - r0) * (c1 - c0)) as f32);
            }
        }
    }
    (out, [n, c, oh, ow])
}

pub fn avg_pool_backward(in_shape: [usize; 4], g: PoolGeom, grad_out: &[f32], grad_x: &mut [f32]) {
    let [n, c, h, w] = in_shape;
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    for p in 0..n * c {
        let gx = &mut grad_x[p * h * w..(p + 1) * h * w];
        let go = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            let (r0, r1) = window(i, g.stride, h);
            for j in 0..ow {
                let (c0, c1) = window(j, g.stride, w);
                let share = go[i * ow + j] / ((r1 - r0) * (c1 - c0)) as f32;
                for r in r0..r1 {
                    for v in &mut gx[r * w + c0..r * w + c1] {
                        *v += share;
                    }
                }
            }
        }
    }
}
