//! Raw compute kernels over flat slices. The autodiff graph owns shapes and
//! bookkeeping; everything here assumes validated dimensions.

use super::{PadMode, Scalar};

/// Resolve a possibly out-of-range source coordinate under `mode`.
pub(crate) fn resolve(i: isize, len: usize, mode: PadMode) -> Option<usize> {
    let n = len as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Circular => Some(i.rem_euclid(n) as usize),
        PadMode::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n - 1);
            let r = i.rem_euclid(period);
            Some(if r < n { r } else { period - r } as usize)
        }
    }
}

/// A maximal stretch of outputs `[o0, o1)` reading sources `s0, s0+1, ...`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Run {
    pub o0: usize,
    pub o1: usize,
    pub s0: usize,
}

/// Per-kernel-tap source lookup along one spatial axis.
#[derive(Clone, Debug)]
pub(crate) struct AxisMap {
    pub taps: Vec<Vec<Option<usize>>>,
    pub runs: Vec<Vec<Run>>,
}

impl AxisMap {
    pub fn new(
        in_len: usize,
        out_len: usize,
        k: usize,
        pad: usize,
        stride: usize,
        mode: PadMode,
    ) -> Self {
        let taps: Vec<Vec<Option<usize>>> = (0..k)
            .map(|d| {
                (0..out_len)
                    .map(|o| resolve((o * stride + d) as isize - pad as isize, in_len, mode))
                    .collect()
            })
            .collect();
        let runs = taps
            .iter()
            .map(|map| {
                let mut runs: Vec<Run> = Vec::new();
                for (o, src) in map.iter().enumerate() {
                    let Some(s) = *src else { continue };
                    match runs.last_mut() {
                        Some(r) if r.o1 == o && r.s0 + (o - r.o0) == s => r.o1 = o + 1,
                        _ => runs.push(Run {
                            o0: o,
                            o1: o + 1,
                            s0: s,
                        }),
                    }
                }
                runs
            })
            .collect();
        AxisMap { taps, runs }
    }
}

/// `C (m x n) = op(A) (m x k) * op(B) (k x n)`, overwriting or accumulating
/// into `c`. With `ta`, `a` is stored `k x m`; with `tb`, `b` is stored
/// `n x k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every access implied by the strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

/// Geometry of one 2-D convolution call.
#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub groups: usize,
    pub ymap: AxisMap,
    pub xmap: AxisMap,
    /// 1x1, stride 1, no padding: the input planes are already the column matrix.
    pub pointwise: bool,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn rows(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let (kh, kw, ow, w) = (self.kh, self.kw, self.ow, self.w);
        let plane = self.h * w;
        let ohw = self.oh * ow;
        col.iter_mut().for_each(|v| *v = T::zero());
        for ci in 0..self.cin_g() {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &mut col[((ci * kh + ky) * kw + kx) * ohw..][..ohw];
                    for (oy, sy) in self.ymap.taps[ky].iter().enumerate() {
                        let Some(sy) = *sy else { continue };
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        let srow = &src[sy * w..(sy + 1) * w];
                        for r in &self.xmap.runs[kx] {
                            dst[r.o0..r.o1].copy_from_slice(&srow[r.s0..r.s0 + r.o1 - r.o0]);
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let (kh, kw, ow, w) = (self.kh, self.kw, self.ow, self.w);
        let plane = self.h * w;
        let ohw = self.oh * ow;
        for ci in 0..self.cin_g() {
            let dst = &mut dx[ci * plane..(ci + 1) * plane];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &col[((ci * kh + ky) * kw + kx) * ohw..][..ohw];
                    for (oy, sy) in self.ymap.taps[ky].iter().enumerate() {
                        let Some(sy) = *sy else { continue };
                        let src = &row[oy * ow..(oy + 1) * ow];
                        let drow = &mut dst[sy * w..(sy + 1) * w];
                        for r in &self.xmap.runs[kx] {
                            for (d, s) in drow[r.s0..r.s0 + r.o1 - r.o0]
                                .iter_mut()
                                .zip(&src[r.o0..r.o1])
                            {
                                *d += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], wt: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (cin_g, cout_g, rows) = (g.cin_g(), g.cout_g(), g.rows());
    let plane_in = g.h * g.w;
    let ohw = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.cout * ohw];
    let mut col = if g.pointwise { Vec::new() } else { vec![T::zero(); rows * ohw] };
    for b in 0..g.n {
        for gi in 0..g.groups {
            let xg = &x[(b * g.cin + gi * cin_g) * plane_in..][..cin_g * plane_in];
            let wg = &wt[gi * cout_g * rows..][..cout_g * rows];
            let og = &mut out[(b * g.cout + gi * cout_g) * ohw..][..cout_g * ohw];
            if g.pointwise {
                gemm(cout_g, rows, ohw, wg, false, xg, false, og, false);
            } else {
                g.im2col(xg, &mut col);
                gemm(cout_g, rows, ohw, wg, false, &col, false, og, false);
            }
        }
        if let Some(bias) = bias {
            for co in 0..g.cout {
                let bv = bias[co];
                out[(b * g.cout + co) * ohw..][..ohw]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Accumulates input, weight, and bias gradients for `conv2d_forward`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    wt: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (cin_g, cout_g, rows) = (g.cin_g(), g.cout_g(), g.rows());
    let plane_in = g.h * g.w;
    let ohw = g.oh * g.ow;
    if let Some(db) = db {
        for b in 0..g.n {
            for co in 0..g.cout {
                db[co] += sum(&dy[(b * g.cout + co) * ohw..][..ohw]);
            }
        }
    }
    let mut col = if g.pointwise { Vec::new() } else { vec![T::zero(); rows * ohw] };
    if let Some(dw) = dw {
        for b in 0..g.n {
            for gi in 0..g.groups {
                let xg = &x[(b * g.cin + gi * cin_g) * plane_in..][..cin_g * plane_in];
                let dyg = &dy[(b * g.cout + gi * cout_g) * ohw..][..cout_g * ohw];
                let dwg = &mut dw[gi * cout_g * rows..][..cout_g * rows];
                if g.pointwise {
                    gemm(cout_g, ohw, rows, dyg, false, xg, true, dwg, true);
                } else {
                    g.im2col(xg, &mut col);
                    gemm(cout_g, ohw, rows, dyg, false, &col, true, dwg, true);
                }
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..g.n {
            for gi in 0..g.groups {
                let wg = &wt[gi * cout_g * rows..][..cout_g * rows];
                let dyg = &dy[(b * g.cout + gi * cout_g) * ohw..][..cout_g * ohw];
                let dxg = &mut dx[(b * g.cin + gi * cin_g) * plane_in..][..cin_g * plane_in];
                if g.pointwise {
                    gemm(rows, cout_g, ohw, wg, true, dyg, false, dxg, true);
                } else {
                    gemm(rows, cout_g, ohw, wg, true, dyg, false, &mut col, false);
                    g.col2im(&col, dxg);
                }
            }
        }
    }
}

/// Inner product with independent partial sums, so the reduction vectorizes.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| *x * *y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    lanes.iter().copied().sum::<T>() + tail
}

/// Sum with independent partial sums.
pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let chunks = a.chunks_exact(8);
    let tail: T = chunks.remainder().iter().copied().sum();
    for x in chunks {
        for i in 0..8 {
            lanes[i] += x[i];
        }
    }
    lanes.iter().copied().sum::<T>() + tail
}

/// A plane embedded in a padded `hp x wp` buffer.
#[derive(Clone, Debug)]
pub(crate) struct PlanePad {
    pub h: usize,
    pub w: usize,
    pub hp: usize,
    pub wp: usize,
    pw: usize,
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

impl PlanePad {
    pub fn new(h: usize, w: usize, ph: usize, pw: usize, mode: PadMode) -> Self {
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        PlanePad {
            h,
            w,
            hp,
            wp,
            pw,
            rows: (0..hp).map(|i| resolve(i as isize - ph as isize, h, mode)).collect(),
            cols: (0..wp).map(|i| resolve(i as isize - pw as isize, w, mode)).collect(),
        }
    }

    pub fn pad<T: Scalar>(&self, src: &[T], dst: &mut [T]) {
        let (w, pw) = (self.w, self.pw);
        for (r, sy) in self.rows.iter().enumerate() {
            let drow = &mut dst[r * self.wp..][..self.wp];
            let Some(sy) = *sy else {
                drow.fill(T::zero());
                continue;
            };
            let srow = &src[sy * w..][..w];
            drow[pw..pw + w].copy_from_slice(srow);
            for c in (0..pw).chain(pw + w..self.wp) {
                drow[c] = self.cols[c].map_or(T::zero(), |sx| srow[sx]);
            }
        }
    }

    /// Adjoint of [`PlanePad::pad`]: accumulate a padded gradient into the plane.
    pub fn unpad_add<T: Scalar>(&self, dpad: &[T], dsrc: &mut [T]) {
        for (r, sy) in self.rows.iter().enumerate() {
            let Some(sy) = *sy else { continue };
            let prow = &dpad[r * self.wp..][..self.wp];
            let drow = &mut dsrc[sy * self.w..][..self.w];
            for (x, d) in drow.iter_mut().enumerate() {
                *d += prow[x + self.pw];
            }
            for (c, sx) in self.cols.iter().enumerate() {
                if c >= self.pw && c < self.pw + self.w {
                    continue;
                }
                if let Some(sx) = *sx {
                    drow[sx] += prow[c];
                }
            }
        }
    }
}

/// Depthwise filtering geometry: one `kh x kw` filter per channel, stride 1,
/// output size equal to input size.
///
/// Outputs are computed in the padded row pitch: with `L = (h-1)*wp + w`,
/// output position `o = y*wp + x` reads `padded[o + ky*wp + kx]`, so every
/// tap is a single contiguous multiply-add over `L` elements. The `wp - w`
/// columns between rows are scratch and are dropped.
#[derive(Clone, Debug)]
pub(crate) struct DepthwiseGeom {
    pub n: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: PlanePad,
}

impl DepthwiseGeom {
    pub fn new(n: usize, c: usize, h: usize, w: usize, kh: usize, kw: usize, mode: PadMode) -> Self {
        DepthwiseGeom {
            n,
            c,
            kh,
            kw,
            pad: PlanePad::new(h, w, kh / 2, kw / 2, mode),
        }
    }

    fn span(&self) -> usize {
        (self.pad.h - 1) * self.pad.wp + self.pad.w
    }

    fn tap_offset(&self, t: usize) -> usize {
        (t / self.kw) * self.pad.wp + t % self.kw
    }

    /// Scatter a dense plane into the padded pitch; scratch columns are zero.
    fn to_pitch<T: Scalar>(&self, src: &[T], dst: &mut [T]) {
        let (w, wp) = (self.pad.w, self.pad.wp);
        dst.fill(T::zero());
        for y in 0..self.pad.h {
            dst[y * wp..][..w].copy_from_slice(&src[y * w..][..w]);
        }
    }
}

pub(crate) fn depthwise_forward<T: Scalar>(
    g: &DepthwiseGeom,
    x: &[T],
    wt: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (h, w, wp) = (g.pad.h, g.pad.w, g.pad.wp);
    let plane = h * w;
    let taps = g.kh * g.kw;
    let span = g.span();
    let mut padded = vec![T::zero(); g.pad.hp * wp];
    let mut acc = vec![T::zero(); span];
    let mut out = vec![T::zero(); g.n * g.c * plane];
    for b in 0..g.n {
        for ch in 0..g.c {
            let idx = (b * g.c + ch) * plane;
            g.pad.pad(&x[idx..][..plane], &mut padded);
            acc.fill(bias.map_or(T::zero(), |bias| bias[ch]));
            for t in 0..taps {
                let wv = wt[ch * taps + t];
                let src = &padded[g.tap_offset(t)..][..span];
                for (a, s) in acc.iter_mut().zip(src) {
                    *a += wv * *s;
                }
            }
            let dst = &mut out[idx..][..plane];
            for y in 0..h {
                dst[y * w..][..w].copy_from_slice(&acc[y * wp..][..w]);
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<T: Scalar>(
    g: &DepthwiseGeom,
    x: &[T],
    wt: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let plane = g.pad.h * g.pad.w;
    let taps = g.kh * g.kw;
    let span = g.span();
    let padlen = g.pad.hp * g.pad.wp;
    let mut padded = vec![T::zero(); padlen];
    let mut dpad = vec![T::zero(); padlen];
    let mut gy = vec![T::zero(); span];
    for b in 0..g.n {
        for ch in 0..g.c {
            let idx = (b * g.c + ch) * plane;
            let dyc = &dy[idx..][..plane];
            if let Some(db) = db.as_deref_mut() {
                db[ch] += sum(dyc);
            }
            if dw.is_none() && dx.is_none() {
                continue;
            }
            g.to_pitch(dyc, &mut gy);
            if let Some(dw) = dw.as_deref_mut() {
                g.pad.pad(&x[idx..][..plane], &mut padded);
                for t in 0..taps {
                    dw[ch * taps + t] += dot(&gy, &padded[g.tap_offset(t)..][..span]);
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                dpad.fill(T::zero());
                for t in 0..taps {
                    let wv = wt[ch * taps + t];
                    let d = &mut dpad[g.tap_offset(t)..][..span];
                    for (d, gv) in d.iter_mut().zip(&gy) {
                        *d += wv * *gv;
                    }
                }
                g.pad.unpad_add(&dpad, &mut dx[idx..][..plane]);
            }
        }
    }
}

/// Per-pixel kernels shared by contiguous channel groups.
#[derive(Clone, Debug)]
pub(crate) struct DynamicGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub groups: usize,
    pub k: usize,
    pub ymap: AxisMap,
    pub xmap: AxisMap,
}

impl DynamicGeom {
    fn kernel_plane<'a, T>(&self, kf: &'a [T], b: usize, gi: usize, t: usize) -> &'a [T] {
        let plane = self.h * self.w;
        let kk = self.k * self.k;
        &kf[((b * self.groups + gi) * kk + t) * plane..][..plane]
    }
}

pub(crate) fn dynamic_forward<T: Scalar>(g: &DynamicGeom, kf: &[T], x: &[T]) -> Vec<T> {
    let plane = g.h * g.w;
    let per_group = g.c / g.groups;
    let mut out = vec![T::zero(); g.n * g.c * plane];
    for b in 0..g.n {
        for ch in 0..g.c {
            let gi = ch / per_group;
            let src = &x[(b * g.c + ch) * plane..][..plane];
            let dst = &mut out[(b * g.c + ch) * plane..][..plane];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let kp = g.kernel_plane(kf, b, gi, ky * g.k + kx);
                    for (oy, sy) in g.ymap.taps[ky].iter().enumerate() {
                        let Some(sy) = *sy else { continue };
                        let row = oy * g.w;
                        for r in &g.xmap.runs[kx] {
                            let len = r.o1 - r.o0;
                            let d = &mut dst[row + r.o0..][..len];
                            let kv = &kp[row + r.o0..][..len];
                            let s = &src[sy * g.w + r.s0..][..len];
                            for i in 0..len {
                                d[i] += kv[i] * s[i];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn dynamic_backward<T: Scalar>(
    g: &DynamicGeom,
    kf: &[T],
    x: &[T],
    dy: &[T],
    mut dkf: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let plane = g.h * g.w;
    let kk = g.k * g.k;
    let per_group = g.c / g.groups;
    for b in 0..g.n {
        for ch in 0..g.c {
            let gi = ch / per_group;
            let src = &x[(b * g.c + ch) * plane..][..plane];
            let gy = &dy[(b * g.c + ch) * plane..][..plane];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let t = ky * g.k + kx;
                    let koff = ((b * g.groups + gi) * kk + t) * plane;
                    for (oy, sy) in g.ymap.taps[ky].iter().enumerate() {
                        let Some(sy) = *sy else { continue };
                        let row = oy * g.w;
                        for r in &g.xmap.runs[kx] {
                            let len = r.o1 - r.o0;
                            let gv = &gy[row + r.o0..][..len];
                            if let Some(dkf) = dkf.as_deref_mut() {
                                let s = &src[sy * g.w + r.s0..][..len];
                                let dk = &mut dkf[koff + row + r.o0..][..len];
                                for i in 0..len {
                                    dk[i] += gv[i] * s[i];
                                }
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                let kv = &kf[koff + row + r.o0..][..len];
                                let d = &mut dx[(b * g.c + ch) * plane + sy * g.w + r.s0..][..len];
                                for i in 0..len {
                                    d[i] += kv[i] * gv[i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Channel-axis layer normalization. Returns the output plus the per-position
/// mean and reciprocal standard deviation needed by the backward pass.
pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    plane: usize,
    gain: &[T],
    offset: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); x.len()];
    let mut mean = vec![T::zero(); n * plane];
    let mut rstd = vec![T::zero(); n * plane];
    let inv_c = T::one() / T::from_usize(c).unwrap();
    for b in 0..n {
        let xb = &x[b * c * plane..][..c * plane];
        let mb = &mut mean[b * plane..][..plane];
        let rb = &mut rstd[b * plane..][..plane];
        for ch in 0..c {
            for (m, v) in mb.iter_mut().zip(&xb[ch * plane..][..plane]) {
                *m += *v;
            }
        }
        mb.iter_mut().for_each(|m| *m *= inv_c);
        for ch in 0..c {
            for ((r, m), v) in rb.iter_mut().zip(mb.iter()).zip(&xb[ch * plane..][..plane]) {
                let d = *v - *m;
                *r += d * d;
            }
        }
        rb.iter_mut()
            .for_each(|r| *r = T::one() / (*r * inv_c + eps).sqrt());
        let ob = &mut out[b * c * plane..][..c * plane];
        for ch in 0..c {
            let (gv, ov) = (gain[ch], offset[ch]);
            for (((o, v), m), r) in ob[ch * plane..][..plane]
                .iter_mut()
                .zip(&xb[ch * plane..][..plane])
                .zip(mb.iter())
                .zip(rb.iter())
            {
                *o = (*v - *m) * *r * gv + ov;
            }
        }
    }
    (out, mean, rstd)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    plane: usize,
    gain: &[T],
    mean: &[T],
    rstd: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dgain: Option<&mut [T]>,
    mut doffset: Option<&mut [T]>,
) {
    let inv_c = T::one() / T::from_usize(c).unwrap();
    let mut sum_g = vec![T::zero(); plane];
    let mut sum_gx = vec![T::zero(); plane];
    let mut xhat = vec![T::zero(); plane];
    for b in 0..n {
        let xb = &x[b * c * plane..][..c * plane];
        let gb = &dy[b * c * plane..][..c * plane];
        let mb = &mean[b * plane..][..plane];
        let rb = &rstd[b * plane..][..plane];
        sum_g.iter_mut().for_each(|v| *v = T::zero());
        sum_gx.iter_mut().for_each(|v| *v = T::zero());
        for ch in 0..c {
            let gv = gain[ch];
            let xr = &xb[ch * plane..][..plane];
            let gr = &gb[ch * plane..][..plane];
            for (((h, &xv), m), r) in xhat.iter_mut().zip(xr).zip(mb).zip(rb) {
                *h = (xv - *m) * *r;
            }
            for (((sg, sgx), &g), &h) in sum_g.iter_mut().zip(sum_gx.iter_mut()).zip(gr).zip(xhat.iter()) {
                let gh = g * gv;
                *sg += gh;
                *sgx += gh * h;
            }
            if let Some(d) = dgain.as_deref_mut() {
                d[ch] += dot(gr, &xhat);
            }
            if let Some(d) = doffset.as_deref_mut() {
                d[ch] += sum(gr);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let db = &mut dx[b * c * plane..][..c * plane];
            for ch in 0..c {
                let gv = gain[ch];
                for p in 0..plane {
                    let xhat = (xb[ch * plane + p] - mb[p]) * rb[p];
                    let gh = gb[ch * plane + p] * gv;
                    db[ch * plane + p] +=
                        rb[p] * (gh - sum_g[p] * inv_c - xhat * sum_gx[p] * inv_c);
                }
            }
        }
    }
}

/// tanh-approximated GELU: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let k0 = T::lit(0.797_884_560_802_865_4);
    let k1 = T::lit(0.044_715);
    let half = T::lit(0.5);
    half * x * (T::one() + (k0 * (x + k1 * x * x * x)).tanh_fast())
}

#[inline]
pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let k0 = T::lit(0.797_884_560_802_865_4);
    let k1 = T::lit(0.044_715);
    let half = T::lit(0.5);
    let u = k0 * (x + k1 * x * x * x);
    let t = u.tanh_fast();
    let du = k0 * (T::one() + T::lit(3.0) * k1 * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// `(gelu(x), gelu'(x))` sharing one tanh evaluation.
#[inline]
pub(crate) fn gelu_with_grad<T: Scalar>(x: T) -> (T, T) {
    let k0 = T::lit(0.797_884_560_802_865_4);
    let k1 = T::lit(0.044_715);
    let half = T::lit(0.5);
    let t = (k0 * (x + k1 * x * x * x)).tanh_fast();
    let du = k0 * (T::one() + T::lit(3.0) * k1 * x * x);
    let y = half * x * (T::one() + t);
    (y, half * (T::one() + t) + half * x * (T::one() - t * t) * du)
}
