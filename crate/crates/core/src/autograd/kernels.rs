//! Forward and backward kernels on raw slices. The tape in `graph` wires
//! these together; they are also called directly by inference helpers.

/// Geometry of a single-image 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let mut cols = vec![0.0; g.rows() * p];
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &mut cols[r * p..(r + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            row[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &cols[r * p..(r + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn conv2d_forward(x: &[f64], weight: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = im2col(x, g);
    let (r, p) = (g.rows(), g.cols());
    let mut out = vec![0.0; g.c_out * p];
    for co in 0..g.c_out {
        let orow = &mut out[co * p..(co + 1) * p];
        orow.fill(bias[co]);
        let wrow = &weight[co * r..(co + 1) * r];
        for (ri, &wv) in wrow.iter().enumerate() {
            if wv != 0.0 {
                axpy(wv, &cols[ri * p..(ri + 1) * p], orow);
            }
        }
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)` for upstream gradient `gout`.
pub fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    gout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cols = im2col(x, g);
    let (r, p) = (g.rows(), g.cols());
    let mut dw = vec![0.0; g.c_out * r];
    let mut db = vec![0.0; g.c_out];
    let mut dcols = vec![0.0; r * p];
    for co in 0..g.c_out {
        let grow = &gout[co * p..(co + 1) * p];
        db[co] = grow.iter().sum();
        let wrow = &weight[co * r..(co + 1) * r];
        for ri in 0..r {
            let crow = &cols[ri * p..(ri + 1) * p];
            dw[co * r + ri] = dot(grow, crow);
            let wv = wrow[ri];
            if wv != 0.0 {
                axpy(wv, grow, &mut dcols[ri * p..(ri + 1) * p]);
            }
        }
    }
    let mut dx = vec![0.0; g.c_in * g.h * g.w];
    col2im(&dcols, g, &mut dx);
    (dx, dw, db)
}

/// 2x2/stride-2 max pooling over `[c, h, w]`; returns values and the flat
/// input index of each window's maximum (first in row-major order on ties).
pub fn maxpool2_forward(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (ch * h + 2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Per-channel spatial maximum; ties resolve to the first row-major index.
pub fn global_max_forward(x: &[f64], c: usize, hw: usize) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(c);
    let mut arg = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate().skip(1) {
            if v > plane[best] {
                best = i;
            }
        }
        out.push(plane[best]);
        arg.push(ch * hw + best);
    }
    (out, arg)
}

/// `y = W x + b` for `W` of shape `[d_out, d_in]`.
pub fn linear_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let d_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + dot(&weight[o * d_in..(o + 1) * d_in], x))
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(n: usize, rng: &mut Rng) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    // direct nested-loop convolution used as the oracle
    fn conv_reference(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; g.c_out * oh * ow];
        for co in 0..g.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..g.c_in {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += w[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj]
                                    * x[(ci * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_loop_reference() {
        let mut rng = Rng::new(11);
        for (stride, pad) in [(1, 1), (2, 0), (2, 1), (1, 0)] {
            let g = ConvGeom {
                c_in: 2,
                h: 4,
                w: 4,
                c_out: 3,
                kh: 3,
                kw: 3,
                stride,
                pad,
            };
            let x = random(32, &mut rng);
            let w = random(54, &mut rng);
            let b = random(3, &mut rng);
            let got = conv2d_forward(&x, &w, &b, &g);
            let want = conv_reference(&x, &w, &b, &g);
            assert_eq!(got.len(), want.len());
            for (a, e) in got.iter().zip(&want) {
                assert!((a - e).abs() <= 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn maxpool_ties_pick_first() {
        let (v, a) = maxpool2_forward(&[5.0; 16], 1, 4, 4);
        assert_eq!(v, vec![5.0; 4]);
        assert_eq!(a, vec![0, 2, 8, 10]);
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0, 1000.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
