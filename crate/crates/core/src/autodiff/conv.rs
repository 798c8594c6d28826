//! im2col convolution kernels, batched over the leading dimension with rayon.
//!
//! Per-sample weight gradients are reduced in sample order so results do not
//! depend on thread scheduling.

use rayon::prelude::*;

use super::gemm::gemm;

/// Geometry of a strided, zero-padded 2-D correlation from a `channels x h x w`
/// plane to an `out_h x out_w` grid.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn plane(&self) -> usize {
        self.channels * self.h * self.w
    }

    /// Visits every (column-matrix index, input index) pair inside the image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let cols = self.cols();
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base_in = (c * self.h + iy as usize) * self.w;
                        let base_col = row * cols + oy * self.out_w;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(base_col + ox, base_in + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        cols.fill(0.0);
        self.for_each_tap(|ci, xi| cols[ci] = x[xi]);
    }

    fn col2im_add(&self, cols: &[f64], x: &mut [f64]) {
        self.for_each_tap(|ci, xi| x[xi] += cols[ci]);
    }
}

/// `out[n] = W * im2col(x[n]) + b`; weight is `[cout, geom.rows()]`.
pub(crate) fn conv_forward(g: &Geom, cout: usize, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let plane_out = cout * g.cols();
    out.par_chunks_mut(plane_out)
        .zip(x.par_chunks(g.plane()))
        .for_each(|(o, xs)| {
            let mut cols = vec![0.0; g.rows() * g.cols()];
            g.im2col(xs, &mut cols);
            gemm(cout, g.rows(), g.cols(), w, false, &cols, false, o, 0.0);
            for (co, chunk) in o.chunks_mut(g.cols()).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[co]);
            }
        });
}

/// Gradients of [`conv_forward`]. `dx` is accumulated only when present.
pub(crate) fn conv_backward(
    g: &Geom,
    cout: usize,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    dx: Option<&mut [f64]>,
    want_dw: bool,
) -> (Vec<f64>, Vec<f64>) {
    let plane_out = cout * g.cols();
    let n = gout.len() / plane_out;
    let per_sample = |i: usize, dxs: Option<&mut [f64]>| -> Vec<f64> {
        let go = &gout[i * plane_out..(i + 1) * plane_out];
        if let Some(dxs) = dxs {
            let mut dcols = vec![0.0; g.rows() * g.cols()];
            gemm(g.rows(), cout, g.cols(), w, true, go, false, &mut dcols, 0.0);
            g.col2im_add(&dcols, dxs);
        }
        if want_dw {
            let mut cols = vec![0.0; g.rows() * g.cols()];
            g.im2col(&x[i * g.plane()..(i + 1) * g.plane()], &mut cols);
            let mut dw = vec![0.0; cout * g.rows()];
            gemm(cout, g.cols(), g.rows(), go, false, &cols, true, &mut dw, 0.0);
            dw
        } else {
            Vec::new()
        }
    };
    let partials: Vec<Vec<f64>> = match dx {
        Some(dx) => dx
            .par_chunks_mut(g.plane())
            .enumerate()
            .map(|(i, dxs)| per_sample(i, Some(dxs)))
            .collect(),
        None => (0..n).into_par_iter().map(|i| per_sample(i, None)).collect(),
    };
    let mut dw = vec![0.0; if want_dw { cout * g.rows() } else { 0 }];
    for p in &partials {
        dw.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let mut db = vec![0.0; cout];
    for chunk in gout.chunks(plane_out) {
        for (co, plane) in chunk.chunks(g.cols()).enumerate() {
            db[co] += plane.iter().sum::<f64>();
        }
    }
    (dw, db)
}

/// Transposed convolution: `out[n] = col2im(Wᵀ x[n]) + b`.
///
/// `g` describes the adjoint correlation from the output plane
/// (`g.channels = cout`) back to the input grid (`g.out_h x g.out_w`);
/// weight is `[cin, g.rows()]`.
pub(crate) fn conv_t_forward(g: &Geom, cin: usize, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let plane_in = cin * g.cols();
    let hw = g.h * g.w;
    out.par_chunks_mut(g.plane())
        .zip(x.par_chunks(plane_in))
        .for_each(|(o, xs)| {
            let mut cols = vec![0.0; g.rows() * g.cols()];
            gemm(g.rows(), cin, g.cols(), w, true, xs, false, &mut cols, 0.0);
            o.fill(0.0);
            g.col2im_add(&cols, o);
            for (co, chunk) in o.chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[co]);
            }
        });
}

pub(crate) fn conv_t_backward(
    g: &Geom,
    cin: usize,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    dx: Option<&mut [f64]>,
    want_dw: bool,
) -> (Vec<f64>, Vec<f64>) {
    let plane_in = cin * g.cols();
    let n = gout.len() / g.plane();
    let per_sample = |i: usize, dxs: Option<&mut [f64]>| -> Vec<f64> {
        let mut gcols = vec![0.0; g.rows() * g.cols()];
        g.im2col(&gout[i * g.plane()..(i + 1) * g.plane()], &mut gcols);
        if let Some(dxs) = dxs {
            gemm(cin, g.rows(), g.cols(), w, false, &gcols, false, dxs, 1.0);
        }
        if want_dw {
            let mut dw = vec![0.0; cin * g.rows()];
            let xs = &x[i * plane_in..(i + 1) * plane_in];
            gemm(cin, g.cols(), g.rows(), xs, false, &gcols, true, &mut dw, 0.0);
            dw
        } else {
            Vec::new()
        }
    };
    let partials: Vec<Vec<f64>> = match dx {
        Some(dx) => dx
            .par_chunks_mut(plane_in)
            .enumerate()
            .map(|(i, dxs)| per_sample(i, Some(dxs)))
            .collect(),
        None => (0..n).into_par_iter().map(|i| per_sample(i, None)).collect(),
    };
    let mut dw = vec![0.0; if want_dw { cin * g.rows() } else { 0 }];
    for p in &partials {
        dw.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let hw = g.h * g.w;
    let mut db = vec![0.0; g.channels];
    for chunk in gout.chunks(g.plane()) {
        for (co, plane) in chunk.chunks(hw).enumerate() {
            db[co] += plane.iter().sum::<f64>();
        }
    }
    (dw, db)
}
