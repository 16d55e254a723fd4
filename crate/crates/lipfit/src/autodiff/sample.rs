//! Bilinear resampling of a single-channel image at fixed grid
//! coordinates. The grid is a constant: gradients flow to the source
//! pixels only, which is the contract the mouth crop documents.

use super::{Tape, Var};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use std::rc::Rc;

/// Taps and weights at one grid location.
#[derive(Clone, Copy)]
struct Taps {
    idx: [(usize, usize); 4],
    w: [f64; 4],
}

impl Tape {
    /// Sample image [H, W] at grid [h, w, 2] of continuous (x, y) pixel
    /// coordinates (pixel centers at integer + 0.5). Coordinates outside
    /// the image are clamped to the border (replicate padding).
    pub fn bilinear_sample(&self, image: Var, grid: &Array3<f64>) -> Var {
        let vi = self.value(image);
        assert_eq!(vi.ndim(), 2, "bilinear_sample expects [H,W] image");
        let (ih, iw) = (vi.shape()[0], vi.shape()[1]);
        let (oh, ow) = (grid.shape()[0], grid.shape()[1]);

        let mut taps = Vec::with_capacity(oh * ow);
        let mut out = Array2::<f64>::zeros((oh, ow));
        for r in 0..oh {
            for c in 0..ow {
                let x = grid[(r, c, 0)];
                let y = grid[(r, c, 1)];
                let t = taps_for(x, y, ih, iw);
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += t.w[k] * vi[IxDyn(&[t.idx[k].0, t.idx[k].1])];
                }
                out[(r, c)] = acc;
                taps.push(t);
            }
        }
        let taps = Rc::new(taps);
        self.push(
            out.into_dyn(),
            vec![(
                image.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = Array2::<f64>::zeros((ih, iw));
                    for r in 0..oh {
                        for c in 0..ow {
                            let gv = g[IxDyn(&[r, c])];
                            let t = taps[r * ow + c];
                            for k in 0..4 {
                                d[t.idx[k]] += t.w[k] * gv;
                            }
                        }
                    }
                    d.into_dyn()
                }),
            )],
        )
    }
}

fn taps_for(x: f64, y: f64, ih: usize, iw: usize) -> Taps {
    // shift to sample space where pixel i sits at coordinate i
    let xs = (x - 0.5).clamp(0.0, (iw - 1) as f64);
    let ys = (y - 0.5).clamp(0.0, (ih - 1) as f64);
    let x0 = xs.floor() as usize;
    let y0 = ys.floor() as usize;
    let x1 = (x0 + 1).min(iw - 1);
    let y1 = (y0 + 1).min(ih - 1);
    let fx = xs - x0 as f64;
    let fy = ys - y0 as f64;
    Taps {
        idx: [(y0, x0), (y0, x1), (y1, x0), (y1, x1)],
        w: [
            (1.0 - fy) * (1.0 - fx),
            (1.0 - fy) * fx,
            fy * (1.0 - fx),
            fy * fx,
        ],
    }
}

/// Plain (non-tape) bilinear lookup with the crate's sampling convention.
pub fn bilinear_at(image: &Array2<f64>, x: f64, y: f64) -> f64 {
    let t = taps_for(x, y, image.shape()[0], image.shape()[1]);
    (0..4).map(|k| t.w[k] * image[t.idx[k]]).sum()
}
