//! Hard rasterization as a tape op.
//!
//! Coverage and depth ordering are treated as fixed during backward; the
//! gradient flows through per-vertex attributes and through the
//! barycentric weights of interior pixels, which is exactly the
//! "interior-only" guarantee the renderer documents.

use super::{Tape, Var};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use std::rc::Rc;

/// Winning triangle at a pixel after depth resolution.
#[derive(Clone, Copy, Debug)]
pub struct RasterHit {
    pub pixel: (usize, usize), // (row, col)
    pub face: usize,
    pub bary: [f64; 3],
}

const INSIDE_TOL: f64 = 1e-12;
const DEGENERATE_AREA: f64 = 1e-12;

impl Tape {
    /// Rasterize triangles over an `h` x `w` pixel grid.
    ///
    /// `pos` is [V, 2] in pixel coordinates (pixel centers at integer +
    /// 0.5), `attr` is [V, C] per-vertex attributes interpolated with
    /// barycentric weights, `depth` picks the largest interpolated value
    /// per pixel. Returns the image Var [h, w, C], the coverage mask and
    /// the per-pixel hits.
    pub fn rasterize(
        &self,
        pos: Var,
        attr: Var,
        depth: &[f64],
        faces: &[[usize; 3]],
        h: usize,
        w: usize,
    ) -> (Var, Array2<f64>, Vec<RasterHit>) {
        let vpos = self.value(pos);
        let vattr = self.value(attr);
        assert_eq!(vpos.ndim(), 2, "rasterize: pos must be [V,2]");
        assert_eq!(vpos.shape()[1], 2, "rasterize: pos must be [V,2]");
        let nv = vpos.shape()[0];
        assert_eq!(vattr.shape()[0], nv, "rasterize: attr count");
        assert_eq!(depth.len(), nv, "rasterize: depth count");
        let ch = vattr.shape()[1];

        let px = |i: usize| vpos[IxDyn(&[i, 0])];
        let py = |i: usize| vpos[IxDyn(&[i, 1])];

        let mut zbuf = vec![f64::NEG_INFINITY; h * w];
        let mut best: Vec<Option<(usize, [f64; 3])>> = vec![None; h * w];

        for (fi, f) in faces.iter().enumerate() {
            let (a, b, c) = (f[0], f[1], f[2]);
            let (ax, ay, bx, by, cx, cy) = (px(a), py(a), px(b), py(b), px(c), py(c));
            let det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
            if det.abs() < DEGENERATE_AREA {
                continue;
            }
            let minx = ax.min(bx).min(cx);
            let maxx = ax.max(bx).max(cx);
            let miny = ay.min(by).min(cy);
            let maxy = ay.max(by).max(cy);
            // pixel centers at col + 0.5 within [minx, maxx]
            let c0 = ((minx - 0.5).ceil().max(0.0)) as usize;
            let c1 = ((maxx - 0.5).floor()).min(w as f64 - 1.0);
            let r0 = ((miny - 0.5).ceil().max(0.0)) as usize;
            let r1 = ((maxy - 0.5).floor()).min(h as f64 - 1.0);
            if c1 < 0.0 || r1 < 0.0 {
                continue;
            }
            let (c1, r1) = (c1 as usize, r1 as usize);
            for row in r0..=r1 {
                let pyc = row as f64 + 0.5;
                for col in c0..=c1 {
                    let pxc = col as f64 + 0.5;
                    let n0 = (bx - pxc) * (cy - pyc) - (by - pyc) * (cx - pxc);
                    let n1 = (cx - pxc) * (ay - pyc) - (cy - pyc) * (ax - pxc);
                    let n2 = (ax - pxc) * (by - pyc) - (ay - pyc) * (bx - pxc);
                    let w0 = n0 / det;
                    let w1 = n1 / det;
                    let w2 = n2 / det;
                    if w0 < -INSIDE_TOL || w1 < -INSIDE_TOL || w2 < -INSIDE_TOL {
                        continue;
                    }
                    let z = w0 * depth[a] + w1 * depth[b] + w2 * depth[c];
                    let idx = row * w + col;
                    if z > zbuf[idx] {
                        zbuf[idx] = z;
                        best[idx] = Some((fi, [w0, w1, w2]));
                    }
                }
            }
        }

        let mut hits = Vec::new();
        let mut mask = Array2::<f64>::zeros((h, w));
        let mut image = Array3::<f64>::zeros((h, w, ch));
        for row in 0..h {
            for col in 0..w {
                if let Some((fi, bary)) = best[row * w + col] {
                    mask[(row, col)] = 1.0;
                    let f = faces[fi];
                    for k in 0..ch {
                        image[(row, col, k)] = bary[0] * vattr[IxDyn(&[f[0], k])]
                            + bary[1] * vattr[IxDyn(&[f[1], k])]
                            + bary[2] * vattr[IxDyn(&[f[2], k])];
                    }
                    hits.push(RasterHit {
                        pixel: (row, col),
                        face: fi,
                        bary,
                    });
                }
            }
        }

        let hits_rc = Rc::new(hits);
        let faces_attr = faces.to_vec();
        let faces_pos = faces.to_vec();
        let hits_attr = Rc::clone(&hits_rc);
        let hits_pos = Rc::clone(&hits_rc);
        let vattr_b = vattr.clone();
        let vpos_b = vpos.clone();

        let var = self.push(
            image.into_dyn(),
            vec![
                (
                    attr.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        let mut d = Array2::<f64>::zeros((nv, ch));
                        for hit in hits_attr.iter() {
                            let (row, col) = hit.pixel;
                            let f = faces_attr[hit.face];
                            for k in 0..ch {
                                let gv = g[IxDyn(&[row, col, k])];
                                for v in 0..3 {
                                    d[(f[v], k)] += hit.bary[v] * gv;
                                }
                            }
                        }
                        d.into_dyn()
                    }),
                ),
                (
                    pos.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        raster_back_pos(g, &hits_pos, &faces_pos, &vpos_b, &vattr_b, nv, ch)
                    }),
                ),
            ],
        );
        (var, mask, Rc::try_unwrap(hits_rc).unwrap_or_else(|rc| (*rc).clone()))
    }
}

/// Gradient of interpolated pixel values with respect to the projected
/// vertex positions, with coverage held fixed.
fn raster_back_pos(
    g: &ArrayD<f64>,
    hits: &[RasterHit],
    faces: &[[usize; 3]],
    vpos: &ArrayD<f64>,
    vattr: &ArrayD<f64>,
    nv: usize,
    ch: usize,
) -> ArrayD<f64> {
    let mut d = Array2::<f64>::zeros((nv, 2));
    for hit in hits {
        let (row, col) = hit.pixel;
        let f = faces[hit.face];
        let (pxc, pyc) = (col as f64 + 0.5, row as f64 + 0.5);
        let (ax, ay) = (vpos[IxDyn(&[f[0], 0])], vpos[IxDyn(&[f[0], 1])]);
        let (bx, by) = (vpos[IxDyn(&[f[1], 0])], vpos[IxDyn(&[f[1], 1])]);
        let (cx, cy) = (vpos[IxDyn(&[f[2], 0])], vpos[IxDyn(&[f[2], 1])]);
        let det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
        if det.abs() < DEGENERATE_AREA {
            continue;
        }
        // u[v] = sum_k g[k] * attr[f[v], k] : sensitivity to bary weight v
        let mut u = [0.0f64; 3];
        for k in 0..ch {
            let gv = g[IxDyn(&[row, col, k])];
            for v in 0..3 {
                u[v] += gv * vattr[IxDyn(&[f[v], k])];
            }
        }
        let wb = hit.bary;

        // dD/da etc.
        let dd_a = (by - cy, cx - bx);
        let dd_b = (cy - ay, ax - cx);
        let dd_c = (ay - by, bx - ax);
        // dn_i/dvertex for the two numerators that depend on each vertex
        let dn1_a = (-(cy - pyc), cx - pxc);
        let dn2_a = (by - pyc, -(bx - pxc));
        let dn0_b = (cy - pyc, -(cx - pxc));
        let dn2_b = (-(ay - pyc), ax - pxc);
        let dn0_c = (-(by - pyc), bx - pxc);
        let dn1_c = (ay - pyc, -(ax - pxc));

        // dw_i/dvertex = (dn_i - w_i * dD) / D ; n0 does not depend on a, etc.
        let inv = 1.0 / det;
        let acc = |d: &mut Array2<f64>, vi: usize, grad: (f64, f64)| {
            d[(vi, 0)] += grad.0;
            d[(vi, 1)] += grad.1;
        };
        // vertex a
        acc(
            &mut d,
            f[0],
            (
                inv * (u[0] * (-wb[0] * dd_a.0)
                    + u[1] * (dn1_a.0 - wb[1] * dd_a.0)
                    + u[2] * (dn2_a.0 - wb[2] * dd_a.0)),
                inv * (u[0] * (-wb[0] * dd_a.1)
                    + u[1] * (dn1_a.1 - wb[1] * dd_a.1)
                    + u[2] * (dn2_a.1 - wb[2] * dd_a.1)),
            ),
        );
        // vertex b
        acc(
            &mut d,
            f[1],
            (
                inv * (u[0] * (dn0_b.0 - wb[0] * dd_b.0)
                    + u[1] * (-wb[1] * dd_b.0)
                    + u[2] * (dn2_b.0 - wb[2] * dd_b.0)),
                inv * (u[0] * (dn0_b.1 - wb[0] * dd_b.1)
                    + u[1] * (-wb[1] * dd_b.1)
                    + u[2] * (dn2_b.1 - wb[2] * dd_b.1)),
            ),
        );
        // vertex c
        acc(
            &mut d,
            f[2],
            (
                inv * (u[0] * (dn0_c.0 - wb[0] * dd_c.0)
                    + u[1] * (dn1_c.0 - wb[1] * dd_c.0)
                    + u[2] * (-wb[2] * dd_c.0)),
                inv * (u[0] * (dn0_c.1 - wb[0] * dd_c.1)
                    + u[1] * (dn1_c.1 - wb[1] * dd_c.1)
                    + u[2] * (-wb[2] * dd_c.1)),
            ),
        );
    }
    d.into_dyn()
}
