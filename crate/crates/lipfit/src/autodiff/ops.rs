//! Differentiable tensor ops. Each op pushes one node whose backward
//! closures map the upstream gradient to per-parent contributions.

use super::{Tape, Var};
use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};
use std::ops::Range;

fn same_shape(a: &ArrayD<f64>, b: &ArrayD<f64>, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl Tape {
    // ---- elementwise binary ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = self.with_value(a, |va| {
            self.with_value(b, |vb| {
                same_shape(va, vb, "add");
                va + vb
            })
        });
        self.push(
            out,
            vec![
                (a.0, Box::new(|g: &ArrayD<f64>| g.clone())),
                (b.0, Box::new(|g: &ArrayD<f64>| g.clone())),
            ],
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = self.with_value(a, |va| {
            self.with_value(b, |vb| {
                same_shape(va, vb, "sub");
                va - vb
            })
        });
        self.push(
            out,
            vec![
                (a.0, Box::new(|g: &ArrayD<f64>| g.clone())),
                (b.0, Box::new(|g: &ArrayD<f64>| -g)),
            ],
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(&va, &vb, "mul");
        let out = &va * &vb;
        self.push(
            out,
            vec![
                (a.0, Box::new(move |g: &ArrayD<f64>| g * &vb)),
                (b.0, Box::new(move |g: &ArrayD<f64>| g * &va)),
            ],
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(&va, &vb, "div");
        let out = &va / &vb;
        let vb2 = vb.clone();
        self.push(
            out,
            vec![
                (a.0, Box::new(move |g: &ArrayD<f64>| g / &vb)),
                (
                    b.0,
                    Box::new(move |g: &ArrayD<f64>| -(g * &va) / (&vb2 * &vb2)),
                ),
            ],
        )
    }

    // ---- scalar-constant and unary ----

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let out = self.with_value(a, |v| v + c);
        self.push(out, vec![(a.0, Box::new(|g: &ArrayD<f64>| g.clone()))])
    }

    pub fn mul_scalar(&self, a: Var, c: f64) -> Var {
        let out = self.with_value(a, |v| v * c);
        self.push(out, vec![(a.0, Box::new(move |g: &ArrayD<f64>| g * c))])
    }

    pub fn neg(&self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    /// c - a, elementwise.
    pub fn rsub_scalar(&self, a: Var, c: f64) -> Var {
        self.add_scalar(self.neg(a), c)
    }

    pub fn relu(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.mapv(|x| x.max(0.0));
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = g.clone();
                    d.zip_mut_with(&va, |gi, &xi| {
                        if xi <= 0.0 {
                            *gi = 0.0
                        }
                    });
                    d
                }),
            )],
        )
    }

    pub fn abs(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.mapv(f64::abs);
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = g.clone();
                    d.zip_mut_with(&va, |gi, &xi| *gi *= xi.signum());
                    d
                }),
            )],
        )
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let out = self.with_value(a, |v| v.mapv(f64::sqrt));
        let out_c = out.clone();
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = g.clone();
                    d.zip_mut_with(&out_c, |gi, &yi| *gi *= 0.5 / yi.max(1e-300));
                    d
                }),
            )],
        )
    }

    /// Clamp to [0, 1]; gradient passes only strictly inside the range.
    pub fn clamp01(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.mapv(|x| x.clamp(0.0, 1.0));
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = g.clone();
                    d.zip_mut_with(&va, |gi, &xi| {
                        if !(0.0..=1.0).contains(&xi) {
                            *gi = 0.0
                        }
                    });
                    d
                }),
            )],
        )
    }

    /// sin(sqrt(x)) / sqrt(x) as a smooth function of x >= 0.
    pub fn sinc_a(&self, x: Var) -> Var {
        let vx = self.value(x);
        let out = vx.mapv(sinc_a_val);
        self.push(
            out,
            vec![(
                x.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = g.clone();
                    d.zip_mut_with(&vx, |gi, &xi| *gi *= sinc_a_deriv(xi));
                    d
                }),
            )],
        )
    }

    /// (1 - cos(sqrt(x))) / x as a smooth function of x >= 0.
    pub fn sinc_b(&self, x: Var) -> Var {
        let vx = self.value(x);
        let out = vx.mapv(sinc_b_val);
        self.push(
            out,
            vec![(
                x.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = g.clone();
                    d.zip_mut_with(&vx, |gi, &xi| *gi *= sinc_b_deriv(xi));
                    d
                }),
            )],
        )
    }

    // ---- reductions ----

    pub fn sum(&self, a: Var) -> Var {
        let shape = self.shape(a);
        let out = self.with_value(a, |v| ArrayD::from_elem(IxDyn(&[]), v.sum()));
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    ArrayD::from_elem(IxDyn(&shape), g[IxDyn(&[])])
                }),
            )],
        )
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.with_value(a, |v| v.len());
        self.mul_scalar(self.sum(a), 1.0 / n as f64)
    }

    /// Flattened dot product of two equally sized tensors; scalar output.
    pub fn dot(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "dot: length mismatch");
        let s: f64 = va.iter().zip(vb.iter()).map(|(x, y)| x * y).sum();
        let out = ArrayD::from_elem(IxDyn(&[]), s);
        let (va2, vb2) = (va.clone(), vb.clone());
        self.push(
            out,
            vec![
                (a.0, Box::new(move |g: &ArrayD<f64>| &vb2 * g[IxDyn(&[])])),
                (b.0, Box::new(move |g: &ArrayD<f64>| &va2 * g[IxDyn(&[])])),
            ],
        )
    }

    /// Mean over the trailing spatial axes of a [C, H, W] tensor -> [C].
    pub fn spatial_mean(&self, a: Var) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 3, "spatial_mean expects [C,H,W]");
        let (c, h, w) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let scale = 1.0 / (h * w) as f64;
        let mut out = Array1::<f64>::zeros(c);
        for ci in 0..c {
            out[ci] = va.index_axis(Axis(0), ci).sum() * scale;
        }
        self.push(
            out.into_dyn(),
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = ArrayD::zeros(IxDyn(&[c, h, w]));
                    for ci in 0..c {
                        d.index_axis_mut(Axis(0), ci).fill(g[IxDyn(&[ci])] * scale);
                    }
                    d
                }),
            )],
        )
    }

    // ---- shape manipulation ----

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let old_shape = self.shape(a);
        let out = self
            .value(a)
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: incompatible shape");
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    g.clone()
                        .into_shape_with_order(IxDyn(&old_shape))
                        .expect("reshape backward")
                }),
            )],
        )
    }

    /// Transpose a 2-d tensor.
    pub fn transpose2(&self, a: Var) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 2, "transpose2 expects 2-d");
        let out = va.t().as_standard_layout().to_owned();
        self.push(
            out,
            vec![(
                a.0,
                Box::new(|g: &ArrayD<f64>| g.t().as_standard_layout().to_owned()),
            )],
        )
    }

    /// [H, W, C] -> [C, H, W].
    pub fn hwc_to_chw(&self, a: Var) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 3, "hwc_to_chw expects 3-d");
        let out = va
            .view()
            .permuted_axes(IxDyn(&[2, 0, 1]))
            .as_standard_layout()
            .to_owned();
        self.push(
            out,
            vec![(
                a.0,
                Box::new(|g: &ArrayD<f64>| {
                    g.view()
                        .permuted_axes(IxDyn(&[1, 2, 0]))
                        .as_standard_layout()
                        .to_owned()
                }),
            )],
        )
    }

    /// Select one element of a vector as a scalar.
    pub fn element(&self, a: Var, idx: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 1, "element expects a vector");
        let n = va.len();
        let out = ArrayD::from_elem(IxDyn(&[]), va[IxDyn(&[idx])]);
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = ArrayD::zeros(IxDyn(&[n]));
                    d[IxDyn(&[idx])] = g[IxDyn(&[])];
                    d
                }),
            )],
        )
    }

    /// Broadcast a scalar to a vector of length n.
    pub fn broadcast_scalar(&self, s: Var, n: usize) -> Var {
        let v = self.scalar_value(s);
        let out = ArrayD::from_elem(IxDyn(&[n]), v);
        self.push(
            out,
            vec![(
                s.0,
                Box::new(|g: &ArrayD<f64>| ArrayD::from_elem(IxDyn(&[]), g.sum())),
            )],
        )
    }

    /// Broadcast a [d] vector to [n, d] rows.
    pub fn broadcast_rows(&self, v: Var, n: usize) -> Var {
        let vv = self.value(v);
        assert_eq!(vv.ndim(), 1, "broadcast_rows expects a vector");
        let d = vv.len();
        let mut out = Array2::<f64>::zeros((n, d));
        for mut row in out.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = vv[IxDyn(&[j])];
            }
        }
        self.push(
            out.into_dyn(),
            vec![(
                v.0,
                Box::new(move |g: &ArrayD<f64>| {
                    g.sum_axis(Axis(0)).into_dyn()
                }),
            )],
        )
    }

    /// Multiply a scalar Var into a tensor Var.
    pub fn scale_by(&self, a: Var, s: Var) -> Var {
        let va = self.value(a);
        let vs = self.scalar_value(s);
        let out = &va * vs;
        self.push(
            out,
            vec![
                (a.0, Box::new(move |g: &ArrayD<f64>| g * vs)),
                (
                    s.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        let s: f64 = g.iter().zip(va.iter()).map(|(x, y)| x * y).sum();
                        ArrayD::from_elem(IxDyn(&[]), s)
                    }),
                ),
            ],
        )
    }

    /// Scale each row i of [n, d] by the fixed weight w[i].
    pub fn scale_rows(&self, a: Var, w: &[f64]) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 2, "scale_rows expects [n,d]");
        assert_eq!(va.shape()[0], w.len(), "scale_rows: weight count");
        let mut out = va.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            row *= w[i];
        }
        let w = w.to_vec();
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = g.clone();
                    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                        row *= w[i];
                    }
                    d
                }),
            )],
        )
    }

    // ---- slicing / stacking / gathering ----

    pub fn slice1(&self, a: Var, range: Range<usize>) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 1, "slice1 expects a vector");
        let n = va.len();
        let out = va.slice(ndarray::s![range.clone()]).to_owned().into_dyn();
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = ArrayD::zeros(IxDyn(&[n]));
                    for (k, i) in range.clone().enumerate() {
                        d[IxDyn(&[i])] = g[IxDyn(&[k])];
                    }
                    d
                }),
            )],
        )
    }

    /// Stack scalar vars into a vector [k].
    pub fn stack_scalars(&self, items: &[Var]) -> Var {
        let vals: Vec<f64> = items.iter().map(|&v| self.scalar_value(v)).collect();
        let out = ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals).unwrap();
        let parents = items
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let back: super::BackFn = Box::new(move |g: &ArrayD<f64>| {
                    ArrayD::from_elem(IxDyn(&[]), g[IxDyn(&[k])])
                });
                (v.0, back)
            })
            .collect();
        self.push(out, parents)
    }

    /// Stack [d] vectors into [k, d].
    pub fn stack_rows(&self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows: empty");
        let d = self.shape(rows[0])[0];
        let k = rows.len();
        let mut out = Array2::<f64>::zeros((k, d));
        for (i, &r) in rows.iter().enumerate() {
            let vr = self.value(r);
            assert_eq!(vr.len(), d, "stack_rows: ragged rows");
            for j in 0..d {
                out[(i, j)] = vr[IxDyn(&[j])];
            }
        }
        let parents = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let back: super::BackFn = Box::new(move |g: &ArrayD<f64>| {
                    g.index_axis(Axis(0), i).to_owned().into_dyn()
                });
                (r.0, back)
            })
            .collect();
        self.push(out.into_dyn(), parents)
    }

    /// Stack [n] column vectors into [n, k].
    pub fn stack_cols(&self, cols: &[Var]) -> Var {
        assert!(!cols.is_empty(), "stack_cols: empty");
        let n = self.shape(cols[0])[0];
        let k = cols.len();
        let mut out = Array2::<f64>::zeros((n, k));
        for (j, &c) in cols.iter().enumerate() {
            let vc = self.value(c);
            assert_eq!(vc.len(), n, "stack_cols: ragged columns");
            for i in 0..n {
                out[(i, j)] = vc[IxDyn(&[i])];
            }
        }
        let parents = cols
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let back: super::BackFn = Box::new(move |g: &ArrayD<f64>| {
                    g.index_axis(Axis(1), j).to_owned().into_dyn()
                });
                (c.0, back)
            })
            .collect();
        self.push(out.into_dyn(), parents)
    }

    /// Column j of a [n, m] tensor as [n].
    pub fn col(&self, a: Var, j: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 2, "col expects [n,m]");
        let (n, m) = (va.shape()[0], va.shape()[1]);
        let out = va.index_axis(Axis(1), j).to_owned().into_dyn();
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = ArrayD::zeros(IxDyn(&[n, m]));
                    for i in 0..n {
                        d[IxDyn(&[i, j])] = g[IxDyn(&[i])];
                    }
                    d
                }),
            )],
        )
    }

    /// Row i of a [n, d] tensor as [d].
    pub fn row(&self, a: Var, i: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 2, "row expects [n,d]");
        let (n, d) = (va.shape()[0], va.shape()[1]);
        let out = va.index_axis(Axis(0), i).to_owned().into_dyn();
        self.push(
            out,
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut dd = ArrayD::zeros(IxDyn(&[n, d]));
                    for j in 0..d {
                        dd[IxDyn(&[i, j])] = g[IxDyn(&[j])];
                    }
                    dd
                }),
            )],
        )
    }

    /// Gather rows of [n, d] by fixed indices -> [idx.len(), d].
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 2, "gather_rows expects [n,d]");
        let (n, d) = (va.shape()[0], va.shape()[1]);
        let mut out = Array2::<f64>::zeros((idx.len(), d));
        for (k, &i) in idx.iter().enumerate() {
            for j in 0..d {
                out[(k, j)] = va[IxDyn(&[i, j])];
            }
        }
        let idx = idx.to_vec();
        self.push(
            out.into_dyn(),
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut dd = ArrayD::zeros(IxDyn(&[n, d]));
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..d {
                            dd[IxDyn(&[i, j])] += g[IxDyn(&[k, j])];
                        }
                    }
                    dd
                }),
            )],
        )
    }

    /// Scatter-add rows of [m, d] into a fresh [n, d] at fixed indices.
    pub fn scatter_add_rows(&self, src: Var, idx: &[usize], n: usize) -> Var {
        let vs = self.value(src);
        assert_eq!(vs.ndim(), 2, "scatter_add_rows expects [m,d]");
        let (m, d) = (vs.shape()[0], vs.shape()[1]);
        assert_eq!(m, idx.len(), "scatter_add_rows: index count");
        let mut out = Array2::<f64>::zeros((n, d));
        for (k, &i) in idx.iter().enumerate() {
            for j in 0..d {
                out[(i, j)] += vs[IxDyn(&[k, j])];
            }
        }
        let idx = idx.to_vec();
        self.push(
            out.into_dyn(),
            vec![(
                src.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut dd = ArrayD::zeros(IxDyn(&[m, d]));
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..d {
                            dd[IxDyn(&[k, j])] = g[IxDyn(&[i, j])];
                        }
                    }
                    dd
                }),
            )],
        )
    }

    // ---- linear algebra ----

    /// [m, k] x [k] -> [m].
    pub fn matvec(&self, a: Var, x: Var) -> Var {
        let va = self.value(a);
        let vx = self.value(x);
        assert_eq!(va.ndim(), 2, "matvec: matrix must be 2-d");
        assert_eq!(vx.ndim(), 1, "matvec: vector must be 1-d");
        let (m, k) = (va.shape()[0], va.shape()[1]);
        assert_eq!(k, vx.len(), "matvec: inner dim mismatch");
        let a2 = va.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let x1 = vx.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let out = a2.dot(&x1).into_dyn();
        let (va_c, vx_c) = (va.clone(), vx.clone());
        self.push(
            out,
            vec![
                (
                    a.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        // outer product g x^T
                        let mut d = Array2::<f64>::zeros((m, k));
                        for i in 0..m {
                            let gi = g[IxDyn(&[i])];
                            for j in 0..k {
                                d[(i, j)] = gi * vx_c[IxDyn(&[j])];
                            }
                        }
                        d.into_dyn()
                    }),
                ),
                (
                    x.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        let a2 = va_c.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                        let g1 = g.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                        a2.t().dot(&g1).into_dyn()
                    }),
                ),
            ],
        )
    }

    // ---- 3-vector row geometry ----

    /// Row-wise cross product of two [n, 3] tensors.
    pub fn cross_rows(&self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        same_shape(&va, &vb, "cross_rows");
        assert_eq!(va.shape()[1], 3, "cross_rows expects [n,3]");
        let n = va.shape()[0];
        let mut out = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            let (a0, a1, a2) = (va[IxDyn(&[i, 0])], va[IxDyn(&[i, 1])], va[IxDyn(&[i, 2])]);
            let (b0, b1, b2) = (vb[IxDyn(&[i, 0])], vb[IxDyn(&[i, 1])], vb[IxDyn(&[i, 2])]);
            out[(i, 0)] = a1 * b2 - a2 * b1;
            out[(i, 1)] = a2 * b0 - a0 * b2;
            out[(i, 2)] = a0 * b1 - a1 * b0;
        }
        let (va_c, vb_c) = (va.clone(), vb.clone());
        // d/da <g, a x b> = b x g ; d/db <g, a x b> = g x a
        self.push(
            out.into_dyn(),
            vec![
                (
                    a.0,
                    Box::new(move |g: &ArrayD<f64>| cross_all(&vb_c, g)),
                ),
                (
                    b.0,
                    Box::new(move |g: &ArrayD<f64>| cross_all(g, &va_c)),
                ),
            ],
        )
    }

    /// Normalize each row of [n, 3] to unit length; rows with norm < eps
    /// map to zero with zero gradient.
    pub fn normalize_rows(&self, a: Var, eps: f64) -> Var {
        let va = self.value(a);
        assert_eq!(va.shape()[1], 3, "normalize_rows expects [n,3]");
        let n = va.shape()[0];
        let mut out = Array2::<f64>::zeros((n, 3));
        let mut norms = vec![0.0f64; n];
        for i in 0..n {
            let r = [va[IxDyn(&[i, 0])], va[IxDyn(&[i, 1])], va[IxDyn(&[i, 2])]];
            let nn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            norms[i] = nn;
            if nn >= eps {
                out[(i, 0)] = r[0] / nn;
                out[(i, 1)] = r[1] / nn;
                out[(i, 2)] = r[2] / nn;
            }
        }
        let out_c = out.clone();
        self.push(
            out.into_dyn(),
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = Array2::<f64>::zeros((n, 3));
                    for i in 0..n {
                        if norms[i] < eps {
                            continue;
                        }
                        let y = [out_c[(i, 0)], out_c[(i, 1)], out_c[(i, 2)]];
                        let gi = [g[IxDyn(&[i, 0])], g[IxDyn(&[i, 1])], g[IxDyn(&[i, 2])]];
                        let ydg = y[0] * gi[0] + y[1] * gi[1] + y[2] * gi[2];
                        for j in 0..3 {
                            d[(i, j)] = (gi[j] - y[j] * ydg) / norms[i];
                        }
                    }
                    d.into_dyn()
                }),
            )],
        )
    }

    /// Pairwise Euclidean distances of [n, 2] points, upper triangle in
    /// row-major pair order -> [n*(n-1)/2].
    pub fn pairwise_dist2d(&self, a: Var) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 2, "pairwise_dist2d expects [n,2]");
        assert_eq!(va.shape()[1], 2, "pairwise_dist2d expects [n,2]");
        let n = va.shape()[0];
        let m = n * (n - 1) / 2;
        let mut out = Array1::<f64>::zeros(m);
        let mut k = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = va[IxDyn(&[i, 0])] - va[IxDyn(&[j, 0])];
                let dy = va[IxDyn(&[i, 1])] - va[IxDyn(&[j, 1])];
                out[k] = (dx * dx + dy * dy).sqrt();
                k += 1;
            }
        }
        let out_c = out.clone();
        self.push(
            out.into_dyn(),
            vec![(
                a.0,
                Box::new(move |g: &ArrayD<f64>| {
                    let mut d = Array2::<f64>::zeros((n, 2));
                    let mut k = 0usize;
                    for i in 0..n {
                        for j in (i + 1)..n {
                            let dist = out_c[k];
                            if dist > 1e-12 {
                                let dx = va[IxDyn(&[i, 0])] - va[IxDyn(&[j, 0])];
                                let dy = va[IxDyn(&[i, 1])] - va[IxDyn(&[j, 1])];
                                let gk = g[IxDyn(&[k])];
                                d[(i, 0)] += gk * dx / dist;
                                d[(i, 1)] += gk * dy / dist;
                                d[(j, 0)] -= gk * dx / dist;
                                d[(j, 1)] -= gk * dy / dist;
                            }
                            k += 1;
                        }
                    }
                    d.into_dyn()
                }),
            )],
        )
    }

    // ---- convolutions ----

    /// 2-d convolution: input [C, H, W], weight [O, C, kh, kw], bias [O],
    /// integer stride, symmetric zero padding.
    pub fn conv2d(&self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let vi = self.value(input);
        let vw = self.value(weight);
        let vb = self.value(bias);
        assert_eq!(vi.ndim(), 3, "conv2d input must be [C,H,W]");
        assert_eq!(vw.ndim(), 4, "conv2d weight must be [O,C,kh,kw]");
        let (c, h, w) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
        let (o, wc, kh, kw) = (vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]);
        assert_eq!(c, wc, "conv2d channel mismatch");
        assert_eq!(vb.len(), o, "conv2d bias length");
        assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d kernel larger than input");
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;

        let inp = vi.as_standard_layout().to_owned();
        let ker = vw.as_standard_layout().to_owned();
        let out = conv2d_forward(&inp, &ker, &vb, stride, pad, oh, ow);

        let inp_b = inp.clone();
        let ker_b = ker.clone();
        self.push(
            out.into_dyn(),
            vec![
                (
                    input.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        conv2d_back_input(g, &ker_b, c, h, w, stride, pad).into_dyn()
                    }),
                ),
                (
                    weight.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        conv2d_back_weight(g, &inp_b, o, c, kh, kw, stride, pad).into_dyn()
                    }),
                ),
                (
                    bias.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        let mut d = Array1::<f64>::zeros(o);
                        for oi in 0..o {
                            d[oi] = g.index_axis(Axis(0), oi).sum();
                        }
                        d.into_dyn()
                    }),
                ),
            ],
        )
    }

    /// 1-d convolution with same padding: input [C, K], weight [O, C, T]
    /// (T odd), bias [O] -> [O, K].
    pub fn conv1d_same(&self, input: Var, weight: Var, bias: Var) -> Var {
        let vi = self.value(input);
        let vw = self.value(weight);
        let vb = self.value(bias);
        assert_eq!(vi.ndim(), 2, "conv1d input must be [C,K]");
        assert_eq!(vw.ndim(), 3, "conv1d weight must be [O,C,T]");
        let (c, k) = (vi.shape()[0], vi.shape()[1]);
        let (o, wc, t) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
        assert_eq!(c, wc, "conv1d channel mismatch");
        assert_eq!(t % 2, 1, "conv1d kernel must be odd for same padding");
        assert_eq!(vb.len(), o, "conv1d bias length");
        let half = t / 2;

        let mut out = Array2::<f64>::zeros((o, k));
        for oi in 0..o {
            for pos in 0..k {
                let mut acc = vb[IxDyn(&[oi])];
                for ci in 0..c {
                    for ti in 0..t {
                        let src = pos as isize + ti as isize - half as isize;
                        if src >= 0 && (src as usize) < k {
                            acc += vi[IxDyn(&[ci, src as usize])] * vw[IxDyn(&[oi, ci, ti])];
                        }
                    }
                }
                out[(oi, pos)] = acc;
            }
        }
        let vi_b = vi.clone();
        let vw_b = vw.clone();
        self.push(
            out.into_dyn(),
            vec![
                (
                    input.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        let mut d = Array2::<f64>::zeros((c, k));
                        for oi in 0..o {
                            for pos in 0..k {
                                let gv = g[IxDyn(&[oi, pos])];
                                for ci in 0..c {
                                    for ti in 0..t {
                                        let src = pos as isize + ti as isize - half as isize;
                                        if src >= 0 && (src as usize) < k {
                                            d[(ci, src as usize)] +=
                                                gv * vw_b[IxDyn(&[oi, ci, ti])];
                                        }
                                    }
                                }
                            }
                        }
                        d.into_dyn()
                    }),
                ),
                (
                    weight.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        let mut d = ndarray::Array3::<f64>::zeros((o, c, t));
                        for oi in 0..o {
                            for pos in 0..k {
                                let gv = g[IxDyn(&[oi, pos])];
                                for ci in 0..c {
                                    for ti in 0..t {
                                        let src = pos as isize + ti as isize - half as isize;
                                        if src >= 0 && (src as usize) < k {
                                            d[(oi, ci, ti)] +=
                                                gv * vi_b[IxDyn(&[ci, src as usize])];
                                        }
                                    }
                                }
                            }
                        }
                        d.into_dyn()
                    }),
                ),
                (
                    bias.0,
                    Box::new(move |g: &ArrayD<f64>| {
                        let mut d = Array1::<f64>::zeros(o);
                        for oi in 0..o {
                            d[oi] = g.index_axis(Axis(0), oi).sum();
                        }
                        d.into_dyn()
                    }),
                ),
            ],
        )
    }
}

// ---- scalar kernels ----

pub(crate) fn sinc_a_val(x: f64) -> f64 {
    if x < 1e-8 {
        1.0 - x / 6.0 + x * x / 120.0
    } else {
        let t = x.sqrt();
        t.sin() / t
    }
}

// Closed forms of the derivatives cancel catastrophically near zero, so
// the Taylor branch extends further than for the values.
pub(crate) fn sinc_a_deriv(x: f64) -> f64 {
    if x < 1e-4 {
        -1.0 / 6.0 + x / 60.0 - x * x / 1680.0
    } else {
        let t = x.sqrt();
        (t * t.cos() - t.sin()) / (2.0 * t * t * t)
    }
}

pub(crate) fn sinc_b_val(x: f64) -> f64 {
    if x < 1e-8 {
        0.5 - x / 24.0 + x * x / 720.0
    } else {
        // 1 - cos t = 2 sin^2(t/2), free of cancellation
        let s = (x.sqrt() * 0.5).sin();
        2.0 * s * s / x
    }
}

pub(crate) fn sinc_b_deriv(x: f64) -> f64 {
    if x < 1e-4 {
        -1.0 / 24.0 + x / 360.0 - x * x / 13440.0
    } else {
        let t = x.sqrt();
        let s = (t * 0.5).sin();
        (t * t.sin() / 2.0 - 2.0 * s * s) / (x * x)
    }
}

fn cross_all(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let n = a.shape()[0];
    let mut out = Array2::<f64>::zeros((n, 3));
    for i in 0..n {
        let (a0, a1, a2) = (a[IxDyn(&[i, 0])], a[IxDyn(&[i, 1])], a[IxDyn(&[i, 2])]);
        let (b0, b1, b2) = (b[IxDyn(&[i, 0])], b[IxDyn(&[i, 1])], b[IxDyn(&[i, 2])]);
        out[(i, 0)] = a1 * b2 - a2 * b1;
        out[(i, 1)] = a2 * b0 - a0 * b2;
        out[(i, 2)] = a0 * b1 - a1 * b0;
    }
    out.into_dyn()
}

fn conv2d_forward(
    inp: &ArrayD<f64>,
    ker: &ArrayD<f64>,
    bias: &ArrayD<f64>,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> ndarray::Array3<f64> {
    let (c, h, w) = (inp.shape()[0], inp.shape()[1], inp.shape()[2]);
    let (o, _, kh, kw) = (ker.shape()[0], ker.shape()[1], ker.shape()[2], ker.shape()[3]);
    let is = inp.as_slice().unwrap();
    let ks = ker.as_slice().unwrap();
    let mut out = ndarray::Array3::<f64>::zeros((o, oh, ow));
    for oi in 0..o {
        let b = bias[IxDyn(&[oi])];
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = b;
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let iy = iy as usize;
                        for kx in 0..kw {
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            acc += is[(ci * h + iy) * w + ix as usize]
                                * ks[((oi * c + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(oi, y, x)] = acc;
            }
        }
    }
    out
}

fn conv2d_back_input(
    g: &ArrayD<f64>,
    ker: &ArrayD<f64>,
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
    pad: usize,
) -> ndarray::Array3<f64> {
    let (o, _, kh, kw) = (ker.shape()[0], ker.shape()[1], ker.shape()[2], ker.shape()[3]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let ks = ker.as_slice().unwrap();
    let mut d = ndarray::Array3::<f64>::zeros((c, h, w));
    for oi in 0..o {
        for y in 0..oh {
            for x in 0..ow {
                let gv = g[IxDyn(&[oi, y, x])];
                if gv == 0.0 {
                    continue;
                }
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            d[(ci, iy as usize, ix as usize)] +=
                                gv * ks[((oi * c + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
            }
        }
    }
    d
}

fn conv2d_back_weight(
    g: &ArrayD<f64>,
    inp: &ArrayD<f64>,
    o: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> ndarray::Array4<f64> {
    let (h, w) = (inp.shape()[1], inp.shape()[2]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let is = inp.as_slice().unwrap();
    let mut d = ndarray::Array4::<f64>::zeros((o, c, kh, kw));
    for oi in 0..o {
        for y in 0..oh {
            for x in 0..ow {
                let gv = g[IxDyn(&[oi, y, x])];
                if gv == 0.0 {
                    continue;
                }
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            d[(oi, ci, ky, kx)] += gv * is[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    d
}
