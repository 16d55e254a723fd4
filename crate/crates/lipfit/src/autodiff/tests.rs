use super::*;
use ndarray::{Array1, Array2, Array3, Array4, ArrayD, IxDyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn elementwise_and_reductions_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, &[4, 3]);
    let b = randn(&mut rng, &[4, 3]).mapv(|x| x + 2.5); // keep div well-conditioned
    check_gradients(
        &[a, b],
        |t, v| {
            let s = t.add(v[0], v[1]);
            let p = t.mul(s, v[0]);
            let q = t.div(p, v[1]);
            let r = t.sub(q, v[0]);
            t.mean(r)
        },
        1e-6,
        1e-6,
        1e-9,
    );
}

#[test]
fn unary_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // keep away from the kinks of abs/relu and sqrt(0)
    let a = randn(&mut rng, &[5]).mapv(|x| x + 3.0);
    check_gradients(
        &[a.clone()],
        |t, v| {
            let s = t.sqrt(v[0]);
            let r = t.relu(s);
            let ab = t.abs(r);
            t.sum(ab)
        },
        1e-6,
        1e-6,
        1e-9,
    );
    let signed = randn(&mut rng, &[6]).mapv(|x| if x.abs() < 0.2 { x + 0.5 } else { x });
    check_gradients(
        &[signed],
        |t, v| t.sum(t.abs(v[0])),
        1e-6,
        1e-6,
        1e-9,
    );
}

#[test]
fn sinc_ops_are_smooth_through_zero() {
    for &x0 in &[0.0, 1e-10, 1e-7, 0.3, 2.0] {
        let a = ArrayD::from_elem(IxDyn(&[1]), x0);
        check_gradients(
            &[a],
            |t, v| {
                let sa = t.sinc_a(v[0]);
                let sb = t.sinc_b(v[0]);
                t.sum(t.add(sa, sb))
            },
            1e-7,
            1e-6,
            1e-9,
        );
    }
    // values at zero
    let t = Tape::new();
    let z = t.leaf(ArrayD::from_elem(IxDyn(&[1]), 0.0));
    assert!((t.value(t.sinc_a(z))[IxDyn(&[0])] - 1.0).abs() < 1e-15);
    assert!((t.value(t.sinc_b(z))[IxDyn(&[0])] - 0.5).abs() < 1e-15);
}

#[test]
fn matvec_dot_and_stacking_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = randn(&mut rng, &[4, 6]);
    let x = randn(&mut rng, &[6]);
    let y = randn(&mut rng, &[4]);
    check_gradients(
        &[m, x, y],
        |t, v| {
            let mv = t.matvec(v[0], v[1]);
            let d = t.dot(mv, v[2]);
            let st = t.stack_scalars(&[d, t.sum(v[1])]);
            t.sum(st)
        },
        1e-6,
        1e-6,
        1e-9,
    );
}

#[test]
fn slicing_gather_scatter_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = randn(&mut rng, &[6, 3]);
    let v = randn(&mut rng, &[7]);
    check_gradients(
        &[a, v],
        |t, vars| {
            let g = t.gather_rows(vars[0], &[0, 2, 2, 5]);
            let s = t.scatter_add_rows(g, &[1, 0, 3, 1], 4);
            let c0 = t.col(s, 0);
            let r = t.row(s, 1);
            let sl = t.slice1(vars[1], 2..5);
            let stc = t.stack_cols(&[c0, c0]);
            let str_ = t.stack_rows(&[r, r]);
            let total = t.add(t.sum(stc), t.add(t.sum(str_), t.sum(sl)));
            total
        },
        1e-6,
        1e-6,
        1e-9,
    );
}

#[test]
fn broadcast_and_scale_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = randn(&mut rng, &[]);
    let v3 = randn(&mut rng, &[3]);
    let m = randn(&mut rng, &[5, 3]);
    check_gradients(
        &[s, v3, m],
        |t, vars| {
            let bs = t.broadcast_scalar(vars[0], 4);
            let br = t.broadcast_rows(vars[1], 5);
            let sc = t.scale_by(t.add(br, vars[2]), vars[0]);
            let sr = t.scale_rows(sc, &[0.5, 1.0, 0.0, 2.0, 1.5]);
            t.add(t.sum(sr), t.sum(bs))
        },
        1e-6,
        1e-6,
        1e-9,
    );
}

#[test]
fn geometry_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = randn(&mut rng, &[4, 3]).mapv(|x| x + 1.5);
    let b = randn(&mut rng, &[4, 3]).mapv(|x| x - 1.5);
    check_gradients(
        &[a.clone(), b],
        |t, v| {
            let c = t.cross_rows(v[0], v[1]);
            let n = t.normalize_rows(c, 1e-12);
            t.sum(t.mul(n, v[0]))
        },
        1e-6,
        1e-6,
        1e-9,
    );
    // pairwise distances
    let pts = randn(&mut rng, &[5, 2]).mapv(|x| x * 3.0);
    check_gradients(
        &[pts],
        |t, v| t.sum(t.pairwise_dist2d(v[0])),
        1e-6,
        1e-6,
        1e-9,
    );
}

#[test]
fn conv2d_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 0), (2, 1)] {
        let input = randn(&mut rng, &[2, 6, 7]);
        let weight = randn(&mut rng, &[3, 2, 3, 3]);
        let bias = randn(&mut rng, &[3]);
        check_gradients(
            &[input, weight, bias],
            |t, v| t.mean(t.conv2d(v[0], v[1], v[2], stride, pad)),
            1e-6,
            1e-6,
            1e-9,
        );
    }
}

#[test]
fn conv2d_valid_on_constant_input_equals_bias_plus_weight_sum() {
    let t = Tape::new();
    let c = 0.37;
    let input = t.leaf(ArrayD::from_elem(IxDyn(&[1, 5, 5]), c));
    let w = Array4::from_shape_fn((2, 1, 3, 3), |(o, _, i, j)| (o + i + j) as f64 * 0.1 - 0.2);
    let wsum: Vec<f64> = (0..2)
        .map(|o| w.slice(ndarray::s![o, .., .., ..]).sum())
        .collect();
    let weight = t.leaf(w.into_dyn());
    let bias = t.leaf(Array1::from(vec![0.3, -0.7]).into_dyn());
    let out = t.value(t.conv2d(input, weight, bias, 1, 0));
    assert_eq!(out.shape(), &[2, 3, 3]);
    for o in 0..2 {
        let expect = [0.3, -0.7][o] + wsum[o] * c;
        for y in 0..3 {
            for x in 0..3 {
                assert!((out[IxDyn(&[o, y, x])] - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv1d_same_matches_finite_differences_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let input = randn(&mut rng, &[3, 7]);
    let weight = randn(&mut rng, &[2, 3, 5]);
    let bias = randn(&mut rng, &[2]);
    check_gradients(
        &[input, weight, bias],
        |t, v| t.mean(t.conv1d_same(v[0], v[1], v[2])),
        1e-6,
        1e-6,
        1e-9,
    );
    // same padding preserves length, even shorter than the kernel
    let t = Tape::new();
    let input = t.leaf(randn(&mut rng, &[2, 2]));
    let weight = t.leaf(randn(&mut rng, &[4, 2, 5]));
    let bias = t.leaf(randn(&mut rng, &[4]));
    assert_eq!(t.shape(t.conv1d_same(input, weight, bias)), vec![4, 2]);
}

#[test]
fn reshape_transpose_permute_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = randn(&mut rng, &[4, 6]);
    let img = randn(&mut rng, &[3, 4, 2]); // H,W,C
    check_gradients(
        &[a, img],
        |t, v| {
            let r = t.reshape(v[0], &[2, 12]);
            let tr = t.transpose2(r);
            let chw = t.hwc_to_chw(v[1]);
            let sm = t.spatial_mean(chw);
            t.add(t.mean(tr), t.sum(sm))
        },
        1e-6,
        1e-6,
        1e-9,
    );
}

#[test]
fn clamp01_gradient_gates_out_of_range() {
    let t = Tape::new();
    let a = t.leaf(Array1::from(vec![-0.5, 0.25, 0.75, 1.5]).into_dyn());
    let s = t.sum(t.clamp01(a));
    assert!((t.scalar_value(s) - (0.0 + 0.25 + 0.75 + 1.0)).abs() < 1e-15);
    let g = t.backward(s);
    let ga = g.get(a).unwrap();
    assert_eq!(
        ga.as_slice().unwrap(),
        &[0.0, 1.0, 1.0, 0.0],
        "gradient must vanish where clamped"
    );
}

#[test]
fn bilinear_sample_matches_finite_differences_and_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = randn(&mut rng, &[5, 6]);
    let grid = Array3::from_shape_fn((3, 3, 2), |(r, c, k)| {
        if k == 0 {
            0.9 + 1.3 * c as f64
        } else {
            0.7 + 1.1 * r as f64
        }
    });
    let gridc = grid.clone();
    check_gradients(
        &[img.clone()],
        |t, v| t.sum(t.bilinear_sample(v[0], &gridc)),
        1e-6,
        1e-6,
        1e-9,
    );
    // value agrees with the standalone helper
    let t = Tape::new();
    let iv = t.leaf(img.clone());
    let out = t.value(t.bilinear_sample(iv, &grid));
    let img2 = img.into_dimensionality::<ndarray::Ix2>().unwrap();
    for r in 0..3 {
        for c in 0..3 {
            let expect = bilinear_at(&img2, grid[(r, c, 0)], grid[(r, c, 1)]);
            assert!((out[IxDyn(&[r, c])] - expect).abs() < 1e-14);
        }
    }
}

#[test]
fn rasterize_covers_matching_brute_force_point_in_triangle() {
    let t = Tape::new();
    let pos = t.leaf(
        Array2::from_shape_vec((3, 2), vec![1.23, 1.07, 8.71, 2.33, 3.41, 7.63])
            .unwrap()
            .into_dyn(),
    );
    let attr = t.leaf(Array2::from_elem((3, 3), 1.0).into_dyn());
    let (_, mask, _) = t.rasterize(pos, attr, &[0.0; 3], &[[0, 1, 2]], 10, 10);

    // brute force: signed-area test at every pixel center
    let v = [(1.23, 1.07), (8.71, 2.33), (3.41, 7.63)];
    for row in 0..10 {
        for col in 0..10 {
            let p = (col as f64 + 0.5, row as f64 + 0.5);
            let e = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            let (e0, e1, e2) = (e(v[0], v[1]), e(v[1], v[2]), e(v[2], v[0]));
            let inside = (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);
            assert_eq!(
                mask[(row, col)] > 0.5,
                inside,
                "coverage mismatch at ({row},{col})"
            );
        }
    }
}

#[test]
fn rasterize_gradients_match_finite_differences_interior() {
    // big triangle, every covered pixel is deep interior relative to the
    // finite-difference step, so coverage cannot flip
    let pos0 = Array2::from_shape_vec((3, 2), vec![0.6, 0.7, 11.3, 1.9, 4.1, 11.2])
        .unwrap()
        .into_dyn();
    let attr0 = Array2::from_shape_vec((3, 3), vec![0.9, 0.1, 0.3, 0.2, 0.8, 0.4, 0.5, 0.6, 0.7])
        .unwrap()
        .into_dyn();
    check_gradients(
        &[pos0, attr0],
        |t, v| {
            let (img, _, _) = t.rasterize(v[0], v[1], &[0.0; 3], &[[0, 1, 2]], 12, 12);
            t.mean(img)
        },
        1e-6,
        1e-6,
        1e-9,
    );
}

#[test]
fn rasterize_depth_picks_nearest_and_empty_mesh_gives_empty_mask() {
    let t = Tape::new();
    // two stacked triangles over the same pixels, different constant attrs
    let pos = t.leaf(
        Array2::from_shape_vec(
            (6, 2),
            vec![0.5, 0.5, 7.5, 0.5, 0.5, 7.5, 0.5, 0.5, 7.5, 0.5, 0.5, 7.5],
        )
        .unwrap()
        .into_dyn(),
    );
    let mut attr = Array2::zeros((6, 3));
    for i in 0..3 {
        attr[(i, 0)] = 1.0; // far triangle: red
        attr[(i + 3, 1)] = 1.0; // near triangle: green
    }
    let attr = t.leaf(attr.into_dyn());
    let depth = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let (img, mask, _) = t.rasterize(pos, attr, &depth, &[[0, 1, 2], [3, 4, 5]], 8, 8);
    let vi = t.value(img);
    assert!(mask[(1, 1)] > 0.5);
    assert_eq!(vi[IxDyn(&[1, 1, 0])], 0.0, "near triangle must win");
    assert_eq!(vi[IxDyn(&[1, 1, 1])], 1.0);

    // degenerate: zero-area triangle -> empty mask, no error
    let t2 = Tape::new();
    let pos = t2.leaf(Array2::from_elem((3, 2), 2.0).into_dyn());
    let attr = t2.leaf(Array2::from_elem((3, 3), 1.0).into_dyn());
    let (_, mask, hits) = t2.rasterize(pos, attr, &[0.0; 3], &[[0, 1, 2]], 4, 4);
    assert_eq!(mask.sum(), 0.0);
    assert!(hits.is_empty());
}

#[test]
fn backward_accumulates_through_shared_subexpressions() {
    let t = Tape::new();
    let x = t.leaf(ArrayD::from_elem(IxDyn(&[]), 3.0));
    let y = t.mul(x, x); // x^2
    let z = t.add(y, x); // x^2 + x
    let g = t.backward(z);
    let gx = g.get(x).unwrap()[IxDyn(&[])];
    assert!((gx - 7.0).abs() < 1e-12, "d/dx (x^2+x) at 3 = 7, got {gx}");
}
