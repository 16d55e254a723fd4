//! Deterministic desk-scale stand-in model.
//!
//! A lat-long ellipsoid head (V = 530) with a nose bump, smooth random
//! identity/expression/albedo bases, a y-ramp of jaw skinning weights
//! and the standard 68-point landmark template placed on the front of
//! the head. Everything is generated from a single seed so numerical
//! tests are reproducible without licensed model assets.

use super::{AlbedoModel, MorphableModel, N_ALBEDO, N_EXPRESSION, N_IDENTITY, N_LANDMARKS};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::f64::consts::PI;
use std::sync::Arc;

pub const DEFAULT_MODEL_SEED: u64 = 7;

const RINGS: usize = 22; // latitude rows between the poles
const SEGS: usize = 24; // longitude columns
const RADII: [f64; 3] = [0.78, 1.0, 0.86]; // x, y, z semi-axes

/// Index of the vertex at ring i (1-based) and segment j.
fn vid(i: usize, j: usize) -> usize {
    2 + (i - 1) * SEGS + (j % SEGS)
}

/// Unit direction for colatitude theta (from the +y pole) and azimuth
/// phi (0 looks along +z, the front of the face).
fn direction(theta: f64, phi: f64) -> [f64; 3] {
    [
        theta.sin() * phi.sin(),
        theta.cos(),
        theta.sin() * phi.cos(),
    ]
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Build the deterministic synthetic model for a seed.
pub fn synthetic_model(seed: u64) -> MorphableModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v_count = 2 + RINGS * SEGS;

    // vertices
    let mut template = Array2::<f64>::zeros((v_count, 3));
    template[(0, 1)] = RADII[1]; // top pole
    template[(1, 1)] = -RADII[1]; // bottom pole
    for i in 1..=RINGS {
        let theta = PI * i as f64 / (RINGS + 1) as f64;
        for j in 0..SEGS {
            let phi = 2.0 * PI * j as f64 / SEGS as f64;
            let d = direction(theta, phi);
            let id = vid(i, j);
            for c in 0..3 {
                template[(id, c)] = RADII[c] * d[c];
            }
        }
    }
    // nose bump: push vertices near the face center radially outward
    let nose_dir = direction(0.52 * PI, 0.0);
    for vi in 0..v_count {
        let p = [template[(vi, 0)], template[(vi, 1)], template[(vi, 2)]];
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let d = [p[0] / norm, p[1] / norm, p[2] / norm];
        let cosang = d[0] * nose_dir[0] + d[1] * nose_dir[1] + d[2] * nose_dir[2];
        let ang = cosang.clamp(-1.0, 1.0).acos();
        let bump = 0.18 * (-(ang * ang) / (2.0 * 0.12f64.powi(2))).exp();
        for c in 0..3 {
            template[(vi, c)] *= 1.0 + bump;
        }
    }

    // faces, outward winding
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for j in 0..SEGS {
        faces.push([0, vid(1, j), vid(1, j + 1)]);
    }
    for i in 1..RINGS {
        for j in 0..SEGS {
            let (a, b) = (vid(i, j), vid(i, j + 1));
            let (c, d) = (vid(i + 1, j), vid(i + 1, j + 1));
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for j in 0..SEGS {
        faces.push([1, vid(RINGS, j + 1), vid(RINGS, j)]);
    }

    // landmarks
    let landmark_indices = place_landmarks(&template);

    // jaw weights: zero above the upper lip, ramp to one at the chin,
    // attenuated toward the back of the head
    let mut jaw_weights = vec![0.0f64; v_count];
    let (y_zero, y_full) = (-0.40, -0.78);
    for vi in 0..v_count {
        let y = template[(vi, 1)] / RADII[1];
        let z = template[(vi, 2)] / RADII[2];
        let ramp = smoothstep((y_zero - y) / (y_zero - y_full));
        let front = smoothstep((z + 0.55) / 0.8);
        jaw_weights[vi] = (ramp * front).clamp(0.0, 1.0);
    }
    // enforce the upper-skull invariant exactly
    for slot in MorphableModel::upper_skull_landmark_slots() {
        jaw_weights[landmark_indices[slot]] = 0.0;
    }

    let identity_basis = smooth_basis(&mut rng, &template, N_IDENTITY, 0.04);
    let mut expression_basis = smooth_basis(&mut rng, &template, N_EXPRESSION, 0.05);
    overwrite_mouth_shift_component(&template, &mut expression_basis);

    // albedo: skin-tone mean with low-frequency variation
    let base = [0.72, 0.55, 0.45];
    let variation = smooth_basis(&mut rng, &template, 3, 0.10);
    let mut albedo_mean = Array2::<f64>::zeros((v_count, 3));
    for vi in 0..v_count {
        for c in 0..3 {
            albedo_mean[(vi, c)] = (base[c] + variation[(vi * 3 + c, c)]).clamp(0.15, 0.9);
        }
    }
    let albedo_basis = smooth_basis(&mut rng, &template, N_ALBEDO, 0.03);

    let model = MorphableModel {
        template,
        faces: Arc::new(faces),
        identity_basis,
        expression_basis,
        jaw_weights,
        jaw_pivot: [0.0, -0.2, 0.12],
        landmark_indices,
        albedo: AlbedoModel {
            mean: albedo_mean,
            basis: albedo_basis,
        },
    };
    model.validate().expect("synthetic model must satisfy its invariants");
    model
}

/// Smooth random displacement fields: each column is a sum of three
/// low-frequency sinusoids with amplitude decaying by column, so nearby
/// vertices move coherently the way PCA blendshapes do.
fn smooth_basis(
    rng: &mut ChaCha8Rng,
    template: &Array2<f64>,
    columns: usize,
    scale: f64,
) -> Array2<f64> {
    let v_count = template.shape()[0];
    let mut basis = Array2::<f64>::zeros((3 * v_count, columns));
    for col in 0..columns {
        let sigma = scale / (1.0 + col as f64).powf(0.7);
        for _ in 0..3 {
            let dir: [f64; 3] = {
                let mut d = [0.0; 3];
                loop {
                    for x in d.iter_mut() {
                        *x = rng.random_range(-1.0..1.0);
                    }
                    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    if len > 0.2 {
                        for x in d.iter_mut() {
                            *x /= len;
                        }
                        break;
                    }
                }
                d
            };
            let wave = [
                rng.random_range(-2.5..2.5),
                rng.random_range(-2.5..2.5),
                rng.random_range(-2.5..2.5),
            ];
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = sigma * rng.random_range(0.4..1.0) / 3.0;
            for vi in 0..v_count {
                let p = [template[(vi, 0)], template[(vi, 1)], template[(vi, 2)]];
                let s = (wave[0] * p[0] + wave[1] * p[1] + wave[2] * p[2] + phase).sin();
                for c in 0..3 {
                    basis[(vi * 3 + c, col)] += amp * dir[c] * s;
                }
            }
        }
    }
    basis
}

/// Expression component 0 translates the whole mouth patch rigidly
/// (identical displacement on every vertex inside the patch, smooth
/// falloff outside). Rigid mouth motion leaves intra-mouth distances
/// unchanged, which the relative mouth loss is designed to permit.
fn overwrite_mouth_shift_component(template: &Array2<f64>, basis: &mut Array2<f64>) {
    let v_count = template.shape()[0];
    let mouth_dir = direction(0.655 * PI, 0.0);
    let shift = [0.0, -0.055, 0.035];
    let (r_flat, r_zero) = (0.62, 1.05); // radians of angular distance
    for vi in 0..v_count {
        let p = [template[(vi, 0)], template[(vi, 1)], template[(vi, 2)]];
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let d = [p[0] / norm, p[1] / norm, p[2] / norm];
        let cosang = d[0] * mouth_dir[0] + d[1] * mouth_dir[1] + d[2] * mouth_dir[2];
        let ang = cosang.clamp(-1.0, 1.0).acos();
        let w = if ang <= r_flat {
            1.0
        } else {
            1.0 - smoothstep((ang - r_flat) / (r_zero - r_flat))
        };
        for c in 0..3 {
            basis[(vi * 3 + c, 0)] = shift[c] * w;
        }
    }
}

/// Nearest-vertex landmark placement with deterministic de-duplication.
fn place_landmarks(template: &Array2<f64>) -> [usize; N_LANDMARKS] {
    let mut targets: Vec<[f64; 2]> = Vec::with_capacity(N_LANDMARKS); // (theta, phi)

    // outline 0-16: temple to chin to temple
    for k in 0..17 {
        let t = k as f64 / 16.0; // 0 = right temple ... 1 = left temple
        let phi = (1.0 - 2.0 * t) * 0.58 * PI;
        let dip = 1.0 - ((t - 0.5) * 2.0).abs();
        let theta = 0.47 * PI + 0.36 * PI * dip.powf(0.8);
        targets.push([theta, phi]);
    }
    // eyebrows 17-26: two arcs of five
    for side in [1.0f64, -1.0] {
        for k in 0..5 {
            let phi = side * (0.10 * PI + 0.06 * PI * k as f64);
            let theta = 0.36 * PI + 0.015 * PI * ((k as f64 - 2.0).abs() / 2.0);
            targets.push([theta, phi]);
        }
    }
    // nose 27-35: bridge column of four, nostril row of five
    for k in 0..4 {
        targets.push([0.43 * PI + 0.04 * PI * k as f64, 0.0]);
    }
    for k in 0..5 {
        targets.push([0.575 * PI, (k as f64 - 2.0) * 0.05 * PI]);
    }
    // eyes 36-47: hexagon of six per eye
    for side in [1.0f64, -1.0] {
        for k in 0..6 {
            let ang = 2.0 * PI * k as f64 / 6.0;
            let phi = side * 0.21 * PI + 0.055 * PI * ang.cos();
            let theta = 0.425 * PI + 0.030 * PI * ang.sin();
            targets.push([theta, phi]);
        }
    }
    // mouth 48-67: outer ellipse of twelve, inner ellipse of eight
    let mouth_theta = 0.655 * PI;
    for k in 0..12 {
        let ang = 2.0 * PI * k as f64 / 12.0;
        targets.push([
            mouth_theta + 0.050 * PI * ang.sin(),
            0.145 * PI * ang.cos(),
        ]);
    }
    for k in 0..8 {
        let ang = 2.0 * PI * k as f64 / 8.0;
        targets.push([
            mouth_theta + 0.025 * PI * ang.sin(),
            0.085 * PI * ang.cos(),
        ]);
    }

    let v_count = template.shape()[0];
    let mut used = HashSet::new();
    let mut out = [0usize; N_LANDMARKS];
    for (slot, t) in targets.iter().enumerate() {
        let dir = direction(t[0], t[1]);
        // rank vertices by angular distance; take the nearest unused
        let mut best: Option<(f64, usize)> = None;
        for vi in 0..v_count {
            if used.contains(&vi) {
                continue;
            }
            let p = [template[(vi, 0)], template[(vi, 1)], template[(vi, 2)]];
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let cosang =
                (p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2]) / norm;
            let d = 1.0 - cosang;
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, vi));
            }
        }
        let (_, vi) = best.expect("enough vertices for landmarks");
        used.insert(vi);
        out[slot] = vi;
    }
    out
}
