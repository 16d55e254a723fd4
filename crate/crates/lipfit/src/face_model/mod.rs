//! Linear morphable face model with articulated jaw.
//!
//! The parameterization: identity and expression blendshapes added to a
//! template mesh, a single jaw bone rotated about a pivot with per-vertex
//! skinning weights, a neck rotation applied to the whole head about the
//! origin, and a weak-perspective camera (scale + 2-d translation).
//!
//! Coordinate conventions: model space is right-handed with +y up and +z
//! toward the camera. Projection lands in normalized image coordinates
//! where the square [-1, 1] x [-1, 1] spans a frame; `to_pixels` maps to
//! pixel coordinates with the origin at the top-left and y down.

pub mod archive;
pub mod synthetic;

use crate::autodiff::{Tape, Var};
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};
use std::sync::Arc;

pub const N_IDENTITY: usize = 100;
pub const N_EXPRESSION: usize = 50;
pub const N_ALBEDO: usize = 50;
pub const N_LIGHTING: usize = 27;
pub const N_CAMERA: usize = 3;
pub const N_LANDMARKS: usize = 68;

/// Positions of the named subsets inside the standard 68-point template:
/// face outline 0-16, eyebrows 17-26 (not used by any loss), nose 27-35,
/// eyes 36-47, mouth 48-67.
pub const OUTLINE: std::ops::Range<usize> = 0..17;
pub const NOSE: std::ops::Range<usize> = 27..36;
pub const EYES: std::ops::Range<usize> = 36..48;
pub const MOUTH: std::ops::Range<usize> = 48..68;

/// Complete per-frame parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceParams {
    pub identity: Array1<f64>,   // beta, 100
    pub expression: Array1<f64>, // psi, 50
    pub neck_pose: Array1<f64>,  // axis-angle, 3
    pub jaw_pose: Array1<f64>,   // axis-angle, 3
    pub albedo: Array1<f64>,     // alpha, 50
    pub lighting: Array1<f64>,   // 9 SH coefficients x 3 channels, 27
    pub camera: Array1<f64>,     // [scale, tx, ty], 3
}

impl FaceParams {
    /// All-zero parameters with a unit camera scale.
    pub fn neutral() -> Self {
        let mut camera = Array1::zeros(N_CAMERA);
        camera[0] = 1.0;
        FaceParams {
            identity: Array1::zeros(N_IDENTITY),
            expression: Array1::zeros(N_EXPRESSION),
            neck_pose: Array1::zeros(3),
            jaw_pose: Array1::zeros(3),
            albedo: Array1::zeros(N_ALBEDO),
            lighting: Array1::zeros(N_LIGHTING),
            camera,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: &Array1<f64>, n: usize| -> Result<()> {
            if v.len() != n {
                return Err(Error::Parameter(format!(
                    "{name} has length {}, expected {n}",
                    v.len()
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::Parameter(format!("{name} contains non-finite entries")));
            }
            Ok(())
        };
        check("identity", &self.identity, N_IDENTITY)?;
        check("expression", &self.expression, N_EXPRESSION)?;
        check("neck_pose", &self.neck_pose, 3)?;
        check("jaw_pose", &self.jaw_pose, 3)?;
        check("albedo", &self.albedo, N_ALBEDO)?;
        check("lighting", &self.lighting, N_LIGHTING)?;
        check("camera", &self.camera, N_CAMERA)?;
        let jaw_angle = self.jaw_pose.iter().map(|x| x * x).sum::<f64>().sqrt();
        if jaw_angle >= std::f64::consts::PI {
            return Err(Error::Parameter(format!(
                "jaw rotation angle {jaw_angle} must be < pi"
            )));
        }
        Ok(())
    }

    /// Flatten into one vector, fixed field order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::FLAT_LEN);
        for part in [
            &self.identity,
            &self.expression,
            &self.neck_pose,
            &self.jaw_pose,
            &self.albedo,
            &self.lighting,
            &self.camera,
        ] {
            out.extend(part.iter());
        }
        out
    }

    pub const FLAT_LEN: usize = N_IDENTITY + N_EXPRESSION + 3 + 3 + N_ALBEDO + N_LIGHTING + N_CAMERA;

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != Self::FLAT_LEN {
            return Err(Error::Parameter(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                Self::FLAT_LEN
            )));
        }
        let mut off = 0usize;
        let mut take = |n: usize| {
            let s = Array1::from(flat[off..off + n].to_vec());
            off += n;
            s
        };
        Ok(FaceParams {
            identity: take(N_IDENTITY),
            expression: take(N_EXPRESSION),
            neck_pose: take(3),
            jaw_pose: take(3),
            albedo: take(N_ALBEDO),
            lighting: take(N_LIGHTING),
            camera: take(N_CAMERA),
        })
    }
}

/// Per-vertex linear albedo model: color = mean + basis * alpha.
#[derive(Debug, Clone)]
pub struct AlbedoModel {
    pub mean: Array2<f64>,  // [V, 3]
    pub basis: Array2<f64>, // [3V, n_albedo]
}

impl AlbedoModel {
    pub fn uniform(v: usize, rgb: [f64; 3]) -> Self {
        let mut mean = Array2::zeros((v, 3));
        for mut row in mean.rows_mut() {
            row[0] = rgb[0];
            row[1] = rgb[1];
            row[2] = rgb[2];
        }
        AlbedoModel {
            mean,
            basis: Array2::zeros((3 * v, N_ALBEDO)),
        }
    }

    pub fn colors(&self, alpha: &Array1<f64>) -> Array2<f64> {
        let v = self.mean.shape()[0];
        let delta = self.basis.dot(alpha);
        let mut out = self.mean.clone();
        for i in 0..v {
            for c in 0..3 {
                out[(i, c)] += delta[i * 3 + c];
            }
        }
        out
    }
}

/// Immutable morphable model shared across the pipeline.
#[derive(Debug, Clone)]
pub struct MorphableModel {
    pub template: Array2<f64>,         // [V, 3]
    pub faces: Arc<Vec<[usize; 3]>>,
    pub identity_basis: Array2<f64>,   // [3V, N_IDENTITY], row v*3+coord
    pub expression_basis: Array2<f64>, // [3V, N_EXPRESSION]
    pub jaw_weights: Vec<f64>,         // [V], in [0, 1]
    pub jaw_pivot: [f64; 3],
    pub landmark_indices: [usize; N_LANDMARKS],
    pub albedo: AlbedoModel,
}

impl MorphableModel {
    pub fn vertex_count(&self) -> usize {
        self.template.shape()[0]
    }

    /// Upper-skull landmark positions whose vertices must have zero jaw
    /// weight: the top outline points near the temples, eyes and nose.
    pub fn upper_skull_landmark_slots() -> impl Iterator<Item = usize> {
        [0usize, 1, 2, 14, 15, 16].into_iter().chain(NOSE).chain(EYES)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vertex_count();
        if self.identity_basis.shape() != [3 * v, N_IDENTITY] {
            return Err(Error::Data(format!(
                "identity basis shape {:?}, expected [{}, {}]",
                self.identity_basis.shape(),
                3 * v,
                N_IDENTITY
            )));
        }
        if self.expression_basis.shape() != [3 * v, N_EXPRESSION] {
            return Err(Error::Data("expression basis shape mismatch".into()));
        }
        if self.albedo.mean.shape() != [v, 3] || self.albedo.basis.shape() != [3 * v, N_ALBEDO] {
            return Err(Error::Data("albedo model shape mismatch".into()));
        }
        if self.jaw_weights.len() != v {
            return Err(Error::Data("jaw weight count mismatch".into()));
        }
        if !self.jaw_weights.iter().all(|w| (0.0..=1.0).contains(w)) {
            return Err(Error::Data("jaw weights must lie in [0,1]".into()));
        }
        for f in self.faces.iter() {
            if f.iter().any(|&i| i >= v) {
                return Err(Error::Data("face references invalid vertex".into()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for &idx in &self.landmark_indices {
            if idx >= v {
                return Err(Error::Data(format!("landmark vertex {idx} out of range")));
            }
            if !seen.insert(idx) {
                return Err(Error::Data(format!("duplicate landmark vertex {idx}")));
            }
        }
        for slot in Self::upper_skull_landmark_slots() {
            let vi = self.landmark_indices[slot];
            if self.jaw_weights[vi] != 0.0 {
                return Err(Error::Data(format!(
                    "upper-skull landmark slot {slot} (vertex {vi}) has nonzero jaw weight"
                )));
            }
        }
        let finite = |a: &Array2<f64>| a.iter().all(|x| x.is_finite());
        if !finite(&self.template)
            || !finite(&self.identity_basis)
            || !finite(&self.expression_basis)
            || !finite(&self.albedo.mean)
            || !finite(&self.albedo.basis)
            || !self.jaw_pivot.iter().all(|x| x.is_finite())
        {
            return Err(Error::Data("model contains non-finite entries".into()));
        }
        Ok(())
    }

    fn check_params(&self, params: &FaceParams) -> Result<()> {
        params.validate()?;
        if self.identity_basis.shape()[1] != params.identity.len()
            || self.expression_basis.shape()[1] != params.expression.len()
        {
            return Err(Error::Parameter(
                "parameter lengths do not match model basis dimensions".into(),
            ));
        }
        Ok(())
    }
}

/// Decoded mesh; faces are shared with the model it came from.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Array2<f64>, // [V, 3]
    pub normals: Array2<f64>,  // [V, 3], unit rows
    pub faces: Arc<Vec<[usize; 3]>>,
}

/// 68 projected landmark points with the standard subset views.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks2D {
    pub points: Array2<f64>, // [68, 2]
}

impl Landmarks2D {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.shape() != [N_LANDMARKS, 2] {
            return Err(Error::Parameter(format!(
                "landmarks must be [{N_LANDMARKS}, 2], got {:?}",
                points.shape()
            )));
        }
        if !points.iter().all(|x| x.is_finite()) {
            return Err(Error::Parameter("landmarks contain non-finite values".into()));
        }
        Ok(Landmarks2D { points })
    }

    pub fn outline(&self) -> Array2<f64> {
        self.points.slice(ndarray::s![OUTLINE, ..]).to_owned()
    }
    pub fn eyes(&self) -> Array2<f64> {
        self.points.slice(ndarray::s![EYES, ..]).to_owned()
    }
    pub fn nose(&self) -> Array2<f64> {
        self.points.slice(ndarray::s![NOSE, ..]).to_owned()
    }
    pub fn mouth(&self) -> Array2<f64> {
        self.points.slice(ndarray::s![MOUTH, ..]).to_owned()
    }
}

/// Map normalized image coordinates ([-1,1]^2, y up) to pixel
/// coordinates (origin top-left, y down, pixel centers at +0.5).
pub fn to_pixels(points: &Array2<f64>, width: usize, height: usize) -> Array2<f64> {
    let mut out = points.clone();
    for mut row in out.rows_mut() {
        let x = row[0];
        let y = row[1];
        row[0] = (x + 1.0) * 0.5 * width as f64;
        row[1] = (1.0 - y) * 0.5 * height as f64;
    }
    out
}

/// Inverse of [`to_pixels`].
pub fn to_normalized(points: &Array2<f64>, width: usize, height: usize) -> Array2<f64> {
    let mut out = points.clone();
    for mut row in out.rows_mut() {
        let x = row[0];
        let y = row[1];
        row[0] = x / width as f64 * 2.0 - 1.0;
        row[1] = 1.0 - y / height as f64 * 2.0;
    }
    out
}

// ---- differentiable pipeline ----

/// Rotate rows of `points` (already centered) by the axis-angle vector
/// using the scaled Rodrigues form p + A (r x p) + B (r x (r x p)) with
/// A = sin|r|/|r| and B = (1 - cos|r|)/|r|^2, smooth through r = 0.
pub fn rotate_rows_diff(tape: &Tape, points: Var, axis_angle: Var) -> Var {
    let n = tape.shape(points)[0];
    let angle_sq = tape.dot(axis_angle, axis_angle);
    let a = tape.sinc_a(angle_sq);
    let b = tape.sinc_b(angle_sq);
    let r_rows = tape.broadcast_rows(axis_angle, n);
    let rxp = tape.cross_rows(r_rows, points);
    let rxrxp = tape.cross_rows(r_rows, rxp);
    let term1 = tape.scale_by(rxp, a);
    let term2 = tape.scale_by(rxrxp, b);
    tape.add(points, tape.add(term1, term2))
}

pub struct DecodedVars {
    pub vertices: Var, // [V, 3]
    pub normals: Var,  // [V, 3]
}

/// Differentiable decode: blendshapes, jaw skinning, neck rotation,
/// vertex normals.
pub fn decode_diff(
    tape: &Tape,
    model: &MorphableModel,
    beta: Var,
    psi: Var,
    neck: Var,
    jaw: Var,
) -> DecodedVars {
    let v = model.vertex_count();
    let template = tape.constant(model.template.clone().into_dyn());
    let id_basis = tape.constant(model.identity_basis.clone().into_dyn());
    let ex_basis = tape.constant(model.expression_basis.clone().into_dyn());

    let id_off = tape.reshape(tape.matvec(id_basis, beta), &[v, 3]);
    let ex_off = tape.reshape(tape.matvec(ex_basis, psi), &[v, 3]);
    let shaped = tape.add(template, tape.add(id_off, ex_off));

    // jaw: rotate about the pivot, blend per vertex
    let pivot = tape.constant(
        Array2::from_shape_fn((v, 3), |(_, c)| model.jaw_pivot[c]).into_dyn(),
    );
    let centered = tape.sub(shaped, pivot);
    let rotated = tape.add(rotate_rows_diff(tape, centered, jaw), pivot);
    let delta = tape.sub(rotated, shaped);
    let posed = tape.add(shaped, tape.scale_rows(delta, &model.jaw_weights));

    // neck: whole-head rotation about the origin
    let vertices = rotate_rows_diff(tape, posed, neck);
    let normals = vertex_normals_diff(tape, vertices, &model.faces);
    DecodedVars { vertices, normals }
}

/// Area-weighted vertex normals, unit length, differentiable.
pub fn vertex_normals_diff(tape: &Tape, vertices: Var, faces: &[[usize; 3]]) -> Var {
    let v = tape.shape(vertices)[0];
    let i0: Vec<usize> = faces.iter().map(|f| f[0]).collect();
    let i1: Vec<usize> = faces.iter().map(|f| f[1]).collect();
    let i2: Vec<usize> = faces.iter().map(|f| f[2]).collect();
    let p0 = tape.gather_rows(vertices, &i0);
    let p1 = tape.gather_rows(vertices, &i1);
    let p2 = tape.gather_rows(vertices, &i2);
    let e1 = tape.sub(p1, p0);
    let e2 = tape.sub(p2, p0);
    let fnorm = tape.cross_rows(e1, e2); // area-weighted face normal
    let acc = tape.add(
        tape.scatter_add_rows(fnorm, &i0, v),
        tape.add(
            tape.scatter_add_rows(fnorm, &i1, v),
            tape.scatter_add_rows(fnorm, &i2, v),
        ),
    );
    tape.normalize_rows(acc, 1e-12)
}

/// Differentiable weak-perspective projection of [N, 3] points.
pub fn project_diff(tape: &Tape, points: Var, camera: Var) -> Var {
    let n = tape.shape(points)[0];
    let s = tape.element(camera, 0);
    let tx = tape.element(camera, 1);
    let ty = tape.element(camera, 2);
    let x = tape.add(
        tape.scale_by(tape.col(points, 0), s),
        tape.broadcast_scalar(tx, n),
    );
    let y = tape.add(
        tape.scale_by(tape.col(points, 1), s),
        tape.broadcast_scalar(ty, n),
    );
    tape.stack_cols(&[x, y])
}

/// Differentiable landmark projection: gather landmark vertices from the
/// decoded mesh and apply the camera.
pub fn landmarks2d_diff(tape: &Tape, model: &MorphableModel, vertices: Var, camera: Var) -> Var {
    let lm = tape.gather_rows(vertices, &model.landmark_indices);
    project_diff(tape, lm, camera)
}

// ---- plain wrappers ----

/// Decode the mesh for a parameter vector.
pub fn decode(model: &MorphableModel, params: &FaceParams) -> Result<Mesh> {
    model.check_params(params)?;
    let tape = Tape::new();
    let beta = tape.leaf(params.identity.clone().into_dyn());
    let psi = tape.leaf(params.expression.clone().into_dyn());
    let neck = tape.leaf(params.neck_pose.clone().into_dyn());
    let jaw = tape.leaf(params.jaw_pose.clone().into_dyn());
    let decoded = decode_diff(&tape, model, beta, psi, neck, jaw);
    Ok(Mesh {
        vertices: dyn_to_2d(tape.value(decoded.vertices)),
        normals: dyn_to_2d(tape.value(decoded.normals)),
        faces: Arc::clone(&model.faces),
    })
}

/// Weak-perspective projection p = s (X, Y) + (tx, ty); Z is dropped.
pub fn project(points: &Array2<f64>, camera: &Array1<f64>) -> Result<Array2<f64>> {
    if camera.len() != N_CAMERA {
        return Err(Error::Parameter("camera must have length 3".into()));
    }
    if camera[0] <= 0.0 {
        return Err(Error::Parameter(format!(
            "camera scale must be positive, got {}",
            camera[0]
        )));
    }
    let s = camera[0];
    let mut out = Array2::zeros((points.shape()[0], 2));
    for (i, row) in points.rows().into_iter().enumerate() {
        out[(i, 0)] = s * row[0] + camera[1];
        out[(i, 1)] = s * row[1] + camera[2];
    }
    Ok(out)
}

/// Project the model's 68 landmark vertices for a parameter vector.
pub fn landmarks2d(model: &MorphableModel, params: &FaceParams) -> Result<Landmarks2D> {
    if params.camera[0] <= 0.0 {
        return Err(Error::Parameter("camera scale must be positive".into()));
    }
    let mesh = decode(model, params)?;
    let mut lm = Array2::zeros((N_LANDMARKS, 3));
    for (slot, &vi) in model.landmark_indices.iter().enumerate() {
        for c in 0..3 {
            lm[(slot, c)] = mesh.vertices[(vi, c)];
        }
    }
    Landmarks2D::new(project(&lm, &params.camera)?)
}

pub(crate) fn dyn_to_2d(a: ArrayD<f64>) -> Array2<f64> {
    a.into_dimensionality::<ndarray::Ix2>().expect("2-d tensor")
}

/// Mean edge-to-edge extent of the projected mesh; used by callers to
/// pick a camera scale that fills a frame.
pub fn projected_extent(mesh: &Mesh) -> f64 {
    let xs = mesh.vertices.index_axis(Axis(1), 0);
    let ys = mesh.vertices.index_axis(Axis(1), 1);
    let span = |v: ndarray::ArrayView1<f64>| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in v {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        hi - lo
    };
    0.5 * (span(xs) + span(ys))
}

#[cfg(test)]
mod tests;
