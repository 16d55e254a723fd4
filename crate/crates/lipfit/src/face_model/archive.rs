//! Single-file model archive.
//!
//! Layout (all integers u32 LE, all floats f64 LE), version 1:
//!
//! ```text
//! magic   "LIPFMDL1"
//! u32     version
//! u32     V, F, n_identity, n_expression, n_albedo, n_landmarks (= 68)
//! f64     template        V*3
//! u32     faces           F*3
//! f64     identity_basis  3V * n_identity
//! f64     expression_basis 3V * n_expression
//! f64     jaw_weights     V
//! f64     jaw_pivot       3
//! u32     landmark_indices n_landmarks
//! f64     albedo_mean     V*3
//! f64     albedo_basis    3V * n_albedo
//! ```
//!
//! The dimension header is explicit so third-party exports of other
//! linear face models with an articulated jaw (FLAME-style layouts) can
//! be converted by writing the same sections. `n_albedo = 0` is allowed
//! and loads as a mid-gray per-vertex albedo.

use super::{AlbedoModel, MorphableModel, N_LANDMARKS};
use crate::binio::{read_file, Reader, Writer};
use crate::{Error, Result};
use ndarray::Array2;
use std::path::Path;
use std::sync::Arc;

const MAGIC: &[u8; 8] = b"LIPFMDL1";
const VERSION: u32 = 1;
const MAX_VERTICES: u64 = 1 << 20;
const MAX_FACES: u64 = 1 << 22;
const MAX_BASIS: u64 = 4096;

pub fn save_model(model: &MorphableModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer::new(MAGIC);
    let v = model.vertex_count();
    let f = model.faces.len();
    let n_alb = model.albedo.basis.shape()[1];
    w.u32(VERSION);
    w.u32(v as u32);
    w.u32(f as u32);
    w.u32(model.identity_basis.shape()[1] as u32);
    w.u32(model.expression_basis.shape()[1] as u32);
    w.u32(n_alb as u32);
    w.u32(N_LANDMARKS as u32);
    w.f64_slice(model.template.as_slice().expect("standard layout"));
    for face in model.faces.iter() {
        w.u32_slice(&[face[0] as u32, face[1] as u32, face[2] as u32]);
    }
    w.f64_slice(model.identity_basis.as_slice().expect("standard layout"));
    w.f64_slice(model.expression_basis.as_slice().expect("standard layout"));
    w.f64_slice(&model.jaw_weights);
    w.f64_slice(&model.jaw_pivot);
    let lm: Vec<u32> = model.landmark_indices.iter().map(|&i| i as u32).collect();
    w.u32_slice(&lm);
    w.f64_slice(model.albedo.mean.as_slice().expect("standard layout"));
    w.f64_slice(model.albedo.basis.as_slice().expect("standard layout"));
    w.write_to(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MorphableModel> {
    let bytes = read_file(path.as_ref())?;
    let model = decode_model(&bytes, path.as_ref())?;
    model.validate()?;
    Ok(model)
}

/// Decode a model archive from bytes. Does not run full semantic
/// validation; [`load_model`] does.
pub fn decode_model(bytes: &[u8], path: impl AsRef<Path>) -> Result<MorphableModel> {
    let mut r = Reader::new(bytes, path.as_ref());
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::parse(
            path.as_ref(),
            None,
            format!("unsupported model version {version}"),
        ));
    }
    let v = r.dim("vertex count", MAX_VERTICES)?;
    let f = r.dim("face count", MAX_FACES)?;
    let n_id = r.dim("identity basis size", MAX_BASIS)?;
    let n_exp = r.dim("expression basis size", MAX_BASIS)?;
    let n_alb = r.dim("albedo basis size", MAX_BASIS)?;
    let n_lm = r.dim("landmark count", 1024)?;
    if n_lm != N_LANDMARKS {
        return Err(Error::parse(
            path.as_ref(),
            None,
            format!("expected {N_LANDMARKS} landmarks, file declares {n_lm}"),
        ));
    }
    if v == 0 {
        return Err(Error::parse(path.as_ref(), None, "empty vertex list"));
    }

    let template = Array2::from_shape_vec((v, 3), r.f64_vec(v * 3)?).unwrap();
    let mut faces = Vec::with_capacity(f);
    let raw_faces = r.u32_vec(f * 3)?;
    for c in raw_faces.chunks_exact(3) {
        faces.push([c[0] as usize, c[1] as usize, c[2] as usize]);
    }
    let identity_basis = Array2::from_shape_vec((3 * v, n_id), r.f64_vec(3 * v * n_id)?).unwrap();
    let expression_basis =
        Array2::from_shape_vec((3 * v, n_exp), r.f64_vec(3 * v * n_exp)?).unwrap();
    let jaw_weights = r.f64_vec(v)?;
    let pivot = r.f64_vec(3)?;
    let lm_raw = r.u32_vec(n_lm)?;
    let mut landmark_indices = [0usize; N_LANDMARKS];
    for (slot, &idx) in lm_raw.iter().enumerate() {
        landmark_indices[slot] = idx as usize;
    }
    let albedo_mean = Array2::from_shape_vec((v, 3), r.f64_vec(v * 3)?).unwrap();
    let albedo_basis = Array2::from_shape_vec((3 * v, n_alb), r.f64_vec(3 * v * n_alb)?).unwrap();
    r.finish()?;

    let albedo = if n_alb == 0 {
        let mut a = AlbedoModel::uniform(v, [0.5, 0.5, 0.5]);
        a.mean = albedo_mean;
        a
    } else {
        AlbedoModel {
            mean: albedo_mean,
            basis: albedo_basis,
        }
    };
    Ok(MorphableModel {
        template,
        faces: Arc::new(faces),
        identity_basis,
        expression_basis,
        jaw_weights,
        jaw_pivot: [pivot[0], pivot[1], pivot[2]],
        landmark_indices,
        albedo,
    })
}
