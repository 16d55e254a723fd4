//! Central finite-difference verification of tape gradients.

use super::{Tape, Var};
use ndarray::ArrayD;

/// Compare analytic gradients with central finite differences.
///
/// `build` must construct the computation from leaves (one per input, in
/// order) and return the scalar root. Panics on the first element whose
/// absolute difference exceeds `abs_tol` while its relative error
/// exceeds `rel_tol`; the absolute gate absorbs finite-difference noise
/// on near-zero gradients.
pub fn check_gradients<F>(inputs: &[ArrayD<f64>], build: F, step: f64, rel_tol: f64, abs_tol: f64)
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let eval = |arrays: &[ArrayD<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = arrays.iter().map(|a| tape.leaf(a.clone())).collect();
        let root = build(&tape, &vars);
        tape.scalar_value(root)
    };

    // analytic pass
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let root = build(&tape, &vars);
    let grads = tape.backward(root);

    let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[ii], input.shape());
        let n = input.len();
        for e in 0..n {
            let orig = work[ii].as_slice_mut().unwrap()[e];
            work[ii].as_slice_mut().unwrap()[e] = orig + step;
            let fp = eval(&work);
            work[ii].as_slice_mut().unwrap()[e] = orig - step;
            let fm = eval(&work);
            work[ii].as_slice_mut().unwrap()[e] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.as_slice().unwrap()[e];
            let diff = (a - numeric).abs();
            if diff <= abs_tol {
                continue;
            }
            let rel = diff / a.abs().max(numeric.abs());
            assert!(
                rel <= rel_tol,
                "gradient mismatch: input {ii} elem {e}: analytic {a:.9e}, numeric {numeric:.9e}, rel {rel:.3e}"
            );
        }
    }
}
