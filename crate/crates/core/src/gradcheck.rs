//! Finite-difference gradient verification.
//!
//! Used by the test suites to check every differentiable op and the full
//! model against central differences. Comparison is the usual vector-norm
//! relative error over the checked coordinates, which is robust to
//! individually tiny gradient entries.

use crate::rng::DetRng;
use crate::tensor::{GradTape, Tensor};

pub struct GradCheckReport {
    /// Worst relative error across checked tensors.
    pub max_rel_err: f64,
    /// (coordinate count checked, relative error) per tensor, in input order.
    pub per_tensor: Vec<(usize, f64)>,
}

/// Check analytic gradients of `forward` against central finite differences
/// with step `h`, sampling up to `coords_per_tensor` coordinates of each
/// parameter. `forward` must rebuild the loss from scratch on the given tape
/// each call, returning the loss tensor plus its value at f64 precision
/// (so finite differences are not quantized by the final f32 cast).
///
/// Coordinates whose analytic/FD difference is below `atol` count as
/// agreeing: with an f32 forward pass, finite differences on a structurally
/// zero gradient measure only rounding noise, and no relative criterion is
/// meaningful there.
pub fn check_gradients<F>(
    params: &[Tensor],
    mut forward: F,
    h: f64,
    coords_per_tensor: usize,
    atol: f64,
    rng: &mut DetRng,
) -> GradCheckReport
where
    F: FnMut(&GradTape) -> (Tensor, f64),
{
    for p in params {
        p.zero_grad();
    }
    let tape = GradTape::new();
    let (loss, _) = forward(&tape);
    tape.backward(&loss).expect("gradcheck backward");
    let analytic: Vec<Vec<f32>> =
        params.iter().map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()])).collect();

    let mut per_tensor = Vec::with_capacity(params.len());
    let mut max_rel = 0.0f64;
    for (p, ga) in params.iter().zip(&analytic) {
        let n = p.numel();
        let k = coords_per_tensor.min(n);
        // Sample distinct coordinates.
        let mut coords: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut coords);
        coords.truncate(k);

        let mut diff2 = 0.0f64;
        let mut na2 = 0.0f64;
        let mut nf2 = 0.0f64;
        for &c in &coords {
            let orig = p.data()[c];
            p.data_mut()[c] = orig + h as f32;
            let fp = forward(&GradTape::no_grad()).1;
            p.data_mut()[c] = orig - h as f32;
            let fm = forward(&GradTape::no_grad()).1;
            p.data_mut()[c] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let a = ga[c] as f64;
            if (a - fd).abs() >= atol {
                diff2 += (a - fd) * (a - fd);
            }
            na2 += a * a;
            nf2 += fd * fd;
        }
        let rel = diff2.sqrt() / na2.sqrt().max(nf2.sqrt()).max(1e-12);
        max_rel = max_rel.max(rel);
        per_tensor.push((k, rel));
    }
    for p in params {
        p.zero_grad();
    }
    GradCheckReport { max_rel_err: max_rel, per_tensor }
}
