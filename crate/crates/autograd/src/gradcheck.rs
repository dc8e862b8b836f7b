//! Central finite-difference verification of tape gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::TensorError;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Result of comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    /// `(analytic, numeric)` at `worst`.
    pub worst_values: Option<(f64, f64)>,
    pub coordinates: usize,
}

/// Gradients smaller than this are compared absolutely: central differences
/// at `eps = 1e-5` carry ~1e-11 of round-off, which would otherwise dominate
/// the ratio for near-zero entries.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a - n| / max(GRAD_FLOOR, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRAD_FLOOR)
}

/// Checks `graph` (which must produce a `1 x 1` output) against central
/// differences with step `eps` in every coordinate of every input, returning
/// the largest relative error.
pub fn grad_check<F>(graph: F, inputs: &[Tensor], eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    grad_check_report(graph, inputs, eps).map(|r| r.max_rel_error)
}

pub fn grad_check_report<F>(
    graph: F,
    inputs: &[Tensor],
    eps: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = graph(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = graph(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        coordinates: 0,
    };
    let mut perturbed = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for k in 0..inputs[i].len() {
            let orig = inputs[i].data()[k];
            perturbed[i].data_mut()[k] = orig + eps;
            let plus = eval(&perturbed)?;
            perturbed[i].data_mut()[k] = orig - eps;
            let minus = eval(&perturbed)?;
            perturbed[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic.data()[k], numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, k));
                report.worst_values = Some((analytic.data()[k], numeric));
            }
        }
    }
    Ok(report)
}

fn scalar_of(tape: &Tape, out: Var) -> Result<f64, TensorError> {
    let (r, c) = tape.dims(out);
    if (r, c) != (1, 1) {
        return Err(TensorError::NonScalarOutput(tape.value(out).shape().to_vec()));
    }
    Ok(tape.value(out).data()[0])
}

/// Step used by [`op_suite`].
pub const SUITE_EPS: f64 = 1e-5;

/// Reduces a matrix to a scalar through fixed random weights, so every
/// output coordinate gets a distinct upstream gradient.
fn project(tape: &mut Tape, y: Var, rng: &mut ChaCha8Rng) -> Result<Var, TensorError> {
    let (r, c) = tape.dims(y);
    let left = tape.constant(Tensor::uniform(&[1, r], 1.0, rng))?;
    let right = tape.constant(Tensor::uniform(&[c, 1], 1.0, rng))?;
    let t = tape.matmul(left, y)?;
    tape.matmul(t, right)
}

type OpGraph = Box<dyn Fn(&mut Tape, &[Var], &mut ChaCha8Rng) -> Result<Var, TensorError>>;

/// Grad-checks every differentiable tape op on random inputs drawn from
/// `seed`, one report per op.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |shape: &[usize]| Tensor::uniform(shape, 1.0, &mut rng);
    let h = 3;
    let probs = Tensor::row((0..4).map(|i| 0.2 + 0.15 * i as f64).collect());
    let cases: Vec<(&'static str, Vec<Tensor>, OpGraph)> = vec![
        ("linear", vec![t(&[3, 4]), t(&[5, 4]), t(&[5])], Box::new(|tp, v, r| {
            let y = tp.linear(v[0], v[1], Some(v[2]))?;
            project(tp, y, r)
        })),
        ("matmul", vec![t(&[3, 4]), t(&[4, 2])], Box::new(|tp, v, r| {
            let y = tp.matmul(v[0], v[1])?;
            project(tp, y, r)
        })),
        ("add", vec![t(&[2, 3]), t(&[2, 3])], Box::new(|tp, v, r| {
            let y = tp.add(v[0], v[1])?;
            project(tp, y, r)
        })),
        ("scale", vec![t(&[2, 3])], Box::new(|tp, v, r| {
            let y = tp.scale(v[0], -1.7)?;
            project(tp, y, r)
        })),
        ("concat", vec![t(&[2, 3]), t(&[2, 1]), t(&[2, 2])], Box::new(|tp, v, r| {
            let y = tp.concat(v)?;
            project(tp, y, r)
        })),
        ("transpose", vec![t(&[2, 3])], Box::new(|tp, v, r| {
            let y = tp.transpose(v[0])?;
            project(tp, y, r)
        })),
        ("embedding", vec![t(&[5, 3])], Box::new(|tp, v, r| {
            let y = tp.embedding(v[0], &[4, 0, 4, 2])?;
            project(tp, y, r)
        })),
        ("narrow", vec![t(&[2, 5])], Box::new(|tp, v, r| {
            let y = tp.narrow(v[0], 1, 3)?;
            project(tp, y, r)
        })),
        ("sigmoid", vec![t(&[2, 3])], Box::new(|tp, v, r| {
            let y = tp.sigmoid(v[0])?;
            project(tp, y, r)
        })),
        ("tanh", vec![t(&[2, 3])], Box::new(|tp, v, r| {
            let y = tp.tanh(v[0])?;
            project(tp, y, r)
        })),
        ("softmax", vec![t(&[2, 4])], Box::new(|tp, v, r| {
            let y = tp.softmax(v[0])?;
            project(tp, y, r)
        })),
        ("masked_softmax", vec![t(&[2, 5])], Box::new(|tp, v, r| {
            let y = tp.masked_softmax(v[0], &[true, false, true, true, false])?;
            project(tp, y, r)
        })),
        ("lstm_cell", vec![t(&[2, 4]), t(&[2, h]), t(&[2, h]), t(&[4 * h, 4]), t(&[4 * h, h]), t(&[4 * h])], Box::new(|tp, v, r| {
            let (hn, cn) = tp.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?;
            let both = tp.concat(&[hn, cn])?;
            project(tp, both, r)
        })),
        ("bce_loss", vec![probs], Box::new(|tp, v, _| tp.bce_loss(v[0], &[1.0, 0.0, 0.0, 1.0]))),
    ];
    let mut out = Vec::with_capacity(cases.len());
    for (k, (name, inputs, graph)) in cases.into_iter().enumerate() {
        let proj_seed = seed ^ (0x9e37_79b9 * (k as u64 + 1));
        let report = grad_check_report(
            |tp, v| graph(tp, v, &mut ChaCha8Rng::seed_from_u64(proj_seed)),
            &inputs,
            SUITE_EPS,
        )?;
        out.push((name, report));
    }
    Ok(out)
}
