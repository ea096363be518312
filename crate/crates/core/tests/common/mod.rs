#![allow(dead_code)]

use grube::numcore::{finite_diff_grad, relative_error};
use grube::params::{Graph, ParamSet};
use grube::{Result, Rng, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| scale * rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn eval<F>(ps: &ParamSet, f: &F) -> Result<f64>
where
    F: Fn(&Graph<'_>) -> Result<Var>,
{
    let tape = Tape::new();
    let g = ps.bind_frozen(&tape);
    let out = f(&g)?;
    Ok(tape.scalar(out))
}

/// Worst relative error between tape gradients and central differences over
/// every tensor of `ps`.
pub fn grad_check<F>(ps: &ParamSet, f: F) -> Result<f64>
where
    F: Fn(&Graph<'_>) -> Result<Var>,
{
    let tape = Tape::new();
    let g = ps.bind(&tape);
    let loss = f(&g)?;
    tape.backward(loss)?;
    let mut analytic = ps.clone();
    analytic.zero_grad();
    analytic.accumulate_grads(&g)?;
    let mut worst: f64 = 0.0;
    for i in 0..ps.len() {
        let numeric = finite_diff_grad(
            |t| {
                let mut p = ps.clone();
                p.tensors_mut()[i].data_mut().copy_from_slice(t.data());
                eval(&p, &f)
            },
            &ps.tensors()[i],
            FD_STEP,
        )?;
        let a = analytic.tensors()[i].grad().expect("parameter gradient").to_vec();
        worst = worst.max(relative_error(&a, numeric.data()));
    }
    Ok(worst)
}

/// `Σ w ⊙ out` with fixed random weights, so every output entry matters.
pub fn weighted_sum(g: &Graph<'_>, out: Var, w: &Tensor) -> Result<Var> {
    let w = g.tape.constant(w.clone());
    Ok(g.tape.sum(g.tape.mul(out, w)?))
}
