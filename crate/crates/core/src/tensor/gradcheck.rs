//! Central finite-difference checks of tape gradients.

use rand::Rng as _;

use super::{ParameterSet, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Elementwise relative error with a small absolute floor so exact zeros
/// on both sides do not divide by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Compares the tape gradient of `f(inputs)` with central differences of step
/// `h`, for every element of every input. `f` must return a scalar.
pub fn check_gradients<F>(name: &str, inputs: &[Tensor], h: f64, tolerance: f64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out)[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut max_rel_err = 0.0f64;
    let mut checked = 0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for (j, a) in analytic.iter().enumerate() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + h;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = x - h;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * h);
            max_rel_err = max_rel_err.max(relative_error(*a, numeric));
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        name: name.to_string(),
        max_rel_err,
        checked,
        tolerance,
    })
}

/// Like [`check_gradients`], but differentiates with respect to every
/// element of every tensor in `params`; `f` reads them via `Tape::param`.
pub fn check_param_gradients<F>(
    name: &str,
    params: &ParameterSet,
    h: f64,
    tolerance: f64,
    f: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParameterSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    tape.backward(out)?;
    let mut with_grads = params.clone();
    with_grads.zero_grad();
    tape.accumulate_param_grads(&mut with_grads)?;

    let eval = |p: &ParameterSet| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, p)?;
        Ok(tape.value(out)[0])
    };
    let mut probe = params.clone();
    let mut max_rel_err = 0.0f64;
    let mut checked = 0;
    let names: Vec<String> = params.names().map(String::from).collect();
    for pname in &names {
        let t = with_grads.get(pname).expect("same names");
        let zeros = vec![0.0; t.numel()];
        let analytic = t.grad().unwrap_or(&zeros);
        for (j, a) in analytic.iter().enumerate() {
            let x = params.get(pname).expect("same names").data()[j];
            probe.get_mut(pname).expect("same names").data_mut()[j] = x + h;
            let plus = eval(&probe)?;
            probe.get_mut(pname).expect("same names").data_mut()[j] = x - h;
            let minus = eval(&probe)?;
            probe.get_mut(pname).expect("same names").data_mut()[j] = x;
            max_rel_err = max_rel_err.max(relative_error(*a, (plus - minus) / (2.0 * h)));
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        name: name.to_string(),
        max_rel_err,
        checked,
        tolerance,
    })
}

/// Values in `±[0.1, 1]`, keeping relu and abs inputs away from their kinks.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag: f64 = r.random_range(0.1..1.0);
            if r.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite")
}

/// Reduces `out` to a scalar as `sum(out * w)` with a fixed random `w`, so
/// every output element carries a distinct upstream gradient.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let w = random_tensor(tape.shape(out), seed);
    let wv = tape.leaf(&w);
    let p = tape.mul(out, wv)?;
    tape.sum(p)
}

/// Finite-difference checks for every differentiable tape op; `seed` picks
/// the random inputs.
pub fn op_suite(seed: u64) -> Result<Vec<GradcheckReport>> {
    let (h, tol) = (FD_STEP, FD_TOLERANCE);
    let r = |shape: &[usize], stream: u64| random_tensor(shape, rng::mix_seed(seed, stream));
    let weighted_sum = |t: &mut Tape, y: Var, stream: u64| weighted_sum(t, y, rng::mix_seed(seed, stream));
    let mut out = Vec::new();

    out.push(check_gradients("matmul", &[r(&[3, 4], 1), r(&[4, 5], 2)], h, tol, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y, 100)
    })?);
    out.push(check_gradients("add_broadcast", &[r(&[2, 3, 4], 3), r(&[4], 4)], h, tol, |t, v| {
        let y = t.add(v[0], v[1])?;
        weighted_sum(t, y, 101)
    })?);
    out.push(check_gradients("sub_broadcast", &[r(&[4], 5), r(&[3, 4], 6)], h, tol, |t, v| {
        let y = t.sub(v[0], v[1])?;
        weighted_sum(t, y, 102)
    })?);
    out.push(check_gradients("mul_broadcast", &[r(&[3, 4], 7), r(&[4], 8)], h, tol, |t, v| {
        let y = t.mul(v[0], v[1])?;
        weighted_sum(t, y, 103)
    })?);
    out.push(check_gradients("scale", &[r(&[5], 9)], h, tol, |t, v| {
        let y = t.scale(v[0], -2.5)?;
        weighted_sum(t, y, 104)
    })?);
    out.push(check_gradients("relu", &[r(&[4, 4], 10)], h, tol, |t, v| {
        let y = t.relu(v[0])?;
        weighted_sum(t, y, 105)
    })?);
    for axis in 0..3 {
        out.push(check_gradients(&format!("max_over_axis_{axis}"), &[r(&[3, 4, 5], 11)], h, tol, |t, v| {
            let (y, _) = t.max_over_axis(v[0], axis)?;
            weighted_sum(t, y, 106)
        })?);
        out.push(check_gradients(&format!("mean_over_axis_{axis}"), &[r(&[3, 4, 5], 12)], h, tol, |t, v| {
            let y = t.mean_over_axis(v[0], axis)?;
            weighted_sum(t, y, 107)
        })?);
    }
    out.push(check_gradients("concat_axis1", &[r(&[2, 3], 13), r(&[2, 5], 14)], h, tol, |t, v| {
        let y = t.concat(v[0], v[1], 1)?;
        weighted_sum(t, y, 108)
    })?);
    out.push(check_gradients("reshape", &[r(&[2, 6], 15)], h, tol, |t, v| {
        let y = t.reshape(v[0], vec![3, 4])?;
        weighted_sum(t, y, 109)
    })?);
    out.push(check_gradients("conv2d", &[r(&[2, 5, 6], 16), r(&[3, 2, 3, 3], 17)], h, tol, |t, v| {
        let y = t.conv2d(v[0], v[1], 1, 1)?;
        weighted_sum(t, y, 110)
    })?);
    out.push(check_gradients("conv2d_strided_batched", &[r(&[2, 2, 6, 5], 18), r(&[2, 2, 3, 2], 19)], h, tol, |t, v| {
        let y = t.conv2d(v[0], v[1], 2, 0)?;
        weighted_sum(t, y, 111)
    })?);
    out.push(check_gradients("max_pool2d", &[r(&[2, 4, 5], 20)], h, tol, |t, v| {
        let y = t.max_pool2d(v[0])?;
        weighted_sum(t, y, 112)
    })?);
    out.push(check_gradients("l1_loss", &[r(&[6], 21), r(&[6], 22)], h, tol, |t, v| {
        t.l1_loss(v[0], v[1])
    })?);
    out.push(check_gradients(
        "three_layer_mlp",
        &[r(&[4, 3], 23), r(&[3, 6], 24), r(&[6], 25), r(&[6, 5], 26), r(&[5, 1], 27)],
        h,
        tol,
        |t, v| {
            let a = t.matmul(v[0], v[1])?;
            let a = t.add(a, v[2])?;
            let a = t.relu(a)?;
            let b = t.matmul(a, v[3])?;
            let b = t.relu(b)?;
            let c = t.matmul(b, v[4])?;
            weighted_sum(t, c, 113)
        },
    )?);
    Ok(out)
}
