//! The LSTM cell, expressed as tape operations.
//!
//! The four gate blocks are fused into single tensors in the order
//! input, forget, candidate, output. The forget block of the bias starts
//! at one so fresh cells carry state across steps.

use rand_chacha::ChaCha20Rng;

use crate::numerics::{init, ParamSet, Tape, Tensor, Var};

use super::ModelError;

/// Tape handles for one cell's three parameter tensors.
#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    w_x: Var,
    w_h: Var,
    bias: Var,
    hidden: usize,
}

/// Inserts `{prefix}.x` [4h, input], `{prefix}.h` [4h, h] and `{prefix}.bias`
/// [4h] into `params`.
pub fn init_cell_params(
    params: &mut ParamSet,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    rng: &mut ChaCha20Rng,
) -> Result<(), ModelError> {
    params.insert(format!("{prefix}.x"), init::glorot(rng, 4 * hidden_dim, input_dim))?;
    params.insert(format!("{prefix}.h"), init::glorot(rng, 4 * hidden_dim, hidden_dim))?;
    let mut bias = Tensor::zeros(&[4 * hidden_dim]);
    for b in &mut bias.data_mut()[hidden_dim..2 * hidden_dim] {
        *b = 1.0;
    }
    params.insert(format!("{prefix}.bias"), bias)?;
    Ok(())
}

/// Loads one cell's parameters onto the tape.
pub fn load_cell(tape: &mut Tape, params: &ParamSet, prefix: &str) -> Result<CellVars, ModelError> {
    let w_x = tape.param(params, &format!("{prefix}.x"))?;
    let w_h = tape.param(params, &format!("{prefix}.h"))?;
    let bias = tape.param(params, &format!("{prefix}.bias"))?;
    let fused = tape.value(bias).len();
    if fused % 4 != 0 {
        return Err(ModelError::ParamShape {
            name: format!("{prefix}.bias"),
            expected: vec![4 * (fused / 4).max(1)],
            got: vec![fused],
        });
    }
    Ok(CellVars { w_x, w_h, bias, hidden: fused / 4 })
}

/// One recurrence step: gates from `x` and `h_prev`, new cell state from
/// `c_prev`, returning `(h, c)`.
pub fn lstm_cell_step(
    tape: &mut Tape,
    cell: &CellVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var), ModelError> {
    let h = cell.hidden;
    let from_x = tape.matvec(cell.w_x, x)?;
    let from_h = tape.matvec(cell.w_h, h_prev)?;
    let linear = tape.add(from_x, from_h)?;
    let pre = tape.add(linear, cell.bias)?;

    let input_pre = tape.slice(pre, 0, h)?;
    let forget_pre = tape.slice(pre, h, h)?;
    let cand_pre = tape.slice(pre, 2 * h, h)?;
    let output_pre = tape.slice(pre, 3 * h, h)?;

    let input_gate = tape.sigmoid(input_pre);
    let forget_gate = tape.sigmoid(forget_pre);
    let candidate = tape.tanh(cand_pre);
    let output_gate = tape.sigmoid(output_pre);

    let kept = tape.mul(forget_gate, c_prev)?;
    let written = tape.mul(input_gate, candidate)?;
    let c = tape.add(kept, written)?;
    let c_squashed = tape.tanh(c);
    let h_out = tape.mul(output_gate, c_squashed)?;
    Ok((h_out, c))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use rand::SeedableRng;

    use crate::numerics::grad_check;

    use super::*;

    fn zero_cell(params: &mut ParamSet, hidden: usize, input: usize) {
        params.insert("z.x", Tensor::zeros(&[4 * hidden, input])).unwrap();
        params.insert("z.h", Tensor::zeros(&[4 * hidden, hidden])).unwrap();
        params.insert("z.bias", Tensor::zeros(&[4 * hidden])).unwrap();
    }

    #[test]
    fn zero_parameters_produce_zero_state() {
        let mut params = ParamSet::new();
        zero_cell(&mut params, 3, 2);
        let mut tape = Tape::new();
        let cell = load_cell(&mut tape, &params, "z").unwrap();
        let x = tape.constant(Tensor::vector(vec![5.0, -3.0]));
        let h0 = tape.constant(Tensor::zeros(&[3]));
        let c0 = tape.constant(Tensor::zeros(&[3]));
        let (h, c) = lstm_cell_step(&mut tape, &cell, x, h0, c0).unwrap();
        // candidate = tanh(0) = 0, so both c and h stay zero.
        assert_eq!(tape.value(h).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(tape.value(c).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn forget_bias_alone_keeps_cell_at_zero() {
        // c = sigmoid(1) * 0 + sigmoid(0) * tanh(0) = 0 from a zero start.
        let mut params = ParamSet::new();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        init_cell_params(&mut params, "cell", 2, 2, &mut rng).unwrap();
        // Zero the input weights so only the bias acts.
        params.get_mut("cell.x").unwrap().fill(0.0);
        params.get_mut("cell.h").unwrap().fill(0.0);
        let bias = params.get("cell.bias").unwrap().data();
        assert_eq!(&bias[2..4], &[1.0, 1.0], "forget block starts at one");

        let mut tape = Tape::new();
        let cell = load_cell(&mut tape, &params, "cell").unwrap();
        let x = tape.constant(Tensor::vector(vec![0.9, -0.4]));
        let h0 = tape.constant(Tensor::zeros(&[2]));
        let c0 = tape.constant(Tensor::zeros(&[2]));
        let (_, c) = lstm_cell_step(&mut tape, &cell, x, h0, c0).unwrap();
        assert_eq!(tape.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn cell_gradients_match_finite_differences() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        init_cell_params(&mut params, "cell", 3, 2, &mut rng).unwrap();
        let x_in = Tensor::vector(vec![0.3, -0.7, 0.2]);
        let h_in = Tensor::vector(vec![0.1, 0.4]);
        let c_in = Tensor::vector(vec![-0.2, 0.6]);

        let report = grad_check(
            &mut params,
            |p| {
                let mut tape = Tape::new();
                let cell = load_cell(&mut tape, p, "cell").map_err(shape_err)?;
                let x = tape.constant(x_in.clone());
                let h0 = tape.constant(h_in.clone());
                let c0 = tape.constant(c_in.clone());
                let (h, c) = lstm_cell_step(&mut tape, &cell, x, h0, c0).map_err(shape_err)?;
                let both = tape.concat(&[h, c])?;
                let loss = tape.sum(both);
                let grads = tape.backward(loss)?;
                Ok((tape.value(loss).item(), grads))
            },
            1e-5,
            6,
            42,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "max rel err {}", report.max_rel_err);
    }

    fn shape_err(e: ModelError) -> crate::numerics::NumericsError {
        match e {
            ModelError::Numerics(inner) => inner,
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn step_is_deterministic_for_equal_inputs() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        init_cell_params(&mut params, "cell", 2, 2, &mut rng).unwrap();
        let run = || -> BTreeMap<&str, Vec<f64>> {
            let mut tape = Tape::new();
            let cell = load_cell(&mut tape, &params, "cell").unwrap();
            let x = tape.constant(Tensor::vector(vec![0.5, 0.5]));
            let h0 = tape.constant(Tensor::vector(vec![0.1, -0.1]));
            let c0 = tape.constant(Tensor::vector(vec![0.2, 0.0]));
            let (h, c) = lstm_cell_step(&mut tape, &cell, x, h0, c0).unwrap();
            BTreeMap::from([("h", tape.value(h).data().to_vec()), ("c", tape.value(c).data().to_vec())])
        };
        assert_eq!(run(), run());
    }
}
