use rand::Rng;

use super::config::ModelConfig;
use super::layers::Conv;
use crate::tensor::kernels::ConvGeometry;
use crate::tensor::{ParamStore, Result, Scalar, Tape, Tensor, TensorError, Var};

/// Output of an attention block plus its row-stochastic attention matrix.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub y: Var,
    pub attention: Var,
}

/// Query, key and value projections and the residual scale of a SAM block.
#[derive(Clone, Debug)]
pub struct SamParams {
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    pub gamma: usize,
}

impl SamParams {
    pub(crate) fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        std: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let q = ModelConfig::sam_reduced(channels);
        let g = ConvGeometry::new(1, 0, 1);
        let query = Conv::register(store, &format!("{prefix}.query"), channels, q, 1, g, false, std, rng)?;
        let key = Conv::register(store, &format!("{prefix}.key"), channels, q, 1, g, false, std, rng)?;
        let value = Conv::register(store, &format!("{prefix}.value"), channels, channels, 1, g, false, std, rng)?;
        let gamma = store.add(format!("{prefix}.gamma"), Tensor::zeros(&[1]))?;
        Ok(Self {
            query,
            key,
            value,
            gamma,
        })
    }
}

fn dims(tape: &Tape<impl Scalar>, x: Var, op: &'static str) -> Result<[usize; 4]> {
    let (n, c, h, w) = tape.value(x).dims4(op)?;
    if c == 0 {
        return Err(TensorError::InvalidArgument(format!("{op}: zero channels")));
    }
    Ok([n, c, h, w])
}

/// Spatial self-attention over the `h*w` positions of `x` (`N×C×h×w`).
pub fn sam_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &[Var],
    sam: &SamParams,
    x: Var,
) -> Result<Attended> {
    let [n, c, h, w] = dims(tape, x, "sam")?;
    let hw = h * w;
    let q = sam.query.forward(tape, params, x)?;
    let k = sam.key.forward(tape, params, x)?;
    let v = sam.value.forward(tape, params, x)?;
    let cq = tape.value(q).shape()[1];
    let q = tape.reshape(q, &[n, cq, hw])?;
    let k = tape.reshape(k, &[n, cq, hw])?;
    let v = tape.reshape(v, &[n, c, hw])?;
    let qt = tape.transpose(q)?;
    let energy = tape.matmul(qt, k)?;
    let attention = tape.softmax_rows(energy)?;
    let at = tape.transpose(attention)?;
    let out = tape.matmul(v, at)?;
    let out = tape.reshape(out, &[n, c, h, w])?;
    let y = tape.scale_add(x, out, params[sam.gamma])?;
    Ok(Attended { y, attention })
}

/// Channel self-attention of `x` (`N×C×h×w`) with residual scale `gamma`.
pub fn cam_forward<T: Scalar>(tape: &mut Tape<T>, gamma: Var, x: Var) -> Result<Attended> {
    let [n, c, h, w] = dims(tape, x, "cam")?;
    let flat = tape.reshape(x, &[n, c, h * w])?;
    let ft = tape.transpose(flat)?;
    let energy = tape.matmul(flat, ft)?;
    let attention = tape.softmax_rows(energy)?;
    let out = tape.matmul(attention, flat)?;
    let out = tape.reshape(out, &[n, c, h, w])?;
    let y = tape.scale_add(x, out, gamma)?;
    Ok(Attended { y, attention })
}
