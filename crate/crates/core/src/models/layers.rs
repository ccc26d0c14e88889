//! Linear maps and the LSTM cell shared by every model.

use rand::Rng;

use crate::autodiff::{AutodiffError, Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Uniform in `±1/sqrt(fan_in)`.
pub fn uniform_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), uniform_init(&[fan_in, fan_out], fan_in, rng));
        let b = store.add(format!("{name}.b"), uniform_init(&[fan_out], fan_in, rng));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var, AutodiffError> {
        let xw = tape.matmul(x, p[self.w])?;
        tape.add_bias(xw, p[self.b])
    }
}

/// Single-layer LSTM cell with gates packed as `[i, f, g, o]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let g = 4 * hidden;
        let wx = store.add(format!("{name}.wx"), uniform_init(&[input, g], input, rng));
        let wh = store.add(format!("{name}.wh"), uniform_init(&[hidden, g], hidden, rng));
        let b = store.add(format!("{name}.b"), uniform_init(&[g], hidden, rng));
        Lstm {
            wx,
            wh,
            b,
            input,
            hidden,
        }
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> LstmState {
        LstmState {
            h: tape.constant(Tensor::zeros(&[batch, self.hidden])),
            c: tape.constant(Tensor::zeros(&[batch, self.hidden])),
        }
    }

    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, s: LstmState) -> Result<LstmState, AutodiffError> {
        let hs = self.hidden;
        let a = tape.matmul(x, p[self.wx])?;
        let r = tape.matmul(s.h, p[self.wh])?;
        let pre = tape.add(a, r)?;
        let pre = tape.add_bias(pre, p[self.b])?;
        let i = tape.slice_cols(pre, 0, hs)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_cols(pre, hs, 2 * hs)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice_cols(pre, 2 * hs, 3 * hs)?;
        let g = tape.tanh(g)?;
        let o = tape.slice_cols(pre, 3 * hs, 4 * hs)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, s.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Runs the cell over padded `[batch, width]` ids, freezing each row's
    /// state once its length is exhausted. Returns the last valid state.
    pub fn encode_padded(
        &self,
        tape: &mut Tape,
        p: &Bound,
        table: ParamId,
        ids: &[usize],
        lengths: &[usize],
        width: usize,
    ) -> Result<LstmState, AutodiffError> {
        let b = lengths.len();
        let mut s = self.zero_state(tape, b);
        for t in 0..width {
            let col: Vec<usize> = (0..b).map(|r| ids[r * width + t]).collect();
            let x = tape.embedding(p[table], &col)?;
            let next = self.step(tape, p, x, s)?;
            s = if lengths.iter().all(|&l| t < l) {
                next
            } else {
                let keep: Vec<f64> = lengths
                    .iter()
                    .flat_map(|&l| std::iter::repeat_n(if t < l { 1.0 } else { 0.0 }, self.hidden))
                    .collect();
                LstmState {
                    h: blend(tape, &keep, b, self.hidden, next.h, s.h)?,
                    c: blend(tape, &keep, b, self.hidden, next.c, s.c)?,
                }
            };
        }
        Ok(s)
    }
}

/// `mask * new + (1 - mask) * old` with a constant 0/1 mask.
fn blend(tape: &mut Tape, mask: &[f64], rows: usize, cols: usize, new: Var, old: Var) -> Result<Var, AutodiffError> {
    let m = tape.constant(Tensor::matrix(rows, cols, mask.to_vec())?);
    let inv = tape.constant(Tensor::matrix(rows, cols, mask.iter().map(|v| 1.0 - v).collect())?);
    let a = tape.mul(m, new)?;
    let b = tape.mul(inv, old)?;
    tape.add(a, b)
}

/// Constant `[rows, cols]` leaf.
pub fn constant(tape: &mut Tape, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var, AutodiffError> {
    Ok(tape.constant(Tensor::matrix(rows, cols, data)?))
}
