//! Layer vocabulary of the fusion network.
//!
//! Each parameter struct is generic over its storage `P`: `Matrix` for owned
//! weights (and gradients), [`Var`] once the weights are bound to a [`Tape`].
//! Forward passes are written once, against `Var`, and the plain-matrix entry
//! points (`dense_forward`, `gru_forward`, ...) run them on a scratch tape.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

macro_rules! param_struct {
    ($(#[$meta:meta])* $name:ident { $($field:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<P = Matrix> {
            $(pub $field: P,)+
        }

        impl<P> $name<P> {
            pub const TENSOR_NAMES: &'static [&'static str] = &[$($label),+];

            pub fn map<Q>(&self, mut f: impl FnMut(&'static str, &P) -> Q) -> $name<Q> {
                $name { $($field: f($label, &self.$field),)+ }
            }

            pub fn try_map<Q, E>(
                &self,
                mut f: impl FnMut(&'static str, &P) -> core::result::Result<Q, E>,
            ) -> core::result::Result<$name<Q>, E> {
                Ok($name { $($field: f($label, &self.$field)?,)+ })
            }

            pub fn for_each<'a>(&'a self, mut f: impl FnMut(&'static str, &'a P)) {
                $(f($label, &self.$field);)+
            }

            pub fn fields_mut(&mut self) -> Vec<&mut P> {
                alloc::vec![$(&mut self.$field),+]
            }
        }
    };
}

param_struct! {
    /// The context GRU. Unlike a textbook GRU, every step projects the
    /// candidate through `F_t = tanh(h_t U_x + u_x)`, feeds `F_t` into the
    /// state update, and emits `F_t` as the output.
    ///
    /// Shapes: `U_*` are `d_in × D`, `W_*` and `U_x` are `D × D`, `u_x` is `1 × D`.
    PaperGru {
        u_z => "U_z",
        u_r => "U_r",
        u_h => "U_h",
        w_z => "W_z",
        w_r => "W_r",
        w_h => "W_h",
        u_x => "U_x",
        b_x => "u_x",
    }
}

param_struct! {
    /// Per-dimension bimodal fusion: `out[t][l] = tanh(w1[l]·a[t][l] + w2[l]·b[t][l] + b[l])`.
    /// All three tensors are `1 × D`.
    PairFusion {
        w1 => "w1",
        w2 => "w2",
        b => "b",
    }
}

param_struct! {
    /// Per-dimension trimodal fusion over three `N × D` inputs. All tensors are `1 × D`.
    TripleFusion {
        w1 => "w1",
        w2 => "w2",
        w3 => "w3",
        b => "b",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    None,
}

/// Fully-connected layer `activation(x W + b)`; `W` is `in × out`, `b` is `1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<P = Matrix> {
    pub w: P,
    pub b: P,
    pub activation: Activation,
}

impl<P> Dense<P> {
    pub const TENSOR_NAMES: &'static [&'static str] = &["W", "b"];

    pub fn map<Q>(&self, mut f: impl FnMut(&'static str, &P) -> Q) -> Dense<Q> {
        Dense {
            w: f("W", &self.w),
            b: f("b", &self.b),
            activation: self.activation,
        }
    }

    pub fn try_map<Q, E>(
        &self,
        mut f: impl FnMut(&'static str, &P) -> core::result::Result<Q, E>,
    ) -> core::result::Result<Dense<Q>, E> {
        Ok(Dense {
            w: f("W", &self.w)?,
            b: f("b", &self.b)?,
            activation: self.activation,
        })
    }

    pub fn for_each<'a>(&'a self, mut f: impl FnMut(&'static str, &'a P)) {
        f("W", &self.w);
        f("b", &self.b);
    }

    pub fn fields_mut(&mut self) -> Vec<&mut P> {
        alloc::vec![&mut self.w, &mut self.b]
    }
}

/// Glorot-uniform sample of shape `rows × cols` with the given fans.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        Dense {
            w: glorot(input, output, input, output, rng),
            b: Matrix::zeros(1, output),
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Dense {
            w: Matrix::zeros(input, output),
            b: Matrix::zeros(1, output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols()
    }
}

impl PaperGru {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut g = |r, c| glorot(r, c, r, c, rng);
        PaperGru {
            u_z: g(input, hidden),
            u_r: g(input, hidden),
            u_h: g(input, hidden),
            w_z: g(hidden, hidden),
            w_r: g(hidden, hidden),
            w_h: g(hidden, hidden),
            u_x: g(hidden, hidden),
            b_x: Matrix::zeros(1, hidden),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let z = Matrix::zeros;
        PaperGru {
            u_z: z(input, hidden),
            u_r: z(input, hidden),
            u_h: z(input, hidden),
            w_z: z(hidden, hidden),
            w_r: z(hidden, hidden),
            w_h: z(hidden, hidden),
            u_x: z(hidden, hidden),
            b_x: z(1, hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.u_z.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows()
    }
}

impl PairFusion {
    pub fn init<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        // each output dimension l sees a 2-vector of inputs
        PairFusion {
            w1: glorot(1, width, 2, 1, rng),
            w2: glorot(1, width, 2, 1, rng),
            b: Matrix::zeros(1, width),
        }
    }

    pub fn zeros(width: usize) -> Self {
        PairFusion {
            w1: Matrix::zeros(1, width),
            w2: Matrix::zeros(1, width),
            b: Matrix::zeros(1, width),
        }
    }
}

impl TripleFusion {
    pub fn init<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        TripleFusion {
            w1: glorot(1, width, 3, 1, rng),
            w2: glorot(1, width, 3, 1, rng),
            w3: glorot(1, width, 3, 1, rng),
            b: Matrix::zeros(1, width),
        }
    }

    pub fn zeros(width: usize) -> Self {
        TripleFusion {
            w1: Matrix::zeros(1, width),
            w2: Matrix::zeros(1, width),
            w3: Matrix::zeros(1, width),
            b: Matrix::zeros(1, width),
        }
    }
}

/// Scalar parameter counts, closed form.
pub mod count {
    pub fn dense(input: usize, output: usize) -> usize {
        input * output + output
    }

    pub fn paper_gru(input: usize, hidden: usize) -> usize {
        3 * input * hidden + 4 * hidden * hidden + hidden
    }

    pub fn pair_fusion(width: usize) -> usize {
        3 * width
    }

    pub fn triple_fusion(width: usize) -> usize {
        4 * width
    }
}

impl Dense<Var> {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w)?;
        let z = tape.add_row(xw, self.b)?;
        Ok(match self.activation {
            Activation::Tanh => tape.tanh(z),
            Activation::None => z,
        })
    }
}

impl PaperGru<Var> {
    /// Runs the recurrence over the rows of `f` (one row per utterance) and
    /// returns the stacked outputs `F_t`. `s0` defaults to the zero state.
    pub fn apply(&self, tape: &mut Tape, f: Var, s0: Option<Var>) -> Result<Var> {
        let hidden = tape.value(self.w_z).rows();
        let steps = tape.value(f).rows();
        if steps == 0 {
            return Err(Error::contract("GRU input has no rows"));
        }
        let mut state = match s0 {
            Some(s) => {
                if tape.value(s).shape() != (1, hidden) {
                    return Err(Error::dim("gru initial state", tape.value(s).shape(), (1, hidden)));
                }
                s
            }
            None => tape.leaf(Matrix::zeros(1, hidden)),
        };
        // input projections for all steps at once
        let fz = tape.matmul(f, self.u_z)?;
        let fr = tape.matmul(f, self.u_r)?;
        let fh = tape.matmul(f, self.u_h)?;

        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let sz = tape.matmul(state, self.w_z)?;
            let xz = tape.row(fz, t)?;
            let z = tape.add(xz, sz)?;
            let z = tape.sigmoid(z);

            let sr = tape.matmul(state, self.w_r)?;
            let xr = tape.row(fr, t)?;
            let r = tape.add(xr, sr)?;
            let r = tape.sigmoid(r);

            let gated = tape.hadamard(state, r)?;
            let sh = tape.matmul(gated, self.w_h)?;
            let xh = tape.row(fh, t)?;
            let h = tape.add(xh, sh)?;
            let h = tape.tanh(h);

            let hx = tape.matmul(h, self.u_x)?;
            let out = tape.add_row(hx, self.b_x)?;
            let out = tape.tanh(out);

            let keep = tape.one_minus(z);
            let fresh = tape.hadamard(keep, out)?;
            let carried = tape.hadamard(z, state)?;
            state = tape.add(fresh, carried)?;
            outputs.push(out);
        }
        tape.stack_rows(&outputs)
    }
}

impl PairFusion<Var> {
    pub fn apply(&self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        if tape.value(a).shape() != tape.value(b).shape() {
            return Err(Error::dim("bimodal_fuse", tape.value(a).shape(), tape.value(b).shape()));
        }
        let wa = tape.mul_row(a, self.w1)?;
        let wb = tape.mul_row(b, self.w2)?;
        let s = tape.add(wa, wb)?;
        let s = tape.add_row(s, self.b)?;
        Ok(tape.tanh(s))
    }
}

impl TripleFusion<Var> {
    pub fn apply(&self, tape: &mut Tape, a: Var, b: Var, c: Var) -> Result<Var> {
        let shape = tape.value(a).shape();
        for other in [b, c] {
            if tape.value(other).shape() != shape {
                return Err(Error::dim("trimodal_fuse", shape, tape.value(other).shape()));
            }
        }
        let wa = tape.mul_row(a, self.w1)?;
        let wb = tape.mul_row(b, self.w2)?;
        let wc = tape.mul_row(c, self.w3)?;
        let s = tape.add(wa, wb)?;
        let s = tape.add(s, wc)?;
        let s = tape.add_row(s, self.b)?;
        Ok(tape.tanh(s))
    }
}

pub fn dense_forward(x: &Matrix, p: &Dense) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let pv = p.map(|_, m| tape.leaf(m.clone()));
    let out = pv.apply(&mut tape, xv)?;
    Ok(tape.value(out).clone())
}

pub fn gru_forward(f: &Matrix, p: &PaperGru, s0: Option<&Matrix>) -> Result<Matrix> {
    let mut tape = Tape::new();
    let fv = tape.leaf(f.clone());
    let pv = p.map(|_, m| tape.leaf(m.clone()));
    let s0v = s0.map(|s| tape.leaf(s.clone()));
    let out = pv.apply(&mut tape, fv, s0v)?;
    Ok(tape.value(out).clone())
}

pub fn bimodal_fuse(g1: &Matrix, g2: &Matrix, p: &PairFusion) -> Result<Matrix> {
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(g1.clone()), tape.leaf(g2.clone()));
    let pv = p.map(|_, m| tape.leaf(m.clone()));
    let out = pv.apply(&mut tape, a, b)?;
    Ok(tape.value(out).clone())
}

pub fn trimodal_fuse(f1: &Matrix, f2: &Matrix, f3: &Matrix, p: &TripleFusion) -> Result<Matrix> {
    let mut tape = Tape::new();
    let (a, b, c) = (tape.leaf(f1.clone()), tape.leaf(f2.clone()), tape.leaf(f3.clone()));
    let pv = p.map(|_, m| tape.leaf(m.clone()));
    let out = pv.apply(&mut tape, a, b, c)?;
    Ok(tape.value(out).clone())
}
