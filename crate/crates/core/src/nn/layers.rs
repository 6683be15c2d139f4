//! Dense and recurrent layers operating on slices of a flat parameter vector.

use serde::{Deserialize, Serialize};

use super::params::Layout;

/// Row-major `len × dim` buffer holding one vector per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Seq {
    pub fn zeros(len: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            data.extend_from_slice(r.as_ref());
        }
        Self { dim, data }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// out += W x, with W stored row-major (`rows × x.len()`).
#[inline]
fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// dx += Wᵀ dz.
#[inline]
fn matvec_t_acc(w: &[f64], dz: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (d, row) in dz.iter().zip(w.chunks_exact(cols)) {
        if *d == 0.0 {
            continue;
        }
        for (o, a) in dx.iter_mut().zip(row) {
            *o += d * a;
        }
    }
}

/// dW += dz ⊗ x.
#[inline]
fn outer_acc(dz: &[f64], x: &[f64], dw: &mut [f64]) {
    let cols = x.len();
    for (d, row) in dz.iter().zip(dw.chunks_exact_mut(cols)) {
        if *d == 0.0 {
            continue;
        }
        for (o, a) in row.iter_mut().zip(x) {
            *o += d * a;
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

/// Fully connected layer `y = act(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    w: usize,
    b: usize,
}

impl Dense {
    pub fn register(
        layout: &mut Layout,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
    ) -> Self {
        let w = layout.push(format!("{name}.w"), &[output, input]);
        let b = layout.push(format!("{name}.b"), &[output]);
        Self {
            input,
            output,
            activation,
            w,
            b,
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = params[self.b..self.b + self.output].to_vec();
        matvec_acc(&params[self.w..self.w + self.output * self.input], x, &mut y);
        if self.activation == Activation::Tanh {
            y.iter_mut().for_each(|v| *v = v.tanh());
        }
        y
    }

    /// Accumulate parameter gradients; returns dL/dx. `y` is this layer's output.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        y: &[f64],
        dy: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let dz: Vec<f64> = match self.activation {
            Activation::Identity => dy.to_vec(),
            Activation::Tanh => dy.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect(),
        };
        let wlen = self.output * self.input;
        outer_acc(&dz, x, &mut grad[self.w..self.w + wlen]);
        for (g, d) in grad[self.b..self.b + self.output].iter_mut().zip(&dz) {
            *g += d;
        }
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(&params[self.w..self.w + wlen], &dz, &mut dx);
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// `h = tanh(W x + U h' + b)`.
    SimpleTanh,
    /// LSTM with input, forget, candidate and output gates.
    Gated,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::SimpleTanh => 1,
            CellKind::Gated => 4,
        }
    }
}

/// Everything the backward pass needs from one forward run over a sequence.
#[derive(Debug, Clone)]
pub struct RecurrentTrace {
    pub inputs: Seq,
    /// Hidden state after each step.
    pub hidden: Seq,
    /// Cell state after each step (gated cells only).
    cell: Seq,
    /// Post-activation gate values, `gates × hidden` per step.
    act: Seq,
}

impl RecurrentTrace {
    pub fn last_hidden(&self) -> &[f64] {
        self.hidden.row(self.hidden.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recurrent {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    w: usize,
    u: usize,
    b: usize,
}

impl Recurrent {
    pub fn register(
        layout: &mut Layout,
        name: &str,
        kind: CellKind,
        input: usize,
        hidden: usize,
    ) -> Self {
        let rows = kind.gates() * hidden;
        let w = layout.push(format!("{name}.w"), &[rows, input]);
        let u = layout.push(format!("{name}.u"), &[rows, hidden]);
        let b = layout.push(format!("{name}.b"), &[rows]);
        Self {
            kind,
            input,
            hidden,
            w,
            u,
            b,
        }
    }

    fn rows(&self) -> usize {
        self.kind.gates() * self.hidden
    }

    pub fn forward(&self, params: &[f64], inputs: Seq) -> RecurrentTrace {
        let steps = inputs.len();
        let (h, rows) = (self.hidden, self.rows());
        let w = &params[self.w..self.w + rows * self.input];
        let u = &params[self.u..self.u + rows * h];
        let b = &params[self.b..self.b + rows];
        let mut hidden = Seq::zeros(steps, h);
        let mut cell = Seq::zeros(if self.kind == CellKind::Gated { steps } else { 0 }, h);
        let mut act = Seq::zeros(steps, rows);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut z = vec![0.0; rows];
        for t in 0..steps {
            z.copy_from_slice(b);
            matvec_acc(w, inputs.row(t), &mut z);
            matvec_acc(u, &h_prev, &mut z);
            match self.kind {
                CellKind::SimpleTanh => {
                    let a = act.row_mut(t);
                    for k in 0..h {
                        a[k] = z[k].tanh();
                    }
                    hidden.row_mut(t).copy_from_slice(a);
                }
                CellKind::Gated => {
                    let a = act.row_mut(t);
                    for k in 0..h {
                        a[k] = sigmoid(z[k]);
                        a[h + k] = sigmoid(z[h + k]);
                        a[2 * h + k] = z[2 * h + k].tanh();
                        a[3 * h + k] = sigmoid(z[3 * h + k]);
                    }
                    let c = cell.row_mut(t);
                    for k in 0..h {
                        c[k] = a[h + k] * c_prev[k] + a[k] * a[2 * h + k];
                    }
                    let hs = hidden.row_mut(t);
                    for k in 0..h {
                        hs[k] = a[3 * h + k] * c[k].tanh();
                    }
                    c_prev.copy_from_slice(cell.row(t));
                }
            }
            h_prev.copy_from_slice(hidden.row(t));
        }
        RecurrentTrace {
            inputs,
            hidden,
            cell,
            act,
        }
    }

    /// Backpropagation through time. `d_hidden` holds dL/dh_t coming from
    /// above for every step; returns dL/dx_t.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &RecurrentTrace,
        d_hidden: &Seq,
        grad: &mut [f64],
    ) -> Seq {
        let steps = trace.inputs.len();
        let (h, rows, n_in) = (self.hidden, self.rows(), self.input);
        let w = &params[self.w..self.w + rows * n_in];
        let u = &params[self.u..self.u + rows * h];
        let mut dx = Seq::zeros(steps, n_in);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; rows];
        let zeros = vec![0.0; h];

        // split the gradient buffer into its three blocks once
        let (gw, rest) = grad[self.w..].split_at_mut(rows * n_in);
        let offset_u = self.u - self.w - rows * n_in;
        let (gu, rest) = rest[offset_u..].split_at_mut(rows * h);
        let offset_b = self.b - self.u - rows * h;
        let gb = &mut rest[offset_b..offset_b + rows];

        for t in (0..steps).rev() {
            let a = trace.act.row(t);
            let h_prev = if t > 0 { trace.hidden.row(t - 1) } else { &zeros[..] };
            let dh: Vec<f64> = d_hidden
                .row(t)
                .iter()
                .zip(&dh_next)
                .map(|(x, y)| x + y)
                .collect();
            match self.kind {
                CellKind::SimpleTanh => {
                    for k in 0..h {
                        dz[k] = dh[k] * (1.0 - a[k] * a[k]);
                    }
                }
                CellKind::Gated => {
                    let c = trace.cell.row(t);
                    let c_prev = if t > 0 { trace.cell.row(t - 1) } else { &zeros[..] };
                    for k in 0..h {
                        let (i, f, g, o) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
                        let tc = c[k].tanh();
                        let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
                        dz[k] = dc * g * i * (1.0 - i);
                        dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
                        dz[2 * h + k] = dc * i * (1.0 - g * g);
                        dz[3 * h + k] = dh[k] * tc * o * (1.0 - o);
                        dc_next[k] = dc * f;
                    }
                }
            }
            outer_acc(&dz, trace.inputs.row(t), gw);
            outer_acc(&dz, h_prev, gu);
            for (g, d) in gb.iter_mut().zip(&dz) {
                *g += d;
            }
            matvec_t_acc(w, &dz, dx.row_mut(t));
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(u, &dz, &mut dh_next);
        }
        dx
    }
}
