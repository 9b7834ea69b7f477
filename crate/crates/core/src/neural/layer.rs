//! Dense, causal 1-D convolution and GRU layers with forward, backward and
//! single-step (streaming) evaluation.

use rand::Rng;

use super::tensor::{axpy, matvec, matvec_transposed_acc, outer_acc, Real, Tensor2D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(T::zero()),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Linear => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Relu => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => Activation::Linear,
            1 => Activation::Tanh,
            2 => Activation::Sigmoid,
            3 => Activation::Relu,
            _ => return None,
        })
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Shape and type of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// Causal convolution along time: output `t` sees inputs `t-kernel+1 ..= t`.
    Conv1d {
        inputs: usize,
        outputs: usize,
        kernel: usize,
        activation: Activation,
    },
    /// Gates ordered update, reset, candidate.
    Gru { inputs: usize, hidden: usize },
}

impl LayerKind {
    pub fn inputs(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, .. }
            | LayerKind::Conv1d { inputs, .. }
            | LayerKind::Gru { inputs, .. } => inputs,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            LayerKind::Dense { outputs, .. } | LayerKind::Conv1d { outputs, .. } => outputs,
            LayerKind::Gru { hidden, .. } => hidden,
        }
    }

    /// Number of weight matrix entries (biases excluded).
    pub fn weight_count(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, outputs, .. } => inputs * outputs,
            LayerKind::Conv1d {
                inputs,
                outputs,
                kernel,
                ..
            } => inputs * outputs * kernel,
            LayerKind::Gru { inputs, hidden } => 3 * hidden * (inputs + hidden),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count()
            + match *self {
                LayerKind::Dense { outputs, .. } | LayerKind::Conv1d { outputs, .. } => outputs,
                LayerKind::Gru { hidden, .. } => 3 * hidden,
            }
    }
}

/// A layer's kind plus its flat parameter vector `[weights..., biases...]`.
///
/// Layouts: dense `W[out][in]`; conv `W[out][tap][in]` with the last tap at
/// the current frame; GRU `Wx[3·hidden][in]`, `Wh[3·hidden][hidden]`, `b[3·hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    kind: LayerKind,
    params: Vec<T>,
}

/// What a training-mode forward pass retains for backward.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Dense {
        x: Tensor2D<T>,
        y: Tensor2D<T>,
    },
    Conv1d {
        /// Input with `kernel - 1` zero rows prepended.
        padded: Tensor2D<T>,
        y: Tensor2D<T>,
    },
    Gru {
        x: Tensor2D<T>,
        /// `h[0]` is the initial state; `h[t + 1]` the output at `t`.
        h: Tensor2D<T>,
        z: Tensor2D<T>,
        r: Tensor2D<T>,
        c: Tensor2D<T>,
    },
}

impl<T: Real> Layer<T> {
    pub fn new(kind: LayerKind, params: Vec<T>) -> Result<Self> {
        if params.len() != kind.param_count() {
            return Err(Error::shape(format!(
                "{kind:?} needs {} parameters, got {}",
                kind.param_count(),
                params.len()
            )));
        }
        if let LayerKind::Conv1d { kernel: 0, .. } = kind {
            return Err(Error::shape("convolution kernel must be at least 1"));
        }
        Ok(Self { kind, params })
    }

    pub fn zeros(kind: LayerKind) -> Self {
        Self {
            kind,
            params: vec![T::zero(); kind.param_count()],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn xavier<R: Rng>(kind: LayerKind, rng: &mut R) -> Self {
        let mut layer = Self::zeros(kind);
        let (fan_in, fan_out) = match kind {
            LayerKind::Dense { inputs, outputs, .. } => (inputs, outputs),
            LayerKind::Conv1d {
                inputs,
                outputs,
                kernel,
                ..
            } => (inputs * kernel, outputs * kernel),
            LayerKind::Gru { inputs, hidden } => (inputs, hidden),
        };
        match kind {
            LayerKind::Gru { inputs, hidden } => {
                let lim_x = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let lim_h = (6.0 / (2 * hidden) as f64).sqrt();
                let nx = 3 * hidden * inputs;
                for (i, p) in layer.params[..kind.weight_count()].iter_mut().enumerate() {
                    let lim = if i < nx { lim_x } else { lim_h };
                    *p = T::of(rng.gen_range(-lim..lim));
                }
            }
            _ => {
                let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for p in layer.params[..kind.weight_count()].iter_mut() {
                    *p = T::of(rng.gen_range(-lim..lim));
                }
            }
        }
        layer
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.params[..self.kind.weight_count()]
    }

    pub fn bias(&self) -> &[T] {
        &self.params[self.kind.weight_count()..]
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        let n = self.kind.weight_count();
        &mut self.params[n..]
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        Layer {
            kind: self.kind,
            params: self.params.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    fn check_input(&self, x: &Tensor2D<T>) -> Result<()> {
        if x.cols() != self.kind.inputs() {
            return Err(Error::shape(format!(
                "{:?} expects {} input channels, got {}",
                self.kind,
                self.kind.inputs(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Inference-mode forward over a whole sequence.
    pub fn forward(&self, x: &Tensor2D<T>) -> Result<Tensor2D<T>> {
        Ok(match self.forward_train(x)? {
            Cache::Dense { y, .. } | Cache::Conv1d { y, .. } => y,
            Cache::Gru { h, .. } => {
                let (_, out) = split_first_row(&h);
                out
            }
        })
    }

    /// Forward pass that records what [`Layer::backward`] needs.
    pub fn forward_train(&self, x: &Tensor2D<T>) -> Result<Cache<T>> {
        self.check_input(x)?;
        Ok(match self.kind {
            LayerKind::Dense {
                outputs,
                activation,
                ..
            } => {
                let mut y = Tensor2D::zeros(x.rows(), outputs);
                let (w, b) = self.params.split_at(self.kind.weight_count());
                for t in 0..x.rows() {
                    let yt = y.row_mut(t);
                    matvec(w, Some(b), x.row(t), yt);
                    yt.iter_mut().for_each(|v| *v = activation.apply(*v));
                }
                Cache::Dense { x: x.clone(), y }
            }
            LayerKind::Conv1d {
                inputs,
                outputs,
                kernel,
                activation,
            } => {
                let mut padded = Tensor2D::zeros(x.rows() + kernel - 1, inputs);
                padded.data_mut()[(kernel - 1) * inputs..].copy_from_slice(x.data());
                let mut y = Tensor2D::zeros(x.rows(), outputs);
                let (w, b) = self.params.split_at(self.kind.weight_count());
                let span = kernel * inputs;
                for t in 0..x.rows() {
                    let window = &padded.data()[t * inputs..t * inputs + span];
                    let yt = y.row_mut(t);
                    matvec(w, Some(b), window, yt);
                    yt.iter_mut().for_each(|v| *v = activation.apply(*v));
                }
                Cache::Conv1d { padded, y }
            }
            LayerKind::Gru { hidden, .. } => self.gru_forward(x, hidden),
        })
    }

    fn gru_split(&self) -> (&[T], &[T], &[T]) {
        let LayerKind::Gru { inputs, hidden } = self.kind else {
            unreachable!()
        };
        let nx = 3 * hidden * inputs;
        let nh = 3 * hidden * hidden;
        let (wx, rest) = self.params.split_at(nx);
        let (wh, b) = rest.split_at(nh);
        (wx, wh, b)
    }

    fn gru_forward(&self, x: &Tensor2D<T>, hidden: usize) -> Cache<T> {
        let steps = x.rows();
        let (wx, wh, b) = self.gru_split();
        let mut xw = Tensor2D::zeros(steps, 3 * hidden);
        for t in 0..steps {
            matvec(wx, Some(b), x.row(t), xw.row_mut(t));
        }
        let mut h = Tensor2D::zeros(steps + 1, hidden);
        let mut z = Tensor2D::zeros(steps, hidden);
        let mut r = Tensor2D::zeros(steps, hidden);
        let mut c = Tensor2D::zeros(steps, hidden);
        let mut rec = vec![T::zero(); 2 * hidden];
        let mut rh = vec![T::zero(); hidden];
        let mut cand = vec![T::zero(); hidden];
        for t in 0..steps {
            let prev = h.row(t).to_vec();
            matvec(&wh[..2 * hidden * hidden], None, &prev, &mut rec);
            let xt = xw.row(t);
            for i in 0..hidden {
                z.row_mut(t)[i] = sigmoid(xt[i] + rec[i]);
                r.row_mut(t)[i] = sigmoid(xt[hidden + i] + rec[hidden + i]);
                rh[i] = r.row(t)[i] * prev[i];
            }
            matvec(&wh[2 * hidden * hidden..], None, &rh, &mut cand);
            let next = h.row_mut(t + 1);
            for i in 0..hidden {
                let ci = (xt[2 * hidden + i] + cand[i]).tanh();
                c.row_mut(t)[i] = ci;
                let zi = z.row(t)[i];
                next[i] = (T::one() - zi) * prev[i] + zi * ci;
            }
        }
        Cache::Gru {
            x: x.clone(),
            h,
            z,
            r,
            c,
        }
    }

    /// Back-propagates `dy` through the cached forward pass, accumulating
    /// parameter gradients into `grad` and returning the input gradient.
    pub fn backward(&self, cache: &Cache<T>, dy: &Tensor2D<T>, grad: &mut [T]) -> Result<Tensor2D<T>> {
        if grad.len() != self.params.len() {
            return Err(Error::shape("gradient buffer does not match the parameters"));
        }
        let nw = self.kind.weight_count();
        match (self.kind, cache) {
            (
                LayerKind::Dense {
                    inputs,
                    outputs,
                    activation,
                },
                Cache::Dense { x, y },
            ) => {
                check_dy(dy, y.rows(), outputs)?;
                let (gw, gb) = grad.split_at_mut(nw);
                let w = self.weights();
                let mut dx = Tensor2D::zeros(x.rows(), inputs);
                let mut dpre = vec![T::zero(); outputs];
                for t in 0..x.rows() {
                    for ((d, &g), &yv) in dpre.iter_mut().zip(dy.row(t)).zip(y.row(t)) {
                        *d = g * activation.derivative_from_output(yv);
                    }
                    axpy(T::one(), &dpre, gb);
                    outer_acc(&dpre, x.row(t), gw);
                    matvec_transposed_acc(w, &dpre, dx.row_mut(t));
                }
                Ok(dx)
            }
            (
                LayerKind::Conv1d {
                    inputs,
                    outputs,
                    kernel,
                    activation,
                },
                Cache::Conv1d { padded, y },
            ) => {
                check_dy(dy, y.rows(), outputs)?;
                let (gw, gb) = grad.split_at_mut(nw);
                let w = self.weights();
                let span = kernel * inputs;
                let mut dpad = Tensor2D::zeros(padded.rows(), inputs);
                let mut dpre = vec![T::zero(); outputs];
                for t in 0..y.rows() {
                    for ((d, &g), &yv) in dpre.iter_mut().zip(dy.row(t)).zip(y.row(t)) {
                        *d = g * activation.derivative_from_output(yv);
                    }
                    axpy(T::one(), &dpre, gb);
                    outer_acc(&dpre, &padded.data()[t * inputs..t * inputs + span], gw);
                    matvec_transposed_acc(
                        w,
                        &dpre,
                        &mut dpad.data_mut()[t * inputs..t * inputs + span],
                    );
                }
                let dx = Tensor2D::from_vec(
                    y.rows(),
                    inputs,
                    dpad.data()[(kernel - 1) * inputs..].to_vec(),
                )?;
                Ok(dx)
            }
            (LayerKind::Gru { inputs, hidden }, Cache::Gru { x, h, z, r, c }) => {
                check_dy(dy, x.rows(), hidden)?;
                Ok(self.gru_backward(x, h, z, r, c, dy, grad, inputs, hidden))
            }
            _ => Err(Error::State("cache does not belong to this layer kind".into())),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn gru_backward(
        &self,
        x: &Tensor2D<T>,
        h: &Tensor2D<T>,
        z: &Tensor2D<T>,
        r: &Tensor2D<T>,
        c: &Tensor2D<T>,
        dy: &Tensor2D<T>,
        grad: &mut [T],
        inputs: usize,
        hidden: usize,
    ) -> Tensor2D<T> {
        let steps = x.rows();
        let (wx, wh, _) = self.gru_split();
        let nx = 3 * hidden * inputs;
        let nh = 3 * hidden * hidden;
        let (gwx, rest) = grad.split_at_mut(nx);
        let (gwh, gb) = rest.split_at_mut(nh);
        let hh = hidden * hidden;
        let (uz, ur, uc) = (&wh[..hh], &wh[hh..2 * hh], &wh[2 * hh..]);

        // Pre-activation gradients for all gates, per step.
        let mut da = Tensor2D::zeros(steps, 3 * hidden);
        let mut dh_next = vec![T::zero(); hidden];
        let mut dh = vec![T::zero(); hidden];
        let mut rh = vec![T::zero(); hidden];
        let mut drh = vec![T::zero(); hidden];
        for t in (0..steps).rev() {
            let prev = h.row(t);
            let (zt, rt, ct) = (z.row(t), r.row(t), c.row(t));
            for i in 0..hidden {
                dh[i] = dy.row(t)[i] + dh_next[i];
            }
            let dat = da.row_mut(t);
            for i in 0..hidden {
                let dc = dh[i] * zt[i];
                let dz = dh[i] * (ct[i] - prev[i]);
                dat[i] = dz * zt[i] * (T::one() - zt[i]);
                dat[2 * hidden + i] = dc * (T::one() - ct[i] * ct[i]);
                dh_next[i] = dh[i] * (T::one() - zt[i]);
                rh[i] = rt[i] * prev[i];
            }
            drh.iter_mut().for_each(|v| *v = T::zero());
            matvec_transposed_acc(uc, &dat[2 * hidden..], &mut drh);
            for i in 0..hidden {
                let dr = drh[i] * prev[i];
                dat[hidden + i] = dr * rt[i] * (T::one() - rt[i]);
                dh_next[i] += drh[i] * rt[i];
            }
            matvec_transposed_acc(uz, &dat[..hidden], &mut dh_next);
            matvec_transposed_acc(ur, &dat[hidden..2 * hidden], &mut dh_next);
            // Recurrent weight gradients.
            outer_acc(&dat[..hidden], prev, &mut gwh[..hh]);
            outer_acc(&dat[hidden..2 * hidden], prev, &mut gwh[hh..2 * hh]);
            outer_acc(&dat[2 * hidden..], &rh, &mut gwh[2 * hh..]);
        }
        let mut dx = Tensor2D::zeros(steps, inputs);
        for t in 0..steps {
            let dat = da.row(t);
            axpy(T::one(), dat, gb);
            outer_acc(dat, x.row(t), gwx);
            matvec_transposed_acc(wx, dat, dx.row_mut(t));
        }
        dx
    }

    /// Fresh per-stream state for [`Layer::step`].
    pub fn new_state(&self) -> StepState<T> {
        match self.kind {
            LayerKind::Dense { .. } => StepState::Dense,
            LayerKind::Conv1d { inputs, kernel, .. } => StepState::Conv1d {
                window: vec![T::zero(); inputs * kernel],
            },
            LayerKind::Gru { hidden, .. } => StepState::Gru {
                h: vec![T::zero(); hidden],
                gates: vec![T::zero(); 3 * hidden],
                rec: vec![T::zero(); 2 * hidden],
                rh: vec![T::zero(); hidden],
                cand: vec![T::zero(); hidden],
            },
        }
    }

    /// Advances one time step; `y` receives the layer output. Does not allocate.
    pub fn step(&self, state: &mut StepState<T>, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.kind.inputs());
        debug_assert_eq!(y.len(), self.kind.outputs());
        let (w, b) = self.params.split_at(self.kind.weight_count());
        match (self.kind, state) {
            (LayerKind::Dense { activation, .. }, StepState::Dense) => {
                matvec(w, Some(b), x, y);
                y.iter_mut().for_each(|v| *v = activation.apply(*v));
            }
            (LayerKind::Conv1d { inputs, activation, .. }, StepState::Conv1d { window }) => {
                window.copy_within(inputs.., 0);
                let n = window.len();
                window[n - inputs..].copy_from_slice(x);
                matvec(w, Some(b), window, y);
                y.iter_mut().for_each(|v| *v = activation.apply(*v));
            }
            (
                LayerKind::Gru { hidden, .. },
                StepState::Gru {
                    h,
                    gates,
                    rec,
                    rh,
                    cand,
                },
            ) => {
                let (wx, wh, b) = self.gru_split();
                matvec(wx, Some(b), x, gates);
                matvec(&wh[..2 * hidden * hidden], None, h, rec);
                for i in 0..hidden {
                    gates[i] = sigmoid(gates[i] + rec[i]);
                    gates[hidden + i] = sigmoid(gates[hidden + i] + rec[hidden + i]);
                    rh[i] = gates[hidden + i] * h[i];
                }
                matvec(&wh[2 * hidden * hidden..], None, rh, cand);
                for i in 0..hidden {
                    let ci = (gates[2 * hidden + i] + cand[i]).tanh();
                    let zi = gates[i];
                    h[i] = (T::one() - zi) * h[i] + zi * ci;
                }
                y.copy_from_slice(h);
            }
            _ => panic!("step state does not belong to this layer"),
        }
    }
}

/// Per-stream recurrent/convolution state for [`Layer::step`].
#[derive(Debug, Clone)]
pub enum StepState<T> {
    Dense,
    Conv1d {
        window: Vec<T>,
    },
    Gru {
        h: Vec<T>,
        gates: Vec<T>,
        rec: Vec<T>,
        rh: Vec<T>,
        cand: Vec<T>,
    },
}

impl<T: Real> StepState<T> {
    pub fn reset(&mut self) {
        match self {
            StepState::Dense => {}
            StepState::Conv1d { window } => window.fill(T::zero()),
            StepState::Gru { h, .. } => h.fill(T::zero()),
        }
    }

    /// Current GRU hidden state, if this is a GRU state.
    pub fn hidden(&self) -> Option<&[T]> {
        match self {
            StepState::Gru { h, .. } => Some(h),
            _ => None,
        }
    }
}

fn check_dy<T: Real>(dy: &Tensor2D<T>, rows: usize, cols: usize) -> Result<()> {
    if dy.rows() != rows || dy.cols() != cols {
        return Err(Error::shape(format!(
            "upstream gradient is {}x{}, expected {rows}x{cols}",
            dy.rows(),
            dy.cols()
        )));
    }
    Ok(())
}

fn split_first_row<T: Real>(h: &Tensor2D<T>) -> (Vec<T>, Tensor2D<T>) {
    let cols = h.cols();
    let first = h.data()[..cols].to_vec();
    let rest = Tensor2D::from_vec(h.rows() - 1, cols, h.data()[cols..].to_vec())
        .expect("consistent shape");
    (first, rest)
}
