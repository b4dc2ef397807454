use rand::Rng;

use super::glorot_bound;
use super::linalg::{dot, sigmoid};
use crate::{Error, Result};

/// LSTM cell shape. Parameters form a `4h x (in + h + 1)` row-major block
/// with gate rows ordered input, forget, output, candidate; the last column
/// is the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the reverse pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Gate activations: input, forget, output, candidate (each `h` wide).
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub state: LstmState,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize) -> Self {
        Self { input, hidden }
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden + 1)
    }

    pub fn shape(&self) -> [usize; 2] {
        [4 * self.hidden, self.input + self.hidden + 1]
    }

    fn stride(&self) -> usize {
        self.input + self.hidden + 1
    }

    /// Glorot-uniform gate weights, zero biases except the forget gate (+1).
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let h = self.hidden;
        let bound = glorot_bound(self.input + h, h);
        let stride = self.stride();
        for (r, row) in params.chunks_exact_mut(stride).enumerate() {
            for w in &mut row[..stride - 1] {
                *w = rng.gen_range(-bound..=bound);
            }
            row[stride - 1] = if (h..2 * h).contains(&r) { 1.0 } else { 0.0 };
        }
    }

    fn preactivations(&self, params: &[f64], x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let stride = self.stride();
        let (ni, nh) = (self.input, self.hidden);
        params
            .chunks_exact(stride)
            .map(|row| dot(&row[..ni], x) + dot(&row[ni..ni + nh], h_prev) + row[stride - 1])
            .collect()
    }

    pub fn step(&self, params: &[f64], x: &[f64], prev: &LstmState) -> LstmState {
        self.step_traced(params, x, prev).state
    }

    pub fn step_traced(&self, params: &[f64], x: &[f64], prev: &LstmState) -> LstmTrace {
        debug_assert_eq!(x.len(), self.input);
        let h = self.hidden;
        let mut gates = self.preactivations(params, x, &prev.h);
        for (k, g) in gates.iter_mut().enumerate() {
            *g = if k < 3 * h { sigmoid(*g) } else { g.tanh() };
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for j in 0..h {
            let (i, f, o, g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            c[j] = f * prev.c[j] + i * g;
            tanh_c[j] = c[j].tanh();
            hn[j] = o * tanh_c[j];
        }
        LstmTrace {
            x: x.to_vec(),
            h_prev: prev.h.clone(),
            c_prev: prev.c.clone(),
            gates,
            tanh_c,
            state: LstmState { h: hn, c },
        }
    }

    /// Reverse pass through one step. `dh`/`dc` are the gradients flowing
    /// into the step's outputs. Parameter gradients accumulate into `grad`
    /// and the input gradient into `dx`; returns `(dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &LstmTrace,
        dh: &[f64],
        dc: &[f64],
        grad: &mut [f64],
        dx: Option<&mut [f64]>,
    ) -> (Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let ni = self.input;
        let stride = self.stride();
        let g = &trace.gates;
        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let (i, f, o, cand) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = trace.tanh_c[j];
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dct * cand * i * (1.0 - i);
            dz[h + j] = dct * trace.c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dh[j] * tc * o * (1.0 - o);
            dz[3 * h + j] = dct * i * (1.0 - cand * cand);
            dc_prev[j] = dct * f;
        }
        let mut dh_prev = vec![0.0; h];
        let mut dx = dx;
        for (r, (row, grow)) in params.chunks_exact(stride).zip(grad.chunks_exact_mut(stride)).enumerate() {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            for (gw, xv) in grow[..ni].iter_mut().zip(&trace.x) {
                *gw += d * xv;
            }
            for (gw, hv) in grow[ni..ni + h].iter_mut().zip(&trace.h_prev) {
                *gw += d * hv;
            }
            grow[stride - 1] += d;
            if let Some(dx) = dx.as_deref_mut() {
                for (dxi, w) in dx.iter_mut().zip(&row[..ni]) {
                    *dxi += d * w;
                }
            }
            for (dhi, w) in dh_prev.iter_mut().zip(&row[ni..ni + h]) {
                *dhi += d * w;
            }
        }
        (dh_prev, dc_prev)
    }
}

/// An LSTM cell that owns its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub spec: Lstm,
    pub params: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let spec = Lstm::new(input, hidden);
        Self {
            spec,
            params: vec![0.0; spec.param_count()],
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(input, hidden);
        cell.spec.init(&mut cell.params, rng);
        cell
    }

    /// Mutable view of one gate's bias column; `gate` is 0..4 in the order
    /// input, forget, output, candidate.
    pub fn set_gate_bias(&mut self, gate: usize, value: f64) {
        let h = self.spec.hidden;
        let stride = self.spec.stride();
        for r in gate * h..(gate + 1) * h {
            self.params[r * stride + stride - 1] = value;
        }
    }

    /// One step of the standard LSTM recurrence.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.spec.input {
            return Err(Error::dim("lstm input", self.spec.input, x.len()));
        }
        if h.len() != self.spec.hidden {
            return Err(Error::dim("lstm hidden", self.spec.hidden, h.len()));
        }
        if c.len() != self.spec.hidden {
            return Err(Error::dim("lstm cell", self.spec.hidden, c.len()));
        }
        let prev = LstmState { h: h.to_vec(), c: c.to_vec() };
        let next = self.spec.step(&self.params, x, &prev);
        Ok((next.h, next.c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn parameter_count() {
        assert_eq!(Lstm::new(5, 3).param_count(), 4 * 3 * (3 + 5 + 1));
    }

    #[test]
    fn zero_params_halve_the_cell() {
        let cell = LstmCell::zeros(2, 3);
        let c = [0.4, -1.0, 2.0];
        let (h, c2) = cell.step(&[0.3, -0.7], &[0.1, 0.2, 0.3], &c).unwrap();
        for j in 0..3 {
            assert!((c2[j] - c[j] / 2.0).abs() < 1e-15);
            assert!((h[j] - 0.5 * (c[j] / 2.0).tanh()).abs() < 1e-15);
        }
        let (h0, c0) = cell.step(&[0.3, -0.7], &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(h0, vec![0.0; 3]);
        assert_eq!(c0, vec![0.0; 3]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut cell = LstmCell::zeros(2, 3);
        cell.set_gate_bias(1, 100.0);
        let c = [0.4, -1.0, 2.0];
        let (_, c2) = cell.step(&[5.0, -5.0], &[0.9, -0.9, 0.1], &c).unwrap();
        for j in 0..3 {
            assert!((c2[j] - c[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let cell = LstmCell::zeros(2, 3);
        assert!(cell.step(&[1.0], &[0.0; 3], &[0.0; 3]).is_err());
        assert!(cell.step(&[1.0, 1.0], &[0.0; 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let cell = LstmCell::random(3, 2, &mut rng);
        let stride = 3 + 2 + 1;
        let biases: Vec<f64> = (0..8).map(|r| cell.params[r * stride + stride - 1]).collect();
        assert_eq!(biases, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn hidden_output_is_bounded(
            seed in any::<u64>(),
            x in prop::collection::vec(-50.0f64..50.0, 3),
            c in prop::collection::vec(-50.0f64..50.0, 4),
            scale in 0.1f64..20.0,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut cell = LstmCell::random(3, 4, &mut rng);
            cell.params.iter_mut().for_each(|p| *p *= scale);
            let (h, _) = cell.step(&x, &[0.5, -0.5, 1.0, -1.0], &c).unwrap();
            prop_assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
    }
}
