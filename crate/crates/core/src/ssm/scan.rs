use super::{discretize_zoh, selective_delta, ContinuousSsm, DiscreteSsm, SelectiveDelta};
use crate::error::{Error, Result};
use crate::numlin::{dot, Matrix};

/// Multiply-add tally threaded through the scan kernels.
pub trait OpCounter {
    fn add(&mut self, macs: u64);
}

/// Counter that compiles away.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoCount;

impl OpCounter for NoCount {
    #[inline(always)]
    fn add(&mut self, _: u64) {}
}

impl OpCounter for u64 {
    #[inline]
    fn add(&mut self, macs: u64) {
        *self += macs;
    }
}

/// State transition `h -> M h` used by the recurrence.
pub trait Transition {
    fn state_dim(&self) -> usize;

    /// Length of the scratch buffer `apply` expects.
    fn scratch_len(&self) -> usize {
        0
    }

    /// Writes `M h` into `out`.
    fn apply<C: OpCounter>(&self, h: &[f64], out: &mut [f64], scratch: &mut [f64], ops: &mut C);
}

/// Dense `N x N` transition.
#[derive(Clone, Copy, Debug)]
pub struct FullTransition<'a>(pub &'a Matrix);

impl Transition for FullTransition<'_> {
    fn state_dim(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    fn apply<C: OpCounter>(&self, h: &[f64], out: &mut [f64], _: &mut [f64], ops: &mut C) {
        let n = h.len();
        for (o, row) in out.iter_mut().zip(self.0.data().chunks_exact(n)) {
            *o = dot(row, h);
        }
        ops.add((n * n) as u64);
    }
}

/// Hidden states `h_1..h_L` (flattened, `L x N`) and outputs `y_1..y_L`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    state_dim: usize,
    states: Vec<f64>,
    outputs: Vec<f64>,
}

impl StateTrajectory {
    pub fn new(state_dim: usize, states: Vec<f64>, outputs: Vec<f64>) -> Result<Self> {
        if states.len() != state_dim * outputs.len() {
            return Err(Error::shape(
                "StateTrajectory::new",
                format!("{} state values", states.len()),
                format!("{} steps of dim {state_dim}", outputs.len()),
            ));
        }
        Ok(Self {
            state_dim,
            states,
            outputs,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// `h_{t+1}` for zero-based `t`.
    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.states.chunks_exact(self.state_dim.max(1))
    }

    pub fn flat_states(&self) -> &[f64] {
        &self.states
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    /// States as an `L x N` matrix.
    pub fn states_matrix(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.state_dim, self.states.clone()).expect("finite states")
    }
}

/// Reusable buffers for one recurrence.
pub(crate) struct ScanState {
    h: Vec<f64>,
    next: Vec<f64>,
    scratch: Vec<f64>,
}

impl ScanState {
    pub(crate) fn new<T: Transition>(t: &T, h0: Option<&[f64]>) -> Self {
        let n = t.state_dim();
        let h = match h0 {
            Some(h0) => {
                assert_eq!(h0.len(), n, "initial state must have length N");
                h0.to_vec()
            }
            None => vec![0.0; n],
        };
        Self {
            h,
            next: vec![0.0; n],
            scratch: vec![0.0; t.scratch_len()],
        }
    }

    pub(crate) fn h(&self) -> &[f64] {
        &self.h
    }

    /// `h <- M h + b x`, returns `y = c h`.
    #[inline]
    pub(crate) fn step<T: Transition, C: OpCounter>(
        &mut self,
        t: &T,
        b_bar: &[f64],
        c: &[f64],
        x: f64,
        ops: &mut C,
    ) -> f64 {
        t.apply(&self.h, &mut self.next, &mut self.scratch, ops);
        for (o, b) in self.next.iter_mut().zip(b_bar) {
            *o += b * x;
        }
        std::mem::swap(&mut self.h, &mut self.next);
        let n = self.h.len() as u64;
        ops.add(2 * n);
        dot(c, &self.h)
    }
}

/// Runs the recurrence over `x`, appending outputs (and optionally states).
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_into<T: Transition, C: OpCounter>(
    t: &T,
    b_bar: &[f64],
    c: &[f64],
    x: impl IntoIterator<Item = f64>,
    h0: Option<&[f64]>,
    mut states: Option<&mut Vec<f64>>,
    outputs: &mut Vec<f64>,
    ops: &mut C,
) {
    let n = t.state_dim();
    assert_eq!(b_bar.len(), n, "B̄ must have length N");
    assert_eq!(c.len(), n, "C must have length N");
    let mut st = ScanState::new(t, h0);
    for xk in x {
        let y = st.step(t, b_bar, c, xk, ops);
        if let Some(s) = states.as_deref_mut() {
            s.extend_from_slice(st.h());
        }
        outputs.push(y);
    }
}

/// Generic recurrence over any transition, with an op counter.
pub fn scan_with<T: Transition, C: OpCounter>(
    t: &T,
    b_bar: &[f64],
    c: &[f64],
    x: &[f64],
    h0: Option<&[f64]>,
    ops: &mut C,
) -> StateTrajectory {
    let n = t.state_dim();
    let mut states = Vec::with_capacity(n * x.len());
    let mut outputs = Vec::with_capacity(x.len());
    scan_into(t, b_bar, c, x.iter().copied(), h0, Some(&mut states), &mut outputs, ops);
    StateTrajectory {
        state_dim: n,
        states,
        outputs,
    }
}

/// `h_k = Ā h_{k-1} + B̄ x_k`, `y_k = C h_k`, starting from `h0` (zero when
/// `None`).
pub fn scan_1d(d: &DiscreteSsm, x: &[f64], h0: Option<&[f64]>) -> StateTrajectory {
    scan_with(&FullTransition(d.a_bar()), d.b_bar().data(), d.c().data(), x, h0, &mut NoCount)
}

/// Selective recurrence: each token `x_t` picks its own step
/// `Δ_t = softplus(w · x_t + bias)`, the system is re-discretized with it and
/// the scalar channel input is `proj_in · x_t`.
pub fn scan_1d_selective(
    ssm: &ContinuousSsm,
    sd: &SelectiveDelta,
    tokens: &[Vec<f64>],
    proj_in: &Matrix,
    h0: Option<&[f64]>,
) -> Result<StateTrajectory> {
    if proj_in.shape() != (1, sd.input_dim()) {
        return Err(Error::shape(
            "scan_1d_selective",
            proj_in.shape_str(),
            format!("1x{} input projection", sd.input_dim()),
        ));
    }
    let n = ssm.state_dim();
    let mut states = Vec::with_capacity(n * tokens.len());
    let mut outputs = Vec::with_capacity(tokens.len());
    let mut h = match h0 {
        Some(h0) => h0.to_vec(),
        None => vec![0.0; n],
    };
    for tok in tokens {
        if tok.len() != sd.input_dim() {
            return Err(Error::shape(
                "scan_1d_selective",
                format!("token of {}", tok.len()),
                format!("D_in = {}", sd.input_dim()),
            ));
        }
        let d = discretize_zoh(ssm, selective_delta(sd, tok))?;
        let u = dot(proj_in.data(), tok);
        let step = FullTransition(d.a_bar());
        let mut st = ScanState::new(&step, Some(&h));
        let y = st.step(&step, d.b_bar().data(), d.c().data(), u, &mut NoCount);
        h.copy_from_slice(st.h());
        states.extend_from_slice(&h);
        outputs.push(y);
    }
    Ok(StateTrajectory {
        state_dim: n,
        states,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::Rng;

    fn random_discrete(n: usize, rng: &mut Rng) -> DiscreteSsm {
        let ssm = ContinuousSsm::teacher_init(n, rng);
        discretize_zoh(&ssm, 0.5).unwrap()
    }

    /// Step-by-step loop written directly from the recurrence.
    fn naive_scan(d: &DiscreteSsm, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = d.state_dim();
        let mut h = vec![0.0; n];
        let mut hs = Vec::new();
        let mut ys = Vec::new();
        for &xk in x {
            let mut next = vec![0.0; n];
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += d.a_bar()[(i, j)] * h[j];
                }
                next[i] = s + d.b_bar()[(i, 0)] * xk;
            }
            h = next;
            let mut y = 0.0;
            for i in 0..n {
                y += d.c()[(0, i)] * h[i];
            }
            hs.push(h.clone());
            ys.push(y);
        }
        (hs, ys)
    }

    #[test]
    fn identity_transition_is_running_sum() {
        let d = DiscreteSsm::new(
            Matrix::identity(2),
            Matrix::column(&[1.0, 0.0]),
            Matrix::row_vector(&[1.0, 0.0]),
        )
        .unwrap();
        let tr = scan_1d(&d, &[1.0, 1.0, 1.0], None);
        assert_eq!(tr.outputs(), &[1.0, 2.0, 3.0]);
        assert_eq!(tr.len(), 3);
        assert_eq!(tr.state(2), &[3.0, 0.0]);
    }

    #[test]
    fn zero_transition_is_memoryless() {
        let mut rng = Rng::new(3);
        let b = rng.normal_matrix(3, 1, 1.0);
        let c = rng.normal_matrix(1, 3, 1.0);
        let cb = dot(c.data(), b.data());
        let d = DiscreteSsm::new(Matrix::zeros(3, 3), b, c).unwrap();
        let x = rng.normal_vec(6, 1.0);
        let tr = scan_1d(&d, &x, None);
        for (y, xk) in tr.outputs().iter().zip(&x) {
            assert!((y - cb * xk).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = Rng::new(4);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-13 * (1.0 + b.abs());
        for _ in 0..5 {
            let d = random_discrete(6, &mut rng);
            let x = rng.normal_vec(16, 1.0);
            let tr = scan_1d(&d, &x, None);
            let (hs, ys) = naive_scan(&d, &x);
            assert!(tr.outputs().iter().zip(&ys).all(|(a, b)| close(*a, *b)));
            for (t, h) in hs.iter().enumerate() {
                assert!(tr.state(t).iter().zip(h).all(|(a, b)| close(*a, *b)));
            }
            assert_eq!(scan_1d(&d, &x, None), tr);
        }
    }

    #[test]
    fn superposition() {
        let mut rng = Rng::new(5);
        let d = random_discrete(5, &mut rng);
        let h0 = rng.normal_vec(5, 1.0);
        let x1 = rng.normal_vec(20, 1.0);
        let x2 = rng.normal_vec(20, 1.0);
        let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        let s12 = scan_1d(&d, &sum, Some(&h0));
        let s1 = scan_1d(&d, &x1, Some(&h0));
        let s2 = scan_1d(&d, &x2, Some(&h0));
        let s0 = scan_1d(&d, &[0.0; 20], Some(&h0));
        for t in 0..20 {
            let lin = s1.outputs()[t] + s2.outputs()[t] - s0.outputs()[t];
            assert!((s12.outputs()[t] - lin).abs() < 1e-10);
            for i in 0..5 {
                let lin = s1.state(t)[i] + s2.state(t)[i] - s0.state(t)[i];
                assert!((s12.state(t)[i] - lin).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn stable_decay() {
        let ssm = ContinuousSsm::new(Matrix::identity(3).scale(-1.0), Matrix::column(&[1.0, 1.0, 1.0]), Matrix::zeros(1, 3)).unwrap();
        let d = discretize_zoh(&ssm, 0.1).unwrap();
        let tr = scan_1d(&d, &[0.0; 30], Some(&[1.0, -2.0, 0.5]));
        let norms: Vec<f64> = tr.states().map(|h| dot(h, h).sqrt()).collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn constant_delta_reproduces_fixed_scan() {
        let mut rng = Rng::new(6);
        let ssm = ContinuousSsm::teacher_init(4, &mut rng);
        let sd = SelectiveDelta::constant(3, 0.3);
        let proj = rng.normal_matrix(1, 3, 1.0);
        let tokens: Vec<Vec<f64>> = (0..10).map(|_| rng.normal_vec(3, 1.0)).collect();
        let sel = scan_1d_selective(&ssm, &sd, &tokens, &proj, None).unwrap();
        let d = discretize_zoh(&ssm, sd.eval(&tokens[0])).unwrap();
        let u: Vec<f64> = tokens.iter().map(|t| dot(proj.data(), t)).collect();
        let fixed = scan_1d(&d, &u, None);
        assert_eq!(sel, fixed);
    }

    #[test]
    fn selective_matches_per_step_oracle() {
        let mut rng = Rng::new(7);
        let ssm = ContinuousSsm::teacher_init(2, &mut rng);
        let sd = SelectiveDelta::new(rng.normal_matrix(1, 2, 1.0), 0.1).unwrap();
        let proj = rng.normal_matrix(1, 2, 1.0);
        let tokens: Vec<Vec<f64>> = (0..4).map(|_| rng.normal_vec(2, 1.0)).collect();
        let got = scan_1d_selective(&ssm, &sd, &tokens, &proj, None).unwrap();

        let mut h = [0.0f64; 2];
        for (t, tok) in tokens.iter().enumerate() {
            let z = sd.w()[(0, 0)] * tok[0] + sd.w()[(0, 1)] * tok[1] + sd.bias();
            let delta = (1.0 + z.exp()).ln();
            let d = discretize_zoh(&ssm, delta).unwrap();
            let u = proj[(0, 0)] * tok[0] + proj[(0, 1)] * tok[1];
            let a = d.a_bar();
            let b = d.b_bar();
            h = [
                a[(0, 0)] * h[0] + a[(0, 1)] * h[1] + b[(0, 0)] * u,
                a[(1, 0)] * h[0] + a[(1, 1)] * h[1] + b[(1, 0)] * u,
            ];
            let y = ssm.c()[(0, 0)] * h[0] + ssm.c()[(0, 1)] * h[1];
            assert!((got.state(t)[0] - h[0]).abs() < 1e-12);
            assert!((got.state(t)[1] - h[1]).abs() < 1e-12);
            assert!((got.outputs()[t] - y).abs() < 1e-12);
        }
    }

    #[test]
    fn selectivity_changes_trajectory() {
        let mut rng = Rng::new(8);
        let ssm = ContinuousSsm::teacher_init(3, &mut rng);
        let w = rng.normal_matrix(1, 2, 1.0);
        let proj = rng.normal_matrix(1, 2, 1.0);
        let tokens: Vec<Vec<f64>> = (0..8).map(|_| rng.normal_vec(2, 1.0)).collect();
        let a = scan_1d_selective(&ssm, &SelectiveDelta::new(w.clone(), 0.4).unwrap(), &tokens, &proj, None).unwrap();
        let b = scan_1d_selective(&ssm, &SelectiveDelta::new(w, 0.8).unwrap(), &tokens, &proj, None).unwrap();
        assert_ne!(a.outputs(), b.outputs());
    }

    #[test]
    fn trajectory_shape_checked() {
        assert!(StateTrajectory::new(2, vec![0.0; 5], vec![0.0; 3]).is_err());
        let tr = StateTrajectory::new(2, vec![0.0; 6], vec![0.0; 3]).unwrap();
        assert_eq!(tr.states().count(), 3);
    }
}
