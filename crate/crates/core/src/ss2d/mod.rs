//! Two-dimensional selective scanning.
//!
//! A feature map is flattened along four paths (row-major, column-major and
//! their reverses), every channel of every path runs through its own 1-D
//! state space model, the outputs are scattered back to their pixels and the
//! four directional maps are summed.

mod feature;

pub use feature::FeatureMap;

use crate::error::{Error, Result};
use crate::lowrank::{init_from_teacher, LowRankTransition};
use crate::numlin::{Matrix, Rng};
use crate::ssm::{
    discretize_zoh, scan_1d_selective, ContinuousSsm, DiscreteSsm, FullTransition, NoCount,
    SelectiveDelta, StateTrajectory,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanDirection {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
}

impl ScanDirection {
    /// Fixed merge order of the four directional maps.
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowForward,
        ScanDirection::RowBackward,
        ScanDirection::ColForward,
        ScanDirection::ColBackward,
    ];

    pub fn index(self) -> usize {
        match self {
            ScanDirection::RowForward => 0,
            ScanDirection::RowBackward => 1,
            ScanDirection::ColForward => 2,
            ScanDirection::ColBackward => 3,
        }
    }

    /// The direction that visits a transposed map in the same order.
    pub fn transposed(self) -> ScanDirection {
        match self {
            ScanDirection::RowForward => ScanDirection::ColForward,
            ScanDirection::RowBackward => ScanDirection::ColBackward,
            ScanDirection::ColForward => ScanDirection::RowForward,
            ScanDirection::ColBackward => ScanDirection::RowBackward,
        }
    }
}

/// Visit order of all `h x w` cells for one direction.
pub fn flatten_path(h: usize, w: usize, dir: ScanDirection) -> Vec<(usize, usize)> {
    let row_major = || (0..h).flat_map(move |r| (0..w).map(move |c| (r, c)));
    let col_major = || (0..w).flat_map(move |c| (0..h).map(move |r| (r, c)));
    match dir {
        ScanDirection::RowForward => row_major().collect(),
        ScanDirection::RowBackward => {
            let mut p: Vec<_> = row_major().collect();
            p.reverse();
            p
        }
        ScanDirection::ColForward => col_major().collect(),
        ScanDirection::ColBackward => {
            let mut p: Vec<_> = col_major().collect();
            p.reverse();
            p
        }
    }
}

/// Channel `ch` read along `path`.
pub fn gather(f: &FeatureMap, path: &[(usize, usize)], ch: usize) -> Vec<f64> {
    path.iter().map(|&(r, c)| f.get(r, c, ch)).collect()
}

/// Writes `values[t]` to the pixel `path[t]`, channel `ch`.
pub fn scatter(f: &mut FeatureMap, path: &[(usize, usize)], ch: usize, values: &[f64]) {
    for (&(r, c), v) in path.iter().zip(values) {
        f.set(r, c, ch, *v);
    }
}

/// Bias-free per-pixel channel mixer `W_f ∈ R^{C_in x 2C}` applied to the
/// concatenation `[visible; infrared]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionMixer {
    w_f: Matrix,
}

impl FusionMixer {
    pub fn new(w_f: Matrix) -> Result<Self> {
        if !w_f.cols().is_multiple_of(2) {
            return Err(Error::shape("FusionMixer::new", w_f.shape_str(), "C_in x 2C"));
        }
        Ok(Self { w_f })
    }

    /// `[I | 0]`: passes the visible modality through.
    pub fn select_visible(channels: usize) -> Self {
        let mut w = Matrix::zeros(channels, 2 * channels);
        for i in 0..channels {
            w[(i, i)] = 1.0;
        }
        Self { w_f: w }
    }

    /// `[I/2 | I/2]`: per-pixel average of the two modalities.
    pub fn average(channels: usize) -> Self {
        let mut w = Matrix::zeros(channels, 2 * channels);
        for i in 0..channels {
            w[(i, i)] = 0.5;
            w[(i, channels + i)] = 0.5;
        }
        Self { w_f: w }
    }

    pub fn random(channels_in: usize, channels: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / (2.0 * channels as f64).sqrt();
        Self {
            w_f: rng.normal_matrix(channels_in, 2 * channels, std),
        }
    }

    pub fn weights(&self) -> &Matrix {
        &self.w_f
    }

    /// Channels per input modality.
    pub fn channels(&self) -> usize {
        self.w_f.cols() / 2
    }

    pub fn channels_in(&self) -> usize {
        self.w_f.rows()
    }
}

/// `I^f(p) = W_f [I^v(p); I^i(p)]` at every pixel `p`.
pub fn pixel_fuse(iv: &FeatureMap, ii: &FeatureMap, m: &FusionMixer) -> Result<FeatureMap> {
    if iv.dims() != ii.dims() {
        return Err(Error::shape("pixel_fuse", iv.dims_str(), ii.dims_str()));
    }
    let (h, w, c) = iv.dims();
    if m.channels() != c {
        return Err(Error::shape(
            "pixel_fuse",
            m.w_f.shape_str(),
            format!("mixer over 2x{c} channels"),
        ));
    }
    let mut out = FeatureMap::zeros(h, w, m.channels_in());
    let mut cat = vec![0.0; 2 * c];
    for r in 0..h {
        for col in 0..w {
            cat[..c].copy_from_slice(iv.pixel(r, col));
            cat[c..].copy_from_slice(ii.pixel(r, col));
            let mixed = m.w_f.matvec(&cat)?;
            out.pixel_mut(r, col).copy_from_slice(&mixed);
        }
    }
    Ok(out)
}

/// One scalar-in/scalar-out system of an SS2D layer.
#[derive(Clone, Debug, PartialEq)]
pub enum DirectionalSystem {
    /// Time-invariant full-rank system.
    Full(DiscreteSsm),
    /// Factorized transition with the input/output vectors kept dense.
    LowRank {
        transition: LowRankTransition,
        b_bar: Matrix,
        c: Matrix,
    },
    /// Re-discretized at every pixel with `Δ` computed from that pixel's full
    /// channel vector.
    Selective {
        ssm: ContinuousSsm,
        delta: SelectiveDelta,
    },
}

impl DirectionalSystem {
    pub fn state_dim(&self) -> usize {
        match self {
            DirectionalSystem::Full(d) => d.state_dim(),
            DirectionalSystem::LowRank { transition, .. } => transition.state_dim(),
            DirectionalSystem::Selective { ssm, .. } => ssm.state_dim(),
        }
    }

    /// Parameters of the state transition alone.
    pub fn transition_params(&self) -> usize {
        match self {
            DirectionalSystem::Full(d) => d.state_dim() * d.state_dim(),
            DirectionalSystem::LowRank { transition, .. } => transition.param_count(),
            DirectionalSystem::Selective { ssm, .. } => ssm.state_dim() * ssm.state_dim(),
        }
    }

    /// Runs the system over one path of `f`, channel `ch`.
    fn run(
        &self,
        f: &FeatureMap,
        path: &[(usize, usize)],
        ch: usize,
        states: Option<&mut Vec<f64>>,
        outputs: &mut Vec<f64>,
    ) -> Result<()> {
        let x = path.iter().map(|&(r, c)| f.get(r, c, ch));
        match self {
            DirectionalSystem::Full(d) => {
                crate::ssm::scan_into(
                    &FullTransition(d.a_bar()),
                    d.b_bar().data(),
                    d.c().data(),
                    x,
                    None,
                    states,
                    outputs,
                    &mut NoCount,
                );
            }
            DirectionalSystem::LowRank { transition, b_bar, c } => {
                crate::ssm::scan_into(transition, b_bar.data(), c.data(), x, None, states, outputs, &mut NoCount);
            }
            DirectionalSystem::Selective { ssm, delta } => {
                let tokens: Vec<Vec<f64>> = path.iter().map(|&(r, c)| f.pixel(r, c).to_vec()).collect();
                let mut proj = Matrix::zeros(1, f.channels());
                proj[(0, ch)] = 1.0;
                let tr = scan_1d_selective(ssm, delta, &tokens, &proj, None)?;
                if let Some(s) = states {
                    s.extend_from_slice(tr.flat_states());
                }
                outputs.extend_from_slice(tr.outputs());
            }
        }
        Ok(())
    }
}

/// `4 x C` independent systems sharing one state dimension, indexed by
/// `(direction, channel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ss2dLayer {
    state_dim: usize,
    channels: usize,
    systems: Vec<DirectionalSystem>,
}

impl Ss2dLayer {
    /// `systems` are ordered direction-major following [`ScanDirection::ALL`].
    pub fn new(channels: usize, systems: Vec<DirectionalSystem>) -> Result<Self> {
        if channels == 0 || systems.len() != 4 * channels {
            return Err(Error::shape(
                "Ss2dLayer::new",
                format!("{} systems", systems.len()),
                format!("4 x {channels} channels"),
            ));
        }
        let state_dim = systems[0].state_dim();
        if systems.iter().any(|s| s.state_dim() != state_dim) {
            return Err(Error::arg("all directional systems must share one state dimension"));
        }
        for s in &systems {
            if let DirectionalSystem::Selective { delta, .. } = s {
                if delta.input_dim() != channels {
                    return Err(Error::shape(
                        "Ss2dLayer::new",
                        format!("delta over {} inputs", delta.input_dim()),
                        format!("{channels} channels"),
                    ));
                }
            }
        }
        Ok(Self {
            state_dim,
            channels,
            systems,
        })
    }

    /// Full-rank teacher with independent random systems per direction and
    /// channel, each discretized at its reference step `softplus(bias)`.
    pub fn random_teacher(state_dim: usize, channels: usize, rng: &mut Rng) -> Self {
        let systems = (0..4 * channels)
            .map(|_| {
                let ssm = ContinuousSsm::teacher_init(state_dim, rng);
                let delta = SelectiveDelta::constant(channels, rng.uniform(-0.5, 0.5));
                let step = delta.eval(&vec![0.0; channels]);
                DirectionalSystem::Full(discretize_zoh(&ssm, step).expect("positive step"))
            })
            .collect();
        Self::new(channels, systems).expect("consistent teacher")
    }

    /// Random selective (per-pixel Δ) layer.
    pub fn random_selective(state_dim: usize, channels: usize, rng: &mut Rng) -> Self {
        let systems = (0..4 * channels)
            .map(|_| DirectionalSystem::Selective {
                ssm: ContinuousSsm::teacher_init(state_dim, rng),
                delta: SelectiveDelta::new(rng.normal_matrix(1, channels, 0.3), rng.uniform(-0.5, 0.5))
                    .expect("valid delta"),
            })
            .collect();
        Self::new(channels, systems).expect("consistent layer")
    }

    /// Rank-`r` student: each full-rank transition is replaced by its SVD
    /// truncation, `B̄` and `C` are copied. Selective systems are first
    /// discretized at their zero-token step.
    pub fn compress(&self, r: usize) -> Result<Ss2dLayer> {
        let systems = self
            .systems
            .iter()
            .map(|s| {
                let d = match s {
                    DirectionalSystem::Full(d) => d.clone(),
                    DirectionalSystem::Selective { ssm, delta } => {
                        discretize_zoh(ssm, delta.eval(&vec![0.0; delta.input_dim()]))?
                    }
                    DirectionalSystem::LowRank { .. } => {
                        return Err(Error::arg("layer is already low-rank"));
                    }
                };
                Ok(DirectionalSystem::LowRank {
                    transition: init_from_teacher(d.a_bar(), r)?,
                    b_bar: d.b_bar().clone(),
                    c: d.c().clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.channels, systems)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn systems(&self) -> &[DirectionalSystem] {
        &self.systems
    }

    pub fn system(&self, dir: ScanDirection, ch: usize) -> &DirectionalSystem {
        &self.systems[dir.index() * self.channels + ch]
    }

    pub fn system_mut(&mut self, dir: ScanDirection, ch: usize) -> &mut DirectionalSystem {
        &mut self.systems[dir.index() * self.channels + ch]
    }

    /// Total transition parameters over all `4C` systems.
    pub fn transition_params(&self) -> usize {
        self.systems.iter().map(|s| s.transition_params()).sum()
    }

    /// Same layer with the row and column directions exchanged.
    pub fn swap_row_col(&self) -> Ss2dLayer {
        let mut systems = self.systems.clone();
        for dir in ScanDirection::ALL {
            for ch in 0..self.channels {
                systems[dir.transposed().index() * self.channels + ch] =
                    self.systems[dir.index() * self.channels + ch].clone();
            }
        }
        Ss2dLayer {
            state_dim: self.state_dim,
            channels: self.channels,
            systems,
        }
    }

    fn check_input(&self, f: &FeatureMap) -> Result<()> {
        if f.channels() != self.channels {
            return Err(Error::shape(
                "ss2d_forward",
                f.dims_str(),
                format!("{} layer channels", self.channels),
            ));
        }
        Ok(())
    }

    /// Merged four-direction output without retaining hidden states.
    pub fn forward(&self, f: &FeatureMap) -> Result<FeatureMap> {
        self.check_input(f)?;
        let (h, w, _) = f.dims();
        let mut out = FeatureMap::zeros(h, w, self.channels);
        let mut ys = Vec::with_capacity(h * w);
        for dir in ScanDirection::ALL {
            let path = flatten_path(h, w, dir);
            for ch in 0..self.channels {
                ys.clear();
                self.system(dir, ch).run(f, &path, ch, None, &mut ys)?;
                for (&(r, c), y) in path.iter().zip(&ys) {
                    let o = out.pixel_mut(r, c);
                    o[ch] += y;
                }
            }
        }
        Ok(out)
    }
}

/// Outputs of every direction plus all hidden-state trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct Ss2dTrace {
    channels: usize,
    /// One map per direction, in [`ScanDirection::ALL`] order.
    pub directional: Vec<FeatureMap>,
    trajectories: Vec<StateTrajectory>,
}

impl Ss2dTrace {
    /// Trajectory of `(dir, ch)`, in that direction's visit order.
    pub fn trajectory(&self, dir: ScanDirection, ch: usize) -> &StateTrajectory {
        &self.trajectories[dir.index() * self.channels + ch]
    }

    pub fn trajectories(&self) -> &[StateTrajectory] {
        &self.trajectories
    }
}

/// Full forward pass: per direction and channel, gather along the path,
/// scan, scatter back; the result is the sum of the four directional maps in
/// [`ScanDirection::ALL`] order.
pub fn ss2d_forward(f: &FeatureMap, layer: &Ss2dLayer) -> Result<(FeatureMap, Ss2dTrace)> {
    layer.check_input(f)?;
    let (h, w, c) = f.dims();
    let n = layer.state_dim;
    let mut directional = Vec::with_capacity(4);
    let mut trajectories = Vec::with_capacity(4 * c);
    for dir in ScanDirection::ALL {
        let path = flatten_path(h, w, dir);
        let mut map = FeatureMap::zeros(h, w, c);
        for ch in 0..c {
            let mut states = Vec::with_capacity(n * path.len());
            let mut ys = Vec::with_capacity(path.len());
            layer.system(dir, ch).run(f, &path, ch, Some(&mut states), &mut ys)?;
            scatter(&mut map, &path, ch, &ys);
            trajectories.push(StateTrajectory::new(n, states, ys)?);
        }
        directional.push(map);
    }
    let mut out = FeatureMap::zeros(h, w, c);
    for m in &directional {
        out.add_assign(m)?;
    }
    Ok((
        out,
        Ss2dTrace {
            channels: c,
            directional,
            trajectories,
        },
    ))
}

/// Single-residual block: `f + ss2d(f)`.
pub fn vss_block(f: &FeatureMap, layer: &Ss2dLayer) -> Result<FeatureMap> {
    f.add(&layer.forward(f)?)
}
