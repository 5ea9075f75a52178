use super::{loss_feat, loss_state, loss_svd, loss_total, DistillTargets, DistillWeights, Projection};
use crate::detect::{linear_head, task_loss_grad, GroundTruthBox, HeadWeights};
use crate::error::{Error, Result};
use crate::lowrank::LowRankTransition;
use crate::numlin::{dot, Matrix, Rng};
use crate::ss2d::{flatten_path, ss2d_forward, DirectionalSystem, FeatureMap, ScanDirection, Ss2dLayer, Ss2dTrace};

/// Frozen full-rank SS2D layer plus the detection head both models share.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    layer: Ss2dLayer,
    head: HeadWeights,
}

impl Teacher {
    /// Every system of `layer` must be full-rank and time-invariant.
    pub fn new(layer: Ss2dLayer, head: HeadWeights) -> Result<Self> {
        if layer
            .systems()
            .iter()
            .any(|s| !matches!(s, DirectionalSystem::Full(_)))
        {
            return Err(Error::arg("teacher systems must be full-rank and time-invariant"));
        }
        if head.channels() != layer.channels() {
            return Err(Error::shape(
                "Teacher::new",
                format!("head over {} channels", head.channels()),
                format!("layer over {} channels", layer.channels()),
            ));
        }
        Ok(Self { layer, head })
    }

    pub fn random(state_dim: usize, channels: usize, num_classes: usize, grid: (usize, usize), rng: &mut Rng) -> Self {
        let layer = Ss2dLayer::random_teacher(state_dim, channels, rng);
        let head = HeadWeights::random(channels, num_classes, grid, 1.0, rng);
        Self { layer, head }
    }

    pub fn layer(&self) -> &Ss2dLayer {
        &self.layer
    }

    pub fn head(&self) -> &HeadWeights {
        &self.head
    }

    fn system(&self, k: usize) -> &crate::ssm::DiscreteSsm {
        match &self.layer.systems()[k] {
            DirectionalSystem::Full(d) => d,
            _ => unreachable!("checked at construction"),
        }
    }

    /// Rank-`r` SVD targets, one per directional system.
    pub fn targets(&self, r: usize) -> Result<Vec<DistillTargets>> {
        (0..self.layer.systems().len())
            .map(|k| DistillTargets::from_teacher(self.system(k).a_bar(), r))
            .collect()
    }

    /// Runs the teacher once on `input`; its detections become the
    /// ground truth for the student's task loss.
    pub fn sample(&self, input: FeatureMap) -> Result<Sample> {
        let (output, trace) = ss2d_forward(&input, &self.layer)?;
        let gts = linear_head(&output, &self.head)?
            .into_iter()
            .map(|d| GroundTruthBox::new(d.bbox, d.class_id))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sample {
            input,
            output,
            trace,
            gts,
        })
    }
}

/// One input with the teacher's frozen response to it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: FeatureMap,
    pub output: FeatureMap,
    pub trace: Ss2dTrace,
    pub gts: Vec<GroundTruthBox>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StudentInit {
    /// Factors drawn i.i.d. `N(0, std²)`.
    Random(f64),
    /// Factors copied from the teacher's SVD truncation.
    Svd,
}

/// Low-rank student: trainable `(U, V)` per system and the projection `P`;
/// `B̄` and `C` are copied from the teacher and stay fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct Student {
    channels: usize,
    u: Vec<Matrix>,
    v: Vec<Matrix>,
    b_bar: Vec<Matrix>,
    c: Vec<Matrix>,
    projection: Projection,
}

impl Student {
    pub fn from_teacher(teacher: &Teacher, rank: usize, init: StudentInit, rng: &mut Rng) -> Result<Self> {
        let n = teacher.layer.state_dim();
        if rank == 0 || rank > n {
            return Err(Error::arg(format!("rank {rank} outside 1..={n}")));
        }
        let systems = teacher.layer.systems().len();
        let (u, v) = match init {
            StudentInit::Svd => teacher
                .targets(rank)?
                .into_iter()
                .map(|t| (t.u_target().clone(), t.v_target().clone()))
                .unzip(),
            StudentInit::Random(std) => (0..systems)
                .map(|_| (rng.normal_matrix(n, rank, std), rng.normal_matrix(n, rank, std)))
                .unzip(),
        };
        let (b_bar, c) = (0..systems)
            .map(|k| {
                let d = teacher.system(k);
                (d.b_bar().clone(), d.c().clone())
            })
            .unzip();
        Ok(Self {
            channels: teacher.layer.channels(),
            u,
            v,
            b_bar,
            c,
            projection: Projection::init(n, n, rng),
        })
    }

    pub fn num_systems(&self) -> usize {
        self.u.len()
    }

    pub fn rank(&self) -> usize {
        self.u[0].cols()
    }

    pub fn state_dim(&self) -> usize {
        self.u[0].rows()
    }

    pub fn u(&self, k: usize) -> &Matrix {
        &self.u[k]
    }

    pub fn v(&self, k: usize) -> &Matrix {
        &self.v[k]
    }

    pub fn u_mut(&mut self, k: usize) -> &mut Matrix {
        &mut self.u[k]
    }

    pub fn v_mut(&mut self, k: usize) -> &mut Matrix {
        &mut self.v[k]
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut Projection {
        &mut self.projection
    }

    /// The student as a runnable SS2D layer.
    pub fn layer(&self) -> Result<Ss2dLayer> {
        let systems = (0..self.u.len())
            .map(|k| {
                Ok(DirectionalSystem::LowRank {
                    transition: LowRankTransition::new(self.u[k].clone(), self.v[k].clone())?,
                    b_bar: self.b_bar[k].clone(),
                    c: self.c[k].clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ss2dLayer::new(self.channels, systems)
    }

    /// One gradient-descent step.
    pub fn descend(&mut self, g: &GradientBundle, learning_rate: f64) -> Result<()> {
        g.check(self)?;
        for k in 0..self.u.len() {
            self.u[k].axpy(-learning_rate, &g.d_u[k])?;
            self.v[k].axpy(-learning_rate, &g.d_v[k])?;
        }
        self.projection.matrix_mut().axpy(-learning_rate, &g.d_p)
    }
}

/// Gradients of the weighted objective, one `(d_u, d_v)` per system.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub d_u: Vec<Matrix>,
    pub d_v: Vec<Matrix>,
    pub d_p: Matrix,
}

impl GradientBundle {
    fn zeros_like(s: &Student) -> Self {
        let (n, r) = s.u[0].shape();
        Self {
            d_u: vec![Matrix::zeros(n, r); s.u.len()],
            d_v: vec![Matrix::zeros(n, r); s.u.len()],
            d_p: Matrix::zeros(s.projection.student_dim(), s.projection.teacher_dim()),
        }
    }

    fn check(&self, s: &Student) -> Result<()> {
        let ok = self.d_u.len() == s.u.len()
            && self.d_v.len() == s.v.len()
            && self.d_u.iter().zip(&s.u).all(|(g, p)| g.shape() == p.shape())
            && self.d_v.iter().zip(&s.v).all(|(g, p)| g.shape() == p.shape())
            && self.d_p.shape() == s.projection.matrix().shape();
        if ok {
            Ok(())
        } else {
            Err(Error::shape("Student::descend", "gradient bundle", "student parameters"))
        }
    }

    /// Largest absolute entry over all blocks.
    pub fn max_abs(&self) -> f64 {
        self.d_u
            .iter()
            .chain(&self.d_v)
            .chain(std::iter::once(&self.d_p))
            .flat_map(|m| m.data())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Unweighted components and the weighted total. Data-dependent terms are
/// averaged over the batch; the state term is also averaged over systems.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    pub svd: f64,
    pub state: f64,
    pub feat: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted objective without the task term.
    pub fn distillation(&self, w: &DistillWeights) -> f64 {
        w.lambda2 * self.svd + w.lambda3 * self.state + w.lambda4 * self.feat
    }
}

fn check_problem(student: &Student, teacher: &Teacher, targets: &[DistillTargets], samples: &[Sample]) -> Result<()> {
    let k = teacher.layer.systems().len();
    if student.num_systems() != k || targets.len() != k {
        return Err(Error::shape(
            "grad_distill",
            format!("{} student systems, {} targets", student.num_systems(), targets.len()),
            format!("{k} teacher systems"),
        ));
    }
    if student.projection.teacher_dim() != teacher.layer.state_dim() {
        return Err(Error::shape(
            "grad_distill",
            student.projection.matrix().shape_str(),
            format!("teacher state dim {}", teacher.layer.state_dim()),
        ));
    }
    if samples.is_empty() {
        return Err(Error::arg("empty sample batch"));
    }
    Ok(())
}

fn objective(
    student: &Student,
    teacher: &Teacher,
    targets: &[DistillTargets],
    samples: &[Sample],
    w: &DistillWeights,
    mut grads: Option<&mut GradientBundle>,
) -> Result<LossBreakdown> {
    check_problem(student, teacher, targets, samples)?;
    let layer = student.layer()?;
    let systems = student.num_systems();
    let n_s = student.state_dim();
    let batch = samples.len() as f64;
    let p = &student.projection;

    let mut out = LossBreakdown::default();
    for k in 0..systems {
        out.svd += loss_svd(&student.u[k], &student.v[k], &targets[k])?;
        if let Some(g) = grads.as_deref_mut() {
            for (d, (a, b)) in g.d_u[k].data_mut().iter_mut().zip(student.u[k].data().iter().zip(targets[k].u_target().data())) {
                *d += 2.0 * w.lambda2 * (a - b);
            }
            for (d, (a, b)) in g.d_v[k].data_mut().iter_mut().zip(student.v[k].data().iter().zip(targets[k].v_target().data())) {
                *d += 2.0 * w.lambda2 * (a - b);
            }
        }
    }

    for s in samples {
        let (y_s, trace) = ss2d_forward(&s.input, &layer)?;
        if y_s.data().iter().any(|v| !v.is_finite()) {
            // an overflowing student has no meaningful detections
            out.total = f64::INFINITY;
            return Ok(out);
        }
        let dets = linear_head(&y_s, &teacher.head)?;
        let (task, det_grads) = task_loss_grad(&dets, &s.gts);
        let feat = loss_feat(&s.output, &y_s)?;
        let mut state = 0.0;
        for (hs, ht) in trace.trajectories().iter().zip(s.trace.trajectories()) {
            state += loss_state(hs, ht, p)?;
        }
        state /= systems as f64;
        out.task += task / batch;
        out.feat += feat / batch;
        out.state += state / batch;

        let Some(g) = grads.as_deref_mut() else { continue };

        // dL/dY over the merged output map
        let mut dy = teacher.head.backward(&y_s, &det_grads)?.scale(w.lambda1 / batch);
        for (d, (ys, yt)) in dy.data_mut().iter_mut().zip(y_s.data().iter().zip(s.output.data())) {
            *d += w.lambda4 * 2.0 * (ys - yt) / batch;
        }

        let (h, wd, c) = s.input.dims();
        for dir in ScanDirection::ALL {
            let path = flatten_path(h, wd, dir);
            let len = path.len();
            let state_scale = 2.0 * w.lambda3 / (batch * systems as f64 * len as f64 * n_s as f64);
            for ch in 0..c {
                let k = dir.index() * c + ch;
                let hs = trace.trajectory(dir, ch);
                let ht = s.trace.trajectory(dir, ch);
                let (u, v) = (&student.u[k], &student.v[k]);
                let r = u.cols();
                let c_vec = student.c[k].data();

                let mut adj = vec![0.0; n_s];
                let mut vth = vec![0.0; r];
                let mut utg = vec![0.0; r];
                for t in (0..len).rev() {
                    let h_t = hs.state(t);
                    let proj = p.apply(ht.state(t))?;
                    let dyt = dy.get(path[t].0, path[t].1, ch);
                    for i in 0..n_s {
                        let resid = h_t[i] - proj[i];
                        adj[i] += dyt * c_vec[i] + state_scale * resid;
                        let d_p = g.d_p.row(i).len();
                        for j in 0..d_p {
                            g.d_p[(i, j)] -= state_scale * resid * ht.state(t)[j];
                        }
                    }
                    // adj now holds g_t; Uᵀ g_t feeds both dV and g_{t-1}
                    for (a, ut) in utg.iter_mut().zip(0..r) {
                        *a = (0..n_s).map(|i| u[(i, ut)] * adj[i]).sum();
                    }
                    if t > 0 {
                        let h_prev = hs.state(t - 1);
                        for (a, j) in vth.iter_mut().zip(0..r) {
                            *a = (0..n_s).map(|i| v[(i, j)] * h_prev[i]).sum();
                        }
                        for i in 0..n_s {
                            for j in 0..r {
                                g.d_u[k][(i, j)] += adj[i] * vth[j];
                                g.d_v[k][(i, j)] += h_prev[i] * utg[j];
                            }
                        }
                    }
                    for (i, a) in adj.iter_mut().enumerate() {
                        *a = dot(v.row(i), &utg);
                    }
                }
            }
        }
    }
    out.total = loss_total(out.task, out.svd, out.state, out.feat, w)?;
    Ok(out)
}

/// Weighted objective on `samples` without gradients.
pub fn distill_loss(
    student: &Student,
    teacher: &Teacher,
    targets: &[DistillTargets],
    samples: &[Sample],
    w: &DistillWeights,
) -> Result<LossBreakdown> {
    objective(student, teacher, targets, samples, w, None)
}

/// Analytic gradient of the weighted objective with respect to every
/// student `U`, `V` and the projection, by backpropagation through each
/// directional recurrence.
pub fn grad_distill(
    student: &Student,
    teacher: &Teacher,
    targets: &[DistillTargets],
    samples: &[Sample],
    w: &DistillWeights,
) -> Result<(GradientBundle, LossBreakdown)> {
    let mut g = GradientBundle::zeros_like(student);
    let loss = objective(student, teacher, targets, samples, w, Some(&mut g))?;
    Ok((g, loss))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub state_dim: usize,
    pub rank: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub grid: (usize, usize),
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: DistillWeights,
    pub init: StudentInit,
    /// Fresh inputs drawn per gradient step.
    pub batch: usize,
    /// Fixed inputs on which the logged loss is measured.
    pub eval_batch: usize,
    /// Standard deviation of the synthetic input features. The curvature of
    /// the feature loss grows with the square of the input scale and of the
    /// teacher's memory length, so a fixed step size needs small inputs on
    /// long scan paths.
    pub input_std: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            state_dim: 8,
            rank: 4,
            height: 4,
            width: 4,
            channels: 2,
            num_classes: 3,
            grid: (2, 2),
            steps: 500,
            learning_rate: 1e-2,
            seed: 0,
            weights: DistillWeights::default(),
            init: StudentInit::Random(0.1),
            batch: 1,
            eval_batch: 4,
            input_std: 0.1,
        }
    }
}

impl DistillConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::arg("steps must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::arg(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.input_std.is_finite() && self.input_std > 0.0) {
            return Err(Error::arg(format!("input std {} must be positive", self.input_std)));
        }
        if self.batch == 0 || self.eval_batch == 0 {
            return Err(Error::arg("batch sizes must be positive"));
        }
        if self.state_dim == 0 || self.channels == 0 || self.num_classes == 0 {
            return Err(Error::arg("state_dim, channels and num_classes must be positive"));
        }
        if self.rank == 0 || self.rank > self.state_dim {
            return Err(Error::arg(format!("rank {} outside 1..={}", self.rank, self.state_dim)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub loss: LossBreakdown,
}

/// Loss on the evaluation batch after 0, 1, ..., `steps` updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn initial(&self) -> Option<&LossBreakdown> {
        self.records.first().map(|r| &r.loss)
    }

    pub fn last(&self) -> Option<&LossBreakdown> {
        self.records.last().map(|r| &r.loss)
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss.total).collect()
    }
}

#[derive(Clone, Debug)]
pub struct DistillRun {
    pub teacher: Teacher,
    pub student: Student,
    pub log: TrainingLog,
}

fn draw_samples(teacher: &Teacher, cfg: &DistillConfig, rng: &mut Rng, count: usize) -> Result<Vec<Sample>> {
    (0..count)
        .map(|_| teacher.sample(FeatureMap::random(cfg.height, cfg.width, cfg.channels, cfg.input_std, rng)))
        .collect()
}

/// Plain gradient descent of `student` against the frozen `teacher`. Each
/// step draws fresh inputs; the log is measured on a fixed evaluation batch.
pub fn train(teacher: &Teacher, student: &mut Student, cfg: &DistillConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let targets = teacher.targets(student.rank())?;
    let eval = draw_samples(teacher, cfg, &mut root.split(3), cfg.eval_batch)?;
    let data = root.split(4);

    let mut log = TrainingLog::default();
    let record = |step: usize, student: &Student, log: &mut TrainingLog| -> Result<()> {
        let loss = distill_loss(student, teacher, &targets, &eval, &cfg.weights)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { step, loss: loss.total });
        }
        log.records.push(LogRecord { step, loss });
        Ok(())
    };
    record(0, student, &mut log)?;
    for step in 1..=cfg.steps {
        let batch = draw_samples(teacher, cfg, &mut data.split(step as u64), cfg.batch)?;
        let (g, loss) = grad_distill(student, teacher, &targets, &batch, &cfg.weights)?;
        if !loss.total.is_finite() || !g.max_abs().is_finite() {
            return Err(Error::Diverged { step, loss: loss.total });
        }
        student.descend(&g, cfg.learning_rate)?;
        record(step, student, &mut log)?;
    }
    Ok(log)
}

/// Builds a seeded teacher and student and runs [`train`].
pub fn distill_train(cfg: &DistillConfig) -> Result<DistillRun> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    if cfg.grid.0 == 0 || cfg.grid.1 == 0 || cfg.grid.0 > cfg.height || cfg.grid.1 > cfg.width {
        return Err(Error::arg(format!(
            "anchor grid {:?} does not fit a {}x{} map",
            cfg.grid, cfg.height, cfg.width
        )));
    }
    let teacher = Teacher::random(cfg.state_dim, cfg.channels, cfg.num_classes, cfg.grid, &mut root.split(1));
    let mut student = Student::from_teacher(&teacher, cfg.rank, cfg.init, &mut root.split(2))?;
    let log = train(&teacher, &mut student, cfg)?;
    Ok(DistillRun { teacher, student, log })
}
