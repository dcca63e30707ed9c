use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real, RngStream};

use super::mlp::{Mlp, MlpCache, MlpGrads};

/// Exponential Gumbel-softmax temperature annealing,
/// `max(end, start * decay^epoch)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
    pub decay: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.1,
            decay: 0.99,
        }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        (self.start * self.decay.powi(epoch.min(i32::MAX as usize) as i32)).max(self.end)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.end > 0.0 && self.end <= self.start && self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config(format!("invalid temperature schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectMode {
    Train,
    Eval,
}

/// How mixture weights are formed for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    /// Gumbel-softmax with pre-drawn noise, one row per input row.
    Train { temperature: f64, noise: Matrix<f64> },
    /// One-hot argmax of the selection logits.
    Eval,
}

impl Selection {
    /// Draws `rows × k` Gumbel noise for a training-mode pass.
    pub fn draw(rows: usize, k: usize, temperature: f64, rng: &mut RngStream) -> Self {
        let noise = Matrix::from_fn(rows, k, |_, _| rng.gumbel());
        Selection::Train { temperature, noise }
    }
}

/// `K` expert projectors plus a linear selection network that scores each
/// expert from the teacher's feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertBank<T> {
    pub experts: Vec<Mlp<T>>,
    pub selection: Mlp<T>,
    pub schedule: TemperatureSchedule,
}

#[derive(Clone, Debug)]
pub struct BankCache<T> {
    expert_caches: Vec<MlpCache<T>>,
    expert_outputs: Vec<Matrix<T>>,
    weights: Matrix<f64>,
    selection_cache: Option<MlpCache<T>>,
    temperature: Option<f64>,
}

impl<T> BankCache<T> {
    pub fn weights(&self) -> &Matrix<f64> {
        &self.weights
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankGrads<T> {
    pub experts: Vec<MlpGrads<T>>,
    pub selection: MlpGrads<T>,
}

impl<T: Real> BankGrads<T> {
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.experts.iter_mut().zip(&other.experts) {
            a.add_assign(b);
        }
        self.selection.add_assign(&other.selection);
    }

    pub fn scale(&mut self, s: T) {
        self.experts.iter_mut().for_each(|g| g.scale(s));
        self.selection.scale(s);
    }

    /// Same order as [`ExpertBank::params_mut`].
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        self.experts
            .iter()
            .flat_map(|g| g.tensors())
            .chain(self.selection.tensors())
            .collect()
    }
}

impl<T: Real> ExpertBank<T> {
    pub fn new(experts: Vec<Mlp<T>>, selection: Mlp<T>, schedule: TemperatureSchedule) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::config("expert bank needs K >= 1"));
        }
        let (din, dout) = (experts[0].input_dim(), experts[0].output_dim());
        if experts.iter().any(|e| e.input_dim() != din || e.output_dim() != dout) {
            return Err(Error::config("experts must share input/output dims"));
        }
        if selection.output_dim() != experts.len() || selection.input_dim() != dout {
            return Err(Error::config(format!(
                "selection network must map {dout} -> {}",
                experts.len()
            )));
        }
        schedule.validate()?;
        Ok(Self {
            experts,
            selection,
            schedule,
        })
    }

    /// `k` two-layer experts `d_s -> d_t -> d_t` and a linear selector `d_t -> k`.
    pub fn init(
        k: usize,
        d_student: usize,
        d_teacher: usize,
        schedule: TemperatureSchedule,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("expert bank needs K >= 1"));
        }
        let experts = (0..k).map(|_| Mlp::two_layer(d_student, d_teacher, rng)).collect();
        let selection = Mlp::linear(d_teacher, k, rng);
        Self::new(experts, selection, schedule)
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.experts[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.experts[0].output_dim()
    }

    /// Mixture weights (rows sum to one) for each teacher feature row.
    pub fn weights(&self, teacher: &Matrix<T>, sel: &Selection) -> Result<(Matrix<f64>, Option<MlpCache<T>>)> {
        let n = teacher.rows();
        let k = self.k();
        if k == 1 {
            return Ok((Matrix::from_fn(n, 1, |_, _| 1.0), None));
        }
        let (logits, cache) = self.selection.forward(teacher)?;
        let mut w = Matrix::<f64>::zeros(n, k);
        match sel {
            Selection::Eval => {
                for r in 0..n {
                    let row = logits.row(r);
                    let mut best = 0;
                    for j in 1..k {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    w.set(r, best, 1.0);
                }
            }
            Selection::Train { temperature, noise } => {
                if noise.shape() != (n, k) {
                    return Err(Error::config(format!(
                        "selection noise {:?} does not match {n}x{k}",
                        noise.shape()
                    )));
                }
                if !(*temperature > 0.0) {
                    return Err(Error::config("Gumbel temperature must be positive"));
                }
                for r in 0..n {
                    let z: Vec<f64> = (0..k)
                        .map(|j| (logits.get(r, j).as_f64() + noise.get(r, j)) / temperature)
                        .collect();
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    for j in 0..k {
                        w.set(r, j, e[j] / s);
                    }
                }
            }
        }
        Ok((w, Some(cache)))
    }

    pub fn forward(&self, x: &Matrix<T>, teacher: &Matrix<T>, sel: &Selection) -> Result<(Matrix<T>, BankCache<T>)> {
        if x.rows() != teacher.rows() {
            return Err(Error::config(format!(
                "student rows {} != teacher rows {}",
                x.rows(),
                teacher.rows()
            )));
        }
        if teacher.cols() != self.output_dim() {
            return Err(Error::config(format!(
                "teacher feature dim {} != projector output {}",
                teacher.cols(),
                self.output_dim()
            )));
        }
        let (weights, selection_cache) = self.weights(teacher, sel)?;
        let mut out = Matrix::zeros(x.rows(), self.output_dim());
        let mut expert_caches = Vec::with_capacity(self.k());
        let mut expert_outputs = Vec::with_capacity(self.k());
        for (j, e) in self.experts.iter().enumerate() {
            let (y, c) = e.forward(x)?;
            for r in 0..x.rows() {
                let wr = T::of(weights.get(r, j));
                if wr == T::zero() {
                    continue;
                }
                for (o, &v) in out.row_mut(r).iter_mut().zip(y.row(r)) {
                    *o += wr * v;
                }
            }
            expert_caches.push(c);
            expert_outputs.push(y);
        }
        let temperature = match sel {
            Selection::Train { temperature, .. } => Some(*temperature),
            Selection::Eval => None,
        };
        Ok((
            out,
            BankCache {
                expert_caches,
                expert_outputs,
                weights,
                selection_cache,
                temperature,
            },
        ))
    }

    /// Gradient w.r.t. the student input and all bank parameters. Teacher
    /// features are constants.
    pub fn backward(&self, cache: &BankCache<T>, grad_out: &Matrix<T>) -> Result<(Matrix<T>, BankGrads<T>)> {
        let n = grad_out.rows();
        let k = self.k();
        let mut grad_x = Matrix::zeros(n, self.input_dim());
        let mut experts = Vec::with_capacity(k);
        for (j, e) in self.experts.iter().enumerate() {
            let mut g = grad_out.clone();
            for r in 0..n {
                let wr = T::of(cache.weights.get(r, j));
                g.row_mut(r).iter_mut().for_each(|v| *v *= wr);
            }
            let (gx, ge) = e.backward(&cache.expert_caches[j], &g)?;
            grad_x.axpy(T::one(), &gx);
            experts.push(ge);
        }

        let selection = match (&cache.selection_cache, cache.temperature) {
            (Some(sc), Some(tau)) => {
                let mut dlogits = Matrix::<T>::zeros(n, k);
                for r in 0..n {
                    let dw: Vec<f64> = (0..k)
                        .map(|j| crate::numerics::dot(grad_out.row(r), cache.expert_outputs[j].row(r)))
                        .collect();
                    let mean: f64 = (0..k).map(|j| cache.weights.get(r, j) * dw[j]).sum();
                    for j in 0..k {
                        let wj = cache.weights.get(r, j);
                        dlogits.set(r, j, T::of(wj * (dw[j] - mean) / tau));
                    }
                }
                self.selection.backward(sc, &dlogits)?.1
            }
            _ => self.selection.zero_grads(),
        };
        Ok((grad_x, BankGrads { experts, selection }))
    }

    pub fn zero_grads(&self) -> BankGrads<T> {
        BankGrads {
            experts: self.experts.iter().map(Mlp::zero_grads).collect(),
            selection: self.selection.zero_grads(),
        }
    }

    /// Experts' blocks in order, then the selection network's.
    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out: Vec<&mut Matrix<T>> = Vec::new();
        for e in &mut self.experts {
            out.extend(e.params_mut());
        }
        out.extend(self.selection.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Matrix<T>> {
        self.experts
            .iter()
            .flat_map(|e| e.params())
            .chain(self.selection.params())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ExpertBank<U> {
        ExpertBank {
            experts: self.experts.iter().map(Mlp::cast).collect(),
            selection: self.selection.cast(),
            schedule: self.schedule,
        }
    }
}

fn resolve<T: Real>(bank: &ExpertBank<T>, rows: usize, epoch: usize, mode: SelectMode, rng: &mut RngStream) -> Selection {
    match mode {
        SelectMode::Eval => Selection::Eval,
        SelectMode::Train => Selection::draw(rows, bank.k(), bank.schedule.at(epoch), rng),
    }
}

/// Per-row expert weights: Gumbel-softmax at the epoch's temperature in
/// training mode, one-hot argmax in eval mode.
pub fn de_select<T: Real>(
    bank: &ExpertBank<T>,
    teacher: &Matrix<T>,
    epoch: usize,
    mode: SelectMode,
    rng: &mut RngStream,
) -> Result<Matrix<f64>> {
    if bank.k() == 0 {
        return Err(Error::config("expert bank needs K >= 1"));
    }
    let sel = resolve(bank, teacher.rows(), epoch, mode, rng);
    Ok(bank.weights(teacher, &sel)?.0)
}

/// Weighted sum of expert projections with [`de_select`] weights.
pub fn de_project<T: Real>(
    bank: &ExpertBank<T>,
    student: &Matrix<T>,
    teacher: &Matrix<T>,
    epoch: usize,
    mode: SelectMode,
    rng: &mut RngStream,
) -> Result<Matrix<T>> {
    let sel = resolve(bank, teacher.rows(), epoch, mode, rng);
    Ok(bank.forward(student, teacher, &sel)?.0)
}
