//! Entropic optimal transport between predicted class centers and class
//! attribute vectors.

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Matrix, Tensor};

/// `min_X Σ cost·X − ε·H(X)` subject to `X·1 = r`, `Xᵀ·1 = c`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportProblem {
    pub cost: Matrix,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    pub max_iter: usize,
    /// Stop once the L1 row-marginal violation falls below this.
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions { max_iter: 500, tol: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub plan: Matrix,
    /// `Σ cost·X − ε·H(X)` with `H(X) = −Σ X(log X − 1)`.
    pub objective: f64,
    /// `Σ cost·X`.
    pub transport_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Negated dual objective `ε·Σ exp((fᵢ + gⱼ − Cᵢⱼ)/ε) − ⟨f, r⟩ − ⟨g, c⟩`
    /// before the first and after every iteration. Each iteration is an
    /// exact block minimization, so the trace never increases; at
    /// convergence it equals `−objective`.
    pub dual_trace: Vec<f64>,
}

impl TransportProblem {
    pub fn new(cost: Matrix, row_marginal: Vec<f64>, col_marginal: Vec<f64>, epsilon: f64) -> Result<Self> {
        let p = TransportProblem { cost, row_marginal, col_marginal, epsilon };
        p.validate()?;
        Ok(p)
    }

    /// Uniform marginals over rows and columns.
    pub fn uniform(cost: Matrix, epsilon: f64) -> Result<Self> {
        let (k, m) = (cost.rows(), cost.cols());
        Self::new(cost, vec![1.0 / k as f64; k], vec![1.0 / m as f64; m], epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.cost.rows() == 0 || self.cost.cols() == 0 {
            return Err(Error::InvalidArgument("empty cost matrix".into()));
        }
        if self.row_marginal.len() != self.cost.rows() || self.col_marginal.len() != self.cost.cols() {
            return Err(Error::dim(
                "sinkhorn",
                format!(
                    "cost {}x{} with marginals {} and {}",
                    self.cost.rows(),
                    self.cost.cols(),
                    self.row_marginal.len(),
                    self.col_marginal.len()
                ),
            ));
        }
        if self.cost.data().iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidArgument("cost entries must be finite and nonnegative".into()));
        }
        for (name, m) in [("row", &self.row_marginal), ("column", &self.col_marginal)] {
            if m.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidArgument(format!("{name} marginal has negative entries")));
            }
            let s: f64 = m.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("{name} marginal sums to {s}, not 1")));
            }
        }
        Ok(())
    }
}

struct Potentials<'a> {
    p: &'a TransportProblem,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl Potentials<'_> {
    fn log_plan(&self, i: usize, j: usize) -> f64 {
        (self.f[i] + self.g[j] - self.p.cost.get(i, j)) / self.p.epsilon
    }

    fn update_rows(&mut self) {
        let eps = self.p.epsilon;
        let m = self.p.cost.cols();
        for i in 0..self.f.len() {
            let lse = log_sum_exp((0..m).map(|j| (self.g[j] - self.p.cost.get(i, j)) / eps));
            self.f[i] = eps * self.p.row_marginal[i].ln() - eps * lse;
        }
    }

    fn update_cols(&mut self) {
        let eps = self.p.epsilon;
        let k = self.p.cost.rows();
        for j in 0..self.g.len() {
            let lse = log_sum_exp((0..k).map(|i| (self.f[i] - self.p.cost.get(i, j)) / eps));
            self.g[j] = eps * self.p.col_marginal[j].ln() - eps * lse;
        }
    }

    fn plan_entry(&self, i: usize, j: usize) -> f64 {
        self.log_plan(i, j).exp()
    }

    fn row_violation(&self) -> f64 {
        (0..self.f.len())
            .map(|i| {
                let s: f64 = (0..self.g.len()).map(|j| self.plan_entry(i, j)).sum();
                (s - self.p.row_marginal[i]).abs()
            })
            .sum()
    }

    fn dual(&self) -> f64 {
        let (k, m) = (self.f.len(), self.g.len());
        let mass: f64 = (0..k).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| self.plan_entry(i, j)).sum();
        let lin = |pot: &[f64], marg: &[f64]| pot.iter().zip(marg).filter(|(_, &w)| w > 0.0).map(|(p, w)| p * w).sum::<f64>();
        self.p.epsilon * mass - lin(&self.f, &self.p.row_marginal) - lin(&self.g, &self.p.col_marginal)
    }

    fn is_finite(&self) -> bool {
        // zero-mass marginals legitimately give −∞ potentials
        self.f.iter().chain(&self.g).all(|v| !v.is_nan() && *v != f64::INFINITY)
    }
}

/// Log-domain Sinkhorn iterations.
pub fn sinkhorn_plan(problem: &TransportProblem, opts: &SinkhornOptions) -> Result<TransportPlan> {
    problem.validate()?;
    if opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("sinkhorn needs max_iter >= 1 and tol > 0".into()));
    }
    let (k, m) = (problem.cost.rows(), problem.cost.cols());
    let mut pot = Potentials { p: problem, f: vec![0.0; k], g: vec![0.0; m] };
    let mut dual_trace = vec![pot.dual()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        pot.update_rows();
        pot.update_cols();
        iterations += 1;
        if !pot.is_finite() {
            return Err(Error::Numerical(format!(
                "sinkhorn scalings diverged after {iterations} iterations at epsilon = {:?}",
                problem.epsilon
            )));
        }
        dual_trace.push(pot.dual());
        if pot.row_violation() < opts.tol {
            converged = true;
            break;
        }
    }
    let mut plan = Matrix::zeros(k, m);
    let (mut transport_cost, mut neg_entropy) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..m {
            let lp = pot.log_plan(i, j);
            let x = lp.exp();
            plan.set(i, j, x);
            transport_cost += problem.cost.get(i, j) * x;
            if x > 0.0 {
                neg_entropy += x * (lp - 1.0);
            }
        }
    }
    if !plan.is_finite() || !transport_cost.is_finite() {
        return Err(Error::Numerical(format!("sinkhorn produced a non-finite plan at epsilon = {:?}", problem.epsilon)));
    }
    Ok(TransportPlan {
        plan,
        objective: transport_cost + problem.epsilon * neg_entropy,
        transport_cost,
        iterations,
        converged,
        dual_trace,
    })
}

/// Per-class means of the rows of `h`, for the classes present in `labels`
/// sorted by class index.
pub struct ClassCenters {
    pub centers: Tensor,
    pub classes: Vec<usize>,
    pub counts: Vec<usize>,
}

pub fn class_centers(h: &Tensor, labels: &[usize]) -> Result<ClassCenters> {
    let b = h.shape().first().copied().unwrap_or(0);
    if b == 0 || h.shape().len() != 2 {
        return Err(Error::InvalidArgument("class centers of an empty batch".into()));
    }
    if labels.len() != b {
        return Err(Error::dim("class_centers", format!("{} labels for {b} rows", labels.len())));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut counts = vec![0usize; classes.len()];
    let slot: Vec<usize> = labels.iter().map(|y| classes.binary_search(y).expect("present")).collect();
    for &s in &slot {
        counts[s] += 1;
    }
    let mut avg = vec![0.0; classes.len() * b];
    for (i, &s) in slot.iter().enumerate() {
        avg[s * b + i] = 1.0 / counts[s] as f64;
    }
    let avg = h.graph().constant(vec![classes.len(), b], avg)?;
    Ok(ClassCenters { centers: avg.matmul(h)?, classes, counts })
}

/// `dis[i, j] = ‖aᵢ − bⱼ‖²`.
pub fn cost_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.pairwise_sq_dist(b)
}

pub struct Alignment {
    /// `Σ xᵢⱼ·disᵢⱼ` with the plan held constant.
    pub loss: Tensor,
    pub plan: TransportPlan,
    pub classes: Vec<usize>,
}

/// Transport cost between the batch class centers of `h_pred` and the
/// attribute rows of the same classes, under uniform marginals.
///
/// The plan is treated as a constant, so gradients reach `h_pred` only
/// through the cost matrix.
pub fn alignment_loss(h_pred: &Tensor, labels: &[usize], attributes: &Matrix, epsilon: f64, opts: &SinkhornOptions) -> Result<Alignment> {
    let cc = class_centers(h_pred, labels)?;
    if let Some(&y) = cc.classes.iter().find(|&&y| y >= attributes.rows()) {
        return Err(Error::InvalidArgument(format!("label {y} has no attribute row")));
    }
    let target = h_pred.graph().constant_matrix(&attributes.gather_rows(&cc.classes));
    let cost = cost_matrix(&cc.centers, &target)?;
    if !cost.is_finite() {
        return Err(Error::Numerical("alignment cost matrix is not finite".into()));
    }
    let problem = TransportProblem::uniform(cost.to_matrix()?, epsilon)?;
    let plan = sinkhorn_plan(&problem, opts)?;
    let weights = h_pred.graph().constant_matrix(&plan.plan);
    let loss = cost.mul(&weights)?.sum();
    Ok(Alignment { loss, plan, classes: cc.classes })
}
