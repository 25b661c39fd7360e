use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::gradients::{accuracy, grad_alpha, GradientTerms};
use crate::network::{normalize, normalize_l1, IntegrateOptions, Network, NetworkParams, StructuredWeights};
use crate::projection::{max_block_deviation, project_weights, ALPHA_FLOOR};
use crate::sampling::{rng, uniform_dvector};

/// How a gradient is turned into a weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// `w ← w − η ∂E/∂w` on the unsquared loss. The gradient keeps unit
    /// scale as `E → 0`, so the iterate settles into a cycle of size `O(η)`.
    Plain,
    /// `w ← w − η E ∂E/∂w`, the gradient of `E²/2`; the step shrinks with the
    /// loss.
    LossScaled,
}

/// Which norms are kept below `γ/μ` after every update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormGuard {
    /// `‖W‖₁ < γ/μ`: unique equilibrium, contraction of the flow in the
    /// 1-norm.
    ColumnSum,
    /// Both `‖W‖₁` and `‖W‖_∞` below `γ/μ`.
    Both,
    /// No rescaling after initialization.
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub target: DVector<f64>,
    pub lr_min: f64,
    pub lr_max: f64,
    pub lr_init: f64,
    pub proj_period: usize,
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub ablate_projection: bool,
    pub learn_alpha: bool,
    pub step_rule: StepRule,
    /// Heavy-ball coefficient; 0 gives plain gradient descent.
    pub momentum: f64,
    pub norm_guard: NormGuard,
    pub integrate: IntegrateOptions,
}

impl TrainConfig {
    pub fn new(target: DVector<f64>) -> Self {
        Self {
            target,
            lr_min: 0.002,
            lr_max: 0.2,
            lr_init: 0.02,
            proj_period: 10,
            tol: 1e-5,
            max_epochs: 25_000,
            seed: 0,
            ablate_projection: false,
            learn_alpha: true,
            step_rule: StepRule::LossScaled,
            momentum: 0.9,
            norm_guard: NormGuard::Off,
            integrate: IntegrateOptions::default(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.target.len() != dim {
            return bad(format!("target has length {}, expected {dim}", self.target.len()));
        }
        if !self.target.iter().all(|x| x.is_finite()) {
            return bad("target has non-finite entries".into());
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return bad(format!("need 0 < lr_min <= lr_max, got [{}, {}]", self.lr_min, self.lr_max));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.proj_period == 0 {
            return bad("proj_period must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub max_abs_error: f64,
    /// Learning rate used for this epoch's update.
    pub lr: f64,
    /// On projection-period epochs: the largest block distance from the
    /// adjoint image before projecting, and after.
    pub deviation_before: Option<f64>,
    pub deviation_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainOutcome {
    Converged,
    MaxEpochs,
    Aborted(String),
}

#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub epochs: Vec<EpochStats>,
    pub outcome: TrainOutcome,
    pub final_weights: StructuredWeights,
    pub final_equilibrium: DVector<f64>,
    pub final_block_deviation: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl TrainRecord {
    pub fn converged(&self) -> bool {
        self.outcome == TrainOutcome::Converged
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.loss)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.accuracy)
    }
}

/// Consecutive singular sensitivity solves tolerated before a run aborts.
const MAX_SINGULAR_RUN: usize = 5;

fn guard_norm(w: StructuredWeights, params: &NetworkParams, guard: NormGuard) -> StructuredWeights {
    let bound = params.gamma / params.mu;
    match guard {
        NormGuard::ColumnSum if w.norm1() >= bound => normalize_l1(&w, params),
        NormGuard::Both if w.norm1().max(w.norm_inf()) >= bound => normalize(&w, params),
        _ => w,
    }
}

/// State accepted at the end of an epoch.
struct Accepted {
    w: StructuredWeights,
    xi: DVector<f64>,
    terms: GradientTerms,
}

enum Evaluation {
    Ok(DVector<f64>, GradientTerms),
    Failed(Error),
}

fn evaluate(w: &StructuredWeights, params: &NetworkParams, warm: &DVector<f64>, cfg: &TrainConfig) -> Result<Evaluation> {
    let net = Network::new(w, params)?;
    let xi = match net.solve_equilibrium(warm, &cfg.integrate) {
        Ok(x) => x,
        Err(e) => return Ok(Evaluation::Failed(e)),
    };
    Ok(match GradientTerms::new(&net, &xi, &cfg.target) {
        Ok(t) => Evaluation::Ok(xi, t),
        Err(e) => Evaluation::Failed(e),
    })
}

/// Accumulated update for the heavy-ball step, in assembled-weight and
/// strength coordinates.
struct Velocity {
    w: DMatrix<f64>,
    alpha: DMatrix<f64>,
}

impl Velocity {
    fn zeros(n: usize) -> Self {
        Self { w: DMatrix::zeros(6 * n, 6 * n), alpha: DMatrix::zeros(n, n) }
    }

    fn reset(&mut self) {
        self.w.fill(0.0);
        self.alpha.fill(0.0);
    }
}

fn apply_step(w: &mut StructuredWeights, v: &mut Velocity, terms: &GradientTerms, lr: f64, cfg: &TrainConfig) -> Vec<String> {
    let n = w.n_neurons();
    let scale = match cfg.step_rule {
        StepRule::Plain => lr,
        StepRule::LossScaled => lr * terms.loss,
    };
    let grad_w = terms.weight_gradient();
    let grad_a = cfg.learn_alpha.then(|| grad_alpha(w, &grad_w).expect("gradient matches weight shape"));
    v.w *= cfg.momentum;
    v.w += grad_w * scale;
    let alpha = w.alpha().clone();
    for i in 0..n {
        for j in 0..n {
            let a = alpha[(i, j)];
            if a.abs() < ALPHA_FLOOR {
                continue;
            }
            let g = v.w.view((6 * i, 6 * j), (6, 6));
            w.blocks_mut()[i * n + j] -= g / a;
        }
    }
    match grad_a {
        Some(ga) => {
            v.alpha *= cfg.momentum;
            v.alpha += ga.grad * scale;
            *w.alpha_mut() -= &v.alpha;
            ga.warnings
        }
        None => Vec::new(),
    }
}

fn finite(w: &StructuredWeights) -> bool {
    w.alpha().iter().chain(w.blocks().iter().flat_map(|b| b.iter())).all(|x| x.is_finite())
}

/// Gradient descent on the equilibrium error with periodic block-wise
/// projection onto the adjoint image.
///
/// Epoch `k` projects first when `k` is a multiple of the period, then solves
/// the dynamics to equilibrium (warm-started from the previous epoch) and
/// records loss and accuracy. A projection epoch whose equilibrium meets the
/// tolerance ends the run. Otherwise all weights step from the same
/// sensitivity solve.
///
/// The learning rate grows by 1.2 after a decrease in loss. An increase in
/// loss outside projection epochs, or an equilibrium that cannot be found,
/// undoes the previous step and halves the rate. At `lr_min` an increase is
/// kept and a failed solve aborts the run.
pub fn train(w0: &StructuredWeights, params: &NetworkParams, cfg: &TrainConfig) -> Result<TrainRecord> {
    params.validate()?;
    cfg.validate(w0.dim())?;

    let mut w = w0.clone();
    let mut warnings = Vec::new();
    let mut epochs = Vec::new();
    let mut lr = cfg.lr_init.clamp(cfg.lr_min, cfg.lr_max);
    let mut prev: Option<Accepted> = None;
    let mut singular_run = 0;
    let mut velocity = Velocity::zeros(w0.n_neurons());

    let finish = |w: StructuredWeights, xi: DVector<f64>, epochs, warnings, outcome| TrainRecord {
        final_block_deviation: max_block_deviation(&w),
        epochs,
        outcome,
        final_weights: w,
        final_equilibrium: xi,
        seed: cfg.seed,
        warnings,
    };
    let start = params.bias.clone() * (params.mu / params.gamma);

    for k in 1..=cfg.max_epochs {
        let checkpoint = k % cfg.proj_period == 0;
        let (mut dev_before, mut dev_after) = (None, None);
        if checkpoint {
            dev_before = Some(max_block_deviation(&w));
            if !cfg.ablate_projection {
                let projected = project_weights(&w);
                warnings.extend(projected.warnings);
                w = guard_norm(projected.weights, params, cfg.norm_guard);
                dev_after = Some(max_block_deviation(&w));
            }
        }

        let warm = prev.as_ref().map_or(&start, |p| &p.xi);
        let eval = evaluate(&w, params, warm, cfg)?;
        let can_retry = lr > cfg.lr_min && prev.is_some();
        let can_undo = !checkpoint && can_retry;
        let current = match eval {
            Evaluation::Ok(xi, terms) => {
                let prev_loss = prev.as_ref().map_or(f64::INFINITY, |p| p.terms.loss);
                if terms.loss > prev_loss && can_undo {
                    lr = (lr * 0.5).max(cfg.lr_min);
                    velocity.reset();
                    prev.take().expect("checked above")
                } else {
                    if terms.loss < prev_loss {
                        lr = (lr * 1.2).min(cfg.lr_max);
                    }
                    singular_run = 0;
                    Accepted { w, xi, terms }
                }
            }
            Evaluation::Failed(_) if can_retry => {
                lr = (lr * 0.5).max(cfg.lr_min);
                velocity.reset();
                prev.take().expect("checked above")
            }
            Evaluation::Failed(Error::SingularSensitivity) if singular_run + 1 < MAX_SINGULAR_RUN && prev.is_some() => {
                singular_run += 1;
                let msg = format!("epoch {k}: singular sensitivity, step skipped");
                log::warn!("{msg}");
                warnings.push(msg);
                prev.take().expect("checked above")
            }
            Evaluation::Failed(e) => {
                let xi = prev.map_or(start, |p| p.xi);
                return Ok(finish(w, xi, epochs, warnings, TrainOutcome::Aborted(format!("epoch {k}: {e}"))));
            }
        };

        let delta = &current.xi - &cfg.target;
        let max_abs_error = delta.amax();
        let acc = accuracy(&current.xi, &cfg.target, cfg.tol);
        epochs.push(EpochStats {
            epoch: k,
            loss: current.terms.loss,
            accuracy: acc,
            max_abs_error,
            lr,
            deviation_before: dev_before,
            deviation_after: dev_after,
        });

        if checkpoint && max_abs_error < cfg.tol && acc == 1.0 && current.terms.loss < cfg.tol {
            return Ok(finish(current.w, current.xi, epochs, warnings, TrainOutcome::Converged));
        }

        w = current.w.clone();
        if current.terms.loss > 0.0 {
            warnings.extend(apply_step(&mut w, &mut velocity, &current.terms, lr, cfg));
            if !finite(&w) {
                let msg = format!("epoch {k}: weights became non-finite");
                return Ok(finish(current.w, current.xi, epochs, warnings, TrainOutcome::Aborted(msg)));
            }
            w = guard_norm(w, params, cfg.norm_guard);
        }
        prev = Some(current);
    }

    let last = prev.expect("at least one epoch ran");
    Ok(finish(last.w, last.xi, epochs, warnings, TrainOutcome::MaxEpochs))
}

/// A reproducible training problem: initial weights, dynamics parameters and
/// configuration drawn from one seeded generator.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub weights: StructuredWeights,
    pub params: NetworkParams,
    pub config: TrainConfig,
}

/// `w ~ U(-1, 1)` rescaled to `W / (ε + ‖W‖₁)` with `ε = 1e-12`. The
/// strengths start at `1/N` and the blocks carry the rest of the scale, so
/// after the first projection every row of rotation blocks has total gain 1.
pub fn initial_weights<R: rand::Rng>(n_neurons: usize, rng: &mut R) -> StructuredWeights {
    let raw = StructuredWeights::random_uniform(n_neurons, rng);
    let n = n_neurons as f64;
    raw.scale_blocks(n / (1e-12 + raw.norm1())).scale_alpha(1.0 / n)
}

impl Experiment {
    /// `γ = μ = 1`, bias `0.125`, weights from [`initial_weights`], target
    /// `U(-0.8, 0.8)`. The weights are drawn before the target.
    pub fn reference(n_neurons: usize, seed: u64) -> Self {
        let mut rng = rng(seed);
        let params = NetworkParams::uniform_bias(n_neurons, 1.0, 1.0, 0.125);
        let weights = initial_weights(n_neurons, &mut rng);
        let target = uniform_dvector(&mut rng, 6 * n_neurons, -0.8, 0.8);
        let mut config = TrainConfig::new(target);
        config.seed = seed;
        Self { weights, params, config }
    }

    pub fn run(&self) -> Result<TrainRecord> {
        train(&self.weights, &self.params, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::linear_rep;
    use crate::network::find_equilibrium;
    use crate::sampling::random_pose;
    use nalgebra::DMatrix;

    #[test]
    fn rejects_bad_config() {
        let e = Experiment::reference(1, 0);
        let mut cfg = e.config.clone();
        cfg.proj_period = 0;
        assert!(train(&e.weights, &e.params, &cfg).is_err());
        let mut cfg = e.config.clone();
        cfg.target = DVector::zeros(3);
        assert!(train(&e.weights, &e.params, &cfg).is_err());
        let mut cfg = e.config.clone();
        cfg.lr_min = 1.0;
        assert!(train(&e.weights, &e.params, &cfg).is_err());
    }

    #[test]
    fn target_at_current_equilibrium_stops_at_first_checkpoint() {
        let mut rng = rng(50);
        let params = NetworkParams::uniform_bias(2, 1.0, 1.0, 0.125);
        let blocks: Vec<_> = (0..4).map(|_| *linear_rep(&random_pose(&mut rng)).matrix()).collect();
        let w = StructuredWeights::new(DMatrix::from_element(2, 2, 0.05), blocks).unwrap();
        let target = find_equilibrium(&w, &params).unwrap();
        let mut cfg = TrainConfig::new(target);
        cfg.proj_period = 5;
        let rec = train(&w, &params, &cfg).unwrap();
        assert!(rec.converged());
        assert_eq!(rec.epochs.len(), 5);
        assert!(rec.final_loss() < cfg.tol);
    }

    #[test]
    fn ablation_keeps_unstructured_blocks() {
        let e = Experiment::reference(1, 51);
        let mut cfg = e.config.clone();
        cfg.target = find_equilibrium(&e.weights, &e.params).unwrap();
        cfg.ablate_projection = true;
        let rec = train(&e.weights, &e.params, &cfg).unwrap();
        assert!(rec.converged());
        for (a, b) in rec.final_weights.blocks().iter().zip(e.weights.blocks()) {
            assert!((a - b).amax() < 1e-6);
        }
        assert!(rec.final_block_deviation > 1e-2);
    }

    #[test]
    fn small_network_learns_reachable_target() {
        let mut rng = rng(52);
        let params = NetworkParams::uniform_bias(2, 1.0, 1.0, 0.125);
        let blocks: Vec<_> = (0..4).map(|_| *linear_rep(&random_pose(&mut rng)).matrix()).collect();
        let teacher = normalize(&StructuredWeights::new(DMatrix::from_element(2, 2, 1.0), blocks).unwrap(), &params);
        let mut e = Experiment::reference(2, 52);
        e.config.target = find_equilibrium(&teacher, &params).unwrap();
        let rec = e.run().unwrap();
        assert!(rec.converged(), "outcome {:?} after {} epochs", rec.outcome, rec.epochs.len());
        assert!(rec.final_block_deviation < 1e-8);
        assert!((rec.final_equilibrium.clone() - &e.config.target).amax() < e.config.tol);
    }
}
