//! Continuous-time dynamics `dξ/dt = −γξ + μWφ(ξ) + μb` on `R^{6N}`.
//!
//! State vectors use plain indices `I = 6i + a`: neuron `i` owns entries
//! `6i..6i+6`, ordered `[ω v]`.

mod diagnostics;
pub mod ode;
mod weights;

pub use diagnostics::{curvature_diagnostic, lyapunov_series, CurvatureReport};
pub use weights::{
    assemble, disassemble, norm1, norm_inf, normalize, normalize_l1, stability_check,
    stability_check_matrix, StabilityReport, StructuredWeights, NORM_MARGIN,
};

use nalgebra::{DMatrix, DVector, Vector6};

use crate::error::{Error, Result};
use crate::geometry::Twist;
use ode::{dormand_prince, Flow, OdeOutcome, StepControl};

pub type NetworkState = DVector<f64>;

pub fn plain_index(neuron: usize, component: usize) -> usize {
    6 * neuron + component
}

pub fn block_index(plain: usize) -> (usize, usize) {
    (plain / 6, plain % 6)
}

pub fn state_block(xi: &DVector<f64>, neuron: usize) -> Vector6<f64> {
    xi.fixed_rows::<6>(6 * neuron).into()
}

/// Default `ε` of the adjoint-equivariant activation.
pub const EQUIVARIANT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// Entrywise hyperbolic tangent.
    Tanh,
    /// Per-neuron `Φ(X) = tanh(‖ω‖)/(‖ω‖ + ε) · X`, which commutes with the
    /// adjoint action.
    Equivariant { eps: f64 },
}

impl Activation {
    pub fn equivariant() -> Self {
        Activation::Equivariant { eps: EQUIVARIANT_EPS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub gamma: f64,
    pub mu: f64,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl NetworkParams {
    /// Every bias entry set to `b`, tanh activation.
    pub fn uniform_bias(n_neurons: usize, gamma: f64, mu: f64, b: f64) -> Self {
        Self {
            gamma,
            mu,
            bias: DVector::from_element(6 * n_neurons, b),
            activation: Activation::Tanh,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be finite and positive, got {}", self.gamma)));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be finite and positive, got {}", self.mu)));
        }
        if !self.bias.iter().all(|b| b.is_finite()) {
            return Err(Error::InvalidArgument("bias has non-finite entries".into()));
        }
        if let Activation::Equivariant { eps } = self.activation {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!("activation eps must be positive, got {eps}")));
            }
        }
        Ok(())
    }
}

fn equivariant_scale(omega_norm: f64, eps: f64) -> f64 {
    omega_norm.tanh() / (omega_norm + eps)
}

/// `Φ(X) = tanh(‖ω‖)/(‖ω‖ + ε) · X`.
pub fn equivariant_activation(x: &Twist, eps: f64) -> Twist {
    let s = equivariant_scale(x.omega.norm(), eps);
    Twist::new(x.omega * s, x.v * s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<NetworkState>,
    pub converged: bool,
    pub equilibrium: Option<NetworkState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&NetworkState> {
        self.states.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub control: StepControl,
    /// `‖F(ξ)‖_∞` threshold for equilibrium detection.
    pub eq_tol: f64,
    /// Consecutive accepted steps below `eq_tol` required to declare
    /// convergence.
    pub eq_consecutive: usize,
    pub stop_at_equilibrium: bool,
    /// When set, only these times (and `t = 0`) are recorded and the
    /// integrator lands on each exactly; otherwise every accepted step is
    /// recorded.
    pub sample_times: Option<Vec<f64>>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            t_end: 50.0,
            control: StepControl::default(),
            eq_tol: 1e-9,
            eq_consecutive: 3,
            stop_at_equilibrium: true,
            sample_times: None,
        }
    }
}

impl IntegrateOptions {
    /// Uniform samples `dt, 2dt, …` up to `t_end`, integrated through the
    /// whole horizon.
    pub fn sampled(t_end: f64, dt: f64) -> Self {
        let n = (t_end / dt).round() as usize;
        Self {
            t_end,
            stop_at_equilibrium: false,
            sample_times: Some((1..=n).map(|k| k as f64 * dt).collect()),
            ..Default::default()
        }
    }
}

/// A network with its weight matrix assembled once.
#[derive(Debug, Clone)]
pub struct Network {
    w: DMatrix<f64>,
    params: NetworkParams,
}

impl Network {
    pub fn new(weights: &StructuredWeights, params: &NetworkParams) -> Result<Self> {
        Self::from_matrix(weights.assemble(), params)
    }

    pub fn from_matrix(w: DMatrix<f64>, params: &NetworkParams) -> Result<Self> {
        params.validate()?;
        if w.nrows() != w.ncols() || !w.nrows().is_multiple_of(6) || w.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "weight matrix must be square with a multiple of 6 rows, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if params.bias.len() != w.nrows() {
            return Err(Error::InvalidArgument(format!(
                "bias has length {}, expected {}",
                params.bias.len(),
                w.nrows()
            )));
        }
        Ok(Self { w, params: params.clone() })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_neurons(&self) -> usize {
        self.w.nrows() / 6
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    fn check_state(&self, xi: &DVector<f64>) -> Result<()> {
        if xi.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "state has length {}, expected {}",
                xi.len(),
                self.dim()
            )));
        }
        if !xi.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("state has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn activate(&self, xi: &DVector<f64>) -> DVector<f64> {
        match self.params.activation {
            Activation::Tanh => xi.map(f64::tanh),
            Activation::Equivariant { eps } => {
                let mut out = xi.clone();
                for i in 0..self.n_neurons() {
                    let omega = xi.fixed_rows::<3>(6 * i).norm();
                    out.fixed_rows_mut::<6>(6 * i).scale_mut(equivariant_scale(omega, eps));
                }
                out
            }
        }
    }

    /// `J_φ(ξ)`: diagonal for tanh, block-diagonal for the equivariant
    /// activation.
    pub fn activation_jacobian(&self, xi: &DVector<f64>) -> DMatrix<f64> {
        match self.params.activation {
            Activation::Tanh => DMatrix::from_diagonal(&xi.map(|x| 1.0 - x.tanh().powi(2))),
            Activation::Equivariant { eps } => {
                let n = self.dim();
                let mut j = DMatrix::zeros(n, n);
                for i in 0..self.n_neurons() {
                    let x: Vector6<f64> = xi.fixed_rows::<6>(6 * i).into();
                    let r = x.fixed_rows::<3>(0).norm();
                    let s = equivariant_scale(r, eps);
                    let mut blk = nalgebra::Matrix6::identity() * s;
                    if r > 0.0 {
                        let ds = ((1.0 - r.tanh().powi(2)) * (r + eps) - r.tanh()) / (r + eps).powi(2);
                        // ∂Φ/∂ω adds x ⊗ (ds/dr · ω/r)
                        for a in 0..6 {
                            for b in 0..3 {
                                blk[(a, b)] += x[a] * ds * x[b] / r;
                            }
                        }
                    }
                    j.view_mut((6 * i, 6 * i), (6, 6)).copy_from(&blk);
                }
                j
            }
        }
    }

    pub fn vector_field_into(&self, xi: &DVector<f64>, out: &mut DVector<f64>) {
        let phi = self.activate(xi);
        let p = &self.params;
        out.gemv(p.mu, &self.w, &phi, 0.0);
        out.axpy(-p.gamma, xi, 1.0);
        out.axpy(p.mu, &p.bias, 1.0);
    }

    pub fn vector_field(&self, xi: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.vector_field_into(xi, &mut out);
        out
    }

    /// `‖γξ − μWφ(ξ) − μb‖_∞`.
    pub fn residual(&self, xi: &DVector<f64>) -> f64 {
        self.vector_field(xi).amax()
    }

    pub fn integrate(&self, xi0: &DVector<f64>, opts: &IntegrateOptions) -> Result<Trajectory> {
        self.check_state(xi0)?;
        if !(opts.t_end > 0.0) {
            return Err(Error::InvalidArgument(format!("t_end must be positive, got {}", opts.t_end)));
        }
        let stops: Vec<f64> = opts
            .sample_times
            .as_ref()
            .map(|s| s.iter().copied().filter(|&t| t > 0.0 && t <= opts.t_end).collect())
            .unwrap_or_default();
        let record_all = opts.sample_times.is_none();

        let mut traj = Trajectory {
            times: vec![0.0],
            states: vec![xi0.clone()],
            converged: false,
            equilibrium: None,
        };
        let mut below = 0usize;
        let outcome = dormand_prince(
            |y, dy| self.vector_field_into(y, dy),
            0.0,
            xi0,
            opts.t_end,
            &stops,
            &opts.control,
            |t, y, f, on_stop| {
                if record_all || on_stop {
                    traj.times.push(t);
                    traj.states.push(y.clone());
                }
                if f.amax() < opts.eq_tol {
                    below += 1;
                } else {
                    below = 0;
                }
                if opts.stop_at_equilibrium && below >= opts.eq_consecutive {
                    if !record_all && !on_stop {
                        traj.times.push(t);
                        traj.states.push(y.clone());
                    }
                    Flow::Stop
                } else {
                    Flow::Continue
                }
            },
        );
        traj.converged = below >= opts.eq_consecutive;
        if traj.converged {
            traj.equilibrium = traj.states.last().cloned();
        }
        let failure = match outcome {
            OdeOutcome::Finished { .. } => return Ok(traj),
            OdeOutcome::StepUnderflow { t, h } => (t, format!("step size {h:e} below floor")),
            OdeOutcome::NonFinite { t } => (t, "state became non-finite".to_string()),
            OdeOutcome::TooManySteps { t } => (t, "step budget exhausted".to_string()),
        };
        Err(Error::IntegrationFailure {
            t: failure.0,
            reason: failure.1,
            partial: Box::new(traj),
        })
    }

    /// Fixed point of `T(ξ) = (μ/γ)(Wφ(ξ) + b)`, iterated from `(μ/γ)b` until
    /// successive iterates differ by less than `1e-12` in the max norm.
    /// Refuses when the column-sum condition fails.
    pub fn find_equilibrium(&self) -> Result<NetworkState> {
        let p = &self.params;
        let report = stability_check_matrix(&self.w, p);
        if !report.column_ok {
            return Err(Error::NotAContraction {
                column_sum: report.norm1,
                bound: p.gamma / p.mu,
            });
        }
        let ratio = p.mu / p.gamma;
        let mut xi = &p.bias * ratio;
        let mut next = DVector::zeros(self.dim());
        for _ in 0..1_000_000 {
            let phi = self.activate(&xi);
            next.copy_from(&p.bias);
            next.gemv(1.0, &self.w, &phi, 1.0);
            next *= ratio;
            let step = (&next - &xi).amax();
            std::mem::swap(&mut xi, &mut next);
            if step < 1e-12 {
                return Ok(xi);
            }
        }
        Err(Error::NotAContraction {
            column_sum: report.norm1,
            bound: p.gamma / p.mu,
        })
    }

    /// Newton refinement of an approximate equilibrium. Returns `None` when
    /// the Jacobian is singular or the iteration does not reduce the residual
    /// below `tol`.
    pub fn newton_polish(&self, xi: &DVector<f64>, tol: f64) -> Option<NetworkState> {
        let p = &self.params;
        let mut x = xi.clone();
        for _ in 0..8 {
            let f = self.vector_field(&x);
            if f.amax() <= tol {
                return Some(x);
            }
            let mut jac = &self.w * self.activation_jacobian(&x) * p.mu;
            for k in 0..self.dim() {
                jac[(k, k)] -= p.gamma;
            }
            let dx = jac.lu().solve(&f)?;
            x -= dx;
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }
        }
        (self.residual(&x) <= tol).then_some(x)
    }

    /// Equilibrium by integration from `warm`, polished with Newton steps.
    /// Falls back to the fixed-point iteration when the flow has not settled
    /// within the horizon.
    pub fn solve_equilibrium(&self, warm: &DVector<f64>, opts: &IntegrateOptions) -> Result<NetworkState> {
        const POLISH_TOL: f64 = 1e-13;
        let traj = self.integrate(warm, opts)?;
        let end = traj.final_state().expect("trajectory has the initial state");
        if let Some(x) = self.newton_polish(end, POLISH_TOL) {
            return Ok(x);
        }
        let x = self.find_equilibrium()?;
        Ok(self.newton_polish(&x, POLISH_TOL).unwrap_or(x))
    }
}

/// Right-hand side of the dynamics.
pub fn vector_field(xi: &DVector<f64>, w: &StructuredWeights, params: &NetworkParams) -> Result<DVector<f64>> {
    let net = Network::new(w, params)?;
    net.check_state(xi)?;
    Ok(net.vector_field(xi))
}

pub fn integrate(
    xi0: &DVector<f64>,
    w: &StructuredWeights,
    params: &NetworkParams,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    Network::new(w, params)?.integrate(xi0, opts)
}

pub fn find_equilibrium(w: &StructuredWeights, params: &NetworkParams) -> Result<NetworkState> {
    Network::new(w, params)?.find_equilibrium()
}
