use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::network::{Activation, Network, NetworkParams, StructuredWeights, Trajectory};

/// Finite-difference smoothness measurements along a trajectory, next to the
/// analytic bounds on `‖ξ̈‖_∞` and the per-component curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub samples: usize,
    /// `max_t ‖ξ(t)‖_∞`.
    pub r_xi: f64,
    pub norm_inf_w: f64,
    /// Activation Lipschitz constant used in the bound.
    pub lipschitz: f64,
    pub max_second_derivative: f64,
    /// `(γ + μL‖W‖_∞)(γR_ξ + μ‖W‖_∞‖φ‖_∞ + μ‖b‖_∞)`.
    pub second_derivative_bound: f64,
    /// Largest `κ_i = |ξ̈_i| / (1 + ξ̇_i²)^{3/2}` over components and samples.
    pub max_curvature: f64,
    pub per_component_max_curvature: Vec<f64>,
    /// `2γ(γR_ξ + γ + μ b_max)`, valid when `‖W‖_∞ < γ/μ`.
    pub curvature_bound: f64,
    pub curvature_bound_applies: bool,
    pub within_bound: bool,
}

/// Central differences on a possibly non-uniform grid; returns first and
/// second derivative estimates at interior samples.
fn differences(times: &[f64], states: &[DVector<f64>]) -> Vec<(DVector<f64>, DVector<f64>)> {
    (1..times.len() - 1)
        .map(|k| {
            let h1 = times[k] - times[k - 1];
            let h2 = times[k + 1] - times[k];
            let back = (&states[k] - &states[k - 1]) / h1;
            let fwd = (&states[k + 1] - &states[k]) / h2;
            let first = (&back * h2 + &fwd * h1) / (h1 + h2);
            let second = (fwd - back) * (2.0 / (h1 + h2));
            (first, second)
        })
        .collect()
}

pub fn curvature_diagnostic(
    traj: &Trajectory,
    w: &StructuredWeights,
    params: &NetworkParams,
) -> Result<CurvatureReport> {
    if traj.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "curvature needs at least 3 samples, got {}",
            traj.len()
        )));
    }
    let net = Network::new(w, params)?;
    let norm_inf_w = w.norm_inf();
    let r_xi = traj.states.iter().map(|s| s.amax()).fold(0.0, f64::max);
    let b_inf = params.bias.amax();
    let b_max = params.bias.max();

    let (lipschitz, phi_bound) = match params.activation {
        Activation::Tanh => (1.0, 1.0),
        // Φ shrinks every entry (scale ≤ 1), so ‖Φ(ξ)‖_∞ ≤ R_ξ; the Lipschitz
        // constant is taken from the Jacobians observed along the path.
        Activation::Equivariant { .. } => {
            let l = traj
                .states
                .iter()
                .map(|s| super::norm_inf(&net.activation_jacobian(s)))
                .fold(0.0, f64::max);
            (l, r_xi)
        }
    };
    let (g, m) = (params.gamma, params.mu);
    let second_derivative_bound =
        (g + m * lipschitz * norm_inf_w) * (g * r_xi + m * norm_inf_w * phi_bound + m * b_inf);
    let curvature_bound = 2.0 * g * (g * r_xi + g + m * b_max);

    let dim = net.dim();
    let mut per_component = vec![0.0f64; dim];
    let mut max_second = 0.0f64;
    for (first, second) in differences(&traj.times, &traj.states) {
        max_second = max_second.max(second.amax());
        for i in 0..dim {
            let kappa = second[i].abs() / (1.0 + first[i] * first[i]).powf(1.5);
            per_component[i] = per_component[i].max(kappa);
        }
    }
    let max_curvature = per_component.iter().copied().fold(0.0, f64::max);
    let curvature_bound_applies = norm_inf_w < g / m;
    let within_bound = max_second <= second_derivative_bound
        && max_curvature <= max_second
        && (!curvature_bound_applies || max_curvature < curvature_bound);

    Ok(CurvatureReport {
        samples: traj.len(),
        r_xi,
        norm_inf_w,
        lipschitz,
        max_second_derivative: max_second,
        second_derivative_bound,
        max_curvature,
        per_component_max_curvature: per_component,
        curvature_bound,
        curvature_bound_applies,
        within_bound,
    })
}

/// `V(t) = (1/2γ) ‖ξ(t) − ξ*‖²` at every trajectory sample.
pub fn lyapunov_series(traj: &Trajectory, equilibrium: &DVector<f64>, gamma: f64) -> Vec<f64> {
    traj.states
        .iter()
        .map(|s| (s - equilibrium).norm_squared() / (2.0 * gamma))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::IntegrateOptions;

    #[test]
    fn too_few_samples() {
        let traj = Trajectory {
            times: vec![0.0, 1.0],
            states: vec![DVector::zeros(6); 2],
            converged: false,
            equilibrium: None,
        };
        let p = NetworkParams::uniform_bias(1, 1.0, 1.0, 0.1);
        assert!(matches!(
            curvature_diagnostic(&traj, &StructuredWeights::zeros(1), &p),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn scalar_linear_case() {
        // W = 0: ξ(t) = c + (ξ₀ − c)e^{−γt}, so ξ̈ = γ²(ξ₀ − c)e^{−γt}.
        let (gamma, c) = (2.0, 0.3);
        let p = NetworkParams::uniform_bias(1, gamma, gamma, c);
        let w = StructuredWeights::zeros(1);
        let net = Network::new(&w, &p).unwrap();
        let xi0 = DVector::from_element(6, -1.0);
        let traj = net.integrate(&xi0, &IntegrateOptions::sampled(4.0, 0.01)).unwrap();
        let report = curvature_diagnostic(&traj, &w, &p).unwrap();
        let exact_peak = gamma * gamma * (xi0[0] - c).abs() * (-gamma * 0.01f64).exp();
        assert!((report.max_second_derivative - exact_peak).abs() < 1e-3 * exact_peak);
        assert!(report.within_bound);
        assert!(report.max_curvature <= report.max_second_derivative);
    }

    #[test]
    fn lyapunov_of_linear_decay_is_monotone() {
        let p = NetworkParams::uniform_bias(1, 1.0, 1.0, 0.2);
        let net = Network::new(&StructuredWeights::zeros(1), &p).unwrap();
        let traj = net.integrate(&DVector::from_element(6, 1.0), &IntegrateOptions::default()).unwrap();
        let v = lyapunov_series(&traj, &DVector::from_element(6, 0.2), 1.0);
        assert!(v.windows(2).all(|w| w[1] <= w[0]));
    }
}
