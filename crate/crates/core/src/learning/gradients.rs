use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{Network, NetworkParams, StructuredWeights};
use crate::projection::ALPHA_FLOOR;

/// `E = ‖ξ* − ξ_d‖₂`.
pub fn loss(xi_star: &DVector<f64>, target: &DVector<f64>) -> Result<f64> {
    if xi_star.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "equilibrium has length {}, target {}",
            xi_star.len(),
            target.len()
        )));
    }
    Ok((xi_star - target).norm())
}

/// Fraction of entries with `|ξ*_i − ξ_d,i| < tol`.
pub fn accuracy(xi_star: &DVector<f64>, target: &DVector<f64>, tol: f64) -> f64 {
    let hits = xi_star.iter().zip(target.iter()).filter(|(a, b)| (*a - *b).abs() < tol).count();
    hits as f64 / xi_star.len().max(1) as f64
}

/// `S = I − (μ/γ) W J_φ(ξ*)`.
pub fn sensitivity(net: &Network, xi_star: &DVector<f64>) -> DMatrix<f64> {
    let p = net.params();
    let mut s = net.weights() * net.activation_jacobian(xi_star) * (-p.mu / p.gamma);
    for k in 0..net.dim() {
        s[(k, k)] += 1.0;
    }
    s
}

/// Solves `Sᵀ y = δ`; `y_i = δᵀ S⁻¹ e_i`.
fn adjoint_solve(s: &DMatrix<f64>, delta: &DVector<f64>) -> Result<DVector<f64>> {
    let st = s.transpose();
    let y = st.clone().lu().solve(delta).ok_or(Error::SingularSensitivity)?;
    let residual = (&st * &y - delta).amax();
    if !y.iter().all(|v| v.is_finite()) || residual > 1e-10 * delta.amax().max(1.0) {
        return Err(Error::SingularSensitivity);
    }
    Ok(y)
}

/// Gradient pieces shared by the weight and strength gradients.
#[derive(Debug, Clone)]
pub struct GradientTerms {
    pub loss: f64,
    /// `y = S⁻ᵀ δ`.
    pub adjoint: DVector<f64>,
    /// `φ(ξ*)`.
    pub activation: DVector<f64>,
    /// `μ / (γE)`.
    pub coefficient: f64,
}

impl GradientTerms {
    pub fn new(net: &Network, xi_star: &DVector<f64>, target: &DVector<f64>) -> Result<Self> {
        let loss = loss(xi_star, target)?;
        let dim = net.dim();
        let p = net.params();
        if loss == 0.0 {
            return Ok(Self {
                loss,
                adjoint: DVector::zeros(dim),
                activation: net.activate(xi_star),
                coefficient: 0.0,
            });
        }
        let delta = xi_star - target;
        let adjoint = adjoint_solve(&sensitivity(net, xi_star), &delta)?;
        Ok(Self {
            loss,
            adjoint,
            activation: net.activate(xi_star),
            coefficient: p.mu / (p.gamma * loss),
        })
    }

    /// `∂E/∂w_ij = μφ(ξ*_j)/(γE) · δᵀS⁻¹e_i`.
    pub fn weight_gradient(&self) -> DMatrix<f64> {
        &self.adjoint * self.activation.transpose() * self.coefficient
    }
}

/// `∂E/∂W` for the assembled weight matrix. Zero loss gives a zero matrix.
pub fn grad_weights(
    w: &StructuredWeights,
    params: &NetworkParams,
    xi_star: &DVector<f64>,
    target: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let net = Network::new(w, params)?;
    Ok(GradientTerms::new(&net, xi_star, target)?.weight_gradient())
}

#[derive(Debug, Clone)]
pub struct AlphaGradient {
    pub grad: DMatrix<f64>,
    pub warnings: Vec<String>,
}

/// `∂E/∂α_ij = Σ_ab ∂E/∂w_{I+a,J+b} · w_{I+a,J+b}/α_ij`, contracting the
/// weight gradient over each block. Entries with `|α_ij|` below the floor are
/// zeroed.
pub fn grad_alpha(w: &StructuredWeights, grad_w: &DMatrix<f64>) -> Result<AlphaGradient> {
    let n = w.n_neurons();
    if grad_w.nrows() != 6 * n || grad_w.ncols() != 6 * n {
        return Err(Error::InvalidArgument(format!(
            "weight gradient is {}x{}, expected {}x{}",
            grad_w.nrows(),
            grad_w.ncols(),
            6 * n,
            6 * n
        )));
    }
    let mut grad = DMatrix::zeros(n, n);
    let mut warnings = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if w.alpha()[(i, j)].abs() < ALPHA_FLOOR {
                warnings.push(format!("alpha[{i},{j}] below floor, gradient entry zeroed"));
                continue;
            }
            let g = grad_w.view((6 * i, 6 * j), (6, 6));
            grad[(i, j)] = g.component_mul(w.block(i, j)).sum();
        }
    }
    for msg in &warnings {
        log::warn!("{msg}");
    }
    Ok(AlphaGradient { grad, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::normalize;
    use crate::sampling::{rng, uniform_dvector};

    fn setup(n: usize, seed: u64) -> (StructuredWeights, NetworkParams, DVector<f64>) {
        let mut rng = rng(seed);
        let p = NetworkParams::uniform_bias(n, 1.0, 1.0, 0.125);
        let w = normalize(&StructuredWeights::random_uniform(n, &mut rng), &p);
        let target = uniform_dvector(&mut rng, 6 * n, -0.8, 0.8);
        (w, p, target)
    }

    #[test]
    fn loss_cases() {
        let x = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        assert_eq!(loss(&x, &x).unwrap(), 0.0);
        let d = DVector::from_vec(vec![3.0, 4.0, 0.0, 0.0]);
        assert_eq!(loss(&d, &DVector::zeros(4)).unwrap(), 5.0);
        let mut rng = rng(40);
        for _ in 0..20 {
            let a = uniform_dvector(&mut rng, 12, -1.0, 1.0);
            let b = uniform_dvector(&mut rng, 12, -1.0, 1.0);
            let oracle = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert!((loss(&a, &b).unwrap() - oracle).abs() < 1e-14);
        }
        assert!(loss(&x, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn sensitivity_cases() {
        let p = NetworkParams::uniform_bias(1, 1.0, 1.0, 0.125);
        let net = Network::new(&StructuredWeights::zeros(1), &p).unwrap();
        let xi = DVector::from_element(6, 0.4);
        assert_eq!(sensitivity(&net, &xi), DMatrix::identity(6, 6));
        let jac = net.activation_jacobian(&xi);
        assert!((jac[(2, 2)] - (1.0 - 0.4f64.tanh().powi(2))).abs() < 1e-15);
        assert_eq!(jac[(0, 1)], 0.0);

        let (w, p, _) = setup(2, 41);
        let net = Network::new(&w, &p).unwrap();
        let xi = net.find_equilibrium().unwrap();
        let s = sensitivity(&net, &xi);
        let expected = DMatrix::identity(12, 12) - net.weights() * net.activation_jacobian(&xi);
        assert_eq!((s.clone() - expected).amax(), 0.0);
        let rhs = DVector::from_element(12, 1.0);
        let sol = s.clone().lu().solve(&rhs).unwrap();
        assert!((s * sol - rhs).amax() <= 1e-10);
    }

    #[test]
    fn zero_delta_gives_zero_gradients() {
        let (w, p, _) = setup(2, 42);
        let xi = crate::network::find_equilibrium(&w, &p).unwrap();
        let g = grad_weights(&w, &p, &xi, &xi).unwrap();
        assert_eq!(g.amax(), 0.0);
        let ga = grad_alpha(&w, &g).unwrap();
        assert_eq!(ga.grad.amax(), 0.0);
    }

    #[test]
    fn zero_weights_reduce_to_outer_product() {
        let p = NetworkParams::uniform_bias(1, 2.0, 1.5, 0.3);
        let w = StructuredWeights::zeros(1);
        let xi = crate::network::find_equilibrium(&w, &p).unwrap();
        let target = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.5]);
        let g = grad_weights(&w, &p, &xi, &target).unwrap();
        let delta = &xi - &target;
        let e = delta.norm();
        for i in 0..6 {
            for j in 0..6 {
                let expected = p.mu * xi[j].tanh() / (p.gamma * e) * delta[i];
                assert!((g[(i, j)] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn alpha_gradient_forms_agree() {
        // Contraction of ∂E/∂W against the blocks versus the expanded sum
        // Σ_ab μφ(ξ*_{J+b})/(γE) · y_{I+a} · L_ab.
        for seed in 0..5 {
            let (w, p, target) = setup(3, 43 + seed);
            let net = Network::new(&w, &p).unwrap();
            let xi = net.find_equilibrium().unwrap();
            let terms = GradientTerms::new(&net, &xi, &target).unwrap();
            let ga = grad_alpha(&w, &terms.weight_gradient()).unwrap().grad;
            for i in 0..3 {
                for j in 0..3 {
                    let mut expanded = 0.0;
                    for a in 0..6 {
                        for b in 0..6 {
                            expanded += terms.coefficient
                                * terms.activation[6 * j + b]
                                * terms.adjoint[6 * i + a]
                                * w.block(i, j)[(a, b)];
                        }
                    }
                    assert!((ga[(i, j)] - expanded).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn alpha_floor_zeroes_entry() {
        let (w, p, target) = setup(2, 48);
        let mut alpha = w.alpha().clone();
        alpha[(1, 0)] = 0.0;
        let w = StructuredWeights::new(alpha, w.blocks().to_vec()).unwrap();
        let xi = crate::network::find_equilibrium(&w, &p).unwrap();
        let g = grad_weights(&w, &p, &xi, &target).unwrap();
        let ga = grad_alpha(&w, &g).unwrap();
        assert_eq!(ga.grad[(1, 0)], 0.0);
        assert_eq!(ga.warnings.len(), 1);
    }

    #[test]
    fn singular_sensitivity_is_reported() {
        // S = I − W J with W = I and J = I at ξ = 0 is exactly zero.
        let p = NetworkParams::uniform_bias(1, 1.0, 1.0, 0.0);
        let w = StructuredWeights::new(DMatrix::from_element(1, 1, 1.0), vec![nalgebra::Matrix6::identity()]).unwrap();
        let target = DVector::from_element(6, 0.5);
        assert!(matches!(
            grad_weights(&w, &p, &DVector::zeros(6), &target),
            Err(Error::SingularSensitivity)
        ));
    }
}
