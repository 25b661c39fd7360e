//! Network states to rigid-body poses through the exponential map.

use nalgebra::Vector6;

use crate::geometry::{compose, exp_se3, unparameterize, Pose};
use crate::network::{state_block, Trajectory};

/// `T = Exp(ξ^)` for one neuron's `[ω v]` block.
pub fn decode_state(xi_block: &Vector6<f64>) -> Pose {
    exp_se3(&unparameterize(xi_block))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrajectory {
    pub times: Vec<f64>,
    /// `poses[k][i]` is neuron `i` at `times[k]`.
    pub poses: Vec<Vec<Pose>>,
    /// Base-to-tip product `T₁ T₂ ⋯ T_N` at every sample.
    pub chain: Option<Vec<Pose>>,
}

impl PoseTrajectory {
    pub fn n_neurons(&self) -> usize {
        self.poses.first().map_or(0, Vec::len)
    }
}

/// Left-to-right product of joint poses.
pub fn chain_pose(joints: &[Pose]) -> Pose {
    joints.iter().fold(Pose::identity(), |acc, g| compose(&acc, g))
}

pub fn decode_trajectory(traj: &Trajectory, compose_chain: bool) -> PoseTrajectory {
    let poses: Vec<Vec<Pose>> = traj
        .states
        .iter()
        .map(|s| (0..s.len() / 6).map(|i| decode_state(&state_block(s, i))).collect())
        .collect();
    let chain = compose_chain.then(|| poses.iter().map(|p| chain_pose(p)).collect());
    PoseTrajectory { times: traj.times.clone(), poses, chain }
}
