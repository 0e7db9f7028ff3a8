//! Synthetic articulated chains: a floating (or fixed) base with serial
//! revolute branches, and positional constraint residuals over their
//! end effectors.
//!
//! Two residual forms are available per end effector `j` with error
//! `e_j = p_j(q) - t_j`:
//!
//! * [`ResidualKind::Displacement`]: `Psi_j = u_j . e_j`, the signed
//!   displacement along the target's unit direction `u_j`. Smooth, with a
//!   non-vanishing Jacobian at the root.
//! * [`ResidualKind::Distance`]: `Psi_j = |e_j|`. Not differentiable at the
//!   root, so its Jacobian keeps rotating as `e_j -> 0`.

use std::path::Path;

use nalgebra::{DVector, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, UnitSphere};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::function::DifferentiableFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    Displacement,
    Distance,
}

impl ResidualKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResidualKind::Displacement => "displacement",
            ResidualKind::Distance => "distance",
        }
    }
}

/// A goal position and the unit direction used by displacement residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub position: [f64; 3],
    pub direction: [f64; 3],
}

impl Target {
    pub fn new(position: [f64; 3], direction: [f64; 3]) -> Self {
        Self { position, direction }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointAxis {
    X,
    Y,
    Z,
}

impl JointAxis {
    fn unit(self) -> Unit<Vector3<f64>> {
        match self {
            JointAxis::X => Vector3::x_axis(),
            JointAxis::Y => Vector3::y_axis(),
            JointAxis::Z => Vector3::z_axis(),
        }
    }
}

/// A revolute joint followed by a rigid segment along the local x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub axis: JointAxis,
    pub length: f64,
}

/// A serial sub-chain attached to the base at `mount` (base frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub name: String,
    pub mount: [f64; 3],
    pub joints: Vec<Joint>,
}

/// Configuration layout: `[tx, ty, tz, roll, pitch, yaw]` when the base
/// floats, then every branch's joint angles in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    pub floating_base: bool,
    pub branches: Vec<Branch>,
}

impl ChainModel {
    /// Fixed-base planar chain: all axes along z, one end effector.
    pub fn planar(lengths: &[f64]) -> Result<Self> {
        let chain = Self {
            floating_base: false,
            branches: vec![Branch {
                name: "arm".into(),
                mount: [0.0; 3],
                joints: lengths
                    .iter()
                    .map(|&length| Joint {
                        axis: JointAxis::Z,
                        length,
                    })
                    .collect(),
            }],
        };
        chain.validate()?;
        Ok(chain)
    }

    /// 24-dof legged platform: floating base, four 3-dof legs and a 6-dof arm.
    pub fn quadruped_with_arm() -> Self {
        let leg = |name: &str, x: f64, y: f64| Branch {
            name: name.into(),
            mount: [x, y, 0.0],
            joints: vec![
                Joint { axis: JointAxis::X, length: 0.08 },
                Joint { axis: JointAxis::Y, length: 0.30 },
                Joint { axis: JointAxis::Y, length: 0.30 },
            ],
        };
        let arm = Branch {
            name: "arm".into(),
            mount: [0.10, 0.0, 0.10],
            joints: vec![
                Joint { axis: JointAxis::Z, length: 0.10 },
                Joint { axis: JointAxis::Y, length: 0.35 },
                Joint { axis: JointAxis::Y, length: 0.30 },
                Joint { axis: JointAxis::X, length: 0.10 },
                Joint { axis: JointAxis::Y, length: 0.10 },
                Joint { axis: JointAxis::Z, length: 0.05 },
            ],
        };
        Self {
            floating_base: true,
            branches: vec![
                leg("front_left", 0.30, 0.15),
                leg("front_right", 0.30, -0.15),
                leg("rear_left", -0.30, 0.15),
                leg("rear_right", -0.30, -0.15),
                arm,
            ],
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let chain: Self = serde_json::from_str(s)?;
        chain.validate()?;
        Ok(chain)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::InvalidParameter("chain has no branches".into()));
        }
        for b in &self.branches {
            if b.joints.is_empty() {
                return Err(Error::InvalidParameter(format!("branch {} has no joints", b.name)));
            }
            if let Some(j) = b.joints.iter().find(|j| !(j.length > 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "branch {} has non-positive link length {}",
                    b.name, j.length
                )));
            }
        }
        Ok(())
    }

    pub fn base_dof(&self) -> usize {
        if self.floating_base {
            6
        } else {
            0
        }
    }

    pub fn dof(&self) -> usize {
        self.base_dof() + self.branches.iter().map(|b| b.joints.len()).sum::<usize>()
    }

    pub fn end_effector_count(&self) -> usize {
        self.branches.len()
    }

    /// Reach of the farthest point of each branch from its mount.
    pub fn reach(&self) -> Vec<f64> {
        self.branches
            .iter()
            .map(|b| b.joints.iter().map(|j| j.length).sum())
            .collect()
    }

    /// End-effector positions in the world frame.
    pub fn end_effectors(&self, q: &DVector<f64>) -> Result<Vec<Vector3<f64>>> {
        check_dim("chain configuration", self.dof(), q.len())?;
        let (base_pos, base_rot, mut k) = if self.floating_base {
            (
                Vector3::new(q[0], q[1], q[2]),
                Rotation3::from_euler_angles(q[3], q[4], q[5]),
                6,
            )
        } else {
            (Vector3::zeros(), Rotation3::identity(), 0)
        };
        let mut out = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let mut rot = base_rot;
            let mut p = base_pos + base_rot * Vector3::from(b.mount);
            for j in &b.joints {
                rot *= Rotation3::from_axis_angle(&j.axis.unit(), q[k]);
                p += rot * Vector3::new(j.length, 0.0, 0.0);
                k += 1;
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Samples a configuration: small base offsets and joint angles in `[-1, 1]`.
    pub fn sample_configuration(&self, rng: &mut impl Rng) -> DVector<f64> {
        let base = self.base_dof();
        DVector::from_fn(self.dof(), |i, _| match i {
            i if i < 3 && base > 0 => rng.random_range(-0.1..=0.1),
            i if i < base => rng.random_range(-0.2..=0.2),
            _ => rng.random_range(-1.0..=1.0),
        })
    }
}

/// Targets for every end effector and the residual over them.
#[derive(Debug)]
pub struct ConstraintProblem {
    pub chain: ChainModel,
    pub targets: Vec<Target>,
    pub kind: ResidualKind,
    pub residual: DifferentiableFunction,
}

pub fn make_chain_constraint(
    chain: ChainModel,
    targets: Vec<Target>,
    kind: ResidualKind,
) -> Result<ConstraintProblem> {
    chain.validate()?;
    check_dim("constraint targets", chain.end_effector_count(), targets.len())?;
    let mut goal = Vec::with_capacity(targets.len());
    for t in &targets {
        let u = Vector3::from(t.direction);
        let norm = u.norm();
        if kind == ResidualKind::Displacement && !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "target direction {:?} cannot be normalized",
                t.direction
            )));
        }
        goal.push((Vector3::from(t.position), u / norm));
    }
    let fk = chain.clone();
    let c = goal.len();
    let residual = DifferentiableFunction::new(chain.dof(), c, move |q| {
        let ee = fk
            .end_effectors(q)
            .expect("configuration length checked by DifferentiableFunction");
        DVector::from_iterator(
            c,
            ee.iter().zip(&goal).map(|(p, (t, u))| match kind {
                ResidualKind::Displacement => u.dot(&(p - t)),
                ResidualKind::Distance => (p - t).norm(),
            }),
        )
    });
    Ok(ConstraintProblem {
        chain,
        targets,
        kind,
        residual,
    })
}

/// A root configuration, targets generated from it (random unit
/// directions), and a perturbed start.
#[derive(Debug, Clone)]
pub struct SampledProblem {
    pub root: DVector<f64>,
    pub targets: Vec<Target>,
    pub x0: DVector<f64>,
}

/// Start-point perturbation half-width around the sampled root (per coordinate).
pub const START_PERTURBATION: f64 = 0.5;

pub fn sample_feasible_problem(chain: &ChainModel, seed: u64) -> Result<SampledProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = chain.sample_configuration(&mut rng);
    let positions = chain.end_effectors(&root)?;
    let targets = positions
        .into_iter()
        .map(|p| {
            let u: [f64; 3] = UnitSphere.sample(&mut rng);
            Target::new([p.x, p.y, p.z], u)
        })
        .collect();
    let x0 = DVector::from_fn(root.len(), |i, _| {
        root[i] + rng.random_range(-START_PERTURBATION..=START_PERTURBATION)
    });
    Ok(SampledProblem { root, targets, x0 })
}
