//! MANO hand-pose container, the five per-frame feature encodings, a rigid
//! 21-joint kinematic model and gradient-based pose fitting.
//!
//! The kinematic model is a stand-in for full MANO: every articulated joint
//! carries one local rotation, bones are rigid offsets in the parent frame,
//! and shape coefficients lengthen or widen bones through linear correctives.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotations::{
    axis_angle_to_rot6d, log_map, rodrigues, rodrigues_jacobian, rot6d_to_axis_angle, AxisAngle,
    Mat3, Rot6D, Vec3,
};

pub const NUM_BODY_JOINTS: usize = 15;
pub const NUM_JOINTS: usize = 21;
pub const NUM_BETAS: usize = 10;
pub const MAX_ABS_BETA: f64 = 5.0;

const DEFAULT_SKELETON_JSON: &str = include_str!("../../../assets/skeleton_default.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    pub theta: [AxisAngle; NUM_BODY_JOINTS],
    pub r_rot: AxisAngle,
    pub tau: Vec3,
    pub beta: [f64; NUM_BETAS],
    pub side: Side,
}

impl HandPose {
    pub fn rest(side: Side) -> Self {
        HandPose {
            theta: [AxisAngle::IDENTITY; NUM_BODY_JOINTS],
            r_rot: AxisAngle::IDENTITY,
            tau: Vec3::zeros(),
            beta: [0.0; NUM_BETAS],
            side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.theta.iter().all(AxisAngle::is_finite)
            && self.r_rot.is_finite()
            && self.tau.iter().all(|v| v.is_finite())
            && self.beta.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite hand pose".into()));
        }
        if let Some(b) = self.beta.iter().find(|b| b.abs() > MAX_ABS_BETA) {
            return Err(Error::InvalidInput(format!(
                "shape coefficient {b} outside ±5"
            )));
        }
        if self
            .theta
            .iter()
            .any(|t| t.angle() > std::f64::consts::PI + 1e-9)
        {
            return Err(Error::InvalidInput("joint angle exceeds π".into()));
        }
        Ok(())
    }

    /// Flattened `theta` in joint order, 45 values.
    pub fn theta_flat(&self) -> [f64; 45] {
        let mut out = [0.0; 45];
        for (k, t) in self.theta.iter().enumerate() {
            out[3 * k..3 * k + 3].copy_from_slice(&t.to_array());
        }
        out
    }

    pub fn from_flat(
        theta: &[f64],
        r_rot: &[f64],
        tau: &[f64],
        beta: &[f64],
        side: Side,
    ) -> Result<Self> {
        if theta.len() != 45 || r_rot.len() != 3 || tau.len() != 3 || beta.len() != NUM_BETAS {
            return Err(Error::InvalidInput(format!(
                "expected theta[45], rrot[3], tau[3], beta[10]; got {}, {}, {}, {}",
                theta.len(),
                r_rot.len(),
                tau.len(),
                beta.len()
            )));
        }
        let mut pose = HandPose::rest(side);
        for k in 0..NUM_BODY_JOINTS {
            pose.theta[k] = AxisAngle::from_slice(&theta[3 * k..3 * k + 3]).canonical();
        }
        pose.r_rot = AxisAngle::from_slice(r_rot).canonical();
        pose.tau = Vec3::new(tau[0], tau[1], tau[2]);
        pose.beta.copy_from_slice(beta);
        Ok(pose)
    }
}

/// Rigid kinematic tree with linear shape correctives.
#[derive(Debug, Clone, PartialEq)]
pub struct HandSkeleton {
    parent: [Option<usize>; NUM_JOINTS],
    /// Offsets for joints 1..=20, parent frame, right-hand convention.
    offsets: [Vec3; NUM_JOINTS - 1],
    /// `shape_dirs[j]` is the 3x10 corrective for joint `j`.
    shape_dirs: Vec<nalgebra::SMatrix<f64, 3, NUM_BETAS>>,
    /// Joints in topological order (parents before children).
    order: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SkeletonFile {
    parent: Vec<i64>,
    offsets: Vec<[f64; 3]>,
    shape_dirs: Vec<Vec<Vec<f64>>>,
}

impl Default for HandSkeleton {
    fn default() -> Self {
        HandSkeleton::from_json(DEFAULT_SKELETON_JSON).expect("bundled skeleton is valid")
    }
}

impl HandSkeleton {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SkeletonFile = serde_json::from_str(text)?;
        Self::from_parts(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = SkeletonFile {
            parent: self
                .parent
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            offsets: self.offsets.iter().map(|o| [o.x, o.y, o.z]).collect(),
            shape_dirs: self
                .shape_dirs
                .iter()
                .map(|m| (0..3).map(|r| m.row(r).iter().copied().collect()).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("skeleton serializes")
    }

    fn from_parts(file: SkeletonFile) -> Result<Self> {
        let bad = |msg: String| Error::InvalidInput(format!("skeleton: {msg}"));
        if file.parent.len() != NUM_JOINTS {
            return Err(bad(format!(
                "parent has {} entries, need 21",
                file.parent.len()
            )));
        }
        if file.offsets.len() != NUM_JOINTS - 1 {
            return Err(bad(format!(
                "offsets has {} rows, need 20",
                file.offsets.len()
            )));
        }
        if file.shape_dirs.len() != NUM_JOINTS {
            return Err(bad("shape_dirs must be 21x3x10".into()));
        }
        let mut parent = [None; NUM_JOINTS];
        if file.parent[0] >= 0 {
            return Err(bad("joint 0 must be the root".into()));
        }
        for j in 1..NUM_JOINTS {
            let p = file.parent[j];
            if p < 0 || p as usize >= NUM_JOINTS || p as usize == j {
                return Err(bad(format!("joint {j} has invalid parent {p}")));
            }
            parent[j] = Some(p as usize);
        }
        // Articulated joints 1..=15 may have children; every joint must reach the root.
        let mut order = vec![0usize];
        let mut placed = [false; NUM_JOINTS];
        placed[0] = true;
        while order.len() < NUM_JOINTS {
            let before = order.len();
            for j in 1..NUM_JOINTS {
                if !placed[j] && placed[parent[j].unwrap()] {
                    placed[j] = true;
                    order.push(j);
                }
            }
            if order.len() == before {
                return Err(bad("parent table contains a cycle".into()));
            }
        }
        for j in NUM_BODY_JOINTS + 1..NUM_JOINTS {
            if parent.contains(&Some(j)) {
                return Err(bad(format!("tip joint {j} cannot have children")));
            }
        }
        let mut offsets = [Vec3::zeros(); NUM_JOINTS - 1];
        for (o, row) in offsets.iter_mut().zip(&file.offsets) {
            if !row.iter().all(|v| v.is_finite()) {
                return Err(bad("non-finite offset".into()));
            }
            *o = Vec3::new(row[0], row[1], row[2]);
        }
        let mut shape_dirs = Vec::with_capacity(NUM_JOINTS);
        for (j, m) in file.shape_dirs.iter().enumerate() {
            if m.len() != 3 || m.iter().any(|r| r.len() != NUM_BETAS) {
                return Err(bad(format!("shape_dirs[{j}] must be 3x10")));
            }
            let mut s = nalgebra::SMatrix::<f64, 3, NUM_BETAS>::zeros();
            for a in 0..3 {
                for b in 0..NUM_BETAS {
                    s[(a, b)] = m[a][b];
                }
            }
            shape_dirs.push(s);
        }
        Ok(HandSkeleton {
            parent,
            offsets,
            shape_dirs,
            order,
        })
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    fn mirror(side: Side) -> Vec3 {
        match side {
            Side::Right => Vec3::new(1.0, 1.0, 1.0),
            Side::Left => Vec3::new(-1.0, 1.0, 1.0),
        }
    }

    /// Bone vector of joint `j` in its parent frame for the given shape.
    fn bone(&self, j: usize, beta: &[f64; NUM_BETAS], side: Side) -> Vec3 {
        let b = nalgebra::SVector::<f64, NUM_BETAS>::from_column_slice(beta);
        let v = self.offsets[j - 1] + self.shape_dirs[j] * b;
        v.component_mul(&Self::mirror(side))
    }

    /// Rest-pose joint positions (zero rotations, zero translation).
    pub fn rest_joints(&self, beta: &[f64; NUM_BETAS], side: Side) -> Joints21 {
        forward_kinematics(
            &HandPose {
                beta: *beta,
                ..HandPose::rest(side)
            },
            self,
        )
    }
}

/// 21 joint positions in meters, camera frame; joint 0 is the wrist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joints21(pub [Vec3; NUM_JOINTS]);

impl Joints21 {
    pub fn flat(&self) -> [f64; 63] {
        let mut out = [0.0; 63];
        for (j, p) in self.0.iter().enumerate() {
            out[3 * j..3 * j + 3].copy_from_slice(p.as_slice());
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let mut p = [Vec3::zeros(); NUM_JOINTS];
        for (j, slot) in p.iter_mut().enumerate() {
            *slot = Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]);
        }
        Joints21(p)
    }
}

struct FkState {
    global: [Mat3; NUM_BODY_JOINTS + 1],
    local: [Mat3; NUM_BODY_JOINTS + 1],
    pos: [Vec3; NUM_JOINTS],
}

fn local_rotation_vec(pose: &HandPose, j: usize) -> &Vec3 {
    if j == 0 {
        &pose.r_rot.0
    } else {
        &pose.theta[j - 1].0
    }
}

fn fk_state(pose: &HandPose, skel: &HandSkeleton) -> FkState {
    let mut st = FkState {
        global: [Mat3::identity(); NUM_BODY_JOINTS + 1],
        local: [Mat3::identity(); NUM_BODY_JOINTS + 1],
        pos: [Vec3::zeros(); NUM_JOINTS],
    };
    for &j in &skel.order {
        let rot_local = if j <= NUM_BODY_JOINTS {
            rodrigues(local_rotation_vec(pose, j)).0
        } else {
            Mat3::identity()
        };
        match skel.parent[j] {
            None => {
                st.pos[j] = Vec3::zeros();
                st.local[0] = rot_local;
                st.global[0] = rot_local;
            }
            Some(p) => {
                let gp = st.global[p];
                st.pos[j] = st.pos[p] + gp * skel.bone(j, &pose.beta, pose.side);
                if j <= NUM_BODY_JOINTS {
                    st.local[j] = rot_local;
                    st.global[j] = gp * rot_local;
                }
            }
        }
    }
    for p in st.pos.iter_mut() {
        *p += pose.tau;
    }
    st
}

/// Composes bone offsets along the tree from the wrist at `tau`.
pub fn forward_kinematics(pose: &HandPose, skel: &HandSkeleton) -> Joints21 {
    Joints21(fk_state(pose, skel).pos)
}

/// Gradient of a scalar loss with respect to every pose parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGradient {
    pub r_rot: Vec3,
    pub tau: Vec3,
    pub theta: [Vec3; NUM_BODY_JOINTS],
    pub beta: [f64; NUM_BETAS],
}

/// Number of pose parameters: `r_rot | tau | theta | beta`.
pub const NUM_POSE_PARAMS: usize = 3 + 3 + 3 * NUM_BODY_JOINTS + NUM_BETAS;

impl PoseGradient {
    fn zeros() -> Self {
        PoseGradient {
            r_rot: Vec3::zeros(),
            tau: Vec3::zeros(),
            theta: [Vec3::zeros(); NUM_BODY_JOINTS],
            beta: [0.0; NUM_BETAS],
        }
    }

    /// Flattened in `r_rot | tau | theta | beta` order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(NUM_POSE_PARAMS);
        v.extend_from_slice(self.r_rot.as_slice());
        v.extend_from_slice(self.tau.as_slice());
        for t in &self.theta {
            v.extend_from_slice(t.as_slice());
        }
        v.extend_from_slice(&self.beta);
        v
    }

    fn from_vec(v: &[f64]) -> Self {
        let mut g = PoseGradient::zeros();
        g.r_rot = Vec3::from_column_slice(&v[0..3]);
        g.tau = Vec3::from_column_slice(&v[3..6]);
        for k in 0..NUM_BODY_JOINTS {
            g.theta[k] = Vec3::from_column_slice(&v[6 + 3 * k..9 + 3 * k]);
        }
        g.beta.copy_from_slice(&v[6 + 3 * NUM_BODY_JOINTS..]);
        g
    }
}

fn descendants(skel: &HandSkeleton) -> Vec<Vec<usize>> {
    let mut desc: Vec<Vec<usize>> = vec![Vec::new(); NUM_BODY_JOINTS + 1];
    for j in 1..NUM_JOINTS {
        let mut a = skel.parent[j];
        while let Some(k) = a {
            if k <= NUM_BODY_JOINTS {
                desc[k].push(j);
            }
            a = skel.parent[k];
        }
    }
    desc
}

/// Jacobian of the 63 stacked joint coordinates with respect to the pose
/// parameters, in `r_rot | tau | theta | beta` column order.
pub fn fk_jacobian(pose: &HandPose, skel: &HandSkeleton) -> (Joints21, DMatrix<f64>) {
    let st = fk_state(pose, skel);
    let mut jac = DMatrix::<f64>::zeros(3 * NUM_JOINTS, NUM_POSE_PARAMS);
    for j in 0..NUM_JOINTS {
        for a in 0..3 {
            jac[(3 * j + a, 3 + a)] = 1.0;
        }
    }
    let desc = descendants(skel);
    for k in 0..=NUM_BODY_JOINTS {
        let gp = match skel.parent[k] {
            None => Mat3::identity(),
            Some(p) => st.global[p],
        };
        let col0 = if k == 0 { 0 } else { 6 + 3 * (k - 1) };
        let dr = rodrigues_jacobian(local_rotation_vec(pose, k));
        for (i, d) in dr.iter().enumerate() {
            let m = gp * d * st.local[k].transpose() * gp.transpose();
            for &j in &desc[k] {
                let dp = m * (st.pos[j] - st.pos[k]);
                for a in 0..3 {
                    jac[(3 * j + a, col0 + i)] = dp[a];
                }
            }
        }
    }
    let mirror = HandSkeleton::mirror(pose.side);
    let mut dpos = vec![nalgebra::SMatrix::<f64, 3, NUM_BETAS>::zeros(); NUM_JOINTS];
    let beta0 = 6 + 3 * NUM_BODY_JOINTS;
    for &j in &skel.order {
        if let Some(p) = skel.parent[j] {
            let mut s = skel.shape_dirs[j];
            for a in 0..3 {
                for b in 0..NUM_BETAS {
                    s[(a, b)] *= mirror[a];
                }
            }
            dpos[j] = dpos[p] + st.global[p] * s;
        }
        for a in 0..3 {
            for b in 0..NUM_BETAS {
                jac[(3 * j + a, beta0 + b)] = dpos[j][(a, b)];
            }
        }
    }
    (Joints21(st.pos), jac)
}

/// Mean squared joint error `(1/21) Σ ‖p_j − target_j‖²` and its analytic gradient.
pub fn joint_loss_gradient(
    pose: &HandPose,
    skel: &HandSkeleton,
    target: &Joints21,
) -> (f64, PoseGradient) {
    let (joints, jac) = fk_jacobian(pose, skel);
    let r = residual_vector(&joints, target);
    let n = NUM_JOINTS as f64;
    let loss = r.norm_squared() / n;
    let g = jac.transpose() * r * (2.0 / n);
    (loss, PoseGradient::from_vec(g.as_slice()))
}

fn residual_vector(joints: &Joints21, target: &Joints21) -> DVector<f64> {
    DVector::from_iterator(
        3 * NUM_JOINTS,
        joints
            .0
            .iter()
            .zip(&target.0)
            .flat_map(|(p, t)| (p - t).iter().copied().collect::<Vec<_>>()),
    )
}

/// Quadratic hinge on finger joint components beyond ±π/2.
pub const ANGLE_LIMIT: f64 = std::f64::consts::FRAC_PI_2;

/// Penalty value plus its gradient and Gauss–Newton curvature (both in
/// parameter order, theta block only non-zero).
fn angle_penalty(pose: &HandPose, weight: f64) -> (f64, DVector<f64>, DVector<f64>) {
    let mut p = 0.0;
    let mut g = DVector::zeros(NUM_POSE_PARAMS);
    let mut h = DVector::zeros(NUM_POSE_PARAMS);
    for (k, t) in pose.theta.iter().enumerate() {
        for c in 0..3 {
            let excess = t.0[c].abs() - ANGLE_LIMIT;
            if excess > 0.0 {
                let idx = 6 + 3 * k + c;
                p += weight * excess * excess;
                g[idx] = 2.0 * weight * excess * t.0[c].signum();
                h[idx] = 2.0 * weight;
            }
        }
    }
    (p, g, h)
}

/// Penalty on the rotation component about each finger joint's child bone.
/// Joint positions cannot observe that twist, so the penalty selects the
/// least-twisted member of an otherwise flat family of solutions.
fn twist_penalty(
    pose: &HandPose,
    skel: &HandSkeleton,
    weight: f64,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let mut p = 0.0;
    let mut g = DVector::zeros(NUM_POSE_PARAMS);
    let mut h = DMatrix::zeros(NUM_POSE_PARAMS, NUM_POSE_PARAMS);
    if weight == 0.0 {
        return (p, g, h);
    }
    let mirror = HandSkeleton::mirror(pose.side);
    for k in 1..=NUM_BODY_JOINTS {
        let Some(child) = (1..NUM_JOINTS).find(|&j| skel.parent[j] == Some(k)) else {
            continue;
        };
        let u = skel.offsets[child - 1].component_mul(&mirror).normalize();
        let tw = pose.theta[k - 1].0.dot(&u);
        p += weight * tw * tw;
        let base = 6 + 3 * (k - 1);
        for a in 0..3 {
            g[base + a] += 2.0 * weight * tw * u[a];
            for b in 0..3 {
                h[(base + a, base + b)] += 2.0 * weight * u[a] * u[b];
            }
        }
    }
    (p, g, h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub iters: usize,
    /// Initial fraction of the damped Gauss–Newton step.
    pub lr: f64,
    pub fit_shape: bool,
    pub angle_weight: f64,
    /// Weight of the finger twist penalty.
    pub twist_weight: f64,
    /// Multiplier applied to the step after an accepted iteration (capped at 1).
    pub step_growth: f64,
    /// Damping relative to the largest curvature entry.
    pub damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            iters: 200,
            lr: 1.0,
            fit_shape: false,
            angle_weight: 1.0,
            twist_weight: 1e-7,
            step_growth: 2.0,
            damping: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub pose: HandPose,
    /// Mean squared joint error of the returned pose, m².
    pub residual: f64,
    pub initial_residual: f64,
    /// Objective (residual plus angle penalty) after each accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
}

pub fn fit_pose_to_joints(
    target: &Joints21,
    skel: &HandSkeleton,
    init: &HandPose,
    iters: usize,
    lr: f64,
) -> Result<FitReport> {
    fit_pose_to_joints_with(
        target,
        skel,
        init,
        &FitOptions {
            iters,
            lr,
            ..FitOptions::default()
        },
    )
}

fn apply_delta(pose: &HandPose, delta: &DVector<f64>, step: f64) -> HandPose {
    let d = PoseGradient::from_vec(delta.as_slice());
    let mut out = pose.clone();
    out.r_rot.0 += step * d.r_rot;
    out.tau += step * d.tau;
    for k in 0..NUM_BODY_JOINTS {
        out.theta[k].0 += step * d.theta[k];
    }
    for b in 0..NUM_BETAS {
        out.beta[b] = (out.beta[b] + step * d.beta[b]).clamp(-MAX_ABS_BETA, MAX_ABS_BETA);
    }
    out
}

struct Objective {
    value: f64,
    residual: f64,
    grad: DVector<f64>,
    /// Gauss–Newton approximation of the Hessian.
    hess: DMatrix<f64>,
}

/// Minimizes mean squared joint error plus the joint-angle penalties.
///
/// Each iteration descends along the damped Gauss–Newton direction
/// `-(JᵀJ + μ·diag)⁻¹ ∇f`; the step fraction halves whenever the objective
/// would increase, so the accepted objective sequence is non-increasing.
/// Shape coefficients stay frozen unless `fit_shape` is set.
pub fn fit_pose_to_joints_with(
    target: &Joints21,
    skel: &HandSkeleton,
    init: &HandPose,
    opts: &FitOptions,
) -> Result<FitReport> {
    if !target.0.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidInput("non-finite fit target".into()));
    }
    init.validate()?;
    let n = NUM_JOINTS as f64;
    let free = if opts.fit_shape {
        NUM_POSE_PARAMS
    } else {
        NUM_POSE_PARAMS - NUM_BETAS
    };
    let evaluate = |pose: &HandPose| -> Objective {
        let (joints, jac) = fk_jacobian(pose, skel);
        let r = residual_vector(&joints, target);
        let residual = r.norm_squared() / n;
        let (pen, pg, ph) = angle_penalty(pose, opts.angle_weight);
        let (tw, tg, th) = twist_penalty(pose, skel, opts.twist_weight);
        let jt = jac.transpose();
        let mut grad = &jt * &r * (2.0 / n) + pg + tg;
        let mut hess = &jt * &jac * (2.0 / n) + th;
        for i in 0..NUM_POSE_PARAMS {
            hess[(i, i)] += ph[i];
        }
        for i in free..NUM_POSE_PARAMS {
            grad[i] = 0.0;
        }
        Objective {
            value: residual + pen + tw,
            residual,
            grad,
            hess,
        }
    };
    let mut pose = init.clone();
    let mut cur = evaluate(&pose);
    let initial_residual = cur.residual;
    let mut history = vec![cur.value];
    let mut step = opts.lr.min(1.0);
    let mut iterations = 0;
    while iterations < opts.iters {
        if cur.grad.norm_squared() < 1e-30 || cur.value < 1e-24 {
            break;
        }
        iterations += 1;
        let h = cur.hess.view((0, 0), (free, free)).into_owned();
        let scale = (0..free).map(|i| h[(i, i)]).fold(0.0, f64::max);
        let mut damped = h.clone();
        for i in 0..free {
            damped[(i, i)] += opts.damping * (h[(i, i)] + scale * 1e-3) + 1e-12;
        }
        let rhs = -cur.grad.rows(0, free).into_owned();
        let dir = match damped.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => rhs,
        };
        let mut delta = DVector::zeros(NUM_POSE_PARAMS);
        delta.rows_mut(0, free).copy_from(&dir);
        let cand = apply_delta(&pose, &delta, step);
        let next = evaluate(&cand);
        if next.value.is_finite() && next.value <= cur.value {
            pose = cand;
            cur = next;
            history.push(cur.value);
            step = (step * opts.step_growth).min(1.0);
        } else {
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
    }
    let residual = cur.residual;
    if !residual.is_finite() || (residual > initial_residual * 10.0 && residual > 1e-20) {
        return Err(Error::FitFailure(format!(
            "residual {residual:e} from initial {initial_residual:e} after {iterations} iterations"
        )));
    }
    for t in pose.theta.iter_mut() {
        *t = t.canonical();
    }
    pose.r_rot = pose.r_rot.canonical();
    Ok(FitReport {
        pose,
        residual,
        initial_residual,
        history,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureVariant {
    D51,
    D99,
    D109,
    D114,
    D162,
}

impl FeatureVariant {
    pub const ALL: [FeatureVariant; 5] = [
        FeatureVariant::D51,
        FeatureVariant::D99,
        FeatureVariant::D109,
        FeatureVariant::D114,
        FeatureVariant::D162,
    ];

    pub fn dim(self) -> usize {
        match self {
            FeatureVariant::D51 => 51,
            FeatureVariant::D99 => 99,
            FeatureVariant::D109 => 109,
            FeatureVariant::D114 => 114,
            FeatureVariant::D162 => 162,
        }
    }

    pub fn from_dim(dim: usize) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.dim() == dim)
    }

    pub fn uses_6d(self) -> bool {
        matches!(
            self,
            FeatureVariant::D99 | FeatureVariant::D109 | FeatureVariant::D162
        )
    }

    pub fn has_beta(self) -> bool {
        self == FeatureVariant::D109
    }

    pub fn has_joints(self) -> bool {
        matches!(self, FeatureVariant::D114 | FeatureVariant::D162)
    }

    pub fn layout(self) -> FeatureLayout {
        let rot = if self.uses_6d() { 6 } else { 3 };
        let r_rot = 0..rot;
        let tau = rot..rot + 3;
        let theta = rot + 3..rot + 3 + NUM_BODY_JOINTS * rot;
        let mut end = theta.end;
        let beta = if self.has_beta() {
            end += NUM_BETAS;
            Some(theta.end..end)
        } else {
            None
        };
        let joints = if self.has_joints() {
            let start = end;
            end += 3 * NUM_JOINTS;
            Some(start..end)
        } else {
            None
        };
        debug_assert_eq!(end, self.dim());
        FeatureLayout {
            rot_width: rot,
            r_rot,
            tau,
            theta,
            beta,
            joints,
        }
    }
}

impl std::fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MANO-D{}", self.dim())
    }
}

/// Column ranges of each block in a feature row: `[r_rot | τ | θ | (β) | (j)]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    pub rot_width: usize,
    pub r_rot: std::ops::Range<usize>,
    pub tau: std::ops::Range<usize>,
    pub theta: std::ops::Range<usize>,
    pub beta: Option<std::ops::Range<usize>>,
    pub joints: Option<std::ops::Range<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    /// T x D
    pub data: Array2<f64>,
    pub variant: FeatureVariant,
    pub fps: f64,
    pub beta_ref: [f64; NUM_BETAS],
    pub side: Side,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }
}

fn write_rotation(row: &mut [f64], a: &AxisAngle, six_d: bool) {
    if six_d {
        row.copy_from_slice(&axis_angle_to_rot6d(a).0);
    } else {
        row.copy_from_slice(&a.to_array());
    }
}

pub fn encode_feature(
    poses: &[HandPose],
    variant: FeatureVariant,
    skel: &HandSkeleton,
    fps: f64,
) -> Result<FeatureSequence> {
    let first = poses
        .first()
        .ok_or_else(|| Error::Encode("empty pose sequence".into()))?;
    if poses.iter().any(|p| p.side != first.side) {
        return Err(Error::Encode("mixed hand sides in one sequence".into()));
    }
    let layout = variant.layout();
    let six_d = variant.uses_6d();
    let w = layout.rot_width;
    let mut data = Array2::<f64>::zeros((poses.len(), variant.dim()));
    for (t, pose) in poses.iter().enumerate() {
        let mut row = data.row_mut(t);
        let row = row.as_slice_mut().expect("row-major");
        write_rotation(&mut row[layout.r_rot.clone()], &pose.r_rot, six_d);
        row[layout.tau.clone()].copy_from_slice(pose.tau.as_slice());
        for (k, th) in pose.theta.iter().enumerate() {
            let s = layout.theta.start + k * w;
            write_rotation(&mut row[s..s + w], th, six_d);
        }
        if let Some(b) = &layout.beta {
            row[b.clone()].copy_from_slice(&pose.beta);
        }
        if let Some(j) = &layout.joints {
            row[j.clone()].copy_from_slice(&forward_kinematics(pose, skel).flat());
        }
    }
    Ok(FeatureSequence {
        data,
        variant,
        fps,
        beta_ref: first.beta,
        side: first.side,
    })
}

fn read_rotation(row: &[f64], six_d: bool, frame: usize, block: usize) -> Result<AxisAngle> {
    if six_d {
        let mut r = [0.0; 6];
        r.copy_from_slice(row);
        rot6d_to_axis_angle(Rot6D(r)).map_err(|e| Error::Decode {
            frame,
            block,
            reason: e.to_string(),
        })
    } else {
        let a = AxisAngle::from_slice(row);
        if !a.is_finite() {
            return Err(Error::Decode {
                frame,
                block,
                reason: "non-finite axis-angle".into(),
            });
        }
        Ok(a.canonical())
    }
}

/// Inverse of [`encode_feature`]. Auxiliary joint columns are ignored.
///
/// Rotation block indices in decode errors: 0 is the global wrist rotation,
/// `k + 1` is finger joint `k`.
pub fn decode_feature(fs: &FeatureSequence) -> Result<Vec<HandPose>> {
    let layout = fs.variant.layout();
    let six_d = fs.variant.uses_6d();
    let w = layout.rot_width;
    if fs.data.ncols() != fs.variant.dim() {
        return Err(Error::Decode {
            frame: 0,
            block: 0,
            reason: format!("width {} != {}", fs.data.ncols(), fs.variant.dim()),
        });
    }
    let mut out = Vec::with_capacity(fs.frames());
    for (t, row) in fs.data.rows().into_iter().enumerate() {
        let row = row.to_vec();
        let mut pose = HandPose::rest(fs.side);
        pose.r_rot = read_rotation(&row[layout.r_rot.clone()], six_d, t, 0)?;
        let tau = &row[layout.tau.clone()];
        pose.tau = Vec3::new(tau[0], tau[1], tau[2]);
        for k in 0..NUM_BODY_JOINTS {
            let s = layout.theta.start + k * w;
            pose.theta[k] = read_rotation(&row[s..s + w], six_d, t, k + 1)?;
        }
        pose.beta = match &layout.beta {
            Some(b) => {
                let mut beta = [0.0; NUM_BETAS];
                beta.copy_from_slice(&row[b.clone()]);
                beta
            }
            None => fs.beta_ref,
        };
        out.push(pose);
    }
    Ok(out)
}

/// Mean of two rotations taken in the 6D representation and re-orthonormalized.
pub(crate) fn mean_rotation(a: &AxisAngle, b: &AxisAngle) -> Result<AxisAngle> {
    let ra = axis_angle_to_rot6d(a).0;
    let rb = axis_angle_to_rot6d(b).0;
    let mut m = [0.0; 6];
    for i in 0..6 {
        m[i] = 0.5 * (ra[i] + rb[i]);
    }
    rot6d_to_axis_angle(Rot6D(m))
}

/// Rotation matrix of the global wrist rotation.
pub fn global_rotation(pose: &HandPose) -> Mat3 {
    rodrigues(&pose.r_rot.0).0
}

pub fn set_global_rotation(pose: &mut HandPose, m: &Mat3) {
    pose.r_rot = log_map(m);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotations::RotMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_pose(rng: &mut ChaCha8Rng, side: Side) -> HandPose {
        let mut p = HandPose::rest(side);
        let mut v = || {
            Vec3::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
            )
        };
        p.r_rot = AxisAngle(v());
        p.tau = v() * 0.3 + Vec3::new(0.0, 0.0, 0.5);
        for k in 0..NUM_BODY_JOINTS {
            p.theta[k] = AxisAngle(v());
        }
        for b in p.beta.iter_mut() {
            *b = rng.random_range(-2.0..2.0);
        }
        p
    }

    #[test]
    fn default_skeleton_loads_and_round_trips() {
        let s = HandSkeleton::default();
        let again = HandSkeleton::from_json(&s.to_json()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.parent(0), None);
        let rest = s.rest_joints(&[0.0; 10], Side::Right);
        for j in 1..NUM_JOINTS {
            let p = s.parent(j).unwrap();
            assert!((rest.0[j] - rest.0[p]).norm() > 0.0);
        }
    }

    #[test]
    fn skeleton_rejects_cycles() {
        let mut file: SkeletonFile = serde_json::from_str(DEFAULT_SKELETON_JSON).unwrap();
        file.parent[1] = 2;
        assert!(HandSkeleton::from_parts(file).is_err());
    }

    #[test]
    fn rest_pose_is_cumulative_offsets() {
        let s = HandSkeleton::default();
        let j = forward_kinematics(&HandPose::rest(Side::Right), &s);
        // index tip: wrist -> 1 -> 2 -> 3 -> 17
        let expect = s.offsets[0] + s.offsets[1] + s.offsets[2] + s.offsets[16];
        assert!((j.0[17] - expect).norm() < 1e-15);
        assert_eq!(j.0[0], Vec3::zeros());
    }

    #[test]
    fn translation_equivariance_is_exact() {
        let s = HandSkeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = HandPose {
            tau: Vec3::zeros(),
            ..random_pose(&mut rng, Side::Right)
        };
        let base = forward_kinematics(&pose, &s);
        let delta = Vec3::new(0.1, 0.0, 0.0);
        let moved = forward_kinematics(&HandPose { tau: delta, ..pose }, &s);
        for j in 0..NUM_JOINTS {
            assert_eq!(moved.0[j], base.0[j] + delta);
        }
    }

    #[test]
    fn global_rotation_rotates_rest_pose() {
        let s = HandSkeleton::default();
        let mut pose = HandPose::rest(Side::Right);
        pose.r_rot = AxisAngle::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        pose.tau = Vec3::new(0.01, 0.02, 0.4);
        let rest = forward_kinematics(&HandPose::rest(Side::Right), &s);
        let rz = RotMatrix::about_z(std::f64::consts::FRAC_PI_2).0;
        let got = forward_kinematics(&pose, &s);
        for j in 0..NUM_JOINTS {
            assert!((got.0[j] - (rz * rest.0[j] + pose.tau)).norm() < 1e-15);
        }
    }

    #[test]
    fn left_hand_mirrors_x() {
        let s = HandSkeleton::default();
        let r = forward_kinematics(&HandPose::rest(Side::Right), &s);
        let l = forward_kinematics(&HandPose::rest(Side::Left), &s);
        for j in 0..NUM_JOINTS {
            assert_eq!(l.0[j], Vec3::new(-r.0[j].x, r.0[j].y, r.0[j].z));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let s = HandSkeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for side in [Side::Right, Side::Left] {
            let pose = random_pose(&mut rng, side);
            let target = forward_kinematics(&random_pose(&mut rng, side), &s);
            let (_, g) = joint_loss_gradient(&pose, &s, &target);
            let h = 1e-5;
            let loss = |p: &HandPose| joint_loss_gradient(p, &s, &target).0;
            let check = |analytic: f64, plus: HandPose, minus: HandPose| {
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
                assert!(rel < 1e-4, "fd {fd} analytic {analytic}");
            };
            for i in 0..3 {
                let d = Vec3::ith(i, h);
                let mut p = pose.clone();
                let mut m = pose.clone();
                p.tau += d;
                m.tau -= d;
                check(g.tau[i], p, m);
                let mut p = pose.clone();
                let mut m = pose.clone();
                p.r_rot.0 += d;
                m.r_rot.0 -= d;
                check(g.r_rot[i], p, m);
                for k in 0..NUM_BODY_JOINTS {
                    let mut p = pose.clone();
                    let mut m = pose.clone();
                    p.theta[k].0 += d;
                    m.theta[k].0 -= d;
                    check(g.theta[k][i], p, m);
                }
            }
            for b in 0..NUM_BETAS {
                let mut p = pose.clone();
                let mut m = pose.clone();
                p.beta[b] += h;
                m.beta[b] -= h;
                check(g.beta[b], p, m);
            }
        }
    }

    #[test]
    fn fit_already_optimal() {
        let s = HandSkeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut init = random_pose(&mut rng, Side::Right);
        for t in init.theta.iter_mut() {
            t.0 *= 0.5;
        }
        let target = forward_kinematics(&init, &s);
        let rep = fit_pose_to_joints(&target, &s, &init, 100, 1.0).unwrap();
        assert!(rep.residual < 1e-8);
        let j = forward_kinematics(&rep.pose, &s);
        for k in 0..NUM_JOINTS {
            assert!((j.0[k] - target.0[k]).norm() < 1e-6);
        }
    }

    #[test]
    fn fit_recovers_single_flexion() {
        let s = HandSkeleton::default();
        let mut truth = HandPose::rest(Side::Right);
        // flexion of the index base joint about an axis perpendicular to its bone
        let bone = s.offsets[1].normalize();
        let axis = bone.cross(&Vec3::y()).normalize();
        truth.theta[0] = AxisAngle(axis * 0.3);
        let target = forward_kinematics(&truth, &s);
        let rep = fit_pose_to_joints(&target, &s, &HandPose::rest(Side::Right), 200, 1.0).unwrap();
        assert!(
            (rep.pose.theta[0].0 - truth.theta[0].0).norm() < 1e-3,
            "{:?} {} {} {:?}",
            rep.pose.theta[0],
            rep.residual,
            rep.iterations,
            &rep.pose.theta[1..3]
        );
        assert!(rep.residual < 1e-6);
        for w in rep.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn fit_reports_unreachable_target() {
        let s = HandSkeleton::default();
        let rest = HandPose::rest(Side::Right);
        let mut target = forward_kinematics(&rest, &s);
        target.0[20] += Vec3::new(1.0, 0.0, 0.0);
        match fit_pose_to_joints(&target, &s, &rest, 2000, 1.0) {
            Ok(rep) => {
                // a 1 m outlier cannot be absorbed by a rigid hand
                assert!(rep.residual > 1e-3, "residual {}", rep.residual);
                assert!(rep.residual <= rep.initial_residual);
            }
            Err(Error::FitFailure(_)) => {}
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn angle_penalty_gradient() {
        let mut pose = HandPose::rest(Side::Right);
        pose.theta[3] = AxisAngle::new(2.0, -1.8, 0.1);
        let (p, g, _) = angle_penalty(&pose, 1.0);
        let e0 = 2.0 - ANGLE_LIMIT;
        let e1 = 1.8 - ANGLE_LIMIT;
        assert!((p - (e0 * e0 + e1 * e1)).abs() < 1e-15);
        assert!((g[6 + 9] - 2.0 * e0).abs() < 1e-15);
        assert!((g[6 + 10] + 2.0 * e1).abs() < 1e-15);
        assert_eq!(g[6 + 11], 0.0);
    }

    #[test]
    fn dimension_law() {
        let s = HandSkeleton::default();
        let poses = vec![HandPose::rest(Side::Right); 3];
        for v in FeatureVariant::ALL {
            let fs = encode_feature(&poses, v, &s, 15.0).unwrap();
            assert_eq!(fs.data.ncols(), v.dim());
            assert_eq!(FeatureVariant::from_dim(v.dim()), Some(v));
        }
        assert_eq!(15 * 3 + 3 + 3, 51);
        assert_eq!(15 * 6 + 6 + 3, 99);
    }

    #[test]
    fn identity_frame_encodings() {
        let s = HandSkeleton::default();
        let poses = vec![HandPose::rest(Side::Right)];
        let d51 = encode_feature(&poses, FeatureVariant::D51, &s, 15.0).unwrap();
        assert!(d51.data.iter().all(|v| *v == 0.0));
        let d99 = encode_feature(&poses, FeatureVariant::D99, &s, 15.0).unwrap();
        let row = d99.data.row(0).to_vec();
        let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(&row[0..6], &ident);
        assert_eq!(&row[6..9], &[0.0; 3]);
        for k in 0..15 {
            assert_eq!(&row[9 + 6 * k..15 + 6 * k], &ident);
        }
    }

    #[test]
    fn joint_columns_match_fk() {
        let s = HandSkeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let poses = vec![
            random_pose(&mut rng, Side::Left),
            random_pose(&mut rng, Side::Left),
        ];
        let fs = encode_feature(&poses, FeatureVariant::D162, &s, 15.0).unwrap();
        for (t, p) in poses.iter().enumerate() {
            let j = forward_kinematics(p, &s).flat();
            assert_eq!(fs.data.row(t).to_vec()[99..], j[..]);
        }
    }

    #[test]
    fn encode_decode_round_trip_all_variants() {
        let s = HandSkeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for v in FeatureVariant::ALL {
            let beta = {
                let p = random_pose(&mut rng, Side::Right);
                p.beta
            };
            let poses: Vec<HandPose> = (0..200)
                .map(|_| HandPose {
                    beta,
                    ..random_pose(&mut rng, Side::Right)
                })
                .collect();
            let fs = encode_feature(&poses, v, &s, 15.0).unwrap();
            let back = decode_feature(&fs).unwrap();
            let tol = if v.uses_6d() { 1e-8 } else { 1e-10 };
            for (a, b) in poses.iter().zip(&back) {
                assert!((a.r_rot.0 - b.r_rot.0).norm() < tol);
                assert!((a.tau - b.tau).norm() < tol);
                for k in 0..15 {
                    assert!((a.theta[k].0 - b.theta[k].0).norm() < tol);
                }
                assert_eq!(a.beta, b.beta);
            }
        }
    }

    #[test]
    fn d109_carries_beta() {
        let s = HandSkeleton::default();
        let mut p = HandPose::rest(Side::Right);
        p.beta[0] = 1.0;
        let mut fs = encode_feature(&[p], FeatureVariant::D109, &s, 15.0).unwrap();
        fs.beta_ref = [0.0; 10];
        let back = decode_feature(&fs).unwrap();
        assert_eq!(
            back[0].beta,
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn degenerate_6d_reports_location() {
        let s = HandSkeleton::default();
        let mut fs = encode_feature(
            &vec![HandPose::rest(Side::Right); 3],
            FeatureVariant::D99,
            &s,
            15.0,
        )
        .unwrap();
        let layout = FeatureVariant::D99.layout();
        let start = layout.theta.start + 6 * 4;
        for c in start..start + 6 {
            fs.data[(2, c)] = 0.0;
        }
        match decode_feature(&fs) {
            Err(Error::Decode { frame, block, .. }) => {
                assert_eq!((frame, block), (2, 5));
            }
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn mixed_sides_rejected() {
        let s = HandSkeleton::default();
        let poses = vec![HandPose::rest(Side::Right), HandPose::rest(Side::Left)];
        assert!(encode_feature(&poses, FeatureVariant::D51, &s, 15.0).is_err());
        assert!(encode_feature(&[], FeatureVariant::D51, &s, 15.0).is_err());
    }
}
