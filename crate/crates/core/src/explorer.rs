//! Baseline exploration: k-means seeding of initial gripper positions,
//! randomized orientation sampling, and regret-guided cluster selection in
//! the spirit of a multi-armed bandit with recorded average regret.
//!
//! Per cluster the explorer records fitting error, collision and
//! reachability outcomes; the cluster with minimum regret is exploited,
//! with an epsilon of uniform exploration on top.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SurfaceCloud;
use crate::gripper::{GraspPose, GripperModel};
use crate::isf::{isf_run, IsfParams};
use crate::scene::{collision_check, CollisionParams, ConeReachability, ReachabilityModel, Scene};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegretWeights {
    pub error: f64,
    pub collision: f64,
    pub unreachable: f64,
}

impl Default for RegretWeights {
    fn default() -> Self {
        Self {
            error: 1.0,
            collision: 1.0,
            unreachable: 1.0,
        }
    }
}

/// Running statistics for one k-means cluster of candidate seed positions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub center: Vector3<f64>,
    pub mean_normal: Vector3<f64>,
    pub trials: usize,
    /// Running mean of observed fitting errors (m^2).
    pub mean_error: f64,
    pub collision_rate: f64,
    pub unreachable_rate: f64,
    pub regret: f64,
}

impl ClusterRecord {
    fn new(center: Vector3<f64>, mean_normal: Vector3<f64>) -> Self {
        Self {
            center,
            mean_normal,
            trials: 0,
            mean_error: 0.0,
            collision_rate: 0.0,
            unreachable_rate: 0.0,
            regret: 0.0,
        }
    }

    /// Regret recomputed from the recorded statistics. Untried clusters are
    /// optimistic (zero regret).
    pub fn regret_value(&self, weights: &RegretWeights, error_ref: f64) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        weights.error * (self.mean_error / error_ref.max(1e-12))
            + weights.collision * self.collision_rate
            + weights.unreachable * self.unreachable_rate
    }

    pub fn refresh_regret(&mut self, weights: &RegretWeights, error_ref: f64) {
        self.regret = self.regret_value(weights, error_ref);
    }
}

/// One planning attempt as consumed by the regret model.
#[derive(Debug, Clone, Copy)]
pub struct TrialOutcome {
    pub error: f64,
    pub collided: bool,
    pub reachable: bool,
}

/// Folds an outcome into the record's running means and refreshes the
/// regret against `error_ref`.
pub fn update_regret(
    record: &mut ClusterRecord,
    outcome: &TrialOutcome,
    weights: &RegretWeights,
    error_ref: f64,
) {
    record.trials += 1;
    let n = record.trials as f64;
    record.mean_error += (outcome.error - record.mean_error) / n;
    let collided = if outcome.collided { 1.0 } else { 0.0 };
    record.collision_rate += (collided - record.collision_rate) / n;
    let unreachable = if outcome.reachable { 0.0 } else { 1.0 };
    record.unreachable_rate += (unreachable - record.unreachable_rate) / n;
    record.refresh_regret(weights, error_ref);
}

/// Epsilon-greedy selection: with probability `1 - epsilon` the cluster
/// with minimum regret (ties to the lowest index), otherwise uniform.
pub fn select_cluster(
    records: &[ClusterRecord],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    if records.is_empty() {
        return Err(Error::invalid("no clusters to select from"));
    }
    let u: f64 = rng.random();
    if u < epsilon {
        return Ok(rng.random_range(0..records.len()));
    }
    let mut best = 0;
    for (i, r) in records.iter().enumerate().skip(1) {
        if r.regret < records[best].regret {
            best = i;
        }
    }
    Ok(best)
}

/// Lloyd's algorithm with k-means++ seeding over the cloud positions; four
/// deterministic restarts keep the lowest within-cluster sum of squares.
/// Each record carries the cluster centroid and the renormalized mean of
/// member normals. Deterministic in `rng_seed`.
pub fn kmeans_clusters(
    cloud: &SurfaceCloud,
    k: usize,
    max_iters: usize,
    rng_seed: u64,
) -> Result<Vec<ClusterRecord>> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if cloud.len() < k {
        return Err(Error::invalid(format!(
            "cloud of {} points cannot form {k} clusters",
            cloud.len()
        )));
    }
    let positions: Vec<Vector3<f64>> = cloud.positions().copied().collect();
    let mut best: Option<(f64, Vec<Vector3<f64>>)> = None;
    for restart in 0..4u64 {
        let centers = lloyd_once(
            &positions,
            k,
            max_iters,
            derive_seed(rng_seed, "kmeans-restart", restart),
        );
        let inertia: f64 = positions
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| (p - c).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, centers));
        }
    }
    let centers = best.expect("at least one restart").1;

    // Final assignment for the normal means.
    let mut normal_sums = vec![Vector3::<f64>::zeros(); k];
    let mut counts = vec![0usize; k];
    for (i, p) in positions.iter().enumerate() {
        let mut nearest = (0usize, f64::INFINITY);
        for (c, center) in centers.iter().enumerate() {
            let d = (p - center).norm_squared();
            if d < nearest.1 {
                nearest = (c, d);
            }
        }
        normal_sums[nearest.0] += cloud.points[i].normal;
        counts[nearest.0] += 1;
    }
    let records = (0..k)
        .map(|c| {
            let normal = if normal_sums[c].norm() > 1e-9 {
                normal_sums[c].normalize()
            } else {
                Vector3::z()
            };
            ClusterRecord::new(centers[c], normal)
        })
        .collect();
    Ok(records)
}

fn lloyd_once(
    positions: &[Vector3<f64>],
    k: usize,
    max_iters: usize,
    rng_seed: u64,
) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    // k-means++ seeding.
    let mut centers: Vec<Vector3<f64>> = Vec::with_capacity(k);
    centers.push(positions[rng.random_range(0..positions.len())]);
    let mut d2: Vec<f64> = positions
        .iter()
        .map(|p| (p - centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            positions[rng.random_range(0..positions.len())]
        } else {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = positions.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            positions[chosen]
        };
        centers.push(next);
        for (i, p) in positions.iter().enumerate() {
            d2[i] = d2[i].min((p - next).norm_squared());
        }
    }

    // Lloyd iterations.
    let mut assignment = vec![0usize; positions.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in positions.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = (p - center).norm_squared();
                if d < best.1 {
                    best = (c, d);
                }
            }
            if assignment[i] != best.0 {
                assignment[i] = best.0;
                changed = true;
            }
        }
        let mut sums = vec![Vector3::<f64>::zeros(); k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            sums[a] += positions[i];
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

/// Deterministic core of [`sample_orientation`]: align the gripper approach
/// axis onto the negative cluster normal, roll about the approach
/// direction, then tilt away by `tilt_angle` toward `tilt_azimuth`.
pub fn orientation_from_angles(
    mean_normal: &Vector3<f64>,
    approach_axis: &Vector3<f64>,
    roll: f64,
    tilt_azimuth: f64,
    tilt_angle: f64,
) -> Matrix3<f64> {
    let desired = -mean_normal.normalize();
    let align = UnitQuaternion::rotation_between(approach_axis, &desired).unwrap_or_else(|| {
        // Antiparallel: rotate half a turn about any perpendicular axis.
        let perp = perpendicular(approach_axis);
        UnitQuaternion::from_axis_angle(
            &nalgebra::Unit::new_normalize(perp),
            std::f64::consts::PI,
        )
    });
    let roll_rot = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(desired), roll);
    let e1 = perpendicular(&desired).normalize();
    let tilt_axis = UnitQuaternion::from_axis_angle(
        &nalgebra::Unit::new_normalize(desired),
        tilt_azimuth,
    ) * e1;
    let tilt_rot = UnitQuaternion::from_axis_angle(
        &nalgebra::Unit::new_normalize(tilt_axis),
        tilt_angle,
    );
    (tilt_rot * roll_rot * align).to_rotation_matrix().into_inner()
}

fn perpendicular(v: &Vector3<f64>) -> Vector3<f64> {
    let candidate = if v.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    v.cross(&candidate)
}

/// Draws a seed orientation: uniform roll about the approach direction and
/// a uniform tilt within a cone of `tilt_half_angle` around the negative
/// cluster normal.
pub fn sample_orientation(
    record: &ClusterRecord,
    gripper: &GripperModel,
    tilt_half_angle: f64,
    rng: &mut impl Rng,
) -> Matrix3<f64> {
    let roll = rng.random::<f64>() * std::f64::consts::TAU;
    let azimuth = rng.random::<f64>() * std::f64::consts::TAU;
    let tilt = rng.random::<f64>() * tilt_half_angle;
    orientation_from_angles(
        &record.mean_normal,
        &gripper.approach_axis,
        roll,
        azimuth,
        tilt,
    )
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorerParams {
    /// k-means cluster count K.
    pub clusters: usize,
    pub kmeans_max_iters: usize,
    /// Probability of a uniform exploration draw; 0 reproduces pure
    /// minimum-regret selection.
    pub epsilon_explore: f64,
    pub weights: RegretWeights,
    /// Seed standoff along the cluster normal in meters.
    pub seed_standoff: f64,
    /// Cone half-angle for the random seed tilt.
    pub tilt_half_angle: f64,
    /// Initial jaw width d_0 for seeded runs.
    pub initial_width: f64,
    /// Finite error charged to the regret model when ISF fails to converge.
    pub fail_error_penalty: f64,
    /// Seeds evaluated in parallel between regret updates. Selection within
    /// a batch sees the records as of the batch start (bounded staleness);
    /// results are folded in deterministically in run order.
    pub batch_size: usize,
}

impl Default for ExplorerParams {
    fn default() -> Self {
        Self {
            clusters: 6,
            kmeans_max_iters: 50,
            epsilon_explore: 0.1,
            weights: RegretWeights::default(),
            seed_standoff: 0.005,
            tilt_half_angle: 20f64.to_radians(),
            initial_width: 0.02,
            fail_error_penalty: 1e-2,
            batch_size: 4,
        }
    }
}

impl ExplorerParams {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::invalid("clusters must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_explore) {
            return Err(Error::invalid("epsilon_explore must lie in [0, 1]"));
        }
        if self.seed_standoff < 0.0 {
            return Err(Error::invalid("seed_standoff must be >= 0"));
        }
        if !(self.tilt_half_angle >= 0.0 && self.tilt_half_angle < std::f64::consts::FRAC_PI_2)
        {
            return Err(Error::invalid("tilt_half_angle must lie in [0, pi/2)"));
        }
        if !(self.initial_width > 0.0) {
            return Err(Error::invalid("initial_width must be > 0"));
        }
        if !(self.fail_error_penalty > 0.0) {
            return Err(Error::invalid("fail_error_penalty must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Search budget; the run cap keeps results reproducible, the wall-clock
/// cap (when set) truncates at batch boundaries.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    pub max_isf_runs: usize,
    pub max_wall_time_s: Option<f64>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_isf_runs: 60,
            max_wall_time_s: None,
        }
    }
}

/// One evaluated grasp candidate.
#[derive(Debug, Clone, Copy)]
pub struct PlanEntry {
    pub pose: GraspPose,
    pub error: f64,
    pub collision_free: bool,
    pub reachable: bool,
    pub converged: bool,
    pub cluster: usize,
    pub run_index: usize,
}

impl PlanEntry {
    pub fn qualifies(&self) -> bool {
        self.converged && self.collision_free && self.reachable
    }
}

/// Ranked plan output. Qualifying grasps (converged, collision-free,
/// reachable) come first in ascending error order.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub grasps: Vec<PlanEntry>,
    pub isf_invocations: usize,
    pub wall_time: Duration,
    pub cluster_records: Vec<ClusterRecord>,
}

impl PlanResult {
    pub fn qualifying(&self) -> impl Iterator<Item = &PlanEntry> {
        self.grasps.iter().filter(|g| g.qualifies())
    }

    pub fn best(&self) -> Option<&PlanEntry> {
        self.grasps.first().filter(|g| g.qualifies())
    }

    /// Run index (1-based count of ISF invocations) of the first qualifying
    /// grasp below the error threshold.
    pub fn first_hit_invocation(&self, error_threshold: f64) -> Option<usize> {
        self.grasps
            .iter()
            .filter(|g| g.qualifies() && g.error <= error_threshold)
            .map(|g| g.run_index + 1)
            .min()
    }
}

pub(crate) fn rank_entries(entries: &mut Vec<PlanEntry>) {
    entries.sort_by(|a, b| {
        b.qualifies()
            .cmp(&a.qualifies())
            .then(a.error.total_cmp(&b.error))
            .then(a.run_index.cmp(&b.run_index))
    });
}

/// Everything a planning loop needs besides the seeding cloud.
pub struct PlanContext<'a> {
    pub scene: &'a Scene,
    pub gripper: &'a GripperModel,
    pub isf: &'a IsfParams,
    pub explorer: &'a ExplorerParams,
    pub collision: &'a CollisionParams,
    pub reachability: &'a ConeReachability,
}

/// The guided sampling loop over an arbitrary seeding cloud; shared by the
/// baseline planner (whole scene) and the region-seeded planner (cropped
/// sub-clouds). `run_offset` keeps run indices globally unique across
/// regions.
pub fn guided_loop(
    ctx: &PlanContext,
    seeding_cloud: &SurfaceCloud,
    clusters: usize,
    max_runs: usize,
    deadline: Option<Instant>,
    rng_seed: u64,
    run_offset: usize,
) -> Result<(Vec<PlanEntry>, Vec<ClusterRecord>, usize)> {
    let exp = ctx.explorer;
    let mut records = kmeans_clusters(
        seeding_cloud,
        clusters,
        exp.kmeans_max_iters,
        derive_seed(rng_seed, "kmeans", run_offset as u64),
    )?;
    let object_index = ctx.scene.index()?;

    let mut entries: Vec<PlanEntry> = Vec::new();
    let mut converged_errors: Vec<f64> = Vec::new();
    let mut error_ref: Option<f64> = None;
    let mut runs = 0usize;

    while runs < max_runs {
        if let Some(deadline) = deadline {
            if Instant::now() >= deadline {
                break;
            }
        }
        let batch = exp.batch_size.min(max_runs - runs);
        let mut seeds = Vec::with_capacity(batch);
        for b in 0..batch {
            let run_index = run_offset + runs + b;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, "run", run_index as u64));
            let cluster = select_cluster(&records, exp.epsilon_explore, &mut rng)?;
            let rotation =
                sample_orientation(&records[cluster], ctx.gripper, exp.tilt_half_angle, &mut rng);
            let position =
                records[cluster].center + records[cluster].mean_normal * exp.seed_standoff;
            let width = ctx.gripper.clamp_width(exp.initial_width);
            seeds.push((run_index, cluster, GraspPose::new(rotation, position, width)));
        }

        let evaluated: Result<Vec<(usize, usize, TrialOutcome, PlanEntry)>> = seeds
            .par_iter()
            .map(|&(run_index, cluster, seed)| {
                let outcome = isf_run(&ctx.scene.cloud, object_index, ctx.gripper, &seed, ctx.isf)?;
                let report = collision_check(ctx.scene, ctx.gripper, &outcome.grasp, ctx.collision)?;
                let reachable = ctx
                    .reachability
                    .reachable(&outcome.grasp, ctx.gripper, ctx.scene);
                let trial = TrialOutcome {
                    error: if outcome.converged {
                        outcome.error
                    } else {
                        exp.fail_error_penalty
                    },
                    collided: report.collided,
                    reachable,
                };
                let entry = PlanEntry {
                    pose: outcome.grasp,
                    error: outcome.error,
                    collision_free: !report.collided,
                    reachable,
                    converged: outcome.converged,
                    cluster,
                    run_index,
                };
                Ok((run_index, cluster, trial, entry))
            })
            .collect();
        let evaluated = evaluated?;

        for (_, cluster, trial, entry) in evaluated {
            if entry.converged {
                let pos = converged_errors.partition_point(|&e| e <= trial.error);
                converged_errors.insert(pos, trial.error);
                let mid = converged_errors.len() / 2;
                let median = if converged_errors.len() % 2 == 1 {
                    converged_errors[mid]
                } else {
                    0.5 * (converged_errors[mid - 1] + converged_errors[mid])
                };
                error_ref = Some(median);
            }
            let e_ref = error_ref.unwrap_or(exp.fail_error_penalty).max(1e-12);
            update_regret(&mut records[cluster], &trial, &exp.weights, e_ref);
            for record in &mut records {
                record.refresh_regret(&exp.weights, e_ref);
            }
            entries.push(entry);
        }
        runs += batch;
    }
    Ok((entries, records, runs))
}

/// Baseline planning: k-means over the whole scene cloud, then the guided
/// sampling loop until the budget is exhausted. Reproducible bit-for-bit
/// for a fixed `rng_seed` when no wall-clock cap is set.
pub fn baseline_plan(
    ctx: &PlanContext,
    budget: &Budget,
    rng_seed: u64,
) -> Result<PlanResult> {
    ctx.explorer.validate()?;
    ctx.isf.validate()?;
    ctx.collision.validate()?;
    let start = Instant::now();
    if budget.max_isf_runs == 0 {
        return Ok(PlanResult {
            grasps: Vec::new(),
            isf_invocations: 0,
            wall_time: start.elapsed(),
            cluster_records: Vec::new(),
        });
    }
    if ctx.scene.cloud.is_empty() {
        return Err(Error::invalid("cannot plan on an empty scene"));
    }
    let deadline = budget
        .max_wall_time_s
        .map(|s| start + Duration::from_secs_f64(s));
    let (mut entries, records, runs) = guided_loop(
        ctx,
        &ctx.scene.cloud,
        ctx.explorer.clusters,
        budget.max_isf_runs,
        deadline,
        rng_seed,
        0,
    )?;
    rank_entries(&mut entries);
    Ok(PlanResult {
        grasps: entries,
        isf_invocations: runs,
        wall_time: start.elapsed(),
        cluster_records: records,
    })
}
