//! Rule oracle over trajectory windows.
//!
//! Rules are checked in a fixed priority order, Aggressive > Disruptive >
//! PersonalSpaceViolation > Benign, over every ordered (actor, target) pair.
//! All predicates use relative quantities (distances, speeds, angle
//! differences), so the result is invariant under rigid motions of the scene.

use serde::{Deserialize, Serialize};

use super::{AvatarState, SynthError, Trajectory, Vec2};
use crate::taxonomy::{Stage2Label, Subcategory};

/// Kinematic thresholds. These are calibration constants, not measured values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleThresholds {
    pub strike_distance: f64,
    pub strike_tip_speed: f64,
    pub loom_distance: f64,
    pub loom_min_seconds: f64,
    pub loom_target_max_speed: f64,
    pub follow_min_speed: f64,
    pub follow_min_distance: f64,
    pub follow_max_distance: f64,
    pub follow_heading_tolerance_deg: f64,
    pub follow_min_seconds: f64,
    pub block_cone_deg: f64,
    pub block_distance: f64,
    pub block_min_seconds: f64,
    /// Fractional drop of the target's speed required during a block.
    pub block_speed_drop: f64,
    /// Length of the look-back used for the target's pre-block speed.
    pub block_reference_seconds: f64,
    /// The target must have been moving at least this fast before the block.
    pub block_min_reference_speed: f64,
}

impl Default for OracleThresholds {
    fn default() -> Self {
        Self {
            strike_distance: 0.5,
            strike_tip_speed: 2.0,
            loom_distance: 0.4,
            loom_min_seconds: 2.0,
            loom_target_max_speed: 0.2,
            follow_min_speed: 0.3,
            follow_min_distance: 0.5,
            follow_max_distance: 2.0,
            follow_heading_tolerance_deg: 30.0,
            follow_min_seconds: 5.0,
            block_cone_deg: 60.0,
            block_distance: 0.8,
            block_min_seconds: 2.0,
            block_speed_drop: 0.5,
            block_reference_seconds: 1.0,
            block_min_reference_speed: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub label: Stage2Label,
    pub subcategory: Subcategory,
}

/// Smallest absolute difference between two angles, in radians.
pub(crate) fn angle_between(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Per-avatar kinematics derived once per trajectory.
struct Kinematics {
    speed: Vec<Vec<f64>>,
    tip_speed: Vec<Vec<f64>>,
}

impl Kinematics {
    fn new(traj: &Trajectory) -> Self {
        let dt = traj.dt;
        let diff = |series: &[Vec2]| -> Vec<f64> {
            let mut out: Vec<f64> = series
                .windows(2)
                .map(|w| (w[1] - w[0]).norm() / dt)
                .collect();
            // first tick takes its successor's backward difference
            let first = out.first().copied().unwrap_or(0.0);
            out.insert(0, first);
            out
        };
        let mut speed = Vec::new();
        let mut tip_speed = Vec::new();
        for series in &traj.avatars {
            let pos: Vec<Vec2> = series.iter().map(|s| s.position).collect();
            let tips: Vec<Vec2> = series.iter().map(AvatarState::limb_tip).collect();
            speed.push(diff(&pos));
            tip_speed.push(diff(&tips));
        }
        Self { speed, tip_speed }
    }
}

/// Maximal runs `[start, end)` of ticks where `pred` holds.
fn runs(range: std::ops::Range<usize>, mut pred: impl FnMut(usize) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for t in range.clone() {
        match (pred(t), start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, range.end));
    }
    out
}

fn lasts(run: (usize, usize), dt: f64, seconds: f64) -> bool {
    (run.1 - run.0) as f64 * dt >= seconds - 1e-9
}

pub fn oracle_classify(
    traj: &Trajectory,
    window_start: f64,
    window_len: f64,
    th: &OracleThresholds,
) -> Result<OracleVerdict, SynthError> {
    let range = traj.window_ticks(window_start, window_len)?;
    let k = Kinematics::new(traj);
    let dt = traj.dt;
    let n = traj.avatars.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let state = |i: usize, t: usize| &traj.avatars[i][t];
    let dist = |a: usize, b: usize, t: usize| (state(a, t).position - state(b, t).position).norm();

    // Aggressive: fast limb while bodies are within striking distance.
    for t in range.clone() {
        for &(a, b) in &pairs {
            if dist(a, b, t) < th.strike_distance && k.tip_speed[a][t] > th.strike_tip_speed {
                let s = state(a, t);
                let subcategory = if s.fist_closed {
                    Subcategory::Punching
                } else if s.held_object {
                    Subcategory::HittingWithObject
                } else {
                    Subcategory::Slapping
                };
                return Ok(OracleVerdict {
                    label: Stage2Label::AggressiveBehavior,
                    subcategory,
                });
            }
        }
    }

    // Disruptive: actor stays in the cone ahead of the target while the
    // target's speed collapses.
    let half_cone = th.block_cone_deg.to_radians() / 2.0;
    let ref_ticks = (th.block_reference_seconds / dt).round().max(1.0) as usize;
    for &(a, b) in &pairs {
        let in_front = |t: usize| {
            let d = state(a, t).position - state(b, t).position;
            d.norm() < th.block_distance
                && angle_between(d.angle(), state(b, t).heading) <= half_cone
        };
        for run in runs(range.clone(), in_front) {
            if !lasts(run, dt, th.block_min_seconds) {
                continue;
            }
            let pre_start = run.0.saturating_sub(ref_ticks).max(range.start);
            // need most of the look-back inside the window
            if (run.0 - pre_start) * 2 < ref_ticks {
                continue;
            }
            let mean = |r: std::ops::Range<usize>| {
                let len = r.len() as f64;
                r.map(|t| k.speed[b][t]).sum::<f64>() / len
            };
            let before = mean(pre_start..run.0);
            let during = mean(run.0..run.1);
            if before >= th.block_min_reference_speed && during < (1.0 - th.block_speed_drop) * before {
                return Ok(OracleVerdict {
                    label: Stage2Label::DisruptiveBehavior,
                    subcategory: Subcategory::Blocking,
                });
            }
        }
    }

    // Personal space: looming first, then following.
    for &(a, b) in &pairs {
        let looming = |t: usize| dist(a, b, t) < th.loom_distance && k.speed[b][t] < th.loom_target_max_speed;
        if runs(range.clone(), looming).into_iter().any(|r| lasts(r, dt, th.loom_min_seconds)) {
            return Ok(OracleVerdict {
                label: Stage2Label::PersonalSpaceViolation,
                subcategory: Subcategory::Looming,
            });
        }
    }
    let tolerance = th.follow_heading_tolerance_deg.to_radians();
    for &(a, b) in &pairs {
        let following = |t: usize| {
            let d = dist(a, b, t);
            let bearing = (state(b, t).position - state(a, t).position).angle();
            k.speed[a][t] > th.follow_min_speed
                && k.speed[b][t] > th.follow_min_speed
                && (th.follow_min_distance..=th.follow_max_distance).contains(&d)
                && angle_between(state(a, t).heading, bearing) <= tolerance
        };
        if runs(range.clone(), following).into_iter().any(|r| lasts(r, dt, th.follow_min_seconds)) {
            return Ok(OracleVerdict {
                label: Stage2Label::PersonalSpaceViolation,
                subcategory: Subcategory::FollowingStalking,
            });
        }
    }

    Ok(OracleVerdict {
        label: Stage2Label::BenignBehavior,
        subcategory: Subcategory::BenignOther,
    })
}
