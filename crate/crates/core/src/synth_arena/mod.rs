//! Synthetic labeled corpus: scripted two-avatar trajectories, top-down
//! schematic renders and a rule oracle that labels any 10 s window.
//!
//! The generator and the oracle share nothing but the trajectory, so the
//! oracle doubles as an independent check on the generator.

mod kinematics;
pub mod oracle;
pub mod render;

use std::fs;
use std::ops::{Add, Mul, Neg, Sub};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media_ingest::{store::sha256_hex, ClipRecord, Room, Truth};
use crate::taxonomy::Subcategory;
pub use oracle::{oracle_classify, OracleThresholds, OracleVerdict};

pub const DEFAULT_DT: f64 = 0.1;
pub const ARENA_SIZE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("window [{start}, {end}] s outside trajectory of {duration} s")]
    WindowOutOfRange { start: f64, end: f64, duration: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(a: f64) -> Self {
        Self::new(a.cos(), a.sin())
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotate(self, a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// One avatar at one tick. Positions in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvatarState {
    pub position: Vec2,
    pub heading: f64,
    /// Hand distance from the body center along the heading, meters.
    pub limb_extension: f64,
    pub fist_closed: bool,
    pub held_object: bool,
}

impl AvatarState {
    pub fn limb_tip(&self) -> Vec2 {
        self.position + Vec2::from_angle(self.heading) * self.limb_extension
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Seconds per tick.
    pub dt: f64,
    /// Arena extent; positions lie in `[0, bounds.x] × [0, bounds.y]`.
    pub bounds: Vec2,
    /// `avatars[i][t]` is avatar `i` at tick `t`.
    pub avatars: Vec<Vec<AvatarState>>,
}

impl Trajectory {
    pub fn ticks(&self) -> usize {
        self.avatars.first().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        self.ticks() as f64 * self.dt
    }

    pub fn within_bounds(&self) -> bool {
        self.avatars.iter().flatten().all(|s| {
            (0.0..=self.bounds.x).contains(&s.position.x) && (0.0..=self.bounds.y).contains(&s.position.y)
        })
    }

    /// Tick range covering `[start, start + len)`.
    pub fn window_ticks(&self, start: f64, len: f64) -> Result<std::ops::Range<usize>, SynthError> {
        const EPS: f64 = 1e-9;
        let duration = self.duration();
        if !(start >= 0.0) || !(len > 0.0) || start + len > duration + EPS {
            return Err(SynthError::WindowOutOfRange {
                start,
                end: start + len,
                duration,
            });
        }
        let first = (start / self.dt - EPS).ceil() as usize;
        let end = (((start + len) / self.dt) - EPS).ceil() as usize;
        Ok(first..end.min(self.ticks()))
    }

    /// Apply a rigid motion: rotate by `angle` about `pivot`, then translate.
    pub fn transformed(&self, angle: f64, pivot: Vec2, shift: Vec2) -> Trajectory {
        let mut out = self.clone();
        for s in out.avatars.iter_mut().flatten() {
            s.position = (s.position - pivot).rotate(angle) + pivot + shift;
            s.heading += angle;
        }
        out
    }
}

/// A scripted scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorScript {
    pub scenario: Subcategory,
    /// Seconds, at least 10.
    pub duration: f64,
    /// Avatar index performing the behavior.
    pub actor: usize,
    /// Avatar index on the receiving end.
    pub target: usize,
    pub seed: u64,
}

impl BehaviorScript {
    pub fn new(scenario: Subcategory, duration: f64, seed: u64) -> Self {
        Self {
            scenario,
            duration,
            actor: 0,
            target: 1,
            seed,
        }
    }

    pub fn check(&self) -> Result<(), SynthError> {
        if !(self.duration >= 10.0 && self.duration.is_finite()) {
            return Err(SynthError::InvalidScript(format!(
                "duration {} s is shorter than one 10 s segment",
                self.duration
            )));
        }
        if self.actor > 1 || self.target > 1 || self.actor == self.target {
            return Err(SynthError::InvalidScript(
                "actor and target must be distinct avatars 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

/// Enact a script as a trajectory.
pub fn simulate(script: &BehaviorScript) -> Result<Trajectory, SynthError> {
    script.check()?;
    Ok(kinematics::enact(script, DEFAULT_DT))
}

/// Sidecar contents: the trajectory keyed by the rendered clip's digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub clip_sha256: String,
    pub script: BehaviorScript,
    pub trajectory: Trajectory,
}

pub fn sidecar_path(dir: &Path, clip_sha256: &str) -> PathBuf {
    dir.join(format!("{clip_sha256}.json"))
}

pub fn load_sidecar(dir: &Path, clip_sha256: &str) -> Result<Sidecar, SynthError> {
    let bytes = fs::read(sidecar_path(dir, clip_sha256))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Debug, Clone)]
pub struct GeneratedClip {
    pub trajectory: Trajectory,
    pub clip_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub clip_sha256: String,
}

/// Simulate, render to `clip_path` and write the sidecar into `sidecar_dir`.
pub fn generate(
    script: &BehaviorScript,
    clip_path: &Path,
    sidecar_dir: &Path,
) -> Result<GeneratedClip, SynthError> {
    let trajectory = simulate(script)?;
    let bytes = render::render_clip(&trajectory)?;
    let clip_sha256 = sha256_hex(&bytes);
    if let Some(dir) = clip_path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(clip_path, &bytes)?;
    fs::create_dir_all(sidecar_dir)?;
    let sidecar = Sidecar {
        clip_sha256: clip_sha256.clone(),
        script: script.clone(),
        trajectory,
    };
    let path = sidecar_path(sidecar_dir, &clip_sha256);
    fs::write(&path, serde_json::to_vec(&sidecar)?)?;
    Ok(GeneratedClip {
        trajectory: sidecar.trajectory,
        clip_path: clip_path.to_path_buf(),
        sidecar_path: path,
        clip_sha256,
    })
}

fn slug(sub: Subcategory) -> &'static str {
    match sub {
        Subcategory::Punching => "punching",
        Subcategory::Slapping => "slapping",
        Subcategory::HittingWithObject => "hitting",
        Subcategory::Looming => "looming",
        Subcategory::FollowingStalking => "following",
        Subcategory::Blocking => "blocking",
        Subcategory::BenignOther => "benign",
    }
}

fn room_for(sub: Subcategory, draw: u64) -> Room {
    match sub {
        // blocking needs open floor space
        Subcategory::Blocking => Room::Communication,
        _ => Room::ALL[(draw % 4) as usize],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub count_per_class: usize,
    pub seed: u64,
    pub min_duration: f64,
    pub max_duration: f64,
    pub workers: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            count_per_class: 20,
            seed: 7,
            min_duration: 10.0,
            max_duration: 22.0,
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()),
        }
    }
}

/// Scripts for a class-balanced corpus; deterministic in `spec.seed`.
pub fn corpus_scripts(spec: &CorpusSpec) -> Vec<(String, BehaviorScript)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    for sub in Subcategory::ALL {
        for i in 0..spec.count_per_class {
            let duration = if spec.max_duration > spec.min_duration {
                rng.gen_range(spec.min_duration..spec.max_duration)
            } else {
                spec.min_duration
            };
            // whole ticks keep the rendered length equal to the recorded duration
            let duration = (duration * 10.0).round() / 10.0;
            let actor = rng.gen_range(0..2usize);
            let script = BehaviorScript {
                scenario: sub,
                duration,
                actor,
                target: 1 - actor,
                seed: rng.gen(),
            };
            out.push((format!("{}-{:03}", slug(sub), i), script));
        }
    }
    out
}

/// Write clips, sidecars and `manifest.jsonl` under `out`.
pub fn generate_corpus(spec: &CorpusSpec, out: &Path) -> Result<Vec<ClipRecord>, SynthError> {
    let scripts = corpus_scripts(spec);
    let clips_dir = out.join("clips");
    let sidecar_dir = out.join("sidecars");
    fs::create_dir_all(&clips_dir)?;
    fs::create_dir_all(&sidecar_dir)?;

    let next = AtomicUsize::new(0);
    let records = Mutex::new(Vec::with_capacity(scripts.len()));
    let failure = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..spec.workers.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((clip_id, script)) = scripts.get(i) else { break };
                let path = clips_dir.join(format!("{clip_id}.vrclip"));
                match generate(script, &path, &sidecar_dir) {
                    Ok(clip) => records.lock().unwrap().push((
                        i,
                        ClipRecord {
                            clip_id: clip_id.clone(),
                            path: PathBuf::from("clips").join(format!("{clip_id}.vrclip")),
                            duration: clip.trajectory.duration(),
                            fps: 1.0 / DEFAULT_DT,
                            participant_count: 2,
                            room: room_for(script.scenario, script.seed),
                            truth: Some(Truth::from_subcategory(script.scenario)),
                        },
                    )),
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut records = records.into_inner().unwrap();
    records.sort_by_key(|(i, _)| *i);
    let records: Vec<ClipRecord> = records.into_iter().map(|(_, r)| r).collect();
    crate::media_ingest::write_manifest(&out.join("manifest.jsonl"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::Stage2Label;

    fn classify_all_windows(traj: &Trajectory) -> Vec<OracleVerdict> {
        let th = OracleThresholds::default();
        let windows = (traj.duration() / 10.0 + 1e-9).floor() as usize;
        (0..windows)
            .map(|w| oracle_classify(traj, w as f64 * 10.0, 10.0, &th).unwrap())
            .collect()
    }

    #[test]
    fn invalid_scripts() {
        assert!(simulate(&BehaviorScript::new(Subcategory::Punching, 9.9, 1)).is_err());
        let mut s = BehaviorScript::new(Subcategory::Punching, 12.0, 1);
        s.target = 0;
        assert!(matches!(simulate(&s), Err(SynthError::InvalidScript(_))));
    }

    #[test]
    fn every_scenario_is_labeled_as_scripted_in_every_window() {
        for sub in Subcategory::ALL {
            for seed in 0..12u64 {
                let duration = 10.0 + (seed as f64 * 1.7) % 15.0;
                let mut script = BehaviorScript::new(sub, (duration * 10.0).round() / 10.0, seed);
                if seed % 2 == 1 {
                    script.actor = 1;
                    script.target = 0;
                }
                let traj = simulate(&script).unwrap();
                assert!(traj.within_bounds(), "{sub:?} seed {seed} leaves the arena");
                for (w, v) in classify_all_windows(&traj).into_iter().enumerate() {
                    assert_eq!(v.subcategory, sub, "{sub:?} seed {seed} window {w}");
                    assert_eq!(v.label, sub.parent());
                }
            }
        }
    }

    #[test]
    fn punching_has_a_close_fast_closed_fist_tick() {
        let traj = simulate(&BehaviorScript::new(Subcategory::Punching, 10.0, 3)).unwrap();
        let (a, v) = (&traj.avatars[0], &traj.avatars[1]);
        let hit = (0..traj.ticks()).any(|t| {
            (a[t].position - v[t].position).norm() < 0.5 && a[t].limb_extension > 0.6 && a[t].fist_closed
        });
        assert!(hit);
    }

    #[test]
    fn following_twelve_seconds_is_one_segment() {
        let traj = simulate(&BehaviorScript::new(Subcategory::FollowingStalking, 12.0, 5)).unwrap();
        assert_eq!(traj.ticks(), 120);
        assert_eq!(crate::media_ingest::segment_spans(traj.duration()).len(), 1);
    }

    #[test]
    fn benign_never_fires_a_rule() {
        for seed in 0..30 {
            let traj = simulate(&BehaviorScript::new(Subcategory::BenignOther, 25.0, seed)).unwrap();
            let th = OracleThresholds::default();
            // sliding windows, not just segment-aligned ones
            let mut start = 0.0;
            while start + 10.0 <= traj.duration() + 1e-9 {
                let v = oracle_classify(&traj, start, 10.0, &th).unwrap();
                assert_eq!(v.label, Stage2Label::BenignBehavior, "seed {seed} at {start}");
                start += 2.5;
            }
        }
    }

    #[test]
    fn oracle_invariant_to_rigid_motion() {
        let th = OracleThresholds::default();
        for sub in Subcategory::ALL {
            let traj = simulate(&BehaviorScript::new(sub, 14.0, 11)).unwrap();
            let base = oracle_classify(&traj, 0.0, 10.0, &th).unwrap();
            for (angle, shift) in [(0.7, Vec2::new(1.0, -2.0)), (3.0, Vec2::new(-4.0, 7.5)), (-1.2, Vec2::default())] {
                let moved = traj.transformed(angle, Vec2::new(5.0, 5.0), shift);
                assert_eq!(oracle_classify(&moved, 0.0, 10.0, &th).unwrap(), base, "{sub:?} {angle}");
            }
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let s = BehaviorScript::new(Subcategory::Blocking, 15.0, 99);
        assert_eq!(simulate(&s).unwrap(), simulate(&s).unwrap());
        let other = BehaviorScript::new(Subcategory::Blocking, 15.0, 100);
        assert_ne!(simulate(&s).unwrap(), simulate(&other).unwrap());
    }

    #[test]
    fn corpus_scripts_are_balanced_and_reproducible() {
        let spec = CorpusSpec {
            count_per_class: 3,
            ..Default::default()
        };
        let a = corpus_scripts(&spec);
        assert_eq!(a.len(), 21);
        assert_eq!(a, corpus_scripts(&spec));
        for sub in Subcategory::ALL {
            assert_eq!(a.iter().filter(|(_, s)| s.scenario == sub).count(), 3);
        }
        assert!(a.iter().all(|(_, s)| s.duration >= 10.0 && s.duration < 22.0 + 1e-9));
    }
}
