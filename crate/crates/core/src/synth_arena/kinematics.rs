//! Scenario kinematics.
//!
//! Each scenario is laid out in a local frame around the origin and then
//! rotated and placed near the arena center. Behaviors repeat on cycles
//! short enough that every 10 s window contains at least one full episode.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AvatarState, BehaviorScript, Trajectory, Vec2, ARENA_SIZE};
use crate::taxonomy::Subcategory;

const REST_EXTENSION: f64 = 0.15;

fn state(position: Vec2, heading: f64) -> AvatarState {
    AvatarState {
        position,
        heading,
        limb_extension: REST_EXTENSION,
        fist_closed: false,
        held_object: false,
    }
}

/// Slow drift of a few centimeters, so nobody stands perfectly still.
#[derive(Clone, Copy)]
struct Sway {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Sway {
    fn draw(rng: &mut ChaCha8Rng, amp: f64) -> Self {
        Self {
            amp,
            freq: rng.gen_range(0.15..0.35),
            phase: rng.gen_range(0.0..TAU),
        }
    }

    fn at(&self, t: f64) -> Vec2 {
        let w = TAU * self.freq;
        Vec2::new((w * t + self.phase).sin(), (0.7 * w * t + 2.0 * self.phase).cos()) * self.amp
    }
}

/// Limb extension over one strike cycle, indexed by ticks since the strike began.
fn strike_extension(k: usize, rest: f64, peak: f64) -> f64 {
    match k {
        0 => rest,
        1 => rest + (peak - rest) / 2.0,
        2 | 3 => peak,
        4..=7 => peak - (peak - rest) * (k - 3) as f64 / 5.0,
        _ => rest,
    }
}

type Frame = (AvatarState, AvatarState);

fn strike(rng: &mut ChaCha8Rng, ticks: usize, dt: f64, kind: Subcategory) -> Vec<Frame> {
    let start = rng.gen_range(1.8..2.4);
    let stand = rng.gen_range(0.42..0.47);
    let speed = rng.gen_range(0.8..1.2);
    let period = (rng.gen_range(1.2..1.8) / dt).round() as usize;
    let arrive = (start - stand) / speed;
    let first = ((arrive + 0.3) / dt).ceil() as usize;
    let (rest, peak) = match kind {
        Subcategory::HittingWithObject => (0.2, rng.gen_range(0.75..0.85)),
        _ => (REST_EXTENSION, rng.gen_range(0.7..0.8)),
    };
    let sway = Sway::draw(rng, 0.02);
    (0..ticks)
        .map(|i| {
            let t = i as f64 * dt;
            let x = -(start - speed * t).max(stand);
            let mut actor = state(Vec2::new(x, 0.0), 0.0);
            actor.limb_extension = if i >= first {
                strike_extension((i - first) % period, rest, peak)
            } else {
                rest
            };
            actor.fist_closed = kind == Subcategory::Punching;
            actor.held_object = kind == Subcategory::HittingWithObject;
            let target = state(sway.at(t), PI + 0.1 * (0.5 * t).sin());
            (actor, target)
        })
        .collect()
}

fn looming(rng: &mut ChaCha8Rng, ticks: usize, dt: f64) -> Vec<Frame> {
    // A slow creep keeps the approach under the blocking reference speed,
    // otherwise the stop in front of the target reads as being blocked.
    let far = rng.gen_range(0.9..1.0);
    let near = rng.gen_range(0.25..0.33);
    let approach = (3.0 / dt).round() as usize;
    let hold = (rng.gen_range(2.5..2.8) / dt).round() as usize;
    let retreat = (1.0 / dt).round() as usize;
    let pause = (rng.gen_range(0.5..0.9) / dt).round() as usize;
    let cycle = approach + hold + retreat + pause;
    let from = rng.gen_range(0.0..TAU);
    let target_heading = from + rng.gen_range(-0.4..0.4);
    let sway = Sway::draw(rng, 0.01);
    (0..ticks)
        .map(|i| {
            let k = i % cycle;
            let gap = if k < approach {
                far + (near - far) * k as f64 / approach as f64
            } else if k < approach + hold {
                near
            } else if k < approach + hold + retreat {
                near + (far - near) * (k - approach - hold) as f64 / retreat as f64
            } else {
                far
            };
            let t = i as f64 * dt;
            let target_pos = sway.at(t);
            let actor_pos = target_pos + Vec2::from_angle(from) * gap;
            (
                state(actor_pos, (target_pos - actor_pos).angle()),
                state(target_pos, target_heading),
            )
        })
        .collect()
}

fn following(rng: &mut ChaCha8Rng, ticks: usize, dt: f64) -> Vec<Frame> {
    let radius = rng.gen_range(2.0..3.0);
    let speed = rng.gen_range(0.6..1.0);
    let gap = rng.gen_range(0.9..1.4);
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let theta0 = rng.gen_range(0.0..TAU);
    let wobble = rng.gen_range(0.0..TAU);
    (0..ticks)
        .map(|i| {
            let t = i as f64 * dt;
            let tv = theta0 + dir * speed * t / radius;
            let arc = gap + 0.1 * (0.5 * t + wobble).sin();
            let ta = tv - dir * arc / radius;
            let target_pos = Vec2::from_angle(tv) * radius;
            let actor_pos = Vec2::from_angle(ta) * radius;
            (
                state(actor_pos, (target_pos - actor_pos).angle()),
                state(target_pos, tv + dir * FRAC_PI_2),
            )
        })
        .collect()
}

fn blocking(rng: &mut ChaCha8Rng, ticks: usize, dt: f64) -> Vec<Frame> {
    const START_GAP: f64 = 2.1;
    let block = rng.gen_range(0.55..0.7);
    let walk_speed = rng.gen_range(0.9..1.2);
    let walk = ((START_GAP - block) / walk_speed / dt).round() as usize;
    let back = (1.0 / dt).round() as usize;
    let actor_sway = Sway::draw(rng, 0.015);
    let target_sway = Sway::draw(rng, 0.01);

    // per-cycle lane offsets and hold durations
    let mut out = Vec::with_capacity(ticks);
    let mut lane = rng.gen_range(-0.4..0.4);
    while out.len() < ticks {
        let hold = (rng.gen_range(2.2..2.6) / dt).round() as usize;
        let next_lane = rng.gen_range(-0.4..0.4);
        for k in 0..walk + hold + back {
            let t = out.len() as f64 * dt;
            let (target_x, target_y, actor_y) = if k < walk {
                let x = -START_GAP + walk_speed * dt * k as f64;
                (x, lane, lane)
            } else if k < walk + hold {
                (-block, lane, lane)
            } else {
                let f = (k - walk - hold + 1) as f64 / back as f64;
                let y = lane + (next_lane - lane) * f;
                (-block - (START_GAP - block) * f, y, y)
            };
            let target = state(Vec2::new(target_x, target_y) + target_sway.at(t) * ((k >= walk) as u8 as f64), 0.0);
            let actor = state(Vec2::new(0.0, actor_y) + actor_sway.at(t), PI);
            out.push((actor, target));
            if out.len() == ticks {
                break;
            }
        }
        lane = next_lane;
    }
    out
}

/// Waypoint walker confined to a rectangle.
struct Walker {
    pos: Vec2,
    goal: Vec2,
    heading: f64,
    speed: f64,
    lo: Vec2,
    hi: Vec2,
}

impl Walker {
    fn new(rng: &mut ChaCha8Rng, lo: Vec2, hi: Vec2) -> Self {
        let pos = Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
        let goal = Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
        Self {
            pos,
            goal,
            heading: (goal - pos).angle(),
            speed: rng.gen_range(0.5..0.9),
            lo,
            hi,
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, dt: f64) -> AvatarState {
        let to_goal = self.goal - self.pos;
        if to_goal.norm() < self.speed * dt {
            self.pos = self.goal;
            self.goal = Vec2::new(rng.gen_range(self.lo.x..self.hi.x), rng.gen_range(self.lo.y..self.hi.y));
        } else {
            self.heading = to_goal.angle();
            self.pos = self.pos + Vec2::from_angle(self.heading) * (self.speed * dt);
        }
        state(self.pos, self.heading)
    }
}

fn benign(rng: &mut ChaCha8Rng, ticks: usize, dt: f64) -> Vec<Frame> {
    match rng.gen_range(0..3) {
        // conversation at a comfortable distance with hand gestures
        0 => {
            let d = rng.gen_range(2.5..3.5);
            let (sa, sb) = (Sway::draw(rng, 0.03), Sway::draw(rng, 0.03));
            let (pa, pb) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            (0..ticks)
                .map(|i| {
                    let t = i as f64 * dt;
                    let mut a = state(Vec2::new(-d / 2.0, 0.0) + sa.at(t), 0.3 * (0.4 * t + pa).sin());
                    let mut b = state(Vec2::new(d / 2.0, 0.0) + sb.at(t), PI + 0.3 * (0.3 * t + pb).sin());
                    a.limb_extension = REST_EXTENSION + 0.15 * (1.0 - (1.5 * t + pa).cos());
                    b.limb_extension = REST_EXTENSION + 0.15 * (1.0 - (1.2 * t + pb).cos());
                    (a, b)
                })
                .collect()
        }
        // one avatar swings a hammer at a game target, the other watches from afar
        1 => {
            let period = (rng.gen_range(0.8..1.4) / dt).round() as usize;
            let watcher = Sway::draw(rng, 0.3);
            let player = Sway::draw(rng, 0.02);
            (0..ticks)
                .map(|i| {
                    let t = i as f64 * dt;
                    let mut a = state(Vec2::new(-1.5, 0.0) + player.at(t), PI);
                    a.held_object = true;
                    a.limb_extension = strike_extension(i % period, 0.2, 0.8);
                    let b = state(Vec2::new(1.5, 0.3) + watcher.at(t), PI);
                    (a, b)
                })
                .collect()
        }
        // independent wandering in separate halves of the room
        _ => {
            let mut a = Walker::new(rng, Vec2::new(-3.6, -2.5), Vec2::new(-1.1, 2.5));
            let mut b = Walker::new(rng, Vec2::new(1.1, -2.5), Vec2::new(3.6, 2.5));
            (0..ticks).map(|_| (a.step(rng, dt), b.step(rng, dt))).collect()
        }
    }
}

pub(super) fn enact(script: &BehaviorScript, dt: f64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let ticks = (script.duration / dt).round() as usize;
    let frames = match script.scenario {
        s @ (Subcategory::Punching | Subcategory::Slapping | Subcategory::HittingWithObject) => {
            strike(&mut rng, ticks, dt, s)
        }
        Subcategory::Looming => looming(&mut rng, ticks, dt),
        Subcategory::FollowingStalking => following(&mut rng, ticks, dt),
        Subcategory::Blocking => blocking(&mut rng, ticks, dt),
        Subcategory::BenignOther => benign(&mut rng, ticks, dt),
    };
    let angle = rng.gen_range(0.0..TAU);
    let center = Vec2::new(
        ARENA_SIZE / 2.0 + rng.gen_range(-0.3..0.3),
        ARENA_SIZE / 2.0 + rng.gen_range(-0.3..0.3),
    );
    let mut avatars = vec![Vec::with_capacity(ticks), Vec::with_capacity(ticks)];
    for (actor, target) in frames {
        avatars[script.actor].push(actor);
        avatars[script.target].push(target);
    }
    let local = Trajectory {
        dt,
        bounds: Vec2::new(ARENA_SIZE, ARENA_SIZE),
        avatars,
    };
    local.transformed(angle, Vec2::default(), center)
}
