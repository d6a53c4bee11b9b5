//! Top-down schematic renders: a disc per avatar, a wedge for its heading,
//! a stroke for the extended limb, and a marker at the hand for a closed
//! fist or a held object.

use std::io::Cursor;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb, RgbImage};
use imageproc::drawing::{
    draw_filled_circle_mut, draw_filled_rect_mut, draw_hollow_circle_mut, draw_line_segment_mut,
    draw_polygon_mut,
};
use imageproc::point::Point;
use imageproc::rect::Rect;

use super::{AvatarState, SynthError, Trajectory, Vec2};
use crate::media_ingest::VrClipWriter;

pub const FRAME_SIDE: u32 = 200;
const BODY_RADIUS_M: f64 = 0.2;

const FLOOR: Rgb<u8> = Rgb([236, 236, 230]);
const GRID: Rgb<u8> = Rgb([214, 214, 206]);
const WALL: Rgb<u8> = Rgb([90, 90, 90]);
const INK: Rgb<u8> = Rgb([30, 30, 30]);
const AVATAR_COLORS: [Rgb<u8>; 2] = [Rgb([52, 101, 164]), Rgb([204, 102, 0])];

struct Canvas {
    scale: f64,
    height: f64,
}

impl Canvas {
    fn new(bounds: Vec2) -> Self {
        Self {
            scale: FRAME_SIDE as f64 / bounds.x.max(bounds.y),
            height: FRAME_SIDE as f64,
        }
    }

    /// World meters to pixel coordinates, y axis pointing up.
    fn px(&self, p: Vec2) -> (f32, f32) {
        ((p.x * self.scale) as f32, (self.height - p.y * self.scale) as f32)
    }

    fn ipx(&self, p: Vec2) -> (i32, i32) {
        let (x, y) = self.px(p);
        (x.round() as i32, y.round() as i32)
    }
}

fn background(traj: &Trajectory, canvas: &Canvas) -> RgbImage {
    let mut img = RgbImage::from_pixel(FRAME_SIDE, FRAME_SIDE, FLOOR);
    let mut m = 1.0;
    while m < traj.bounds.x.max(traj.bounds.y) {
        let (x, _) = canvas.px(Vec2::new(m, 0.0));
        let (_, y) = canvas.px(Vec2::new(0.0, m));
        draw_line_segment_mut(&mut img, (x, 0.0), (x, FRAME_SIDE as f32), GRID);
        draw_line_segment_mut(&mut img, (0.0, y), (FRAME_SIDE as f32, y), GRID);
        m += 1.0;
    }
    let last = FRAME_SIDE - 1;
    for (a, b) in [((0, 0), (last, 0)), ((0, last), (last, last)), ((0, 0), (0, last)), ((last, 0), (last, last))] {
        draw_line_segment_mut(
            &mut img,
            (a.0 as f32, a.1 as f32),
            (b.0 as f32, b.1 as f32),
            WALL,
        );
    }
    img
}

fn draw_avatar(img: &mut RgbImage, canvas: &Canvas, s: &AvatarState, color: Rgb<u8>) {
    let r = (BODY_RADIUS_M * canvas.scale).round() as i32;
    let center = canvas.ipx(s.position);
    draw_filled_circle_mut(img, center, r, color);

    let dir = Vec2::from_angle(s.heading);
    let side = dir.perp() * (BODY_RADIUS_M * 0.6);
    let nose = s.position + dir * (BODY_RADIUS_M * 1.6);
    let base = s.position + dir * (BODY_RADIUS_M * 0.8);
    let wedge: Vec<Point<i32>> = [nose, base + side, base - side]
        .iter()
        .map(|p| {
            let (x, y) = canvas.ipx(*p);
            Point::new(x, y)
        })
        .collect();
    if wedge[0] != wedge[1] && wedge[1] != wedge[2] && wedge[0] != wedge[2] {
        draw_polygon_mut(img, &wedge, INK);
    }

    let tip = s.limb_tip();
    draw_line_segment_mut(img, canvas.px(s.position), canvas.px(tip), INK);
    let (tx, ty) = canvas.ipx(tip);
    if s.held_object {
        let half = 3;
        draw_filled_rect_mut(img, Rect::at(tx - half, ty - half).of_size(7, 7), INK);
    } else if s.fist_closed {
        draw_filled_circle_mut(img, (tx, ty), 3, INK);
    } else {
        draw_hollow_circle_mut(img, (tx, ty), 3, INK);
    }
}

pub fn render_frame(traj: &Trajectory, tick: usize) -> RgbImage {
    let canvas = Canvas::new(traj.bounds);
    let mut img = background(traj, &canvas);
    draw_tick(&mut img, &canvas, traj, tick);
    img
}

fn draw_tick(img: &mut RgbImage, canvas: &Canvas, traj: &Trajectory, tick: usize) {
    for (i, series) in traj.avatars.iter().enumerate() {
        draw_avatar(img, canvas, &series[tick], AVATAR_COLORS[i % AVATAR_COLORS.len()]);
    }
}

fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

/// Render every tick into a `VRCLIP1` container at `1/dt` frames per second.
pub fn render_clip(traj: &Trajectory) -> Result<Vec<u8>, SynthError> {
    let canvas = Canvas::new(traj.bounds);
    let bg = background(traj, &canvas);
    let mut writer = VrClipWriter::new(Vec::new(), 1.0 / traj.dt, FRAME_SIDE, FRAME_SIDE, traj.ticks())?;
    for tick in 0..traj.ticks() {
        let mut img = bg.clone();
        draw_tick(&mut img, &canvas, traj, tick);
        writer.push_png(&encode_png(&img))?;
    }
    Ok(writer.finish()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_ingest::{ClipDecoder, VrClipDecoder};
    use crate::synth_arena::{simulate, BehaviorScript};
    use crate::taxonomy::Subcategory;

    #[test]
    fn rendering_is_deterministic_per_seed() {
        let script = BehaviorScript::new(Subcategory::Slapping, 10.0, 42);
        let a = render_clip(&simulate(&script).unwrap()).unwrap();
        let b = render_clip(&simulate(&script).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = render_clip(&simulate(&BehaviorScript::new(Subcategory::Slapping, 10.0, 43)).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn clip_decodes_back_to_rendered_frames() {
        let traj = simulate(&BehaviorScript::new(Subcategory::Looming, 10.0, 1)).unwrap();
        let bytes = render_clip(&traj).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.vrclip");
        std::fs::write(&path, &bytes).unwrap();
        let probe = VrClipDecoder.probe(&path).unwrap();
        assert_eq!(probe.frame_count, 100);
        assert!((probe.fps - 10.0).abs() < 1e-9);
        let frames = VrClipDecoder.frames(&path, &[37]).unwrap();
        assert_eq!(frames[0], render_frame(&traj, 37));
    }

    #[test]
    fn avatars_are_visible() {
        let traj = simulate(&BehaviorScript::new(Subcategory::BenignOther, 10.0, 2)).unwrap();
        let img = render_frame(&traj, 0);
        for color in AVATAR_COLORS {
            assert!(img.pixels().any(|p| *p == color));
        }
    }
}
