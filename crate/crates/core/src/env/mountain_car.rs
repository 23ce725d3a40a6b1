//! Classic Mountain Car: an underpowered cart in a valley must rock back and
//! forth to build enough momentum to reach the flag at `x >= 0.5`.

use super::frame::{Frame, Rgb};
use super::{ActionLabel, Observation};

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.5;
pub const FORCE: f64 = 0.001;
pub const GRAVITY: f64 = 0.0025;
pub const START_LOW: f64 = -0.6;
pub const START_HIGH: f64 = -0.4;

const SKY: Rgb = [225, 238, 250];
const GROUND: Rgb = [120, 96, 64];
const CART: Rgb = [30, 30, 30];
const POLE: Rgb = [80, 80, 80];
const FLAG: Rgb = [240, 200, 20];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MountainCar {
    pub position: f64,
    pub velocity: f64,
}

/// One application of the dynamics. `action` is 0 (push left), 1 (coast) or
/// 2 (push right).
pub fn dynamics(position: f64, velocity: f64, action: usize) -> (f64, f64) {
    let push = action as f64 - 1.0;
    let mut v = velocity + FORCE * push - GRAVITY * (3.0 * position).cos();
    v = v.clamp(-MAX_SPEED, MAX_SPEED);
    let x = (position + v).clamp(MIN_POSITION, MAX_POSITION);
    if x == MIN_POSITION {
        v = 0.0;
    }
    (x, v)
}

impl MountainCar {
    pub const ACTIONS: [ActionLabel; 3] = [ActionLabel::Left, ActionLabel::Noop, ActionLabel::Right];

    pub fn new(position: f64, velocity: f64) -> Self {
        MountainCar {
            position: position.clamp(MIN_POSITION, MAX_POSITION),
            velocity: velocity.clamp(-MAX_SPEED, MAX_SPEED),
        }
    }

    /// Returns whether the goal was reached.
    pub(super) fn step(&mut self, action: usize) -> bool {
        let (x, v) = dynamics(self.position, self.velocity, action);
        self.position = x;
        self.velocity = v;
        x >= GOAL_POSITION
    }

    pub fn observation(&self) -> Observation {
        Observation::new(vec![self.position, self.velocity])
    }

    pub fn render(&self, width: u32, height: u32) -> Frame {
        let mut frame = Frame::filled(width, height, SKY);
        let w = width as f64;
        let h = height as f64;
        let to_px = |x: f64| ((x - MIN_POSITION) / (MAX_POSITION - MIN_POSITION) * (w - 1.0)).round() as i64;
        // hill height sin(3x) in [-1, 1] mapped into the lower 70% of the frame
        let to_py = |x: f64| (h * 0.9 - ((3.0 * x).sin() + 1.0) * 0.5 * h * 0.6).round() as i64;

        for px in 0..width as i64 {
            let x = MIN_POSITION + px as f64 / (w - 1.0) * (MAX_POSITION - MIN_POSITION);
            frame.fill_rect(px, to_py(x), px + 1, height as i64, GROUND);
        }

        let gx = to_px(GOAL_POSITION);
        let gy = to_py(GOAL_POSITION);
        let pole_h = (h / 8.0).max(6.0) as i64;
        frame.fill_rect(gx, gy - pole_h, gx + 1, gy, POLE);
        let flag = (w / 40.0).max(3.0) as i64;
        frame.fill_rect(gx + 1, gy - pole_h, gx + 1 + flag, gy - pole_h + flag, FLAG);

        let size = (w.min(h) / 16.0).max(4.0) as i64;
        let cx = to_px(self.position);
        let cy = to_py(self.position);
        frame.fill_rect(cx - size / 2, cy - size, cx - size / 2 + size, cy, CART);
        frame
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_right_from_valley() {
        // v' = 0.001 - 0.0025*cos(-1.5), cos(-1.5) = 0.0707372...
        let (x, v) = dynamics(-0.5, 0.0, 2);
        assert!((v - 0.000823157).abs() < 1e-8, "v = {v}");
        assert!((x - (-0.499176843)).abs() < 1e-8, "x = {x}");
    }

    #[test]
    fn coasting_at_inflection_is_fixed() {
        let x0 = -std::f64::consts::PI / 6.0;
        let (x, v) = dynamics(x0, 0.0, 1);
        assert!(v.abs() < 1e-15);
        assert!((x - x0).abs() < 1e-15);
    }

    #[test]
    fn left_wall_is_inelastic() {
        let (x, v) = dynamics(-1.19, -0.05, 0);
        assert_eq!(x, MIN_POSITION);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn speed_is_clamped() {
        let (_, v) = dynamics(0.0, 0.0699, 2);
        assert!(v <= MAX_SPEED);
    }
}
