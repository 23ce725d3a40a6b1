//! Deterministic 5x5 grid. The agent starts in the top-left cell `(0, 0)` and
//! the goal is the bottom-right cell `(4, 4)`. Moves into a wall leave the
//! agent in place.

use super::frame::{Frame, Rgb};
use super::{ActionLabel, Observation};

pub const SIZE: i32 = 5;
pub const GOAL: (i32, i32) = (SIZE - 1, SIZE - 1);

const BACKGROUND: Rgb = [250, 250, 250];
const CELL: Rgb = [215, 215, 215];
const GOAL_COLOR: Rgb = [60, 170, 80];
const AGENT_COLOR: Rgb = [40, 90, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GridWorld {
    pub x: i32,
    pub y: i32,
}

impl GridWorld {
    pub const ACTIONS: [ActionLabel; 5] = [
        ActionLabel::Up,
        ActionLabel::Down,
        ActionLabel::Left,
        ActionLabel::Right,
        ActionLabel::Noop,
    ];

    pub fn at(x: i32, y: i32) -> Self {
        GridWorld {
            x: x.clamp(0, SIZE - 1),
            y: y.clamp(0, SIZE - 1),
        }
    }

    /// Cell reached by `action` from `(x, y)`, ignoring episode bookkeeping.
    pub fn successor(x: i32, y: i32, action: usize) -> (i32, i32) {
        let (dx, dy) = match Self::ACTIONS.get(action) {
            Some(ActionLabel::Up) => (0, -1),
            Some(ActionLabel::Down) => (0, 1),
            Some(ActionLabel::Left) => (-1, 0),
            Some(ActionLabel::Right) => (1, 0),
            _ => (0, 0),
        };
        ((x + dx).clamp(0, SIZE - 1), (y + dy).clamp(0, SIZE - 1))
    }

    pub(super) fn step(&mut self, action: usize) -> bool {
        let (x, y) = Self::successor(self.x, self.y, action);
        self.x = x;
        self.y = y;
        (x, y) == GOAL
    }

    pub fn observation(&self) -> Observation {
        Observation::new(vec![self.x as f64, self.y as f64])
    }

    pub fn render(&self, width: u32, height: u32) -> Frame {
        let mut frame = Frame::filled(width, height, BACKGROUND);
        let cell = (width.min(height) as i64 / SIZE as i64).max(1);
        let ox = (width as i64 - cell * SIZE as i64) / 2;
        let oy = (height as i64 - cell * SIZE as i64) / 2;
        for gy in 0..SIZE {
            for gx in 0..SIZE {
                let color = if (gx, gy) == (self.x, self.y) {
                    AGENT_COLOR
                } else if (gx, gy) == GOAL {
                    GOAL_COLOR
                } else {
                    CELL
                };
                let x0 = ox + gx as i64 * cell;
                let y0 = oy + gy as i64 * cell;
                // one-pixel gutter draws the grid lines
                frame.fill_rect(x0 + 1, y0 + 1, x0 + cell - 1, y0 + cell - 1, color);
            }
        }
        frame
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walls_clip_moves() {
        assert_eq!(GridWorld::successor(0, 0, 0), (0, 0));
        assert_eq!(GridWorld::successor(0, 0, 2), (0, 0));
        assert_eq!(GridWorld::successor(4, 4, 1), (4, 4));
        assert_eq!(GridWorld::successor(2, 2, 4), (2, 2));
    }

    #[test]
    fn goal_block_differs_from_empty_block() {
        let f = GridWorld::at(0, 0).render(320, 240);
        let cell = 240 / 5;
        let ox = (320 - cell * 5) / 2;
        let centre = |gx: u32, gy: u32| f.pixel(ox + gx * cell + cell / 2, gy * cell + cell / 2);
        assert_ne!(centre(4, 4), centre(2, 2));
        assert_ne!(centre(0, 0), centre(2, 2));
        assert_ne!(centre(0, 0), centre(4, 4));
    }
}
