//! Deterministic bounded grid arenas with obstacle blocks.
//!
//! The robot observes three binary proximity flags (front, left, right
//! relative to its heading), giving 8 sensor states, and acts with one of
//! 3 moves. Rewards: +1 for a forward move into a free cell, -10 for a
//! collision (pose unchanged), 0 for turns.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Number of sensor states (3 binary proximity flags).
pub const NUM_SENSOR_STATES: usize = 8;
/// Number of robot actions.
pub const NUM_ACTIONS: usize = 3;

/// Reward for a forward move into a free cell.
pub const REWARD_FORWARD: f64 = 1.0;
/// Reward for driving into an obstacle.
pub const REWARD_COLLISION: f64 = -10.0;
/// Reward for a turn.
pub const REWARD_TURN: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArenaError {
    #[error(
        "infeasible arena {width}x{height} with {num_blocks} blocks: \
         {free_interior} interior cells available after reserving the spawn"
    )]
    Infeasible {
        width: usize,
        height: usize,
        num_blocks: usize,
        free_interior: usize,
    },
    #[error("pose ({x},{y}) is not a free cell of the arena")]
    InvalidPose { x: usize, y: usize },
}

/// Compass heading of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    /// Unit offset of this heading; y grows downward.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Heading::North => 0,
            Heading::East => 1,
            Heading::South => 2,
            Heading::West => 3,
        }
    }
}

/// The three robot moves, in fixed action-id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobotAction {
    Forward,
    TurnLeft,
    TurnRight,
}

impl RobotAction {
    pub const ALL: [RobotAction; NUM_ACTIONS] = [
        RobotAction::Forward,
        RobotAction::TurnLeft,
        RobotAction::TurnRight,
    ];

    pub fn index(self) -> usize {
        match self {
            RobotAction::Forward => 0,
            RobotAction::TurnLeft => 1,
            RobotAction::TurnRight => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

/// Cell position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
}

/// Discretized proximity observation: `state_id = 4*front + 2*left + 1*right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorState {
    pub state_id: usize,
}

/// Arena generation arguments, as they appear in node configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArenaSpec {
    pub width: usize,
    pub height: usize,
    pub num_blocks: usize,
    pub seed: u64,
}

impl ArenaSpec {
    pub fn build(&self) -> Result<GridArena, ArenaError> {
        GridArena::generate(self.width, self.height, self.num_blocks, self.seed)
    }
}

/// Bounded grid with border walls and randomly placed single-cell blocks.
///
/// Layout is a pure function of `(width, height, num_blocks, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridArena {
    width: usize,
    height: usize,
    num_blocks: usize,
    seed: u64,
    obstacles: BTreeSet<(usize, usize)>,
    spawn: (usize, usize),
}

impl GridArena {
    /// Generates an arena. The spawn cell is the first interior cell in
    /// row-major order and is never occupied by a block.
    pub fn generate(
        width: usize,
        height: usize,
        num_blocks: usize,
        seed: u64,
    ) -> Result<Self, ArenaError> {
        let interior = if width > 2 && height > 2 {
            (width - 2) * (height - 2)
        } else {
            0
        };
        // One interior cell is reserved for the spawn.
        if interior == 0 || num_blocks > interior - 1 {
            return Err(ArenaError::Infeasible {
                width,
                height,
                num_blocks,
                free_interior: interior.saturating_sub(1),
            });
        }
        let spawn = (1, 1);

        let mut obstacles = BTreeSet::new();
        for x in 0..width {
            obstacles.insert((x, 0));
            obstacles.insert((x, height - 1));
        }
        for y in 0..height {
            obstacles.insert((0, y));
            obstacles.insert((width - 1, y));
        }

        let mut candidates: Vec<(usize, usize)> = (1..height - 1)
            .flat_map(|y| (1..width - 1).map(move |x| (x, y)))
            .filter(|&cell| cell != spawn)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (blocks, _) = candidates.partial_shuffle(&mut rng, num_blocks);
        obstacles.extend(blocks.iter().copied());

        Ok(Self {
            width,
            height,
            num_blocks,
            seed,
            obstacles,
            spawn,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Spawn cell; the robot starts here heading north.
    pub fn spawn_pose(&self) -> RobotPose {
        RobotPose {
            x: self.spawn.0,
            y: self.spawn.1,
            heading: Heading::North,
        }
    }

    pub fn is_obstacle(&self, x: usize, y: usize) -> bool {
        x >= self.width || y >= self.height || self.obstacles.contains(&(x, y))
    }

    pub fn is_free(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && !self.obstacles.contains(&(x, y))
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.is_free(x, y))
            .collect()
    }

    pub fn check_pose(&self, pose: &RobotPose) -> Result<(), ArenaError> {
        if self.is_free(pose.x, pose.y) {
            Ok(())
        } else {
            Err(ArenaError::InvalidPose {
                x: pose.x,
                y: pose.y,
            })
        }
    }

    fn neighbor_is_obstacle(&self, pose: &RobotPose, heading: Heading) -> bool {
        let (dx, dy) = heading.delta();
        let nx = pose.x as isize + dx;
        let ny = pose.y as isize + dy;
        if nx < 0 || ny < 0 {
            return true;
        }
        self.is_obstacle(nx as usize, ny as usize)
    }

    /// Proximity flags for the cells adjacent to the pose.
    pub fn sense(&self, pose: &RobotPose) -> Result<SensorState, ArenaError> {
        self.check_pose(pose)?;
        let front = usize::from(self.neighbor_is_obstacle(pose, pose.heading));
        let left = usize::from(self.neighbor_is_obstacle(pose, pose.heading.left()));
        let right = usize::from(self.neighbor_is_obstacle(pose, pose.heading.right()));
        Ok(SensorState {
            state_id: 4 * front + 2 * left + right,
        })
    }

    /// Executes one move. Forward into an obstacle leaves the pose
    /// unchanged and reports a collision.
    pub fn step(
        &self,
        pose: &RobotPose,
        action: RobotAction,
    ) -> Result<(RobotPose, f64, bool), ArenaError> {
        self.check_pose(pose)?;
        match action {
            RobotAction::Forward => {
                if self.neighbor_is_obstacle(pose, pose.heading) {
                    Ok((*pose, REWARD_COLLISION, true))
                } else {
                    let (dx, dy) = pose.heading.delta();
                    let next = RobotPose {
                        x: (pose.x as isize + dx) as usize,
                        y: (pose.y as isize + dy) as usize,
                        heading: pose.heading,
                    };
                    Ok((next, REWARD_FORWARD, false))
                }
            }
            RobotAction::TurnLeft => {
                let next = RobotPose {
                    heading: pose.heading.left(),
                    ..*pose
                };
                Ok((next, REWARD_TURN, false))
            }
            RobotAction::TurnRight => {
                let next = RobotPose {
                    heading: pose.heading.right(),
                    ..*pose
                };
                Ok((next, REWARD_TURN, false))
            }
        }
    }

    /// ASCII map: `#` obstacle, `.` free, `R` spawn. One row per line.
    pub fn ascii_map(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let c = if (x, y) == self.spawn {
                    'R'
                } else if self.is_obstacle(x, y) {
                    '#'
                } else {
                    '.'
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }
}
