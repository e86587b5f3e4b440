//! Seeded grid-maze environments.
//!
//! Every episode draws a fresh maze (layout and wall textures) from its
//! seed. The agent sees a small egocentric one-hot window rotated to its
//! heading, plus a "TV" channel used by the stochastic variants and a flash
//! channel lit by the Fire action.

mod maze;

pub use maze::{generate_maze, Cell, MazeSpec, LOOP_WALL_FRACTION};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CH_WALL: usize = 0;
pub const CH_FLOOR: usize = 1;
pub const CH_GOAL: usize = 2;
pub const CH_TEXTURE: usize = 3;
pub const TEXTURE_BUCKETS: usize = 4;
pub const CH_TV: usize = CH_TEXTURE + TEXTURE_BUCKETS;
pub const CH_FLASH: usize = CH_TV + 1;
pub const NUM_CHANNELS: usize = CH_FLASH + 1;

pub const GOAL_REWARD: f64 = 10.0;
pub const OBJECT_REWARD: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Dense,
    Sparse,
    VerySparse,
    NoReward,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Dense => "dense",
            Task::Sparse => "sparse",
            Task::VerySparse => "very_sparse",
            Task::NoReward => "no_reward",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Task::Dense),
            "sparse" => Ok(Task::Sparse),
            "very_sparse" => Ok(Task::VerySparse),
            "no_reward" => Ok(Task::NoReward),
            _ => Err(Error::Config(format!(
                "unknown task '{s}' (expected dense, sparse, very_sparse, no_reward)"
            ))),
        }
    }

    fn has_goal(self) -> bool {
        matches!(self, Task::Sparse | Task::VerySparse)
    }
}

/// Randomised-TV variants shown in the lower-right quadrant of the view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TvVariant {
    None,
    /// `k` fixed one-hot images; a dedicated action shows a random one.
    ImageAction(u32),
    /// Fresh uniform noise every step.
    Noise,
    /// Fresh uniform noise only when the switch action is taken.
    NoiseAction,
}

impl TvVariant {
    pub fn name(self) -> String {
        match self {
            TvVariant::None => "none".into(),
            TvVariant::ImageAction(k) => format!("image_action_{k}"),
            TvVariant::Noise => "noise".into(),
            TvVariant::NoiseAction => "noise_action".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TvVariant::None),
            "noise" => Ok(TvVariant::Noise),
            "noise_action" => Ok(TvVariant::NoiseAction),
            _ => s
                .strip_prefix("image_action_")
                .and_then(|k| k.parse().ok())
                .map(TvVariant::ImageAction)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown tv variant '{s}' (expected none, noise, noise_action, image_action_<k>)"
                    ))
                }),
        }
    }

    pub fn has_switch_action(self) -> bool {
        matches!(self, TvVariant::ImageAction(_) | TvVariant::NoiseAction)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Forward,
    Backward,
    TurnLeft,
    TurnRight,
    Fire,
    SwitchTv,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::Backward => "backward",
            Action::TurnLeft => "left",
            Action::TurnRight => "right",
            Action::Fire => "fire",
            Action::SwitchTv => "tv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    fn forward(self) -> (i32, i32) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    fn right(self) -> (i32, i32) {
        match self {
            Heading::North => (1, 0),
            Heading::East => (0, 1),
            Heading::South => (-1, 0),
            Heading::West => (0, -1),
        }
    }

    fn turn_left(self) -> Self {
        Self::ALL[(self as usize + 3) % 4]
    }

    fn turn_right(self) -> Self {
        Self::ALL[(self as usize + 1) % 4]
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

/// Everything that defines an environment instance apart from its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub task: Task,
    pub tv: TvVariant,
    pub episode_length: u32,
    pub min_spawn_goal_distance: u32,
    pub maze_width: usize,
    pub maze_height: usize,
    pub texture_count: u8,
    /// Side of the square egocentric window; odd.
    pub view_size: usize,
    pub dense_objects: usize,
    /// `false` removes Fire from the action set.
    pub allow_fire: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            task: Task::NoReward,
            tv: TvVariant::None,
            episode_length: 500,
            min_spawn_goal_distance: 0,
            maze_width: 15,
            maze_height: 15,
            texture_count: 4,
            view_size: 5,
            dense_objects: 8,
            allow_fire: true,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episode_length == 0 {
            return Err(Error::Config("episode_length must be positive".into()));
        }
        if self.task == Task::VerySparse && self.min_spawn_goal_distance == 0 {
            return Err(Error::Config("very_sparse needs min_spawn_goal_distance > 0".into()));
        }
        if self.view_size == 0 || self.view_size.is_multiple_of(2) {
            return Err(Error::Config("view_size must be odd".into()));
        }
        if let TvVariant::ImageAction(k) = self.tv {
            if k == 0 || k as usize > self.tv_slots() {
                return Err(Error::Config(format!(
                    "image_action needs 1..={} images, got {k}",
                    self.tv_slots()
                )));
            }
        }
        if self.task == Task::Dense && self.dense_objects == 0 {
            return Err(Error::Config("dense task needs at least one object".into()));
        }
        if self.maze_width < 7
            || self.maze_height < 7
            || self.maze_width.is_multiple_of(2)
            || self.maze_height.is_multiple_of(2)
        {
            return Err(Error::Config("maze dimensions must be odd and at least 7".into()));
        }
        Ok(())
    }

    pub fn action_set(&self) -> Vec<Action> {
        let mut a = vec![Action::Forward, Action::Backward, Action::TurnLeft, Action::TurnRight];
        if self.allow_fire {
            a.push(Action::Fire);
        }
        if self.tv.has_switch_action() {
            a.push(Action::SwitchTv);
        }
        a
    }

    pub fn num_actions(&self) -> usize {
        self.action_set().len()
    }

    /// Length of a flattened observation.
    pub fn observation_len(&self) -> usize {
        NUM_CHANNELS * self.view_size * self.view_size
    }

    fn tv_origin(&self) -> usize {
        self.view_size / 2
    }

    /// Cells in the TV quadrant.
    pub fn tv_slots(&self) -> usize {
        let side = self.view_size - self.tv_origin();
        side * side
    }
}

/// Egocentric `[channels, view, view]` observation with entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(Tensor);

impl Observation {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn view_size(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.view_size() * self.view_size();
        &self.0.data()[c * n..(c + 1) * n]
    }

    pub fn from_data(view_size: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self(Tensor::new(vec![NUM_CHANNELS, view_size, view_size], data)?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// Sparse/VerySparse goal reached on this step.
    pub goal_reached: bool,
}

#[derive(Clone, Debug, PartialEq)]
enum TvContent {
    Blank,
    Image(u32),
    Noise(Vec<f64>),
}

/// One running episode.
#[derive(Clone, Debug)]
pub struct Env {
    config: TaskConfig,
    actions: Vec<Action>,
    maze: MazeSpec,
    position: Cell,
    heading: Heading,
    step: u32,
    done: bool,
    rng: ChaCha8Rng,
    tv: TvContent,
    flash: bool,
    objects: Vec<Cell>,
    /// Goal distances for VerySparse respawns.
    goal_distance: Option<Vec<Option<u32>>>,
    position_access: bool,
    visited: Vec<bool>,
    visited_count: usize,
}

fn uniform_unit<R: Rng>(rng: &mut R) -> f64 {
    // f32-representable draws keep compact f32 storage of observations lossless
    f64::from(rng.gen::<f32>())
}

impl Env {
    /// Fresh maze and spawn for `seed`.
    pub fn reset(config: &TaskConfig, seed: u64) -> Result<(Self, Observation)> {
        config.validate()?;
        let maze = generate_maze(seed, config.maze_width, config.maze_height, config.texture_count)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let goal_distance = (config.task == Task::VerySparse).then(|| maze.distances_from(maze.goal_cell));
        let position = Self::draw_spawn(&maze, config, goal_distance.as_deref(), &mut rng).ok_or_else(|| {
            Error::Generation(format!(
                "no spawn cell at distance >= {} from the goal in maze {seed}",
                config.min_spawn_goal_distance
            ))
        })?;
        let heading = Heading::ALL[rng.gen_range(0..4)];
        let objects = if config.task == Task::Dense {
            let mut cells: Vec<Cell> = maze.open_cells().into_iter().filter(|&c| c != position).collect();
            cells.shuffle(&mut rng);
            cells.truncate(config.dense_objects);
            cells
        } else {
            Vec::new()
        };
        let tv = match config.tv {
            TvVariant::None => TvContent::Blank,
            TvVariant::ImageAction(k) => TvContent::Image(rng.gen_range(0..k)),
            TvVariant::Noise | TvVariant::NoiseAction => {
                TvContent::Noise((0..config.tv_slots()).map(|_| uniform_unit(&mut rng)).collect())
            }
        };
        let mut env = Self {
            actions: config.action_set(),
            config: config.clone(),
            maze,
            position,
            heading,
            step: 0,
            done: false,
            rng,
            tv,
            flash: false,
            objects,
            goal_distance,
            position_access: true,
            visited: Vec::new(),
            visited_count: 0,
        };
        env.visited = vec![false; env.maze.width * env.maze.height];
        env.mark_visited();
        let obs = env.observe();
        Ok((env, obs))
    }

    fn draw_spawn<R: Rng>(
        maze: &MazeSpec,
        config: &TaskConfig,
        goal_distance: Option<&[Option<u32>]>,
        rng: &mut R,
    ) -> Option<Cell> {
        match goal_distance {
            Some(dist) => {
                let eligible: Vec<Cell> = maze
                    .spawn_cells
                    .iter()
                    .copied()
                    .filter(|c| {
                        dist[c.y as usize * maze.width + c.x as usize]
                            .is_some_and(|d| d >= config.min_spawn_goal_distance)
                    })
                    .collect();
                eligible.choose(rng).copied()
            }
            None => maze.spawn_cells.choose(rng).copied(),
        }
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn maze(&self) -> &MazeSpec {
        &self.maze
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn heading(&self) -> Heading {
        self.heading
    }

    fn mark_visited(&mut self) {
        let i = self.position.y as usize * self.maze.width + self.position.x as usize;
        if !self.visited[i] {
            self.visited[i] = true;
            self.visited_count += 1;
        }
    }

    /// Distinct cells occupied so far this episode, spawn and goal included.
    /// An evaluation metric; unlike the position it stays readable when
    /// position access is disabled.
    pub fn visited_cells(&self) -> usize {
        self.visited_count
    }

    pub fn remaining_objects(&self) -> usize {
        self.objects.len()
    }

    /// Forbid privileged position reads for the rest of the episode.
    pub fn disable_position_access(&mut self) {
        self.position_access = false;
    }

    /// True agent cell. Privileged: only the Grid Oracle and metrics read it.
    pub fn oracle_position(&self) -> Result<Cell> {
        if self.position_access {
            Ok(self.position)
        } else {
            Err(Error::Usage("position access is disabled for this environment".into()))
        }
    }

    pub fn step(&mut self, action_index: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let action = *self.actions.get(action_index).ok_or_else(|| {
            Error::Usage(format!(
                "action {action_index} out of range for {} actions",
                self.actions.len()
            ))
        })?;
        self.step += 1;
        self.flash = false;
        let mut reward = 0.0;
        let mut goal_reached = false;
        match action {
            Action::Forward | Action::Backward => {
                let (dx, dy) = self.heading.forward();
                let sign = if action == Action::Forward { 1 } else { -1 };
                let next = Cell::new(self.position.x + sign * dx, self.position.y + sign * dy);
                if !self.maze.is_wall(next) {
                    self.position = next;
                    self.mark_visited();
                }
            }
            Action::TurnLeft => self.heading = self.heading.turn_left(),
            Action::TurnRight => self.heading = self.heading.turn_right(),
            Action::Fire => self.flash = true,
            Action::SwitchTv => match self.config.tv {
                TvVariant::ImageAction(k) => self.tv = TvContent::Image(self.rng.gen_range(0..k)),
                TvVariant::NoiseAction => self.redraw_noise(),
                TvVariant::None | TvVariant::Noise => {}
            },
        }
        if self.config.tv == TvVariant::Noise {
            self.redraw_noise();
        }

        match self.config.task {
            Task::Sparse | Task::VerySparse if self.position == self.maze.goal_cell => {
                reward = GOAL_REWARD;
                goal_reached = true;
                self.position =
                    Self::draw_spawn(&self.maze, &self.config, self.goal_distance.as_deref(), &mut self.rng)
                        .expect("a spawn cell existed at reset");
                self.heading = Heading::ALL[self.rng.gen_range(0..4)];
                self.mark_visited();
            }
            Task::Dense => {
                if let Some(i) = self.objects.iter().position(|&o| o == self.position) {
                    self.objects.swap_remove(i);
                    reward = OBJECT_REWARD;
                }
            }
            _ => {}
        }

        self.done =
            self.step >= self.config.episode_length || (self.config.task == Task::Dense && self.objects.is_empty());
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: self.done,
            goal_reached,
        })
    }

    fn redraw_noise(&mut self) {
        let slots = self.config.tv_slots();
        let rng = &mut self.rng;
        self.tv = TvContent::Noise((0..slots).map(|_| uniform_unit(rng)).collect());
    }

    /// Renders the current view.
    pub fn observe(&self) -> Observation {
        let v = self.config.view_size;
        let half = (v / 2) as i32;
        let plane = v * v;
        let mut data = vec![0.0; NUM_CHANNELS * plane];
        let (fx, fy) = self.heading.forward();
        let (rx, ry) = self.heading.right();
        let show_goal = self.config.task.has_goal();
        for row in 0..v {
            let ahead = half - row as i32;
            for col in 0..v {
                let side = col as i32 - half;
                let cell = Cell::new(
                    self.position.x + ahead * fx + side * rx,
                    self.position.y + ahead * fy + side * ry,
                );
                if !self.maze.in_bounds(cell) {
                    continue;
                }
                let at = row * v + col;
                if let Some(t) = self.maze.texture(cell) {
                    data[CH_WALL * plane + at] = 1.0;
                    data[(CH_TEXTURE + t as usize % TEXTURE_BUCKETS) * plane + at] = 1.0;
                } else {
                    data[CH_FLOOR * plane + at] = 1.0;
                    if (show_goal && cell == self.maze.goal_cell) || self.objects.contains(&cell) {
                        data[CH_GOAL * plane + at] = 1.0;
                    }
                }
            }
        }
        let origin = self.config.tv_origin();
        let side = v - origin;
        let tv_at = |slot: usize| CH_TV * plane + (origin + slot / side) * v + origin + slot % side;
        match &self.tv {
            TvContent::Blank => {}
            TvContent::Image(m) => data[tv_at(*m as usize)] = 1.0,
            TvContent::Noise(values) => {
                for (slot, &x) in values.iter().enumerate() {
                    data[tv_at(slot)] = x;
                }
            }
        }
        if self.flash {
            data[CH_FLASH * plane + half as usize * v + half as usize] = 1.0;
        }
        Observation(Tensor::from_parts_unchecked(vec![NUM_CHANNELS, v, v], data))
    }
}
