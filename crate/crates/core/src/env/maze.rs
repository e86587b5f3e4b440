use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Integer cell coordinates; `x` grows to the east, `y` to the south.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

/// Fraction of loop-creating walls knocked out after carving.
pub const LOOP_WALL_FRACTION: f64 = 0.10;

/// A walled grid maze with per-wall texture ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MazeSpec {
    pub width: usize,
    pub height: usize,
    /// Row-major, `true` for wall.
    pub walls: Vec<bool>,
    /// Texture id per cell; meaningful for wall cells only.
    pub wall_texture_id: Vec<u8>,
    pub spawn_cells: Vec<Cell>,
    pub goal_cell: Cell,
    pub seed: u64,
}

impl MazeSpec {
    #[inline]
    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    #[inline]
    fn index(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    /// Out-of-bounds cells count as walls.
    #[inline]
    pub fn is_wall(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.walls[self.index(c)]
    }

    pub fn texture(&self, c: Cell) -> Option<u8> {
        (self.in_bounds(c) && self.walls[self.index(c)]).then(|| self.wall_texture_id[self.index(c)])
    }

    pub fn open_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let c = Cell::new(x, y);
                if !self.is_wall(c) {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Breadth-first step distances from `from` over open cells; `None` for
    /// walls and unreachable cells. Indexed row-major.
    pub fn distances_from(&self, from: Cell) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.width * self.height];
        if self.is_wall(from) {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[self.index(from)] = Some(0);
        queue.push_back(from);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)].expect("queued cells have a distance");
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let n = Cell::new(c.x + dx, c.y + dy);
                if !self.is_wall(n) && dist[self.index(n)].is_none() {
                    dist[self.index(n)] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn distance(&self, a: Cell, b: Cell) -> Option<u32> {
        if !self.in_bounds(b) {
            return None;
        }
        self.distances_from(a)[self.index(b)]
    }

    /// Renders walls as `#` and open cells as `.`, the goal as `G`.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let c = Cell::new(x, y);
                s.push(if self.is_wall(c) {
                    '#'
                } else if c == self.goal_cell {
                    'G'
                } else {
                    '.'
                });
            }
            s.push('\n');
        }
        s
    }
}

/// Recursive-backtracker perfect maze on the odd lattice, then a share of
/// separating walls removed to create loops.
pub fn generate_maze(seed: u64, width: usize, height: usize, texture_count: u8) -> Result<MazeSpec> {
    if width < 7 || height < 7 || width.is_multiple_of(2) || height.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "maze dimensions must be odd and at least 7, got {width}x{height}"
        )));
    }
    if texture_count == 0 {
        return Err(Error::Config("texture_count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut walls = vec![true; width * height];
    let idx = |x: i32, y: i32| y as usize * width + x as usize;

    let rooms_x = (width / 2) as i32;
    let rooms_y = (height / 2) as i32;
    let start = (2 * rng.gen_range(0..rooms_x) + 1, 2 * rng.gen_range(0..rooms_y) + 1);
    walls[idx(start.0, start.1)] = false;
    let mut stack = vec![start];
    while let Some(&(x, y)) = stack.last() {
        let mut options = Vec::with_capacity(4);
        for (dx, dy) in [(2, 0), (-2, 0), (0, 2), (0, -2)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx > 0 && ny > 0 && nx < width as i32 - 1 && ny < height as i32 - 1 && walls[idx(nx, ny)] {
                options.push((nx, ny));
            }
        }
        match options.choose(&mut rng) {
            Some(&(nx, ny)) => {
                walls[idx((x + nx) / 2, (y + ny) / 2)] = false;
                walls[idx(nx, ny)] = false;
                stack.push((nx, ny));
            }
            None => {
                stack.pop();
            }
        }
    }

    // Walls with open cells on opposite sides; removing one creates a loop.
    let mut separating = Vec::new();
    for y in 1..height as i32 - 1 {
        for x in 1..width as i32 - 1 {
            if !walls[idx(x, y)] {
                continue;
            }
            let horizontal = !walls[idx(x - 1, y)] && !walls[idx(x + 1, y)];
            let vertical = !walls[idx(x, y - 1)] && !walls[idx(x, y + 1)];
            if horizontal != vertical {
                separating.push((x, y));
            }
        }
    }
    let removals = (separating.len() as f64 * LOOP_WALL_FRACTION).round() as usize;
    separating.shuffle(&mut rng);
    for &(x, y) in separating.iter().take(removals) {
        walls[idx(x, y)] = false;
    }

    let wall_texture_id = walls
        .iter()
        .map(|&w| if w { rng.gen_range(0..texture_count) } else { 0 })
        .collect();

    let mut maze = MazeSpec {
        width,
        height,
        walls,
        wall_texture_id,
        spawn_cells: Vec::new(),
        goal_cell: Cell::new(start.0, start.1),
        seed,
    };
    let open = maze.open_cells();
    let goal = *open.choose(&mut rng).expect("carving opens at least one cell");
    maze.goal_cell = goal;
    maze.spawn_cells = open.into_iter().filter(|&c| c != goal).collect();
    Ok(maze)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn flood_fill_count(maze: &MazeSpec, from: Cell) -> usize {
        let mut seen = HashSet::new();
        let mut stack = vec![from];
        while let Some(c) = stack.pop() {
            if maze.is_wall(c) || !seen.insert(c) {
                continue;
            }
            stack.extend([
                Cell::new(c.x + 1, c.y),
                Cell::new(c.x - 1, c.y),
                Cell::new(c.x, c.y + 1),
                Cell::new(c.x, c.y - 1),
            ]);
        }
        seen.len()
    }

    #[test]
    fn same_seed_same_maze() {
        assert_eq!(
            generate_maze(42, 15, 15, 4).unwrap(),
            generate_maze(42, 15, 15, 4).unwrap()
        );
    }

    #[test]
    fn small_maze_is_connected_from_every_open_cell() {
        for seed in 0..20 {
            let maze = generate_maze(seed, 7, 7, 4).unwrap();
            let open = maze.open_cells();
            for &c in &open {
                assert_eq!(flood_fill_count(&maze, c), open.len());
            }
        }
    }

    #[test]
    fn border_is_walled_and_goal_is_open() {
        for seed in 0..50 {
            let maze = generate_maze(seed, 15, 11, 4).unwrap();
            for x in 0..15 {
                assert!(maze.is_wall(Cell::new(x, 0)) && maze.is_wall(Cell::new(x, 10)));
            }
            for y in 0..11 {
                assert!(maze.is_wall(Cell::new(0, y)) && maze.is_wall(Cell::new(14, y)));
            }
            assert!(!maze.is_wall(maze.goal_cell));
            assert!(!maze.spawn_cells.contains(&maze.goal_cell));
            assert!(maze.wall_texture_id.iter().all(|&t| t < 4));
        }
    }

    #[test]
    fn hundred_seeds_give_distinct_layouts() {
        let layouts: HashSet<Vec<bool>> = (0..100).map(|s| generate_maze(s, 15, 15, 4).unwrap().walls).collect();
        assert!(layouts.len() >= 99);
    }

    #[test]
    fn loops_are_added() {
        // a perfect maze on 7x7 rooms has 48 passages; loops add more open cells
        let perfect_open = 7 * 7 + 48;
        let maze = generate_maze(3, 15, 15, 4).unwrap();
        assert!(maze.open_cells().len() > perfect_open);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(generate_maze(0, 5, 7, 4), Err(Error::Config(_))));
        assert!(matches!(generate_maze(0, 8, 9, 4), Err(Error::Config(_))));
    }

    #[test]
    fn bfs_distance_on_known_maze() {
        let maze = generate_maze(5, 9, 9, 4).unwrap();
        let from = maze.open_cells()[0];
        assert_eq!(maze.distance(from, from), Some(0));
        for c in maze.open_cells() {
            assert!(maze.distance(from, c).is_some());
        }
    }
}
