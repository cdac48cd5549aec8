//! Perfect mazes on an odd `n×n` pixel grid. Rooms sit at odd coordinates;
//! the pixel between two adjacent rooms is open when they are connected.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NORTH: u8 = 1;
pub const EAST: u8 = 2;
pub const SOUTH: u8 = 4;
pub const WEST: u8 = 8;

/// Render channels: open floor, start, goal.
pub const MAZE_CHANNELS: usize = 3;

/// One route step. The discriminant is the class id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Move {
    Left = 0,
    Right = 1,
    Up = 2,
    Down = 3,
    Wait = 4,
}

impl Move {
    pub const COUNT: usize = 5;

    pub fn class(self) -> usize {
        self as usize
    }

    pub fn from_class(c: usize) -> Option<Move> {
        [Move::Left, Move::Right, Move::Up, Move::Down, Move::Wait].get(c).copied()
    }

    /// Row/column offset; zero for `Wait`.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Move::Left => (0, -1),
            Move::Right => (0, 1),
            Move::Up => (-1, 0),
            Move::Down => (1, 0),
            Move::Wait => (0, 0),
        }
    }

    fn between(a: (usize, usize), b: (usize, usize)) -> Option<Move> {
        let d = (b.0 as isize - a.0 as isize, b.1 as isize - a.1 as isize);
        [Move::Left, Move::Right, Move::Up, Move::Down]
            .into_iter()
            .find(|m| m.delta() == d)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeInstance {
    /// Pixel side length `n`.
    pub size: usize,
    /// Open-passage bitmask per room, row-major over `(n−1)/2` rooms per side.
    pub rooms: Vec<u8>,
    /// Pixel coordinates `(row, col)`.
    pub start: (usize, usize),
    pub goal: (usize, usize),
    /// Every pixel on the start→goal path, both ends included.
    pub path: Vec<(usize, usize)>,
    /// The path's moves truncated to the route length and padded with `Wait`.
    pub route: Vec<Move>,
}

impl MazeInstance {
    pub fn rooms_per_side(&self) -> usize {
        (self.size - 1) / 2
    }

    /// Number of open room-to-room passages.
    pub fn open_edges(&self) -> usize {
        self.rooms
            .iter()
            .map(|&m| usize::from(m & EAST != 0) + usize::from(m & SOUTH != 0))
            .sum()
    }

    /// Open/wall flags, row-major `n×n`.
    pub fn pixels(&self) -> Vec<bool> {
        let (n, k) = (self.size, self.rooms_per_side());
        let mut px = vec![false; n * n];
        for r in 0..k {
            for c in 0..k {
                let (pr, pc) = (2 * r + 1, 2 * c + 1);
                px[pr * n + pc] = true;
                let m = self.rooms[r * k + c];
                if m & EAST != 0 {
                    px[pr * n + pc + 1] = true;
                }
                if m & SOUTH != 0 {
                    px[(pr + 1) * n + pc] = true;
                }
            }
        }
        px
    }

    pub fn is_open(&self, pos: (usize, usize)) -> bool {
        pos.0 < self.size && pos.1 < self.size && self.pixels()[pos.0 * self.size + pos.1]
    }

    /// Route class ids.
    pub fn labels(&self) -> Vec<usize> {
        self.route.iter().map(|m| m.class()).collect()
    }
}

fn room_neighbours(k: usize, r: usize, c: usize) -> impl Iterator<Item = (u8, usize, usize)> {
    let mut out = Vec::with_capacity(4);
    if r > 0 {
        out.push((NORTH, r - 1, c));
    }
    if c + 1 < k {
        out.push((EAST, r, c + 1));
    }
    if r + 1 < k {
        out.push((SOUTH, r + 1, c));
    }
    if c > 0 {
        out.push((WEST, r, c - 1));
    }
    out.into_iter()
}

fn opposite(dir: u8) -> u8 {
    match dir {
        NORTH => SOUTH,
        SOUTH => NORTH,
        EAST => WEST,
        _ => EAST,
    }
}

/// Randomized depth-first carving of a spanning tree over `k×k` rooms.
fn carve<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<u8> {
    let mut rooms = vec![0u8; k * k];
    let mut seen = vec![false; k * k];
    let first = rng.random_range(0..k * k);
    seen[first] = true;
    let mut stack = vec![first];
    while let Some(&cur) = stack.last() {
        let (r, c) = (cur / k, cur % k);
        let fresh: Vec<_> = room_neighbours(k, r, c).filter(|&(_, nr, nc)| !seen[nr * k + nc]).collect();
        if fresh.is_empty() {
            stack.pop();
            continue;
        }
        let (dir, nr, nc) = fresh[rng.random_range(0..fresh.len())];
        let next = nr * k + nc;
        rooms[cur] |= dir;
        rooms[next] |= opposite(dir);
        seen[next] = true;
        stack.push(next);
    }
    rooms
}

/// Breadth-first parents from `from` over the room graph.
fn room_bfs(rooms: &[u8], k: usize, from: usize) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut dist = vec![usize::MAX; k * k];
    let mut parent = vec![None; k * k];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(cur) = queue.pop_front() {
        let (r, c) = (cur / k, cur % k);
        for (dir, nr, nc) in room_neighbours(k, r, c) {
            let next = nr * k + nc;
            if rooms[cur] & dir != 0 && dist[next] == usize::MAX {
                dist[next] = dist[cur] + 1;
                parent[next] = Some(cur);
                queue.push_back(next);
            }
        }
    }
    (dist, parent)
}

fn room_pixel(k: usize, room: usize) -> (usize, usize) {
    (2 * (room / k) + 1, 2 * (room % k) + 1)
}

/// Generates a maze of pixel size `n` whose start→goal path is at least `n`
/// pixel steps, with a route of `route_len` moves.
pub fn maze_generate<R: Rng + ?Sized>(n: usize, route_len: usize, rng: &mut R) -> Result<MazeInstance> {
    if n < 5 || n % 2 == 0 {
        return Err(Error::InvalidArgument(format!("maze size must be odd and ≥ 5, got {n}")));
    }
    if route_len == 0 {
        return Err(Error::InvalidArgument("route length must be ≥ 1".into()));
    }
    let k = (n - 1) / 2;
    let rooms = carve(k, rng);
    let mut order: Vec<usize> = (0..k * k).collect();
    order.shuffle(rng);
    // Every tree spanning opposite corners has diameter ≥ 2(k−1) room steps
    // = 2n−6 ≥ n pixel steps, so some start always qualifies.
    for start in order {
        let (dist, parent) = room_bfs(&rooms, k, start);
        let goals: Vec<usize> = (0..k * k).filter(|&g| 2 * dist[g] >= n).collect();
        if goals.is_empty() {
            continue;
        }
        let goal = goals[rng.random_range(0..goals.len())];
        let mut chain = vec![goal];
        while let Some(p) = parent[*chain.last().expect("nonempty")] {
            chain.push(p);
        }
        chain.reverse();
        let mut path = vec![room_pixel(k, chain[0])];
        for w in chain.windows(2) {
            let (a, b) = (room_pixel(k, w[0]), room_pixel(k, w[1]));
            path.push(((a.0 + b.0) / 2, (a.1 + b.1) / 2));
            path.push(b);
        }
        let mut route: Vec<Move> = path
            .windows(2)
            .take(route_len)
            .map(|w| Move::between(w[0], w[1]).expect("adjacent pixels"))
            .collect();
        route.resize(route_len, Move::Wait);
        return Ok(MazeInstance {
            size: n,
            rooms,
            start: room_pixel(k, start),
            goal: room_pixel(k, goal),
            path,
            route,
        });
    }
    unreachable!("a spanning tree over ≥ 2×2 rooms always has a long enough path")
}

/// `[n×n×3]` image: open floor, start marker, goal marker.
pub fn maze_render(maze: &MazeInstance) -> Vec<f64> {
    let n = maze.size;
    let mut img = vec![0.0; n * n * MAZE_CHANNELS];
    for (i, open) in maze.pixels().into_iter().enumerate() {
        img[i * MAZE_CHANNELS] = f64::from(u8::from(open));
    }
    img[(maze.start.0 * n + maze.start.1) * MAZE_CHANNELS + 1] = 1.0;
    img[(maze.goal.0 * n + maze.goal.1) * MAZE_CHANNELS + 2] = 1.0;
    img
}
