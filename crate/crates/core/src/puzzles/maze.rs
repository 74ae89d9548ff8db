use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::TokenizedExample;
use crate::error::{Result, RsmError};

/// pad (unused), wall, open, start, goal, path
pub const MAZE_VOCAB: usize = 6;
pub const TOKEN_WALL: u32 = 1;
pub const TOKEN_OPEN: u32 = 2;
pub const TOKEN_START: u32 = 3;
pub const TOKEN_GOAL: u32 = 4;
pub const TOKEN_PATH: u32 = 5;

/// A grid maze with cells addressed row-major as `row * width + col`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeInstance {
    pub width: usize,
    pub height: usize,
    /// `true` marks a wall.
    pub walls: Vec<bool>,
    pub start: usize,
    pub goal: usize,
    /// Cells from `start` to `goal` inclusive.
    pub path: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MazeVerdict {
    /// A shortest start-to-goal path.
    Optimal,
    /// A simple start-to-goal path that is longer than the shortest.
    ValidPath,
    Invalid,
}

impl MazeVerdict {
    pub fn is_valid(self) -> bool {
        self != MazeVerdict::Invalid
    }
}

impl MazeInstance {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    /// Open 4-neighbours of `cell`.
    pub fn neighbours(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = self.coords(cell);
        let (w, h) = (self.width, self.height);
        [
            (r > 0).then(|| cell - w),
            (r + 1 < h).then(|| cell + w),
            (c > 0).then(|| cell - 1),
            (c + 1 < w).then(|| cell + 1),
        ]
        .into_iter()
        .flatten()
        .filter(move |&n| !self.walls[n])
    }

    /// Breadth-first distances from `from` (`usize::MAX` if unreachable).
    pub fn distances(&self, from: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.cells()];
        let mut queue = VecDeque::new();
        dist[from] = 0;
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            for v in self.neighbours(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// A shortest path from `start` to `goal` as a cell list, by BFS.
    pub fn shortest_path(&self) -> Option<Vec<usize>> {
        let dist = self.distances(self.goal);
        if dist[self.start] == usize::MAX {
            return None;
        }
        let mut path = vec![self.start];
        let mut cur = self.start;
        while cur != self.goal {
            cur = self
                .neighbours(cur)
                .filter(|&n| dist[n] + 1 == dist[cur])
                .min()
                .expect("distance field has a descent");
            path.push(cur);
        }
        Some(path)
    }
}

/// Randomized depth-first carve of a perfect maze on odd dimensions. The
/// outer ring is wall; rooms sit at odd coordinates, so a 31x31 grid has a
/// 30x30 interior lattice of rooms and passages.
pub fn generate_maze<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize) -> Result<MazeInstance> {
    if width < 5 || height < 5 || width.is_multiple_of(2) || height.is_multiple_of(2) {
        return Err(RsmError::Config(format!(
            "maze dimensions must be odd and at least 5, got {width}x{height}"
        )));
    }
    let mut walls = vec![true; width * height];
    let room_cols = (width - 1) / 2;
    let room_rows = (height - 1) / 2;
    let room = |rr: usize, rc: usize| (2 * rr + 1) * width + 2 * rc + 1;
    let mut seen = vec![false; room_rows * room_cols];
    let first = (rng.random_range(0..room_rows), rng.random_range(0..room_cols));
    let mut stack = vec![first];
    seen[first.0 * room_cols + first.1] = true;
    walls[room(first.0, first.1)] = false;
    while let Some(&(rr, rc)) = stack.last() {
        let mut next: Vec<(usize, usize)> = Vec::with_capacity(4);
        if rr > 0 {
            next.push((rr - 1, rc));
        }
        if rr + 1 < room_rows {
            next.push((rr + 1, rc));
        }
        if rc > 0 {
            next.push((rr, rc - 1));
        }
        if rc + 1 < room_cols {
            next.push((rr, rc + 1));
        }
        next.retain(|&(r, c)| !seen[r * room_cols + c]);
        match next.choose(rng) {
            Some(&(nr, nc)) => {
                seen[nr * room_cols + nc] = true;
                let (a, b) = (room(rr, rc), room(nr, nc));
                walls[b] = false;
                walls[(a + b) / 2] = false;
                stack.push((nr, nc));
            }
            None => {
                stack.pop();
            }
        }
    }
    let open: Vec<usize> = (0..walls.len()).filter(|&i| !walls[i]).collect();
    let start = *open.choose(rng).expect("at least one room");
    let mut inst = MazeInstance {
        width,
        height,
        walls,
        start,
        goal: start,
        path: Vec::new(),
    };
    let dist = inst.distances(start);
    let far = open.iter().map(|&c| dist[c]).max().unwrap_or(0);
    let threshold = (far * 3).div_ceil(4).max(1);
    let candidates: Vec<usize> = open.iter().copied().filter(|&c| dist[c] >= threshold).collect();
    inst.goal = *candidates.choose(rng).expect("a farthest cell exists");
    inst.path = inst.shortest_path().expect("perfect mazes are connected");
    Ok(inst)
}

/// Input marks walls, open cells, start and goal; the target additionally
/// marks every path cell (start and goal included) as path.
pub fn encode_maze(inst: &MazeInstance, puzzle_id: u32) -> TokenizedExample {
    let mut input: Vec<u32> = inst
        .walls
        .iter()
        .map(|&w| if w { TOKEN_WALL } else { TOKEN_OPEN })
        .collect();
    input[inst.start] = TOKEN_START;
    input[inst.goal] = TOKEN_GOAL;
    let mut target = input.clone();
    for &c in &inst.path {
        target[c] = TOKEN_PATH;
    }
    TokenizedExample {
        input,
        target,
        puzzle_id,
    }
}

/// Rebuilds the maze from an input grid; the path is left empty.
pub fn maze_from_input(tokens: &[u32], width: usize, height: usize) -> Result<MazeInstance> {
    if tokens.len() != width * height {
        return Err(RsmError::Data(format!(
            "maze of {width}x{height} needs {} tokens, got {}",
            width * height,
            tokens.len()
        )));
    }
    let (mut start, mut goal) = (None, None);
    let mut walls = Vec::with_capacity(tokens.len());
    for (i, &t) in tokens.iter().enumerate() {
        match t {
            TOKEN_WALL => walls.push(true),
            TOKEN_OPEN => walls.push(false),
            TOKEN_START | TOKEN_GOAL => {
                let slot = if t == TOKEN_START { &mut start } else { &mut goal };
                if slot.replace(i).is_some() {
                    return Err(RsmError::Data("maze input has a repeated start or goal".into()));
                }
                walls.push(false);
            }
            TOKEN_PATH => return Err(RsmError::Data("maze input contains a path token".into())),
            other => return Err(RsmError::Data(format!("token {other} is not a maze cell"))),
        }
    }
    let (Some(start), Some(goal)) = (start, goal) else {
        return Err(RsmError::Data("maze input lacks a start or goal".into()));
    };
    Ok(MazeInstance {
        width,
        height,
        walls,
        start,
        goal,
        path: Vec::new(),
    })
}

/// Inverse of [`encode_maze`].
pub fn decode_maze(ex: &TokenizedExample, width: usize, height: usize) -> Result<MazeInstance> {
    let mut inst = maze_from_input(&ex.input, width, height)?;
    if ex.target.len() != ex.input.len() {
        return Err(RsmError::Data("maze target length differs from input".into()));
    }
    for (&i, &t) in ex.input.iter().zip(&ex.target) {
        let consistent = t == i || (t == TOKEN_PATH && i != TOKEN_WALL);
        if !consistent {
            return Err(RsmError::Data(format!("target token {t} over input token {i}")));
        }
    }
    match chain(&inst, &ex.target) {
        Some(path) => inst.path = path,
        None => return Err(RsmError::Data("target path is not a start-to-goal chain".into())),
    }
    Ok(inst)
}

/// Path-labelled cells ordered from start to goal, if they form one simple
/// 4-connected chain through open cells.
fn chain(inst: &MazeInstance, grid: &[u32]) -> Option<Vec<usize>> {
    if grid.len() != inst.cells() {
        return None;
    }
    let on: Vec<bool> = grid.iter().map(|&t| t == TOKEN_PATH).collect();
    if !on[inst.start] || !on[inst.goal] {
        return None;
    }
    let count = on.iter().filter(|&&b| b).count();
    if (0..on.len()).any(|i| on[i] && inst.walls[i]) {
        return None;
    }
    let path_nbrs = |c: usize| inst.neighbours(c).filter(|&n| on[n]).collect::<Vec<_>>();
    let mut path = vec![inst.start];
    let mut prev = usize::MAX;
    let mut cur = inst.start;
    if path_nbrs(inst.start).len() != 1 {
        return None;
    }
    while cur != inst.goal {
        let next: Vec<usize> = path_nbrs(cur).into_iter().filter(|&n| n != prev).collect();
        if next.len() != 1 {
            return None;
        }
        prev = cur;
        cur = next[0];
        path.push(cur);
        if path.len() > count {
            return None;
        }
    }
    if path_nbrs(inst.goal).len() != 1 || path.len() != count {
        return None;
    }
    Some(path)
}

/// Judges the path cells of a predicted token grid.
pub fn verify_maze(inst: &MazeInstance, predicted: &[u32]) -> MazeVerdict {
    let Some(path) = chain(inst, predicted) else {
        return MazeVerdict::Invalid;
    };
    let shortest = inst.distances(inst.start)[inst.goal];
    if path.len() == shortest + 1 {
        MazeVerdict::Optimal
    } else {
        MazeVerdict::ValidPath
    }
}
