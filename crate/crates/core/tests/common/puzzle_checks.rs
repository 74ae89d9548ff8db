//! Independent oracles for the puzzle generators.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rsm_core::puzzles::maze::{maze_from_input, MazeInstance};
use rsm_core::puzzles::sudoku::decode_instance;
use rsm_core::puzzles::{generate_maze_set, generate_sudoku_set, verify_maze, verify_sudoku, MazeVerdict};

use super::primitives::Outcome;

/// Counts every completion by trying digits cell by cell in row-major
/// order and scanning row, column and box for conflicts.
pub fn naive_solution_count(grid: &mut [u8; 81], from: usize) -> usize {
    let Some(cell) = (from..81).find(|&i| grid[i] == 0) else {
        return 1;
    };
    let (r, c) = (cell / 9, cell % 9);
    let mut total = 0;
    for d in 1..=9u8 {
        let clash = (0..9).any(|k| {
            let br = (r / 3) * 3 + k / 3;
            let bc = (c / 3) * 3 + k % 3;
            grid[r * 9 + k] == d || grid[k * 9 + c] == d || grid[br * 9 + bc] == d
        });
        if !clash {
            grid[cell] = d;
            total += naive_solution_count(grid, cell + 1);
            grid[cell] = 0;
        }
    }
    total
}

/// Shortest start-goal distance by Dijkstra with unit weights.
pub fn dijkstra_length(m: &MazeInstance) -> Option<usize> {
    let mut dist = vec![usize::MAX; m.cells()];
    let mut heap = BinaryHeap::new();
    dist[m.start] = 0;
    heap.push(Reverse((0usize, m.start)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if u == m.goal {
            return Some(d);
        }
        if d > dist[u] {
            continue;
        }
        let (r, c) = (u / m.width, u % m.width);
        let mut nbrs = Vec::with_capacity(4);
        if r > 0 {
            nbrs.push(u - m.width);
        }
        if r + 1 < m.height {
            nbrs.push(u + m.width);
        }
        if c > 0 {
            nbrs.push(u - 1);
        }
        if c + 1 < m.width {
            nbrs.push(u + 1);
        }
        for v in nbrs {
            if !m.walls[v] && d + 1 < dist[v] {
                dist[v] = d + 1;
                heap.push(Reverse((d + 1, v)));
            }
        }
    }
    None
}

pub fn verifier_sweep(sudoku: usize, mazes: usize, unique_checks: usize) -> Outcome {
    let sud = generate_sudoku_set(0xC0FFEE, sudoku, 30, 0).unwrap();
    let sud_ok = sud
        .examples
        .iter()
        .filter(|ex| {
            let inst = decode_instance(ex).unwrap();
            verify_sudoku(&inst.solution) && sud.target_ok(ex)
        })
        .count();
    let mut unique = 0;
    for ex in sud.examples.iter().take(unique_checks) {
        let inst = decode_instance(ex).unwrap();
        let mut g = inst.givens;
        if naive_solution_count(&mut g, 0) == 1 {
            unique += 1;
        }
    }
    let mz = generate_maze_set(0xBEEF, mazes, 31, 31, 0).unwrap();
    let mut maze_ok = 0;
    let mut lengths_agree = 0;
    for ex in &mz.examples {
        let m = maze_from_input(&ex.input, 31, 31).unwrap();
        if verify_maze(&m, &ex.target) == MazeVerdict::Optimal {
            maze_ok += 1;
        }
        let path_len = ex.target.iter().filter(|&&t| t == 5).count();
        if dijkstra_length(&m).map(|d| d + 1) == Some(path_len) {
            lengths_agree += 1;
        }
    }
    let ok = sud_ok == sudoku && maze_ok == mazes && unique == unique_checks.min(sudoku) && lengths_agree == mazes;
    (
        ok,
        format!(
            "sudoku {sud_ok}/{sudoku} verified, {unique}/{unique_checks} unique by exhaustive search; \
             maze {maze_ok}/{mazes} optimal, {lengths_agree}/{mazes} BFS lengths match Dijkstra"
        ),
    )
}
