//! Sudoku and maze instances: generation, verification, token encodings
//! and dataset files.
//!
//! Sudoku tokens: 0 pad (unused), 1 blank, 2..=10 for digits 1..=9.
//! Maze tokens: 0 pad (unused), 1 wall, 2 open, 3 start, 4 goal, 5 path.

mod dataset;
pub mod maze;
pub mod sudoku;

pub use dataset::{
    generate_maze_set, generate_sudoku_set, import_sudoku_csv, load_dataset, save_dataset, sudoku_grids, Dataset,
    Domain, TokenizedExample, DATASET_FORMAT_VERSION,
};
pub use maze::{decode_maze, encode_maze, generate_maze, verify_maze, MazeInstance, MazeVerdict};
pub use sudoku::{
    augment_sudoku, count_solutions, decode_sudoku, encode_sudoku, generate_sudoku, solve_sudoku, verify_sudoku,
    SudokuInstance,
};
