use rand::seq::SliceRandom;
use rand::Rng;

use super::TokenizedExample;
use crate::error::{Result, RsmError};

pub const SUDOKU_CELLS: usize = 81;
/// pad (unused), blank, digits 1..9
pub const SUDOKU_VOCAB: usize = 11;
pub const TOKEN_PAD: u32 = 0;
pub const TOKEN_BLANK: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SudokuInstance {
    /// Row-major cells, 0 for blank.
    pub givens: [u8; SUDOKU_CELLS],
    pub solution: [u8; SUDOKU_CELLS],
}

impl SudokuInstance {
    pub fn clue_count(&self) -> usize {
        self.givens.iter().filter(|&&v| v != 0).count()
    }
}

fn box_of(cell: usize) -> usize {
    (cell / 27) * 3 + (cell % 9) / 3
}

/// True iff every cell holds 1..=9 and each row, column and box holds each
/// digit once.
pub fn verify_sudoku(grid: &[u8]) -> bool {
    if grid.len() != SUDOKU_CELLS {
        return false;
    }
    let mut rows = [0u16; 9];
    let mut cols = [0u16; 9];
    let mut boxes = [0u16; 9];
    for (i, &v) in grid.iter().enumerate() {
        if !(1..=9).contains(&v) {
            return false;
        }
        let bit = 1u16 << v;
        let (r, c, b) = (i / 9, i % 9, box_of(i));
        if rows[r] & bit != 0 || cols[c] & bit != 0 || boxes[b] & bit != 0 {
            return false;
        }
        rows[r] |= bit;
        cols[c] |= bit;
        boxes[b] |= bit;
    }
    true
}

/// Bitmask backtracking solver choosing the most constrained cell first.
struct Solver {
    cells: [u8; SUDOKU_CELLS],
    rows: [u16; 9],
    cols: [u16; 9],
    boxes: [u16; 9],
}

const ALL: u16 = 0b11_1111_1110;

impl Solver {
    fn new(grid: &[u8]) -> Option<Self> {
        let mut s = Solver {
            cells: [0; SUDOKU_CELLS],
            rows: [0; 9],
            cols: [0; 9],
            boxes: [0; 9],
        };
        for (i, &v) in grid.iter().enumerate() {
            if v == 0 {
                continue;
            }
            if v > 9 {
                return None;
            }
            let bit = 1u16 << v;
            let (r, c, b) = (i / 9, i % 9, box_of(i));
            if (s.rows[r] | s.cols[c] | s.boxes[b]) & bit != 0 {
                return None;
            }
            s.place(i, v);
        }
        Some(s)
    }

    fn place(&mut self, i: usize, v: u8) {
        let bit = 1u16 << v;
        self.cells[i] = v;
        self.rows[i / 9] |= bit;
        self.cols[i % 9] |= bit;
        self.boxes[box_of(i)] |= bit;
    }

    fn clear(&mut self, i: usize) {
        let bit = !(1u16 << self.cells[i]);
        self.cells[i] = 0;
        self.rows[i / 9] &= bit;
        self.cols[i % 9] &= bit;
        self.boxes[box_of(i)] &= bit;
    }

    fn candidates(&self, i: usize) -> u16 {
        ALL & !(self.rows[i / 9] | self.cols[i % 9] | self.boxes[box_of(i)])
    }

    /// Empty cell with the fewest candidates, or `None` when full.
    fn pick(&self) -> Option<(usize, u16)> {
        let mut best: Option<(usize, u16)> = None;
        for i in 0..SUDOKU_CELLS {
            if self.cells[i] != 0 {
                continue;
            }
            let c = self.candidates(i);
            if best.is_none_or(|(_, b)| c.count_ones() < b.count_ones()) {
                best = Some((i, c));
                if c.count_ones() <= 1 {
                    break;
                }
            }
        }
        best
    }

    fn count(&mut self, limit: usize, found: &mut usize, first: &mut Option<[u8; SUDOKU_CELLS]>) {
        let Some((i, mut cand)) = self.pick() else {
            *found += 1;
            first.get_or_insert(self.cells);
            return;
        };
        while cand != 0 && *found < limit {
            let v = cand.trailing_zeros() as u8;
            cand &= cand - 1;
            self.place(i, v);
            self.count(limit, found, first);
            self.clear(i);
        }
    }

    fn fill_random<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let Some((i, cand)) = self.pick() else {
            return true;
        };
        let mut digits: Vec<u8> = (1..=9).filter(|d| cand & (1 << d) != 0).collect();
        digits.shuffle(rng);
        for v in digits {
            self.place(i, v);
            if self.fill_random(rng) {
                return true;
            }
            self.clear(i);
        }
        false
    }
}

/// Number of completions of `grid` (0 = blank), counting at most `limit`.
pub fn count_solutions(grid: &[u8], limit: usize) -> usize {
    if grid.len() != SUDOKU_CELLS {
        return 0;
    }
    let Some(mut s) = Solver::new(grid) else {
        return 0;
    };
    let mut found = 0;
    s.count(limit, &mut found, &mut None);
    found
}

/// Some completion of `grid`, if one exists.
pub fn solve_sudoku(grid: &[u8]) -> Option<[u8; SUDOKU_CELLS]> {
    if grid.len() != SUDOKU_CELLS {
        return None;
    }
    let mut s = Solver::new(grid)?;
    let (mut found, mut first) = (0, None);
    s.count(1, &mut found, &mut first);
    first
}

/// A random complete grid, then random cell removals that keep the
/// solution unique, until `clue_budget` clues remain or no single removal
/// preserves uniqueness.
pub fn generate_sudoku<R: Rng + ?Sized>(rng: &mut R, clue_budget: usize) -> Result<SudokuInstance> {
    if !(17..=81).contains(&clue_budget) {
        return Err(RsmError::Config(format!(
            "clue budget must lie in 17..=81, got {clue_budget}"
        )));
    }
    let mut s = Solver::new(&[0; SUDOKU_CELLS]).expect("empty grid");
    assert!(s.fill_random(rng), "an empty grid always has a completion");
    let solution = s.cells;
    let mut givens = solution;
    let mut order: Vec<usize> = (0..SUDOKU_CELLS).collect();
    order.shuffle(rng);
    let mut clues = SUDOKU_CELLS;
    for cell in order {
        if clues <= clue_budget {
            break;
        }
        let keep = givens[cell];
        givens[cell] = 0;
        if count_solutions(&givens, 2) == 1 {
            clues -= 1;
        } else {
            givens[cell] = keep;
        }
    }
    Ok(SudokuInstance { givens, solution })
}

fn cell_token(v: u8) -> u32 {
    if v == 0 {
        TOKEN_BLANK
    } else {
        v as u32 + 1
    }
}

/// Givens and solution as tokens: blank 1, digit `k` as `k + 1`.
pub fn encode_sudoku(inst: &SudokuInstance, puzzle_id: u32) -> TokenizedExample {
    TokenizedExample {
        input: inst.givens.iter().map(|&v| cell_token(v)).collect(),
        target: inst.solution.iter().map(|&v| cell_token(v)).collect(),
        puzzle_id,
    }
}

/// Inverse of the cell encoding: blank tokens become 0.
pub fn decode_sudoku(tokens: &[u32]) -> Result<Vec<u8>> {
    if tokens.len() != SUDOKU_CELLS {
        return Err(RsmError::Data(format!("sudoku needs 81 tokens, got {}", tokens.len())));
    }
    tokens
        .iter()
        .map(|&t| match t {
            TOKEN_BLANK => Ok(0),
            2..=10 => Ok((t - 1) as u8),
            _ => Err(RsmError::Data(format!("token {t} is not a sudoku cell"))),
        })
        .collect()
}

pub fn decode_instance(ex: &TokenizedExample) -> Result<SudokuInstance> {
    let givens = decode_sudoku(&ex.input)?;
    let solution = decode_sudoku(&ex.target)?;
    Ok(SudokuInstance {
        givens: givens.try_into().unwrap(),
        solution: solution.try_into().unwrap(),
    })
}

/// A predicted token grid solves the puzzle posed by `input_tokens`: it is
/// a valid complete grid that keeps every given.
pub fn sudoku_prediction_ok(input_tokens: &[u32], predicted: &[u32]) -> bool {
    let (Ok(givens), Ok(pred)) = (decode_sudoku(input_tokens), decode_sudoku(predicted)) else {
        return false;
    };
    verify_sudoku(&pred) && givens.iter().zip(&pred).all(|(&g, &p)| g == 0 || g == p)
}

/// A validity-preserving random symmetry: digit relabeling, band and stack
/// permutations, row and column permutations within them, and an optional
/// transpose. Applied identically to input and target.
pub fn augment_sudoku<R: Rng + ?Sized>(ex: &TokenizedExample, rng: &mut R) -> TokenizedExample {
    let mut digits: Vec<u32> = (1..=9).collect();
    digits.shuffle(rng);
    let axis = |rng: &mut R| -> Vec<usize> {
        let mut bands = [0usize, 1, 2];
        bands.shuffle(rng);
        let mut out = Vec::with_capacity(9);
        for b in bands {
            let mut within = [0usize, 1, 2];
            within.shuffle(rng);
            out.extend(within.iter().map(|w| b * 3 + w));
        }
        out
    };
    let rows = axis(rng);
    let cols = axis(rng);
    let transpose = rng.random_bool(0.5);
    let map = |tokens: &[u32]| -> Vec<u32> {
        (0..SUDOKU_CELLS)
            .map(|i| {
                let (r, c) = if transpose { (i % 9, i / 9) } else { (i / 9, i % 9) };
                let t = tokens[rows[r] * 9 + cols[c]];
                if (2..=10).contains(&t) {
                    digits[(t - 2) as usize] + 1
                } else {
                    t
                }
            })
            .collect()
    };
    TokenizedExample {
        input: map(&ex.input),
        target: map(&ex.target),
        puzzle_id: ex.puzzle_id,
    }
}
