use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::maze::{encode_maze, generate_maze, maze_from_input, verify_maze, MAZE_VOCAB};
use super::sudoku::{
    decode_sudoku, encode_sudoku, generate_sudoku, sudoku_prediction_ok, verify_sudoku, SudokuInstance, SUDOKU_CELLS,
    SUDOKU_VOCAB,
};
use crate::error::{Result, RsmError};
use crate::rng;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Sudoku,
    Maze,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Sudoku => "sudoku",
            Domain::Maze => "maze",
        })
    }
}

impl FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sudoku" => Ok(Domain::Sudoku),
            "maze" => Ok(Domain::Maze),
            other => Err(format!("unknown domain `{other}` (expected sudoku or maze)")),
        }
    }
}

impl Domain {
    pub fn vocab_size(self) -> usize {
        match self {
            Domain::Sudoku => SUDOKU_VOCAB,
            Domain::Maze => MAZE_VOCAB,
        }
    }

    pub fn vocab_description(self) -> &'static str {
        match self {
            Domain::Sudoku => "0=pad 1=blank 2..10=digits 1..9",
            Domain::Maze => "0=pad 1=wall 2=open 3=start 4=goal 5=path",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub input: Vec<u32>,
    pub target: Vec<u32>,
    pub puzzle_id: u32,
}

/// Examples of one domain on a fixed grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub domain: Domain,
    pub width: usize,
    pub height: usize,
    pub examples: Vec<TokenizedExample>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    rsm_dataset: u32,
    domain: Domain,
    vocab_size: usize,
    seq_len: usize,
    width: usize,
    height: usize,
    vocab: String,
}

#[derive(Serialize, Deserialize)]
struct Line {
    domain: Domain,
    input: Vec<u32>,
    target: Vec<u32>,
    puzzle_id: u32,
}

impl Dataset {
    pub fn new(domain: Domain, width: usize, height: usize) -> Self {
        Dataset {
            domain,
            width,
            height,
            examples: Vec::new(),
        }
    }

    pub fn seq_len(&self) -> usize {
        self.width * self.height
    }

    pub fn vocab_size(&self) -> usize {
        self.domain.vocab_size()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// One past the largest puzzle id.
    pub fn num_puzzles(&self) -> usize {
        self.examples
            .iter()
            .map(|e| e.puzzle_id as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Shape and token-range checks for every example.
    pub fn validate(&self) -> Result<()> {
        let (s, v) = (self.seq_len(), self.vocab_size() as u32);
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.input.len() != s || ex.target.len() != s {
                return Err(RsmError::Data(format!(
                    "example {i}: expected {s} tokens, got input {} / target {}",
                    ex.input.len(),
                    ex.target.len()
                )));
            }
            if let Some(t) = ex.input.iter().chain(&ex.target).find(|&&t| t >= v) {
                return Err(RsmError::Data(format!(
                    "example {i}: token {t} outside vocabulary of {v}"
                )));
            }
        }
        Ok(())
    }

    /// Whether `predicted` solves example `i` according to the domain
    /// verifier: a valid grid keeping the givens for Sudoku, a shortest
    /// start-to-goal path for mazes.
    pub fn prediction_ok(&self, input: &[u32], predicted: &[u32]) -> bool {
        match self.domain {
            Domain::Sudoku => sudoku_prediction_ok(input, predicted),
            Domain::Maze => match maze_from_input(input, self.width, self.height) {
                Ok(inst) => verify_maze(&inst, predicted) == super::maze::MazeVerdict::Optimal,
                Err(_) => false,
            },
        }
    }

    /// Whether the stored target passes the verifier.
    pub fn target_ok(&self, ex: &TokenizedExample) -> bool {
        self.prediction_ok(&ex.input, &ex.target)
    }

    pub fn split(mut self, first: usize) -> (Dataset, Dataset) {
        let rest = self.examples.split_off(first.min(self.examples.len()));
        let tail = Dataset {
            examples: rest,
            ..Dataset::new(self.domain, self.width, self.height)
        };
        (self, tail)
    }
}

/// `count` Sudoku examples; instance `i` uses its own stream of `seed`, so
/// the set does not depend on thread count. Puzzle ids are `id_offset + i`.
pub fn generate_sudoku_set(seed: u64, count: usize, clue_budget: usize, id_offset: u32) -> Result<Dataset> {
    let instances: Result<Vec<SudokuInstance>> = (0..count)
        .into_par_iter()
        .map(|i| generate_sudoku(&mut rng::stream(seed, i as u64), clue_budget))
        .collect();
    let examples = instances?
        .iter()
        .enumerate()
        .map(|(i, inst)| encode_sudoku(inst, id_offset + i as u32))
        .collect();
    Ok(Dataset {
        examples,
        ..Dataset::new(Domain::Sudoku, 9, 9)
    })
}

pub fn generate_maze_set(seed: u64, count: usize, width: usize, height: usize, id_offset: u32) -> Result<Dataset> {
    let examples: Result<Vec<TokenizedExample>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let inst = generate_maze(&mut rng::stream(seed, i as u64), width, height)?;
            Ok(encode_maze(&inst, id_offset + i as u32))
        })
        .collect();
    Ok(Dataset {
        examples: examples?,
        ..Dataset::new(Domain::Maze, width, height)
    })
}

/// JSONL: a header object, then one object per example.
pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let io = |e| RsmError::io(path, e);
    let tmp = crate::model::tmp_path(path);
    let file = fs::File::create(&tmp).map_err(io)?;
    let mut w = BufWriter::new(file);
    let header = Header {
        rsm_dataset: DATASET_FORMAT_VERSION,
        domain: ds.domain,
        vocab_size: ds.vocab_size(),
        seq_len: ds.seq_len(),
        width: ds.width,
        height: ds.height,
        vocab: ds.domain.vocab_description().to_string(),
    };
    let write_json = |w: &mut BufWriter<fs::File>, v: &dyn erased::Json| -> Result<()> {
        w.write_all(v.json().as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)
    };
    write_json(&mut w, &header)?;
    for ex in &ds.examples {
        let line = Line {
            domain: ds.domain,
            input: ex.input.clone(),
            target: ex.target.clone(),
            puzzle_id: ex.puzzle_id,
        };
        write_json(&mut w, &line)?;
    }
    w.flush().map_err(io)?;
    drop(w);
    fs::rename(&tmp, path).map_err(io)
}

mod erased {
    pub trait Json {
        fn json(&self) -> String;
    }
    impl<T: serde::Serialize> Json for T {
        fn json(&self) -> String {
            serde_json::to_string(self).expect("plain data serializes")
        }
    }
}

/// Reads a JSONL dataset. The header line is optional; without it the
/// domain comes from the examples and the grid is taken to be square.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| RsmError::io(path, e))?;
    let parse_err = |line: usize, msg: String| RsmError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut header: Option<Header> = None;
    let mut domain: Option<Domain> = None;
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| RsmError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| parse_err(n, e.to_string()))?;
        if value.get("rsm_dataset").is_some() {
            if header.is_some() || !examples.is_empty() {
                return Err(parse_err(n, "header must be the first line".into()));
            }
            let h: Header = serde_json::from_value(value).map_err(|e| parse_err(n, e.to_string()))?;
            if h.rsm_dataset != DATASET_FORMAT_VERSION {
                return Err(parse_err(n, format!("unsupported dataset version {}", h.rsm_dataset)));
            }
            domain = Some(h.domain);
            header = Some(h);
            continue;
        }
        let ex: Line = serde_json::from_value(value).map_err(|e| parse_err(n, e.to_string()))?;
        match domain {
            Some(d) if d != ex.domain => {
                return Err(parse_err(n, format!("domain {} in a {d} dataset", ex.domain)));
            }
            _ => domain = Some(ex.domain),
        }
        examples.push(TokenizedExample {
            input: ex.input,
            target: ex.target,
            puzzle_id: ex.puzzle_id,
        });
    }
    let domain = domain.ok_or_else(|| parse_err(0, "empty dataset".into()))?;
    let (width, height) = match &header {
        Some(h) => (h.width, h.height),
        None => {
            let s = examples.first().map_or(0, |e| e.input.len());
            let side = (s as f64).sqrt().round() as usize;
            if side * side != s {
                return Err(parse_err(1, format!("cannot infer grid of {s} cells without a header")));
            }
            (side, side)
        }
    };
    let ds = Dataset {
        domain,
        width,
        height,
        examples,
    };
    if domain == Domain::Sudoku && ds.seq_len() != SUDOKU_CELLS {
        return Err(parse_err(1, format!("sudoku grid must be 9x9, got {width}x{height}")));
    }
    ds.validate().map_err(|e| parse_err(0, e.to_string()))?;
    Ok(ds)
}

fn parse_grid(field: &str) -> std::result::Result<Vec<u8>, String> {
    if field.chars().count() != SUDOKU_CELLS {
        return Err(format!("expected 81 cells, got {}", field.chars().count()));
    }
    field
        .chars()
        .map(|ch| match ch {
            '.' | '0' => Ok(0),
            '1'..='9' => Ok(ch as u8 - b'0'),
            other => Err(format!("invalid cell character `{other}`")),
        })
        .collect()
}

/// Imports `givens,solution` lines (81 characters each, `0` or `.` for
/// blanks). A first line that does not parse as a puzzle is treated as a
/// column header. Extra columns after the solution are ignored.
pub fn import_sudoku_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| RsmError::io(path, e))?;
    let parse_err = |line: usize, msg: String| RsmError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut examples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let looks_like_header = i == 0 && parse_grid(fields[0]).is_err();
        if looks_like_header {
            continue;
        }
        if fields.len() < 2 {
            return Err(parse_err(n, "expected `givens,solution`".into()));
        }
        let givens = parse_grid(fields[0]).map_err(|m| parse_err(n, format!("givens: {m}")))?;
        let solution = parse_grid(fields[1]).map_err(|m| parse_err(n, format!("solution: {m}")))?;
        if !verify_sudoku(&solution) {
            return Err(parse_err(n, "solution is not a valid grid".into()));
        }
        if givens.iter().zip(&solution).any(|(&g, &s)| g != 0 && g != s) {
            return Err(parse_err(n, "solution contradicts the givens".into()));
        }
        let inst = SudokuInstance {
            givens: givens.try_into().unwrap(),
            solution: solution.try_into().unwrap(),
        };
        examples.push(encode_sudoku(&inst, examples.len() as u32));
    }
    Ok(Dataset {
        examples,
        ..Dataset::new(Domain::Sudoku, 9, 9)
    })
}

/// Decoded Sudoku givens and solution of an example, for display.
pub fn sudoku_grids(ex: &TokenizedExample) -> Result<(Vec<u8>, Vec<u8>)> {
    Ok((decode_sudoku(&ex.input)?, decode_sudoku(&ex.target)?))
}
