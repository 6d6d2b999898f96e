use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a canvas is partitioned into LIME segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SegmentStrategy {
    /// `rows × cols` rectangular tiles, numbered row-major.
    Grid { rows: usize, cols: usize },
    /// `n` equal-width vertical strips, numbered left to right. Each strip
    /// covers a contiguous time interval of the plotted series.
    Vstrip { n: usize },
}

impl Default for SegmentStrategy {
    fn default() -> Self {
        SegmentStrategy::Grid { rows: 8, cols: 8 }
    }
}

impl fmt::Display for SegmentStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentStrategy::Grid { rows, cols } => write!(f, "grid:{rows}x{cols}"),
            SegmentStrategy::Vstrip { n } => write!(f, "vstrip:{n}"),
        }
    }
}

/// Parses `grid:8x8`, `grid:8` (square) or `vstrip:10`.
impl FromStr for SegmentStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("bad segmentation `{s}` (expected grid:RxC or vstrip:N)"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
        match kind {
            "grid" => match arg.split_once('x') {
                Some((r, c)) => Ok(SegmentStrategy::Grid {
                    rows: num(r)?,
                    cols: num(c)?,
                }),
                None => {
                    let n = num(arg)?;
                    Ok(SegmentStrategy::Grid { rows: n, cols: n })
                }
            },
            "vstrip" => Ok(SegmentStrategy::Vstrip { n: num(arg)? }),
            _ => Err(bad()),
        }
    }
}

/// Per-pixel segment ids, contiguous from 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMask {
    height: usize,
    width: usize,
    ids: Vec<usize>,
    count: usize,
    strategy: SegmentStrategy,
}

/// Start offset of part `i` when `len` items are cut into `parts` pieces.
fn boundary(i: usize, len: usize, parts: usize) -> usize {
    i * len / parts
}

impl SegmentMask {
    pub fn new(height: usize, width: usize, strategy: SegmentStrategy) -> Result<Self> {
        let (rows, cols) = match strategy {
            SegmentStrategy::Grid { rows, cols } => (rows, cols),
            SegmentStrategy::Vstrip { n } => (1, n),
        };
        if rows == 0 || cols == 0 || rows > height || cols > width {
            return Err(Error::Input(format!(
                "{strategy} does not fit a {height}x{width} canvas"
            )));
        }
        let mut ids = vec![0; height * width];
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                for y in boundary(r, height, rows)..boundary(r + 1, height, rows) {
                    for x in boundary(c, width, cols)..boundary(c + 1, width, cols) {
                        ids[y * width + x] = id;
                    }
                }
            }
        }
        Ok(SegmentMask {
            height,
            width,
            ids,
            count: rows * cols,
            strategy,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn strategy(&self) -> SegmentStrategy {
        self.strategy
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn id_at(&self, row: usize, col: usize) -> usize {
        self.ids[row * self.width + col]
    }

    /// Flat indices of the pixels in segment `id`.
    pub fn pixels_of(&self, id: usize) -> Vec<usize> {
        (0..self.ids.len()).filter(|&i| self.ids[i] == id).collect()
    }

    /// Series index range `[i·L/n, (i+1)·L/n)` covered by strip `id` of a
    /// vstrip mask; `None` for grid masks.
    pub fn time_interval(&self, id: usize, series_len: usize) -> Option<(usize, usize)> {
        match self.strategy {
            SegmentStrategy::Vstrip { n } if id < n => {
                Some((boundary(id, series_len, n), boundary(id + 1, series_len, n)))
            }
            _ => None,
        }
    }
}

/// Partitions a `height × width` canvas.
pub fn segment(height: usize, width: usize, strategy: SegmentStrategy) -> Result<SegmentMask> {
    SegmentMask::new(height, width, strategy)
}
