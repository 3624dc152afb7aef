//! Block-based sampling: partition the image into a grid, keep the pair
//! whose camera point is nearest each block center, and drop every other
//! block in a checkerboard pattern.

use serde::{Deserialize, Serialize};

use crate::geometry::{Correspondence, PixelPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    /// Keep blocks with `(ix + iy) % 2 == 0`.
    Even,
    /// Keep blocks with `(ix + iy) % 2 == 1`.
    Odd,
}

impl std::str::FromStr for Parity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "even" => Ok(Parity::Even),
            "odd" => Ok(Parity::Odd),
            other => Err(format!("unknown parity '{other}' (expected even or odd)")),
        }
    }
}

/// Block coordinates within a [`BlockGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Block {
    pub ix: u32,
    pub iy: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockGrid {
    pub image_width: u32,
    pub image_height: u32,
    pub blocks_x: u32,
    pub blocks_y: u32,
    pub parity: Parity,
    /// When false every block is retained regardless of parity.
    pub checkerboard: bool,
}

impl BlockGrid {
    pub fn new(image_width: u32, image_height: u32) -> Self {
        Self {
            image_width,
            image_height,
            blocks_x: 5,
            blocks_y: 5,
            parity: Parity::Even,
            checkerboard: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err("grid image dimensions must be positive".into());
        }
        if self.blocks_x == 0 || self.blocks_y == 0 {
            return Err("grid.blocks_x and grid.blocks_y must be positive".into());
        }
        if u64::from(self.blocks_x) * u64::from(self.blocks_y) < 4 {
            return Err("grid must have at least 4 blocks".into());
        }
        Ok(())
    }

    pub fn block_width(&self) -> f64 {
        f64::from(self.image_width) / f64::from(self.blocks_x)
    }

    pub fn block_height(&self) -> f64 {
        f64::from(self.image_height) / f64::from(self.blocks_y)
    }

    pub fn block_diagonal(&self) -> f64 {
        self.block_width().hypot(self.block_height())
    }

    /// Block containing `p`, or `None` when `p` is outside `[0, W) x [0, H)`.
    pub fn block_of(&self, p: &PixelPoint) -> Option<Block> {
        let (w, h) = (f64::from(self.image_width), f64::from(self.image_height));
        if !(p.u >= 0.0 && p.u < w && p.v >= 0.0 && p.v < h) {
            return None;
        }
        // Division can round up to the block count just below the far edge.
        let ix = ((p.u / self.block_width()).floor() as u32).min(self.blocks_x - 1);
        let iy = ((p.v / self.block_height()).floor() as u32).min(self.blocks_y - 1);
        Some(Block { ix, iy })
    }

    pub fn center(&self, b: Block) -> PixelPoint {
        PixelPoint::new(
            (f64::from(b.ix) + 0.5) * self.block_width(),
            (f64::from(b.iy) + 0.5) * self.block_height(),
        )
    }

    pub fn is_retained(&self, b: Block) -> bool {
        if !self.checkerboard {
            return true;
        }
        let odd = (b.ix + b.iy) % 2 == 1;
        match self.parity {
            Parity::Even => !odd,
            Parity::Odd => odd,
        }
    }

    pub fn retained_blocks(&self) -> usize {
        (0..self.blocks_x)
            .flat_map(|ix| (0..self.blocks_y).map(move |iy| Block { ix, iy }))
            .filter(|b| self.is_retained(*b))
            .count()
    }

    /// Retained block of `p`, if any.
    pub fn retained_block_of(&self, p: &PixelPoint) -> Option<Block> {
        self.block_of(p).filter(|b| self.is_retained(*b))
    }
}

/// Indices (ascending) of the pairs kept by [`block_sample`].
pub fn block_sample_indices(pairs: &[Correspondence], grid: &BlockGrid) -> Vec<usize> {
    let mut winners: std::collections::BTreeMap<Block, (f64, usize)> = Default::default();
    for (i, p) in pairs.iter().enumerate() {
        let Some(b) = grid.retained_block_of(&p.pixel) else {
            continue;
        };
        let d = p.pixel.distance(&grid.center(b));
        winners
            .entry(b)
            .and_modify(|w| {
                // Strict comparison: ties keep the earlier input.
                if d < w.0 {
                    *w = (d, i);
                }
            })
            .or_insert((d, i));
    }
    let mut idx: Vec<usize> = winners.values().map(|&(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

/// At most one pair per retained block: the one whose camera point is
/// nearest the block center. Output keeps input order.
pub fn block_sample(pairs: &[Correspondence], grid: &BlockGrid) -> Vec<Correspondence> {
    block_sample_indices(pairs, grid)
        .into_iter()
        .map(|i| pairs[i])
        .collect()
}
