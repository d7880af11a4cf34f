//! Iterative skeletonization over the 8-neighbourhood.
//!
//! Neighbour labels follow the layout
//!
//! ```text
//! P3 P2 P9
//! P4 P1 P8
//! P5 P6 P7
//! ```
//!
//! An ink pixel P1 is deleted when
//! 1. `2 <= Nzcount(P1) <= 6`,
//! 2. `ZO(P1) == 1`,
//! 3. `P2 * P4 * P8 == 0` or `ZO(P2) != 1`,
//! 4. `P2 * P4 * P6 == 0` or `ZO(P4) != 1`,
//!
//! and passes are repeated until nothing changes. Pixels outside the image
//! read as background.

use crate::imagecore::BinaryImage;

/// Order in which deletions take effect within one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateSchedule {
    /// Raster order, each deletion visible to the pixels tested after it.
    #[default]
    Sequential,
    /// Every pixel tested against the image as it was at the start of the
    /// pass; all deletions applied together.
    Simultaneous,
}

/// 3x3 window, `p[0]` is P1 and `p[i - 1]` is P*i*.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighborhood {
    pub p: [u8; 9],
}

// (drow, dcol) offsets of P1..P9.
const OFFSETS: [(isize, isize); 9] = [
    (0, 0),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

impl Neighborhood {
    /// Window centred on `(row, col)`; may be centred outside the image.
    pub fn at(img: &BinaryImage, row: isize, col: isize) -> Self {
        let mut p = [0u8; 9];
        for (slot, (dr, dc)) in p.iter_mut().zip(OFFSETS) {
            *slot = img.get_or_zero(row + dr, col + dc);
        }
        Self { p }
    }

    /// Builds a window from the eight neighbours P2..P9 (P1 set to 1).
    pub fn from_neighbors(n: [u8; 8]) -> Self {
        let mut p = [1u8; 9];
        p[1..].copy_from_slice(&n);
        Self { p }
    }

    /// Value of P*i*, `i` in `1..=9`.
    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.p[i - 1]
    }
}

/// Number of 0 -> 1 transitions around P2, P3, ..., P9, P2.
pub fn zo_count(n: &Neighborhood) -> u32 {
    let ring = &n.p[1..];
    (0..8).filter(|&i| ring[i] == 0 && ring[(i + 1) % 8] == 1).count() as u32
}

/// Number of ink pixels among P2..P9.
pub fn nz_count(n: &Neighborhood) -> u32 {
    n.p[1..].iter().map(|&v| u32::from(v)).sum()
}

/// Applies the four deletion steps given the transition counts of the
/// windows centred on P2 (north) and P4 (west).
pub fn deletable_with(n: &Neighborhood, zo_north: u32, zo_west: u32) -> bool {
    let nz = nz_count(n);
    if !(2..=6).contains(&nz) || zo_count(n) != 1 {
        return false;
    }
    let (p2, p4, p6, p8) = (n.get(2), n.get(4), n.get(6), n.get(8));
    let step3 = p2 * p4 * p8 == 0 || zo_north != 1;
    let step4 = p2 * p4 * p6 == 0 || zo_west != 1;
    step3 && step4
}

/// Whether the ink pixel at `(row, col)` may be removed from `img` as it
/// currently stands.
pub fn deletable(img: &BinaryImage, row: usize, col: usize) -> bool {
    let (r, c) = (row as isize, col as isize);
    if img.get(row, col) == 0 {
        return false;
    }
    let n = Neighborhood::at(img, r, c);
    // Steps 1-2 are cheap and reject most pixels before the extra windows are built.
    let nz = nz_count(&n);
    if !(2..=6).contains(&nz) || zo_count(&n) != 1 {
        return false;
    }
    let zo_north = zo_count(&Neighborhood::at(img, r - 1, c));
    let zo_west = zo_count(&Neighborhood::at(img, r, c - 1));
    deletable_with(&n, zo_north, zo_west)
}

/// Outcome of a thinning run.
#[derive(Debug, Clone)]
pub struct Thinned {
    pub image: BinaryImage,
    /// Passes run, including the final pass that deleted nothing.
    pub passes: usize,
    pub deleted: usize,
}

pub fn thin(img: &BinaryImage) -> BinaryImage {
    thin_with(img, UpdateSchedule::Sequential).image
}

pub fn thin_with(img: &BinaryImage, schedule: UpdateSchedule) -> Thinned {
    let mut cur = img.clone();
    let mut passes = 0;
    let mut deleted = 0;
    loop {
        passes += 1;
        let removed = match schedule {
            UpdateSchedule::Sequential => sequential_pass(&mut cur),
            UpdateSchedule::Simultaneous => simultaneous_pass(&mut cur),
        };
        deleted += removed;
        if removed == 0 {
            break;
        }
    }
    Thinned { image: cur, passes, deleted }
}

fn sequential_pass(img: &mut BinaryImage) -> usize {
    let mut removed = 0;
    for r in 0..img.height() {
        for c in 0..img.width() {
            if img.get(r, c) == 1 && deletable(img, r, c) {
                img.set(r, c, false);
                removed += 1;
            }
        }
    }
    removed
}

fn simultaneous_pass(img: &mut BinaryImage) -> usize {
    let marked: Vec<(usize, usize)> = img.ink_positions().filter(|&(r, c)| deletable(img, r, c)).collect();
    for &(r, c) in &marked {
        img.set(r, c, false);
    }
    marked.len()
}
