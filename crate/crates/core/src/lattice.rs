//! Grid geometry: pixel indexing, neighborhoods, block partitions, and the
//! compactly supported Wendland spatial embedding.
//!
//! All functions here are pure over immutable inputs and safe to call from
//! many threads.

use ndarray::Array2;

use crate::error::{Error, Result};

/// A regular rectangular pixel lattice.
///
/// Pixels are indexed row-major starting at zero: pixel `i` sits at
/// `(row, col) = (i / m_cols, i % m_cols)` with coordinate
/// `origin + spacing * (col, row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    m_rows: usize,
    m_cols: usize,
    spacing: f64,
    origin: (f64, f64),
}

impl Grid {
    pub fn new(m_rows: usize, m_cols: usize, spacing: f64, origin: (f64, f64)) -> Result<Self> {
        if m_rows == 0 || m_cols == 0 {
            return Err(Error::Config(format!(
                "grid dimensions must be positive, got {m_rows}x{m_cols}"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::Config(format!("grid spacing must be positive, got {spacing}")));
        }
        if !origin.0.is_finite() || !origin.1.is_finite() {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(Self { m_rows, m_cols, spacing, origin })
    }

    /// Unit square grid: `m x m` pixels spanning `[0,1]^2`.
    pub fn unit_square(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Config(format!("unit square grid needs m >= 2, got {m}")));
        }
        Self::new(m, m, 1.0 / (m as f64 - 1.0), (0.0, 0.0))
    }

    pub fn n_pixels(&self) -> usize {
        self.m_rows * self.m_cols
    }

    pub fn m_rows(&self) -> usize {
        self.m_rows
    }

    pub fn m_cols(&self) -> usize {
        self.m_cols
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn index_of(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.m_rows && col < self.m_cols);
        row * self.m_cols + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        debug_assert!(index < self.n_pixels());
        (index / self.m_cols, index % self.m_cols)
    }

    /// Coordinate of pixel `index`: x varies with the column, y with the row.
    pub fn coord(&self, index: usize) -> (f64, f64) {
        let (row, col) = self.row_col(index);
        (
            self.origin.0 + self.spacing * col as f64,
            self.origin.1 + self.spacing * row as f64,
        )
    }

    /// All pixel coordinates in index order.
    pub fn coords(&self) -> Vec<(f64, f64)> {
        (0..self.n_pixels()).map(|i| self.coord(i)).collect()
    }

    /// Bounding box as ((min_x, min_y), (max_x, max_y)).
    pub fn bounding_box(&self) -> ((f64, f64), (f64, f64)) {
        let max = (
            self.origin.0 + self.spacing * (self.m_cols as f64 - 1.0),
            self.origin.1 + self.spacing * (self.m_rows as f64 - 1.0),
        );
        (self.origin, max)
    }
}

/// Adjacency scheme on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborScheme {
    /// Eight adjacent pixels (including diagonals). The default.
    Queen8,
    /// Four orthogonally adjacent pixels.
    Rook4,
}

impl NeighborScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "queen8" | "queen" => Ok(NeighborScheme::Queen8),
            "rook4" | "rook" => Ok(NeighborScheme::Rook4),
            other => Err(Error::Config(format!("unknown neighbor scheme '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NeighborScheme::Queen8 => "queen8",
            NeighborScheme::Rook4 => "rook4",
        }
    }
}

/// Per-pixel neighbor index lists under a fixed scheme.
///
/// Border pixels simply have fewer neighbors; there is no wraparound.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    scheme: NeighborScheme,
    neighbors: Vec<Vec<usize>>,
}

impl Neighborhood {
    pub fn build(grid: &Grid, scheme: NeighborScheme) -> Self {
        let offsets: &[(isize, isize)] = match scheme {
            NeighborScheme::Queen8 => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
            NeighborScheme::Rook4 => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
        };
        let (rows, cols) = (grid.m_rows() as isize, grid.m_cols() as isize);
        let neighbors = (0..grid.n_pixels())
            .map(|i| {
                let (r, c) = grid.row_col(i);
                offsets
                    .iter()
                    .filter_map(|&(dr, dc)| {
                        let (nr, nc) = (r as isize + dr, c as isize + dc);
                        (nr >= 0 && nr < rows && nc >= 0 && nc < cols)
                            .then(|| grid.index_of(nr as usize, nc as usize))
                    })
                    .collect()
            })
            .collect();
        Self { scheme, neighbors }
    }

    pub fn scheme(&self) -> NeighborScheme {
        self.scheme
    }

    pub fn n_pixels(&self) -> usize {
        self.neighbors.len()
    }

    pub fn of(&self, pixel: usize) -> &[usize] {
        &self.neighbors[pixel]
    }
}

/// Neighbor means together with the pixels that had no observed neighbor.
#[derive(Debug, Clone)]
pub struct NeighborMeans {
    /// Mean of observed neighbor values per pixel; 0.0 where none observed.
    pub values: Vec<f64>,
    /// Pixels whose neighbor set contained no observed value.
    pub unneighbored: Vec<usize>,
}

/// Mean of each pixel's neighbor values, all values observed.
pub fn neighbor_mean(values: &[f64], nb: &Neighborhood) -> Result<Vec<f64>> {
    let observed = vec![true; values.len()];
    neighbor_mean_masked(values, &observed, nb).map(|m| m.values)
}

/// Mean of each pixel's *observed* neighbor values.
///
/// Unobserved values are excluded from both numerator and denominator. A
/// pixel with no observed neighbor gets mean 0.0 and is flagged.
pub fn neighbor_mean_masked(
    values: &[f64],
    observed: &[bool],
    nb: &Neighborhood,
) -> Result<NeighborMeans> {
    if values.len() != nb.n_pixels() || observed.len() != nb.n_pixels() {
        return Err(Error::Shape(format!(
            "neighbor_mean: {} values / {} mask entries for {} pixels",
            values.len(),
            observed.len(),
            nb.n_pixels()
        )));
    }
    let mut out = vec![0.0; values.len()];
    let mut unneighbored = Vec::new();
    for i in 0..values.len() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for &j in nb.of(i) {
            if observed[j] {
                sum += values[j];
                count += 1;
            }
        }
        if count > 0 {
            out[i] = sum / count as f64;
        } else {
            unneighbored.push(i);
        }
    }
    Ok(NeighborMeans { values: out, unneighbored })
}

/// A labeling of pixels into contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    labels: Vec<usize>,
    n_blocks: usize,
}

impl BlockPartition {
    /// Build from explicit labels; every label in `0..n_blocks` must occur.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("block partition needs at least one pixel".into()));
        }
        let n_blocks = labels.iter().max().unwrap() + 1;
        let mut seen = vec![false; n_blocks];
        for &g in &labels {
            seen[g] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Config(format!("block {missing} has no pixels")));
        }
        Ok(Self { labels, n_blocks })
    }

    /// Tile the grid into `block_rows x block_cols` rectangles.
    ///
    /// The grid dimensions must divide exactly; block labels run row-major
    /// over the block lattice.
    pub fn tiles(grid: &Grid, block_rows: usize, block_cols: usize) -> Result<Self> {
        if block_rows == 0 || block_cols == 0 {
            return Err(Error::Config("block dimensions must be positive".into()));
        }
        if grid.m_rows() % block_rows != 0 || grid.m_cols() % block_cols != 0 {
            return Err(Error::Config(format!(
                "{}x{} grid does not tile into {}x{} blocks",
                grid.m_rows(),
                grid.m_cols(),
                block_rows,
                block_cols
            )));
        }
        let blocks_per_row = grid.m_cols() / block_cols;
        let labels = (0..grid.n_pixels())
            .map(|i| {
                let (r, c) = grid.row_col(i);
                (r / block_rows) * blocks_per_row + c / block_cols
            })
            .collect();
        let n_blocks = (grid.m_rows() / block_rows) * blocks_per_row;
        Ok(Self { labels, n_blocks })
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_of(&self, pixel: usize) -> usize {
        self.labels[pixel]
    }

    /// Pixel indices of each block.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_blocks];
        for (i, &g) in self.labels.iter().enumerate() {
            members[g].push(i);
        }
        members
    }
}

/// Wendland basis value at scaled distance `d` (already divided by the
/// bandwidth): `(1-d)^6 (36 d^2 + 18 d + 3) / 3` on `[0,1]`, zero beyond.
pub fn wendland_value(d: f64) -> Result<f64> {
    if d < 0.0 || d.is_nan() {
        return Err(Error::Domain(format!("wendland_value needs d >= 0, got {d}")));
    }
    if d > 1.0 {
        return Ok(0.0);
    }
    let one_minus = 1.0 - d;
    Ok(one_minus.powi(6) * (36.0 * d * d + 18.0 * d + 3.0) / 3.0)
}

/// Knot lattice plus per-pixel Wendland feature matrix.
#[derive(Debug, Clone)]
pub struct BasisExpansion {
    knots: Vec<(f64, f64)>,
    bandwidth: f64,
    features: Array2<f64>,
}

impl BasisExpansion {
    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// `n_pixels x n_knots` feature matrix with entries in `[0,1]`.
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

/// Build the Wendland embedding on a `knots_per_side^2` lattice covering the
/// grid's bounding box (inclusive of the edges).
///
/// The bandwidth is 2.5 times the knot lattice spacing, so each pixel sees a
/// handful of active basis functions.
pub fn build_basis(grid: &Grid, knots_per_side: usize) -> Result<BasisExpansion> {
    if knots_per_side < 2 {
        return Err(Error::Config(format!(
            "need at least 2 knots per side, got {knots_per_side}"
        )));
    }
    let ((min_x, min_y), (max_x, max_y)) = grid.bounding_box();
    let extent = (max_x - min_x).max(max_y - min_y);
    if extent <= 0.0 {
        return Err(Error::Config(
            "grid bounding box is degenerate; cannot place a knot lattice".into(),
        ));
    }
    let steps = (knots_per_side - 1) as f64;
    let spacing_x = (max_x - min_x) / steps;
    let spacing_y = (max_y - min_y) / steps;
    let bandwidth = 2.5 * spacing_x.max(spacing_y);

    let mut knots = Vec::with_capacity(knots_per_side * knots_per_side);
    for ky in 0..knots_per_side {
        for kx in 0..knots_per_side {
            knots.push((min_x + spacing_x * kx as f64, min_y + spacing_y * ky as f64));
        }
    }

    let n = grid.n_pixels();
    let mut features = Array2::zeros((n, knots.len()));
    for i in 0..n {
        let (px, py) = grid.coord(i);
        for (l, &(ux, uy)) in knots.iter().enumerate() {
            let dist = ((px - ux).powi(2) + (py - uy).powi(2)).sqrt();
            let d = dist / bandwidth;
            if d <= 1.0 {
                features[(i, l)] = wendland_value(d)?;
            }
        }
    }
    Ok(BasisExpansion { knots, bandwidth, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_pixel_grid() {
        let g = Grid::new(1, 1, 1.0, (0.0, 0.0)).unwrap();
        assert_eq!(g.n_pixels(), 1);
        assert_eq!(g.coord(0), (0.0, 0.0));
    }

    #[test]
    fn unit_square_spans_unit_interval() {
        let g = Grid::unit_square(32).unwrap();
        assert_eq!(g.n_pixels(), 1024);
        let ((x0, y0), (x1, y1)) = g.bounding_box();
        assert_eq!((x0, y0), (0.0, 0.0));
        assert_abs_diff_eq!(x1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn row_major_index_coordinate_mapping() {
        // 2x3 grid, spacing 2, origin (1,1): fourth pixel (row-major) is
        // (row 1, col 0) at coordinate (1, 3).
        let g = Grid::new(2, 3, 2.0, (1.0, 1.0)).unwrap();
        assert_eq!(g.row_col(3), (1, 0));
        assert_eq!(g.coord(3), (1.0, 3.0));
    }

    #[test]
    fn index_mapping_is_a_bijection() {
        let g = Grid::new(5, 7, 0.25, (-1.0, 2.0)).unwrap();
        for i in 0..g.n_pixels() {
            let (r, c) = g.row_col(i);
            assert_eq!(g.index_of(r, c), i);
        }
        // All coordinates distinct.
        let mut coords = g.coords();
        coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
        coords.dedup();
        assert_eq!(coords.len(), g.n_pixels());
    }

    #[test]
    fn invalid_grid_config_rejected() {
        assert!(Grid::new(0, 3, 1.0, (0.0, 0.0)).is_err());
        assert!(Grid::new(3, 3, 0.0, (0.0, 0.0)).is_err());
        assert!(Grid::new(3, 3, -1.0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn neighborhood_is_symmetric_and_irreflexive() {
        let g = Grid::new(4, 5, 1.0, (0.0, 0.0)).unwrap();
        for scheme in [NeighborScheme::Queen8, NeighborScheme::Rook4] {
            let nb = Neighborhood::build(&g, scheme);
            for i in 0..g.n_pixels() {
                assert!(!nb.of(i).contains(&i));
                for &j in nb.of(i) {
                    assert!(nb.of(j).contains(&i), "asymmetric pair ({i},{j})");
                }
            }
        }
        // Interior queen pixel has 8 neighbors, corner has 3.
        let nb = Neighborhood::build(&g, NeighborScheme::Queen8);
        assert_eq!(nb.of(g.index_of(1, 1)).len(), 8);
        assert_eq!(nb.of(0).len(), 3);
    }

    #[test]
    fn neighbor_mean_of_constants_is_constant() {
        let g = Grid::new(3, 3, 1.0, (0.0, 0.0)).unwrap();
        let nb = Neighborhood::build(&g, NeighborScheme::Queen8);
        let out = neighbor_mean(&vec![2.5; 9], &nb).unwrap();
        for v in out {
            assert_abs_diff_eq!(v, 2.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn neighbor_mean_center_of_alternating_ring() {
        // 3x3 queen: ring around the center alternates 1,0; center mean 4/8.
        let g = Grid::new(3, 3, 1.0, (0.0, 0.0)).unwrap();
        let nb = Neighborhood::build(&g, NeighborScheme::Queen8);
        let values = vec![1.0, 0.0, 1.0, 0.0, 7.0, 0.0, 1.0, 0.0, 1.0];
        let out = neighbor_mean(&values, &nb).unwrap();
        assert_abs_diff_eq!(out[4], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn neighbor_mean_two_by_two_rook() {
        let g = Grid::new(2, 2, 1.0, (0.0, 0.0)).unwrap();
        let nb = Neighborhood::build(&g, NeighborScheme::Rook4);
        let out = neighbor_mean(&[1.0, 2.0, 3.0, 4.0], &nb).unwrap();
        for v in out {
            assert_abs_diff_eq!(v, 2.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn neighbor_mean_masked_flags_isolated_pixels() {
        let g = Grid::new(1, 3, 1.0, (0.0, 0.0)).unwrap();
        let nb = Neighborhood::build(&g, NeighborScheme::Rook4);
        // Middle pixel is the only observed one: its neighbors are both
        // unobserved, so it gets flagged; ends see the observed middle.
        let m = neighbor_mean_masked(&[9.0, 5.0, 9.0], &[false, true, false], &nb).unwrap();
        assert_eq!(m.unneighbored, vec![1]);
        assert_eq!(m.values, vec![5.0, 0.0, 5.0]);
    }

    #[test]
    fn neighbor_mean_length_mismatch() {
        let g = Grid::new(2, 2, 1.0, (0.0, 0.0)).unwrap();
        let nb = Neighborhood::build(&g, NeighborScheme::Rook4);
        assert!(matches!(neighbor_mean(&[1.0, 2.0], &nb), Err(Error::Shape(_))));
    }

    #[test]
    fn block_tiles_four_by_four() {
        let g = Grid::unit_square(32).unwrap();
        let blocks = BlockPartition::tiles(&g, 4, 4).unwrap();
        assert_eq!(blocks.n_blocks(), 64);
        let members = blocks.members();
        assert!(members.iter().all(|m| m.len() == 16));
        // Contiguity: every member of block 0 lies in rows 0..4, cols 0..4.
        for &i in &members[0] {
            let (r, c) = g.row_col(i);
            assert!(r < 4 && c < 4);
        }
    }

    #[test]
    fn block_tiles_require_exact_division() {
        let g = Grid::new(6, 6, 1.0, (0.0, 0.0)).unwrap();
        assert!(BlockPartition::tiles(&g, 4, 4).is_err());
    }

    #[test]
    fn wendland_known_values() {
        assert_abs_diff_eq!(wendland_value(0.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(wendland_value(1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(wendland_value(1.5).unwrap(), 0.0);
        // (0.5)^6 * (9 + 9 + 3) / 3 = 7/64
        assert_abs_diff_eq!(wendland_value(0.5).unwrap(), 7.0 / 64.0, epsilon = 1e-15);
        assert!(wendland_value(-0.1).is_err());
    }

    #[test]
    fn wendland_is_nonincreasing_and_continuous_at_one() {
        let mut prev = wendland_value(0.0).unwrap();
        for k in 1..=1000 {
            let v = wendland_value(k as f64 / 1000.0).unwrap();
            assert!(v <= prev + 1e-15);
            assert!((0.0..=1.0).contains(&v));
            prev = v;
        }
        assert!(wendland_value(1.0 - 1e-9).unwrap() < 1e-6);
    }

    #[test]
    fn basis_unit_square_hundred_knots() {
        let g = Grid::unit_square(32).unwrap();
        let basis = build_basis(&g, 10).unwrap();
        assert_eq!(basis.n_knots(), 100);
        assert_abs_diff_eq!(basis.bandwidth(), 2.5 / 9.0, epsilon = 1e-12);
        // A pixel exactly at a knot has that feature equal to 1. Knot (0,0)
        // coincides with pixel 0.
        assert_abs_diff_eq!(basis.features()[(0, 0)], 1.0, epsilon = 1e-12);
        // Compact support: zero beyond the bandwidth, and every row active.
        for i in 0..g.n_pixels() {
            let (px, py) = g.coord(i);
            let mut nonzero = 0;
            for (l, &(ux, uy)) in basis.knots().iter().enumerate() {
                let dist = ((px - ux).powi(2) + (py - uy).powi(2)).sqrt();
                if dist > basis.bandwidth() {
                    assert_eq!(basis.features()[(i, l)], 0.0);
                } else {
                    nonzero += 1;
                }
            }
            assert!(nonzero >= 1);
            let row_nonzeros = basis.features().row(i).iter().filter(|v| **v != 0.0).count();
            assert!(row_nonzeros <= nonzero);
        }
    }

    #[test]
    fn basis_three_by_three_center_pixel() {
        let g = Grid::unit_square(3).unwrap();
        let basis = build_basis(&g, 3).unwrap();
        let center_pixel = g.index_of(1, 1);
        let center_knot = 4; // knot lattice is row-major too
        assert_abs_diff_eq!(basis.features()[(center_pixel, center_knot)], 1.0, epsilon = 1e-12);
        let expected_corner = wendland_value(0.5_f64.sqrt() / 1.25).unwrap();
        for corner_knot in [0, 2, 6, 8] {
            assert_abs_diff_eq!(
                basis.features()[(center_pixel, corner_knot)],
                expected_corner,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn basis_rejects_tiny_knot_counts() {
        let g = Grid::unit_square(4).unwrap();
        assert!(build_basis(&g, 1).is_err());
    }
}
