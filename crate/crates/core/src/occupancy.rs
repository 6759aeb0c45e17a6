//! Occupancy grids: particle emplacement, Gaussian smoothing, unions and
//! disc collision queries.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::agent_models::HumanState;
use crate::error::GridError;

/// Geometry of a row-major grid. `origin` is the world position of the
/// outer corner of cell `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
}

/// A world position mapped to a cell, with the clamping that was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellHit {
    pub index: usize,
    pub clamped: bool,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Result<Self, GridError> {
        if width == 0 || height == 0 || !(resolution > 0.0 && resolution.is_finite()) {
            return Err(GridError::InvalidSpec);
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
        })
    }

    /// Grid covering `[0, width_m] × [0, height_m]`.
    pub fn covering(width_m: f64, height_m: f64, resolution: f64) -> Result<Self, GridError> {
        let w = (width_m / resolution - 1e-9).ceil().max(1.0) as usize;
        let h = (height_m / resolution - 1e-9).ceil().max(1.0) as usize;
        Self::new(w, h, resolution, [0.0, 0.0])
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    /// Unclamped cell coordinates `floor((p − origin) / resolution)`.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin[0]) / self.resolution).floor() as i64,
            ((y - self.origin[1]) / self.resolution).floor() as i64,
        )
    }

    pub fn in_bounds(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    /// Cell index of a point, or `None` outside the grid.
    pub fn checked_index(&self, x: f64, y: f64) -> Option<usize> {
        let (ix, iy) = self.cell_of(x, y);
        self.in_bounds(ix, iy)
            .then(|| self.index(ix as usize, iy as usize))
    }

    /// Nearest-cell index with out-of-bounds points clamped to the border.
    #[inline]
    pub fn clamped_index(&self, x: f64, y: f64) -> CellHit {
        let (ix, iy) = self.cell_of(x, y);
        let cx = ix.clamp(0, self.width as i64 - 1);
        let cy = iy.clamp(0, self.height as i64 - 1);
        CellHit {
            index: self.index(cx as usize, cy as usize),
            clamped: cx != ix || cy != iy,
        }
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let (ix, iy) = self.cell_of(x, y);
        self.in_bounds(ix, iy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != spec.len() {
            return Err(GridError::ValueCount {
                got: values.len(),
                expected: spec.len(),
            });
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.spec.index(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        let i = self.spec.index(ix, iy);
        self.values[i] = v;
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Linear combination `a·self + b·other` on a shared spec.
    pub fn combine(&self, a: f64, other: &OccupancyGrid, b: f64) -> Result<OccupancyGrid, GridError> {
        if self.spec != other.spec {
            return Err(GridError::SpecMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self {
            spec: self.spec,
            values,
        })
    }

    /// Writes the grid as `height` CSV rows, row `iy = 0` first.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for row in self.values.chunks(self.spec.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Grid built from per-cell particle counts, plus how many particles were
/// clamped onto the border.
#[derive(Debug, Clone, PartialEq)]
pub struct Emplacement {
    pub grid: OccupancyGrid,
    pub clamped: usize,
}

/// Adds `1/n` mass per particle at its nearest cell.
pub fn emplace(particles: &[HumanState], spec: &GridSpec) -> Emplacement {
    let mut counts = vec![0u32; spec.len()];
    let mut clamped = 0;
    for p in particles {
        let hit = spec.clamped_index(p.x, p.y);
        counts[hit.index] += 1;
        clamped += hit.clamped as usize;
    }
    Emplacement {
        grid: grid_from_counts(spec, &counts, particles.len()),
        clamped,
    }
}

/// Normalizes integer cell counts into a probability grid. Counting first
/// keeps emplacement independent of the order particles were produced in.
pub fn grid_from_counts(spec: &GridSpec, counts: &[u32], n: usize) -> OccupancyGrid {
    let inv = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    OccupancyGrid {
        spec: *spec,
        values: counts.iter().map(|&c| c as f64 * inv).collect(),
    }
}

/// Normalized 1D Gaussian kernel truncated at 3σ (σ in cells).
pub fn gaussian_kernel(sigma_cells: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_cells).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma_cells * sigma_cells)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Scatters each cell's mass along one axis with the kernel truncated at the
/// grid edge and renormalized per source, so no mass leaves the grid.
fn smooth_axis(values: &[f64], spec: &GridSpec, kernel: &[f64], along_x: bool) -> Vec<f64> {
    let radius = (kernel.len() / 2) as i64;
    let (len, lines) = if along_x {
        (spec.width, spec.height)
    } else {
        (spec.height, spec.width)
    };
    let at = |line: usize, pos: usize| {
        if along_x {
            line * spec.width + pos
        } else {
            pos * spec.width + line
        }
    };
    let mut out = vec![0.0; values.len()];
    for line in 0..lines {
        for pos in 0..len {
            let m = values[at(line, pos)];
            if m == 0.0 {
                continue;
            }
            let lo = (pos as i64 - radius).max(0);
            let hi = (pos as i64 + radius).min(len as i64 - 1);
            let k0 = (lo - pos as i64 + radius) as usize;
            let k1 = (hi - pos as i64 + radius) as usize;
            let norm: f64 = kernel[k0..=k1].iter().sum();
            let scale = m / norm;
            for (j, w) in (lo..=hi).zip(&kernel[k0..=k1]) {
                out[at(line, j as usize)] += scale * w;
            }
        }
    }
    out
}

/// Separable truncated-Gaussian smoothing with `sigma` in meters. Mass is
/// preserved; `sigma = 0` returns the input unchanged.
pub fn gaussian_smooth(grid: &OccupancyGrid, sigma: f64) -> OccupancyGrid {
    let sigma_cells = sigma / grid.spec.resolution;
    if !(sigma_cells > 0.0) {
        return grid.clone();
    }
    let kernel = gaussian_kernel(sigma_cells);
    let pass_x = smooth_axis(&grid.values, &grid.spec, &kernel, true);
    let mut values = smooth_axis(&pass_x, &grid.spec, &kernel, false);
    let before = grid.mass();
    let after: f64 = values.iter().sum();
    if after > 0.0 {
        let r = before / after;
        values.iter_mut().for_each(|v| *v *= r);
    }
    OccupancyGrid {
        spec: grid.spec,
        values,
    }
}

fn check_union(grids: &[&OccupancyGrid]) -> Result<GridSpec, GridError> {
    let first = grids.first().ok_or(GridError::EmptyUnion)?;
    if grids.iter().any(|g| g.spec != first.spec) {
        return Err(GridError::SpecMismatch);
    }
    Ok(first.spec)
}

/// Cell-wise maximum.
pub fn union_max(grids: &[&OccupancyGrid]) -> Result<OccupancyGrid, GridError> {
    let spec = check_union(grids)?;
    let mut values = grids[0].values.clone();
    for g in &grids[1..] {
        for (v, w) in values.iter_mut().zip(&g.values) {
            *v = v.max(*w);
        }
    }
    Ok(OccupancyGrid { spec, values })
}

/// `1 − Π(1 − p_i)`, the union under independence.
pub fn union_independent(grids: &[&OccupancyGrid]) -> Result<OccupancyGrid, GridError> {
    let spec = check_union(grids)?;
    let mut miss = vec![1.0; spec.len()];
    for g in grids {
        for (m, p) in miss.iter_mut().zip(&g.values) {
            *m *= 1.0 - p.clamp(0.0, 1.0);
        }
    }
    Ok(OccupancyGrid {
        spec,
        values: miss.into_iter().map(|m| 1.0 - m).collect(),
    })
}

/// Offsets `(dx, dy)` of cells whose centers lie within `radius` of the
/// center of a reference cell.
pub fn disc_offsets(spec: &GridSpec, radius: f64) -> Vec<(i64, i64)> {
    let r = (radius / spec.resolution).floor() as i64;
    let r2 = radius * radius;
    let res2 = spec.resolution * spec.resolution;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) * res2 <= r2 + 1e-12 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Mass of cells whose centers lie within `radius` of `pos`, clamped to `[0, 1]`.
pub fn collision_probability(grid: &OccupancyGrid, pos: [f64; 2], radius: f64) -> f64 {
    let spec = &grid.spec;
    let res = spec.resolution;
    let x0 = ((pos[0] - radius - spec.origin[0]) / res - 0.5).floor().max(0.0) as i64;
    let y0 = ((pos[1] - radius - spec.origin[1]) / res - 0.5).floor().max(0.0) as i64;
    let x1 = (((pos[0] + radius - spec.origin[0]) / res - 0.5).ceil() as i64).min(spec.width as i64 - 1);
    let y1 = (((pos[1] + radius - spec.origin[1]) / res - 0.5).ceil() as i64).min(spec.height as i64 - 1);
    let r2 = radius * radius;
    let mut sum = 0.0;
    for iy in y0..=y1 {
        for ix in x0..=x1 {
            let c = spec.cell_center(ix as usize, iy as usize);
            let dx = c[0] - pos[0];
            let dy = c[1] - pos[1];
            if dx * dx + dy * dy <= r2 {
                sum += grid.values[spec.index(ix as usize, iy as usize)];
            }
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Collision probability of a disc centered on each cell center, precomputed
/// for constant-time planner lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl CollisionField {
    pub fn new(grid: &OccupancyGrid, radius: f64) -> Self {
        let spec = grid.spec;
        let offsets = disc_offsets(&spec, radius);
        let (w, h) = (spec.width as i64, spec.height as i64);
        let mut values = vec![0.0; spec.len()];
        for (src, &m) in grid.values.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let (sx, sy) = spec.coords(src);
            for &(dx, dy) in &offsets {
                let (x, y) = (sx as i64 + dx, sy as i64 + dy);
                if x >= 0 && y >= 0 && x < w && y < h {
                    values[(y * w + x) as usize] += m;
                }
            }
        }
        values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Self { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn at_index(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Value at the cell containing `(x, y)`; points off the grid read 0.
    #[inline]
    pub fn at_point(&self, x: f64, y: f64) -> f64 {
        self.spec
            .checked_index(x, y)
            .map_or(0.0, |i| self.values[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, 0.05, [0.0, 0.0]).unwrap()
    }

    #[test]
    fn world_to_cell() {
        let s = spec(10, 10);
        assert_eq!(s.cell_of(0.07, 0.02), (1, 0));
        assert_eq!(s.checked_index(0.07, 0.02), Some(1));
        assert_eq!(s.checked_index(-0.01, 0.02), None);
        let hit = s.clamped_index(10.0, -3.0);
        assert!(hit.clamped);
        assert_eq!(s.coords(hit.index), (9, 0));
    }

    #[test]
    fn emplace_examples() {
        let s = spec(10, 10);
        let ps = vec![HumanState::new(0.12, 0.12); 7];
        let e = emplace(&ps, &s);
        assert_eq!(e.grid.get(2, 2), 1.0);
        assert_eq!(e.grid.mass(), 1.0);
        let ps = [
            HumanState::new(0.01, 0.01),
            HumanState::new(0.11, 0.01),
            HumanState::new(0.01, 0.21),
            HumanState::new(0.31, 0.41),
        ];
        let e = emplace(&ps, &s);
        for (x, y) in [(0, 0), (2, 0), (0, 4), (6, 8)] {
            assert_eq!(e.grid.get(x, y), 0.25);
        }
        assert_eq!(e.clamped, 0);
    }

    #[test]
    fn out_of_bounds_particles_are_clamped_and_counted() {
        let s = spec(4, 4);
        let e = emplace(&[HumanState::new(-1.0, 0.01), HumanState::new(0.01, 0.01)], &s);
        assert_eq!(e.clamped, 1);
        assert_eq!(e.grid.get(0, 0), 1.0);
    }

    #[test]
    fn smoothing_with_zero_sigma_is_identity() {
        let s = spec(5, 5);
        let mut g = OccupancyGrid::zeros(s);
        g.set(1, 3, 0.4);
        g.set(2, 2, 0.6);
        assert_eq!(gaussian_smooth(&g, 0.0), g);
    }

    #[test]
    fn smoothing_point_mass_matches_outer_product() {
        let s = spec(21, 21);
        let mut g = OccupancyGrid::zeros(s);
        g.set(10, 10, 1.0);
        let out = gaussian_smooth(&g, 0.05);
        // Direct 2D kernel over the 7×7 support, normalized.
        let mut direct = vec![vec![0.0; 7]; 7];
        let mut total = 0.0;
        for (dy, row) in direct.iter_mut().enumerate() {
            for (dx, v) in row.iter_mut().enumerate() {
                let (x, y) = (dx as f64 - 3.0, dy as f64 - 3.0);
                *v = (-(x * x + y * y) / 2.0).exp();
                total += *v;
            }
        }
        for iy in 0..21 {
            for ix in 0..21 {
                let want = if (7..=13).contains(&ix) && (7..=13).contains(&iy) {
                    direct[iy - 7][ix - 7] / total
                } else {
                    0.0
                };
                assert_abs_diff_eq!(out.get(ix, iy), want, epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(out.get(9, 10), out.get(11, 10), epsilon = 1e-18);
        assert_abs_diff_eq!(out.get(10, 9), out.get(10, 11), epsilon = 1e-18);
    }

    #[test]
    fn smoothing_uniform_interior_is_fixed() {
        // Cells 12 or more from every edge see no renormalized sources.
        let s = spec(40, 40);
        let g = OccupancyGrid::from_values(s, vec![1.0 / 1600.0; 1600]).unwrap();
        let out = gaussian_smooth(&g, 0.1); // radius 6 cells
        for iy in 12..28 {
            for ix in 12..28 {
                assert_abs_diff_eq!(out.get(ix, iy), 1.0 / 1600.0, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(out.mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn smoothing_conserves_mass_at_corner() {
        let s = spec(8, 8);
        let mut g = OccupancyGrid::zeros(s);
        g.set(0, 0, 1.0);
        let out = gaussian_smooth(&g, 0.1);
        assert_abs_diff_eq!(out.mass(), 1.0, epsilon = 1e-12);
        assert!(out.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn union_examples() {
        let s = spec(3, 3);
        let mut g = OccupancyGrid::zeros(s);
        g.set(1, 1, 0.7);
        g.set(0, 2, 0.1);
        assert_eq!(union_max(&[&g]).unwrap(), g);
        assert_eq!(union_max(&[&OccupancyGrid::zeros(s), &g]).unwrap(), g);
        let other = OccupancyGrid::zeros(spec(3, 4));
        assert_eq!(union_max(&[&g, &other]), Err(GridError::SpecMismatch));
        assert_eq!(union_max(&[]), Err(GridError::EmptyUnion));
        let ind = union_independent(&[&g, &g]).unwrap();
        assert_abs_diff_eq!(ind.get(1, 1), 1.0 - 0.09, epsilon = 1e-12);
    }

    #[test]
    fn collision_examples() {
        let s = spec(10, 10);
        let z = OccupancyGrid::zeros(s);
        assert_eq!(collision_probability(&z, [0.25, 0.25], 0.25), 0.0);
        let mut g = OccupancyGrid::zeros(s);
        g.set(2, 2, 0.8);
        assert_eq!(collision_probability(&g, [0.12, 0.12], 0.03), 0.8);
        let mut g = OccupancyGrid::zeros(s);
        g.set(2, 2, 0.6);
        g.set(6, 2, 0.4);
        assert_eq!(collision_probability(&g, [0.125, 0.125], 0.1), 0.6);
    }

    #[test]
    fn collision_field_matches_direct_query_at_centers() {
        let s = spec(12, 9);
        let mut g = OccupancyGrid::zeros(s);
        for (i, v) in g.values_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f64 / 200.0;
        }
        let f = CollisionField::new(&g, 0.12);
        for iy in 0..9 {
            for ix in 0..12 {
                let c = s.cell_center(ix, iy);
                assert_abs_diff_eq!(
                    f.at_index(s.index(ix, iy)),
                    collision_probability(&g, c, 0.12),
                    epsilon = 1e-12
                );
            }
        }
    }

    fn arb_grid(w: usize, h: usize) -> impl Strategy<Value = OccupancyGrid> {
        proptest::collection::vec(0.0..1.0f64, w * h)
            .prop_map(move |v| OccupancyGrid::from_values(spec(w, h), v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn smoothing_is_linear(a in arb_grid(9, 7), b in arb_grid(9, 7),
                               ca in 0.0..3.0f64, cb in 0.0..3.0f64, sigma in 0.0..0.2f64) {
            let lhs = gaussian_smooth(&a.combine(ca, &b, cb).unwrap(), sigma);
            let rhs = gaussian_smooth(&a, sigma).combine(ca, &gaussian_smooth(&b, sigma), cb).unwrap();
            for (x, y) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn smoothing_preserves_mass_and_sign(a in arb_grid(11, 6), sigma in 0.0..0.3f64) {
            let out = gaussian_smooth(&a, sigma);
            prop_assert!((out.mass() - a.mass()).abs() < 1e-6);
            prop_assert!(out.values().iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn union_max_laws(a in arb_grid(5, 4), b in arb_grid(5, 4), c in arb_grid(5, 4)) {
            prop_assert_eq!(union_max(&[&a, &a]).unwrap(), a.clone());
            prop_assert_eq!(union_max(&[&a, &b]).unwrap(), union_max(&[&b, &a]).unwrap());
            let ab_c = union_max(&[&union_max(&[&a, &b]).unwrap(), &c]).unwrap();
            let a_bc = union_max(&[&a, &union_max(&[&b, &c]).unwrap()]).unwrap();
            prop_assert_eq!(ab_c, a_bc);
        }

        #[test]
        fn collision_monotone_in_radius(a in arb_grid(8, 8), x in 0.0..0.4f64, y in 0.0..0.4f64,
                                        r in 0.0..0.3f64, dr in 0.0..0.2f64) {
            let small = collision_probability(&a, [x, y], r);
            let big = collision_probability(&a, [x, y], r + dr);
            prop_assert!(big >= small);
        }

        #[test]
        fn emplace_conserves_mass(pts in proptest::collection::vec((-0.2..0.7f64, -0.2..0.7f64), 1..300)) {
            let ps: Vec<HumanState> = pts.iter().map(|&(x, y)| HumanState::new(x, y)).collect();
            let e = emplace(&ps, &spec(10, 10));
            prop_assert!((e.grid.mass() - 1.0).abs() < 1e-9);
        }
    }
}
