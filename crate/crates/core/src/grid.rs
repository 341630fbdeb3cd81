//! Regular latitude-longitude grids on the unit sphere.
//!
//! Cells are ordered longitude-fastest, latitude-slowest, with centers offset
//! by half a spacing so that no center sits on a pole (the discretized
//! Laplacian divides by `cos(lat)`). All angles are radians; degree
//! conversion happens only at the CLI boundary.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};

/// A regular lat-lon grid with cell-center coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n_lat: usize,
    n_lon: usize,
    d_lat: f64,
    d_lon: f64,
    cells: Vec<(f64, f64)>,
}

impl Grid {
    /// Builds the `n_lat x n_lon` grid with centers at
    /// `lat = -pi/2 + (i + 1/2) * d_lat`, `lon = (j + 1/2) * d_lon`.
    pub fn build(n_lat: usize, n_lon: usize) -> Result<Grid> {
        if n_lat < 2 || n_lon < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "grid must be at least 2x2, got {n_lat}x{n_lon}"
            )));
        }
        let d_lat = PI / n_lat as f64;
        let d_lon = 2.0 * PI / n_lon as f64;
        let mut cells = Vec::with_capacity(n_lat * n_lon);
        for i in 0..n_lat {
            let lat = -PI / 2.0 + (i as f64 + 0.5) * d_lat;
            for j in 0..n_lon {
                let lon = (j as f64 + 0.5) * d_lon;
                cells.push((lat, lon));
            }
        }
        Ok(Grid { n_lat, n_lon, d_lat, d_lon, cells })
    }

    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    /// Latitudinal spacing in radians.
    pub fn d_lat(&self) -> f64 {
        self.d_lat
    }

    /// Longitudinal spacing in radians.
    pub fn d_lon(&self) -> f64 {
        self.d_lon
    }

    /// Total cell count `n_lat * n_lon`.
    pub fn n_grid(&self) -> usize {
        self.cells.len()
    }

    /// Cell centers `(lat, lon)` in canonical order.
    pub fn cells(&self) -> &[(f64, f64)] {
        &self.cells
    }

    /// Center of cell `i`.
    pub fn cell(&self, i: usize) -> Result<(f64, f64)> {
        self.cells
            .get(i)
            .copied()
            .ok_or(Error::IndexOutOfRange { index: i, len: self.cells.len() })
    }

    /// Flat index of the cell at row `i_lat`, column `j_lon`.
    pub fn index_of(&self, i_lat: usize, j_lon: usize) -> usize {
        i_lat * self.n_lon + j_lon
    }

    /// Radius `rho_i = sqrt(d_lat * d_lon * cos(lat_i) / pi)` of the circle
    /// whose area approximates the area of cell `i`.
    pub fn cell_radius(&self, i: usize) -> Result<f64> {
        let (lat, _) = self.cell(i)?;
        Ok(libm::sqrt(self.d_lat * self.d_lon * libm::cos(lat) / PI))
    }
}

/// Great-circle distance in `[0, pi]` between two `(lat, lon)` points on the
/// unit sphere, via the haversine formula.
pub fn great_circle_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = a;
    let (lat2, lon2) = b;
    let sdlat = libm::sin((lat2 - lat1) / 2.0);
    let sdlon = libm::sin((lon2 - lon1) / 2.0);
    let h = sdlat * sdlat + libm::cos(lat1) * libm::cos(lat2) * sdlon * sdlon;
    2.0 * libm::asin(libm::sqrt(h.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DEG: f64 = PI / 180.0;

    #[test]
    fn reference_grid_has_2592_cells() {
        let g = Grid::build(36, 72).unwrap();
        assert_eq!(g.n_grid(), 2592);
    }

    #[test]
    fn smallest_grid_centers() {
        let g = Grid::build(2, 2).unwrap();
        assert_eq!(g.n_grid(), 4);
        let expect = [
            (-45.0 * DEG, 90.0 * DEG),
            (-45.0 * DEG, 270.0 * DEG),
            (45.0 * DEG, 90.0 * DEG),
            (45.0 * DEG, 270.0 * DEG),
        ];
        for (c, e) in g.cells().iter().zip(expect.iter()) {
            assert!((c.0 - e.0).abs() < 1e-12);
            assert!((c.1 - e.1).abs() < 1e-12);
        }
    }

    #[test]
    fn first_cell_of_reference_grid() {
        let g = Grid::build(36, 72).unwrap();
        let (lat, lon) = g.cell(0).unwrap();
        assert!((lat - (-87.5 * DEG)).abs() < 1e-12);
        assert!((lon - 2.5 * DEG).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_dimensions() {
        assert!(Grid::build(1, 10).is_err());
        assert!(Grid::build(10, 1).is_err());
    }

    #[test]
    fn distance_identity_antipodal_quarter() {
        assert_eq!(great_circle_distance((0.3, 1.2), (0.3, 1.2)), 0.0);
        let d = great_circle_distance((0.0, 0.0), (0.0, PI));
        assert!((d - PI).abs() < 1e-12);
        let q = great_circle_distance((0.0, 0.0), (0.0, PI / 2.0));
        assert!((q - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cell_radius_hand_value() {
        // equator cell with d_lat = d_lon = pi/36: rho = sqrt((pi/36)^2/pi)
        let g = Grid::build(36, 72).unwrap();
        // grid (36,72) has d_lon = pi/36 and d_lat = pi/36
        assert!((g.d_lat() - PI / 36.0).abs() < 1e-15);
        assert!((g.d_lon() - PI / 36.0).abs() < 1e-15);
        let i = g.index_of(18, 0); // lat = 2.5 deg, nearly equatorial
        let rho = g.cell_radius(i).unwrap();
        let lat = g.cell(i).unwrap().0;
        let expect = libm::sqrt((PI / 36.0) * (PI / 36.0) * libm::cos(lat) / PI);
        assert!((rho - expect).abs() < 1e-15);
        // the pure-equator hand value
        let rho_eq = libm::sqrt((PI / 36.0) * (PI / 36.0) / PI);
        assert!((rho_eq - 0.04924).abs() < 5e-5);
    }

    #[test]
    fn cell_radius_symmetry_and_monotonicity() {
        let g = Grid::build(36, 72).unwrap();
        // mirrored latitudes give equal radii
        let lo = g.cell_radius(g.index_of(0, 0)).unwrap();
        let hi = g.cell_radius(g.index_of(35, 0)).unwrap();
        assert!((lo - hi).abs() < 1e-15);
        // polar cell smaller than equator cell
        let eq = g.cell_radius(g.index_of(18, 0)).unwrap();
        assert!(lo < eq);
    }

    #[test]
    fn sphere_area_consistency() {
        let g = Grid::build(36, 72).unwrap();
        let total: f64 = (0..g.n_grid())
            .map(|i| g.d_lat() * g.d_lon() * libm::cos(g.cell(i).unwrap().0))
            .sum();
        assert!((total - 4.0 * PI).abs() / (4.0 * PI) < 0.01);
    }

    #[test]
    fn index_roundtrip() {
        let g = Grid::build(6, 12).unwrap();
        for i_lat in 0..6 {
            for j_lon in 0..12 {
                let idx = g.index_of(i_lat, j_lon);
                let (lat, lon) = g.cell(idx).unwrap();
                let back_i = ((lat + PI / 2.0) / g.d_lat() - 0.5).round() as usize;
                let back_j = (lon / g.d_lon() - 0.5).round() as usize;
                assert_eq!((back_i, back_j), (i_lat, j_lon));
            }
        }
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_triangle(
            a in (-1.5f64..1.5, 0.0f64..6.28),
            b in (-1.5f64..1.5, 0.0f64..6.28),
            c in (-1.5f64..1.5, 0.0f64..6.28),
        ) {
            let dab = great_circle_distance(a, b);
            let dba = great_circle_distance(b, a);
            prop_assert!((dab - dba).abs() < 1e-12);
            prop_assert!(dab >= 0.0 && dab <= PI + 1e-12);
            let dac = great_circle_distance(a, c);
            let dcb = great_circle_distance(c, b);
            prop_assert!(dab <= dac + dcb + 1e-9);
        }
    }
}
