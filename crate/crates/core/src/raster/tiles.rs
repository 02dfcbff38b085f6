use super::ProjectedGaussian;

/// Partition of the image into square tiles (edge tiles may be partial).
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl TileGrid {
    pub fn new(width: usize, height: usize, tile_size: usize) -> Self {
        assert!(tile_size > 0, "tile size must be positive");
        TileGrid {
            width,
            height,
            tile_size,
            tiles_x: width.div_ceil(tile_size),
            tiles_y: height.div_ceil(tile_size),
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Pixel range `[x0, x1) × [y0, y1)` of tile `t`.
    pub fn tile_pixels(&self, t: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            y0,
            (x0 + self.tile_size).min(self.width),
            (y0 + self.tile_size).min(self.height),
        )
    }

    /// Inclusive pixel rectangle whose centers lie within `radius` of
    /// `center` along each axis, clipped to the image; `None` if empty.
    fn pixel_rect(&self, p: &ProjectedGaussian) -> Option<(usize, usize, usize, usize)> {
        let lo_x = (p.mean2d.x - p.radius - 0.5).ceil().max(0.0);
        let lo_y = (p.mean2d.y - p.radius - 0.5).ceil().max(0.0);
        let hi_x = (p.mean2d.x + p.radius - 0.5).floor().min(self.width as f64 - 1.0);
        let hi_y = (p.mean2d.y + p.radius - 0.5).floor().min(self.height as f64 - 1.0);
        if !(lo_x <= hi_x && lo_y <= hi_y) {
            return None;
        }
        Some((lo_x as usize, lo_y as usize, hi_x as usize, hi_y as usize))
    }
}

/// Assigns each visible Gaussian to every tile its support disk overlaps.
/// Each tile's list is sorted by ascending depth, ties broken by index.
pub fn tile_bin(projected: &[Option<ProjectedGaussian>], grid: &TileGrid) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..projected.len()).filter(|&i| projected[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let da = projected[a].as_ref().map(|p| p.depth).unwrap_or(0.0);
        let db = projected[b].as_ref().map(|p| p.depth).unwrap_or(0.0);
        da.total_cmp(&db).then(a.cmp(&b))
    });

    let mut tiles = vec![Vec::new(); grid.tile_count()];
    for i in order {
        let p = projected[i].as_ref().unwrap();
        let Some((x0, y0, x1, y1)) = grid.pixel_rect(p) else {
            continue;
        };
        let ts = grid.tile_size;
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                tiles[ty * grid.tiles_x + tx].push(i);
            }
        }
    }
    tiles
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2, Vector3};

    fn splat(x: f64, y: f64, radius: f64, depth: f64) -> Option<ProjectedGaussian> {
        Some(ProjectedGaussian {
            mean2d: Vector2::new(x, y),
            cov2d: Matrix2::identity(),
            conic: Matrix2::identity(),
            depth,
            color_view: Vector3::zeros(),
            opacity: 0.5,
            radius,
        })
    }

    fn tiles_containing(tiles: &[Vec<usize>], i: usize) -> Vec<usize> {
        (0..tiles.len()).filter(|&t| tiles[t].contains(&i)).collect()
    }

    #[test]
    fn small_gaussian_lands_in_one_tile() {
        let grid = TileGrid::new(64, 64, 16);
        let tiles = tile_bin(&[splat(24.0, 40.0, 3.0, 1.0)], &grid);
        assert_eq!(tiles_containing(&tiles, 0), vec![2 * 4 + 1]);
    }

    #[test]
    fn corner_gaussian_lands_in_four_tiles() {
        let grid = TileGrid::new(64, 64, 16);
        let tiles = tile_bin(&[splat(32.0, 32.0, 1.5, 1.0)], &grid);
        assert_eq!(tiles_containing(&tiles, 0), vec![5, 6, 9, 10]);
    }

    #[test]
    fn lists_are_depth_sorted_with_index_tiebreak() {
        let grid = TileGrid::new(32, 32, 16);
        let proj = vec![
            splat(8.0, 8.0, 4.0, 3.0),
            splat(8.0, 8.0, 4.0, 1.0),
            splat(8.0, 8.0, 4.0, 3.0),
            None,
            splat(8.0, 8.0, 4.0, 2.0),
        ];
        let tiles = tile_bin(&proj, &grid);
        assert_eq!(tiles[0], vec![1, 4, 0, 2]);
    }

    #[test]
    fn offscreen_gaussian_is_dropped() {
        let grid = TileGrid::new(32, 32, 16);
        let tiles = tile_bin(&[splat(-20.0, 10.0, 3.0, 1.0)], &grid);
        assert!(tiles.iter().all(|t| t.is_empty()));
    }

    #[test]
    fn partial_edge_tiles() {
        let grid = TileGrid::new(40, 20, 16);
        assert_eq!((grid.tiles_x, grid.tiles_y), (3, 2));
        assert_eq!(grid.tile_pixels(5), (32, 16, 40, 20));
    }
}
