//! Multiresolution 2D hash grids and the triplane encoder built from three
//! of them (XY, YZ and XZ projections of a point in the unit cube).
//!
//! Each level is a virtual lattice with `resolution` cells per axis. Levels
//! whose `(resolution + 1)^2` vertices fit in the table index densely; finer
//! levels go through [`spatial_hash`]. A query bilinearly blends the four
//! corner rows of its cell, and levels are concatenated coarse to fine.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamGroup, ParamId, ParamStore};
use crate::real::Real;

const PRIME_Y: u32 = 2_654_435_761;

/// XOR of coordinates multiplied by `{1, 2654435761}`, masked to the table.
/// `table_size` must be a power of two.
pub fn spatial_hash(ix: u32, iy: u32, table_size: usize) -> usize {
    debug_assert!(table_size.is_power_of_two());
    ((ix ^ iy.wrapping_mul(PRIME_Y)) as usize) & (table_size - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashGridConfig {
    levels: usize,
    features_per_entry: usize,
    table_size_log2: u32,
    base_resolution: usize,
    per_level_scale: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 8,
            features_per_entry: 2,
            table_size_log2: 14,
            base_resolution: 16,
            per_level_scale: 1.32,
        }
    }
}

impl HashGridConfig {
    pub fn new(
        levels: usize,
        features_per_entry: usize,
        table_size_log2: u32,
        base_resolution: usize,
        per_level_scale: f64,
    ) -> Result<Self> {
        if levels == 0 || features_per_entry == 0 || base_resolution == 0 {
            return Err(Error::Config("hash grid levels, features and base resolution must be positive".into()));
        }
        if !(1..=30).contains(&table_size_log2) {
            return Err(Error::Config(format!("table_size_log2 {table_size_log2} outside 1..=30")));
        }
        if !(per_level_scale > 1.0) || !per_level_scale.is_finite() {
            return Err(Error::Config(format!("per_level_scale {per_level_scale} must be > 1")));
        }
        Ok(HashGridConfig {
            levels,
            features_per_entry,
            table_size_log2,
            base_resolution,
            per_level_scale,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn features_per_entry(&self) -> usize {
        self.features_per_entry
    }

    pub fn table_size_log2(&self) -> u32 {
        self.table_size_log2
    }

    pub fn table_size(&self) -> usize {
        1 << self.table_size_log2
    }

    pub fn base_resolution(&self) -> usize {
        self.base_resolution
    }

    pub fn per_level_scale(&self) -> f64 {
        self.per_level_scale
    }

    /// `floor(N_min * b^level)`
    pub fn resolution(&self, level: usize) -> usize {
        (self.base_resolution as f64 * self.per_level_scale.powi(level as i32)).floor() as usize
    }

    pub fn is_dense(&self, level: usize) -> bool {
        let side = self.resolution(level) + 1;
        side * side <= self.table_size()
    }

    pub fn output_width(&self) -> usize {
        self.levels * self.features_per_entry
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plane {
    XY,
    YZ,
    XZ,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::XY, Plane::YZ, Plane::XZ];

    /// Projects a 3D point onto this plane's coordinate pair.
    pub fn project<T: Copy>(self, p: [T; 3]) -> (T, T) {
        match self {
            Plane::XY => (p[0], p[1]),
            Plane::YZ => (p[1], p[2]),
            Plane::XZ => (p[0], p[2]),
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Plane::XY => "XY",
            Plane::YZ => "YZ",
            Plane::XZ => "XZ",
        })
    }
}

/// Rows and weights touched by one query at one level.
#[derive(Clone, Copy, Debug)]
struct Corners<T> {
    rows: [usize; 4],
    weights: [T; 4],
}

fn check_unit<T: Real>(what: &str, x: T) -> Result<()> {
    if x.is_finite() && x >= T::zero() && x <= T::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} = {x} outside [0, 1]")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanarHashGrid {
    config: HashGridConfig,
    plane: Plane,
    tables: Vec<ParamId>,
}

impl PlanarHashGrid {
    /// Registers one `(2^log2, F)` table per level, initialized uniformly in
    /// `±1e-4`.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: HashGridConfig,
        plane: Plane,
        rng: &mut R,
    ) -> Result<Self> {
        let tables = (0..config.levels)
            .map(|l| {
                store.add_uniform(
                    format!("plane_{plane}.level{l}"),
                    &[config.table_size(), config.features_per_entry],
                    1e-4,
                    ParamGroup::Embedding,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PlanarHashGrid { config, plane, tables })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn tables(&self) -> &[ParamId] {
        &self.tables
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    /// Cell position is computed in `f64` whatever `T` is, so single
    /// precision inputs lose nothing to the `u * res` product.
    fn corners<T: Real>(&self, level: usize, u: T, v: T) -> Corners<T> {
        let res = self.config.resolution(level);
        let rf = res as f64;
        let cell = |s: f64| -> (usize, f64) {
            let i = (s.floor() as usize).min(res - 1);
            (i, s - i as f64)
        };
        let (ix, fx) = cell(u.to_f64_lossy() * rf);
        let (iy, fy) = cell(v.to_f64_lossy() * rf);
        let side = res + 1;
        let dense = self.config.is_dense(level);
        let size = self.config.table_size();
        let row = |x: usize, y: usize| {
            if dense {
                y * side + x
            } else {
                spatial_hash(x as u32, y as u32, size)
            }
        };
        Corners {
            rows: [row(ix, iy), row(ix + 1, iy), row(ix, iy + 1), row(ix + 1, iy + 1)],
            weights: [
                T::lit((1.0 - fx) * (1.0 - fy)),
                T::lit(fx * (1.0 - fy)),
                T::lit((1.0 - fx) * fy),
                T::lit(fx * fy),
            ],
        }
    }

    /// Writes the `L*F` features for `(u, v)` into `out`.
    pub fn encode_into<T: Real>(&self, store: &ParamStore<T>, u: T, v: T, out: &mut [T]) -> Result<()> {
        check_unit("u", u)?;
        check_unit("v", v)?;
        if out.len() != self.output_width() {
            return Err(Error::shape("plane encoding output", self.output_width(), out.len()));
        }
        let f = self.config.features_per_entry;
        for (level, (&table, dst)) in self.tables.iter().zip(out.chunks_exact_mut(f)).enumerate() {
            let c = self.corners(level, u, v);
            let data = store.get(table);
            dst.iter_mut().for_each(|d| *d = T::zero());
            for (&row, &w) in c.rows.iter().zip(&c.weights) {
                let src = &data[row * f..(row + 1) * f];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += w * s);
            }
        }
        Ok(())
    }

    pub fn encode<T: Real>(&self, store: &ParamStore<T>, u: T, v: T) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.output_width()];
        self.encode_into(store, u, v, &mut out)?;
        Ok(out)
    }

    /// Scatters `upstream` (gradient w.r.t. the encoding) onto the at most
    /// `4L` touched rows, weighted by the bilinear weights.
    pub fn backward<T: Real>(&self, u: T, v: T, upstream: &[T], grads: &mut Gradients<T>) -> Result<()> {
        check_unit("u", u)?;
        check_unit("v", v)?;
        if upstream.len() != self.output_width() {
            return Err(Error::shape("plane encoding upstream", self.output_width(), upstream.len()));
        }
        let f = self.config.features_per_entry;
        for (level, (&table, up)) in self.tables.iter().zip(upstream.chunks_exact(f)).enumerate() {
            let c = self.corners(level, u, v);
            let g = grads.slot_mut(table);
            for (&row, &w) in c.rows.iter().zip(&c.weights) {
                g[row * f..(row + 1) * f]
                    .iter_mut()
                    .zip(up)
                    .for_each(|(d, &s)| *d += w * s);
            }
        }
        Ok(())
    }
}

/// Three independent planar grids sharing one config; output is
/// `XY ‖ YZ ‖ XZ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TriplaneEncoder {
    planes: [PlanarHashGrid; 3],
}

fn check_cube<T: Real>(p: [T; 3]) -> Result<()> {
    for (axis, &c) in ["x", "y", "z"].iter().zip(&p) {
        check_unit(axis, c)?;
    }
    Ok(())
}

impl TriplaneEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: HashGridConfig, rng: &mut R) -> Result<Self> {
        Ok(TriplaneEncoder {
            planes: [
                PlanarHashGrid::new(store, config, Plane::XY, rng)?,
                PlanarHashGrid::new(store, config, Plane::YZ, rng)?,
                PlanarHashGrid::new(store, config, Plane::XZ, rng)?,
            ],
        })
    }

    pub fn planes(&self) -> &[PlanarHashGrid; 3] {
        &self.planes
    }

    pub fn config(&self) -> &HashGridConfig {
        self.planes[0].config()
    }

    pub fn output_width(&self) -> usize {
        3 * self.config().output_width()
    }

    pub fn encode_into<T: Real>(&self, store: &ParamStore<T>, p: [T; 3], out: &mut [T]) -> Result<()> {
        check_cube(p)?;
        if out.len() != self.output_width() {
            return Err(Error::shape("triplane output", self.output_width(), out.len()));
        }
        let w = self.config().output_width();
        for (grid, dst) in self.planes.iter().zip(out.chunks_exact_mut(w)) {
            let (u, v) = grid.plane().project(p);
            grid.encode_into(store, u, v, dst)?;
        }
        Ok(())
    }

    pub fn encode<T: Real>(&self, store: &ParamStore<T>, p: [T; 3]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.output_width()];
        self.encode_into(store, p, &mut out)?;
        Ok(out)
    }

    pub fn backward<T: Real>(&self, p: [T; 3], upstream: &[T], grads: &mut Gradients<T>) -> Result<()> {
        check_cube(p)?;
        if upstream.len() != self.output_width() {
            return Err(Error::shape("triplane upstream", self.output_width(), upstream.len()));
        }
        let w = self.config().output_width();
        for (grid, up) in self.planes.iter().zip(upstream.chunks_exact(w)) {
            let (u, v) = grid.plane().project(p);
            grid.backward(u, v, up, grads)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn grid(config: HashGridConfig) -> (ParamStore<f64>, PlanarHashGrid) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = PlanarHashGrid::new(&mut store, config, Plane::XY, &mut rng).unwrap();
        for &t in g.tables() {
            store.get_mut(t).iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
        (store, g)
    }

    #[test]
    fn default_resolutions_grow_geometrically() {
        let c = HashGridConfig::default();
        let res: Vec<_> = (0..c.levels()).map(|l| c.resolution(l)).collect();
        assert_eq!(res, vec![16, 21, 27, 36, 48, 64, 84, 111]);
        // 112^2 vertices still fit in 2^14 rows: the default never hashes
        assert!((0..c.levels()).all(|l| c.is_dense(l)));
        let small = HashGridConfig::new(8, 2, 12, 16, 1.32).unwrap();
        assert!(small.is_dense(4) && !small.is_dense(5));
    }

    #[test]
    fn zero_corner_hashes_to_zero_and_hash_is_deterministic() {
        for log2 in [1, 4, 14, 20] {
            assert_eq!(spatial_hash(0, 0, 1 << log2), 0);
        }
        assert_eq!(spatial_hash(123, 456, 1 << 14), spatial_hash(123, 456, 1 << 14));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(HashGridConfig::new(0, 2, 14, 16, 1.3).is_err());
        assert!(HashGridConfig::new(8, 2, 0, 16, 1.3).is_err());
        assert!(HashGridConfig::new(8, 2, 14, 16, 1.0).is_err());
        assert!(HashGridConfig::new(8, 2, 14, 16, f64::NAN).is_err());
    }

    #[test]
    fn out_of_square_is_a_domain_error() {
        let (store, g) = grid(HashGridConfig::default());
        assert!(matches!(g.encode(&store, 1.0001, 0.5), Err(Error::Domain(_))));
        assert!(matches!(g.encode(&store, 0.5, -0.1), Err(Error::Domain(_))));
        assert!(matches!(g.encode(&store, f64::NAN, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let (store, g) = grid(HashGridConfig::default());
        let mut grads = Gradients::for_store(&store);
        g.backward(0.3, 0.7, &vec![0.0; g.output_width()], &mut grads).unwrap();
        assert!(grads.slots().iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn vertex_query_deposits_upstream_on_one_row_per_level() {
        let config = HashGridConfig::new(4, 2, 10, 8, 2.0).unwrap();
        let (store, g) = grid(config);
        let mut grads = Gradients::for_store(&store);
        let up: Vec<f64> = (0..g.output_width()).map(|i| i as f64 + 1.0).collect();
        g.backward(3.0 / 8.0, 5.0 / 8.0, &up, &mut grads).unwrap();
        for (level, &t) in g.tables().iter().enumerate() {
            let slot = grads.slot(t);
            let touched: Vec<usize> = (0..slot.len() / 2).filter(|&r| slot[2 * r] != 0.0 || slot[2 * r + 1] != 0.0).collect();
            assert_eq!(touched.len(), 1, "level {level}");
            let r = touched[0];
            assert_eq!(&slot[2 * r..2 * r + 2], &up[2 * level..2 * level + 2]);
        }
    }

    #[test]
    fn upper_boundary_is_a_valid_vertex() {
        let (store, g) = grid(HashGridConfig::default());
        let at_one = g.encode(&store, 1.0, 1.0).unwrap();
        let near = g.encode(&store, 1.0 - 1e-12, 1.0 - 1e-12).unwrap();
        for (a, b) in at_one.iter().zip(&near) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
