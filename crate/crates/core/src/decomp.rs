//! Deterministic grid decomposition of 2D/3D images into subimages.
//!
//! Channels are never split; tiles cover the spatial axes only. With zero
//! overlap the tiles partition the spatial domain exactly. Tile order is
//! lexicographic over the grid axes (last axis fastest), which fixes the
//! input order of every downstream aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One tile: spatial origin and extents (channels excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRegion {
    pub origin: Vec<usize>,
    pub extents: Vec<usize>,
}

/// A tile plan mapping a global image shape to N subimages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    /// Global spatial extents (height, width[, depth]).
    pub spatial: Vec<usize>,
    pub channels: usize,
    /// Grid extents per spatial axis.
    pub grid: Vec<usize>,
    /// Overlap in pixels/voxels added per interior side.
    pub delta: usize,
    pub tiles: Vec<TileRegion>,
}

impl Decomposition {
    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    /// True when every tile has identical extents.
    pub fn uniform(&self) -> bool {
        self.tiles
            .windows(2)
            .all(|w| w[0].extents == w[1].extents)
    }

    /// Shape of tile `t` including channels: [channels, extents...].
    pub fn tile_shape(&self, t: usize) -> Vec<usize> {
        let mut s = vec![self.channels];
        s.extend_from_slice(&self.tiles[t].extents);
        s
    }

    /// Global image shape including channels.
    pub fn global_shape(&self) -> Vec<usize> {
        let mut s = vec![self.channels];
        s.extend_from_slice(&self.spatial);
        s
    }
}

/// Plan a `grid` decomposition of `[channels, spatial...]` with overlap
/// `delta`. Non-divisible extents are absorbed by the last tile of each
/// axis, so the grid size is preserved and the δ=0 partition stays exact.
pub fn plan_grid(shape: &[usize], grid: &[usize], delta: usize) -> Result<Decomposition> {
    if shape.len() < 3 || shape.len() > 4 {
        return Err(Error::Contract(format!(
            "expected [channels, 2 or 3 spatial extents], got {shape:?}"
        )));
    }
    let channels = shape[0];
    let spatial = &shape[1..];
    if grid.len() != spatial.len() {
        return Err(Error::Contract(format!(
            "grid rank {} does not match spatial rank {}",
            grid.len(),
            spatial.len()
        )));
    }
    if channels == 0 || spatial.iter().any(|&e| e == 0) {
        return Err(Error::Contract("image extents must be >= 1".into()));
    }
    for (d, (&g, &e)) in grid.iter().zip(spatial).enumerate() {
        if g == 0 {
            return Err(Error::Contract("grid extents must be >= 1".into()));
        }
        if g > e {
            return Err(Error::Contract(format!(
                "grid extent {g} exceeds spatial extent {e} on axis {d}"
            )));
        }
    }

    // Base origins/extents per axis; the last cell absorbs the remainder.
    let mut axis_cells: Vec<Vec<(usize, usize)>> = Vec::with_capacity(grid.len());
    for (d, &g) in grid.iter().enumerate() {
        let e = spatial[d];
        let base = e / g;
        let mut cells = Vec::with_capacity(g);
        for i in 0..g {
            let origin = i * base;
            let extent = if i + 1 == g { e - origin } else { base };
            cells.push((origin, extent));
        }
        axis_cells.push(cells);
    }

    let n: usize = grid.iter().product();
    let mut tiles = Vec::with_capacity(n);
    let mut idx = vec![0usize; grid.len()];
    for _ in 0..n {
        let mut origin = Vec::with_capacity(grid.len());
        let mut extents = Vec::with_capacity(grid.len());
        for (d, &i) in idx.iter().enumerate() {
            let (mut o, mut e) = axis_cells[d][i];
            if delta > 0 {
                // Expand by delta on each side, clipped at the image border.
                let lo = o.saturating_sub(delta);
                let hi = (o + e + delta).min(spatial[d]);
                o = lo;
                e = hi - lo;
            }
            origin.push(o);
            extents.push(e);
        }
        tiles.push(TileRegion { origin, extents });
        // Lexicographic increment, last axis fastest.
        for d in (0..grid.len()).rev() {
            idx[d] += 1;
            if idx[d] < grid[d] {
                break;
            }
            idx[d] = 0;
        }
    }

    Ok(Decomposition {
        spatial: spatial.to_vec(),
        channels,
        grid: grid.to_vec(),
        delta,
        tiles,
    })
}

fn check_image(image: &Tensor, plan: &Decomposition, batched: bool) -> Result<usize> {
    let expect = plan.global_shape();
    let (batch, shape) = if batched {
        (image.shape()[0], &image.shape()[1..])
    } else {
        (1, image.shape())
    };
    if shape != expect.as_slice() {
        return Err(Error::Shape(format!(
            "image shape {:?} does not match plan {:?}",
            image.shape(),
            expect
        )));
    }
    Ok(batch)
}

/// Extract every tile of a single image `[channels, spatial...]` as copies.
pub fn extract_tiles(image: &Tensor, plan: &Decomposition) -> Result<Vec<Tensor>> {
    check_image(image, plan, false)?;
    (0..plan.tile_count())
        .map(|t| {
            let batched = image.reshape({
                let mut s = vec![1];
                s.extend_from_slice(image.shape());
                s
            })?;
            let tile = extract_tile_batch(&batched, plan, t)?;
            tile.reshape(plan.tile_shape(t))
        })
        .collect()
}

/// Extract tile `t` from a batch of images `[n, channels, spatial...]`.
pub fn extract_tile_batch(images: &Tensor, plan: &Decomposition, t: usize) -> Result<Tensor> {
    let batch = check_image(images, plan, true)?;
    let region = &plan.tiles[t];
    let sp = &plan.spatial;
    let c = plan.channels;
    let mut out_shape = vec![batch];
    out_shape.extend_from_slice(&plan.tile_shape(t));
    let mut out = Tensor::zeros_with(out_shape, images.precision());
    let tile_sp: usize = region.extents.iter().product();
    let global_sp: usize = sp.iter().product();
    let src = images.data();
    let dst = out.data_mut();

    if sp.len() == 2 {
        let w = sp[1];
        let (oy, ox) = (region.origin[0], region.origin[1]);
        let (th, tw) = (region.extents[0], region.extents[1]);
        for nc in 0..batch * c {
            let sbase = nc * global_sp;
            let dbase = nc * tile_sp;
            for y in 0..th {
                let srow = sbase + (oy + y) * w + ox;
                let drow = dbase + y * tw;
                dst[drow..drow + tw].copy_from_slice(&src[srow..srow + tw]);
            }
        }
    } else {
        let (s1, s2) = (sp[1], sp[2]);
        let (o0, o1, o2) = (region.origin[0], region.origin[1], region.origin[2]);
        let (t0, t1, t2) = (region.extents[0], region.extents[1], region.extents[2]);
        for nc in 0..batch * c {
            let sbase = nc * global_sp;
            let dbase = nc * tile_sp;
            for a in 0..t0 {
                for b in 0..t1 {
                    let srow = sbase + ((o0 + a) * s1 + o1 + b) * s2 + o2;
                    let drow = dbase + (a * t1 + b) * t2;
                    dst[drow..drow + t2].copy_from_slice(&src[srow..srow + t2]);
                }
            }
        }
    }
    Ok(out)
}

/// Stack all tiles of a batch along the channel axis, plan order.
/// Requires a uniform plan; output is `[n, channels * N, tile extents...]`.
pub fn stack_tiles_batch(images: &Tensor, plan: &Decomposition) -> Result<Tensor> {
    if !plan.uniform() {
        return Err(Error::Contract(
            "channel stacking requires uniform tile extents; grid must divide the image".into(),
        ));
    }
    let batch = check_image(images, plan, true)?;
    let n = plan.tile_count();
    let c = plan.channels;
    let tile_sp: usize = plan.tiles[0].extents.iter().product();
    let mut shape = vec![batch, c * n];
    shape.extend_from_slice(&plan.tiles[0].extents);
    let mut out = Tensor::zeros_with(shape, images.precision());
    {
        let dst = out.data_mut();
        for (t, _) in plan.tiles.iter().enumerate() {
            let tile = extract_tile_batch(images, plan, t)?;
            let src = tile.data();
            for b in 0..batch {
                let doff = (b * c * n + t * c) * tile_sp;
                let soff = b * c * tile_sp;
                dst[doff..doff + c * tile_sp].copy_from_slice(&src[soff..soff + c * tile_sp]);
            }
        }
    }
    Ok(out)
}

/// Reassemble a δ=0 plan's tiles into the full image. Inverse of
/// [`extract_tiles`] for exact partitions.
pub fn reassemble_tiles(tiles: &[Tensor], plan: &Decomposition) -> Result<Tensor> {
    if plan.delta != 0 {
        return Err(Error::Contract("reassembly is defined for delta = 0 plans only".into()));
    }
    if tiles.len() != plan.tile_count() {
        return Err(Error::Contract(format!(
            "{} tiles supplied, plan has {}",
            tiles.len(),
            plan.tile_count()
        )));
    }
    let sp = &plan.spatial;
    let c = plan.channels;
    let global_sp: usize = sp.iter().product();
    let mut out = Tensor::zeros_with(plan.global_shape(), tiles[0].precision());
    let dst = out.data_mut();
    for (t, tile) in tiles.iter().enumerate() {
        if tile.shape() != plan.tile_shape(t).as_slice() {
            return Err(Error::Shape(format!(
                "tile {t} has shape {:?}, plan expects {:?}",
                tile.shape(),
                plan.tile_shape(t)
            )));
        }
        let region = &plan.tiles[t];
        let tile_sp: usize = region.extents.iter().product();
        let src = tile.data();
        if sp.len() == 2 {
            let w = sp[1];
            let (oy, ox) = (region.origin[0], region.origin[1]);
            let (th, tw) = (region.extents[0], region.extents[1]);
            for ch in 0..c {
                for y in 0..th {
                    let drow = ch * global_sp + (oy + y) * w + ox;
                    let srow = ch * tile_sp + y * tw;
                    dst[drow..drow + tw].copy_from_slice(&src[srow..srow + tw]);
                }
            }
        } else {
            let (s1, s2) = (sp[1], sp[2]);
            let (o0, o1, o2) = (region.origin[0], region.origin[1], region.origin[2]);
            let (t0, t1, t2) = (region.extents[0], region.extents[1], region.extents[2]);
            for ch in 0..c {
                for a in 0..t0 {
                    for b in 0..t1 {
                        let drow = ch * global_sp + ((o0 + a) * s1 + o1 + b) * s2 + o2;
                        let srow = ch * tile_sp + (a * t1 + b) * t2;
                        dst[drow..drow + t2].copy_from_slice(&src[srow..srow + t2]);
                    }
                }
            }
        }
    }
    Ok(out)
}
