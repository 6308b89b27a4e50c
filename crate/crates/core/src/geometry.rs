//! Buffered multiresolution lattices and Wendland basis evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, ElkError, Result};
use crate::sparse::SparseMatrix;

/// Support radius of every basis function, in units of its layer's cell width.
pub const SUPPORT_CELLS: f64 = 2.5;

pub const DEFAULT_BUFFER: usize = 5;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Domain {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let d = Domain { x_min, x_max, y_min, y_max };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite || !(self.x_max > self.x_min) || !(self.y_max > self.y_min) {
            return Err(invalid!("degenerate domain {:?}", self));
        }
        Ok(())
    }

    /// The square [-1, 1]².
    pub fn unit_square() -> Self {
        Domain { x_min: -1.0, x_max: 1.0, y_min: -1.0, y_max: 1.0 }
    }

    /// Smallest rectangle containing the points.
    pub fn bounding(points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid!("cannot bound an empty point set"));
        }
        let mut d = Domain { x_min: f64::INFINITY, x_max: f64::NEG_INFINITY, y_min: f64::INFINITY, y_max: f64::NEG_INFINITY };
        for p in points {
            d.x_min = d.x_min.min(p[0]);
            d.x_max = d.x_max.max(p[0]);
            d.y_min = d.y_min.min(p[1]);
            d.y_max = d.y_max.max(p[1]);
        }
        d.validate()?;
        Ok(d)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> Point {
        [0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)]
    }

    /// Euclidean diagonal of the rectangle.
    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

/// Compactly supported Wendland function `(1-t)^6 (35t^2 + 18t + 3) / 3` on `[0, 1]`.
pub fn wendland(t: f64) -> f64 {
    assert!(t >= 0.0, "wendland called with negative distance {t}");
    if t >= 1.0 {
        return 0.0;
    }
    let u = 1.0 - t;
    let u3 = u * u * u;
    u3 * u3 * (35.0 * t * t + 18.0 * t + 3.0) / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeLayer {
    /// 1-based layer id, coarse to fine.
    pub index: usize,
    pub delta: f64,
    pub buffer_cells: usize,
    pub knots_x: usize,
    pub knots_y: usize,
    /// Coordinates of knot (0, 0).
    pub origin: Point,
}

impl LatticeLayer {
    pub fn len(&self) -> usize {
        self.knots_x * self.knots_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Knot position; knots are numbered with x varying fastest.
    pub fn knot(&self, j: usize) -> Point {
        let (ix, iy) = (j % self.knots_x, j / self.knots_x);
        [self.origin[0] + ix as f64 * self.delta, self.origin[1] + iy as f64 * self.delta]
    }

    pub fn radius(&self) -> f64 {
        SUPPORT_CELLS * self.delta
    }

    /// Far corner of the knot grid.
    pub fn extent(&self) -> Point {
        [
            self.origin[0] + (self.knots_x - 1) as f64 * self.delta,
            self.origin[1] + (self.knots_y - 1) as f64 * self.delta,
        ]
    }

    /// Appends `(column, value)` for every basis function of this layer that is nonzero at `p`.
    fn eval_into(&self, p: Point, col_offset: usize, out: &mut Vec<(usize, f64)>) {
        let r = self.radius();
        let range = |coord: f64, origin: f64, count: usize| {
            let lo = ((coord - r - origin) / self.delta).ceil().max(0.0);
            let hi = ((coord + r - origin) / self.delta).floor().min(count as f64 - 1.0);
            (lo as i64, hi as i64)
        };
        let (x0, x1) = range(p[0], self.origin[0], self.knots_x);
        let (y0, y1) = range(p[1], self.origin[1], self.knots_y);
        for iy in y0..=y1 {
            let ky = self.origin[1] + iy as f64 * self.delta;
            for ix in x0..=x1 {
                let kx = self.origin[0] + ix as f64 * self.delta;
                let t = (p[0] - kx).hypot(p[1] - ky) / r;
                if t < 1.0 {
                    out.push((col_offset + iy as usize * self.knots_x + ix as usize, wendland(t)));
                }
            }
        }
    }
}

/// Builds a lattice anchored at the domain's lower-left corner, padded by `buffer_cells` on every side.
pub fn build_layer(domain: &Domain, delta: f64, buffer_cells: usize) -> Result<LatticeLayer> {
    domain.validate()?;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(invalid!("lattice cell width must be positive, got {delta}"));
    }
    if delta > domain.width() * (1.0 + 1e-12) || delta > domain.height() * (1.0 + 1e-12) {
        return Err(invalid!("cell width {delta} exceeds the domain extent"));
    }
    // Guard against 2 / (2 / 13) evaluating to 13.000000000000002.
    let cells = |extent: f64| (extent / delta - 1e-9).ceil().max(1.0) as usize;
    let b = buffer_cells as f64;
    Ok(LatticeLayer {
        index: 1,
        delta,
        buffer_cells,
        knots_x: cells(domain.width()) + 1 + 2 * buffer_cells,
        knots_y: cells(domain.height()) + 1 + 2 * buffer_cells,
        origin: [domain.x_min - b * delta, domain.y_min - b * delta],
    })
}

/// Cell width that places `count` knots across the longer side of the domain.
pub fn delta_for_knots(domain: &Domain, count: usize) -> Result<f64> {
    if count < 2 {
        return Err(invalid!("a layer needs at least 2 in-domain knots per side"));
    }
    Ok(domain.width().max(domain.height()) / (count - 1) as f64)
}

/// Halving resolutions `[δ₁, δ₁/2, …, δ₁/2^{L−1}]`.
pub fn fixed_resolutions(delta1: f64, n_layers: usize) -> Result<Vec<f64>> {
    if n_layers < 1 || !(delta1 > 0.0) {
        return Err(invalid!("fixed resolutions need delta1 > 0 and at least one layer"));
    }
    Ok((0..n_layers).map(|l| delta1 / f64::powi(2.0, l as i32)).collect())
}

/// Layer resolutions as written in configuration: in-domain knot counts or cell widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default = "default_buffer")]
    pub buffer: usize,
}

fn default_buffer() -> usize {
    DEFAULT_BUFFER
}

impl LayerSpec {
    pub fn knots(counts: &[usize]) -> Self {
        LayerSpec { knots: Some(counts.to_vec()), deltas: None, buffer: DEFAULT_BUFFER }
    }

    pub fn deltas(deltas: &[f64]) -> Self {
        LayerSpec { knots: None, deltas: Some(deltas.to_vec()), buffer: DEFAULT_BUFFER }
    }

    pub fn build(&self, domain: Domain) -> Result<MultiresBasis> {
        match (&self.knots, &self.deltas) {
            (Some(k), None) => MultiresBasis::from_knot_counts(domain, k, self.buffer),
            (None, Some(d)) => MultiresBasis::from_deltas(domain, d, self.buffer),
            _ => Err(invalid!("layers need exactly one of `knots` or `deltas`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiresBasis {
    pub domain: Domain,
    pub layers: Vec<LatticeLayer>,
}

impl MultiresBasis {
    pub fn new(domain: Domain, mut layers: Vec<LatticeLayer>) -> Result<Self> {
        domain.validate()?;
        if layers.is_empty() {
            return Err(invalid!("a basis needs at least one layer"));
        }
        if layers.windows(2).any(|w| w[1].delta >= w[0].delta) {
            return Err(invalid!("layer cell widths must strictly decrease"));
        }
        for (l, layer) in layers.iter_mut().enumerate() {
            layer.index = l + 1;
        }
        Ok(MultiresBasis { domain, layers })
    }

    /// Builds all layers from cell widths with a shared buffer.
    pub fn from_deltas(domain: Domain, deltas: &[f64], buffer_cells: usize) -> Result<Self> {
        let layers = deltas.iter().map(|&d| build_layer(&domain, d, buffer_cells)).collect::<Result<Vec<_>>>()?;
        Self::new(domain, layers)
    }

    /// Builds all layers from in-domain knot counts.
    pub fn from_knot_counts(domain: Domain, counts: &[usize], buffer_cells: usize) -> Result<Self> {
        let deltas = counts.iter().map(|&c| delta_for_knots(&domain, c)).collect::<Result<Vec<_>>>()?;
        Self::from_deltas(domain, &deltas, buffer_cells)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn total_m(&self) -> usize {
        self.layers.iter().map(LatticeLayer::len).sum()
    }

    /// Column offset of each layer's block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layers.len() + 1);
        off.push(0);
        for l in &self.layers {
            off.push(off.last().unwrap() + l.len());
        }
        off
    }

    pub fn layer(&self, l: usize) -> Result<&LatticeLayer> {
        if l == 0 || l > self.layers.len() {
            return Err(invalid!("layer index {l} outside 1..={}", self.layers.len()));
        }
        Ok(&self.layers[l - 1])
    }

    /// Whether every layer's knot grid covers `p` (the region where predictions are supported).
    pub fn supports(&self, p: Point) -> bool {
        self.layers.iter().all(|l| {
            let far = l.extent();
            p[0] >= l.origin[0] && p[0] <= far[0] && p[1] >= l.origin[1] && p[1] <= far[1]
        })
    }

    /// `n × total_m` matrix of basis function values at `locations`.
    pub fn basis_matrix(&self, locations: &[Point]) -> Result<SparseMatrix> {
        self.matrix_for(locations, &self.layers.iter().collect::<Vec<_>>(), &self.offsets())
    }

    /// Basis values of a single layer (1-based `l`) at `locations`.
    pub fn layer_matrix(&self, l: usize, locations: &[Point]) -> Result<SparseMatrix> {
        let layer = self.layer(l)?;
        self.matrix_for(locations, &[layer], &[0, layer.len()])
    }

    fn matrix_for(&self, locations: &[Point], layers: &[&LatticeLayer], offsets: &[usize]) -> Result<SparseMatrix> {
        let mut trip = Vec::new();
        let mut row = Vec::new();
        for (i, p) in locations.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(ElkError::InvalidArgument(format!("location {i} is not finite")));
            }
            row.clear();
            for (layer, &off) in layers.iter().zip(offsets) {
                layer.eval_into(*p, off, &mut row);
            }
            trip.extend(row.iter().map(|&(c, v)| (i, c, v)));
        }
        SparseMatrix::from_triplets(locations.len(), *offsets.last().unwrap(), &trip)
    }

    /// `1 × m(l)` row of layer-`l` basis values at the domain center.
    pub fn center_row(&self, l: usize) -> Result<SparseMatrix> {
        self.layer_matrix(l, &[self.domain.center()])
    }
}
