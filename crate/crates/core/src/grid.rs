//! Uniform 2D grids and scalar fields.
//!
//! Fields are stored row-major: index = iy * nx + ix, with node coordinates
//! x1 = origin[0] + ix*hx, x2 = origin[1] + iy*hy. All quadrature on grids is
//! the trapezoid rule; fields are assumed to decay toward the boundary and a
//! boundary-ring diagnostic is available to check that assumption.

use crate::error::{Error, Result};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin: [f64; 2],
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, hx: f64, hy: f64, origin: [f64; 2]) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!("need nx, ny >= 3, got {nx} x {ny}")));
        }
        if !(hx > 0.0) || !(hy > 0.0) {
            return Err(Error::InvalidGrid(format!("need hx, hy > 0, got {hx}, {hy}")));
        }
        if !origin[0].is_finite() || !origin[1].is_finite() {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        Ok(Self { nx, ny, hx, hy, origin })
    }

    /// Square grid covering [-extent, extent]^2 with n nodes per axis.
    pub fn centered(extent: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need n >= 3, got {n}")));
        }
        let h = 2.0 * extent / (n - 1) as f64;
        Self::new(n, n, h, h, [-extent, -extent])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn x1(&self, ix: usize) -> f64 {
        self.origin[0] + ix as f64 * self.hx
    }

    #[inline]
    pub fn x2(&self, iy: usize) -> f64 {
        self.origin[1] + iy as f64 * self.hy
    }

    #[inline]
    pub fn node(&self, p: usize) -> (f64, f64) {
        let ix = p % self.nx;
        let iy = p / self.nx;
        (self.x1(ix), self.x2(iy))
    }

    /// Trapezoid quadrature weight of node p (area element included).
    #[inline]
    pub fn trapezoid_weight(&self, p: usize) -> f64 {
        let ix = p % self.nx;
        let iy = p / self.nx;
        let cx = if ix == 0 || ix == self.nx - 1 { 0.5 } else { 1.0 };
        let cy = if iy == 0 || iy == self.ny - 1 { 0.5 } else { 1.0 };
        cx * cy * self.hx * self.hy
    }

    pub fn is_square_spacing(&self) -> bool {
        (self.hx - self.hy).abs() <= 1e-14 * self.hx.max(self.hy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field2 {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl Field2 {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { values: vec![0.0; grid.len()], grid }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            let y = grid.x2(iy);
            for ix in 0..grid.nx {
                values.push(f(grid.x1(ix), y));
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "value count {} does not match grid {} x {}",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(Self { grid, values })
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.idx(ix, iy)]
    }

    #[inline]
    pub fn at_mut(&mut self, ix: usize, iy: usize) -> &mut f64 {
        &mut self.values[self.grid.idx(ix, iy)]
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        for (p, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                let (x, y) = self.grid.node(p);
                return Err(Error::NonFinite(format!("{what} at node ({x}, {y}) = {v}")));
            }
        }
        Ok(())
    }

    /// Trapezoid-rule integral over the grid.
    pub fn integrate(&self) -> f64 {
        let mut sum = 0.0;
        for p in 0..self.values.len() {
            sum += self.grid.trapezoid_weight(p) * self.values[p];
        }
        sum
    }

    /// Trapezoid inner product (f, g).
    pub fn inner(&self, other: &Field2) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let mut sum = 0.0;
        for p in 0..self.values.len() {
            sum += self.grid.trapezoid_weight(p) * self.values[p] * other.values[p];
        }
        sum
    }

    /// Trapezoid L2 norm squared.
    pub fn norm_sq(&self) -> f64 {
        self.inner(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Max |value| over the outermost `width` rings of nodes.
    pub fn boundary_ring_max(&self, width: usize) -> f64 {
        let g = &self.grid;
        let mut m = 0.0f64;
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let on_ring = ix < width || iy < width || ix + width >= g.nx || iy + width >= g.ny;
                if on_ring {
                    m = m.max(self.at(ix, iy).abs());
                }
            }
        }
        m
    }

    /// Bilinear interpolation at (x1, x2); zero outside the grid box
    /// (fields handled here decay, so zero extension is the right contract).
    pub fn bilinear(&self, x1: f64, x2: f64) -> f64 {
        let g = &self.grid;
        let fx = (x1 - g.origin[0]) / g.hx;
        let fy = (x2 - g.origin[1]) / g.hy;
        if fx < 0.0 || fy < 0.0 || fx > (g.nx - 1) as f64 || fy > (g.ny - 1) as f64 {
            return 0.0;
        }
        let ix = (fx.floor() as usize).min(g.nx - 2);
        let iy = (fy.floor() as usize).min(g.ny - 2);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let v00 = self.at(ix, iy);
        let v10 = self.at(ix + 1, iy);
        let v01 = self.at(ix, iy + 1);
        let v11 = self.at(ix + 1, iy + 1);
        v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty
            + v11 * tx * ty
    }

    /// New field on the same grid with values f(x/s) via bilinear resampling.
    pub fn resample_scaled(&self, s: f64) -> Field2 {
        Field2::from_fn(self.grid, |x, y| self.bilinear(x / s, y / s))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2 {
        Field2 { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &Field2, f: impl Fn(f64, f64) -> f64) -> Field2 {
        debug_assert_eq!(self.grid, other.grid);
        Field2 {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(other.values.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// Fornberg weights: for nodes `x` and evaluation point `z`, returns
/// `w[j][k]` = weight of node j in the k-th derivative formula, k <= m.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c
}

/// Central-stencil weights for the m-th derivative at 6th-order accuracy on
/// unit spacing; half-width 3 for m <= 2, 4 for m = 3, 4.
pub fn central_stencil(order: usize) -> (Vec<f64>, usize) {
    let hw = if order <= 2 { 3 } else { 4 };
    let nodes: Vec<f64> = (-(hw as isize)..=hw as isize).map(|i| i as f64).collect();
    let w = fornberg_weights(0.0, &nodes, order);
    (w.iter().map(|row| row[order]).collect(), hw)
}

/// 6th-order central first derivative along `axis` (0 = x1, 1 = x2).
/// Values beyond the boundary are taken as zero (decaying-field contract).
pub fn fd_partial(f: &Field2, axis: usize) -> Field2 {
    let g = f.grid;
    let h = if axis == 0 { g.hx } else { g.hy };
    let (coeffs, hw) = central_stencil(1);
    let mut out = Field2::zeros(g);
    for iy in 0..g.ny as isize {
        for ix in 0..g.nx as isize {
            let mut acc = 0.0;
            for (ci, &c) in coeffs.iter().enumerate() {
                let o = ci as isize - hw as isize;
                let (jx, jy) = if axis == 0 { (ix + o, iy) } else { (ix, iy + o) };
                if jx >= 0 && jy >= 0 && (jx as usize) < g.nx && (jy as usize) < g.ny {
                    acc += c * f.at(jx as usize, jy as usize);
                }
            }
            out.values[g.idx(ix as usize, iy as usize)] = acc / h;
        }
    }
    out
}

const FIELD_HEADER_LINES: usize = 5;

/// Write a field in the exchange format: 5 header lines (nx, ny, hx, hy,
/// origin) followed by ny rows of nx comma-separated values.
pub fn write_field_csv(field: &Field2, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let g = &field.grid;
    writeln!(out, "nx {}", g.nx)?;
    writeln!(out, "ny {}", g.ny)?;
    writeln!(out, "hx {:.17e}", g.hx)?;
    writeln!(out, "hy {:.17e}", g.hy)?;
    writeln!(out, "origin {:.17e} {:.17e}", g.origin[0], g.origin[1])?;
    for iy in 0..g.ny {
        let row: Vec<String> =
            (0..g.nx).map(|ix| format!("{:.17e}", field.at(ix, iy))).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_field_csv(path: &Path) -> Result<Field2> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let mut header = Vec::with_capacity(FIELD_HEADER_LINES);
    for _ in 0..FIELD_HEADER_LINES {
        header.push(
            lines
                .next()
                .ok_or_else(|| Error::Parse("truncated field header".into()))?
                .map_err(Error::Io)?,
        );
    }
    let field_of = |line: &str, key: &str| -> Result<Vec<String>> {
        let mut parts = line.split_whitespace();
        let k = parts.next().unwrap_or("");
        if k != key {
            return Err(Error::Parse(format!("expected header key '{key}', got '{k}'")));
        }
        Ok(parts.map(str::to_owned).collect())
    };
    let nx: usize = field_of(&header[0], "nx")?[0]
        .parse()
        .map_err(|e| Error::Parse(format!("nx: {e}")))?;
    let ny: usize = field_of(&header[1], "ny")?[0]
        .parse()
        .map_err(|e| Error::Parse(format!("ny: {e}")))?;
    let hx: f64 = field_of(&header[2], "hx")?[0]
        .parse()
        .map_err(|e| Error::Parse(format!("hx: {e}")))?;
    let hy: f64 = field_of(&header[3], "hy")?[0]
        .parse()
        .map_err(|e| Error::Parse(format!("hy: {e}")))?;
    let org = field_of(&header[4], "origin")?;
    if org.len() != 2 {
        return Err(Error::Parse("origin needs two components".into()));
    }
    let origin = [
        org[0].parse::<f64>().map_err(|e| Error::Parse(format!("origin: {e}")))?,
        org[1].parse::<f64>().map_err(|e| Error::Parse(format!("origin: {e}")))?,
    ];
    let grid = Grid2D::new(nx, ny, hx, hy, origin)?;
    let mut values = Vec::with_capacity(grid.len());
    for line in lines {
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split(',') {
            values.push(
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("field value '{tok}': {e}")))?,
            );
        }
    }
    let field = Field2::from_values(grid, values)?;
    field.check_finite("field file")?;
    Ok(field)
}
