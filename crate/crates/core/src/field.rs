//! Scalar fields on uniform square-cell lattices and circular apertures.
//!
//! Rows run along `y`, columns along `x`. Cell `(row, col)` has its centre at
//! `(origin.0 + col * spacing, origin.1 + row * spacing)`.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    rows: usize,
    cols: usize,
    spacing: f64,
    origin: (f64, f64),
    values: Vec<f64>,
}

impl Field2D {
    pub fn new(
        rows: usize,
        cols: usize,
        spacing: f64,
        origin: (f64, f64),
        values: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!("empty field {rows}x{cols}"));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return invalid(format!("spacing must be positive, got {spacing}"));
        }
        if values.len() != rows * cols {
            return invalid(format!(
                "{} values for a {rows}x{cols} field",
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite value at flat index {i}"));
        }
        Ok(Self {
            rows,
            cols,
            spacing,
            origin,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize, spacing: f64, origin: (f64, f64)) -> Result<Self> {
        Self::new(rows, cols, spacing, origin, vec![0.0; rows * cols])
    }

    /// Lattice of `n x n` cells centred on the coordinate origin.
    pub fn centered(n: usize, spacing: f64, values: Vec<f64>) -> Result<Self> {
        let o = -0.5 * (n as f64 - 1.0) * spacing;
        Self::new(n, n, spacing, (o, o), values)
    }

    /// Samples `f(x, y)` at every cell centre of a centred `n x n` lattice.
    pub fn from_fn(n: usize, spacing: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let o = -0.5 * (n as f64 - 1.0) * spacing;
        let mut values = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                values.push(f(o + c as f64 * spacing, o + r as f64 * spacing));
            }
        }
        Self::new(n, n, spacing, (o, o), values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
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

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.cols + col] = v;
    }

    /// Physical `(x, y)` of a cell centre.
    #[inline]
    pub fn coord(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + col as f64 * self.spacing,
            self.origin.1 + row as f64 * self.spacing,
        )
    }

    /// New field on the same lattice with replaced values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.rows, self.cols, self.spacing, self.origin, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    /// Fields combine only when shapes and spacings agree.
    pub fn check_compatible(&self, other: &Field2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        let tol = 1e-12 * self.spacing.max(other.spacing);
        if (self.spacing - other.spacing).abs() > tol {
            return invalid(format!(
                "spacing mismatch: {} vs {}",
                self.spacing, other.spacing
            ));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Field2D) -> Result<Self> {
        self.check_compatible(other)?;
        self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Circular pupil of diameter `D` on an `N x N` lattice spanning `[-D, D]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApertureSpec {
    pub diameter: f64,
    pub n: usize,
    pub amplitude: Field2D,
}

impl ApertureSpec {
    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    #[inline]
    pub fn inside(&self, row: usize, col: usize) -> bool {
        self.amplitude.get(row, col) > 0.5
    }

    /// Number of cells inside the pupil.
    pub fn area_cells(&self) -> usize {
        self.amplitude.values().iter().filter(|&&a| a > 0.5).count()
    }

    /// Row-major list of flat indices inside the pupil.
    pub fn inside_indices(&self) -> Vec<usize> {
        self.amplitude
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0.5)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn make_circular_aperture(n: usize, diameter: f64) -> Result<ApertureSpec> {
    if n < 2 {
        return invalid(format!("aperture grid needs N >= 2, got {n}"));
    }
    if !(diameter > 0.0) || !diameter.is_finite() {
        return invalid(format!("aperture diameter must be positive, got {diameter}"));
    }
    let spacing = 2.0 * diameter / n as f64;
    let r2 = 0.25 * diameter * diameter;
    let amplitude = Field2D::from_fn(n, spacing, |x, y| {
        if x * x + y * y <= r2 {
            1.0
        } else {
            0.0
        }
    })?;
    Ok(ApertureSpec {
        diameter,
        n,
        amplitude,
    })
}

/// Central differences in the interior, one-sided at the borders.
///
/// Returns `(d/dx, d/dy)` in field units per metre.
pub fn field_gradient(f: &Field2D) -> Result<(Field2D, Field2D)> {
    let (rows, cols) = f.shape();
    if rows < 3 || cols < 3 {
        return invalid(format!("gradient needs at least 3x3 cells, got {rows}x{cols}"));
    }
    let h = f.spacing();
    let mut gx = vec![0.0; rows * cols];
    let mut gy = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            gx[r * cols + c] = if c == 0 {
                (f.get(r, 1) - f.get(r, 0)) / h
            } else if c == cols - 1 {
                (f.get(r, c) - f.get(r, c - 1)) / h
            } else {
                (f.get(r, c + 1) - f.get(r, c - 1)) / (2.0 * h)
            };
            gy[r * cols + c] = if r == 0 {
                (f.get(1, c) - f.get(0, c)) / h
            } else if r == rows - 1 {
                (f.get(r, c) - f.get(r - 1, c)) / h
            } else {
                (f.get(r + 1, c) - f.get(r - 1, c)) / (2.0 * h)
            };
        }
    }
    Ok((f.with_values(gx)?, f.with_values(gy)?))
}
