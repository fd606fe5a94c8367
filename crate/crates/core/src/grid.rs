//! Uniform periodic lattice on `[0,1)^d` and the discrete calculus on it.
//!
//! The gradient is a forward difference and the divergence a backward
//! difference, both with periodic wrap, so that with the `h^d`-weighted inner
//! product
//!
//! ```text
//! <grad u, w>_h = -<u, div w>_h
//! ```
//!
//! holds up to rounding. Every reduction goes through a compensated sum in
//! node order, so integrals are reproducible bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, MfgError, Result};

pub const MAX_DIM: usize = 2;

/// A point of `R^d`, padded with zeros when `d = 1`.
pub type Vect = [f64; MAX_DIM];

#[inline]
pub fn norm(p: &Vect) -> f64 {
    p[0].hypot(p[1])
}

#[inline]
pub fn dot(a: &Vect, b: &Vect) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn scale(p: &Vect, s: f64) -> Vect {
    [p[0] * s, p[1] * s]
}

#[inline]
pub fn sub(a: &Vect, b: &Vect) -> Vect {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: &Vect, b: &Vect) -> Vect {
    [a[0] + b[0], a[1] + b[1]]
}

/// Compensated (Neumaier) summation in iteration order.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n_per_dim: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(invalid(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if n_per_dim < 2 {
            return Err(invalid(format!("grid needs at least 2 nodes per axis, got {n_per_dim}")));
        }
        Ok(Self { dim, n: n_per_dim })
    }

    /// Degenerate single-node grid. Only useful for driving the VI solver on
    /// small algebraic test operators; all calculus is identically zero on it.
    pub fn single_node() -> Self {
        Self { dim: 1, n: 1 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_dim(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// `h^d`, the quadrature weight of a node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Row-major stride of `axis`: axis 0 is the slowest.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        debug_assert!(axis < self.dim);
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// Multi-index of a node (unused axes are 0).
    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for (axis, slot) in out.iter_mut().enumerate().take(self.dim) {
            *slot = (node / self.stride(axis)) % self.n;
        }
        out
    }

    pub fn node_of(&self, index: [usize; MAX_DIM]) -> usize {
        (0..self.dim).map(|k| (index[k] % self.n) * self.stride(k)).sum()
    }

    /// Physical coordinates `x = i h` of a node.
    pub fn position(&self, node: usize) -> Vect {
        let idx = self.multi_index(node);
        let h = self.spacing();
        [idx[0] as f64 * h, idx[1] as f64 * h]
    }

    /// Neighbour of `node` one step forward along `axis`, wrapping.
    #[inline]
    pub fn forward(&self, node: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let i = (node / s) % self.n;
        if i + 1 == self.n {
            node + s - self.n * s
        } else {
            node + s
        }
    }

    /// Neighbour of `node` one step backward along `axis`, wrapping.
    #[inline]
    pub fn backward(&self, node: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let i = (node / s) % self.n;
        if i == 0 {
            node + self.n * s - s
        } else {
            node - s
        }
    }

    pub(crate) fn ensure_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return Err(MfgError::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(MfgError::GridMismatch(format!(
                "{} values for a grid with {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.node_count()] }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at the node positions.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(Vect) -> f64) -> Self {
        let values = (0..grid.node_count()).map(|i| f(grid.position(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
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

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid, values })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    values: Vec<Vect>,
}

impl VectorField {
    pub fn from_values(grid: TorusGrid, values: Vec<Vect>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(MfgError::GridMismatch(format!(
                "{} vectors for a grid with {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, values: vec![[0.0; MAX_DIM]; grid.node_count()] }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Vect] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vect] {
        &mut self.values
    }

    /// Pointwise Euclidean length.
    pub fn magnitude(&self) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(norm).collect() }
    }

    pub fn component(&self, axis: usize) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| v[axis]).collect() }
    }
}

/// Forward differences with periodic wrap.
pub fn gradient(u: &ScalarField) -> VectorField {
    let grid = u.grid;
    let inv_h = grid.n as f64;
    let mut out = VectorField::zeros(grid);
    if grid.n < 2 {
        return out;
    }
    let vals = &u.values;
    for (node, g) in out.values.iter_mut().enumerate() {
        for (axis, slot) in g.iter_mut().enumerate().take(grid.dim) {
            *slot = (vals[grid.forward(node, axis)] - vals[node]) * inv_h;
        }
    }
    out
}

/// Backward differences with periodic wrap: the negative adjoint of
/// [`gradient`] in the `h^d`-weighted inner product.
pub fn divergence(w: &VectorField) -> ScalarField {
    let grid = w.grid;
    let inv_h = grid.n as f64;
    let mut out = ScalarField::zeros(grid);
    if grid.n < 2 {
        return out;
    }
    let vals = &w.values;
    for (node, d) in out.values.iter_mut().enumerate() {
        let mut acc = 0.0;
        for axis in 0..grid.dim {
            acc += vals[node][axis] - vals[grid.backward(node, axis)][axis];
        }
        *d = acc * inv_h;
    }
    out
}

/// `h^d * sum_x f(x)`.
pub fn integral(f: &ScalarField) -> f64 {
    f.grid.cell_volume() * neumaier_sum(f.values.iter().copied())
}

/// `h^d`-weighted inner product of two scalar fields.
pub fn inner_product(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    Ok(f.grid.cell_volume() * neumaier_sum(f.values.iter().zip(&g.values).map(|(a, b)| a * b)))
}

pub fn vector_inner_product(f: &VectorField, g: &VectorField) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    Ok(f.grid.cell_volume() * neumaier_sum(f.values.iter().zip(&g.values).map(|(a, b)| dot(a, b))))
}

/// `int |f|^p`.
pub fn lp_norm_pow(f: &ScalarField, p: f64) -> f64 {
    f.grid.cell_volume() * neumaier_sum(f.values.iter().map(|v| v.abs().powf(p)))
}

/// Discrete `||u||^p_{W^{1,p}} = int (|Du|^p + |u|^p)`.
pub fn sobolev_norm_pow(u: &ScalarField, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(invalid(format!("Sobolev exponent must exceed 1, got {p}")));
    }
    let du = gradient(u);
    let terms = du.values.iter().zip(&u.values).map(|(g, v)| norm(g).powf(p) + v.abs().powf(p));
    Ok(u.grid.cell_volume() * neumaier_sum(terms))
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn index_header(grid: &TorusGrid) -> Vec<String> {
    (0..grid.dim).map(|k| format!("index_{k}")).collect()
}

/// One row per node: `index_0[,index_1],value`, 17 significant digits.
pub fn write_scalar_csv<W: Write>(field: &ScalarField, writer: W) -> Result<()> {
    let grid = field.grid;
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = index_header(&grid);
    header.push("value".into());
    wtr.write_record(&header)?;
    for (node, v) in field.values.iter().enumerate() {
        let idx = grid.multi_index(node);
        let mut row: Vec<String> = (0..grid.dim).map(|k| idx[k].to_string()).collect();
        row.push(fmt17(*v));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row per node: `index_0[,index_1],v0[,v1]`, 17 significant digits.
pub fn write_vector_csv<W: Write>(field: &VectorField, writer: W) -> Result<()> {
    let grid = field.grid;
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = index_header(&grid);
    header.extend((0..grid.dim).map(|k| format!("v{k}")));
    wtr.write_record(&header)?;
    for (node, v) in field.values.iter().enumerate() {
        let idx = grid.multi_index(node);
        let mut row: Vec<String> = (0..grid.dim).map(|k| idx[k].to_string()).collect();
        row.extend((0..grid.dim).map(|k| fmt17(v[k])));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a scalar dump written by [`write_scalar_csv`]. Rows may come in any
/// order, but every node must appear exactly once.
pub fn read_scalar_csv<R: Read>(grid: TorusGrid, reader: R) -> Result<ScalarField> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut values = vec![f64::NAN; grid.node_count()];
    let mut seen = vec![false; grid.node_count()];
    for record in rdr.records() {
        let record = record?;
        if record.len() != grid.dim + 1 {
            return Err(invalid(format!(
                "expected {} columns per row, found {}",
                grid.dim + 1,
                record.len()
            )));
        }
        let mut idx = [0usize; MAX_DIM];
        for k in 0..grid.dim {
            let i: usize = record[k]
                .trim()
                .parse()
                .map_err(|e| invalid(format!("bad index {:?}: {e}", &record[k])))?;
            if i >= grid.n {
                return Err(invalid(format!("index {i} out of range for n = {}", grid.n)));
            }
            idx[k] = i;
        }
        let v: f64 = record[grid.dim]
            .trim()
            .parse()
            .map_err(|e| invalid(format!("bad value {:?}: {e}", &record[grid.dim])))?;
        let node = grid.node_of(idx);
        if seen[node] {
            return Err(invalid(format!("node {idx:?} appears twice")));
        }
        seen[node] = true;
        values[node] = v;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(invalid(format!("node {:?} missing from csv", grid.multi_index(missing))));
    }
    ScalarField::from_values(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    #[test]
    fn spacing_times_count_is_one() {
        for n in [2, 3, 7, 64, 100, 128, 1000] {
            let g = grid1(n);
            assert!((g.spacing() * n as f64 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusGrid::new(3, 8).is_err());
        assert!(TorusGrid::new(0, 8).is_err());
        assert!(TorusGrid::new(1, 1).is_err());
    }

    #[test]
    fn row_major_wraps() {
        let g = TorusGrid::new(2, 4).unwrap();
        assert_eq!(g.stride(0), 4);
        assert_eq!(g.stride(1), 1);
        assert_eq!(g.multi_index(6), [1, 2]);
        assert_eq!(g.forward(3, 1), 0);
        assert_eq!(g.backward(0, 0), 12);
        assert_eq!(g.forward(12, 0), 0);
        assert_eq!(g.node_of([5, 6]), g.node_of([1, 2]));
    }

    #[test]
    fn gradient_examples() {
        let g = grid1(4);
        let zero = gradient(&ScalarField::zeros(g));
        assert!(zero.values().iter().all(|v| v[0] == 0.0));

        let bump = ScalarField::from_values(g, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let du = gradient(&bump).component(0);
        assert_eq!(du.values(), &[4.0, -4.0, 0.0, 0.0]);

        for c in [-3.5, 0.0, 1e6] {
            let du = gradient(&ScalarField::constant(g, c));
            assert!(du.values().iter().all(|v| v[0] == 0.0));
        }
    }

    #[test]
    fn divergence_examples() {
        let g = grid1(4);
        assert!(divergence(&VectorField::zeros(g)).values().iter().all(|&v| v == 0.0));
        let w = VectorField::from_values(g, vec![[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(divergence(&w).values(), &[4.0, -4.0, 0.0, 0.0]);
    }

    #[test]
    fn integral_examples() {
        for (dim, n) in [(1, 4), (1, 17), (2, 8)] {
            let g = TorusGrid::new(dim, n).unwrap();
            assert!((integral(&ScalarField::constant(g, 1.0)) - 1.0).abs() < 1e-15);
            assert!((integral(&ScalarField::constant(g, 2.0)) - 2.0).abs() < 1e-15);
        }
        let f = ScalarField::from_values(grid1(4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(integral(&f), 2.5);
    }

    #[test]
    fn sobolev_examples() {
        let g = grid1(4);
        assert_eq!(sobolev_norm_pow(&ScalarField::constant(g, 2.0), 4.0).unwrap(), 16.0);
        assert_eq!(sobolev_norm_pow(&ScalarField::zeros(g), 3.0).unwrap(), 0.0);
        let bump = ScalarField::from_values(g, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(sobolev_norm_pow(&bump, 2.0).unwrap(), 8.25);
        assert!(sobolev_norm_pow(&bump, 1.0).is_err());
    }

    #[test]
    fn gradient_integrates_to_zero_2d() {
        let g = TorusGrid::new(2, 6).unwrap();
        let u = ScalarField::from_fn(g, |x| (x[0] * 7.0).sin() + x[1] * x[1]);
        let du = gradient(&u);
        for k in 0..2 {
            assert!(integral(&du.component(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_2d() {
        let g = TorusGrid::new(2, 3).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0] - 2.0 * x[1] + 1.0 / 3.0);
        let mut buf = Vec::new();
        write_scalar_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index_0,index_1,value\n"));
        let back = read_scalar_csv(g, buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn csv_rejects_missing_nodes() {
        let g = grid1(3);
        let text = "index_0,value\n0,1.0\n2,1.0\n";
        assert!(read_scalar_csv(g, text.as_bytes()).is_err());
    }

    #[test]
    fn vector_csv_layout() {
        let g = grid1(2);
        let w = VectorField::from_values(g, vec![[0.5, 0.0], [-1.0, 0.0]]).unwrap();
        let mut buf = Vec::new();
        write_vector_csv(&w, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "index_0,v0");
        assert_eq!(lines[1], "0,5.0000000000000000e-1");
    }
}
