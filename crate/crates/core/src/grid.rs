//! Structured grids over boxes and functions sampled on them.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Nodes `lo + i·h` on a box, endpoints included; row-major with the last
/// axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != shape.len() || lo.is_empty() {
            return invalid("grid box and shape dimensions differ");
        }
        if shape.iter().any(|&n| n < 2) {
            return invalid("grid needs at least two nodes per axis");
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return invalid("grid box is empty");
        }
        Ok(Grid { lo, hi, shape })
    }

    /// Square grid with `n` nodes per axis on a box.
    pub fn square(lo: &[f64], hi: &[f64], n: usize) -> Result<Self> {
        Self::new(lo.to_vec(), hi.to_vec(), vec![n; lo.len()])
    }

    /// Square grid with equal spacing covering the given box, centered on it.
    pub fn covering(lo: &[f64], hi: &[f64], n: usize) -> Result<Self> {
        let half = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).fold(0.0, f64::max);
        let c: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        Self::square(&c.iter().map(|v| v - half).collect::<Vec<_>>(), &c.iter().map(|v| v + half).collect::<Vec<_>>(), n)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.shape[axis] - 1) as f64
    }

    /// Spacing of the first axis (grids here are built with equal spacing).
    pub fn h(&self) -> f64 {
        self.spacing(0)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            out[k] = idx % self.shape[k];
            idx /= self.shape[k];
        }
        out
    }

    pub fn flat_index(&self, m: &[usize]) -> usize {
        m.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Flat index of the node at `m + offset`, if inside the grid.
    pub fn offset(&self, idx: usize, off: &[isize]) -> Option<usize> {
        let m = self.multi_index(idx);
        let mut out = Vec::with_capacity(m.len());
        for ((&i, &o), &n) in m.iter().zip(off).zip(&self.shape) {
            let j = i as isize + o;
            if j < 0 || j >= n as isize {
                return None;
            }
            out.push(j as usize);
        }
        Some(self.flat_index(&out))
    }

    /// 2-D fast path of [`Grid::offset`].
    #[inline]
    pub fn offset2(&self, idx: usize, di: isize, dj: isize) -> Option<usize> {
        let n1 = self.shape[1];
        let (i, j) = ((idx / n1) as isize + di, (idx % n1) as isize + dj);
        (i >= 0 && j >= 0 && i < self.shape[0] as isize && j < n1 as isize).then(|| i as usize * n1 + j as usize)
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx).iter().enumerate().map(|(k, &i)| self.lo[k] + i as f64 * self.spacing(k)).collect()
    }

    #[inline]
    pub fn point2(&self, idx: usize) -> [f64; 2] {
        let n1 = self.shape[1];
        [self.lo[0] + (idx / n1) as f64 * self.spacing(0), self.lo[1] + (idx % n1) as f64 * self.spacing(1)]
    }

    /// Nearest node to a point (clamped to the grid).
    pub fn nearest(&self, y: &[f64]) -> usize {
        let m: Vec<usize> = (0..self.dim())
            .map(|k| (((y[k] - self.lo[k]) / self.spacing(k)).round().max(0.0) as usize).min(self.shape[k] - 1))
            .collect();
        self.flat_index(&m)
    }
}

/// Real function sampled on a grid, with a mask of meaningful nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFn {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub convex: bool,
}

impl GridFn {
    pub fn new(grid: Grid, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() || mask.len() != grid.len() {
            return invalid("value/mask length does not match grid");
        }
        if values.iter().zip(&mask).any(|(v, &m)| m && !v.is_finite()) {
            return invalid("non-finite value at a masked node");
        }
        Ok(GridFn { grid, values, mask, convex: false })
    }

    pub fn from_fn(grid: Grid, mask: impl Fn(&[f64]) -> bool, f: impl Fn(&[f64]) -> f64) -> Self {
        let n = grid.len();
        let mut values = vec![0.0; n];
        let mut m = vec![false; n];
        for i in 0..n {
            let y = grid.coords(i);
            if mask(&y) {
                m[i] = true;
                values[i] = f(&y);
            }
        }
        GridFn { grid, values, mask: m, convex: false }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Largest violation of midpoint convexity along axes and diagonals
    /// (2-D) or the axis (1-D), relative to 1 + |value|.
    pub fn midpoint_convexity_defect(&self) -> f64 {
        let g = &self.grid;
        let dirs: Vec<Vec<isize>> = match g.dim() {
            1 => vec![vec![1]],
            2 => vec![vec![1, 0], vec![0, 1], vec![1, 1], vec![1, -1]],
            _ => (0..g.dim()).map(|k| (0..g.dim()).map(|j| (j == k) as isize).collect()).collect(),
        };
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            if !self.mask[i] {
                continue;
            }
            for d in &dirs {
                let neg: Vec<isize> = d.iter().map(|v| -v).collect();
                if let (Some(a), Some(b)) = (g.offset(i, d), g.offset(i, &neg)) {
                    if self.mask[a] && self.mask[b] {
                        let defect = 2.0 * self.values[i] - self.values[a] - self.values[b];
                        worst = worst.max(defect / (1.0 + self.values[i].abs()));
                    }
                }
            }
        }
        worst
    }

    /// Set the convexity flag after verifying midpoint convexity (1e−9).
    pub fn mark_convex(mut self) -> Result<Self> {
        let defect = self.midpoint_convexity_defect();
        if defect > 1e-9 {
            return Err(Error::Invalid(format!("function is not convex (midpoint defect {defect:.3e})")));
        }
        self.convex = true;
        Ok(self)
    }

    /// True when all 8 neighbours (2-D) or both neighbours (1-D) are masked.
    pub fn is_interior(&self, idx: usize) -> bool {
        if !self.mask[idx] {
            return false;
        }
        match self.grid.dim() {
            1 => [-1isize, 1].iter().all(|&o| self.grid.offset(idx, &[o]).map_or(false, |j| self.mask[j])),
            2 => {
                for di in -1..=1 {
                    for dj in -1..=1 {
                        match self.grid.offset2(idx, di, dj) {
                            Some(j) if self.mask[j] => {}
                            _ => return false,
                        }
                    }
                }
                true
            }
            _ => false,
        }
    }

    /// Centered second differences (xx, yy, xy) at an interior 2-D node.
    pub fn hessian2(&self, idx: usize) -> Option<[f64; 3]> {
        if self.grid.dim() != 2 || !self.is_interior(idx) {
            return None;
        }
        let g = &self.grid;
        let v = |di, dj| self.values[g.offset2(idx, di, dj).unwrap()];
        let (hx, hy) = (g.spacing(0), g.spacing(1));
        let c = self.values[idx];
        Some([
            (v(1, 0) - 2.0 * c + v(-1, 0)) / (hx * hx),
            (v(0, 1) - 2.0 * c + v(0, -1)) / (hy * hy),
            (v(1, 1) - v(1, -1) - v(-1, 1) + v(-1, -1)) / (4.0 * hx * hy),
        ])
    }

    /// Centered first differences at an interior 2-D node.
    pub fn gradient2(&self, idx: usize) -> Option<[f64; 2]> {
        if self.grid.dim() != 2 || !self.is_interior(idx) {
            return None;
        }
        let g = &self.grid;
        let v = |di, dj| self.values[g.offset2(idx, di, dj).unwrap()];
        Some([(v(1, 0) - v(-1, 0)) / (2.0 * g.spacing(0)), (v(0, 1) - v(0, -1)) / (2.0 * g.spacing(1))])
    }

    /// Bilinear interpolation in 2-D; all four cell corners must be masked.
    pub fn interpolate2(&self, y: [f64; 2]) -> Result<f64> {
        let g = &self.grid;
        let (hx, hy) = (g.spacing(0), g.spacing(1));
        let fx = (y[0] - g.lo[0]) / hx;
        let fy = (y[1] - g.lo[1]) / hy;
        if fx < 0.0 || fy < 0.0 || fx > (g.shape[0] - 1) as f64 || fy > (g.shape[1] - 1) as f64 {
            return Err(Error::OutOfDomain(format!("{y:?} escapes the grid")));
        }
        let i = (fx.floor() as usize).min(g.shape[0] - 2);
        let j = (fy.floor() as usize).min(g.shape[1] - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let n1 = g.shape[1];
        let idx = [i * n1 + j, (i + 1) * n1 + j, i * n1 + j + 1, (i + 1) * n1 + j + 1];
        if idx.iter().any(|&k| !self.mask[k]) {
            return Err(Error::OutOfDomain(format!("{y:?} lies in a cell with unmasked corners")));
        }
        let v = |k: usize| self.values[idx[k]];
        Ok((1.0 - tx) * (1.0 - ty) * v(0) + tx * (1.0 - ty) * v(1) + (1.0 - tx) * ty * v(2) + tx * ty * v(3))
    }

    /// Error bound h²/8·(|f_xx| + |f_yy|) + h²/4·|f_xy| for bilinear
    /// interpolation in the cell containing y, from second differences at
    /// the cell corners.
    pub fn interpolation_bound2(&self, y: [f64; 2]) -> f64 {
        let g = &self.grid;
        let i = ((y[0] - g.lo[0]) / g.spacing(0)).floor().max(0.0) as usize;
        let j = ((y[1] - g.lo[1]) / g.spacing(1)).floor().max(0.0) as usize;
        let n1 = g.shape[1];
        let mut worst: f64 = 0.0;
        for (a, b) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
            if a >= g.shape[0] || b >= n1 {
                continue;
            }
            match self.hessian2(a * n1 + b) {
                Some(h) => {
                    let hx = g.spacing(0);
                    worst = worst.max(hx * hx * ((h[0].abs() + h[1].abs()) / 8.0 + h[2].abs() / 4.0));
                }
                None => return f64::INFINITY,
            }
        }
        worst
    }

    /// Write the CSV grid format: a JSON header line (box, shape, convexity
    /// and caller metadata), a column header, then one node per line.
    pub fn write_csv<W: Write>(&self, mut w: W, meta: &serde_json::Value) -> Result<()> {
        let header = merge_header(meta, serde_json::json!({
            "format": "conevex-grid",
            "lo": self.grid.lo,
            "hi": self.grid.hi,
            "shape": self.grid.shape,
            "convex": self.convex,
        }));
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        let axes: Vec<String> = (0..self.grid.dim()).map(|k| format!("y{k}")).collect();
        writeln!(w, "index,{},value,mask", axes.join(","))?;
        for i in 0..self.grid.len() {
            let y = self.grid.coords(i);
            let ys: Vec<String> = y.iter().map(|v| fmt17(*v)).collect();
            writeln!(w, "{},{},{},{}", i, ys.join(","), fmt17(self.values[i]), self.mask[i] as u8)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, serde_json::Value)> {
        let mut lines = r.lines();
        let header: serde_json::Value = serde_json::from_str(&lines.next().ok_or_else(|| Error::Invalid("empty grid file".into()))??)?;
        let get = |k: &str| header.get(k).cloned().ok_or_else(|| Error::Invalid(format!("grid header lacks '{k}'")));
        let lo: Vec<f64> = serde_json::from_value(get("lo")?)?;
        let hi: Vec<f64> = serde_json::from_value(get("hi")?)?;
        let shape: Vec<usize> = serde_json::from_value(get("shape")?)?;
        let convex: bool = header.get("convex").and_then(|v| v.as_bool()).unwrap_or(false);
        let grid = Grid::new(lo, hi, shape)?;
        let d = grid.dim();
        lines.next();
        let mut values = vec![0.0; grid.len()];
        let mut mask = vec![false; grid.len()];
        let mut seen = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != d + 3 {
                return invalid(format!("malformed grid row: {line}"));
            }
            let i: usize = f[0].trim().parse().map_err(|_| Error::Invalid(format!("bad index in row: {line}")))?;
            if i >= grid.len() {
                return invalid(format!("node index {i} out of range"));
            }
            values[i] = f[d + 1].trim().parse().map_err(|_| Error::Invalid(format!("bad value in row: {line}")))?;
            mask[i] = f[d + 2].trim() == "1";
            seen += 1;
        }
        if seen != grid.len() {
            return invalid(format!("grid file has {seen} rows, expected {}", grid.len()));
        }
        let mut g = GridFn::new(grid, values, mask)?;
        if convex {
            g = g.mark_convex()?;
        }
        Ok((g, header))
    }
}

/// Caller metadata (an object) with the format fields layered on top.
pub fn merge_header(meta: &serde_json::Value, fields: serde_json::Value) -> serde_json::Value {
    let mut out = match meta {
        serde_json::Value::Object(m) => m.clone(),
        serde_json::Value::Null => serde_json::Map::new(),
        other => {
            let mut m = serde_json::Map::new();
            m.insert("meta".into(), other.clone());
            m
        }
    };
    if let serde_json::Value::Object(f) = fields {
        out.extend(f);
    }
    serde_json::Value::Object(out)
}

/// Float formatting with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    format!("{v:.16e}")
}
