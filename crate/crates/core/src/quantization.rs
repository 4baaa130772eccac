//! Axis-aligned product quantizers and the modular index-shift mapping.
//!
//! Cells are products of right-closed intervals `(b_i, b_{i+1}]` with `±∞`
//! at the ends. Cell (and level) indices are flat over the per-dimension
//! interval indices, first dimension varying fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvn::HyperRect;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSpec {
    pub boundaries: Vec<Vec<f64>>,
    pub levels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectQuantizer {
    boundaries: Vec<Vec<f64>>,
    levels: Vec<Vec<f64>>,
    bases: Vec<usize>,
}

impl RectQuantizer {
    pub fn new(boundaries: Vec<Vec<f64>>, levels: Vec<Vec<f64>>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::Quantizer("at least one dimension is required".into()));
        }
        for (dim, cuts) in boundaries.iter().enumerate() {
            if cuts.iter().any(|c| !c.is_finite()) {
                return Err(Error::Quantizer(format!("dimension {dim}: cut points must be finite")));
            }
            if cuts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Quantizer(format!(
                    "dimension {dim}: cut points must be strictly increasing"
                )));
            }
        }
        let bases: Vec<usize> = boundaries.iter().map(|c| c.len() + 1).collect();
        let n: usize = bases.iter().product();
        if levels.len() != n {
            return Err(Error::Quantizer(format!(
                "expected {n} levels (one per cell), got {}",
                levels.len()
            )));
        }
        let q = Self {
            boundaries,
            levels,
            bases,
        };
        for (j, level) in q.levels.iter().enumerate() {
            if level.len() != q.dims() {
                return Err(Error::Quantizer(format!(
                    "level {j} has dimension {}, expected {}",
                    level.len(),
                    q.dims()
                )));
            }
            let cell = q.cell(j)?;
            let inside = level
                .iter()
                .zip(cell.lower.iter().zip(&cell.upper))
                .all(|(&x, (&lo, &hi))| x.is_finite() && lo < x && x < hi);
            if !inside {
                return Err(Error::Quantizer(format!("level {j} lies outside its cell")));
            }
        }
        Ok(q)
    }

    pub fn scalar(cuts: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        Self::new(vec![cuts], levels.into_iter().map(|l| vec![l]).collect())
    }

    pub fn from_spec(spec: &QuantizerSpec) -> Result<Self> {
        Self::new(spec.boundaries.clone(), spec.levels.clone())
    }

    pub fn to_spec(&self) -> QuantizerSpec {
        QuantizerSpec {
            boundaries: self.boundaries.clone(),
            levels: self.levels.clone(),
        }
    }

    pub fn dims(&self) -> usize {
        self.boundaries.len()
    }

    /// Number of cells `N`.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn boundaries(&self) -> &[Vec<f64>] {
        &self.boundaries
    }

    pub fn quantize(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dims() {
            return Err(Error::dim("point", self.dims(), point.len()));
        }
        if point.iter().any(|x| x.is_nan()) {
            return Err(Error::NanInput);
        }
        let per_dim: Vec<usize> = point
            .iter()
            .zip(&self.boundaries)
            .map(|(&x, cuts)| cuts.partition_point(|&c| c < x))
            .collect();
        stacked_index(&per_dim, &self.bases)
    }

    pub fn cell(&self, index: usize) -> Result<HyperRect> {
        let per_dim = unstack_index(index, &self.bases)?;
        let mut lower = Vec::with_capacity(self.dims());
        let mut upper = Vec::with_capacity(self.dims());
        for (&i, cuts) in per_dim.iter().zip(&self.boundaries) {
            lower.push(if i == 0 { f64::NEG_INFINITY } else { cuts[i - 1] });
            upper.push(if i == cuts.len() { f64::INFINITY } else { cuts[i] });
        }
        HyperRect::new(lower, upper)
    }

    /// Coding function: level -> index.
    pub fn alpha(&self, level: &[f64]) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l.as_slice() == level)
            .ok_or_else(|| Error::InvalidArgument(format!("{level:?} is not a quantization level")))
    }

    /// Decoding function: index -> level.
    pub fn beta(&self, index: usize) -> Result<&[f64]> {
        self.levels
            .get(index)
            .map(Vec::as_slice)
            .ok_or(Error::OutOfRange {
                index,
                size: self.len(),
            })
    }

    /// `β((α(ỹ) + v) mod N)`.
    pub fn apply_mapping(&self, level: &[f64], v: usize) -> Result<&[f64]> {
        let i = self.alpha(level)?;
        self.beta(shift_index(i, v, self.len()))
    }

    pub fn stacked_alpha(&self, stack: &[Vec<f64>]) -> Result<Vec<usize>> {
        stack.iter().map(|l| self.alpha(l)).collect()
    }

    /// `(ᾱ(z) - ᾱ(ỹ)) mod N`, stagewise.
    pub fn stacked_shift(&self, z_stack: &[Vec<f64>], y_stack: &[Vec<f64>]) -> Result<Vec<usize>> {
        if z_stack.len() != y_stack.len() {
            return Err(Error::dim("z_stack", y_stack.len(), z_stack.len()));
        }
        let n = self.len();
        let z = self.stacked_alpha(z_stack)?;
        let y = self.stacked_alpha(y_stack)?;
        Ok(z.iter().zip(&y).map(|(&zi, &yi)| (zi + n - yi) % n).collect())
    }
}

#[inline]
pub fn shift_index(index: usize, v: usize, n: usize) -> usize {
    (index + v) % n
}

/// Noise symbols `{0, …, N_V - 1}` paired with a sensor alphabet of size `N_Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseAlphabet {
    size: usize,
}

impl NoiseAlphabet {
    pub fn new(size: usize, sensor_levels: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("N_V must be >= 1".into()));
        }
        if size > sensor_levels {
            return Err(Error::InvalidArgument(format!(
                "N_V = {size} exceeds N_Y = {sensor_levels}; larger shifts alias modulo N_Y"
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// Flat index of a tuple over mixed-radix `bases`, first coordinate fastest.
pub fn stacked_index(symbols: &[usize], bases: &[usize]) -> Result<usize> {
    if symbols.len() != bases.len() {
        return Err(Error::dim("symbols", bases.len(), symbols.len()));
    }
    let mut flat = 0usize;
    let mut stride = 1usize;
    for (&s, &b) in symbols.iter().zip(bases) {
        if s >= b {
            return Err(Error::OutOfRange { index: s, size: b });
        }
        flat += s * stride;
        stride *= b;
    }
    Ok(flat)
}

/// Inverse of [`stacked_index`].
pub fn unstack_index(mut flat: usize, bases: &[usize]) -> Result<Vec<usize>> {
    let total: usize = bases.iter().product();
    if flat >= total {
        return Err(Error::OutOfRange {
            index: flat,
            size: total,
        });
    }
    Ok(bases
        .iter()
        .map(|&b| {
            let s = flat % b;
            flat /= b;
            s
        })
        .collect())
}
