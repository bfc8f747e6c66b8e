//! Lorenzo prediction on a (possibly degenerate) 3-D view of a field.
//!
//! Every predictor order runs the same 7-term 3-D stencil; lower orders are
//! obtained by reshaping so that the unused axes have extent 1. Out-of-grid
//! neighbours read as 0.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    Lorenzo1d,
    Lorenzo2d,
    Lorenzo3d,
}

impl Predictor {
    pub fn for_dims(dims: &[usize]) -> Self {
        match dims.len() {
            0 | 1 => Predictor::Lorenzo1d,
            2 => Predictor::Lorenzo2d,
            _ => Predictor::Lorenzo3d,
        }
    }

    pub fn order(self) -> usize {
        match self {
            Predictor::Lorenzo1d => 1,
            Predictor::Lorenzo2d => 2,
            Predictor::Lorenzo3d => 3,
        }
    }

    pub fn tag(self) -> u8 {
        self.order() as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Predictor::Lorenzo1d),
            2 => Some(Predictor::Lorenzo2d),
            3 => Some(Predictor::Lorenzo3d),
            _ => None,
        }
    }
}

/// `[nz, ny, nx]` view of `dims` for a predictor of the given order.
pub fn view_shape(dims: &[usize], order: usize) -> [usize; 3] {
    let n: usize = dims.iter().product();
    let last = |k: usize| -> usize { dims[dims.len().saturating_sub(k)..].iter().product() };
    match order {
        1 => [1, 1, n],
        2 => {
            let nx = *dims.last().unwrap_or(&1);
            [1, n / nx, nx]
        }
        _ => {
            if dims.len() < 3 {
                let nx = *dims.last().unwrap_or(&1);
                let ny = if dims.len() == 2 { dims[0] } else { 1 };
                [1, ny, nx]
            } else {
                let nyx = last(2);
                [n / nyx, dims[dims.len() - 2], dims[dims.len() - 1]]
            }
        }
    }
}

/// Prediction at `(z, y, x)`. `at` is only called for in-grid neighbours;
/// the rest contribute 0.
#[inline]
pub fn predict_at(z: usize, y: usize, x: usize, at: impl Fn(usize, usize, usize) -> f64) -> f64 {
    let (hz, hy, hx) = (z > 0, y > 0, x > 0);
    let g = |cz: bool, cy: bool, cx: bool| -> f64 {
        if (cz && !hz) || (cy && !hy) || (cx && !hx) {
            0.0
        } else {
            at(z - cz as usize, y - cy as usize, x - cx as usize)
        }
    };
    g(false, false, true) + g(false, true, false) + g(true, false, false)
        - g(false, true, true)
        - g(true, false, true)
        - g(true, true, false)
        + g(true, true, true)
}

/// Row-major buffer with one layer of zero padding in front of every axis,
/// so the stencil needs no bounds checks.
pub(crate) struct Padded<T> {
    pub buf: Vec<T>,
    sy: usize,
    sz: usize,
}

impl<T: Copy + Default> Padded<T> {
    pub fn new(shape: [usize; 3]) -> Self {
        let [nz, ny, nx] = shape;
        let sy = nx + 1;
        let sz = (ny + 1) * sy;
        Padded {
            buf: vec![T::default(); (nz + 1) * sz],
            sy,
            sz,
        }
    }

    /// Padded offset of grid point `(z, y, x)`.
    #[inline]
    pub fn offset(&self, z: usize, y: usize, x: usize) -> usize {
        (z + 1) * self.sz + (y + 1) * self.sy + x + 1
    }

    #[inline]
    pub fn predict(&self, o: usize, to_f64: impl Fn(T) -> f64) -> f64 {
        let b = &self.buf;
        let (sy, sz) = (self.sy, self.sz);
        to_f64(b[o - 1]) + to_f64(b[o - sy]) + to_f64(b[o - sz])
            - to_f64(b[o - sy - 1])
            - to_f64(b[o - sz - 1])
            - to_f64(b[o - sz - sy])
            + to_f64(b[o - sz - sy - 1])
    }
}
