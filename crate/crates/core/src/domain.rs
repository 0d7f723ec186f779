//! Axis-aligned boxes and space-time probe windows.

use crate::error::{CoreError, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_n, hi_n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> BoxDomain<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(CoreError::domain("box needs matching nonempty lo/hi"));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(*l < *h) {
                return Err(CoreError::domain(format!(
                    "box axis degenerate: lo {l} not below hi {h}"
                )));
            }
        }
        Ok(BoxDomain { lo, hi })
    }

    pub fn interval(lo: T, hi: T) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn lo_at(&self, axis: usize) -> T {
        self.lo[axis]
    }

    pub fn hi_at(&self, axis: usize) -> T {
        self.hi[axis]
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(xi, (l, h))| *l <= *xi && *xi <= *h)
    }

    pub fn center(&self) -> Vec<T> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (*l + *h) * T::half())
            .collect()
    }

    pub fn corners(&self) -> Vec<Vec<T>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
                    .collect()
            })
            .collect()
    }

    /// Shrink by `margin` on every side. Errors if nothing is left.
    pub fn shrunk(&self, margin: T) -> Result<Self> {
        let lo: Vec<T> = self.lo.iter().map(|l| *l + margin).collect();
        let hi: Vec<T> = self.hi.iter().map(|h| *h - margin).collect();
        Self::new(lo, hi).map_err(|_| {
            CoreError::domain(format!(
                "margin {margin} swallows the whole box {:?}..{:?}",
                self.lo_f64(),
                self.hi_f64()
            ))
        })
    }

    /// True if `inner` sits inside `self` with `margin` to spare on each side.
    pub fn contains_with_margin(&self, inner: &BoxDomain<T>, margin: T) -> bool {
        inner.dim() == self.dim()
            && inner
                .lo
                .iter()
                .zip(&self.lo)
                .all(|(il, ol)| *il >= *ol + margin)
            && inner
                .hi
                .iter()
                .zip(&self.hi)
                .all(|(ih, oh)| *ih <= *oh - margin)
    }

    pub fn lo_f64(&self) -> Vec<f64> {
        self.lo.iter().map(|x| x.as_f64()).collect()
    }

    pub fn hi_f64(&self) -> Vec<f64> {
        self.hi.iter().map(|x| x.as_f64()).collect()
    }

    /// Uniform lattice with `per_axis` points per axis (endpoints included),
    /// row-major. Intended for the checkers; `per_axis >= 2`.
    pub fn lattice(&self, per_axis: usize) -> Vec<Vec<T>> {
        let n = self.dim();
        let total = per_axis.pow(n as u32);
        let step: Vec<T> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (*h - *l) / T::from_usize_(per_axis - 1))
            .collect();
        (0..total)
            .map(|mut flat| {
                let mut x = Vec::with_capacity(n);
                for i in 0..n {
                    let k = flat % per_axis;
                    flat /= per_axis;
                    x.push(self.lo[i] + T::from_usize_(k) * step[i]);
                }
                x
            })
            .collect()
    }
}

/// Space box plus a time cap: the region over which sweep suprema, semilimits
/// and comparison diagnostics are taken.
#[derive(Clone, Debug)]
pub struct ProbeWindow<T> {
    pub space: BoxDomain<T>,
    pub t_max: T,
}

impl<T: Real> ProbeWindow<T> {
    pub fn new(space: BoxDomain<T>, t_max: T) -> Result<Self> {
        if !(t_max > T::zero()) {
            return Err(CoreError::domain("window t_max must be positive"));
        }
        Ok(ProbeWindow { space, t_max })
    }

    pub fn summary(&self) -> WindowSummary {
        WindowSummary::from(self)
    }
}

/// Serializable mirror of a window, for reports and configs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WindowSummary {
    pub space_lo: Vec<f64>,
    pub space_hi: Vec<f64>,
    pub t_max: f64,
}

impl<T: Real> From<&ProbeWindow<T>> for WindowSummary {
    fn from(w: &ProbeWindow<T>) -> Self {
        WindowSummary {
            space_lo: w.space.lo_f64(),
            space_hi: w.space.hi_f64(),
            t_max: w.t_max.as_f64(),
        }
    }
}
