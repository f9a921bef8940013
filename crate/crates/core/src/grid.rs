//! Piecewise-smooth grid functions with one-sided values at breakpoints.
//!
//! A `GridFunction` stores left-limit values at every node and an optional
//! right-limit value at nodes where the represented function jumps.  Between
//! nodes it interpolates with a cubic Lagrange stencil that never crosses a
//! breakpoint, so the interpolant sees only smooth data.  Outside the node
//! range it clamps to the nearest retained branch.

use thiserror::Error;

/// One-sided limit selector at a point of discontinuity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least one node")]
    Empty,
    #[error("node times must be strictly increasing (violated at index {index})")]
    NotIncreasing { index: usize },
    #[error("value arrays must match the node count")]
    LengthMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    nodes: Vec<f64>,
    left: Vec<f64>,
    right: Vec<Option<f64>>,
}

impl GridFunction {
    pub fn new(nodes: Vec<f64>, left: Vec<f64>, right: Vec<Option<f64>>) -> Result<Self, GridError> {
        if nodes.is_empty() {
            return Err(GridError::Empty);
        }
        if nodes.len() != left.len() || nodes.len() != right.len() {
            return Err(GridError::LengthMismatch);
        }
        for i in 1..nodes.len() {
            if !(nodes[i] > nodes[i - 1]) {
                return Err(GridError::NotIncreasing { index: i });
            }
        }
        Ok(Self { nodes, left, right })
    }

    /// Same node layout and breakpoint pattern, new values.
    pub fn with_values(&self, left: Vec<f64>, right: Vec<Option<f64>>) -> Result<Self, GridError> {
        if left.len() != self.nodes.len() || right.len() != self.nodes.len() {
            return Err(GridError::LengthMismatch);
        }
        Ok(Self { nodes: self.nodes.clone(), left, right })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn left_values(&self) -> &[f64] {
        &self.left
    }

    pub fn right_value(&self, i: usize) -> Option<f64> {
        self.right[i]
    }

    pub fn is_breakpoint(&self, i: usize) -> bool {
        self.right[i].is_some()
    }

    /// Supremum of |self - other| over stored node values, both sides.
    ///
    /// Both functions must share the node layout.
    pub fn sup_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.nodes.len(), other.nodes.len(), "grid layouts differ");
        let mut sup = 0.0f64;
        for i in 0..self.nodes.len() {
            sup = sup.max((self.left[i] - other.left[i]).abs());
            if let (Some(a), Some(b)) = (self.right[i], other.right[i]) {
                sup = sup.max((a - b).abs());
            }
        }
        sup
    }

    /// Range of all stored values (left and right limits).
    pub fn value_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.nodes.len() {
            lo = lo.min(self.left[i]);
            hi = hi.max(self.left[i]);
            if let Some(r) = self.right[i] {
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        (lo, hi)
    }

    fn branch_after(&self, i: usize) -> f64 {
        self.right[i].unwrap_or(self.left[i])
    }

    /// Evaluate at `u`, taking the requested one-sided limit when `u` is a
    /// breakpoint node.  Clamps outside the node range.
    pub fn eval(&self, u: f64, side: Side) -> f64 {
        let n = self.nodes.len();
        if u <= self.nodes[0] {
            if u == self.nodes[0] && side == Side::Right {
                return self.branch_after(0);
            }
            return self.left[0];
        }
        if u >= self.nodes[n - 1] {
            if u == self.nodes[n - 1] {
                return match side {
                    Side::Left => self.left[n - 1],
                    Side::Right => self.branch_after(n - 1),
                };
            }
            return self.branch_after(n - 1);
        }
        // nodes[lo] <= u < nodes[lo + 1], with n >= 2 here.
        let lo = self.nodes.partition_point(|&t| t <= u) - 1;
        if self.nodes[lo] == u {
            return match side {
                Side::Left => self.left[lo],
                Side::Right => self.branch_after(lo),
            };
        }
        self.interpolate(lo, u)
    }

    fn interpolate(&self, cell: usize, u: f64) -> f64 {
        let n = self.nodes.len();
        // Continuity-cell edges: breakpoints (or the window ends) bracketing
        // the interpolation cell.  An edge node may serve as a stencil
        // endpoint with its inward-facing branch value.
        let mut lo_edge = cell;
        while lo_edge > 0 && self.right[lo_edge].is_none() {
            lo_edge -= 1;
        }
        let mut hi_edge = cell + 1;
        while hi_edge + 1 < n && self.right[hi_edge].is_none() {
            hi_edge += 1;
        }
        let span = hi_edge - lo_edge + 1;
        let k = span.min(4);
        let start = (cell as isize - 1)
            .clamp(lo_edge as isize, (hi_edge + 1 - k) as isize) as usize;

        let mut num = 0.0;
        let mut acc = 0.0;
        // Barycentric form of the Lagrange interpolant on up to 4 nodes.
        let mut weights = [0.0f64; 4];
        for (j, w) in weights.iter_mut().enumerate().take(k) {
            let mut p = 1.0;
            for m in 0..k {
                if m != j {
                    p *= self.nodes[start + j] - self.nodes[start + m];
                }
            }
            *w = 1.0 / p;
        }
        for j in 0..k {
            let idx = start + j;
            let v = if idx == lo_edge { self.branch_after(idx) } else { self.left[idx] };
            let d = u - self.nodes[idx];
            let w = weights[j] / d;
            num += w * v;
            acc += w;
        }
        num / acc
    }
}
