//! Uniform grid over `[0,1]^d` with members bucketed per cell.
//!
//! Cells are half-open along each axis; a coordinate of exactly 1 falls into
//! the last cell. Cell ids are row-major with the first axis outermost.
//! Within a cell, members are kept in ascending subject-index order.

/// Cell coordinate along one axis: `floor(v / epsilon)` clamped to `m - 1`.
#[inline]
pub(crate) fn axis_cell(v: f64, epsilon: f64, m: usize) -> usize {
    let c = (v / epsilon).floor();
    if c <= 0.0 {
        0
    } else {
        (c as usize).min(m - 1)
    }
}

#[derive(Debug, Clone)]
pub struct GridIndex {
    d: usize,
    m: usize,
    epsilon: f64,
    /// CSR layout: members of cell `c` are `members[starts[c]..starts[c + 1]]`.
    starts: Vec<usize>,
    members: Vec<usize>,
}

impl GridIndex {
    /// Buckets the points `coords(i)` for every `i` in `indices` (ascending)
    /// into a grid with `m` cells per axis.
    pub fn build<'a, F>(d: usize, m: usize, indices: &[usize], coords: F) -> Self
    where
        F: Fn(usize) -> &'a [f64],
    {
        assert!(d >= 1 && m >= 1);
        let epsilon = 1.0 / m as f64;
        let n_cells = m.checked_pow(d as u32).expect("grid too large");
        let cell_ids: Vec<usize> = indices
            .iter()
            .map(|&i| cell_id_of(coords(i), epsilon, m))
            .collect();
        let mut starts = vec![0usize; n_cells + 1];
        for &c in &cell_ids {
            starts[c + 1] += 1;
        }
        for c in 0..n_cells {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let mut members = vec![0usize; indices.len()];
        // Stable counting sort keeps the input (ascending) order within a cell.
        for (&i, &c) in indices.iter().zip(&cell_ids) {
            members[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            d,
            m,
            epsilon,
            starts,
            members,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn cells_per_axis(&self) -> usize {
        self.m
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn num_cells(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn cell_members(&self, id: usize) -> &[usize] {
        &self.members[self.cell_range(id)]
    }

    /// Positions of cell `id`'s members in the cell-ordered member list.
    pub fn cell_range(&self, id: usize) -> std::ops::Range<usize> {
        self.starts[id]..self.starts[id + 1]
    }

    pub fn cell_of(&self, x: &[f64]) -> usize {
        cell_id_of(x, self.epsilon, self.m)
    }

    pub fn axis_cell(&self, v: f64) -> usize {
        axis_cell(v, self.epsilon, self.m)
    }

    pub fn id_from_coords(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.m + c)
    }

    /// Non-empty cells in id order.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, &[usize])> + '_ {
        (0..self.num_cells())
            .map(|c| (c, self.cell_members(c)))
            .filter(|(_, m)| !m.is_empty())
    }

    /// Calls `f` with every cell whose per-axis coordinate lies in the
    /// inclusive range `ranges[j]`.
    pub fn for_each_cell_in(&self, ranges: &[(usize, usize)], mut f: impl FnMut(usize)) {
        self.for_each_cell_coords_in(ranges, |id, _| f(id));
    }

    /// As [`Self::for_each_cell_in`], also passing the cell's per-axis coordinates.
    pub fn for_each_cell_coords_in(
        &self,
        ranges: &[(usize, usize)],
        mut f: impl FnMut(usize, &[usize]),
    ) {
        debug_assert_eq!(ranges.len(), self.d);
        let mut cur: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            f(self.id_from_coords(&cur), &cur);
            let mut axis = self.d;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if cur[axis] < ranges[axis].1 {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = ranges[axis].0;
            }
        }
    }

    /// Per-axis cell ranges covering the closed box `[x - half, x + half]`.
    /// The ranges are padded against rounding, so they may include one
    /// extra cell per side when a face sits on a cell boundary.
    pub fn cover(&self, x: &[f64], half: f64) -> Vec<(usize, usize)> {
        const PAD: f64 = 1e-9;
        x.iter()
            .map(|&v| {
                let lo = ((v - half) / self.epsilon - PAD).floor();
                let hi = ((v + half) / self.epsilon + PAD).floor();
                let clamp = |c: f64| if c <= 0.0 { 0 } else { (c as usize).min(self.m - 1) };
                (clamp(lo), clamp(hi))
            })
            .collect()
    }
}

pub(crate) fn cell_id_of(x: &[f64], epsilon: f64, m: usize) -> usize {
    x.iter()
        .fold(0, |acc, &v| acc * m + axis_cell(v, epsilon, m))
}
