/// Snap coordinates this close to an integer onto it, so quarter turns and
/// identity warps land exactly on cell centres.
const SNAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Tap {
    pub index: usize,
    pub weight: f64,
}

/// Constant bilinear sampling pattern from an `in_h × in_w` plane to an
/// `out_h × out_w` plane. Each output cell blends at most four input cells;
/// taps falling outside the input contribute zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMap {
    pub(crate) in_h: usize,
    pub(crate) in_w: usize,
    pub(crate) out_h: usize,
    pub(crate) out_w: usize,
    pub(crate) taps: Vec<Vec<Tap>>,
    /// No tap with nonzero weight fell outside the input, so the weights sum
    /// to one.
    pub(crate) interior: Vec<bool>,
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

impl SampleMap {
    /// Build from a per-output-cell coordinate function returning continuous
    /// `(row, col)` positions in input index space, or `None` for a zero cell.
    pub fn from_coords(
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
        mut coord: impl FnMut(usize, usize) -> Option<(f64, f64)>,
    ) -> Self {
        let mut taps = Vec::with_capacity(out_h * out_w);
        let mut interior = Vec::with_capacity(out_h * out_w);
        for r in 0..out_h {
            for c in 0..out_w {
                let mut cell = Vec::new();
                let mut inside = false;
                if let Some((y, x)) = coord(r, c) {
                    if y.is_finite() && x.is_finite() {
                        let (y, x) = (snap(y), snap(x));
                        let (y0, x0) = (y.floor(), x.floor());
                        let (fy, fx) = (y - y0, x - x0);
                        inside = true;
                        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                                let w = wy * wx;
                                let (yy, xx) = (y0 + dy, x0 + dx);
                                if w == 0.0 {
                                    continue;
                                }
                                if yy < 0.0 || xx < 0.0 || yy >= in_h as f64 || xx >= in_w as f64 {
                                    inside = false;
                                    continue;
                                }
                                cell.push(Tap {
                                    index: yy as usize * in_w + xx as usize,
                                    weight: w,
                                });
                            }
                        }
                    }
                }
                interior.push(inside && !cell.is_empty());
                taps.push(cell);
            }
        }
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            taps,
            interior,
        }
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.in_h, self.in_w)
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    /// Sum of tap weights at an output cell (1 for fully interior samples).
    pub fn weight_sum(&self, r: usize, c: usize) -> f64 {
        self.taps[r * self.out_w + c].iter().map(|t| t.weight).sum()
    }
}
