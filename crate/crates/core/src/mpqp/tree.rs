use nalgebra::DVector;

use super::enumerate::to_halfspaces;
use super::CriticalRegion;
use crate::lp::{chebyshev_radius, maximize, Halfspaces, LpValue};
use crate::scalar::{lit, to_f64, Real};

pub const DEFAULT_MAX_DEPTH: usize = 32;

const SIDE_TOL: f64 = 1e-9;
const CLASSIFY_BOX: f64 = 1e6;
/// Planes scored per node, taken in order of how many candidates share them.
const PLANE_TRIALS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Go to `below` when `a·θ ≤ b` for hyperplane `plane`, else `above`.
    Split {
        plane: usize,
        below: usize,
        above: usize,
    },
    Leaf { regions: Vec<usize> },
}

/// Binary search tree over region-defining hyperplanes. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree<T: Real> {
    pub planes: Vec<(DVector<T>, T)>,
    pub nodes: Vec<TreeNode>,
}

struct GrowContext<'a> {
    planes: &'a [(Vec<f64>, f64)],
    owned: &'a [Vec<usize>],
    regions: &'a [Halfspaces],
    /// Interior point of each region, if one was found.
    centers: &'a [Option<Vec<f64>>],
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Below,
    Above,
    Both,
    Outside,
}

/// Unique facet hyperplanes across regions, with a canonical sign, and for
/// each region the indices of its facet planes.
fn collect_planes<T: Real>(regions: &[CriticalRegion<T>]) -> (Vec<(Vec<f64>, f64)>, Vec<Vec<usize>>) {
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut owned = Vec::with_capacity(regions.len());
    for r in regions {
        let mut mine = Vec::new();
        for i in 0..r.region.rows() {
            let mut a: Vec<f64> = r.region.lhs.row(i).iter().map(|&x| to_f64(x)).collect();
            let mut b = to_f64(r.region.rhs[i]);
            let lead = a.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
            if lead < 0.0 {
                a.iter_mut().for_each(|x| *x = -*x);
                b = -b;
            }
            let found = planes.iter().position(|(pa, pb)| {
                (pb - b).abs() <= 1e-9 * (1.0 + b.abs())
                    && pa.iter().zip(&a).all(|(x, y)| (x - y).abs() <= 1e-9)
            });
            let idx = found.unwrap_or_else(|| {
                planes.push((a, b));
                planes.len() - 1
            });
            if !mine.contains(&idx) {
                mine.push(idx);
            }
        }
        owned.push(mine);
    }
    (planes, owned)
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(p, q)| p * q).sum()
}

/// Side of the plane holding `center`, when it is strictly inside `cell` and
/// strictly off the plane.
fn center_side(center: Option<&Vec<f64>>, cell: &Halfspaces, a: &[f64], b: f64) -> Option<Side> {
    let c = center?;
    if cell.a.iter().zip(&cell.b).any(|(row, &rhs)| dot(row, c) >= rhs - SIDE_TOL) {
        return None;
    }
    let v = dot(a, c);
    if v < b - SIDE_TOL {
        Some(Side::Below)
    } else if v > b + SIDE_TOL {
        Some(Side::Above)
    } else {
        None
    }
}

/// Position of `region ∩ cell` relative to `a·θ = b`. `hint` is a side known
/// to contain part of `region ∩ cell`.
fn side_of(region: &Halfspaces, cell: &Halfspaces, a: &[f64], b: f64, hint: Option<Side>) -> Side {
    let mut hs = region.clone();
    hs.extend(cell);
    if hs.a.is_empty() {
        return Side::Both;
    }
    // a box keeps every LP bounded; degenerate unbounded ones can cycle
    for j in 0..hs.dim {
        let mut e = vec![0.0; hs.dim];
        e[j] = 1.0;
        hs.push(e.clone(), CLASSIFY_BOX);
        e[j] = -1.0;
        hs.push(e, CLASSIFY_BOX);
    }
    let neg: Vec<f64> = a.iter().map(|x| -x).collect();
    match hint {
        Some(Side::Below) => {
            return match maximize(a, &hs, &[]) {
                LpValue::Optimal(v) if v <= b + SIDE_TOL => Side::Below,
                _ => Side::Both,
            }
        }
        Some(Side::Above) => {
            return match maximize(&neg, &hs, &[]) {
                LpValue::Optimal(v) if -v >= b - SIDE_TOL => Side::Above,
                _ => Side::Both,
            }
        }
        _ => {}
    }
    match maximize(a, &hs, &[]) {
        LpValue::Optimal(v) if v <= b + SIDE_TOL => return Side::Below,
        LpValue::Infeasible => return Side::Outside,
        _ => {}
    }
    if let LpValue::Optimal(v) = maximize(&neg, &hs, &[]) {
        if -v >= b - SIDE_TOL {
            return Side::Above;
        }
    }
    Side::Both
}

impl<T: Real> SearchTree<T> {
    /// Greedy construction: each node splits on the hyperplane that most
    /// evenly divides its surviving region list.
    pub fn build(regions: &[CriticalRegion<T>], max_depth: usize) -> Self {
        let (planes, owned) = collect_planes(regions);
        let region_hs: Vec<Halfspaces> = regions.iter().map(|r| to_halfspaces(&r.region)).collect();
        let dim = regions.first().map_or(0, |r| r.gain.ncols());
        let mut tree = SearchTree {
            planes: planes
                .iter()
                .map(|(a, b)| (DVector::from_iterator(a.len(), a.iter().map(|&x| lit(x))), lit(*b)))
                .collect(),
            nodes: Vec::new(),
        };
        let centers: Vec<Option<Vec<f64>>> = region_hs
            .iter()
            .map(|hs| chebyshev_radius(hs, 1.0).filter(|(_, r)| *r > SIDE_TOL).map(|(c, _)| c))
            .collect();
        let all: Vec<usize> = (0..regions.len()).collect();
        let ctx = GrowContext {
            planes: &planes,
            owned: &owned,
            regions: &region_hs,
            centers: &centers,
        };
        tree.grow(&ctx, Halfspaces::new(dim), all, max_depth);
        tree
    }

    fn grow(&mut self, ctx: &GrowContext<'_>, cell: Halfspaces, cands: Vec<usize>, depth_left: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { regions: cands.clone() });
        if cands.len() <= 1 || depth_left == 0 {
            return id;
        }
        // only facets of the remaining candidates can separate them
        let mut options: Vec<usize> = cands.iter().flat_map(|&r| ctx.owned[r].iter().copied()).collect();
        options.sort_unstable();
        let mut counted: Vec<(usize, usize)> = Vec::new();
        for pi in options {
            match counted.last_mut() {
                Some((p, c)) if *p == pi => *c += 1,
                _ => counted.push((pi, 1)),
            }
        }
        counted.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        let options = counted.into_iter().take(PLANE_TRIALS).map(|(p, _)| p);
        let perfect = cands.len().div_ceil(2);
        let mut best: Option<(usize, Vec<usize>, Vec<usize>)> = None;
        for pi in options {
            let (a, b) = &ctx.planes[pi];
            let bound = best.as_ref().map_or(cands.len(), |(_, bl, ab)| bl.len().max(ab.len()));
            let mut below = Vec::new();
            let mut above = Vec::new();
            for &r in &cands {
                let hint = center_side(ctx.centers[r].as_ref(), &cell, a, *b);
                match side_of(&ctx.regions[r], &cell, a, *b, hint) {
                    Side::Below => below.push(r),
                    Side::Above => above.push(r),
                    Side::Both => {
                        below.push(r);
                        above.push(r);
                    }
                    Side::Outside => {}
                }
                if below.len() >= bound || above.len() >= bound {
                    break;
                }
            }
            if below.len() >= bound || above.len() >= bound {
                continue;
            }
            let done = below.len().max(above.len()) <= perfect;
            best = Some((pi, below, above));
            if done {
                break;
            }
        }
        let Some((plane, below, above)) = best else {
            return id;
        };
        let (a, b) = &ctx.planes[plane];
        let mut cell_below = cell.clone();
        cell_below.push(a.clone(), *b);
        let mut cell_above = cell;
        cell_above.push(a.iter().map(|x| -x).collect(), -b);
        let below_id = self.grow(ctx, cell_below, below, depth_left - 1);
        let above_id = self.grow(ctx, cell_above, above, depth_left - 1);
        self.nodes[id] = TreeNode::Split {
            plane,
            below: below_id,
            above: above_id,
        };
        id
    }

    /// Candidate regions for `θ` and the number of hyperplanes evaluated.
    pub fn candidates(&self, theta: &DVector<T>) -> (&[usize], usize) {
        let mut node = 0;
        let mut visited = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { regions } => return (regions, visited),
                TreeNode::Split { plane, below, above } => {
                    visited += 1;
                    let (a, b) = &self.planes[*plane];
                    node = if a.dot(theta) <= *b { *below } else { *above };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { below, above, .. } => 1 + walk(nodes, *below).max(walk(nodes, *above)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }

    pub fn max_leaf_size(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Leaf { regions } => Some(regions.len()),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}
