use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::tree::{SearchTree, TreeNode};
use super::{CriticalRegion, PwaSolutionMap, StageMpqp};
use crate::error::{Error, Result};
use crate::problem::Polyhedron;
use crate::scalar::{lit, to_f64, Real};

pub const MAP_FORMAT_VERSION: u32 = 1;

type Rows = Vec<Vec<f64>>;

fn rows<T: Real>(m: &DMatrix<T>) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| to_f64(m[(i, j)])).collect())
        .collect()
}

fn vec_of<T: Real>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|&x| to_f64(x)).collect()
}

fn matrix<T: Real>(r: &Rows, ncols: usize) -> Result<DMatrix<T>> {
    if let Some(bad) = r.iter().find(|row| row.len() != ncols) {
        return Err(Error::Dimension {
            context: "map matrix row",
            expected: ncols,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(r.len(), ncols, |i, j| lit(r[i][j])))
}

fn vector<T: Real>(v: &[f64]) -> DVector<T> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| lit(x)))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegionRecord {
    pub active_set: Vec<usize>,
    #[serde(rename = "F")]
    pub gain: Rows,
    #[serde(rename = "f")]
    pub offset: Vec<f64>,
    #[serde(rename = "Hr")]
    pub lhs: Rows,
    #[serde(rename = "hr")]
    pub rhs: Vec<f64>,
    #[serde(rename = "Λ")]
    pub dual_gain: Rows,
    #[serde(rename = "λ0")]
    pub dual_offset: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeRecord {
    Split { plane: usize, below: usize, above: usize },
    Leaf { regions: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TreeRecord {
    pub planes: Vec<(Vec<f64>, f64)>,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolyRecord {
    #[serde(rename = "P")]
    pub lhs: Rows,
    #[serde(rename = "p")]
    pub rhs: Vec<f64>,
}

/// On-disk form of a [`PwaSolutionMap`]. Serialization is deterministic:
/// regions keep enumeration order and active sets are sorted.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MapFile {
    pub version: u32,
    pub dim: usize,
    pub hessian: Rows,
    pub set: PolyRecord,
    pub regions: Vec<RegionRecord>,
    pub tree: TreeRecord,
    pub domain: PolyRecord,
    #[serde(default)]
    pub skipped_degenerate: Vec<Vec<usize>>,
}

fn poly_record<T: Real>(p: &Polyhedron<T>) -> PolyRecord {
    PolyRecord {
        lhs: rows(&p.lhs),
        rhs: vec_of(&p.rhs),
    }
}

fn poly<T: Real>(r: &PolyRecord, dim: usize) -> Result<Polyhedron<T>> {
    crate::error::check_dim("polyhedron rhs", r.lhs.len(), r.rhs.len())?;
    Ok(Polyhedron {
        lhs: matrix(&r.lhs, dim)?,
        rhs: vector(&r.rhs),
    })
}

impl MapFile {
    pub fn from_map<T: Real>(map: &PwaSolutionMap<T>) -> Self {
        let regions = map
            .regions
            .iter()
            .map(|r| RegionRecord {
                active_set: r.active_set.clone(),
                gain: rows(&r.gain),
                offset: vec_of(&r.offset),
                lhs: rows(&r.region.lhs),
                rhs: vec_of(&r.region.rhs),
                dual_gain: rows(&r.dual_gain),
                dual_offset: vec_of(&r.dual_offset),
            })
            .collect();
        let tree = TreeRecord {
            planes: map.tree.planes.iter().map(|(a, b)| (vec_of(a), to_f64(*b))).collect(),
            nodes: map
                .tree
                .nodes
                .iter()
                .map(|n| match n {
                    TreeNode::Split { plane, below, above } => NodeRecord::Split {
                        plane: *plane,
                        below: *below,
                        above: *above,
                    },
                    TreeNode::Leaf { regions } => NodeRecord::Leaf {
                        regions: regions.clone(),
                    },
                })
                .collect(),
        };
        MapFile {
            version: MAP_FORMAT_VERSION,
            dim: map.qp.dim(),
            hessian: rows(&map.qp.hessian),
            set: poly_record(&map.qp.set),
            regions,
            tree,
            domain: poly_record(&map.domain),
            skipped_degenerate: map.skipped_degenerate.clone(),
        }
    }

    pub fn into_map<T: Real>(&self) -> Result<PwaSolutionMap<T>> {
        if self.version != MAP_FORMAT_VERSION {
            return Err(Error::MapVersion(self.version));
        }
        let n = self.dim;
        let qp = StageMpqp::new(matrix(&self.hessian, n)?, poly(&self.set, n)?);
        let mut regions = Vec::with_capacity(self.regions.len());
        for r in &self.regions {
            let mut active = r.active_set.clone();
            active.sort_unstable();
            regions.push(CriticalRegion {
                active_set: active,
                gain: matrix(&r.gain, n)?,
                offset: vector(&r.offset),
                region: poly(
                    &PolyRecord {
                        lhs: r.lhs.clone(),
                        rhs: r.rhs.clone(),
                    },
                    n,
                )?,
                dual_gain: matrix(&r.dual_gain, n)?,
                dual_offset: vector(&r.dual_offset),
            });
        }
        let nodes = self
            .tree
            .nodes
            .iter()
            .map(|node| match node {
                NodeRecord::Split { plane, below, above } => TreeNode::Split {
                    plane: *plane,
                    below: *below,
                    above: *above,
                },
                NodeRecord::Leaf { regions } => TreeNode::Leaf {
                    regions: regions.clone(),
                },
            })
            .collect::<Vec<_>>();
        for node in &nodes {
            let ok = match node {
                TreeNode::Split { plane, below, above } => {
                    *plane < self.tree.planes.len() && *below < nodes.len() && *above < nodes.len()
                }
                TreeNode::Leaf { regions: rs } => rs.iter().all(|&r| r < regions.len()),
            };
            if !ok {
                return Err(Error::InvalidProblem("map tree references a missing node".into()));
            }
        }
        if nodes.is_empty() {
            return Err(Error::InvalidProblem("map tree is empty".into()));
        }
        let tree = SearchTree {
            planes: self
                .tree
                .planes
                .iter()
                .map(|(a, b)| (vector(a), lit(*b)))
                .collect(),
            nodes,
        };
        Ok(PwaSolutionMap {
            qp,
            regions,
            tree,
            domain: poly(&self.domain, n)?,
            skipped_degenerate: self.skipped_degenerate.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::box_qp;
    use super::super::{enumerate_regions, EnumerationOptions};
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn round_trip_preserves_evaluation_and_bytes() {
        let map = enumerate_regions(&box_qp(), &EnumerationOptions::default()).unwrap();
        let file = MapFile::from_map(&map);
        let text = file.to_json().unwrap();
        let back: PwaSolutionMap<f64> = MapFile::from_json(&text).unwrap().into_map().unwrap();
        assert_eq!(back, map);
        let again = enumerate_regions(&box_qp(), &EnumerationOptions::default()).unwrap();
        assert_eq!(MapFile::from_map(&again).to_json().unwrap(), text);
        let theta = dvector![-2.0, 0.5];
        assert_eq!(back.eval(&theta).unwrap(), map.eval(&theta).unwrap());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let map = enumerate_regions(&box_qp(), &EnumerationOptions::default()).unwrap();
        let mut file = MapFile::from_map(&map);
        file.version = 7;
        assert!(matches!(file.into_map::<f64>(), Err(Error::MapVersion(7))));
    }

    #[test]
    fn loads_as_f32() {
        let map = enumerate_regions(&box_qp(), &EnumerationOptions::default()).unwrap();
        let small: PwaSolutionMap<f32> = MapFile::from_map(&map).into_map().unwrap();
        let e = small.eval(&nalgebra::dvector![0.25f32, -3.0]).unwrap();
        assert!((e.y[0] + 0.25).abs() < 1e-6 && (e.y[1] - 1.0).abs() < 1e-6);
    }
}
