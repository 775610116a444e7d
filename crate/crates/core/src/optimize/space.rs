use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::instance::SegmentationParams;

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Continuous {
        lo: f64,
        hi: f64,
    },
    Integer {
        lo: i64,
        hi: i64,
    },
    /// Sorted, strictly increasing candidate values.
    Discrete(Vec<f64>),
}

impl ParamKind {
    fn lo(&self) -> f64 {
        match self {
            ParamKind::Continuous { lo, .. } => *lo,
            ParamKind::Integer { lo, .. } => *lo as f64,
            ParamKind::Discrete(c) => c[0],
        }
    }

    fn hi(&self) -> f64 {
        match self {
            ParamKind::Continuous { hi, .. } => *hi,
            ParamKind::Integer { hi, .. } => *hi as f64,
            ParamKind::Discrete(c) => c[c.len() - 1],
        }
    }

    /// Nearest admissible value.
    pub fn snap(&self, v: f64) -> f64 {
        let v = v.clamp(self.lo(), self.hi());
        match self {
            ParamKind::Continuous { .. } => v,
            ParamKind::Integer { .. } => v.round(),
            ParamKind::Discrete(c) => {
                let i = c.partition_point(|&x| x < v);
                if i == 0 {
                    c[0]
                } else if i == c.len() || v - c[i - 1] <= c[i] - v {
                    c[i - 1]
                } else {
                    c[i]
                }
            }
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        let (lo, hi) = (self.lo(), self.hi());
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    /// Maps a unit coordinate to an admissible value.
    pub fn denormalize(&self, u: f64) -> f64 {
        let (lo, hi) = (self.lo(), self.hi());
        self.snap(lo + u.clamp(0.0, 1.0) * (hi - lo))
    }

    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && v >= self.lo() && v <= self.hi() && self.snap(v) == v
    }

    /// Number of admissible values, `None` for continuous ranges.
    pub fn cardinality(&self) -> Option<u64> {
        match self {
            ParamKind::Continuous { .. } => None,
            ParamKind::Integer { lo, hi } => Some((hi - lo) as u64 + 1),
            ParamKind::Discrete(c) => Some(c.len() as u64),
        }
    }

    fn value_at(&self, k: u64) -> f64 {
        match self {
            ParamKind::Continuous { .. } => {
                unreachable!("continuous parameters are not enumerable")
            }
            ParamKind::Integer { lo, .. } => (*lo + k as i64) as f64,
            ParamKind::Discrete(c) => c[k as usize],
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("parameter `{name}`: {msg}")));
        match self {
            ParamKind::Continuous { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    return bad("bounds must be finite");
                }
                if lo >= hi {
                    return bad("lower bound must be below upper bound");
                }
            }
            ParamKind::Integer { lo, hi } => {
                if lo > hi {
                    return bad("lower bound must not exceed upper bound");
                }
            }
            ParamKind::Discrete(c) => {
                if c.is_empty() {
                    return bad("candidate list is empty");
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return bad("candidates must be finite");
                }
                if c.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("candidates must be strictly increasing");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
}

impl Parameter {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Continuous { lo, hi },
        }
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Integer { lo, hi },
        }
    }

    pub fn discrete(name: &str, candidates: &[f64]) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Discrete(candidates.to_vec()),
        }
    }
}

/// Search box of the optimiser. Every parameter maps linearly onto [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    params: Vec<Parameter>,
}

impl ParameterSpace {
    pub fn new(params: Vec<Parameter>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Empty("parameter space"));
        }
        let mut seen = HashSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate parameter `{}`",
                    p.name
                )));
            }
            p.kind.validate(&p.name)?;
        }
        Ok(Self { params })
    }

    /// Ranges spanning the tested segmentation values, with the two edge
    /// lengths centred on their 1 m default.
    pub fn segmentation_default() -> Self {
        Self::new(vec![
            Parameter::continuous("slice_thickness", 0.25, 0.75),
            Parameter::continuous("find_stems_height", 0.5, 2.0),
            Parameter::continuous("find_stems_thickness", 0.25, 0.75),
            Parameter::integer("find_stems_min_points", 10, 200),
            Parameter::continuous("graph_edge_length", 0.5, 1.5),
            Parameter::continuous("graph_maximum_cumulative_gap", 1.0, 4.0),
            Parameter::continuous("add_leaves_voxel_length", 0.25, 0.75),
            Parameter::continuous("add_leaves_edge_length", 0.5, 1.5),
        ])
        .expect("valid built-in space")
    }

    /// The tested candidate grids as discrete parameters.
    pub fn segmentation_grid() -> Self {
        let edges = [0.5, 0.75, 1.0, 1.25, 1.5];
        Self::new(vec![
            Parameter::discrete("slice_thickness", &[0.25, 0.5, 0.75]),
            Parameter::discrete("find_stems_height", &[0.5, 0.75, 1.0, 1.5, 2.0]),
            Parameter::discrete("find_stems_thickness", &[0.25, 0.5, 0.75]),
            Parameter::discrete(
                "find_stems_min_points",
                &[10.0, 20.0, 30.0, 50.0, 100.0, 150.0, 200.0],
            ),
            Parameter::discrete("graph_edge_length", &edges),
            Parameter::discrete("graph_maximum_cumulative_gap", &[1.0, 2.0, 3.0, 4.0]),
            Parameter::discrete("add_leaves_voxel_length", &[0.25, 0.5, 0.75]),
            Parameter::discrete("add_leaves_edge_length", &edges),
        ])
        .expect("valid built-in space")
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Restricts the space to the named parameters, in the given order.
    pub fn subspace(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.params[i].clone()).collect())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn normalize(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(values.len())?;
        Ok(self
            .params
            .iter()
            .zip(values)
            .map(|(p, &v)| p.kind.normalize(v))
            .collect())
    }

    /// Unit vector to admissible values (clamped and snapped).
    pub fn denormalize(&self, unit: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(unit.len())?;
        Ok(self
            .params
            .iter()
            .zip(unit)
            .map(|(p, &u)| p.kind.denormalize(u))
            .collect())
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.dim()
            && self
                .params
                .iter()
                .zip(values)
                .all(|(p, &v)| p.kind.contains(v))
    }

    /// Number of admissible vectors, `None` if any parameter is continuous.
    pub fn cardinality(&self) -> Option<u128> {
        self.params.iter().try_fold(1u128, |acc, p| {
            p.kind.cardinality().map(|c| acc.saturating_mul(c as u128))
        })
    }

    /// The `k`-th admissible vector of a finite space, last parameter fastest.
    pub fn enumerate_at(&self, mut k: u128) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (slot, p) in out.iter_mut().zip(&self.params).rev() {
            let c = p.kind.cardinality().expect("finite space") as u128;
            *slot = p.kind.value_at((k % c) as u64);
            k /= c;
        }
        out
    }

    /// Overrides the named fields of `base` with `values`.
    pub fn apply(&self, values: &[f64], base: &SegmentationParams) -> Result<SegmentationParams> {
        self.check_dim(values.len())?;
        let mut out = *base;
        for (p, &v) in self.params.iter().zip(values) {
            out.set(&p.name, v)?;
        }
        out.validate()?;
        Ok(out)
    }
}
