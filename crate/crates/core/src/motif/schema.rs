use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{fmt_num, Graph};

/// Motif shapes anchored at the ego.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    /// Ego plus one neighbor.
    Dyad,
    /// Ego plus two non-adjacent neighbors.
    OpenTriad,
    /// Ego plus two adjacent neighbors.
    ClosedTriad,
    /// Ego plus three pairwise non-adjacent neighbors.
    OpenStar4,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Dyad, Shape::OpenTriad, Shape::ClosedTriad, Shape::OpenStar4];

    pub fn code(self) -> &'static str {
        match self {
            Shape::Dyad => "2",
            Shape::OpenTriad => "3o",
            Shape::ClosedTriad => "3c",
            Shape::OpenStar4 => "4o",
        }
    }

    /// Number of non-ego members.
    pub fn arity(self) -> u8 {
        match self {
            Shape::Dyad => 1,
            Shape::OpenTriad | Shape::ClosedTriad => 2,
            Shape::OpenStar4 => 3,
        }
    }

    fn from_code(s: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|sh| sh.code() == s)
    }
}

/// One coordinate of a representation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dim {
    /// The unit's own treatment.
    EgoTreatment,
    /// Share of `shape` instances with `treated` treated non-ego members.
    MotifFraction { shape: Shape, treated: u8 },
    /// Share of neighbors with `column == value` whose treatment equals
    /// `treated`.
    AttrConditioned { column: String, value: f64, treated: u8 },
}

/// How a dimension behaves in the all-treated and all-control worlds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimRole {
    Ego,
    FullTreatment,
    FullControl,
    Mixed,
}

impl Dim {
    pub fn motif(shape: Shape, treated: u8) -> Self {
        Dim::MotifFraction { shape, treated }
    }

    pub fn code(&self) -> String {
        self.to_string()
    }

    pub fn role(&self) -> DimRole {
        match self {
            Dim::EgoTreatment => DimRole::Ego,
            Dim::MotifFraction { shape, treated } => {
                if *treated == shape.arity() {
                    DimRole::FullTreatment
                } else if *treated == 0 {
                    DimRole::FullControl
                } else {
                    DimRole::Mixed
                }
            }
            Dim::AttrConditioned { treated, .. } => {
                if *treated == 1 {
                    DimRole::FullTreatment
                } else {
                    DimRole::FullControl
                }
            }
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::EgoTreatment => write!(f, "Z"),
            Dim::MotifFraction { shape, treated } => write!(f, "{}-{treated}", shape.code()),
            Dim::AttrConditioned { column, value, treated } => {
                if column == DEFAULT_ATTR {
                    write!(f, "2-{treated}({})", fmt_num(*value))
                } else {
                    write!(f, "2-{treated}({column}={})", fmt_num(*value))
                }
            }
        }
    }
}

/// Attribute column used by codes such as `2-1(1)`.
pub const DEFAULT_ATTR: &str = "X";

impl FromStr for Dim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Schema(format!("unrecognised dimension code {s:?}"));
        if s == "Z" {
            return Ok(Dim::EgoTreatment);
        }
        let (head, cond) = match s.find('(') {
            Some(p) => {
                let inner = s[p + 1..].strip_suffix(')').ok_or_else(bad)?;
                (&s[..p], Some(inner))
            }
            None => (s, None),
        };
        let (shape, t) = head.split_once('-').ok_or_else(bad)?;
        let shape = Shape::from_code(shape).ok_or_else(bad)?;
        let treated: u8 = t.parse().map_err(|_| bad())?;
        if treated > shape.arity() {
            return Err(Error::Schema(format!(
                "{s}: shape {} has only {} non-ego members",
                shape.code(),
                shape.arity()
            )));
        }
        match cond {
            None => Ok(Dim::MotifFraction { shape, treated }),
            Some(inner) => {
                if shape != Shape::Dyad {
                    return Err(Error::Schema(format!(
                        "{s}: attribute conditions are supported on dyads only"
                    )));
                }
                let (column, value) = match inner.split_once('=') {
                    Some((c, v)) => (c.trim().to_string(), v),
                    None => (DEFAULT_ATTR.to_string(), inner),
                };
                let value: f64 = value.trim().parse().map_err(|_| bad())?;
                Ok(Dim::AttrConditioned { column, value, treated })
            }
        }
    }
}

/// Ordered dimension list; dimension 0 is always the ego treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifSchema {
    dims: Vec<Dim>,
}

impl MotifSchema {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Schema("a schema needs at least two dimensions".into()));
        }
        if dims[0] != Dim::EgoTreatment {
            return Err(Error::Schema("the first dimension must be Z".into()));
        }
        for (k, d) in dims.iter().enumerate() {
            if k > 0 && *d == Dim::EgoTreatment {
                return Err(Error::Schema("Z may only appear as the first dimension".into()));
            }
            if dims[..k].contains(d) {
                return Err(Error::Schema(format!("duplicate dimension {d}")));
            }
        }
        Ok(MotifSchema { dims })
    }

    /// Parse a comma-separated list of codes, e.g. `Z,2-1,3c-2`.
    pub fn parse(list: &str) -> Result<Self> {
        let dims = list
            .split(',')
            .filter(|c| !c.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Dim>>>()?;
        Self::new(dims)
    }

    /// `Z, 2-1, 3o-0, 3o-2, 3c-0, 3c-2, 4o-0, 4o-3, 2-1(1), 2-1(0)`.
    pub fn default_schema() -> Self {
        Self::parse("Z,2-1,3o-0,3o-2,3c-0,3c-2,4o-0,4o-3,2-1(1),2-1(0)").expect("valid default")
    }

    /// Own treatment and treated-neighbor share only.
    pub fn fractional() -> Self {
        Self::parse("Z,2-1").expect("valid schema")
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn codes(&self) -> Vec<String> {
        self.dims.iter().map(Dim::code).collect()
    }

    pub fn position(&self, code: &str) -> Option<usize> {
        let d: Dim = code.parse().ok()?;
        self.dims.iter().position(|x| *x == d)
    }

    pub(crate) fn needs_pairs(&self) -> bool {
        self.dims.iter().any(|d| {
            matches!(d, Dim::MotifFraction { shape, .. } if *shape != Shape::Dyad)
        })
    }

    pub(crate) fn needs_triangles(&self) -> bool {
        self.dims
            .iter()
            .any(|d| matches!(d, Dim::MotifFraction { shape: Shape::OpenStar4, .. }))
    }

    /// Check that every attribute column referenced exists on `g`.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        for d in &self.dims {
            if let Dim::AttrConditioned { column, .. } = d {
                if g.attr(column).is_none() {
                    return Err(Error::Schema(format!(
                        "dimension {d} needs attribute column {column:?}, which the graph lacks"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for MotifSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.codes().join(","))
    }
}
