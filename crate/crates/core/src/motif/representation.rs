use std::io::Write;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::counts::{attr_columns, count_node, MotifStructure, SamplingConfig, Scratch};
use super::schema::{DimRole, MotifSchema};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::par;
use crate::seeds;

const ROW_BLOCK: usize = 256;

/// Source of the smoothing draws `U` for the motif dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UniformSource {
    /// Independent `Unif(0,1)` per (node, dim), addressed by node.
    Seeded(u64),
    /// The same value for every entry.
    Constant(f64),
    /// One value per motif dimension, shared by every node.
    PerDim(Vec<f64>),
}

impl UniformSource {
    #[inline]
    fn fill(&self, node: usize, out: &mut [f64]) {
        match self {
            UniformSource::Seeded(seed) => {
                let mut rng = seeds::rng(*seed, seeds::stream::UNIFORM, node as u64);
                for u in out.iter_mut() {
                    *u = rng.sample(Open01);
                }
            }
            UniformSource::Constant(c) => out.fill(*c),
            UniformSource::PerDim(v) => out.copy_from_slice(v),
        }
    }

    fn check(&self, motif_dims: usize) -> Result<()> {
        let ok = |u: f64| (0.0..=1.0).contains(&u);
        match self {
            UniformSource::Seeded(_) => Ok(()),
            UniformSource::Constant(c) if ok(*c) => Ok(()),
            UniformSource::PerDim(v) if v.len() == motif_dims && v.iter().all(|&u| ok(u)) => Ok(()),
            _ => Err(Error::Argument(format!(
                "uniform values must lie in [0,1] with one value per motif dimension ({motif_dims})"
            ))),
        }
    }
}

/// Row-major `N x M` matrix of representation vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationMatrix {
    n: usize,
    schema: MotifSchema,
    data: Vec<f64>,
    /// `N x (M-1)` smoothing draws used to build `data`.
    u: Vec<f64>,
    pub uniform: UniformSource,
    pub sampling: SamplingConfig,
}

impl RepresentationMatrix {
    /// Wrap precomputed rows (for instance vectors read back from disk).
    pub fn from_rows(schema: MotifSchema, data: Vec<f64>) -> Result<Self> {
        let m = schema.len();
        if data.len() % m != 0 {
            return Err(Error::Argument(format!("{} values do not form rows of {m}", data.len())));
        }
        Ok(RepresentationMatrix {
            n: data.len() / m,
            schema,
            data,
            u: Vec::new(),
            uniform: UniformSource::Constant(0.0),
            sampling: SamplingConfig::default(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn dim_count(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &MotifSchema {
        &self.schema
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.schema.len();
        &self.data[i * m..(i + 1) * m]
    }

    #[inline]
    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.data[i * self.schema.len() + m]
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, m)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Smoothing draws for node `i` (empty when built from rows).
    pub fn uniforms(&self, i: usize) -> &[f64] {
        let k = self.schema.len() - 1;
        self.u.get(i * k..(i + 1) * k).unwrap_or(&[])
    }

    /// Write `node_id,<dim codes>` rows.
    pub fn write_csv<W: Write>(&self, g: &Graph, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["node_id".to_string()];
        header.extend(self.schema.codes());
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec = vec![g.external_id(i).to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": self.schema.codes(),
            "uniform": self.uniform,
            "sampling": self.sampling,
        })
    }
}

/// Reusable builder: holds the assignment-independent structure so many
/// assignments can be mapped cheaply.
#[derive(Debug, Clone)]
pub struct RepresentationBuilder<'g> {
    g: &'g Graph,
    schema: MotifSchema,
    structure: MotifStructure,
    attr_cols: Vec<Option<&'g [f64]>>,
    sampling: SamplingConfig,
}

impl<'g> RepresentationBuilder<'g> {
    pub fn new(g: &'g Graph, schema: &MotifSchema, sampling: &SamplingConfig) -> Result<Self> {
        let attr_cols = attr_columns(g, schema)?;
        Ok(RepresentationBuilder {
            g,
            schema: schema.clone(),
            structure: MotifStructure::build(g, schema, sampling)?,
            attr_cols,
            sampling: *sampling,
        })
    }

    pub fn schema(&self) -> &MotifSchema {
        &self.schema
    }

    pub fn graph(&self) -> &'g Graph {
        self.g
    }

    pub fn structure(&self) -> &MotifStructure {
        &self.structure
    }

    pub fn node_count(&self) -> usize {
        self.g.node_count()
    }

    fn check_z(&self, z: &[u8]) -> Result<()> {
        if z.len() != self.g.node_count() {
            return Err(Error::Argument(format!(
                "assignment has {} entries, graph has {} nodes",
                z.len(),
                self.g.node_count()
            )));
        }
        Ok(())
    }

    /// Write rows for every node into `out` (length `N*M`) and, when
    /// given, the draws into `u_out` (length `N*(M-1)`).
    pub fn fill(&self, z: &[u8], uniform: &UniformSource, out: &mut [f64], u_out: Option<&mut [f64]>) -> Result<()> {
        self.check_z(z)?;
        let m = self.schema.len();
        uniform.check(m - 1)?;
        let n = self.g.node_count();
        if out.len() != n * m {
            return Err(Error::Argument("output buffer has the wrong length".into()));
        }
        par::for_each_chunk_mut(out, ROW_BLOCK * m, |blk, chunk| {
            let mut scratch = Scratch::default();
            let mut u = vec![0.0; m - 1];
            for (r, row) in chunk.chunks_mut(m).enumerate() {
                let i = blk * ROW_BLOCK + r;
                uniform.fill(i, &mut u);
                self.fill_row(i, z, &u, row, &mut scratch);
            }
        });
        if let Some(u_out) = u_out {
            par::for_each_chunk_mut(u_out, m - 1, |i, u| uniform.fill(i, u));
        }
        Ok(())
    }

    #[inline]
    fn fill_row(&self, i: usize, z: &[u8], u: &[f64], row: &mut [f64], scratch: &mut Scratch) {
        let c = count_node(&self.structure, i, z, &self.schema, &self.attr_cols, scratch);
        row[0] = z[i] as f64;
        for (m, d) in self.schema.dims().iter().enumerate().skip(1) {
            let (num, den) = c.fraction_parts(m, d);
            row[m] = (num as f64 + u[m - 1]) / (den as f64 + 1.0);
        }
    }

    /// Representation vector of a single node.
    pub fn row(&self, i: usize, z: &[u8], uniform: &UniformSource) -> Result<Vec<f64>> {
        self.check_z(z)?;
        if i >= self.g.node_count() {
            return Err(Error::Index { index: i, len: self.g.node_count() });
        }
        let m = self.schema.len();
        uniform.check(m - 1)?;
        let mut u = vec![0.0; m - 1];
        uniform.fill(i, &mut u);
        let mut row = vec![0.0; m];
        self.fill_row(i, z, &u, &mut row, &mut Scratch::default());
        Ok(row)
    }

    pub fn build(&self, z: &[u8], uniform: UniformSource) -> Result<RepresentationMatrix> {
        let n = self.g.node_count();
        let m = self.schema.len();
        let mut data = vec![0.0; n * m];
        let mut u = vec![0.0; n * (m - 1)];
        self.fill(z, &uniform, &mut data, Some(&mut u))?;
        Ok(RepresentationMatrix {
            n,
            schema: self.schema.clone(),
            data,
            u,
            uniform,
            sampling: self.sampling,
        })
    }
}

/// Build the representation matrix of `g` under `z` with seeded
/// smoothing draws.
pub fn build_representation_matrix(
    g: &Graph,
    z: &[u8],
    schema: &MotifSchema,
    seed: u64,
    sampling: &SamplingConfig,
) -> Result<RepresentationMatrix> {
    RepresentationBuilder::new(g, schema, sampling)?.build(z, UniformSource::Seeded(seed))
}

/// Representations of the all-treated and all-control worlds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRepresentations {
    pub r1: Vec<f64>,
    pub r0: Vec<f64>,
}

/// Pinned smoothing draws `(U1, U0)` under which every node maps to the
/// reference vectors in the all-treated and all-control worlds.
pub fn reference_uniforms(schema: &MotifSchema) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut u1 = Vec::with_capacity(schema.len() - 1);
    let mut u0 = Vec::with_capacity(schema.len() - 1);
    for d in &schema.dims()[1..] {
        match d.role() {
            DimRole::FullTreatment => {
                u1.push(1.0);
                u0.push(0.0);
            }
            DimRole::FullControl => {
                u1.push(0.0);
                u0.push(1.0);
            }
            DimRole::Mixed | DimRole::Ego => {
                return Err(Error::Schema(format!(
                    "dimension {d} counts a mixed treatment pattern and has no value in the \
                     all-treated or all-control world; drop it from the schema used for \
                     effect estimation"
                )))
            }
        }
    }
    Ok((u1, u0))
}

pub fn reference_representations(schema: &MotifSchema) -> Result<ReferenceRepresentations> {
    let (u1, u0) = reference_uniforms(schema)?;
    let mut r1 = vec![1.0];
    r1.extend(u1);
    let mut r0 = vec![0.0];
    r0.extend(u0);
    Ok(ReferenceRepresentations { r1, r0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_edge_list;

    #[test]
    fn formula_examples() {
        let g = parse_edge_list("0 1\n0 2\n0 3").unwrap().0;
        let s = MotifSchema::parse("Z,2-1").unwrap();
        let b = RepresentationBuilder::new(&g, &s, &SamplingConfig::default()).unwrap();
        let r = b.row(0, &[0, 1, 1, 1], &UniformSource::Constant(0.5)).unwrap();
        assert_eq!(r, vec![0.0, 0.875]);

        let g = Graph::from_edges(2, &[]).unwrap().0;
        let b = RepresentationBuilder::new(&g, &s, &SamplingConfig::default()).unwrap();
        let m = b.build(&[1, 0], UniformSource::Seeded(4)).unwrap();
        assert_eq!(m.get(1, 1), m.uniforms(1)[0]);
        assert!(m.get(1, 1) > 0.0 && m.get(1, 1) < 1.0);
    }

    #[test]
    fn attribute_restricted_denominator() {
        let g = parse_edge_list("0 1\n0 2\n0 3").unwrap().0;
        let g = g.with_attribute("X", vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let s = MotifSchema::parse("Z,2-1(1)").unwrap();
        let b = RepresentationBuilder::new(&g, &s, &SamplingConfig::default()).unwrap();
        let r = b.row(0, &[0, 1, 1, 0], &UniformSource::Constant(0.5)).unwrap();
        assert!((r[1] - 2.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_attribute_is_schema_error() {
        let g = parse_edge_list("0 1").unwrap().0;
        let s = MotifSchema::parse("Z,2-1(1)").unwrap();
        assert!(matches!(
            RepresentationBuilder::new(&g, &s, &SamplingConfig::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn references() {
        let s = MotifSchema::parse("Z,2-1,3c-0,3c-2").unwrap();
        let r = reference_representations(&s).unwrap();
        assert_eq!(r.r1, vec![1.0, 1.0, 0.0, 1.0]);
        assert_eq!(r.r0, vec![0.0, 0.0, 1.0, 0.0]);
        let mixed = MotifSchema::parse("Z,3o-1").unwrap();
        assert!(matches!(reference_representations(&mixed), Err(Error::Schema(_))));
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n2 3").unwrap().0;
        let s = MotifSchema::parse("Z,2-1,3c-2,3o-0").unwrap();
        let a = build_representation_matrix(&g, &[1, 0, 1, 1], &s, 9, &SamplingConfig::default()).unwrap();
        let b = build_representation_matrix(&g, &[1, 0, 1, 1], &s, 9, &SamplingConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(
            a,
            build_representation_matrix(&g, &[1, 0, 1, 1], &s, 10, &SamplingConfig::default()).unwrap()
        );
    }
}
