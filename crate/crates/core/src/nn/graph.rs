use super::{NnError, Tensor};
use crate::Scalar;

/// Attributed directed graph. An edge `(src, dst)` carries a message from
/// `src` into the neighbourhood of `dst`; undirected graphs list both
/// directions.
///
/// `pooled` describes the topology after a group max-pool: its vertex count
/// equals the number of groups and its own `vertex_features` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    pub vertex_features: Tensor<T>,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Option<Tensor<T>>,
    pub vertex_groups: Option<Vec<usize>>,
    pub pooled: Option<Box<Graph<T>>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(vertex_features: Tensor<T>, edges: Vec<(usize, usize)>) -> Self {
        Self {
            vertex_features,
            edges,
            edge_features: None,
            vertex_groups: None,
            pooled: None,
        }
    }

    /// Topology-only graph used as the coarse level after pooling.
    pub fn topology(num_vertices: usize, edges: Vec<(usize, usize)>) -> Self {
        Self::new(Tensor::zeros(num_vertices, 0), edges)
    }

    pub fn with_edge_features(mut self, features: Tensor<T>) -> Self {
        self.edge_features = Some(features);
        self
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Self {
        self.vertex_groups = Some(groups);
        self
    }

    pub fn with_pooled(mut self, pooled: Graph<T>) -> Self {
        self.pooled = Some(Box::new(pooled));
        self
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_features.rows()
    }

    pub fn num_groups(&self) -> usize {
        self.vertex_groups
            .as_ref()
            .map_or(0, |g| g.iter().map(|&x| x + 1).max().unwrap_or(0))
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let v = self.num_vertices();
        if let Some(&(s, d)) = self.edges.iter().find(|(s, d)| *s >= v || *d >= v) {
            return Err(NnError::Contract(format!(
                "edge ({s}, {d}) out of range for {v} vertices"
            )));
        }
        if let Some(ef) = &self.edge_features {
            if ef.rows() != self.edges.len() {
                return Err(NnError::Contract(format!(
                    "{} edge feature rows for {} edges",
                    ef.rows(),
                    self.edges.len()
                )));
            }
        }
        if let Some(groups) = &self.vertex_groups {
            if groups.len() != v {
                return Err(NnError::Contract(format!(
                    "{} group labels for {v} vertices",
                    groups.len()
                )));
            }
            let mut seen = vec![false; self.num_groups()];
            for &g in groups {
                seen[g] = true;
            }
            if let Some(empty) = seen.iter().position(|s| !s) {
                return Err(NnError::Contract(format!("group {empty} is empty")));
            }
            if let Some(p) = &self.pooled {
                if p.num_vertices() != seen.len() {
                    return Err(NnError::Contract(format!(
                        "pooled level has {} vertices for {} groups",
                        p.num_vertices(),
                        seen.len()
                    )));
                }
            }
        }
        if let Some(p) = &self.pooled {
            p.validate()?;
        }
        Ok(())
    }

    /// Disjoint union. Group labels are offset so groups stay separate, and
    /// pooled levels are merged the same way. Either all parts carry edge
    /// features / groups / pooled levels or none do.
    pub fn disjoint_union(parts: &[Graph<T>]) -> Result<Self, NnError> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Contract("union of zero graphs".into()))?;
        let width = first.vertex_features.cols();
        let has_edges = first.edge_features.is_some();
        let has_groups = first.vertex_groups.is_some();
        let has_pooled = first.pooled.is_some();
        let edge_width = first.edge_features.as_ref().map_or(0, Tensor::cols);
        let mut features = Vec::new();
        let mut edges = Vec::new();
        let mut edge_feats = Vec::new();
        let mut groups = Vec::new();
        let mut pooled_parts = Vec::new();
        let (mut v_off, mut g_off) = (0, 0);
        for part in parts {
            if part.vertex_features.cols() != width
                || part.edge_features.is_some() != has_edges
                || part.vertex_groups.is_some() != has_groups
                || part.pooled.is_some() != has_pooled
                || part.edge_features.as_ref().map_or(0, Tensor::cols) != edge_width
            {
                return Err(NnError::Contract("union of heterogeneous graphs".into()));
            }
            features.extend_from_slice(part.vertex_features.data());
            edges.extend(part.edges.iter().map(|&(s, d)| (s + v_off, d + v_off)));
            if let Some(ef) = &part.edge_features {
                edge_feats.extend_from_slice(ef.data());
            }
            if let Some(g) = &part.vertex_groups {
                groups.extend(g.iter().map(|&x| x + g_off));
                g_off += part.num_groups();
            }
            if let Some(p) = &part.pooled {
                pooled_parts.push((**p).clone());
            }
            v_off += part.num_vertices();
        }
        let mut out = Graph::new(Tensor::from_vec(v_off, width, features), edges);
        if has_edges {
            let n = out.edges.len();
            out.edge_features = Some(Tensor::from_vec(n, edge_width, edge_feats));
        }
        if has_groups {
            out.vertex_groups = Some(groups);
        }
        if has_pooled {
            out.pooled = Some(Box::new(Graph::disjoint_union(&pooled_parts)?));
        }
        Ok(out)
    }
}

/// One incoming message: source vertex and the edge it travels on
/// (`None` for the implicit self-loop).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct Incoming {
    pub src: usize,
    pub edge: Option<usize>,
}

/// Per-vertex incoming message lists in canonical order (source index, then
/// edge index, self-loop first among equal sources).
#[derive(Debug, Clone)]
pub(crate) struct Neighborhoods {
    pub offsets: Vec<usize>,
    pub incoming: Vec<Incoming>,
    pub dst: Vec<usize>,
}

impl Neighborhoods {
    pub fn build(
        num_vertices: usize,
        edges: &[(usize, usize)],
        self_loops: bool,
    ) -> Result<Self, NnError> {
        let mut lists: Vec<Vec<Incoming>> = vec![Vec::new(); num_vertices];
        if self_loops {
            for (v, list) in lists.iter_mut().enumerate() {
                list.push(Incoming { src: v, edge: None });
            }
        }
        for (e, &(s, d)) in edges.iter().enumerate() {
            lists[d].push(Incoming {
                src: s,
                edge: Some(e),
            });
        }
        let mut offsets = Vec::with_capacity(num_vertices + 1);
        let mut incoming = Vec::new();
        let mut dst = Vec::new();
        offsets.push(0);
        for (v, mut list) in lists.into_iter().enumerate() {
            if list.is_empty() {
                return Err(NnError::UndefinedAggregation { vertex: v });
            }
            list.sort();
            dst.extend(std::iter::repeat_n(v, list.len()));
            incoming.extend(list);
            offsets.push(incoming.len());
        }
        Ok(Self {
            offsets,
            incoming,
            dst,
        })
    }

    pub fn len(&self) -> usize {
        self.incoming.len()
    }
}
