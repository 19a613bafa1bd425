//! Objects and their star-graph encoding.
//!
//! An object assigns one of `t` types to each of `p` properties. It is drawn
//! as a star: one leaf per property plus an empty central node. A leaf's
//! feature row is `onehot_p(property) ++ onehot_t(type)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest world `enumerate_objects` will materialise.
pub const MAX_WORLD_SIZE: usize = 1_000_000;

/// Type index chosen for every property of one object.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectSpec(Vec<usize>);

impl ObjectSpec {
    pub fn new(types: Vec<usize>) -> Self {
        Self(types)
    }

    pub fn types(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of properties whose type differs.
    pub fn hamming(&self, other: &ObjectSpec) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl fmt::Display for ObjectSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ObjectSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|x| {
                x.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("bad type index `{x}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(ObjectSpec)
    }
}

/// The `p × t` object universe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct World {
    properties: usize,
    types: usize,
    size: usize,
}

impl World {
    pub fn new(properties: usize, types: usize) -> Result<Self> {
        if properties == 0 || types == 0 {
            return Err(Error::Config(format!(
                "world needs p >= 1 and t >= 1 (got p={properties}, t={types})"
            )));
        }
        let size = u32::try_from(properties)
            .ok()
            .and_then(|p| types.checked_pow(p))
            .filter(|&n| n <= MAX_WORLD_SIZE)
            .ok_or(Error::WorldTooLarge { properties, types })?;
        Ok(Self {
            properties,
            types,
            size,
        })
    }

    pub fn properties(&self) -> usize {
        self.properties
    }

    pub fn types(&self) -> usize {
        self.types
    }

    /// `t^p`, the number of distinct objects.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn feature_width(&self) -> usize {
        self.properties + self.types
    }

    /// Lexicographic rank of a spec.
    pub fn index_of(&self, spec: &ObjectSpec) -> usize {
        spec.0.iter().fold(0, |acc, &t| acc * self.types + t)
    }

    pub fn spec_at(&self, mut index: usize) -> ObjectSpec {
        let mut types = vec![0; self.properties];
        for slot in types.iter_mut().rev() {
            *slot = index % self.types;
            index /= self.types;
        }
        ObjectSpec(types)
    }

    pub fn contains(&self, spec: &ObjectSpec) -> bool {
        spec.len() == self.properties && spec.0.iter().all(|&t| t < self.types)
    }

    pub fn validate(&self, spec: &ObjectSpec) -> Result<()> {
        if self.contains(spec) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "spec [{spec}] is not an object of the p={}, t={} world",
                self.properties, self.types
            )))
        }
    }
}

/// All `t^p` objects in lexicographic order.
pub fn enumerate_objects(properties: usize, types: usize) -> Result<Vec<ObjectSpec>> {
    let world = World::new(properties, types)?;
    Ok((0..world.size()).map(|i| world.spec_at(i)).collect())
}

/// Undirected graph with dense node features.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
}

impl PropertyGraph {
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>, features: Tensor) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != num_nodes {
            return Err(Error::Shape {
                op: "property_graph",
                left: vec![num_nodes],
                right: features.shape().to_vec(),
            });
        }
        if let Some(&(a, b)) = edges.iter().find(|(a, b)| *a >= num_nodes || *b >= num_nodes) {
            return Err(Error::Config(format!(
                "edge ({a}, {b}) outside a {num_nodes}-node graph"
            )));
        }
        Ok(Self {
            num_nodes,
            edges,
            features,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Dense symmetric adjacency without self-loops.
    pub fn adjacency(&self) -> Tensor {
        let n = self.num_nodes;
        let mut a = Tensor::zeros(&[n, n]);
        let data = a.data_mut();
        for &(u, v) in &self.edges {
            data[u * n + v] = 1.0;
            data[v * n + u] = 1.0;
        }
        a
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Config("relabel needs a permutation of the nodes".into()));
        }
        let d = self.features.cols();
        let mut data = vec![0.0; n * d];
        for (old, &new) in perm.iter().enumerate() {
            data[new * d..(new + 1) * d].copy_from_slice(self.features.row(old));
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Self::new(n, edges, Tensor::matrix(n, d, data)?)
    }
}

/// Star graph for `spec`: leaves `0..p` in property order, central node `p`.
pub fn build_graph(world: &World, spec: &ObjectSpec) -> Result<PropertyGraph> {
    world.validate(spec)?;
    let (p, t) = (world.properties(), world.types());
    let width = p + t;
    let mut data = vec![0.0; (p + 1) * width];
    for (i, &ty) in spec.types().iter().enumerate() {
        data[i * width + i] = 1.0;
        data[i * width + p + ty] = 1.0;
    }
    let edges = (0..p).map(|leaf| (p, leaf)).collect();
    PropertyGraph::new(p + 1, edges, Tensor::matrix(p + 1, width, data)?)
}

/// Prebuilt graphs for every object of a world, indexed by lexicographic rank.
#[derive(Clone, Debug)]
pub struct GraphCache {
    world: World,
    graphs: Vec<PropertyGraph>,
}

impl GraphCache {
    pub fn new(world: World) -> Result<Self> {
        let graphs = (0..world.size())
            .map(|i| build_graph(&world, &world.spec_at(i)))
            .collect::<Result<_>>()?;
        Ok(Self { world, graphs })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn get(&self, spec: &ObjectSpec) -> &PropertyGraph {
        &self.graphs[self.world.index_of(spec)]
    }
}
