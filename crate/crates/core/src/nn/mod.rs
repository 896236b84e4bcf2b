pub mod barrier;
pub mod condition;
pub mod graph;
pub mod mlp;

pub use barrier::{BarrierArch, Basis, VectorBarrier};
pub use condition::{build_condition_graph, condition_value, ConditionId};
pub use graph::{random_graph, CompGraph, GraphBuilder, Node, NodeId, RandomGraphSpec};
pub use mlp::{AffineMap, Mlp, MlpTrace};
