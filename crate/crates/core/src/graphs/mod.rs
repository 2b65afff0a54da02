//! Control flow graphs, call graphs, loops, traces and chopped CFGs.

pub mod callgraph;
pub mod cfg;
pub mod chop;
pub mod loops;

pub use callgraph::{build_call_graph, CallEdge, CallGraph};
pub use cfg::{build_cfg, BasicBlock, Cfg, Edge, EdgeKind};
pub use chop::{backward_trace, chop_function, gen_chopped_cfg, traces_to_function, MultiStageChoppedCfg, TraceError};
pub use loops::{detect_loops, Dominators, Loop};
