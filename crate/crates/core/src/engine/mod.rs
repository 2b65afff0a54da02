//! Guided symbolic execution, constraint trees and request recovery.

pub mod exec;
pub mod solve;
pub mod tree;
pub mod value;

pub use exec::{execute_guided, Engine, EngineConfig, ExecResult, FoundPath, PathConstraints, SymState};
pub use solve::{replay, solve_request, FieldValue, RecoveredRequest, SolveError, BODY_FIELD};
pub use tree::{
    build_constraint_tree, record_branch_constraint, ConstraintTree, HlConstraint, HlKind, TreeEdge, TreeEdgeKind,
    TreeJson,
};
pub use value::{CmpOp, StrArg, SymId, SymKind, SymTable, Value};
