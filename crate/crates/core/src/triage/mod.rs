//! Request-processing scoring, handler binders and function tables.

pub mod binders;
pub mod score;
pub mod tables;

pub use binders::{detect_binders, Binder, Binding, Subroutine, DEFAULT_MIN_INVOCATIONS};
pub use score::{combine, score_request_processing, RequestScore, ScoreWeights, DEFAULT_SCORE_THRESHOLD};
pub use tables::{detect_function_tables, resolve_table_calls, FunctionTable, TableEntry, DEFAULT_LOOP_ITERATION_CAP};
