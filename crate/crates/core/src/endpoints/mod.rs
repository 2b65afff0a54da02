//! Service end points: catalog APIs called with a valid context.

pub mod catalog;
pub mod context;

pub use catalog::{classify_service_category, ApiCatalog, ApiInfo, CatalogError, ContextRule, ServiceCategory};
pub use context::{
    find_end_points, open_flags_write, recover_file_context, AccessMode, EndPoint, EndPointContext, FileContext,
};
