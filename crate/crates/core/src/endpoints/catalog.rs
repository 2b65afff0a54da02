use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServiceCategory {
    PersistentOutput,
    SystemCommandExecution,
    NonvolatileStorage,
    NetworkActivity,
}

impl ServiceCategory {
    pub const ALL: [ServiceCategory; 4] = [
        ServiceCategory::PersistentOutput,
        ServiceCategory::SystemCommandExecution,
        ServiceCategory::NonvolatileStorage,
        ServiceCategory::NetworkActivity,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ServiceCategory::PersistentOutput => "persistent-output",
            ServiceCategory::SystemCommandExecution => "system-command-execution",
            ServiceCategory::NonvolatileStorage => "nonvolatile-storage",
            ServiceCategory::NetworkActivity => "network-activity",
        }
    }
}

impl fmt::Display for ServiceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which call context makes an API call site an end point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextRule {
    /// Only inside CGI binaries.
    Cgi,
    /// Stream output; `stream_arg` is the 0-based argument holding the stream.
    Stream { stream_arg: u8 },
    /// `open`: the flags argument must grant write access.
    OpenFlags,
    /// Only used as context for stream rules, never an end point itself.
    ContextOnly,
    Unconditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiInfo {
    pub category: ServiceCategory,
    pub rule: ContextRule,
    /// Number of argument registers the API reads.
    pub arity: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("API `{0}` is not in the service catalog")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiCatalog {
    apis: BTreeMap<String, ApiInfo>,
}

impl Default for ApiCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ApiCatalog {
    pub fn builtin() -> Self {
        use ContextRule::*;
        use ServiceCategory::*;
        let table: &[(&str, ServiceCategory, ContextRule, u8)] = &[
            ("printf", PersistentOutput, Cgi, 4),
            ("printf_s", PersistentOutput, Cgi, 4),
            ("puts", PersistentOutput, Cgi, 1),
            ("fprintf", PersistentOutput, Stream { stream_arg: 0 }, 4),
            ("fprintf_s", PersistentOutput, Stream { stream_arg: 0 }, 4),
            ("fputs", PersistentOutput, Stream { stream_arg: 1 }, 2),
            ("fopen", PersistentOutput, ContextOnly, 2),
            ("fopen64", PersistentOutput, ContextOnly, 2),
            ("open", PersistentOutput, OpenFlags, 3),
            ("open64", PersistentOutput, OpenFlags, 3),
            ("system", SystemCommandExecution, Unconditional, 1),
            ("execl", SystemCommandExecution, Unconditional, 4),
            ("execle", SystemCommandExecution, Unconditional, 4),
            ("execlp", SystemCommandExecution, Unconditional, 4),
            ("execv", SystemCommandExecution, Unconditional, 2),
            ("execve", SystemCommandExecution, Unconditional, 3),
            ("execvp", SystemCommandExecution, Unconditional, 2),
            ("popen", SystemCommandExecution, Unconditional, 2),
            ("nvram_set", NonvolatileStorage, Unconditional, 2),
            ("nvram_update", NonvolatileStorage, Unconditional, 2),
            ("apmib_set", NonvolatileStorage, Unconditional, 2),
            ("apmib_update", NonvolatileStorage, Unconditional, 2),
            ("bind", NetworkActivity, Unconditional, 3),
            ("connect", NetworkActivity, Unconditional, 3),
            ("SSL_connect", NetworkActivity, Unconditional, 1),
            ("SSL_read", NetworkActivity, Unconditional, 3),
            ("SSL_write", NetworkActivity, Unconditional, 3),
        ];
        let apis = table
            .iter()
            .map(|&(n, category, rule, arity)| (n.to_string(), ApiInfo { category, rule, arity }))
            .collect();
        ApiCatalog { apis }
    }

    /// Add a configured API. Existing entries are left untouched.
    pub fn add(&mut self, name: &str, category: ServiceCategory) {
        self.apis
            .entry(name.to_string())
            .or_insert(ApiInfo { category, rule: ContextRule::Unconditional, arity: 4 });
    }

    pub fn with_extra<'a>(mut self, extra: impl IntoIterator<Item = (&'a str, ServiceCategory)>) -> Self {
        for (n, c) in extra {
            self.add(n, c);
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<&ApiInfo> {
        self.apis.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.apis.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.apis.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.apis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apis.is_empty()
    }
}

pub fn classify_service_category(catalog: &ApiCatalog, api: &str) -> Result<ServiceCategory, CatalogError> {
    catalog.get(api).map(|i| i.category).ok_or_else(|| CatalogError::Unknown(api.to_string()))
}
