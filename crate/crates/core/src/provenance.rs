use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "hoigen";

/// Header embedded in every file the CLI writes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>) -> Self {
        Provenance {
            tool: TOOL_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config_hash(config),
            seed,
        }
    }
}

/// SHA-256 over the JSON serialization of `config`, lower-case hex.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes to JSON");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
