use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "memprobe";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identifies the run that produced an output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// First 16 hex digits of the SHA-256 of the resolved run configuration.
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Self {
        let canonical = serde_json::to_vec(config).expect("configuration serialises");
        let digest = Sha256::digest(&canonical);
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: hex::encode(&digest[..8]),
            seed,
        }
    }

    /// `# memprobe <version> config=<hash> seed=<seed>`
    pub fn comment_line(&self) -> String {
        format!("# {} {} config={} seed={}", self.tool, self.version, self.config_hash, self.seed)
    }
}

/// Lines of a delimiter-separated file with leading `#` comment lines
/// removed.
pub fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .skip_while(|(_, l)| l.starts_with('#'))
        .filter(|(_, l)| !l.trim().is_empty())
}
