//! Support for the acceptance suite in `tests/acceptance.rs`.

use std::path::{Path, PathBuf};

/// Name of the command-line binary built by the `multihop-cli` package.
pub const BINARY: &str = "multihop";

/// Path of the `multihop` binary: `MULTIHOP_BIN` if set, otherwise the one
/// cargo placed next to the directory holding `exe`.
///
/// Running the whole workspace's tests builds it; a lone run of this package
/// needs `cargo build -p multihop-cli` first.
pub fn binary_near(exe: &Path) -> Result<PathBuf, String> {
    if let Some(p) = std::env::var_os("MULTIHOP_BIN") {
        return Ok(PathBuf::from(p));
    }
    let profile_dir = exe
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| format!("cannot locate the build directory from {}", exe.display()))?;
    let bin = profile_dir.join(format!("{BINARY}{}", std::env::consts::EXE_SUFFIX));
    if bin.exists() {
        Ok(bin)
    } else {
        Err(format!(
            "{} not found; build it with `cargo build -p multihop-cli`",
            bin.display()
        ))
    }
}
