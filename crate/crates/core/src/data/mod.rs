//! Datasets, tokenization, synthetic corpora and checkpoint persistence.

pub mod checkpoint;
pub mod dataset;
pub mod synthetic;
pub mod vocab;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{checkpoint_bytes, load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{
    load_dataset, parse_dataset, save_dataset, ClsExample, Dataset, DatasetKind, NliExample, NliLabel, StsExample,
};
pub use synthetic::{gen_synthetic, CorpusSpec, SyntheticCorpus, SyntheticSpec};
pub use vocab::{build_vocab, tokenize, Tokens, Vocab};

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
