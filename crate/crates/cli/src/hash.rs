//! Content hashes in the style of git objects: every file is hashed as a
//! blob (`blob <len>\0<bytes>`) and the run inputs as a tree listing blob
//! digests with their names, so any change to any byte changes the result.

use std::path::Path;

use cxr_core::Manifest;
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

/// SHA-256 of `bytes` framed as a git blob, in lowercase hex.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// SHA-256 of `text` as plain bytes, in lowercase hex.
pub fn text_hash(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

/// Tree hash over the manifest file and every image it lists, in record order.
pub fn hash_inputs(manifest_path: &Path, manifest: &Manifest, image_root: &Path) -> Result<String> {
    let mut tree = String::new();
    let bytes = std::fs::read(manifest_path).map_err(CliError::io(manifest_path))?;
    tree.push_str(&format!("{} manifest\n", blob_hash(&bytes)));
    for record in &manifest.records {
        let path = record.resolve(image_root);
        let bytes = std::fs::read(&path).map_err(CliError::io(&path))?;
        tree.push_str(&format!("{} {}\n", blob_hash(&bytes), record.path));
    }
    let mut h = Sha256::new();
    h.update(format!("tree {}\0", tree.len()).as_bytes());
    h.update(tree.as_bytes());
    Ok(format!("{:x}", h.finalize()))
}
