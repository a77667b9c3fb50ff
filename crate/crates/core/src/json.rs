//! Stable JSON serialization shared by every persisted document.
//!
//! All structs serialize their fields in declaration order and every map in
//! the crate is a `BTreeMap`, so the pretty form below is byte-stable for a
//! given value.

use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Pretty JSON (two-space indent) terminated by a single newline.
pub fn to_stable_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("serializable value");
    out.push('\n');
    out
}

/// Single-line JSON used inside backend requests.
pub fn to_compact_string<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable value")
}

pub fn write_file<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, to_stable_string(value))
}

pub fn read_file<T: DeserializeOwned>(path: &Path) -> io::Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
