//! Writes the deterministic reference corpus as `inventory.tsv` and
//! `annotations.tsv` into the given directory.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use vtad::corpus::fixture::synthesize_reference_corpus;
use vtad::corpus::{write_annotations, write_inventory};

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let seed = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2025);
    let set = synthesize_reference_corpus(seed);
    std::fs::create_dir_all(&dir)?;
    write_inventory(set.speakers(), BufWriter::new(File::create(dir.join("inventory.tsv"))?))?;
    write_annotations(&set, BufWriter::new(File::create(dir.join("annotations.tsv"))?))?;
    Ok(())
}
