//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sareo_core::synthgen::{generate_corpus, SceneSpec, MANIFEST_FILE};
use sareo_core::Manifest;

/// Writes a synthetic corpus of `n` scenes of `size` px and returns its manifest and path.
pub fn corpus(dir: &Path, n: usize, size: usize, seed: u64) -> (Manifest, PathBuf) {
    corpus_with(dir, n, SceneSpec::new(seed, size))
}

pub fn corpus_with(dir: &Path, n: usize, spec: SceneSpec) -> (Manifest, PathBuf) {
    let m = generate_corpus(n, &spec, 0.8, dir).unwrap();
    (m, dir.join(MANIFEST_FILE))
}

/// Every regular file under `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
