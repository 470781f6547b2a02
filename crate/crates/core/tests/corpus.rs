//! The shipped scenarios load cleanly; every malformed file is rejected with
//! a location on the line its `# error-line:` header names.

use std::fs;
use std::path::{Path, PathBuf};

use behavior_objects::dsl::{load_file, LoadError};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn bos_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == "bos")).collect();
    v.sort();
    v
}

fn expected_line(path: &Path) -> u32 {
    let text = fs::read_to_string(path).unwrap();
    let first = text.lines().next().unwrap_or("");
    first
        .strip_prefix("# error-line:")
        .and_then(|n| n.trim().parse().ok())
        .unwrap_or_else(|| panic!("{} has no `# error-line:` header", path.display()))
}

#[test]
fn shipped_scenarios_load() {
    let mut files = bos_files(&root());
    files.extend(bos_files(&root().join("runtime")));
    assert!(files.len() >= 7);
    for f in files {
        if let Err(e) = load_file(&f, &|_| {}) {
            panic!("{}: {e}", f.display());
        }
    }
}

#[test]
fn malformed_files_point_at_the_offending_line() {
    let files = bos_files(&root().join("invalid"));
    assert!(files.len() >= 15, "only {} negative files", files.len());
    for f in files {
        let want = expected_line(&f);
        let err = match load_file(&f, &|_| {}) {
            Ok(_) => panic!("{} loaded", f.display()),
            Err(e) => e,
        };
        assert!(!matches!(err, LoadError::Io { .. }), "{}: {err}", f.display());
        let lines = err.lines();
        assert!(!lines.is_empty(), "{}: no location", f.display());
        assert!(lines.iter().all(|&l| l == want), "{}: want line {want}, got {lines:?}\n{err}", f.display());
    }
}
