use std::fs;
use std::path::{Path, PathBuf};

use bbs_core::synth::write_fixtures;

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

#[test]
fn shipped_fixtures_regenerate_exactly() {
    let shipped = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let tmp = tempfile::tempdir().unwrap();
    write_fixtures(tmp.path()).unwrap();
    let fresh = files(tmp.path());
    let names: Vec<_> = fresh.iter().map(|p| p.strip_prefix(tmp.path()).unwrap().to_path_buf()).collect();
    let shipped_names: Vec<_> = files(&shipped)
        .iter()
        .map(|p| p.strip_prefix(&shipped).unwrap().to_path_buf())
        .collect();
    assert_eq!(names, shipped_names);
    for name in names {
        let a = fs::read(tmp.path().join(&name)).unwrap();
        let b = fs::read(shipped.join(&name)).unwrap();
        assert!(a == b, "{} differs from the shipped copy", name.display());
    }
}
