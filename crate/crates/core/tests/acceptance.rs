//! The acceptance suite at the default desk-scale plan, one line per criterion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use eivreg::commands::cmd_verify;
use eivreg::config::Config;

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, results) = cmd_verify(&Config::default_desk(), dir.path(), None).unwrap();
    assert_eq!(results.len(), 9);
    for r in &results {
        println!("{}", r.line());
    }
    assert!(manifest.outputs.contains(&"verify_report.csv".to_string()));
    assert!(dir.path().join("manifest.txt").exists());
    let failed: Vec<String> = results.iter().filter(|r| !r.pass).map(|r| r.line()).collect();
    assert!(failed.is_empty(), "failing criteria:\n{}", failed.join("\n"));
}

#[test]
fn verify_reports_are_byte_identical() {
    let cfg = Config::default_desk();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_verify(&cfg, a.path(), Some(1)).unwrap();
    cmd_verify(&cfg, b.path(), Some(8)).unwrap();
    let (ra, rb) = (read_dir(a.path()), read_dir(b.path()));
    assert_eq!(ra.keys().collect::<Vec<_>>(), rb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ra {
        assert!(bytes == &rb[name], "{name} differs between runs");
    }
}
