//! Builds the extension and runs the Python smoke script against it.

use std::path::Path;
use std::process::Command;

#[test]
fn python_smoke_script_passes() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not found; skipping");
        return;
    }
    // A separate target directory avoids waiting on the lock held by the
    // enclosing cargo invocation.
    let target = root.join("target/python-smoke");
    let out = Command::new("python3")
        .arg(root.join("python/smoke_test.py"))
        .env("CARGO_TARGET_DIR", &target)
        .current_dir(&root)
        .output()
        .expect("run python3");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "smoke test failed\n{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("python smoke test: ok"), "{stdout}");
}
