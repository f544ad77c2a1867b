use std::path::{Path, PathBuf};
use std::process::Command;

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

/// Directory holding the shared library built next to this test binary.
fn lib_dir() -> PathBuf {
    std::env::current_exe().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(crate_dir().join("include/adiadio.h")).unwrap();
    for name in [
        "typedef struct AdiadioPolynomial AdiadioPolynomial;",
        "adiadio_last_error_message(void)",
        "adiadio_string_free(char *s)",
        "adiadio_decide(",
        "ADIADIO_STATUS_BUFFER_TOO_SMALL = 7",
        "ADIADIO_VERDICT_INCONCLUSIVE = 4",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let lib = lib_dir();
    assert!(lib.join("libadiadio_ffi.so").exists(), "shared library not found in {}", lib.display());
    let status = Command::new("cc")
        .arg(crate_dir().join("tests/smoke.c"))
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg(format!("-I{}", crate_dir().join("include").display()))
        .arg(format!("-L{}", lib.display()))
        .arg(format!("-Wl,-rpath,{}", lib.display()))
        .arg("-ladiadio_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), format!("{} ok\n", env!("CARGO_PKG_VERSION")));
}
