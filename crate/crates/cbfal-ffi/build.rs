//! Generates `include/cbfal.h` from the exported surface at build time, so
//! the header can never drift from the Rust signatures it mirrors.

use std::path::Path;

fn main() {
    let crate_dir =
        std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR is set by cargo");
    let header = Path::new(&crate_dir).join("include").join("cbfal.h");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        Err(err) => panic!("failed to generate {}: {err}", header.display()),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
