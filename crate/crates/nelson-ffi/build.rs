use std::env;
use std::path::PathBuf;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    println!("cargo:rerun-if-changed=build.rs");

    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let header = crate_dir.join("include").join("nelson.h");
    let bindings = cbindgen::generate(&crate_dir)
        .unwrap_or_else(|err| panic!("cbindgen failed to generate {}: {err}", header.display()));
    // write_to_file leaves the mtime alone when the content is unchanged, so
    // downstream builds do not churn.
    bindings.write_to_file(&header);
}
