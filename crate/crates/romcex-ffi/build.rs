use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("manifest dir"));
    let header = crate_dir.join("include").join("romcex.h");

    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("ROMCEX_H".to_string()),
        cpp_compat: true,
        documentation: true,
        header: Some(
            "/* C interface to the romcex toolkit. Generated; do not edit. */".to_string(),
        ),
        usize_is_size_t: true,
        ..cbindgen::Config::default()
    };

    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        Err(e) => {
            // Never fail the build over header generation; the library
            // itself is still usable from Rust.
            println!("cargo:warning=header generation failed: {e}");
        }
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
}
