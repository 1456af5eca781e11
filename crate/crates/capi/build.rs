fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
    let header = std::path::Path::new(&crate_dir).join("include").join("unravel.h");
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_language(cbindgen::Language::C)
        .with_include_guard("UNRAVEL_H")
        .with_documentation(true)
        .generate()
        .expect("header generation failed")
        .write_to_file(header);
    println!("cargo:rerun-if-changed=src/lib.rs");
}
