use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir =
        PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR not set"));

    let mut config = cbindgen::Config::default();
    config.language = cbindgen::Language::C;
    config.include_guard = Some("EFNET_H".to_string());
    config.cpp_compat = true;
    config.sys_includes = vec!["stddef.h".to_string(), "stdint.h".to_string()];
    config.no_includes = true;
    config.header =
        Some("/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */".to_string());
    config.enumeration.prefix_with_name = true;
    config.enumeration.rename_variants = cbindgen::RenameRule::ScreamingSnakeCase;

    let bindings =
        cbindgen::generate_with_config(&crate_dir, config).expect("unable to generate C bindings");
    bindings.write_to_file(crate_dir.join("include").join("efnet.h"));

    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=build.rs");
}
