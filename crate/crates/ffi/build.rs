use cbindgen::{Config, EnumConfig, Language, RenameRule, Style};

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let config = Config {
        language: Language::C,
        include_guard: Some("MEDREPORT_H".into()),
        cpp_compat: true,
        style: Style::Both,
        documentation: true,
        enumeration: EnumConfig {
            rename_variants: RenameRule::QualifiedScreamingSnakeCase,
            ..Default::default()
        },
        ..Default::default()
    };
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("Unable to generate bindings")
        .write_to_file(format!("{crate_dir}/include/medreport.h"));
}
