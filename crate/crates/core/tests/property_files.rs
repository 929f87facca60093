//! The shipped `.prop` files match the built-in reference queries.
//! Regenerate with `UPDATE_PROPERTY_FILES=1 cargo test --test property_files`.

use std::path::PathBuf;

use aps_core::property::{parse_dsl, reference_queries, render_dsl};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../properties")
}

#[test]
fn shipped_files_match_reference_queries() {
    let update = std::env::var_os("UPDATE_PROPERTY_FILES").is_some();
    for r in reference_queries() {
        let path = dir().join(format!("{}.prop", r.name));
        let expected = format!("# {}\n{}", r.label, render_dsl(&r.property));
        if update {
            std::fs::write(&path, &expected).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(text, expected, "{} is stale", path.display());
        assert_eq!(parse_dsl(&text).unwrap(), r.property);
    }
}
