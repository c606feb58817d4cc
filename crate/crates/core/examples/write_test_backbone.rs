//! Regenerates `assets/lpips_test_backbone.json`.

use sareo_core::eval::{TestBackbone, LPIPS_TEST_SEED};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/lpips_test_backbone.json");
    std::fs::write(path, TestBackbone::generate(LPIPS_TEST_SEED).to_json()).expect("write backbone");
    println!("wrote {path}");
}
