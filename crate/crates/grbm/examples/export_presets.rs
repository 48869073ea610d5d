//! Writes every bundled preset as a JSON config file.
//!
//! Usage: cargo run -p grbm --example export_presets -- <output-dir>

use grbm::presets::{preset, PRESET_NAMES};

fn main() {
    let dir = std::env::args()
        .nth(1)
        .expect("usage: export_presets <output-dir>");
    let dir = std::path::PathBuf::from(dir);
    std::fs::create_dir_all(&dir).expect("create output directory");
    for name in PRESET_NAMES {
        let cfg = preset(name).expect("known preset");
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, cfg.to_json()).expect("write preset file");
        println!("wrote {}", path.display());
    }
}
