#![allow(dead_code)]

use std::path::PathBuf;

pub const TOKEN: &str = "test-token";

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(rel)
}

pub fn fixture_text(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap()
}

/// Configuration with scripted providers whose scripts are given inline.
pub fn write_config(dir: &std::path::Path, extra: &str, scripts: &[(&str, &str)]) -> PathBuf {
    let mut toml = format!("mode = \"parallel\"\nprompt_mode = \"pegs_all\"\n{extra}\n");
    for (rank, (id, script)) in scripts.iter().enumerate() {
        let script_path = dir.join(format!("{id}.json"));
        std::fs::write(&script_path, script).unwrap();
        toml.push_str(&format!(
            "\n[[providers]]\nprovider_id = \"{id}\"\nkind = \"mock\"\nfailover_rank = {rank}\nscript = \"{}\"\n",
            script_path.display()
        ));
    }
    let path = dir.join("config.toml");
    std::fs::write(&path, toml).unwrap();
    path
}
