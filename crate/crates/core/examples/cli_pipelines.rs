//! Drive the command-line pipelines in-process on a shrunken golden config.
//!
//! cargo run --release --example cli_pipelines

use std::path::Path;

use maxbloch::cli::main_with_args;

fn main() {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/golden_tm.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(src).unwrap()).unwrap();
    cfg["grids"] = serde_json::json!({ "nx": 16, "ny": 16, "ntheta": [8], "lx": 20.0, "ly": 20.0 });
    cfg["solver"]["t_star"] = serde_json::json!(0.1);
    cfg["epsilons"] = serde_json::json!([0.04, 0.02, 0.01]);
    cfg["thresholds"] = serde_json::json!({ "residual_slope": [0.4, 0.6] });
    let dir = std::env::temp_dir().join("maxbloch-cli-example");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    for cmd in ["spectral-info", "simulate", "profile", "residual", "converge"] {
        let out = dir.join(cmd);
        let code = main_with_args(["maxbloch", cmd, "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        let files: Vec<String> = std::fs::read_dir(&out)
            .map(|d| d.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
            .unwrap_or_default();
        println!("{cmd:<14} exit {code}  {}", files.join(" "));
    }
}
