//! Resolving a config document with overrides, as the command line does,
//! and what a run manifest records.
//!
//!     cargo run --example config_and_manifest

use pods::cli::{apply_override, from_document};
use pods::TrainConfig;

fn main() -> pods::Result<()> {
    let text = r#"
        n = 64
        m = 16
        rule = "max_variance"
        iterations = 150

        [cost]
        t_update_step = 8.0
    "#;
    let mut doc: serde_json::Value = toml::from_str(text).expect("valid TOML");
    for o in ["learning_rate=0.02", "optimizer.kind=sgd", "seed=7"] {
        apply_override(&mut doc, o)?;
    }
    let config: TrainConfig = from_document(doc)?;
    config.validate()?;
    println!("resolved config:\n{}", serde_json::to_string_pretty(&config)?);

    // Errors name the key at fault.
    let err = from_document::<TrainConfig>(serde_json::json!({ "m": 4 })).unwrap_err();
    println!("\nwithout n: {err}");
    let err = from_document::<TrainConfig>(serde_json::json!({ "n": 4, "m": 2, "cost": { "sat_batch": "big" } })).unwrap_err();
    println!("bad cost entry: {err}");
    Ok(())
}
