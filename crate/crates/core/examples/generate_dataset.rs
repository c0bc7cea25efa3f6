//! Generate the default dataset and its shuffled twin, print a few rows
//! and write both splits as CSV into a directory (default: ./mnist1d-data).
//!
//!     cargo run --release --example generate_dataset -- [out_dir]

use mnist1d::datagen::{generate_dataset, write_csv, GeneratorConfig};

fn main() -> mnist1d::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "mnist1d-data".into());
    let cfg = GeneratorConfig::default();
    let data = generate_dataset(&cfg)?;
    let shuffled = generate_dataset(&GeneratorConfig {
        shuffle_seq: true,
        ..cfg.clone()
    })?;
    println!(
        "{} train / {} test examples of length {}",
        data.train_len(),
        data.test_len(),
        data.seq_len()
    );
    for i in 0..3 {
        let row: Vec<String> = data.x_train.row(i)[..8].iter().map(|v| format!("{v:+.2}")).collect();
        println!("label {}: {} ...", data.y_train[i], row.join(" "));
    }
    println!("shuffle permutation starts {:?}", &shuffled.permutation.as_ref().unwrap()[..8]);
    std::fs::create_dir_all(&out).map_err(|e| mnist1d::Error::Data(e.to_string()))?;
    for (name, text) in [
        ("train.csv", write_csv(&data.x_train, &data.y_train)),
        ("test.csv", write_csv(&data.x_test, &data.y_test)),
    ] {
        std::fs::write(format!("{out}/{name}"), text).map_err(|e| mnist1d::Error::Data(e.to_string()))?;
    }
    println!("wrote {out}/train.csv and {out}/test.csv");
    Ok(())
}
